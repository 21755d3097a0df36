//! Complex wave fields on regular grids and the space translation operator.
//!
//! Units are natural (`hbar = 1`), so a wave vector and a momentum are the
//! same number. Fields are stationary: the `e^{-i omega t}` factor of a plane
//! wave is never carried.

use std::ops::Range;

use num_complex::Complex64;

use crate::{Error, Result};

/// Regular grid with `D` axes. Axis 0 varies fastest in linear storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<const D: usize> {
    shape: [usize; D],
    spacing: [f64; D],
    origin: [f64; D],
}

pub type Grid1D = Grid<1>;
pub type Grid2D = Grid<2>;
pub type Grid3D = Grid<3>;

impl<const D: usize> Grid<D> {
    pub fn new(shape: [usize; D], spacing: [f64; D], origin: [f64; D]) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&n| n == 0) {
            return Err(Error::param(format!("grid axis {axis} has zero samples")));
        }
        if let Some(axis) = spacing.iter().position(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::param(format!(
                "grid spacing on axis {axis} must be positive and finite, got {}",
                spacing[axis]
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::param("grid origin must be finite"));
        }
        Ok(Self {
            shape,
            spacing,
            origin,
        })
    }

    /// Unit-spaced grid starting at the coordinate origin.
    pub fn unit(shape: [usize; D]) -> Result<Self> {
        Self::new(shape, [1.0; D], [0.0; D])
    }

    pub fn shape(&self) -> [usize; D] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; D] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; D] {
        self.origin
    }

    /// Total sample count.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume (or length, or area) of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn linear_index(&self, idx: [usize; D]) -> usize {
        let mut linear = 0;
        for axis in (0..D).rev() {
            debug_assert!(idx[axis] < self.shape[axis]);
            linear = linear * self.shape[axis] + idx[axis];
        }
        linear
    }

    pub fn multi_index(&self, mut linear: usize) -> [usize; D] {
        let mut idx = [0; D];
        for (axis, slot) in idx.iter_mut().enumerate() {
            *slot = linear % self.shape[axis];
            linear /= self.shape[axis];
        }
        idx
    }

    pub fn coord(&self, idx: [usize; D]) -> [f64; D] {
        let mut x = [0.0; D];
        for axis in 0..D {
            x[axis] = self.origin[axis] + idx[axis] as f64 * self.spacing[axis];
        }
        x
    }

    /// Coordinates of the sample at a linear index.
    pub fn point(&self, linear: usize) -> [f64; D] {
        self.coord(self.multi_index(linear))
    }
}

impl Grid1D {
    pub fn line(samples: usize, spacing: f64, origin: f64) -> Result<Self> {
        Self::new([samples], [spacing], [origin])
    }
}

/// Complex amplitudes sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField<const D: usize> {
    grid: Grid<D>,
    values: Vec<Complex64>,
}

impl<const D: usize> WaveField<D> {
    pub fn new(grid: Grid<D>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} amplitudes for a grid of {} samples",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid<D>) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid<D>, mut f: impl FnMut([f64; D]) -> Complex64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid<D> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, idx: [usize; D]) -> Complex64 {
        self.values[self.grid.linear_index(idx)]
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Wave vector components, one per axis, in reciprocal length units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveVector<const D: usize>(pub [f64; D]);

impl<const D: usize> WaveVector<D> {
    pub fn new(components: [f64; D]) -> Result<Self> {
        if components.iter().any(|k| !k.is_finite()) {
            return Err(Error::param("wave vector components must be finite"));
        }
        Ok(Self(components))
    }

    pub fn dot(&self, x: &[f64; D]) -> f64 {
        self.0.iter().zip(x).map(|(k, x)| k * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|k| k * k).sum::<f64>().sqrt()
    }
}

/// Physical constants. Only `hbar` is ever needed; it defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysConstants {
    hbar: f64,
}

impl Default for PhysConstants {
    fn default() -> Self {
        Self { hbar: 1.0 }
    }
}

impl PhysConstants {
    pub fn new(hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::param(format!("hbar must be positive, got {hbar}")));
        }
        Ok(Self { hbar })
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// `p = hbar k`.
    pub fn momentum<const D: usize>(&self, k: &WaveVector<D>) -> [f64; D] {
        k.0.map(|k| self.hbar * k)
    }
}

/// A monochromatic plane wave `amplitude * e^{i k.x}`.
///
/// Unlike a sampled [`WaveField`] it can be evaluated anywhere, which is what
/// the Born scattering sum needs on and off the potential grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneWave<const D: usize> {
    pub k: WaveVector<D>,
    pub amplitude: f64,
}

impl<const D: usize> PlaneWave<D> {
    pub fn new(k: WaveVector<D>, amplitude: f64) -> Self {
        Self { k, amplitude }
    }

    pub fn at(&self, x: &[f64; D]) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.k.dot(x))
    }

    pub fn sample(&self, grid: &Grid<D>) -> WaveField<D> {
        let values = (0..grid.len()).map(|i| self.at(&grid.point(i))).collect();
        WaveField {
            grid: grid.clone(),
            values,
        }
    }
}

pub fn plane_wave<const D: usize>(grid: &Grid<D>, k: WaveVector<D>, amplitude: f64) -> WaveField<D> {
    PlaneWave::new(k, amplitude).sample(grid)
}

/// Eigenvalue `e^{i k.a}` of the translation operator on a plane wave.
pub fn translation_phase<const D: usize>(k: &WaveVector<D>, a: &[f64; D]) -> Complex64 {
    Complex64::from_polar(1.0, k.dot(a))
}

/// Central first-derivative weights for offsets 1..=4 (antisymmetric).
const STENCIL: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Samples each derivative order reaches to either side.
pub const STENCIL_REACH: usize = STENCIL.len();

/// Highest derivative order the series translation will attempt.
pub const DEFAULT_MAX_DERIVATIVE_ORDER: usize = 8;

/// Translation by a truncated Taylor series `sum_n a^n/n! f^(n)(x)`.
///
/// Derivatives are nested applications of the eighth-order central
/// first-difference stencil, so order `n` reaches `STENCIL_REACH * n` samples
/// to each side. A plain two-point difference would shift a sampled sine by
/// `a sin(kh)/h` instead of `a k`, and that bias swamps the truncation error
/// after two or three terms. Samples too close to an edge only receive the
/// terms whose stencils fit; use [`series_interior`] to select the points
/// where the full series was applied.
#[derive(Debug, Clone, Copy)]
pub struct TaylorShift {
    pub max_order: usize,
}

impl Default for TaylorShift {
    fn default() -> Self {
        Self {
            max_order: DEFAULT_MAX_DERIVATIVE_ORDER,
        }
    }
}

impl TaylorShift {
    pub fn apply(&self, f: &WaveField<1>, a: f64, n_terms: usize) -> Result<WaveField<1>> {
        if n_terms == 0 {
            return Err(Error::param("n_terms must be at least 1"));
        }
        if n_terms > self.max_order {
            return Err(Error::param(format!(
                "n_terms {n_terms} exceeds the derivative order cap {}",
                self.max_order
            )));
        }
        if !a.is_finite() {
            return Err(Error::param("displacement must be finite"));
        }
        let n = f.values.len();
        if n <= 2 * STENCIL_REACH * n_terms {
            return Err(Error::shape(format!(
                "{n} samples cannot support derivatives of order {n_terms}"
            )));
        }

        let h = f.grid.spacing()[0];
        let mut out = f.values.clone();
        let mut deriv = f.values.clone();
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        let mut coef = 1.0;
        for order in 1..=n_terms {
            coef *= a / order as f64;
            // valid stencil range for this order
            let reach = STENCIL_REACH * order;
            for i in reach..n - reach {
                next[i] = STENCIL
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (deriv[i + j + 1] - deriv[i - j - 1]) * *c)
                    .sum::<Complex64>()
                    / h;
            }
            std::mem::swap(&mut deriv, &mut next);
            for i in reach..n - reach {
                out[i] += deriv[i] * coef;
            }
        }
        WaveField::new(f.grid.clone(), out)
    }
}

/// [`TaylorShift::apply`] with the default order cap.
pub fn translate_series(f: &WaveField<1>, a: f64, n_terms: usize) -> Result<WaveField<1>> {
    TaylorShift::default().apply(f, a, n_terms)
}

/// Indices at which a series of `n_terms` terms used every derivative.
pub fn series_interior(len: usize, n_terms: usize) -> Range<usize> {
    let reach = STENCIL_REACH * n_terms;
    reach.min(len)..len.saturating_sub(reach)
}

/// Moves samples `a` positions toward higher indices: `out[i] = f[i - a]`.
///
/// Samples shifted in from outside the aperture are zero. In coordinates this
/// is `f(x - a h)`, so the series translation by `+d` corresponds to
/// `shift_exact(f, -d / h)`.
pub fn shift_exact(f: &WaveField<1>, a: isize) -> Result<WaveField<1>> {
    let n = f.values.len();
    if a.unsigned_abs() >= n {
        return Err(Error::param(format!(
            "shift {a} is not smaller than the sample count {n}"
        )));
    }
    let values = (0..n)
        .map(|i| {
            let src = i as isize - a;
            if (0..n as isize).contains(&src) {
                f.values[src as usize]
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(WaveField {
        grid: f.grid.clone(),
        values,
    })
}
