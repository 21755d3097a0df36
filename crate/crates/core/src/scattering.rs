//! Potential scattering: outgoing Green function, first Born approximation,
//! slit interference and the convolution kernel a scattering neuron applies.
//!
//! Conventions used throughout:
//!
//! - `G(r, r') = -e^{ik|r-r'|} / (4 pi |r-r'|)`.
//! - Born field: `psi(r) = psi_in(r) - sum_{r'} G(r, r') U(r') psi_in(r') dV`.
//! - A neuron sits at the centre voxel of the potential grid; its kernel is
//!   `K(x', y') = sum_{z'} G(0, (x', y', z')) U(x', y', z')`, with the single
//!   voxel at distance zero left out of the sum.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::sum::{pairwise_sum, pairwise_sum_complex};
use crate::wavefield::{Grid1D, Grid2D, Grid3D, PlaneWave, WaveField};
use crate::{Error, Result};

pub type Point3 = [f64; 3];

fn distance(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn green_at_distance(dist: f64, k: f64) -> Complex64 {
    -Complex64::from_polar(1.0, k * dist) / (4.0 * PI * dist)
}

/// Outgoing free-space Green function of the Helmholtz operator.
pub fn green_outgoing(r: &Point3, r_src: &Point3, k: f64) -> Result<Complex64> {
    let dist = distance(r, r_src);
    if dist == 0.0 {
        return Err(Error::domain("Green function is singular at coincident points"));
    }
    Ok(green_at_distance(dist, k))
}

/// Real interaction potential sampled on a 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPotential {
    grid: Grid3D,
    values: Vec<f64>,
}

impl ScatterPotential {
    pub fn new(grid: Grid3D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape(format!(
                "{} potential values for a grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid3D) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    /// Samples `u` at voxel positions measured from the grid's centre voxel.
    pub fn centered_fn(grid: Grid3D, u: impl Fn(Point3) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| u(center_offset(&grid, grid.multi_index(i))))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, idx: [usize; 3]) -> f64 {
        self.values[self.grid.linear_index(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                index: self.grid.linear_index(idx),
            });
        }
        let i = self.grid.linear_index(idx);
        self.values[i] = value;
        Ok(())
    }

    /// Voxel-wise sum of two potentials on the same grid.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::shape("potentials live on different grids"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self::new(self.grid.clone(), values)
    }

    /// Nonzero voxels as `(position, value)` in storage order.
    pub fn support(&self) -> impl Iterator<Item = (Point3, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &u)| u != 0.0)
            .map(|(i, &u)| (self.grid.point(i), u))
    }

    /// Axis-aligned bounds of the support, padded by half a voxel.
    fn support_bounds(&self) -> Option<(Point3, Point3)> {
        let half = self.grid.spacing().map(|h| 0.5 * h);
        self.support().fold(None, |acc, (p, _)| {
            let (mut lo, mut hi) = acc.unwrap_or((p, p));
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            Some((lo, hi))
        })
        .map(|(mut lo, mut hi)| {
            for a in 0..3 {
                lo[a] -= half[a];
                hi[a] += half[a];
            }
            (lo, hi)
        })
    }
}

/// Grid centre voxel index (`n / 2` per axis); the neuron's position.
pub fn center_index(grid: &Grid3D) -> [usize; 3] {
    grid.shape().map(|n| n / 2)
}

fn center_offset(grid: &Grid3D, idx: [usize; 3]) -> Point3 {
    let c = center_index(grid);
    let h = grid.spacing();
    [
        (idx[0] as f64 - c[0] as f64) * h[0],
        (idx[1] as f64 - c[1] as f64) * h[1],
        (idx[2] as f64 - c[2] as f64) * h[2],
    ]
}

/// Observation plane `z = const` sampled by a 2D grid over `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Screen {
    pub grid: Grid2D,
    pub z: f64,
}

impl Screen {
    pub fn point(&self, linear: usize) -> Point3 {
        let [x, y] = self.grid.point(linear);
        [x, y, self.z]
    }
}

/// First Born approximation of the field scattered by `potential` onto
/// `screen` for an incident plane wave.
///
/// The scattering sum evaluates `incident` at each voxel of the potential's
/// support and multiplies by the voxel volume.
pub fn born_scatter(
    incident: &PlaneWave<3>,
    potential: &ScatterPotential,
    screen: &Screen,
    k: f64,
) -> Result<WaveField<2>> {
    let sources: Vec<(Point3, Complex64)> = potential
        .support()
        .map(|(p, u)| (p, incident.at(&p) * u * potential.grid.cell_volume()))
        .collect();

    if let Some((lo, hi)) = potential.support_bounds() {
        for i in 0..screen.grid.len() {
            let r = screen.point(i);
            if (0..3).all(|a| r[a] >= lo[a] && r[a] <= hi[a]) {
                return Err(Error::domain(format!(
                    "screen point {r:?} lies inside the potential support"
                )));
            }
        }
    }

    let mut terms = Vec::with_capacity(sources.len());
    let values = (0..screen.grid.len())
        .map(|i| {
            let r = screen.point(i);
            terms.clear();
            terms.extend(sources.iter().map(|(p, s)| green_at_distance(distance(&r, p), k) * s));
            incident.at(&r) - pairwise_sum_complex(&terms)
        })
        .collect();
    WaveField::new(screen.grid.clone(), values)
}

/// Equal slits cut in an opaque plane, illuminated at normal incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SlitAperture {
    pub count: usize,
    pub width: f64,
    /// Centre-to-centre distance between neighbouring slits.
    pub separation: f64,
    /// Distance from the aperture plane to the screen.
    pub distance: f64,
    /// Point sources per slit; `None` picks about 16 per wavelength.
    pub sources_per_slit: Option<usize>,
}

impl SlitAperture {
    pub fn new(count: usize, width: f64, separation: f64, distance: f64) -> Result<Self> {
        let ap = Self {
            count,
            width,
            separation,
            distance,
            sources_per_slit: None,
        };
        ap.validate()?;
        Ok(ap)
    }

    pub fn single(width: f64, distance: f64) -> Result<Self> {
        Self::new(1, width, 0.0, distance)
    }

    pub fn with_sources_per_slit(mut self, n: usize) -> Self {
        self.sources_per_slit = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::param("aperture needs at least one slit"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::param("slit width must be positive"));
        }
        if self.count >= 2 && !(self.separation > self.width) {
            return Err(Error::param("slit separation must exceed the slit width"));
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::param("screen distance must be positive"));
        }
        if self.sources_per_slit == Some(0) {
            return Err(Error::param("need at least one source per slit"));
        }
        Ok(())
    }

    /// Full extent of the open aperture from the outer edge of the first slit
    /// to the outer edge of the last.
    pub fn span(&self) -> f64 {
        (self.count - 1) as f64 * self.separation + self.width
    }

    /// Source positions along x and the length element each represents.
    fn sources(&self, wavelength: f64) -> (Vec<f64>, f64) {
        let n = self
            .sources_per_slit
            .unwrap_or_else(|| ((16.0 * self.width / wavelength).ceil() as usize).max(8));
        let dx = self.width / n as f64;
        let mid = (self.count - 1) as f64 / 2.0;
        let xs = (0..self.count)
            .flat_map(|s| {
                let center = (s as f64 - mid) * self.separation;
                (0..n).map(move |j| center - 0.5 * self.width + (j as f64 + 0.5) * dx)
            })
            .collect();
        (xs, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityProfile {
    /// Screen coordinate of each sample.
    pub positions: Vec<f64>,
    /// Sine of the angle from the aperture centre to each sample.
    pub sin_theta: Vec<f64>,
    /// Intensity normalised to a maximum of 1.
    pub intensity: Vec<f64>,
    /// Whether the screen distance comfortably exceeds the aperture span.
    pub far_field: bool,
}

impl IntensityProfile {
    /// Indices of strict interior local maxima with intensity above `floor`.
    pub fn local_maxima(&self, floor: f64) -> Vec<usize> {
        let i = &self.intensity;
        (1..i.len().saturating_sub(1))
            .filter(|&j| i[j] > floor && i[j] >= i[j - 1] && i[j] > i[j + 1])
            .collect()
    }
}

/// Far-field threshold as a multiple of the aperture span.
const FAR_FIELD_RATIO: f64 = 10.0;

/// Intensity behind a slit aperture.
///
/// The opaque plane blocks the incident unit plane wave; each open slit is a
/// line of secondary Born sources (unit potential, unit incident amplitude)
/// that radiate through [`green_outgoing`] to a screen line at
/// `z = aperture.distance`.
pub fn double_slit_intensity(aperture: &SlitAperture, k: f64, screen: &Grid1D) -> Result<IntensityProfile> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::param(format!("wavenumber must be positive, got {k}")));
    }
    aperture.validate()?;
    let wavelength = 2.0 * PI / k;
    let extent = (screen.len() - 1) as f64 * screen.spacing()[0];
    if !(wavelength < extent) {
        return Err(Error::param(format!(
            "wavelength {wavelength} is not smaller than the screen extent {extent}"
        )));
    }
    let far_field = aperture.distance >= FAR_FIELD_RATIO * aperture.span();
    if !far_field {
        log::warn!(
            "screen distance {} is not far field for an aperture span of {}",
            aperture.distance,
            aperture.span()
        );
    }

    let (xs, dx) = aperture.sources(wavelength);
    let l = aperture.distance;
    let mut terms = Vec::with_capacity(xs.len());
    let mut positions = Vec::with_capacity(screen.len());
    let mut sin_theta = Vec::with_capacity(screen.len());
    let mut intensity = Vec::with_capacity(screen.len());
    for i in 0..screen.len() {
        let x = screen.point(i)[0];
        terms.clear();
        terms.extend(xs.iter().map(|&xs| green_at_distance(distance(&[x, 0.0, l], &[xs, 0.0, 0.0]), k) * dx));
        let field = -pairwise_sum_complex(&terms);
        positions.push(x);
        sin_theta.push(x / x.hypot(l));
        intensity.push(field.norm_sqr());
    }
    let peak = intensity.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        intensity.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(IntensityProfile {
        positions,
        sin_theta,
        intensity,
        far_field,
    })
}

/// Square, odd-sided complex kernel derived from a potential.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterKernel {
    window: usize,
    /// Row-major over `(y', x')`, x' fastest.
    values: Vec<Complex64>,
    k: f64,
    pub bias: Complex64,
}

impl ScatterKernel {
    pub fn new(window: usize, values: Vec<Complex64>, k: f64, bias: Complex64) -> Result<Self> {
        if window % 2 == 0 {
            return Err(Error::param(format!("kernel window must be odd, got {window}")));
        }
        if values.len() != window * window {
            return Err(Error::shape(format!(
                "{} kernel entries for a {window}x{window} window",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            window,
            values,
            k,
            bias,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Entry at column `x` and row `y` of the window.
    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.values[x + self.window * y]
    }

    /// `(x', y', re, im)` rows with offsets relative to the centre.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        let h = (self.window / 2) as isize;
        (0..self.values.len())
            .map(|i| {
                let z = self.values[i];
                let x = (i % self.window) as isize - h;
                let y = (i / self.window) as isize - h;
                vec![x as f64, y as f64, z.re, z.im]
            })
            .collect()
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }
}

/// Collapses the potential along z into the kernel a neuron at the grid centre
/// applies to an image wave that depends only on `(x', y')`.
pub fn scatter_kernel(potential: &ScatterPotential, k: f64, window: usize) -> Result<ScatterKernel> {
    if window % 2 == 0 {
        return Err(Error::param(format!("kernel window must be odd, got {window}")));
    }
    let grid = potential.grid();
    let [nx, ny, nz] = grid.shape();
    if window > nx || window > ny {
        return Err(Error::shape(format!(
            "window {window} exceeds the potential grid {nx}x{ny} in x/y"
        )));
    }
    let c = center_index(grid);
    let half = window / 2;
    let mut values = Vec::with_capacity(window * window);
    for wy in 0..window {
        for wx in 0..window {
            let (ix, iy) = (c[0] - half + wx, c[1] - half + wy);
            let mut acc = Complex64::new(0.0, 0.0);
            for iz in 0..nz {
                let u = potential.get([ix, iy, iz]);
                if u == 0.0 {
                    continue;
                }
                let r = center_offset(grid, [ix, iy, iz]);
                let dist = distance(&[0.0; 3], &r);
                // self-term: the neuron's own voxel
                if dist == 0.0 {
                    continue;
                }
                acc += green_at_distance(dist, k) * u;
            }
            values.push(acc);
        }
    }
    ScatterKernel::new(window, values, k, Complex64::new(0.0, 0.0))
}

/// Response of one scattering neuron to an image patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronResponse {
    /// `s = |sum K psi + b|`.
    pub amplitude: f64,
    /// `S = s^2`.
    pub intensity: f64,
}

pub fn neuron_response(kernel: &ScatterKernel, patch: &WaveField<2>) -> Result<NeuronResponse> {
    let w = kernel.window();
    if patch.grid().shape() != [w, w] {
        return Err(Error::shape(format!(
            "patch shape {:?} does not match a {w}x{w} kernel",
            patch.grid().shape()
        )));
    }
    let terms: Vec<Complex64> = kernel
        .values()
        .iter()
        .zip(patch.values())
        .map(|(k, psi)| k * psi)
        .collect();
    let amplitude = (pairwise_sum_complex(&terms) + kernel.bias).norm();
    Ok(NeuronResponse {
        amplitude,
        intensity: amplitude * amplitude,
    })
}

/// `int_0^r sin(k (x + a)) da`, the output of a box kernel of length `r`
/// applied to the grating `sin(k x)`.
///
/// Closed form `(2/k) sin(kr/2) sin(kx + kr/2)`; inputs should satisfy
/// `k > 0`, `r > 0`.
pub fn box_conv_sine(k: f64, r: f64, x: f64) -> f64 {
    2.0 / k * (0.5 * k * r).sin() * (k * x + 0.5 * k * r).sin()
}

/// Squared amplitude of [`box_conv_sine`]: `4/k^2 sin^2(kr/2)`.
pub fn envelope_intensity(k: f64, r: f64) -> f64 {
    let a = 2.0 / k * (0.5 * k * r).sin();
    a * a
}

/// Total intensity `sum |psi|^2 dA` of a field over a 2D window.
pub fn window_intensity(field: &WaveField<2>) -> f64 {
    pairwise_sum(&field.intensity()) * field.grid().cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::{Grid2D, WaveVector};

    const ORIGIN: Point3 = [0.0; 3];

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn green_closed_form_values() {
        let g = green_outgoing(&[1.0, 0.0, 0.0], &ORIGIN, 0.0).unwrap();
        assert!((g - c(-1.0 / (4.0 * PI), 0.0)).norm() < 1e-16);
        assert!((g.re + 0.0795775).abs() < 1e-7);
        let g2 = green_outgoing(&[0.0, 2.0, 0.0], &ORIGIN, 0.0).unwrap();
        assert!((g2.norm() - 0.5 * g.norm()).abs() < 1e-16);
        let gpi = green_outgoing(&[0.0, 0.0, 1.0], &ORIGIN, PI).unwrap();
        assert!((gpi - c(1.0 / (4.0 * PI), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn green_singular_and_reciprocal() {
        assert!(matches!(green_outgoing(&ORIGIN, &ORIGIN, 1.0), Err(Error::Domain(_))));
        let a = [0.3, -1.2, 2.5];
        let b = [-0.7, 0.4, 0.1];
        assert_eq!(green_outgoing(&a, &b, 2.3).unwrap(), green_outgoing(&b, &a, 2.3).unwrap());
    }

    fn small_setup() -> (PlaneWave<3>, Grid3D, Screen) {
        let k = 1.5;
        let inc = PlaneWave::new(WaveVector([0.0, 0.0, k]), 1.0);
        let grid = Grid3D::new([5, 5, 5], [0.5; 3], [-1.0; 3]).unwrap();
        let screen = Screen {
            grid: Grid2D::new([7, 7], [1.0, 1.0], [-3.0, -3.0]).unwrap(),
            z: 10.0,
        };
        (inc, grid, screen)
    }

    #[test]
    fn born_without_potential_is_incident() {
        let (inc, grid, screen) = small_setup();
        let out = born_scatter(&inc, &ScatterPotential::zeros(grid), &screen, 1.5).unwrap();
        for i in 0..screen.grid.len() {
            assert_eq!(out.values()[i], inc.at(&screen.point(i)));
        }
    }

    #[test]
    fn born_single_voxel_closed_form() {
        let grid = Grid3D::unit([3, 3, 3]).unwrap();
        let mut u = ScatterPotential::zeros(grid.clone());
        u.set([1, 2, 0], 0.7).unwrap();
        let r0 = grid.coord([1, 2, 0]);
        let inc = PlaneWave::new(WaveVector([0.0; 3]), 1.0);
        let screen = Screen {
            grid: Grid2D::new([3, 2], [2.0, 2.0], [-2.0, -1.0]).unwrap(),
            z: 6.0,
        };
        let out = born_scatter(&inc, &u, &screen, 0.9).unwrap();
        for i in 0..screen.grid.len() {
            let r = screen.point(i);
            let d = ((r[0] - r0[0]).powi(2) + (r[1] - r0[1]).powi(2) + (r[2] - r0[2]).powi(2)).sqrt();
            let g = -Complex64::new((0.9 * d).cos(), (0.9 * d).sin()) / (4.0 * PI * d);
            let want = c(1.0, 0.0) - g * 0.7;
            assert!((out.values()[i] - want).norm() < 1e-15);
        }
    }

    #[test]
    fn born_rejects_screen_inside_support() {
        let (inc, grid, _) = small_setup();
        let mut u = ScatterPotential::zeros(grid);
        u.set([2, 2, 2], 1.0).unwrap();
        let screen = Screen {
            grid: Grid2D::new([3, 3], [0.5, 0.5], [-0.5, -0.5]).unwrap(),
            z: 0.0,
        };
        assert!(matches!(born_scatter(&inc, &u, &screen, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn born_is_linear_in_potential() {
        let (inc, grid, screen) = small_setup();
        let u1 = ScatterPotential::centered_fn(grid.clone(), |[x, y, z]| (x + 2.0 * y - z).sin()).unwrap();
        let u2 = ScatterPotential::centered_fn(grid, |[x, y, z]| 0.3 * x * y + z * z).unwrap();
        let both = born_scatter(&inc, &u1.add(&u2).unwrap(), &screen, 1.5).unwrap();
        let s1 = born_scatter(&inc, &u1, &screen, 1.5).unwrap();
        let s2 = born_scatter(&inc, &u2, &screen, 1.5).unwrap();
        for i in 0..screen.grid.len() {
            let inc_r = inc.at(&screen.point(i));
            let sum = inc_r + (s1.values()[i] - inc_r) + (s2.values()[i] - inc_r);
            assert!((both.values()[i] - sum).norm() < 1e-10);
        }
    }

    #[test]
    fn two_point_scatterers_fringe_at_path_multiples() {
        // sources at x = +-d/2 on the z = 0 plane; screen line at z = L
        let k = 2.0 * PI;
        let d = 4.0;
        let l = 200.0;
        let grid = Grid3D::new([3, 1, 1], [d / 2.0, 1.0, 1.0], [-d / 2.0, 0.0, 0.0]).unwrap();
        let mut u = ScatterPotential::zeros(grid);
        u.set([0, 0, 0], 1.0).unwrap();
        u.set([2, 0, 0], 1.0).unwrap();
        let inc = PlaneWave::new(WaveVector([0.0, 0.0, k]), 1.0);
        let n = 2001;
        let screen = Screen {
            grid: Grid2D::new([n, 1], [0.05, 1.0], [-50.0, 0.0]).unwrap(),
            z: l,
        };
        let out = born_scatter(&inc, &u, &screen, k).unwrap();
        let scattered: Vec<f64> = (0..n)
            .map(|i| (out.values()[i] - inc.at(&screen.point(i))).norm_sqr())
            .collect();
        // analytic maxima: |r - s1| - |r - s2| = m lambda, solved on the screen line
        for m in -2i32..=2 {
            let target = m as f64;
            let path = |x: f64| ((x + d / 2.0).hypot(l)) - ((x - d / 2.0).hypot(l));
            let (mut lo, mut hi) = (-50.0, 50.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if path(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let want = ((lo + 50.0) / 0.05).round() as usize;
            let window = want.saturating_sub(40)..(want + 40).min(n);
            let found = window
                .clone()
                .max_by(|&a, &b| scattered[a].total_cmp(&scattered[b]))
                .unwrap();
            assert!(found.abs_diff(want) <= 1, "m={m}: found {found}, want {want}");
        }
    }

    #[test]
    fn slit_aperture_validation() {
        assert!(SlitAperture::new(2, 1.0, 0.5, 10.0).is_err());
        assert!(SlitAperture::new(2, 1.0, 2.0, 0.0).is_err());
        assert!(SlitAperture::new(0, 1.0, 2.0, 1.0).is_err());
        assert!(SlitAperture::single(1.0, 10.0).is_ok());
        let screen = Grid1D::line(11, 1.0, -5.0).unwrap();
        let ap = SlitAperture::single(1.0, 10.0).unwrap();
        assert!(double_slit_intensity(&ap, 0.0, &screen).is_err());
        assert!(double_slit_intensity(&ap, -1.0, &screen).is_err());
    }

    #[test]
    fn single_slit_zeros_match_sinc() {
        let k = 2.0 * PI;
        let width = 4.0;
        let l = 4000.0;
        let ap = SlitAperture::single(width, l).unwrap();
        let n = 10001;
        let spacing = 0.25;
        let screen = Grid1D::line(n, spacing, -1250.0).unwrap();
        let prof = double_slit_intensity(&ap, k, &screen).unwrap();
        let center = n / 2;
        assert_eq!(prof.intensity[center], 1.0);
        for sign in [-1.0, 1.0] {
            // sin(theta) = lambda / width
            let s = sign * 1.0 / width;
            let x = l * s / (1.0 - s * s).sqrt();
            let want = ((x + 1250.0) / spacing).round() as usize;
            let window = want - 20..want + 20;
            let found = window.min_by(|&a, &b| prof.intensity[a].total_cmp(&prof.intensity[b])).unwrap();
            assert!(found.abs_diff(want) <= 1, "found {found} want {want}");
            assert!(prof.intensity[found] < 1e-4);
        }
    }

    #[test]
    fn merged_double_slit_becomes_single() {
        let k = 2.0 * PI;
        let w = 1.0;
        let screen = Grid1D::line(801, 1.0, -400.0).unwrap();
        let merged = SlitAperture::new(2, w, w * (1.0 + 1e-9), 2000.0)
            .unwrap()
            .with_sources_per_slit(16);
        let single = SlitAperture::single(2.0 * w, 2000.0).unwrap().with_sources_per_slit(32);
        let a = double_slit_intensity(&merged, k, &screen).unwrap();
        let b = double_slit_intensity(&single, k, &screen).unwrap();
        let dev = a.intensity.iter().zip(&b.intensity).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-3, "dev = {dev}");
    }

    #[test]
    fn symmetric_aperture_gives_symmetric_profile() {
        let ap = SlitAperture::new(3, 0.7, 2.1, 500.0).unwrap();
        let screen = Grid1D::line(301, 0.5, -75.0).unwrap();
        let prof = double_slit_intensity(&ap, 2.0 * PI / 0.9, &screen).unwrap();
        let n = prof.intensity.len();
        for i in 0..n {
            assert!((prof.intensity[i] - prof.intensity[n - 1 - i]).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_of_empty_potential_is_zero() {
        let grid = Grid3D::unit([5, 5, 5]).unwrap();
        let kern = scatter_kernel(&ScatterPotential::zeros(grid), 1.0, 3).unwrap();
        assert!(kern.values().iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn kernel_single_voxel() {
        let grid = Grid3D::unit([7, 7, 5]).unwrap();
        let mut u = ScatterPotential::zeros(grid);
        // offset (1, -2, 1) from the centre voxel (3, 3, 2)
        u.set([4, 1, 3], 0.8).unwrap();
        let kern = scatter_kernel(&u, 1.3, 5).unwrap();
        let want = green_outgoing(&ORIGIN, &[1.0, -2.0, 1.0], 1.3).unwrap() * 0.8;
        for y in 0..5 {
            for x in 0..5 {
                let got = kern.get(x, y);
                if (x, y) == (3, 0) {
                    assert_eq!(got, want);
                } else {
                    assert_eq!(got, c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn kernel_skips_self_term() {
        let grid = Grid3D::unit([3, 3, 3]).unwrap();
        let mut u = ScatterPotential::zeros(grid);
        u.set([1, 1, 1], 5.0).unwrap();
        u.set([1, 1, 0], 2.0).unwrap();
        let kern = scatter_kernel(&u, 0.0, 3).unwrap();
        assert_eq!(kern.get(1, 1), c(-2.0 / (4.0 * PI), 0.0));
    }

    #[test]
    fn kernel_rejects_even_or_oversized_window() {
        let grid = Grid3D::unit([5, 5, 5]).unwrap();
        let u = ScatterPotential::zeros(grid);
        assert!(scatter_kernel(&u, 1.0, 4).is_err());
        assert!(scatter_kernel(&u, 1.0, 7).is_err());
    }

    #[test]
    fn kernel_depends_only_on_radius_for_radial_potential() {
        let grid = Grid3D::new([11, 11, 9], [0.5; 3], [0.0; 3]).unwrap();
        let u = ScatterPotential::centered_fn(grid, |[x, y, z]| {
            let r = (x * x + y * y + z * z).sqrt();
            (-r).exp() * (1.0 + (2.0 * r).cos())
        })
        .unwrap();
        let kern = scatter_kernel(&u, 2.2, 9).unwrap();
        let mut by_radius: Vec<(i64, Complex64)> = Vec::new();
        for y in 0..9i64 {
            for x in 0..9i64 {
                by_radius.push(((x - 4).pow(2) + (y - 4).pow(2), kern.get(x as usize, y as usize)));
            }
        }
        let mut worst: f64 = 0.0;
        for (r2, z) in &by_radius {
            for (s2, w) in &by_radius {
                if r2 == s2 {
                    worst = worst.max((z - w).norm());
                }
            }
        }
        assert!(worst < 1e-10, "worst = {worst}");
    }

    fn patch(values: Vec<Complex64>, w: usize) -> WaveField<2> {
        WaveField::new(Grid2D::unit([w, w]).unwrap(), values).unwrap()
    }

    #[test]
    fn neuron_response_examples() {
        let zero = ScatterKernel::new(3, vec![c(0.0, 0.0); 9], 1.0, c(0.0, 0.0)).unwrap();
        let p = patch(vec![c(1.0, 2.0); 9], 3);
        let r = neuron_response(&zero, &p).unwrap();
        assert_eq!((r.amplitude, r.intensity), (0.0, 0.0));

        let mut vals = vec![c(0.0, 0.0); 9];
        vals[4] = c(1.0, 0.0);
        let center = ScatterKernel::new(3, vals, 1.0, c(0.0, 0.0)).unwrap();
        let mut pv = vec![c(0.7, -0.1); 9];
        pv[4] = c(3.0, 4.0);
        let r = neuron_response(&center, &patch(pv, 3)).unwrap();
        assert_eq!(r.amplitude, 5.0);
        assert_eq!(r.intensity, 25.0);

        assert!(neuron_response(&center, &patch(vec![c(0.0, 0.0); 25], 5)).is_err());
    }

    #[test]
    fn box_conv_sine_examples() {
        for x in [-1.0, 0.0, 0.37, 2.0] {
            assert!(box_conv_sine(2.0, PI, x).abs() < 1e-15);
        }
        assert!((envelope_intensity(1.0, PI) - 4.0).abs() < 1e-15);
        assert!(envelope_intensity(2.0, PI) < 1e-30);
    }

    #[test]
    fn window_intensity_dominated_by_center_for_narrow_field() {
        let mut v = vec![c(0.0, 0.0); 9];
        v[4] = c(0.6, 0.8);
        assert_eq!(window_intensity(&patch(v, 3)), 1.0);
    }
}
