//! `verify`: every module invariant and acceptance oracle in one run.
//!
//! Random instances are drawn from ChaCha streams keyed by the verify seed,
//! one stream per check group, so adding a group never perturbs the others.
//! The experiments run with their own documented default seeds. The report
//! is one CSV line per check and is byte-identical for a given seed.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatternet::energymodel::{
    anneal_sample, boltzmann_prob, energy, gibbs_step, joint_distribution, partition_function_exact,
    temper_sample, visible_marginal, visible_sweep_kernel, BinaryConfig, ChainState, RbmParams, Schedule,
};
use scatternet::neuralnet::{
    argmax, conv2d, cross_entropy, entropy, gradient_check, kl_divergence, max_pool, softmax, softmax_temperature,
    ConvLayer, FeatureTensor, Network, NetworkBuilder, Target,
};
use scatternet::optim::{gd_step, minimize, momentum_step, Convergence, MomentumState, Optimizer};
use scatternet::scattering::{
    born_scatter, double_slit_intensity, green_outgoing, neuron_response, scatter_kernel, ScatterPotential, Screen,
    SlitAperture,
};
use scatternet::wavefield::{
    plane_wave, series_interior, shift_exact, translate_series, translation_phase, Grid1D, Grid2D, Grid3D,
    PlaneWave, WaveField, WaveVector,
};
use scatternet::Complex64;

use crate::checks::format_report;
use crate::config::{ensure_dir, ExperimentConfig, ExperimentId};
use crate::experiments::{self, default_cnn};
use crate::gratings::{gen_gratings, GratingDataset};
use crate::{Check, HarnessError, Result};

/// Ids of the module invariants `verify` must cover. The coverage check
/// fails if any of these is missing from the report.
pub const DECLARED_INVARIANTS: &[&str] = &[
    "wavefield.phase_group",
    "wavefield.phase_unit_modulus",
    "wavefield.series_monotone",
    "wavefield.plane_wave_modulus",
    "scattering.green_reciprocity",
    "scattering.born_linearity",
    "scattering.slit_symmetry",
    "scattering.kernel_rings",
    "scattering.neuron_phase_invariance",
    "neuralnet.conv_translation_covariance",
    "neuralnet.softmax_normalization",
    "neuralnet.softmax_shift_invariance",
    "neuralnet.temperature_argmax",
    "neuralnet.temperature_entropy_monotone",
    "neuralnet.pool_composition",
    "neuralnet.gradient_check",
    "energymodel.detailed_balance",
    "energymodel.partition_relabel",
    "energymodel.energy_swap",
    "energymodel.sampler_determinism",
    "energymodel.beta_zero_uniform",
    "optim.blockwise_linearity",
    "optim.alpha_zero_is_gd",
    "optim.momentum_bounded",
    "harness.experiment_determinism",
    "harness.invariant_coverage",
];

pub const REPORT_FILE: &str = "verify_report.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub path: PathBuf,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

type Group = fn(&mut ChaCha8Rng) -> Result<Vec<Check>>;

/// Check groups in report order; the name labels an errored group.
const GROUPS: &[(&str, Group)] = &[
    ("wavefield", wavefield_checks),
    ("scattering", scattering_checks),
    ("neuralnet.oracles", neuralnet_oracles),
    ("neuralnet.softmax", softmax_checks),
    ("neuralnet.gradients", gradient_checks),
    ("energymodel", energymodel_checks),
    ("energymodel.gibbs", gibbs_checks),
    ("optim", optim_checks),
];

/// Runs every check group and experiment and writes
/// `<out_root>/verify/verify_report.csv`.
pub fn run_verify_all(seed: u64, out_root: &Path) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for name in group_names() {
        log::info!("verify: {name}");
        match run_group(name, seed) {
            Ok(cs) => checks.extend(cs),
            Err(e) => checks.push(Check::errored(name, &e)),
        }
    }

    for id in ExperimentId::ALL.into_iter().filter(|&id| id != ExperimentId::Verify) {
        log::info!("verify: experiment {id}");
        let cfg = ExperimentConfig::new(id, out_root);
        match experiments::run(&cfg) {
            Ok(outcome) => checks.extend(outcome.checks),
            Err(e) => checks.push(Check::errored(format!("{}.run", id.name().replace('-', "_")), &e)),
        }
    }
    checks.push(rerun_check(out_root));
    checks.push(coverage_check(&checks));

    let dir = out_root.join(ExperimentId::Verify.name());
    ensure_dir(&dir)?;
    let path = dir.join(REPORT_FILE);
    fs::write(&path, format_report(&checks)).map_err(HarnessError::io(&path))?;
    Ok(VerifyReport { checks, path })
}

/// Names of the check groups, in report order.
pub fn group_names() -> impl Iterator<Item = &'static str> {
    GROUPS.iter().map(|(name, _)| *name)
}

/// Runs one check group by name with the same random stream `verify` uses.
pub fn run_group(name: &str, seed: u64) -> Result<Vec<Check>> {
    let (stream, (_, group)) = GROUPS
        .iter()
        .enumerate()
        .find(|(_, (n, _))| *n == name)
        .ok_or_else(|| HarnessError::Param(format!("no check group named {name}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    group(&mut rng)
}

/// Ids in `DECLARED_INVARIANTS` with no matching check.
pub fn missing_invariants(checks: &[Check]) -> Vec<&'static str> {
    let have: BTreeSet<&str> = checks.iter().map(|c| c.id.as_str()).collect();
    DECLARED_INVARIANTS
        .iter()
        .copied()
        .filter(|id| *id != "harness.invariant_coverage" && !have.contains(id))
        .collect()
}

fn coverage_check(checks: &[Check]) -> Check {
    let missing = missing_invariants(checks);
    for id in &missing {
        log::error!("declared invariant {id} has no check");
    }
    Check::exact("harness.invariant_coverage", missing.len())
}

/// Re-runs the cheap experiments into a scratch root and counts artifacts
/// whose bytes differ from the first run.
fn rerun_check(out_root: &Path) -> Check {
    const ID: &str = "harness.experiment_determinism";
    let scratch = out_root.join(ExperimentId::Verify.name()).join("rerun");
    let mut differing = 0;
    for id in [ExperimentId::Envelope, ExperimentId::Fringes] {
        let first = match experiments::run(&ExperimentConfig::new(id, out_root)) {
            Ok(o) => o,
            Err(e) => return Check::errored(ID, &e),
        };
        let second = match experiments::run(&ExperimentConfig::new(id, &scratch)) {
            Ok(o) => o,
            Err(e) => return Check::errored(ID, &e),
        };
        if first.artifacts.len() != second.artifacts.len() {
            differing += first.artifacts.len().abs_diff(second.artifacts.len());
        }
        for (a, b) in first.artifacts.iter().zip(&second.artifacts) {
            match (fs::read(a), fs::read(b)) {
                (Ok(x), Ok(y)) if x == y => {}
                _ => differing += 1,
            }
        }
    }
    if let Err(e) = fs::remove_dir_all(&scratch) {
        log::warn!("could not remove {}: {e}", scratch.display());
    }
    Check::exact(ID, differing)
}

fn max_abs(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn bits_differ(a: Complex64, b: Complex64) -> bool {
    a.re.to_bits() != b.re.to_bits() || a.im.to_bits() != b.im.to_bits()
}

fn wavefield_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut group = 0.0_f64;
    let mut modulus = 0.0_f64;
    for _ in 0..1000 {
        let k = WaveVector([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
        let a = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let b = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let lhs = translation_phase(&k, &a) * translation_phase(&k, &b);
        let rhs = translation_phase(&k, &[a[0] + b[0], a[1] + b[1]]);
        group = group.max((lhs - rhs).norm());
        modulus = modulus.max((translation_phase(&k, &a).norm() - 1.0).abs());
    }

    // series translation of sin(kx) by two samples, k h = 0.45
    let (n, k, a) = (200, 0.45, 2.0);
    let f = WaveField::from_fn(Grid1D::line(n, 1.0, 0.0)?, |[x]| Complex64::new((k * x).sin(), 0.0))?;
    let oracle = shift_exact(&f, -2)?;
    let max_terms = 8;
    let interior = series_interior(n, max_terms);
    let mut errors = Vec::with_capacity(max_terms);
    for terms in 1..=max_terms {
        let s = translate_series(&f, a, terms)?;
        errors.push(max_abs(interior.clone().map(|i| (s.values()[i] - oracle.values()[i]).norm())));
    }
    let rises = errors.windows(2).filter(|w| w[1] >= w[0]).count();

    let grid = Grid3D::new([6, 5, 4], [0.7, 1.1, 0.3], [-1.0, 2.0, 0.5])?;
    let mut plane = 0.0_f64;
    for _ in 0..50 {
        let kv = WaveVector([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let amp = rng.random_range(0.1..10.0);
        let field = plane_wave(&grid, kv, amp);
        plane = plane.max(max_abs(field.modulus().iter().map(|m| (m - amp) / amp)));
    }

    Ok(vec![
        Check::below("wavefield.phase_group", group, 1e-12),
        Check::below("wavefield.phase_unit_modulus", modulus, 1e-12),
        Check::exact("wavefield.series_monotone", rises),
        Check::below("wavefield.plane_wave_modulus", plane, 1e-12),
    ])
}

fn radial_kernel_deviation(k: f64, width: f64) -> scatternet::Result<f64> {
    let grid = Grid3D::unit([11, 11, 11])?;
    let u = ScatterPotential::centered_fn(grid, |p| (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / width).exp())?;
    let window = 9;
    let kernel = scatter_kernel(&u, k, window)?;
    let c = (window / 2) as i64;
    let mut rings: BTreeMap<i64, Vec<Complex64>> = BTreeMap::new();
    for y in 0..window {
        for x in 0..window {
            let (dx, dy) = (x as i64 - c, y as i64 - c);
            rings.entry(dx * dx + dy * dy).or_default().push(kernel.get(x, y));
        }
    }
    Ok(rings
        .values()
        .flat_map(|ring| ring.iter().map(move |z| (z - ring[0]).norm()))
        .fold(0.0, f64::max))
}

fn scattering_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut mismatches = 0;
    for _ in 0..1000 {
        let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let k = rng.random_range(0.1..10.0);
        if bits_differ(green_outgoing(&r, &s, k)?, green_outgoing(&s, &r, k)?) {
            mismatches += 1;
        }
    }

    let grid = Grid3D::new([4, 4, 4], [0.5; 3], [-1.0; 3])?;
    let screen = Screen {
        grid: Grid2D::new([9, 9], [1.0, 1.0], [-4.0, -4.0])?,
        z: 12.0,
    };
    let k = 1.4;
    let inc = PlaneWave::new(WaveVector([0.2, -0.1, 1.4]), 1.0);
    let mut linearity = 0.0_f64;
    for _ in 0..3 {
        let v1: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let v2: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let u1 = ScatterPotential::new(grid.clone(), v1)?;
        let u2 = ScatterPotential::new(grid.clone(), v2)?;
        let both = born_scatter(&inc, &u1.add(&u2)?, &screen, k)?;
        let s1 = born_scatter(&inc, &u1, &screen, k)?;
        let s2 = born_scatter(&inc, &u2, &screen, k)?;
        for i in 0..screen.grid.len() {
            let incident = inc.at(&screen.point(i));
            let sum = incident + (s1.values()[i] - incident) + (s2.values()[i] - incident);
            linearity = linearity.max((both.values()[i] - sum).norm());
        }
    }

    let line = Grid1D::line(1025, 0.5, -256.0)?;
    let mut asymmetry = 0.0_f64;
    for (count, width, sep) in [(1, 2.0, 0.0), (2, 1.0, 10.0), (3, 0.5, 4.0)] {
        let profile = double_slit_intensity(&SlitAperture::new(count, width, sep, 800.0)?, 2.0 * PI, &line)?;
        let i = &profile.intensity;
        asymmetry = asymmetry.max(max_abs((0..i.len()).map(|j| i[j] - i[i.len() - 1 - j])));
    }

    let rings = radial_kernel_deviation(0.9, 6.0)?.max(radial_kernel_deviation(2.1, 3.0)?);

    let kgrid = Grid3D::unit([5, 5, 5])?;
    let u = ScatterPotential::centered_fn(kgrid, |p| (-(p[0] * p[0] + 0.5 * p[1] * p[1] + p[2] * p[2]) / 2.0).exp())?;
    let kernel = scatter_kernel(&u, 1.3, 3)?;
    let patch_grid = Grid2D::unit([3, 3])?;
    let mut phase = 0.0_f64;
    for _ in 0..200 {
        let psi: Vec<Complex64> = (0..9)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let rot = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
        let a = neuron_response(&kernel, &WaveField::new(patch_grid.clone(), psi.clone())?)?;
        let b = neuron_response(&kernel, &WaveField::new(patch_grid.clone(), psi.iter().map(|z| z * rot).collect())?)?;
        phase = phase.max((a.intensity - b.intensity).abs());
    }

    Ok(vec![
        Check::exact("scattering.green_reciprocity", mismatches),
        Check::below("scattering.born_linearity", linearity, 1e-10),
        Check::below("scattering.slit_symmetry", asymmetry, 1e-10),
        Check::below("scattering.kernel_rings", rings, 1e-10),
        Check::below("scattering.neuron_phase_invariance", phase, 1e-10),
    ])
}

fn int_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, lo: i32, hi: i32) -> scatternet::Result<FeatureTensor> {
    FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(lo..=hi) as f64).collect())
}

/// Direct nested-loop convolution, accumulating in the same order as a
/// hand calculation: bias, then channel, row, column.
pub fn direct_conv(x: &FeatureTensor, l: &ConvLayer) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let (oh, ow) = ((h - l.kh) / l.stride + 1, (w - l.kw) / l.stride + 1);
    let mut out = Vec::with_capacity(l.out_ch * oh * ow);
    for o in 0..l.out_ch {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = l.bias[o];
                for i in 0..c {
                    for ky in 0..l.kh {
                        for kx in 0..l.kw {
                            let k = l.kernels[((o * c + i) * l.kh + ky) * l.kw + kx];
                            acc += k * x.get(i, y * l.stride + ky, xx * l.stride + kx);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Window maximum and first flat index attaining it.
fn window_max(x: &FeatureTensor, ch: usize, r0: usize, c0: usize, window: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for dy in 0..window {
        for dx in 0..window {
            let idx = x.index(ch, r0 + dy, c0 + dx);
            let v = x.data()[idx];
            if v > best.0 || (v == best.0 && idx < best.1) {
                best = (v, idx);
            }
        }
    }
    best
}

fn neuralnet_oracles(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut conv_bad = 0;
    for _ in 0..200 {
        let in_ch = rng.random_range(1..=3);
        let out_ch = rng.random_range(1..=3);
        let kh = 2 * rng.random_range(0..=4) + 1;
        let kw = 2 * rng.random_range(0..=4) + 1;
        let stride = rng.random_range(1..=3);
        let h = kh + rng.random_range(0..8);
        let w = kw + rng.random_range(0..8);
        let x = int_tensor(rng, in_ch, h, w, -9, 9)?;
        let kernels = (0..out_ch * in_ch * kh * kw).map(|_| rng.random_range(-5i32..=5) as f64).collect();
        let bias = (0..out_ch).map(|_| rng.random_range(-5i32..=5) as f64).collect();
        let layer = ConvLayer::new(out_ch, in_ch, kh, kw, stride, kernels, bias)?;
        let y = conv2d(&x, &layer)?;
        let want = direct_conv(&x, &layer);
        if y.data().len() != want.len() || y.data().iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            conv_bad += 1;
        }
    }

    // stride-1 translation covariance: shift right by one column
    let mut covariance_bad = 0;
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..=3), rng.random_range(5..10), rng.random_range(5..10));
        let x = int_tensor(rng, c, h, w, -9, 9)?;
        let mut shifted = FeatureTensor::zeros(c, h, w);
        for ch in 0..c {
            for y in 0..h {
                for xx in 1..w {
                    let (to, from) = (shifted.index(ch, y, xx), x.index(ch, y, xx - 1));
                    shifted.data_mut()[to] = x.data()[from];
                }
            }
        }
        let k = rng.random_range(1..=2) * 2 + 1;
        let out_ch = rng.random_range(1..=3);
        let layer = ConvLayer::new(
            out_ch,
            c,
            k,
            k,
            1,
            (0..out_ch * c * k * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..out_ch).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let a = conv2d(&x, &layer)?;
        let b = conv2d(&shifted, &layer)?;
        let (_, oh, ow) = a.shape();
        for o in 0..out_ch {
            for y in 0..oh {
                for xx in 0..ow - 1 {
                    if a.get(o, y, xx).to_bits() != b.get(o, y, xx + 1).to_bits() {
                        covariance_bad += 1;
                    }
                }
            }
        }
    }

    let mut pool_bad = 0;
    if max_pool(&FeatureTensor::zeros(1, 4, 4), 2, 2)?.0.shape() != (1, 2, 2) {
        pool_bad += 1;
    }
    for _ in 0..200 {
        let c = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(2..10), rng.random_range(2..10));
        let window = rng.random_range(1..=h.min(w));
        let stride = rng.random_range(1..=3);
        // a small value range forces ties
        let x = int_tensor(rng, c, h, w, 0, 3)?;
        let (y, routes) = max_pool(&x, window, stride)?;
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        if y.shape() != (c, oh, ow) {
            pool_bad += 1;
            continue;
        }
        for ch in 0..c {
            for r in 0..oh {
                for q in 0..ow {
                    let o = y.index(ch, r, q);
                    if (y.data()[o], routes[o]) != window_max(&x, ch, r * stride, q * stride, window) {
                        pool_bad += 1;
                    }
                }
            }
        }
    }

    let mut composition_bad = 0;
    for _ in 0..200 {
        let c = rng.random_range(1..=3);
        let (h, w) = (4 * rng.random_range(1..5), 4 * rng.random_range(1..5));
        let x = FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let twice = max_pool(&max_pool(&x, 2, 2)?.0, 2, 2)?.0;
        if twice != max_pool(&x, 4, 4)?.0 {
            composition_bad += 1;
        }
    }

    // entropy family: worst deviation across the closed-form cases
    let mut family = entropy(&[0.0, 1.0, 0.0])?.abs();
    for n in [2usize, 3, 4, 7, 100] {
        family = family.max((entropy(&vec![1.0 / n as f64; n])? - (n as f64).ln()).abs());
    }
    let mut kl_negative = 0;
    for i in 0..10_000 {
        let n = 2 + i % 9;
        let p = random_distribution(rng, n);
        let q = random_distribution(rng, n);
        family = family.max((cross_entropy(&p, &p)? - entropy(&p)?).abs());
        if kl_divergence(&p, &q)? < 0.0 {
            kl_negative += 1;
        }
    }
    let example = (cross_entropy(&[0.0, 0.0, 1.0], &[0.0010, 0.0001, 0.9989])? + 0.9989f64.ln()).abs();

    Ok(vec![
        Check::exact("neuralnet.conv_oracle", conv_bad),
        Check::exact("neuralnet.conv_translation_covariance", covariance_bad),
        Check::exact("neuralnet.pool_oracle", pool_bad),
        Check::exact("neuralnet.pool_composition", composition_bad),
        Check::below("neuralnet.entropy_family", family, 1e-12),
        Check::exact("neuralnet.kl_nonnegative", kl_negative),
        Check::below("neuralnet.cross_entropy_example", example, 1e-9),
    ])
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(1e-3..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Log-spaced temperatures from 1e-2 to 1e2.
pub fn temperature_grid() -> Vec<f64> {
    (0..20).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 19.0)).collect()
}

fn softmax_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let grid = temperature_grid();
    let (mut norm, mut shift, mut t1, mut hot) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let (mut argmax_bad, mut entropy_drops) = (0, 0);
    for _ in 0..200 {
        let c = rng.random_range(2..10);
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = softmax(&z);
        norm = norm.max((base.iter().sum::<f64>() - 1.0).abs());
        let offset = rng.random_range(-50.0..50.0);
        let moved: Vec<f64> = z.iter().map(|x| x + offset).collect();
        shift = shift.max(max_abs(softmax(&moved).iter().zip(&base).map(|(a, b)| a - b)));
        let t = rng.random_range(0.05..20.0);
        let q = softmax_temperature(&z, t)?;
        let q_moved = softmax_temperature(&moved, t)?;
        norm = norm.max((q.iter().sum::<f64>() - 1.0).abs());
        shift = shift.max(max_abs(q.iter().zip(&q_moved).map(|(a, b)| a - b)));
        t1 = t1.max(max_abs(softmax_temperature(&z, 1.0)?.iter().zip(&base).map(|(a, b)| a - b)));
        hot = hot.max(max_abs(softmax_temperature(&z, 1e6)?.iter().map(|q| q - 1.0 / c as f64)));

        let wide: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut prev = f64::NEG_INFINITY;
        for &t in &grid {
            let q = softmax_temperature(&wide, t)?;
            if argmax(&q) != argmax(&wide) {
                argmax_bad += 1;
            }
            let h = entropy(&q)?;
            if h < prev {
                entropy_drops += 1;
            }
            prev = h;
        }
    }
    Ok(vec![
        Check::below("neuralnet.softmax_normalization", norm, 1e-12),
        Check::below("neuralnet.softmax_shift_invariance", shift, 1e-12),
        Check::at_most("neuralnet.temperature_one", t1, 1e-15),
        Check::below("neuralnet.temperature_hot", hot, 1e-5),
        Check::exact("neuralnet.temperature_argmax", argmax_bad),
        Check::exact("neuralnet.temperature_entropy_monotone", entropy_drops),
    ])
}

/// Step and tolerance of the finite-difference gradient checks.
pub const GRADIENT_STEP: f64 = 1e-3;
pub const GRADIENT_TOL: f64 = 1e-4;

/// Worst relative error over every parameter at exactly [`GRADIENT_STEP`];
/// a stencil that crosses a kink shows up as a large error.
fn worst_gradient_error(net: &Network, input: &FeatureTensor, target: &Target) -> Result<(f64, usize)> {
    let gc = gradient_check(net, input, target, GRADIENT_STEP)?;
    Ok((gc.worst().1, gc.kink_count()))
}

/// Smallest step tried for a parameter whose stencil crosses a kink.
const MIN_KINK_STEP: f64 = 1e-7;

/// Worst relative error over every parameter, re-checking each parameter
/// whose [`GRADIENT_STEP`] stencil crosses a ReLU or pooling kink with the
/// largest halved step that does not. Returns the error and the number of
/// parameters that needed a smaller step.
fn kink_aware_gradient_error(net: &Network, input: &FeatureTensor, target: &Target) -> Result<(f64, usize)> {
    let gc = gradient_check(net, input, target, GRADIENT_STEP)?;
    let mut pending: Vec<usize> = (0..gc.analytic.len()).filter(|&i| gc.kinked[i]).collect();
    let kinked = pending.len();
    let mut worst = (0..gc.analytic.len())
        .filter(|&i| !gc.kinked[i])
        .map(|i| gc.relative_error(i))
        .fold(0.0, f64::max);
    let mut step = GRADIENT_STEP;
    while !pending.is_empty() {
        step /= 2.0;
        if step < MIN_KINK_STEP {
            // finite differences cannot resolve these; count them as failures
            return Ok((f64::INFINITY, kinked));
        }
        let finer = gradient_check(net, input, target, step)?;
        pending.retain(|&i| {
            if finer.kinked[i] {
                return true;
            }
            worst = worst.max(finer.relative_error(i));
            false
        });
    }
    Ok((worst, kinked))
}

fn random_input(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Result<FeatureTensor> {
    Ok(FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())?)
}

/// Network and input of the fixed-step gradient check: two conv layers,
/// a pool and a dense head on an 8x8 input, at fixed seeds.
pub fn reference_gradient_instance() -> Result<(Network, FeatureTensor)> {
    let net = NetworkBuilder::new(1, 8, 8)
        .conv(3, 3, 1)
        .relu()
        .conv(3, 3, 1)
        .relu()
        .max_pool(2, 2)
        .dense(4)
        .build(0)?;
    let input = random_input(&mut ChaCha8Rng::seed_from_u64(100), 1, 8, 8)?;
    Ok((net, input))
}

/// The train-cnn network at its default seed and a grating it trains on.
pub fn default_cnn_instance() -> Result<(Network, FeatureTensor, usize)> {
    let cfg = ExperimentConfig::new(ExperimentId::TrainCnn, "");
    let net = default_cnn(cfg.get_usize("size"), cfg.get_usize("filters"), 4, cfg.seed)?;
    let data = GratingDataset::four_orientations(cfg.get_usize("size"), cfg.get("wavelength"), 1, cfg.get("noise"));
    let set = gen_gratings(&data, cfg.seed)?;
    Ok((net, set.images[0].clone(), set.labels[0]))
}

fn gradient_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut isolated = 0.0_f64;
    // one small net per layer type, then a composition of all of them
    let nets = [
        NetworkBuilder::new(2, 3, 3).conv(3, 3, 1).build(1)?,
        NetworkBuilder::new(1, 1, 1).dense(5).build(2)?,
        NetworkBuilder::new(1, 1, 6).dense(4).sigmoid().dense(3).build(3)?,
        NetworkBuilder::new(1, 1, 6).dense(4).relu().dense(3).build(4)?,
        NetworkBuilder::new(1, 4, 4).max_pool(2, 2).dense(3).build(5)?,
        NetworkBuilder::new(1, 8, 8)
            .conv(3, 3, 1)
            .relu()
            .conv(3, 3, 1)
            .sigmoid()
            .max_pool(2, 2)
            .dense(4)
            .build(6)?,
    ];
    for net in &nets {
        let (c, h, w) = net.input_shape();
        let input = random_input(rng, c, h, w)?;
        let target = Target::Class(rng.random_range(0..net.output_len()?));
        isolated = isolated.max(kink_aware_gradient_error(net, &input, &target)?.0);
    }

    let (net, input) = reference_gradient_instance()?;
    let (reference, kinks) = worst_gradient_error(&net, &input, &Target::Class(1))?;
    if kinks > 0 {
        log::warn!("{kinks} reference parameters straddle a kink at step {GRADIENT_STEP}");
    }
    let (net, input, label) = default_cnn_instance()?;
    let (train_net, kinks) = kink_aware_gradient_error(&net, &input, &Target::Class(label))?;
    log::info!("train-cnn network: {kinks} parameters re-checked below step {GRADIENT_STEP}");
    Ok(vec![
        Check::below("neuralnet.gradient_check", isolated, GRADIENT_TOL),
        Check::below("neuralnet.reference_gradient", reference, GRADIENT_TOL),
        Check::below("neuralnet.train_cnn_gradient", train_net, GRADIENT_TOL),
    ])
}

fn random_params(rng: &mut ChaCha8Rng, n_v: usize, n_h: usize) -> scatternet::Result<RbmParams> {
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let (b, c, w) = (draw(n_v), draw(n_h), draw(n_v * n_h));
    RbmParams::new(b, c, w)
}

/// Parameters on a 1/8 grid, so that the few-term sums inside an energy are
/// exact and relabelling cannot change any rounding.
fn dyadic_params(rng: &mut ChaCha8Rng, n_v: usize, n_h: usize) -> scatternet::Result<RbmParams> {
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-16i32..=16) as f64 / 8.0).collect::<Vec<f64>>();
    let (b, c, w) = (draw(n_v), draw(n_h), draw(n_v * n_h));
    RbmParams::new(b, c, w)
}

fn energymodel_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut balance = 0.0_f64;
    for _ in 0..3 {
        let p = random_params(rng, 3, 2)?;
        for beta in [0.5, 1.0, 2.0] {
            let t = visible_sweep_kernel(&p, beta)?;
            let pi = visible_marginal(&p, beta)?;
            for x in 0..pi.len() {
                for y in 0..pi.len() {
                    balance = balance.max((pi[x] * t[x][y] - pi[y] * t[y][x]).abs());
                }
            }
        }
    }

    let (mut relabel_bad, mut swap_bad) = (0, 0);
    for _ in 0..10 {
        let p = dyadic_params(rng, 3, 3)?;
        let (pv, ph) = ([2usize, 0, 1], [1usize, 2, 0]);
        let b = pv.iter().map(|&i| p.visible_bias[i]).collect();
        let c = ph.iter().map(|&j| p.hidden_bias[j]).collect();
        let w = pv
            .iter()
            .flat_map(|&i| ph.iter().map(move |&j| (i, j)))
            .map(|(i, j)| p.weight(i, j))
            .collect();
        let permuted = RbmParams::new(b, c, w)?;
        for beta in [0.0, 0.5, 1.0, 3.0] {
            if partition_function_exact(&p, beta)?.to_bits() != partition_function_exact(&permuted, beta)?.to_bits() {
                relabel_bad += 1;
            }
        }
        let q = dyadic_params(rng, 3, 4)?;
        let swapped = q.swapped();
        for code in 0..128u64 {
            let cfg = BinaryConfig::from_code(code, 3, 4);
            let mirror = BinaryConfig::new(cfg.hidden.clone(), cfg.visible.clone());
            if energy(&cfg, &q)?.to_bits() != energy(&mirror, &swapped)?.to_bits() {
                swap_bad += 1;
            }
        }
    }

    let p = random_params(rng, 4, 3)?;
    let stream_seed = rng.random::<u64>();
    let temper = |seed| -> scatternet::Result<_> {
        let init = ChainState::new(BinaryConfig::zeros(4, 3), seed, 3, 1.0)?;
        temper_sample(&p, &Schedule::new(vec![1.0, 0.4, 1.0], 7, 5), init)
    };
    let anneal = |seed| -> scatternet::Result<_> {
        let init = ChainState::new(BinaryConfig::zeros(4, 3), seed, 0, 1.0)?;
        anneal_sample(&p, &Schedule::new(vec![0.2, 0.6, 1.0], 9, 3), init)
    };
    let gibbs = |seed| -> scatternet::Result<_> {
        let mut s = ChainState::new(BinaryConfig::zeros(4, 3), seed, 1, 1.0)?;
        let mut trace = Vec::new();
        for _ in 0..100 {
            s = gibbs_step(s, &p)?;
            trace.push(s.config.code());
        }
        Ok(trace)
    };
    let determinism_bad = [
        temper(stream_seed)? != temper(stream_seed)?,
        anneal(stream_seed)? != anneal(stream_seed)?,
        gibbs(stream_seed)? != gibbs(stream_seed)?,
    ]
    .iter()
    .filter(|&&d| d)
    .count();

    let q = random_params(rng, 3, 2)?;
    let mut uniform_bad = 0;
    for code in 0..32 {
        if boltzmann_prob(&BinaryConfig::from_code(code, 3, 2), &q, 0.0)? != 1.0 / 32.0 {
            uniform_bad += 1;
        }
    }

    Ok(vec![
        Check::below("energymodel.detailed_balance", balance, 1e-10),
        Check::exact("energymodel.partition_relabel", relabel_bad),
        Check::exact("energymodel.energy_swap", swap_bad),
        Check::exact("energymodel.sampler_determinism", determinism_bad),
        Check::exact("energymodel.beta_zero_uniform", uniform_bad),
    ])
}

/// Number of Gibbs sweeps in the long-run distribution check.
pub const GIBBS_SWEEPS: usize = 1_000_000;

fn gibbs_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let p = random_params(rng, 3, 2)?;
    let exact = joint_distribution(&p, 1.0)?;
    let mut state = ChainState::new(BinaryConfig::zeros(3, 2), rng.random(), 0, 1.0)?;
    let mut counts = vec![0u64; exact.len()];
    for _ in 0..GIBBS_SWEEPS {
        state = gibbs_step(state, &p)?;
        counts[state.config.code() as usize] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&exact)
            .map(|(&c, &q)| (c as f64 / GIBBS_SWEEPS as f64 - q).abs())
            .sum::<f64>();
    Ok(vec![Check::below("energymodel.gibbs_tv", tv, 0.02)])
}

/// The ill-conditioned bowl `f = (x^2 + 100 y^2) / 2`.
pub fn bowl(theta: &[f64]) -> (f64, Vec<f64>) {
    (0.5 * (theta[0] * theta[0] + 100.0 * theta[1] * theta[1]), vec![theta[0], 100.0 * theta[1]])
}

/// Starting point for the bowl benchmark.
pub const BOWL_START: [f64; 2] = [10.0, 1.0];

/// Log-spaced learning rates from 1e-4 to just past the stability limit of
/// plain descent (`2/100`).
pub fn lr_grid() -> Vec<f64> {
    (0..60).map(|i| 1e-4 * 10f64.powf(i as f64 * 2.7 / 59.0)).collect()
}

fn iterations_to_target(opt: Optimizer) -> scatternet::Result<Option<usize>> {
    let stop = Convergence {
        grad_tol: 0.0,
        max_iters: 20_000,
    };
    let out = minimize(opt, BOWL_START.to_vec(), bowl, stop, Some(1e-6))?;
    Ok(out.converged.then_some(out.iterations))
}

/// Fewest iterations to reach `f < 1e-6` over the learning-rate grid, for
/// plain descent and for momentum with `alpha`.
pub fn best_iterations(alpha: f64) -> scatternet::Result<(Option<usize>, Option<usize>)> {
    let mut gd = None::<usize>;
    let mut mom = None::<usize>;
    for lr in lr_grid() {
        if let Some(n) = iterations_to_target(Optimizer::Sgd { lr })? {
            gd = Some(gd.map_or(n, |m| m.min(n)));
        }
        if let Some(n) = iterations_to_target(Optimizer::Momentum(MomentumState::new(2, alpha, lr)?))? {
            mom = Some(mom.map_or(n, |m| m.min(n)));
        }
    }
    Ok((gd, mom))
}

fn optim_checks(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let (mut block_bad, mut gd_bad) = (0, 0);
    for _ in 0..50 {
        let (n1, n2) = (rng.random_range(1..6), rng.random_range(1..6));
        let alpha = rng.random_range(0.0..0.99);
        let lr = rng.random_range(1e-3..1.0);
        let mut whole = MomentumState::new(n1 + n2, alpha, lr)?;
        let mut first = MomentumState::new(n1, alpha, lr)?;
        let mut second = MomentumState::new(n2, alpha, lr)?;
        let mut p: Vec<f64> = (0..n1 + n2).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (mut p1, mut p2) = (p[..n1].to_vec(), p[n1..].to_vec());
        let mut plain = p.clone();
        let mut zero = MomentumState::new(n1 + n2, 0.0, lr)?;
        let mut with_zero = p.clone();
        for _ in 0..5 {
            let g: Vec<f64> = (0..n1 + n2).map(|_| rng.random_range(-5.0..5.0)).collect();
            momentum_step(&mut whole, &mut p, &g)?;
            momentum_step(&mut first, &mut p1, &g[..n1])?;
            momentum_step(&mut second, &mut p2, &g[n1..])?;
            gd_step(&mut plain, &g, lr)?;
            momentum_step(&mut zero, &mut with_zero, &g)?;
        }
        let joined: Vec<f64> = p1.iter().chain(&p2).copied().collect();
        block_bad += p.iter().zip(&joined).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        gd_bad += plain.iter().zip(&with_zero).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }

    // bounded iterates wherever plain descent is stable: f never exceeds
    // a fixed multiple of its starting value
    let mut worst_growth = 0.0_f64;
    for lr in lr_grid().into_iter().filter(|&lr| lr < 2.0 / 100.0) {
        for alpha in [0.0, 0.3, 0.6, 0.9] {
            let stop = Convergence {
                grad_tol: 0.0,
                max_iters: 3000,
            };
            let out = minimize(
                Optimizer::Momentum(MomentumState::new(2, alpha, lr)?),
                BOWL_START.to_vec(),
                bowl,
                stop,
                None,
            )?;
            let f0 = out.trace[0];
            let growth = out.trace.iter().fold(0.0_f64, |m, &f| if f.is_finite() { m.max(f / f0) } else { f64::INFINITY });
            worst_growth = worst_growth.max(growth);
        }
    }

    let (gd, mom) = best_iterations(0.9)?;
    let speed = match (gd, mom) {
        (Some(g), Some(m)) => Check::below("optim.momentum_vs_gd", m as f64, g as f64),
        _ => Check::errored("optim.momentum_vs_gd", &"no learning rate reached the target"),
    };

    // zero gradient: v_t = alpha^t v_0, with dyadic alpha so alpha^t is exact
    let mut decay_bad = 0;
    for alpha in [0.5, 0.25, 0.125] {
        let v0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut state = MomentumState::with_velocity(v0.clone(), alpha, 0.1)?;
        let mut p = vec![0.0; 4];
        for t in 1..=20 {
            state.step(&mut p, &[0.0; 4])?;
            let scale = alpha.powi(t);
            decay_bad += state
                .velocity()
                .iter()
                .zip(&v0)
                .filter(|(v, v0)| v.to_bits() != (*v0 * scale).to_bits())
                .count();
        }
    }

    Ok(vec![
        Check::exact("optim.blockwise_linearity", block_bad),
        Check::exact("optim.alpha_zero_is_gd", gd_bad),
        Check::below("optim.momentum_bounded", worst_growth, 1e3),
        speed,
        Check::exact("optim.velocity_decay", decay_bad),
    ])
}
