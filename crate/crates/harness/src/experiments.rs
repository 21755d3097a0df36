//! The runnable experiments. Each writes its artifacts under
//! `<out_root>/<id>/` and returns its checks; none reads the clock or any
//! unseeded randomness, so artifacts are byte-identical across runs.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use scatternet::energymodel::{cd_train, CdConfig, FitMetric, RbmParams};
use scatternet::format::{write_csv, write_pgm16};
use scatternet::neuralnet::{accuracy, train, FeatureTensor, Layer, Network, NetworkBuilder, TrainConfig};
use scatternet::optim::Optimizer;
use scatternet::scattering::{
    box_conv_sine, double_slit_intensity, envelope_intensity, scatter_kernel, ScatterPotential, SlitAperture,
};
use scatternet::wavefield::{Grid1D, Grid3D};
use scatternet::Complex64;

use crate::config::{ensure_dir, ExperimentConfig, ExperimentId};
use crate::gratings::{gen_gratings, GratingDataset, LabeledImages};
use crate::{Check, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub id: ExperimentId,
    pub checks: Vec<Check>,
    pub artifacts: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs any experiment except `verify`, which has its own entry point.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    match cfg.id {
        ExperimentId::Envelope => run_envelope(cfg),
        ExperimentId::Fringes => run_fringes(cfg),
        ExperimentId::KernelCompare => run_kernel_compare(cfg),
        ExperimentId::TrainCnn => run_train_cnn(cfg),
        ExperimentId::TrainRbm => run_train_rbm(cfg),
        ExperimentId::Verify => {
            let report = crate::verify::run_verify_all(cfg.seed, &cfg.out_root)?;
            Ok(ExperimentOutcome {
                id: ExperimentId::Verify,
                checks: report.checks,
                artifacts: vec![report.path],
            })
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.artifact_dir();
        ensure_dir(&dir)?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(HarnessError::io(&path))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(HarnessError::io(&path))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }
}

/// Composite Simpson rule for a complex integrand on `[a, b]`.
pub fn simpson(f: impl Fn(f64) -> Complex64, a: f64, b: f64, panels: usize) -> Complex64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Grid of `(k, r, x)` triples used for the envelope comparison: 4 x 5 x 5.
pub fn envelope_grid() -> Vec<(f64, f64, f64)> {
    let ks = [0.5, 1.0, 2.0, 3.7];
    let krs = [0.3 * PI, PI, 1.7 * PI, 3.0 * PI, 4.0 * PI];
    let xs = [-2.3, -0.7, 0.0, 1.1, 3.9];
    let mut out = Vec::with_capacity(100);
    for &k in &ks {
        for &kr in &krs {
            for &x in &xs {
                out.push((k, kr / k, x));
            }
        }
    }
    out
}

/// Closed-form box-kernel response against quadrature, plus the location of
/// the envelope zeros and maxima.
///
/// Errors are relative to the envelope amplitude `2/k`: the response itself
/// passes through zero, where a pointwise relative error is meaningless.
pub fn run_envelope(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let panels = cfg.get_usize("panels");
    let points = cfg.get_usize("points");
    let mut art = Artifacts::new(cfg)?;

    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, r, x) in envelope_grid() {
        let closed = box_conv_sine(k, r, x);
        let quad = simpson(|a| Complex64::new((k * (x + a)).sin(), 0.0), 0.0, r, panels).re;
        let rel = (closed - quad).abs() / (2.0 / k);
        worst = worst.max(rel);
        rows.push(vec![k, r, x, closed, quad, rel]);
    }
    art.write("envelope_grid.csv", |w| {
        write_csv(w, &["k", "r", "x", "closed_form", "quadrature", "rel_error"], rows)
    })?;

    // sweep kr over (0, 4pi] at k = 1
    let k = 1.0;
    let peak = envelope_intensity(k, PI / k);
    let step = 4.0 * PI / points as f64;
    let krs: Vec<f64> = (1..=points).map(|i| i as f64 * step).collect();
    let sweep: Vec<f64> = krs.iter().map(|&kr| envelope_intensity(k, kr / k) / peak).collect();
    let quad_sweep: Vec<f64> = krs
        .iter()
        .map(|&kr| simpson(|a| Complex64::from_polar(1.0, k * a), 0.0, kr / k, panels).norm_sqr() / peak)
        .collect();
    art.write("envelope_sweep.csv", |w| {
        write_csv(
            w,
            &["kr", "intensity", "intensity_quadrature"],
            (0..points).map(|i| vec![krs[i], sweep[i], quad_sweep[i]]),
        )
    })?;

    let mut checks = vec![Check::below("envelope.closed_vs_quadrature", worst, 1e-8)];
    for n in [1, 2] {
        let kr = 2.0 * n as f64 * PI;
        checks.push(Check::below(
            format!("envelope.zero_at_{}pi", 2 * n),
            envelope_intensity(k, kr / k) / peak,
            1e-12,
        ));
    }
    // local maxima of the sampled sweep must sit within one sample of odd n pi
    let maxima: Vec<f64> = (1..points - 1)
        .filter(|&i| sweep[i] >= sweep[i - 1] && sweep[i] > sweep[i + 1])
        .map(|i| krs[i])
        .collect();
    for n in [1, 3] {
        let target = n as f64 * PI;
        let dev = maxima
            .iter()
            .map(|m| (m - target).abs() / step)
            .fold(f64::INFINITY, f64::min);
        checks.push(Check::at_most(format!("envelope.max_at_{n}pi"), dev, 1.0));
    }
    Ok(ExperimentOutcome {
        id: cfg.id,
        checks,
        artifacts: art.written,
    })
}

/// Fractional screen index of the predicted maximum `sin(theta) = s`.
fn predicted_index(screen: &Grid1D, distance: f64, s: f64) -> f64 {
    let x = distance * s / (1.0 - s * s).sqrt();
    (x - screen.origin()[0]) / screen.spacing()[0]
}

/// Sub-sample position of the largest sample within `reach` of `near`,
/// refined by the parabola through it and its two neighbours.
fn refined_peak(values: &[f64], near: f64, reach: usize) -> Option<f64> {
    let c = near.round() as usize;
    let lo = c.saturating_sub(reach).max(1);
    let hi = (c + reach).min(values.len().checked_sub(2)?);
    let best = (lo..=hi).max_by(|&a, &b| values[a].total_cmp(&values[b]))?;
    let (a, b, c) = (values[best - 1], values[best], values[best + 1]);
    let curvature = a - 2.0 * b + c;
    let offset = if curvature < 0.0 { 0.5 * (a - c) / curvature } else { 0.0 };
    Some(best as f64 + offset)
}

/// Worst distance, in samples, between the refined maxima of `values` and
/// the predicted orders `-2..=2`.
fn worst_order_deviation(values: &[f64], screen: &Grid1D, distance: f64, d: f64, wavelength: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for n in -2i32..=2 {
        let want = predicted_index(screen, distance, n as f64 * wavelength / d);
        // a fringe spans many samples; search a quarter period either side
        let period = distance * wavelength / d / screen.spacing()[0];
        let dev = refined_peak(values, want, (period / 4.0) as usize)
            .map(|got| (got - want).abs())
            .unwrap_or(f64::INFINITY);
        worst = worst.max(dev);
    }
    worst
}

/// Double-slit profile with maxima compared against `sin(theta) = n lambda / d`.
///
/// On a flat screen the intensity also falls off as `1/r^2` and is shaped by
/// the single-slit envelope; both pull the intensity maxima towards the axis
/// by a fraction of a fringe that grows with the order. The defaults (narrow
/// slits, a wide screen) keep that shift below one sample. The interference
/// factor (double over single slit intensity) carries no envelope and is
/// checked as well.
pub fn run_fringes(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let wavelength = 1.0;
    let k = 2.0 * PI / wavelength;
    let samples = cfg.get_usize("samples");
    let d = cfg.get("separation") * wavelength;
    let width = cfg.get("width") * wavelength;
    let distance = cfg.get("distance") * wavelength;
    let half = cfg.get("half_width") * wavelength;
    let spacing = 2.0 * half / (samples - 1) as f64;
    let screen = Grid1D::line(samples, spacing, -half)?;
    let profile = double_slit_intensity(&SlitAperture::new(2, width, d, distance)?, k, &screen)?;
    let single = double_slit_intensity(&SlitAperture::single(width, distance)?, k, &screen)?;
    let factor: Vec<f64> = profile
        .intensity
        .iter()
        .zip(&single.intensity)
        .map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 })
        .collect();

    let mut art = Artifacts::new(cfg)?;
    art.write("fringes.csv", |w| {
        write_csv(
            w,
            &["x", "sin_theta", "intensity", "single_slit"],
            (0..samples).map(|i| vec![profile.positions[i], profile.sin_theta[i], profile.intensity[i], single.intensity[i]]),
        )
    })?;
    let rows = 64;
    let image: Vec<f64> = (0..rows).flat_map(|_| profile.intensity.iter().copied()).collect();
    art.write("fringes.pgm", |w| write_pgm16(w, samples, rows, &image))?;

    let n = samples;
    let asym = (0..n)
        .map(|i| (profile.intensity[i] - profile.intensity[n - 1 - i]).abs())
        .fold(0.0, f64::max);
    Ok(ExperimentOutcome {
        id: cfg.id,
        checks: vec![
            Check::at_most(
                "fringes.max_position_samples",
                worst_order_deviation(&profile.intensity, &screen, distance, d, wavelength),
                1.0,
            ),
            Check::at_most(
                "fringes.interference_factor_samples",
                worst_order_deviation(&factor, &screen, distance, d, wavelength),
                1.0,
            ),
            Check::below("fringes.symmetry", asym, 1e-10),
        ],
        artifacts: art.written,
    })
}

/// Architecture used by the CNN experiments: conv(5x5) -> relu -> maxpool
/// 2x2/2 -> dense -> softmax, initialised from `seed`.
pub fn default_cnn(size: usize, filters: usize, classes: usize, seed: u64) -> Result<Network> {
    Ok(NetworkBuilder::new(1, size, size)
        .conv(filters, 5, 1)
        .relu()
        .max_pool(2, 2)
        .dense(classes)
        .build(seed)?)
}

/// Seed for the held-out set, kept well away from the training seed.
fn test_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn grating_sets(cfg: &ExperimentConfig, train_per_class: usize, test_per_class: Option<usize>) -> Result<(LabeledImages, Option<LabeledImages>)> {
    let make = |n| GratingDataset::four_orientations(cfg.get_usize("size"), cfg.get("wavelength"), n, cfg.get("noise"));
    let train_set = gen_gratings(&make(train_per_class), cfg.seed)?;
    let test_set = test_per_class.map(|n| gen_gratings(&make(n), test_seed(cfg.seed))).transpose()?;
    Ok((train_set, test_set))
}

/// First conv layer kernels tiled left to right with a one-pixel gap,
/// shifted so the smallest weight maps to black.
fn first_layer_image(net: &Network) -> Option<(usize, usize, Vec<f64>)> {
    let Some(Layer::Conv(conv)) = net.layers().first() else {
        return None;
    };
    let (kh, kw, n) = (conv.kh, conv.kw, conv.out_ch * conv.in_ch);
    let width = n * (kw + 1) - 1;
    let min = conv.kernels.iter().copied().fold(f64::INFINITY, f64::min);
    let mut img = vec![0.0; width * kh];
    for f in 0..n {
        for y in 0..kh {
            for x in 0..kw {
                img[y * width + f * (kw + 1) + x] = conv.kernels[(f * kh + y) * kw + x] - min;
            }
        }
    }
    Some((width, kh, img))
}

/// Scatter kernel of an elongated potential next to trained first-layer
/// CNN kernels. Produces images only; there is no pass/fail criterion.
pub fn run_kernel_compare(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let n = cfg.get_usize("grid");
    let k = cfg.get("k");
    let grid = Grid3D::unit([n, n, n])?;
    // stretched along y, like a stripe detector
    let potential = ScatterPotential::centered_fn(grid, |p| (-(p[0] * p[0] / 1.5 + p[1] * p[1] / 12.0 + p[2] * p[2] / 3.0)).exp())?;
    let window = 5;
    let kernel = scatter_kernel(&potential, k, window)?;

    let (train_set, _) = grating_sets(cfg, cfg.get_usize("train_per_class"), None)?;
    let mut net = default_cnn(cfg.get_usize("size"), cfg.get_usize("filters"), 4, cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.get_usize("epochs"),
        seed: cfg.seed,
        ..cnn_train_defaults()
    };
    train(&mut net, &train_set.images, &train_set.labels, &tcfg, None)?;

    let mut art = Artifacts::new(cfg)?;
    art.write("kernel_scatter.csv", |w| write_csv(w, &["dx", "dy", "re", "im"], kernel.csv_rows()))?;
    art.write("kernel_scatter.pgm", |w| write_pgm16(w, window, window, &kernel.modulus()))?;
    if let Some((w, h, img)) = first_layer_image(&net) {
        art.write("kernel_cnn.pgm", |out| write_pgm16(out, w, h, &img))?;
    }
    Ok(ExperimentOutcome {
        id: cfg.id,
        checks: Vec::new(),
        artifacts: art.written,
    })
}

fn cnn_train_defaults() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 16,
        lr: 0.02,
        momentum: 0.9,
        seed: 0,
    }
}

/// End-to-end supervised training on gratings from random initialisation.
///
/// There is deliberately no pre-training stage anywhere in this path.
pub fn run_train_cnn(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let (train_set, test_set) = grating_sets(cfg, cfg.get_usize("train_per_class"), Some(cfg.get_usize("test_per_class")))?;
    let test_set = test_set.expect("requested");
    let mut net = default_cnn(cfg.get_usize("size"), cfg.get_usize("filters"), 4, cfg.seed)?;
    let tcfg = TrainConfig {
        epochs: cfg.get_usize("epochs"),
        batch_size: cfg.get_usize("batch"),
        lr: cfg.get("lr"),
        momentum: cfg.get("momentum"),
        seed: cfg.seed,
    };
    let history = train(
        &mut net,
        &train_set.images,
        &train_set.labels,
        &tcfg,
        Some((&test_set.images, &test_set.labels)),
    )?;

    let mut art = Artifacts::new(cfg)?;
    art.write("cnn_metrics.csv", |w| {
        write_csv(
            w,
            &["epoch", "loss", "accuracy"],
            history.iter().map(|m| vec![m.epoch as f64, m.loss, m.accuracy]),
        )
    })?;
    let checkpoint = net.to_checkpoint();
    art.write("cnn_checkpoint.txt", |w| w.write_all(checkpoint.as_bytes()))?;

    let final_acc = history.last().map(|m| m.accuracy).unwrap_or(0.0);
    let reloaded = Network::from_checkpoint(&checkpoint)?;
    let mismatches = count_prediction_mismatches(&net, &reloaded, &test_set.images)?;
    let reloaded_acc = accuracy(&reloaded, &test_set.images, &test_set.labels)?;
    log::info!("test accuracy {final_acc}, reloaded {reloaded_acc}");
    Ok(ExperimentOutcome {
        id: cfg.id,
        checks: vec![
            Check::at_least("train_cnn.test_accuracy", final_acc, 0.95),
            Check::exact("train_cnn.checkpoint_roundtrip", mismatches),
        ],
        artifacts: art.written,
    })
}

fn count_prediction_mismatches(a: &Network, b: &Network, inputs: &[FeatureTensor]) -> Result<usize> {
    let mut n = 0;
    for x in inputs {
        if a.predict(x)? != b.predict(x)? {
            n += 1;
        }
    }
    Ok(n)
}

/// The two-mode target used for RBM training: `1100` and `0011`, equally often.
pub fn two_mode_data(copies: usize) -> Vec<Vec<bool>> {
    let modes = [vec![true, true, false, false], vec![false, false, true, true]];
    (0..2 * copies).map(|i| modes[i % 2].clone()).collect()
}

/// CD training of a 4-visible RBM with the exact KL traced every epoch.
pub fn run_train_rbm(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = two_mode_data(50);
    let params = RbmParams::random(4, cfg.get_usize("hidden"), 0.1, cfg.seed)?;
    let cd = CdConfig {
        k: cfg.get_usize("cd_k"),
        epochs: cfg.get_usize("epochs"),
        batch_size: cfg.get_usize("batch"),
        seed: cfg.seed,
    };
    let report = cd_train(&data, params, &cd, Optimizer::Sgd { lr: cfg.get("lr") })?;

    let mut art = Artifacts::new(cfg)?;
    let label = report.history.first().map(FitMetric::label).unwrap_or("exact_kl");
    art.write("rbm_metrics.csv", |w| {
        write_csv(
            w,
            &["epoch", label],
            report.history.iter().enumerate().map(|(i, m)| vec![(i + 1) as f64, m.value()]),
        )
    })?;
    let checkpoint = report.params.to_checkpoint();
    art.write("rbm_checkpoint.txt", |w| w.write_all(checkpoint.as_bytes()))?;

    let first = report.history.first().map(FitMetric::value).unwrap_or(f64::NAN);
    let last = report.history.last().map(FitMetric::value).unwrap_or(f64::NAN);
    let roundtrip = RbmParams::from_checkpoint(&checkpoint)? == report.params;
    Ok(ExperimentOutcome {
        id: cfg.id,
        checks: vec![
            Check::at_most("train_rbm.kl_ratio", last / first, 0.5),
            Check::below("train_rbm.final_kl", last, 0.05),
            Check::exact("train_rbm.checkpoint_roundtrip", (!roundtrip) as usize),
        ],
        artifacts: art.written,
    })
}

/// Lists every regular file under `dir`, sorted, relative to `dir`.
pub fn list_artifacts(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(HarnessError::io(&d))? {
            let path = entry.map_err(HarnessError::io(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(rel) = path.strip_prefix(dir) {
                out.push(rel.to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}
