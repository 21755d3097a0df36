//! Restricted Boltzmann machine with binary `{0, 1}` units.
//!
//! Energy `E(v, h) = -b.v - c.h - v.W.h` and Boltzmann weights `e^{-beta E}`
//! (all constant prefactors set to 1). Exact statistics are computed by
//! enumeration on small models; sampling uses block Gibbs updates driven by
//! a seeded ChaCha stream per chain.
//!
//! Configurations are encoded as integers: bit `i` is visible unit `i` and
//! bit `n_v + j` is hidden unit `j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::optim::Optimizer;
use crate::sum::pairwise_sum;
use crate::{Error, Result};

/// Largest `n_v + n_h` accepted by the exact enumeration routines.
pub const ENUMERATION_LIMIT: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    n_v: usize,
    n_h: usize,
    /// Visible bias `b`.
    pub visible_bias: Vec<f64>,
    /// Hidden bias `c`.
    pub hidden_bias: Vec<f64>,
    /// Coupling `W`, `n_v x n_h` row-major.
    pub weights: Vec<f64>,
}

impl RbmParams {
    pub fn new(visible_bias: Vec<f64>, hidden_bias: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let (n_v, n_h) = (visible_bias.len(), hidden_bias.len());
        if n_v == 0 || n_h == 0 {
            return Err(Error::shape("an RBM needs at least one visible and one hidden unit"));
        }
        if weights.len() != n_v * n_h {
            return Err(Error::shape(format!(
                "{} couplings for {n_v} visible x {n_h} hidden units",
                weights.len()
            )));
        }
        if let Some(index) = visible_bias
            .iter()
            .chain(&hidden_bias)
            .chain(&weights)
            .position(|v| !v.is_finite())
        {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            n_v,
            n_h,
            visible_bias,
            hidden_bias,
            weights,
        })
    }

    pub fn zeros(n_v: usize, n_h: usize) -> Result<Self> {
        Self::new(vec![0.0; n_v], vec![0.0; n_h], vec![0.0; n_v * n_h])
    }

    /// Couplings uniform in `[-scale, scale]`, zero biases.
    pub fn random(n_v: usize, n_h: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..n_v * n_h).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(vec![0.0; n_v], vec![0.0; n_h], w)
    }

    pub fn n_visible(&self) -> usize {
        self.n_v
    }

    pub fn n_hidden(&self) -> usize {
        self.n_h
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_h + j]
    }

    /// Visible and hidden roles exchanged: `(c, b, W^T)`.
    pub fn swapped(&self) -> Self {
        let mut wt = vec![0.0; self.weights.len()];
        for i in 0..self.n_v {
            for j in 0..self.n_h {
                wt[j * self.n_v + i] = self.weight(i, j);
            }
        }
        Self {
            n_v: self.n_h,
            n_h: self.n_v,
            visible_bias: self.hidden_bias.clone(),
            hidden_bias: self.visible_bias.clone(),
            weights: wt,
        }
    }

    /// Flat `[b, c, W]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.visible_bias.clone();
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(&self.weights);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_v + self.n_h + self.n_v * self.n_h {
            return Err(Error::shape("flat parameter vector has the wrong length"));
        }
        let (b, rest) = flat.split_at(self.n_v);
        let (c, w) = rest.split_at(self.n_h);
        self.visible_bias.copy_from_slice(b);
        self.hidden_bias.copy_from_slice(c);
        self.weights.copy_from_slice(w);
        Ok(())
    }

    pub fn to_checkpoint(&self) -> String {
        use crate::format::{format_checkpoint, Section};
        format_checkpoint(&[
            Section::new("rbm_visible_bias", vec![self.n_v], self.visible_bias.clone()),
            Section::new("rbm_hidden_bias", vec![self.n_h], self.hidden_bias.clone()),
            Section::new("rbm_weights", vec![self.n_v, self.n_h], self.weights.clone()),
        ])
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let sections = crate::format::parse_checkpoint(text)?;
        let kinds: Vec<&str> = sections.iter().map(|s| s.kind.as_str()).collect();
        if kinds != ["rbm_visible_bias", "rbm_hidden_bias", "rbm_weights"] {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected RBM sections, found {kinds:?}"),
            });
        }
        let mut it = sections.into_iter().map(|s| s.values);
        let (b, c, w) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        Self::new(b, c, w)
    }

    fn check_config(&self, cfg: &BinaryConfig) -> Result<()> {
        if cfg.visible.len() != self.n_v || cfg.hidden.len() != self.n_h {
            return Err(Error::shape(format!(
                "configuration has {}+{} units, model has {}+{}",
                cfg.visible.len(),
                cfg.hidden.len(),
                self.n_v,
                self.n_h
            )));
        }
        Ok(())
    }

    fn check_enumerable(&self) -> Result<()> {
        let units = self.n_v + self.n_h;
        if units > ENUMERATION_LIMIT {
            return Err(Error::TooLarge {
                units,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(())
    }

    /// `c_j + sum_i v_i W_ij`.
    fn hidden_field(&self, visible: &[bool], j: usize) -> f64 {
        self.hidden_bias[j]
            + visible
                .iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(|(i, _)| self.weight(i, j))
                .sum::<f64>()
    }

    /// `b_i + sum_j W_ij h_j`.
    fn visible_field(&self, hidden: &[bool], i: usize) -> f64 {
        self.visible_bias[i]
            + hidden
                .iter()
                .enumerate()
                .filter(|(_, &h)| h)
                .map(|(j, _)| self.weight(i, j))
                .sum::<f64>()
    }
}

/// Visible and hidden bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryConfig {
    pub visible: Vec<bool>,
    pub hidden: Vec<bool>,
}

impl BinaryConfig {
    pub fn new(visible: Vec<bool>, hidden: Vec<bool>) -> Self {
        Self { visible, hidden }
    }

    pub fn zeros(n_v: usize, n_h: usize) -> Self {
        Self::new(vec![false; n_v], vec![false; n_h])
    }

    /// Builds from 0/1 integers; anything else is rejected.
    pub fn from_bits(visible: &[u8], hidden: &[u8]) -> Result<Self> {
        let conv = |bits: &[u8]| -> Result<Vec<bool>> {
            bits.iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::param(format!("unit state {other} is not a bit"))),
                })
                .collect()
        };
        Ok(Self::new(conv(visible)?, conv(hidden)?))
    }

    pub fn from_code(code: u64, n_v: usize, n_h: usize) -> Self {
        let bit = |k: usize| code >> k & 1 == 1;
        Self::new((0..n_v).map(bit).collect(), (n_v..n_v + n_h).map(bit).collect())
    }

    pub fn code(&self) -> u64 {
        self.visible
            .iter()
            .chain(&self.hidden)
            .enumerate()
            .fold(0, |acc, (k, &b)| acc | (b as u64) << k)
    }

    pub fn visible_code(&self) -> u64 {
        bits_to_code(&self.visible)
    }

    /// Visible bits then hidden bits as `0`/`1` text.
    pub fn to_bit_row(&self) -> String {
        let bits: Vec<&str> = self
            .visible
            .iter()
            .chain(&self.hidden)
            .map(|&b| if b { "1" } else { "0" })
            .collect();
        bits.join(",")
    }
}

pub fn bits_to_code(bits: &[bool]) -> u64 {
    bits.iter().enumerate().fold(0, |acc, (k, &b)| acc | (b as u64) << k)
}

pub fn code_to_bits(code: u64, n: usize) -> Vec<bool> {
    (0..n).map(|k| code >> k & 1 == 1).collect()
}

/// `E = -b.v - c.h - v.W.h`.
pub fn energy(cfg: &BinaryConfig, p: &RbmParams) -> Result<f64> {
    p.check_config(cfg)?;
    Ok(energy_unchecked(&cfg.visible, &cfg.hidden, p))
}

fn energy_unchecked(v: &[bool], h: &[bool], p: &RbmParams) -> f64 {
    let bv: f64 = v.iter().zip(&p.visible_bias).filter(|(&on, _)| on).map(|(_, b)| b).sum();
    let ch: f64 = h.iter().zip(&p.hidden_bias).filter(|(&on, _)| on).map(|(_, c)| c).sum();
    let mut vwh = 0.0;
    for (i, _) in v.iter().enumerate().filter(|(_, &on)| on) {
        for (j, _) in h.iter().enumerate().filter(|(_, &on)| on) {
            vwh += p.weight(i, j);
        }
    }
    -bv - ch - vwh
}

/// Energies of every configuration, indexed by code.
fn all_energies(p: &RbmParams) -> Vec<f64> {
    let (n_v, n_h) = (p.n_v, p.n_h);
    (0..1u64 << (n_v + n_h))
        .map(|code| {
            let v = code_to_bits(code, n_v);
            let h = code_to_bits(code >> n_v, n_h);
            energy_unchecked(&v, &h, p)
        })
        .collect()
}

/// `Z = sum_x e^{-beta E(x)}` by full enumeration.
///
/// Weights are summed in ascending order, so relabelling units leaves `Z`
/// unchanged whenever the energies themselves are exact.
pub fn partition_function_exact(p: &RbmParams, beta: f64) -> Result<f64> {
    p.check_enumerable()?;
    check_beta(beta, true)?;
    let mut weights: Vec<f64> = all_energies(p).into_iter().map(|e| (-beta * e).exp()).collect();
    weights.sort_by(f64::total_cmp);
    Ok(pairwise_sum(&weights))
}

fn check_beta(beta: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { beta >= 0.0 } else { beta > 0.0 };
    if !ok || beta.is_nan() {
        return Err(Error::param(format!("inverse temperature {beta} is out of range")));
    }
    Ok(())
}

/// Normalised Boltzmann probabilities of every configuration, indexed by
/// code. Energies are shifted by their minimum before exponentiation.
pub fn joint_distribution(p: &RbmParams, beta: f64) -> Result<Vec<f64>> {
    p.check_enumerable()?;
    check_beta(beta, true)?;
    let energies = all_energies(p);
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = energies.iter().map(|e| (-beta * (e - e_min)).exp()).collect();
    let mut sorted = weights.clone();
    sorted.sort_by(f64::total_cmp);
    let z = pairwise_sum(&sorted);
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// `e^{-beta E(cfg)} / Z`.
pub fn boltzmann_prob(cfg: &BinaryConfig, p: &RbmParams, beta: f64) -> Result<f64> {
    p.check_config(cfg)?;
    Ok(joint_distribution(p, beta)?[cfg.code() as usize])
}

/// Exact marginal over visible codes, summing the hidden units analytically:
/// `P(v) ∝ e^{beta b.v} prod_j (1 + e^{beta (c_j + v.W_j)})`.
pub fn visible_marginal(p: &RbmParams, beta: f64) -> Result<Vec<f64>> {
    if p.n_v > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            units: p.n_v,
            limit: ENUMERATION_LIMIT,
        });
    }
    check_beta(beta, true)?;
    // negative free energies, then a stable softmax
    let neg_free: Vec<f64> = (0..1u64 << p.n_v)
        .map(|code| {
            let v = code_to_bits(code, p.n_v);
            let bv: f64 = v.iter().zip(&p.visible_bias).filter(|(&on, _)| on).map(|(_, b)| b).sum();
            beta * bv
                + (0..p.n_h)
                    .map(|j| softplus(beta * p.hidden_field(&v, j)))
                    .sum::<f64>()
        })
        .collect();
    let max = neg_free.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = neg_free.iter().map(|f| (f - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean and variance of the energy under the Boltzmann distribution.
pub fn energy_moments(p: &RbmParams, beta: f64) -> Result<(f64, f64)> {
    let probs = joint_distribution(p, beta)?;
    let energies = all_energies(p);
    let mean: f64 = probs.iter().zip(&energies).map(|(q, e)| q * e).sum();
    let var: f64 = probs.iter().zip(&energies).map(|(q, e)| q * (e - mean) * (e - mean)).sum();
    Ok((mean, var))
}

/// `sigmoid(beta a)`, with the zero-temperature limit handled explicitly.
fn unit_on_probability(beta: f64, field: f64) -> f64 {
    if beta.is_infinite() {
        return match field.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    1.0 / (1.0 + (-beta * field).exp())
}

/// `P(h_j = 1 | v)` for every hidden unit.
pub fn hidden_probabilities(p: &RbmParams, visible: &[bool], beta: f64) -> Vec<f64> {
    (0..p.n_h).map(|j| unit_on_probability(beta, p.hidden_field(visible, j))).collect()
}

/// `P(v_i = 1 | h)` for every visible unit.
pub fn visible_probabilities(p: &RbmParams, hidden: &[bool], beta: f64) -> Vec<f64> {
    (0..p.n_v).map(|i| unit_on_probability(beta, p.visible_field(hidden, i))).collect()
}

fn conditional_prob(probs: &[f64], bits: &[bool]) -> f64 {
    probs.iter().zip(bits).map(|(&q, &b)| if b { q } else { 1.0 - q }).product()
}

/// Transition matrix of one block-Gibbs sweep seen on the visible units:
/// `T(v, v') = sum_h P(h | v) P(v' | h)`.
///
/// The joint `(v, h)` sweep is not reversible, but this marginal chain is,
/// with respect to the exact visible marginal.
pub fn visible_sweep_kernel(p: &RbmParams, beta: f64) -> Result<Vec<Vec<f64>>> {
    p.check_enumerable()?;
    check_beta(beta, true)?;
    let (nv, nh) = (1u64 << p.n_v, 1u64 << p.n_h);
    let hidden_cfgs: Vec<Vec<bool>> = (0..nh).map(|c| code_to_bits(c, p.n_h)).collect();
    let visible_cfgs: Vec<Vec<bool>> = (0..nv).map(|c| code_to_bits(c, p.n_v)).collect();
    let v_given_h: Vec<Vec<f64>> = hidden_cfgs
        .iter()
        .map(|h| {
            let q = visible_probabilities(p, h, beta);
            visible_cfgs.iter().map(|v| conditional_prob(&q, v)).collect()
        })
        .collect();
    Ok(visible_cfgs
        .iter()
        .map(|v| {
            let q = hidden_probabilities(p, v, beta);
            let ph: Vec<f64> = hidden_cfgs.iter().map(|h| conditional_prob(&q, h)).collect();
            (0..nv as usize)
                .map(|vp| ph.iter().zip(&v_given_h).map(|(a, row)| a * row[vp]).sum())
                .collect()
        })
        .collect())
}

/// One Markov chain: configuration, step count, RNG stream and `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub config: BinaryConfig,
    pub steps: u64,
    pub beta: f64,
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    /// Chain `stream` of the generator seeded with `seed`.
    pub fn new(config: BinaryConfig, seed: u64, stream: u64, beta: f64) -> Result<Self> {
        check_beta(beta, false)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            config,
            steps: 0,
            beta,
            seed,
            stream,
            rng,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position in the RNG stream, in 32-bit words.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn energy(&self, p: &RbmParams) -> Result<f64> {
        energy(&self.config, p)
    }
}

fn sample_bits(rng: &mut ChaCha8Rng, probs: &[f64], out: &mut [bool]) {
    for (bit, &q) in out.iter_mut().zip(probs) {
        *bit = rng.random::<f64>() < q;
    }
}

/// One block-Gibbs sweep at the chain's `beta`: `h ~ P(h | v)`, then
/// `v ~ P(v | h)`.
pub fn gibbs_step(mut state: ChainState, p: &RbmParams) -> Result<ChainState> {
    p.check_config(&state.config)?;
    let ph = hidden_probabilities(p, &state.config.visible, state.beta);
    sample_bits(&mut state.rng, &ph, &mut state.config.hidden);
    let pv = visible_probabilities(p, &state.config.hidden, state.beta);
    sample_bits(&mut state.rng, &pv, &mut state.config.visible);
    state.steps += 1;
    Ok(state)
}

/// Per-epoch quality of an RBM fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMetric {
    /// `KL(data || model)` over visible states, in nats.
    ExactKl(f64),
    /// Mean squared one-step reconstruction error; a proxy used when the
    /// visible layer is too large to enumerate.
    ReconstructionError(f64),
}

impl FitMetric {
    pub fn value(&self) -> f64 {
        match *self {
            FitMetric::ExactKl(v) | FitMetric::ReconstructionError(v) => v,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FitMetric::ExactKl(_) => "exact_kl",
            FitMetric::ReconstructionError(_) => "reconstruction_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdConfig {
    /// Gibbs steps in the negative phase.
    pub k: usize,
    pub epochs: usize,
    /// Examples per update; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            k: 1,
            epochs: 1000,
            batch_size: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdReport {
    pub params: RbmParams,
    /// One entry per epoch, measured after that epoch's updates.
    pub history: Vec<FitMetric>,
}

/// Exact `KL(data || model)` on visible states.
pub fn data_kl(data: &[Vec<bool>], p: &RbmParams) -> Result<f64> {
    let model = visible_marginal(p, 1.0)?;
    let mut counts = vec![0usize; model.len()];
    for v in data {
        counts[bits_to_code(v) as usize] += 1;
    }
    let n = data.len() as f64;
    Ok(counts
        .iter()
        .zip(&model)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &q)| {
            let pd = c as f64 / n;
            pd * (pd / q).ln()
        })
        .sum())
}

fn reconstruction_error(data: &[Vec<bool>], p: &RbmParams) -> f64 {
    let mut total = 0.0;
    for v in data {
        let ph = hidden_probabilities(p, v, 1.0);
        let recon: Vec<f64> = (0..p.n_v)
            .map(|i| unit_on_probability(1.0, p.visible_bias[i] + (0..p.n_h).map(|j| p.weight(i, j) * ph[j]).sum::<f64>()))
            .collect();
        total += v
            .iter()
            .zip(&recon)
            .map(|(&b, r)| (b as u8 as f64 - r).powi(2))
            .sum::<f64>();
    }
    total / (data.len() * p.n_v) as f64
}

/// Contrastive divergence training at unit temperature.
///
/// The positive phase uses hidden probabilities given the data; the negative
/// phase runs `k` block-Gibbs sweeps from each example and uses the final
/// visible sample with its hidden probabilities. The optimizer minimises the
/// negative log-likelihood, so it receives the negated CD gradient.
pub fn cd_train(data: &[Vec<bool>], params: RbmParams, cfg: &CdConfig, mut optimizer: Optimizer) -> Result<CdReport> {
    if data.is_empty() {
        return Err(Error::param("training data is empty"));
    }
    if let Some(v) = data.iter().find(|v| v.len() != params.n_v) {
        return Err(Error::shape(format!(
            "data vector of length {} for {} visible units",
            v.len(),
            params.n_v
        )));
    }
    if cfg.k == 0 {
        return Err(Error::param("CD needs at least one Gibbs step"));
    }
    let exact = params.n_v <= ENUMERATION_LIMIT;
    let (n_v, n_h) = (params.n_v, params.n_h);
    let mut p = params;
    let mut flat = p.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut hidden = vec![false; n_h];
    let mut visible = vec![false; n_v];

    for _ in 0..cfg.epochs {
        for chunk in data.chunks(batch) {
            let mut grad = vec![0.0; flat.len()];
            let (gb, rest) = grad.split_at_mut(n_v);
            let (gc, gw) = rest.split_at_mut(n_h);
            for v0 in chunk {
                let ph0 = hidden_probabilities(&p, v0, 1.0);
                sample_bits(&mut rng, &ph0, &mut hidden);
                let mut phk = ph0.clone();
                for step in 0..cfg.k {
                    let pv = visible_probabilities(&p, &hidden, 1.0);
                    sample_bits(&mut rng, &pv, &mut visible);
                    phk = hidden_probabilities(&p, &visible, 1.0);
                    if step + 1 < cfg.k {
                        sample_bits(&mut rng, &phk, &mut hidden);
                    }
                }
                // descent direction: model statistics minus data statistics
                for i in 0..n_v {
                    let (d, m) = (v0[i] as u8 as f64, visible[i] as u8 as f64);
                    gb[i] += m - d;
                    for j in 0..n_h {
                        gw[i * n_h + j] += m * phk[j] - d * ph0[j];
                    }
                }
                for j in 0..n_h {
                    gc[j] += phk[j] - ph0[j];
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            optimizer.step(&mut flat, &grad)?;
            p.set_flat(&flat)?;
        }
        history.push(if exact {
            FitMetric::ExactKl(data_kl(data, &p)?)
        } else {
            FitMetric::ReconstructionError(reconstruction_error(data, &p))
        });
    }
    Ok(CdReport { params: p, history })
}

/// Row-stochastic matrix over states `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    rows: Vec<Vec<f64>>,
}

impl TransitionKernel {
    pub const ROW_SUM_TOL: f64 = 1e-12;

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::param("transition matrix is empty"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::shape(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
                return Err(Error::param(format!("row {i} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > Self::ROW_SUM_TOL {
                return Err(Error::param(format!("row {i} sums to {total}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn states(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn sample_next(&self, from: usize, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let row = &self.rows[from];
        let mut acc = 0.0;
        for (to, &t) in row.iter().enumerate() {
            acc += t;
            if u < acc {
                return to;
            }
        }
        // rounding left the cumulative sum just below 1
        row.iter().rposition(|&t| t > 0.0).unwrap_or(from)
    }
}

/// Samples `steps` transitions from `x0`; the trajectory includes `x0`.
pub fn markov_chain_run(kernel: &TransitionKernel, x0: usize, steps: usize, seed: u64) -> Result<Vec<usize>> {
    if x0 >= kernel.states() {
        return Err(Error::param(format!("start state {x0} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(x0);
    let mut x = x0;
    for _ in 0..steps {
        x = kernel.sample_next(x, &mut rng);
        traj.push(x);
    }
    Ok(traj)
}

/// Inverse-temperature ladder traversed `cycles` times.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub ladder: Vec<f64>,
    pub sweeps_per_rung: usize,
    pub cycles: usize,
}

impl Schedule {
    pub fn new(ladder: Vec<f64>, sweeps_per_rung: usize, cycles: usize) -> Self {
        Self {
            ladder,
            sweeps_per_rung,
            cycles,
        }
    }

    /// Parses a comma-separated list of inverse temperatures; `inf` is
    /// accepted for a zero-temperature rung.
    pub fn parse_ladder(text: &str) -> Result<Vec<f64>> {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::param(format!("bad inverse temperature {s:?}")))
            })
            .collect()
    }

    pub fn total_sweeps(&self) -> usize {
        self.ladder.len() * self.sweeps_per_rung * self.cycles
    }

    fn check_common(&self) -> Result<()> {
        if self.ladder.is_empty() || self.sweeps_per_rung == 0 || self.cycles == 0 {
            return Err(Error::param("schedule needs rungs, sweeps and cycles"));
        }
        if let Some(b) = self.ladder.iter().find(|&&b| !(b > 0.0)) {
            return Err(Error::param(format!("inverse temperature {b} must be positive")));
        }
        Ok(())
    }
}

/// Output of a scheduled sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    /// States after every sweep of each cycle's final rung.
    pub samples: Vec<BinaryConfig>,
    /// Energy after every sweep, all rungs.
    pub energy_trace: Vec<f64>,
    pub final_state: ChainState,
}

fn run_schedule(p: &RbmParams, schedule: &Schedule, init: ChainState) -> Result<SampleRun> {
    p.check_config(&init.config)?;
    let last = schedule.ladder.len() - 1;
    let mut state = init;
    let mut samples = Vec::new();
    let mut energy_trace = Vec::with_capacity(schedule.total_sweeps());
    for _ in 0..schedule.cycles {
        for (rung, &beta) in schedule.ladder.iter().enumerate() {
            state.beta = beta;
            for _ in 0..schedule.sweeps_per_rung {
                state = gibbs_step(state, p)?;
                energy_trace.push(energy_unchecked(&state.config.visible, &state.config.hidden, p));
                if rung == last {
                    samples.push(state.config.clone());
                }
            }
        }
    }
    Ok(SampleRun {
        samples,
        energy_trace,
        final_state: state,
    })
}

/// Annealed sampling: `beta` rises along the ladder and the final rung is
/// either `beta = 1` or `+inf` (a quench to a local energy minimum).
pub fn anneal_sample(p: &RbmParams, schedule: &Schedule, init: ChainState) -> Result<SampleRun> {
    schedule.check_common()?;
    if schedule.ladder.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("annealing ladder must be non-decreasing in beta"));
    }
    let last = *schedule.ladder.last().expect("checked non-empty");
    if last != 1.0 && last != f64::INFINITY {
        return Err(Error::param("annealing ladder must end at beta = 1 or beta = inf"));
    }
    run_schedule(p, schedule, init)
}

/// Tempered sampling: `beta` falls from 1 to a hot rung and returns to 1;
/// samples come from the unit-temperature rung closing each cycle.
pub fn temper_sample(p: &RbmParams, schedule: &Schedule, init: ChainState) -> Result<SampleRun> {
    schedule.check_common()?;
    let ladder = &schedule.ladder;
    if ladder.iter().any(|b| !b.is_finite()) {
        return Err(Error::param("tempering ladder must be finite"));
    }
    if *ladder.last().expect("checked non-empty") != 1.0 {
        return Err(Error::param("tempering ladder must end at beta = 1"));
    }
    let turn = ladder
        .iter()
        .enumerate()
        .fold(0, |m, (i, &b)| if b < ladder[m] { i } else { m });
    let down_ok = ladder[..=turn].windows(2).all(|w| w[1] <= w[0]);
    let up_ok = ladder[turn..].windows(2).all(|w| w[1] >= w[0]);
    if !(down_ok && up_ok) {
        return Err(Error::param("tempering ladder must descend in beta and then return"));
    }
    run_schedule(p, schedule, init)
}
