//! Exact-enumeration oracles for the RBM and the generic Markov chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatternet::energymodel::*;
use scatternet::optim::Optimizer;

fn random_params(n_v: usize, n_h: usize, seed: u64) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    RbmParams::new(draw(n_v), draw(n_h), draw(n_v * n_h)).unwrap()
}

/// Multiples of 1/8 in [-2, 2]: sums of a few of these are exact in f64.
fn dyadic_params(n_v: usize, n_h: usize, seed: u64) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-16i32..=16) as f64 / 8.0).collect::<Vec<f64>>();
    RbmParams::new(draw(n_v), draw(n_h), draw(n_v * n_h)).unwrap()
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn partition_function_matches_independent_enumeration() {
    for seed in 0..5 {
        let p = random_params(4, 3, seed);
        let beta = 0.7;
        // hidden-major, descending order, energy written out term by term
        let mut z = 0.0;
        for h in (0..8u32).rev() {
            for v in (0..16u32).rev() {
                let bit = |x: u32, i: usize| ((x >> i) & 1) as f64;
                let mut e = 0.0;
                for i in 0..4 {
                    e -= p.visible_bias[i] * bit(v, i);
                    for j in 0..3 {
                        e -= bit(v, i) * p.weights[i * 3 + j] * bit(h, j);
                    }
                }
                for j in 0..3 {
                    e -= p.hidden_bias[j] * bit(h, j);
                }
                z += (-beta * e).exp();
            }
        }
        let got = partition_function_exact(&p, beta).unwrap();
        assert!((got - z).abs() <= 1e-12 * z, "seed {seed}: {got} vs {z}");
    }
}

#[test]
fn energy_invariant_under_visible_hidden_swap() {
    for seed in 0..20 {
        let p = dyadic_params(3, 4, seed);
        let q = p.swapped();
        for code in 0..128u64 {
            let cfg = BinaryConfig::from_code(code, 3, 4);
            let swapped = BinaryConfig::new(cfg.hidden.clone(), cfg.visible.clone());
            assert_eq!(energy(&cfg, &p).unwrap().to_bits(), energy(&swapped, &q).unwrap().to_bits());
        }
    }
}

#[test]
fn partition_function_invariant_under_unit_relabelling() {
    for seed in 0..20 {
        let p = dyadic_params(3, 3, seed);
        let (pv, ph) = ([2usize, 0, 1], [1usize, 2, 0]);
        let b = pv.iter().map(|&i| p.visible_bias[i]).collect();
        let c = ph.iter().map(|&j| p.hidden_bias[j]).collect();
        let w = pv.iter().flat_map(|&i| ph.iter().map(move |&j| (i, j))).map(|(i, j)| p.weight(i, j)).collect();
        let permuted = RbmParams::new(b, c, w).unwrap();
        for beta in [0.0, 0.5, 1.0, 3.0] {
            assert_eq!(
                partition_function_exact(&p, beta).unwrap().to_bits(),
                partition_function_exact(&permuted, beta).unwrap().to_bits()
            );
        }
        let swapped = p.swapped();
        assert_eq!(
            partition_function_exact(&p, 1.0).unwrap().to_bits(),
            partition_function_exact(&swapped, 1.0).unwrap().to_bits()
        );
    }
}

#[test]
fn beta_zero_is_exactly_uniform() {
    let p = random_params(3, 2, 9);
    for code in 0..32 {
        let cfg = BinaryConfig::from_code(code, 3, 2);
        assert_eq!(boltzmann_prob(&cfg, &p, 0.0).unwrap(), 1.0 / 32.0);
    }
}

#[test]
fn probabilities_sum_to_one() {
    for seed in 0..5 {
        let p = random_params(4, 4, seed);
        let total: f64 = joint_distribution(&p, 1.7).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn detailed_balance_on_several_models() {
    for seed in 0..5 {
        let p = random_params(3, 2, seed);
        for beta in [0.5, 1.0, 2.0] {
            let t = visible_sweep_kernel(&p, beta).unwrap();
            let pi = visible_marginal(&p, beta).unwrap();
            for x in 0..pi.len() {
                for y in 0..pi.len() {
                    assert!((pi[x] * t[x][y] - pi[y] * t[y][x]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn gibbs_long_run_matches_enumeration() {
    let p = random_params(3, 2, 31);
    let exact = joint_distribution(&p, 1.0).unwrap();
    let mut state = ChainState::new(BinaryConfig::zeros(3, 2), 2024, 0, 1.0).unwrap();
    let mut counts = vec![0u64; exact.len()];
    let sweeps = 1_000_000;
    for _ in 0..sweeps {
        state = gibbs_step(state, &p).unwrap();
        counts[state.config.code() as usize] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / sweeps as f64).collect();
    let d = tv(&empirical, &exact);
    assert!(d < 0.02, "TV = {d}");
}

#[test]
fn samplers_are_pure_functions_of_seed() {
    let p = random_params(4, 3, 5);
    let schedule = Schedule::new(vec![1.0, 0.4, 1.0], 7, 5);
    let run = |seed| {
        let init = ChainState::new(BinaryConfig::zeros(4, 3), seed, 3, 1.0).unwrap();
        temper_sample(&p, &schedule, init).unwrap()
    };
    assert_eq!(run(8), run(8));
    let anneal = |seed| {
        let init = ChainState::new(BinaryConfig::zeros(4, 3), seed, 0, 1.0).unwrap();
        anneal_sample(&p, &Schedule::new(vec![0.2, 0.6, 1.0], 9, 3), init).unwrap()
    };
    assert_eq!(anneal(1), anneal(1));
    let data = vec![vec![true, false, true, false], vec![false, true, false, true]];
    let cfg = CdConfig { k: 2, epochs: 20, batch_size: 1, seed: 4 };
    let a = cd_train(&data, p.clone(), &cfg, Optimizer::Sgd { lr: 0.1 }).unwrap();
    let b = cd_train(&data, p.clone(), &cfg, Optimizer::Sgd { lr: 0.1 }).unwrap();
    assert_eq!(a, b);
    let t = TransitionKernel::new(vec![vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
    assert_eq!(markov_chain_run(&t, 0, 500, 3).unwrap(), markov_chain_run(&t, 0, 500, 3).unwrap());
}

#[test]
fn three_state_chain_matches_power_iteration() {
    let rows = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.1, 0.5]];
    let t = TransitionKernel::new(rows.clone()).unwrap();
    let mut pi = vec![1.0 / 3.0; 3];
    for _ in 0..1000 {
        pi = (0..3).map(|y| (0..3).map(|x| pi[x] * rows[x][y]).sum()).collect();
    }
    let traj = markov_chain_run(&t, 0, 100_000, 12).unwrap();
    let mut occ = vec![0.0; 3];
    for &x in &traj[1..] {
        occ[x] += 1.0 / 100_000.0;
    }
    assert!(tv(&occ, &pi) < 0.02, "occupancy {occ:?} vs {pi:?}");
}

/// Two hidden and two visible units with `W = w`, `b = c = -w`: all-off and
/// all-on both have energy 0, every other state at least `w`.
fn bimodal(w: f64) -> RbmParams {
    RbmParams::new(vec![-w; 2], vec![-w; 2], vec![w; 4]).unwrap()
}

fn mode_masses(samples: &[BinaryConfig]) -> (f64, f64) {
    let n = samples.len() as f64;
    let off = samples.iter().filter(|s| s.code() == 0).count() as f64 / n;
    let on = samples.iter().filter(|s| s.code() == 0b1111).count() as f64 / n;
    (off, on)
}

#[test]
fn tempering_crosses_between_modes_plain_gibbs_does_not() {
    let p = bimodal(12.0);
    let exact = joint_distribution(&p, 1.0).unwrap();
    assert!((exact[0] - 0.5).abs() < 1e-4 && (exact[15] - 0.5).abs() < 1e-4);

    // equal budgets of 10^4 sweeps, both chains start in the all-off mode
    let tempered = temper_sample(
        &p,
        &Schedule::new(vec![1.0, 0.3, 0.1, 0.3, 1.0], 10, 200),
        ChainState::new(BinaryConfig::zeros(2, 2), 77, 0, 1.0).unwrap(),
    )
    .unwrap();
    assert_eq!(tempered.energy_trace.len(), 10_000);
    let (off, on) = mode_masses(&tempered.samples);
    assert!(off > 0.2 && on > 0.2, "tempered masses {off} / {on}");

    let plain = temper_sample(
        &p,
        &Schedule::new(vec![1.0], 10_000, 1),
        ChainState::new(BinaryConfig::zeros(2, 2), 77, 0, 1.0).unwrap(),
    )
    .unwrap();
    let (_, on) = mode_masses(&plain.samples);
    assert!(on < 0.05, "plain chain reached the other mode with mass {on}");
}

#[test]
fn cd_fits_two_mode_target() {
    let modes = [vec![true, true, false, false], vec![false, false, true, true]];
    let data: Vec<Vec<bool>> = (0..100).map(|i| modes[i % 2].clone()).collect();
    for seed in 0..5 {
        let p = RbmParams::random(4, 3, 0.1, seed).unwrap();
        let cfg = CdConfig { k: 1, epochs: 2000, batch_size: 10, seed: seed + 100 };
        let out = cd_train(&data, p, &cfg, Optimizer::Sgd { lr: 0.1 }).unwrap();
        let first = out.history[0].value();
        let last = out.history.last().unwrap().value();
        assert!(matches!(out.history[0], FitMetric::ExactKl(_)));
        assert!(last <= 0.5 * first, "seed {seed}: {first} -> {last}");
        assert!(last < 0.05, "seed {seed}: final KL {last}");
    }
}

#[test]
fn large_models_fall_back_to_reconstruction_error() {
    let p = RbmParams::random(30, 2, 0.1, 1).unwrap();
    let data = vec![vec![true; 30], vec![false; 30]];
    let cfg = CdConfig { k: 1, epochs: 3, batch_size: 0, seed: 0 };
    let out = cd_train(&data, p.clone(), &cfg, Optimizer::Sgd { lr: 0.1 }).unwrap();
    assert!(matches!(out.history[0], FitMetric::ReconstructionError(_)));
    assert!(matches!(partition_function_exact(&p, 1.0), Err(scatternet::Error::TooLarge { .. })));
}
