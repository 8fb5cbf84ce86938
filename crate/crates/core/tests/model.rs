#![allow(clippy::needless_range_loop)]

use dncb::model::{
    compose_rates_td, gibbs_allocate_subcounts, gibbs_iteration, gibbs_sample_counts, gibbs_sample_gammas,
    initialize_state, sample_observations, simulate_mf, simulate_td, update_factors_mf, update_factors_td,
    AugmentedState, Subcounts,
};
use dncb::rng::seeded;
use dncb::special::{expected_beta, MomentScenario};
use dncb::{
    BoundedMatrix, Chain, DncbParams, Factors, Hyperparams, InitStrategy, MfFactors, Model, SamplerMethod, TdFactors,
};
use ndarray::{array, Array2};
use statrs::distribution::{Beta, ContinuousCDF, Gamma};

/// Two-sided KS statistic of `xs` against `cdf`.
fn ks(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS critical value at level 0.001.
fn ks_crit(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

fn within_se(x: f64, mean: f64, sd: f64, n: usize, k: f64) -> bool {
    (x - mean).abs() <= k * sd / (n as f64).sqrt()
}

#[test]
fn zero_rate_observations_are_beta() {
    let n = 100_000;
    let z = Array2::zeros((1, n));
    let p = DncbParams::new(0.7, 2.5, n).unwrap();
    let (_, data) = sample_observations(&z, &z, &p, &mut seeded(1)).unwrap();
    let d = Beta::new(0.7, 2.5).unwrap();
    let mut xs = data.values().iter().copied().collect::<Vec<_>>();
    assert!(xs.iter().all(|x| *x > 0.0 && *x < 1.0));
    assert!(ks(&mut xs, |x| d.cdf(x)) < ks_crit(n));
}

#[test]
fn forward_mean_matches_moment_formula() {
    let (b0, zeta, rho) = (0.5, 3.0, 0.3);
    let n = 400;
    let p = DncbParams::new(b0, b0, n).unwrap();
    let l1 = Array2::from_elem((n, n), zeta * rho);
    let l2 = Array2::from_elem((n, n), zeta * (1.0 - rho));
    let (_, data) = sample_observations(&l1, &l2, &p, &mut seeded(2)).unwrap();
    let xs = data.values();
    let m = xs.mean().unwrap();
    let sd = xs.std(1.0);
    let want = expected_beta(&MomentScenario::new(b0, zeta, rho).unwrap()).unwrap();
    assert!(within_se(m, want, sd, n * n, 4.0), "{m} vs {want}");
}

#[test]
fn gamma_step_sum_is_independent_of_proportion() {
    // Fixed counts; β drawn from its generative law; γ• then redrawn by the
    // Gibbs step must be Gam(ε• + y•, c) and uncorrelated with β.
    let n = 100_000;
    let (e1, e2, c) = (0.8, 1.7, 2.0);
    let (y1, y2) = (3u32, 1u32);
    let mut p = DncbParams::new(e1, e2, n).unwrap();
    p.col_rates = vec![c; n];
    let l = Array2::zeros((1, n));
    let (_, base) = sample_observations(&l, &l, &DncbParams::new(e1 + y1 as f64, e2 + y2 as f64, n).unwrap(), &mut seeded(3))
        .unwrap();
    let mut state = AugmentedState::new(1, n);
    state.y1.fill(y1);
    state.y2.fill(y2);
    gibbs_sample_gammas(&mut state, &base, &p, &mut seeded(4)).unwrap();
    let tot: Vec<f64> = state.gamma1.iter().zip(state.gamma2.iter()).map(|(a, b)| a + b).collect();
    let beta: Vec<f64> = base.values().iter().copied().collect();

    let g = Gamma::new(e1 + e2 + (y1 + y2) as f64, c).unwrap();
    assert!(ks(&mut tot.clone(), |x| g.cdf(x)) < ks_crit(n));

    let mt = tot.iter().sum::<f64>() / n as f64;
    let mb = beta.iter().sum::<f64>() / n as f64;
    let cov: f64 = tot.iter().zip(&beta).map(|(a, b)| (a - mt) * (b - mb)).sum::<f64>() / n as f64;
    let st = (tot.iter().map(|a| (a - mt).powi(2)).sum::<f64>() / n as f64).sqrt();
    let sb = (beta.iter().map(|b| (b - mb).powi(2)).sum::<f64>() / n as f64).sqrt();
    let corr = cov / (st * sb);
    assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
}

#[test]
fn zero_counts_gamma_step_is_prior() {
    let n = 50_000;
    let (data, _) = BoundedMatrix::from_values(Array2::from_elem((1, n), 0.4)).unwrap();
    let p = DncbParams::new(0.5, 1.5, n).unwrap();
    let mut state = AugmentedState::new(1, n);
    gibbs_sample_gammas(&mut state, &data, &p, &mut seeded(5)).unwrap();
    let mut tot: Vec<f64> = state.gamma1.iter().zip(state.gamma2.iter()).map(|(a, b)| a + b).collect();
    let g = Gamma::new(2.0, 1.0).unwrap();
    assert!(ks(&mut tot, |x| g.cdf(x)) < ks_crit(n));
}

#[test]
fn zero_rates_give_zero_counts() {
    let (data, _) = BoundedMatrix::from_values(Array2::from_elem((3, 3), 0.5)).unwrap();
    let p = DncbParams::new(1.0, 2.0, 3).unwrap();
    let mut state = AugmentedState::new(3, 3);
    state.y1.fill(7);
    let z = Array2::zeros((3, 3));
    gibbs_sample_counts(&mut state, &data, (&z, &z), &p, SamplerMethod::Auto, &mut seeded(6)).unwrap();
    assert!(state.y1.iter().chain(state.y2.iter()).all(|y| *y == 0));
}

/// Exact `p(y1 | β, λ)` for a single entry, by enumeration of both counts.
fn exact_y1_posterior(beta: f64, e1: f64, e2: f64, l1: f64, l2: f64, ymax: usize) -> Vec<f64> {
    use dncb::special::{beta_log_pdf, ln_factorial};
    let lp = |y: usize, l: f64| y as f64 * l.ln() - l - ln_factorial(y as u64);
    let mut w: Vec<f64> = (0..=ymax)
        .map(|y1| {
            let terms: Vec<f64> = (0..=ymax)
                .map(|y2| lp(y1, l1) + lp(y2, l2) + beta_log_pdf(beta, e1 + y1 as f64, e2 + y2 as f64))
                .collect();
            dncb::special::log_sum_exp(&terms)
        })
        .collect();
    let m = dncb::special::log_sum_exp(&w);
    for x in &mut w {
        *x = (*x - m).exp();
    }
    w
}

#[test]
fn single_entry_gibbs_matches_enumeration() {
    // v = 0 branch (ε1 = 1) included
    let (beta, e1, e2, l1, l2) = (0.7, 1.0, 0.6, 4.0, 2.5);
    let exact = exact_y1_posterior(beta, e1, e2, l1, l2, 80);
    let (data, _) = BoundedMatrix::from_values(array![[beta]]).unwrap();
    let p = DncbParams::new(e1, e2, 1).unwrap();
    let (r1, r2) = (array![[l1]], array![[l2]]);
    let mut state = AugmentedState::new(1, 1);
    let mut rng = seeded(7);
    let n = 200_000;
    let mut hist = vec![0usize; 81];
    for _ in 0..1000 {
        gibbs_sample_gammas(&mut state, &data, &p, &mut rng).unwrap();
        gibbs_sample_counts(&mut state, &data, (&r1, &r2), &p, SamplerMethod::Auto, &mut rng).unwrap();
    }
    for _ in 0..n {
        gibbs_sample_gammas(&mut state, &data, &p, &mut rng).unwrap();
        gibbs_sample_counts(&mut state, &data, (&r1, &r2), &p, SamplerMethod::Auto, &mut rng).unwrap();
        hist[state.y1[[0, 0]] as usize] += 1;
    }
    let exact_mean: f64 = exact.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
    let exact_var: f64 = exact.iter().enumerate().map(|(y, p)| (y as f64 - exact_mean).powi(2) * p).sum();
    let mean = hist.iter().enumerate().map(|(y, c)| (y * c) as f64).sum::<f64>() / n as f64;
    // autocorrelated chain: allow a generous effective sample size
    assert!(within_se(mean, exact_mean, exact_var.sqrt(), n / 20, 4.0), "{mean} vs {exact_mean}");
    let tv: f64 = hist.iter().zip(&exact).map(|(c, p)| (*c as f64 / n as f64 - p).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn td_allocation_matches_cell_probabilities() {
    let f = TdFactors {
        theta: array![[1.0, 2.0]],
        phi: array![[0.5], [1.5]],
        pi1: array![[1.0, 0.2], [0.3, 2.0]],
        pi2: array![[1.0, 1.0], [1.0, 1.0]],
    };
    let factors = Factors::Td(f.clone());
    let mut state = AugmentedState::new(1, 1);
    state.y1[[0, 0]] = 5;
    let mut rng = seeded(8);
    let reps = 100_000;
    let mut freq = [[0u64; 2]; 2];
    for _ in 0..reps {
        gibbs_allocate_subcounts(&mut state, &factors, &mut rng).unwrap();
        for e in &state.subcounts.entries {
            freq[e.c as usize][e.k as usize] += e.count as u64;
        }
    }
    let w = |c: usize, k: usize| f.theta[[0, c]] * f.pi1[[c, k]] * f.phi[[k, 0]];
    let z: f64 = (0..2).flat_map(|c| (0..2).map(move |k| (c, k))).map(|(c, k)| w(c, k)).sum();
    let total = (reps * 5) as f64;
    for c in 0..2 {
        for k in 0..2 {
            let p = w(c, k) / z;
            // multinomial with n = 5 per replicate: var of the cell total is reps * 5 p (1-p)
            let se = (total * p * (1.0 - p)).sqrt();
            assert!((freq[c][k] as f64 - total * p).abs() < 4.0 * se, "cell ({c},{k})");
        }
    }
}

#[test]
fn single_cell_allocation_takes_everything() {
    let f = Factors::Td(TdFactors {
        theta: array![[1.0], [2.0]],
        phi: array![[0.5, 1.0]],
        pi1: array![[1.0]],
        pi2: array![[3.0]],
    });
    let mut state = AugmentedState::new(2, 2);
    state.y1 = array![[3, 0], [1, 9]];
    state.y2 = array![[0, 2], [4, 0]];
    gibbs_allocate_subcounts(&mut state, &f, &mut seeded(9)).unwrap();
    state.check_invariants().unwrap();
    assert_eq!(state.subcounts.len(), 5);
    assert!(state.subcounts.entries.iter().all(|e| e.c == 0 && e.k == 0 && e.count > 0));
}

fn random_subcounts(ni: usize, nj: usize, nc: usize, nk: usize, seed: u64) -> AugmentedState {
    use rand::Rng;
    let mut rng = seeded(seed);
    let mut s = AugmentedState::new(ni, nj);
    let mut entries = Vec::new();
    for i in 0..ni {
        for j in 0..nj {
            for t in 0..2u8 {
                let mut total = 0;
                for c in 0..nc {
                    for k in 0..nk {
                        let n: u32 = rng.random_range(0..4);
                        if n > 0 {
                            entries.push(dncb::model::Subcount {
                                i: i as u32,
                                j: j as u32,
                                c: c as u16,
                                k: k as u16,
                                t,
                                count: n,
                            });
                            total += n;
                        }
                    }
                }
                if t == 0 {
                    s.y1[[i, j]] = total;
                } else {
                    s.y2[[i, j]] = total;
                }
            }
        }
    }
    s.subcounts = Subcounts { entries };
    s
}

#[test]
fn mf_factor_update_moments_match_brute_force() {
    let (ni, nk, nj) = (3, 2, 4);
    let h = Hyperparams {
        eta1: 0.7,
        eta2: 1.3,
        nu1: 1.1,
        nu2: 0.9,
        zeta1: 1.0,
        zeta2: 1.0,
    };
    let state = random_subcounts(ni, nj, 1, nk, 10);
    let phi0 = Array2::from_shape_fn((nk, nj), |(k, j)| 0.3 + 0.2 * (k + j) as f64);
    let reps = 20_000;
    let mut rng = seeded(11);
    let mut theta_acc = Array2::<f64>::zeros((ni, nk));
    for _ in 0..reps {
        let mut f = MfFactors {
            theta1: Array2::ones((ni, nk)),
            theta2: Array2::ones((ni, nk)),
            phi: phi0.clone(),
        };
        update_factors_mf(&mut f, &state, &h, &mut rng).unwrap();
        theta_acc += &f.theta1;
    }
    for i in 0..ni {
        for k in 0..nk {
            // brute force shape and rate
            let mut shape = h.eta1;
            for e in &state.subcounts.entries {
                if e.t == 0 && e.i as usize == i && e.k as usize == k {
                    shape += e.count as f64;
                }
            }
            let mut rate = h.eta2;
            for j in 0..nj {
                rate += phi0[[k, j]];
            }
            let mean = shape / rate;
            let sd = shape.sqrt() / rate;
            assert!(within_se(theta_acc[[i, k]] / reps as f64, mean, sd, reps, 4.5), "theta1[{i},{k}]");
        }
    }
}

#[test]
fn td_factor_update_moments_match_brute_force() {
    let (ni, nc, nk, nj) = (3, 2, 2, 4);
    let h = Hyperparams::uniform(1.2, 0.8);
    let state = random_subcounts(ni, nj, nc, nk, 12);
    let reps = 20_000;
    let mut rng = seeded(13);
    let theta0 = Array2::from_shape_fn((ni, nc), |(i, c)| 0.5 + 0.3 * (i + 2 * c) as f64);
    let phi0 = Array2::from_shape_fn((nk, nj), |(k, j)| 0.3 + 0.2 * (k + j) as f64);
    let pi0 = Array2::from_shape_fn((nc, nk), |(c, k)| 0.4 + 0.5 * (c * 2 + k) as f64);
    let mut theta_acc = Array2::<f64>::zeros((ni, nc));
    for _ in 0..reps {
        let mut f = TdFactors {
            theta: theta0.clone(),
            phi: phi0.clone(),
            pi1: pi0.clone(),
            pi2: pi0.clone(),
        };
        update_factors_td(&mut f, &state, &h, &mut rng).unwrap();
        theta_acc += &f.theta;
    }
    for i in 0..ni {
        for c in 0..nc {
            let mut shape = h.eta1;
            for e in &state.subcounts.entries {
                if e.i as usize == i && e.c as usize == c {
                    shape += e.count as f64;
                }
            }
            let mut rate = h.eta2;
            for _t in 0..2 {
                for k in 0..nk {
                    for j in 0..nj {
                        rate += pi0[[c, k]] * phi0[[k, j]];
                    }
                }
            }
            let mean = shape / rate;
            let sd = shape.sqrt() / rate;
            assert!(within_se(theta_acc[[i, c]] / reps as f64, mean, sd, reps, 4.5), "theta[{i},{c}]");
        }
    }
}

#[test]
fn sweep_invariants_hold_for_100_sweeps() {
    for kind in ["mf", "td"] {
        let h = Hyperparams::default();
        let p = DncbParams::new(0.6, 1.4, 6).unwrap();
        let (model, sim) = if kind == "mf" {
            (Model::mf(2, h, p.clone()).unwrap(), simulate_mf(&h, &p, (5, 2, 6), &mut seeded(17)).unwrap())
        } else {
            (Model::td(2, 3, h, p.clone()).unwrap(), simulate_td(&h, &p, (5, 2, 3, 6), &mut seeded(17)).unwrap())
        };
        let mut rng = seeded(18);
        let (mut f, mut s) = initialize_state(&model, &sim.data, InitStrategy::Prior, &mut rng).unwrap();
        for _ in 0..100 {
            gibbs_iteration(&model, &sim.data, &mut f, &mut s, &mut rng).unwrap();
            s.check_invariants().unwrap();
            assert!(f.all_positive());
            for ((i, j), g1) in s.gamma1.indexed_iter() {
                let r = g1 / (g1 + s.gamma2[[i, j]]);
                let b = sim.data.value(i, j);
                assert!((r - b).abs() <= 4.0 * f64::EPSILON * b.max(1.0 - b), "{kind}: {r} vs {b}");
            }
        }
    }
}

fn td_fixture(seed: u64) -> (Model, BoundedMatrix) {
    let h = Hyperparams::default();
    let p = DncbParams::new(1.0, 1.0, 12).unwrap();
    let sim = simulate_td(&h, &p, (10, 2, 3, 12), &mut seeded(seed)).unwrap();
    (Model::td(2, 3, h, p).unwrap(), sim.data)
}

#[test]
fn chains_replay_under_fixed_seed_and_thread_count() {
    let (model, data) = td_fixture(19);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut c = Chain::new(model.clone(), data.clone(), InitStrategy::Moment, 20).unwrap();
            for _ in 0..10 {
                c.step().unwrap();
            }
            (c.factors().clone(), c.state().clone())
        })
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(1));
}

#[test]
fn heldout_values_never_influence_the_chain() {
    let (model, data) = td_fixture(21);
    let mut mask = Array2::from_elem(data.dim(), false);
    for (i, j) in [(0, 0), (3, 5), (9, 11), (4, 4)] {
        mask[[i, j]] = true;
    }
    let mut perturbed = data.values().clone();
    for ((i, j), m) in mask.indexed_iter() {
        if *m {
            perturbed[[i, j]] = 1.0 - perturbed[[i, j]];
        }
    }
    let a = data.hide(&mask).unwrap();
    let b = BoundedMatrix::from_values(perturbed).unwrap().0.hide(&mask).unwrap();
    let mut ca = Chain::new(model.clone(), a, InitStrategy::Moment, 22).unwrap();
    let mut cb = Chain::new(model, b, InitStrategy::Moment, 22).unwrap();
    for _ in 0..15 {
        ca.step().unwrap();
        cb.step().unwrap();
    }
    assert_eq!(ca.factors(), cb.factors());
    assert_eq!(ca.state(), cb.state());
}

#[test]
fn moment_init_tracks_the_data() {
    let h = Hyperparams::default();
    let p = DncbParams::new(1.0, 1.0, 60).unwrap();
    let sim = simulate_td(&h, &p, (40, 3, 4, 60), &mut seeded(23)).unwrap();
    let model = Model::td(3, 4, h, p).unwrap();
    let (f, _) = initialize_state(&model, &sim.data, InitStrategy::Moment, &mut seeded(24)).unwrap();
    let Factors::Td(f) = f else { unreachable!() };
    let (l1, l2) = compose_rates_td(&f).unwrap();
    let pred: Vec<f64> = l1.iter().zip(l2.iter()).map(|(a, b)| a / (a + b)).collect();
    let obs: Vec<f64> = sim.data.values().iter().copied().collect();
    let n = pred.len() as f64;
    let (mp, mo) = (pred.iter().sum::<f64>() / n, obs.iter().sum::<f64>() / n);
    let cov: f64 = pred.iter().zip(&obs).map(|(a, b)| (a - mp) * (b - mo)).sum();
    assert!(cov > 0.0);
    let corr = cov
        / (pred.iter().map(|a| (a - mp).powi(2)).sum::<f64>() * obs.iter().map(|b| (b - mo).powi(2)).sum::<f64>()).sqrt();
    assert!(corr > 0.3, "correlation {corr}");
}

#[test]
fn prior_init_draws_from_the_prior() {
    let h = Hyperparams {
        eta1: 2.0,
        eta2: 3.0,
        ..Hyperparams::default()
    };
    let (ni, nj) = (5000, 2);
    let (data, _) = BoundedMatrix::from_values(Array2::from_elem((ni, nj), 0.5)).unwrap();
    let model = Model::mf(2, h, DncbParams::new(1.0, 1.0, nj).unwrap()).unwrap();
    let (f, _) = initialize_state(&model, &data, InitStrategy::Prior, &mut seeded(25)).unwrap();
    let Factors::Mf(f) = f else { unreachable!() };
    let mut xs: Vec<f64> = f.theta1.iter().copied().collect();
    let g = Gamma::new(2.0, 3.0).unwrap();
    let n = xs.len();
    assert!(ks(&mut xs, |x| g.cdf(x)) < ks_crit(n));

    let (f2, _) = initialize_state(&model, &data, InitStrategy::Prior, &mut seeded(25)).unwrap();
    assert_eq!(Factors::Mf(f), f2);
}
