use std::str::FromStr;

use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gibbs::{gibbs_allocate_subcounts, gibbs_sample_counts, gibbs_sample_gammas};
use super::simulate::{sample_mf_prior, sample_td_prior};
use super::state::AugmentedState;
use super::types::{BoundedMatrix, Factors, MfFactors, Model, ModelKind, TdFactors};
use crate::error::{DncbError, Result};

/// How the factor matrices are seeded before the first sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Draw from the priors.
    #[default]
    Prior,
    /// Prior draw refined by a few multiplicative Poisson-NMF updates toward
    /// pseudo-counts `s β` and `s (1 - β)` on the observed entries.
    Moment,
}

impl FromStr for InitStrategy {
    type Err = DncbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(InitStrategy::Prior),
            "moment" => Ok(InitStrategy::Moment),
            other => Err(DncbError::Config(format!("unknown init strategy {other:?} (expected prior|moment)"))),
        }
    }
}

const MOMENT_SCALE: f64 = 10.0;
const MOMENT_ITERS: usize = 20;

/// Initial factors and a state consistent with them: gammas from `y = 0`,
/// then one count pass and one allocation pass.
pub fn initialize_state<R: Rng + ?Sized>(
    model: &Model,
    data: &BoundedMatrix,
    strategy: InitStrategy,
    rng: &mut R,
) -> Result<(Factors, AugmentedState)> {
    let (ni, nj) = data.dim();
    model.check_data(ni, nj)?;
    let h = &model.hyper;
    let mut factors = match model.kind {
        ModelKind::Mf => Factors::Mf(sample_mf_prior(h, ni, model.n_factors, nj, rng)),
        ModelKind::Td => Factors::Td(sample_td_prior(h, ni, model.n_clusters, model.n_factors, nj, rng)),
    };
    if strategy == InitStrategy::Moment {
        let targets = pseudo_counts(data);
        match &mut factors {
            Factors::Mf(f) => refine_mf(f, &targets, MOMENT_ITERS),
            Factors::Td(f) => refine_td(f, &targets, MOMENT_ITERS),
        }
    }

    let mut state = AugmentedState::new(ni, nj);
    gibbs_sample_gammas(&mut state, data, &model.params, rng)?;
    let (l1, l2) = factors.rates()?;
    gibbs_sample_counts(&mut state, data, (&l1, &l2), &model.params, model.sampler, rng)?;
    gibbs_allocate_subcounts(&mut state, &factors, rng)?;
    Ok((factors, state))
}

struct Targets {
    v: [Array2<f64>; 2],
    mask: Array2<f64>,
}

fn pseudo_counts(data: &BoundedMatrix) -> Targets {
    let mask = data.observed().mapv(|o| if o { 1.0 } else { 0.0 });
    let v1 = Zip::from(data.values()).and(&mask).map_collect(|b, m| m * MOMENT_SCALE * b);
    let v2 = Zip::from(data.values()).and(&mask).map_collect(|b, m| m * MOMENT_SCALE * (1.0 - b));
    Targets { v: [v1, v2], mask }
}

/// `M ⊙ V / Λ`, zero off the mask.
fn ratio(v: &Array2<f64>, lam: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    Zip::from(v).and(lam).and(mask).map_collect(|v, l, m| if *m > 0.0 { v / l.max(1e-300) } else { 0.0 })
}

fn scale(x: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>) {
    Zip::from(x).and(num).and(den).for_each(|x, n, d| {
        if *d > 0.0 {
            *x = (*x * n / d).max(f64::MIN_POSITIVE);
        }
    });
}

fn refine_mf(f: &mut MfFactors, t: &Targets, iters: usize) {
    for _ in 0..iters {
        let den_theta = t.mask.dot(&f.phi.t());
        for (k, theta) in [&mut f.theta1, &mut f.theta2].into_iter().enumerate() {
            let r = ratio(&t.v[k], &theta.dot(&f.phi), &t.mask);
            let num = r.dot(&f.phi.t());
            scale(theta, &num, &den_theta);
        }
        let r1 = ratio(&t.v[0], &f.theta1.dot(&f.phi), &t.mask);
        let r2 = ratio(&t.v[1], &f.theta2.dot(&f.phi), &t.mask);
        let num = f.theta1.t().dot(&r1) + f.theta2.t().dot(&r2);
        let den = (&f.theta1 + &f.theta2).t().dot(&t.mask);
        scale(&mut f.phi, &num, &den);
    }
}

fn refine_td(f: &mut TdFactors, t: &Targets, iters: usize) {
    for _ in 0..iters {
        // Θ
        let pp = [f.pi1.dot(&f.phi), f.pi2.dot(&f.phi)];
        let r = [ratio(&t.v[0], &f.theta.dot(&pp[0]), &t.mask), ratio(&t.v[1], &f.theta.dot(&pp[1]), &t.mask)];
        let num = r[0].dot(&pp[0].t()) + r[1].dot(&pp[1].t());
        let den = t.mask.dot(&(&pp[0] + &pp[1]).t());
        scale(&mut f.theta, &num, &den);

        // Π^(t)
        let den = f.theta.t().dot(&t.mask).dot(&f.phi.t());
        for (k, pi) in [&mut f.pi1, &mut f.pi2].into_iter().enumerate() {
            let r = ratio(&t.v[k], &f.theta.dot(&pi.dot(&f.phi)), &t.mask);
            let num = f.theta.t().dot(&r).dot(&f.phi.t());
            scale(pi, &num, &den);
        }

        // Φ
        let tp = [f.theta.dot(&f.pi1), f.theta.dot(&f.pi2)];
        let r = [ratio(&t.v[0], &tp[0].dot(&f.phi), &t.mask), ratio(&t.v[1], &tp[1].dot(&f.phi), &t.mask)];
        let num = tp[0].t().dot(&r[0]) + tp[1].t().dot(&r[1]);
        let den = (&tp[0] + &tp[1]).t().dot(&t.mask);
        scale(&mut f.phi, &num, &den);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::types::{DncbParams, Hyperparams};
    use crate::rng::seeded;

    fn kl(t: &Targets, l: [Array2<f64>; 2]) -> f64 {
        let mut s = 0.0;
        for k in 0..2 {
            for ((i, j), v) in t.v[k].indexed_iter() {
                let lam = l[k][[i, j]];
                s += lam - v * lam.ln();
            }
        }
        s
    }

    #[test]
    fn moment_refinement_decreases_poisson_loss() {
        let (data, _) = BoundedMatrix::from_values(Array2::from_shape_fn((8, 10), |(i, j)| {
            if (i < 4) == (j < 5) {
                0.85
            } else {
                0.1
            }
        }))
        .unwrap();
        let t = pseudo_counts(&data);
        let h = Hyperparams::default();
        let mut rng = seeded(2);

        let mut mf = sample_mf_prior(&h, 8, 2, 10, &mut rng);
        let before = kl(&t, [mf.theta1.dot(&mf.phi), mf.theta2.dot(&mf.phi)]);
        refine_mf(&mut mf, &t, 30);
        let after = kl(&t, [mf.theta1.dot(&mf.phi), mf.theta2.dot(&mf.phi)]);
        assert!(after < before, "{after} >= {before}");

        let mut td = sample_td_prior(&h, 8, 2, 2, 10, &mut rng);
        let rates = |f: &TdFactors| [f.theta.dot(&f.pi1.dot(&f.phi)), f.theta.dot(&f.pi2.dot(&f.phi))];
        let before = kl(&t, rates(&td));
        refine_td(&mut td, &t, 30);
        let after = kl(&t, rates(&td));
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn initial_state_is_consistent() {
        let (data, _) = BoundedMatrix::from_values(Array2::from_elem((4, 3), 0.3)).unwrap();
        let params = DncbParams::new(1.0, 1.0, 3).unwrap();
        for strategy in [InitStrategy::Prior, InitStrategy::Moment] {
            let model = Model::td(2, 2, Hyperparams::default(), params.clone()).unwrap();
            let (f, s) = initialize_state(&model, &data, strategy, &mut seeded(7)).unwrap();
            s.check_invariants().unwrap();
            assert!(f.all_positive());
        }
    }
}
