use serde::{Deserialize, Serialize};

use super::{GridMap, Policy};
use crate::error::{Error, Result};

/// Stand-in for the "minus infinity" initial value; keeps every backup finite.
pub const VALUE_SENTINEL: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Discount in `[0, 1)`.
    pub gamma: f64,
    /// Stop once the largest per-state change of a sweep drops below this.
    pub epsilon: f64,
    /// Inverse temperature of the final softmax.
    pub beta: f64,
    /// Sweep cap; `None` means `max(10 * cells, 1000)`, raised when the
    /// contraction bound says more sweeps are needed to reach `epsilon`.
    pub max_sweeps: Option<usize>,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            gamma: 0.95,
            epsilon: 1e-6,
            beta: 1.0,
            max_sweeps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub policy: Policy,
    pub values: GridMap,
    pub q: Vec<[f64; 4]>,
    pub sweeps: usize,
    /// Max-norm change of each sweep, in order.
    pub residuals: Vec<f64>,
}

/// `pi(a) ∝ exp(beta * (q(a) - max q))`.
pub fn annealed_softmax(q: &[f64; 4], beta: f64) -> [f64; 4] {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = q.map(|v| (beta * (v - m)).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

fn default_sweep_cap(reward: &GridMap, cfg: &PlannerConfig) -> usize {
    let base = (10 * reward.shape().len()).max(1000);
    if cfg.gamma == 0.0 {
        return base;
    }
    let rmax = reward.data().iter().fold(0.0f64, |m, r| m.max(r.abs()));
    // initial error is at most |sentinel| + 2 rmax / (1 - gamma)
    let start = -VALUE_SENTINEL + 2.0 * rmax / (1.0 - cfg.gamma);
    let needed = (cfg.epsilon / start).ln() / cfg.gamma.ln();
    base.max(needed.ceil() as usize + 2 * base)
}

/// Synchronous hard-max value iteration on a state reward, followed by an
/// annealed softmax over the final action values.
pub fn value_iteration(reward: &GridMap, cfg: &PlannerConfig) -> Result<Plan> {
    cfg.validate()?;
    if let Some(i) = reward.data().iter().position(|r| !r.is_finite()) {
        return Err(Error::Invalid(format!(
            "reward at cell index {i} is not finite"
        )));
    }
    let shape = reward.shape();
    let n = shape.len();
    let cap = cfg
        .max_sweeps
        .unwrap_or_else(|| default_sweep_cap(reward, cfg));
    let succ = shape.transition_table();
    let r = reward.data();

    let mut v = vec![VALUE_SENTINEL; n];
    let mut v_next = vec![0.0; n];
    let mut q = vec![[0.0; 4]; n];
    let mut residuals = Vec::new();
    loop {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            let next = &succ[s];
            let qs = [
                r[s] + cfg.gamma * v[next[0]],
                r[s] + cfg.gamma * v[next[1]],
                r[s] + cfg.gamma * v[next[2]],
                r[s] + cfg.gamma * v[next[3]],
            ];
            let best = qs[0].max(qs[1]).max(qs[2]).max(qs[3]);
            residual = residual.max((best - v[s]).abs());
            q[s] = qs;
            v_next[s] = best;
        }
        std::mem::swap(&mut v, &mut v_next);
        residuals.push(residual);
        if residual < cfg.epsilon {
            break;
        }
        if residuals.len() >= cap {
            return Err(Error::NoConvergence {
                sweeps: residuals.len(),
                residual,
            });
        }
    }

    let probs = q.iter().map(|qs| annealed_softmax(qs, cfg.beta)).collect();
    Ok(Plan {
        policy: Policy::new(shape, probs)?,
        values: GridMap::from_vec(shape, v)?,
        q,
        sweeps: residuals.len(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Cell, GridShape};
    use proptest::prelude::*;

    fn cfg(gamma: f64, epsilon: f64) -> PlannerConfig {
        PlannerConfig {
            gamma,
            epsilon,
            beta: 1.0,
            max_sweeps: None,
        }
    }

    #[test]
    fn uniform_reward_reaches_geometric_fixed_point() {
        let shape = GridShape::new(4, 5).unwrap();
        let eps = 1e-9;
        let plan = value_iteration(&GridMap::filled(shape, -1.0), &cfg(0.9, eps)).unwrap();
        // residual eps bounds the value error by eps * gamma / (1 - gamma)
        for v in plan.values.data() {
            assert!((v + 10.0).abs() <= eps * 9.0, "{v}");
        }
        assert!(plan.policy.rows().iter().all(|p| *p == [0.25; 4]));
    }

    #[test]
    fn myopic_planner_returns_reward() {
        let shape = GridShape::new(3, 3).unwrap();
        let reward = GridMap::from_fn(shape, |c| (c.row * 3 + c.col) as f64 * 0.5 - 1.0);
        let plan = value_iteration(&reward, &cfg(0.0, 1e-9)).unwrap();
        assert_eq!(plan.values, reward);
        for (i, qs) in plan.q.iter().enumerate() {
            assert!(qs.iter().all(|&q| q == reward.data()[i]));
        }
    }

    #[test]
    fn two_cell_world_by_hand() {
        // V(1) = 1 + 0.5 V(1) -> 2, V(0) = 0 + 0.5 V(1) -> 1
        let shape = GridShape::new(1, 2).unwrap();
        let reward = GridMap::from_vec(shape, vec![0.0, 1.0]).unwrap();
        let plan = value_iteration(&reward, &cfg(0.5, 1e-12)).unwrap();
        assert!((plan.values.get(Cell::new(0, 0)) - 1.0).abs() < 1e-11);
        assert!((plan.values.get(Cell::new(0, 1)) - 2.0).abs() < 1e-11);
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let shape = GridShape::new(2, 2).unwrap();
        let c = PlannerConfig {
            max_sweeps: Some(3),
            ..cfg(0.9, 1e-9)
        };
        match value_iteration(&GridMap::zeros(shape), &c) {
            Err(Error::NoConvergence { sweeps, residual }) => {
                assert_eq!(sweeps, 3);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let shape = GridShape::new(2, 2).unwrap();
        let mut r = GridMap::zeros(shape);
        assert!(value_iteration(
            &r,
            &PlannerConfig {
                beta: 0.0,
                ..cfg(0.9, 1e-6)
            }
        )
        .is_err());
        r.data_mut()[1] = f64::NAN;
        assert!(value_iteration(&r, &cfg(0.9, 1e-6)).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(annealed_softmax(&[3.0; 4], 7.0), [0.25; 4]);
        let p = annealed_softmax(&[1.0, 0.0, 0.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        let expect = [
            e / (e + 3.0),
            1.0 / (e + 3.0),
            1.0 / (e + 3.0),
            1.0 / (e + 3.0),
        ];
        for i in 0..4 {
            assert!((p[i] - expect[i]).abs() < 1e-15);
        }
        assert!((p[0] - 0.4754).abs() < 1e-4 && (p[1] - 0.1749).abs() < 1e-4);
        assert!(annealed_softmax(&[0.0, 0.3, 0.1, -1.0], 100.0)[1] > 0.999);
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(q in prop::array::uniform4(-50.0f64..50.0), shift in -100.0f64..100.0, beta in 0.01f64..20.0) {
            let a = annealed_softmax(&q, beta);
            let b = annealed_softmax(&q.map(|v| v + shift), beta);
            for i in 0..4 {
                prop_assert!((a[i] - b[i]).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn residuals_fall_below_epsilon(seed in 0u64..500, gamma in 0.5f64..0.97) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let shape = GridShape::new(5, 6).unwrap();
            let reward = GridMap::from_fn(shape, |_| rng.random_range(-2.0..1.0));
            let plan = value_iteration(&reward, &cfg(gamma, 1e-8)).unwrap();
            let res = &plan.residuals;
            prop_assert!(*res.last().unwrap() < 1e-8);
            // contraction: after the first sweep the residual never grows
            for w in res[1..].windows(2) {
                prop_assert!(w[1] <= w[0] * gamma * (1.0 + 1e-9) + 1e-12);
            }
            for row in plan.policy.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
