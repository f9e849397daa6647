use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, Cell, GridMap, Policy};
use crate::error::{Error, Result};

/// Expected visits per cell over a horizon; total mass equals the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVisitation {
    pub counts: GridMap,
    pub horizon: usize,
}

impl StateVisitation {
    pub fn mass(&self) -> f64 {
        self.counts.sum()
    }
}

fn propagate(policy: &Policy, mu: &[f64], succ: &[[usize; 4]], out: &mut [f64]) {
    out.fill(0.0);
    for (s, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let p = &policy.rows()[s];
        for a in 0..4 {
            out[succ[s][a]] += m * p[a];
        }
    }
}

/// `sum_{t=0}^{horizon-1} mu_t` with `mu_0` a point mass at `start`.
pub fn compute_svf(policy: &Policy, start: Cell, horizon: usize) -> Result<StateVisitation> {
    let shape = policy.shape();
    shape.check(start)?;
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let succ = shape.transition_table();
    let mut mu = vec![0.0; shape.len()];
    mu[shape.index(start)] = 1.0;
    let mut next = vec![0.0; shape.len()];
    let mut total = mu.clone();
    for _ in 1..horizon {
        propagate(policy, &mu, &succ, &mut next);
        std::mem::swap(&mut mu, &mut next);
        for (t, m) in total.iter_mut().zip(&mu) {
            *t += m;
        }
    }
    Ok(StateVisitation {
        counts: GridMap::from_vec(shape, total)?,
        horizon,
    })
}

/// Exact state distribution after `steps` transitions from `start`.
pub fn state_distribution(policy: &Policy, start: Cell, steps: usize) -> Result<GridMap> {
    let shape = policy.shape();
    shape.check(start)?;
    let succ = shape.transition_table();
    let mut mu = vec![0.0; shape.len()];
    mu[shape.index(start)] = 1.0;
    let mut next = vec![0.0; shape.len()];
    for _ in 0..steps {
        propagate(policy, &mu, &succ, &mut next);
        std::mem::swap(&mut mu, &mut next);
    }
    GridMap::from_vec(shape, mu)
}

/// A sampled path: `cells[0]` is the start, `actions[t]` leads from `cells[t]` to `cells[t+1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rollout {
    pub cells: Vec<Cell>,
    pub actions: Vec<Action>,
}

fn draw(probs: &[f64; 4], u: f64) -> Action {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return Action::ALL[i];
        }
    }
    Action::ALL[last]
}

/// Samples a `horizon`-cell path (start included) from `policy`.
pub fn rollout<R: Rng + ?Sized>(
    policy: &Policy,
    start: Cell,
    horizon: usize,
    rng: &mut R,
) -> Rollout {
    let shape = policy.shape();
    let mut cells = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon.saturating_sub(1));
    if horizon == 0 {
        return Rollout { cells, actions };
    }
    let mut cur = start;
    cells.push(cur);
    for _ in 1..horizon {
        let a = draw(policy.probs(cur), rng.random::<f64>());
        cur = shape.next(cur, a);
        actions.push(a);
        cells.push(cur);
    }
    Rollout { cells, actions }
}

pub fn sample_trajectory(
    policy: &Policy,
    start: Cell,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Cell>> {
    policy.shape().check(start)?;
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rollout(policy, start, horizon, &mut rng).cells)
}
