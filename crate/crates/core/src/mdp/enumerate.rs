use super::{Action, Cell, GridMap};
use crate::error::{Error, Result};

/// Largest number of steps enumerated (4^6 = 4096 paths).
pub const MAX_ENUMERATION_STEPS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub actions: Vec<Action>,
    /// `steps + 1` cells, start included.
    pub cells: Vec<Cell>,
    pub probability: f64,
}

/// Exact maximum-entropy distribution `P(path) = exp(R(path)) / Z` over every
/// action sequence of length `steps` from `start`, where `R` sums the state
/// reward over all visited cells (start included).
pub fn enumerate_trajectory_distribution(
    reward: &GridMap,
    start: Cell,
    steps: usize,
) -> Result<Vec<EnumeratedPath>> {
    let shape = reward.shape();
    shape.check(start)?;
    if steps > MAX_ENUMERATION_STEPS {
        return Err(Error::TooLarge(format!(
            "{steps} steps would enumerate 4^{steps} = {} paths (limit {} steps)",
            4u64.saturating_pow(steps as u32),
            MAX_ENUMERATION_STEPS
        )));
    }
    let count = 4usize.pow(steps as u32);
    let mut paths = Vec::with_capacity(count);
    let mut log_weights = Vec::with_capacity(count);
    for code in 0..count {
        let mut rest = code;
        let mut cur = start;
        let mut total = reward.get(start);
        let mut actions = Vec::with_capacity(steps);
        let mut cells = vec![start];
        for _ in 0..steps {
            let a = Action::ALL[rest % 4];
            rest /= 4;
            cur = shape.next(cur, a);
            total += reward.get(cur);
            actions.push(a);
            cells.push(cur);
        }
        log_weights.push(total);
        paths.push(EnumeratedPath {
            actions,
            cells,
            probability: 0.0,
        });
    }
    let m = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = log_weights.iter().map(|w| (w - m).exp()).sum();
    for (p, w) in paths.iter_mut().zip(&log_weights) {
        p.probability = (w - m).exp() / z;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::GridShape;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_reward_gives_uniform_paths() {
        let shape = GridShape::new(5, 5).unwrap();
        let paths =
            enumerate_trajectory_distribution(&GridMap::filled(shape, -0.7), Cell::new(1, 1), 4)
                .unwrap();
        assert_eq!(paths.len(), 256);
        for p in &paths {
            assert!((p.probability - 1.0 / 256.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_is_softmax_of_successor_reward() {
        let shape = GridShape::new(3, 3).unwrap();
        let reward = GridMap::from_fn(shape, |c| c.row as f64 - 0.5 * c.col as f64);
        let start = Cell::new(1, 1);
        let paths = enumerate_trajectory_distribution(&reward, start, 1).unwrap();
        let w: Vec<f64> = Action::ALL
            .iter()
            .map(|&a| reward.get(shape.next(start, a)).exp())
            .collect();
        let z: f64 = w.iter().sum();
        for p in &paths {
            let expect = w[p.actions[0].index()] / z;
            assert!((p.probability - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn random_rewards_normalize() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let shape = GridShape::new(3, 3).unwrap();
        let reward = GridMap::from_fn(shape, |_| rng.random_range(-3.0..3.0));
        let paths = enumerate_trajectory_distribution(&reward, Cell::new(0, 2), 4).unwrap();
        let total: f64 = paths.iter().map(|p| p.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refuses_long_horizons() {
        let shape = GridShape::new(5, 5).unwrap();
        let err = enumerate_trajectory_distribution(&GridMap::zeros(shape), Cell::new(0, 0), 7)
            .unwrap_err();
        assert!(matches!(err, Error::TooLarge(_)));
        assert!(err.to_string().contains("16384"));
    }
}
