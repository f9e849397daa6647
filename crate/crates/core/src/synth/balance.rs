use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::demo::{Demonstration, ScenarioTag};
use crate::error::{Error, Result};

/// Target share of each scenario tag; shares are normalized by their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagFractions {
    pub straight: f64,
    pub curve: f64,
    pub intersection: f64,
}

impl TagFractions {
    pub fn equal() -> Self {
        TagFractions {
            straight: 1.0 / 3.0,
            curve: 1.0 / 3.0,
            intersection: 1.0 / 3.0,
        }
    }

    pub fn get(&self, tag: ScenarioTag) -> f64 {
        match tag {
            ScenarioTag::Straight => self.straight,
            ScenarioTag::Curve => self.curve,
            ScenarioTag::Intersection => self.intersection,
        }
    }

    fn normalized(&self) -> Result<[f64; 3]> {
        let raw = ScenarioTag::ALL.map(|t| self.get(t));
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "tag fractions must be non-negative, got {raw:?}"
            )));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("tag fractions sum to zero".into()));
        }
        Ok(raw.map(|v| v / total))
    }
}

/// Largest-remainder apportionment of `total` items over `shares`.
pub fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // stable sort keeps ties in tag order
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite shares")
    });
    for i in order {
        if left == 0 {
            break;
        }
        if shares[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Indices into `tags` resampled to match `targets` with `total` items.
/// Classes are drawn without replacement while they have enough members;
/// the returned indices are sorted.
pub fn balance_indices(
    tags: &[ScenarioTag],
    targets: &TagFractions,
    total: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let shares = targets.normalized()?;
    let pools: Vec<Vec<usize>> = ScenarioTag::ALL
        .iter()
        .map(|&t| (0..tags.len()).filter(|&i| tags[i] == t).collect())
        .collect();
    let missing: Vec<&str> = ScenarioTag::ALL
        .iter()
        .filter(|t| shares[t.index()] > 0.0 && pools[t.index()].is_empty())
        .map(|t| t.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "no demonstrations tagged {} to balance with",
            missing.join(", ")
        )));
    }
    let counts = apportion(&shares, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total);
    for (pool, &k) in pools.iter().zip(&counts) {
        let n = pool.len();
        if k <= n {
            out.extend(sample(&mut rng, n, k).into_iter().map(|j| pool[j]));
        } else {
            out.extend(pool.iter().copied());
            out.extend((0..k - n).map(|_| pool[rng.random_range(0..n)]));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Resamples `demos` to the target tag fractions, keeping the list length.
pub fn balance_dataset(
    demos: &[Demonstration],
    targets: &TagFractions,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    let tags: Vec<ScenarioTag> = demos.iter().map(|d| d.tag).collect();
    let idx = balance_indices(&tags, targets, demos.len(), seed)?;
    Ok(idx.into_iter().map(|i| demos[i].clone()).collect())
}
