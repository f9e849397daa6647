//! Forecast evaluation: per-step NLL, Hausdorff distance over sampled
//! trajectories, and entropy of the terminal state distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rollout, state_distribution, Action, Cell, GridWorld, Policy};
use crate::model::Predictor;
use crate::par::{self, Exec};
use crate::seed;
use crate::synth::{Demonstration, ScenarioTag};

/// `-(1/A) sum_t ln pi(a_t | s_t)` over the `A` actions of a path. A path
/// without actions scores 0; an impossible action scores `+inf`.
pub fn nll_path(policy: &Policy, cells: &[Cell], actions: &[Action]) -> Result<f64> {
    if cells.len() != actions.len() + 1 {
        return Err(Error::Invalid(format!(
            "{} actions for {} cells",
            actions.len(),
            cells.len()
        )));
    }
    if actions.is_empty() {
        return Ok(0.0);
    }
    let shape = policy.shape();
    let mut terms = Vec::with_capacity(actions.len());
    for (c, a) in cells.iter().zip(actions) {
        shape.check(*c)?;
        let p = policy.prob(*c, *a);
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        terms.push(-p.ln());
    }
    Ok(running_mean(&terms))
}

/// Incremental mean; exact for constant sequences, `+inf` if any term is.
pub fn running_mean(values: &[f64]) -> f64 {
    if values.contains(&f64::INFINITY) {
        return f64::INFINITY;
    }
    let mut m = 0.0;
    for (k, v) in values.iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

/// Per-step NLL of a demonstration's future under `policy`.
pub fn nll(policy: &Policy, demo: &Demonstration) -> Result<f64> {
    nll_path(policy, &demo.future, &demo.actions)
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid(
            "Hausdorff distance needs two non-empty sets".into(),
        ));
    }
    let directed = |p: &[(f64, f64)], q: &[(f64, f64)]| {
        p.iter()
            .map(|&(x, y)| {
                q.iter()
                    .map(|&(u, v)| (x - u).hypot(y - v))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// Cell centers in meters.
pub fn cell_points(world: &GridWorld, cells: &[Cell]) -> Vec<(f64, f64)> {
    cells.iter().map(|&c| world.cell_center(c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStat {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl MeanStat {
    pub fn of(values: &[f64]) -> MeanStat {
        let n = values.len();
        if n == 0 {
            return MeanStat {
                mean: f64::NAN,
                std_err: f64::NAN,
                n,
            };
        }
        let mean = running_mean(values);
        let std_err = if n > 1 && mean.is_finite() {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else if mean.is_finite() {
            0.0
        } else {
            f64::INFINITY
        };
        MeanStat { mean, std_err, n }
    }
}

/// Hausdorff distance between the demonstrated future and `n_samples`
/// policy rollouts of the same length from the same start.
pub fn mean_sampled_hd(
    policy: &Policy,
    demo: &Demonstration,
    n_samples: usize,
    seed: u64,
) -> Result<MeanStat> {
    if n_samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    policy.shape().check(demo.start())?;
    let truth = cell_points(&demo.world, &demo.future);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hds = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let path = rollout(policy, demo.start(), demo.horizon(), &mut rng);
        hds.push(hausdorff(&truth, &cell_points(&demo.world, &path.cells))?);
    }
    Ok(MeanStat::of(&hds))
}

/// Shannon entropy (nats) of the exact state distribution after `steps` moves.
pub fn terminal_entropy(policy: &Policy, start: Cell, steps: usize) -> Result<f64> {
    let mu = state_distribution(policy, start, steps)?;
    Ok(-mu
        .data()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 1000,
            seed: 0,
            exec: Exec::Parallel,
        }
    }
}

/// Metrics of one method on one demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoMetrics {
    pub index: usize,
    pub tag: ScenarioTag,
    /// `None` for methods without an action distribution.
    pub nll: Option<f64>,
    pub hd: f64,
    pub hd_std_err: f64,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub method: String,
    pub demos: Vec<DemoMetrics>,
}

/// Aggregate row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub nll: Option<MeanStat>,
    /// Demonstrations whose NLL was infinite.
    pub nll_infinite: usize,
    pub hd: MeanStat,
    pub entropy: Option<MeanStat>,
}

impl MethodEval {
    pub fn summary(&self) -> SummaryRow {
        let nlls: Vec<f64> = self.demos.iter().filter_map(|d| d.nll).collect();
        let ents: Vec<f64> = self.demos.iter().filter_map(|d| d.entropy).collect();
        let hds: Vec<f64> = self.demos.iter().map(|d| d.hd).collect();
        SummaryRow {
            method: self.method.clone(),
            nll: (!nlls.is_empty()).then(|| MeanStat::of(&nlls)),
            nll_infinite: nlls.iter().filter(|v| v.is_infinite()).count(),
            hd: MeanStat::of(&hds),
            entropy: (!ents.is_empty()).then(|| MeanStat::of(&ents)),
        }
    }
}

/// Seed of the rollouts drawn for demonstration `index`.
pub fn sample_seed(cfg: &EvalConfig, index: usize) -> u64 {
    seed::derive(cfg.seed, 21, index as u64)
}

/// Evaluates a policy-producing method on every demonstration.
pub fn evaluate(
    name: &str,
    predictor: &dyn Predictor,
    demos: &[Demonstration],
    cfg: &EvalConfig,
) -> Result<MethodEval> {
    let idx: Vec<usize> = (0..demos.len()).collect();
    let rows = par::map(cfg.exec, &idx, |&i| -> Result<DemoMetrics> {
        let d = &demos[i];
        let policy = predictor.policy(d)?;
        let hd = mean_sampled_hd(&policy, d, cfg.samples, sample_seed(cfg, i))?;
        Ok(DemoMetrics {
            index: i,
            tag: d.tag,
            nll: Some(nll(&policy, d)?),
            hd: hd.mean,
            hd_std_err: hd.std_err,
            entropy: Some(terminal_entropy(&policy, d.start(), d.horizon() - 1)?),
        })
    });
    Ok(MethodEval {
        method: name.to_string(),
        demos: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Methods in table order, each with per-demonstration metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub methods: Vec<MethodEval>,
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "N.A.".into(),
    }
}

impl EvalResult {
    pub fn summaries(&self) -> Vec<SummaryRow> {
        self.methods.iter().map(|m| m.summary()).collect()
    }

    /// One row per method: mean and standard error of each metric.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,nll,nll_se,hd,hd_se,entropy,entropy_se\n");
        for r in self.summaries() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                fmt_opt(r.nll.map(|m| m.mean)),
                fmt_opt(r.nll.map(|m| m.std_err)),
                r.hd.mean,
                r.hd.std_err,
                fmt_opt(r.entropy.map(|m| m.mean)),
                fmt_opt(r.entropy.map(|m| m.std_err)),
            ));
        }
        s
    }

    pub fn per_demo_csv(&self) -> String {
        let mut s = String::from("method,demo,tag,nll,hd,hd_se,entropy\n");
        for m in &self.methods {
            for d in &m.demos {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    m.method,
                    d.index,
                    d.tag,
                    fmt_opt(d.nll),
                    d.hd,
                    d.hd_std_err,
                    fmt_opt(d.entropy)
                ));
            }
        }
        s
    }

    /// Aggregate rows as JSON; missing NLL is the string `"N.A."`.
    pub fn summary_json(&self) -> String {
        let stat = |m: Option<MeanStat>| match m {
            Some(m) if m.mean.is_finite() => {
                serde_json::json!({"mean": m.mean, "std_err": m.std_err})
            }
            Some(_) => serde_json::json!({"mean": "inf", "std_err": "inf"}),
            None => serde_json::json!("N.A."),
        };
        let rows: Vec<serde_json::Value> = self
            .summaries()
            .into_iter()
            .map(|r| {
                serde_json::json!({
                    "method": r.method,
                    "nll": stat(r.nll),
                    "nll_infinite": r.nll_infinite,
                    "hd": stat(Some(r.hd)),
                    "entropy": stat(r.entropy),
                    "demos": r.hd.n,
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({ "methods": rows }))
            .expect("summary serializes")
    }
}
