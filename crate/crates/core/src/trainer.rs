//! Maximum-entropy deep IRL training loop.

use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicsConfig;
use crate::mdp::{
    compute_svf, value_iteration, Action, Cell, GridMap, GridShape, PlannerConfig, StateVisitation,
};
use crate::metrics::nll_path;
use crate::model::{inputs_for, IrlModel, Method, ModelMeta};
use crate::network::{Architecture, TwoStageNet};
use crate::par::{self, Exec};
use crate::seed;
use crate::synth::{augment_rotations, Demonstration};
use crate::tensor::{AdamConfig, Gradients, Tensor};

const STREAM_BATCH: u64 = 11;

/// How long the planning horizon of each demonstration is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonPolicy {
    /// The demonstration's own future length.
    DemoLength,
    /// The future truncated to at most this many cells.
    Cap(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Value-iteration stopping threshold.
    pub epsilon: f64,
    /// Annealing schedule `beta(i) = beta0 * (1 + i / tau)`.
    pub beta0: f64,
    pub tau: f64,
    pub seed: u64,
    /// Off trains the environment-only ablation.
    pub use_kinematics: bool,
    pub horizon: HorizonPolicy,
    /// Checkpoint cadence in iterations; zero disables intermediate saves.
    pub checkpoint_every: usize,
    /// Train on all four quarter-turn rotations of each demonstration.
    pub augment_rotations: bool,
    /// Scale of the final layer's initial weights.
    pub output_scale: f64,
    pub kinematics: KinematicsConfig,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            gamma: 0.95,
            epsilon: 1e-6,
            beta0: 1.0,
            tau: 50.0,
            seed: 0,
            use_kinematics: true,
            horizon: HorizonPolicy::DemoLength,
            checkpoint_every: 50,
            augment_rotations: true,
            output_scale: 0.1,
            kinematics: KinematicsConfig::default(),
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.beta0 > 0.0) || !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "annealing needs beta0 > 0 and tau > 0, got {} and {}",
                self.beta0, self.tau
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let HorizonPolicy::Cap(0) = self.horizon {
            return Err(Error::Config("horizon cap must be at least 1".into()));
        }
        self.planner(0).validate()
    }

    pub fn beta(&self, iteration: u64) -> f64 {
        self.beta0 * (1.0 + iteration as f64 / self.tau)
    }

    pub fn planner(&self, iteration: u64) -> PlannerConfig {
        PlannerConfig {
            gamma: self.gamma,
            epsilon: self.epsilon,
            beta: self.beta(iteration),
            max_sweeps: None,
        }
    }

    pub fn method(&self) -> Method {
        if self.use_kinematics {
            Method::Ours
        } else {
            Method::IrlNokin
        }
    }

    pub fn architecture(&self) -> Architecture {
        if self.use_kinematics {
            Architecture::two_stage()
        } else {
            Architecture::env_only()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    /// Freshly initialized network for this configuration.
    pub fn init_network(&self) -> Result<TwoStageNet> {
        TwoStageNet::new(
            self.architecture(),
            self.seed,
            self.adam(),
            self.output_scale,
        )
    }

    /// Settings a checkpoint trained to `iteration` should forecast with.
    pub fn meta(&self, iteration: u64) -> ModelMeta {
        ModelMeta {
            method: self.method(),
            planner: self.planner(iteration),
            kinematics: self.kinematics,
        }
    }
}

/// Demonstration visitation counts along the (possibly capped) future.
pub fn demo_svf(shape: GridShape, future: &[Cell]) -> Result<StateVisitation> {
    let mut counts = GridMap::zeros(shape);
    for &c in future {
        shape.check(c)?;
        counts.set(c, counts.get(c) + 1.0);
    }
    Ok(StateVisitation {
        counts,
        horizon: future.len(),
    })
}

/// A demonstration with its network inputs precomputed.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub env: Tensor,
    pub aux: Option<Tensor>,
    pub start: Cell,
    pub future: Vec<Cell>,
    pub actions: Vec<Action>,
    pub mu_d: GridMap,
}

impl TrainingExample {
    pub fn new(demo: &Demonstration, cfg: &TrainConfig) -> Result<Self> {
        if demo.future.is_empty() {
            return Err(Error::Invalid("demonstration future is empty".into()));
        }
        let h = match cfg.horizon {
            HorizonPolicy::DemoLength => demo.horizon(),
            HorizonPolicy::Cap(n) => demo.horizon().min(n),
        };
        let future = demo.future[..h].to_vec();
        let actions = demo.actions[..h - 1].to_vec();
        let mu_d = demo_svf(demo.world.shape(), &future)?.counts;
        let (env, aux) = if cfg.use_kinematics {
            let inputs = inputs_for(demo, &cfg.kinematics)?;
            (inputs.env, Some(inputs.aux))
        } else {
            (demo.world.env().clone(), None)
        };
        Ok(TrainingExample {
            env,
            aux,
            start: future[0],
            future,
            actions,
            mu_d,
        })
    }

    pub fn horizon(&self) -> usize {
        self.future.len()
    }
}

/// Training examples for `demos`, expanded by rotation when configured.
pub fn prepare_examples(
    demos: &[Demonstration],
    cfg: &TrainConfig,
) -> Result<Vec<TrainingExample>> {
    let per_demo = par::map(cfg.exec, demos, |d| -> Result<Vec<TrainingExample>> {
        if cfg.augment_rotations {
            augment_rotations(d)?
                .iter()
                .map(|r| TrainingExample::new(r, cfg))
                .collect()
        } else {
            Ok(vec![TrainingExample::new(d, cfg)?])
        }
    });
    let mut out = Vec::new();
    for r in per_demo {
        out.extend(r?);
    }
    Ok(out)
}

/// Outcome of one demonstration within a batch.
#[derive(Debug, Clone)]
pub struct ExampleOutcome {
    /// Gradients of the negated log-likelihood.
    pub grads: Gradients,
    /// `dL/dR = mu_D - E[mu]`.
    pub reward_grad: GridMap,
    pub nll: f64,
    pub sweeps: usize,
    pub svf_gap: f64,
}

/// Forward, plan, expected visitation, and backward for one example.
pub fn example_gradient(
    net: &TwoStageNet,
    ex: &TrainingExample,
    planner: &PlannerConfig,
) -> Result<ExampleOutcome> {
    let fwd = net.forward(&ex.env, ex.aux.as_ref())?;
    let reward = fwd.output_map()?;
    let plan = value_iteration(&reward, planner)?;
    let expected = compute_svf(&plan.policy, ex.start, ex.horizon())?;
    let shape = reward.shape();
    let diff: Vec<f64> = ex
        .mu_d
        .data()
        .iter()
        .zip(expected.counts.data())
        .map(|(d, e)| d - e)
        .collect();
    let svf_gap = diff.iter().map(|v| v.abs()).sum();
    // descend on -L, so the output adjoint is -(mu_D - E[mu])
    let grad_out = Tensor::from_vec(
        &[1, shape.rows, shape.cols],
        diff.iter().map(|v| -v).collect(),
    )?;
    let grads = net.backward(&fwd, &grad_out)?;
    let nll = nll_path(&plan.policy, &ex.future, &ex.actions)?;
    Ok(ExampleOutcome {
        grads,
        reward_grad: GridMap::from_vec(shape, diff)?,
        nll,
        sweeps: plan.sweeps,
        svf_gap,
    })
}

/// One row of the training report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iteration: u64,
    pub beta: f64,
    /// Mean per-step NLL of the batch under the current policy.
    pub nll: f64,
    /// Norm of the batch-mean parameter gradient.
    pub grad_norm: f64,
    /// Mean value-iteration sweeps.
    pub sweeps: f64,
    /// Mean `||mu_D - E[mu]||_1`.
    pub svf_gap: f64,
}

/// Batch-mean gradients of iteration `iteration`; parameters are untouched.
pub fn train_step(
    net: &TwoStageNet,
    batch: &[&TrainingExample],
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<(Gradients, TrainRow)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty training batch".into()));
    }
    let wrap = |e: Error| Error::Training {
        iteration,
        source: Box::new(e),
    };
    let planner = cfg.planner(iteration);
    let outcomes = par::map(cfg.exec, batch, |ex| example_gradient(net, ex, &planner));
    let mut total: Option<Gradients> = None;
    let (mut nll, mut sweeps, mut gap) = (0.0, 0.0, 0.0);
    // fixed summation order keeps results independent of the worker count
    for o in outcomes {
        let o = o.map_err(wrap)?;
        match total.as_mut() {
            None => total = Some(o.grads),
            Some(t) => t.accumulate(&o.grads).map_err(wrap)?,
        }
        nll += o.nll;
        sweeps += o.sweeps as f64;
        gap += o.svf_gap;
    }
    let b = batch.len() as f64;
    let mut grads = total.expect("non-empty batch");
    grads.scale(1.0 / b);
    let row = TrainRow {
        iteration,
        beta: planner.beta,
        nll: nll / b,
        grad_norm: grads.norm(),
        sweeps: sweeps / b,
        svf_gap: gap / b,
    };
    Ok((grads, row))
}

/// Per-iteration rows plus wall-clock timings. The CSV export leaves timings
/// out so that identical runs give identical files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub wall_seconds: Vec<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,beta,nll,grad_norm,sweeps,svf_gap\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.beta, r.nll, r.grad_norm, r.sweeps, r.svf_gap
            ));
        }
        s
    }

    pub fn timings_json(&self) -> String {
        let v: Vec<serde_json::Value> = self
            .rows
            .iter()
            .zip(&self.wall_seconds)
            .map(|(r, t)| serde_json::json!({"iteration": r.iteration, "wall_seconds": t}))
            .collect();
        serde_json::to_string_pretty(&v).expect("timings serialize")
    }
}

/// Batch indices of iteration `iteration`, drawn without replacement.
pub fn batch_indices(n: usize, cfg: &TrainConfig, iteration: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, STREAM_BATCH, iteration));
    let k = cfg.batch_size.min(n);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Runs iterations `start + 1 ..= start + cfg.iterations`, calling
/// `on_checkpoint` every `checkpoint_every` iterations and after the last.
pub fn train_examples(
    net: &mut TwoStageNet,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    start: u64,
    mut on_checkpoint: impl FnMut(u64, &TwoStageNet) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut report = TrainReport::default();
    for k in 1..=cfg.iterations as u64 {
        let i = start + k;
        let t0 = Instant::now();
        let batch: Vec<&TrainingExample> = batch_indices(examples.len(), cfg, i)
            .into_iter()
            .map(|j| &examples[j])
            .collect();
        let (grads, row) = train_step(net, &batch, cfg, i)?;
        net.store_mut()
            .update_parameters(&grads)
            .map_err(|e| Error::Training {
                iteration: i,
                source: Box::new(e),
            })?;
        report.rows.push(row);
        report.wall_seconds.push(t0.elapsed().as_secs_f64());
        let last = k == cfg.iterations as u64;
        if last || (cfg.checkpoint_every > 0 && k % cfg.checkpoint_every as u64 == 0) {
            on_checkpoint(i, net)?;
        }
    }
    Ok(report)
}

/// Trains a fresh model on `demos`; returns it with its report.
pub fn train(demos: &[Demonstration], cfg: &TrainConfig) -> Result<(IrlModel, TrainReport)> {
    train_with(demos, cfg, |_, _| Ok(()))
}

pub fn train_with(
    demos: &[Demonstration],
    cfg: &TrainConfig,
    on_checkpoint: impl FnMut(u64, &TwoStageNet) -> Result<()>,
) -> Result<(IrlModel, TrainReport)> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let examples = prepare_examples(demos, cfg)?;
    let mut net = cfg.init_network()?;
    let report = train_examples(&mut net, &examples, cfg, 0, on_checkpoint)?;
    let model = IrlModel::new(net, cfg.meta(cfg.iterations as u64))?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{PastTrack, TrackSample};
    use crate::mdp::GridWorld;
    use crate::synth::ScenarioTag;

    fn flat_demo(n: usize, future: Vec<Cell>, actions: Vec<Action>) -> Demonstration {
        let world = GridWorld::new(Tensor::filled(&[5, n, n], 0.5), 1.0).unwrap();
        let s = future[0];
        let (x, y) = world.cell_center(s);
        let past = PastTrack::new(
            (0..=10)
                .map(|k| TrackSample {
                    t: k as f64 * 0.1,
                    x: x - (10 - k) as f64 * 0.2,
                    y,
                })
                .collect(),
        )
        .unwrap();
        Demonstration {
            world,
            past,
            future,
            actions,
            speed: 2.0,
            seed: 0,
            tag: ScenarioTag::Straight,
        }
    }

    #[test]
    fn demo_svf_counts() {
        let shape = GridShape::new(8, 8).unwrap();
        let path: Vec<Cell> = (0..5).map(|c| Cell::new(2, c)).collect();
        let svf = demo_svf(shape, &path).unwrap();
        assert_eq!(svf.mass(), 5.0);
        assert!(path.iter().all(|&c| svf.counts.get(c) == 1.0));
        let back = vec![Cell::new(1, 1), Cell::new(1, 2), Cell::new(1, 1)];
        assert_eq!(
            demo_svf(shape, &back).unwrap().counts.get(Cell::new(1, 1)),
            2.0
        );
    }

    #[test]
    fn beta_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.beta(0), 1.0);
        assert_eq!(cfg.beta(50), 2.0);
        assert_eq!(cfg.beta(300), 7.0);
    }

    #[test]
    fn visited_but_unexpected_cell_gets_positive_gradient() {
        let future: Vec<Cell> = (2..6).map(|c| Cell::new(4, c)).collect();
        let demo = flat_demo(8, future, vec![Action::Right; 3]);
        let cfg = TrainConfig {
            augment_rotations: false,
            ..TrainConfig::default()
        };
        let ex = TrainingExample::new(&demo, &cfg).unwrap();
        let net = cfg.init_network().unwrap();
        let o = example_gradient(&net, &ex, &cfg.planner(1)).unwrap();
        // (4, 5) is three steps away, so E[mu] there is below one visit
        assert!(o.reward_grad.get(Cell::new(4, 5)) > 0.0);
        assert!(o.reward_grad.get(Cell::new(0, 0)) <= 0.0);
        assert!(o.reward_grad.sum().abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_leave_parameters() {
        let future: Vec<Cell> = (2..6).map(|c| Cell::new(4, c)).collect();
        let demo = flat_demo(8, future, vec![Action::Right; 3]);
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let (model, report) = train(&[demo], &cfg).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(model.net, cfg.init_network().unwrap());
    }

    #[test]
    fn batches_are_seeded_and_distinct() {
        let cfg = TrainConfig::default();
        assert_eq!(batch_indices(100, &cfg, 3), batch_indices(100, &cfg, 3));
        assert_ne!(batch_indices(100, &cfg, 3), batch_indices(100, &cfg, 4));
        assert_eq!(batch_indices(5, &cfg, 1), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn horizon_cap_truncates() {
        let future: Vec<Cell> = (0..6).map(|c| Cell::new(4, c)).collect();
        let demo = flat_demo(8, future, vec![Action::Right; 5]);
        let cfg = TrainConfig {
            horizon: HorizonPolicy::Cap(3),
            ..TrainConfig::default()
        };
        let ex = TrainingExample::new(&demo, &cfg).unwrap();
        assert_eq!(ex.horizon(), 3);
        assert_eq!(ex.actions.len(), 2);
        assert_eq!(ex.mu_d.sum(), 3.0);
    }
}
