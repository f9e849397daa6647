use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicsConfig;
use crate::mdp::{Action, Cell, GridShape, PlannerConfig, Policy};
use crate::model::{inputs_for, Method, ModelMeta, Predictor};
use crate::network::{Architecture, NetKind, TwoStageNet};
use crate::par::{self, Exec};
use crate::seed;
use crate::synth::{augment_rotations, Demonstration};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{AdamConfig, Gradients, Tensor};

const STREAM_VALIDATION: u64 = 31;
const STREAM_BATCH: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    /// Upper bound on optimizer steps.
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Share of demonstrations held out for early stopping.
    pub validation_fraction: f64,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    /// Validation rounds without improvement before stopping.
    pub patience: usize,
    pub augment_rotations: bool,
    pub output_scale: f64,
    pub kinematics: KinematicsConfig,
    pub exec: Exec,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            iterations: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            validation_fraction: 0.1,
            eval_every: 10,
            patience: 5,
            augment_rotations: true,
            output_scale: 0.1,
            kinematics: KinematicsConfig::default(),
            exec: Exec::Parallel,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch size and validation cadence must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn meta(&self) -> ModelMeta {
        ModelMeta {
            method: Method::Bc,
            planner: PlannerConfig::default(),
            kinematics: self.kinematics,
        }
    }
}

/// Per-cell softmax over four action logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BcModel {
    pub net: TwoStageNet,
    pub kinematics: KinematicsConfig,
}

fn softmax4(z: [f64; 4]) -> [f64; 4] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

fn logits_to_policy(out: &Tensor) -> Result<Policy> {
    let (c, rows, cols) = out.dims3()?;
    if c != 4 {
        return Err(Error::shape("action logits", &[4, rows, cols], out.shape()));
    }
    let plane = rows * cols;
    let d = out.data();
    let probs = (0..plane)
        .map(|i| softmax4([d[i], d[plane + i], d[2 * plane + i], d[3 * plane + i]]))
        .collect();
    Policy::new(GridShape::new(rows, cols)?, probs)
}

impl BcModel {
    pub fn new(net: TwoStageNet, kinematics: KinematicsConfig) -> Result<Self> {
        if net.kind() != NetKind::Policy {
            return Err(Error::Config(format!(
                "behavior cloning needs a Policy network, got {:?}",
                net.kind()
            )));
        }
        Ok(BcModel { net, kinematics })
    }

    pub fn to_checkpoint(&self, iteration: u64) -> Checkpoint {
        let meta = ModelMeta {
            method: Method::Bc,
            planner: PlannerConfig::default(),
            kinematics: self.kinematics,
        };
        self.net.to_checkpoint(
            iteration,
            serde_json::to_value(meta).expect("meta serializes"),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (net, extra) = TwoStageNet::from_checkpoint(ck)?;
        let meta: ModelMeta = serde_json::from_value(extra).map_err(|e| {
            Error::Config(format!("checkpoint carries no usable model settings: {e}"))
        })?;
        if meta.method != Method::Bc {
            return Err(Error::Config(format!(
                "expected a bc checkpoint, got {}",
                meta.method.as_str()
            )));
        }
        Self::new(net, meta.kinematics)
    }
}

impl Predictor for BcModel {
    fn policy(&self, demo: &Demonstration) -> Result<Policy> {
        let inputs = inputs_for(demo, &self.kinematics)?;
        logits_to_policy(&self.net.forward(&inputs.env, Some(&inputs.aux))?.output)
    }
}

/// A demonstration's inputs with its state-action pairs.
#[derive(Debug, Clone)]
pub struct BcExample {
    pub env: Tensor,
    pub aux: Tensor,
    pub cells: Vec<Cell>,
    pub actions: Vec<Action>,
}

impl BcExample {
    pub fn new(demo: &Demonstration, kin: &KinematicsConfig) -> Result<Self> {
        let inputs = inputs_for(demo, kin)?;
        let n = demo.actions.len();
        Ok(BcExample {
            env: inputs.env,
            aux: inputs.aux,
            cells: demo.future[..n].to_vec(),
            actions: demo.actions.clone(),
        })
    }
}

/// Mean cross-entropy over the example's actions and its parameter gradients.
pub fn bc_example_gradient(net: &TwoStageNet, ex: &BcExample) -> Result<(f64, Gradients)> {
    let fwd = net.forward(&ex.env, Some(&ex.aux))?;
    let (_, rows, cols) = fwd.output.dims3()?;
    let plane = rows * cols;
    let d = fwd.output.data();
    let mut grad = Tensor::zeros(fwd.output.shape());
    let g = grad.data_mut();
    let n = ex.actions.len().max(1) as f64;
    let mut loss = 0.0;
    for (&c, &a) in ex.cells.iter().zip(&ex.actions) {
        let i = c.row * cols + c.col;
        let p = softmax4([d[i], d[plane + i], d[2 * plane + i], d[3 * plane + i]]);
        loss -= p[a.index()].ln();
        for k in 0..4 {
            let target = if k == a.index() { 1.0 } else { 0.0 };
            g[k * plane + i] += (p[k] - target) / n;
        }
    }
    Ok((loss / n, net.backward(&fwd, &grad)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcRow {
    pub iteration: u64,
    pub train_loss: f64,
    /// Mean validation NLL, present on validation rounds.
    pub val_nll: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    pub rows: Vec<BcRow>,
    /// Iteration whose parameters were kept.
    pub best_iteration: u64,
}

fn mean_loss(net: &TwoStageNet, examples: &[BcExample], exec: Exec) -> Result<f64> {
    let losses = par::map(exec, examples, |ex| -> Result<f64> {
        Ok(bc_example_gradient(net, ex)?.0)
    });
    let mut s = 0.0;
    for l in losses {
        s += l?;
    }
    Ok(s / examples.len() as f64)
}

/// Behavior cloning with Adam and validation-based early stopping.
pub fn bc_train(demos: &[Demonstration], cfg: &BcConfig) -> Result<(BcModel, BcReport)> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
        cfg.seed,
        STREAM_VALIDATION,
        0,
    )));
    let n_val = ((demos.len() as f64) * cfg.validation_fraction).round() as usize;
    let n_val = n_val.min(demos.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let kin = cfg.kinematics;
    let train_sets = par::map(cfg.exec, train_idx, |&i| -> Result<Vec<BcExample>> {
        if cfg.augment_rotations {
            augment_rotations(&demos[i])?
                .iter()
                .map(|d| BcExample::new(d, &kin))
                .collect()
        } else {
            Ok(vec![BcExample::new(&demos[i], &kin)?])
        }
    });
    let mut train = Vec::new();
    for s in train_sets {
        train.extend(s?);
    }
    let val: Vec<BcExample> = par::map(cfg.exec, val_idx, |&i| BcExample::new(&demos[i], &kin))
        .into_iter()
        .collect::<Result<_>>()?;

    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut net = TwoStageNet::new(Architecture::policy(), cfg.seed, adam, cfg.output_scale)?;
    let mut report = BcReport::default();
    let mut best = (f64::INFINITY, net.clone(), 0u64);
    let mut stale = 0;
    for i in 1..=cfg.iterations as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, STREAM_BATCH, i));
        let k = cfg.batch_size.min(train.len());
        let mut idx = rand::seq::index::sample(&mut rng, train.len(), k).into_vec();
        idx.sort_unstable();
        let outs = par::map(cfg.exec, &idx, |&j| bc_example_gradient(&net, &train[j]));
        let mut total: Option<Gradients> = None;
        let mut loss = 0.0;
        for o in outs {
            let (l, g) = o.map_err(|e| Error::Training {
                iteration: i,
                source: Box::new(e),
            })?;
            loss += l;
            match total.as_mut() {
                None => total = Some(g),
                Some(t) => t.accumulate(&g)?,
            }
        }
        let mut grads = total.expect("non-empty batch");
        grads.scale(1.0 / k as f64);
        net.store_mut().update_parameters(&grads)?;

        let mut row = BcRow {
            iteration: i,
            train_loss: loss / k as f64,
            val_nll: None,
        };
        if !val.is_empty() && i % cfg.eval_every as u64 == 0 {
            let v = mean_loss(&net, &val, cfg.exec)?;
            row.val_nll = Some(v);
            if v < best.0 {
                best = (v, net.clone(), i);
                stale = 0;
            } else {
                stale += 1;
            }
        }
        report.rows.push(row);
        if stale >= cfg.patience {
            break;
        }
    }
    let net = if val.is_empty() || best.2 == 0 {
        report.best_iteration = report.rows.last().map_or(0, |r| r.iteration);
        net
    } else {
        report.best_iteration = best.2;
        best.1
    };
    Ok((BcModel::new(net, cfg.meta().kinematics)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{PastTrack, TrackSample};
    use crate::mdp::GridWorld;
    use crate::synth::ScenarioTag;

    fn rightward(n: usize, row: usize, len: usize) -> Demonstration {
        let world = GridWorld::new(Tensor::filled(&[5, n, n], 0.3), 1.0).unwrap();
        let future: Vec<Cell> = (0..len).map(|c| Cell::new(row, c)).collect();
        let (x, y) = world.cell_center(future[0]);
        let past = PastTrack::new(
            (0..=50)
                .map(|k| TrackSample {
                    t: k as f64 * 0.1,
                    x: x - (50 - k) as f64 * 0.3,
                    y,
                })
                .collect(),
        )
        .unwrap();
        Demonstration {
            world,
            past,
            future,
            actions: vec![Action::Right; len - 1],
            speed: 3.0,
            seed: row as u64,
            tag: ScenarioTag::Straight,
        }
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let d = rightward(10, 4, 8);
        let cfg = BcConfig::default();
        let net = TwoStageNet::new(
            Architecture::policy(),
            3,
            AdamConfig::default(),
            cfg.output_scale,
        )
        .unwrap();
        let ex = BcExample::new(&d, &cfg.kinematics).unwrap();
        let (loss, grads) = bc_example_gradient(&net, &ex).unwrap();
        assert!((loss - 4f64.ln()).abs() < 0.1, "{loss}");
        assert!(grads.norm() > 0.0);
    }

    #[test]
    fn learns_a_constant_action() {
        let demos: Vec<_> = (0..10).map(|r| rightward(10, r, 9)).collect();
        let cfg = BcConfig {
            iterations: 150,
            batch_size: 8,
            learning_rate: 5e-3,
            validation_fraction: 0.0,
            augment_rotations: false,
            ..BcConfig::default()
        };
        let (model, report) = bc_train(&demos, &cfg).unwrap();
        assert!(report.rows.last().unwrap().train_loss < 0.1);
        let pol = model.policy(&demos[3]).unwrap();
        for c in &demos[3].future[..8] {
            assert!(pol.prob(*c, Action::Right) > 0.9, "{:?}", pol.probs(*c));
        }
    }

    #[test]
    fn early_stopping_keeps_best_and_round_trips() {
        let demos: Vec<_> = (0..10).map(|r| rightward(10, r, 6)).collect();
        let cfg = BcConfig {
            iterations: 40,
            batch_size: 4,
            validation_fraction: 0.2,
            eval_every: 5,
            patience: 2,
            augment_rotations: false,
            ..BcConfig::default()
        };
        let (model, report) = bc_train(&demos, &cfg).unwrap();
        let vals: Vec<(u64, f64)> = report
            .rows
            .iter()
            .filter_map(|r| r.val_nll.map(|v| (r.iteration, v)))
            .collect();
        let best = vals
            .iter()
            .cloned()
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert_eq!(report.best_iteration, best.0);
        let back = BcModel::from_checkpoint(&model.to_checkpoint(report.best_iteration)).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_bad_config() {
        let d = vec![rightward(8, 2, 5)];
        for cfg in [
            BcConfig {
                batch_size: 0,
                ..BcConfig::default()
            },
            BcConfig {
                validation_fraction: 1.0,
                ..BcConfig::default()
            },
            BcConfig {
                learning_rate: 0.0,
                ..BcConfig::default()
            },
        ] {
            assert!(matches!(bc_train(&d, &cfg), Err(Error::Config(_))));
        }
    }
}
