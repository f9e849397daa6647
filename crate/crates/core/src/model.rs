//! Inference-side view of the learned and trivial predictors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    aux_channels, kinematic_context, KinematicContext, KinematicsConfig, PastTrack,
};
use crate::mdp::{value_iteration, Cell, GridMap, GridWorld, PlannerConfig, Policy};
use crate::network::{NetKind, TwoStageNet};
use crate::synth::Demonstration;
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::Tensor;

/// Network inputs for one vehicle context. Every learned method builds its
/// inputs here so that they see identical stacks.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoInputs {
    pub env: Tensor,
    /// Positional then kinematic channels.
    pub aux: Tensor,
    pub context: KinematicContext,
}

pub fn demo_inputs(
    world: &GridWorld,
    start: Cell,
    past: &PastTrack,
    kin: &KinematicsConfig,
) -> Result<DemoInputs> {
    let context = kinematic_context(past, kin)?;
    Ok(DemoInputs {
        env: world.env().clone(),
        aux: aux_channels(world, start, &context)?,
        context,
    })
}

pub fn inputs_for(demo: &Demonstration, kin: &KinematicsConfig) -> Result<DemoInputs> {
    demo_inputs(&demo.world, demo.start(), &demo.past, kin)
}

/// Anything that yields a per-cell action distribution for a demonstration context.
pub trait Predictor: Sync {
    fn policy(&self, demo: &Demonstration) -> Result<Policy>;
}

/// Uniform over the four actions everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPredictor;

impl Predictor for UniformPredictor {
    fn policy(&self, demo: &Demonstration) -> Result<Policy> {
        Ok(Policy::uniform(demo.world.shape()))
    }
}

/// Method label stored with every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    IrlNokin,
    Bc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::IrlNokin => "irl_nokin",
            Method::Bc => "bc",
        }
    }
}

/// Settings needed to turn network outputs into forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub method: Method,
    pub planner: PlannerConfig,
    pub kinematics: KinematicsConfig,
}

/// Reward network plus the planner settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlModel {
    pub net: TwoStageNet,
    pub meta: ModelMeta,
}

impl IrlModel {
    pub fn new(net: TwoStageNet, meta: ModelMeta) -> Result<Self> {
        let expected = match meta.method {
            Method::Ours => NetKind::TwoStage,
            Method::IrlNokin => NetKind::EnvOnly,
            Method::Bc => {
                return Err(Error::Config(
                    "behavior cloning checkpoints hold a policy, not a reward".into(),
                ));
            }
        };
        if net.kind() != expected {
            return Err(Error::Config(format!(
                "{} needs a {expected:?} network, got {:?}",
                meta.method.as_str(),
                net.kind()
            )));
        }
        Ok(IrlModel { net, meta })
    }

    pub fn reward_for(&self, world: &GridWorld, start: Cell, past: &PastTrack) -> Result<GridMap> {
        match self.net.kind() {
            NetKind::EnvOnly => self.net.reward_map(world.env(), None),
            _ => {
                let inputs = demo_inputs(world, start, past, &self.meta.kinematics)?;
                self.net.reward_map(&inputs.env, Some(&inputs.aux))
            }
        }
    }

    pub fn reward(&self, demo: &Demonstration) -> Result<GridMap> {
        self.reward_for(&demo.world, demo.start(), &demo.past)
    }

    pub fn policy_for(&self, world: &GridWorld, start: Cell, past: &PastTrack) -> Result<Policy> {
        let reward = self.reward_for(world, start, past)?;
        Ok(value_iteration(&reward, &self.meta.planner)?.policy)
    }

    pub fn to_checkpoint(&self, iteration: u64) -> Checkpoint {
        self.net.to_checkpoint(
            iteration,
            serde_json::to_value(self.meta).expect("meta serializes"),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (net, extra) = TwoStageNet::from_checkpoint(ck)?;
        let meta = serde_json::from_value(extra).map_err(|e| {
            Error::Config(format!("checkpoint carries no usable model settings: {e}"))
        })?;
        Self::new(net, meta)
    }
}

impl Predictor for IrlModel {
    fn policy(&self, demo: &Demonstration) -> Result<Policy> {
        self.policy_for(&demo.world, demo.start(), &demo.past)
    }
}
