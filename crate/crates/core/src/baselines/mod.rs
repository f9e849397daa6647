//! Comparison methods: a bicycle-model EKF, behavior cloning, a uniform
//! random policy, and IRL without kinematic context.

pub mod bc;
pub mod ekf;

pub use bc::{bc_example_gradient, bc_train, BcConfig, BcExample, BcModel, BcReport, BcRow};
pub use ekf::{
    bicycle_step, ekf_filter, ekf_forecast, ekf_init, ekf_predict_trajectory, ekf_update,
    evaluate_ekf, wrap_angle, EkfConfig, EkfState,
};

use crate::error::Result;
use crate::mdp::{GridWorld, Policy};
use crate::model::{IrlModel, Method, ModelMeta, Predictor};
use crate::synth::Demonstration;
use crate::tensor::checkpoint::Checkpoint;
use crate::trainer::{train, TrainConfig, TrainReport};

/// Uniform distribution over the four actions in every cell.
pub fn random_policy(world: &GridWorld) -> Policy {
    Policy::uniform(world.shape())
}

/// The IRL pipeline with the kinematic stage removed.
pub fn irl_no_kinematics(
    demos: &[Demonstration],
    cfg: &TrainConfig,
) -> Result<(IrlModel, TrainReport)> {
    let cfg = TrainConfig {
        use_kinematics: false,
        ..cfg.clone()
    };
    train(demos, &cfg)
}

/// Method recorded in a checkpoint's settings.
pub fn checkpoint_method(ck: &Checkpoint) -> Result<Method> {
    #[derive(serde::Deserialize)]
    struct Header {
        extra: ModelMeta,
    }
    let h: Header = serde_json::from_str(&ck.header).map_err(|e| {
        crate::Error::Config(format!("checkpoint carries no usable model settings: {e}"))
    })?;
    Ok(h.extra.method)
}

/// Any learned checkpoint as a predictor.
pub fn load_predictor(ck: &Checkpoint) -> Result<Box<dyn Predictor>> {
    Ok(match checkpoint_method(ck)? {
        Method::Bc => Box::new(BcModel::from_checkpoint(ck)?),
        Method::Ours | Method::IrlNokin => Box::new(IrlModel::from_checkpoint(ck)?),
    })
}
