//! The two-stage reward network and its variants.
//!
//! Stage 1 is a dilated fully-convolutional stack over the five terrain
//! channels producing 25 feature maps. Stage 2 consumes those maps together
//! with the positional and kinematic channels and emits one reward per cell
//! (or four action logits for the behavior-cloning variant).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{InputStack, AUX_CHANNELS, LEARNED_CHANNELS, STACK_CHANNELS};
use crate::mdp::{GridMap, GridShape, ENV_CHANNELS};
use crate::tensor::checkpoint::Checkpoint;
use crate::tensor::{
    conv, leaky_relu, leaky_relu_backward, AdamConfig, Gradients, ParameterStore, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub activation: bool,
}

impl LayerSpec {
    const fn new(in_ch: usize, out_ch: usize, dilation: usize, activation: bool) -> Self {
        LayerSpec {
            in_ch,
            out_ch,
            kernel: 3,
            dilation,
            activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    /// Terrain features fused with positional/kinematic context into a reward.
    TwoStage,
    /// Stage 1 alone with a single reward channel; sees no kinematics.
    EnvOnly,
    /// Two-stage body with four action logits (behavior cloning).
    Policy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: NetKind,
    pub stage1: Vec<LayerSpec>,
    pub stage2: Vec<LayerSpec>,
}

const STAGE1_DEFAULT: [LayerSpec; 4] = [
    LayerSpec::new(ENV_CHANNELS, 16, 1, true),
    LayerSpec::new(16, 24, 2, true),
    LayerSpec::new(24, 24, 3, true),
    LayerSpec::new(24, LEARNED_CHANNELS, 4, false),
];

impl Architecture {
    pub fn two_stage() -> Self {
        Architecture {
            kind: NetKind::TwoStage,
            stage1: STAGE1_DEFAULT.to_vec(),
            stage2: vec![
                LayerSpec::new(STACK_CHANNELS, 16, 1, true),
                LayerSpec::new(16, 8, 1, true),
                LayerSpec::new(8, 1, 1, false),
            ],
        }
    }

    pub fn env_only() -> Self {
        let mut stage1 = STAGE1_DEFAULT.to_vec();
        stage1[3].out_ch = 1;
        Architecture {
            kind: NetKind::EnvOnly,
            stage1,
            stage2: Vec::new(),
        }
    }

    pub fn policy() -> Self {
        let mut a = Self::two_stage();
        a.kind = NetKind::Policy;
        a.stage2[2].out_ch = 4;
        a
    }

    pub fn output_channels(&self) -> usize {
        self.layers().last().map(|l| l.out_ch).unwrap_or(0)
    }

    /// Stage-1 layers followed by stage-2 layers, in parameter order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.stage1.iter().chain(&self.stage2)
    }

    /// Receptive field (cells per axis) of stage 1.
    pub fn stage1_receptive_field(&self) -> usize {
        1 + self
            .stage1
            .iter()
            .map(|l| (l.kernel - 1) * l.dilation)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let chain = |layers: &[LayerSpec], first_in: usize, what: &str| -> Result<usize> {
            let mut ch = first_in;
            for (i, l) in layers.iter().enumerate() {
                if l.in_ch != ch {
                    return Err(Error::Config(format!(
                        "{what} layer {i} expects {} input channels but receives {ch}",
                        l.in_ch
                    )));
                }
                if l.kernel % 2 == 0 || l.dilation == 0 {
                    return Err(Error::Config(format!(
                        "{what} layer {i}: odd kernel and positive dilation required"
                    )));
                }
                ch = l.out_ch;
            }
            Ok(ch)
        };
        if self.stage1.is_empty() {
            return Err(Error::Config("stage 1 has no layers".into()));
        }
        let s1 = chain(&self.stage1, ENV_CHANNELS, "stage-1")?;
        match self.kind {
            NetKind::EnvOnly => {
                if !self.stage2.is_empty() || s1 != 1 {
                    return Err(Error::Config(
                        "env-only network must end stage 1 in one channel".into(),
                    ));
                }
            }
            NetKind::TwoStage | NetKind::Policy => {
                if s1 != LEARNED_CHANNELS {
                    return Err(Error::Config(format!(
                        "stage 1 must emit {LEARNED_CHANNELS} maps, emits {s1}"
                    )));
                }
                let out = chain(&self.stage2, STACK_CHANNELS, "stage-2")?;
                let want = if self.kind == NetKind::Policy { 4 } else { 1 };
                if out != want {
                    return Err(Error::Config(format!(
                        "stage 2 must emit {want} channel(s), emits {out}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct NetForward {
    /// Input to every layer, stage 1 first.
    inputs: Vec<Tensor>,
    /// Pre-activation output of every layer.
    pre: Vec<Tensor>,
    pub output: Tensor,
}

impl NetForward {
    /// Pre-activation output of every layer, in evaluation order.
    pub fn pre_activations(&self) -> &[Tensor] {
        &self.pre
    }

    /// Stage-1 feature maps (pre-concatenation), i.e. the output of the last stage-1 layer.
    pub fn stage1_output(&self, stage1_len: usize) -> &Tensor {
        &self.pre[stage1_len - 1]
    }

    /// The 30-channel second-stage input, when the network has a second stage.
    pub fn stage2_input(&self, stage1_len: usize) -> Option<&Tensor> {
        self.inputs.get(stage1_len)
    }

    /// Per-cell values of a one-channel output.
    pub fn output_map(&self) -> Result<GridMap> {
        let (c, r, w) = self.output.dims3()?;
        if c != 1 {
            return Err(Error::shape(
                "single-channel output",
                &[1, r, w],
                &[c, r, w],
            ));
        }
        GridMap::from_vec(GridShape::new(r, w)?, self.output.data().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageNet {
    arch: Architecture,
    store: ParameterStore,
}

impl TwoStageNet {
    /// Kaiming fan-in initialization; the final layer's weights are further
    /// multiplied by `output_scale`. Biases start at zero.
    pub fn new(arch: Architecture, seed: u64, adam: AdamConfig, output_scale: f64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new(adam);
        let total = arch.stage1.len() + arch.stage2.len();
        for (i, (name, l)) in Self::named_layers(&arch).into_iter().enumerate() {
            let fan_in = (l.in_ch * l.kernel * l.kernel) as f64;
            let gain = if l.activation { 2.0 } else { 1.0 };
            let mut std = (gain / fan_in).sqrt();
            if i + 1 == total {
                std *= output_scale;
            }
            let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
            let n = l.out_ch * l.in_ch * l.kernel * l.kernel;
            let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            store.insert(
                format!("{name}.kernel"),
                Tensor::from_vec(&[l.out_ch, l.in_ch, l.kernel, l.kernel], w)?,
            )?;
            store.insert(format!("{name}.bias"), Tensor::zeros(&[l.out_ch]))?;
        }
        Ok(TwoStageNet { arch, store })
    }

    fn named_layers(arch: &Architecture) -> Vec<(String, LayerSpec)> {
        let s1 = arch
            .stage1
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("stage1.{i}"), *l));
        let s2 = arch
            .stage2
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("stage2.{i}"), *l));
        s1.chain(s2).collect()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn kind(&self) -> NetKind {
        self.arch.kind
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn layer_specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.arch.layers()
    }

    fn run_layers(
        &self,
        first: usize,
        count: usize,
        mut x: Tensor,
        cache: Option<&mut NetForward>,
    ) -> Result<Tensor> {
        let specs: Vec<LayerSpec> = self.layer_specs().copied().collect();
        let mut cache = cache;
        for (li, &spec) in specs.iter().enumerate().skip(first).take(count) {
            let kernel = self.store.value(2 * li);
            let bias = self.store.value(2 * li + 1).data();
            let z = conv::forward(&x, kernel, bias, spec.dilation)?;
            let y = if spec.activation {
                leaky_relu(&z)
            } else {
                z.clone()
            };
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(x);
                c.pre.push(z);
            }
            x = y;
        }
        Ok(x)
    }

    fn check_env(&self, env: &Tensor) -> Result<(usize, usize)> {
        let (c, r, w) = env.dims3()?;
        if c != ENV_CHANNELS {
            return Err(Error::shape(
                "environment input",
                &[ENV_CHANNELS, r, w],
                &[c, r, w],
            ));
        }
        Ok((r, w))
    }

    /// The 25 learned feature maps (or the env-only reward map) from terrain channels.
    pub fn stage1_forward(&self, env: &Tensor) -> Result<Tensor> {
        self.check_env(env)?;
        self.run_layers(0, self.arch.stage1.len(), env.clone(), None)
    }

    /// Second stage alone on a prepared 30-channel stack.
    pub fn reward_forward(&self, stack: &InputStack) -> Result<GridMap> {
        if self.arch.kind != NetKind::TwoStage {
            return Err(Error::Config(
                "reward_forward needs a two-stage reward network".into(),
            ));
        }
        let out = self.run_layers(
            self.arch.stage1.len(),
            self.arch.stage2.len(),
            stack.tensor().clone(),
            None,
        )?;
        let (_, r, w) = out.dims3()?;
        GridMap::from_vec(GridShape::new(r, w)?, out.into_data())
    }

    /// Full forward pass. `aux` holds the five positional/kinematic channels and
    /// is ignored by the env-only variant.
    pub fn forward(&self, env: &Tensor, aux: Option<&Tensor>) -> Result<NetForward> {
        let (rows, cols) = self.check_env(env)?;
        let mut cache = NetForward {
            inputs: Vec::new(),
            pre: Vec::new(),
            output: Tensor::zeros(&[0]),
        };
        let s1 = self.arch.stage1.len();
        let features = self.run_layers(0, s1, env.clone(), Some(&mut cache))?;
        let output = if self.arch.kind == NetKind::EnvOnly {
            features
        } else {
            let aux = aux.ok_or_else(|| {
                Error::Config("two-stage network needs positional/kinematic channels".into())
            })?;
            if aux.shape() != [AUX_CHANNELS, rows, cols] {
                return Err(Error::shape(
                    "auxiliary channels",
                    &[AUX_CHANNELS, rows, cols],
                    aux.shape(),
                ));
            }
            let stack = Tensor::concat_channels(&[&features, aux])?;
            self.run_layers(s1, self.arch.stage2.len(), stack, Some(&mut cache))?
        };
        cache.output = output;
        Ok(cache)
    }

    pub fn reward_map(&self, env: &Tensor, aux: Option<&Tensor>) -> Result<GridMap> {
        self.forward(env, aux)?.output_map()
    }

    /// Parameter gradients of `sum(grad_out * output)`, in store order.
    pub fn backward(&self, fwd: &NetForward, grad_out: &Tensor) -> Result<Gradients> {
        Ok(self.backward_full(fwd, grad_out, false)?.0)
    }

    /// Like [`backward`](Self::backward) but also returns the adjoint of the terrain input.
    pub fn backward_with_input(
        &self,
        fwd: &NetForward,
        grad_out: &Tensor,
    ) -> Result<(Gradients, Tensor)> {
        let (g, gi) = self.backward_full(fwd, grad_out, true)?;
        Ok((g, gi.expect("requested")))
    }

    fn backward_full(
        &self,
        fwd: &NetForward,
        grad_out: &Tensor,
        want_env: bool,
    ) -> Result<(Gradients, Option<Tensor>)> {
        if grad_out.shape() != fwd.output.shape() {
            return Err(Error::shape(
                "output gradient",
                fwd.output.shape(),
                grad_out.shape(),
            ));
        }
        let specs: Vec<(String, LayerSpec)> = Self::named_layers(&self.arch);
        let s1 = self.arch.stage1.len();
        let mut kernel_grads: Vec<Option<(Tensor, Vec<f64>)>> = vec![None; specs.len()];
        let mut g = grad_out.clone();
        let mut env_grad = None;
        for li in (0..specs.len()).rev() {
            let spec = specs[li].1;
            if spec.activation {
                g = leaky_relu_backward(&fwd.pre[li], &g);
            }
            let want_input = li > 0 || want_env;
            let (gk, gb, gi) = conv::backward(
                &fwd.inputs[li],
                self.store.value(2 * li),
                spec.dilation,
                &g,
                want_input,
            )?;
            kernel_grads[li] = Some((gk, gb));
            if let Some(gi) = gi {
                g = if li == s1 && self.arch.kind != NetKind::EnvOnly {
                    // only the learned maps flow back into stage 1
                    gi.slice_channels(0, LEARNED_CHANNELS)?
                } else {
                    gi
                };
                if li == 0 {
                    env_grad = Some(g.clone());
                }
            }
        }
        let mut grads = Gradients::new();
        for ((name, spec), kg) in specs.iter().zip(kernel_grads) {
            let (gk, gb) = kg.expect("every layer visited");
            grads.push(format!("{name}.kernel"), gk);
            grads.push(
                format!("{name}.bias"),
                Tensor::from_vec(&[spec.out_ch], gb)?,
            );
        }
        Ok((grads, env_grad))
    }

    /// Zeroes the stage-2 weights that read `dx, dy, kappa`, so the output no
    /// longer depends on the kinematic context.
    pub fn zero_kinematic_weights(&mut self) -> Result<()> {
        if self.arch.kind == NetKind::EnvOnly {
            return Ok(());
        }
        let li = self.arch.stage1.len();
        let spec = self.arch.stage2[0];
        let k2 = spec.kernel * spec.kernel;
        let w = self.store.value_mut(2 * li);
        for o in 0..spec.out_ch {
            for i in LEARNED_CHANNELS + 2..STACK_CHANNELS {
                let base = (o * spec.in_ch + i) * k2;
                w[base..base + k2].fill(0.0);
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, iteration: u64, extra: serde_json::Value) -> Checkpoint {
        let header = Header {
            architecture: self.arch.clone(),
            extra,
        };
        Checkpoint {
            header: serde_json::to_string(&header).expect("header serializes"),
            iteration,
            store: self.store.clone(),
        }
    }

    /// Rebuilds a network, checking every stored shape against the recorded architecture.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, serde_json::Value)> {
        let header: Header = serde_json::from_str(&ck.header)
            .map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
        let reference = TwoStageNet::new(header.architecture.clone(), 0, ck.store.adam, 1.0)?;
        if reference.store.names() != ck.store.names() {
            return Err(Error::Config(
                "checkpoint parameters do not match its architecture".into(),
            ));
        }
        for i in 0..ck.store.len() {
            if reference.store.value(i).shape() != ck.store.value(i).shape() {
                return Err(Error::shape(
                    "checkpoint parameter",
                    reference.store.value(i).shape(),
                    ck.store.value(i).shape(),
                ));
            }
        }
        Ok((
            TwoStageNet {
                arch: header.architecture,
                store: ck.store.clone(),
            },
            header.extra,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d_forward, ConvLayer};
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn net(kind: NetKind, seed: u64) -> TwoStageNet {
        let arch = match kind {
            NetKind::TwoStage => Architecture::two_stage(),
            NetKind::EnvOnly => Architecture::env_only(),
            NetKind::Policy => Architecture::policy(),
        };
        TwoStageNet::new(arch, seed, AdamConfig::default(), 1.0).unwrap()
    }

    fn layer(net: &TwoStageNet, li: usize) -> ConvLayer {
        let spec = net.layer_specs().nth(li).copied().unwrap();
        ConvLayer::new(
            net.store.value(2 * li).clone(),
            net.store.value(2 * li + 1).data().to_vec(),
            spec.dilation,
        )
        .unwrap()
    }

    #[test]
    fn architecture_invariants() {
        let a = Architecture::two_stage();
        a.validate().unwrap();
        assert_eq!(a.stage1_receptive_field(), 21);
        assert_eq!(a.stage1.last().unwrap().out_ch, 25);
        Architecture::env_only().validate().unwrap();
        Architecture::policy().validate().unwrap();
        let mut bad = Architecture::two_stage();
        bad.stage2[0].in_ch = 29;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stage1_matches_composed_conv_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = net(NetKind::TwoStage, 2);
        let env = random(&mut rng, &[5, 10, 11]);
        let mut x = env.clone();
        for li in 0..4 {
            x = conv2d_forward(&x, &layer(&n, li)).unwrap();
            if li < 3 {
                x = leaky_relu(&x);
            }
        }
        assert_eq!(n.stage1_forward(&env).unwrap(), x);
        assert!(n.stage1_forward(&random(&mut rng, &[4, 10, 11])).is_err());
    }

    #[test]
    fn reward_forward_matches_oracle_and_full_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = net(NetKind::TwoStage, 4);
        let stack = random(&mut rng, &[30, 9, 9]);
        let mut x = stack.clone();
        for li in 4..7 {
            x = conv2d_forward(&x, &layer(&n, li)).unwrap();
            if li < 6 {
                x = leaky_relu(&x);
            }
        }
        let r = n
            .reward_forward(&InputStack::from_tensor(stack).unwrap())
            .unwrap();
        assert_eq!(r.data(), x.data());
        assert!(InputStack::from_tensor(random(&mut rng, &[29, 9, 9])).is_err());
    }

    #[test]
    fn zero_input_gives_per_channel_constants() {
        let mut n = net(NetKind::TwoStage, 5);
        for li in 0..4 {
            for (j, b) in n.store_mut().value_mut(2 * li + 1).iter_mut().enumerate() {
                *b = 0.1 * (j as f64 + 1.0) - 0.7;
            }
        }
        let out = n.stage1_forward(&Tensor::zeros(&[5, 30, 30])).unwrap();
        // away from the borders padding is invisible
        for c in 0..25 {
            let plane = out.channel(c);
            let v = plane[15 * 30 + 15];
            for r in 10..20 {
                for col in 10..20 {
                    assert_eq!(plane[r * 30 + col], v);
                }
            }
        }
    }

    #[test]
    fn stage1_is_translation_equivariant_in_the_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = net(NetKind::TwoStage, 7);
        let (rows, cols) = (40, 40);
        let env = random(&mut rng, &[5, rows, cols]);
        let mut shifted = Tensor::zeros(&[5, rows, cols]);
        for c in 0..5 {
            for r in 0..rows {
                for col in 0..cols - 5 {
                    shifted.channel_mut(c)[r * cols + col + 5] = env.channel(c)[r * cols + col];
                }
            }
        }
        let a = n.stage1_forward(&env).unwrap();
        let b = n.stage1_forward(&shifted).unwrap();
        for c in 0..25 {
            for r in 11..rows - 11 {
                for col in 11..cols - 16 {
                    let x = a.channel(c)[r * cols + col];
                    let y = b.channel(c)[r * cols + col + 5];
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_bias_only_network() {
        let mut n = net(NetKind::TwoStage, 8);
        let last = 6;
        n.store_mut().value_mut(2 * last).fill(0.0);
        n.store_mut().value_mut(2 * last + 1)[0] = 0.75;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = n
            .reward_map(
                &random(&mut rng, &[5, 8, 8]),
                Some(&random(&mut rng, &[5, 8, 8])),
            )
            .unwrap();
        assert!(r.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn kinematic_channels_matter_until_zeroed() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut n = net(NetKind::TwoStage, 11);
        let env = random(&mut rng, &[5, 8, 8]);
        let aux = random(&mut rng, &[5, 8, 8]);
        let mut aux2 = aux.clone();
        aux2.channel_mut(2).fill(0.9);
        let diff = |n: &TwoStageNet| -> f64 {
            let a = n.reward_map(&env, Some(&aux)).unwrap();
            let b = n.reward_map(&env, Some(&aux2)).unwrap();
            a.l1_distance(&b)
        };
        assert!(diff(&n) > 0.0);
        n.zero_kinematic_weights().unwrap();
        assert_eq!(diff(&n), 0.0);
    }

    #[test]
    fn zero_grad_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = net(NetKind::TwoStage, 13);
        let fwd = n
            .forward(
                &random(&mut rng, &[5, 8, 8]),
                Some(&random(&mut rng, &[5, 8, 8])),
            )
            .unwrap();
        let g = n.backward(&fwd, &Tensor::zeros(&[1, 8, 8])).unwrap();
        assert_eq!(g.len(), n.store().len());
        assert!(g.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn one_hot_gradient_is_local() {
        // one-hot at (0, 0): stage-2 bias gradients see it, but the reward
        // there depends only on a bounded window of terrain input
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = net(NetKind::TwoStage, 15);
        let (rows, cols) = (40, 40);
        let fwd = n
            .forward(
                &random(&mut rng, &[5, rows, cols]),
                Some(&random(&mut rng, &[5, rows, cols])),
            )
            .unwrap();
        let mut g = Tensor::zeros(&[1, rows, cols]);
        g.data_mut()[0] = 1.0;
        let (grads, env_grad) = n.backward_with_input(&fwd, &g).unwrap();
        assert!(grads.get("stage2.2.bias").unwrap().data()[0] == 1.0);
        assert!(grads
            .iter()
            .any(|(name, t)| name.starts_with("stage1") && t.data().iter().any(|&v| v != 0.0)));
        // stage 2 adds 3 cells of reach, stage 1 adds 10
        let reach = 13;
        for c in 0..5 {
            for r in 0..rows {
                for col in 0..cols {
                    if r > reach || col > reach {
                        assert_eq!(env_grad.channel(c)[r * cols + col], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_validates_shapes() {
        let n = net(NetKind::Policy, 16);
        let ck = n.to_checkpoint(7, serde_json::json!({"beta": 3.0}));
        let (back, extra) = TwoStageNet::from_checkpoint(&ck).unwrap();
        assert_eq!(back, n);
        assert_eq!(extra["beta"], 3.0);
        let mut bad = ck.clone();
        bad.header = bad.header.replace("\"policy\"", "\"two_stage\"");
        assert!(TwoStageNet::from_checkpoint(&bad).is_err());
    }
}
