//! Multi-head channel attention.
//!
//! A weighted global average pool summarizes each channel of an
//! `n×h×w×C` feature map. Each of `H` heads maps that summary through a
//! `C → C/r → C` bottleneck (ReLU, then sigmoid) to a candidate gate in
//! (0, 1); the heads are averaged into one gate. The gate then either
//! scales the pooled vector ([`GateMode::Pooled`]) or, after the post
//! dense layer, the full feature map ([`GateMode::Spatial`]). A final
//! `C×C` dense layer mixes channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{dense, init, weighted_global_avg_pool, Activation};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_HEADS: usize = 16;
pub const DEFAULT_REDUCTION: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Gate multiplies the pooled channel vector; output is `n×1×1×C`.
    #[default]
    Pooled,
    /// Post-dense gate broadcasts over the feature map; output is `n×h×w×C`.
    Spatial,
}

impl std::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(GateMode::Pooled),
            "spatial" => Ok(GateMode::Spatial),
            other => Err(Error::invalid(format!("unknown gate mode {other:?} (expected \"pooled\" or \"spatial\")"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub channels: usize,
    pub heads: usize,
    pub reduction: usize,
    #[serde(default)]
    pub gate_mode: GateMode,
}

impl AttentionConfig {
    pub fn new(channels: usize) -> Self {
        Self { channels, heads: DEFAULT_HEADS, reduction: DEFAULT_REDUCTION, gate_mode: GateMode::Pooled }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_gate_mode(mut self, mode: GateMode) -> Self {
        self.gate_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("channels", self.channels), ("heads", self.heads), ("reduction", self.reduction)] {
            if v == 0 {
                return Err(Error::invalid(format!("attention {name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Hidden width of each head: `max(1, floor(C / r))`.
    pub fn bottleneck(&self) -> usize {
        (self.channels / self.reduction).max(1)
    }
}

/// Bottleneck pair of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// `C × C/r`
    pub reduce_weight: Tensor<T>,
    pub reduce_bias: Tensor<T>,
    /// `C/r × C`
    pub expand_weight: Tensor<T>,
    pub expand_bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// `h × w` logits of the weighted pooling.
    pub spatial_logits: Tensor<T>,
    pub heads: Vec<HeadParams<T>>,
    /// `C × C`
    pub post_weight: Tensor<T>,
    pub post_bias: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    /// Zero pooling logits (plain averaging), He-uniform reduce weights,
    /// zero expand weights and biases, identity post layer. Every head
    /// therefore emits exactly 0.5 at init and the block is a 0.5-scaled
    /// pass-through. Deterministic per seed.
    pub fn init(cfg: &AttentionConfig, spatial: (usize, usize), seed: u64) -> Result<Self> {
        cfg.validate()?;
        if spatial.0 == 0 || spatial.1 == 0 {
            return Err(Error::invalid("attention spatial size must be positive"));
        }
        let (c, b) = (cfg.channels, cfg.bottleneck());
        let mut rng = rng::seeded(seed);
        let heads = (0..cfg.heads)
            .map(|_| HeadParams {
                reduce_weight: init::he_uniform(&[c, b], c, &mut rng),
                reduce_bias: Tensor::zeros(&[b]),
                expand_weight: Tensor::zeros(&[b, c]),
                expand_bias: Tensor::zeros(&[c]),
            })
            .collect();
        Ok(Self {
            spatial_logits: Tensor::zeros(&[spatial.0, spatial.1]),
            heads,
            post_weight: Tensor::eye(c),
            post_bias: Tensor::zeros(&[c]),
        })
    }

    /// Tensors in a fixed order with names under `prefix`.
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(format!("{prefix}.spatial_logits"), self.spatial_logits.clone())];
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{i:02}.reduce.weight"), h.reduce_weight.clone()));
            out.push((format!("{prefix}.head{i:02}.reduce.bias"), h.reduce_bias.clone()));
            out.push((format!("{prefix}.head{i:02}.expand.weight"), h.expand_weight.clone()));
            out.push((format!("{prefix}.head{i:02}.expand.bias"), h.expand_bias.clone()));
        }
        out.push((format!("{prefix}.post.weight"), self.post_weight.clone()));
        out.push((format!("{prefix}.post.bias"), self.post_bias.clone()));
        out
    }

    /// Overwrites every tensor with `U(-1, 1)` draws; used to probe the
    /// block away from its special init point.
    pub fn randomize(&mut self, seed: u64) {
        let mut r = rng::seeded(seed);
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data_mut() {
                *v = T::from_f64_lossy(r.random_range(-1.0..1.0));
            }
        };
        fill(&mut self.spatial_logits);
        for h in &mut self.heads {
            fill(&mut h.reduce_weight);
            fill(&mut h.reduce_bias);
            fill(&mut h.expand_weight);
            fill(&mut h.expand_bias);
        }
        fill(&mut self.post_weight);
        fill(&mut self.post_bias);
    }

    pub fn num_tensors(heads: usize) -> usize {
        3 + 4 * heads
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> AttentionVars {
        let vars: Vec<Var> = self.named("").into_iter().map(|(_, t)| g.param(t)).collect();
        AttentionVars::from_flat(&vars)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub reduce_weight: Var,
    pub reduce_bias: Var,
    pub expand_weight: Var,
    pub expand_bias: Var,
}

/// Graph handles of an [`AttentionParams`].
#[derive(Clone, Debug)]
pub struct AttentionVars {
    pub spatial_logits: Var,
    pub heads: Vec<HeadVars>,
    pub post_weight: Var,
    pub post_bias: Var,
}

impl AttentionVars {
    /// Rebuilds the structure from handles in [`AttentionParams::named`] order.
    pub fn from_flat(vars: &[Var]) -> Self {
        assert!(vars.len() >= 3 && (vars.len() - 3).is_multiple_of(4), "bad attention tensor count");
        let heads = vars[1..vars.len() - 2]
            .chunks(4)
            .map(|c| HeadVars { reduce_weight: c[0], reduce_bias: c[1], expand_weight: c[2], expand_bias: c[3] })
            .collect();
        Self { spatial_logits: vars[0], heads, post_weight: vars[vars.len() - 2], post_bias: vars[vars.len() - 1] }
    }
}

/// Per-channel gate in (0, 1): the mean over heads of
/// `sigmoid(relu(pooled·W1 + b1)·W2 + b2)`.
pub fn compute_channel_gate<T: Scalar>(
    g: &mut Graph<T>,
    pooled: Var,
    params: &AttentionVars,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let pv = g.try_value(pooled)?;
    if pv.rank() != 2 || pv.shape()[1] != cfg.channels {
        return Err(Error::shape(
            "channel_gate",
            format!("pooled {:?} does not have {} channels", pv.shape(), cfg.channels),
        ));
    }
    if params.heads.len() != cfg.heads {
        return Err(Error::invalid(format!("{} head parameter sets for {} heads", params.heads.len(), cfg.heads)));
    }
    let mut gates = Vec::with_capacity(cfg.heads);
    for h in &params.heads {
        let hidden = dense(g, pooled, h.reduce_weight, h.reduce_bias, Activation::Relu)?;
        gates.push(dense(g, hidden, h.expand_weight, h.expand_bias, Activation::Sigmoid)?);
    }
    ops::permutation_invariant_mean(g, &gates)
}

/// Full attention block on an `n×h×w×C` feature map.
pub fn attention_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    params: &AttentionVars,
    cfg: &AttentionConfig,
) -> Result<Var> {
    let shape = g.try_value(x)?.shape().to_vec();
    if shape.len() != 4 || shape[3] != cfg.channels {
        return Err(Error::shape("attention", format!("input {shape:?} does not have {} channels", cfg.channels)));
    }
    let n = shape[0];
    let pooled = weighted_global_avg_pool(g, x, params.spatial_logits)?;
    let gate = compute_channel_gate(g, pooled, params, cfg)?;
    match cfg.gate_mode {
        GateMode::Pooled => {
            let v = ops::mul(g, gate, pooled)?;
            let y = dense(g, v, params.post_weight, params.post_bias, Activation::None)?;
            ops::reshape(g, y, &[n, 1, 1, cfg.channels])
        }
        GateMode::Spatial => {
            let scale = dense(g, gate, params.post_weight, params.post_bias, Activation::None)?;
            let scale = ops::reshape(g, scale, &[n, 1, 1, cfg.channels])?;
            ops::mul(g, x, scale)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::global_avg_pool2d;

    fn random_input(seed: u64, shape: &[usize]) -> Tensor<f64> {
        let mut r = rng::seeded(seed);
        Tensor::from_fn(shape, |_| r.random_range(-2.0..2.0))
    }

    fn randomized(cfg: &AttentionConfig, spatial: (usize, usize), seed: u64) -> AttentionParams<f64> {
        let mut p = AttentionParams::init(cfg, spatial, seed).unwrap();
        p.randomize(seed + 1000);
        p
    }

    fn bits(t: &Tensor<f64>) -> Vec<u64> {
        t.data().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn config_defaults_and_bottleneck_clamp() {
        let cfg = AttentionConfig::new(128);
        assert_eq!((cfg.heads, cfg.reduction, cfg.gate_mode), (16, 8, GateMode::Pooled));
        assert_eq!(cfg.bottleneck(), 16);
        assert_eq!(AttentionConfig::new(4).bottleneck(), 1);
        assert!(AttentionConfig::new(4).with_heads(0).validate().is_err());
        assert!("diagonal".parse::<GateMode>().is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_logits_and_identity_post() {
        let cfg = AttentionConfig::new(8).with_heads(3).with_reduction(2);
        let a = AttentionParams::<f32>::init(&cfg, (4, 4), 42).unwrap();
        let b = AttentionParams::<f32>::init(&cfg, (4, 4), 42).unwrap();
        assert_eq!(a, b);
        assert!(a.spatial_logits.data().iter().all(|&v| v == 0.0));
        let v = Tensor::from_fn(&[1, 8], |i| i as f32 - 3.5);
        let mut g = Graph::new();
        let (vv, w) = (g.constant(v.clone()), g.constant(a.post_weight.clone()));
        let y = ops::matmul(&mut g, vv, w).unwrap();
        assert_eq!(g.value(y), &v);
    }

    #[test]
    fn zero_expand_weights_give_half_gate() {
        let cfg = AttentionConfig::new(6).with_heads(4).with_reduction(2);
        let p = AttentionParams::<f64>::init(&cfg, (2, 2), 1).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let pooled = g.constant(random_input(3, &[5, 6]));
        let gate = compute_channel_gate(&mut g, pooled, &vars, &cfg).unwrap();
        assert!(g.value(gate).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn two_head_single_channel_hand_computation() {
        let cfg = AttentionConfig::new(1).with_heads(2).with_reduction(1);
        let mut p = AttentionParams::<f64>::init(&cfg, (1, 1), 0).unwrap();
        let set = |v: f64| Tensor::from_slice(&[1, 1], &[v]).unwrap();
        let bias = |v: f64| Tensor::from_slice(&[1], &[v]).unwrap();
        p.heads[0] = HeadParams {
            reduce_weight: set(2.0),
            reduce_bias: bias(0.5),
            expand_weight: set(-1.0),
            expand_bias: bias(0.25),
        };
        p.heads[1] = HeadParams {
            reduce_weight: set(-3.0),
            reduce_bias: bias(1.0),
            expand_weight: set(0.7),
            expand_bias: bias(-0.1),
        };
        let x = 0.8;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let g0 = sig(-(2.0 * x + 0.5f64).max(0.0) + 0.25);
        let g1 = sig((-3.0 * x + 1.0f64).max(0.0) * 0.7 - 0.1);
        let expect = (g0 + g1) / 2.0;

        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let pooled = g.constant(set(x));
        let gate = compute_channel_gate(&mut g, pooled, &vars, &cfg).unwrap();
        assert!((g.value(gate).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn head_permutation_is_bit_identical() {
        let cfg = AttentionConfig::new(16).with_heads(5).with_reduction(4);
        let p = randomized(&cfg, (3, 3), 9);
        let x = random_input(10, &[2, 16]);
        let gate_for = |p: &AttentionParams<f64>| {
            let mut g = Graph::new();
            let vars = p.bind(&mut g);
            let pooled = g.constant(x.clone());
            let gate = compute_channel_gate(&mut g, pooled, &vars, &cfg).unwrap();
            g.value(gate).clone()
        };
        let base = gate_for(&p);
        let mut q = p.clone();
        q.heads.reverse();
        q.heads.swap(0, 2);
        assert_eq!(bits(&base), bits(&gate_for(&q)));
    }

    #[test]
    fn init_equivalence_in_both_modes() {
        let x = random_input(5, &[2, 4, 4, 8]);
        for mode in [GateMode::Pooled, GateMode::Spatial] {
            let cfg = AttentionConfig::new(8).with_heads(4).with_reduction(2).with_gate_mode(mode);
            let p = AttentionParams::<f64>::init(&cfg, (4, 4), 2).unwrap();
            let mut g = Graph::new();
            let vars = p.bind(&mut g);
            let xv = g.constant(x.clone());
            let y = attention_forward(&mut g, xv, &vars, &cfg).unwrap();
            let expect = match mode {
                GateMode::Spatial => x.map(|v| 0.5 * v),
                GateMode::Pooled => {
                    let gap = global_avg_pool2d(&mut g, xv).unwrap();
                    g.value(gap).map(|v| 0.5 * v).reshape(&[2, 1, 1, 8]).unwrap()
                }
            };
            assert!(g.value(y).max_abs_diff(&expect).unwrap() < 1e-6, "{mode:?}");
        }
    }

    #[test]
    fn zero_input_yields_post_bias_in_pooled_mode() {
        let cfg = AttentionConfig::new(4).with_heads(2).with_reduction(2);
        let mut p = AttentionParams::<f64>::init(&cfg, (2, 2), 3).unwrap();
        p.post_bias = Tensor::from_slice(&[4], &[0.1, -0.2, 0.3, 0.4]).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[3, 2, 2, 4]));
        let y = attention_forward(&mut g, x, &vars, &cfg).unwrap();
        assert!(g.value(y).data().chunks(4).all(|c| c == [0.1, -0.2, 0.3, 0.4]));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let cfg = AttentionConfig::new(4).with_heads(2);
        let p = AttentionParams::<f64>::init(&cfg, (2, 2), 3).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 2, 2, 5]));
        assert!(attention_forward(&mut g, x, &vars, &cfg).is_err());
    }
}
