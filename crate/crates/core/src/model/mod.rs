//! XceptionLite classifier.
//!
//! Topology for widths `[c0, c1, ..]`:
//!
//! ```text
//! conv 3×3/2 (c0) → ReLU
//! for each width c: [sepconv(c) → ReLU → sepconv(c) → maxpool 2] + conv 1×1/2 skip
//! channel attention (C = last width)          (optional)
//! global average pool → dense(hidden) ReLU → dense(classes) softmax
//! ```

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointConfig, RawCheckpoint,
};

use serde::{Deserialize, Serialize};

use crate::attention::{attention_forward, AttentionConfig, AttentionParams, AttentionVars, GateMode};
use crate::autodiff::{ops, Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{
    conv2d, dense, global_avg_pool2d, init, max_pool2d, separable_conv2d, Activation, Padding, SeparableVars,
};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_WIDTHS: [usize; 3] = [32, 64, 128];
pub const DEFAULT_HIDDEN_UNITS: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub input_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub hidden_units: usize,
    /// `None` builds the no-attention baseline.
    pub attention: Option<AttentionConfig>,
}

impl ModelConfig {
    /// Desk-scale default: widths 32/64/128, 1024 hidden units, 16 heads,
    /// reduction 8.
    pub fn xception_lite(input_size: usize, num_classes: usize) -> Self {
        let widths = DEFAULT_WIDTHS.to_vec();
        let attention = Some(AttentionConfig::new(*widths.last().unwrap()));
        Self { widths, input_size, in_channels: 3, num_classes, hidden_units: DEFAULT_HIDDEN_UNITS, attention }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        if let (Some(a), Some(&c)) = (self.attention.as_mut(), widths.last()) {
            a.channels = c;
        }
        self.widths = widths;
        self
    }

    pub fn with_hidden_units(mut self, units: usize) -> Self {
        self.hidden_units = units;
        self
    }

    pub fn with_attention(mut self, heads: usize, reduction: usize, mode: GateMode) -> Self {
        let c = self.widths.last().copied().unwrap_or(1);
        self.attention = Some(AttentionConfig::new(c).with_heads(heads).with_reduction(reduction).with_gate_mode(mode));
        self
    }

    pub fn without_attention(mut self) -> Self {
        self.attention = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid(format!("widths must be non-empty and positive, got {:?}", self.widths)));
        }
        if self.input_size < 8 {
            return Err(Error::invalid(format!("input size must be at least 8, got {}", self.input_size)));
        }
        for (name, v) in
            [("in_channels", self.in_channels), ("num_classes", self.num_classes), ("hidden_units", self.hidden_units)]
        {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if let Some(a) = &self.attention {
            a.validate()?;
            let last = *self.widths.last().unwrap();
            if a.channels != last {
                return Err(Error::invalid(format!(
                    "attention expects {} channels but the last block width is {last}",
                    a.channels
                )));
            }
        }
        Ok(())
    }

    /// Spatial size of the feature map entering the attention block.
    pub fn feature_size(&self) -> usize {
        let mut s = self.input_size.div_ceil(2);
        for _ in &self.widths {
            s = s.div_ceil(2);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    EntryConv { in_ch: usize, out_ch: usize },
    SeparableConv { in_ch: usize, out_ch: usize },
    SkipConv { in_ch: usize, out_ch: usize },
    Attention { channels: usize, heads: usize },
    Dense { inputs: usize, outputs: usize, activation: Activation },
}

/// A parameterized layer: its kind, the indices of its tensors in the
/// [`ParamStore`] and whether the optimizer may update them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub params: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub config: ModelConfig,
    /// Parameterized layers in topological order.
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Index of the owning layer in [`ModelSpec::layers`].
    pub layer: usize,
}

/// All model tensors in a fixed order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    pub entries: Vec<NamedTensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor { name: e.name.clone(), tensor: e.tensor.cast(), layer: e.layer })
                .collect(),
        }
    }

    fn push(&mut self, name: String, tensor: Tensor<T>, layer: usize) -> usize {
        self.entries.push(NamedTensor { name, tensor, layer });
        self.entries.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
}

struct Builder<T> {
    layers: Vec<LayerSpec>,
    params: ParamStore<T>,
}

impl<T: Scalar> Builder<T> {
    fn layer(&mut self, name: &str, kind: LayerKind, tensors: Vec<(String, Tensor<T>)>) {
        let idx = self.layers.len();
        let params = tensors.into_iter().map(|(n, t)| self.params.push(format!("{name}.{n}"), t, idx)).collect();
        self.layers.push(LayerSpec { name: name.to_string(), kind, params, trainable: true });
    }
}

/// Builds the classifier with seeded initialization.
pub fn build_xception_lite<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let mut r = rng::seeded(seed);
    let mut b = Builder { layers: Vec::new(), params: ParamStore::default() };

    let c0 = config.widths[0];
    let cin = config.in_channels;
    b.layer(
        "entry",
        LayerKind::EntryConv { in_ch: cin, out_ch: c0 },
        vec![
            ("kernel".into(), init::he_uniform(&[3, 3, cin, c0], 9 * cin, &mut r)),
            ("bias".into(), Tensor::zeros(&[c0])),
        ],
    );
    let mut prev = c0;
    for (i, &c) in config.widths.iter().enumerate() {
        for (j, c_in) in [(1, prev), (2, c)] {
            b.layer(
                &format!("block{i}.sep{j}"),
                LayerKind::SeparableConv { in_ch: c_in, out_ch: c },
                vec![
                    ("depthwise.kernel".into(), init::he_uniform(&[3, 3, c_in], 9, &mut r)),
                    ("depthwise.bias".into(), Tensor::zeros(&[c_in])),
                    ("pointwise.kernel".into(), init::he_uniform(&[1, 1, c_in, c], c_in, &mut r)),
                    ("pointwise.bias".into(), Tensor::zeros(&[c])),
                ],
            );
        }
        b.layer(
            &format!("block{i}.skip"),
            LayerKind::SkipConv { in_ch: prev, out_ch: c },
            vec![
                ("kernel".into(), init::he_uniform(&[1, 1, prev, c], prev, &mut r)),
                ("bias".into(), Tensor::zeros(&[c])),
            ],
        );
        prev = c;
    }
    if let Some(acfg) = &config.attention {
        let s = config.feature_size();
        let seed = rand::RngCore::next_u64(&mut r);
        let attn = AttentionParams::<T>::init(acfg, (s, s), seed)?;
        let tensors = attn.named("").into_iter().map(|(n, t)| (n[1..].to_string(), t)).collect();
        b.layer("attention", LayerKind::Attention { channels: acfg.channels, heads: acfg.heads }, tensors);
    }
    let hidden = config.hidden_units;
    for (name, inputs, outputs, activation) in [
        ("head.hidden", prev, hidden, Activation::Relu),
        ("head.output", hidden, config.num_classes, Activation::Softmax),
    ] {
        let d = crate::layers::DenseParams::<T>::init(inputs, outputs, activation, &mut r);
        b.layer(
            name,
            LayerKind::Dense { inputs, outputs, activation },
            vec![("weight".into(), d.weight), ("bias".into(), d.bias)],
        );
    }
    Ok(Model { spec: ModelSpec { config: config.clone(), layers: b.layers }, params: b.params })
}

/// Number of leading layers frozen by `fraction`: `ceil(fraction · P)`.
///
/// A 1e-9 slack absorbs representation error, so 0.7 of 10 layers is 7.
pub fn frozen_count(fraction: f64, layers: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("freeze fraction must be in [0, 1], got {fraction}")));
    }
    let k = (fraction * layers as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(k.min(layers))
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.spec.config
    }

    /// Freezes the first `ceil(fraction · P)` parameterized layers and
    /// unfreezes the rest. Returns the number frozen.
    pub fn freeze_layers(&mut self, fraction: f64) -> Result<usize> {
        let k = frozen_count(fraction, self.spec.layers.len())?;
        for (i, l) in self.spec.layers.iter_mut().enumerate() {
            l.trainable = i >= k;
        }
        Ok(k)
    }

    pub fn frozen_layers(&self) -> usize {
        self.spec.layers.iter().filter(|l| !l.trainable).count()
    }

    /// Whether each tensor in the store may be updated.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.params.entries.iter().map(|e| self.spec.layers[e.layer].trainable).collect()
    }

    /// Records every tensor on the graph. Frozen tensors become constants
    /// unless `all_params` is set; gradients still flow through them.
    pub fn bind(&self, g: &mut Graph<T>, all_params: bool) -> Vec<Var> {
        let mask = self.trainable_mask();
        self.params
            .entries
            .iter()
            .zip(mask)
            .map(
                |(e, trainable)| {
                    if trainable || all_params {
                        g.param(e.tensor.clone())
                    } else {
                        g.constant(e.tensor.clone())
                    }
                },
            )
            .collect()
    }

    /// Class probabilities for an `n×S×S×in_channels` batch.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let cfg = &self.spec.config;
        if vars.len() != self.params.len() {
            return Err(Error::invalid(format!("{} handles for {} tensors", vars.len(), self.params.len())));
        }
        let shape = g.try_value(x)?.shape().to_vec();
        let expect = [cfg.input_size, cfg.input_size, cfg.in_channels];
        if shape.len() != 4 || shape[1..] != expect {
            return Err(Error::shape("model", format!("batch {shape:?} does not match n×{expect:?}")));
        }
        let p = |layer: &LayerSpec, i: usize| vars[layer.params[i]];
        let mut layers = self.spec.layers.iter();
        let mut next = || layers.next().expect("layer list matches topology");

        let entry = next();
        let mut h = conv2d(g, x, p(entry, 0), Some(p(entry, 1)), 2, Padding::Same)?;
        h = ops::relu(g, h);
        for _ in &cfg.widths {
            let (s1, s2, skip) = (next(), next(), next());
            let sep = |l: &LayerSpec| SeparableVars {
                depthwise_kernel: p(l, 0),
                depthwise_bias: p(l, 1),
                pointwise_kernel: p(l, 2),
                pointwise_bias: p(l, 3),
            };
            let mut y = separable_conv2d(g, h, &sep(s1))?;
            y = ops::relu(g, y);
            y = separable_conv2d(g, y, &sep(s2))?;
            y = max_pool2d(g, y)?;
            let s = conv2d(g, h, p(skip, 0), Some(p(skip, 1)), 2, Padding::Same)?;
            h = ops::add(g, y, s)?;
        }
        if let Some(acfg) = &cfg.attention {
            let layer = next();
            let avars: Vec<Var> = layer.params.iter().map(|&i| vars[i]).collect();
            h = attention_forward(g, h, &AttentionVars::from_flat(&avars), acfg)?;
        }
        let pooled = global_avg_pool2d(g, h)?;
        let hidden = next();
        let z = dense(g, pooled, p(hidden, 0), p(hidden, 1), Activation::Relu)?;
        let out = next();
        dense(g, z, p(out, 0), p(out, 1), Activation::Softmax)
    }

    /// Probabilities for a batch on a fresh graph with no gradients.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.entries.iter().map(|e| g.constant(e.tensor.clone())).collect();
        let x = g.constant(batch.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }

    /// Replaces all tensors, checking names and shapes against the current ones.
    pub fn load_params(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::invalid(format!("expected {} tensors, found {}", self.params.len(), tensors.len())));
        }
        for (entry, (name, t)) in self.params.entries.iter().zip(&tensors) {
            if &entry.name != name || entry.tensor.shape() != t.shape() {
                return Err(Error::invalid(format!(
                    "tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    entry.name,
                    entry.tensor.shape()
                )));
            }
        }
        for (entry, (_, t)) in self.params.entries.iter_mut().zip(tensors) {
            entry.tensor = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::xception_lite(8, 2).with_widths(vec![4, 8]).with_hidden_units(16).with_attention(
            2,
            2,
            GateMode::Pooled,
        )
    }

    #[test]
    fn default_topology_layer_count_and_shapes() {
        let cfg = ModelConfig::xception_lite(32, 2);
        let m = build_xception_lite::<f32>(&cfg, 0).unwrap();
        // entry + 3 blocks × 3 + attention + 2 dense
        assert_eq!(m.spec.layers.len(), 13);
        assert_eq!(cfg.feature_size(), 2);
        assert_eq!(m.params.get("attention.spatial_logits").unwrap().shape(), &[2, 2]);
        assert_eq!(m.params.get("head.hidden.weight").unwrap().shape(), &[128, 1024]);
        let batch = Tensor::from_fn(&[4, 32, 32, 3], |i| ((i * 31) % 17) as f32 / 17.0);
        let probs = m.predict(&batch).unwrap();
        assert_eq!(probs.shape(), &[4, 2]);
        for row in probs.data().chunks(2) {
            assert!(row.iter().all(|v| v.is_finite()));
            assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn separable_block_parameter_count() {
        let cfg = ModelConfig::xception_lite(32, 2).with_widths(vec![64, 64]);
        let m = build_xception_lite::<f32>(&cfg, 0).unwrap();
        let layer = m.spec.layers.iter().find(|l| l.name == "block1.sep2").unwrap();
        let count: usize = layer.params.iter().map(|&i| m.params.entries[i].tensor.len()).sum();
        assert_eq!(count, (3 * 3 * 64 + 64) + (64 * 64 + 64));
        assert_eq!(count, 4800);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(build_xception_lite::<f32>(&tiny().with_widths(vec![]), 0).is_err());
        assert!(build_xception_lite::<f32>(&ModelConfig::xception_lite(4, 2), 0).is_err());
        let mut cfg = tiny();
        cfg.attention.as_mut().unwrap().channels = 5;
        assert!(build_xception_lite::<f32>(&cfg, 0).is_err());
    }

    #[test]
    fn freeze_fraction_arithmetic() {
        assert_eq!(frozen_count(0.7, 10).unwrap(), 7);
        assert_eq!(frozen_count(1.0, 10).unwrap(), 10);
        assert_eq!(frozen_count(0.0, 10).unwrap(), 0);
        assert_eq!(frozen_count(0.71, 10).unwrap(), 8);
        assert_eq!(frozen_count(0.7, 13).unwrap(), 10);
        assert!(frozen_count(1.5, 10).is_err());
        assert!(frozen_count(-0.1, 10).is_err());
    }

    #[test]
    fn freeze_marks_earliest_layers() {
        let mut m = build_xception_lite::<f32>(&tiny(), 1).unwrap();
        let p = m.spec.layers.len();
        let k = m.freeze_layers(0.5).unwrap();
        assert_eq!(k, p.div_ceil(2));
        assert!(m.spec.layers[..k].iter().all(|l| !l.trainable));
        assert!(m.spec.layers[k..].iter().all(|l| l.trainable));
        m.freeze_layers(0.0).unwrap();
        assert_eq!(m.frozen_layers(), 0);
        m.freeze_layers(1.0).unwrap();
        assert_eq!(m.frozen_layers(), p);
    }

    #[test]
    fn forward_is_deterministic_and_per_sample() {
        let m = build_xception_lite::<f64>(&tiny(), 2).unwrap();
        let mut r = rng::seeded(3);
        let sample: Vec<f64> = (0..8 * 8 * 3).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let other: Vec<f64> = (0..8 * 8 * 3).map(|_| rand::Rng::random_range(&mut r, 0.0..1.0)).collect();
        let batch = Tensor::new(vec![3, 8, 8, 3], [sample.clone(), other, sample].concat()).unwrap();
        let a = m.predict(&batch).unwrap();
        let b = m.predict(&batch).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data()[0..2], a.data()[4..6]);
    }

    #[test]
    fn wrong_input_size_rejected() {
        let m = build_xception_lite::<f64>(&tiny(), 2).unwrap();
        assert!(m.predict(&Tensor::zeros(&[1, 9, 9, 3])).is_err());
    }

    #[test]
    fn baseline_has_no_attention_layer() {
        let m = build_xception_lite::<f32>(&tiny().without_attention(), 0).unwrap();
        assert!(m.spec.layers.iter().all(|l| !matches!(l.kind, LayerKind::Attention { .. })));
        assert_eq!(m.predict(&Tensor::zeros(&[2, 8, 8, 3])).unwrap().shape(), &[2, 2]);
    }
}
