use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::{argmax, MetricsReport};
use crate::autodiff::{Graph, Var};
use crate::data::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::layers::{cross_entropy_loss, one_hot};
use crate::model::Model;
use crate::rng;
use crate::tensor::Tensor;

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    pub freeze_fraction: f64,
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
            freeze_fraction: 0.7,
            runs: 1,
        }
    }
}

impl TrainConfig {
    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::invalid(format!("{field}: {why}")));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate", "must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be positive");
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(field, "must be in (0, 1)");
            }
        }
        if !(self.eps_adam.is_finite() && self.eps_adam > 0.0) {
            return bad("eps_adam", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return bad("freeze_fraction", "must be in [0, 1]");
        }
        if self.runs == 0 {
            return bad("runs", "must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps_adam }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-epoch losses and accuracies (in %); "validation" is the test split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc));
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Mean cross-entropy and metrics over `indices`, predicting by argmax.
pub fn evaluate_with_loss(model: &Model<f32>, ds: &Dataset, indices: &[usize]) -> Result<(f64, MetricsReport)> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty index list"));
    }
    let k = model.config().num_classes;
    if ds.num_classes() != k {
        return Err(Error::invalid(format!("dataset has {} classes, model {k}", ds.num_classes())));
    }
    let mut predicted = Vec::with_capacity(indices.len());
    let mut total_loss = 0.0;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let probs = model.predict(&ds.batch(chunk)?)?;
        for (row, &i) in probs.data().chunks(k).zip(chunk) {
            predicted.push(argmax(row));
            total_loss -= (row[ds.labels[i]] as f64 + crate::layers::LOG_EPS).ln();
        }
    }
    let truth: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
    let report = MetricsReport::from_predictions(&truth, &predicted, k)?;
    Ok((total_loss / indices.len() as f64, report))
}

pub fn evaluate_model(model: &Model<f32>, ds: &Dataset, indices: &[usize]) -> Result<MetricsReport> {
    evaluate_with_loss(model, ds, indices).map(|(_, r)| r)
}

/// Trains the unfrozen layers with Adam on `split.train`, evaluating both
/// splits after every epoch.
///
/// Applies `cfg.freeze_fraction` to the model first. Each epoch reshuffles
/// the training indices from a stream derived from `cfg.seed`; the final
/// partial batch is kept.
pub fn train_model(
    model: &mut Model<f32>,
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::invalid("train and test splits must be non-empty"));
    }
    let mc = model.config();
    if ds.size() != mc.input_size || ds.channels() != mc.in_channels || ds.num_classes() != mc.num_classes {
        return Err(Error::invalid(format!(
            "dataset {}×{}×{} with {} classes does not fit the model",
            ds.size(),
            ds.size(),
            ds.channels(),
            ds.num_classes()
        )));
    }
    let classes = mc.num_classes;
    model.freeze_layers(cfg.freeze_fraction)?;
    let adam = cfg.adam();
    let trainable = model.trainable_mask();
    let mut states: Vec<Option<AdamState<f32>>> = model
        .params
        .entries
        .iter()
        .zip(&trainable)
        .map(|(e, &t)| t.then(|| AdamState::new(e.tensor.shape())))
        .collect();
    let mut order = split.train.clone();
    let mut shuffler = rng::derived(cfg.seed, u64::MAX);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.max_epochs {
        rng::shuffle(&mut order, &mut shuffler);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let vars = model.bind(&mut g, false);
            let x = g.constant(ds.batch(batch)?);
            let labels: Vec<usize> = batch.iter().map(|&i| ds.labels[i]).collect();
            let y = g.constant(one_hot::<f32>(&labels, classes)?);
            let probs = model.forward(&mut g, &vars, x)?;
            let loss = cross_entropy_loss(&mut g, probs, y)?;
            let value = g.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss: value });
            }
            g.backward(loss)?;
            step(model, &vars, &g, &mut states, &adam)?;
        }
        let (train_loss, train) = evaluate_with_loss(model, ds, &split.train)?;
        let (val_loss, val) = evaluate_with_loss(model, ds, &split.test)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc: train.accuracy_pct,
            val_loss,
            val_acc: val.accuracy_pct,
        });
    }
    Ok(history)
}

fn step(
    model: &mut Model<f32>,
    vars: &[Var],
    g: &Graph<f32>,
    states: &mut [Option<AdamState<f32>>],
    adam: &AdamConfig,
) -> Result<()> {
    for ((entry, &v), state) in model.params.entries.iter_mut().zip(vars).zip(states.iter_mut()) {
        if let Some(state) = state {
            let grad = g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(entry.tensor.shape()));
            adam_step(&mut entry.tensor, &grad, state, adam)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::GateMode;
    use crate::data::{generate_synthetic_dataset, stratified_split};
    use crate::model::{build_xception_lite, ModelConfig};

    fn tiny_model(seed: u64) -> Model<f32> {
        let cfg = ModelConfig::xception_lite(16, 2).with_widths(vec![4, 8]).with_hidden_units(8).with_attention(
            2,
            2,
            GateMode::Pooled,
        );
        build_xception_lite(&cfg, seed).unwrap()
    }

    fn setup() -> (Dataset, SplitIndices) {
        let ds = generate_synthetic_dataset(6, 16, 1).unwrap();
        let split = stratified_split(&ds.labels, 2, 0.34, 1).unwrap();
        (ds, split)
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig { max_epochs: epochs, batch_size: 3, freeze_fraction: 0.0, ..TrainConfig::default() }
    }

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.max_epochs), (1e-4, 16, 50));
        assert!(c.validate().is_ok());
        let bad = TrainConfig { beta2: 1.0, ..c.clone() };
        assert!(bad.validate().unwrap_err().to_string().contains("beta2"));
        let bad = TrainConfig { batch_size: 0, ..c };
        assert!(bad.validate().unwrap_err().to_string().contains("batch_size"));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (ds, split) = setup();
        let mut m = tiny_model(0);
        let before = m.params.clone();
        let h = train_model(&mut m, &ds, &split, &TrainConfig { learning_rate: 0.0, ..quick(2) }).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert_eq!(m.params, before);
    }

    #[test]
    fn frozen_params_never_change() {
        let (ds, split) = setup();
        let mut m = tiny_model(0);
        let before = m.params.clone();
        train_model(&mut m, &ds, &split, &TrainConfig { freeze_fraction: 0.7, learning_rate: 1e-2, ..quick(2) })
            .unwrap();
        let k = m.frozen_layers();
        assert!(k > 0);
        for (a, b) in m.params.entries.iter().zip(&before.entries) {
            if a.layer < k {
                assert_eq!(a.tensor, b.tensor, "{}", a.name);
            }
        }
        assert!(m.params.entries.iter().zip(&before.entries).any(|(a, b)| a.tensor != b.tensor));
    }

    #[test]
    fn deterministic_history_and_params() {
        let (ds, split) = setup();
        let cfg = TrainConfig { learning_rate: 1e-3, ..quick(2) };
        let (mut a, mut b) = (tiny_model(5), tiny_model(5));
        let ha = train_model(&mut a, &ds, &split, &cfg).unwrap();
        let hb = train_model(&mut b, &ds, &split, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
        assert!(ha.to_csv().starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n1,"));
    }

    #[test]
    fn memorizes_a_single_sample() {
        let ds = generate_synthetic_dataset(1, 16, 2).unwrap();
        let split = SplitIndices { train: vec![0], test: vec![1], seed: 0, test_fraction: 0.5 };
        let mut m = tiny_model(1);
        let h = train_model(&mut m, &ds, &split, &TrainConfig { learning_rate: 1e-2, ..quick(50) }).unwrap();
        assert!(h.last().unwrap().train_loss < 1e-2, "{:?}", h.last());
    }

    #[test]
    fn evaluation_rejects_empty_indices() {
        let (ds, _) = setup();
        assert!(evaluate_model(&tiny_model(0), &ds, &[]).is_err());
    }
}
