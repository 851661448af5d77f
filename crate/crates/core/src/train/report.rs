//! Repeated-run aggregation and model comparison tables.

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::trainer::{evaluate_model, train_model, TrainConfig, TrainHistory};
use crate::data::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub report: MetricsReport,
    pub history: TrainHistory,
}

/// Population standard deviation (divide by R) of each scalar metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub accuracy_pct: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatedReport {
    pub runs: Vec<RunRecord>,
    /// Arithmetic means of the scalar metrics; the confusion matrix is the
    /// sum over runs and `top1_error_pct` is `100 − mean accuracy`.
    pub mean: MetricsReport,
    pub std: MetricSpread,
    /// Index of the run with the highest test accuracy (first on ties).
    pub best: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mean_opt(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.map(|v| mean_std(&v).0)
}

/// Aggregates finished runs.
pub fn aggregate_runs(runs: Vec<RunRecord>) -> Result<RepeatedReport> {
    let first = runs.first().ok_or_else(|| Error::invalid("at least one run is required"))?;
    let k = first.report.confusion.len();
    if runs.iter().any(|r| r.report.confusion.len() != k) {
        return Err(Error::invalid("runs disagree on the number of classes"));
    }
    let col = |f: fn(&MetricsReport) -> f64| runs.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
    let (acc, acc_sd) = mean_std(&col(|r| r.accuracy_pct));
    let (prec, prec_sd) = mean_std(&col(|r| r.precision_macro));
    let (rec, rec_sd) = mean_std(&col(|r| r.recall_macro));
    let (f1, f1_sd) = mean_std(&col(|r| r.f1_macro));
    let mut confusion = vec![vec![0; k]; k];
    for r in &runs {
        for (row, add) in confusion.iter_mut().zip(&r.report.confusion) {
            row.iter_mut().zip(add).for_each(|(a, b)| *a += b);
        }
    }
    let fpr: Vec<_> = runs.iter().map(|r| r.report.fpr_pct).collect();
    let fnr: Vec<_> = runs.iter().map(|r| r.report.fnr_pct).collect();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.report.accuracy_pct > runs[best].report.accuracy_pct {
            best = i;
        }
    }
    let mean = MetricsReport {
        accuracy_pct: if runs.len() == 1 { first.report.accuracy_pct } else { acc },
        top1_error_pct: 100.0 - if runs.len() == 1 { first.report.accuracy_pct } else { acc },
        precision_macro: prec,
        recall_macro: rec,
        f1_macro: f1,
        confusion,
        fpr_pct: mean_opt(&fpr),
        fnr_pct: mean_opt(&fnr),
        per_class: Vec::new(),
    };
    let std = MetricSpread { accuracy_pct: acc_sd, precision_macro: prec_sd, recall_macro: rec_sd, f1_macro: f1_sd };
    Ok(RepeatedReport { runs, mean, std, best })
}

/// Seed for run `i`: `base + i · stride` (stride 0 repeats one seed).
pub fn run_seed(base: u64, i: usize, stride: u64) -> u64 {
    base.wrapping_add((i as u64).wrapping_mul(stride))
}

/// `cfg.runs` independent runs. Run `i` builds its model and shuffles with
/// [`run_seed`]`(cfg.seed, i, stride)`, then evaluates on `split.test`.
/// Returns the aggregate and the trained model of the best run.
pub fn run_repeated<F>(
    mut build: F,
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    stride: u64,
) -> Result<(RepeatedReport, Model<f32>)>
where
    F: FnMut(u64) -> Result<Model<f32>>,
{
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.runs);
    let mut best: Option<(f64, Model<f32>)> = None;
    for i in 0..cfg.runs {
        let seed = run_seed(cfg.seed, i, stride);
        let mut model = build(seed)?;
        let history = train_model(&mut model, ds, split, &TrainConfig { seed, ..cfg.clone() })?;
        let report = evaluate_model(&model, ds, &split.test)?;
        if best.as_ref().is_none_or(|(acc, _)| report.accuracy_pct > *acc) {
            best = Some((report.accuracy_pct, model));
        }
        runs.push(RunRecord { seed, report, history });
    }
    let model = best.expect("at least one run").1;
    Ok((aggregate_runs(runs)?, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub accuracy_pct: f64,
    pub top1_error_pct: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// Population standard deviation of accuracy when aggregated over runs.
    pub accuracy_std: Option<f64>,
}

impl ComparisonRow {
    pub fn from_report(name: &str, r: &MetricsReport, accuracy_std: Option<f64>) -> Self {
        Self {
            name: name.to_string(),
            accuracy_pct: r.accuracy_pct,
            top1_error_pct: r.top1_error_pct,
            precision_macro: r.precision_macro,
            recall_macro: r.recall_macro,
            f1_macro: r.f1_macro,
            accuracy_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Sorts rows by accuracy, highest first; equal accuracies keep their input
/// order.
pub fn compare_models(rows: Vec<ComparisonRow>) -> Result<ComparisonTable> {
    if rows.len() < 2 {
        return Err(Error::invalid("a comparison needs at least two reports"));
    }
    for (i, r) in rows.iter().enumerate() {
        if rows[..i].iter().any(|o| o.name == r.name) {
            return Err(Error::invalid(format!("duplicate report name {:?}", r.name)));
        }
    }
    let mut rows = rows;
    rows.sort_by(|a, b| b.accuracy_pct.total_cmp(&a.accuracy_pct));
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut s = format!(
            "{:<w$}  {:>12}  {:>10}  {:>9}  {:>9}  {:>9}\n",
            "model", "accuracy (%)", "top-1 (%)", "precision", "recall", "f1"
        );
        for r in &self.rows {
            let acc = match r.accuracy_std {
                Some(sd) => format!("{:.2}±{:.2}", r.accuracy_pct, sd),
                None => format!("{:.2}", r.accuracy_pct),
            };
            s.push_str(&format!(
                "{:<w$}  {:>12}  {:>10.2}  {:>9.4}  {:>9.4}  {:>9.4}\n",
                r.name, acc, r.top1_error_pct, r.precision_macro, r.recall_macro, r.f1_macro
            ));
        }
        if self.rows.iter().any(|r| r.accuracy_std.is_some()) {
            s.push_str("± is the population standard deviation over runs\n");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("model,accuracy_pct,accuracy_std,top1_error_pct,precision_macro,recall_macro,f1_macro\n");
        for r in &self.rows {
            let sd = r.accuracy_std.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.name, r.accuracy_pct, sd, r.top1_error_pct, r.precision_macro, r.recall_macro, r.f1_macro
            ));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
