//! Full-batch training with Adam, F1 evaluation on the unlabeled set, and
//! the multi-trial experiment runners.

mod adam;
mod experiments;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, GraphDataset, PuSplit};
use crate::graph::{GraphError, HopMaskSet};
use crate::model::{Lsdan, ModelError, NetworkConfig};
use crate::purisk::{self, ClassPrior, RiskError};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use adam::{Adam, AdamConfig};
pub use experiments::{
    ablation_columns, ablation_suite, run_trials, single_hop_analysis, sweep, AblationRow,
    AblationTable, HopAnalysis, HopAnalysisRow, ResultRow, SweepAxis, SweepRow, TrialFailure,
    TrialPlan, TrialSummary, ABLATION_COLUMNS,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },
    #[error("non-negative risk evaluated to {value} at step {step}")]
    NegativeRisk { step: usize, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Upu,
    Nnpu,
    NaiveCe,
    /// Supervised risk with every label in `P ∪ U` revealed.
    Pn,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Upu => "upu",
            Objective::Nnpu => "nnpu",
            Objective::NaiveCe => "naive_ce",
            Objective::Pn => "pn",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upu" => Ok(Objective::Upu),
            "nnpu" => Ok(Objective::Nnpu),
            "naive_ce" | "naive-ce" => Ok(Objective::NaiveCe),
            "pn" => Ok(Objective::Pn),
            _ => Err(TrainError::Config(format!(
                "unknown objective {s:?} (expected upu, nnpu, naive_ce or pn)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub adam: AdamConfig,
    pub objective: Objective,
    pub seed: u64,
    pub eval_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            adam: AdamConfig::default(),
            objective: Objective::Nnpu,
            seed: 0,
            eval_threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(TrainError::Config("steps must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return Err(TrainError::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if !(self.eval_threshold > 0.0 && self.eval_threshold < 1.0) {
            return Err(TrainError::Config("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// What the optimizer is allowed to see. The PU variant carries only index
/// sets and the prior, so unlabeled ground truth cannot reach training.
#[derive(Clone, Debug, PartialEq)]
pub enum Supervision {
    Pu {
        positives: Vec<usize>,
        unlabeled: Vec<usize>,
        prior: ClassPrior,
    },
    Pn {
        positives: Vec<usize>,
        negatives: Vec<usize>,
        prior: ClassPrior,
    },
}

impl Supervision {
    pub fn pu(split: &PuSplit) -> Self {
        Supervision::Pu {
            positives: split.positives_labeled.clone(),
            unlabeled: split.unlabeled.clone(),
            prior: split.prior,
        }
    }

    /// Reveals the true label of every node in `P ∪ U`; the prior is the
    /// positive share of that subset.
    pub fn pn(split: &PuSplit, binary_labels: &[u8]) -> Result<Self> {
        let mut nodes: Vec<usize> = split
            .positives_labeled
            .iter()
            .chain(&split.unlabeled)
            .copied()
            .collect();
        nodes.sort_unstable();
        let (positives, negatives): (Vec<usize>, Vec<usize>) =
            nodes.into_iter().partition(|&i| binary_labels[i] == 1);
        let prior = ClassPrior::new(positives.len() as f64 / (positives.len() + negatives.len()) as f64)?;
        Ok(Supervision::Pn {
            positives,
            negatives,
            prior,
        })
    }

    pub fn for_objective(objective: Objective, split: &PuSplit, binary_labels: &[u8]) -> Result<Self> {
        match objective {
            Objective::Pn => Self::pn(split, binary_labels),
            _ => Ok(Self::pu(split)),
        }
    }
}

/// The scalar training objective for `n×1` probabilities.
pub fn objective_value(tape: &Tape, probs: Var, objective: Objective, sup: &Supervision) -> Result<Var> {
    let risk = match (objective, sup) {
        (Objective::Pn, Supervision::Pn { positives, negatives, prior }) => {
            purisk::pn_risk(tape, probs, positives, negatives, *prior)?
        }
        (Objective::Pn, _) | (_, Supervision::Pn { .. }) => {
            return Err(TrainError::Config(format!(
                "objective {objective} does not match the supervision given"
            )))
        }
        (Objective::NaiveCe, Supervision::Pu { positives, unlabeled, .. }) => {
            purisk::naive_ce_risk(tape, probs, positives, unlabeled)?
        }
        (Objective::Upu, Supervision::Pu { positives, unlabeled, prior }) => {
            let terms = purisk::risk_terms(tape, probs, positives, unlabeled)?;
            purisk::upu_risk(tape, &terms, *prior)?
        }
        (Objective::Nnpu, Supervision::Pu { positives, unlabeled, prior }) => {
            let terms = purisk::risk_terms(tape, probs, positives, unlabeled)?;
            purisk::nnpu_risk(tape, &terms, *prior)?
        }
    };
    Ok(risk)
}

/// A trained network and what the last forward pass produced.
#[derive(Debug)]
pub struct Fitted {
    pub model: Lsdan,
    /// Objective value before each update.
    pub loss_curve: Vec<f64>,
    /// Sigmoid outputs of every node after training.
    pub probabilities: Vec<f64>,
    /// Per layer, per hop: mean attention weight over all nodes.
    pub hop_attention_means: Vec<Vec<f64>>,
}

fn column_means(t: &Tensor) -> Vec<f64> {
    let mut sums = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        for (s, v) in sums.iter_mut().zip(t.row(i)) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / t.rows() as f64).collect()
}

/// Runs `steps` full-graph forward, backward and Adam iterations from an
/// initialization seeded with `cfg.seed`.
pub fn fit(
    features: &Arc<Tensor>,
    masks: &HopMaskSet,
    supervision: &Supervision,
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<Fitted> {
    cfg.validate()?;
    if masks.kappa() != net.kappa {
        return Err(TrainError::Config(format!(
            "network expects {} hop masks, {} given",
            net.kappa,
            masks.kappa()
        )));
    }
    let mut model = Lsdan::new(net.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, model.layers().iter().flat_map(|p| [&p.transform, &p.score, &p.key_transform]));
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let tape = Tape::new();
        let vars = model.bind(&tape);
        let x = tape.constant_shared(features.clone());
        let pass = model.forward(&tape, &vars, x, masks)?;
        let probs = tape.sigmoid(pass.logits);
        let loss = objective_value(&tape, probs, cfg.objective, supervision)?;
        let value = tape.value(loss).item().expect("objective is 1x1");
        if !value.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "objective".into(),
            });
        }
        if cfg.objective == Objective::Nnpu && value < 0.0 {
            return Err(TrainError::NegativeRisk { step, value });
        }
        loss_curve.push(value);
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .flat_map(|v| [v.transform, v.score, v.key_transform])
            .map(|v| grads.take(v).expect("every parameter receives a gradient"))
            .collect();
        adam.step(&mut model.params_mut(), &grads, step)?;
    }
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let x = tape.constant_shared(features.clone());
    let pass = model.forward(&tape, &vars, x, masks)?;
    let probabilities = tape.value(tape.sigmoid(pass.logits)).data().to_vec();
    if probabilities.iter().any(|p| !p.is_finite()) {
        return Err(TrainError::NonFinite {
            step: cfg.steps,
            what: "prediction".into(),
        });
    }
    let hop_attention_means = pass
        .layers
        .iter()
        .map(|l| column_means(&tape.value(l.hop_attention)))
        .collect();
    Ok(Fitted {
        model,
        loss_curve,
        probabilities,
        hop_attention_means,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with `prediction ≥ threshold` read as positive.
/// Each ratio is 0 when its denominator is.
pub fn evaluate_f1(predictions: &[f64], truth: &[u8], threshold: f64) -> Result<F1Score> {
    if predictions.len() != truth.len() {
        return Err(TrainError::Config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(TrainError::Config("empty evaluation set".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(truth) {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Score {
        precision,
        recall,
        f1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub loss_curve: Vec<f64>,
    /// Per layer, per hop: mean attention weight over all nodes.
    pub hop_attention_means: Vec<Vec<f64>>,
    pub runtime_seconds: f64,
}

/// One trial: train on the split, then score the unlabeled set against the
/// ground truth.
pub fn train_once(
    ds: &GraphDataset,
    masks: &HopMaskSet,
    split: &PuSplit,
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrialReport> {
    let start = Instant::now();
    let supervision = Supervision::for_objective(cfg.objective, split, &ds.binary_labels)?;
    let fitted = fit(&ds.features, masks, &supervision, net, cfg)?;
    let predictions: Vec<f64> = split.unlabeled.iter().map(|&i| fitted.probabilities[i]).collect();
    let truth: Vec<u8> = split.unlabeled.iter().map(|&i| ds.binary_labels[i]).collect();
    let score = evaluate_f1(&predictions, &truth, cfg.eval_threshold)?;
    Ok(TrialReport {
        seed: cfg.seed,
        f1: score.f1,
        precision: score.precision,
        recall: score.recall,
        loss_curve: fitted.loss_curve,
        hop_attention_means: fitted.hop_attention_means,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_examples() {
        let s = evaluate_f1(&[0.9, 0.2, 0.7], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = evaluate_f1(&[0.1, 0.2, 0.3], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        // TP=2, FP=1, FN=1
        let s = evaluate_f1(&[0.9, 0.8, 0.6, 0.1, 0.0], &[1, 1, 0, 1, 0], 0.5).unwrap();
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 2.0 / 3.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(evaluate_f1(&[0.5], &[1], 0.5).unwrap().f1, 1.0);
        assert!(evaluate_f1(&[], &[], 0.5).is_err());
        assert!(evaluate_f1(&[0.1], &[], 0.5).is_err());
    }

    #[test]
    fn config_invariants() {
        TrainConfig::default().validate().unwrap();
        let mut c = TrainConfig::default();
        c.steps = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.adam.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn objective_names_round_trip() {
        for o in [Objective::Upu, Objective::Nnpu, Objective::NaiveCe, Objective::Pn] {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
            assert_eq!(serde_json::to_string(&o).unwrap(), format!("\"{}\"", o.name()));
        }
        assert!("gan".parse::<Objective>().is_err());
    }

    #[test]
    fn supervision_variants() {
        let split = PuSplit {
            version: 1,
            dataset: "toy".into(),
            p: 0.5,
            seed: 0,
            positive_class: "1".into(),
            positives_labeled: vec![0],
            unlabeled: vec![1, 2, 3],
            prior: ClassPrior::new(1.0 / 3.0).unwrap(),
        };
        let labels = [1, 1, 0, 0, 0];
        match Supervision::pn(&split, &labels).unwrap() {
            Supervision::Pn { positives, negatives, prior } => {
                assert_eq!(positives, [0, 1]);
                assert_eq!(negatives, [2, 3]);
                assert_eq!(prior.positive(), 0.5);
            }
            s => panic!("{s:?}"),
        }
        let tape = Tape::new();
        let probs = tape.constant(Tensor::column(vec![0.5; 5]));
        let pu = Supervision::pu(&split);
        assert!(objective_value(&tape, probs, Objective::Pn, &pu).is_err());
        let v = objective_value(&tape, probs, Objective::NaiveCe, &pu).unwrap();
        assert!((tape.value(v).item().unwrap() - 2f64.ln()).abs() < 1e-15);
    }
}
