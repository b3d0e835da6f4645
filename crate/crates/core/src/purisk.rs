//! Empirical risks for positive-unlabeled training.
//!
//! All risks are built on the tape from sigmoid outputs and the logistic
//! loss, so they can be minimized directly:
//!
//! * PN: `π_p·R_p⁺ + π_n·R_n⁻`, needs labeled negatives.
//! * uPU: `π_p·R_p⁺ − π_p·R_p⁻ + R_u⁻`, unbiased but can go negative.
//! * nnPU: `π_p·R_p⁺ + max(0, R_u⁻ − π_p·R_p⁻)`.
//! * naive: positives as label 1, unlabeled as label 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("class prior must lie strictly between 0 and 1, got {0}")]
    Prior(f64),
    #[error("the {0} index set is empty")]
    EmptySet(&'static str),
    #[error("label must be 0 or 1, got {0}")]
    Label(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, RiskError>;

/// Positive class prior `π_p`, with `π_n = 1 − π_p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ClassPrior(f64);

impl ClassPrior {
    pub fn new(pi_p: f64) -> Result<Self> {
        if pi_p > 0.0 && pi_p < 1.0 {
            Ok(ClassPrior(pi_p))
        } else {
            Err(RiskError::Prior(pi_p))
        }
    }

    pub fn positive(self) -> f64 {
        self.0
    }

    pub fn negative(self) -> f64 {
        1.0 - self.0
    }
}

impl TryFrom<f64> for ClassPrior {
    type Error = RiskError;
    fn try_from(v: f64) -> Result<Self> {
        ClassPrior::new(v)
    }
}

impl From<ClassPrior> for f64 {
    fn from(p: ClassPrior) -> f64 {
        p.0
    }
}

/// Logistic loss of a single prediction.
pub fn logistic_loss(prediction: f64, label: f64) -> Result<f64> {
    if label != 0.0 && label != 1.0 {
        return Err(RiskError::Label(label));
    }
    let p = prediction.clamp(EPS, 1.0 - EPS);
    Ok(-(label * p.ln() + (1.0 - label) * (1.0 - p).ln()))
}

/// The three 1x1 risk components.
#[derive(Clone, Copy, Debug)]
pub struct RiskTerms {
    /// Labeled positives against label 1.
    pub p_plus: Var,
    /// Labeled positives against label 0.
    pub p_minus: Var,
    /// Unlabeled nodes against label 0.
    pub u_minus: Var,
}

impl RiskTerms {
    pub fn values(&self, tape: &Tape) -> [f64; 3] {
        [self.p_plus, self.p_minus, self.u_minus].map(|v| tape.value(v).data()[0])
    }
}

fn mean_loss(tape: &Tape, probs: Var, index: &[usize], label: f64, what: &'static str) -> Result<Var> {
    if index.is_empty() {
        return Err(RiskError::EmptySet(what));
    }
    let picked = tape.gather_rows(probs, index)?;
    let losses = tape.logistic_loss(picked, label, EPS)?;
    Ok(tape.mean(losses)?)
}

/// Risk terms from `n×1` sigmoid outputs and the labeled-positive and
/// unlabeled index sets.
pub fn risk_terms(tape: &Tape, probs: Var, positives: &[usize], unlabeled: &[usize]) -> Result<RiskTerms> {
    Ok(RiskTerms {
        p_plus: mean_loss(tape, probs, positives, 1.0, "labeled positive")?,
        p_minus: mean_loss(tape, probs, positives, 0.0, "labeled positive")?,
        u_minus: mean_loss(tape, probs, unlabeled, 0.0, "unlabeled")?,
    })
}

/// `R_u⁻ − π_p·R_p⁻`, the estimate of `π_n·R_n⁻` shared by both PU risks.
fn negative_part(tape: &Tape, terms: &RiskTerms, prior: ClassPrior) -> Result<Var> {
    let weighted = tape.scale(terms.p_minus, prior.positive());
    Ok(tape.sub(terms.u_minus, weighted)?)
}

/// Unbiased PU risk. Evaluated as `π_p·R_p⁺ + (R_u⁻ − π_p·R_p⁻)` so that it is
/// bit-identical to [`nnpu_risk`] whenever the clamp there is inactive.
pub fn upu_risk(tape: &Tape, terms: &RiskTerms, prior: ClassPrior) -> Result<Var> {
    let positive = tape.scale(terms.p_plus, prior.positive());
    let negative = negative_part(tape, terms, prior)?;
    Ok(tape.add(positive, negative)?)
}

/// Non-negative PU risk: the estimated negative-class part is clamped at 0.
pub fn nnpu_risk(tape: &Tape, terms: &RiskTerms, prior: ClassPrior) -> Result<Var> {
    let positive = tape.scale(terms.p_plus, prior.positive());
    let negative = tape.relu(negative_part(tape, terms, prior)?);
    Ok(tape.add(positive, negative)?)
}

/// Fully supervised risk with known negatives.
pub fn pn_risk(
    tape: &Tape,
    probs: Var,
    positives: &[usize],
    negatives: &[usize],
    prior: ClassPrior,
) -> Result<Var> {
    let p_plus = mean_loss(tape, probs, positives, 1.0, "positive")?;
    let n_minus = mean_loss(tape, probs, negatives, 0.0, "negative")?;
    let a = tape.scale(p_plus, prior.positive());
    let b = tape.scale(n_minus, prior.negative());
    Ok(tape.add(a, b)?)
}

/// Plain cross-entropy that treats every unlabeled node as negative: the
/// mean logistic loss over `P ∪ U`.
pub fn naive_ce_risk(tape: &Tape, probs: Var, positives: &[usize], unlabeled: &[usize]) -> Result<Var> {
    let total = positives.len() + unlabeled.len();
    if total == 0 {
        return Err(RiskError::EmptySet("labeled positive and unlabeled"));
    }
    let mut parts = Vec::new();
    for (index, label) in [(positives, 1.0), (unlabeled, 0.0)] {
        if !index.is_empty() {
            let picked = tape.gather_rows(probs, index)?;
            parts.push(tape.sum(tape.logistic_loss(picked, label, EPS)?));
        }
    }
    let mut sum = parts[0];
    for &p in &parts[1..] {
        sum = tape.add(sum, p)?;
    }
    Ok(tape.scale(sum, 1.0 / total as f64))
}

/// Convenience for tests and diagnostics: loads three scalar values as
/// constant risk terms.
pub fn constant_terms(tape: &Tape, p_plus: f64, p_minus: f64, u_minus: f64) -> RiskTerms {
    RiskTerms {
        p_plus: tape.constant(Tensor::scalar(p_plus)),
        p_minus: tape.constant(Tensor::scalar(p_minus)),
        u_minus: tape.constant(Tensor::scalar(u_minus)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item().unwrap()
    }

    #[test]
    fn logistic_loss_examples() {
        assert_abs_diff_eq!(logistic_loss(0.5, 1.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(logistic_loss(1.0 - EPS, 1.0).unwrap() < 1e-11);
        assert_abs_diff_eq!(logistic_loss(0.75, 0.0).unwrap(), 4f64.ln(), epsilon = 1e-15);
        assert!(logistic_loss(0.5, 2.0).is_err());
    }

    #[test]
    fn class_prior_bounds() {
        assert!(ClassPrior::new(0.0).is_err());
        assert!(ClassPrior::new(1.0).is_err());
        assert!(ClassPrior::new(f64::NAN).is_err());
        let p = ClassPrior::new(0.3).unwrap();
        assert_abs_diff_eq!(p.negative(), 0.7);
        assert!(serde_json::from_str::<ClassPrior>("1.5").is_err());
    }

    #[test]
    fn risk_terms_examples() {
        let tape = Tape::new();
        let half = tape.constant(Tensor::column(vec![0.5; 4]));
        let t = risk_terms(&tape, half, &[0, 1], &[2, 3]).unwrap();
        for v in t.values(&tape) {
            assert_abs_diff_eq!(v, 2f64.ln(), epsilon = 1e-15);
        }

        let probs = tape.constant(Tensor::column(vec![0.8, 0.8, 0.2]));
        let t = risk_terms(&tape, probs, &[0, 1], &[2]).unwrap();
        let [pp, pm, um] = t.values(&tape);
        assert_abs_diff_eq!(pp, -(0.8f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(um, -(0.8f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(pm, -(0.2f64.ln()), epsilon = 1e-15);

        let perfect = tape.constant(Tensor::column(vec![1.0, 1.0, 0.0]));
        let [pp, pm, _] = risk_terms(&tape, perfect, &[0, 1], &[2]).unwrap().values(&tape);
        assert!(pp < 1e-11 && pm > 20.0);

        assert!(matches!(risk_terms(&tape, probs, &[], &[2]), Err(RiskError::EmptySet(_))));
        assert!(matches!(risk_terms(&tape, probs, &[0], &[]), Err(RiskError::EmptySet(_))));
    }

    #[test]
    fn upu_examples() {
        let tape = Tape::new();
        let half = ClassPrior::new(0.5).unwrap();
        let t = constant_terms(&tape, 0.2, 0.9, 0.3);
        assert_abs_diff_eq!(scalar(&tape, upu_risk(&tape, &t, half).unwrap()), -0.05, epsilon = 1e-15);

        let t = constant_terms(&tape, 0.2, 0.0, 0.3);
        assert_abs_diff_eq!(scalar(&tape, upu_risk(&tape, &t, half).unwrap()), 0.5 * 0.2 + 0.3, epsilon = 1e-15);

        let t = constant_terms(&tape, 0.0, 0.0, 0.0);
        assert_eq!(scalar(&tape, upu_risk(&tape, &t, half).unwrap()), 0.0);
    }

    #[test]
    fn nnpu_examples() {
        let tape = Tape::new();
        let half = ClassPrior::new(0.5).unwrap();
        let t = constant_terms(&tape, 0.2, 0.9, 0.3);
        assert_abs_diff_eq!(scalar(&tape, nnpu_risk(&tape, &t, half).unwrap()), 0.1, epsilon = 1e-15);

        let t = constant_terms(&tape, 0.2, 0.4, 0.3);
        assert_eq!(
            scalar(&tape, nnpu_risk(&tape, &t, half).unwrap()),
            scalar(&tape, upu_risk(&tape, &t, half).unwrap())
        );
    }

    #[test]
    fn pn_examples() {
        let tape = Tape::new();
        let prior = ClassPrior::new(0.3).unwrap();
        let half = tape.constant(Tensor::column(vec![0.5; 3]));
        let r = pn_risk(&tape, half, &[0], &[1, 2], prior).unwrap();
        assert_abs_diff_eq!(scalar(&tape, r), 2f64.ln(), epsilon = 1e-15);

        // positives at 0.9, negative at 0.25
        let probs = tape.constant(Tensor::column(vec![0.9, 0.9, 0.25]));
        let r = pn_risk(&tape, probs, &[0, 1], &[2], prior).unwrap();
        let expected = 0.3 * -(0.9f64.ln()) + 0.7 * -(0.75f64.ln());
        assert_abs_diff_eq!(scalar(&tape, r), expected, epsilon = 1e-15);

        assert!(pn_risk(&tape, probs, &[0], &[], prior).is_err());
    }

    #[test]
    fn naive_ce_examples() {
        let tape = Tape::new();
        let half = tape.constant(Tensor::column(vec![0.5; 3]));
        let r = naive_ce_risk(&tape, half, &[0], &[1, 2]).unwrap();
        assert_abs_diff_eq!(scalar(&tape, r), 2f64.ln(), epsilon = 1e-15);

        let perfect = tape.constant(Tensor::column(vec![1.0, 0.0, 0.0]));
        assert!(scalar(&tape, naive_ce_risk(&tape, perfect, &[0], &[1, 2]).unwrap()) < 1e-11);

        // one positive at 0.6, unlabeled at 0.3 and 0.9
        let mixed = tape.constant(Tensor::column(vec![0.6, 0.3, 0.9]));
        let r = naive_ce_risk(&tape, mixed, &[0], &[1, 2]).unwrap();
        let expected = (-(0.6f64.ln()) - 0.7f64.ln() - 0.1f64.ln()) / 3.0;
        assert_abs_diff_eq!(scalar(&tape, r), expected, epsilon = 1e-14);
    }
}
