//! Exact belief arithmetic on small synthetic cases: entropy, information
//! gain, cost-normalized efficiency, Bayes updates, the thresholded label
//! rule, and brute-force advantages under a uniform reference policy.
//!
//! Entropies are in nats.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::grader::GradeLabel;

const SUM_TOLERANCE: f64 = 1e-9;
const TIE_TOLERANCE: f64 = 1e-12;
pub const MAX_HORIZON: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief {
    probabilities: Vec<f64>,
}

impl Belief {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Belief("belief over an empty label set".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Belief(format!("components must be finite and >= 0: {probabilities:?}")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Belief(format!("components sum to {sum}, not 1")));
        }
        Ok(Self { probabilities })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Belief("belief over an empty label set".into()));
        }
        Ok(Self {
            probabilities: vec![1.0 / n as f64; n],
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Belief::new(v)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Self {
        b.probabilities
    }
}

/// A finite diagnosis problem. `likelihoods[action][outcome][d]` is
/// P(outcome | diagnosis d, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCase {
    pub diagnosis_set: Vec<String>,
    pub prior: Belief,
    pub likelihoods: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub true_diagnosis: String,
    pub costs: BTreeMap<String, f64>,
}

impl ToyCase {
    pub fn validate(&self) -> Result<()> {
        let n = self.diagnosis_set.len();
        if self.prior.len() != n {
            return Err(Error::Belief(format!("prior has {} components for {n} diagnoses", self.prior.len())));
        }
        if !self.diagnosis_set.contains(&self.true_diagnosis) {
            return Err(Error::Belief(format!("true diagnosis {:?} not in the label set", self.true_diagnosis)));
        }
        if self.likelihoods.is_empty() {
            return Err(Error::Belief("case has no actions".into()));
        }
        for (action, outcomes) in &self.likelihoods {
            let cost = self
                .costs
                .get(action)
                .ok_or_else(|| Error::Belief(format!("action {action:?} has no cost")))?;
            if cost.is_nan() || *cost < 0.0 {
                return Err(Error::Belief(format!("action {action:?} has negative cost")));
            }
            for (outcome, probs) in outcomes {
                if probs.len() != n || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Belief(format!("likelihood ({action}, {outcome}) is malformed")));
                }
            }
            for d in 0..n {
                let total: f64 = outcomes.values().map(|p| p[d]).sum();
                if (total - 1.0).abs() > SUM_TOLERANCE {
                    return Err(Error::Belief(format!(
                        "outcomes of {action:?} sum to {total} under {:?}",
                        self.diagnosis_set[d]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let case: ToyCase = serde_json::from_str(&read_to_string(path)?)?;
        case.validate()?;
        Ok(case)
    }

    pub fn actions(&self) -> impl Iterator<Item = &str> {
        self.likelihoods.keys().map(String::as_str)
    }

    fn truth_index(&self) -> usize {
        self.diagnosis_set
            .iter()
            .position(|d| *d == self.true_diagnosis)
            .expect("validated case")
    }

    fn cost(&self, action: &str) -> f64 {
        self.costs.get(action).copied().unwrap_or(0.0)
    }

    fn outcomes(&self, action: &str) -> Result<&BTreeMap<String, Vec<f64>>> {
        self.likelihoods
            .get(action)
            .ok_or_else(|| Error::Belief(format!("unknown action {action:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraderThresholds {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta_eff: f64,
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for GraderThresholds {
    fn default() -> Self {
        Self {
            alpha0: 0.05,
            alpha1: 0.5,
            beta_eff: 0.01,
            epsilon: 1e-9,
            lambda: 0.05,
        }
    }
}

impl GraderThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 >= 0.0 && self.alpha1 > self.alpha0) {
            return Err(Error::Config("thresholds need alpha1 > alpha0 >= 0".into()));
        }
        if !(self.beta_eff > 0.0 && self.epsilon > 0.0 && self.lambda >= 0.0) {
            return Err(Error::Config("thresholds need beta > 0, epsilon > 0, lambda >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    pub value: f64,
    pub horizon: u32,
    pub q: f64,
    pub v: f64,
}

pub fn entropy(b: &Belief) -> f64 {
    -b.probabilities
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

pub fn information_gain(before: &Belief, after: &Belief) -> f64 {
    entropy(before) - entropy(after)
}

pub fn efficiency(ig: f64, cost: f64, thresholds: &GraderThresholds) -> f64 {
    ig / (cost + thresholds.epsilon)
}

/// Information gain as a fraction of the uncertainty before the action;
/// zero when there was no uncertainty left.
pub fn normalized_gain(ig: f64, entropy_before: f64) -> f64 {
    if entropy_before > 0.0 {
        ig / entropy_before
    } else {
        0.0
    }
}

pub fn posterior_update(b: &Belief, action: &str, outcome: &str, case: &ToyCase) -> Result<Belief> {
    let likelihood = case
        .outcomes(action)?
        .get(outcome)
        .ok_or_else(|| Error::Belief(format!("unknown outcome {outcome:?} for {action:?}")))?;
    bayes(b, likelihood)
}

fn bayes(b: &Belief, likelihood: &[f64]) -> Result<Belief> {
    let joint: Vec<f64> = b.probabilities.iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(Error::Belief("outcome has zero probability under the current belief".into()));
    }
    Ok(Belief {
        probabilities: joint.into_iter().map(|j| j / evidence).collect(),
    })
}

/// Expected posterior entropy when outcomes follow the prior predictive.
pub fn expected_entropy_after(b: &Belief, action: &str, case: &ToyCase) -> Result<f64> {
    let mut total = 0.0;
    for likelihood in case.outcomes(action)?.values() {
        let evidence: f64 = b.probabilities.iter().zip(likelihood).map(|(p, l)| p * l).sum();
        if evidence > 0.0 {
            total += evidence * entropy(&bayes(b, likelihood)?);
        }
    }
    Ok(total)
}

pub fn threshold_label(v_hat: f64, eta_hat: f64, unsafe_action: bool, th: &GraderThresholds) -> GradeLabel {
    if unsafe_action {
        GradeLabel::CriticalError
    } else if v_hat >= th.alpha1 && eta_hat >= th.beta_eff {
        GradeLabel::HighYield
    } else if v_hat >= th.alpha0 && eta_hat < th.beta_eff {
        GradeLabel::Inefficient
    } else {
        GradeLabel::LowYield
    }
}

/// 100 when the true diagnosis is the unique argmax, 100/k when it shares
/// the maximum with k-1 others, else 0.
fn surrogate_score(b: &Belief, truth: usize) -> f64 {
    let max = b.probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if b.probabilities[truth] < max - TIE_TOLERANCE {
        return 0.0;
    }
    let ties = b.probabilities.iter().filter(|p| **p >= max - TIE_TOLERANCE).count();
    100.0 / ties as f64
}

struct Search<'a> {
    case: &'a ToyCase,
    truth: usize,
    lambda: f64,
}

impl Search<'_> {
    /// Value with `steps` actions left under the uniform policy.
    fn value(&self, b: &Belief, spent: f64, steps: u32) -> Result<f64> {
        if steps == 0 {
            return Ok(surrogate_score(b, self.truth) - self.lambda * spent);
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for action in self.case.actions() {
            sum += self.q(b, spent, action, steps)?;
            n += 1;
        }
        Ok(sum / n as f64)
    }

    /// Take `action` now, then follow the uniform policy for `steps - 1`.
    /// Outcomes are drawn from the true diagnosis.
    fn q(&self, b: &Belief, spent: f64, action: &str, steps: u32) -> Result<f64> {
        let spent = spent + self.case.cost(action);
        let mut total = 0.0;
        for likelihood in self.case.outcomes(action)?.values() {
            let p = likelihood[self.truth];
            if p == 0.0 {
                continue;
            }
            let next = bayes(b, likelihood)?;
            total += p * self.value(&next, spent, steps - 1)?;
        }
        Ok(total)
    }
}

/// A(h, a) = Q(h, a) − V(h) by exhaustive enumeration. The score is a
/// correctness surrogate minus λ times accumulated cost, and V averages Q
/// uniformly over the case's actions.
pub fn oracle_advantage(
    case: &ToyCase,
    belief: &Belief,
    action: &str,
    horizon: u32,
    th: &GraderThresholds,
) -> Result<AdvantageEstimate> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(Error::Belief(format!("horizon must be in 1..={MAX_HORIZON}, got {horizon}")));
    }
    case.validate()?;
    if belief.len() != case.diagnosis_set.len() {
        return Err(Error::Belief("belief does not match the case's label set".into()));
    }
    let search = Search {
        case,
        truth: case.truth_index(),
        lambda: th.lambda,
    };
    let q = search.q(belief, 0.0, action, horizon)?;
    let v = search.value(belief, 0.0, horizon)?;
    Ok(AdvantageEstimate {
        value: q - v,
        horizon,
        q,
        v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSignal {
    pub action: String,
    pub outcome: String,
    pub information_gain: f64,
    pub efficiency: f64,
    pub normalized_gain: f64,
    pub label: GradeLabel,
}

/// Label every step of a synthetic episode with the threshold rule.
/// Each step is (action, outcome, unsafe).
pub fn label_episode(case: &ToyCase, steps: &[(String, String, bool)], th: &GraderThresholds) -> Result<Vec<TurnSignal>> {
    case.validate()?;
    let mut b = case.prior.clone();
    let mut out = Vec::with_capacity(steps.len());
    for (action, outcome, unsafe_action) in steps {
        let next = posterior_update(&b, action, outcome, case)?;
        let h = entropy(&b);
        let ig = h - entropy(&next);
        let eta = efficiency(ig, case.cost(action), th);
        let v_hat = normalized_gain(ig, h);
        out.push(TurnSignal {
            action: action.clone(),
            outcome: outcome.clone(),
            information_gain: ig,
            efficiency: eta,
            normalized_gain: v_hat,
            label: threshold_label(v_hat, eta, *unsafe_action, th),
        });
        b = next;
    }
    Ok(out)
}
