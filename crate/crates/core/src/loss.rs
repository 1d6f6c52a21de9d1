//! Direct-alignment losses over tabular policies and a plain gradient-descent
//! trainer.
//!
//! Every loss depends on the pair only through the log-ratio margin
//! `a = (log pi(y_w) - log pi_ref(y_w)) - (log pi(y_l) - log pi_ref(y_l))`.
//! Under a softmax the normaliser cancels in `a`, so `da/dtheta` is `+1` on
//! the winner's logit, `-1` on the loser's and zero elsewhere.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CandidateIndex, LossKind, PreferenceDataset, PreferencePair};
use crate::policy::TabularPolicy;
use crate::rng::{self, tag};

/// Loss value and its gradient with respect to every policy logit.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// The log-ratio margin `a` of a pair.
pub fn margin(policy: &TabularPolicy, reference: &TabularPolicy, pair: &PreferencePair) -> Result<f64> {
    if pair.winner_id == pair.loser_id {
        return Err(Error::SelfPair { index: 0 });
    }
    let p = pair.prompt_id;
    let dw = policy.log_prob(p, pair.winner_id)? - reference.log_prob(p, pair.winner_id)?;
    let dl = policy.log_prob(p, pair.loser_id)? - reference.log_prob(p, pair.loser_id)?;
    Ok(dw - dl)
}

/// How a loss kind is evaluated. `length_diff` is `|y_w| - |y_l|`.
#[derive(Debug, Clone, Copy)]
struct Objective {
    kind: LossKind,
    beta: f64,
}

impl Objective {
    /// `(value, dvalue/da)`.
    fn eval(&self, a: f64, length_diff: f64) -> (f64, f64) {
        let beta = self.beta;
        match self.kind {
            LossKind::Dpo => (softplus(-beta * a), -beta * logistic(-beta * a)),
            LossKind::Ipo { tau } => {
                let tau = tau.unwrap_or(beta);
                let r = a - 1.0 / (2.0 * tau);
                (r * r, 2.0 * r)
            }
            LossKind::Hinge => {
                let m = 1.0 - beta * a;
                if m > 0.0 {
                    (m, -beta)
                } else {
                    (0.0, 0.0)
                }
            }
            LossKind::DpoLengthPenalized { lambda } => {
                let z = beta * a - lambda * length_diff;
                (softplus(-z), -beta * logistic(-z))
            }
        }
    }
}

fn length_diff(kind: LossKind, universe: Option<&CandidateIndex>, pair: &PreferencePair) -> Result<f64> {
    match kind {
        LossKind::DpoLengthPenalized { .. } => {
            let u = universe.ok_or_else(|| {
                Error::InvalidArgument("length-penalized loss needs candidate lengths".into())
            })?;
            Ok(pair.length_diff(u)? as f64)
        }
        _ => Ok(0.0),
    }
}

/// Loss of one pair with its dense gradient.
pub fn pair_loss(
    kind: LossKind,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    universe: Option<&CandidateIndex>,
    beta: f64,
) -> Result<LossValueAndGrad> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    let a = margin(policy, reference, pair)?;
    let (value, dv) = Objective { kind, beta }.eval(a, length_diff(kind, universe, pair)?);
    let mut grad: Vec<Vec<f64>> = policy.shape().into_iter().map(|n| vec![0.0; n]).collect();
    let row = &mut grad[pair.prompt_id.index()];
    row[pair.winner_id.index()] += dv;
    row[pair.loser_id.index()] -= dv;
    Ok(LossValueAndGrad { value, grad })
}

/// `-log sigmoid(beta * a)`.
pub fn dpo_loss(policy: &TabularPolicy, reference: &TabularPolicy, pair: &PreferencePair, beta: f64) -> Result<LossValueAndGrad> {
    pair_loss(LossKind::Dpo, policy, reference, pair, None, beta)
}

/// `(a - 1 / (2 tau))^2`.
pub fn ipo_loss(policy: &TabularPolicy, reference: &TabularPolicy, pair: &PreferencePair, tau: f64) -> Result<LossValueAndGrad> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    pair_loss(LossKind::Ipo { tau: Some(tau) }, policy, reference, pair, None, tau)
}

/// `max(0, 1 - beta * a)`, subgradient zero on the flat side and at the kink.
pub fn hinge_loss(policy: &TabularPolicy, reference: &TabularPolicy, pair: &PreferencePair, beta: f64) -> Result<LossValueAndGrad> {
    pair_loss(LossKind::Hinge, policy, reference, pair, None, beta)
}

/// `-log sigmoid(beta * a - lambda * (|y_w| - |y_l|))`. The penalty sits
/// inside the logistic and is not scaled by `beta`.
pub fn dpo_length_penalized_loss(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    pair: &PreferencePair,
    universe: &CandidateIndex,
    beta: f64,
    lambda: f64,
) -> Result<LossValueAndGrad> {
    pair_loss(LossKind::DpoLengthPenalized { lambda }, policy, reference, pair, Some(universe), beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub steps: usize,
    pub learning_rate: f64,
    /// `None` is full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: TabularPolicy,
    /// One row per step (loss before that step's update) plus a final row
    /// for the trained parameters on the whole dataset.
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.trace.first().map_or(0.0, |r| r.mean_loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(0.0, |r| r.mean_loss)
    }

    pub fn trace_rows(&self) -> Vec<Vec<String>> {
        self.trace
            .iter()
            .map(|r| vec![r.step.to_string(), r.mean_loss.to_string(), r.grad_norm.to_string()])
            .collect()
    }
}

/// Weighted mean loss and gradient over `pairs`, accumulated in index order.
fn batch_objective(
    objective: Objective,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    universe: &CandidateIndex,
    pairs: &[&PreferencePair],
    grad: &mut [Vec<f64>],
) -> Result<f64> {
    for row in grad.iter_mut() {
        row.iter_mut().for_each(|g| *g = 0.0);
    }
    let total_weight: f64 = pairs.iter().map(|p| p.weight).sum();
    if total_weight == 0.0 {
        return Ok(0.0);
    }
    let mut loss = 0.0;
    for (i, pair) in pairs.iter().enumerate() {
        let a = margin(policy, reference, pair).map_err(|e| match e {
            Error::SelfPair { .. } => Error::SelfPair { index: i },
            other => other,
        })?;
        let (value, dv) = objective.eval(a, length_diff(objective.kind, Some(universe), pair)?);
        let w = pair.weight / total_weight;
        loss += w * value;
        let row = &mut grad[pair.prompt_id.index()];
        row[pair.winner_id.index()] += w * dv;
        row[pair.loser_id.index()] -= w * dv;
    }
    Ok(loss)
}

fn grad_norm(grad: &[Vec<f64>]) -> f64 {
    grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Gradient descent on the mean loss of `dataset`, starting from `init` with
/// `reference` frozen.
pub fn train(
    init: &TabularPolicy,
    reference: &TabularPolicy,
    dataset: &PreferenceDataset,
    universe: &CandidateIndex,
    kind: LossKind,
    beta: f64,
    params: &TrainParams,
) -> Result<TrainOutcome> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    if !(params.learning_rate.is_finite() && params.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be > 0, got {}",
            params.learning_rate
        )));
    }
    init.check_universe(universe)?;
    reference.check_universe(universe)?;
    dataset.validate(universe)?;

    let objective = Objective { kind, beta };
    let mut policy = init.clone();
    let mut grad: Vec<Vec<f64>> = policy.shape().into_iter().map(|n| vec![0.0; n]).collect();
    let all: Vec<&PreferencePair> = dataset.pairs.iter().collect();
    let mut trace = Vec::with_capacity(params.steps + 1);

    for step in 0..params.steps {
        let batch: Vec<&PreferencePair> = match params.batch_size {
            Some(b) if b < all.len() => {
                let mut rng = rng::substream(params.seed, &[tag::TRAIN, step as u64], 0);
                let mut idx = index::sample(&mut rng, all.len(), b).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| all[i]).collect()
            }
            _ => all.clone(),
        };
        let loss = batch_objective(objective, &policy, reference, universe, &batch, &mut grad)?;
        let norm = grad_norm(&grad);
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "{} loss became non-finite at step {step} (loss {loss}, grad norm {norm})",
                kind.name()
            )));
        }
        trace.push(TraceRow {
            step,
            mean_loss: loss,
            grad_norm: norm,
        });
        for (row, g) in policy.logit_table_mut().iter_mut().zip(&grad) {
            for (l, d) in row.iter_mut().zip(g) {
                *l -= params.learning_rate * d;
            }
        }
    }
    let loss = batch_objective(objective, &policy, reference, universe, &all, &mut grad)?;
    let norm = grad_norm(&grad);
    if !loss.is_finite() || !norm.is_finite() || policy.logit_table().iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::Numerical(format!(
            "{} training ended with non-finite state (loss {loss})",
            kind.name()
        )));
    }
    trace.push(TraceRow {
        step: params.steps,
        mean_loss: loss,
        grad_norm: norm,
    });
    Ok(TrainOutcome { policy, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CandidateResponse, PromptId, ResponseId, Source};
    use proptest::prelude::*;

    fn pair(w: u32, l: u32) -> PreferencePair {
        PreferencePair::new(PromptId(0), ResponseId(w), ResponseId(l), Source::Offline)
    }

    fn universe(lengths: &[u32]) -> CandidateIndex {
        CandidateIndex::new(vec![lengths
            .iter()
            .enumerate()
            .map(|(r, &length)| CandidateResponse {
                prompt_id: PromptId(0),
                response_id: ResponseId(r as u32),
                length,
                true_reward: 0.0,
            })
            .collect()])
        .unwrap()
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let pi = TabularPolicy::from_logits(vec![vec![0.3, -0.4, 1.1]], 0).unwrap();
        let v = dpo_loss(&pi, &pi, &pair(0, 2), 0.1).unwrap();
        assert!((v.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dpo_closed_form_ratio_example() {
        // ratios 2 and 1/2 relative to a uniform reference over two candidates.
        let reference = TabularPolicy::uniform(&[2], -1);
        let pi = TabularPolicy::from_logits(vec![vec![2f64.ln(), -(2f64.ln())]], 0).unwrap();
        // pi = (0.8, 0.2) -> log ratios ln 1.6 and ln 0.4; margin ln 4.
        let v = dpo_loss(&pi, &reference, &pair(0, 1), 1.0).unwrap();
        assert!((v.value - (5.0f64 / 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn ipo_examples() {
        let reference = TabularPolicy::uniform(&[2], -1);
        let pi = TabularPolicy::from_logits(vec![vec![0.5, -0.5]], 0).unwrap();
        assert!(ipo_loss(&pi, &reference, &pair(0, 1), 0.5).unwrap().value.abs() < 1e-24);
        assert!((ipo_loss(&reference, &reference, &pair(0, 1), 0.5).unwrap().value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hinge_examples() {
        let reference = TabularPolicy::uniform(&[2], -1);
        // beta * a = 2 with beta = 1, a = 2.
        let pi = TabularPolicy::from_logits(vec![vec![1.0, -1.0]], 0).unwrap();
        let v = hinge_loss(&pi, &reference, &pair(0, 1), 1.0).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.grad.iter().flatten().all(|g| *g == 0.0));
        assert_eq!(hinge_loss(&reference, &reference, &pair(0, 1), 1.0).unwrap().value, 1.0);
    }

    #[test]
    fn length_penalized_reductions() {
        let u = universe(&[3, 9, 3]);
        let reference = TabularPolicy::from_logits(vec![vec![0.2, 0.0, -0.3]], -1).unwrap();
        let pi = TabularPolicy::from_logits(vec![vec![0.9, -0.1, 0.4]], 0).unwrap();
        let base = dpo_loss(&pi, &reference, &pair(0, 1), 0.1).unwrap();
        assert_eq!(dpo_length_penalized_loss(&pi, &reference, &pair(0, 1), &u, 0.1, 0.0).unwrap(), base);
        let equal = dpo_loss(&pi, &reference, &pair(0, 2), 0.1).unwrap();
        assert_eq!(dpo_length_penalized_loss(&pi, &reference, &pair(0, 2), &u, 0.1, 0.05).unwrap(), equal);
        let penalized = dpo_length_penalized_loss(&pi, &reference, &pair(1, 0), &u, 0.1, 0.05).unwrap();
        assert!(penalized.value > dpo_loss(&pi, &reference, &pair(1, 0), 0.1).unwrap().value);
    }

    #[test]
    fn self_pair_rejected() {
        let pi = TabularPolicy::uniform(&[2], 0);
        assert!(dpo_loss(&pi, &pi, &pair(1, 1), 0.1).is_err());
    }

    #[test]
    fn zero_steps_leaves_policy_unchanged() {
        let u = universe(&[3, 4, 5]);
        let pi = TabularPolicy::from_logits(vec![vec![0.1, 0.2, 0.3]], 0).unwrap();
        let ds = PreferenceDataset::new(vec![pair(0, 1)], None, 1);
        let params = TrainParams { steps: 0, learning_rate: 1.0, batch_size: None, seed: 0 };
        let out = train(&pi, &pi, &ds, &u, LossKind::Dpo, 0.1, &params).unwrap();
        assert_eq!(out.policy, pi);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn single_pair_probability_rises_monotonically() {
        let u = universe(&[3, 4, 5]);
        let pi = TabularPolicy::from_logits(vec![vec![0.1, 0.2, 0.3]], 0).unwrap();
        let ds = PreferenceDataset::new(vec![pair(2, 0)], None, 1);
        let beta = 0.5;
        let mut current = pi.clone();
        let mut last = 0.5;
        for _ in 0..100 {
            let params = TrainParams { steps: 100, learning_rate: 0.5, batch_size: None, seed: 0 };
            current = train(&current, &pi, &ds, &u, LossKind::Dpo, beta, &params).unwrap().policy;
            let a = margin(&current, &pi, &ds.pairs[0]).unwrap();
            let s = logistic(beta * a);
            assert!(s > last);
            last = s;
        }
        assert!(last > 0.99, "{last}");
    }

    #[test]
    fn full_batch_trace_is_nonincreasing() {
        let u = universe(&[3, 4, 5, 6]);
        let reference = TabularPolicy::from_logits(vec![vec![0.0, 0.5, -0.5, 0.2]], -1).unwrap();
        let ds = PreferenceDataset::new(vec![pair(0, 1), pair(2, 1), pair(1, 3), pair(3, 0)], None, 1);
        for kind in [LossKind::Dpo, LossKind::Ipo { tau: None }, LossKind::Hinge, LossKind::DpoLengthPenalized { lambda: 0.02 }] {
            let params = TrainParams { steps: 200, learning_rate: 0.1, batch_size: None, seed: 0 };
            let out = train(&reference, &reference, &ds, &u, kind, 0.5, &params).unwrap();
            for w in out.trace.windows(2) {
                assert!(w[1].mean_loss <= w[0].mean_loss + 1e-15, "{kind:?}");
            }
        }
    }

    #[test]
    fn minibatch_is_deterministic() {
        let u = universe(&[3, 4, 5, 6]);
        let reference = TabularPolicy::uniform(&[4], -1);
        let ds = PreferenceDataset::new(vec![pair(0, 1), pair(2, 1), pair(1, 3), pair(3, 0)], None, 1);
        let params = TrainParams { steps: 20, learning_rate: 0.3, batch_size: Some(2), seed: 5 };
        let a = train(&reference, &reference, &ds, &u, LossKind::Dpo, 0.1, &params).unwrap();
        let b = train(&reference, &reference, &ds, &u, LossKind::Dpo, 0.1, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nan_guard_aborts() {
        let u = universe(&[3, 4]);
        let reference = TabularPolicy::uniform(&[2], -1);
        let ds = PreferenceDataset::new(vec![pair(0, 1)], None, 1);
        let params = TrainParams { steps: 50, learning_rate: 1e300, batch_size: None, seed: 0 };
        let err = train(&reference, &reference, &ds, &u, LossKind::Ipo { tau: Some(0.1) }, 0.1, &params).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err:?}");
    }

    proptest! {
        #[test]
        fn losses_invariant_to_reference_shift(
            pol in prop::collection::vec(-3.0f64..3.0, 3),
            refl in prop::collection::vec(-3.0f64..3.0, 3),
            shift in -10.0f64..10.0,
        ) {
            let u = universe(&[2, 7, 4]);
            let pi = TabularPolicy::from_logits(vec![pol], 0).unwrap();
            let r1 = TabularPolicy::from_logits(vec![refl.clone()], -1).unwrap();
            let r2 = TabularPolicy::from_logits(vec![refl.iter().map(|l| l + shift).collect()], -1).unwrap();
            for kind in [LossKind::Dpo, LossKind::Ipo { tau: None }, LossKind::Hinge, LossKind::DpoLengthPenalized { lambda: 0.05 }] {
                let a = pair_loss(kind, &pi, &r1, &pair(0, 1), Some(&u), 0.3).unwrap().value;
                let b = pair_loss(kind, &pi, &r2, &pair(0, 1), Some(&u), 0.3).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn swapped_pair_cross_entropy_identity(pol in prop::collection::vec(-3.0f64..3.0, 2), beta in 0.05f64..2.0) {
            let reference = TabularPolicy::uniform(&[2], -1);
            let pi = TabularPolicy::from_logits(vec![pol], 0).unwrap();
            let a = beta * margin(&pi, &reference, &pair(0, 1)).unwrap();
            let fwd = dpo_loss(&pi, &reference, &pair(0, 1), beta).unwrap().value;
            let back = dpo_loss(&pi, &reference, &pair(1, 0), beta).unwrap().value;
            prop_assert!((back - softplus(a)).abs() <= 1e-12);
            prop_assert!(fwd + back >= 2.0 * 2f64.ln() - 1e-12);
            if a.abs() < 1e-9 {
                prop_assert!((fwd + back - 2.0 * 2f64.ln()).abs() <= 1e-9);
            }
        }
    }
}
