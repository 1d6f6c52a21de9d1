//! Shared domain types: identifiers, candidates, preference pairs and the
//! per-round configuration.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u32);

/// Index of a candidate within its prompt. Dense: `0..num_candidates`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseId(pub u32);

impl PromptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ResponseId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ResponseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One enumerable response to a prompt. `true_reward` is hidden from the
/// learner and only read by annotators and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub prompt_id: PromptId,
    pub response_id: ResponseId,
    pub length: u32,
    pub true_reward: f64,
}

/// Every candidate of every prompt, indexed densely by prompt then response.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    prompts: Vec<Vec<CandidateResponse>>,
}

impl CandidateIndex {
    /// Builds the index from per-prompt candidate lists, checking that ids are
    /// dense and matching their position.
    pub fn new(prompts: Vec<Vec<CandidateResponse>>) -> Result<Self> {
        for (p, cands) in prompts.iter().enumerate() {
            for (r, c) in cands.iter().enumerate() {
                if c.prompt_id.index() != p || c.response_id.index() != r {
                    return Err(Error::InvalidSize(format!(
                        "candidate at position ({p}, {r}) carries ids ({}, {})",
                        c.prompt_id, c.response_id
                    )));
                }
                if c.length == 0 {
                    return Err(Error::InvalidSize(format!(
                        "candidate ({p}, {r}) has zero length"
                    )));
                }
            }
        }
        Ok(Self { prompts })
    }

    /// Regroups a flat candidate list (in any order) into an index.
    pub fn from_flat(mut flat: Vec<CandidateResponse>) -> Result<Self> {
        flat.sort_by_key(|c| (c.prompt_id, c.response_id));
        let mut prompts: Vec<Vec<CandidateResponse>> = Vec::new();
        for c in flat {
            let p = c.prompt_id.index();
            if p >= prompts.len() {
                prompts.resize_with(p + 1, Vec::new);
            }
            prompts[p].push(c);
        }
        Self::new(prompts)
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = PromptId> + '_ {
        (0..self.prompts.len() as u32).map(PromptId)
    }

    pub fn candidates(&self, prompt: PromptId) -> &[CandidateResponse] {
        self.prompts.get(prompt.index()).map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, prompt: PromptId, response: ResponseId) -> Result<&CandidateResponse> {
        self.candidates(prompt)
            .get(response.index())
            .ok_or(Error::ForeignCandidate {
                prompt_id: prompt,
                response_id: response,
            })
    }

    pub fn length(&self, prompt: PromptId, response: ResponseId) -> Result<u32> {
        self.get(prompt, response).map(|c| c.length)
    }

    /// Number of candidates per prompt.
    pub fn shape(&self) -> Vec<usize> {
        self.prompts.iter().map(Vec::len).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CandidateResponse> {
        self.prompts.iter().flatten()
    }

    /// Per-prompt rows of true rewards.
    pub fn true_rewards(&self) -> Vec<Vec<f64>> {
        self.prompts
            .iter()
            .map(|c| c.iter().map(|c| c.true_reward).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Generated,
    Offline,
}

fn unit_weight() -> f64 {
    1.0
}

fn is_unit_weight(w: &f64) -> bool {
    *w == 1.0
}

/// A `(x, y_w, y_l)` record.
///
/// `weight` is 1 for every sampled pair and is omitted from JSONL in that
/// case; soft-labelled preference sets (both orientations of a pair weighted
/// by the annotator probability) use it to carry the label probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: PromptId,
    pub winner_id: ResponseId,
    pub loser_id: ResponseId,
    pub source: Source,
    #[serde(default = "unit_weight", skip_serializing_if = "is_unit_weight")]
    pub weight: f64,
}

impl PreferencePair {
    pub fn new(prompt_id: PromptId, winner_id: ResponseId, loser_id: ResponseId, source: Source) -> Self {
        Self {
            prompt_id,
            winner_id,
            loser_id,
            source,
            weight: 1.0,
        }
    }

    /// Winner length minus loser length.
    pub fn length_diff(&self, universe: &CandidateIndex) -> Result<i64> {
        let w = universe.length(self.prompt_id, self.winner_id)?;
        let l = universe.length(self.prompt_id, self.loser_id)?;
        Ok(w as i64 - l as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub alpha_used: Option<f64>,
    pub round: i64,
}

impl PreferenceDataset {
    pub fn new(pairs: Vec<PreferencePair>, alpha_used: Option<f64>, round: i64) -> Self {
        Self {
            pairs,
            alpha_used,
            round,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count_source(&self, source: Source) -> usize {
        self.pairs.iter().filter(|p| p.source == source).count()
    }

    /// Mean of `|y_w| - |y_l|` over pairs (weighted), or `None` when empty.
    pub fn mean_length_diff(&self, universe: &CandidateIndex) -> Result<Option<f64>> {
        let mut total = 0.0;
        let mut weight = 0.0;
        for pair in &self.pairs {
            total += pair.weight * pair.length_diff(universe)? as f64;
            weight += pair.weight;
        }
        Ok((weight > 0.0).then(|| total / weight))
    }

    /// Checks every record invariant against the candidate universe.
    ///
    /// Uniqueness is keyed on `(prompt, winner, loser, source)`: a generated
    /// pair that happens to coincide with an offline pair is a distinct record.
    pub fn validate(&self, universe: &CandidateIndex) -> Result<()> {
        validate_dataset(self, universe)
    }
}

pub fn validate_dataset(ds: &PreferenceDataset, universe: &CandidateIndex) -> Result<()> {
    let mut seen = HashSet::with_capacity(ds.pairs.len());
    for (index, pair) in ds.pairs.iter().enumerate() {
        for id in [pair.winner_id, pair.loser_id] {
            if universe.get(pair.prompt_id, id).is_err() {
                return Err(Error::DanglingId {
                    index,
                    prompt_id: pair.prompt_id,
                    response_id: id,
                });
            }
        }
        if pair.winner_id == pair.loser_id {
            return Err(Error::SelfPair { index });
        }
        if !(pair.weight.is_finite() && pair.weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pair {index} has non-positive weight {}",
                pair.weight
            )));
        }
        if !seen.insert((pair.prompt_id, pair.winner_id, pair.loser_id, pair.source)) {
            return Err(Error::DuplicatePair { index });
        }
    }
    Ok(())
}

/// How the length-penalty weight is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Random search minimising the absolute mean length difference.
    Auto,
    Fixed(f64),
    /// No shaping (`alpha = 0`).
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Dpo,
    /// `tau` defaults to `beta` when absent.
    Ipo { tau: Option<f64> },
    Hinge,
    DpoLengthPenalized { lambda: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Dpo => "dpo",
            LossKind::Ipo { .. } => "ipo",
            LossKind::Hinge => "hinge",
            LossKind::DpoLengthPenalized { .. } => "dpo_length_penalized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Exactly `round(gamma * N)` offline pairs.
    Stratified,
    /// Each slot is offline with probability `gamma`.
    Bernoulli,
}

/// Hyperparameters of one round. The seed fully determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    pub beta: f64,
    pub gamma: f64,
    pub k_samples: usize,
    pub alpha_mode: AlphaMode,
    pub loss_kind: LossKind,
    pub steps: usize,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub alpha_search_budget: usize,
    /// `None` derives the search range from the scored data.
    pub alpha_max: Option<f64>,
    /// Sampling temperature applied to the policy logits.
    pub temperature: f64,
    /// Size of the mixed dataset; `None` takes the largest size both pools allow.
    pub mix_size: Option<usize>,
    pub replay: ReplayMode,
    /// When false the initial reference is kept for both scoring and training.
    pub rotate_reference: bool,
    /// Steps used to DPO-tune the base policy from the initial reference;
    /// `None` reuses `steps`.
    pub base_steps: Option<usize>,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.5,
            k_samples: 16,
            alpha_mode: AlphaMode::Auto,
            loss_kind: LossKind::Dpo,
            steps: 300,
            learning_rate: 5.0,
            batch_size: None,
            seed: 0,
            alpha_search_budget: 16384,
            alpha_max: None,
            temperature: 1.0,
            mix_size: None,
            replay: ReplayMode::Stratified,
            rotate_reference: true,
            base_steps: None,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config("beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(
                "gamma",
                format!("must be in [0, 1], got {}", self.gamma),
            ));
        }
        if self.k_samples < 2 {
            return Err(Error::config(
                "k_samples",
                format!("must be >= 2, got {}", self.k_samples),
            ));
        }
        if let AlphaMode::Fixed(a) = self.alpha_mode {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::config("alpha", format!("must be >= 0, got {a}")));
            }
        }
        match self.loss_kind {
            LossKind::Ipo { tau: Some(t) } if !(t.is_finite() && t > 0.0) => {
                return Err(Error::config("ipo_tau", format!("must be > 0, got {t}")));
            }
            LossKind::DpoLengthPenalized { lambda } if !(lambda.is_finite() && lambda >= 0.0) => {
                return Err(Error::config("lambda", format!("must be >= 0, got {lambda}")));
            }
            _ => {}
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.alpha_search_budget < 2 {
            return Err(Error::config(
                "alpha_search_budget",
                format!("must be >= 2, got {}", self.alpha_search_budget),
            ));
        }
        if let Some(m) = self.alpha_max {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::config("alpha_max", format!("must be >= 0, got {m}")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(
                "temperature",
                format!("must be > 0, got {}", self.temperature),
            ));
        }
        Ok(())
    }

    /// Short content hash of the serialized config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// IPO's `tau`, falling back to `beta`.
    pub fn ipo_tau(&self) -> Option<f64> {
        match self.loss_kind {
            LossKind::Ipo { tau } => Some(tau.unwrap_or(self.beta)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn universe() -> CandidateIndex {
        let prompts = (0..2)
            .map(|p| {
                (0..3)
                    .map(|r| CandidateResponse {
                        prompt_id: PromptId(p),
                        response_id: ResponseId(r),
                        length: 1 + r,
                        true_reward: r as f64,
                    })
                    .collect()
            })
            .collect();
        CandidateIndex::new(prompts).unwrap()
    }

    #[test]
    fn empty_dataset_validates() {
        validate_dataset(&PreferenceDataset::default(), &universe()).unwrap();
    }

    #[test]
    fn self_pair_rejected() {
        let ds = PreferenceDataset::new(
            vec![PreferencePair::new(PromptId(0), ResponseId(1), ResponseId(1), Source::Offline)],
            None,
            0,
        );
        assert!(matches!(
            validate_dataset(&ds, &universe()),
            Err(Error::SelfPair { index: 0 })
        ));
    }

    #[test]
    fn dangling_id_rejected() {
        let ds = PreferenceDataset::new(
            vec![PreferencePair::new(PromptId(1), ResponseId(0), ResponseId(3), Source::Offline)],
            None,
            0,
        );
        assert!(matches!(
            validate_dataset(&ds, &universe()),
            Err(Error::DanglingId { response_id: ResponseId(3), .. })
        ));
        let ds = PreferenceDataset::new(
            vec![PreferencePair::new(PromptId(5), ResponseId(0), ResponseId(1), Source::Offline)],
            None,
            0,
        );
        assert!(matches!(
            validate_dataset(&ds, &universe()),
            Err(Error::DanglingId { .. })
        ));
    }

    #[test]
    fn duplicate_rejected_within_source_only() {
        let a = PreferencePair::new(PromptId(0), ResponseId(0), ResponseId(1), Source::Offline);
        let mut b = a.clone();
        b.source = Source::Generated;
        let ok = PreferenceDataset::new(vec![a.clone(), b], None, 0);
        validate_dataset(&ok, &universe()).unwrap();
        let dup = PreferenceDataset::new(vec![a.clone(), a], None, 0);
        assert!(matches!(
            validate_dataset(&dup, &universe()),
            Err(Error::DuplicatePair { index: 1 })
        ));
    }

    #[test]
    fn unit_weight_is_omitted_from_json() {
        let pair = PreferencePair::new(PromptId(0), ResponseId(2), ResponseId(1), Source::Generated);
        let line = serde_json::to_string(&pair).unwrap();
        assert_eq!(
            line,
            r#"{"prompt_id":0,"winner_id":2,"loser_id":1,"source":"generated"}"#
        );
        let back: PreferencePair = serde_json::from_str(&line).unwrap();
        assert_eq!(back, pair);
    }

    #[test]
    fn config_validation_names_key() {
        let cfg = RoundConfig {
            gamma: 1.5,
            ..RoundConfig::default()
        };
        match cfg.validate() {
            Err(Error::ConfigParse { key, message }) => {
                assert_eq!(key, "gamma");
                assert!(message.contains("[0, 1]"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn alpha_mode_and_loss_serialize_in_snake_case() {
        assert_eq!(serde_json::to_string(&AlphaMode::Auto).unwrap(), r#""auto""#);
        assert_eq!(
            serde_json::to_string(&AlphaMode::Fixed(0.5)).unwrap(),
            r#"{"fixed":0.5}"#
        );
        assert_eq!(
            serde_json::to_string(&LossKind::DpoLengthPenalized { lambda: 0.02 }).unwrap(),
            r#"{"kind":"dpo_length_penalized","lambda":0.02}"#
        );
    }

    #[test]
    fn from_flat_regroups() {
        let u = universe();
        let mut flat: Vec<_> = u.iter().cloned().collect();
        flat.reverse();
        assert_eq!(CandidateIndex::from_flat(flat).unwrap(), u);
    }
}
