//! Declarative-memory activation components.
//!
//! Each component maps an [`EventWindow`] to raw per-candidate scores and
//! softmax-normalizes them over the candidate set, so every component output
//! is a distribution. Components are summed (optionally weighted) by
//! [`combine`] without re-normalization, and [`rank`] orders candidates.

mod window;

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use window::{EventWindow, WindowBuilder};

use crate::corpus::TrackMeta;
use crate::error::{Error, Result};
use crate::{seed, SECONDS_PER_HOUR};

/// ACT-R default decay.
pub const DEFAULT_DECAY: f64 = 0.5;
/// Decay fitted on full-year relistening gaps.
pub const YEAR_FIT_DECAY: f64 = 1.737;
/// Decay fitted on relistening gaps of at most one week.
pub const WEEK_FIT_DECAY: f64 = 0.86;
/// Learning rate of the valuation update. Not validated against data.
pub const DEFAULT_ALPHA: f64 = 0.1;
/// One second, in hours.
pub const DEFAULT_MIN_GAP_HOURS: f64 = 1.0 / 3600.0;

/// Listening ratio at or below which the discrete reward is -1.
pub const DISCRETE_LOW: f64 = 0.33;
/// Listening ratio at or above which the discrete reward is +1.
pub const DISCRETE_HIGH: f64 = 0.66;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Listening ratio in [0, 1].
    Ratio,
    /// Ratio mapped to -1 / 0 / +1.
    Discrete,
    /// Constant reward 1, which reduces valuation to per-user popularity.
    MostPopular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentConfig {
    pub decay: f64,
    pub alpha: f64,
    pub reward_mode: RewardMode,
    pub noise_seed: u64,
    pub min_gap_hours: f64,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            decay: DEFAULT_DECAY,
            alpha: DEFAULT_ALPHA,
            reward_mode: RewardMode::MostPopular,
            noise_seed: 0,
            min_gap_hours: DEFAULT_MIN_GAP_HOURS,
        }
    }
}

impl ComponentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "decay must be finite and >= 0, got {}",
                self.decay
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.min_gap_hours > 0.0 && self.min_gap_hours.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "min_gap_hours must be positive, got {}",
                self.min_gap_hours
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    BaseLevel,
    Spreading,
    PartialMatching,
    Valuation,
    Noise,
    TransProb,
    MostRecent,
    Combined,
}

/// Per-candidate scores aligned with [`EventWindow::candidates`].
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationVector {
    pub label: Label,
    pub scores: Vec<f64>,
    key: u64,
}

impl ActivationVector {
    /// Softmax-normalizes `raw` over the window's candidates.
    pub fn from_raw(label: Label, window: &EventWindow<'_>, raw: &[f64]) -> Result<Self> {
        if raw.len() != window.num_candidates() {
            return Err(Error::Misaligned);
        }
        Ok(Self {
            label,
            scores: softmax(raw)?,
            key: window.key(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_aligned_with(&self, window: &EventWindow<'_>) -> bool {
        self.key == window.key() && self.scores.len() == window.num_candidates()
    }
}

/// Numerically stable softmax: `exp(x_i - max x) / sum_j exp(x_j - max x)`.
pub fn softmax(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = raw.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Recency and frequency: `sum_j dt_ij^-d`, with `dt` in hours and clamped
/// below at `min_gap_hours`.
pub fn base_level(window: &EventWindow<'_>, cfg: &ComponentConfig) -> Result<ActivationVector> {
    cfg.validate()?;
    let mut raw = vec![0.0; window.num_candidates()];
    let t_ref = window.t_ref();
    let neg_d = -cfg.decay;
    for (e, &slot) in window.events().iter().zip(window.slots()) {
        let dt = ((t_ref - e.timestamp) as f64 / SECONDS_PER_HOUR).max(cfg.min_gap_hours);
        raw[slot as usize] += dt.powf(neg_d);
    }
    ActivationVector::from_raw(Label::BaseLevel, window, &raw)
}

/// Session co-occurrence with the context item: `P(i in C_j) / P(i)`.
///
/// Sessions are the distinct session ids of the window's events (the session in
/// progress counts with its consumed prefix). `C_j` is the set of sessions that
/// contain the context track.
pub fn spreading(window: &EventWindow<'_>) -> Result<ActivationVector> {
    let events = window.events();
    let slots = window.slots();
    let n = window.num_candidates();
    let ctx = window.context_slot() as u32;

    let mut with_item = vec![0u32; n];
    let mut with_ctx = vec![0u32; n];
    let mut mark = vec![usize::MAX; n];
    let (mut n_sessions, mut n_ctx) = (0u32, 0u32);

    let mut start = 0;
    while start < events.len() {
        let sid = events[start].session.ok_or(Error::NotSessionized)?;
        let mut end = start + 1;
        while end < events.len() && events[end].session == Some(sid) {
            end += 1;
        }
        let has_ctx = slots[start..end].contains(&ctx);
        n_sessions += 1;
        n_ctx += has_ctx as u32;
        for &s in &slots[start..end] {
            let s = s as usize;
            if mark[s] != start {
                mark[s] = start;
                with_item[s] += 1;
                with_ctx[s] += has_ctx as u32;
            }
        }
        start = end;
    }

    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let p_ctx = f64::from(with_ctx[i]) / f64::from(n_ctx);
            let p_item = f64::from(with_item[i]) / f64::from(n_sessions);
            p_ctx / p_item
        })
        .collect();
    ActivationVector::from_raw(Label::Spreading, window, &raw)
}

/// Content similarity to the context item: dot product of feature vectors.
/// Tracks without features score 0.
pub fn partial_matching(window: &EventWindow<'_>, meta: &[TrackMeta]) -> Result<ActivationVector> {
    let features = |t: crate::corpus::TrackId| meta.get(t.index()).and_then(|m| m.features.as_deref());
    let mut raw = vec![0.0; window.num_candidates()];
    if let Some(ctx) = features(window.context_track()) {
        for (r, &track) in raw.iter_mut().zip(window.candidates()) {
            if let Some(f) = features(track) {
                if f.len() != ctx.len() {
                    return Err(Error::FeatureLength {
                        track: format!("#{}", track.0),
                        expected: ctx.len(),
                        found: f.len(),
                    });
                }
                *r = f.iter().zip(ctx).map(|(a, b)| a * b).sum();
            }
        }
    }
    ActivationVector::from_raw(Label::PartialMatching, window, &raw)
}

/// Fraction of the track heard before the next event, capped at its duration.
/// `None` when the duration or the next event is unknown.
pub fn listening_ratio(duration_ms: Option<u32>, timestamp: i64, next: Option<i64>) -> Option<f64> {
    let duration = f64::from(duration_ms?);
    let gap_ms = (next? - timestamp) as f64 * 1000.0;
    Some((gap_ms.min(duration) / duration).clamp(0.0, 1.0))
}

pub fn reward(mode: RewardMode, ratio: Option<f64>) -> f64 {
    match mode {
        RewardMode::MostPopular => 1.0,
        RewardMode::Ratio => ratio.unwrap_or(1.0),
        RewardMode::Discrete => match ratio.unwrap_or(1.0) {
            r if r <= DISCRETE_LOW => -1.0,
            r if r >= DISCRETE_HIGH => 1.0,
            _ => 0.0,
        },
    }
}

/// Learned affect: `V(n) = V(n-1) + alpha (R(n) - V(n-1))` from `V(0) = 0`,
/// iterated over each candidate's interactions in window order.
pub fn valuation(window: &EventWindow<'_>, meta: &[TrackMeta], cfg: &ComponentConfig) -> Result<ActivationVector> {
    cfg.validate()?;
    let events = window.events();
    let mut value = vec![0.0; window.num_candidates()];
    for (k, (e, &slot)) in events.iter().zip(window.slots()).enumerate() {
        let r = match cfg.reward_mode {
            RewardMode::MostPopular => 1.0,
            mode => {
                let duration = meta.get(e.track.index()).and_then(|m| m.duration_ms);
                let next = events.get(k + 1).map(|n| n.timestamp);
                reward(mode, listening_ratio(duration, e.timestamp, next))
            }
        };
        let v = &mut value[slot as usize];
        *v += cfg.alpha * (r - *v);
    }
    ActivationVector::from_raw(Label::Valuation, window, &value)
}

/// Uniform `[0, 1)` draw per candidate from a generator seeded with `seed`.
pub fn noise(window: &EventWindow<'_>, seed: u64) -> Result<ActivationVector> {
    let mut rng = seed::rng(seed);
    let raw: Vec<f64> = (0..window.num_candidates()).map(|_| rng.random::<f64>()).collect();
    ActivationVector::from_raw(Label::Noise, window, &raw)
}

/// Elementwise weighted sum. The result is not re-normalized.
pub fn combine(parts: &[(&ActivationVector, f64)]) -> Result<ActivationVector> {
    let (first, _) = parts.first().ok_or(Error::EmptyCandidates)?;
    if parts
        .iter()
        .any(|(v, _)| v.key != first.key || v.scores.len() != first.scores.len())
    {
        return Err(Error::Misaligned);
    }
    let mut scores = vec![0.0; first.scores.len()];
    for (v, w) in parts {
        for (s, x) in scores.iter_mut().zip(&v.scores) {
            *s += w * x;
        }
    }
    Ok(ActivationVector {
        label: Label::Combined,
        scores,
        key: first.key,
    })
}

/// Total order used for ranking: score descending, then most recent
/// interaction first, then first appearance in the window.
#[inline]
fn rank_order(scores: &[f64], last_seen: &[i64], a: usize, b: usize) -> Ordering {
    scores[b]
        .partial_cmp(&scores[a])
        .unwrap_or(Ordering::Equal)
        .then(last_seen[b].cmp(&last_seen[a]))
        .then(a.cmp(&b))
}

/// Candidate indices in rank order.
pub fn ranked_indices(window: &EventWindow<'_>, scores: &ActivationVector) -> Result<Vec<usize>> {
    top_k(window, scores, window.num_candidates())
}

/// The first `k` candidate indices in rank order, without sorting the tail.
pub fn top_k(window: &EventWindow<'_>, scores: &ActivationVector, k: usize) -> Result<Vec<usize>> {
    if !scores.is_aligned_with(window) {
        return Err(Error::Misaligned);
    }
    let (s, seen) = (&scores.scores[..], window.last_seen());
    let mut idx: Vec<usize> = (0..s.len()).collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(s, seen, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(s, seen, a, b));
    Ok(idx)
}

/// Best-ranked candidate index.
pub fn top_1(window: &EventWindow<'_>, scores: &ActivationVector) -> Result<usize> {
    if !scores.is_aligned_with(window) {
        return Err(Error::Misaligned);
    }
    let (s, seen) = (&scores.scores[..], window.last_seen());
    (0..s.len())
        .min_by(|&a, &b| rank_order(s, seen, a, b))
        .ok_or(Error::EmptyCandidates)
}

/// Candidates ordered by activation.
pub fn rank(window: &EventWindow<'_>, scores: &ActivationVector) -> Result<Vec<crate::corpus::TrackId>> {
    Ok(ranked_indices(window, scores)?
        .into_iter()
        .map(|i| window.candidates()[i])
        .collect())
}
