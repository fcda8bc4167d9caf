//! Non-ACT-R comparison predictors.

use std::collections::HashMap;

use crate::activation::{ranked_indices, ActivationVector, EventWindow, Label};
use crate::corpus::{ListeningEvent, TrackId};
use crate::error::{Error, Result};

/// Counts of `b` immediately following `a` inside one session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransitionTable {
    counts: HashMap<TrackId, HashMap<TrackId, u32>>,
}

impl TransitionTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Within-session bigrams of a time-ordered event slice.
    pub fn from_events(events: &[ListeningEvent]) -> Self {
        let mut t = Self::new();
        for w in events.windows(2) {
            if is_transition(&w[0], &w[1]) {
                t.add(w[0].track, w[1].track);
            }
        }
        t
    }

    pub fn add(&mut self, from: TrackId, to: TrackId) {
        *self.counts.entry(from).or_default().entry(to).or_insert(0) += 1;
    }

    /// Decrements a stored pair, dropping it at zero.
    ///
    /// # Panics
    /// If the pair is not stored.
    pub fn remove(&mut self, from: TrackId, to: TrackId) {
        let out = self.counts.get_mut(&from).expect("removing unknown transition");
        let c = out.get_mut(&to).expect("removing unknown transition");
        *c -= 1;
        if *c == 0 {
            out.remove(&to);
            if out.is_empty() {
                self.counts.remove(&from);
            }
        }
    }

    pub fn count(&self, from: TrackId, to: TrackId) -> u32 {
        self.counts.get(&from).and_then(|o| o.get(&to)).copied().unwrap_or(0)
    }

    pub fn outgoing(&self, from: TrackId) -> Option<&HashMap<TrackId, u32>> {
        self.counts.get(&from)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Whether `b` directly follows `a` in the same session.
#[inline]
pub fn is_transition(a: &ListeningEvent, b: &ListeningEvent) -> bool {
    a.session.is_some() && a.session == b.session
}

/// Transition probability from the reference track (the last event's track),
/// using the bigrams of the window itself.
pub fn trans_prob(window: &EventWindow<'_>) -> Result<ActivationVector> {
    if window.events().iter().any(|e| e.session.is_none()) {
        return Err(Error::NotSessionized);
    }
    trans_prob_with(window, &TransitionTable::from_events(window.events()))
}

/// Transition probability from a table that must hold exactly the window's bigrams.
/// A reference track without successors yields all-zero raw scores, i.e. a
/// uniform distribution ranked by recency.
pub fn trans_prob_with(window: &EventWindow<'_>, table: &TransitionTable) -> Result<ActivationVector> {
    let mut raw = vec![0.0; window.num_candidates()];
    if let Some(out) = table.outgoing(window.context_track()) {
        let total: u32 = out.values().sum();
        for (r, track) in raw.iter_mut().zip(window.candidates()) {
            if let Some(&c) = out.get(track) {
                *r = f64::from(c) / f64::from(total);
            }
        }
    }
    ActivationVector::from_raw(Label::TransProb, window, &raw)
}

/// Scores decreasing with recency rank: `softmax(-rank)`.
pub fn most_recent_scores(window: &EventWindow<'_>) -> Result<ActivationVector> {
    let uniform = ActivationVector::from_raw(Label::MostRecent, window, &vec![0.0; window.num_candidates()])?;
    let order = ranked_indices(window, &uniform)?;
    let mut raw = vec![0.0; order.len()];
    for (r, &i) in order.iter().enumerate() {
        raw[i] = -(r as f64);
    }
    ActivationVector::from_raw(Label::MostRecent, window, &raw)
}

/// Candidates by last interaction, newest first.
pub fn most_recent(window: &EventWindow<'_>) -> Vec<TrackId> {
    let mut idx: Vec<usize> = (0..window.num_candidates()).collect();
    let seen = window.last_seen();
    idx.sort_by(|&a, &b| seen[b].cmp(&seen[a]).then(a.cmp(&b)));
    idx.into_iter().map(|i| window.candidates()[i]).collect()
}
