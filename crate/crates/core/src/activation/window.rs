use std::collections::HashMap;

use crate::corpus::{ListeningEvent, TrackId};
use crate::error::{Error, Result};
use crate::seed;

const NO_SLOT: u32 = u32::MAX;

/// Snapshot of one user's recent events at prediction time.
///
/// The candidate set is the distinct tracks of `events`, in order of first
/// appearance. Every activation vector computed from the window is aligned to
/// that order.
#[derive(Clone, Debug)]
pub struct EventWindow<'a> {
    events: &'a [ListeningEvent],
    t_ref: i64,
    candidates: Vec<TrackId>,
    /// Candidate index of each event.
    slots: Vec<u32>,
    /// Timestamp of the latest interaction with each candidate.
    last_seen: Vec<i64>,
    key: u64,
}

impl<'a> EventWindow<'a> {
    /// Builds a window over `events`, which must be non-empty, time-ordered and
    /// no later than `t_ref`.
    pub fn new(events: &'a [ListeningEvent], t_ref: i64) -> Result<Self> {
        validate(events, t_ref)?;
        let mut index: HashMap<TrackId, u32> = HashMap::new();
        let mut w = Self::empty(events, t_ref);
        for e in events {
            let next = w.candidates.len() as u32;
            let slot = *index.entry(e.track).or_insert(next);
            w.record(e, slot);
        }
        w.key = candidates_key(&w.candidates);
        Ok(w)
    }

    fn empty(events: &'a [ListeningEvent], t_ref: i64) -> Self {
        Self {
            events,
            t_ref,
            candidates: Vec::new(),
            slots: Vec::with_capacity(events.len()),
            last_seen: Vec::new(),
            key: 0,
        }
    }

    #[inline]
    fn record(&mut self, e: &ListeningEvent, slot: u32) {
        if slot as usize == self.candidates.len() {
            self.candidates.push(e.track);
            self.last_seen.push(e.timestamp);
        } else {
            self.last_seen[slot as usize] = e.timestamp;
        }
        self.slots.push(slot);
    }

    pub fn events(&self) -> &'a [ListeningEvent] {
        self.events
    }

    pub fn t_ref(&self) -> i64 {
        self.t_ref
    }

    pub fn candidates(&self) -> &[TrackId] {
        &self.candidates
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Candidate index of each window event.
    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    pub fn last_seen(&self) -> &[i64] {
        &self.last_seen
    }

    /// Candidate index of the context item (the track of the last event).
    pub fn context_slot(&self) -> usize {
        *self.slots.last().expect("window is never empty") as usize
    }

    pub fn context_track(&self) -> TrackId {
        self.events.last().expect("window is never empty").track
    }

    pub fn candidate_index(&self, track: TrackId) -> Option<usize> {
        self.candidates.iter().position(|&t| t == track)
    }

    /// Fingerprint of the candidate list, used to reject misaligned vectors.
    pub fn key(&self) -> u64 {
        self.key
    }
}

fn validate(events: &[ListeningEvent], t_ref: i64) -> Result<()> {
    let last = events.last().ok_or(Error::EmptyCandidates)?;
    let ordered = events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp);
    if !ordered || last.timestamp > t_ref {
        return Err(Error::BadWindow);
    }
    Ok(())
}

fn candidates_key(candidates: &[TrackId]) -> u64 {
    candidates
        .iter()
        .fold(seed::mix(candidates.len() as u64), |h, t| seed::mix(h ^ u64::from(t.0)))
}

/// Reusable scratch space for building windows over a fixed track universe
/// without hashing.
#[derive(Clone, Debug)]
pub struct WindowBuilder {
    slot_of: Vec<u32>,
}

impl WindowBuilder {
    pub fn new(num_tracks: usize) -> Self {
        Self {
            slot_of: vec![NO_SLOT; num_tracks],
        }
    }

    /// Same result as [`EventWindow::new`]; every track id must be below `num_tracks`.
    pub fn build<'a>(&mut self, events: &'a [ListeningEvent], t_ref: i64) -> Result<EventWindow<'a>> {
        validate(events, t_ref)?;
        let mut w = EventWindow::empty(events, t_ref);
        for e in events {
            let cell = &mut self.slot_of[e.track.index()];
            if *cell == NO_SLOT {
                *cell = w.candidates.len() as u32;
            }
            let slot = *cell;
            w.record(e, slot);
        }
        for t in &w.candidates {
            self.slot_of[t.index()] = NO_SLOT;
        }
        w.key = candidates_key(&w.candidates);
        Ok(w)
    }
}
