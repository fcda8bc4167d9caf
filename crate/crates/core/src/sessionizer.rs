//! Gap-based sessionization.
//!
//! A user's stream is cut wherever two consecutive events are more than
//! `gap_minutes` apart. A gap of exactly `gap_minutes` stays inside the session.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ListeningEvent};

pub const DEFAULT_GAP_MINUTES: u32 = 30;

/// A contiguous run of one user's events sharing a session id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Session<'a> {
    pub session_id: u32,
    pub events: &'a [ListeningEvent],
}

/// Assigns session ids in place. Ids start at 0 for each user.
pub fn sessionize_stream(events: &mut [ListeningEvent], gap_minutes: u32) {
    let gap = i64::from(gap_minutes) * 60;
    let mut id = 0u32;
    let mut prev: Option<i64> = None;
    for e in events.iter_mut() {
        if let Some(p) = prev {
            if e.timestamp - p > gap {
                id += 1;
            }
        }
        e.session = Some(id);
        prev = Some(e.timestamp);
    }
}

pub fn sessionize(mut corpus: Corpus, gap_minutes: u32) -> Corpus {
    for u in &mut corpus.users {
        sessionize_stream(&mut u.events, gap_minutes);
    }
    corpus
}

/// Splits a sessionized stream into its sessions. Events without a session id
/// are grouped as if each were its own session.
pub fn sessions(events: &[ListeningEvent]) -> impl Iterator<Item = Session<'_>> {
    let mut rest = events;
    std::iter::from_fn(move || {
        let first = rest.first()?;
        let len = match first.session {
            Some(id) => rest.iter().take_while(|e| e.session == Some(id)).count(),
            None => 1,
        };
        let (head, tail) = rest.split_at(len);
        rest = tail;
        Some(Session {
            session_id: first.session.unwrap_or(u32::MAX),
            events: head,
        })
    })
}

/// For every event, the index one past the end of its session.
pub fn session_ends(events: &[ListeningEvent]) -> Vec<usize> {
    let mut ends = vec![0; events.len()];
    let mut start = 0;
    for s in sessions(events) {
        let end = start + s.events.len();
        ends[start..end].fill(end);
        start = end;
    }
    ends
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub total_sessions: usize,
    pub total_events: usize,
    pub mean_events_per_session: f64,
    pub per_user: Vec<(String, usize)>,
}

pub fn session_stats(corpus: &Corpus) -> SessionStats {
    let per_user: Vec<(String, usize)> = corpus
        .users()
        .iter()
        .map(|u| (u.user_id.clone(), sessions(&u.events).count()))
        .collect();
    let total_sessions = per_user.iter().map(|(_, n)| n).sum();
    let total_events = corpus.num_events();
    SessionStats {
        total_sessions,
        total_events,
        mean_events_per_session: if total_sessions == 0 {
            0.0
        } else {
            total_events as f64 / total_sessions as f64
        },
        per_user,
    }
}

/// Debug export: `user_id  track_id  timestamp  session_id`.
pub fn write_sessions<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    writeln!(out, "user_id\ttrack_id\ttimestamp\tsession_id")?;
    for u in corpus.users() {
        for e in &u.events {
            let sid = e.session.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                u.user_id,
                corpus.track_name(e.track),
                e.timestamp,
                sid
            )?;
        }
    }
    Ok(())
}
