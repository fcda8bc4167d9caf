//! Brute-force reference implementations and random fixtures shared by the
//! integration tests. Everything here recomputes scores directly from raw
//! events, without the crate's window indexing.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relisten_core::activation::{RewardMode, DISCRETE_HIGH, DISCRETE_LOW};
use relisten_core::corpus::{ListeningEvent, TrackId, TrackMeta};

pub const H: f64 = 3600.0;
pub const MIN_GAP_HOURS: f64 = 1.0 / 3600.0;

/// Prints one acceptance line straight to stderr (bypassing the test
/// harness capture) and fails the test when `pass` is false.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[acceptance {id:>2}] {verdict} {name}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Distinct tracks in order of first appearance.
pub fn candidates(events: &[ListeningEvent]) -> Vec<TrackId> {
    let mut out = Vec::new();
    for e in events {
        if !out.contains(&e.track) {
            out.push(e.track);
        }
    }
    out
}

/// `exp(x_i) / sum_j exp(x_j)` written as `1 / sum_j exp(x_j - x_i)`.
pub fn softmax(raw: &[f64]) -> Vec<f64> {
    raw.iter()
        .map(|&xi| 1.0 / raw.iter().map(|&xj| (xj - xi).exp()).sum::<f64>())
        .collect()
}

pub fn base_level(events: &[ListeningEvent], t_ref: i64, decay: f64) -> Vec<f64> {
    let raw: Vec<f64> = candidates(events)
        .iter()
        .map(|&c| {
            events
                .iter()
                .filter(|e| e.track == c)
                .map(|e| (((t_ref - e.timestamp) as f64 / H).max(MIN_GAP_HOURS)).powf(-decay))
                .sum()
        })
        .collect();
    softmax(&raw)
}

pub fn session_sets(events: &[ListeningEvent]) -> Vec<BTreeSet<TrackId>> {
    let mut by_id: Vec<(u32, BTreeSet<TrackId>)> = Vec::new();
    for e in events {
        let sid = e.session.expect("sessionized");
        match by_id.iter_mut().find(|(s, _)| *s == sid) {
            Some((_, set)) => {
                set.insert(e.track);
            }
            None => by_id.push((sid, BTreeSet::from([e.track]))),
        }
    }
    by_id.into_iter().map(|(_, s)| s).collect()
}

pub fn spreading(events: &[ListeningEvent]) -> Vec<f64> {
    let sessions = session_sets(events);
    let ctx = events.last().unwrap().track;
    let with_ctx: Vec<&BTreeSet<TrackId>> = sessions.iter().filter(|s| s.contains(&ctx)).collect();
    let raw: Vec<f64> = candidates(events)
        .iter()
        .map(|c| {
            let joint = with_ctx.iter().filter(|s| s.contains(c)).count() as f64 / with_ctx.len() as f64;
            let marginal = sessions.iter().filter(|s| s.contains(c)).count() as f64 / sessions.len() as f64;
            joint / marginal
        })
        .collect();
    softmax(&raw)
}

pub fn partial_matching(events: &[ListeningEvent], meta: &[TrackMeta]) -> Vec<f64> {
    let ctx = events.last().unwrap().track;
    let raw: Vec<f64> = candidates(events)
        .iter()
        .map(|c| match (&meta[ctx.index()].features, &meta[c.index()].features) {
            (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            _ => 0.0,
        })
        .collect();
    softmax(&raw)
}

pub fn reward(mode: RewardMode, events: &[ListeningEvent], k: usize, meta: &[TrackMeta]) -> f64 {
    if mode == RewardMode::MostPopular {
        return 1.0;
    }
    let ratio = match (meta[events[k].track.index()].duration_ms, events.get(k + 1)) {
        (Some(d), Some(next)) => {
            let heard_ms = ((next.timestamp - events[k].timestamp) * 1000) as f64;
            heard_ms.min(f64::from(d)) / f64::from(d)
        }
        _ => 1.0,
    };
    match mode {
        RewardMode::Ratio => ratio,
        _ if ratio <= DISCRETE_LOW => -1.0,
        _ if ratio >= DISCRETE_HIGH => 1.0,
        _ => 0.0,
    }
}

pub fn valuation(events: &[ListeningEvent], meta: &[TrackMeta], mode: RewardMode, alpha: f64) -> Vec<f64> {
    let raw: Vec<f64> = candidates(events)
        .iter()
        .map(|&c| {
            let mut v = 0.0;
            for k in 0..events.len() {
                if events[k].track == c {
                    v += alpha * (reward(mode, events, k, meta) - v);
                }
            }
            v
        })
        .collect();
    softmax(&raw)
}

pub fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let raw: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
    softmax(&raw)
}

pub fn trans_prob(events: &[ListeningEvent]) -> Vec<f64> {
    let ctx = events.last().unwrap().track;
    let mut counts: HashMap<TrackId, f64> = HashMap::new();
    let mut total = 0.0;
    for w in events.windows(2) {
        if w[0].track == ctx && w[0].session == w[1].session {
            *counts.entry(w[1].track).or_default() += 1.0;
            total += 1.0;
        }
    }
    let raw: Vec<f64> = candidates(events)
        .iter()
        .map(|c| {
            if total > 0.0 {
                counts.get(c).copied().unwrap_or(0.0) / total
            } else {
                0.0
            }
        })
        .collect();
    softmax(&raw)
}

/// A random sessionized window of `1..=max_len` events over `num_tracks`
/// tracks; gaps occasionally exceed 30 minutes or are zero.
pub fn random_events(r: &mut ChaCha8Rng, max_len: usize, num_tracks: u32) -> Vec<ListeningEvent> {
    let n = r.random_range(1..=max_len);
    let mut t = 1_600_000_000i64;
    let mut session = 0u32;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let gap = match r.random_range(0..10) {
                0 => 0,
                1..=2 => r.random_range(1801..200_000),
                _ => r.random_range(1..1800),
            };
            if gap > 1800 {
                session += 1;
            }
            t += gap;
        }
        out.push(ListeningEvent {
            track: TrackId(r.random_range(0..num_tracks)),
            timestamp: t,
            session: Some(session),
        });
    }
    out
}

/// Metadata for `num_tracks` tracks; some lack a duration or features.
pub fn random_meta(r: &mut ChaCha8Rng, num_tracks: u32, dim: usize) -> Vec<TrackMeta> {
    (0..num_tracks)
        .map(|_| TrackMeta {
            duration_ms: r.random_bool(0.8).then(|| r.random_range(30_000..600_000)),
            features: r
                .random_bool(0.8)
                .then(|| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()),
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
