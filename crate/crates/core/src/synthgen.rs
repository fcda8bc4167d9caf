//! Synthetic listening corpora with known relistening statistics.
//!
//! Each event is either a relisten (probability `relisten_prob`) or a play of
//! a track the user has not heard yet, drawn from a Zipf-skewed catalog. A
//! relisten draws an hour gap `h` in `1..=168` by inverse CDF over the gaps at
//! which some heard track currently sits, then a track at that gap. Gap
//! weights follow `h^-gap_exponent`, corrected by the user's realised gap
//! counts, so the consecutive-play histogram follows the target power law.
//! Optionally a relisten continues replaying the old session of the previous
//! relistened track, which gives the corpus co-occurrence structure.
//!
//! Sessions end after each event with probability `1 / session_length_mean` and
//! are followed by an idle period longer than 30 minutes; inside a session
//! events are spaced by the (possibly skipped) play time of the previous track.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::gap_bin;
use crate::corpus::{Corpus, ListeningEvent, TrackId, TrackMeta, UserStream};
use crate::error::{Error, Result};
use crate::seed;

/// Largest relisten gap, in hours, the generator targets.
pub const MAX_GAP_HOURS: u64 = 168;

const EPOCH: i64 = 1_546_300_800;
const NEW_TRACK_TRIES: usize = 32;
const MIN_BOOST: f64 = 0.01;
const MAX_BOOST: f64 = 100.0;

/// `h^-e` over `1..=MAX_GAP_HOURS`, normalized; index 0 is unused.
fn target_shares(exponent: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..=MAX_GAP_HOURS)
        .map(|h| if h == 0 { 0.0 } else { (h as f64).powf(-exponent) })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_users: usize,
    pub events_per_user: usize,
    pub catalog_size: usize,
    /// Magnitude of the target slope of the relisten-gap histogram.
    pub gap_exponent: f64,
    pub session_length_mean: f64,
    pub relisten_prob: f64,
    pub seed: u64,
    /// Skew of first-listen popularity over the catalog.
    pub zipf_exponent: f64,
    /// Mean of the exponential part of idle periods between sessions.
    pub idle_hours_mean: f64,
    /// Probability that a play is cut short.
    pub skip_prob: f64,
    /// Length of the generated feature vectors; 0 generates none.
    pub feature_dim: usize,
    /// Relistens pick among the tracks at the drawn gap with weight
    /// `plays^repeat_bias`; 0 picks uniformly.
    pub repeat_bias: f64,
    /// After a relisten, probability that the next relisten continues with the
    /// following track of the relistened track's old session.
    pub replay_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_users: 100,
            events_per_user: 5_000,
            catalog_size: 50_000,
            gap_exponent: 1.5,
            session_length_mean: 10.0,
            relisten_prob: 0.66,
            seed: 0,
            zipf_exponent: 1.0,
            idle_hours_mean: 8.0,
            skip_prob: 0.2,
            feature_dim: 8,
            repeat_bias: 0.0,
            replay_prob: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("synth spec: {what}")));
        if self.num_users == 0 || self.events_per_user == 0 || self.catalog_size == 0 {
            return bad("counts must be positive");
        }
        if self.catalog_size > u32::MAX as usize {
            return bad("catalog_size too large");
        }
        if !(0.0..=1.0).contains(&self.relisten_prob) {
            return bad("relisten_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.replay_prob) {
            return bad("replay_prob must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.skip_prob) {
            return bad("skip_prob must lie in [0, 1]");
        }
        if !(self.gap_exponent.is_finite() && self.gap_exponent >= 0.0) {
            return bad("gap_exponent must be finite and non-negative");
        }
        if !(self.session_length_mean.is_finite() && self.session_length_mean >= 1.0) {
            return bad("session_length_mean must be at least 1");
        }
        if !(self.idle_hours_mean.is_finite() && self.idle_hours_mean > 0.0) {
            return bad("idle_hours_mean must be positive");
        }
        if !(self.repeat_bias.is_finite() && self.repeat_bias >= 0.0) {
            return bad("repeat_bias must be finite and non-negative");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        Ok(())
    }
}

/// Builds the corpus described by `spec`. Events carry no session ids.
///
/// When every catalog track has been heard, "new" plays fall back to the
/// least recently played track, so `relisten_prob = 0` yields distinct tracks
/// only while `catalog_size >= events_per_user`.
pub fn generate(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let meta = catalog_meta(spec);
    let durations: Vec<i64> = meta
        .iter()
        .map(|m| i64::from(m.duration_ms.unwrap_or(0)) / 1000)
        .collect();
    let width = spec.num_users.saturating_sub(1).to_string().len();
    let users = (0..spec.num_users)
        .into_par_iter()
        .map(|u| UserStream {
            user_id: format!("u{u:0width$}"),
            events: UserSim::new(spec, &durations, u).run(),
        })
        .collect();
    let track_names: Vec<String> = (0..spec.catalog_size).map(|i| format!("t{i}")).collect();
    let track_index = track_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), TrackId(i as u32)))
        .collect();
    Ok(Corpus {
        users,
        track_names,
        track_index,
        meta,
        feature_dim: (spec.feature_dim > 0).then_some(spec.feature_dim),
        malformed_rows: 0,
    })
}

fn catalog_meta(spec: &SynthSpec) -> Vec<TrackMeta> {
    let mut rng = seed::rng(seed::derive(spec.seed, seed::fnv1a(b"catalog")));
    let duration = LogNormal::new(220f64.ln(), 0.35).expect("valid log-normal");
    (0..spec.catalog_size)
        .map(|_| {
            let secs = duration.sample(&mut rng).clamp(30.0, 1200.0).round();
            let features = (spec.feature_dim > 0).then(|| (0..spec.feature_dim).map(|_| rng.random::<f64>()).collect());
            TrackMeta {
                duration_ms: Some(secs as u32 * 1000),
                features,
            }
        })
        .collect()
}

struct Heard {
    last: i64,
    plays: u32,
    /// Generator session of the last play.
    session: u32,
}

struct UserSim<'a> {
    spec: &'a SynthSpec,
    durations: &'a [i64],
    rng: ChaCha8Rng,
    zipf: Zipf<f64>,
    idle: Exp<f64>,
    heard: HashMap<u32, Heard>,
    session: u32,
    /// Plays per generator session, in time order.
    session_plays: Vec<Vec<(i64, u32)>>,
    /// Old session being replayed and the time of its last replayed play.
    replay: Option<(u32, i64)>,
    by_time: BTreeSet<(i64, u32)>,
    now: i64,
    /// Realised relistens per gap bin.
    picked: Vec<u64>,
    /// Target share per gap bin, proportional to `h^-gap_exponent`.
    target: Vec<f64>,
    buckets: Vec<Vec<u32>>,
}

impl<'a> UserSim<'a> {
    fn new(spec: &'a SynthSpec, durations: &'a [i64], user: usize) -> Self {
        let n = MAX_GAP_HOURS as usize + 1;
        Self {
            spec,
            durations,
            rng: seed::rng(seed::derive(spec.seed, user as u64)),
            zipf: Zipf::new(spec.catalog_size as f64, spec.zipf_exponent).expect("validated"),
            idle: Exp::new(1.0 / (spec.idle_hours_mean * 3600.0)).expect("validated"),
            heard: HashMap::new(),
            session: 0,
            session_plays: vec![Vec::new()],
            replay: None,
            by_time: BTreeSet::new(),
            now: 0,
            picked: vec![0; n],
            target: target_shares(spec.gap_exponent),
            buckets: vec![Vec::new(); n],
        }
    }

    fn run(mut self) -> Vec<ListeningEvent> {
        let mut events = Vec::with_capacity(self.spec.events_per_user);
        self.now = EPOCH + self.rng.random_range(0..30 * 86_400);
        let end_prob = 1.0 / self.spec.session_length_mean;
        for n in 0..self.spec.events_per_user {
            if n > 0 {
                let prev = events.last().map(|e: &ListeningEvent| e.track.index()).unwrap_or(0);
                self.now += if self.rng.random_bool(end_prob) {
                    self.session += 1;
                    self.session_plays.push(Vec::new());
                    self.replay = None;
                    1801 + self.idle.sample(&mut self.rng) as i64
                } else {
                    self.played_seconds(prev)
                };
            }
            let (now, session) = (self.now, self.session);
            let relisten = !self.heard.is_empty() && self.rng.random_bool(self.spec.relisten_prob);
            let track = if relisten {
                self.replayed()
                    .or_else(|| self.relisten())
                    .or_else(|| self.new_track())
                    .unwrap_or_else(|| self.least_recent())
            } else {
                self.new_track().unwrap_or_else(|| self.least_recent())
            };
            let h = self.heard.entry(track).or_insert(Heard {
                last: now,
                plays: 0,
                session,
            });
            self.replay = None;
            if h.plays > 0 {
                self.by_time.remove(&(h.last, track));
                if relisten {
                    self.replay = Some((h.session, h.last));
                }
            }
            h.last = now;
            h.plays += 1;
            h.session = session;
            self.by_time.insert((now, track));
            self.session_plays[session as usize].push((now, track));
            events.push(ListeningEvent {
                track: TrackId(track),
                timestamp: now,
                session: None,
            });
        }
        events
    }

    fn played_seconds(&mut self, track: usize) -> i64 {
        let full = self.durations[track].max(1);
        if self.rng.random_bool(self.spec.skip_prob) {
            ((full as f64 * self.rng.random_range(0.1..0.5)) as i64).max(1)
        } else {
            full
        }
    }

    /// Draws a gap among those holding some track, then a track at that gap.
    ///
    /// Gap `h` is weighted by its target share times the ratio of expected to
    /// realised picks so far, which steers the user's realised gap histogram
    /// towards the target whatever the gap availability.
    fn relisten(&mut self) -> Option<u32> {
        let now = self.now;
        for b in &mut self.buckets {
            b.clear();
        }
        let oldest = now - (MAX_GAP_HOURS as i64 + 1) * 3600;
        for &(t, track) in self.by_time.range((oldest + 1, 0)..) {
            self.buckets[gap_bin(now - t) as usize].push(track);
        }
        let total_picked = self.picked.iter().sum::<u64>() as f64;
        let mut cumulative = Vec::with_capacity(self.buckets.len());
        let mut total = 0.0;
        let mut last = None;
        for (h, b) in self.buckets.iter().enumerate() {
            if !b.is_empty() {
                let ratio = (self.target[h] * total_picked + 1.0) / (self.picked[h] as f64 + 1.0);
                total += self.target[h] * ratio.clamp(MIN_BOOST, MAX_BOOST);
                last = Some(h);
            }
            cumulative.push(total);
        }
        let last = last?;
        let u = self.rng.random::<f64>() * total;
        let h = cumulative.partition_point(|&c| c <= u).min(last);
        self.picked[h] += 1;
        let bucket = &self.buckets[h];
        if self.spec.repeat_bias == 0.0 {
            return Some(bucket[self.rng.random_range(0..bucket.len())]);
        }
        let weights: Vec<f64> = bucket
            .iter()
            .map(|t| f64::from(self.heard[t].plays).powf(self.spec.repeat_bias))
            .collect();
        let u = self.rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut acc = 0.0;
        for (t, w) in bucket.iter().zip(&weights) {
            acc += w;
            if u < acc {
                return Some(*t);
            }
        }
        bucket.last().copied()
    }

    /// Next unreplayed play of the session being replayed.
    fn replayed(&mut self) -> Option<u32> {
        let (s, after) = self.replay?;
        if s == self.session || !self.rng.random_bool(self.spec.replay_prob) {
            return None;
        }
        let plays = &self.session_plays[s as usize];
        let start = plays.partition_point(|&(t, _)| t <= after);
        let track = plays[start..]
            .iter()
            .find(|&&(t, track)| self.heard[&track].last == t)
            .map(|&(_, track)| track)?;
        let gap = gap_bin(self.now - self.heard[&track].last);
        if let Some(p) = self.picked.get_mut(gap as usize) {
            *p += 1;
        }
        Some(track)
    }

    fn new_track(&mut self) -> Option<u32> {
        let n = self.spec.catalog_size;
        if self.heard.len() >= n {
            return None;
        }
        for _ in 0..NEW_TRACK_TRIES {
            let t = (self.zipf.sample(&mut self.rng) as usize).clamp(1, n) - 1;
            if !self.heard.contains_key(&(t as u32)) {
                return Some(t as u32);
            }
        }
        let start = self.rng.random_range(0..n);
        (0..n)
            .map(|k| ((start + k) % n) as u32)
            .find(|t| !self.heard.contains_key(t))
    }

    fn least_recent(&self) -> u32 {
        self.by_time.first().expect("history is non-empty").1
    }
}
