//! Listening-event corpus: data model, TSV loading and stratified user sampling.
//!
//! Event files are tab-separated `user_id  track_id  timestamp_seconds`, one row
//! per listening event. A first row whose timestamp field is not an integer is
//! treated as a header. Metadata files are `track_id  duration_ms  f_1 .. f_m`
//! with empty fields for missing duration or features.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Dense index into the corpus track table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackId(pub u32);

impl TrackId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ListeningEvent {
    pub track: TrackId,
    /// Seconds since the epoch.
    pub timestamp: i64,
    /// Assigned by [`crate::sessionizer::sessionize`].
    pub session: Option<u32>,
}

/// One user's events, sorted by timestamp (stable with respect to input order).
#[derive(Clone, Debug, PartialEq)]
pub struct UserStream {
    pub user_id: String,
    pub events: Vec<ListeningEvent>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackMeta {
    pub duration_ms: Option<u32>,
    pub features: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub events: usize,
    pub distinct_tracks: usize,
    /// `None` until the corpus is sessionized.
    pub sessions: Option<usize>,
    pub malformed_rows: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub(crate) users: Vec<UserStream>,
    pub(crate) track_names: Vec<String>,
    pub(crate) track_index: HashMap<String, TrackId>,
    pub(crate) meta: Vec<TrackMeta>,
    pub(crate) feature_dim: Option<usize>,
    pub(crate) malformed_rows: usize,
}

impl Corpus {
    /// Users in ascending `user_id` order.
    pub fn users(&self) -> &[UserStream] {
        &self.users
    }

    pub fn user(&self, user_id: &str) -> Option<&UserStream> {
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn num_tracks(&self) -> usize {
        self.track_names.len()
    }

    pub fn track_name(&self, id: TrackId) -> &str {
        &self.track_names[id.index()]
    }

    pub fn track_id(&self, name: &str) -> Option<TrackId> {
        self.track_index.get(name).copied()
    }

    /// Per-track metadata indexed by [`TrackId`].
    pub fn meta(&self) -> &[TrackMeta] {
        &self.meta
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    pub fn malformed_rows(&self) -> usize {
        self.malformed_rows
    }

    pub fn is_sessionized(&self) -> bool {
        self.users.iter().all(|u| u.events.iter().all(|e| e.session.is_some()))
    }

    pub fn num_events(&self) -> usize {
        self.users.iter().map(|u| u.events.len()).sum()
    }

    pub fn stats(&self) -> CorpusStats {
        let mut seen = vec![false; self.track_names.len()];
        let mut distinct = 0;
        for e in self.users.iter().flat_map(|u| &u.events) {
            if !std::mem::replace(&mut seen[e.track.index()], true) {
                distinct += 1;
            }
        }
        let sessions = self.is_sessionized().then(|| {
            self.users
                .iter()
                .map(|u| u.events.last().map_or(0, |e| e.session.unwrap() as usize + 1))
                .sum()
        });
        CorpusStats {
            users: self.users.len(),
            events: self.num_events(),
            distinct_tracks: distinct,
            sessions,
            malformed_rows: self.malformed_rows,
        }
    }

    /// Fraction of events whose track carries a duration and a feature vector.
    pub fn meta_coverage(&self) -> (f64, f64) {
        let n = self.num_events();
        if n == 0 {
            return (0.0, 0.0);
        }
        let (mut dur, mut feat) = (0usize, 0usize);
        for e in self.users.iter().flat_map(|u| &u.events) {
            let m = &self.meta[e.track.index()];
            dur += m.duration_ms.is_some() as usize;
            feat += m.features.is_some() as usize;
        }
        (dur as f64 / n as f64, feat as f64 / n as f64)
    }

    /// Keeps only the listed users (by index into [`Corpus::users`]); the track
    /// table and metadata are shared unchanged.
    pub fn retain_users(&self, keep: &[usize]) -> Corpus {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        Corpus {
            users: keep.iter().map(|&i| self.users[i].clone()).collect(),
            track_names: self.track_names.clone(),
            track_index: self.track_index.clone(),
            meta: self.meta.clone(),
            feature_dim: self.feature_dim,
            malformed_rows: self.malformed_rows,
        }
    }

    pub(crate) fn set_meta(&mut self, track: TrackId, meta: TrackMeta) -> Result<()> {
        if let Some(f) = &meta.features {
            match self.feature_dim {
                Some(m) if m != f.len() => {
                    return Err(Error::FeatureLength {
                        track: self.track_names[track.index()].clone(),
                        expected: m,
                        found: f.len(),
                    })
                }
                _ => self.feature_dim = Some(f.len()),
            }
        }
        self.meta[track.index()] = meta;
        Ok(())
    }
}

/// Accumulates raw `(user, track, timestamp)` triples into a [`Corpus`].
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    users: BTreeMap<String, Vec<ListeningEvent>>,
    track_names: Vec<String>,
    track_index: HashMap<String, TrackId>,
    malformed_rows: usize,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, track: &str) -> TrackId {
        if let Some(&id) = self.track_index.get(track) {
            return id;
        }
        let id = TrackId(self.track_names.len() as u32);
        self.track_names.push(track.to_owned());
        self.track_index.insert(track.to_owned(), id);
        id
    }

    pub fn push(&mut self, user: &str, track: &str, timestamp: i64) {
        let track = self.intern(track);
        let event = ListeningEvent {
            track,
            timestamp,
            session: None,
        };
        match self.users.get_mut(user) {
            Some(v) => v.push(event),
            None => {
                self.users.insert(user.to_owned(), vec![event]);
            }
        }
    }

    pub fn build(self) -> Corpus {
        let users = self
            .users
            .into_iter()
            .map(|(user_id, mut events)| {
                events.sort_by_key(|e| e.timestamp);
                UserStream { user_id, events }
            })
            .collect();
        let n = self.track_names.len();
        Corpus {
            users,
            track_names: self.track_names,
            track_index: self.track_index,
            meta: vec![TrackMeta::default(); n],
            feature_dim: None,
            malformed_rows: self.malformed_rows,
        }
    }
}

/// Column layout of an event file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventFormat {
    pub delimiter: char,
    pub user_col: usize,
    pub track_col: usize,
    pub timestamp_col: usize,
    /// Abort on the first malformed row instead of skipping it.
    pub strict: bool,
}

impl Default for EventFormat {
    fn default() -> Self {
        Self {
            delimiter: '\t',
            user_col: 0,
            track_col: 1,
            timestamp_col: 2,
            strict: false,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn load_events(path: impl AsRef<Path>, format: &EventFormat) -> Result<Corpus> {
    let path = path.as_ref();
    read_events(open(path)?, format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_events<R: BufRead>(reader: R, format: &EventFormat) -> Result<Corpus> {
    let mut builder = CorpusBuilder::new();
    let needed = format.user_col.max(format.track_col).max(format.timestamp_col);
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<events>", e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter).collect();
        let is_first = std::mem::replace(&mut first, false);
        let row = if fields.len() <= needed {
            Err(format!("expected at least {} fields", needed + 1))
        } else {
            match fields[format.timestamp_col].trim().parse::<i64>() {
                Ok(ts) if ts < 0 => Err(format!("negative timestamp {ts}")),
                Ok(ts) => Ok(ts),
                Err(_) if is_first => continue,
                Err(_) => Err(format!(
                    "timestamp {:?} is not an integer",
                    fields[format.timestamp_col]
                )),
            }
        };
        match row {
            Ok(ts) => {
                let user = fields[format.user_col];
                let track = fields[format.track_col];
                if user.is_empty() || track.is_empty() {
                    if format.strict {
                        return Err(Error::MalformedRow {
                            line: i + 1,
                            reason: "empty user or track id".into(),
                        });
                    }
                    builder.malformed_rows += 1;
                    continue;
                }
                builder.push(user, track, ts);
            }
            Err(reason) if format.strict => return Err(Error::MalformedRow { line: i + 1, reason }),
            Err(reason) => {
                log::debug!("skipping line {}: {reason}", i + 1);
                builder.malformed_rows += 1;
            }
        }
    }
    if builder.malformed_rows > 0 {
        log::warn!("skipped {} malformed event rows", builder.malformed_rows);
    }
    Ok(builder.build())
}

pub fn load_meta(path: impl AsRef<Path>, corpus: Corpus, strict: bool) -> Result<Corpus> {
    let path = path.as_ref();
    read_meta(open(path)?, corpus, strict).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn parse_meta_row(fields: &[&str]) -> std::result::Result<TrackMeta, String> {
    let duration_ms = match fields.get(1).map(|s| s.trim()) {
        None | Some("") => None,
        Some(s) => match s.parse::<u32>() {
            Ok(0) => return Err("duration_ms must be positive".into()),
            Ok(d) => Some(d),
            Err(_) => return Err(format!("duration {s:?} is not a positive integer")),
        },
    };
    let rest = fields.get(2..).unwrap_or(&[]);
    let features = if rest.iter().all(|s| s.trim().is_empty()) {
        None
    } else {
        let parsed: std::result::Result<Vec<f64>, _> = rest.iter().map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.iter().all(|x| x.is_finite()) => Some(v),
            _ => return Err("feature vector has missing or non-numeric entries".into()),
        }
    };
    Ok(TrackMeta { duration_ms, features })
}

/// Merges a metadata file into `corpus`. Tracks absent from the file keep empty
/// metadata; rows for tracks the corpus never references are ignored.
pub fn read_meta<R: BufRead>(reader: R, mut corpus: Corpus, strict: bool) -> Result<Corpus> {
    let mut malformed = 0usize;
    let mut unknown = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<meta>", e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let meta = match parse_meta_row(&fields) {
            Ok(m) => m,
            Err(_) if i == 0 && fields.get(1).is_some_and(|s| s.trim() == "duration_ms") => continue,
            Err(reason) if strict => return Err(Error::MalformedRow { line: i + 1, reason }),
            Err(reason) => {
                log::debug!("skipping meta line {}: {reason}", i + 1);
                malformed += 1;
                continue;
            }
        };
        // Feature length must agree across the whole file, not just referenced tracks.
        if let (Some(f), Some(m)) = (&meta.features, corpus.feature_dim) {
            if f.len() != m {
                return Err(Error::FeatureLength {
                    track: fields[0].to_owned(),
                    expected: m,
                    found: f.len(),
                });
            }
        }
        match corpus.track_id(fields[0]) {
            Some(id) => corpus.set_meta(id, meta)?,
            None => {
                if let Some(f) = &meta.features {
                    corpus.feature_dim.get_or_insert(f.len());
                }
                unknown += 1;
            }
        }
    }
    if malformed > 0 {
        log::warn!("skipped {malformed} malformed metadata rows");
    }
    if unknown > 0 {
        log::debug!("{unknown} metadata rows reference tracks outside the corpus");
    }
    corpus.malformed_rows += malformed;
    Ok(corpus)
}

pub fn write_events<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    writeln!(out, "user_id\ttrack_id\ttimestamp")?;
    for u in &corpus.users {
        for e in &u.events {
            writeln!(out, "{}\t{}\t{}", u.user_id, corpus.track_name(e.track), e.timestamp)?;
        }
    }
    Ok(())
}

/// Writes metadata rows for every track that has a duration or features.
pub fn write_meta<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for (i, m) in corpus.meta.iter().enumerate() {
        if m.duration_ms.is_none() && m.features.is_none() {
            continue;
        }
        write!(out, "{}\t", corpus.track_names[i])?;
        if let Some(d) = m.duration_ms {
            write!(out, "{d}")?;
        }
        if let Some(f) = &m.features {
            for x in f {
                write!(out, "\t{x}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parameters of the count-stratified user sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub min_events: usize,
    pub max_events: usize,
    pub num_bins: usize,
    pub users_per_stratum: usize,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            min_events: 1000,
            max_events: 30000,
            num_bins: 10,
            users_per_stratum: 15,
            seed: 0,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_events >= self.max_events {
            return Err(Error::InvalidParameter(format!(
                "min_events ({}) must be below max_events ({})",
                self.min_events, self.max_events
            )));
        }
        if self.num_bins == 0 {
            return Err(Error::InvalidParameter("num_bins must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sizes of `n` items split into `bins` rank-order bins; the first `n % bins`
/// bins take one extra item.
pub fn bin_sizes(n: usize, bins: usize) -> Vec<usize> {
    (0..bins).map(|b| n / bins + usize::from(b < n % bins)).collect()
}

/// Keeps users with `min_events ..= max_events` events, ranks them by count,
/// splits the ranking into equal-size bins and draws `users_per_stratum` users
/// from each bin without replacement.
pub fn stratified_sample(corpus: &Corpus, spec: &SamplingSpec) -> Result<Corpus> {
    spec.validate()?;
    if corpus.users.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut eligible: Vec<(usize, &str, usize)> = corpus
        .users
        .iter()
        .enumerate()
        .filter(|(_, u)| (spec.min_events..=spec.max_events).contains(&u.events.len()))
        .map(|(i, u)| (u.events.len(), u.user_id.as_str(), i))
        .collect();
    eligible.sort_unstable();

    let mut keep = Vec::new();
    let mut start = 0;
    for (b, size) in bin_sizes(eligible.len(), spec.num_bins).into_iter().enumerate() {
        let bin = &eligible[start..start + size];
        start += size;
        if size < spec.users_per_stratum {
            log::warn!(
                "bin {b} holds {size} users, fewer than {}; taking the whole bin",
                spec.users_per_stratum
            );
            keep.extend(bin.iter().map(|e| e.2));
            continue;
        }
        let mut rng = seed::rng(seed::derive(spec.seed, b as u64));
        keep.extend(
            index::sample(&mut rng, size, spec.users_per_stratum)
                .into_iter()
                .map(|j| bin[j].2),
        );
    }
    Ok(corpus.retain_users(&keep))
}
