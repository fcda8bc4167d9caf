//! Sliding-window replay of listening histories.
//!
//! For every event `k` of a user, the window holds the user's events in
//! `[t_k - window_days, t_k]` (including `k` itself) and the ground truth is the
//! rest of `k`'s session. Each configured algorithm ranks the window's
//! candidates; R-precision compares the top-R list with the distinct
//! remainder, and the next-hit rate compares the top-1 with the next event.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{
    self, top_k, ActivationVector, ComponentConfig, EventWindow, Label, RewardMode, WindowBuilder, DEFAULT_ALPHA,
    DEFAULT_DECAY, DEFAULT_MIN_GAP_HOURS, WEEK_FIT_DECAY, YEAR_FIT_DECAY,
};
use crate::baselines::{is_transition, trans_prob_with, TransitionTable};
use crate::corpus::{Corpus, ListeningEvent, TrackId, TrackMeta, UserStream};
use crate::error::{Error, Result};
use crate::seed;
use crate::sessionizer::session_ends;

pub const DEFAULT_WINDOW_DAYS: u32 = 7;

/// One activation component with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "component", rename_all = "snake_case")]
pub enum Component {
    BaseLevel { decay: f64 },
    Spreading,
    PartialMatching,
    Valuation { reward: RewardMode, alpha: f64 },
    Noise,
}

impl Component {
    fn config(&self, min_gap_hours: f64) -> ComponentConfig {
        let mut cfg = ComponentConfig {
            min_gap_hours,
            ..Default::default()
        };
        match *self {
            Component::BaseLevel { decay } => cfg.decay = decay,
            Component::Valuation { reward, alpha } => {
                cfg.reward_mode = reward;
                cfg.alpha = alpha;
            }
            _ => {}
        }
        cfg
    }

    fn compute(
        &self,
        window: &EventWindow<'_>,
        meta: &[TrackMeta],
        min_gap_hours: f64,
        noise_seed: u64,
    ) -> Result<ActivationVector> {
        match self {
            Component::BaseLevel { .. } => activation::base_level(window, &self.config(min_gap_hours)),
            Component::Spreading => activation::spreading(window),
            Component::PartialMatching => activation::partial_matching(window, meta),
            Component::Valuation { .. } => activation::valuation(window, meta, &self.config(min_gap_hours)),
            Component::Noise => activation::noise(window, noise_seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// Weighted sum of softmax-normalized components.
    Activation {
        parts: Vec<(Component, f64)>,
    },
    TransProb,
    MostRecent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Algorithm {
    pub label: String,
    pub predictor: Predictor,
}

impl Algorithm {
    pub fn component(label: impl Into<String>, component: Component) -> Self {
        Self::weighted(label, vec![(component, 1.0)])
    }

    pub fn weighted(label: impl Into<String>, parts: Vec<(Component, f64)>) -> Self {
        Self {
            label: label.into(),
            predictor: Predictor::Activation { parts },
        }
    }

    pub fn trans_prob() -> Self {
        Self {
            label: "TransProb".into(),
            predictor: Predictor::TransProb,
        }
    }

    pub fn most_recent() -> Self {
        Self {
            label: "MostRecent".into(),
            predictor: Predictor::MostRecent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Predictor::Activation { parts } = &self.predictor {
            if parts.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "{}: no activation components",
                    self.label
                )));
            }
            for (c, w) in parts {
                if !w.is_finite() {
                    return Err(Error::InvalidParameter(format!("{}: non-finite weight", self.label)));
                }
                c.config(DEFAULT_MIN_GAP_HOURS).validate()?;
            }
        }
        Ok(())
    }

    fn uses(&self, pred: impl Fn(&Component) -> bool) -> bool {
        matches!(&self.predictor, Predictor::Activation { parts } if parts.iter().any(|(c, _)| pred(c)))
    }
}

pub fn base_level_default() -> Component {
    Component::BaseLevel { decay: DEFAULT_DECAY }
}

pub fn valuation_mp() -> Component {
    Component::Valuation {
        reward: RewardMode::MostPopular,
        alpha: DEFAULT_ALPHA,
    }
}

/// The fifteen standard configurations: three base-level decays, three
/// valuation rewards, spreading, partial matching, noise, four unweighted
/// combinations and the two non-ACT-R baselines.
pub fn default_roster() -> Vec<Algorithm> {
    let valuation = |reward| Component::Valuation {
        reward,
        alpha: DEFAULT_ALPHA,
    };
    let (b, s, v) = (base_level_default(), Component::Spreading, valuation_mp());
    vec![
        Algorithm::trans_prob(),
        Algorithm::component("Partial Matching", Component::PartialMatching),
        Algorithm::component("Noise", Component::Noise),
        Algorithm::component("Valuation(discrete)", valuation(RewardMode::Discrete)),
        Algorithm::component("Valuation(ratio)", valuation(RewardMode::Ratio)),
        Algorithm::component("Valuation(MP)", v.clone()),
        Algorithm::component("Spreading", s.clone()),
        Algorithm::component("Base-level(year)", Component::BaseLevel { decay: YEAR_FIT_DECAY }),
        Algorithm::weighted("ACT-R(B,V)", vec![(b.clone(), 1.0), (v.clone(), 1.0)]),
        Algorithm::most_recent(),
        Algorithm::component("Base-level(default)", b.clone()),
        Algorithm::component("Base-level(week)", Component::BaseLevel { decay: WEEK_FIT_DECAY }),
        Algorithm::weighted("ACT-R(S,V)", vec![(s.clone(), 1.0), (v.clone(), 1.0)]),
        Algorithm::weighted("ACT-R(B,S)", vec![(b.clone(), 1.0), (s.clone(), 1.0)]),
        Algorithm::weighted("ACT-R(B,S,V)", vec![(b, 1.0), (s, 1.0), (v, 1.0)]),
    ]
}

/// One evaluation point.
#[derive(Clone, Debug)]
pub struct PredictionQuery<'a> {
    pub user_id: &'a str,
    /// Index of the most recent consumed event in the user's stream.
    pub position: usize,
    pub window: EventWindow<'a>,
    /// Events after `position` in the same session; never empty.
    pub remainder: &'a [ListeningEvent],
    /// Distinct remainder tracks in order of first appearance.
    pub relevant: Vec<TrackId>,
}

impl PredictionQuery<'_> {
    /// Number of distinct tracks in the remainder.
    pub fn big_r(&self) -> usize {
        self.relevant.len()
    }

    pub fn next_track(&self) -> TrackId {
        self.remainder[0].track
    }
}

/// Query stream of one user, sliding the window one event at a time and
/// keeping the window's within-session bigram table up to date.
pub struct UserQueries<'a> {
    user: &'a UserStream,
    ends: Vec<usize>,
    span: i64,
    next_pos: usize,
    lo: usize,
    builder: WindowBuilder,
    transitions: TransitionTable,
}

impl<'a> UserQueries<'a> {
    pub fn new(user: &'a UserStream, num_tracks: usize, window_days: u32) -> Result<Self> {
        if user.events.iter().any(|e| e.session.is_none()) {
            return Err(Error::NotSessionized);
        }
        Ok(Self {
            ends: session_ends(&user.events),
            user,
            span: i64::from(window_days) * 24 * 3600,
            next_pos: 0,
            lo: 0,
            builder: WindowBuilder::new(num_tracks),
            transitions: TransitionTable::new(),
        })
    }

    /// Bigrams of the window of the most recently emitted query.
    pub fn transitions(&self) -> &TransitionTable {
        &self.transitions
    }

    /// Start of the current window.
    pub fn window_start(&self) -> usize {
        self.lo
    }

    fn advance(&mut self, pos: usize) {
        let events = &self.user.events;
        let start = events[pos].timestamp - self.span;
        let mut new_lo = self.lo;
        while events[new_lo].timestamp < start {
            new_lo += 1;
        }
        // The previous window was [lo, pos).
        for m in self.lo..new_lo {
            if m + 1 < pos && is_transition(&events[m], &events[m + 1]) {
                self.transitions.remove(events[m].track, events[m + 1].track);
            }
        }
        if pos > new_lo && is_transition(&events[pos - 1], &events[pos]) {
            self.transitions.add(events[pos - 1].track, events[pos].track);
        }
        self.lo = new_lo;
    }
}

impl<'a> Iterator for UserQueries<'a> {
    type Item = PredictionQuery<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        let events: &'a [ListeningEvent] = &self.user.events;
        while self.next_pos < events.len() {
            let pos = self.next_pos;
            self.next_pos += 1;
            self.advance(pos);
            let remainder = &events[pos + 1..self.ends[pos]];
            if remainder.is_empty() {
                continue;
            }
            let window = self
                .builder
                .build(&events[self.lo..=pos], events[pos].timestamp)
                .expect("window over a sorted stream is valid");
            let mut relevant: Vec<TrackId> = Vec::with_capacity(remainder.len());
            for e in remainder {
                if !relevant.contains(&e.track) {
                    relevant.push(e.track);
                }
            }
            return Some(PredictionQuery {
                user_id: &self.user.user_id,
                position: pos,
                window,
                remainder,
                relevant,
            });
        }
        None
    }
}

/// All queries of a sessionized corpus, ordered by user then position.
pub fn generate_queries(corpus: &Corpus, window_days: u32) -> Result<impl Iterator<Item = PredictionQuery<'_>>> {
    let streams = corpus
        .users()
        .iter()
        .map(|u| UserQueries::new(u, corpus.num_tracks(), window_days))
        .collect::<Result<Vec<_>>>()?;
    Ok(streams.into_iter().flatten())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    /// Relevant tracks among the top-R predictions.
    pub r: usize,
    pub big_r: usize,
    pub hit: bool,
}

impl QueryOutcome {
    pub fn precision(&self) -> f64 {
        self.r as f64 / self.big_r as f64
    }
}

/// Per-query inputs shared by all algorithms.
#[derive(Clone, Copy, Debug)]
pub struct ScoringContext<'a> {
    pub meta: &'a [TrackMeta],
    pub seed: u64,
    pub min_gap_hours: f64,
}

/// Scores of one algorithm on one query's candidates.
pub fn algorithm_scores(
    algorithm: &Algorithm,
    query: &PredictionQuery<'_>,
    ctx: &ScoringContext<'_>,
    transitions: Option<&TransitionTable>,
) -> Result<ActivationVector> {
    let mut cache = Vec::new();
    scores_cached(algorithm, query, ctx, transitions, &mut cache)
}

fn scores_cached(
    algorithm: &Algorithm,
    query: &PredictionQuery<'_>,
    ctx: &ScoringContext<'_>,
    transitions: Option<&TransitionTable>,
    cache: &mut Vec<(Component, ActivationVector)>,
) -> Result<ActivationVector> {
    let window = &query.window;
    match &algorithm.predictor {
        Predictor::TransProb => match transitions {
            Some(t) => trans_prob_with(window, t),
            None => crate::baselines::trans_prob(window),
        },
        Predictor::MostRecent => {
            ActivationVector::from_raw(Label::MostRecent, window, &vec![0.0; window.num_candidates()])
        }
        Predictor::Activation { parts } => {
            let noise_seed = seed::query_seed(ctx.seed, query.user_id, query.position);
            for (c, _) in parts {
                if !cache.iter().any(|(k, _)| k == c) {
                    let v = c.compute(window, ctx.meta, ctx.min_gap_hours, noise_seed)?;
                    cache.push((c.clone(), v));
                }
            }
            let lookup = |c: &Component| &cache.iter().find(|(k, _)| k == c).unwrap().1;
            if let [(c, w)] = parts.as_slice() {
                if *w == 1.0 {
                    return Ok(lookup(c).clone());
                }
            }
            let weighted: Vec<(&ActivationVector, f64)> = parts.iter().map(|(c, w)| (lookup(c), *w)).collect();
            activation::combine(&weighted)
        }
    }
}

fn outcome(query: &PredictionQuery<'_>, scores: &ActivationVector) -> Result<QueryOutcome> {
    let big_r = query.big_r();
    let top = top_k(&query.window, scores, big_r)?;
    let candidates = query.window.candidates();
    let r = top.iter().filter(|&&i| query.relevant.contains(&candidates[i])).count();
    let hit = top.first().is_some_and(|&i| candidates[i] == query.next_track());
    Ok(QueryOutcome { r, big_r, hit })
}

/// Scores one query with every algorithm, sharing component vectors between them.
pub fn score_query(
    query: &PredictionQuery<'_>,
    algorithms: &[Algorithm],
    ctx: &ScoringContext<'_>,
    transitions: Option<&TransitionTable>,
) -> Result<Vec<QueryOutcome>> {
    let mut cache = Vec::new();
    algorithms
        .iter()
        .map(|a| outcome(query, &scores_cached(a, query, ctx, transitions, &mut cache)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub window_days: u32,
    pub seed: u64,
    /// Worker threads; 0 uses all cores. The report does not depend on it.
    pub threads: usize,
    pub min_gap_hours: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            window_days: DEFAULT_WINDOW_DAYS,
            seed: 0,
            threads: 0,
            min_gap_hours: DEFAULT_MIN_GAP_HOURS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmMetrics {
    pub algorithm: String,
    pub r_prec: f64,
    pub next_hr: f64,
    pub num_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub num_queries: usize,
    /// Aligned with [`MetricsReport::algorithms`].
    pub r_prec: Vec<f64>,
    pub next_hr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_queries: usize,
    pub algorithms: Vec<AlgorithmMetrics>,
    pub per_user: Vec<UserMetrics>,
}

impl MetricsReport {
    pub fn get(&self, label: &str) -> Option<&AlgorithmMetrics> {
        self.algorithms.iter().find(|m| m.algorithm == label)
    }

    /// `algorithm,R_prec,Next_HR,num_queries`, one row per algorithm in roster order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("algorithm,R_prec,Next_HR,num_queries\n");
        for m in &self.algorithms {
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&m.algorithm),
                m.r_prec,
                m.next_hr,
                m.num_queries
            ));
        }
        out
    }

    /// Algorithms sorted by ascending R-precision (ties by label).
    pub fn ranked(&self) -> Vec<&AlgorithmMetrics> {
        let mut v: Vec<&AlgorithmMetrics> = self.algorithms.iter().collect();
        v.sort_by(|a, b| a.r_prec.total_cmp(&b.r_prec).then(a.algorithm.cmp(&b.algorithm)));
        v
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Clone, Debug, Default)]
struct Partial {
    queries: usize,
    precision_sum: Vec<f64>,
    hits: Vec<usize>,
}

fn evaluate_user(corpus: &Corpus, user: &UserStream, algorithms: &[Algorithm], opts: &EvalOptions) -> Result<Partial> {
    let ctx = ScoringContext {
        meta: corpus.meta(),
        seed: opts.seed,
        min_gap_hours: opts.min_gap_hours,
    };
    let mut acc = Partial {
        queries: 0,
        precision_sum: vec![0.0; algorithms.len()],
        hits: vec![0; algorithms.len()],
    };
    let mut stream = UserQueries::new(user, corpus.num_tracks(), opts.window_days)?;
    while let Some(q) = stream.next() {
        let outcomes = score_query(&q, algorithms, &ctx, Some(stream.transitions()))?;
        acc.queries += 1;
        for (i, o) in outcomes.iter().enumerate() {
            acc.precision_sum[i] += o.precision();
            acc.hits[i] += o.hit as usize;
        }
    }
    Ok(acc)
}

fn coverage_warnings(corpus: &Corpus, algorithms: &[Algorithm]) {
    let (durations, features) = corpus.meta_coverage();
    let needs_durations = algorithms.iter().any(|a| {
        a.uses(|c| {
            matches!(
                c,
                Component::Valuation {
                    reward: RewardMode::Ratio | RewardMode::Discrete,
                    ..
                }
            )
        })
    });
    if needs_durations && durations < 1.0 {
        log::warn!(
            "{:.1}% of events lack a track duration; their valuation reward defaults to 1",
            100.0 * (1.0 - durations)
        );
    }
    if algorithms.iter().any(|a| a.uses(|c| *c == Component::PartialMatching)) && features < 1.0 {
        log::warn!(
            "{:.1}% of events lack track features; partial matching scores them 0",
            100.0 * (1.0 - features)
        );
    }
}

/// Replays every user and aggregates micro-averaged metrics over all queries.
///
/// Users are scored independently (in parallel when `threads != 1`) and their
/// partial sums merged in user-id order, so the report is identical for any
/// thread count.
pub fn evaluate(corpus: &Corpus, algorithms: &[Algorithm], opts: &EvalOptions) -> Result<MetricsReport> {
    if algorithms.is_empty() {
        return Err(Error::InvalidParameter("no algorithms to evaluate".into()));
    }
    for a in algorithms {
        a.validate()?;
    }
    if !corpus.is_sessionized() {
        return Err(Error::NotSessionized);
    }
    coverage_warnings(corpus, algorithms);

    let run = || -> Result<Vec<Partial>> {
        corpus
            .users()
            .par_iter()
            .map(|u| evaluate_user(corpus, u, algorithms, opts))
            .collect()
    };
    let partials = if opts.threads == 1 {
        corpus
            .users()
            .iter()
            .map(|u| evaluate_user(corpus, u, algorithms, opts))
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(run)?
    };

    let n_alg = algorithms.len();
    let mut total = Partial {
        queries: 0,
        precision_sum: vec![0.0; n_alg],
        hits: vec![0; n_alg],
    };
    let mut per_user = Vec::with_capacity(partials.len());
    for (u, p) in corpus.users().iter().zip(&partials) {
        total.queries += p.queries;
        for i in 0..n_alg {
            total.precision_sum[i] += p.precision_sum[i];
            total.hits[i] += p.hits[i];
        }
        per_user.push(UserMetrics {
            user_id: u.user_id.clone(),
            num_queries: p.queries,
            r_prec: p.precision_sum.iter().map(|s| mean(*s, p.queries)).collect(),
            next_hr: p.hits.iter().map(|&h| mean(h as f64, p.queries)).collect(),
        });
    }
    let algorithms = algorithms
        .iter()
        .enumerate()
        .map(|(i, a)| AlgorithmMetrics {
            algorithm: a.label.clone(),
            r_prec: mean(total.precision_sum[i], total.queries),
            next_hr: mean(total.hits[i] as f64, total.queries),
            num_queries: total.queries,
        })
        .collect();
    Ok(MetricsReport {
        num_queries: total.queries,
        algorithms,
        per_user,
    })
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
