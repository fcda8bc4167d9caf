//! Decay and weight calibration.
//!
//! [`relisten_gaps`] histograms the time between consecutive plays of the same
//! track by the same user; [`fit_power_law`] fits a line to that histogram in
//! log-log space, whose negated slope is a decay estimate for the base-level
//! component. [`fit_weights`] regresses remaining-session membership on the
//! base-level, spreading and valuation activations.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::activation::{self, ComponentConfig, RewardMode, DEFAULT_ALPHA, DEFAULT_MIN_GAP_HOURS, WEEK_FIT_DECAY};
use crate::corpus::{Corpus, TrackId};
use crate::error::{Error, Result};
use crate::evaluator::{Algorithm, Component, UserQueries, DEFAULT_WINDOW_DAYS};
use crate::lstsq::LeastSquares;
use crate::seed;

/// Relistening counts per whole-hour gap.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapHistogram {
    pub bins: BTreeMap<u64, u64>,
    pub max_hours: Option<u64>,
}

impl GapHistogram {
    pub fn total(&self) -> u64 {
        self.bins.values().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("hours,count\n");
        for (h, c) in &self.bins {
            let _ = writeln!(out, "{h},{c}");
        }
        out
    }
}

/// Whole-hour bin of a gap in seconds: floor to hours, at least 1.
pub fn gap_bin(gap_seconds: i64) -> u64 {
    ((gap_seconds.max(0) / 3600) as u64).max(1)
}

/// Consecutive same-track gaps for every user. Gaps above `max_hours` are
/// dropped; sub-hour gaps land in bin 1.
pub fn relisten_gaps(corpus: &Corpus, max_hours: Option<u64>) -> GapHistogram {
    let mut bins = BTreeMap::new();
    let mut last: HashMap<TrackId, i64> = HashMap::new();
    for u in corpus.users() {
        last.clear();
        for e in &u.events {
            if let Some(prev) = last.insert(e.track, e.timestamp) {
                let h = gap_bin(e.timestamp - prev);
                if max_hours.is_none_or(|m| h <= m) {
                    *bins.entry(h).or_insert(0) += 1;
                }
            }
        }
    }
    GapHistogram { bins, max_hours }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `-slope`, usable as the base-level decay.
    pub implied_decay: f64,
    pub num_bins: usize,
}

/// Ordinary least squares of `log10(count)` on `log10(hours)` over non-empty bins.
pub fn fit_power_law(hist: &GapHistogram) -> Result<PowerLawFit> {
    let points: Vec<(f64, f64)> = hist
        .bins
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&h, &c)| ((h as f64).log10(), (c as f64).log10()))
        .collect();
    if points.len() < 2 {
        return Err(Error::TooFewBins(points.len()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(PowerLawFit {
        slope,
        intercept,
        r_squared,
        implied_decay: -slope,
        num_bins: points.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightFitConfig {
    pub base_level_decay: f64,
    pub alpha: f64,
    pub user_fraction: f64,
    pub with_intercept: bool,
    /// Constrain b, s and v to be non-negative.
    pub nonneg: bool,
    pub seed: u64,
    pub window_days: u32,
    pub min_gap_hours: f64,
}

impl Default for WeightFitConfig {
    fn default() -> Self {
        Self {
            base_level_decay: WEEK_FIT_DECAY,
            alpha: DEFAULT_ALPHA,
            user_fraction: 0.10,
            with_intercept: false,
            nonneg: false,
            seed: 0,
            window_days: DEFAULT_WINDOW_DAYS,
            min_gap_hours: DEFAULT_MIN_GAP_HOURS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub b: f64,
    pub s: f64,
    pub v: f64,
    pub intercept: Option<f64>,
    pub fit_user_fraction: f64,
    pub num_users: usize,
    pub num_rows: usize,
    pub rank_deficient: bool,
    pub base_level_decay: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl WeightFit {
    /// Weighted combination `b B + s S + v V` using the fitted components.
    pub fn algorithm(&self, label: impl Into<String>) -> Algorithm {
        Algorithm::weighted(
            label,
            vec![
                (
                    Component::BaseLevel {
                        decay: self.base_level_decay,
                    },
                    self.b,
                ),
                (Component::Spreading, self.s),
                (
                    Component::Valuation {
                        reward: RewardMode::MostPopular,
                        alpha: self.alpha,
                    },
                    self.v,
                ),
            ],
        )
    }
}

/// Solves for `(b, s, v[, intercept])` on an accumulated system.
pub fn solve_weights(ls: &LeastSquares, with_intercept: bool, nonneg: bool) -> (Vec<f64>, bool) {
    let sol = if nonneg {
        let mut mask = vec![true; 3];
        if with_intercept {
            mask.push(false);
        }
        ls.solve_nonneg(&mask)
    } else {
        ls.solve()
    };
    let deficient = sol.is_rank_deficient();
    (sol.coef, deficient)
}

/// Users drawn for weight fitting: `ceil(fraction * users)` indices, sorted.
pub fn sample_users(num_users: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = ((fraction * num_users as f64).ceil() as usize).clamp(1, num_users);
    let mut picked = index::sample(&mut seed::rng(seed), num_users, k).into_vec();
    picked.sort_unstable();
    picked
}

/// One row per (query, candidate) of the sampled users; target 1 when the
/// candidate occurs in the remaining session.
pub fn fit_weights(corpus: &Corpus, cfg: &WeightFitConfig) -> Result<WeightFit> {
    if !(cfg.user_fraction > 0.0 && cfg.user_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "user_fraction must lie in (0, 1], got {}",
            cfg.user_fraction
        )));
    }
    if corpus.users().is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let b_cfg = ComponentConfig {
        decay: cfg.base_level_decay,
        min_gap_hours: cfg.min_gap_hours,
        ..Default::default()
    };
    let v_cfg = ComponentConfig {
        alpha: cfg.alpha,
        reward_mode: RewardMode::MostPopular,
        ..Default::default()
    };
    b_cfg.validate()?;
    v_cfg.validate()?;

    let users = sample_users(corpus.users().len(), cfg.user_fraction, cfg.seed);
    let p = 3 + cfg.with_intercept as usize;
    let mut ls = LeastSquares::new(p);
    let mut row = vec![1.0; p];
    for &u in &users {
        for q in UserQueries::new(&corpus.users()[u], corpus.num_tracks(), cfg.window_days)? {
            let b = activation::base_level(&q.window, &b_cfg)?;
            let s = activation::spreading(&q.window)?;
            let v = activation::valuation(&q.window, corpus.meta(), &v_cfg)?;
            for (i, track) in q.window.candidates().iter().enumerate() {
                row[0] = b.scores[i];
                row[1] = s.scores[i];
                row[2] = v.scores[i];
                ls.push(&row, f64::from(u8::from(q.relevant.contains(track))));
            }
        }
    }

    let (coef, rank_deficient) = solve_weights(&ls, cfg.with_intercept, cfg.nonneg);
    if rank_deficient {
        log::warn!("weight design matrix is rank deficient; returning the minimum-norm solution");
    }
    Ok(WeightFit {
        b: coef[0],
        s: coef[1],
        v: coef[2],
        intercept: cfg.with_intercept.then(|| coef[3]),
        fit_user_fraction: cfg.user_fraction,
        num_users: users.len(),
        num_rows: ls.num_rows(),
        rank_deficient,
        base_level_decay: cfg.base_level_decay,
        alpha: cfg.alpha,
        seed: cfg.seed,
    })
}
