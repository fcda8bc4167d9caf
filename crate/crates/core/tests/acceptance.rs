//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

mod common;

use std::time::Instant;

use common::{max_abs_diff, random_events, random_meta, report, rng};
use rand::Rng;
use relisten_core::activation::{
    self, base_level, noise, partial_matching, rank, spreading, top_1, valuation, ActivationVector, ComponentConfig,
    EventWindow, RewardMode, DEFAULT_ALPHA, DEFAULT_DECAY, WEEK_FIT_DECAY,
};
use relisten_core::baselines::{most_recent, trans_prob};
use relisten_core::calibration::{fit_power_law, relisten_gaps, solve_weights, GapHistogram};
use relisten_core::corpus::{Corpus, CorpusBuilder, ListeningEvent, TrackId};
use relisten_core::evaluator::{
    default_roster, evaluate, score_query, valuation_mp, Algorithm, Component, EvalOptions, ScoringContext, UserQueries,
};
use relisten_core::lstsq::LeastSquares;
use relisten_core::sessionizer::sessionize;
use relisten_core::synthgen::{generate, SynthSpec, MAX_GAP_HOURS};

fn cfg(decay: f64, alpha: f64, reward_mode: RewardMode) -> ComponentConfig {
    ComponentConfig {
        decay,
        alpha,
        reward_mode,
        ..Default::default()
    }
}

#[test]
fn criterion_01_component_oracle() {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut worst_component = "";
    for _ in 0..1000 {
        let events = random_events(&mut r, 20, 8);
        let meta = random_meta(&mut r, 8, 4);
        let t_ref = events.last().unwrap().timestamp + if r.random_bool(0.5) { 0 } else { r.random_range(1..7200) };
        let w = EventWindow::new(&events, t_ref).unwrap();
        let decay = r.random_range(0.0..2.0);
        let alpha = r.random_range(0.01..=1.0);
        let seed: u64 = r.random();
        let mut check = |name: &'static str, got: &ActivationVector, want: Vec<f64>| {
            let d = max_abs_diff(&got.scores, &want);
            if d.is_nan() || d > worst {
                worst = d;
                worst_component = name;
            }
        };
        check(
            "base-level",
            &base_level(&w, &cfg(decay, alpha, RewardMode::Ratio)).unwrap(),
            common::base_level(&events, t_ref, decay),
        );
        check("spreading", &spreading(&w).unwrap(), common::spreading(&events));
        check(
            "partial matching",
            &partial_matching(&w, &meta).unwrap(),
            common::partial_matching(&events, &meta),
        );
        for mode in [RewardMode::Ratio, RewardMode::Discrete, RewardMode::MostPopular] {
            check(
                "valuation",
                &valuation(&w, &meta, &cfg(decay, alpha, mode)).unwrap(),
                common::valuation(&events, &meta, mode, alpha),
            );
        }
        check(
            "noise",
            &noise(&w, seed).unwrap(),
            common::noise(w.num_candidates(), seed),
        );
        check("trans-prob", &trans_prob(&w).unwrap(), common::trans_prob(&events));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "component oracle equivalence",
        worst <= 1e-9 && secs < 60.0,
        &format!("max |diff| = {worst:.2e} ({worst_component}), {secs:.2}s"),
    );
}

#[test]
fn criterion_02_softmax_invariants() {
    let mut r = rng(2);
    let (mut worst_sum, mut worst_shift) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(1..50);
        let scale = 10f64.powi(r.random_range(-3..4));
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let p = activation::softmax(&x).unwrap();
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = x.iter().map(|v| v - max).collect();
        worst_shift = worst_shift.max(max_abs_diff(&p, &activation::softmax(&shifted).unwrap()));
        let c = r.random_range(-100.0..100.0);
        let moved: Vec<f64> = x.iter().map(|v| v + c).collect();
        worst_shift = worst_shift.max(max_abs_diff(&p, &activation::softmax(&moved).unwrap()));
    }
    // Every component output is a distribution too.
    for _ in 0..300 {
        let events = random_events(&mut r, 20, 8);
        let meta = random_meta(&mut r, 8, 4);
        let w = EventWindow::new(&events, events.last().unwrap().timestamp).unwrap();
        let c = cfg(0.5, 0.1, RewardMode::Ratio);
        for v in [
            base_level(&w, &c).unwrap(),
            spreading(&w).unwrap(),
            partial_matching(&w, &meta).unwrap(),
            valuation(&w, &meta, &c).unwrap(),
            noise(&w, 7).unwrap(),
            trans_prob(&w).unwrap(),
        ] {
            worst_sum = worst_sum.max((v.scores.iter().sum::<f64>() - 1.0).abs());
        }
    }
    report(
        2,
        "softmax sums and translation invariance",
        worst_sum <= 1e-9 && worst_shift <= 1e-12,
        &format!("max |sum - 1| = {worst_sum:.2e}, max translation diff = {worst_shift:.2e}"),
    );
}

/// Window with strictly increasing timestamps at least a minute apart.
fn distinct_time_window(r: &mut rand_chacha::ChaCha8Rng) -> Vec<ListeningEvent> {
    let mut events = random_events(r, 20, 6);
    let mut t = events[0].timestamp;
    for e in events.iter_mut().skip(1) {
        t += r.random_range(60..100_000);
        e.timestamp = t;
    }
    events
}

#[test]
fn criterion_03_limit_equivalences() {
    let mut r = rng(3);
    let (mut pop_ok, mut recent_ok) = (0, 0);
    for _ in 0..200 {
        let events = distinct_time_window(&mut r);
        let w = EventWindow::new(&events, events.last().unwrap().timestamp).unwrap();
        let counts: Vec<f64> = w
            .candidates()
            .iter()
            .map(|c| events.iter().filter(|e| e.track == *c).count() as f64)
            .collect();
        let popularity = ActivationVector::from_raw(activation::Label::BaseLevel, &w, &counts).unwrap();
        let flat = base_level(&w, &cfg(0.0, 0.1, RewardMode::Ratio)).unwrap();
        pop_ok += (rank(&w, &flat).unwrap() == rank(&w, &popularity).unwrap()) as usize;
        let steep = base_level(&w, &cfg(50.0, 0.1, RewardMode::Ratio)).unwrap();
        recent_ok += (w.candidates()[top_1(&w, &steep).unwrap()] == most_recent(&w)[0]) as usize;
    }
    report(
        3,
        "decay limits match popularity and recency",
        pop_ok == 200 && recent_ok == 200,
        &format!("d=0 popularity {pop_ok}/200, d=50 most-recent top-1 {recent_ok}/200"),
    );
}

#[test]
fn criterion_04_valuation_closed_form() {
    // A second candidate heard once (V = alpha) exposes the raw value through
    // the softmax ratio: ln(p0 / p1) = V(n) - alpha.
    let mut worst = 0.0f64;
    for alpha in [0.05, 0.1, 0.5] {
        for n in 1..=100i64 {
            let mut events: Vec<ListeningEvent> = (0..n)
                .map(|k| ListeningEvent {
                    track: TrackId(0),
                    timestamp: 60 * k,
                    session: Some(0),
                })
                .collect();
            events.push(ListeningEvent {
                track: TrackId(1),
                timestamp: 60 * n,
                session: Some(0),
            });
            let w = EventWindow::new(&events, 60 * n).unwrap();
            let s = valuation(&w, &[], &cfg(0.5, alpha, RewardMode::MostPopular))
                .unwrap()
                .scores;
            let diff = (s[0] / s[1]).ln();
            let want = (1.0 - (1.0 - alpha).powi(n as i32)) - alpha;
            worst = worst.max((diff - want).abs());
        }
    }
    let mut r = rng(4);
    let mut rank_ok = 0;
    for _ in 0..200 {
        let events = random_events(&mut r, 20, 6);
        let w = EventWindow::new(&events, events.last().unwrap().timestamp).unwrap();
        let counts: Vec<f64> = w
            .candidates()
            .iter()
            .map(|c| events.iter().filter(|e| e.track == *c).count() as f64)
            .collect();
        let popularity = ActivationVector::from_raw(activation::Label::Valuation, &w, &counts).unwrap();
        let v = valuation(&w, &[], &cfg(0.5, DEFAULT_ALPHA, RewardMode::MostPopular)).unwrap();
        rank_ok += (rank(&w, &v).unwrap() == rank(&w, &popularity).unwrap()) as usize;
    }
    report(
        4,
        "valuation closed form and most-popular ranking",
        worst <= 1e-12 && rank_ok == 200,
        &format!("max |V(n) - closed form| = {worst:.2e}, most-popular ranking {rank_ok}/200"),
    );
}

#[test]
fn criterion_05_power_law_calibration() {
    let hist = GapHistogram {
        bins: (1..=168u64)
            .map(|h| (h, (1e12 * (h as f64).powf(-1.5)).round() as u64))
            .collect(),
        max_hours: None,
    };
    let exact = fit_power_law(&hist).unwrap();
    let spec = SynthSpec {
        num_users: 100,
        events_per_user: 5_000,
        gap_exponent: 1.5,
        seed: 5,
        ..Default::default()
    };
    let corpus = generate(&spec).unwrap();
    let events = corpus.num_events();
    let round_trip = fit_power_law(&relisten_gaps(&corpus, Some(MAX_GAP_HOURS))).unwrap();
    let pass = (exact.slope + 1.5).abs() <= 0.01
        && exact.r_squared >= 0.999
        && events >= 500_000
        && (round_trip.slope + 1.5).abs() <= 0.1;
    report(
        5,
        "power-law calibration",
        pass,
        &format!(
            "noiseless slope {:.6} (R^2 {:.6}); generator round trip on {events} events slope {:.4} (R^2 {:.4})",
            exact.slope, exact.r_squared, round_trip.slope, round_trip.r_squared
        ),
    );
}

const MINUTE: i64 = 60;
const FIXTURE_START: i64 = 1_600_000_000;

/// One user, two sessions:
/// session 0 at minutes 0, 10, 20, 30, 40: A B A A C;
/// session 1 a day later at minutes 1440, 1445, 1450: B C B.
/// (position, R, (r, hit) for MostRecent, (r, hit) for base-level).
type FixtureRow = (usize, usize, (usize, bool), (usize, bool));

fn fixture() -> Corpus {
    let mut b = CorpusBuilder::new();
    for (track, minute) in [
        ("A", 0),
        ("B", 10),
        ("A", 20),
        ("A", 30),
        ("C", 40),
        ("B", 1440),
        ("C", 1445),
        ("B", 1450),
    ] {
        b.push("u", track, FIXTURE_START + minute * MINUTE);
    }
    sessionize(b.build(), 30)
}

#[test]
fn criterion_06_protocol_fixture() {
    let corpus = fixture();
    let algorithms = [
        Algorithm::most_recent(),
        Algorithm::component("Base-level(default)", Component::BaseLevel { decay: DEFAULT_DECAY }),
    ];
    // Enumerated by hand.
    let expected: [FixtureRow; 6] = [
        (0, 3, (1, false), (1, false)),
        (1, 2, (1, false), (1, false)),
        (2, 2, (1, true), (1, true)),
        (3, 1, (0, false), (0, false)),
        (5, 2, (2, false), (1, false)),
        (6, 1, (0, false), (0, false)),
    ];
    let ctx = ScoringContext {
        meta: corpus.meta(),
        seed: 0,
        min_gap_hours: common::MIN_GAP_HOURS,
    };
    let mut got = Vec::new();
    let mut stream = UserQueries::new(&corpus.users()[0], corpus.num_tracks(), 7).unwrap();
    while let Some(q) = stream.next() {
        let o = score_query(&q, &algorithms, &ctx, Some(stream.transitions())).unwrap();
        got.push((q.position, q.big_r(), (o[0].r, o[0].hit), (o[1].r, o[1].hit)));
    }
    let report_ = evaluate(
        &corpus,
        &algorithms,
        &EvalOptions {
            threads: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let mean = |f: &dyn Fn(&FixtureRow) -> f64| expected.iter().map(f).sum::<f64>() / expected.len() as f64;
    let mr_prec = mean(&|e| e.2 .0 as f64 / e.1 as f64);
    let bl_prec = mean(&|e| e.3 .0 as f64 / e.1 as f64);
    let mr_hr = mean(&|e| e.2 .1 as u8 as f64);
    let bl_hr = mean(&|e| e.3 .1 as u8 as f64);
    let (mr, bl) = (&report_.algorithms[0], &report_.algorithms[1]);
    let pass = got == expected
        && report_.num_queries == 6
        && mr.r_prec == mr_prec
        && mr.next_hr == mr_hr
        && bl.r_prec == bl_prec
        && bl.next_hr == bl_hr
        && (mr_prec - 7.0 / 18.0).abs() < 1e-15
        && (bl_prec - 11.0 / 36.0).abs() < 1e-15;
    report(
        6,
        "hand-enumerated protocol fixture",
        pass,
        &format!(
            "{} queries; MostRecent R-prec {:.6} Next-HR {:.6}; base-level R-prec {:.6} Next-HR {:.6}",
            report_.num_queries, mr.r_prec, mr.next_hr, bl.r_prec, bl.next_hr
        ),
    );
}

#[test]
fn criterion_07_synthetic_ordering() {
    let start = Instant::now();
    let b = Component::BaseLevel { decay: DEFAULT_DECAY };
    let (s, v) = (Component::Spreading, valuation_mp());
    let algorithms = vec![
        Algorithm::component("Base-level(week)", Component::BaseLevel { decay: WEEK_FIT_DECAY }),
        Algorithm::component("Noise", Component::Noise),
        Algorithm::component("B", b.clone()),
        Algorithm::component("S", s.clone()),
        Algorithm::component("V", v.clone()),
        Algorithm::weighted("ACT-R(B,S,V)", vec![(b, 1.0), (s, 1.0), (v, 1.0)]),
    ];
    let mut sums = vec![0.0; algorithms.len()];
    let seeds = 10;
    for seed in 0..seeds {
        let spec = SynthSpec {
            num_users: 50,
            events_per_user: 5_000,
            gap_exponent: 0.86,
            relisten_prob: 0.66,
            seed,
            ..Default::default()
        };
        let corpus = sessionize(generate(&spec).unwrap(), 30);
        let rep = evaluate(
            &corpus,
            &algorithms,
            &EvalOptions {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        for (acc, m) in sums.iter_mut().zip(&rep.algorithms) {
            *acc += m.r_prec;
        }
    }
    let m: Vec<f64> = sums.iter().map(|x| x / seeds as f64).collect();
    let (week, noise_, bb, ss, vv, bsv) = (m[0], m[1], m[2], m[3], m[4], m[5]);
    let secs = start.elapsed().as_secs_f64();
    let pass = week > noise_ && ss > noise_ && bsv >= bb.max(ss).max(vv) - 0.005 && secs < 600.0;
    report(
        7,
        "qualitative ordering on synthetic corpora",
        pass,
        &format!(
            "mean R-prec: base-level(week) {week:.4}, noise {noise_:.4}, B {bb:.4}, S {ss:.4}, V {vv:.4}, ACT-R(B,S,V) {bsv:.4}; {secs:.1}s"
        ),
    );
}

#[test]
fn criterion_08_parallel_determinism() {
    let spec = SynthSpec {
        num_users: 12,
        events_per_user: 1_500,
        seed: 8,
        ..Default::default()
    };
    let corpus = sessionize(generate(&spec).unwrap(), 30);
    let roster = default_roster();
    let run = |threads| {
        let opts = EvalOptions {
            threads,
            seed: 8,
            ..Default::default()
        };
        serde_json::to_string_pretty(&evaluate(&corpus, &roster, &opts).unwrap()).unwrap()
    };
    let sequential = run(1);
    let parallel = run(4);
    let csv_equal = {
        let opts = |threads| EvalOptions {
            threads,
            seed: 8,
            ..Default::default()
        };
        evaluate(&corpus, &roster, &opts(1)).unwrap().to_csv() == evaluate(&corpus, &roster, &opts(3)).unwrap().to_csv()
    };
    report(
        8,
        "determinism under parallelism",
        sequential.as_bytes() == parallel.as_bytes() && csv_equal,
        &format!(
            "1 vs 4 threads: {} report bytes, identical = {}",
            sequential.len(),
            sequential == parallel
        ),
    );
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

/// The window, transitions and remainder of every query, rebuilt from scratch.
fn incremental_matches_scratch(corpus: &Corpus, window_days: u32) -> (usize, usize) {
    let span = i64::from(window_days) * 86_400;
    let (mut checked, mut bad) = (0, 0);
    for user in corpus.users() {
        let events = &user.events;
        let mut stream = UserQueries::new(user, corpus.num_tracks(), window_days).unwrap();
        while let Some(q) = stream.next() {
            let k = q.position;
            let t = events[k].timestamp;
            let lo = events.iter().position(|e| e.timestamp >= t - span).unwrap();
            let scratch = EventWindow::new(&events[lo..=k], t).unwrap();
            let table = relisten_core::baselines::TransitionTable::from_events(&events[lo..=k]);
            let end = (k + 1..events.len())
                .find(|&j| events[j].session != events[k].session)
                .unwrap_or(events.len());
            let ok = q.window.events() == scratch.events()
                && q.window.candidates() == scratch.candidates()
                && q.window.slots() == scratch.slots()
                && q.window.last_seen() == scratch.last_seen()
                && *stream.transitions() == table
                && q.remainder == &events[k + 1..end];
            checked += 1;
            bad += (!ok) as usize;
        }
    }
    (checked, bad)
}

#[test]
fn criterion_09_performance_envelope() {
    let small = SynthSpec {
        num_users: 6,
        events_per_user: 800,
        idle_hours_mean: 30.0,
        seed: 9,
        ..Default::default()
    };
    let small = sessionize(generate(&small).unwrap(), 30);
    let (checked, bad) = incremental_matches_scratch(&small, 7);
    let (checked_short, bad_short) = incremental_matches_scratch(&small, 1);

    let spec = SynthSpec {
        num_users: 150,
        events_per_user: 11_242,
        catalog_size: 200_000,
        gap_exponent: WEEK_FIT_DECAY,
        seed: 9,
        ..Default::default()
    };
    let start = Instant::now();
    let corpus = sessionize(generate(&spec).unwrap(), 30);
    let rep = evaluate(&corpus, &default_roster(), &EvalOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rss_mib = peak_rss_kib().map(|k| k as f64 / 1024.0);
    let pass = bad == 0
        && bad_short == 0
        && checked > 0
        && secs < 1800.0
        && rss_mib.is_some_and(|m| m < 4096.0)
        && rep.algorithms.len() == 15;
    report(
        9,
        "performance envelope",
        pass,
        &format!(
            "{} events, {} queries, 15 algorithms in {secs:.1}s on {} threads, peak RSS {:.0} MiB; incremental windows equal scratch on {}/{} queries",
            corpus.num_events(),
            rep.num_queries,
            rayon::current_num_threads(),
            rss_mib.unwrap_or(f64::NAN),
            checked + checked_short - bad - bad_short,
            checked + checked_short
        ),
    );
}

/// Solves the 3x3 normal equations by Cramer's rule.
fn normal_equations(rows: &[[f64; 3]], y: &[f64]) -> [f64; 3] {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (x, &t) in rows.iter().zip(y) {
        for i in 0..3 {
            b[i] += x[i] * t;
            for j in 0..3 {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][k] = b[i];
        }
        *o = det(&m) / d;
    }
    out
}

#[test]
fn criterion_10_weight_fit_solver() {
    let mut r = rng(10);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = r.random_range(3..200);
        let rows: Vec<[f64; 3]> = (0..n).map(|_| [r.random(), r.random(), r.random()]).collect();
        let y: Vec<f64> = rows.iter().map(|_| r.random_range(-1.0..1.0)).collect();
        let mut ls = LeastSquares::new(3);
        for (x, &t) in rows.iter().zip(&y) {
            ls.push(x, t);
        }
        let sol = ls.solve();
        let want = normal_equations(&rows, &y);
        worst = worst.max(max_abs_diff(&sol.coef, &want));
    }
    // v enters with a negative sign; the unconstrained fit keeps it negative.
    let mut ls = LeastSquares::new(3);
    for _ in 0..500 {
        let x: [f64; 3] = [r.random(), r.random(), r.random()];
        ls.push(&x, 0.8 * x[0] + 0.4 * x[1] - 0.3 * x[2] + r.random_range(-0.01..0.01));
    }
    let (free, _) = solve_weights(&ls, false, false);
    let (constrained, _) = solve_weights(&ls, false, true);
    let pass = worst <= 1e-9 && free[2] < 0.0 && constrained[2] == 0.0 && constrained[0] > 0.0;
    report(
        10,
        "weight-fit solver",
        pass,
        &format!(
            "max |QR - normal equations| = {worst:.2e}; unconstrained v = {:.4}, constrained v = {}",
            free[2], constrained[2]
        ),
    );
}
