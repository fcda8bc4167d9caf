use std::fs;
use std::io::{BufWriter, Write};
use std::time::Instant;

use relisten_core::calibration::{fit_power_law, fit_weights as fit_core_weights, relisten_gaps};
use relisten_core::corpus::{load_events, load_meta, stratified_sample, write_events, write_meta, Corpus, CorpusStats};
use relisten_core::evaluator::{evaluate as run_evaluation, EvalOptions, MetricsReport};
use relisten_core::sessionizer::{self, session_stats, write_sessions};
use relisten_core::synthgen::generate;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    outputs: Vec<&'a str>,
}

/// Output directory writer that records every file for the manifest.
struct OutDir<'a> {
    cfg: &'a RunConfig,
    command: &'a str,
    written: Vec<&'a str>,
}

impl<'a> OutDir<'a> {
    fn create(cfg: &'a RunConfig, command: &'a str) -> Result<Self, CliError> {
        let dir = &cfg.paths.output;
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            cfg,
            command,
            written: Vec::new(),
        })
    }

    fn write_with(
        &mut self,
        name: &'a str,
        f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.cfg.paths.output.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name);
        Ok(())
    }

    fn write(&mut self, name: &'a str, contents: &str) -> Result<(), CliError> {
        self.write_with(name, |w| w.write_all(contents.as_bytes()))
    }

    fn write_json<T: Serialize>(&mut self, name: &'a str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes the effective config and the manifest.
    fn finish(mut self) -> Result<(), CliError> {
        self.write("config.toml", &self.cfg.to_toml())?;
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            config: self.cfg,
            outputs: self.written.clone(),
        };
        self.write_json("manifest.json", &manifest)?;
        println!("wrote {}", self.cfg.paths.output.display());
        Ok(())
    }
}

fn load(cfg: &RunConfig, with_meta: bool) -> Result<Corpus, CliError> {
    cfg.validate()?;
    let path = cfg.events_path()?;
    let mut corpus = load_events(path, &cfg.input)?;
    if corpus.malformed_rows() > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), corpus.malformed_rows());
    }
    if with_meta {
        if let Some(meta) = &cfg.paths.meta {
            corpus = load_meta(meta, corpus, cfg.input.strict)?;
            let (dur, feat) = corpus.meta_coverage();
            log::info!(
                "metadata covers {:.1}% durations, {:.1}% features",
                dur * 100.0,
                feat * 100.0
            );
        }
    }
    if corpus.users().is_empty() {
        return Err(CliError::Data(format!("{}: no listening events", path.display())));
    }
    log::info!("loaded {} users, {} events", corpus.users().len(), corpus.num_events());
    Ok(corpus)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    seed: u64,
    config: &'a RunConfig,
    corpus: CorpusStats,
    metrics: &'a MetricsReport,
}

fn print_table(report: &MetricsReport) {
    let width = report
        .algorithms
        .iter()
        .map(|m| m.algorithm.len())
        .max()
        .unwrap_or(0)
        .max("algorithm".len());
    println!("{:<width$}  {:>8}  {:>8}", "algorithm", "R-prec", "Next-HR");
    for m in report.ranked() {
        println!("{:<width$}  {:>8.4}  {:>8.4}", m.algorithm, m.r_prec, m.next_hr);
    }
    println!("{} queries", report.num_queries);
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let roster = cfg.roster()?;
    let corpus = sessionizer::sessionize(load(cfg, true)?, cfg.session_gap_minutes);
    let opts = EvalOptions {
        window_days: cfg.window_days,
        seed: cfg.seed,
        threads: cfg.threads,
        min_gap_hours: cfg.min_gap_hours(),
    };
    let started = Instant::now();
    let report = run_evaluation(&corpus, &roster, &opts)?;
    log::info!("evaluated {} queries in {:.1?}", report.num_queries, started.elapsed());

    let mut out = OutDir::create(cfg, "evaluate")?;
    out.write("metrics.csv", &report.to_csv())?;
    out.write_json(
        "report.json",
        &EvalReport {
            seed: cfg.seed,
            config: cfg,
            corpus: corpus.stats(),
            metrics: &report,
        },
    )?;
    print_table(&report);
    out.finish()
}

pub fn fit_decay(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load(cfg, false)?;
    let hist = relisten_gaps(&corpus, cfg.fit_decay.max_hours);
    let fit = fit_power_law(&hist)?;
    let mut out = OutDir::create(cfg, "fit-decay")?;
    out.write("gap_histogram.csv", &hist.to_csv())?;
    out.write_json("decay_fit.json", &fit)?;
    println!(
        "slope {:.4}  intercept {:.4}  R^2 {:.4}  implied decay {:.4}  ({} bins, {} relistens)",
        fit.slope,
        fit.intercept,
        fit.r_squared,
        fit.implied_decay,
        fit.num_bins,
        hist.total()
    );
    out.finish()
}

pub fn fit_weights(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = sessionizer::sessionize(load(cfg, true)?, cfg.session_gap_minutes);
    let fit = fit_core_weights(&corpus, &cfg.weight_fit())?;
    let mut out = OutDir::create(cfg, "fit-weights")?;
    out.write_json("weights.json", &fit)?;
    print!("b {:.6}  s {:.6}  v {:.6}", fit.b, fit.s, fit.v);
    if let Some(c) = fit.intercept {
        print!("  intercept {c:.6}");
    }
    println!("  ({} users, {} rows)", fit.num_users, fit.num_rows);
    out.finish()
}

pub fn sessionize(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = sessionizer::sessionize(load(cfg, false)?, cfg.session_gap_minutes);
    let stats = session_stats(&corpus);
    let mut out = OutDir::create(cfg, "sessionize")?;
    out.write_with("sessions.tsv", |w| write_sessions(&corpus, w))?;
    out.write_json("session_stats.json", &stats)?;
    println!(
        "{} sessions, {:.2} events per session",
        stats.total_sessions, stats.mean_events_per_session
    );
    out.finish()
}

pub fn sample(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load(cfg, false)?;
    let sampled = stratified_sample(&corpus, &cfg.sampling())?;
    let mut out = OutDir::create(cfg, "sample")?;
    out.write_with("events.tsv", |w| write_events(&sampled, w))?;
    let users: String = sampled.users().iter().map(|u| format!("{}\n", u.user_id)).collect();
    out.write("users.txt", &users)?;
    println!("sampled {} of {} users", sampled.users().len(), corpus.users().len());
    out.finish()
}

pub fn synth(cfg: &mut RunConfig) -> Result<(), CliError> {
    cfg.synth.seed = cfg.seed;
    let corpus = generate(&cfg.synth)?;
    let mut out = OutDir::create(cfg, "synth")?;
    out.write_with("events.tsv", |w| write_events(&corpus, w))?;
    out.write_with("meta.tsv", |w| write_meta(&corpus, w))?;
    println!(
        "generated {} users, {} events",
        corpus.users().len(),
        corpus.num_events()
    );
    out.finish()
}
