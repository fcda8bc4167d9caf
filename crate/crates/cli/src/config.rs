//! Run configuration: a TOML file, overridden field by field by command-line flags.

use std::path::{Path, PathBuf};

use relisten_core::activation::{RewardMode, DEFAULT_ALPHA, DEFAULT_DECAY, WEEK_FIT_DECAY, YEAR_FIT_DECAY};
use relisten_core::calibration::{WeightFit, WeightFitConfig};
use relisten_core::corpus::{EventFormat, SamplingSpec};
use relisten_core::evaluator::{default_roster, Algorithm, Component, DEFAULT_WINDOW_DAYS};
use relisten_core::sessionizer::DEFAULT_GAP_MINUTES;
use relisten_core::synthgen::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub window_days: u32,
    pub session_gap_minutes: u32,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Smallest time gap the base-level component distinguishes.
    pub min_gap_seconds: f64,
    pub paths: Paths,
    pub input: EventFormat,
    /// Evaluation roster; absent means the fifteen standard algorithms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Vec<AlgorithmSpec>>,
    pub fit_decay: FitDecayConfig,
    pub fit_weights: WeightFitSection,
    pub sample: SampleSection,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window_days: DEFAULT_WINDOW_DAYS,
            session_gap_minutes: DEFAULT_GAP_MINUTES,
            threads: 0,
            min_gap_seconds: 1.0,
            paths: Paths::default(),
            input: EventFormat::default(),
            algorithm: None,
            fit_decay: FitDecayConfig::default(),
            fit_weights: WeightFitSection::default(),
            sample: SampleSection::default(),
            synth: SynthSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    /// Fitted weights added to the roster as a weighted combination.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            events: None,
            meta: None,
            weights: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitDecayConfig {
    /// Drop relistening gaps longer than this many hours.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_hours: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightFitSection {
    pub decay: f64,
    pub alpha: f64,
    pub user_fraction: f64,
    pub intercept: bool,
    pub nonneg: bool,
}

impl Default for WeightFitSection {
    fn default() -> Self {
        let d = WeightFitConfig::default();
        Self {
            decay: d.base_level_decay,
            alpha: d.alpha,
            user_fraction: d.user_fraction,
            intercept: d.with_intercept,
            nonneg: d.nonneg,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub min_events: usize,
    pub max_events: usize,
    pub num_bins: usize,
    pub users_per_stratum: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        let d = SamplingSpec::default();
        Self {
            min_events: d.min_events,
            max_events: d.max_events,
            num_bins: d.num_bins,
            users_per_stratum: d.users_per_stratum,
        }
    }
}

/// One roster entry as written in the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardMode>,
    /// Component weights of an `act_r_*` combination, in the order of its letters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl AlgorithmSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_owned(),
            ..Default::default()
        }
    }
}

/// Names accepted in `name = ...` and `--algorithms`.
pub const ALGORITHM_NAMES: &[&str] = &[
    "trans_prob",
    "most_recent",
    "noise",
    "spreading",
    "partial_matching",
    "base_level",
    "base_level_week",
    "base_level_year",
    "valuation",
    "valuation_mp",
    "valuation_ratio",
    "valuation_discrete",
    "act_r_bv",
    "act_r_sv",
    "act_r_bs",
    "act_r_bsv",
    "default_roster",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.window_days == 0 {
            return bad("window_days must be at least 1".into());
        }
        if self.session_gap_minutes == 0 {
            return bad("session_gap_minutes must be at least 1".into());
        }
        if !(self.min_gap_seconds.is_finite() && self.min_gap_seconds > 0.0) {
            return bad(format!(
                "min_gap_seconds must be positive, got {}",
                self.min_gap_seconds
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    pub fn min_gap_hours(&self) -> f64 {
        self.min_gap_seconds / 3600.0
    }

    pub fn events_path(&self) -> Result<&Path, CliError> {
        self.paths
            .events
            .as_deref()
            .ok_or_else(|| CliError::Usage("no events file given (--events or paths.events)".into()))
    }

    pub fn weight_fit(&self) -> WeightFitConfig {
        let w = &self.fit_weights;
        WeightFitConfig {
            base_level_decay: w.decay,
            alpha: w.alpha,
            user_fraction: w.user_fraction,
            with_intercept: w.intercept,
            nonneg: w.nonneg,
            seed: self.seed,
            window_days: self.window_days,
            min_gap_hours: self.min_gap_hours(),
        }
    }

    pub fn sampling(&self) -> SamplingSpec {
        let s = &self.sample;
        SamplingSpec {
            min_events: s.min_events,
            max_events: s.max_events,
            num_bins: s.num_bins,
            users_per_stratum: s.users_per_stratum,
            seed: self.seed,
        }
    }

    /// The evaluation roster, plus the fitted combination when a weights file is set.
    pub fn roster(&self) -> Result<Vec<Algorithm>, CliError> {
        let mut out = match &self.algorithm {
            None => default_roster(),
            Some(specs) => {
                let mut v = Vec::new();
                for s in specs {
                    v.extend(resolve(s)?);
                }
                v
            }
        };
        if let Some(path) = &self.paths.weights {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let fit: WeightFit =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            out.push(fit.algorithm("ACT-R(fitted)"));
        }
        if out.is_empty() {
            return Err(CliError::Usage("the algorithm roster is empty".into()));
        }
        for (i, a) in out.iter().enumerate() {
            if out[..i].iter().any(|b| b.label == a.label) {
                return Err(CliError::Usage(format!("duplicate algorithm label {:?}", a.label)));
            }
        }
        Ok(out)
    }
}

fn base_level_label(decay: f64) -> String {
    if decay == DEFAULT_DECAY {
        "Base-level(default)".into()
    } else if decay == WEEK_FIT_DECAY {
        "Base-level(week)".into()
    } else if decay == YEAR_FIT_DECAY {
        "Base-level(year)".into()
    } else {
        format!("Base-level(d={decay})")
    }
}

fn valuation_label(reward: RewardMode) -> &'static str {
    match reward {
        RewardMode::MostPopular => "Valuation(MP)",
        RewardMode::Ratio => "Valuation(ratio)",
        RewardMode::Discrete => "Valuation(discrete)",
    }
}

/// Turns one roster entry into algorithms.
pub fn resolve(spec: &AlgorithmSpec) -> Result<Vec<Algorithm>, CliError> {
    let name = spec.name.as_str();
    let reject = |field: &str, present: bool| -> Result<(), CliError> {
        if present {
            Err(CliError::Usage(format!("{field} does not apply to algorithm {name:?}")))
        } else {
            Ok(())
        }
    };
    let base_decay = match name {
        "base_level_week" => WEEK_FIT_DECAY,
        "base_level_year" => YEAR_FIT_DECAY,
        _ => DEFAULT_DECAY,
    };
    let preset_reward = match name {
        "valuation_ratio" => Some(RewardMode::Ratio),
        "valuation_discrete" => Some(RewardMode::Discrete),
        "valuation_mp" => Some(RewardMode::MostPopular),
        _ => None,
    };
    let decay = spec.decay.unwrap_or(base_decay);
    let alpha = spec.alpha.unwrap_or(DEFAULT_ALPHA);
    let reward = spec.reward.or(preset_reward).unwrap_or(RewardMode::MostPopular);
    let b = Component::BaseLevel { decay };
    let v = Component::Valuation { reward, alpha };

    let uses_decay = name.starts_with("base_level") || matches!(name, "act_r_bv" | "act_r_bs" | "act_r_bsv");
    let uses_valuation = name.starts_with("valuation") || matches!(name, "act_r_bv" | "act_r_sv" | "act_r_bsv");
    reject("decay", spec.decay.is_some() && !uses_decay)?;
    reject("alpha", spec.alpha.is_some() && !uses_valuation)?;
    reject("reward", spec.reward.is_some() && !uses_valuation)?;
    reject("weights", spec.weights.is_some() && !name.starts_with("act_r_"))?;
    if preset_reward.is_some() && spec.reward.is_some_and(|r| Some(r) != preset_reward) {
        return Err(CliError::Usage(format!("{name} fixes its reward mode")));
    }

    let single = |label: String, c: Component| Algorithm::component(spec.label.clone().unwrap_or(label), c);
    let alg = match name {
        "trans_prob" | "most_recent" | "default_roster" => {
            reject("label", spec.label.is_some() && name == "default_roster")?;
            let mut a = match name {
                "trans_prob" => Algorithm::trans_prob(),
                "most_recent" => Algorithm::most_recent(),
                _ => return Ok(default_roster()),
            };
            if let Some(l) = &spec.label {
                a.label = l.clone();
            }
            a
        }
        "noise" => single("Noise".into(), Component::Noise),
        "spreading" => single("Spreading".into(), Component::Spreading),
        "partial_matching" => single("Partial Matching".into(), Component::PartialMatching),
        "base_level" | "base_level_week" | "base_level_year" => single(base_level_label(decay), b),
        "valuation" | "valuation_mp" | "valuation_ratio" | "valuation_discrete" => {
            single(valuation_label(reward).into(), v)
        }
        "act_r_bv" | "act_r_sv" | "act_r_bs" | "act_r_bsv" => {
            let letters = &name["act_r_".len()..];
            let parts: Vec<Component> = letters
                .chars()
                .map(|c| match c {
                    'b' => b.clone(),
                    's' => Component::Spreading,
                    _ => v.clone(),
                })
                .collect();
            let weights = spec.weights.clone().unwrap_or_else(|| vec![1.0; parts.len()]);
            if weights.len() != parts.len() {
                return Err(CliError::Usage(format!(
                    "{name} takes {} weights, got {}",
                    parts.len(),
                    weights.len()
                )));
            }
            let default_label = format!(
                "ACT-R({})",
                letters
                    .to_uppercase()
                    .chars()
                    .map(String::from)
                    .collect::<Vec<_>>()
                    .join(",")
            );
            Algorithm::weighted(
                spec.label.clone().unwrap_or(default_label),
                parts.into_iter().zip(weights).collect(),
            )
        }
        _ => {
            return Err(CliError::Usage(format!(
                "unknown algorithm {name:?}; known: {}",
                ALGORITHM_NAMES.join(", ")
            )))
        }
    };
    alg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(vec![alg])
}
