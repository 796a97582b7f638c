use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::msroi::{MapMode, RankWeighting};
use crate::semantic::QualityLadder;

/// Experiment settings, read from `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub q_low: u8,
    pub q_high: u8,
    pub levels: usize,
    pub map_mode: MapMode,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
    /// Quality of the standard JPEG whose size the semantic output matches.
    pub baseline_quality: u8,
    /// Allowed relative size mismatch.
    pub tolerance: f64,
    /// Pixels above this saliency count toward PSNR-S.
    pub salient_cutoff: f64,
    /// Long-side lengths for the size sweep.
    pub sweep_sizes: Vec<usize>,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ladder = QualityLadder::default();
        RunConfig {
            q_low: ladder.low(),
            q_high: ladder.high(),
            levels: ladder.levels(),
            map_mode: MapMode::default(),
            seed: 0,
            dataset: None,
            output: PathBuf::from("out"),
            baseline_quality: 50,
            tolerance: 0.01,
            salient_cutoff: crate::metrics::DEFAULT_SALIENCY_CUTOFF,
            sweep_sizes: vec![96, 176, 256, 384],
            parallel: true,
        }
    }
}

const KEYS: [&str; 14] = [
    "q_low",
    "q_high",
    "levels",
    "map_mode",
    "top_k",
    "rank_weighting",
    "threshold",
    "seed",
    "dataset",
    "output",
    "baseline_quality",
    "tolerance",
    "salient_cutoff",
    "sweep_sizes",
];
const PARALLEL: &str = "parallel";

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key} must be true or false, got {value:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(HarnessError::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            seen.push(key);
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` setting; CLI overrides go through here too.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "q_low" => self.q_low = parse(key, value)?,
            "q_high" => self.q_high = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "map_mode" => {
                self.map_mode = match (value, self.map_mode) {
                    ("topk", MapMode::TopK { .. }) | ("threshold", MapMode::Threshold(_)) => self.map_mode,
                    ("topk", MapMode::Threshold(_)) => MapMode::default(),
                    ("threshold", MapMode::TopK { .. }) => MapMode::Threshold(0.0),
                    _ => return Err(HarnessError::Config(format!("map_mode must be topk or threshold, got {value:?}"))),
                }
            }
            "top_k" | "rank_weighting" => {
                let MapMode::TopK { k, weighting } = &mut self.map_mode else {
                    return Err(HarnessError::Config(format!("{key} needs map_mode = topk")));
                };
                if key == "top_k" {
                    *k = parse(key, value)?;
                } else {
                    *weighting = match value {
                        "linear" => RankWeighting::Linear,
                        "uniform" => RankWeighting::Uniform,
                        _ => return Err(HarnessError::Config(format!("rank_weighting must be linear or uniform, got {value:?}"))),
                    };
                }
            }
            "threshold" => {
                let MapMode::Threshold(t) = &mut self.map_mode else {
                    return Err(HarnessError::Config("threshold needs map_mode = threshold".into()));
                };
                *t = parse(key, value)?;
            }
            "seed" => self.seed = parse(key, value)?,
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "output" => self.output = PathBuf::from(value),
            "baseline_quality" => self.baseline_quality = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "salient_cutoff" => self.salient_cutoff = parse(key, value)?,
            "sweep_sizes" => {
                self.sweep_sizes = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            PARALLEL => self.parallel = parse_bool(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn ladder(&self) -> Result<QualityLadder, HarnessError> {
        QualityLadder::new(self.q_low, self.q_high, self.levels).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.ladder()?;
        if !(1..=100).contains(&self.baseline_quality) {
            return bad(format!("baseline_quality {} outside 1..=100", self.baseline_quality));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return bad(format!("tolerance {} must be a non-negative number", self.tolerance));
        }
        if !self.salient_cutoff.is_finite() {
            return bad("salient_cutoff must be finite".into());
        }
        if let MapMode::TopK { k: 0, .. } = self.map_mode {
            return bad("top_k must be at least 1".into());
        }
        if self.sweep_sizes.is_empty() || self.sweep_sizes.contains(&0) {
            return bad("sweep_sizes must be a non-empty list of positive lengths".into());
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
        line(KEYS[0], self.q_low.to_string());
        line(KEYS[1], self.q_high.to_string());
        line(KEYS[2], self.levels.to_string());
        match self.map_mode {
            MapMode::TopK { k, weighting } => {
                line(KEYS[3], "topk".into());
                line(KEYS[4], k.to_string());
                let w = match weighting {
                    RankWeighting::Linear => "linear",
                    RankWeighting::Uniform => "uniform",
                };
                line(KEYS[5], w.into());
            }
            MapMode::Threshold(t) => {
                line(KEYS[3], "threshold".into());
                line(KEYS[6], t.to_string());
            }
        }
        line(KEYS[7], self.seed.to_string());
        line(KEYS[8], self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        line(KEYS[9], self.output.display().to_string());
        line(KEYS[10], self.baseline_quality.to_string());
        line(KEYS[11], self.tolerance.to_string());
        line(KEYS[12], self.salient_cutoff.to_string());
        let sizes: Vec<String> = self.sweep_sizes.iter().map(usize::to_string).collect();
        line(KEYS[13], sizes.join(","));
        line(PARALLEL, self.parallel.to_string());
        out
    }
}
