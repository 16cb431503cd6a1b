//! Line-oriented study configuration: `key = value`, `#` comments, lists as
//! comma-separated values.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Method;
use crate::model::{check_alpha, ThetaBox};
use crate::segment::GridSpec;
use crate::simulate::{InitialPath, LawMode};

/// Which coefficients a study uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    /// The built-in scalar mean-field example.
    Example,
    /// A model passed to the `*_with` study functions.
    CustomHook,
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::Example => "example",
            ModelChoice::CustomHook => "custom-hook",
        })
    }
}

/// A validated study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelChoice,
    pub r0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Step count for single-grid commands.
    pub n: usize,
    pub theta0: Vec<f64>,
    pub theta_box: ThetaBox,
    pub epsilons: Vec<f64>,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub n_particles: usize,
    pub alpha: f64,
    pub law_mode: LawMode,
    pub seed: u64,
    pub initial_path: InitialPath,
    pub estimator: Method,
    /// Rate-study ladder: `delta_j = r0 2^-j`.
    pub rate_levels: Vec<u32>,
    /// Rate-study reference level `J`.
    pub rate_reference: u32,
    /// Fill `runtime_ms` in records (makes output run-dependent).
    pub timing: bool,
}

const KEYS: &[&str] = &[
    "model",
    "r0",
    "T",
    "n",
    "theta0",
    "theta_box",
    "epsilons",
    "n_list",
    "replications",
    "n_particles",
    "alpha",
    "law_mode",
    "seed",
    "initial_path",
    "estimator",
    "rate_levels",
    "rate_reference",
    "timing",
];

const REQUIRED: &[&str] = &["r0", "T", "n", "theta0", "theta_box"];

struct Entries {
    map: HashMap<String, (usize, String)>,
}

impl Entries {
    fn get<T>(&self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, raw)) => parse(raw).map(Some).map_err(|reason| config_err(*line, key, reason)),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |e| e.0)
    }
}

fn config_err(line: usize, key: &str, reason: impl Into<String>) -> Error {
    Error::Config { line, key: key.to_string(), reason: reason.into() }
}

fn number<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim().parse::<T>().map_err(|_| format!("cannot parse `{}`", s.trim()))
}

fn list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    let items: Vec<T> = s.split(',').map(number).collect::<std::result::Result<_, _>>()?;
    if items.is_empty() {
        return Err("list must be non-empty".into());
    }
    Ok(items)
}

fn parse_box(s: &str) -> std::result::Result<ThetaBox, String> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for axis in s.split(',') {
        let (lo, hi) = axis.split_once(':').ok_or_else(|| format!("axis `{}` is not `lo:hi`", axis.trim()))?;
        let (lo, hi): (f64, f64) = (number(lo)?, number(hi)?);
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(format!("axis `{}` needs finite lo <= hi", axis.trim()));
        }
        lower.push(lo);
        upper.push(hi);
    }
    Ok(ThetaBox { lower, upper })
}

fn parse_initial_path(s: &str) -> std::result::Result<InitialPath, String> {
    let s = s.trim();
    let arg = |prefix: &str| -> Option<std::result::Result<f64, String>> {
        s.strip_prefix(prefix).and_then(|r| r.strip_suffix(')')).map(number)
    };
    if let Some(v) = arg("linear-ramp(") {
        Ok(InitialPath::LinearRamp(v?))
    } else if let Some(v) = arg("constant(") {
        Ok(InitialPath::Constant(v?))
    } else {
        Err(format!("unknown initial path `{s}`; expected linear-ramp(slope) or constant(level)"))
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

/// Parses and validates a configuration document, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) =
            content.split_once('=').ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(line, key, "unknown key"));
        }
        if map.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
            return Err(config_err(line, key, "duplicate key"));
        }
    }
    let e = Entries { map };
    for key in REQUIRED {
        if !e.map.contains_key(*key) {
            return Err(config_err(0, key, "missing required key"));
        }
    }

    let model = e
        .get("model", |s| match s.trim() {
            "example" => Ok(ModelChoice::Example),
            "custom-hook" => Ok(ModelChoice::CustomHook),
            other => Err(format!("unknown model `{other}`")),
        })?
        .unwrap_or(ModelChoice::Example);
    let r0: f64 = e.get("r0", number)?.expect("required");
    let horizon: f64 = e.get("T", number)?.expect("required");
    let n: usize = e.get("n", number)?.expect("required");
    let theta0: Vec<f64> = e.get("theta0", list)?.expect("required");
    let theta_box = e.get("theta_box", parse_box)?.expect("required");
    let cfg = ExperimentConfig {
        model,
        r0,
        horizon,
        n,
        theta_box,
        epsilons: e.get("epsilons", list)?.unwrap_or_else(|| vec![0.1, 0.05, 0.01]),
        n_list: e.get("n_list", list)?.unwrap_or_else(|| vec![n]),
        replications: e.get("replications", number)?.unwrap_or(200),
        n_particles: e.get("n_particles", number)?.unwrap_or(64),
        alpha: e.get("alpha", number)?.unwrap_or(0.5),
        law_mode: e.get("law_mode", |s| s.trim().parse())?.unwrap_or(LawMode::ParticleEnsemble),
        seed: e.get("seed", number)?.unwrap_or(0),
        initial_path: e.get("initial_path", parse_initial_path)?.unwrap_or(InitialPath::LinearRamp(1.0)),
        estimator: e.get("estimator", |s| s.trim().parse())?.unwrap_or(Method::NelderMead),
        rate_levels: e.get("rate_levels", list)?.unwrap_or_else(|| vec![4, 5, 6, 7, 8]),
        rate_reference: e.get("rate_reference", number)?.unwrap_or(12),
        timing: e.get("timing", parse_bool)?.unwrap_or(false),
        theta0,
    };
    cfg.validate_with(|key| e.line(key))?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Checks the invariants; errors carry line 0.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(|_| 0)
    }

    fn validate_with(&self, line: impl Fn(&str) -> usize) -> Result<()> {
        let err = |key: &str, reason: String| config_err(line(key), key, reason);
        if !(self.r0 > 0.0 && self.r0.is_finite()) {
            return Err(err("r0", format!("{} must be positive", self.r0)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(err("T", format!("{} must be positive", self.horizon)));
        }
        if let Err(e) = GridSpec::new(self.horizon, self.n, self.r0) {
            return Err(err("n", e.to_string()));
        }
        for &n in &self.n_list {
            if let Err(e) = GridSpec::new(self.horizon, n, self.r0) {
                return Err(err("n_list", e.to_string()));
            }
        }
        let b = &self.theta_box;
        if b.lower.is_empty() || b.lower.len() != b.upper.len() || b.lower.iter().zip(&b.upper).any(|(l, u)| !(l <= u)) {
            return Err(err("theta_box", "need lo <= hi on every axis".into()));
        }
        if self.theta0.len() != b.dim() {
            return Err(err("theta0", format!("{} entries but the box has {} axes", self.theta0.len(), b.dim())));
        }
        if !b.contains_closed(&self.theta0) {
            return Err(err("theta0", format!("{:?} lies outside theta_box", self.theta0)));
        }
        if self.model == ModelChoice::Example && self.theta0.len() != 2 {
            return Err(err("theta0", "the example model has two parameters".into()));
        }
        if self.epsilons.is_empty() || self.n_list.is_empty() || self.rate_levels.is_empty() {
            return Err(err("epsilons", "lists must be non-empty".into()));
        }
        if let Some(eps) = self.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(err("epsilons", format!("{eps} is outside (0, 1)")));
        }
        if self.replications == 0 {
            return Err(err("replications", "must be at least 1".into()));
        }
        if self.n_particles == 0 {
            return Err(err("n_particles", "must be at least 1".into()));
        }
        if let Err(Error::InvalidParameter { reason, .. }) = check_alpha(self.alpha) {
            return Err(err("alpha", reason));
        }
        if self.rate_levels.iter().any(|&j| j >= self.rate_reference) {
            return Err(err("rate_levels", "every level must be below rate_reference".into()));
        }
        Ok(())
    }

    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        GridSpec::new(self.horizon, n, self.r0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "r0 = 0.5\nT = 1\nn = 400\ntheta0 = 0.5, 0.3\ntheta_box = 0:1, 0:1\n";

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.n_particles, 64);
        assert_eq!(cfg.replications, 200);
        assert_eq!(cfg.law_mode, LawMode::ParticleEnsemble);
        assert_eq!(cfg.initial_path, InitialPath::LinearRamp(1.0));
        assert_eq!(cfg.n_list, vec![400]);
        assert_eq!(cfg.theta_box.upper, vec![1.0, 1.0]);
    }

    #[test]
    fn comments_lists_and_overrides() {
        let text = format!(
            "# study\n{MINIMAL}epsilons = 0.1, 0.01  # two cells\nlaw_mode = self-dirac\ninitial_path = constant(0.25)\nestimator = grid\nseed = 99\n"
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.epsilons, vec![0.1, 0.01]);
        assert_eq!(cfg.law_mode, LawMode::SelfDirac);
        assert_eq!(cfg.initial_path, InitialPath::Constant(0.25));
        assert_eq!(cfg.estimator, Method::Grid);
        assert_eq!(cfg.seed, 99);
    }

    fn err_of(text: &str) -> (usize, String, String) {
        match parse_config(text) {
            Err(Error::Config { line, key, reason }) => (line, key, reason),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn theta0_outside_box_is_rejected() {
        let (line, key, _) = err_of(&MINIMAL.replace("0.5, 0.3", "1.5, 0.3"));
        assert_eq!((line, key.as_str()), (4, "theta0"));
    }

    #[test]
    fn alpha_range_is_reported() {
        let (line, key, reason) = err_of(&format!("{MINIMAL}alpha = 0.7\n"));
        assert_eq!((line, key.as_str()), (6, "alpha"));
        assert!(reason.contains("(0, 1/2]"), "{reason}");
    }

    #[test]
    fn unknown_key_and_grid_mismatch() {
        let (line, key, _) = err_of(&format!("{MINIMAL}colour = blue\n"));
        assert_eq!((line, key.as_str()), (6, "colour"));
        let (line, key, _) = err_of(&MINIMAL.replace("n = 400", "n = 333"));
        assert_eq!((line, key.as_str()), (3, "n"));
        let (_, key, _) = err_of("r0 = 0.5\nT = 1\n");
        assert_eq!(key, "n");
    }

    #[test]
    fn point_box_is_accepted() {
        let cfg = parse_config(&MINIMAL.replace("0:1, 0:1", "0.5:0.5, 0.3:0.3")).unwrap();
        assert_eq!(cfg.theta_box.width(0), 0.0);
    }
}
