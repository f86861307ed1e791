//! INI-style scenario files: `[section]` headers, `key = value` lines,
//! `#` or `;` comments.

use std::collections::BTreeMap;
use std::path::Path;

use immunovec::pde::{DEFAULT_CFL, DEFAULT_HISTORY_E, DEFAULT_MARGIN, DEFAULT_NY, DEFAULT_NZ};
use immunovec::reproduction::{BetaHv, EntryDistribution, EpiParams};
use immunovec::uhr::THRESHOLD_SEED_E;
use immunovec::within_host::{WithinHostParams, DEFAULT_ENTRY_FRACTION};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key {key}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key}")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key {0}")]
    MissingKey(String),
    #[error("line {line}: invalid value for {key}: {msg}")]
    InvalidValue {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

const KEYS: &[(&str, &[&str])] = &[
    ("within_host", &["a1", "a2", "a3", "a4", "a5", "z0"]),
    (
        "epi",
        &[
            "b",
            "beta_vh",
            "beta_hv",
            "m",
            "mu_v",
            "tau_h",
            "tau_v",
            "beta_hv_profile",
            "beta_hv_z_half",
            "beta_hv_slope",
        ],
    ),
    ("entry", &["kind", "alpha", "variance"]),
    ("uhr", &["tau1", "tau2", "dt", "t_end"]),
    ("sim", &["t_end", "cfl", "nz", "ny", "margin", "snapshots"]),
    (
        "init",
        &[
            "e0",
            "ev0",
            "iv0",
            "history",
            "history_e",
            "i_total",
            "r_total",
        ],
    ),
    (
        "sweep",
        &[
            "scale_min",
            "scale_max",
            "points",
            "alphas",
            "threshold_n",
            "r0_min",
            "r0_max",
            "threshold_t_end",
            "entry_fractions",
            "sample_n",
            "tau1_min",
            "tau1_max",
        ],
    ),
    ("output", &["dir", "record_every"]),
];

/// Keys that must appear when a file is supplied.
const REQUIRED: &[(&str, &[&str])] = &[
    ("within_host", &["a1", "a2", "a3", "a4", "a5", "z0"]),
    (
        "epi",
        &["b", "beta_vh", "beta_hv", "m", "mu_v", "tau_h", "tau_v"],
    ),
];

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split(['#', ';']).next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: format!("unterminated section header `{body}`"),
                })?;
                let name = name.trim().to_string();
                if !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError::UnknownSection { line, name });
                }
                section = Some(name);
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected `key = value`, found `{body}`"),
            })?;
            let sec = section.clone().ok_or_else(|| ConfigError::Syntax {
                line,
                msg: "key outside any section".into(),
            })?;
            let key = key.trim().to_string();
            let allowed = KEYS
                .iter()
                .find(|(s, _)| *s == sec)
                .map(|(_, k)| *k)
                .unwrap_or(&[]);
            if !allowed.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: format!("{sec}.{key}"),
                });
            }
            let slot = (sec.clone(), key.clone());
            if entries.contains_key(&slot) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: format!("{sec}.{key}"),
                });
            }
            entries.insert(slot, (value.trim().to_string(), line));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::parse(&text)?;
        for (sec, keys) in REQUIRED {
            for key in *keys {
                if !cfg
                    .entries
                    .contains_key(&(sec.to_string(), key.to_string()))
                {
                    return Err(ConfigError::MissingKey(format!("{sec}.{key}")));
                }
            }
        }
        Ok(cfg)
    }

    fn raw(&self, sec: &str, key: &str) -> Option<&(String, usize)> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn f64_or(&self, sec: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<f64>().map_err(|e| ConfigError::InvalidValue {
                line: *line,
                key: format!("{sec}.{key}"),
                msg: e.to_string(),
            }),
        }
    }

    fn opt_f64(&self, sec: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.raw(sec, key)
            .map(|_| self.f64_or(sec, key, 0.0))
            .transpose()
    }

    fn usize_or(&self, sec: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<usize>().map_err(|e| ConfigError::InvalidValue {
                line: *line,
                key: format!("{sec}.{key}"),
                msg: e.to_string(),
            }),
        }
    }

    fn str_or<'a>(&'a self, sec: &str, key: &str, default: &'a str) -> &'a str {
        self.raw(sec, key)
            .map(|(v, _)| v.as_str())
            .unwrap_or(default)
    }

    fn list_or(&self, sec: &str, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.raw(sec, key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|e| ConfigError::InvalidValue {
                        line: *line,
                        key: format!("{sec}.{key}"),
                        msg: format!("`{s}`: {e}"),
                    })
                })
                .collect(),
        }
    }

    fn line_of(&self, sec: &str, key: &str) -> usize {
        self.raw(sec, key).map(|(_, l)| *l).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Gaussian,
    Uniform,
    Dirac,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UhrHistory {
    Constant(f64),
    Totals { i_total: f64, r_total: f64 },
}

/// Fully resolved scenario with every default filled in.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub whp: WithinHostParams,
    pub epi: EpiParams,
    pub entry_kind: EntryKind,
    pub alpha: f64,
    pub variance: f64,
    pub uhr_tau1: Option<f64>,
    pub uhr_tau2: Option<f64>,
    pub uhr_dt: f64,
    pub uhr_t_end: f64,
    pub full_t_end: f64,
    pub cfl: f64,
    pub nz: usize,
    pub ny: usize,
    pub margin: f64,
    pub snapshots: Vec<f64>,
    /// Constant `E` on the full model's history window.
    pub e0: f64,
    pub ev0: f64,
    pub iv0: f64,
    pub history: UhrHistory,
    pub scale_min: f64,
    pub scale_max: f64,
    pub points: usize,
    pub alphas: Vec<f64>,
    pub threshold_n: usize,
    pub r0_min: f64,
    pub r0_max: f64,
    pub threshold_t_end: f64,
    pub entry_fractions: Vec<f64>,
    pub sample_n: usize,
    pub tau1_min: f64,
    pub tau1_max: f64,
    pub out_dir: Option<String>,
    pub record_every: f64,
}

fn default_alphas() -> Vec<f64> {
    (1..=19)
        .map(|k| (k as f64 * 0.05 * 100.0).round() / 100.0)
        .collect()
}

impl Scenario {
    pub fn resolve(raw: &RawConfig) -> Result<Self, ConfigError> {
        let r = WithinHostParams::reference();
        let whp = WithinHostParams {
            a1: raw.f64_or("within_host", "a1", r.a1)?,
            a2: raw.f64_or("within_host", "a2", r.a2)?,
            a3: raw.f64_or("within_host", "a3", r.a3)?,
            a4: raw.f64_or("within_host", "a4", r.a4)?,
            a5: raw.f64_or("within_host", "a5", r.a5)?,
            z0: raw.f64_or("within_host", "z0", r.z0)?,
        };
        let base = EpiParams::baseline();
        let beta_default = base.beta_hv.as_constant().unwrap_or(0.2);
        let beta_level = raw.f64_or("epi", "beta_hv", beta_default)?;
        let beta_hv = match raw.str_or("epi", "beta_hv_profile", "constant") {
            "constant" => BetaHv::Constant(beta_level),
            "logistic" => BetaHv::Logistic {
                max: beta_level,
                z_half: raw.f64_or("epi", "beta_hv_z_half", 2.0)?,
                slope: raw.f64_or("epi", "beta_hv_slope", 1.0)?,
            },
            other => {
                return Err(ConfigError::InvalidValue {
                    line: raw.line_of("epi", "beta_hv_profile"),
                    key: "epi.beta_hv_profile".into(),
                    msg: format!("`{other}` is not constant or logistic"),
                })
            }
        };
        let epi = EpiParams {
            b: raw.f64_or("epi", "b", base.b)?,
            beta_vh: raw.f64_or("epi", "beta_vh", base.beta_vh)?,
            beta_hv,
            m: raw.f64_or("epi", "m", base.m)?,
            mu_v: raw.f64_or("epi", "mu_v", base.mu_v)?,
            tau_h: raw.f64_or("epi", "tau_h", base.tau_h)?,
            tau_v: raw.f64_or("epi", "tau_v", base.tau_v)?,
        };
        let entry_kind = match raw.str_or("entry", "kind", "gaussian") {
            "gaussian" => EntryKind::Gaussian,
            "uniform" => EntryKind::Uniform,
            "dirac" => EntryKind::Dirac,
            other => {
                return Err(ConfigError::InvalidValue {
                    line: raw.line_of("entry", "kind"),
                    key: "entry.kind".into(),
                    msg: format!("`{other}` is not gaussian, uniform or dirac"),
                })
            }
        };
        let history = match raw.str_or("init", "history", "constant") {
            "constant" => {
                UhrHistory::Constant(raw.f64_or("init", "history_e", THRESHOLD_SEED_E)?)
            }
            "totals" => UhrHistory::Totals {
                i_total: raw.f64_or("init", "i_total", 0.0)?,
                r_total: raw.f64_or("init", "r_total", 0.0)?,
            },
            other => {
                return Err(ConfigError::InvalidValue {
                    line: raw.line_of("init", "history"),
                    key: "init.history".into(),
                    msg: format!("`{other}` is not constant or totals"),
                })
            }
        };
        let s = Self {
            whp,
            epi,
            entry_kind,
            alpha: raw.f64_or("entry", "alpha", DEFAULT_ENTRY_FRACTION)?,
            variance: raw.f64_or("entry", "variance", 0.2)?,
            uhr_tau1: raw.opt_f64("uhr", "tau1")?,
            uhr_tau2: raw.opt_f64("uhr", "tau2")?,
            uhr_dt: raw.f64_or("uhr", "dt", 0.01)?,
            uhr_t_end: raw.f64_or("uhr", "t_end", 5000.0)?,
            full_t_end: raw.f64_or("sim", "t_end", 400.0)?,
            cfl: raw.f64_or("sim", "cfl", DEFAULT_CFL)?,
            nz: raw.usize_or("sim", "nz", DEFAULT_NZ)?,
            ny: raw.usize_or("sim", "ny", DEFAULT_NY)?,
            margin: raw.f64_or("sim", "margin", DEFAULT_MARGIN)?,
            snapshots: raw.list_or("sim", "snapshots", &[])?,
            e0: raw.f64_or("init", "e0", DEFAULT_HISTORY_E)?,
            ev0: raw.f64_or("init", "ev0", 0.0)?,
            iv0: raw.f64_or("init", "iv0", 0.0)?,
            history,
            scale_min: raw.f64_or("sweep", "scale_min", 0.5)?,
            scale_max: raw.f64_or("sweep", "scale_max", 1.5)?,
            points: raw.usize_or("sweep", "points", 41)?,
            alphas: raw.list_or("sweep", "alphas", &default_alphas())?,
            threshold_n: raw.usize_or("sweep", "threshold_n", 100)?,
            r0_min: raw.f64_or("sweep", "r0_min", 0.3)?,
            r0_max: raw.f64_or("sweep", "r0_max", 3.0)?,
            threshold_t_end: raw.f64_or("sweep", "threshold_t_end", 1e4)?,
            entry_fractions: raw.list_or("sweep", "entry_fractions", &[0.0, 0.2, 0.4, 0.6, 0.8])?,
            sample_n: raw.usize_or("sweep", "sample_n", 100)?,
            tau1_min: raw.f64_or("sweep", "tau1_min", 5.0)?,
            tau1_max: raw.f64_or("sweep", "tau1_max", 9.0)?,
            out_dir: raw.raw("output", "dir").map(|(v, _)| v.clone()),
            record_every: raw.f64_or("output", "record_every", 1.0)?,
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.whp
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("within_host: {e}")))?;
        self.epi
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("epi: {e}")))?;
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return bad(format!("entry.alpha = {} outside [0, 1)", self.alpha));
        }
        if !(self.uhr_dt > 0.0) || !(self.uhr_t_end >= 0.0) || !(self.full_t_end >= 0.0) {
            return bad("time settings must be positive".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("sim.cfl = {} outside (0, 1]", self.cfl));
        }
        if !(self.scale_min > 0.0 && self.scale_max > self.scale_min) || self.points < 2 {
            return bad("sweep axis needs 0 < scale_min < scale_max and points >= 2".into());
        }
        if !(self.record_every > 0.0) {
            return bad("output.record_every must be positive".into());
        }
        Ok(())
    }

    pub fn y0(&self) -> f64 {
        self.whp.antibody_threshold()
    }

    pub fn entry(&self) -> Result<EntryDistribution, String> {
        let y0 = self.y0();
        let r = match self.entry_kind {
            EntryKind::Gaussian => EntryDistribution::gaussian(self.alpha * y0, self.variance, y0),
            EntryKind::Uniform => EntryDistribution::uniform(y0),
            EntryKind::Dirac => EntryDistribution::dirac(self.alpha * y0, y0),
        };
        r.map_err(|e| e.to_string())
    }

    /// Every resolved parameter, for the manifest.
    pub fn to_json(&self) -> serde_json::Value {
        let beta_hv = match self.epi.beta_hv {
            BetaHv::Constant(c) => serde_json::json!({ "profile": "constant", "value": c }),
            BetaHv::Logistic { max, z_half, slope } => {
                serde_json::json!({ "profile": "logistic", "max": max, "z_half": z_half, "slope": slope })
            }
        };
        let history = match self.history {
            UhrHistory::Constant(c) => serde_json::json!({ "kind": "constant", "e": c }),
            UhrHistory::Totals { i_total, r_total } => {
                serde_json::json!({ "kind": "totals", "i_total": i_total, "r_total": r_total })
            }
        };
        serde_json::json!({
            "within_host": {
                "a1": self.whp.a1, "a2": self.whp.a2, "a3": self.whp.a3,
                "a4": self.whp.a4, "a5": self.whp.a5, "z0": self.whp.z0,
            },
            "epi": {
                "b": self.epi.b, "beta_vh": self.epi.beta_vh, "beta_hv": beta_hv, "m": self.epi.m,
                "mu_v": self.epi.mu_v, "tau_h": self.epi.tau_h, "tau_v": self.epi.tau_v,
            },
            "entry": {
                "kind": format!("{:?}", self.entry_kind).to_lowercase(),
                "alpha": self.alpha, "variance": self.variance,
            },
            "uhr": { "tau1": self.uhr_tau1, "tau2": self.uhr_tau2, "dt": self.uhr_dt, "t_end": self.uhr_t_end },
            "sim": {
                "t_end": self.full_t_end, "cfl": self.cfl, "nz": self.nz, "ny": self.ny,
                "margin": self.margin, "snapshots": self.snapshots,
            },
            "init": { "e0": self.e0, "ev0": self.ev0, "iv0": self.iv0, "history": history },
            "sweep": {
                "scale_min": self.scale_min, "scale_max": self.scale_max, "points": self.points,
                "alphas": self.alphas, "threshold_n": self.threshold_n, "r0_min": self.r0_min,
                "r0_max": self.r0_max, "threshold_t_end": self.threshold_t_end,
                "entry_fractions": self.entry_fractions, "sample_n": self.sample_n,
                "tau1_min": self.tau1_min, "tau1_max": self.tau1_max,
            },
            "output": { "record_every": self.record_every },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "
[within_host]
a1 = 1
a2 = 0.44
a3 = 0.72
a4 = 1.93
a5 = 0.01
z0 = 1

[epi]
b = 0.3333333333333333
beta_vh = 0.25
beta_hv = 0.2   # constant
m = 6
mu_v = 0.05
tau_h = 7
tau_v = 10
";

    #[test]
    fn parses_sections_and_comments() {
        let raw = RawConfig::parse(&format!("{FULL}\n[sweep]\nalphas = 0.1, 0.2 ; two\n")).unwrap();
        let s = Scenario::resolve(&raw).unwrap();
        assert_eq!(s.whp, WithinHostParams::reference());
        assert_eq!(s.alphas, vec![0.1, 0.2]);
        assert_eq!(s.alpha, 0.5);
    }

    #[test]
    fn rejects_unknown_key_with_line() {
        let err = RawConfig::parse("[epi]\nb = 1\nbogus = 2\n").unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey { line: 3, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("epi.bogus"));
        assert!(matches!(
            RawConfig::parse("[nope]\n"),
            Err(ConfigError::UnknownSection { line: 1, .. })
        ));
        assert!(matches!(
            RawConfig::parse("b = 1\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            RawConfig::parse("[epi]\nb = 1\nb = 2\n"),
            Err(ConfigError::DuplicateKey { line: 3, .. })
        ));
    }

    #[test]
    fn missing_required_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ini");
        std::fs::write(&path, FULL.replace("b = 0.3333333333333333\n", "")).unwrap();
        let err = RawConfig::load(&path).unwrap_err();
        assert_eq!(err.to_string(), "missing required key epi.b");
    }

    #[test]
    fn bad_value_reports_line() {
        let raw = RawConfig::parse("[epi]\nm = six\n").unwrap();
        let err = Scenario::resolve(&raw).unwrap_err();
        assert!(
            matches!(err, ConfigError::InvalidValue { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn defaults_match_reference() {
        let s = Scenario::resolve(&RawConfig::default()).unwrap();
        assert_eq!(s.epi, EpiParams::baseline());
        assert_eq!((s.nz, s.ny), (200, 340));
        assert_eq!(s.alphas.len(), 19);
        assert_eq!(s.alphas[18], 0.95);
    }
}
