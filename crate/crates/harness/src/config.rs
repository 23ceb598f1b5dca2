//! Flat `key = value` run configuration.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use mgdfis_core::ftssa::{NormAxis, PiMode};
use mgdfis_core::Dims;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        message: message.into(),
    }
}

/// Which part of the pipeline `run` executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ftssa,
    Gmm,
    Dmm,
    Gdim,
    Dpam,
    Full,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ftssa,
        Stage::Gmm,
        Stage::Dmm,
        Stage::Gdim,
        Stage::Dpam,
        Stage::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ftssa => "ftssa",
            Stage::Gmm => "gmm",
            Stage::Dmm => "dmm",
            Stage::Gdim => "gdim",
            Stage::Dpam => "dpam",
            Stage::Full => "full",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                format!("unknown stage `{s}` (expected ftssa, gmm, dmm, gdim, dpam or full)")
            })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub f1: Dims,
    pub f2: Dims,
    /// GMM channel groups.
    pub k: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mona_ratio: usize,
    pub mlp_ratio: usize,
    pub seff_base: usize,
    pub stage: Stage,
    pub pi_mode: PiMode,
    pub norm_axis: NormAxis,
    /// Inputs are read from these MGDT files when set, otherwise drawn
    /// from the seed.
    pub f1_path: Option<PathBuf>,
    pub f2_path: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            f1: [1, 64, 80, 80],
            f2: [1, 64, 40, 40],
            k: 4,
            heads: 2,
            head_dim: 8,
            mona_ratio: 4,
            mlp_ratio: 4,
            seff_base: 8,
            stage: Stage::Full,
            pi_mode: PiMode::Constant,
            norm_axis: NormAxis::Tokens,
            f1_path: None,
            f2_path: None,
            out: PathBuf::from("out"),
        }
    }
}

const KEYS: [&str; 15] = [
    "seed",
    "f1",
    "f2",
    "k",
    "heads",
    "head_dim",
    "mona_ratio",
    "mlp_ratio",
    "seff_base_resolution",
    "stage",
    "tssa_pi_mode",
    "tssa_norm_axis",
    "f1_path",
    "f2_path",
    "out",
];

fn parse_dims(key: &str, v: &str) -> Result<Dims, ConfigError> {
    let parts = v
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| bad(key, format!("`{v}`: {e}")))?;
    let dims: Dims = parts
        .try_into()
        .map_err(|_| bad(key, format!("`{v}` is not N x C x H x W")))?;
    if dims.contains(&0) {
        return Err(bad(key, "every dim must be at least 1"));
    }
    Ok(dims)
}

fn parse_count(key: &str, v: &str) -> Result<usize, ConfigError> {
    match v.parse::<usize>() {
        Ok(0) => Err(bad(key, "must be at least 1")),
        Ok(n) => Ok(n),
        Err(e) => Err(bad(key, format!("`{v}`: {e}"))),
    }
}

pub fn dims_string(d: Dims) -> String {
    d.map(|v| v.to_string()).join("x")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                });
            };
            if seen.contains(&known) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.into(),
                });
            }
            seen.push(known);
            cfg.set(known, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = v.parse().map_err(|e| bad(key, format!("`{v}`: {e}")))?,
            "f1" => self.f1 = parse_dims(key, v)?,
            "f2" => self.f2 = parse_dims(key, v)?,
            "k" => self.k = parse_count(key, v)?,
            "heads" => self.heads = parse_count(key, v)?,
            "head_dim" => self.head_dim = parse_count(key, v)?,
            "mona_ratio" => self.mona_ratio = parse_count(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse_count(key, v)?,
            "seff_base_resolution" => self.seff_base = parse_count(key, v)?,
            "stage" => self.stage = v.parse().map_err(|m: String| bad(key, m))?,
            "tssa_pi_mode" => {
                self.pi_mode = match v {
                    "constant" => PiMode::Constant,
                    "distribution" => PiMode::Distribution,
                    _ => {
                        return Err(bad(
                            key,
                            format!("`{v}` (expected constant or distribution)"),
                        ))
                    }
                }
            }
            "tssa_norm_axis" => {
                self.norm_axis = match v {
                    "tokens" => NormAxis::Tokens,
                    "features" => NormAxis::Features,
                    _ => return Err(bad(key, format!("`{v}` (expected tokens or features)"))),
                }
            }
            "f1_path" => self.f1_path = Some(PathBuf::from(v)),
            "f2_path" => self.f2_path = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, d) in [("f1", self.f1), ("f2", self.f2)] {
            if d.contains(&0) {
                return Err(bad(key, "every dim must be at least 1"));
            }
        }
        for (key, n) in [
            ("k", self.k),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mona_ratio", self.mona_ratio),
            ("mlp_ratio", self.mlp_ratio),
            ("seff_base_resolution", self.seff_base),
        ] {
            if n == 0 {
                return Err(bad(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    /// The config in the same format [`RunConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "f1 = {}", dims_string(self.f1));
        let _ = writeln!(s, "f2 = {}", dims_string(self.f2));
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "head_dim = {}", self.head_dim);
        let _ = writeln!(s, "mona_ratio = {}", self.mona_ratio);
        let _ = writeln!(s, "mlp_ratio = {}", self.mlp_ratio);
        let _ = writeln!(s, "seff_base_resolution = {}", self.seff_base);
        let _ = writeln!(s, "stage = {}", self.stage);
        let pi = match self.pi_mode {
            PiMode::Constant => "constant",
            PiMode::Distribution => "distribution",
        };
        let _ = writeln!(s, "tssa_pi_mode = {pi}");
        let axis = match self.norm_axis {
            NormAxis::Tokens => "tokens",
            NormAxis::Features => "features",
        };
        let _ = writeln!(s, "tssa_norm_axis = {axis}");
        if let Some(p) = &self.f1_path {
            let _ = writeln!(s, "f1_path = {}", p.display());
        }
        if let Some(p) = &self.f2_path {
            let _ = writeln!(s, "f2_path = {}", p.display());
        }
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }
}
