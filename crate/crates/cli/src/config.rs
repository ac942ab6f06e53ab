//! Run configuration: defaults, then the JSON config file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use graphsel::bicluster::DEFAULT_C_GRID;
use graphsel::linalg::log_grid;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    General,
    Cluster,
    BiclusterCartesian,
    BiclusterKronecker,
    Isotonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SerialWarm,
    ParallelCold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Chain,
    Staircase,
    Grid,
    Checkerboard,
    Anchor,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Even,
    Uneven,
    VeryUneven,
}

/// A number, or one of the strings `inf` / `infinity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Value(f64),
    Text(#[serde(with = "text_f64")] f64),
}

impl Number {
    pub fn get(self) -> f64 {
        match self {
            Number::Value(v) | Number::Text(v) => v,
        }
    }
}

mod text_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.trim().parse().map_err(serde::de::Error::custom)
    }
}

/// Explicit list of values, or a string: `a,b,c` or `log:lo,hi,len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Text(String),
}

impl Grid {
    pub fn resolve(&self) -> Result<Vec<f64>, CliError> {
        match self {
            Grid::Values(v) => Ok(v.clone()),
            Grid::Text(s) => parse_grid(s),
        }
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("cannot parse grid '{s}'"));
    if let Some(rest) = s.trim().strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let len: usize = parts[2].parse().map_err(|_| bad())?;
        if !(lo > 0.0 && hi >= lo) || len == 0 {
            return Err(bad());
        }
        return Ok(log_grid(lo, hi, len));
    }
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

/// Fully resolved settings for one command. JSON keys and flag names agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    pub data: Option<PathBuf>,
    /// Dense design matrix; identity when absent.
    pub design: Option<PathBuf>,
    /// Named graph: `chain`, `cycle`, `star`, `complete` (sized from the data) or `grid:N1xN2`.
    pub graph: Option<String>,
    pub edge_list: Option<PathBuf>,
    /// Input CSV files carry a header row.
    pub header: bool,
    pub v1: f64,
    pub nu: Number,
    pub a: f64,
    pub b: f64,
    pub big_a: f64,
    pub big_b: f64,
    pub k: Option<usize>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub v0_grid: Option<Grid>,
    /// Spike variance for `fit`.
    pub v0: Option<f64>,
    pub c_grid: Grid,
    /// Column variance ratio for a Cartesian `fit`.
    pub c: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub mode: Mode,
    pub scenario: Option<Scenario>,
    pub n: Option<usize>,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub pieces: usize,
    pub shape: Shape,
    pub step: f64,
    pub blocks: usize,
    pub anchors: usize,
    pub sigma: f64,
    pub estimate: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: Model::General,
            data: None,
            design: None,
            graph: None,
            edge_list: None,
            header: false,
            v1: 100.0,
            nu: Number::Value(0.0),
            a: 1.0,
            b: 1.0,
            big_a: 1.0,
            big_b: 1.0,
            k: None,
            k1: None,
            k2: None,
            v0_grid: None,
            v0: None,
            c_grid: Grid::Values(DEFAULT_C_GRID.to_vec()),
            c: 1.0,
            seed: 0,
            out: PathBuf::from("out"),
            mode: Mode::ParallelCold,
            scenario: None,
            n: None,
            n1: None,
            n2: None,
            pieces: 4,
            shape: Shape::Even,
            step: 1.0,
            blocks: 6,
            anchors: 4,
            sigma: 1.0,
            estimate: None,
            truth: None,
            instances: 20,
        }
    }
}

/// Command-line overrides. Every field has the same name as its config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Overrides {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// general, cluster, bicluster-cartesian, bicluster-kronecker or isotonic.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_list: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub header: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v1: Option<f64>,
    /// Prior precision of the intercept; `inf` fixes it at zero.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_a: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_b: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<usize>,
    /// `a,b,c` or `log:lo,hi,len`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0_grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// serial-warm or parallel-cold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// chain, staircase, grid, checkerboard, anchor or toy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pieces: Option<usize>,
    /// even, uneven or very-uneven.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config(format!(
            "{}: config must be a JSON object",
            path.display()
        ))),
        Err(e) => Err(CliError::Config(format!("{}: {e}", path.display()))),
    }
}

impl Overrides {
    /// Merge the config file and the flags into a resolved configuration.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut map = match &self.config {
            Some(path) => read_config_file(path)?,
            None => Map::new(),
        };
        let flags = serde_json::to_value(self).map_err(|e| CliError::Config(e.to_string()))?;
        if let Value::Object(flags) = flags {
            map.extend(flags);
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn nu(&self) -> f64 {
        self.nu.get()
    }

    pub fn hyper(&self) -> graphsel::em::Hyper {
        graphsel::em::Hyper {
            a: self.a,
            b: self.b,
            big_a: self.big_a,
            big_b: self.big_b,
        }
    }

    pub fn c_values(&self) -> Result<Vec<f64>, CliError> {
        let cs = self.c_grid.resolve()?;
        if cs.is_empty() || cs.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(CliError::Config(
                "c-grid must be a nonempty list of positive values".into(),
            ));
        }
        Ok(cs)
    }

    /// The requested v0 grid, or `default` when none was given. Values must lie in `(0, v1]`.
    pub fn v0_values(&self, default: Vec<f64>) -> Result<Vec<f64>, CliError> {
        let grid = match &self.v0_grid {
            Some(g) => g.resolve()?,
            None => default,
        };
        if grid.is_empty() {
            return Err(CliError::Config("v0 grid is empty".into()));
        }
        for &v0 in &grid {
            self.check_v0(v0)?;
        }
        Ok(grid)
    }

    pub fn check_v0(&self, v0: f64) -> Result<(), CliError> {
        if !(v0 > 0.0 && v0 <= self.v1) {
            return Err(CliError::Config(format!(
                "v0 = {v0} must lie in (0, v1 = {}]",
                self.v1
            )));
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.v1 > 0.0 && self.v1.is_finite()) {
            return Err(CliError::Config(format!(
                "v1 must be positive, got {}",
                self.v1
            )));
        }
        let nu = self.nu();
        if nu.is_nan() || nu < 0.0 {
            return Err(CliError::Config(format!(
                "nu must be nonnegative or inf, got {nu}"
            )));
        }
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("big-a", self.big_a),
            ("big-b", self.big_b),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(CliError::Config(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        for path in [
            &self.data,
            &self.design,
            &self.edge_list,
            &self.estimate,
            &self.truth,
        ]
        .into_iter()
        .flatten()
        {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "file not found: {}",
                    path.display()
                )));
            }
        }
        if self.graph.is_some() && self.edge_list.is_some() {
            return Err(CliError::Config(
                "give either graph or edge-list, not both".into(),
            ));
        }
        Ok(())
    }

    /// Output path inside the output directory.
    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_strings() {
        assert_eq!(parse_grid("0.1, 1,10").unwrap(), vec![0.1, 1.0, 10.0]);
        let g = parse_grid("log:0.01,100,5").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[2] - 1.0).abs() < 1e-12);
        assert!(parse_grid("log:1,2").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"v1": 50, "nu": "inf", "mode": "serial-warm", "k": 3}"#,
        )
        .unwrap();
        let o = Overrides {
            config: Some(path),
            k: Some(5),
            ..Default::default()
        };
        let cfg = o.resolve().unwrap();
        assert_eq!(cfg.v1, 50.0);
        assert!(cfg.nu().is_infinite());
        assert_eq!(cfg.mode, Mode::SerialWarm);
        assert_eq!(cfg.k, Some(5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"v_one": 50}"#).unwrap();
        let o = Overrides {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(o.resolve(), Err(CliError::Config(_))));
    }
}
