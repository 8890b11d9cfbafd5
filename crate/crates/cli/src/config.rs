//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use kp_core::asymptotics::Tolerances;
use kp_core::lattice::{ModelParams, PerturbationKind, TailSequence};
use kp_core::weyl::validate_sizes;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsOptions {
    /// Samples of `L(k)` in the plot-data file; 0 disables it.
    pub plot_points: usize,
}

impl Default for BandsOptions {
    fn default() -> Self {
        BandsOptions { plot_points: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapScanOptions {
    pub section_sizes: Vec<usize>,
    /// Mid-gap grid size, spread over the gaps below `k_max`.
    pub gap_points: usize,
    /// Band-centre control energies.
    pub control_points: usize,
    /// Explicit energies; replaces the generated grid when present.
    pub lambdas: Option<Vec<f64>>,
}

impl Default for GapScanOptions {
    fn default() -> Self {
        GapScanOptions {
            section_sizes: vec![200, 400, 800],
            gap_points: 20,
            control_points: 3,
            lambdas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeOptions {
    pub n_lo: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { n_lo: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: PerturbationKind,
    pub params: ModelParams,
    pub k_max: f64,
    /// Number of transfer steps (or section size for `eigenscan`).
    pub n: usize,
    /// Energy for `propagate` and `decompose`.
    pub lambda: Option<f64>,
    pub out: PathBuf,
    pub format: Format,
    pub bands: BandsOptions,
    pub gapscan: GapScanOptions,
    pub decompose: DecomposeOptions,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: PerturbationKind::None,
            params: ModelParams::default(),
            k_max: 8.0,
            n: 10_000,
            lambda: None,
            out: PathBuf::from("out"),
            format: Format::Json,
            bands: BandsOptions::default(),
            gapscan: GapScanOptions::default(),
            decompose: DecomposeOptions::default(),
            tolerances: Tolerances::default(),
        }
    }
}

/// Physical constants as they appear in a config file; missing keys keep
/// their defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    d: Option<f64>,
    alpha0: Option<f64>,
    c: Option<f64>,
    omega: Option<f64>,
    gamma: Option<f64>,
    kappa: Option<f64>,
    q: Option<TailSequence>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<PerturbationKind>,
    params: Option<ParamsFile>,
    k_max: Option<f64>,
    n: Option<usize>,
    lambda: Option<f64>,
    out: Option<PathBuf>,
    format: Option<Format>,
    bands: Option<BandsOptions>,
    gapscan: Option<GapScanOptions>,
    decompose: Option<DecomposeOptions>,
    tolerances: Option<Tolerances>,
}

/// Values given on the command line. `None` leaves the file or default.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<PerturbationKind>,
    pub d: Option<f64>,
    pub alpha0: Option<f64>,
    pub c: Option<f64>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub kappa: Option<f64>,
    pub k_max: Option<f64>,
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        set(&mut cfg.model, file.model);
        if let Some(p) = file.params {
            let q = &mut cfg.params;
            set(&mut q.d, p.d);
            set(&mut q.alpha0, p.alpha0);
            set(&mut q.c, p.c);
            set(&mut q.omega, p.omega);
            set(&mut q.gamma, p.gamma);
            set(&mut q.kappa, p.kappa);
            set(&mut q.q, p.q);
        }
        set(&mut cfg.k_max, file.k_max);
        set(&mut cfg.n, file.n);
        cfg.lambda = file.lambda.or(cfg.lambda);
        set(&mut cfg.out, file.out);
        set(&mut cfg.format, file.format);
        set(&mut cfg.bands, file.bands);
        set(&mut cfg.gapscan, file.gapscan);
        set(&mut cfg.decompose, file.decompose);
        set(&mut cfg.tolerances, file.tolerances);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    /// Defaults, then the optional file, then the flags.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(o);
        cfg.params.q = std::mem::take(&mut cfg.params.q).load()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        set(&mut self.model, o.model);
        set(&mut self.params.d, o.d);
        set(&mut self.params.alpha0, o.alpha0);
        set(&mut self.params.c, o.c);
        set(&mut self.params.omega, o.omega);
        set(&mut self.params.gamma, o.gamma);
        set(&mut self.params.kappa, o.kappa);
        set(&mut self.k_max, o.k_max);
        set(&mut self.n, o.n);
        self.lambda = o.lambda.or(self.lambda);
        set(&mut self.out, o.out.clone());
        set(&mut self.format, o.format);
    }

    /// Range checks run before any computation.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.k_max > 0.0 && self.k_max.is_finite()) {
            return bad(format!("k_max must be positive and finite, got {}", self.k_max));
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda must be positive and finite, got {l}"));
            }
        }
        validate_sizes(&self.gapscan.section_sizes).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(ls) = &self.gapscan.lambdas {
            if let Some(l) = ls.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                return bad(format!("gapscan energies must be positive, got {l}"));
            }
        }
        if self.decompose.n_lo == 0 {
            return bad("decompose.n_lo must be at least 1".into());
        }
        let t = &self.tolerances;
        if [t.slope_rel, t.bounded_abs, t.phase, t.spacing_rel]
            .iter()
            .any(|x| !(*x > 0.0))
        {
            return bad("tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn require_lambda(&self) -> CliResult<f64> {
        self.lambda
            .ok_or_else(|| CliError::Config("this command needs an energy: set lambda or pass --lambda".into()))
    }
}
