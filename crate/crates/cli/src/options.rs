use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use heterotl::estimators::{HtlConfig, LambdaChoice, MapSpec, RidgeChoice, SieveSpec, SupportChoice};
use heterotl::feature_map::GammaChoice;
use heterotl::penalized::{CvSpec, LassoSettings};
use heterotl::simulation::{DeltaKind, LambdaPolicy, OracleConvention, Scenario, SimConfig, SparsityScope};
use heterotl::MapKind;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Cv,
    Value(f64),
}

impl FromStr for LambdaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "cv" {
            return Ok(LambdaArg::Cv);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(LambdaArg::Value(v)),
            _ => Err(format!("expected `cv` or a nonnegative number, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaArg {
    Auto,
    Value(f64),
}

impl FromStr for GammaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(GammaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(GammaArg::Value(v)),
            _ => Err(format!("expected `auto` or a nonnegative number, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportArg {
    Rescale,
    HalfWidth(f64),
}

impl FromStr for SupportArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "rescale" {
            return Ok(SupportArg::Rescale);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(SupportArg::HalfWidth(v)),
            _ => Err(format!("expected `rescale` or a positive half-width, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaArg(pub DeltaKind);

impl FromStr for DeltaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sparse" => Ok(DeltaArg(DeltaKind::Sparse)),
            "dense" => Ok(DeltaArg(DeltaKind::Dense)),
            "zero" => Ok(DeltaArg(DeltaKind::Zero)),
            _ => Err(format!("expected sparse, dense or zero, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScopeArg(pub SparsityScope);

impl FromStr for ScopeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-block" => Ok(ScopeArg(SparsityScope::PerBlock)),
            "total" => Ok(ScopeArg(SparsityScope::Total)),
            _ => Err(format!("expected per-block or total, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleArg(pub OracleConvention);

impl FromStr for OracleArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(OracleArg(OracleConvention::Full)),
            "matched" => Ok(OracleArg(OracleConvention::Matched)),
            _ => Err(format!("expected full or matched, got `{s}`")),
        }
    }
}

// Config values may be written as JSON strings or numbers.
fn flexible<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    let text = match Option::<serde_json::Value>::deserialize(d)? {
        None | Some(serde_json::Value::Null) => return Ok(None),
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(other) => return Err(D::Error::custom(format!("expected a string or number, got {other}"))),
    };
    text.parse().map(Some).map_err(D::Error::custom)
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitFlags {
    /// Proxy CSV with x, z and y columns; repeat once per proxy
    #[arg(long = "proxy", value_name = "FILE")]
    pub proxy: Vec<PathBuf>,
    /// Target CSV with x and y columns
    #[arg(long, value_name = "FILE")]
    pub target: Option<PathBuf>,
    /// Feature map family
    #[arg(long, value_name = "linear|sieve")]
    #[serde(deserialize_with = "flexible")]
    pub map: Option<MapKind>,
    /// Target-stage penalty, or cv for K-fold cross-validation
    #[arg(long, value_name = "cv|FLOAT")]
    #[serde(deserialize_with = "flexible")]
    pub lambda: Option<LambdaArg>,
    /// Folds for --lambda cv [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Ridge penalty for the linear map [default: 0]
    #[arg(long, value_name = "FLOAT")]
    pub ridge: Option<f64>,
    /// Sieve lasso penalty [default: auto]
    #[arg(long, value_name = "auto|FLOAT")]
    #[serde(deserialize_with = "flexible")]
    pub gamma: Option<GammaArg>,
    /// Sieve basis size M [default: from the truncation rule]
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Sieve interaction order [default: 1]
    #[arg(long)]
    pub p1_prime: Option<usize>,
    /// Sieve support: rescale inputs from the proxy data, or a fixed half-width [default: rescale]
    #[arg(long, value_name = "rescale|FLOAT")]
    #[serde(deserialize_with = "flexible")]
    pub support: Option<SupportArg>,
    /// Relative support overshoot clamped at predict time, at most 0.01 [default: 0]
    #[arg(long, value_name = "FLOAT")]
    pub clamp_tolerance: Option<f64>,
    /// Center every domain's columns by its own means
    #[arg(long)]
    pub center: bool,
    /// Seed for cross-validation folds (and bootstrap resampling) [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coordinate descent sweep limit [default: 10000]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Coordinate descent tolerance [default: 1e-9]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn or_first<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

fn rebase(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

pub fn read_config(path: &Path) -> Result<serde_json::Map<String, serde_json::Value>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(serde_json::Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!("config {} must hold a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("config {}: {e}", path.display()))),
    }
}

pub fn from_config<T: for<'de> Deserialize<'de>>(
    map: serde_json::Map<String, serde_json::Value>,
    path: &Path,
) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::Object(map))
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl FitFlags {
    /// Fills unset flags from `config`; paths in the config are relative to
    /// its own directory.
    pub fn merge(self, config: FitFlags, config_path: &Path) -> FitFlags {
        let base = config_dir(config_path);
        FitFlags {
            proxy: if self.proxy.is_empty() {
                config.proxy.into_iter().map(|p| rebase(&base, p)).collect()
            } else {
                self.proxy
            },
            target: or_first(self.target, config.target.map(|p| rebase(&base, p))),
            map: or_first(self.map, config.map),
            lambda: or_first(self.lambda, config.lambda),
            folds: or_first(self.folds, config.folds),
            ridge: or_first(self.ridge, config.ridge),
            gamma: or_first(self.gamma, config.gamma),
            truncation: or_first(self.truncation, config.truncation),
            p1_prime: or_first(self.p1_prime, config.p1_prime),
            support: or_first(self.support, config.support),
            clamp_tolerance: or_first(self.clamp_tolerance, config.clamp_tolerance),
            center: self.center || config.center,
            seed: or_first(self.seed, config.seed),
            max_iters: or_first(self.max_iters, config.max_iters),
            tol: or_first(self.tol, config.tol),
            out: or_first(self.out, config.out.map(|p| rebase(&base, p))),
        }
    }

    pub fn require_inputs(&self) -> Result<(&[PathBuf], &Path), CliError> {
        if self.proxy.is_empty() {
            return Err(CliError::Usage("at least one --proxy file is required".into()));
        }
        let target = self
            .target
            .as_deref()
            .ok_or_else(|| CliError::Usage("--target is required".into()))?;
        Ok((&self.proxy, target))
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn htl_config(&self) -> Result<HtlConfig, CliError> {
        let kind = self.map.unwrap_or(MapKind::Linear);
        let map = match kind {
            MapKind::Linear => {
                let sieve_only = [
                    ("--gamma", self.gamma.is_some()),
                    ("--truncation", self.truncation.is_some()),
                    ("--p1-prime", self.p1_prime.is_some()),
                    ("--support", self.support.is_some()),
                ];
                if let Some((flag, _)) = sieve_only.iter().find(|(_, set)| *set) {
                    return Err(CliError::Usage(format!("{flag} applies to --map sieve only")));
                }
                let tau = self.ridge.unwrap_or(0.0);
                if !(tau >= 0.0 && tau.is_finite()) {
                    return Err(CliError::Usage("--ridge must be a nonnegative number".into()));
                }
                MapSpec::Linear {
                    ridge: RidgeChoice::Fixed(tau),
                }
            }
            MapKind::Sieve => {
                if self.ridge.is_some() {
                    return Err(CliError::Usage("--ridge applies to --map linear only".into()));
                }
                MapSpec::Sieve(SieveSpec {
                    p1_prime: self.p1_prime.unwrap_or(1),
                    truncation: self.truncation,
                    support: match self.support.unwrap_or(SupportArg::Rescale) {
                        SupportArg::Rescale => SupportChoice::Rescale,
                        SupportArg::HalfWidth(a) => SupportChoice::Fixed(a),
                    },
                    gamma: match self.gamma.unwrap_or(GammaArg::Auto) {
                        GammaArg::Auto => GammaChoice::default(),
                        GammaArg::Value(g) => GammaChoice::Fixed(g),
                    },
                    ..SieveSpec::default()
                })
            }
        };
        let folds = self.folds.unwrap_or(5);
        if folds < 2 {
            return Err(CliError::Usage("--folds must be at least 2".into()));
        }
        let lambda = match self.lambda.unwrap_or(LambdaArg::Cv) {
            LambdaArg::Cv => LambdaChoice::Cv(CvSpec::new(folds, self.seed.unwrap_or(0))),
            LambdaArg::Value(l) => LambdaChoice::Fixed(l),
        };
        let clamp = self.clamp_tolerance.unwrap_or(0.0);
        if !(0.0..=0.01).contains(&clamp) {
            return Err(CliError::Usage("--clamp-tolerance must lie in [0, 0.01]".into()));
        }
        let defaults = LassoSettings::default();
        let settings = LassoSettings {
            max_iters: self.max_iters.unwrap_or(defaults.max_iters),
            tol: self.tol.unwrap_or(defaults.tol),
            ..defaults
        };
        settings.validate()?;
        Ok(HtlConfig {
            map,
            lambda,
            settings,
            block_weights: None,
            clamp_tolerance: clamp,
            center: self.center,
        })
    }
}

#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateFlags {
    /// Named design; size flags override it
    #[arg(long, value_name = "fig1|fig5|custom")]
    pub preset: Option<String>,
    #[arg(long, value_name = "linear|nonlinear")]
    #[serde(deserialize_with = "flexible")]
    pub scenario: Option<Scenario>,
    /// Number of proxy domains
    #[arg(long)]
    pub k: Option<usize>,
    /// Rows per proxy domain
    #[arg(long)]
    pub n_p: Option<usize>,
    /// Target rows
    #[arg(long)]
    pub n_t: Option<usize>,
    /// Test rows
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub p1: Option<usize>,
    #[arg(long)]
    pub p2: Option<usize>,
    /// Proxy contrast type
    #[arg(long, value_name = "sparse|dense|zero")]
    #[serde(deserialize_with = "flexible")]
    pub delta: Option<DeltaArg>,
    /// Width used for the sparse mask size
    #[arg(long, value_name = "per-block|total")]
    #[serde(deserialize_with = "flexible")]
    pub sparsity: Option<ScopeArg>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Penalty for every transfer fit, or cv
    #[arg(long, value_name = "cv|FLOAT")]
    #[serde(deserialize_with = "flexible")]
    pub lambda: Option<LambdaArg>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, value_name = "FLOAT")]
    pub response_noise_sd: Option<f64>,
    #[arg(long, value_name = "FLOAT")]
    pub map_noise_sd: Option<f64>,
    /// Give every proxy the target's feature map
    #[arg(long)]
    pub no_map_perturbation: bool,
    /// Oracle arm convention
    #[arg(long, value_name = "full|matched")]
    #[serde(deserialize_with = "flexible")]
    pub oracle: Option<OracleArg>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl SimulateFlags {
    pub fn merge(self, config: SimulateFlags, config_path: &Path) -> SimulateFlags {
        let base = config_dir(config_path);
        SimulateFlags {
            preset: or_first(self.preset, config.preset),
            scenario: or_first(self.scenario, config.scenario),
            k: or_first(self.k, config.k),
            n_p: or_first(self.n_p, config.n_p),
            n_t: or_first(self.n_t, config.n_t),
            n_test: or_first(self.n_test, config.n_test),
            p1: or_first(self.p1, config.p1),
            p2: or_first(self.p2, config.p2),
            delta: or_first(self.delta, config.delta),
            sparsity: or_first(self.sparsity, config.sparsity),
            reps: or_first(self.reps, config.reps),
            seed: or_first(self.seed, config.seed),
            lambda: or_first(self.lambda, config.lambda),
            folds: or_first(self.folds, config.folds),
            response_noise_sd: or_first(self.response_noise_sd, config.response_noise_sd),
            map_noise_sd: or_first(self.map_noise_sd, config.map_noise_sd),
            no_map_perturbation: self.no_map_perturbation || config.no_map_perturbation,
            oracle: or_first(self.oracle, config.oracle),
            out: or_first(self.out, config.out.map(|p| rebase(&base, p))),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let mut cfg = SimConfig::preset(self.preset.as_deref().unwrap_or("custom"))?;
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(scenario, k, n_p, n_t, n_test, p1, p2, reps, seed, response_noise_sd, map_noise_sd);
        if let Some(DeltaArg(d)) = self.delta {
            cfg.delta = d;
        }
        if let Some(ScopeArg(s)) = self.sparsity {
            cfg.sparsity_scope = s;
        }
        if let Some(OracleArg(o)) = self.oracle {
            cfg.oracle = o;
        }
        if self.no_map_perturbation {
            cfg.map_perturbation = false;
        }
        match (self.lambda, self.folds) {
            (Some(LambdaArg::Value(l)), None) => cfg.lambda_policy = LambdaPolicy::Fixed(l),
            (Some(LambdaArg::Value(_)), Some(_)) => {
                return Err(CliError::Usage("--folds applies to --lambda cv only".into()))
            }
            (_, folds) => {
                if let Some(folds) = folds {
                    cfg.lambda_policy = LambdaPolicy::Cv { folds };
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
