use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use heterotl::estimators::{bootstrap_htl, fit_target_stage, pretrain, resample_indices, HtlConfig, HtlModel, Predict};
use heterotl::io::{read_covariates_file, read_dataset_file, write_column};
use heterotl::simulation::run_replications;
use heterotl::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::options::{from_config, read_config, FitFlags, SimulateFlags};
use crate::output::{sidecar, write_atomic, write_json, RunManifest};

pub const MODEL_FORMAT: &str = "heterotl-model";

/// Saved model: the fitted estimator plus the configuration that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub library_version: String,
    pub config: HtlConfig,
    pub model: HtlModel,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    /// JSON file with the same keys as the long flags; flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model JSON written by `fit`
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// CSV with x columns (a y column is ignored)
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Output CSV with a single yhat column
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub flags: SimulateFlags,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub flags: FitFlags,
    /// Number of bootstrap draws
    #[arg(long = "B", visible_alias = "draws", value_name = "N")]
    pub draws: Option<usize>,
    /// Use the identity resample for every draw (for checks)
    #[arg(long, hide = true)]
    pub identity: bool,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn load_fit_flags(flags: FitFlags, config: Option<&Path>) -> Result<FitFlags, CliError> {
    match config {
        Some(path) => {
            let map = read_config(path)?;
            Ok(flags.merge(from_config(map, path)?, path))
        }
        None => Ok(flags),
    }
}

fn read_inputs(flags: &FitFlags) -> Result<(Vec<Dataset>, Dataset, Vec<&Path>), CliError> {
    let (proxy_paths, target_path) = flags.require_inputs()?;
    let mut proxies = Vec::with_capacity(proxy_paths.len());
    for p in proxy_paths {
        let d = read_dataset_file(p)?;
        if d.z().is_none() {
            return Err(CliError::Data(format!("{}: proxy files need z columns", p.display())));
        }
        proxies.push(d);
    }
    let target = read_dataset_file(target_path)?.without_z();
    let mut paths: Vec<&Path> = proxy_paths.iter().map(PathBuf::as_path).collect();
    paths.push(target_path);
    Ok((proxies, target, paths))
}

fn warn_model(model: &HtlModel) {
    if model.map.rank_deficient {
        eprintln!("warning: proxy design is rank deficient; the linear map is a minimum-norm solution");
    }
    if !model.diagnostics.zero_variance_columns.is_empty() {
        eprintln!(
            "warning: imputed design columns {:?} have zero variance; their contrasts are fixed at 0",
            model.diagnostics.zero_variance_columns
        );
    }
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let flags = load_fit_flags(args.flags, args.config.as_deref())?;
    let out = flags.require_out()?.to_path_buf();
    let config = flags.htl_config()?;
    let (proxies, target, paths) = read_inputs(&flags)?;
    let mut manifest = RunManifest::new("fit", serde_json::to_value(&config).expect("config serializes"), flags.seed);
    manifest.add_inputs(&paths)?;

    let t = Instant::now();
    let pre = pretrain(&proxies, &config)?;
    manifest.timings.insert("proxy_stage".into(), seconds(t));
    let t = Instant::now();
    let model = fit_target_stage(&pre, &target, &config)?;
    manifest.timings.insert("target_stage".into(), seconds(t));
    warn_model(&model);

    let lambda = model.fit.lambda;
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        library_version: env!("CARGO_PKG_VERSION").into(),
        config,
        model,
    };
    write_json(&out, &file)?;
    manifest.outputs.push(out.display().to_string());
    manifest.timings.insert("total".into(), seconds(started));
    write_json(&sidecar(&out), &manifest)?;
    println!("wrote {} (lambda = {lambda})", out.display());
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: not a model file: {e}", path.display())))?;
    if file.format != MODEL_FORMAT {
        return Err(CliError::Data(format!("{}: unknown model format `{}`", path.display(), file.format)));
    }
    file.model.map.validate()?;
    Ok(file)
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let file = load_model(&args.model)?;
    let x = read_covariates_file(&args.data)?;
    let yhat = file
        .model
        .predict(&x)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    write_atomic(&args.out, |w| Ok(write_column(w, "yhat", yhat.as_slice())?))?;

    let mut manifest = RunManifest::new("predict", serde_json::to_value(&file.config).expect("config serializes"), None);
    manifest.add_inputs(&[&args.model, &args.data])?;
    manifest.outputs.push(args.out.display().to_string());
    manifest.timings.insert("total".into(), seconds(started));
    write_json(&sidecar(&args.out), &manifest)?;
    println!("wrote {} predictions to {}", yhat.len(), args.out.display());
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let flags = match args.config.as_deref() {
        Some(path) => {
            let map = read_config(path)?;
            args.flags.merge(from_config(map, path)?, path)
        }
        None => args.flags,
    };
    let dir = flags.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let config = flags.sim_config()?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;

    let t = Instant::now();
    let report = run_replications(&config)?;
    let mut manifest = RunManifest::new("simulate", serde_json::to_value(&config).expect("config serializes"), Some(config.seed));
    manifest.timings.insert("replications".into(), seconds(t));
    for f in &report.failures {
        eprintln!("warning: replication {} failed in {}: {}", f.rep, f.method, f.message);
    }

    let csv_path = dir.join("metrics.csv");
    write_atomic(&csv_path, |w| Ok(report.write_csv(w)?))?;
    let json_path = dir.join("metrics.json");
    write_json(&json_path, &report)?;
    manifest.outputs = vec![csv_path.display().to_string(), json_path.display().to_string()];
    manifest.timings.insert("total".into(), seconds(started));
    write_json(&dir.join("manifest.json"), &manifest)?;

    for s in &report.summary {
        println!(
            "{:<13} median MAP {:.4}  median l1 error {:.4}  ({} reps)",
            s.method.as_str(),
            s.map.median,
            s.l1_err_beta1.median,
            s.reps
        );
    }
    if !report.failures.is_empty() {
        println!("{} replication(s) failed", report.failures.len());
    }
    Ok(())
}

fn coefficient_names(p1: usize, p2: usize) -> Vec<String> {
    (1..=p1).map(|k| format!("x{k}")).chain((1..=p2).map(|k| format!("z{k}"))).collect()
}

pub fn bootstrap(args: BootstrapArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (flags, draws, identity) = match args.config.as_deref() {
        Some(path) => {
            let mut map = read_config(path)?;
            let draws = match map.remove("B") {
                Some(v) => Some(
                    serde_json::from_value::<usize>(v)
                        .map_err(|e| CliError::Usage(format!("config {}: B: {e}", path.display())))?,
                ),
                None => None,
            };
            let identity = match map.remove("identity") {
                Some(v) => serde_json::from_value::<bool>(v)
                    .map_err(|e| CliError::Usage(format!("config {}: identity: {e}", path.display())))?,
                None => false,
            };
            let flags = args.flags.merge(from_config(map, path)?, path);
            (flags, args.draws.or(draws), args.identity || identity)
        }
        None => (args.flags, args.draws, args.identity),
    };
    let draws = draws.ok_or_else(|| CliError::Usage("--B is required".into()))?;
    if draws == 0 {
        return Err(CliError::Usage("--B must be at least 1".into()));
    }
    let out = flags.require_out()?.to_path_buf();
    let config = flags.htl_config()?;
    let (proxies, target, paths) = read_inputs(&flags)?;
    let seed = flags.seed.unwrap_or(0);
    let mut manifest = RunManifest::new(
        "bootstrap",
        serde_json::json!({ "fit": config, "draws": draws, "identity": identity }),
        Some(seed),
    );
    manifest.add_inputs(&paths)?;

    let t = Instant::now();
    let pre = pretrain(&proxies, &config)?;
    manifest.timings.insert("proxy_stage".into(), seconds(t));
    let resamples = if identity {
        vec![(0..target.n()).collect(); draws]
    } else {
        resample_indices(target.n(), draws, seed)
    };
    let t = Instant::now();
    let samples = bootstrap_htl(&pre, &target, &config, &resamples)?;
    manifest.timings.insert("draws".into(), seconds(t));

    let names = coefficient_names(pre.map.p1(), pre.map.p2());
    write_atomic(&out, |w| write_samples(w, &names, &samples))?;
    manifest.outputs.push(out.display().to_string());
    manifest.timings.insert("total".into(), seconds(started));
    write_json(&sidecar(&out), &manifest)?;
    println!("wrote {draws} draws x {} coefficients to {}", names.len(), out.display());
    Ok(())
}

fn write_samples(w: &mut dyn Write, names: &[String], samples: &[Vec<f64>]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Output(e.to_string());
    writeln!(w, "draw,coefficient,value").map_err(fail)?;
    for (b, beta) in samples.iter().enumerate() {
        for (name, v) in names.iter().zip(beta) {
            writeln!(w, "{},{name},{v}", b + 1).map_err(fail)?;
        }
    }
    Ok(())
}
