use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use vsfa_core::elbo;
use vsfa_core::linalg::Matrix;
use vsfa_core::linear_vsfa;
use vsfa_core::model::Model;
use vsfa_core::rng;
use vsfa_core::series::{self, GeneratorSpec, Mixing, TimeSeries};
use vsfa_core::sfa_classic;
use vsfa_core::train::{self, BatchMode, ModelKind, OptimizerConfig, TrainConfig};
use vsfa_core::Error;

#[derive(Parser, Debug)]
#[command(name = "vsfa", version, about = "Variational slow feature analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate AR(1) drivers and mixed observations.
    Generate(GenerateArgs),
    /// Fit a model to a CSV series.
    Train(TrainArgs),
    /// Feature statistics of a trained model on a series.
    Eval(EvalArgs),
    /// Stationarity residuals and gradient norm of a linear model.
    CheckLinear(CheckLinearArgs),
    /// Roll the random-walk prior from a fixed initial latent and decode.
    Sample(SampleArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MixKind {
    Linear,
    Polynomial,
}

#[derive(clap::Args, Debug)]
struct GenerateArgs {
    #[arg(long = "T")]
    t: usize,
    /// Number of slow drivers.
    #[arg(long)]
    slow: usize,
    /// AR(1) coefficient per driver, strictly decreasing.
    #[arg(long, value_delimiter = ',', required = true)]
    timescales: Vec<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    mix: MixKind,
    /// Observed dimension.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Linear,
    Mlp,
    Sfa,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// Observed series (CSV).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    model: ModelArg,
    /// Encoder hidden widths for `--model mlp`; the decoder mirrors them.
    #[arg(long, value_delimiter = ',', default_value = "8,4")]
    hidden: Vec<usize>,
    #[arg(long = "latent-dim", short = 'd', default_value_t = 2)]
    latent_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long = "mc-samples", default_value_t = 1)]
    mc_samples: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long = "adam-beta1", default_value_t = 0.9)]
    adam_beta1: f64,
    #[arg(long = "adam-beta2", default_value_t = 0.999)]
    adam_beta2: f64,
    #[arg(long = "adam-eps", default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long = "max-steps", default_value_t = 20_000)]
    max_steps: usize,
    #[arg(long = "grad-tol", default_value_t = 1e-7)]
    grad_tol: f64,
    /// Train on windows of this length instead of the full series.
    #[arg(long = "window-length", requires = "window_stride")]
    window_length: Option<usize>,
    #[arg(long = "window-stride", requires = "window_length")]
    window_stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every k-th step in the report history.
    #[arg(long = "history-stride", default_value_t = 100)]
    history_stride: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth drivers (CSV); enables driver correlations and the SFA subspace comparison.
    #[arg(long)]
    drivers: Option<PathBuf>,
    #[arg(long, default_value = "eval.json")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct CheckLinearArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Slowness weight the model was trained with.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value = "check.json")]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Initial latent, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    z1: Vec<f64>,
    /// Path length including the initial latent.
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    rollouts: usize,
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::CheckLinear(a) => cmd_check_linear(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_dir(dir: &Path) -> vsfa_core::Result<()> {
    fs::create_dir_all(dir)?;
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!("{} is not a directory", dir.display())));
    }
    Ok(())
}

fn ensure_parent(file: &Path) -> vsfa_core::Result<()> {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn ensure_file(file: &Path) -> vsfa_core::Result<()> {
    if !file.is_file() {
        return Err(Error::InvalidArgument(format!("{} does not exist", file.display())));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> vsfa_core::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> vsfa_core::Result<()> {
    ensure_dir(&a.out)?;
    let cols = match a.mix {
        MixKind::Linear => a.slow,
        MixKind::Polynomial => series::polynomial_feature_count(a.slow),
    };
    let matrix = series::random_mixing(a.n, cols, a.seed);
    let spec = GeneratorSpec {
        t: a.t,
        d_slow: a.slow,
        timescales: a.timescales,
        mixing: match a.mix {
            MixKind::Linear => Mixing::Linear(matrix),
            MixKind::Polynomial => Mixing::Polynomial(matrix),
        },
        noise_std: a.noise,
        seed: a.seed,
    };
    let (drivers, observed) = series::generate(&spec)?;
    drivers.save_csv(a.out.join("drivers.csv"))?;
    observed.save_csv(a.out.join("observed.csv"))?;
    write_json(&a.out.join("spec.json"), &spec)?;
    println!(
        "wrote {} rows of {} drivers and {} observed columns to {}",
        observed.len(),
        drivers.dim(),
        observed.dim(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    command: &'static str,
    data: String,
    #[serde(flatten)]
    report: &'a train::TrainReport,
}

fn cmd_train(a: TrainArgs) -> vsfa_core::Result<()> {
    ensure_file(&a.data)?;
    ensure_dir(&a.out)?;
    let x = TimeSeries::load_csv(&a.data)?;
    let data = a.data.display().to_string();

    if a.model == ModelArg::Sfa {
        let model = sfa_classic::fit(&x, a.latent_dim)?;
        let features = sfa_classic::transform(&model, &x)?;
        let wrapped = Model::Sfa(model);
        wrapped.save(a.out.join("model.json"))?;
        features.save_csv(a.out.join("features.csv"))?;
        let Model::Sfa(model) = &wrapped else { unreachable!() };
        write_json(
            &a.out.join("report.json"),
            &json!({
                "command": "train",
                "data": data,
                "config": { "model": { "kind": "sfa" }, "latent_dim": a.latent_dim },
                "delta": model.delta,
                "model": wrapped,
            }),
        )?;
        println!("classic SFA slowness: {:?}", model.delta);
        return Ok(());
    }

    let cfg = TrainConfig {
        model: match a.model {
            ModelArg::Linear => ModelKind::Linear,
            ModelArg::Mlp => ModelKind::Mlp { hidden: a.hidden },
            ModelArg::Sfa => unreachable!(),
        },
        latent_dim: a.latent_dim,
        beta: a.beta,
        mc_samples: a.mc_samples,
        optimizer: match a.optimizer {
            OptimizerArg::Sgd => OptimizerConfig::Sgd { lr: a.lr },
            OptimizerArg::Adam => OptimizerConfig::Adam {
                lr: a.lr,
                beta1: a.adam_beta1,
                beta2: a.adam_beta2,
                eps: a.adam_eps,
            },
        },
        max_steps: a.max_steps,
        grad_tolerance: a.grad_tol,
        batch: match (a.window_length, a.window_stride) {
            (Some(length), Some(stride)) => BatchMode::Windows { length, stride },
            _ => BatchMode::Full,
        },
        seed: a.seed,
        history_stride: a.history_stride,
    };
    let report = match train::train(&cfg, &x) {
        Ok(r) => r,
        Err(Error::Diverged {
            step,
            reason,
            last_finite,
        }) => {
            let path = a.out.join("model.last_finite.json");
            last_finite.save(&path)?;
            return Err(Error::InvalidArgument(format!(
                "training diverged at step {step}: {reason}; last finite model written to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e),
    };
    report.model.save(a.out.join("model.json"))?;
    let features = report.model.features(&x)?;
    let names: Vec<String> = (1..=features.cols()).map(|i| format!("y{i}")).collect();
    series::write_csv(a.out.join("features.csv"), &names, &features)?;
    write_json(
        &a.out.join("report.json"),
        &TrainOutput {
            command: "train",
            data,
            report: &report,
        },
    )?;
    println!(
        "{} after {} steps: elbo {}, gradient norm {:e}",
        if report.converged { "converged" } else { "stopped" },
        report.steps,
        report.final_elbo.total,
        report.final_grad_norm
    );
    if let Some(s) = report.stationarity {
        println!("stationarity: r_cond {:e}, r_offset {:e}", s.r_cond, s.r_offset);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> vsfa_core::Result<()> {
    ensure_file(&a.model)?;
    ensure_file(&a.data)?;
    if let Some(d) = &a.drivers {
        ensure_file(d)?;
    }
    ensure_parent(&a.out)?;
    let model = Model::load(&a.model)?;
    let x = TimeSeries::load_csv(&a.data)?;
    let drivers = a.drivers.as_ref().map(TimeSeries::load_csv).transpose()?;
    let metrics = train::evaluate(&model, &x, drivers.as_ref(), drivers.is_some())?;
    let report = json!({
        "command": "eval",
        "config": {
            "model": a.model.display().to_string(),
            "data": a.data.display().to_string(),
            "drivers": a.drivers.as_ref().map(|d| d.display().to_string()),
            "compare_sfa": drivers.is_some(),
        },
        "metrics": metrics,
    });
    write_json(&a.out, &report)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn cmd_check_linear(a: CheckLinearArgs) -> vsfa_core::Result<()> {
    ensure_file(&a.model)?;
    ensure_file(&a.data)?;
    ensure_parent(&a.out)?;
    if a.beta.is_nan() || a.beta <= 0.0 {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", a.beta)));
    }
    let model = Model::load(&a.model)?;
    let Model::Linear(p) = &model else {
        return Err(Error::InvalidArgument(format!(
            "check-linear needs a linear model, got {}",
            model.kind()
        )));
    };
    let x = TimeSeries::load_csv(&a.data)?;
    let m = series::moments(&x)?;
    let residual = linear_vsfa::stationarity_residual_weighted(p, &m, a.beta)?;
    let grad_norm = linear_vsfa::analytic_gradient_weighted(p, &m, a.beta)?.norm();
    let vtv = vsfa_core::linalg::matmul_tn(&p.v, &p.v)?.frobenius_norm();
    let report = json!({
        "command": "check-linear",
        "config": {
            "model": a.model.display().to_string(),
            "data": a.data.display().to_string(),
            "beta": a.beta,
        },
        "r_cond": residual.r_cond,
        "r_offset": residual.r_offset,
        "vtv_norm": vtv,
        "grad_norm": grad_norm,
    });
    write_json(&a.out, &report)?;
    println!("r_cond {:e} (‖VᵀV‖_F = {vtv:e})", residual.r_cond);
    println!("r_offset {:e}", residual.r_offset);
    println!("gradient norm {grad_norm:e}");
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> vsfa_core::Result<()> {
    ensure_file(&a.model)?;
    ensure_parent(&a.out)?;
    if a.t == 0 || a.rollouts == 0 {
        return Err(Error::InvalidArgument("T and rollouts must be >= 1".into()));
    }
    let model = Model::load(&a.model)?;
    let dec = model
        .decoder()
        .ok_or_else(|| Error::InvalidArgument(format!("{} models have no decoder", model.kind())))?;
    if a.z1.len() != dec.latent_dim() {
        return Err(Error::InvalidArgument(format!(
            "z1 has {} entries, the model's latent dimension is {}",
            a.z1.len(),
            dec.latent_dim()
        )));
    }
    let d = dec.latent_dim();
    let n = dec.output_dim();
    let mut names = vec!["rollout".to_string(), "t".to_string()];
    names.extend((1..=d).map(|i| format!("z{i}")));
    names.extend((1..=n).map(|i| format!("x{i}")));
    let mut out = Matrix::zeros(a.t * a.rollouts, 2 + d + n);
    for r in 0..a.rollouts {
        let mut g = rng::stream(a.seed, rng::streams::PRIOR_SAMPLING + r as u64);
        let (z, x) = elbo::sample_generative(&dec, &a.z1, a.t, &mut g)?;
        for t in 0..a.t {
            let row = out.row_mut(r * a.t + t);
            row[0] = r as f64;
            row[1] = (t + 1) as f64;
            row[2..2 + d].copy_from_slice(z.row(t));
            row[2 + d..].copy_from_slice(x.row(t));
        }
    }
    series::write_csv(&a.out, &names, &out)?;
    println!("wrote {} rollouts of length {} to {}", a.rollouts, a.t, a.out.display());
    Ok(())
}
