//! Gradient ascent on the β-weighted ELBO for linear and MLP models, windowed
//! minibatching that keeps adjacent pairs intact, and evaluation metrics.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elbo::{self, ElboBreakdown};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::linear_vsfa::{self, LinearGradients, LinearVsfaParams, SampleWeights, StationarityResidual};
use crate::model::Model;
use crate::net::{MlpGrads, MlpParams};
use crate::rng::{self, streams};
use crate::series::{self, Moments, TimeSeries};
use crate::sfa_classic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    /// Hidden widths of the encoder; the decoder mirrors them.
    Mlp {
        hidden: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    Windows { length: usize, stride: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub latent_dim: usize,
    pub beta: f64,
    pub mc_samples: usize,
    pub optimizer: OptimizerConfig,
    pub max_steps: usize,
    /// Stop once the gradient norm of the summed objective falls below this.
    pub grad_tolerance: f64,
    pub batch: BatchMode,
    pub seed: u64,
    /// Record every `history_stride`-th step (plus the first and last).
    pub history_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Linear,
            latent_dim: 2,
            beta: 1.0,
            mc_samples: 1,
            optimizer: OptimizerConfig::default(),
            max_steps: 20_000,
            grad_tolerance: 1e-7,
            batch: BatchMode::Full,
            seed: 0,
            history_stride: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be >= 1".into());
        }
        if self.history_stride == 0 {
            return bad("history_stride must be >= 1".into());
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance < 0.0 {
            return bad("grad_tolerance must be >= 0".into());
        }
        match self.optimizer {
            OptimizerConfig::Sgd { lr } if lr.is_nan() || lr <= 0.0 => return bad(format!("lr must be > 0, got {lr}")),
            OptimizerConfig::Adam { lr, beta1, beta2, eps }
                if !(lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                return bad(format!("invalid adam parameters {:?}", self.optimizer))
            }
            _ => {}
        }
        if let BatchMode::Windows { length, stride } = self.batch {
            if length < 2 || stride < 1 {
                return bad(format!(
                    "windows need length >= 2 and stride >= 1, got {length}/{stride}"
                ));
            }
        }
        if let ModelKind::Mlp { hidden } = &self.model {
            if hidden.contains(&0) {
                return bad("hidden widths must be >= 1".into());
            }
        }
        Ok(())
    }
}

/// First-order optimizer state over a flat parameter vector. Steps ascend.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, len: usize) -> Self {
        match cfg {
            OptimizerConfig::Sgd { lr } => Optimizer::Sgd { lr },
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            },
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    params[i] += *lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
}

/// Contiguous windows `[start, start + length)` and the weights that make
/// their summed objectives count every covered term exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub windows: Vec<Range<usize>>,
    /// Adjacent pairs `(t, t+1)` that no window contains.
    pub dropped_pairs: Vec<(usize, usize)>,
    /// Time steps that no window contains.
    pub dropped_points: Vec<usize>,
    /// Per-window weights, aligned with the window's own rows.
    pub weights: Vec<SampleWeights>,
}

pub fn window_plan(t: usize, length: usize, stride: usize) -> Result<WindowPlan> {
    if length < 2 || stride < 1 {
        return Err(Error::InvalidArgument(format!(
            "windows need length >= 2 and stride >= 1, got {length}/{stride}"
        )));
    }
    if length > t {
        return Err(Error::InvalidArgument(format!("window length {length} exceeds T={t}")));
    }
    let windows: Vec<Range<usize>> = (0..)
        .map(|k| k * stride)
        .take_while(|s| s + length <= t)
        .map(|s| s..s + length)
        .collect();
    let mut point_cov = vec![0usize; t];
    let mut pair_cov = vec![0usize; t - 1];
    for w in &windows {
        for i in w.clone() {
            point_cov[i] += 1;
        }
        for c in &mut pair_cov[w.start..w.end - 1] {
            *c += 1;
        }
    }
    let weights = windows
        .iter()
        .map(|w| SampleWeights {
            points: w.clone().map(|i| 1.0 / point_cov[i] as f64).collect(),
            pairs: (w.start..w.end - 1).map(|i| 1.0 / pair_cov[i] as f64).collect(),
        })
        .collect();
    Ok(WindowPlan {
        windows,
        dropped_pairs: (0..t - 1).filter(|&i| pair_cov[i] == 0).map(|i| (i, i + 1)).collect(),
        dropped_points: (0..t).filter(|&i| point_cov[i] == 0).collect(),
        weights,
    })
}

/// The windows of `x` as separate series.
pub fn windows(x: &TimeSeries, length: usize, stride: usize) -> Result<Vec<TimeSeries>> {
    window_plan(x.len(), length, stride)?
        .windows
        .into_iter()
        .map(|r| x.slice(r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub elbo: ElboBreakdown,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub count: usize,
    pub length: usize,
    pub stride: usize,
    /// Adjacent pairs excluded from the slowness term because no window holds both points.
    pub dropped_pairs: usize,
    pub dropped_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub history: Vec<HistoryEntry>,
    pub model: Model,
    pub steps: usize,
    pub converged: bool,
    /// Norm of the gradient of the summed objective at the final parameters
    /// (stochastic for MLP models).
    pub final_grad_norm: f64,
    pub final_elbo: ElboBreakdown,
    pub stationarity: Option<StationarityResidual>,
    pub windows: Option<WindowSummary>,
    pub wall_clock_secs: f64,
}

fn init_model(cfg: &TrainConfig, x: &TimeSeries, m: &Moments) -> Result<Model> {
    let n = x.dim();
    let d = cfg.latent_dim;
    match &cfg.model {
        ModelKind::Linear => {
            let mut p = LinearVsfaParams::random(n, d, 1.0 / (n as f64).sqrt(), cfg.seed, streams::INIT + 8);
            p.b = vec![0.0; d];
            p.o = p.optimal_offset(&m.mean)?;
            Ok(Model::Linear(p))
        }
        ModelKind::Mlp { hidden } => {
            let mut enc_sizes = vec![n];
            enc_sizes.extend(hidden);
            enc_sizes.push(d);
            let mut dec_sizes = vec![d];
            dec_sizes.extend(hidden.iter().rev());
            dec_sizes.push(n);
            let encoder = MlpParams::init(&enc_sizes, cfg.seed, 0)?;
            let mut decoder = MlpParams::init(&dec_sizes, cfg.seed, 1)?;
            if let Some(last) = decoder.layers.last_mut() {
                last.bias = m.mean.clone();
            }
            Ok(Model::Mlp { encoder, decoder })
        }
    }
}

fn model_flat(model: &Model) -> Vec<f64> {
    match model {
        Model::Linear(p) => p.to_flat(),
        Model::Mlp { encoder, decoder } => {
            let mut f = encoder.to_flat();
            f.extend(decoder.to_flat());
            f
        }
        Model::Sfa(_) => unreachable!("sfa models are not trained by gradient ascent"),
    }
}

fn set_model_flat(model: &mut Model, flat: &[f64]) {
    match model {
        Model::Linear(p) => p.set_flat(flat),
        Model::Mlp { encoder, decoder } => {
            let k = encoder.param_count();
            encoder.set_flat(&flat[..k]);
            decoder.set_flat(&flat[k..]);
        }
        Model::Sfa(_) => unreachable!("sfa models are not trained by gradient ascent"),
    }
}

/// Result of one MLP gradient pass over a (weighted) batch.
#[derive(Debug, Clone)]
pub struct MlpPass {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    /// Weighted reconstruction estimate and its standard error over MC replicates.
    pub reconstruction: f64,
    pub reconstruction_std_error: f64,
    /// Weighted exact slowness.
    pub slowness: f64,
}

/// Gradient of `Σ_t w_t E[log p(x_t|z_t)] − β Σ_t u_t ½‖g_t − g_{t-1}‖²`
/// with reparameterized samples `z = g(x) + ε`. Noise for time step `t` comes
/// from stream `stream_offset + t` so results do not depend on threading.
#[allow(clippy::too_many_arguments)]
pub fn mlp_gradient(
    encoder: &MlpParams,
    decoder: &MlpParams,
    x: &TimeSeries,
    weights: &SampleWeights,
    beta: f64,
    mc_samples: usize,
    seed: u64,
    stream_offset: u64,
) -> Result<MlpPass> {
    let t_len = x.len();
    if weights.points.len() != t_len || weights.pairs.len() + 1 != t_len {
        return Err(Error::Shape("weights do not match series".into()));
    }
    let forward: Vec<_> = (0..t_len)
        .into_par_iter()
        .map(|t| encoder.forward(x.row(t)))
        .collect::<Result<_>>()?;
    let g: Vec<&Vec<f64>> = forward.iter().map(|(y, _)| y).collect();
    let d = encoder.output_dim();
    let s_count = mc_samples as f64;

    let per_point: Vec<(MlpGrads, MlpGrads, Vec<f64>)> = (0..t_len)
        .into_par_iter()
        .map(|t| -> Result<_> {
            let x_t = x.row(t);
            let w_t = weights.points[t];
            let mut dec_g = MlpGrads::zeros_like(decoder);
            let mut dh = vec![0.0; d];
            let mut logps = vec![0.0; mc_samples];
            let mut r = rng::stream(seed, streams::TRAIN_BASE + stream_offset + t as u64);
            let mut z = vec![0.0; d];
            if w_t != 0.0 {
                for lp in logps.iter_mut() {
                    for (zj, gj) in z.iter_mut().zip(g[t]) {
                        *zj = gj + rng::normal(&mut r);
                    }
                    let (mean, tape) = decoder.forward(&z)?;
                    let resid = linalg::sub_vec(x_t, &mean);
                    *lp = w_t * elbo::log_gaussian_density(x_t, &mean)?;
                    let up: Vec<f64> = resid.iter().map(|v| v * w_t / s_count).collect();
                    let (gd, dz) = decoder.backward(&tape, &up)?;
                    dec_g.add_assign(&gd);
                    dh.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                }
            }
            if t > 0 {
                let u = beta * weights.pairs[t - 1];
                for j in 0..d {
                    dh[j] -= u * (g[t][j] - g[t - 1][j]);
                }
            }
            if t + 1 < t_len {
                let u = beta * weights.pairs[t];
                for j in 0..d {
                    dh[j] -= u * (g[t][j] - g[t + 1][j]);
                }
            }
            let (enc_g, _) = encoder.backward(&forward[t].1, &dh)?;
            Ok((enc_g, dec_g, logps))
        })
        .collect::<Result<_>>()?;

    let mut enc_total = MlpGrads::zeros_like(encoder);
    let mut dec_total = MlpGrads::zeros_like(decoder);
    let mut replicate_totals = vec![0.0; mc_samples];
    for (eg, dg, lps) in &per_point {
        enc_total.add_assign(eg);
        dec_total.add_assign(dg);
        replicate_totals.iter_mut().zip(lps).for_each(|(a, b)| *a += b);
    }
    let mean = replicate_totals.iter().sum::<f64>() / s_count;
    let std_error = if mc_samples > 1 {
        let var = replicate_totals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s_count - 1.0);
        (var / s_count).sqrt()
    } else {
        0.0
    };
    let slowness = (1..t_len)
        .map(|t| 0.5 * weights.pairs[t - 1] * elbo::squared_distance(g[t], g[t - 1]))
        .sum();
    Ok(MlpPass {
        encoder: enc_total,
        decoder: dec_total,
        reconstruction: mean,
        reconstruction_std_error: std_error,
        slowness,
    })
}

fn linear_breakdown(p: &LinearVsfaParams, m: &Moments, beta: f64) -> Result<ElboBreakdown> {
    let parts = linear_vsfa::closed_form_parts(p, m)?;
    Ok(ElboBreakdown::new(parts.reconstruction, 0.0, parts.slowness, beta, 0))
}

struct StepOutcome {
    grad: Vec<f64>,
    /// Number of observations the gradient sums over (used for scaling).
    weight: f64,
    breakdown: Option<ElboBreakdown>,
}

/// Maximizes the β-weighted ELBO.
///
/// The optimizer is fed the gradient divided by the number of observations in
/// the batch, so learning rates do not depend on `T`; convergence is judged
/// on the norm of the unscaled gradient of the summed objective. Linear
/// models use the exact expectation (moments for full batches, per-sample
/// sums for windows); MLP models use `mc_samples` reparameterized draws per
/// point and step. In windowed mode each step uses one window, cycling in
/// order, with its gradient multiplied by the window count.
pub fn train(cfg: &TrainConfig, x: &TimeSeries) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let m = series::moments(x)?;
    let mut model = init_model(cfg, x, &m)?;
    let mut flat = model_flat(&model);
    let mut opt = Optimizer::new(cfg.optimizer, flat.len());
    let t_len = x.len();

    let plan = match cfg.batch {
        BatchMode::Full => None,
        BatchMode::Windows { length, stride } => Some(window_plan(t_len, length, stride)?),
    };
    let slices: Vec<TimeSeries> = match &plan {
        Some(p) => p.windows.iter().map(|r| x.slice(r.clone())).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let full_weights = SampleWeights::uniform(t_len);

    let compute = |model: &Model, step: usize| -> Result<StepOutcome> {
        match (model, &plan) {
            (Model::Linear(p), None) => {
                let g = linear_vsfa::analytic_gradient_weighted(p, &m, cfg.beta)?;
                Ok(StepOutcome {
                    grad: g.to_flat(),
                    weight: t_len as f64,
                    breakdown: None,
                })
            }
            (Model::Linear(p), Some(plan)) => {
                let k = step % plan.windows.len();
                let g = linear_vsfa::per_sample_gradient(p, &slices[k], &plan.weights[k], cfg.beta)?;
                let scale = plan.windows.len() as f64;
                let weight: f64 = plan.weights[k].points.iter().sum::<f64>() * scale;
                Ok(StepOutcome {
                    grad: g.to_flat().into_iter().map(|v| v * scale).collect(),
                    weight,
                    breakdown: None,
                })
            }
            (Model::Mlp { encoder, decoder }, plan) => {
                let (xs, w, scale, offset) = match plan {
                    None => (x, &full_weights, 1.0, 0u64),
                    Some(plan) => {
                        let k = step % plan.windows.len();
                        (
                            &slices[k],
                            &plan.weights[k],
                            plan.windows.len() as f64,
                            plan.windows[k].start as u64,
                        )
                    }
                };
                let stream = step as u64 * t_len as u64 + offset;
                let pass = mlp_gradient(encoder, decoder, xs, w, cfg.beta, cfg.mc_samples, cfg.seed, stream)?;
                let mut grad = pass.encoder.to_flat();
                grad.extend(pass.decoder.to_flat());
                grad.iter_mut().for_each(|v| *v *= scale);
                let weight = w.points.iter().sum::<f64>() * scale;
                let breakdown = ElboBreakdown::new(
                    scale * pass.reconstruction,
                    scale * pass.reconstruction_std_error,
                    scale * pass.slowness,
                    cfg.beta,
                    cfg.mc_samples,
                );
                Ok(StepOutcome {
                    grad,
                    weight,
                    breakdown: Some(breakdown),
                })
            }
            (Model::Sfa(_), _) => unreachable!("sfa models are not trained"),
        }
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut steps = 0;
    let mut last_good = model.clone();
    let mut grad_norm = f64::INFINITY;
    for step in 0..=cfg.max_steps {
        let out = compute(&model, step)?;
        grad_norm = linalg::norm(&out.grad);
        let breakdown = match (&model, out.breakdown) {
            (Model::Linear(p), _) => linear_breakdown(p, &m, cfg.beta)?,
            (_, Some(b)) => b,
            _ => unreachable!(),
        };
        if !grad_norm.is_finite() || !breakdown.total.is_finite() {
            return Err(Error::Diverged {
                step,
                reason: format!("non-finite objective {} or gradient norm {grad_norm}", breakdown.total),
                last_finite: Box::new(last_good),
            });
        }
        let done = grad_norm < cfg.grad_tolerance || step == cfg.max_steps;
        if step % cfg.history_stride == 0 || done {
            history.push(HistoryEntry {
                step,
                elbo: breakdown,
                grad_norm,
            });
        }
        steps = step;
        if grad_norm < cfg.grad_tolerance {
            converged = true;
            break;
        }
        if step == cfg.max_steps {
            break;
        }
        last_good = model.clone();
        let scaled: Vec<f64> = out.grad.iter().map(|g| g / out.weight).collect();
        opt.ascend(&mut flat, &scaled);
        set_model_flat(&mut model, &flat);
    }

    let (final_elbo, stationarity, final_grad_norm) = match &model {
        Model::Linear(p) => {
            let g = linear_vsfa::analytic_gradient_weighted(p, &m, cfg.beta)?;
            (
                linear_breakdown(p, &m, cfg.beta)?,
                Some(linear_vsfa::stationarity_residual_weighted(p, &m, cfg.beta)?),
                g.norm(),
            )
        }
        _ => {
            let enc = model.encoder().expect("mlp encoder");
            let dec = model.decoder().expect("mlp decoder");
            let e = elbo::elbo(&enc, &dec, x, cfg.beta, cfg.mc_samples, cfg.seed)?;
            (e, None, grad_norm)
        }
    };
    Ok(TrainReport {
        config: cfg.clone(),
        history,
        model,
        steps,
        converged,
        final_grad_norm,
        final_elbo,
        stationarity,
        windows: plan.map(|p| {
            let (length, stride) = match cfg.batch {
                BatchMode::Windows { length, stride } => (length, stride),
                BatchMode::Full => unreachable!(),
            };
            WindowSummary {
                count: p.windows.len(),
                length,
                stride,
                dropped_pairs: p.dropped_pairs.len(),
                dropped_points: p.dropped_points.len(),
            }
        }),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Summed linear gradient over the windows of a plan, each with its
/// deduplicating weights.
pub fn windowed_linear_gradient(
    p: &LinearVsfaParams,
    x: &TimeSeries,
    plan: &WindowPlan,
    beta: f64,
) -> Result<LinearGradients> {
    let (n, d) = p.w.shape();
    let mut total = LinearGradients::zeros(n, d);
    for (r, w) in plan.windows.iter().zip(&plan.weights) {
        total.add_assign(&linear_vsfa::per_sample_gradient(p, &x.slice(r.clone())?, w, beta)?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model_kind: String,
    pub per_feature_slowness: Vec<f64>,
    pub feature_covariance: Matrix,
    /// `max_i |var_i − 1|`.
    pub unit_variance_violation: f64,
    /// `max_{i≠j} |corr_ij|`.
    pub decorrelation_violation: f64,
    /// Mean squared entry of `x − f(g(x))`; absent for models without a decoder.
    pub reconstruction_mse: Option<f64>,
    /// For each ground-truth driver, the largest `|corr|` with any feature.
    pub driver_correlations: Option<Vec<f64>>,
    /// Principal angles (degrees, ascending) between the model's input-space
    /// subspace and the classic SFA subspace of the same dimension.
    pub principal_angles_deg: Option<Vec<f64>>,
}

/// Computes feature statistics of `model` on `x`. `drivers` enables the
/// driver-correlation metric; `compare_sfa` fits classic SFA on `x` and
/// reports principal angles for linear models.
pub fn evaluate(model: &Model, x: &TimeSeries, drivers: Option<&TimeSeries>, compare_sfa: bool) -> Result<Metrics> {
    let f = model.features(x)?;
    let k = f.cols();
    let per_feature_slowness = sfa_classic::slowness(&f)?;
    let fm = series::moments_of(&f)?;
    let cov = fm.c;
    let unit_variance_violation = (0..k).map(|i| (cov[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
    let mut decorrelation_violation: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                decorrelation_violation = decorrelation_violation.max(correlation_from_cov(&cov, i, j).abs());
            }
        }
    }
    let reconstruction_mse = match (model.encoder(), model.decoder()) {
        (Some(enc), Some(dec)) => {
            let rec = elbo::reconstruct(&enc, &dec, x.as_matrix())?;
            let diff = rec.sub(x.as_matrix())?;
            Some(diff.as_slice().iter().map(|v| v * v).sum::<f64>() / diff.as_slice().len() as f64)
        }
        _ => None,
    };
    let driver_correlations = match drivers {
        Some(z) => {
            if z.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    op: "driver correlations",
                    left: (x.len(), x.dim()),
                    right: (z.len(), z.dim()),
                });
            }
            Some(
                (0..z.dim())
                    .map(|j| {
                        let zj = z.column(j);
                        (0..k).map(|i| correlation(&zj, &f.column(i)).abs()).fold(0.0, f64::max)
                    })
                    .collect(),
            )
        }
        None => None,
    };
    let principal_angles_deg = match (compare_sfa, model.linear_subspace()) {
        (true, Some(basis)) => {
            let reference = sfa_classic::fit(x, k)?;
            Some(
                linalg::principal_angles(basis, &reference.w)?
                    .into_iter()
                    .map(f64::to_degrees)
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(Metrics {
        model_kind: model.kind().to_string(),
        per_feature_slowness,
        feature_covariance: cov,
        unit_variance_violation,
        decorrelation_violation,
        reconstruction_mse,
        driver_correlations,
        principal_angles_deg,
    })
}

fn correlation_from_cov(cov: &Matrix, i: usize, j: usize) -> f64 {
    let denom = (cov[(i, i)] * cov[(j, j)]).sqrt();
    if denom > 0.0 {
        cov[(i, j)] / denom
    } else {
        0.0
    }
}

/// Pearson correlation; 0 when either input is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}
