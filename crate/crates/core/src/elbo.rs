//! The Gaussian state-space model and its evidence lower bound.
//!
//! Prior: `z_t | z_{t-1} ~ N(z_{t-1}, I)` for `t ≥ 2`, with a flat (improper)
//! prior on `z_1`. Variational posterior: `q(z_t | x_t) = N(g(x_t), I)` for an
//! encoder mean `g`. Emission: `p(x_t | z_t) = N(f(z_t), I)` for a decoder
//! mean `f`. Under these choices the ELBO is, up to parameter-free constants,
//!
//! ```text
//! L = Σ_t E_{z_t ~ q}[log p(x_t | z_t)]  −  ½ Σ_{t=2..T} ‖g(x_{t-1}) − g(x_t)‖²
//! ```
//!
//! a per-point reconstruction sum minus a slowness penalty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::net::MlpParams;
use crate::rng::{self, streams, Rng};
use crate::series::TimeSeries;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MC_CHUNK: usize = 512;

/// Random-walk prior with identity transition mean and covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub latent_dim: usize,
}

impl PriorSpec {
    /// Draws `z_2..z_horizon` from the transition starting at `z1`; row 0 is `z1`.
    pub fn sample_path(&self, z1: &[f64], horizon: usize, rng: &mut Rng) -> Result<Matrix> {
        if z1.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                op: "prior path",
                left: (self.latent_dim, 1),
                right: (z1.len(), 1),
            });
        }
        let d = self.latent_dim;
        let mut path = Matrix::zeros(horizon, d);
        if horizon == 0 {
            return Ok(path);
        }
        path.row_mut(0).copy_from_slice(z1);
        for t in 1..horizon {
            for j in 0..d {
                path[(t, j)] = path[(t - 1, j)] + rng::normal(rng);
            }
        }
        Ok(path)
    }
}

/// Mean map `g` of `q(z | x) = N(g(x), I)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    /// `g(x) = Wᵀx + b`, `W` is `n × d`.
    Linear {
        w: Matrix,
        b: Vec<f64>,
    },
    Mlp(MlpParams),
}

impl Encoder {
    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Linear { w, .. } => w.rows(),
            Encoder::Mlp(p) => p.input_dim(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Encoder::Linear { w, .. } => w.cols(),
            Encoder::Mlp(p) => p.output_dim(),
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Encoder::Linear { w, b } => {
                let mut z = w.matvec_t(x)?;
                z.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
                Ok(z)
            }
            Encoder::Mlp(p) => p.apply(x),
        }
    }

    /// Encodes every row; the result is `T × d`.
    pub fn encode_all(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), self.latent_dim());
        for t in 0..x.rows() {
            let z = self.encode(x.row(t))?;
            out.row_mut(t).copy_from_slice(&z);
        }
        Ok(out)
    }
}

/// Mean map `f` of `p(x | z) = N(f(z), I)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    /// `f(z) = V z + o`, `V` is `n × d`.
    Linear {
        v: Matrix,
        o: Vec<f64>,
    },
    Mlp(MlpParams),
}

impl Decoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Linear { v, .. } => v.cols(),
            Decoder::Mlp(p) => p.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Decoder::Linear { v, .. } => v.rows(),
            Decoder::Mlp(p) => p.output_dim(),
        }
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Decoder::Linear { v, o } => {
                let mut x = v.matvec(z)?;
                x.iter_mut().zip(o).for_each(|(a, b)| *a += b);
                Ok(x)
            }
            Decoder::Mlp(p) => p.apply(z),
        }
    }
}

/// A Monte-Carlo mean over independent replicates with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// `Σ_t E_q[log p(x_t | z_t)]`.
    pub reconstruction: f64,
    /// Standard error of `reconstruction`; 0 when computed exactly.
    pub reconstruction_std_error: f64,
    /// `½ Σ_t ‖g(x_{t-1}) − g(x_t)‖²`, always exact.
    pub slowness: f64,
    pub beta: f64,
    /// `reconstruction − beta · slowness`.
    pub total: f64,
    /// Replicates behind `reconstruction`; 0 means it was evaluated in closed form.
    pub mc_samples: usize,
}

impl ElboBreakdown {
    pub fn new(reconstruction: f64, std_error: f64, slowness: f64, beta: f64, mc_samples: usize) -> Self {
        Self {
            reconstruction,
            reconstruction_std_error: std_error,
            slowness,
            beta,
            total: reconstruction - beta * slowness,
            mc_samples,
        }
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            op,
            left: (a, 1),
            right: (b, 1),
        });
    }
    Ok(())
}

/// `log N(x | mean, I) = −(n/2) log 2π − ½‖x − mean‖²`.
pub fn log_gaussian_density(x: &[f64], mean: &[f64]) -> Result<f64> {
    check_len("log_gaussian_density", x.len(), mean.len())?;
    Ok(log_density_unchecked(x, mean))
}

#[inline]
fn log_density_unchecked(x: &[f64], mean: &[f64]) -> f64 {
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * x.len() as f64 * LN_2PI - 0.5 * sq
}

/// `KL(N(μ_q, diag var_q) ‖ N(μ_p, diag var_p))`.
pub fn gaussian_kl(mu_q: &[f64], var_q: &[f64], mu_p: &[f64], var_p: &[f64]) -> Result<f64> {
    let d = mu_q.len();
    check_len("gaussian_kl", d, var_q.len())?;
    check_len("gaussian_kl", d, mu_p.len())?;
    check_len("gaussian_kl", d, var_p.len())?;
    if let Some(v) = var_q.iter().chain(var_p).find(|v| v.is_nan() || **v <= 0.0) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {v}")));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let diff = mu_p[i] - mu_q[i];
        let ratio = var_q[i] / var_p[i];
        kl += diff * diff / var_p[i] + ratio - ratio.ln() - 1.0;
    }
    Ok(0.5 * kl)
}

/// `½ Σ_{t=2..T} ‖g_{t-1} − g_t‖²` over the rows of an encoded series.
pub fn slowness_term(encoded: &Matrix) -> Result<f64> {
    let t = encoded.rows();
    if t < 2 {
        return Err(Error::TooShort(t));
    }
    let mut s = 0.0;
    for r in 1..t {
        for (a, b) in encoded.row(r).iter().zip(encoded.row(r - 1)) {
            s += (a - b) * (a - b);
        }
    }
    Ok(0.5 * s)
}

/// Parameter-free offset `d(T−1)/2` between the expected KL chain and the
/// slowness term.
pub fn kl_chain_offset(latent_dim: usize, t: usize) -> f64 {
    0.5 * latent_dim as f64 * t.saturating_sub(1) as f64
}

/// Monte-Carlo estimate of the KL chain
/// `Σ_{t≥2} E_{z_{t-1} ~ q(·|x_{t-1})}[KL(q(z_t|x_t) ‖ p(z_t|z_{t-1}))]`
/// with the constant `d/2` per pair removed.
///
/// For unit covariances the inner KL is `½‖z_{t-1} − g(x_t)‖²`, whose
/// expectation is `½‖g(x_{t-1}) − g(x_t)‖² + d/2`. Each replicate evaluates
/// `½(‖z_{t-1} − g(x_t)‖² − d)`, so the estimate converges to
/// [`slowness_term`]; add [`kl_chain_offset`] to recover the raw expected KL.
pub fn kl_chain_mc(enc: &Encoder, x: &TimeSeries, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    check_len("kl_chain_mc", enc.input_dim(), x.dim())?;
    let g = enc.encode_all(x.as_matrix())?;
    let d = g.cols();
    let t_len = g.rows();
    Ok(mc_replicates(samples, seed, |rng| {
        let mut total = 0.0;
        for t in 1..t_len {
            let prev = g.row(t - 1);
            let cur = g.row(t);
            let mut sq = 0.0;
            for j in 0..d {
                let z = prev[j] + rng::normal(rng);
                sq += (z - cur[j]) * (z - cur[j]);
            }
            total += 0.5 * (sq - d as f64);
        }
        total
    }))
}

/// Reparameterized Monte-Carlo estimate of `Σ_t E_{z_t ~ q}[log p(x_t | z_t)]`
/// using `z_t = g(x_t) + ε`, `ε ~ N(0, I)`.
pub fn reconstruction_term(
    enc: &Encoder,
    dec: &Decoder,
    x: &TimeSeries,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    check_len("reconstruction_term", enc.input_dim(), x.dim())?;
    check_len("reconstruction_term", enc.latent_dim(), dec.latent_dim())?;
    check_len("reconstruction_term", dec.output_dim(), x.dim())?;
    let g = enc.encode_all(x.as_matrix())?;
    let d = g.cols();
    let mut z = vec![0.0; d];
    Ok(mc_replicates(samples, seed, move |rng| {
        let mut total = 0.0;
        for t in 0..g.rows() {
            for (zj, gj) in z.iter_mut().zip(g.row(t)) {
                *zj = gj + rng::normal(rng);
            }
            let mean = dec.decode(&z).expect("decoder dimensions checked");
            total += log_density_unchecked(x.row(t), &mean);
        }
        total
    }))
}

/// ELBO with a β-weighted slowness term. The slowness part is exact; only the
/// reconstruction expectation is sampled.
pub fn elbo(
    enc: &Encoder,
    dec: &Decoder,
    x: &TimeSeries,
    beta: f64,
    samples: usize,
    seed: u64,
) -> Result<ElboBreakdown> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    let rec = reconstruction_term(enc, dec, x, samples, seed)?;
    let slow = slowness_term(&enc.encode_all(x.as_matrix())?)?;
    Ok(ElboBreakdown::new(rec.mean, rec.std_error, slow, beta, samples))
}

/// Runs `samples` independent replicates of `f`, split into fixed chunks that
/// each own a ChaCha stream, and merges chunk statistics in chunk order so the
/// result does not depend on thread scheduling.
fn mc_replicates<F>(samples: usize, seed: u64, f: F) -> McEstimate
where
    F: FnMut(&mut Rng) -> f64 + Clone + Send + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let stats: Vec<(f64, f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut f = f.clone();
            let mut r = rng::stream(seed, streams::MC_BASE + c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let (mut mean, mut m2) = (0.0, 0.0);
            for i in 0..count {
                let v = f(&mut r);
                let delta = v - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (v - mean);
            }
            (count as f64, mean, m2)
        })
        .collect();
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for (nb, mb, m2b) in stats {
        let total = n + nb;
        let delta = mb - mean;
        mean += delta * nb / total;
        m2 += m2b + delta * delta * n * nb / total;
        n = total;
    }
    let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
    McEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples,
    }
}

/// Rolls the prior forward from `z1` for `horizon` steps and decodes the mean
/// of each latent. Returns `(latents, decoded_means)`, both `horizon` rows.
pub fn sample_generative(dec: &Decoder, z1: &[f64], horizon: usize, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    let prior = PriorSpec {
        latent_dim: dec.latent_dim(),
    };
    let path = prior.sample_path(z1, horizon, rng)?;
    let mut decoded = Matrix::zeros(horizon, dec.output_dim());
    for t in 0..horizon {
        let x = dec.decode(path.row(t))?;
        decoded.row_mut(t).copy_from_slice(&x);
    }
    Ok((path, decoded))
}

/// Deterministic reconstruction `f(g(x_t))` for every row.
pub fn reconstruct(enc: &Encoder, dec: &Decoder, x: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), dec.output_dim());
    for t in 0..x.rows() {
        let xr = dec.decode(&enc.encode(x.row(t))?)?;
        out.row_mut(t).copy_from_slice(&xr);
    }
    Ok(out)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let d = linalg::sub_vec(a, b);
    linalg::dot(&d, &d)
}
