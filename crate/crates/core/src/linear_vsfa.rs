//! The linear Gaussian case: `q(z|x) = N(Wᵀx + b, I)`, `p(x|z) = N(Vz + o, I)`.
//!
//! Taking the expectation over `z` analytically, the objective is
//!
//! ```text
//! L = c − (T/2) Tr(VᵀV) − ½ Σ_t ‖x_t − x̃_t‖² − ½ Σ_{t=2..T} ‖Wᵀ(x_t − x_{t-1})‖²
//! x̃_t = V Wᵀ x_t + V b + o,   c = −(T n / 2) log 2π
//! ```
//!
//! The reconstruction part is expanded into traces against the raw second
//! moment `S = (1/T) Σ x xᵀ` and the mean `x̄`, so it is exact for any `T`. The
//! slowness part uses the difference moment `Ċ` (normalized by `T−1`) and is
//! exact as well: `Σ_{t≥2} ‖WᵀΔx_t‖² = (T−1) Tr(WᵀĊW)`.
//!
//! Gradients follow the per-term derivative table of the trace expansion.
//! One entry of that table, `∂/∂V` of `2 Tr(W VᵀV b x̄ᵀ)`, is
//! `2 V b x̄ᵀ W + 2 V Wᵀ x̄ bᵀ` (both summands carry the factor 2); this is what
//! finite differences confirm and what is implemented.
//!
//! Stationary points satisfy `o = x̄ − V Wᵀ x̄ − V b` and `VᵀV = Wᵀ Ċ_T W`,
//! where `Ċ_T = (1/T) Σ_{t≥2} Δx Δxᵀ` is the difference moment on the same
//! per-observation scale as the reconstruction sum.

use serde::{Deserialize, Serialize};

use crate::elbo::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng;
use crate::series::{Moments, TimeSeries};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearVsfaParams {
    /// `n × d`; the encoder mean is `Wᵀx + b`.
    pub w: Matrix,
    pub b: Vec<f64>,
    /// `n × d`; the decoder mean is `Vz + o`.
    pub v: Matrix,
    pub o: Vec<f64>,
}

impl LinearVsfaParams {
    pub fn new(w: Matrix, b: Vec<f64>, v: Matrix, o: Vec<f64>) -> Result<Self> {
        let p = Self { w, b, v, o };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.w.shape();
        if self.v.shape() != (n, d) || self.b.len() != d || self.o.len() != n {
            return Err(Error::Shape(format!(
                "inconsistent linear parameters: W {:?}, b {}, V {:?}, o {}",
                self.w.shape(),
                self.b.len(),
                self.v.shape(),
                self.o.len()
            )));
        }
        self.w.check_finite()?;
        self.v.check_finite()?;
        if self.b.iter().chain(&self.o).any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite offset".into()));
        }
        Ok(())
    }

    /// Standard normal entries scaled by `scale`, drawn from `(seed, stream)`.
    pub fn random(n: usize, d: usize, scale: f64, seed: u64, stream: u64) -> Self {
        let mut r = rng::stream(seed, stream);
        let mut draw = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| scale * rng::normal(&mut r));
        let w = draw(n, d);
        let b = draw(1, d).into_vec();
        let v = draw(n, d);
        let o = draw(1, n).into_vec();
        Self { w, b, v, o }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn encoder(&self) -> Encoder {
        Encoder::Linear {
            w: self.w.clone(),
            b: self.b.clone(),
        }
    }

    pub fn decoder(&self) -> Decoder {
        Decoder::Linear {
            v: self.v.clone(),
            o: self.o.clone(),
        }
    }

    /// `(sW, sb, V/s, o)`: rescales the latent space while leaving the
    /// deterministic reconstruction unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            w: self.w.scale(s),
            b: self.b.iter().map(|v| v * s).collect(),
            v: self.v.scale(1.0 / s),
            o: self.o.clone(),
        }
    }

    /// `W`, `b`, `V`, `o` concatenated (matrices row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(&self.b);
        out.extend_from_slice(self.v.as_slice());
        out.extend_from_slice(&self.o);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let (n, d) = self.w.shape();
        let mut off = 0;
        self.w.as_mut_slice().copy_from_slice(&flat[off..off + n * d]);
        off += n * d;
        self.b.copy_from_slice(&flat[off..off + d]);
        off += d;
        self.v.as_mut_slice().copy_from_slice(&flat[off..off + n * d]);
        off += n * d;
        self.o.copy_from_slice(&flat[off..off + n]);
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_flat(flat);
        p
    }

    pub fn param_count(&self) -> usize {
        let (n, d) = self.w.shape();
        2 * n * d + n + d
    }

    /// `x̃ = V Wᵀ x + V b + o`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.decoder().decode(&self.encoder().encode(x)?)
    }

    /// The offset that satisfies the stationarity condition for `o` given the
    /// other parameters: `x̄ − V Wᵀ x̄ − V b`.
    pub fn optimal_offset(&self, mean: &[f64]) -> Result<Vec<f64>> {
        let h = self.encoder().encode(mean)?;
        let vh = self.v.matvec(&h)?;
        Ok(mean.iter().zip(vh).map(|(m, v)| m - v).collect())
    }
}

/// Gradients with the shapes of [`LinearVsfaParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGradients {
    pub d_w: Matrix,
    pub d_b: Vec<f64>,
    pub d_v: Matrix,
    pub d_o: Vec<f64>,
}

impl LinearGradients {
    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            d_w: Matrix::zeros(n, d),
            d_b: vec![0.0; d],
            d_v: Matrix::zeros(n, d),
            d_o: vec![0.0; n],
        }
    }

    /// Same layout as [`LinearVsfaParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.d_w.as_slice());
        out.extend_from_slice(&self.d_b);
        out.extend_from_slice(self.d_v.as_slice());
        out.extend_from_slice(&self.d_o);
        out
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.to_flat())
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.d_w.axpy(1.0, &other.d_w);
        self.d_v.axpy(1.0, &other.d_v);
        self.d_b.iter_mut().zip(&other.d_b).for_each(|(a, b)| *a += b);
        self.d_o.iter_mut().zip(&other.d_o).for_each(|(a, b)| *a += b);
    }
}

/// The objective split into its parts; `total = reconstruction − slowness`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearObjective {
    /// Exact `Σ_t E_q[log p(x_t|z_t)]`, including the constant `c`.
    pub reconstruction: f64,
    /// `½ Σ_{t≥2} ‖WᵀΔx_t‖²`.
    pub slowness: f64,
    pub total: f64,
}

fn check_shapes(p: &LinearVsfaParams, n: usize) -> Result<()> {
    p.validate()?;
    if p.input_dim() != n {
        return Err(Error::DimensionMismatch {
            op: "linear vsfa",
            left: p.w.shape(),
            right: (n, n),
        });
    }
    Ok(())
}

/// Evaluates the objective from moments alone.
pub fn closed_form_objective(p: &LinearVsfaParams, m: &Moments) -> Result<f64> {
    Ok(closed_form_parts(p, m)?.total)
}

pub fn closed_form_parts(p: &LinearVsfaParams, m: &Moments) -> Result<LinearObjective> {
    let n = m.dim();
    check_shapes(p, n)?;
    let t = m.samples as f64;
    let s = m.raw_second_moment();
    let xbar = &m.mean;
    let (w, v, b, o) = (&p.w, &p.v, &p.b, &p.o);

    let vtv = linalg::matmul_tn(v, v)?;
    let sw = linalg::matmul(&s, w)?;
    let wtsw = linalg::matmul_tn(w, &sw)?;
    let wtx = w.matvec_t(xbar)?;
    let vb = v.matvec(b)?;
    let vwtx = v.matvec(&wtx)?;

    // Part A bracket, one entry per trace term.
    let terms = [
        s.trace(),
        -2.0 * frob_inner(v, &sw),
        -2.0 * linalg::dot(xbar, &vb),
        -2.0 * linalg::dot(xbar, o),
        frob_inner(&vtv, &wtsw),
        2.0 * linalg::dot(&vwtx, &vb),
        2.0 * linalg::dot(&vwtx, o),
        linalg::dot(&vb, &vb),
        2.0 * linalg::dot(o, &vb),
        linalg::dot(o, o),
        vtv.trace(),
    ];
    let part_a = -0.5 * t * terms.iter().sum::<f64>();
    let constant = -0.5 * t * n as f64 * LN_2PI;
    let wtcw = linalg::matmul_tn(w, &linalg::matmul(&m.c_dot, w)?)?;
    let slowness = 0.5 * (t - 1.0) * wtcw.trace();
    let reconstruction = constant + part_a;
    Ok(LinearObjective {
        reconstruction,
        slowness,
        total: reconstruction - slowness,
    })
}

/// `Σ_ij a_ij b_ij = Tr(aᵀ b)`.
fn frob_inner(a: &Matrix, b: &Matrix) -> f64 {
    linalg::dot(a.as_slice(), b.as_slice())
}

/// The same objective by direct summation over time, with the expectation
/// over `ε` taken analytically (`E‖s − Vε‖² = ‖s‖² + Tr(VᵀV)`).
pub fn per_sample_objective(p: &LinearVsfaParams, x: &TimeSeries) -> Result<f64> {
    Ok(per_sample_parts(p, x)?.total)
}

pub fn per_sample_parts(p: &LinearVsfaParams, x: &TimeSeries) -> Result<LinearObjective> {
    check_shapes(p, x.dim())?;
    let t_len = x.len();
    let n = x.dim();
    let tr_vtv: f64 = p.v.as_slice().iter().map(|v| v * v).sum();
    let mut rec = 0.0;
    let mut slow = 0.0;
    for t in 0..t_len {
        let xr = p.reconstruct(x.row(t))?;
        let res: f64 = x.row(t).iter().zip(&xr).map(|(a, b)| (a - b) * (a - b)).sum();
        rec += res + tr_vtv;
        if t > 0 {
            let diff = linalg::sub_vec(x.row(t), x.row(t - 1));
            let wd = p.w.matvec_t(&diff)?;
            slow += linalg::dot(&wd, &wd);
        }
    }
    let constant = -0.5 * (t_len * n) as f64 * LN_2PI;
    let reconstruction = constant - 0.5 * rec;
    let slowness = 0.5 * slow;
    Ok(LinearObjective {
        reconstruction,
        slowness,
        total: reconstruction - slowness,
    })
}

/// Gradient of [`closed_form_objective`], assembled term by term from the
/// derivatives of the trace expansion (each scaled by `−T/2`) plus the
/// slowness contribution `−(T−1) Ċ W`.
pub fn analytic_gradient(p: &LinearVsfaParams, m: &Moments) -> Result<LinearGradients> {
    analytic_gradient_weighted(p, m, 1.0)
}

/// Like [`analytic_gradient`] with the slowness part scaled by `beta`.
pub fn analytic_gradient_weighted(p: &LinearVsfaParams, m: &Moments, beta: f64) -> Result<LinearGradients> {
    let n = m.dim();
    check_shapes(p, n)?;
    let t = m.samples as f64;
    let s = m.raw_second_moment();
    let xbar = &m.mean;
    let (w, v, b, o) = (&p.w, &p.v, &p.b, &p.o);
    let d = w.cols();

    let vtv = linalg::matmul_tn(v, v)?;
    let sw = linalg::matmul(&s, w)?; // S W, n × d
    let wtsw = linalg::matmul_tn(w, &sw)?;
    let wtx = w.matvec_t(xbar)?; // Wᵀx̄
    let vb = v.matvec(b)?;
    let vwtx = v.matvec(&wtx)?;
    let xbar_m = Matrix::column_vector(xbar);
    let b_m = Matrix::column_vector(b);
    let o_m = Matrix::column_vector(o);

    // ∂/∂V, bracket of the table rows.
    let mut dv = sw.scale(-2.0);
    dv.axpy(-2.0, &linalg::outer(xbar, b));
    dv.axpy(2.0, &linalg::matmul(v, &wtsw)?);
    dv.axpy(2.0, &linalg::outer(&vb, &wtx));
    dv.axpy(2.0, &linalg::outer(&vwtx, b));
    dv.axpy(2.0, &linalg::outer(o, &wtx));
    dv.axpy(2.0, &linalg::outer(&vb, b));
    dv.axpy(2.0, &linalg::outer(o, b));
    dv.axpy(2.0, v);
    let d_v = dv.scale(-0.5 * t);

    // ∂/∂Wᵀ (d × n).
    let vts = linalg::matmul_tn(v, &s)?;
    let mut dwt = vts.scale(-2.0);
    dwt.axpy(2.0, &linalg::matmul(&vtv, &linalg::matmul_tn(w, &s)?)?);
    dwt.axpy(2.0, &linalg::matmul(&linalg::matmul(&vtv, &b_m)?, &xbar_m.transpose())?);
    dwt.axpy(2.0, &linalg::matmul(&linalg::matmul_tn(v, &o_m)?, &xbar_m.transpose())?);
    let mut d_wt = dwt.scale(-0.5 * t);
    let cdot_w = linalg::matmul(&m.c_dot, w)?;
    d_wt.axpy(-beta * (t - 1.0), &cdot_w.transpose());
    let d_w = d_wt.transpose();

    // ∂/∂o.
    let d_o: Vec<f64> = (0..n)
        .map(|i| -0.5 * t * (-2.0 * xbar[i] + 2.0 * vwtx[i] + 2.0 * vb[i] + 2.0 * o[i]))
        .collect();

    // ∂/∂b.
    let vtx = v.matvec_t(xbar)?;
    let vtv_wtx = vtv.matvec(&wtx)?;
    let vtv_b = vtv.matvec(b)?;
    let vto = v.matvec_t(o)?;
    let d_b: Vec<f64> = (0..d)
        .map(|j| -0.5 * t * (-2.0 * vtx[j] + 2.0 * vtv_wtx[j] + 2.0 * vtv_b[j] + 2.0 * vto[j]))
        .collect();

    Ok(LinearGradients { d_w, d_b, d_v, d_o })
}

/// Per-time-step weights for a partial (windowed) objective: each
/// reconstruction term `t` is weighted by `points[t]` and each slowness pair
/// `(t-1, t)` by `pairs[t-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub points: Vec<f64>,
    pub pairs: Vec<f64>,
}

impl SampleWeights {
    pub fn uniform(t: usize) -> Self {
        Self {
            points: vec![1.0; t],
            pairs: vec![1.0; t.saturating_sub(1)],
        }
    }
}

/// Gradient of the weighted objective by direct summation over time steps
/// (no moments). With uniform weights this equals [`analytic_gradient`].
pub fn per_sample_gradient(
    p: &LinearVsfaParams,
    x: &TimeSeries,
    weights: &SampleWeights,
    beta: f64,
) -> Result<LinearGradients> {
    check_shapes(p, x.dim())?;
    let t_len = x.len();
    if weights.points.len() != t_len || weights.pairs.len() != t_len - 1 {
        return Err(Error::Shape(format!(
            "weights for {} points / {} pairs, series has T={t_len}",
            weights.points.len(),
            weights.pairs.len()
        )));
    }
    let (n, d) = p.w.shape();
    let mut g = LinearGradients::zeros(n, d);
    for t in 0..t_len {
        let x_t = x.row(t);
        let wt = weights.points[t];
        if wt != 0.0 {
            let h = p.encoder().encode(x_t)?;
            let mut s = p.v.matvec(&h)?;
            for i in 0..n {
                s[i] = x_t[i] - s[i] - p.o[i];
            }
            let vts = p.v.matvec_t(&s)?;
            // −½(‖s‖² + Tr VᵀV)
            g.d_o.iter_mut().zip(&s).for_each(|(a, si)| *a += wt * si);
            g.d_b.iter_mut().zip(&vts).for_each(|(a, vi)| *a += wt * vi);
            g.d_v.axpy(wt, &linalg::outer(&s, &h));
            g.d_v.axpy(-wt, &p.v);
            g.d_w.axpy(wt, &linalg::outer(x_t, &vts));
        }
        if t > 0 {
            let u = weights.pairs[t - 1];
            if u != 0.0 {
                let diff = linalg::sub_vec(x_t, x.row(t - 1));
                let wd = p.w.matvec_t(&diff)?;
                g.d_w.axpy(-beta * u, &linalg::outer(&diff, &wd));
            }
        }
    }
    Ok(g)
}

/// Distances from the necessary optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityResidual {
    /// `‖Wᵀ Ċ_T W − VᵀV‖_F`.
    pub r_cond: f64,
    /// `‖o − (x̄ − V Wᵀ x̄ − V b)‖₂`.
    pub r_offset: f64,
}

pub fn stationarity_residual(p: &LinearVsfaParams, m: &Moments) -> Result<StationarityResidual> {
    stationarity_residual_weighted(p, m, 1.0)
}

/// Residuals for the β-weighted objective, whose condition reads
/// `β Wᵀ Ċ_T W = VᵀV`; the offset condition does not involve β.
pub fn stationarity_residual_weighted(p: &LinearVsfaParams, m: &Moments, beta: f64) -> Result<StationarityResidual> {
    check_shapes(p, m.dim())?;
    let c_dot = m.c_dot_per_observation().scale(beta);
    let wcw = linalg::matmul_tn(&p.w, &linalg::matmul(&c_dot, &p.w)?)?;
    let vtv = linalg::matmul_tn(&p.v, &p.v)?;
    let r_cond = linalg::frobenius_norm(&wcw.sub(&vtv)?);
    let target = p.optimal_offset(&m.mean)?;
    let r_offset = linalg::norm(&linalg::sub_vec(&p.o, &target));
    Ok(StationarityResidual { r_cond, r_offset })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gradient_check;
    use crate::series::moments;

    fn random_series(t: usize, n: usize, seed: u64) -> TimeSeries {
        let mut r = rng::stream(seed, 0);
        let mut prev = vec![0.0; n];
        let data = Matrix::from_fn(t, n, |_, c| {
            prev[c] = 0.8 * prev[c] + rng::normal(&mut r);
            prev[c] + 0.5 * c as f64
        });
        TimeSeries::new(data).unwrap()
    }

    #[test]
    fn zero_maps_give_centered_residual() {
        let x = random_series(100, 3, 1);
        let m = moments(&x).unwrap();
        let p = LinearVsfaParams::new(Matrix::zeros(3, 2), vec![0.0; 2], Matrix::zeros(3, 2), m.mean.clone()).unwrap();
        let l = closed_form_objective(&p, &m).unwrap();
        let c = -0.5 * 300.0 * LN_2PI;
        let expected = c - 50.0 * m.c.trace();
        assert!((l - expected).abs() <= 1e-10 * expected.abs());
    }

    #[test]
    fn closed_form_matches_per_sample() {
        for seed in 0..10 {
            let x = random_series(300, 4, seed);
            let m = moments(&x).unwrap();
            let p = LinearVsfaParams::random(4, 2, 0.7, seed, 9);
            let a = closed_form_parts(&p, &m).unwrap();
            let b = per_sample_parts(&p, &x).unwrap();
            assert!((a.total - b.total).abs() <= 1e-8 * b.total.abs(), "{a:?} {b:?}");
            assert!((a.slowness - b.slowness).abs() <= 1e-8 * b.slowness.abs());
        }
    }

    #[test]
    fn constant_series_without_encoder_has_no_slowness() {
        let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, 2.0]).collect();
        let x = TimeSeries::from_rows(&rows).unwrap();
        let mut p = LinearVsfaParams::random(2, 1, 1.0, 1, 1);
        p.w = Matrix::zeros(2, 1);
        let parts = per_sample_parts(&p, &x).unwrap();
        assert_eq!(parts.slowness, 0.0);
    }

    #[test]
    fn whitened_identity_plug_in() {
        // exactly centered, exactly white data
        let n = 2;
        let base = random_series(500, n, 3);
        let m = moments(&base).unwrap();
        let l = linalg::cholesky(&m.c).unwrap();
        let mut white = Matrix::zeros(500, n);
        for t in 0..500 {
            let y = linalg::solve_lower(&l, &linalg::sub_vec(base.row(t), &m.mean));
            white.row_mut(t).copy_from_slice(&y);
        }
        let x = TimeSeries::new(white).unwrap();
        let mw = moments(&x).unwrap();
        let p = LinearVsfaParams::new(Matrix::identity(n), vec![0.0; n], Matrix::identity(n), vec![0.0; n]).unwrap();
        let parts = per_sample_parts(&p, &x).unwrap();
        let c = -0.5 * (500 * n) as f64 * LN_2PI;
        let expected = c - 0.5 * 500.0 * n as f64 - parts.slowness;
        assert!((parts.total - expected).abs() < 1e-8 * expected.abs());
        let cf = closed_form_objective(&p, &mw).unwrap();
        assert!((cf - expected).abs() < 1e-8 * expected.abs());
    }

    #[test]
    fn scale_map_identity() {
        let x = random_series(200, 3, 4);
        let m = moments(&x).unwrap();
        let p = LinearVsfaParams::random(3, 2, 0.5, 4, 1);
        let base = closed_form_parts(&p, &m).unwrap();
        let tr_vtv: f64 = p.v.as_slice().iter().map(|v| v * v).sum();
        let slow_sum = 2.0 * base.slowness;
        for s in [0.5, 2.0] {
            let q = p.scaled(s);
            let l = closed_form_objective(&q, &m).unwrap();
            let predicted = base.total - 100.0 * tr_vtv * (1.0 / (s * s) - 1.0) - 0.5 * (s * s - 1.0) * slow_sum;
            assert!((l - predicted).abs() < 1e-9 * l.abs(), "s={s}");
            for t in [0, 50, 199] {
                let a = p.reconstruct(x.row(t)).unwrap();
                let b = q.reconstruct(x.row(t)).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let x = random_series(150, 3, seed + 100);
            let m = moments(&x).unwrap();
            let p = LinearVsfaParams::random(3, 2, 0.6, seed, 2);
            let g = analytic_gradient(&p, &m).unwrap();
            let loss = |f: &[f64]| closed_form_objective(&p.with_flat(f), &m).unwrap();
            let report = gradient_check(&p.to_flat(), &g.to_flat(), loss, 1e-5, 1e-3);
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn per_sample_gradient_matches_analytic() {
        let x = random_series(80, 4, 5);
        let m = moments(&x).unwrap();
        let p = LinearVsfaParams::random(4, 3, 0.5, 5, 3);
        let a = analytic_gradient(&p, &m).unwrap().to_flat();
        let b = per_sample_gradient(&p, &x, &SampleWeights::uniform(80), 1.0)
            .unwrap()
            .to_flat();
        let scale = linalg::norm(&a);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn gradient_at_zero_maps() {
        let x = random_series(60, 3, 6);
        let m = moments(&x).unwrap();
        let o = vec![0.3, -0.2, 1.0];
        let p = LinearVsfaParams::new(Matrix::zeros(3, 2), vec![0.5, -0.5], Matrix::zeros(3, 2), o.clone()).unwrap();
        let g = analytic_gradient(&p, &m).unwrap();
        assert!(g.d_b.iter().all(|v| *v == 0.0));
        assert!(g.d_w.as_slice().iter().all(|v| *v == 0.0));
        for ((d, o), mean) in g.d_o.iter().zip(&o).zip(&m.mean) {
            assert!((d + 60.0 * (o - mean)).abs() < 1e-10);
        }
    }

    #[test]
    fn constructed_stationary_point() {
        let x = random_series(400, 4, 7);
        let m = moments(&x).unwrap();
        let mut p = LinearVsfaParams::random(4, 2, 0.8, 7, 4);
        let c_dot = m.c_dot_per_observation();
        let target = linalg::matmul_tn(&p.w, &linalg::matmul(&c_dot, &p.w).unwrap()).unwrap();
        let l = linalg::cholesky(&target).unwrap();
        // V = [Lᵀ; 0] gives VᵀV = L Lᵀ.
        let lt = l.transpose();
        p.v = Matrix::from_fn(4, 2, |r, c| if r < 2 { lt[(r, c)] } else { 0.0 });
        p.o = p.optimal_offset(&m.mean).unwrap();
        let r = stationarity_residual(&p, &m).unwrap();
        assert!(r.r_cond < 1e-10 && r.r_offset < 1e-10, "{r:?}");

        let q = LinearVsfaParams::random(4, 2, 0.8, 8, 4);
        let r = stationarity_residual(&q, &m).unwrap();
        assert!(r.r_cond > 1e-6 && r.r_offset > 1e-6);
    }

    #[test]
    fn shape_errors() {
        let x = random_series(20, 3, 1);
        let m = moments(&x).unwrap();
        let p = LinearVsfaParams::random(4, 2, 1.0, 1, 1);
        assert!(closed_form_objective(&p, &m).is_err());
        assert!(analytic_gradient(&p, &m).is_err());
        assert!(stationarity_residual(&p, &m).is_err());
        assert!(per_sample_objective(&p, &x).is_err());
        assert!(LinearVsfaParams::new(Matrix::zeros(3, 2), vec![0.0], Matrix::zeros(3, 2), vec![0.0; 3]).is_err());
    }
}
