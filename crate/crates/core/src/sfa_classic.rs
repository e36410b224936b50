//! Linear slow feature analysis in closed form.
//!
//! The data are whitened with `C^{-1/2}` restricted to the non-null
//! eigen-directions of the covariance, then the whitened difference moment
//! is diagonalized; its smallest-eigenvalue eigenvectors are the slowest
//! unit-variance, decorrelated linear features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::series::{self, TimeSeries};

/// Covariance eigenvalues below `RANK_TOLERANCE · λ_max` are dropped.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfaModel {
    pub mean: Vec<f64>,
    /// `n × k`, column `i` extracts feature `i`, slowest first.
    pub w: Matrix,
    /// Slowness of each feature on the training data, ascending.
    pub delta: Vec<f64>,
}

impl SfaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }
}

pub fn fit(x: &TimeSeries, k: usize) -> Result<SfaModel> {
    let n = x.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k must be in 1..={n}, got {k}")));
    }
    let m = series::moments(x)?;
    let cov = linalg::sym_eig(&m.c)?;
    let max = cov.values.last().copied().unwrap_or(0.0);
    let (kept, discarded): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| max > 0.0 && cov.values[i] > RANK_TOLERANCE * max);
    if kept.is_empty() {
        return Err(Error::RankDeficient {
            msg: "covariance is zero".into(),
            discarded,
        });
    }
    if k > kept.len() {
        return Err(Error::RankDeficient {
            msg: format!("k={k} exceeds effective rank {}", kept.len()),
            discarded,
        });
    }

    // n × r whitening map S with Sᵀ C S = I.
    let mut whiten = cov.vectors.select_columns(&kept);
    for (j, &i) in kept.iter().enumerate() {
        let s = 1.0 / cov.values[i].sqrt();
        for r in 0..n {
            whiten[(r, j)] *= s;
        }
    }
    let c_dot_white = linalg::matmul_tn(&whiten, &linalg::matmul(&m.c_dot, &whiten)?)?.symmetrized();
    let slow = linalg::sym_eig(&c_dot_white)?;
    let first: Vec<usize> = (0..k).collect();
    let mut w = linalg::matmul(&whiten, &slow.vectors.select_columns(&first))?;
    for j in 0..k {
        let col = w.column(j);
        let pivot = col
            .iter()
            .fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            let flipped: Vec<f64> = col.iter().map(|v| -v).collect();
            w.set_column(j, &flipped);
        }
    }
    Ok(SfaModel {
        mean: m.mean,
        w,
        delta: slow.values[..k].to_vec(),
    })
}

/// Row `t` of the result is `wᵀ(x_t − mean)`.
pub fn transform(model: &SfaModel, x: &TimeSeries) -> Result<TimeSeries> {
    if x.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "sfa transform",
            left: (model.input_dim(), model.output_dim()),
            right: (x.len(), x.dim()),
        });
    }
    let k = model.output_dim();
    let mut out = Matrix::zeros(x.len(), k);
    for t in 0..x.len() {
        let centered = linalg::sub_vec(x.row(t), &model.mean);
        let f = model.w.matvec_t(&centered)?;
        out.row_mut(t).copy_from_slice(&f);
    }
    let names = (1..=k).map(|i| format!("y{i}")).collect();
    TimeSeries::with_names(out, names)
}

/// Per-column mean squared one-step difference, `(1/(T-1)) Σ_{t≥2} (f_t − f_{t-1})²`.
pub fn slowness(f: &Matrix) -> Result<Vec<f64>> {
    let t = f.rows();
    if t < 2 {
        return Err(Error::TooShort(t));
    }
    let mut s = vec![0.0; f.cols()];
    for r in 1..t {
        for ((acc, a), b) in s.iter_mut().zip(f.row(r)).zip(f.row(r - 1)) {
            *acc += (a - b) * (a - b);
        }
    }
    s.iter_mut().for_each(|v| *v /= (t - 1) as f64);
    Ok(s)
}
