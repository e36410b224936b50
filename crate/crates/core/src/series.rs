//! Time series container, moment computation, synthetic generators with known
//! slow drivers, and CSV I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, streams};

/// An ordered `T × n` observation process; row `t` is `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: Matrix,
    names: Vec<String>,
}

impl TimeSeries {
    pub fn new(data: Matrix) -> Result<Self> {
        let names = (1..=data.cols()).map(|i| format!("x{i}")).collect();
        Self::with_names(data, names)
    }

    pub fn with_names(data: Matrix, names: Vec<String>) -> Result<Self> {
        if data.rows() < 2 {
            return Err(Error::TooShort(data.rows()));
        }
        if names.len() != data.cols() {
            return Err(Error::Shape(format!(
                "{} column names for {} columns",
                names.len(),
                data.cols()
            )));
        }
        data.check_finite()?;
        Ok(Self { data, names })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Number of time steps `T`.
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Observation dimension `n`.
    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.data.row(t)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j)
    }

    /// Contiguous copy of rows `range`; fails if fewer than 2 rows remain.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {range:?} out of bounds for T={}",
                self.len()
            )));
        }
        Self::with_names(self.data.select_rows(range), self.names.clone())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    /// Parses the CSV layout: header row of names, then one comma-separated
    /// row of decimal values per time step. Row indices in errors are
    /// 1-based file lines (the header is line 1).
    pub fn read_csv(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Csv {
                row: 1,
                col: 0,
                msg: e.to_string(),
            })?
            .iter()
            .map(str::to_owned)
            .collect();
        let n = names.len();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| Error::Csv {
                row: line,
                col: 0,
                msg: e.to_string(),
            })?;
            if record.len() != n {
                return Err(Error::Csv {
                    row: line,
                    col: record.len().min(n),
                    msg: format!("expected {n} fields, found {}", record.len()),
                });
            }
            for (j, cell) in record.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Csv {
                    row: line,
                    col: j + 1,
                    msg: format!("not a number: {cell:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv {
                        row: line,
                        col: j + 1,
                        msg: format!("non-finite value {cell:?}"),
                    });
                }
                data.push(v);
            }
            rows += 1;
        }
        if rows < 2 {
            return Err(Error::TooShort(rows));
        }
        Self::with_names(Matrix::new(rows, n, data)?, names)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.names, &self.data)
    }
}

/// Writes a header plus one row per matrix row. Values use Rust's shortest
/// round-trip float formatting, so reloading reproduces them exactly.
pub fn write_csv(path: impl AsRef<Path>, names: &[String], data: &Matrix) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(file, names, data)
}

pub fn write_csv_to(writer: impl std::io::Write, names: &[String], data: &Matrix) -> Result<()> {
    if names.len() != data.cols() {
        return Err(Error::Shape(format!(
            "{} column names for {} columns",
            names.len(),
            data.cols()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(names).map_err(csv_err)?;
    for r in 0..data.rows() {
        w.write_record(data.row(r).iter().map(|v| format!("{v:?}")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// First and second moments of a series.
///
/// `c` is normalized by `T`; `c_lag` and `c_dot` have `T-1` summands and are
/// normalized by `T-1`. All second moments use centered data (the mean
/// cancels in `c_dot`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub c: Matrix,
    pub c_lag: Matrix,
    pub c_dot: Matrix,
    /// Number of time steps `T` the moments were computed from.
    pub samples: usize,
}

impl Moments {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Difference second moment with the per-observation normalization
    /// `(1/T) Σ_{t=2..T} Δx_t Δx_tᵀ`, i.e. `c_dot · (T-1)/T`.
    pub fn c_dot_per_observation(&self) -> Matrix {
        let t = self.samples as f64;
        self.c_dot.scale((t - 1.0) / t)
    }

    /// Raw (uncentered) second moment `(1/T) Σ x_t x_tᵀ = C + x̄ x̄ᵀ`.
    pub fn raw_second_moment(&self) -> Matrix {
        let mut s = self.c.clone();
        s.axpy(1.0, &linalg::outer(&self.mean, &self.mean));
        s
    }
}

pub fn moments(x: &TimeSeries) -> Result<Moments> {
    moments_of(x.as_matrix())
}

/// [`moments`] on a raw matrix whose rows are time steps.
pub fn moments_of(x: &Matrix) -> Result<Moments> {
    let t = x.rows();
    let n = x.cols();
    if t < 2 {
        return Err(Error::TooShort(t));
    }
    let mut mean = vec![0.0; n];
    for r in 0..t {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);

    let mut c = Matrix::zeros(n, n);
    let mut c_lag = Matrix::zeros(n, n);
    let mut c_dot = Matrix::zeros(n, n);
    let mut prev = linalg::sub_vec(x.row(0), &mean);
    for i in 0..n {
        for j in 0..n {
            c[(i, j)] += prev[i] * prev[j];
        }
    }
    for r in 1..t {
        let cur = linalg::sub_vec(x.row(r), &mean);
        for i in 0..n {
            let di = cur[i] - prev[i];
            for j in 0..n {
                c[(i, j)] += cur[i] * cur[j];
                c_lag[(i, j)] += cur[i] * prev[j];
                c_dot[(i, j)] += di * (cur[j] - prev[j]);
            }
        }
        prev = cur;
    }
    Ok(Moments {
        mean,
        c: c.scale(1.0 / t as f64),
        c_lag: c_lag.scale(1.0 / (t - 1) as f64),
        c_dot: c_dot.scale(1.0 / (t - 1) as f64),
        samples: t,
    })
}

/// How slow drivers are mapped to observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "matrix", rename_all = "snake_case")]
pub enum Mixing {
    /// `x = A z`, `A` is `n × d`.
    Linear(Matrix),
    /// `x = A m(z)` where `m(z)` stacks the `d` linear terms followed by the
    /// `d(d+1)/2` products `z_i z_j`, `i ≤ j`. `A` is `n × (d + d(d+1)/2)`.
    Polynomial(Matrix),
}

impl Mixing {
    pub fn matrix(&self) -> &Matrix {
        match self {
            Mixing::Linear(a) | Mixing::Polynomial(a) => a,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.matrix().rows()
    }

    fn features(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Mixing::Linear(_) => z.to_vec(),
            Mixing::Polynomial(_) => polynomial_features(z),
        }
    }
}

pub fn polynomial_feature_count(d: usize) -> usize {
    d + d * (d + 1) / 2
}

fn polynomial_features(z: &[f64]) -> Vec<f64> {
    let mut f = z.to_vec();
    for i in 0..z.len() {
        for j in i..z.len() {
            f.push(z[i] * z[j]);
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub d_slow: usize,
    /// AR(1) coefficients per driver. Must be strictly decreasing, which
    /// makes the drivers' slownesses `2(1-α)` strictly increasing.
    pub timescales: Vec<f64>,
    pub mixing: Mixing,
    pub noise_std: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.t < 2 {
            return bad(format!("T must be at least 2, got {}", self.t));
        }
        if self.d_slow == 0 {
            return bad("need at least one slow driver".into());
        }
        if self.timescales.len() != self.d_slow {
            return bad(format!(
                "{} timescales for {} drivers",
                self.timescales.len(),
                self.d_slow
            ));
        }
        if let Some(a) = self.timescales.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("timescale {a} outside (0, 1)"));
        }
        if self.timescales.windows(2).any(|w| w[0] <= w[1]) {
            return bad(format!(
                "timescales {:?} are not strictly decreasing (driver slownesses must be distinct and ascending)",
                self.timescales
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        let a = self.mixing.matrix();
        let expected_cols = match self.mixing {
            Mixing::Linear(_) => self.d_slow,
            Mixing::Polynomial(_) => polynomial_feature_count(self.d_slow),
        };
        if a.cols() != expected_cols {
            return bad(format!(
                "mixing matrix has {} columns, expected {expected_cols}",
                a.cols()
            ));
        }
        if a.rows() == 0 {
            return bad("mixing matrix has no rows".into());
        }
        a.check_finite()?;
        let full = a.rows().min(a.cols());
        let rank = numerical_rank(a)?;
        let need = match self.mixing {
            Mixing::Linear(_) => a.cols(),
            Mixing::Polynomial(_) => full,
        };
        if rank < need {
            return bad(format!("mixing matrix has rank {rank}, need {need}"));
        }
        Ok(())
    }
}

fn numerical_rank(a: &Matrix) -> Result<usize> {
    let gram = if a.rows() >= a.cols() {
        linalg::matmul_tn(a, a)?
    } else {
        linalg::matmul(a, &a.transpose())?
    };
    let eig = linalg::sym_eig(&gram)?;
    let max = eig.values.last().copied().unwrap_or(0.0);
    Ok(eig.values.iter().filter(|&&v| v > 1e-10 * max && v > 0.0).count())
}

/// Random `n × cols` mixing matrix with standard normal entries, drawn from
/// the seed's mixing stream.
pub fn random_mixing(n: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, streams::MIXING);
    Matrix::from_fn(n, cols, |_, _| rng::normal(&mut r))
}

/// Generates unit-variance AR(1) drivers `z_t = α z_{t-1} + √(1-α²) ε_t`
/// (started from the stationary distribution) and their noisy mixture.
pub fn generate(spec: &GeneratorSpec) -> Result<(TimeSeries, TimeSeries)> {
    spec.validate()?;
    let d = spec.d_slow;
    let n = spec.mixing.output_dim();
    let mut drng = rng::stream(spec.seed, streams::DRIVERS);
    let mut nrng = rng::stream(spec.seed, streams::NOISE);
    let a = spec.mixing.matrix();

    let mut drivers = Matrix::zeros(spec.t, d);
    let mut observed = Matrix::zeros(spec.t, n);
    for t in 0..spec.t {
        for (j, &alpha) in spec.timescales.iter().enumerate() {
            let eps = rng::normal(&mut drng);
            drivers[(t, j)] = if t == 0 {
                eps
            } else {
                alpha * drivers[(t - 1, j)] + (1.0 - alpha * alpha).sqrt() * eps
            };
        }
        let feats = spec.mixing.features(drivers.row(t));
        let mixed = a.matvec(&feats)?;
        for (i, v) in mixed.into_iter().enumerate() {
            let noise = if spec.noise_std > 0.0 {
                spec.noise_std * rng::normal(&mut nrng)
            } else {
                0.0
            };
            observed[(t, i)] = v + noise;
        }
    }
    let dnames = (1..=d).map(|i| format!("z{i}")).collect();
    Ok((TimeSeries::with_names(drivers, dnames)?, TimeSeries::new(observed)?))
}
