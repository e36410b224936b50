//! Small feed-forward networks (affine layers with tanh or identity
//! activations) and their exact reverse-mode gradients.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Serialized as `{"layers": [{"weight": {"rows", "cols", "data"}, "bias",
/// "activation"}, ...]}` with row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let p = Self { layers };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias has {} entries, weight has {} rows",
                    l.bias.len(),
                    l.output_dim()
                )));
            }
            l.weight.check_finite()?;
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("layer {i}: non-finite bias")));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(())
    }

    /// Tanh hidden layers and an identity output layer. Weights are drawn
    /// from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, biases are 0.
    pub fn init(sizes: &[usize], seed: u64, stream: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mut r = rng::stream(seed, streams::INIT + stream);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: Matrix::from_fn(fan_out, fan_in, |_, _| r.random_range(-a..a)),
                    bias: vec![0.0; fan_out],
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Tanh
                    },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.rows() * l.weight.cols();
            l.weight.as_mut_slice().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_flat(flat);
        p
    }

    /// Output only, no tape.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut y = l.weight.matvec(&h)?;
            for (v, b) in y.iter_mut().zip(&l.bias) {
                *v = l.activation.apply(*v + b);
            }
            h = y;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for l in &self.layers {
            let h = activations.last().expect("input pushed");
            let mut y = l.weight.matvec(h)?;
            for (v, b) in y.iter_mut().zip(&l.bias) {
                *v = l.activation.apply(*v + b);
            }
            activations.push(y);
        }
        let y = activations.last().cloned().unwrap_or_default();
        Ok((y, Tape { activations }))
    }

    /// Gradients of `⟨dy, y⟩` with respect to parameters and input.
    pub fn backward(&self, tape: &Tape, dy: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if tape.activations.len() != self.layers.len() + 1
            || tape
                .activations
                .iter()
                .skip(1)
                .zip(&self.layers)
                .any(|(a, l)| a.len() != l.output_dim())
            || tape.activations[0].len() != self.input_dim()
        {
            return Err(Error::Shape("tape does not match network".into()));
        }
        if dy.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                op: "backward",
                left: (self.output_dim(), 1),
                right: (dy.len(), 1),
            });
        }
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut upstream = dy.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let out = &tape.activations[i + 1];
            let input = &tape.activations[i];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(out)
                .map(|(g, &y)| g * l.activation.derivative_from_output(y))
                .collect();
            grads.push(LayerGrad {
                d_weight: linalg::outer(&delta, input),
                d_bias: delta.clone(),
            });
            upstream = l.weight.matvec_t(&delta)?;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "forward",
                left: (self.output_dim(), self.input_dim()),
                right: (x.len(), 1),
            });
        }
        Ok(())
    }
}

/// Layer inputs and outputs recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the input, `activations[i+1]` the output of layer `i`.
    pub activations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub d_weight: Matrix,
    pub d_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            layers: p
                .layers
                .iter()
                .map(|l| LayerGrad {
                    d_weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    d_bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.d_weight.axpy(1.0, &b.d_weight);
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += y;
            }
        }
    }

    /// Same layout as [`MlpParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.d_weight.as_slice());
            out.extend_from_slice(&l.d_bias);
        }
        out
    }
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Indices whose relative error exceeds the tolerance.
    pub failing: Vec<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Compares `analytic` against central finite differences of `loss` at
/// `params`, entry by entry. The relative error of an entry is
/// `|a − f| / max(|a|, |f|, floor)`; `floor` keeps entries that are zero up
/// to round-off from dominating.
pub fn gradient_check(
    params: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    tolerance: f64,
    floor: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let numeric = central_differences(params, &loss, FD_STEP);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        failing: Vec::new(),
        tolerance,
        passed: true,
    };
    for (i, (&a, &f)) in analytic.iter().zip(&numeric).enumerate() {
        let err = relative_error(a, f, floor);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_index = i;
        }
        if err.is_nan() || err > tolerance {
            report.failing.push(i);
        }
    }
    report.passed = report.failing.is_empty();
    report
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn central_differences(params: &[f64], loss: &impl Fn(&[f64]) -> f64, h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_line(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &p.layers {
            let mut next = Vec::new();
            for r in 0..l.weight.rows() {
                let s = l.bias[r] + l.weight.row(r).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>();
                next.push(match l.activation {
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                });
            }
            h = next;
        }
        h
    }

    #[test]
    fn identity_and_zero_tanh_layers() {
        let id = MlpParams::new(vec![Layer {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = [1.0, -2.0, 0.5];
        assert_eq!(id.forward(&x).unwrap().0, x.to_vec());

        let zero = MlpParams::new(vec![Layer {
            weight: Matrix::zeros(2, 3),
            bias: vec![0.0; 2],
            activation: Activation::Tanh,
        }])
        .unwrap();
        assert_eq!(zero.forward(&x).unwrap().0, vec![0.0, 0.0]);

        let (g, dx) = id.backward(&id.forward(&x).unwrap().1, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.layers[0].d_weight.row(0), &x);
        assert!(g.layers[0].d_weight.row(1).iter().all(|v| *v == 0.0));
        assert_eq!(g.layers[0].d_bias, vec![1.0, 0.0, 0.0]);
        assert_eq!(dx, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_matches_recomputation() {
        let p = MlpParams::init(&[3, 5, 2], 3, 0).unwrap();
        let x = [0.3, -1.1, 2.0];
        let y = p.forward(&x).unwrap().0;
        let z = straight_line(&p, &x);
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(p.apply(&x).unwrap(), y);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = MlpParams::init(&[2, 4, 3], 1, 0).unwrap();
        let (_, tape) = p.forward(&[0.5, 0.5]).unwrap();
        let (g, dx) = p.backward(&tape, &[0.0; 3]).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut r = rng::stream(seed, 77);
            let depth = 1 + (seed % 3) as usize;
            let mut sizes = vec![1 + r.random_range(0..6usize)];
            for _ in 0..depth {
                sizes.push(1 + r.random_range(0..16usize));
            }
            let p = MlpParams::init(&sizes, seed, 0).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng::normal(&mut r)).collect();
            let dy: Vec<f64> = (0..p.output_dim()).map(|_| rng::normal(&mut r)).collect();
            let (_, tape) = p.forward(&x).unwrap();
            let (g, dx) = p.backward(&tape, &dy).unwrap();
            let loss = |flat: &[f64]| linalg::dot(&p.with_flat(flat).apply(&x).unwrap(), &dy);
            let report = gradient_check(&p.to_flat(), &g.to_flat(), loss, 1e-6, 1e-4);
            assert!(report.passed, "seed {seed}: {report:?}");
            let in_loss = |xx: &[f64]| linalg::dot(&p.apply(xx).unwrap(), &dy);
            let report = gradient_check(&x, &dx, in_loss, 1e-6, 1e-4);
            assert!(report.passed, "seed {seed} input: {report:?}");
        }
    }

    #[test]
    fn linear_loss_on_linear_net_is_exact() {
        let mut p = MlpParams::init(&[3, 2], 5, 0).unwrap();
        p.layers[0].activation = Activation::Identity;
        let x = [1.0, 2.0, 3.0];
        let dy = [0.5, -1.0];
        let (_, tape) = p.forward(&x).unwrap();
        let (g, _) = p.backward(&tape, &dy).unwrap();
        let loss = |flat: &[f64]| linalg::dot(&p.with_flat(flat).apply(&x).unwrap(), &dy);
        let report = gradient_check(&p.to_flat(), &g.to_flat(), loss, 1e-10, 1e-3);
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let p = MlpParams::init(&[2, 3, 1], 9, 0).unwrap();
        let x = [0.4, -0.2];
        let (_, tape) = p.forward(&x).unwrap();
        let (g, _) = p.backward(&tape, &[1.0]).unwrap();
        let mut flat = g.to_flat();
        let idx = flat
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        flat[idx] *= 2.0;
        let loss = |f: &[f64]| p.with_flat(f).apply(&x).unwrap()[0];
        let report = gradient_check(&p.to_flat(), &flat, loss, 1e-6, 1e-6);
        assert!(!report.passed);
        assert_eq!(report.failing, vec![idx]);
    }

    #[test]
    fn stale_tape_and_bad_shapes_are_rejected() {
        let p = MlpParams::init(&[2, 3, 1], 9, 0).unwrap();
        let q = MlpParams::init(&[2, 4, 1], 9, 0).unwrap();
        let (_, tape) = q.forward(&[0.0, 0.0]).unwrap();
        assert!(p.backward(&tape, &[1.0]).is_err());
        assert!(p.forward(&[0.0]).is_err());
        let bad = MlpParams::new(vec![
            Layer {
                weight: Matrix::zeros(3, 2),
                bias: vec![0.0; 3],
                activation: Activation::Tanh,
            },
            Layer {
                weight: Matrix::zeros(1, 2),
                bias: vec![0.0],
                activation: Activation::Identity,
            },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn json_round_trip() {
        let p = MlpParams::init(&[3, 4, 2], 1, 0).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"activation\":\"tanh\""));
        let q: MlpParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
