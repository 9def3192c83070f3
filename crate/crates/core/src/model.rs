//! Fully connected classifier with hand-derived backprop.
//!
//! Parameters are stored as one flat vector (per layer: an `in x out` row-major
//! weight block followed by the `out` biases), which keeps SGD steps, dot
//! products between gradients and the checkpoint format trivial.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ArlError, Result};
use crate::losses::HyperParams;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(ArlError::Shape(format!("{rows}x{cols} matrix needs {} entries, got {}", rows * cols, data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ArlError::Shape("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

fn layout(sizes: &[usize]) -> Result<(Vec<LayerSpan>, usize)> {
    if sizes.len() < 2 {
        return Err(ArlError::Config(format!("need at least input and output sizes, got {sizes:?}")));
    }
    if sizes.contains(&0) {
        return Err(ArlError::Config(format!("layer sizes must be positive: {sizes:?}")));
    }
    let mut spans = Vec::with_capacity(sizes.len() - 1);
    let mut offset = 0;
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        spans.push(LayerSpan {
            fan_in,
            fan_out,
            weights: offset,
            bias: offset + fan_in * fan_out,
        });
        offset += fan_in * fan_out + fan_out;
    }
    Ok((spans, offset))
}

/// Network weights `w`: layer sizes `[d_in, h_1, ..., c]` and a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    activation: Activation,
    spans: Vec<LayerSpan>,
    data: Vec<f64>,
}

/// Gradient with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    sizes: Vec<usize>,
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            sizes: params.sizes.clone(),
            data: vec![0.0; params.data.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dot(&self, other: &Gradients) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(self - other) / denom`, element-wise.
    pub fn difference_quotient(&self, other: &Gradients, denom: f64) -> Gradients {
        Gradients {
            sizes: self.sizes.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| (a - b) / denom).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }
}

/// Uniform init with bound `sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_mlp(sizes: &[usize], activation: Activation, seed: u64) -> Result<MlpParams> {
    let (spans, total) = layout(sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; total];
    for span in &spans {
        let bound = (6.0 / (span.fan_in + span.fan_out) as f64).sqrt();
        for w in &mut data[span.weights..span.bias] {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(MlpParams {
        sizes: sizes.to_vec(),
        activation,
        spans,
        data,
    })
}

impl MlpParams {
    pub fn from_flat(sizes: &[usize], activation: Activation, data: Vec<f64>) -> Result<Self> {
        let (spans, total) = layout(sizes)?;
        if data.len() != total {
            return Err(ArlError::Shape(format!("layout {sizes:?} needs {total} parameters, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ArlError::Numeric("non-finite parameter".into()));
        }
        Ok(MlpParams {
            sizes: sizes.to_vec(),
            activation,
            spans,
            data,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().expect("layout has at least two sizes")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    /// Weight block of layer `l` (`fan_in x fan_out`, row-major) and its biases.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let s = self.spans[l];
        (&self.data[s.weights..s.bias], &self.data[s.bias..s.bias + s.fan_out])
    }

    pub fn num_layers(&self) -> usize {
        self.spans.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(ArlError::Shape(format!("features have dimension {}, network expects {}", x.cols(), self.input_dim())));
        }
        Ok(())
    }

    /// Pre-activations and outputs of every layer. The last entry's outputs are the logits.
    fn forward_trace(&self, x: &Matrix) -> Vec<(Matrix, Matrix)> {
        let mut trace: Vec<(Matrix, Matrix)> = Vec::with_capacity(self.spans.len());
        for (l, span) in self.spans.iter().enumerate() {
            let input = if l == 0 { x } else { &trace[l - 1].1 };
            let (w, b) = self.layer(l);
            let mut z = Matrix::zeros(input.rows(), span.fan_out);
            for r in 0..input.rows() {
                let out = z.row_mut(r);
                out.copy_from_slice(b);
                for (i, &xi) in input.row(r).iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let wrow = &w[i * span.fan_out..(i + 1) * span.fan_out];
                    for (o, &wij) in out.iter_mut().zip(wrow) {
                        *o += xi * wij;
                    }
                }
            }
            let h = if l + 1 == self.spans.len() {
                z.clone()
            } else {
                let data = z.as_slice().iter().map(|&v| self.activation.apply(v)).collect();
                Matrix {
                    rows: z.rows,
                    cols: z.cols,
                    data,
                }
            };
            trace.push((z, h));
        }
        trace
    }

    /// Logits for every row of `x`.
    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward_trace(x).pop().expect("at least one layer").1)
    }

    /// Gradient of `sum_rows <logits, grad_logits>` with respect to the parameters.
    /// Callers fold any `1/N` averaging into `grad_logits`.
    pub fn backward(&self, x: &Matrix, grad_logits: &Matrix) -> Result<Gradients> {
        self.check_input(x)?;
        if grad_logits.rows() != x.rows() || grad_logits.cols() != self.num_classes() {
            return Err(ArlError::Shape(format!(
                "grad_logits is {}x{}, expected {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                x.rows(),
                self.num_classes()
            )));
        }
        let trace = self.forward_trace(x);
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_logits.clone();
        for l in (0..self.spans.len()).rev() {
            let span = self.spans[l];
            let input = if l == 0 { x } else { &trace[l - 1].1 };
            let gw = &mut grads.data[span.weights..span.bias + span.fan_out];
            for r in 0..input.rows() {
                let d = delta.row(r);
                for (i, &xi) in input.row(r).iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let row = &mut gw[i * span.fan_out..(i + 1) * span.fan_out];
                    for (g, &dj) in row.iter_mut().zip(d) {
                        *g += xi * dj;
                    }
                }
                let gb = &mut gw[span.fan_in * span.fan_out..];
                for (g, &dj) in gb.iter_mut().zip(d) {
                    *g += dj;
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let (z_prev, h_prev) = &trace[l - 1];
            let mut next = Matrix::zeros(input.rows(), span.fan_in);
            for r in 0..input.rows() {
                let d = delta.row(r);
                let zr = z_prev.row(r);
                let hr = h_prev.row(r);
                let out = next.row_mut(r);
                for i in 0..span.fan_in {
                    let wrow = &w[i * span.fan_out..(i + 1) * span.fan_out];
                    let back: f64 = wrow.iter().zip(d).map(|(a, b)| a * b).sum();
                    out[i] = back * self.activation.derivative(zr[i], hr[i]);
                }
            }
            delta = next;
        }
        Ok(grads)
    }

    /// `params - step * grads`.
    pub fn sgd_step(&self, grads: &Gradients, step: f64) -> Result<MlpParams> {
        if grads.sizes != self.sizes {
            return Err(ArlError::Shape(format!("gradient layout {:?} does not match {:?}", grads.sizes, self.sizes)));
        }
        if !grads.is_finite() {
            return Err(ArlError::Numeric("non-finite gradient in SGD step".into()));
        }
        let mut next = self.clone();
        for (w, g) in next.data.iter_mut().zip(&grads.data) {
            *w -= step * g;
        }
        if next.data.iter().any(|v| !v.is_finite()) {
            return Err(ArlError::Numeric("parameters overflowed in SGD step".into()));
        }
        Ok(next)
    }

    /// Writes the flat little-endian parameter file and a JSON sidecar next to it.
    pub fn save_checkpoint(&self, path: &Path, hyper: Option<HyperParams>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| ArlError::io(path, e))?;
        let meta = CheckpointMeta {
            sizes: self.sizes.clone(),
            activation: self.activation,
            num_params: self.data.len(),
            hyper,
        };
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&meta)?;
        fs::write(&sidecar, json).map_err(|e| ArlError::io(&sidecar, e))?;
        Ok(())
    }

    /// Loads a checkpoint given either the parameter file or its JSON sidecar.
    pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, CheckpointMeta)> {
        let (bin, sidecar) = if path.extension().is_some_and(|e| e == "json") {
            (path.with_extension("bin"), path.to_path_buf())
        } else {
            (path.to_path_buf(), sidecar_path(path))
        };
        let text = fs::read_to_string(&sidecar).map_err(|e| ArlError::io(&sidecar, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let bytes = fs::read(&bin).map_err(|e| ArlError::io(&bin, e))?;
        if bytes.len() != meta.num_params * 8 {
            return Err(ArlError::Schema(format!(
                "{} holds {} bytes, sidecar declares {} parameters",
                bin.display(),
                bytes.len(),
                meta.num_params
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let params = MlpParams::from_flat(&meta.sizes, meta.activation, data)?;
        Ok((params, meta))
    }
}

/// JSON sidecar of a parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub num_params: usize,
    #[serde(default)]
    pub hyper: Option<HyperParams>,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_mlp(&[2, 16, 3], Activation::Tanh, 7).unwrap();
        let b = init_mlp(&[2, 16, 3], Activation::Tanh, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_mlp(&[2, 16, 3], Activation::Tanh, 8).unwrap());
        let (w0, b0) = a.layer(0);
        let (w1, b1) = a.layer(1);
        assert_eq!((w0.len(), b0.len(), w1.len(), b1.len()), (32, 16, 48, 3));
        assert!(b0.iter().chain(b1).all(|&v| v == 0.0));
        let bound = (6.0f64 / 18.0).sqrt();
        assert!(w0.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn bad_sizes_are_config_errors() {
        assert!(matches!(init_mlp(&[], Activation::Tanh, 0), Err(ArlError::Config(_))));
        assert!(matches!(init_mlp(&[3], Activation::Tanh, 0), Err(ArlError::Config(_))));
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = MlpParams::from_flat(&[2, 4, 3], Activation::Tanh, vec![0.0; 2 * 4 + 4 + 4 * 3 + 3]).unwrap();
        let out = p.forward_logits(&random_matrix(5, 2, 1)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = init_mlp(&[2, 4, 3], Activation::Tanh, 0).unwrap();
        assert!(matches!(p.forward_logits(&random_matrix(5, 3, 1)), Err(ArlError::Shape(_))));
    }

    #[test]
    fn batch_rows_are_independent() {
        let p = init_mlp(&[3, 5, 4], Activation::Relu, 3).unwrap();
        let x = random_matrix(6, 3, 2);
        let all = p.forward_logits(&x).unwrap();
        for i in 0..6 {
            let single = p.forward_logits(&x.select_rows(&[i])).unwrap();
            assert_eq!(single.row(0), all.row(i));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_mlp(&[2, 8, 3], Activation::Tanh, 0).unwrap();
        let x = random_matrix(4, 2, 9);
        let g = p.backward(&x, &Matrix::zeros(4, 3)).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for activation in [Activation::Tanh, Activation::Relu] {
            let p = init_mlp(&[3, 6, 5, 4], activation, 11).unwrap();
            let x = random_matrix(7, 3, 12);
            let upstream = random_matrix(7, 4, 13);
            let g = p.backward(&x, &upstream).unwrap();
            let objective = |q: &MlpParams| -> f64 {
                let z = q.forward_logits(&x).unwrap();
                z.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum()
            };
            let h = 1e-6;
            let mut fd = vec![0.0; p.num_params()];
            for (k, slot) in fd.iter_mut().enumerate() {
                let mut plus = p.as_slice().to_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let fp = objective(&MlpParams::from_flat(p.sizes(), activation, plus).unwrap());
                let fm = objective(&MlpParams::from_flat(p.sizes(), activation, minus).unwrap());
                *slot = (fp - fm) / (2.0 * h);
            }
            let diff: f64 = fd.iter().zip(g.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = g.norm().max(1e-12);
            assert!(diff / scale <= 1e-5, "{activation:?}: rel err {}", diff / scale);
        }
    }

    #[test]
    fn stacked_duplicate_with_halved_gradient_equals_single() {
        let p = init_mlp(&[2, 5, 3], Activation::Tanh, 4).unwrap();
        let x = random_matrix(1, 2, 5);
        let up = random_matrix(1, 3, 6);
        let single = p.backward(&x, &up).unwrap();
        let x2 = Matrix::new(2, 2, [x.as_slice(), x.as_slice()].concat()).unwrap();
        let half: Vec<f64> = up.as_slice().iter().map(|v| v / 2.0).collect();
        let up2 = Matrix::new(2, 3, [half.as_slice(), half.as_slice()].concat()).unwrap();
        let double = p.backward(&x2, &up2).unwrap();
        for (a, b) in single.as_slice().iter().zip(double.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_properties() {
        let p = init_mlp(&[2, 4, 3], Activation::Tanh, 1).unwrap();
        let g = Gradients {
            sizes: p.sizes.clone(),
            data: p.data.clone(),
        };
        assert_eq!(p.sgd_step(&g, 0.0).unwrap(), p);
        assert!(p.sgd_step(&g, 1.0).unwrap().as_slice().iter().all(|&v| v == 0.0));

        let g2 = Gradients {
            sizes: p.sizes.clone(),
            data: p.data.iter().map(|v| v.sin()).collect(),
        };
        let twice = p.sgd_step(&g, 0.1).unwrap().sgd_step(&g2, 0.1).unwrap();
        let mut sum = g.clone();
        sum.add_scaled(&g2, 1.0);
        let once = p.sgd_step(&sum, 0.1).unwrap();
        for (a, b) in twice.as_slice().iter().zip(once.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut bad = g.clone();
        bad.data[0] = f64::NAN;
        assert!(matches!(p.sgd_step(&bad, 0.1), Err(ArlError::Numeric(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let p = init_mlp(&[2, 16, 3], Activation::Relu, 5).unwrap();
        let hyper = HyperParams::PolySoft { lambda: 1.1, d: 3.0 };
        p.save_checkpoint(&path, Some(hyper)).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), (p.num_params() * 8) as u64);
        let (q, meta) = MlpParams::load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta.hyper, Some(hyper));
        let (q2, _) = MlpParams::load_checkpoint(&sidecar_path(&path)).unwrap();
        assert_eq!(p, q2);
    }
}
