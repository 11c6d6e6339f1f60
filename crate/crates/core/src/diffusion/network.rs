//! Fully connected sample-predicting denoiser with hand-written backprop.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Normalizer;

/// Layout of the denoiser. `history` is H and `horizon` is K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub history: usize,
    pub horizon: usize,
    pub width: usize,
    pub embed_dim: usize,
}

impl Architecture {
    pub fn obs_dim(&self) -> usize {
        18 * self.history
    }

    pub fn chunk_dim(&self) -> usize {
        9 * self.horizon
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim() + self.chunk_dim() + self.embed_dim
    }

    /// `(rows, cols)` of the three weight matrices.
    pub fn layer_shapes(&self) -> [(usize, usize); 3] {
        [
            (self.width, self.input_dim()),
            (self.width, self.width),
            (self.chunk_dim(), self.width),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    pub fn hash(&self) -> String {
        let desc = format!(
            "mlp-silu-x0/v1;obs={};chunk={};embed={};width={};layers=3",
            self.obs_dim(),
            self.chunk_dim(),
            self.embed_dim,
            self.width
        );
        hex::encode(Sha256::digest(desc.as_bytes()))
    }
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding(k: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(1000f64).ln() * i as f64 / half.max(1) as f64).exp();
        out[i] = (k as f64 * freq).sin();
        out[half + i] = (k as f64 * freq).cos();
    }
    out
}

/// Network weights stored as one flat vector: for each layer the weight
/// matrix (column-major) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub arch: Architecture,
    /// Maps encoded poses to and from network units.
    pub normalizer: Normalizer,
    pub weights: Vec<f64>,
}

pub(crate) struct ForwardCache {
    input: DMatrix<f64>,
    z1: DMatrix<f64>,
    h1: DMatrix<f64>,
    z2: DMatrix<f64>,
    h2: DMatrix<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl DenoiserParams {
    /// Seeded fan-in uniform initialization; biases start at zero.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, normalizer: Normalizer, rng: &mut R) -> Self {
        let mut weights = Vec::with_capacity(arch.param_count());
        for (layer, (rows, cols)) in arch.layer_shapes().into_iter().enumerate() {
            let gain = if layer < 2 { 6.0 } else { 3.0 };
            let bound = (gain / cols as f64).sqrt();
            weights.extend((0..rows * cols).map(|_| rng.random_range(-bound..bound)));
            weights.extend(std::iter::repeat_n(0.0, rows));
        }
        Self {
            arch,
            normalizer,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.normalizer.is_valid() && self.normalizer.matches(&self.arch) && self.weights.iter().all(|w| w.is_finite())
    }

    /// Offsets of `(weight, bias)` for each layer.
    fn offsets(&self) -> [(usize, usize); 3] {
        let mut out = [(0, 0); 3];
        let mut at = 0;
        for (i, (r, c)) in self.arch.layer_shapes().into_iter().enumerate() {
            out[i] = (at, at + r * c);
            at += r * c + r;
        }
        out
    }

    fn layer(&self, i: usize) -> (DMatrixView<'_, f64>, DMatrixView<'_, f64>) {
        let (r, c) = self.arch.layer_shapes()[i];
        let (w, b) = self.offsets()[i];
        (
            DMatrixView::from_slice(&self.weights[w..w + r * c], r, c),
            DMatrixView::from_slice(&self.weights[b..b + r], r, 1),
        )
    }

    /// Stacks `(obs, noisy, k)` triples into an input matrix, one column each.
    pub fn build_input(&self, items: &[(&[f64], &[f64], usize)]) -> DMatrix<f64> {
        let a = &self.arch;
        let mut x = DMatrix::zeros(a.input_dim(), items.len());
        for (j, (obs, noisy, k)) in items.iter().enumerate() {
            assert_eq!(obs.len(), a.obs_dim(), "observation dimension");
            assert_eq!(noisy.len(), a.chunk_dim(), "chunk dimension");
            let mut col = x.column_mut(j);
            col.rows_mut(0, a.obs_dim()).copy_from_slice(obs);
            col.rows_mut(a.obs_dim(), a.chunk_dim()).copy_from_slice(noisy);
            col.rows_mut(a.obs_dim() + a.chunk_dim(), a.embed_dim)
                .copy_from_slice(&step_embedding(*k, a.embed_dim));
        }
        x
    }

    fn affine(&self, i: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (w, b) = self.layer(i);
        let mut z = w * x;
        for mut col in z.column_iter_mut() {
            col += b.column(0);
        }
        z
    }

    pub(crate) fn forward_cached(&self, input: DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        let z1 = self.affine(0, &input);
        let h1 = z1.map(silu);
        let z2 = self.affine(1, &h1);
        let h2 = z2.map(silu);
        let y = self.affine(2, &h2);
        (y, ForwardCache { input, z1, h1, z2, h2 })
    }

    /// Predicted clean chunks, one column per input column.
    pub fn forward(&self, input: DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(input).0
    }

    /// Backpropagates `d_out = ∂L/∂y` into a flat gradient matching `weights`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: &DMatrix<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.weights.len()];
        let offsets = self.offsets();
        let mut store = |i: usize, dz: &DMatrix<f64>, input: &DMatrix<f64>| {
            let dw = dz * input.transpose();
            let db: DVector<f64> = dz.column_sum();
            let (w, b) = offsets[i];
            grad[w..w + dw.len()].copy_from_slice(dw.as_slice());
            grad[b..b + db.len()].copy_from_slice(db.as_slice());
        };

        store(2, d_out, &cache.h2);
        let (w3, _) = self.layer(2);
        let dh2 = w3.transpose() * d_out;
        let dz2 = dh2.zip_map(&cache.z2, |g, z| g * silu_grad(z));
        store(1, &dz2, &cache.h1);
        let (w2, _) = self.layer(1);
        let dh1 = w2.transpose() * &dz2;
        let dz1 = dh1.zip_map(&cache.z1, |g, z| g * silu_grad(z));
        store(0, &dz1, &cache.input);
        grad
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}
