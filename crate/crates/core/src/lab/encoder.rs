//! Toy joint-embedding encoder: a two-layer perceptron trained so that two
//! masked, noisy views of the same scene map to nearby embeddings.
//!
//! A view keeps the background coordinates, the object coordinates, or both,
//! zeroes the rest and adds Gaussian noise. Two losses are available:
//!
//! * InfoNCE (NT-Xent): embeddings are L2-normalized, and for a batch of `n`
//!   pairs each of the `2n` views must pick out its partner among the other
//!   `2n − 1` by cosine similarity divided by the temperature `τ`:
//!   `L = −1/(2n) Σ_i log( exp(s_{i,p(i)}/τ) / Σ_{j≠i} exp(s_{ij}/τ) )`.
//! * VICReg-style: with `Z, Z'` the `n × d` embeddings of the two views,
//!   `L = λ·inv + μ·(var(Z) + var(Z')) + ν·(cov(Z) + cov(Z'))` where
//!   `inv = 1/(n·d) Σ ‖z_i − z'_i‖²`,
//!   `var(Z) = 1/d Σ_j max(0, 1 − sqrt(Var(Z_j) + 1e-4))` and
//!   `cov(Z) = 1/d Σ_{j≠k} C(Z)_{jk}²` with `C` the sample covariance.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenes::{LabError, Scene};
use crate::store::{EmbeddingMeta, EmbeddingSet, ViewKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Infonce,
    VicregLike,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    /// InfoNCE temperature.
    pub temperature: f64,
    /// VICReg-style invariance weight (λ).
    pub invariance: f64,
    /// VICReg-style variance weight (μ).
    pub variance: f64,
    /// VICReg-style covariance weight (ν).
    pub covariance: f64,
    /// Standard deviation of the noise added to visible view coordinates.
    pub view_noise: f64,
    /// Epochs at which parameters are snapshotted (0 = initialization).
    pub checkpoints: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 128,
            hidden_width: 64,
            embed_dim: 32,
            learning_rate: 1e-3,
            loss: LossKind::Infonce,
            temperature: 0.15,
            invariance: 25.0,
            variance: 25.0,
            covariance: 1.0,
            view_noise: 0.1,
            checkpoints: vec![500],
            seed: 0,
        }
    }
}

/// Which part of a scene a view keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneView {
    Background,
    Object,
    Full,
}

impl SceneView {
    /// Store tag: the background view plays the periphery crop.
    pub fn view_kind(self) -> ViewKind {
        match self {
            SceneView::Background => ViewKind::Periphery,
            SceneView::Object => ViewKind::Object,
            SceneView::Full => ViewKind::Full,
        }
    }

    fn fill(self, scene: &Scene, out: &mut [f64]) {
        let nb = scene.background.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        if matches!(self, SceneView::Background | SceneView::Full) {
            out[..nb].copy_from_slice(&scene.background);
        }
        if matches!(self, SceneView::Object | SceneView::Full) {
            out[nb..].copy_from_slice(&scene.object);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// hidden × input.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// embed × hidden.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Intermediate activations of one forward pass.
pub struct Forward {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub out: Array2<f64>,
}

impl EncoderParams {
    pub fn init(input_dim: usize, hidden: usize, embed: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut normal = |rows: usize, cols: usize, std: f64| {
            Array2::from_shape_simple_fn((rows, cols), || {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
        };
        Self {
            w1: normal(hidden, input_dim, (2.0 / input_dim as f64).sqrt()),
            b1: Array1::zeros(hidden),
            w2: normal(embed, hidden, (1.0 / hidden as f64).sqrt()),
            b2: Array1::zeros(embed),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Forward {
        let pre = x.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = hidden.dot(&self.w2.t()) + &self.b2;
        Forward { pre, hidden, out }
    }

    /// Parameter gradients given the gradient at the output.
    pub fn backward(&self, x: ArrayView2<f64>, fwd: &Forward, d_out: &Array2<f64>) -> EncoderParams {
        let w2 = d_out.t().dot(&fwd.hidden);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_pre = d_out.dot(&self.w2);
        d_pre.zip_mut_with(&fwd.pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
        let w1 = d_pre.t().dot(&x);
        let b1 = d_pre.sum_axis(Axis(0));
        EncoderParams { w1, b1, w2, b2 }
    }

    fn tensors_mut(&mut self) -> [ndarray::ArrayViewMutD<'_, f64>; 4] {
        [
            self.w1.view_mut().into_dyn(),
            self.b1.view_mut().into_dyn(),
            self.w2.view_mut().into_dyn(),
            self.b2.view_mut().into_dyn(),
        ]
    }

    fn tensors(&self) -> [ndarray::ArrayViewD<'_, f64>; 4] {
        [self.w1.view().into_dyn(), self.b1.view().into_dyn(), self.w2.view().into_dyn(), self.b2.view().into_dyn()]
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Activations at `layer` (0 = hidden, 1 = output) for each input row.
    pub fn embed(&self, x: ArrayView2<f64>, layer: u8) -> Array2<f64> {
        let f = self.forward(x);
        if layer == 0 {
            f.hidden
        } else {
            f.out
        }
    }
}

/// InfoNCE loss and gradients with respect to both view batches.
pub fn infonce_loss(z1: &Array2<f64>, z2: &Array2<f64>, temperature: f64) -> (f64, Array2<f64>, Array2<f64>) {
    let n = z1.nrows();
    let z = ndarray::concatenate(Axis(0), &[z1.view(), z2.view()]).expect("same width");
    let norms: Array1<f64> = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let u = &z / &norms.view().insert_axis(Axis(1));
    let mut logits = u.dot(&u.t()) / temperature;
    let m = 2 * n;
    for i in 0..m {
        logits[[i, i]] = f64::NEG_INFINITY;
    }
    let mut loss = 0.0;
    // Softmax rows become dL/dlogits after subtracting the positive indicator.
    for i in 0..m {
        let pos = (i + n) % m;
        let mut row = logits.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[pos];
        row.mapv_inplace(|v| (v - lse).exp());
        row[pos] -= 1.0;
    }
    let g = logits / (m as f64);
    loss /= m as f64;
    let du = (&g + &g.t()).dot(&u) / temperature;
    // Back through the L2 normalization.
    let mut dz = du;
    for ((mut dzr, ur), &nr) in dz.rows_mut().into_iter().zip(u.rows()).zip(norms.iter()) {
        let proj = dzr.dot(&ur);
        dzr.zip_mut_with(&ur, |d, &uu| *d = (*d - uu * proj) / nr);
    }
    let dz2 = dz.slice(ndarray::s![n.., ..]).to_owned();
    dz.slice_collapse(ndarray::s![..n, ..]);
    (loss, dz, dz2)
}

/// Variance hinge plus off-diagonal covariance penalty for one branch,
/// returning `(variance term, covariance term, gradient of μ·var + ν·cov)`.
fn vicreg_regularizers(z: &Array2<f64>, mu: f64, nu: f64) -> (f64, f64, Array2<f64>) {
    let (n, d) = z.dim();
    let denom = (n.max(2) - 1) as f64;
    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
    let zc = z - &mean;
    let cov = zc.t().dot(&zc) / denom;
    let mut var_term = 0.0;
    let mut grad = Array2::<f64>::zeros((n, d));
    for j in 0..d {
        let std = (cov[[j, j]] + 1e-4).sqrt();
        if std < 1.0 {
            var_term += 1.0 - std;
            let scale = -mu / (d as f64 * denom * std);
            grad.column_mut(j).scaled_add(scale, &zc.column(j));
        }
    }
    var_term /= d as f64;
    let mut off = cov;
    off.diag_mut().fill(0.0);
    let cov_term = off.iter().map(|v| v * v).sum::<f64>() / d as f64;
    grad += &(zc.dot(&off) * (4.0 * nu / (d as f64 * denom)));
    (var_term, cov_term, grad)
}

/// VICReg-style loss and gradients with respect to both view batches.
pub fn vicreg_loss(
    z1: &Array2<f64>,
    z2: &Array2<f64>,
    lambda: f64,
    mu: f64,
    nu: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let (n, d) = z1.dim();
    let diff = z1 - z2;
    let inv = diff.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64;
    let d_inv = &diff * (2.0 * lambda / (n * d) as f64);
    let (v1, c1, g1) = vicreg_regularizers(z1, mu, nu);
    let (v2, c2, g2) = vicreg_regularizers(z2, mu, nu);
    let loss = lambda * inv + mu * (v1 + v2) + nu * (c1 + c2);
    (loss, &d_inv + &g1, &g2 - &d_inv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: EncoderParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub config: TrainConfig,
    pub input_dim: usize,
    pub checkpoints: Vec<Checkpoint>,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

impl ToyEncoder {
    pub fn checkpoint(&self, epoch: usize) -> Result<&EncoderParams, LabError> {
        self.checkpoints
            .iter()
            .find(|c| c.epoch == epoch)
            .map(|c| &c.params)
            .ok_or(LabError::MissingCheckpoint(epoch))
    }

    pub fn final_params(&self) -> &EncoderParams {
        &self.checkpoints.last().expect("at least one checkpoint").params
    }
}

struct Adam {
    m: EncoderParams,
    v: EncoderParams,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut EncoderParams, grad: &EncoderParams, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (((mut p, mut m), mut v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grad.tensors())
        {
            ndarray::Zip::from(&mut p).and(&mut m).and(&mut v).and(&g).for_each(|p, m, v, &g| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
            });
        }
    }
}

const VIEWS: [SceneView; 3] = [SceneView::Background, SceneView::Object, SceneView::Full];

/// Fills `out` with a random masked, noisy view of each scene.
fn sample_views(scenes: &[&Scene], noise: f64, rng: &mut ChaCha8Rng, out: &mut Array2<f64>) {
    for (scene, mut row) in scenes.iter().zip(out.rows_mut()) {
        let view = VIEWS[rng.random_range(0..VIEWS.len())];
        let row = row.as_slice_mut().expect("standard layout");
        view.fill(scene, row);
        let nb = scene.background.len();
        for (j, v) in row.iter_mut().enumerate() {
            let visible = match view {
                SceneView::Background => j < nb,
                SceneView::Object => j >= nb,
                SceneView::Full => true,
            };
            if visible {
                let z: f64 = StandardNormal.sample(rng);
                *v += noise * z;
            }
        }
    }
}

pub fn train_toy(scenes: &[Scene], config: &TrainConfig) -> Result<ToyEncoder, LabError> {
    if scenes.len() < 2 || config.batch_size < 2 {
        return Err(LabError::InvalidConfig("training needs at least two scenes per batch".into()));
    }
    if config.checkpoints.iter().any(|&e| e > config.epochs) {
        return Err(LabError::InvalidConfig("checkpoint beyond the last epoch".into()));
    }
    let input_dim = scenes[0].input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = EncoderParams::init(input_dim, config.hidden_width, config.embed_dim, &mut rng);
    let mut adam = Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 };
    let mut encoder = ToyEncoder {
        config: config.clone(),
        input_dim,
        checkpoints: Vec::new(),
        loss_history: Vec::with_capacity(config.epochs),
    };
    if config.checkpoints.contains(&0) {
        encoder.checkpoints.push(Checkpoint { epoch: 0, params: params.clone() });
    }

    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let batch = config.batch_size.min(scenes.len());
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let picked: Vec<&Scene> = chunk.iter().map(|&i| &scenes[i]).collect();
            let mut a = Array2::<f64>::zeros((chunk.len(), input_dim));
            let mut b = Array2::<f64>::zeros((chunk.len(), input_dim));
            sample_views(&picked, config.view_noise, &mut rng, &mut a);
            sample_views(&picked, config.view_noise, &mut rng, &mut b);

            let f1 = params.forward(a.view());
            let f2 = params.forward(b.view());
            let (loss, d1, d2) = match config.loss {
                LossKind::Infonce => infonce_loss(&f1.out, &f2.out, config.temperature),
                LossKind::VicregLike => {
                    vicreg_loss(&f1.out, &f2.out, config.invariance, config.variance, config.covariance)
                }
            };
            if !loss.is_finite() {
                return Err(LabError::NonFiniteLoss(epoch));
            }
            let mut grad = params.backward(a.view(), &f1, &d1);
            let g2 = params.backward(b.view(), &f2, &d2);
            for (mut g, h) in grad.tensors_mut().into_iter().zip(g2.tensors()) {
                g += &h;
            }
            adam.step(&mut params, &grad, config.learning_rate);
            total += loss;
            batches += 1;
        }
        if !params.is_finite() {
            return Err(LabError::NonFiniteLoss(epoch));
        }
        encoder.loss_history.push(total / batches.max(1) as f64);
        if config.checkpoints.contains(&epoch) {
            encoder.checkpoints.push(Checkpoint { epoch, params: params.clone() });
        }
    }
    if encoder.checkpoints.is_empty() {
        encoder.checkpoints.push(Checkpoint { epoch: config.epochs, params });
    }
    Ok(encoder)
}

/// Deterministic (noise-free) view inputs, one row per scene.
pub fn view_matrix(scenes: &[Scene], view: SceneView) -> Array2<f64> {
    let dim = scenes.first().map(Scene::input_dim).unwrap_or(0);
    let mut x = Array2::zeros((scenes.len(), dim));
    for (s, mut row) in scenes.iter().zip(x.rows_mut()) {
        view.fill(s, row.as_slice_mut().expect("standard layout"));
    }
    x
}

/// Embeds one view of each scene at `layer` (0 = hidden, 1 = output).
pub fn embed_views(
    params: &EncoderParams,
    scenes: &[Scene],
    view: SceneView,
    layer: u8,
    meta: EmbeddingMeta,
) -> EmbeddingSet {
    let emb = params.embed(view_matrix(scenes, view).view(), layer);
    let dim = emb.ncols();
    let rows: Vec<f32> = emb.iter().map(|&v| v as f32).collect();
    EmbeddingSet::new(
        dim,
        rows,
        scenes.iter().map(|s| s.example_id.clone()).collect(),
        scenes.iter().map(|s| s.class_label as i32).collect(),
        EmbeddingMeta { layer_index: layer, view: view.view_kind(), ..meta },
    )
    .expect("encoder outputs are finite")
}
