//! Conditional flow matching on toy latents.
//!
//! Linear path `x_t = (1-t)·x0 + t·eps`, velocity target `eps - x0`, and two
//! small field models with hand-written gradients.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LATENT_DIM: usize = 8;
const CHECKPOINT_MAGIC: &[u8; 4] = b"PHXC";

#[derive(Debug, thiserror::Error)]
pub enum CfmError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss diverged at step {step}")]
    Divergence { step: usize, trace: Vec<f64> },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A velocity field `f(x, t)` over `dim`-dimensional latents.
pub trait FieldModel {
    fn dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]);
    /// Adds `J_θᵀ · grad_out` at `(x, t)` into `grad`.
    fn backward(&self, x: &[f64], t: f64, grad_out: &[f64], grad: &mut [f64]);
}

/// `f(x, t) = W·[x; t] + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    dim: usize,
    params: Vec<f64>,
}

impl LinearField {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = (dim + 1) as f64;
        let mut params: Vec<f64> = (0..dim * (dim + 1))
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / fan_in.sqrt()
            })
            .collect();
        params.extend(std::iter::repeat_n(0.0, dim));
        Self { dim, params }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            params: vec![0.0; dim * (dim + 1) + dim],
        }
    }

    /// Constant field `f ≡ v`.
    pub fn constant(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len());
        let off = m.dim * (m.dim + 1);
        m.params[off..].copy_from_slice(v);
        m
    }
}

impl FieldModel for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let n = self.dim + 1;
        let b = &self.params[self.dim * n..];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.params[i * n..(i + 1) * n];
            let mut acc = row[self.dim] * t;
            for j in 0..self.dim {
                acc += row[j] * x[j];
            }
            *o = acc + b[i];
        }
    }

    fn backward(&self, x: &[f64], t: f64, grad_out: &[f64], grad: &mut [f64]) {
        let n = self.dim + 1;
        for (i, &g) in grad_out.iter().enumerate() {
            let row = &mut grad[i * n..(i + 1) * n];
            for j in 0..self.dim {
                row[j] += g * x[j];
            }
            row[self.dim] += g * t;
        }
        let off = self.dim * n;
        for (i, &g) in grad_out.iter().enumerate() {
            grad[off + i] += g;
        }
    }
}

/// `f(x, t) = W2·tanh(W1·[x; t] + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpField {
    dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl MlpField {
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        };
        let s1 = 1.0 / ((dim + 1) as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut params = Vec::with_capacity(Self::param_count(dim, hidden));
        params.extend((0..hidden * (dim + 1)).map(|_| normal(s1)));
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend((0..dim * hidden).map(|_| normal(s2)));
        params.extend(std::iter::repeat_n(0.0, dim));
        Self { dim, hidden, params }
    }

    pub fn param_count(dim: usize, hidden: usize) -> usize {
        hidden * (dim + 1) + hidden + dim * hidden + dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * (self.dim + 1);
        let w2 = b1 + self.hidden;
        (b1, w2, w2 + self.dim * self.hidden)
    }

    fn hidden_act(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = self.dim + 1;
        let (b1, _, _) = self.offsets();
        (0..self.hidden)
            .map(|k| {
                let row = &self.params[k * n..(k + 1) * n];
                let mut acc = row[self.dim] * t + self.params[b1 + k];
                for j in 0..self.dim {
                    acc += row[j] * x[j];
                }
                acc.tanh()
            })
            .collect()
    }
}

impl FieldModel for MlpField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let h = self.hidden_act(x, t);
        let (_, w2, b2) = self.offsets();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.params[w2 + i * self.hidden..w2 + (i + 1) * self.hidden];
            *o = row.iter().zip(&h).map(|(w, h)| w * h).sum::<f64>() + self.params[b2 + i];
        }
    }

    fn backward(&self, x: &[f64], t: f64, grad_out: &[f64], grad: &mut [f64]) {
        let h = self.hidden_act(x, t);
        let n = self.dim + 1;
        let (b1, w2, b2) = self.offsets();
        let mut dh = vec![0.0; self.hidden];
        for (i, &g) in grad_out.iter().enumerate() {
            let base = w2 + i * self.hidden;
            for k in 0..self.hidden {
                grad[base + k] += g * h[k];
                dh[k] += g * self.params[base + k];
            }
            grad[b2 + i] += g;
        }
        for k in 0..self.hidden {
            let dz = dh[k] * (1.0 - h[k] * h[k]);
            let row = &mut grad[k * n..(k + 1) * n];
            for j in 0..self.dim {
                row[j] += dz * x[j];
            }
            row[self.dim] += dz * t;
            grad[b1 + k] += dz;
        }
    }
}

/// Row-major `B × dim` latents with matching noise and times.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBatch {
    pub dim: usize,
    pub x0: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: Vec<f64>,
}

impl ToyBatch {
    pub fn new(dim: usize, x0: Vec<f64>, eps: Vec<f64>, t: Vec<f64>) -> Result<Self, CfmError> {
        if dim == 0 || t.is_empty() || x0.len() != dim * t.len() || eps.len() != x0.len() {
            return Err(CfmError::ShapeMismatch(format!(
                "dim {dim}, x0 {}, eps {}, t {}",
                x0.len(),
                eps.len(),
                t.len()
            )));
        }
        if t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CfmError::ShapeMismatch("t outside [0, 1]".into()));
        }
        Ok(Self { dim, x0, eps, t })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Draws `size` rows of `data` with fresh noise and uniform times.
    pub fn draw(data: &[f64], dim: usize, size: usize, rng: &mut impl Rng) -> Self {
        let rows = data.len() / dim;
        let mut x0 = Vec::with_capacity(size * dim);
        for _ in 0..size {
            let r = rng.random_range(0..rows);
            x0.extend_from_slice(&data[r * dim..(r + 1) * dim]);
        }
        let eps = (0..size * dim).map(|_| StandardNormal.sample(rng)).collect();
        let t = (0..size).map(|_| rng.random::<f64>()).collect();
        Self { dim, x0, eps, t }
    }
}

pub fn interpolant(x0: &[f64], eps: &[f64], t: f64) -> Result<Vec<f64>, CfmError> {
    if x0.len() != eps.len() {
        return Err(CfmError::ShapeMismatch(format!("{} vs {}", x0.len(), eps.len())));
    }
    Ok(x0.iter().zip(eps).map(|(a, e)| (1.0 - t) * a + t * e).collect())
}

fn check_dims(model: &dyn FieldModel, batch: &ToyBatch) -> Result<(), CfmError> {
    if model.dim() != batch.dim {
        return Err(CfmError::ShapeMismatch(format!(
            "model dim {} vs batch dim {}",
            model.dim(),
            batch.dim
        )));
    }
    Ok(())
}

/// Per-sample residual `f(x_t, t) - (eps - x0)`.
fn residuals(model: &dyn FieldModel, batch: &ToyBatch) -> Vec<(Vec<f64>, Vec<f64>)> {
    let d = batch.dim;
    (0..batch.len())
        .map(|b| {
            let x0 = &batch.x0[b * d..(b + 1) * d];
            let eps = &batch.eps[b * d..(b + 1) * d];
            let t = batch.t[b];
            let xt: Vec<f64> = x0.iter().zip(eps).map(|(a, e)| (1.0 - t) * a + t * e).collect();
            let mut r = vec![0.0; d];
            model.eval(&xt, t, &mut r);
            for ((r, a), e) in r.iter_mut().zip(x0).zip(eps) {
                *r -= e - a;
            }
            (xt, r)
        })
        .collect()
}

/// Mean over the batch of `‖f(x_t, t) - (eps - x0)‖²`.
pub fn cfm_loss(model: &dyn FieldModel, batch: &ToyBatch) -> Result<f64, CfmError> {
    check_dims(model, batch)?;
    let total: f64 = residuals(model, batch)
        .iter()
        .map(|(_, r)| r.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(total / batch.len() as f64)
}

/// Loss split over two coordinate blocks `[0, split)` and `[split, dim)`.
pub fn cfm_loss_blocks(model: &dyn FieldModel, batch: &ToyBatch, split: usize) -> Result<(f64, f64), CfmError> {
    check_dims(model, batch)?;
    if split > batch.dim {
        return Err(CfmError::ShapeMismatch(format!("split {split} > dim {}", batch.dim)));
    }
    let (mut a, mut b) = (0.0, 0.0);
    for (_, r) in residuals(model, batch) {
        a += r[..split].iter().map(|v| v * v).sum::<f64>();
        b += r[split..].iter().map(|v| v * v).sum::<f64>();
    }
    let n = batch.len() as f64;
    Ok((a / n, b / n))
}

pub fn loss_and_grad(model: &dyn FieldModel, batch: &ToyBatch) -> Result<(f64, Vec<f64>), CfmError> {
    check_dims(model, batch)?;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    for (b, (xt, r)) in residuals(model, batch).into_iter().enumerate() {
        loss += r.iter().map(|v| v * v).sum::<f64>();
        let g: Vec<f64> = r.iter().map(|v| 2.0 * v / n).collect();
        model.backward(&xt, batch.t[b], &g, &mut grad);
    }
    Ok((loss / n, grad))
}

/// Central-difference gradient of the loss.
pub fn finite_difference_grad<M: FieldModel + Clone>(model: &M, batch: &ToyBatch, h: f64) -> Result<Vec<f64>, CfmError> {
    let mut m = model.clone();
    let mut out = Vec::with_capacity(model.params().len());
    for i in 0..model.params().len() {
        let p = model.params()[i];
        m.params_mut()[i] = p + h;
        let up = cfm_loss(&m, batch)?;
        m.params_mut()[i] = p - h;
        let down = cfm_loss(&m, batch)?;
        m.params_mut()[i] = p;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `‖g - g_fd‖ / max(‖g‖, ‖g_fd‖)`, or 0 when both vanish.
pub fn gradient_check<M: FieldModel + Clone>(model: &M, batch: &ToyBatch, h: f64) -> Result<f64, CfmError> {
    let (_, g) = loss_and_grad(model, batch)?;
    let fd = finite_difference_grad(model, batch, h)?;
    let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = norm(&g).max(norm(&fd));
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub eval_batch: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            steps: 2000,
            batch: 128,
            seed: 0,
            eval_batch: 1024,
            eval_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Minibatch loss before each update.
    pub trace: Vec<f64>,
    /// `(step, loss)` on a fixed held-out batch, including step 0 and the final step.
    pub eval_trace: Vec<(usize, f64)>,
}

impl TrainReport {
    pub fn initial_eval(&self) -> f64 {
        self.eval_trace.first().map_or(f64::NAN, |e| e.1)
    }

    pub fn final_eval(&self) -> f64 {
        self.eval_trace.last().map_or(f64::NAN, |e| e.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,eval_loss\n");
        let mut ev = self.eval_trace.iter().peekable();
        for (i, l) in self.trace.iter().enumerate() {
            let e = match ev.peek() {
                Some((s, v)) if *s == i => {
                    let v = *v;
                    ev.next();
                    format!("{v}")
                }
                _ => String::new(),
            };
            s.push_str(&format!("{i},{l},{e}\n"));
        }
        for (step, v) in ev {
            s.push_str(&format!("{step},,{v}\n"));
        }
        s
    }
}

/// Gradient descent with momentum on minibatches drawn from `data` (row-major, `model.dim()` wide).
pub fn train(model: &mut dyn FieldModel, data: &[f64], cfg: &TrainConfig) -> Result<TrainReport, CfmError> {
    let d = model.dim();
    if data.is_empty() || data.len() % d != 0 {
        return Err(CfmError::ShapeMismatch(format!("{} values for dim {d}", data.len())));
    }
    if cfg.batch == 0 || cfg.eval_batch == 0 || cfg.eval_every == 0 {
        return Err(CfmError::Config("batch sizes and eval_every must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = ToyBatch::draw(data, d, cfg.eval_batch, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let mut velocity = vec![0.0; model.params().len()];
    let mut report = TrainReport {
        trace: Vec::with_capacity(cfg.steps),
        eval_trace: Vec::new(),
    };
    for step in 0..cfg.steps {
        if step % cfg.eval_every == 0 {
            report.eval_trace.push((step, cfm_loss(model, &eval)?));
        }
        let batch = ToyBatch::draw(data, d, cfg.batch, &mut rng);
        let (loss, grad) = loss_and_grad(model, &batch)?;
        report.trace.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(CfmError::Divergence {
                step,
                trace: report.trace,
            });
        }
        for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v - cfg.lr * g;
            *p += *v;
        }
    }
    let last = cfm_loss(model, &eval)?;
    if !last.is_finite() {
        return Err(CfmError::Divergence {
            step: cfg.steps,
            trace: report.trace,
        });
    }
    report.eval_trace.push((cfg.steps, last));
    Ok(report)
}

/// Integrates `dx/dt = f(x, t)` from `t = 1` (`x = eps`) back to `t = 0`.
pub fn euler_sample(model: &dyn FieldModel, eps: &[f64], steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    let dt = 1.0 / steps as f64;
    let mut x = eps.to_vec();
    let mut v = vec![0.0; x.len()];
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        model.eval(&x, t, &mut v);
        for (x, v) in x.iter_mut().zip(&v) {
            *x -= dt * v;
        }
    }
    x
}

/// Isotropic Gaussian mixture with equal weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
}

impl Mixture {
    /// Two well-separated 2D modes away from the origin.
    pub fn toy_2d() -> Self {
        Self {
            means: vec![vec![4.0, 8.0], vec![8.0, 4.0]],
            std: 0.3,
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            let m = &self.means[rng.random_range(0..self.means.len())];
            for mu in m {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(mu + self.std * z);
            }
        }
        out
    }

    pub fn nearest_mode_distance(&self, x: &[f64]) -> f64 {
        self.means
            .iter()
            .map(|m| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Model kinds stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyField {
    Linear(LinearField),
    Mlp(MlpField),
}

impl AnyField {
    pub fn as_model(&self) -> &dyn FieldModel {
        match self {
            AnyField::Linear(m) => m,
            AnyField::Mlp(m) => m,
        }
    }

    pub fn as_model_mut(&mut self) -> &mut dyn FieldModel {
        match self {
            AnyField::Linear(m) => m,
            AnyField::Mlp(m) => m,
        }
    }

    /// Little-endian: `PHXC`, u32 kind (0 linear, 1 mlp), u32 dim, u32 hidden,
    /// u32 parameter count, then the parameters as f32.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let (kind, hidden) = match self {
            AnyField::Linear(_) => (0u32, 0u32),
            AnyField::Mlp(m) => (1, m.hidden as u32),
        };
        let m = self.as_model();
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for v in [kind, m.dim() as u32, hidden, m.params().len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in m.params() {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, CfmError> {
        let bad = |m: &str| CfmError::Checkpoint(m.into());
        if bytes.len() < 20 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (kind, dim, hidden, count) = (word(0), word(1), word(2), word(3));
        if bytes.len() != 20 + 4 * count {
            return Err(bad("payload length"));
        }
        let params: Vec<f64> = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        match kind {
            0 if count == dim * (dim + 1) + dim => Ok(AnyField::Linear(LinearField { dim, params })),
            1 if count == MlpField::param_count(dim, hidden) => Ok(AnyField::Mlp(MlpField { dim, hidden, params })),
            _ => Err(bad("kind or parameter count")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CfmError> {
        let io = |source| CfmError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_checkpoint()))
            .map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CfmError> {
        let bytes = std::fs::read(path).map_err(|source| CfmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn random_batch(dim: usize, n: usize, seed: u64) -> ToyBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        ToyBatch::draw(&data, dim, n, &mut rng)
    }

    // Straight-line reimplementation of the loss for a linear field.
    fn oracle_linear_loss(m: &LinearField, b: &ToyBatch) -> f64 {
        let d = b.dim;
        let p = m.params();
        let mut total = 0.0;
        for s in 0..b.len() {
            let t = b.t[s];
            for i in 0..d {
                let mut f = p[d * (d + 1) + i] + p[i * (d + 1) + d] * t;
                for j in 0..d {
                    let xt = (1.0 - t) * b.x0[s * d + j] + t * b.eps[s * d + j];
                    f += p[i * (d + 1) + j] * xt;
                }
                let target = b.eps[s * d + i] - b.x0[s * d + i];
                total += (f - target) * (f - target);
            }
        }
        total / b.len() as f64
    }

    #[test]
    fn interpolant_endpoints() {
        let x0 = [0.3, -1.7];
        let eps = [2.5, 0.1];
        assert_eq!(interpolant(&x0, &eps, 0.0).unwrap(), x0);
        assert_eq!(interpolant(&x0, &eps, 1.0).unwrap(), eps);
        assert_eq!(interpolant(&[0.0], &[2.0], 0.5).unwrap(), [1.0]);
        assert!(interpolant(&[0.0], &[1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn closed_form_losses() {
        let zero = LinearField::zeros(2);
        let b = ToyBatch::new(2, vec![0.0, 0.0], vec![2.0, 0.0], vec![0.4]).unwrap();
        assert_eq!(cfm_loss(&zero, &b).unwrap(), 4.0);
        let b = ToyBatch::new(2, vec![1.0, -3.0], vec![0.5, 2.0], vec![0.7]).unwrap();
        let c = LinearField::constant(&[-0.5, 5.0]);
        assert_eq!(cfm_loss(&c, &b).unwrap(), 0.0);
        assert!(cfm_loss(&LinearField::zeros(3), &b).is_err());
    }

    #[test]
    fn loss_matches_oracle() {
        for seed in 0..10 {
            let m = LinearField::new(DEFAULT_LATENT_DIM, seed);
            let b = random_batch(DEFAULT_LATENT_DIM, 16, seed + 100);
            let got = cfm_loss(&m, &b).unwrap();
            assert!((got - oracle_linear_loss(&m, &b)).abs() < 1e-12 * got.max(1.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let b = random_batch(DEFAULT_LATENT_DIM, 8, seed);
            let lin = LinearField::new(DEFAULT_LATENT_DIM, seed);
            assert!(gradient_check(&lin, &b, 1e-5).unwrap() < 1e-4);
            let mlp = MlpField::new(DEFAULT_LATENT_DIM, 16, seed);
            assert!(gradient_check(&mlp, &b, 1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn block_losses_add_up() {
        let m = MlpField::new(16, 8, 1);
        let b = random_batch(16, 10, 2);
        let (a, p) = cfm_loss_blocks(&m, &b, 8).unwrap();
        let total = cfm_loss(&m, &b).unwrap();
        assert!((a + p - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn zero_lr_keeps_trace_constant_on_eval() {
        let data = Mixture::toy_2d().sample(256, 0);
        let mut m = LinearField::new(2, 0);
        let before = m.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 20,
            eval_every: 5,
            ..Default::default()
        };
        let r = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(m, before);
        assert!(r.eval_trace.iter().all(|e| e.1 == r.eval_trace[0].1));
    }

    #[test]
    fn divergence_is_reported() {
        let data = Mixture::toy_2d().sample(64, 0);
        let mut m = LinearField::new(2, 0);
        let cfg = TrainConfig {
            lr: 10.0,
            steps: 500,
            ..Default::default()
        };
        assert!(matches!(train(&mut m, &data, &cfg), Err(CfmError::Divergence { .. })));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = Mixture::toy_2d().sample(2048, 1);
        let cfg = TrainConfig {
            steps: 300,
            ..Default::default()
        };
        let mut a = MlpField::new(2, 32, 3);
        let mut b = a.clone();
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(ra.final_eval() < 0.5 * ra.initial_eval());
        assert!(ra.to_csv().starts_with("step,loss,eval_loss\n0,"));
    }

    #[test]
    fn euler_edge_cases() {
        let eps = [0.25, -1.5, 3.0];
        assert_eq!(euler_sample(&LinearField::zeros(3), &eps, 7), eps);
        let x0 = [1.0, 0.5, -2.25];
        let v: Vec<f64> = eps.iter().zip(&x0).map(|(e, a)| e - a).collect();
        assert_eq!(euler_sample(&LinearField::constant(&v), &eps, 1), x0);
    }

    proptest! {
        // Dyadic inputs keep every subtraction exact, so recovery is bit-exact.
        #[test]
        fn one_step_euler_is_exact_on_dyadics(
            x0 in prop::collection::vec(-4096i32..4096, 8),
            eps in prop::collection::vec(-4096i32..4096, 8),
        ) {
            let x0: Vec<f64> = x0.iter().map(|v| *v as f64 / 256.0).collect();
            let eps: Vec<f64> = eps.iter().map(|v| *v as f64 / 256.0).collect();
            let v: Vec<f64> = eps.iter().zip(&x0).map(|(e, a)| e - a).collect();
            let out = euler_sample(&LinearField::constant(&v), &eps, 1);
            prop_assert!(out.iter().zip(&x0).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn loss_is_nonnegative(seed in 0u64..1000) {
            let m = MlpField::new(3, 4, seed);
            let b = random_batch(3, 4, seed);
            prop_assert!(cfm_loss(&m, &b).unwrap() >= 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        for f in [
            AnyField::Linear(LinearField::new(4, 1)),
            AnyField::Mlp(MlpField::new(2, 8, 1)),
        ] {
            let back = AnyField::from_checkpoint(&f.to_checkpoint()).unwrap();
            for (a, b) in f.as_model().params().iter().zip(back.as_model().params()) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
        assert!(AnyField::from_checkpoint(b"PHXC").is_err());
    }
}
