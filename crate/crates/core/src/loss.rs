//! Training objectives: class-weighted cross entropy and a boundary-aware
//! contour term comparing blurred Sobel edge maps of the predicted class
//! probabilities against those of the one-hot labels.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::frame::{LabelMap, NUM_CLASSES};
use crate::tensor::{Real, Shape, Tensor};

/// What the contour term extracts edges from on the prediction side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourInput {
    /// Softmax probabilities, on the same [0, 1] scale as one-hot labels.
    Softmax,
    /// Raw network logits.
    RawLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub class_weights: [f64; NUM_CLASSES],
    pub alpha: f64,
    pub beta: f64,
    pub gaussian_sigma: f64,
    pub gaussian_size: usize,
    pub sobel_epsilon: f64,
    pub contour_input: ContourInput,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            class_weights: [1.0, 5.0, 5.0],
            alpha: 1.0,
            beta: 0.005,
            gaussian_sigma: 2.121,
            gaussian_size: 5,
            sobel_epsilon: 1e-8,
            contour_input: ContourInput::Softmax,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("LossConfig", "class weights must be positive"));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::invalid("LossConfig", "alpha and beta must be non-negative"));
        }
        if self.gaussian_size % 2 == 0 || !(self.gaussian_sigma > 0.0) {
            return Err(Error::invalid("LossConfig", "gaussian size must be odd and sigma positive"));
        }
        if !(self.sobel_epsilon > 0.0) {
            return Err(Error::invalid("LossConfig", "sobel epsilon must be positive"));
        }
        Ok(())
    }

    fn weights<T: Real>(&self) -> Vec<T> {
        self.class_weights.iter().map(|&w| T::from_f64(w)).collect()
    }
}

/// Flattens a batch of equally sized label maps into `N×H×W` order.
pub fn flatten_labels(labels: &[LabelMap]) -> Result<(Vec<u8>, usize, usize)> {
    let first = labels
        .first()
        .ok_or_else(|| Error::invalid("labels", "empty label batch"))?;
    let (w, h) = (first.width(), first.height());
    let mut out = Vec::with_capacity(labels.len() * w * h);
    for l in labels {
        if (l.width(), l.height()) != (w, h) {
            return Err(Error::invalid("labels", "label maps in a batch differ in size"));
        }
        out.extend_from_slice(l.classes());
    }
    Ok((out, h, w))
}

fn check_batch(op: &'static str, logits: Shape, labels: &[LabelMap]) -> Result<Vec<u8>> {
    let (flat, h, w) = flatten_labels(labels)?;
    let want = Shape::new(labels.len(), NUM_CLASSES, h, w);
    if logits != want {
        return Err(Error::ShapeMismatch {
            op,
            left: logits,
            right: want,
        });
    }
    Ok(flat)
}

/// `N×n_classes×H×W` indicator maps.
pub fn one_hot<T: Real>(labels: &[LabelMap], n_classes: usize) -> Result<Tensor<T>> {
    let (flat, h, w) = flatten_labels(labels)?;
    if let Some(&bad) = flat.iter().find(|&&c| c as usize >= n_classes) {
        return Err(Error::LabelOutOfRange {
            value: bad,
            classes: n_classes,
        });
    }
    let plane = h * w;
    let shape = Shape::new(labels.len(), n_classes, h, w);
    let mut t = Tensor::zeros(shape);
    for (i, &c) in flat.iter().enumerate() {
        let (b, p) = (i / plane, i % plane);
        t.data_mut()[(b * n_classes + c as usize) * plane + p] = T::one();
    }
    Ok(t)
}

pub const SOBEL_H: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_V: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Block-diagonal `channels×channels×3×3` kernel applying `k` per channel.
fn per_channel_kernel<T: Real>(k: &[[f64; 3]; 3], channels: usize) -> Tensor<T> {
    Tensor::from_fn(Shape::new(channels, channels, 3, 3), |[o, i, y, x]| {
        if o == i {
            T::from_f64(k[y][x])
        } else {
            T::zero()
        }
    })
}

/// Normalized `size×size` Gaussian with weights `∝ exp(−(i²+j²)/2σ²)`.
pub fn gaussian_kernel<T: Real>(sigma: f64, size: usize) -> Tensor<T> {
    let r = (size / 2) as isize;
    let raw: Vec<f64> = (-r..=r)
        .flat_map(|i| (-r..=r).map(move |j| (-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp()))
        .collect();
    let total: f64 = raw.iter().sum();
    Tensor::from_vec(
        Shape::new(1, 1, size, size),
        raw.iter().map(|&v| T::from_f64(v / total)).collect(),
    )
    .expect("size² weights")
}

/// Sum over non-background channels of the smoothed Sobel gradient
/// magnitude `sqrt(gx² + gy² + eps)`. Returns `N×1×H×W`.
pub fn sobel_contour<T: Real>(g: &mut Graph<T>, class_maps: Var, eps: f64) -> Result<Var> {
    let s = g.shape(class_maps);
    if s.c() < 2 {
        return Err(Error::invalid("sobel_contour", format!("need ≥ 2 class channels, got {s}")));
    }
    let fg_channels = s.c() - 1;
    let fg = g.slice_channels(class_maps, 1, fg_channels)?;
    let kh = g.constant(per_channel_kernel(&SOBEL_H, fg_channels));
    let kv = g.constant(per_channel_kernel(&SOBEL_V, fg_channels));
    let gx = g.conv2d(fg, kh, 1, Padding::Replicate)?;
    let gy = g.conv2d(fg, kv, 1, Padding::Replicate)?;
    let gx2 = g.square(gx);
    let gy2 = g.square(gy);
    let mag2 = g.add(gx2, gy2)?;
    let mag2 = g.add_scalar(mag2, T::from_f64(eps));
    let mag = g.sqrt(mag2);
    Ok(g.sum_channels(mag))
}

/// Per-channel Gaussian blur with replicate padding.
pub fn gaussian_blur<T: Real>(g: &mut Graph<T>, map: Var, sigma: f64, size: usize) -> Result<Var> {
    if size % 2 == 0 {
        return Err(Error::invalid("gaussian_blur", format!("kernel size {size} must be odd")));
    }
    let c = g.shape(map).c();
    let base = gaussian_kernel::<T>(sigma, size);
    let kernel = Tensor::from_fn(Shape::new(c, c, size, size), |[o, i, y, x]| {
        if o == i {
            base.at([0, 0, y, x])
        } else {
            T::zero()
        }
    });
    let k = g.constant(kernel);
    g.conv2d(map, k, 1, Padding::Replicate)
}

pub fn weighted_softmax_ce<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    labels: &[LabelMap],
    cfg: &LossConfig,
) -> Result<Var> {
    let flat = check_batch("weighted_softmax_ce", g.shape(logits), labels)?;
    g.weighted_softmax_ce(logits, &flat, &cfg.weights::<T>())
}

/// Blurred contour map `B(S(M))` of a class-map tensor.
pub fn blurred_contour<T: Real>(g: &mut Graph<T>, class_maps: Var, cfg: &LossConfig) -> Result<Var> {
    let s = sobel_contour(g, class_maps, cfg.sobel_epsilon)?;
    gaussian_blur(g, s, cfg.gaussian_sigma, cfg.gaussian_size)
}

/// Mean squared difference between blurred contours of the prediction and
/// the one-hot labels, normalized by `N·H·W`.
pub fn contour_loss<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[LabelMap], cfg: &LossConfig) -> Result<Var> {
    check_batch("contour_loss", g.shape(logits), labels)?;
    let pred = match cfg.contour_input {
        ContourInput::Softmax => g.softmax_channels(logits)?,
        ContourInput::RawLogits => logits,
    };
    let target = g.constant(one_hot(labels, NUM_CLASSES)?);
    let bp = blurred_contour(g, pred, cfg)?;
    let bt = blurred_contour(g, target, cfg)?;
    let diff = g.sub(bt, bp)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `alpha · CE + beta · contour`. With `beta = 0` the contour term is not
/// evaluated at all.
pub fn finetune_loss<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[LabelMap], cfg: &LossConfig) -> Result<Var> {
    let ce = weighted_softmax_ce(g, logits, labels, cfg)?;
    let base = if cfg.alpha == 1.0 { ce } else { g.scale(ce, T::from_f64(cfg.alpha)) };
    if cfg.beta == 0.0 {
        return Ok(base);
    }
    let cl = contour_loss(g, logits, labels, cfg)?;
    let cl = g.scale(cl, T::from_f64(cfg.beta));
    g.add(base, cl)
}

/// Scalar values of every loss term for one logits/label batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub softmax_ce: f64,
    pub contour: f64,
    pub finetune: f64,
}

pub fn evaluate_losses<T: Real>(logits: &Tensor<T>, labels: &[LabelMap], cfg: &LossConfig) -> Result<LossReport> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let ce = weighted_softmax_ce(&mut g, x, labels, cfg)?;
    let cl = contour_loss(&mut g, x, labels, cfg)?;
    let ft = finetune_loss(&mut g, x, labels, cfg)?;
    Ok(LossReport {
        softmax_ce: g.value(ce).item()?.to_f64(),
        contour: g.value(cl).item()?.to_f64(),
        finetune: g.value(ft).item()?.to_f64(),
    })
}
