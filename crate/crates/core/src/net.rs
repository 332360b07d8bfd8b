//! Toy-scale dense-attention segmentation network.
//!
//! Levels are numbered from 1 (finest) to `n` (coarsest). Every level owns
//! two 3×3 conv + batch-norm + ReLU stages, the first of which halves the
//! resolution (except on level 1). Each skip connection is a squeezed copy
//! of its level gated by two attention maps: the *fine* map multiplies the
//! downsampled squeezes of all finer levels, the *coarse* map the upsampled
//! squeezes of all coarser ones. The decoder concatenates the gated skip
//! with the running feature map and upsamples with a transposed
//! convolution, finishing with a 1×1 projection to three class logits.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Padding, Var};
use crate::error::{Error, Result};
use crate::frame::{DepthMap, LabelMap, NUM_CLASSES};
use crate::tensor::{Real, Shape, Tensor};

/// Value given to pixels without a depth return after normalization.
pub const INVALID_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    #[default]
    Dense,
    /// Fine and coarse maps are all ones: plain squeezed skips.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_levels: usize,
    pub squeeze_channels: usize,
    /// Encoder output channels per level.
    pub channels: Vec<usize>,
    pub input_height: usize,
    pub input_width: usize,
    pub attention: AttentionMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig {
            n_levels: 4,
            squeeze_channels: 8,
            channels: vec![16, 32, 64, 64],
            input_height: 64,
            input_width: 64,
            attention: AttentionMode::Dense,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Six levels, 64-channel squeeze, 640×480 input.
    pub fn full() -> Self {
        ModelConfig {
            n_levels: 6,
            squeeze_channels: 64,
            channels: vec![32, 64, 128, 256, 256, 256],
            input_height: 480,
            input_width: 640,
            ..Self::toy()
        }
    }

    /// Spatial divisor every input side must be a multiple of.
    pub fn multiple(&self) -> usize {
        1 << (self.n_levels - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("ModelConfig", msg));
        if self.n_levels < 2 || self.n_levels > 16 {
            return bad(format!("n_levels must be in 2..=16, got {}", self.n_levels));
        }
        if self.squeeze_channels == 0 {
            return bad("squeeze_channels must be at least 1".into());
        }
        if self.channels.len() != self.n_levels || self.channels.contains(&0) {
            return bad(format!(
                "need {} positive channel counts, got {:?}",
                self.n_levels, self.channels
            ));
        }
        let m = self.multiple();
        if self.input_height == 0 || self.input_width == 0 || self.input_height % m != 0 || self.input_width % m != 0 {
            return bad(format!(
                "input {}×{} is not a positive multiple of {m}",
                self.input_height, self.input_width
            ));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return bad("need 0 < bn_momentum ≤ 1 and bn_eps > 0".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid("ModelConfig", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn decoder_channels(&self, level: usize) -> usize {
        self.channels[level.saturating_sub(2)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Real> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Running statistics of one batch-norm layer, keyed by the layer prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are left to the caller.
    Train,
    /// Running statistics; deterministic per frame.
    Eval,
}

pub struct ForwardPass<T> {
    pub logits: Var,
    /// Graph leaves of the parameters, in [`Model::params`] order.
    pub params: Vec<Var>,
    /// One entry per norm layer in [`Model::norms`] order; empty in eval mode.
    pub batch_stats: Vec<BatchStats<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    norms: Vec<RunningStats<T>>,
    norm_index: HashMap<String, usize>,
}

struct Builder<'a, T: Real, R> {
    model: Model<T>,
    rng: &'a mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<T>) {
        self.model.index.insert(name.clone(), self.model.params.len());
        self.model.params.push(Param { name, kind, value });
    }

    fn he(&mut self, name: String, shape: Shape, fan_in: usize) {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let data = (0..shape.numel()).map(|_| T::from_f64(normal.sample(self.rng))).collect();
        let value = Tensor::from_vec(shape, data).expect("shape and data agree");
        self.push(name, ParamKind::Weight, value);
    }

    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) {
        self.he(format!("{name}.weight"), Shape::new(out, inp, k, k), inp * k * k);
    }

    fn bias(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(Shape::new(1, c, 1, 1)));
    }

    fn norm(&mut self, name: &str, c: usize) {
        let s = Shape::new(1, c, 1, 1);
        self.push(format!("{name}.gamma"), ParamKind::NormScale, Tensor::ones(s));
        self.push(format!("{name}.beta"), ParamKind::NormShift, Tensor::zeros(s));
        self.model.norm_index.insert(name.to_string(), self.model.norms.len());
        self.model.norms.push(RunningStats {
            name: name.to_string(),
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
        });
    }

    fn squeeze(&mut self, source: usize, consumer: usize, inp: usize) {
        let k = self.model.config.squeeze_channels;
        let name = squeeze_name(source, consumer);
        self.conv(&format!("{name}.conv1"), k, inp, 1);
        self.bias(&format!("{name}.conv1"), k);
        self.conv(&format!("{name}.conv3"), k, k, 3);
        self.bias(&format!("{name}.conv3"), k);
    }
}

fn squeeze_name(source: usize, consumer: usize) -> String {
    format!("squeeze.{source}.{consumer}")
}

impl<T: Real> Model<T> {
    /// He-initialized weights, unit norm scales, zero offsets and biases.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.n_levels;
        let k = config.squeeze_channels;
        let dense = config.attention == AttentionMode::Dense;
        let chans = config.channels.clone();
        let mut b = Builder {
            model: Model {
                config: config.clone(),
                params: Vec::new(),
                index: HashMap::new(),
                norms: Vec::new(),
                norm_index: HashMap::new(),
            },
            rng,
        };
        for i in 1..=n {
            let inp = if i == 1 { 1 } else { chans[i - 2] };
            let c = chans[i - 1];
            b.conv(&format!("enc.{i}.conv1"), c, inp, 3);
            b.norm(&format!("enc.{i}.bn1"), c);
            b.conv(&format!("enc.{i}.conv2"), c, c, 3);
            b.norm(&format!("enc.{i}.bn2"), c);
        }
        for consumer in 1..=n {
            for source in 1..=n {
                if source == consumer || dense {
                    b.squeeze(source, consumer, chans[source - 1]);
                }
            }
        }
        for i in (1..=n).rev() {
            let running = if i == n { chans[n - 1] } else { config.decoder_channels(i + 1) };
            let out = config.decoder_channels(i);
            b.conv(&format!("dec.{i}"), out, k + running, 3);
            b.bias(&format!("dec.{i}"), out);
        }
        b.conv("head", NUM_CLASSES, config.decoder_channels(1), 1);
        b.bias("head", NUM_CLASSES);
        Ok(b.model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn norms(&self) -> &[RunningStats<T>] {
        &self.norms
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.param_index(name).map(|i| &self.params[i])
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = self
            .param_index(name)
            .ok_or_else(|| Error::invalid("set_param", format!("unknown parameter {name}")))?;
        let p = &mut self.params[i];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().numel()).sum()
    }

    /// Adds every parameter to `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.len() != self.norms.len() {
            return Err(Error::invalid(
                "update_running_stats",
                format!("expected {} layers, got {}", self.norms.len(), stats.len()),
            ));
        }
        let m = T::from_f64(self.config.bn_momentum);
        let keep = T::one() - m;
        for (run, batch) in self.norms.iter_mut().zip(stats) {
            for (r, &b) in run.mean.iter_mut().zip(&batch.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in run.var.iter_mut().zip(&batch.var) {
                *r = keep * *r + m * b;
            }
        }
        Ok(())
    }

    /// Overwrites running statistics of the named layer.
    pub fn set_running_stats(&mut self, name: &str, mean: Vec<T>, var: Vec<T>) -> Result<()> {
        let i = *self
            .norm_index
            .get(name)
            .ok_or_else(|| Error::invalid("set_running_stats", format!("unknown norm layer {name}")))?;
        let run = &mut self.norms[i];
        if mean.len() != run.mean.len() || var.len() != run.var.len() {
            return Err(Error::invalid("set_running_stats", format!("channel count mismatch for {name}")));
        }
        run.mean = mean;
        run.var = var;
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph<T>, input: &Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
        let params = self.bind(g);
        let x = g.constant(input.clone());
        let (logits, batch_stats) = self.forward_with(g, &params, x, mode)?;
        Ok(ForwardPass {
            logits,
            params,
            batch_stats,
        })
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.index[name]]
    }

    fn check_vars(&self, vars: &[Var]) -> Result<()> {
        if vars.len() != self.params.len() {
            return Err(Error::invalid(
                "forward",
                format!("expected {} parameter handles, got {}", self.params.len(), vars.len()),
            ));
        }
        Ok(())
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        let m = self.config.multiple();
        if s.c() != 1 {
            return Err(Error::invalid("forward", format!("expected one input channel, got {s}")));
        }
        if s.h() == 0 || s.w() == 0 || s.h() % m != 0 || s.w() % m != 0 {
            return Err(Error::IndivisibleInput {
                height: s.h(),
                width: s.w(),
                multiple: m,
            });
        }
        Ok(())
    }

    /// Forward pass over explicit parameter handles (in [`Model::params`]
    /// order), so callers can substitute any parameter.
    pub fn forward_with(&self, g: &mut Graph<T>, vars: &[Var], input: Var, mode: Mode) -> Result<(Var, Vec<BatchStats<T>>)> {
        self.check_vars(vars)?;
        self.check_input(g.shape(input))?;
        let mut stats = Vec::new();
        let levels = self.encode(g, vars, input, mode, &mut stats)?;
        let n = self.config.n_levels;
        let mut running = levels[n - 1];
        for i in (1..=n).rev() {
            let skip = self.attended_skip(g, vars, &levels, i)?;
            let cat = g.concat_channels(&[skip, running])?;
            let stride = if i > 1 { 2 } else { 1 };
            let y = g.transposed_conv2d(cat, self.var(vars, &format!("dec.{i}.weight")), stride)?;
            let y = g.add_bias(y, self.var(vars, &format!("dec.{i}.bias")))?;
            running = g.relu(y);
        }
        let logits = g.conv2d(running, self.var(vars, "head.weight"), 1, Padding::Zero)?;
        let logits = g.add_bias(logits, self.var(vars, "head.bias"))?;
        Ok((logits, stats))
    }

    /// Encoder feature maps, finest first.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<Vec<Var>> {
        let mut x = input;
        let mut levels = Vec::with_capacity(self.config.n_levels);
        for i in 1..=self.config.n_levels {
            let stride = if i == 1 { 1 } else { 2 };
            for (stage, s) in [(1, stride), (2, 1)] {
                let y = g.conv2d(x, self.var(vars, &format!("enc.{i}.conv{stage}.weight")), s, Padding::Zero)?;
                let y = self.norm(g, vars, &format!("enc.{i}.bn{stage}"), y, mode, stats)?;
                x = g.relu(y);
            }
            levels.push(x);
        }
        Ok(levels)
    }

    fn norm(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        name: &str,
        x: Var,
        mode: Mode,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<Var> {
        let gamma = self.var(vars, &format!("{name}.gamma"));
        let beta = self.var(vars, &format!("{name}.beta"));
        let eps = T::from_f64(self.config.bn_eps);
        match mode {
            Mode::Train => {
                let (y, s) = g.batch_norm_train(x, gamma, beta, eps)?;
                stats.push(s);
                Ok(y)
            }
            Mode::Eval => {
                let run = &self.norms[self.norm_index[name]];
                g.batch_norm_eval(x, gamma, beta, &run.mean, &run.var, eps)
            }
        }
    }

    /// Squeeze block of level `source` feeding level `consumer`:
    /// 1×1 conv, ReLU, 3×3 conv, ReLU, both to `k` channels.
    pub fn squeeze_block(&self, g: &mut Graph<T>, vars: &[Var], source: usize, consumer: usize, x: Var) -> Result<Var> {
        let name = squeeze_name(source, consumer);
        if self.param_index(&format!("{name}.conv1.weight")).is_none() {
            return Err(Error::invalid("squeeze_block", format!("model has no {name} block")));
        }
        let mut y = x;
        for (conv, pad) in [("conv1", Padding::Zero), ("conv3", Padding::Zero)] {
            y = g.conv2d(y, self.var(vars, &format!("{name}.{conv}.weight")), 1, pad)?;
            y = g.add_bias(y, self.var(vars, &format!("{name}.{conv}.bias")))?;
            y = g.relu(y);
        }
        Ok(y)
    }

    fn ones_like_level(&self, g: &mut Graph<T>, level: Var) -> Var {
        let s = g.shape(level);
        g.constant(Tensor::ones(Shape::new(s.n(), self.config.squeeze_channels, s.h(), s.w())))
    }

    fn gather(&self, g: &mut Graph<T>, vars: &[Var], levels: &[Var], i: usize, sources: Vec<usize>) -> Result<Var> {
        let target = g.shape(levels[i - 1]);
        let mut acc = None;
        for j in sources {
            let s = self.squeeze_block(g, vars, j, i, levels[j - 1])?;
            let r = g.bilinear_resample(s, target.h(), target.w())?;
            acc = Some(match acc {
                None => r,
                Some(a) => g.elementwise_mul(a, r)?,
            });
        }
        Ok(match acc {
            Some(a) => a,
            None => self.ones_like_level(g, levels[i - 1]),
        })
    }

    fn check_level(&self, i: usize, levels: &[Var]) -> Result<()> {
        if levels.len() != self.config.n_levels || i == 0 || i > levels.len() {
            return Err(Error::invalid(
                "attention",
                format!("level {i} out of range for {} levels", levels.len()),
            ));
        }
        Ok(())
    }

    /// Product of the squeezed, downsampled levels `i−1, …, 1`; all ones on
    /// level 1 or with attention disabled.
    pub fn fine_attention(&self, g: &mut Graph<T>, vars: &[Var], levels: &[Var], i: usize) -> Result<Var> {
        self.check_level(i, levels)?;
        let sources = match self.config.attention {
            AttentionMode::Dense => (1..i).rev().collect(),
            AttentionMode::Disabled => Vec::new(),
        };
        self.gather(g, vars, levels, i, sources)
    }

    /// Product of the squeezed, upsampled levels `i+1, …, n`; all ones on
    /// level `n` or with attention disabled.
    pub fn coarse_attention(&self, g: &mut Graph<T>, vars: &[Var], levels: &[Var], i: usize) -> Result<Var> {
        self.check_level(i, levels)?;
        let sources = match self.config.attention {
            AttentionMode::Dense => (i + 1..=levels.len()).collect(),
            AttentionMode::Disabled => Vec::new(),
        };
        self.gather(g, vars, levels, i, sources)
    }

    fn attended_skip(&self, g: &mut Graph<T>, vars: &[Var], levels: &[Var], i: usize) -> Result<Var> {
        let squeezed = self.squeeze_block(g, vars, i, i, levels[i - 1])?;
        if self.config.attention == AttentionMode::Disabled {
            return Ok(squeezed);
        }
        let fine = self.fine_attention(g, vars, levels, i)?;
        let coarse = self.coarse_attention(g, vars, levels, i)?;
        attend_skip(g, squeezed, fine, coarse)
    }

    /// Eval-mode logits for a batch of depth frames.
    pub fn infer(&self, frames: &[DepthMap]) -> Result<Tensor<T>> {
        let input = depth_batch(frames)?;
        let mut g = Graph::new();
        let pass = self.forward(&mut g, &input, Mode::Eval)?;
        Ok(g.value(pass.logits).clone())
    }

    pub fn predict_frames(&self, frames: &[DepthMap]) -> Result<Vec<LabelMap>> {
        predict(&self.infer(frames)?)
    }
}

/// `squeezed ⊙ fine ⊙ coarse`.
pub fn attend_skip<T: Real>(g: &mut Graph<T>, squeezed: Var, fine: Var, coarse: Var) -> Result<Var> {
    let gated = g.elementwise_mul(squeezed, fine)?;
    g.elementwise_mul(gated, coarse)
}

/// Per-pixel argmax over channels; ties go to the lowest class index.
pub fn predict<T: Real>(logits: &Tensor<T>) -> Result<Vec<LabelMap>> {
    let s = logits.shape();
    if s.c() != NUM_CLASSES {
        return Err(Error::invalid("predict", format!("expected {NUM_CLASSES} channels, got {s}")));
    }
    (0..s.n())
        .map(|n| {
            let planes: Vec<&[T]> = (0..s.c()).map(|c| logits.plane(n, c)).collect();
            let classes = (0..s.plane())
                .map(|p| {
                    let mut best = 0;
                    for c in 1..s.c() {
                        if planes[c][p] > planes[best][p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(s.w(), s.h(), classes)
        })
        .collect()
}

/// Zero mean, unit standard deviation over valid pixels; invalid pixels
/// become [`INVALID_SENTINEL`]. A flat frame is only shifted.
pub fn normalize_depth(depth: &DepthMap) -> Vec<f64> {
    let valid: Vec<f64> = depth.values().iter().filter(|&&d| d > 0).map(|&d| d as f64).collect();
    if valid.is_empty() {
        return vec![INVALID_SENTINEL; depth.values().len()];
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let var = valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / valid.len() as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    depth
        .values()
        .iter()
        .map(|&d| if d == 0 { INVALID_SENTINEL } else { (d as f64 - mean) * scale })
        .collect()
}

/// Stacks normalized frames into an `N×1×H×W` tensor.
pub fn depth_batch<T: Real>(frames: &[DepthMap]) -> Result<Tensor<T>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("depth_batch", "empty batch"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(frames.len() * w * h);
    for f in frames {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::invalid(
                "depth_batch",
                format!("frame is {}×{}, batch is {w}×{h}", f.width(), f.height()),
            ));
        }
        data.extend(normalize_depth(f).into_iter().map(T::from_f64));
    }
    Tensor::from_vec(Shape::new(frames.len(), 1, h, w), data)
}

#[cfg(test)]
mod tests;
