//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default central-difference step for 64-bit checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error used throughout: `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval<F>(f: &F, x: Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.constant(x);
    let out = f(&mut g, v)?;
    g.value(out).item()
}

/// Analytic gradient of the scalar `f` at `x`.
pub fn analytic_grad<F>(f: &F, x: &Tensor<f64>) -> Result<Tensor<f64>>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    g.backward(out)?;
    Ok(g.grad(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Maximum relative error between the analytic gradient of `f` and central
/// differences, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.shape().numel()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// As [`grad_check`], restricted to the listed flat coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check", "eps must be positive"));
    }
    let analytic = analytic_grad(&f, x)?;
    let mut worst = 0f64;
    for &i in coords {
        let numeric = central_difference(|t| eval(&f, t), x, i, eps)?;
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Central difference of a graph-built scalar at one flat coordinate.
pub fn numeric_partial<F>(f: &F, x: &Tensor<f64>, i: usize, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    central_difference(|t| eval(f, t), x, i, eps)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps`.
pub fn central_difference<G>(mut f: G, x: &Tensor<f64>, i: usize, eps: f64) -> Result<f64>
where
    G: FnMut(Tensor<f64>) -> Result<f64>,
{
    let mut plus = x.clone();
    plus.data_mut()[i] += eps;
    let mut minus = x.clone();
    minus.data_mut()[i] -= eps;
    Ok((f(plus)? - f(minus)?) / (2.0 * eps))
}

/// One line of [`self_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

/// Checks every loss on random 1×3×8×8 logits, then 20 random weights of a
/// small network under the fine-tuning loss.
pub fn self_check(seed: u64) -> Result<Vec<CheckResult>> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::frame::{LabelMap, NUM_CLASSES};
    use crate::loss::{contour_loss, finetune_loss, weighted_softmax_ce, LossConfig};
    use crate::net::{Mode, Model, ModelConfig, ParamKind};
    use crate::tensor::Shape;

    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LossConfig::default();
    let labels = |r: &mut ChaCha8Rng, side: usize| {
        let v = (0..side * side).map(|_| r.random_range(0..NUM_CLASSES as u8)).collect();
        LabelMap::new(side, side, v).map(|l| vec![l])
    };
    let random = |r: &mut ChaCha8Rng, shape: Shape, scale: f64| {
        Tensor::from_fn(shape, |_| r.random_range(-scale..scale))
    };

    let logits = random(&mut r, Shape::new(1, 3, 8, 8), 2.0);
    let lab = labels(&mut r, 8)?;
    let mut out = vec![
        CheckResult {
            name: "softmax_ce",
            max_error: grad_check(|g, x| weighted_softmax_ce(g, x, &lab, &cfg), &logits, DEFAULT_EPS)?,
            tolerance: 1e-5,
        },
        CheckResult {
            name: "contour",
            max_error: grad_check(|g, x| contour_loss(g, x, &lab, &cfg), &logits, DEFAULT_EPS)?,
            tolerance: 1e-5,
        },
        CheckResult {
            name: "finetune",
            max_error: grad_check(|g, x| finetune_loss(g, x, &lab, &cfg), &logits, DEFAULT_EPS)?,
            tolerance: 1e-5,
        },
    ];

    let mcfg = ModelConfig {
        n_levels: 3,
        squeeze_channels: 2,
        channels: vec![3, 4, 4],
        input_height: 16,
        input_width: 16,
        ..ModelConfig::toy()
    };
    let mut model = Model::<f64>::new(mcfg, &mut r)?;
    // Off the ReLU kink: zero biases feed exact zeros into some ReLUs.
    for p in model.params_mut() {
        if matches!(p.kind, ParamKind::Bias | ParamKind::NormShift) {
            p.value.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.05..0.3));
        }
    }
    let input = random(&mut r, Shape::new(1, 1, 16, 16), 1.5);
    let lab = labels(&mut r, 16)?;
    let mut g = Graph::new();
    let pass = model.forward(&mut g, &input, Mode::Train)?;
    let loss = finetune_loss(&mut g, pass.logits, &lab, &cfg)?;
    g.backward(loss)?;
    let mut worst = 0f64;
    for _ in 0..20 {
        let p = r.random_range(0..model.params().len());
        let coord = r.random_range(0..model.params()[p].value.shape().numel());
        let analytic = g.grad(pass.params[p]).map_or(0.0, |t| t.data()[coord]);
        let numeric = numeric_partial(
            &|g: &mut Graph<f64>, w: Var| {
                let mut vars = model.bind(g);
                vars[p] = w;
                let x = g.constant(input.clone());
                let (logits, _) = model.forward_with(g, &vars, x, Mode::Train)?;
                finetune_loss(g, logits, &lab, &cfg)
            },
            &model.params()[p].value,
            coord,
            DEFAULT_EPS,
        )?;
        worst = worst.max(relative_error(analytic, numeric));
    }
    out.push(CheckResult {
        name: "network",
        max_error: worst,
        tolerance: 1e-4,
    });
    Ok(out)
}
