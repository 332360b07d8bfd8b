use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::softmax;
use crate::gradcheck::{numeric_partial, relative_error};
use crate::loss::{finetune_loss, LossConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small(attention: AttentionMode) -> ModelConfig {
    ModelConfig {
        n_levels: 3,
        squeeze_channels: 2,
        channels: vec![3, 4, 4],
        input_height: 16,
        input_width: 16,
        attention,
        ..ModelConfig::toy()
    }
}

fn random_input<T: Real>(n: usize, h: usize, w: usize, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(Shape::new(n, 1, h, w), |_| T::from_f64(r.random_range(-1.0..1.0)))
}

fn values(g: &Graph<f64>, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

/// Squeeze emitting the constant `c` everywhere.
fn force_constant(model: &mut Model<f64>, source: usize, consumer: usize, c: f64) {
    let name = format!("squeeze.{source}.{consumer}.conv3");
    let w = model.param(&format!("{name}.weight")).unwrap().value.shape();
    model.set_param(&format!("{name}.weight"), Tensor::zeros(w)).unwrap();
    let k = model.config().squeeze_channels;
    model
        .set_param(&format!("{name}.bias"), Tensor::full(Shape::new(1, k, 1, 1), c))
        .unwrap();
}

fn levels_of(model: &Model<f64>, g: &mut Graph<f64>, input: &Tensor<f64>) -> (Vec<Var>, Vec<Var>) {
    let vars = model.bind(g);
    let x = g.constant(input.clone());
    let levels = model.encode(g, &vars, x, Mode::Eval, &mut Vec::new()).unwrap();
    (vars, levels)
}

#[test]
fn toy_forward_shape() {
    let model = Model::<f32>::new(ModelConfig::toy(), &mut rng(1)).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &random_input(1, 64, 64, 2), mode).unwrap();
        assert_eq!(g.shape(pass.logits), Shape::new(1, 3, 64, 64));
        assert!(g.value(pass.logits).all_finite());
        let expect_stats = if mode == Mode::Train { model.norms().len() } else { 0 };
        assert_eq!(pass.batch_stats.len(), expect_stats);
    }
}

#[test]
fn level_shapes_halve() {
    let model = Model::<f64>::new(ModelConfig::toy(), &mut rng(1)).unwrap();
    let mut g = Graph::new();
    let (vars, levels) = levels_of(&model, &mut g, &random_input(2, 32, 64, 3));
    for (i, &l) in levels.iter().enumerate() {
        let s = g.shape(l);
        assert_eq!(s, Shape::new(2, model.config().channels[i], 32 >> i, 64 >> i));
        for att in [
            model.fine_attention(&mut g, &vars, &levels, i + 1).unwrap(),
            model.coarse_attention(&mut g, &vars, &levels, i + 1).unwrap(),
        ] {
            assert_eq!(g.shape(att), Shape::new(2, 8, 32 >> i, 64 >> i));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let a = Model::<f32>::new(ModelConfig::toy(), &mut rng(9)).unwrap();
    let b = Model::<f32>::new(ModelConfig::toy(), &mut rng(9)).unwrap();
    assert_eq!(a, b);
    let input = random_input(1, 64, 64, 4);
    let run = |m: &Model<f32>| {
        let mut g = Graph::new();
        let pass = m.forward(&mut g, &input, Mode::Eval).unwrap();
        g.value(pass.logits).clone()
    };
    let first = run(&a);
    assert_eq!(first, run(&a));
    assert_eq!(first, run(&b));
}

#[test]
fn indivisible_input_names_multiple() {
    let model = Model::<f32>::new(ModelConfig::toy(), &mut rng(1)).unwrap();
    let mut g = Graph::new();
    let err = model.forward(&mut g, &random_input(1, 60, 64, 0), Mode::Eval).err().unwrap();
    assert!(matches!(err, Error::IndivisibleInput { multiple: 8, .. }), "{err}");
    assert!(err.to_string().contains('8'));
}

#[test]
fn config_validation_and_toml() {
    let cfg = ModelConfig::toy();
    let back = ModelConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let disabled = ModelConfig {
        attention: AttentionMode::Disabled,
        ..cfg.clone()
    };
    assert!(disabled.to_toml().unwrap().contains("attention = \"disabled\""));
    for bad in [
        ModelConfig { n_levels: 1, channels: vec![4], ..cfg.clone() },
        ModelConfig { squeeze_channels: 0, ..cfg.clone() },
        ModelConfig { channels: vec![4, 4], ..cfg.clone() },
        ModelConfig { input_height: 60, ..cfg.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
    ModelConfig::full().validate().unwrap();
}

#[test]
fn squeeze_block_contract() {
    let mut model = Model::<f64>::new(small(AttentionMode::Dense), &mut rng(5)).unwrap();
    let input = random_input(1, 16, 16, 6);
    let mut g = Graph::new();
    let (vars, levels) = levels_of(&model, &mut g, &input);
    for (j, &l) in levels.iter().enumerate() {
        let s = model.squeeze_block(&mut g, &vars, j + 1, 1, l).unwrap();
        assert_eq!(g.shape(s).c(), 2);
        assert_eq!(g.shape(s).h(), g.shape(l).h());
    }

    for conv in ["conv1", "conv3"] {
        let name = format!("squeeze.2.1.{conv}");
        let shape = model.param(&format!("{name}.weight")).unwrap().value.shape();
        model.set_param(&format!("{name}.weight"), Tensor::zeros(shape)).unwrap();
        model.set_param(&format!("{name}.bias"), Tensor::zeros(Shape::new(1, 2, 1, 1))).unwrap();
    }
    let mut g = Graph::new();
    let (vars, levels) = levels_of(&model, &mut g, &input);
    let s = model.squeeze_block(&mut g, &vars, 2, 1, levels[1]).unwrap();
    assert!(values(&g, s).iter().all(|&v| v == 0.0));
}

#[test]
fn squeeze_block_gradients_reach_both_kernels() {
    let model = Model::<f64>::new(small(AttentionMode::Dense), &mut rng(7)).unwrap();
    let input = random_input(1, 16, 16, 8);
    let mut g = Graph::new();
    let (vars, levels) = levels_of(&model, &mut g, &input);
    let s = model.squeeze_block(&mut g, &vars, 1, 1, levels[0]).unwrap();
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    for conv in ["conv1", "conv3"] {
        let name = format!("squeeze.1.1.{conv}.weight");
        let idx = model.param_index(&name).unwrap();
        let grad = g.grad(vars[idx]).unwrap();
        assert!(grad.data().iter().any(|&v| v != 0.0), "{name}");
        // One coordinate against finite differences.
        let target = (0..grad.data().len()).max_by(|&a, &b| grad.data()[a].abs().total_cmp(&grad.data()[b].abs())).unwrap();
        let numeric = numeric_partial(
            &|g: &mut Graph<f64>, w: Var| {
                let mut vs = model.bind(g);
                vs[idx] = w;
                let x = g.constant(input.clone());
                let lv = model.encode(g, &vs, x, Mode::Eval, &mut Vec::new())?;
                let s = model.squeeze_block(g, &vs, 1, 1, lv[0])?;
                Ok(g.sum(s))
            },
            &model.params()[idx].value,
            target,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(grad.data()[target], numeric) < 1e-6);
    }
}

#[test]
fn fine_attention_cases() {
    let mut model = Model::<f64>::new(small(AttentionMode::Dense), &mut rng(11)).unwrap();
    let input = random_input(1, 16, 16, 12);
    {
        let mut g = Graph::new();
        let (vars, levels) = levels_of(&model, &mut g, &input);
        let f1 = model.fine_attention(&mut g, &vars, &levels, 1).unwrap();
        assert!(values(&g, f1).iter().all(|&v| v == 1.0));

        let f2 = model.fine_attention(&mut g, &vars, &levels, 2).unwrap();
        let s = model.squeeze_block(&mut g, &vars, 1, 2, levels[0]).unwrap();
        let down = g.bilinear_resample(s, 8, 8).unwrap();
        assert_eq!(values(&g, f2), values(&g, down));
        assert!(model.fine_attention(&mut g, &vars, &levels, 0).is_err());
        assert!(model.fine_attention(&mut g, &vars, &levels, 4).is_err());
    }
    force_constant(&mut model, 1, 3, 0.5);
    force_constant(&mut model, 2, 3, 3.0);
    let mut g = Graph::new();
    let (vars, levels) = levels_of(&model, &mut g, &input);
    let f3 = model.fine_attention(&mut g, &vars, &levels, 3).unwrap();
    assert!(values(&g, f3).iter().all(|&v| v == 1.5));
}

#[test]
fn coarse_attention_cases() {
    let model = Model::<f64>::new(small(AttentionMode::Dense), &mut rng(13)).unwrap();
    let mut g = Graph::new();
    let (vars, levels) = levels_of(&model, &mut g, &random_input(1, 16, 16, 14));
    let c3 = model.coarse_attention(&mut g, &vars, &levels, 3).unwrap();
    assert!(values(&g, c3).iter().all(|&v| v == 1.0));
    let c2 = model.coarse_attention(&mut g, &vars, &levels, 2).unwrap();
    let s = model.squeeze_block(&mut g, &vars, 3, 2, levels[2]).unwrap();
    let up = g.bilinear_resample(s, 8, 8).unwrap();
    assert_eq!(values(&g, c2), values(&g, up));
}

#[test]
fn attend_skip_cases() {
    let mut r = rng(15);
    let mut g = Graph::<f64>::new();
    let s = Shape::new(1, 2, 4, 4);
    let mut rand_t = || Tensor::from_fn(s, |_| r.random_range(-2.0..2.0));
    let sq = g.constant(rand_t());
    let fine = g.constant(rand_t());
    let coarse = g.constant(rand_t());
    let ones = g.constant(Tensor::ones(s));
    let zeros = g.constant(Tensor::zeros(s));

    let plain = attend_skip(&mut g, sq, ones, ones).unwrap();
    assert_eq!(values(&g, plain), values(&g, sq));
    let dead = attend_skip(&mut g, sq, fine, zeros).unwrap();
    assert!(values(&g, dead).iter().all(|&v| v == 0.0));
    let ab = attend_skip(&mut g, sq, fine, coarse).unwrap();
    let ba = attend_skip(&mut g, sq, coarse, fine).unwrap();
    for (x, y) in values(&g, ab).iter().zip(values(&g, ba)) {
        assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
    }
    let wrong = g.constant(Tensor::ones(Shape::new(1, 3, 4, 4)));
    assert!(attend_skip(&mut g, sq, wrong, ones).is_err());
}

#[test]
fn constant_squeezes_reduce_to_plain_skips() {
    let dense_cfg = small(AttentionMode::Dense);
    let mut dense = Model::<f64>::new(dense_cfg.clone(), &mut rng(17)).unwrap();
    let n = dense_cfg.n_levels;
    for i in 1..=n {
        for j in 1..=n {
            if i != j {
                force_constant(&mut dense, j, i, 1.0);
            }
        }
    }
    let mut plain = Model::<f64>::new(small(AttentionMode::Disabled), &mut rng(99)).unwrap();
    assert!(plain.params().len() < dense.params().len());
    for p in plain.params_mut() {
        p.value = dense.param(&p.name).unwrap().value.clone();
    }
    let input = random_input(2, 16, 16, 18);
    for mode in [Mode::Train, Mode::Eval] {
        let mut g1 = Graph::new();
        let a = dense.forward(&mut g1, &input, mode).unwrap();
        let mut g2 = Graph::new();
        let b = plain.forward(&mut g2, &input, mode).unwrap();
        assert_eq!(g1.value(a.logits), g2.value(b.logits));
    }
}

#[test]
fn predict_argmax_and_ties() {
    let t = Tensor::from_vec(Shape::new(1, 3, 1, 3), vec![5.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 2.0]).unwrap();
    assert_eq!(predict(&t).unwrap()[0].classes(), &[0, 0, 2]);

    let mut r = rng(19);
    let s = Shape::new(2, 3, 5, 4);
    // Coarse values so ties actually occur.
    let logits = Tensor::<f64>::from_fn(s, |_| r.random_range(0..3) as f64);
    let out = predict(&logits).unwrap();
    for (n, lm) in out.iter().enumerate() {
        for y in 0..5 {
            for x in 0..4 {
                let scores: Vec<f64> = (0..3).map(|c| logits.at([n, c, y, x])).collect();
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let first = scores.iter().position(|&v| v == max).unwrap();
                assert_eq!(lm.get(x, y) as usize, first);
            }
        }
    }
    assert!(predict(&Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2))).is_err());
}

#[test]
fn depth_normalization() {
    let d = DepthMap::new(4, 1, vec![100, 0, 300, 200]).unwrap();
    let v = normalize_depth(&d);
    let std = (20000.0f64 / 3.0).sqrt();
    assert_eq!(v[1], INVALID_SENTINEL);
    assert!((v[0] + 100.0 / std).abs() < 1e-12);
    assert!((v[2] - 100.0 / std).abs() < 1e-12);
    assert_eq!(v[3], 0.0);
    assert_eq!(normalize_depth(&DepthMap::filled(2, 2, 700)), vec![0.0; 4]);
    assert_eq!(normalize_depth(&DepthMap::filled(2, 2, 0)), vec![INVALID_SENTINEL; 4]);
}

#[test]
fn logit_sum_feels_single_input_pixel() {
    let model = Model::<f64>::new(small(AttentionMode::Dense), &mut rng(21)).unwrap();
    let input = random_input(1, 16, 16, 22);
    let f = |g: &mut Graph<f64>, x: Var| {
        let vars = model.bind(g);
        let (logits, _) = model.forward_with(g, &vars, x, Mode::Eval)?;
        Ok(g.sum(logits))
    };
    for pixel in [0, 7 * 16 + 9, 255] {
        let numeric = numeric_partial(&f, &input, pixel, 1e-5).unwrap();
        assert!(numeric.abs() > 1e-8, "pixel {pixel}: {numeric}");
    }
}

#[test]
fn end_to_end_parameter_gradients() {
    let mut model = Model::<f64>::new(small(AttentionMode::Dense), &mut rng(23)).unwrap();
    let input = random_input(1, 16, 16, 24);
    let mut r = rng(25);
    // Zero biases put ReLUs fed by all-zero neighborhoods exactly on the kink.
    for p in model.params_mut() {
        if matches!(p.kind, ParamKind::Bias | ParamKind::NormShift) {
            p.value.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.05..0.3));
        }
    }
    let labels = vec![LabelMap::new(16, 16, (0..256).map(|_| r.random_range(0..3u8)).collect()).unwrap()];
    let cfg = LossConfig::default();

    let mut g = Graph::new();
    let pass = model.forward(&mut g, &input, Mode::Train).unwrap();
    let loss = finetune_loss(&mut g, pass.logits, &labels, &cfg).unwrap();
    g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = r.random_range(0..model.params().len());
        let numel = model.params()[p].value.shape().numel();
        let coord = r.random_range(0..numel);
        let analytic = g.grad(pass.params[p]).unwrap().data()[coord];
        let numeric = numeric_partial(
            &|g: &mut Graph<f64>, w: Var| {
                let mut vars = model.bind(g);
                vars[p] = w;
                let x = g.constant(input.clone());
                let (logits, _) = model.forward_with(g, &vars, x, Mode::Train)?;
                finetune_loss(g, logits, &labels, &cfg)
            },
            &model.params()[p].value,
            coord,
            1e-5,
        )
        .unwrap();
        worst = worst.max(relative_error(analytic, numeric));
    }
    assert!(worst <= 1e-4, "max relative error {worst:e}");
    assert!(softmax(g.value(pass.logits)).all_finite());
}
