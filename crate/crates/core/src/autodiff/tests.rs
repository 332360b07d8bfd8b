use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{grad_check, DEFAULT_EPS};

fn rand_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop same-padded convolution.
fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().0;
    let [o, _, kh, kw] = k.shape().0;
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    Tensor::from_fn(Shape::new(n, o, oh, ow), |[b, oc, oy, ox]| {
        let mut acc = 0.0;
        for ic in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - ph as isize;
                    let ix = (ox * stride + kx) as isize - pw as isize;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                    let v = match (inside, padding) {
                        (true, _) => x.at([b, ic, iy as usize, ix as usize]),
                        (false, Padding::Zero) => 0.0,
                        (false, Padding::Replicate) => x.at([
                            b,
                            ic,
                            iy.clamp(0, h as isize - 1) as usize,
                            ix.clamp(0, w as isize - 1) as usize,
                        ]),
                    };
                    acc += v * k.at([oc, ic, ky, kx]);
                }
            }
        }
        acc
    })
}

/// Scatter-add transposed convolution.
fn transposed_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().0;
    let [o, _, kh, kw] = k.shape().0;
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(Shape::new(n, o, h * stride, w * stride));
    for b in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    for oc in 0..o {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (y * stride + ky) as isize - ph as isize;
                                let ox = (xx * stride + kx) as isize - pw as isize;
                                if oy < 0 || ox < 0 || oy as usize >= h * stride || ox as usize >= w * stride {
                                    continue;
                                }
                                let idx = [b, oc, oy as usize, ox as usize];
                                let v = out.at(idx) + x.at([b, ic, y, xx]) * k.at([oc, ic, ky, kx]);
                                out.set(idx, v);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn bilinear_oracle(x: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().0;
    Tensor::from_fn(Shape::new(n, c, oh, ow), |[b, ch, y, xx]| {
        let sy = ((y as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let sx = ((xx as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let p = |yy, xx| x.at([b, ch, yy, xx]);
        (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
    })
}

fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv_identity_kernel() {
    let x = rand_tensor(Shape::new(1, 1, 4, 4), 1);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = g.constant(Tensor::ones(Shape::new(1, 1, 1, 1)));
    let y = g.conv2d(xv, k, 1, Padding::Zero).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_all_ones_center_and_corner() {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
    let k = g.constant(Tensor::ones(Shape::new(1, 1, 3, 3)));
    let y = g.conv2d(xv, k, 1, Padding::Zero).unwrap();
    let out = g.value(y);
    assert_eq!(out.at([0, 0, 1, 1]), 9.0);
    for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
        assert_eq!(out.at([0, 0, yy, xx]), 4.0);
    }
    assert_eq!(out.at([0, 0, 0, 1]), 6.0);
}

#[test]
fn conv_replicate_preserves_constants() {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::full(Shape::new(1, 1, 5, 6), 3.25));
    let k = g.constant(Tensor::full(Shape::new(1, 1, 3, 3), 1.0 / 9.0));
    let y = g.conv2d(xv, k, 1, Padding::Replicate).unwrap();
    for v in g.value(y).data() {
        assert!((v - 3.25).abs() < 1e-12);
    }
}

#[test]
fn conv_matches_nested_loop_oracle() {
    for (stride, padding, h, w) in [
        (1, Padding::Zero, 7, 6),
        (2, Padding::Zero, 8, 8),
        (2, Padding::Zero, 7, 5),
        (1, Padding::Replicate, 6, 7),
        (2, Padding::Replicate, 9, 6),
    ] {
        let x = rand_tensor(Shape::new(2, 3, h, w), 10 + h as u64);
        let k = rand_tensor(Shape::new(4, 3, 3, 3), 20 + w as u64);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k.clone());
        let y = g.conv2d(xv, kv, stride, padding).unwrap();
        let expect = conv_oracle(&x, &k, stride, padding);
        assert_eq!(g.shape(y), Shape::new(2, 4, h.div_ceil(stride), w.div_ceil(stride)));
        assert!(max_abs_diff(g.value(y), &expect) < 1e-12);
    }
}

#[test]
fn conv_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let xv = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
    let k = g.constant(Tensor::zeros(Shape::new(1, 3, 3, 3)));
    let err = g.conv2d(xv, k, 1, Padding::Zero).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("1×2×4×4") && msg.contains("1×3×3×3"), "{msg}");
}

#[test]
fn conv_same_padding_preserves_extent() {
    for k in [1, 3, 5] {
        let mut g = Graph::<f32>::new();
        let xv = g.constant(Tensor::zeros(Shape::new(1, 1, 7, 9)));
        let kv = g.constant(Tensor::zeros(Shape::new(2, 1, k, k)));
        let y = g.conv2d(xv, kv, 1, Padding::Zero).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 2, 7, 9));
    }
}

#[test]
fn transposed_identity_and_upsampling() {
    let x = rand_tensor(Shape::new(1, 1, 3, 3), 3);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let id = g.constant(Tensor::ones(Shape::new(1, 1, 1, 1)));
    let y = g.transposed_conv2d(xv, id, 1).unwrap();
    assert_eq!(g.value(y), &x);

    let small = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let sv = g.constant(small.clone());
    let k = g.constant(Tensor::ones(Shape::new(1, 1, 2, 2)));
    let up = g.transposed_conv2d(sv, k, 2).unwrap();
    let expect = Tensor::from_fn(Shape::new(1, 1, 4, 4), |[_, _, y, x]| small.at([0, 0, y / 2, x / 2]));
    assert_eq!(g.value(up), &expect);
}

#[test]
fn transposed_matches_scatter_oracle() {
    for (stride, ks) in [(1, 3), (2, 3), (2, 2), (2, 4), (1, 1)] {
        let x = rand_tensor(Shape::new(2, 3, 4, 5), 40 + ks as u64);
        let k = rand_tensor(Shape::new(2, 3, ks, ks), 50 + stride as u64);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k.clone());
        let y = g.transposed_conv2d(xv, kv, stride).unwrap();
        assert_eq!(g.shape(y), Shape::new(2, 2, 4 * stride, 5 * stride));
        assert!(max_abs_diff(g.value(y), &transposed_oracle(&x, &k, stride)) < 1e-12);
    }
}

#[test]
fn transposed_input_grad_is_kernel_sum() {
    let x = rand_tensor(Shape::new(1, 1, 3, 3), 5);
    let k = rand_tensor(Shape::new(1, 1, 2, 2), 6);
    let ksum = k.sum();
    let mut g = Graph::new();
    let xv = g.param(x);
    let kv = g.constant(k);
    let y = g.transposed_conv2d(xv, kv, 2).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    for v in g.grad(xv).unwrap().data() {
        assert!((v - ksum).abs() < 1e-12);
    }
}

#[test]
fn transposed_rejects_stride_three() {
    let mut g = Graph::<f32>::new();
    let xv = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
    let k = g.constant(Tensor::zeros(Shape::new(1, 1, 3, 3)));
    assert!(g.transposed_conv2d(xv, k, 3).is_err());
}

#[test]
fn bilinear_identity_is_bitwise() {
    let x = rand_tensor(Shape::new(2, 3, 5, 7), 7).cast::<f32>();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = g.bilinear_resample(xv, 5, 7).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn bilinear_constant_and_round_trip() {
    let mut g = Graph::<f32>::new();
    let xv = g.constant(Tensor::full(Shape::new(1, 2, 8, 8), 0.3));
    let down = g.bilinear_resample(xv, 3, 5).unwrap();
    let up = g.bilinear_resample(down, 8, 8).unwrap();
    assert!(g.value(down).data().iter().all(|&v| v == 0.3));
    assert_eq!(g.value(up), g.value(xv));
}

#[test]
fn bilinear_two_by_two_to_four_by_four() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = g.bilinear_resample(xv, 4, 4).unwrap();
    assert!(max_abs_diff(g.value(y), &bilinear_oracle(&x, 4, 4)) < 1e-6);
    // Half-pixel centers: the second output column samples source x = 0.25.
    assert!((g.value(y).at([0, 0, 0, 1]) - 0.25).abs() < 1e-12);
    assert!((g.value(y).at([0, 0, 3, 3]) - 3.0).abs() < 1e-12);
}

#[test]
fn bilinear_random_matches_oracle() {
    for (oh, ow) in [(3, 11), (16, 4), (1, 1), (9, 9)] {
        let x = rand_tensor(Shape::new(1, 2, 6, 5), oh as u64);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.bilinear_resample(xv, oh, ow).unwrap();
        assert!(max_abs_diff(g.value(y), &bilinear_oracle(&x, oh, ow)) < 1e-12);
    }
}

#[test]
fn elementwise_mul_identities_and_grad() {
    let a = rand_tensor(Shape::new(1, 2, 3, 3), 8);
    let b = rand_tensor(Shape::new(1, 2, 3, 3), 9);
    let mut g = Graph::new();
    let av = g.param(a.clone());
    let ones = g.constant(Tensor::ones(a.shape()));
    let zeros = g.constant(Tensor::zeros(a.shape()));
    let p = g.elementwise_mul(av, ones).unwrap();
    assert_eq!(g.value(p), &a);
    let z = g.elementwise_mul(av, zeros).unwrap();
    assert!(g.value(z).data().iter().all(|&v| v == 0.0));

    let bv = g.constant(b.clone());
    let prod = g.elementwise_mul(av, bv).unwrap();
    let s = g.sum(prod);
    g.backward(s).unwrap();
    assert_eq!(g.grad(av).unwrap(), &b);

    let other = g.constant(Tensor::zeros(Shape::new(1, 2, 3, 4)));
    assert!(g.elementwise_mul(av, other).is_err());
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut g = Graph::<f32>::new();
    let eq = g.constant(Tensor::full(Shape::new(1, 3, 2, 2), 0.7));
    let p = g.softmax_channels(eq).unwrap();
    assert!(g.value(p).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));

    let big = g.constant(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1000.0, 0.0, 0.0]).unwrap());
    let p = g.softmax_channels(big).unwrap();
    let v = g.value(p).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-7 && v[1] < 1e-30 && v[2] < 1e-30);

    let one = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
    assert!(g.softmax_channels(one).is_err());
}

#[test]
fn softmax_f32_matches_extended_precision() {
    let x = rand_tensor(Shape::new(2, 3, 5, 5), 11).map(|v| v * 8.0).cast::<f32>();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = g.softmax_channels(xv).unwrap();
    let s = x.shape();
    for b in 0..s.n() {
        for px in 0..s.plane() {
            let logits: Vec<f64> = (0..3).map(|c| x.plane(b, c)[px] as f64).collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                let expect = logits[c].exp() / z;
                assert!((g.value(p).plane(b, c)[px] as f64 - expect).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn backward_analytic_cases() {
    let x = rand_tensor(Shape::new(1, 2, 3, 3), 12);
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let s = g.sum(xv);
    g.backward(s).unwrap();
    assert!(g.grad(xv).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let sq = g.elementwise_mul(xv, xv).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &x.map(|v| 2.0 * v));
}

#[test]
fn backward_accumulates_and_rejects_non_scalar() {
    let x = rand_tensor(Shape::new(1, 1, 2, 2), 13);
    let mut g = Graph::new();
    let xv = g.param(x);
    assert!(matches!(g.backward(xv), Err(Error::NotScalar(_))));
    let s = g.sum(xv);
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(xv).unwrap().data().iter().all(|&v| v == 2.0));
    g.zero_grad();
    assert!(g.grad(xv).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(rand_tensor(Shape::new(1, 1, 2, 2), 14));
    let p = g.param(rand_tensor(Shape::new(1, 1, 2, 2), 15));
    let m = g.elementwise_mul(c, p).unwrap();
    let s = g.sum(m);
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert!(g.grad(p).is_some());
}

/// Weighted sum with fixed random weights, so every output coordinate
/// contributes a distinct sensitivity to the check.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(rand_tensor(g.shape(y), seed));
    let m = g.elementwise_mul(y, w)?;
    Ok(g.sum(m))
}

fn check(name: &str, x: &Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) {
    let err = grad_check(f, x, DEFAULT_EPS).unwrap();
    assert!(err <= 1e-5, "{name}: max relative error {err}");
}

#[test]
fn grad_check_every_operation() {
    let x = rand_tensor(Shape::new(1, 4, 8, 8), 100);
    let k = rand_tensor(Shape::new(3, 4, 3, 3), 101);
    for (stride, padding) in [(1, Padding::Zero), (2, Padding::Zero), (1, Padding::Replicate), (2, Padding::Replicate)] {
        check("conv2d input", &x, |g, v| {
            let kv = g.constant(k.clone());
            let y = g.conv2d(v, kv, stride, padding)?;
            probe(g, y, 1)
        });
        check("conv2d kernel", &k, |g, kv| {
            let xv = g.constant(x.clone());
            let y = g.conv2d(xv, kv, stride, padding)?;
            probe(g, y, 2)
        });
    }
    let small = rand_tensor(Shape::new(1, 4, 4, 4), 102);
    for (stride, ks) in [(1, 3), (2, 3), (2, 2)] {
        let tk = rand_tensor(Shape::new(2, 4, ks, ks), 103);
        check("transposed input", &small, |g, v| {
            let kv = g.constant(tk.clone());
            let y = g.transposed_conv2d(v, kv, stride)?;
            probe(g, y, 3)
        });
        check("transposed kernel", &tk, |g, kv| {
            let xv = g.constant(small.clone());
            let y = g.transposed_conv2d(xv, kv, stride)?;
            probe(g, y, 4)
        });
    }
    for (oh, ow) in [(3, 5), (16, 16), (8, 8)] {
        check("bilinear_resample", &x, |g, v| {
            let y = g.bilinear_resample(v, oh, ow)?;
            probe(g, y, 5)
        });
    }
    let other = rand_tensor(x.shape(), 104);
    check("elementwise_mul", &x, |g, v| {
        let o = g.constant(other.clone());
        let y = g.elementwise_mul(v, o)?;
        probe(g, y, 6)
    });
    check("add/sub/scale/add_scalar", &x, |g, v| {
        let o = g.constant(other.clone());
        let a = g.add(v, o)?;
        let s = g.sub(a, v)?;
        let s = g.add(s, v)?;
        let s = g.scale(s, -1.7);
        let s = g.add_scalar(s, 0.3);
        probe(g, s, 7)
    });
    check("softmax_channels", &x, |g, v| {
        let y = g.softmax_channels(v)?;
        probe(g, y, 8)
    });
    check("square+sqrt", &x, |g, v| {
        let y = g.square(v);
        let y = g.add_scalar(y, 1e-3);
        let y = g.sqrt(y);
        probe(g, y, 9)
    });
    // Keep relu inputs away from the kink.
    let shifted = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    check("relu", &shifted, |g, v| {
        let y = g.relu(v);
        probe(g, y, 10)
    });
    let bias = rand_tensor(Shape::new(1, 4, 1, 1), 105);
    check("add_bias bias", &bias, |g, b| {
        let xv = g.constant(x.clone());
        let y = g.add_bias(xv, b)?;
        probe(g, y, 11)
    });
    check("concat/slice/sum_channels", &x, |g, v| {
        let o = g.constant(other.clone());
        let c = g.concat_channels(&[o, v, v])?;
        let s = g.slice_channels(c, 2, 5)?;
        let y = g.sum_channels(s);
        probe(g, y, 12)
    });
    check("mean", &x, |g, v| {
        let y = g.square(v);
        Ok(g.mean(y))
    });
    let gamma = rand_tensor(Shape::new(1, 4, 1, 1), 106);
    let beta = rand_tensor(Shape::new(1, 4, 1, 1), 107);
    let batch = rand_tensor(Shape::new(2, 4, 4, 4), 108);
    check("batch_norm_train input", &batch, |g, v| {
        let gm = g.constant(gamma.clone());
        let bt = g.constant(beta.clone());
        let (y, _) = g.batch_norm_train(v, gm, bt, 1e-5)?;
        probe(g, y, 13)
    });
    check("batch_norm_train gamma", &gamma, |g, gm| {
        let xv = g.constant(batch.clone());
        let bt = g.constant(beta.clone());
        let (y, _) = g.batch_norm_train(xv, gm, bt, 1e-5)?;
        probe(g, y, 14)
    });
    check("batch_norm_eval input", &batch, |g, v| {
        let gm = g.constant(gamma.clone());
        let bt = g.constant(beta.clone());
        let y = g.batch_norm_eval(v, gm, bt, &[0.1, -0.2, 0.3, 0.0], &[1.0, 0.5, 2.0, 0.1], 1e-5)?;
        probe(g, y, 15)
    });
    let logits = rand_tensor(Shape::new(2, 3, 4, 4), 109);
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let labels: Vec<u8> = (0..32).map(|_| rng.random_range(0..3)).collect();
    check("weighted_softmax_ce", &logits, |g, v| g.weighted_softmax_ce(v, &labels, &[1.0, 5.0, 5.0]));
}

#[test]
fn batch_norm_train_normalizes_per_channel() {
    let x = rand_tensor(Shape::new(3, 2, 4, 4), 111).map(|v| 4.0 * v + 2.0);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let gm = g.constant(Tensor::ones(Shape::new(1, 2, 1, 1)));
    let bt = g.constant(Tensor::zeros(Shape::new(1, 2, 1, 1)));
    let (y, stats) = g.batch_norm_train(xv, gm, bt, 0.0).unwrap();
    let out = g.value(y);
    for c in 0..2 {
        let vals: Vec<f64> = (0..3).flat_map(|b| out.plane(b, c).to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
        assert!(stats.var[c] > 0.0);
    }
}

#[test]
fn weighted_ce_rejects_bad_labels() {
    let mut g = Graph::<f32>::new();
    let l = g.constant(Tensor::zeros(Shape::new(1, 3, 1, 2)));
    let err = g.weighted_softmax_ce(l, &[0, 3], &[1.0, 1.0, 1.0]).unwrap_err();
    assert!(matches!(err, Error::LabelOutOfRange { value: 3, .. }));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_sums_to_one(vals in prop::collection::vec(-50.0f64..50.0, 3 * 6)) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec(Shape::new(1, 3, 2, 3), vals).unwrap());
            let p = g.softmax_channels(x).unwrap();
            let out = g.value(p);
            for px in 0..6 {
                let s: f64 = (0..3).map(|c| out.plane(0, c)[px]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!((0..3).all(|c| (0.0..=1.0).contains(&out.plane(0, c)[px])));
            }
        }

        #[test]
        fn forward_ops_stay_finite(vals in prop::collection::vec(-1e3f64..1e3, 2 * 16)) {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec(Shape::new(1, 2, 4, 4), vals).unwrap());
            let p = g.softmax_channels(x).unwrap();
            let k = g.constant(Tensor::full(Shape::new(2, 2, 3, 3), 0.1));
            let c = g.conv2d(x, k, 2, Padding::Replicate).unwrap();
            let r = g.bilinear_resample(c, 4, 4).unwrap();
            let ce = g.weighted_softmax_ce(x, &[0; 16], &[1.0, 5.0]).unwrap();
            for v in [p, c, r, ce] {
                prop_assert!(g.value(v).all_finite());
            }
        }
    }
}
