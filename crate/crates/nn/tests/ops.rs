use c2b_nn::gradcheck::{check_op, format_report, op_suite, CheckOptions};
use c2b_nn::tape::subpixel_downsample;
use c2b_nn::{Adam, NnError, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Vec<f64> {
    let (n, cin, h, wd) = x.dims4("x").unwrap();
    let (cout, _, k, _) = w.dims4("w").unwrap();
    let (ho, wo) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy as isize + ky as isize - pad as isize;
                                let ix = ox as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((bi * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let mut t = Tape::<f64>::new();
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
    let y = t.conv2d(xv, wv, bv, 1, 1).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 3, 5, 5]);
    let want = naive_conv(&x, &w, b.data(), 1);
    for (a, e) in t.value(y).data().iter().zip(&want) {
        assert!((a - e).abs() < 1e-6);
    }
}

#[test]
fn conv_identity_and_zero_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    let eye = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
    let mut t = Tape::<f64>::new();
    let xv = t.constant(x.clone());
    let wv = t.constant(eye);
    let bv = t.constant(Tensor::zeros(&[3]));
    let y = t.conv2d(xv, wv, bv, 1, 0).unwrap();
    assert_eq!(t.value(y), &x);

    let wz = t.constant(Tensor::zeros(&[2, 3, 3, 3]));
    let bias = t.constant(Tensor::from_f64(&[2], &[0.25, -1.5]).unwrap());
    let y = t.conv2d(xv, wz, bias, 1, 1).unwrap();
    let v = t.value(y);
    assert!(v.data()[..16].iter().all(|&a| a == 0.25));
    assert!(v.data()[16..32].iter().all(|&a| a == -1.5));
}

#[test]
fn conv_rejects_bad_shapes() {
    let mut t: Tape<f64> = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 2, 5, 5]));
    let w = t.constant(Tensor::zeros(&[3, 4, 3, 3]));
    let b = t.constant(Tensor::zeros(&[3]));
    assert!(matches!(t.conv2d(x, w, b, 1, 1), Err(NnError::Shape { .. })));
    let w = t.constant(Tensor::zeros(&[3, 2, 3, 3]));
    assert!(t.conv2d(x, w, b, 2, 0).is_ok());
    assert!(matches!(t.conv2d(x, w, b, 3, 0), Err(NnError::Shape { .. })));
}

#[test]
fn relu_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[4], &[-1.0, -0.5, -2.0, -1e-9]).unwrap());
    let y = t.relu(x);
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    let x = t.constant(Tensor::from_f64(&[3], &[0.0, 0.5, 2.0]).unwrap());
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 0.5, 2.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_f64(&[3], &[0.0, 1.0, -1.0]).unwrap());
    let y = t.relu(x);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn maxpool_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.maxpool2(x).unwrap();
    assert_eq!(t.value(y).data(), &[4.0]);
    let c = t.constant(Tensor::full(&[1, 2, 4, 6], 0.3));
    let y = t.maxpool2(c).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 2, 2, 3]);
    assert!(t.value(y).data().iter().all(|&v| v == 0.3));
    let odd = t.constant(Tensor::zeros(&[1, 1, 3, 4]));
    assert!(t.maxpool2(odd).is_err());
}

#[test]
fn maxpool_ties_route_to_first() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = t.maxpool2(x).unwrap();
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn upsample_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 1, 1, 1], &[0.7]).unwrap());
    let y = t.upsample2(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.7; 4]);
    let c = t.constant(Tensor::full(&[2, 1, 3, 2], 0.2));
    let y = t.upsample2(c).unwrap();
    assert_eq!(t.value(y).shape(), &[2, 1, 6, 4]);
    assert!(t.value(y).data().iter().all(|&v| v == 0.2));
}

#[test]
fn concat_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[1, 128, 2, 2]);
    let b = rand_tensor(&mut rng, &[1, 128, 2, 2]);
    let mut t = Tape::<f64>::new();
    let (av, bv) = (t.constant(a.clone()), t.constant(b));
    let y = t.concat_channels(av, bv).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 256, 2, 2]);
    let empty = t.constant(Tensor::zeros(&[1, 0, 2, 2]));
    let y = t.concat_channels(av, empty).unwrap();
    assert_eq!(t.value(y), &a);
    let bad = t.constant(Tensor::zeros(&[1, 1, 3, 2]));
    assert!(t.concat_channels(av, bad).is_err());
}

#[test]
fn cosine_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rand_tensor(&mut rng, &[2, 5, 3, 3]);
    let neg = Tensor::from_fn(a.shape(), |i| -a.data()[i]);
    let b = rand_tensor(&mut rng, &[2, 5, 3, 3]);
    let mut t = Tape::<f64>::new();
    let av = t.constant(a.clone());
    let nv = t.constant(neg);
    let bv = t.constant(b.clone());
    let same = t.cosine_channels(av, av, 1e-8).unwrap();
    assert!(t.value(same).data().iter().all(|&v| v == 1.0));
    let opp = t.cosine_channels(av, nv, 1e-8).unwrap();
    assert!(t.value(opp).data().iter().all(|&v| v == -1.0));
    let r = t.cosine_channels(av, bv, 1e-8).unwrap();
    for bi in 0..2 {
        for p in 0..9 {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for c in 0..5 {
                let i = (bi * 5 + c) * 9 + p;
                dot += a.data()[i] * b.data()[i];
                na += a.data()[i] * a.data()[i];
                nb += b.data()[i] * b.data()[i];
            }
            let want = dot / (na.sqrt().max(1e-8) * nb.sqrt().max(1e-8));
            assert!((t.value(r).data()[bi * 9 + p] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn cosine_of_zero_vectors_is_finite() {
    let mut t = Tape::<f64>::new();
    let z = t.leaf(Tensor::zeros(&[1, 3, 2, 2]));
    let y = t.cosine_channels(z, z, 1e-8).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert!(g.get(z).unwrap().all_finite());
}

#[test]
fn broadcast_mul_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    let mut t = Tape::<f64>::new();
    let xv = t.constant(x.clone());
    let ones = t.constant(Tensor::full(&[2, 1, 4, 4], 1.0));
    let zeros = t.constant(Tensor::zeros(&[2, 1, 4, 4]));
    let y = t.broadcast_mul(ones, xv).unwrap();
    assert_eq!(t.value(y), &x);
    let y = t.broadcast_mul(zeros, xv).unwrap();
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
    let bad = t.constant(Tensor::zeros(&[2, 2, 4, 4]));
    assert!(t.broadcast_mul(bad, xv).is_err());
}

#[test]
fn subpixel_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_f64(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.subpixel_upsample(x, 2).unwrap();
    assert_eq!(t.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    let y = t.subpixel_upsample(x, 1).unwrap();
    assert_eq!(t.value(y), t.value(x));
    let bad = t.constant(Tensor::zeros(&[1, 5, 2, 2]));
    assert!(t.subpixel_upsample(bad, 2).is_err());
}

#[test]
fn subpixel_matches_stated_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 18, 3, 4]);
    let mut t = Tape::<f64>::new();
    let xv = t.constant(x.clone());
    let y = t.subpixel_upsample(xv, 3).unwrap();
    let out = t.value(y);
    assert_eq!(out.shape(), &[2, 2, 9, 12]);
    for b in 0..2 {
        for c in 0..2 {
            for yy in 0..9 {
                for xx in 0..12 {
                    let ci = c * 9 + (yy % 3) * 3 + xx % 3;
                    let want = x.data()[((b * 18 + ci) * 3 + yy / 3) * 4 + xx / 3];
                    assert_eq!(out.data()[((b * 2 + c) * 9 + yy) * 12 + xx], want);
                }
            }
        }
    }
}

#[test]
fn loss_examples() {
    let mut t = Tape::<f64>::new();
    let p = t.constant(Tensor::from_f64(&[1, 1, 2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap());
    let q = t.constant(Tensor::from_f64(&[1, 1, 2, 2], &[0.6, 0.7, 0.8, 0.9]).unwrap());
    let l = t.l1_loss(p, p).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
    let l = t.l1_loss(p, q).unwrap();
    assert!((t.value(l).item() - 0.5).abs() < 1e-12);

    let c = t.constant(Tensor::full(&[1, 2, 3, 3], 0.4));
    let tv = t.tv_l1(c).unwrap();
    assert_eq!(t.value(tv).item(), 0.0);
    let ramp = t.constant(Tensor::from_fn(&[1, 1, 4, 5], |i| -0.3 * (i % 5) as f64));
    let tv = t.tv_l1(ramp).unwrap();
    assert!((t.value(tv).item() - 0.3).abs() < 1e-12);
    let tiny = t.constant(Tensor::zeros(&[1, 1, 1, 4]));
    assert!(t.tv_l1(tiny).is_err());
    let other = t.constant(Tensor::zeros(&[1, 1, 2, 3]));
    assert!(t.l1_loss(p, other).is_err());
}

#[test]
fn backward_errors_and_trivial_graphs() {
    let t: Tape<f64> = Tape::new();
    assert!(matches!(t.backward(c2b_nn::Var::from_index(0)), Err(NnError::EmptyTape)));

    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[2, 3], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap());
    let mut t = Tape::<f64>::new();
    let w = t.param(&store, id);
    assert!(matches!(t.backward(w), Err(NnError::NotScalar(_))));
    let s = t.sum(w);
    t.backward_into(s, &mut store).unwrap();
    assert!(store.get(id).grad.data().iter().all(|&g| g == 1.0));
    t.backward_into(s, &mut store).unwrap();
    assert!(store.get(id).grad.data().iter().all(|&g| g == 2.0));

    let mut t = Tape::<f64>::new();
    let c = t.constant(Tensor::full(&[3], 1.0));
    let s = t.sum(c);
    let g = t.backward(s).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get_or_zeros(c, t.value(c)).data(), &[0.0; 3]);
}

#[test]
fn composite_graph_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
    let w = Tensor::from_fn(&[4, 2, 3, 3], |_| rng.random_range(-0.4..0.4));
    let b = Tensor::from_fn(&[4], |_| rng.random_range(-0.1..0.1));
    let target = rand_tensor(&mut rng, &[1, 4, 6, 6]);
    let r = check_op("conv_relu_l1", &[x, w, b], CheckOptions::default(), &mut rng, |t, v| {
        let tgt = t.constant(target.clone());
        let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
        let y = t.relu(y);
        t.l1_loss(y, tgt)
    })
    .unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn suite_report_lists_every_op() {
    let results = op_suite(11).unwrap();
    let report = format_report(&results);
    println!("{report}");
    for name in [
        "conv2d",
        "relu",
        "maxpool2",
        "upsample2",
        "concat_channels",
        "cosine_channels",
        "broadcast_mul",
        "subpixel_upsample",
        "l1_loss",
        "tv_l1",
    ] {
        assert!(report.contains(&format!("PASS {name} ")), "{name} missing:\n{report}");
    }
    assert!(report.ends_with("0 failed\n"));
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::from_fn(&[2, 3, 8, 8], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f32>::from_fn(&[5, 3, 3, 3], |_| rng.random_range(-1.0..1.0));
        let mut t = Tape::<f32>::new();
        let xv = t.leaf(x);
        let wv = t.leaf(w);
        let bv = t.leaf(Tensor::zeros(&[5]));
        let y = t.conv2d(xv, wv, bv, 1, 1).unwrap();
        let y = t.relu(y);
        let y = t.maxpool2(y).unwrap();
        let s = t.tv_l1(y).unwrap();
        let g = t.backward(s).unwrap();
        (t.value(s).item().to_bits(), g.get(wv).unwrap().clone(), g.get(xv).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_moves_toward_minimum() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", Tensor::from_f64(&[1], &[2.0]).unwrap());
    let mut adam = Adam::for_params(&store, 0.05);
    for _ in 0..400 {
        store.zero_grad();
        let mut t = Tape::<f64>::new();
        let x = t.param(&store, id);
        let target = t.constant(Tensor::from_f64(&[1], &[-1.0]).unwrap());
        let l = t.l1_loss(x, target).unwrap();
        t.backward_into(l, &mut store).unwrap();
        adam.step(&mut store).unwrap();
    }
    assert!((store.get(id).value.data()[0] + 1.0).abs() < 0.1);
}

proptest! {
    #[test]
    fn subpixel_round_trip(b in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4, r in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[b, c * r * r, h, w]);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x.clone());
        let y = t.subpixel_upsample(xv, r).unwrap();
        let back = subpixel_downsample(t.value(y), r).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn concat_splits_exactly(ca in 0usize..4, cb in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[2, ca, 3, 3]);
        let b = rand_tensor(&mut rng, &[2, cb, 3, 3]);
        let mut t = Tape::<f64>::new();
        let av = t.leaf(a);
        let bv = t.leaf(b);
        let y = t.concat_channels(av, bv).unwrap();
        let weights = Tensor::from_fn(t.value(y).shape(), |i| i as f64);
        let s = t.weighted_sum(y, weights.clone()).unwrap();
        let g = t.backward(s).unwrap();
        // gradient of each half is exactly its slice of the weights
        let mut rebuilt = Vec::new();
        let plane = 9;
        for bi in 0..2 {
            rebuilt.extend_from_slice(&g.get_or_zeros(av, t.value(av)).data()[bi * ca * plane..(bi + 1) * ca * plane]);
            rebuilt.extend_from_slice(&g.get(bv).unwrap().data()[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        prop_assert_eq!(rebuilt, weights.into_data());
    }

    #[test]
    fn cosine_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[1, 3, 4, 4]);
        let b = rand_tensor(&mut rng, &[1, 3, 4, 4]);
        let mut t = Tape::<f64>::new();
        let (av, bv) = (t.constant(a), t.constant(b));
        let y = t.cosine_channels(av, bv, 1e-8).unwrap();
        prop_assert!(t.value(y).data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn maxpool_output_bounded_by_window(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[1, 2, 4, 6]);
        let mut t = Tape::<f64>::new();
        let xv = t.constant(x.clone());
        let y = t.maxpool2(xv).unwrap();
        let m = x.data().iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(t.value(y).data().contains(&m));
        let n = x.data().iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(t.value(y).data().iter().all(|&v| v > n));
    }
}
