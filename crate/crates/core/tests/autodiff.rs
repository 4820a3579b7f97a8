use gsmefb_core::autodiff::{
    finite_difference_check, CVar, GradCheckOptions, Graph, ParamStore, QuantizerMode, Var,
};
use gsmefb_core::rng::rng_from;
use gsmefb_core::{Error, Result};
use num_complex::Complex;
use rand::Rng;

fn randn(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Runs the finite-difference oracle on `instances` random inputs of the given shapes.
fn check_primitive<F>(shapes: &[&[usize]], instances: u64, build: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    for inst in 0..instances {
        let mut rng = rng_from(99, &[inst]);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = s.iter().product();
                store.add(&format!("x{}", i), s, randn(&mut rng, n), true).unwrap()
            })
            .collect();
        let opts = GradCheckOptions {
            coords_per_param: 64,
            seed: inst,
            ..Default::default()
        };
        let report = finite_difference_check(
            &mut store,
            |g, s| {
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
                build(g, &vars)
            },
            &opts,
        )
        .unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "instance {}: {:?}",
            inst,
            report.params
        );
    }
}

/// A fixed random weighting keeps reductions from hiding per-entry errors.
fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Result<Var> {
    let n = g.value(x).len();
    let shape = g.shape(x).to_vec();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
    let w = g.constant(&shape, w)?;
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

#[test]
fn matmul_matches_naive_triple_loop() {
    let mut rng = rng_from(1, &[]);
    let a = randn(&mut rng, 6);
    let b = randn(&mut rng, 12);
    let mut g = Graph::new();
    let va = g.constant(&[2, 3], a.clone()).unwrap();
    let vb = g.constant(&[3, 4], b.clone()).unwrap();
    let c = g.matmul(va, vb).unwrap();
    assert_eq!(g.shape(c), &[2, 4]);
    for i in 0..2 {
        for j in 0..4 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a[i * 3 + k] * b[k * 4 + j];
            }
            assert!((g.value(c)[i * 4 + j] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_values_and_mask() {
    let mut g = Graph::new();
    let x = g.variable(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
    let y = g.relu(x);
    assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn sum_adjoint_is_ones() {
    let mut g = Graph::new();
    let x = g.variable(&[2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 4]);
}

#[test]
fn chain_rule_closed_form() {
    // f(x) = sin(x^2) at x = 0.7
    let mut g = Graph::new();
    let x = g.variable(&[1], vec![0.7]).unwrap();
    let sq = g.mul(x, x).unwrap();
    let y = g.sin(sq);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let want = (0.49f64).cos() * 1.4;
    assert!((grads.get(x).unwrap()[0] - want).abs() < 1e-15);
}

#[test]
fn diamond_accumulates_both_paths() {
    let mut g = Graph::new();
    let x = g.variable(&[2], vec![1.5, -0.5]).unwrap();
    let a = g.scale(x, 3.0);
    let b = g.cos(x);
    let c = g.add(a, b).unwrap();
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    let gx = grads.get(x).unwrap();
    assert!((gx[0] - (3.0 - 1.5f64.sin())).abs() < 1e-15);
    assert!((gx[1] - (3.0 + 0.5f64.sin())).abs() < 1e-15);
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::new();
    let x = g.variable(&[2], vec![1.0, 2.0]).unwrap();
    let y = g.relu(x);
    assert!(matches!(g.backward(y), Err(Error::Usage(_))));
}

#[test]
fn shape_errors_are_dimension_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
    let c = g.constant(&[2], vec![0.0; 2]).unwrap();
    assert!(matches!(g.add(a, c), Err(Error::Dimension(_))));
    assert!(matches!(g.reshape(a, &[5]), Err(Error::Dimension(_))));
}

#[test]
fn linear_function_gradcheck_is_tight() {
    let mut store = ParamStore::new();
    let id = store.add("w", &[5], vec![0.3, -1.0, 2.0, 0.0, 4.0], true).unwrap();
    let report = finite_difference_check(
        &mut store,
        |g, s| {
            let w = g.param(s, id);
            let c = g.constant(&[5], vec![1.0, 2.0, 3.0, 4.0, 5.0])?;
            let p = g.mul(w, c)?;
            Ok(g.sum(p))
        },
        // central differences are exact for linear maps at any step
        &GradCheckOptions {
            rel_step: 1e-2,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-10, "{:?}", report);
}

#[test]
fn fd_elementwise_primitives() {
    check_primitive(&[&[3, 4], &[4]], 20, |g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[1])?;
        let c = g.mul(b, v[1])?;
        let d = g.cos(c);
        let e = g.sin(v[0]);
        let f = g.mul(d, e)?;
        let h = g.neg(f);
        weighted_sum(g, h)
    });
}

#[test]
fn fd_powf_and_mean() {
    check_primitive(&[&[6]], 20, |g, v| {
        let sq = g.mul(v[0], v[0])?;
        let one = g.scalar_constant(1.0);
        let pos = g.add(sq, one)?;
        let p = g.powf(pos, -0.5);
        let s = g.scale(p, 2.5);
        Ok(g.mean(s))
    });
}

#[test]
fn fd_relu_away_from_kink() {
    check_primitive(&[&[10]], 20, |g, v| {
        let r = g.relu(v[0]);
        weighted_sum(g, r)
    });
}

#[test]
fn fd_batched_matmul_with_broadcast() {
    check_primitive(&[&[2, 3, 4], &[4, 5]], 20, |g, v| {
        let c = g.matmul(v[0], v[1])?;
        weighted_sum(g, c)
    });
    check_primitive(&[&[1, 2, 3], &[4, 3, 2]], 20, |g, v| {
        let c = g.matmul(v[0], v[1])?;
        weighted_sum(g, c)
    });
}

#[test]
fn fd_shape_primitives() {
    check_primitive(&[&[2, 3, 4], &[2, 1, 4]], 20, |g, v| {
        let t = g.transpose(v[0])?;
        let t = g.transpose(t)?;
        let c = g.concat(&[t, v[1]], 1)?;
        let s = g.slice(c, 1, 1, 3)?;
        let r = g.reshape(s, &[6, 4])?;
        let red = g.sum_axes(r, &[0])?;
        let sq = g.mul(red, red)?;
        weighted_sum(g, sq)
    });
}

#[test]
fn fd_complex_matmul_and_conj_transpose() {
    check_primitive(&[&[2, 3], &[2, 3], &[3, 2], &[3, 2]], 20, |g, v| {
        let a = CVar::new(v[0], v[1]);
        let b = CVar::new(v[2], v[3]);
        let c = g.c_matmul(a, b)?;
        let ch = g.c_conj_transpose(c)?;
        let p = g.c_mul(c, ch)?;
        let s = g.c_abs_sqr(p)?;
        weighted_sum(g, s)
    });
}

#[test]
fn complex_multiply_matches_scalar_oracle() {
    let mut rng = rng_from(5, &[]);
    let (ar, ai, br, bi) = (randn(&mut rng, 6), randn(&mut rng, 6), randn(&mut rng, 6), randn(&mut rng, 6));
    let mut g = Graph::new();
    let a = CVar::new(g.constant(&[2, 3], ar.clone()).unwrap(), g.constant(&[2, 3], ai.clone()).unwrap());
    let b = CVar::new(g.constant(&[3, 2], br.clone()).unwrap(), g.constant(&[3, 2], bi.clone()).unwrap());
    let c = g.c_matmul(a, b).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = Complex::new(0.0, 0.0);
            for k in 0..3 {
                s += Complex::new(ar[i * 3 + k], ai[i * 3 + k]) * Complex::new(br[k * 2 + j], bi[k * 2 + j]);
            }
            assert!((g.value(c.re)[i * 2 + j] - s.re).abs() < 1e-12);
            assert!((g.value(c.im)[i * 2 + j] - s.im).abs() < 1e-12);
        }
    }
}

#[test]
fn fd_conv1d_including_oversized_kernel() {
    for k in [1usize, 3, 4, 7, 11] {
        check_primitive(&[&[2, 3, 5], &[4, 3, k]], 20, |g, v| {
            let y = g.conv1d(v[0], v[1])?;
            assert_eq!(g.shape(y), &[2, 4, 5]);
            weighted_sum(g, y)
        });
    }
}

#[test]
fn conv1d_same_padding_values() {
    // single channel, kernel [1, 2, 3] centered: y[t] = x[t-1] + 2x[t] + 3x[t+1]
    let mut g = Graph::new();
    let x = g.constant(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = g.constant(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = g.conv1d(x, w).unwrap();
    assert_eq!(g.value(y), &[2.0 + 6.0, 1.0 + 4.0 + 9.0, 2.0 + 6.0 + 12.0, 3.0 + 8.0]);
}

#[test]
fn fd_batch_norm_train_and_eval() {
    check_primitive(&[&[4, 3, 5], &[3], &[3]], 20, |g, v| {
        let (y, stats) = g.batch_norm(v[0], v[1], v[2], None, 1e-5)?;
        assert!(stats.is_some());
        let sq = g.mul(y, y)?;
        let c = g.cos(sq);
        weighted_sum(g, c)
    });
    check_primitive(&[&[3, 4], &[4], &[4]], 20, |g, v| {
        let (y, _) = g.batch_norm(v[0], v[1], v[2], None, 1e-5)?;
        let s = g.sin(y);
        weighted_sum(g, s)
    });
    let mean = [0.1, -0.2, 0.3, 0.0];
    let var = [1.5, 0.5, 2.0, 1.0];
    check_primitive(&[&[3, 4], &[4], &[4]], 20, |g, v| {
        let (y, stats) = g.batch_norm(v[0], v[1], v[2], Some((&mean, &var)), 1e-5)?;
        assert!(stats.is_none());
        let s = g.sin(y);
        weighted_sum(g, s)
    });
}

#[test]
fn batch_norm_normalizes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(&[4, 1], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let gamma = g.constant(&[1], vec![1.0]).unwrap();
    let beta = g.constant(&[1], vec![0.0]).unwrap();
    let (y, stats) = g.batch_norm(x, gamma, beta, None, 0.0).unwrap();
    let stats = stats.unwrap();
    assert!((stats.mean[0] - 3.0).abs() < 1e-15);
    assert!((stats.var[0] - 14.0 / 3.0).abs() < 1e-12);
    let m: f64 = g.value(y).iter().sum::<f64>() / 4.0;
    let v: f64 = g.value(y).iter().map(|x| x * x).sum::<f64>() / 4.0;
    assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-12);
    let one = g.constant(&[1, 1], vec![1.0]).unwrap();
    assert!(matches!(g.batch_norm(one, gamma, beta, None, 1e-5), Err(Error::Usage(_))));
}

#[test]
fn quantizer_forward_and_surrogate() {
    let mut g = Graph::new();
    let x = g.variable(&[4], vec![0.3, -0.7, 0.0, -0.0]).unwrap();
    let q = g.quantize(x, QuantizerMode::Hard);
    assert_eq!(g.value(q), &[1.0, -1.0, 1.0, 1.0]);
    let s = g.sum(q);
    let grads = g.backward(s).unwrap();
    let gx = grads.get(x).unwrap();
    assert_eq!(gx[2], 1.0);
    assert!((gx[0] - (1.0 - 0.3f64.tanh().powi(2))).abs() < 1e-15);
    check_primitive(&[&[8]], 20, |g, v| {
        let q = g.quantize(v[0], QuantizerMode::Smooth);
        weighted_sum(g, q)
    });
}

#[test]
fn herm_log_det_of_scaled_identity() {
    let mut g = Graph::new();
    let re = g.variable(&[2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap();
    let im = g.variable(&[2, 2], vec![0.0; 4]).unwrap();
    let ld = g.herm_log_det(re, im).unwrap();
    assert_eq!(g.shape(ld), &[] as &[usize]);
    assert!((g.scalar(ld).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
    let grads = g.backward(ld).unwrap();
    let gre = grads.get(re).unwrap();
    for (got, want) in gre.iter().zip([0.5, 0.0, 0.0, 0.5]) {
        assert!((got - want).abs() < 1e-15);
    }
    assert_eq!(grads.get(im).unwrap(), &[0.0; 4]);
}

#[test]
fn herm_log_det_rejects_indefinite() {
    let mut g = Graph::new();
    let re = g.variable(&[2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
    let im = g.variable(&[2, 2], vec![0.0; 4]).unwrap();
    assert!(matches!(g.herm_log_det(re, im), Err(Error::Numerical(_))));
}

#[test]
fn fd_herm_log_det_through_gram_matrix() {
    // X = I + Y Y^H is Hermitian positive definite for any Y.
    check_primitive(&[&[3, 3, 2], &[3, 3, 2]], 20, |g, v| {
        let y = CVar::new(v[0], v[1]);
        let yh = g.c_conj_transpose(y)?;
        let gram = g.c_matmul(y, yh)?;
        let eye = g.constant(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])?;
        let re = g.add(gram.re, eye)?;
        let ld = g.herm_log_det(re, gram.im)?;
        weighted_sum(g, ld)
    });
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.variable(&[3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let w = g.variable(&[4, 2], (0..8).map(|i| (i as f64).cos()).collect()).unwrap();
        let y = g.matmul(x, w).unwrap();
        let r = g.relu(y);
        let s = g.mean(r);
        let grads = g.backward(s).unwrap();
        (g.scalar(s).unwrap(), grads.get(x).unwrap().to_vec(), grads.get(w).unwrap().to_vec())
    };
    let a = run();
    let b = run();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn single_precision_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.variable(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = g.matmul(x, x).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(g.scalar(s).unwrap(), 7.0 + 10.0 + 15.0 + 22.0);
    assert_eq!(grads.get(x).unwrap().len(), 4);
}
