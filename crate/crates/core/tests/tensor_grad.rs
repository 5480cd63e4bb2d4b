//! Gradient checks: every differentiable primitive against central
//! finite differences, plus the structural tape properties.

use advcap::tensor::fdcheck::{finite_diff_check, finite_diff_check_at};
use advcap::{NodeId, Real, Tape, Tensor};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

const FD_H: Real = 1e-5;
const FD_TOL: Real = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<Real> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Checks autodiff of `build` against finite differences w.r.t. `x`.
fn check_grad<F>(x: &Tensor, build: F, tol: Real)
where
    F: Fn(&mut Tape, NodeId) -> NodeId,
{
    let mut tape = Tape::new();
    let xv = tape.var(x.clone());
    let root = build(&mut tape, xv);
    assert!(tape.value(root).is_scalar(), "root must be scalar");
    let grads = tape.backward(root).unwrap();
    let g = grads.get_or_zero(xv);
    let err = finite_diff_check(
        |probe| {
            let mut t = Tape::new();
            let v = t.var(probe.clone());
            let r = build(&mut t, v);
            t.value(r).item()
        },
        x,
        &g,
        FD_H,
    );
    assert!(err <= tol, "finite-difference mismatch: {err}");
}

#[test]
fn grad_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]));
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap().get(x).unwrap();
    assert_eq!(g.data(), &[1.0; 6]);
}

#[test]
fn grad_of_l2_norm_sq_is_two_x() {
    let mut tape = Tape::new();
    let data = vec![1.5, -0.5, 2.0];
    let x = tape.var(Tensor::new(vec![3], data.clone()));
    let s = tape.l2_norm_sq(x);
    let g = tape.backward(s).unwrap().get(x).unwrap();
    for (gv, xv) in g.data().iter().zip(&data) {
        assert_eq!(*gv, 2.0 * xv);
    }
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[1, 4]);
    let w1 = rand_tensor(&mut rng, &[4, 5]);
    let w2 = rand_tensor(&mut rng, &[5, 3]);
    let w3 = rand_tensor(&mut rng, &[3, 1]);
    check_grad(
        &x,
        |t, xv| {
            let w1 = t.constant(w1.clone());
            let w2 = t.constant(w2.clone());
            let w3 = t.constant(w3.clone());
            let h1 = t.matmul(xv, w1).unwrap();
            let h1 = t.tanh(h1);
            let h2 = t.matmul(h1, w2).unwrap();
            let h2 = t.sigmoid(h2);
            let h3 = t.matmul(h2, w3).unwrap();
            t.sum(h3)
        },
        FD_TOL,
    );
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // matmul (both operands)
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    check_grad(
        &a,
        |t, av| {
            let bv = t.constant(b.clone());
            let c = t.matmul(av, bv).unwrap();
            t.sum(c)
        },
        FD_TOL,
    );
    check_grad(
        &b,
        |t, bv| {
            let av = t.constant(a.clone());
            let c = t.matmul(av, bv).unwrap();
            t.l2_norm_sq(c)
        },
        FD_TOL,
    );

    // conv2d (input, kernel, bias) with stride 2 and padding 1
    let img = rand_tensor(&mut rng, &[6, 6, 2]);
    let ker = rand_tensor(&mut rng, &[3, 3, 2, 3]);
    let bias = rand_tensor(&mut rng, &[3]);
    check_grad(
        &img,
        |t, iv| {
            let kv = t.constant(ker.clone());
            let bv = t.constant(bias.clone());
            let c = t.conv2d(iv, kv, Some(bv), 2, 1).unwrap();
            t.l2_norm_sq(c)
        },
        FD_TOL,
    );
    check_grad(
        &ker,
        |t, kv| {
            let iv = t.constant(img.clone());
            let bv = t.constant(bias.clone());
            let c = t.conv2d(iv, kv, Some(bv), 2, 1).unwrap();
            t.l2_norm_sq(c)
        },
        FD_TOL,
    );
    check_grad(
        &bias,
        |t, bv| {
            let iv = t.constant(img.clone());
            let kv = t.constant(ker.clone());
            let c = t.conv2d(iv, kv, Some(bv), 2, 1).unwrap();
            t.l2_norm_sq(c)
        },
        FD_TOL,
    );

    // elementwise add / sub / mul / neg / scalar ops
    let x = rand_tensor(&mut rng, &[2, 3]);
    let y = rand_tensor(&mut rng, &[2, 3]);
    check_grad(
        &x,
        |t, xv| {
            let yv = t.constant(y.clone());
            let s = t.add(xv, yv).unwrap();
            let s = t.mul(s, xv).unwrap();
            let s = t.sub(s, yv).unwrap();
            let s = t.neg(s);
            let s = t.add_scalar(s, 0.7);
            let s = t.mul_scalar(s, -1.3);
            t.l2_norm_sq(s)
        },
        FD_TOL,
    );

    // tanh / sigmoid / softmax / log_sum_exp
    let z = rand_tensor(&mut rng, &[7]);
    check_grad(
        &z,
        |t, zv| {
            let a = t.tanh(zv);
            let b = t.sigmoid(a);
            let p = t.softmax(b).unwrap();
            let q = t.mul(p, p).unwrap();
            t.sum(q)
        },
        FD_TOL,
    );
    check_grad(&z, |t, zv| t.log_sum_exp(zv).unwrap(), FD_TOL);

    // relu away from the kink
    let mut xr = rand_tensor(&mut rng, &[9]);
    for v in xr.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    check_grad(
        &xr,
        |t, xv| {
            let r = t.relu(xv);
            t.l2_norm_sq(r)
        },
        FD_TOL,
    );

    // embed lookup (gradient w.r.t. the table, repeated rows accumulate)
    let table = rand_tensor(&mut rng, &[5, 3]);
    check_grad(
        &table,
        |t, tv| {
            let rows = t.embed_lookup(tv, &[1, 3, 1]).unwrap();
            t.l2_norm_sq(rows)
        },
        FD_TOL,
    );

    // max/min over axis, max_except, gather, concat, slice, reshape, stack
    // (tie-free input so the subgradient choice does not matter)
    let flat = Tensor::new(vec![6], vec![0.3, -1.2, 2.4, 0.9, -0.4, 1.7]);
    check_grad(&flat, |t, v| t.max_over_axis(v, None).unwrap(), FD_TOL);
    check_grad(&flat, |t, v| t.min_over_axis(v, None).unwrap(), FD_TOL);
    check_grad(&flat, |t, v| t.max_except(v, 2).unwrap(), FD_TOL);
    check_grad(&flat, |t, v| t.gather(v, 4).unwrap(), FD_TOL);
    let mat = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.4, 0.9, -0.4, 1.7]);
    check_grad(
        &mat,
        |t, v| {
            let rowmax = t.max_over_axis(v, Some(1)).unwrap();
            t.l2_norm_sq(rowmax)
        },
        FD_TOL,
    );
    check_grad(
        &flat,
        |t, v| {
            let left = t.slice(v, 0, 3).unwrap();
            let right = t.slice(v, 3, 3).unwrap();
            let cat = t.concat(left, right).unwrap();
            let resh = t.reshape(cat, &[2, 3]).unwrap();
            let g0 = t.gather(resh, 0).unwrap();
            let g5 = t.gather(resh, 5).unwrap();
            let st = t.stack(&[g0, g5]).unwrap();
            t.l2_norm_sq(st)
        },
        FD_TOL,
    );
}

#[test]
fn trivial_forward_values() {
    let mut tape = Tape::new();
    let z = tape.var(Tensor::new(vec![3], vec![0.0, 0.0, 0.0]));
    let p = tape.softmax(z).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);

    let x = tape.var(Tensor::zeros(&[2, 2]));
    let th = tape.tanh(x);
    assert_eq!(tape.value(th).data(), &[0.0; 4]);

    let v = tape.var(Tensor::new(vec![2], vec![3.0, 4.0]));
    let n = tape.l2_norm_sq(v);
    assert_eq!(tape.value(n).item(), 25.0);
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let z = rand_tensor(&mut rng, &[4, 11]);
        let mut tape = Tape::new();
        let zv = tape.var(z);
        let p = tape.softmax(zv).unwrap();
        for row in tape.value(p).data().chunks(11) {
            assert!(row.iter().all(|&v| v >= 0.0));
            let sum: Real = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
        }
    }
}

#[test]
fn softmax_self_derivative_is_p_times_one_minus_p() {
    // d p_j / d z_j = p_j (1 - p_j); checked near p = 0.5 and p ~ 1.
    for logit_gap in [0.0, -(1e-6f64.ln() - (1.0 - 1e-6f64).ln())] {
        let mut tape = Tape::new();
        let z = tape.var(Tensor::new(vec![2], vec![logit_gap, 0.0]));
        let p = tape.softmax(z).unwrap();
        let pj = tape.gather(p, 0).unwrap();
        let pj_val = tape.value(pj).item();
        let grads = tape.backward(pj).unwrap();
        let dz = grads.get(z).unwrap();
        let expected = pj_val * (1.0 - pj_val);
        assert!(
            (dz.data()[0] - expected).abs() <= 1e-12,
            "got {}, expected {}",
            dz.data()[0],
            expected
        );
    }
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.1, 0.2]));
        let w = tape.constant(Tensor::new(vec![2, 2], vec![0.5, -1.0, 0.25, 2.0]));
        let h = tape.matmul(x, w).unwrap();
        let h = tape.tanh(h);
        let s = tape.l2_norm_sq(h);
        let g = tape.backward(s).unwrap().get(x).unwrap();
        (tape.value(s).item(), g.data().to_vec())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.to_bits(), v2.to_bits());
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::zeros(&[2, 2]));
    let y = tape.tanh(x);
    let err = tape.backward(y).unwrap_err();
    assert!(matches!(err, advcap::Error::NonScalarRoot { .. }));
}

#[test]
fn shape_mismatch_reports_offending_shapes() {
    let mut tape = Tape::new();
    let a = tape.var(Tensor::zeros(&[2, 3]));
    let b = tape.var(Tensor::zeros(&[3, 3]));
    let err = tape.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[3, 3]"), "{msg}");

    let err = tape.matmul(a, a).unwrap_err();
    assert!(err.to_string().contains("[2, 3]"), "{err}");
}

#[test]
fn unreached_leaves_read_back_as_zero() {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::new(vec![2], vec![1.0, 2.0]));
    let unused = tape.var(Tensor::new(vec![3], vec![0.0; 3]));
    let s = tape.sum(x);
    let grads = tape.backward(s).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.get_or_zero(unused).data(), &[0.0; 3]);
}

#[test]
fn max_ties_take_first_index() {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::new(vec![4], vec![2.0, 5.0, 5.0, 1.0]));
    let m = tape.max_over_axis(x, None).unwrap();
    let g = tape.backward(m).unwrap().get(x).unwrap();
    assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::new(vec![3], vec![-1.0, 0.0, 1.0]));
    let r = tape.relu(x);
    let s = tape.sum(r);
    let g = tape.backward(s).unwrap().get(x).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.var(Tensor::new(vec![2], vec![1.0, 2.0]));
    let c = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]));
    let p = tape.mul(x, c).unwrap();
    let s = tape.sum(p);
    let grads = tape.backward(s).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn probed_finite_diff_check_matches_full_check() {
    let x = Tensor::new(vec![4], vec![0.4, -0.9, 1.3, 0.2]);
    let f = |t: &Tensor| t.data().iter().map(|&v| v * v * v).sum::<Real>();
    let grad = Tensor::new(
        vec![4],
        x.data().iter().map(|&v| 3.0 * v * v).collect::<Vec<_>>(),
    );
    let full = finite_diff_check(f, &x, &grad, FD_H);
    let probed = finite_diff_check_at(f, &x, &grad, FD_H, &[0, 1, 2, 3]);
    assert_eq!(full, probed);
    assert!(full <= 1e-6);
}
