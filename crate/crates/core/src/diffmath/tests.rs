use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn tanh_identity_at_zero() {
    let mut g = Graph::new();
    let x = g.scalar(0.0);
    let y = g.tanh(x);
    g.backward(y).unwrap();
    assert_eq!(g.scalar_value(y), 0.0);
    assert_eq!(g.grad(x).item(), 1.0);
}

#[test]
fn cosine_of_self_and_gradient_at_equality() {
    let mut g = Graph::new();
    let u = g.leaf(Tensor::vector(&[0.4, -1.1, 2.0]));
    let v = g.leaf(Tensor::vector(&[0.4, -1.1, 2.0]));
    let c = g.cosine(u, v).unwrap();
    g.backward(c).unwrap();
    assert!((g.scalar_value(c) - 1.0).abs() < 1e-12);
    for &gi in g.grad(u).data() {
        assert!(gi.abs() < 1e-12, "expected zero gradient, got {gi}");
    }
}

#[test]
fn mean_rows_gradient_is_inverse_row_count() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(4, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap());
    let m = g.mean_rows(x).unwrap();
    let ones = g.leaf(Tensor::vector(&[1.0, 1.0]));
    let s = g.dot(m, ones).unwrap();
    g.backward(s).unwrap();
    for &gi in g.grad(x).data() {
        assert!((gi - 0.25).abs() < 1e-15);
    }
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::new();
    let x = g.scalar(3.0);
    let y = g.add(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.scalar_value(y), 6.0);
    assert_eq!(g.grad(x).item(), 2.0);
}

#[test]
fn inactive_hinge_has_zero_gradient() {
    let mut g = Graph::new();
    let c = g.scalar(-0.5);
    let h = g.hinge(c);
    g.backward(h).unwrap();
    assert_eq!(g.scalar_value(h), 0.0);
    assert_eq!(g.grad(c).item(), 0.0);
}

#[test]
fn hinge_at_exact_zero_uses_subgradient_zero() {
    let mut g = Graph::new();
    let c = g.scalar(0.0);
    let h = g.hinge(c);
    g.backward(h).unwrap();
    assert_eq!(g.grad(c).item(), 0.0);
}

#[test]
fn max_over_tie_goes_to_first_maximal() {
    let mut g = Graph::new();
    let a = g.scalar(0.7);
    let b = g.scalar(0.7);
    let c = g.scalar(0.2);
    let m = g.max_over(&[a, b, c]).unwrap();
    g.backward(m).unwrap();
    assert_eq!(g.grad(a).item(), 1.0);
    assert_eq!(g.grad(b).item(), 0.0);
    assert_eq!(g.grad(c).item(), 0.0);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(&[1.0, 2.0]));
    let y = g.tanh(x);
    match g.backward(y) {
        Err(DiffError::NonScalarRoot { shape }) => assert_eq!(shape, vec![2]),
        other => panic!("expected NonScalarRoot, got {other:?}"),
    }
}

#[test]
fn repeated_backward_accumulates() {
    let mut g = Graph::new();
    let x = g.scalar(2.0);
    let y = g.scale(x, 3.0);
    g.backward(y).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).item(), 6.0);
    g.zero_grads();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).item(), 3.0);
}

#[test]
fn fan_out_equals_sum_of_single_paths() {
    let factors = [0.7, -1.3, 2.1, 0.4];
    let combined = {
        let mut g = Graph::new();
        let x = g.scalar(1.234);
        let terms: Vec<NodeId> = factors.iter().map(|&f| g.scale(x, f)).collect();
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = g.add(acc, t).unwrap();
        }
        g.backward(acc).unwrap();
        g.grad(x).item()
    };
    let single_sum: f64 = factors
        .iter()
        .map(|&f| {
            let mut g = Graph::new();
            let x = g.scalar(1.234);
            let y = g.scale(x, f);
            g.backward(y).unwrap();
            g.grad(x).item()
        })
        .sum();
    assert_eq!(combined, single_sum);
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let mut r = rng(99);
        let table = g.leaf(Tensor::uniform(&[7, 3], -1.0, 1.0, &mut r));
        let filters = g.leaf(Tensor::uniform(&[4, 3, 3], -1.0, 1.0, &mut r));
        let bias = g.leaf(Tensor::uniform(&[4], -1.0, 1.0, &mut r));
        let e = g.embed_gather(table, &[0, 3, 6, 2]).unwrap();
        let c = g.conv1d(e, filters, bias).unwrap();
        let t = g.tanh(c);
        let m = g.mean_rows(t).unwrap();
        let probe = g.leaf(Tensor::uniform(&[4], -1.0, 1.0, &mut r));
        let cos = g.cosine(m, probe).unwrap();
        g.scalar_value(cos).to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn conv1d_shape_mismatch_is_reported() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(3, 4, vec![0.1; 12]).unwrap());
    let f = g.leaf(Tensor::new(vec![2, 3, 5], vec![0.1; 30]).unwrap());
    let b = g.leaf(Tensor::vector(&[0.0, 0.0]));
    assert!(matches!(
        g.conv1d(x, f, b),
        Err(DiffError::ShapeMismatch { op: "conv1d", .. })
    ));
}

#[test]
fn grad_check_quadratic_is_nearly_exact() {
    let params = [Tensor::vector(&[1.0, 2.0, 3.0])];
    let report = grad_check(|g, ids| g.dot(ids[0], ids[0]), &params, 1e-5, 1e-8).unwrap();
    assert!(report.passed(), "max rel err {}", report.max_rel_err);
    assert!(report.max_rel_err < 1e-8);

    let mut g = Graph::new();
    let x = g.leaf(params[0].clone());
    let y = g.dot(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn grad_check_rejects_zero_step() {
    let params = [Tensor::scalar(1.0)];
    assert!(matches!(
        grad_check(|g, ids| g.dot(ids[0], ids[0]), &params, 0.0, 1e-4),
        Err(DiffError::NonPositiveStep { .. })
    ));
}

/// Every op, finite-difference checked on randomized shapes and values.
#[test]
fn per_op_gradients_match_finite_differences() {
    let mut r = rng(2024);
    for trial in 0..100 {
        check_embed_gather(&mut r, trial);
        check_conv1d(&mut r, trial);
        check_unary_chain(&mut r, trial);
        check_cosine(&mut r, trial);
        check_scalar_reducers(&mut r, trial);
        check_linear(&mut r, trial);
    }
}

fn assert_fd<F>(build: F, params: &[Tensor], ctx: &str)
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let report = grad_check(build, params, 1e-5, 1e-4).unwrap();
    assert!(
        report.passed(),
        "{ctx}: max rel err {} over {:?}",
        report.max_rel_err,
        report.per_param
    );
}

fn check_embed_gather(r: &mut ChaCha8Rng, trial: usize) {
    let rows = r.random_range(2..6);
    let dim = r.random_range(1..5);
    let len = r.random_range(1..6);
    let indices: Vec<usize> = (0..len).map(|_| r.random_range(0..rows)).collect();
    let table = Tensor::uniform(&[rows, dim], -1.0, 1.0, r);
    let probe: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    assert_fd(
        move |g, ids| {
            let e = g.embed_gather(ids[0], &indices)?;
            let m = g.mean_rows(e)?;
            let p = g.leaf(Tensor::vector(&probe));
            g.dot(m, p)
        },
        &[table],
        &format!("embed_gather trial {trial}"),
    );
}

fn check_conv1d(r: &mut ChaCha8Rng, trial: usize) {
    let len = r.random_range(1..6);
    let dim = r.random_range(1..4);
    let width = r.random_range(1..5);
    let n_filters = r.random_range(1..4);
    let input = Tensor::uniform(&[len, dim], -1.0, 1.0, r);
    let filters = Tensor::uniform(&[n_filters, width, dim], -1.0, 1.0, r);
    let bias = Tensor::uniform(&[n_filters], -1.0, 1.0, r);
    let probe: Vec<f64> = (0..n_filters).map(|_| r.random_range(-1.0..1.0)).collect();
    assert_fd(
        move |g, ids| {
            let c = g.conv1d(ids[0], ids[1], ids[2])?;
            let t = g.tanh(c);
            let m = g.mean_rows(t)?;
            let p = g.leaf(Tensor::vector(&probe));
            g.dot(m, p)
        },
        &[input, filters, bias],
        &format!("conv1d trial {trial}"),
    );
}

fn check_unary_chain(r: &mut ChaCha8Rng, trial: usize) {
    let rows = r.random_range(1..5);
    let cols = r.random_range(1..5);
    let x = Tensor::uniform(&[rows, cols], -2.0, 2.0, r);
    let factor = r.random_range(-2.0..2.0);
    let probe: Vec<f64> = (0..cols).map(|_| r.random_range(-1.0..1.0)).collect();
    assert_fd(
        move |g, ids| {
            let t = g.tanh(ids[0]);
            let s = g.scale(t, factor);
            let a = g.add(s, t)?;
            let m = g.mean_rows(a)?;
            let p = g.leaf(Tensor::vector(&probe));
            g.dot(m, p)
        },
        &[x],
        &format!("tanh/scale/add trial {trial}"),
    );
}

fn check_cosine(r: &mut ChaCha8Rng, trial: usize) {
    let dim = r.random_range(1..6);
    // keep vectors comfortably away from the origin
    let mut u = Tensor::uniform(&[dim], 0.2, 1.5, r);
    let v = Tensor::uniform(&[dim], 0.2, 1.5, r);
    if r.random_range(0..2) == 0 {
        for x in u.data_mut() {
            *x = -*x;
        }
    }
    assert_fd(
        |g, ids| g.cosine(ids[0], ids[1]),
        &[u, v],
        &format!("cosine trial {trial}"),
    );
}

fn check_scalar_reducers(r: &mut ChaCha8Rng, trial: usize) {
    let n = r.random_range(1..6);
    // spread inputs so max_over ties and hinge kinks stay far from the
    // finite-difference step
    let mut vals: Vec<f64> = Vec::with_capacity(n);
    while vals.len() < n {
        let c: f64 = r.random_range(-3.0..3.0);
        if c.abs() > 0.05 && vals.iter().all(|&x: &f64| (x - c).abs() > 0.05) {
            vals.push(c);
        }
    }
    let target = r.random_range(0..n);
    let params: Vec<Tensor> = vals.iter().map(|&v| Tensor::scalar(v)).collect();
    assert_fd(
        move |g, ids| {
            let lse = g.log_sum_exp(ids)?;
            let nls = g.neg_log_softmax_at(ids, target)?;
            let mx = g.max_over(ids)?;
            let h = g.hinge(mx);
            let a = g.add(lse, nls)?;
            g.add(a, h)
        },
        &params,
        &format!("scalar reducers trial {trial}"),
    );
}

fn check_linear(r: &mut ChaCha8Rng, trial: usize) {
    let in_dim = r.random_range(1..5);
    let out_dim = r.random_range(1..5);
    let x = Tensor::uniform(&[in_dim], -1.0, 1.0, r);
    let w = Tensor::uniform(&[in_dim, out_dim], -1.0, 1.0, r);
    let b = Tensor::uniform(&[out_dim], -1.0, 1.0, r);
    let probe: Vec<f64> = (0..out_dim).map(|_| r.random_range(-1.0..1.0)).collect();
    assert_fd(
        move |g, ids| {
            let y = g.linear(ids[0], ids[1], ids[2])?;
            let p = g.leaf(Tensor::vector(&probe));
            g.dot(y, p)
        },
        &[x, w, b],
        &format!("linear trial {trial}"),
    );
}

/// A deeper composite: encoder-like pipeline feeding scalar reducers.
#[test]
fn random_composite_graphs_match_finite_differences() {
    let mut r = rng(7);
    for trial in 0..20 {
        let rows = r.random_range(3..7);
        let dim = r.random_range(2..5);
        let n_filters = r.random_range(2..5);
        let width = 1 + 2 * r.random_range(0..2);
        let len = r.random_range(2..6);
        let indices: Vec<usize> = (0..len).map(|_| r.random_range(0..rows)).collect();

        let table = Tensor::uniform(&[rows, dim], -0.8, 0.8, &mut r);
        let filters = Tensor::uniform(&[n_filters, width, dim], -0.8, 0.8, &mut r);
        let bias = Tensor::uniform(&[n_filters], -0.8, 0.8, &mut r);
        let anchor = Tensor::uniform(&[n_filters], 0.3, 1.0, &mut r);

        let build = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId, DiffError> {
            let e = g.embed_gather(ids[0], &indices)?;
            let c = g.conv1d(e, ids[1], ids[2])?;
            let t = g.tanh(c);
            let m = g.mean_rows(t)?;
            let cos = g.cosine(m, ids[3])?;
            let half = g.scalar(0.5);
            let scaled = g.scale(cos, 0.5);
            let f = g.add(scaled, half)?;
            let af = g.scale(f, 10.0);
            let offset = g.scalar(2.0);
            let other = g.add(af, offset)?;
            g.neg_log_softmax_at(&[af, other], 0)
        };
        let params = [table, filters, bias, anchor];

        // skip configurations close to the cosine domain boundary
        {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.iter().map(|t| g.leaf(t.clone())).collect();
            if build(&mut g, &ids).is_err() {
                continue;
            }
        }
        assert_fd(build, &params, &format!("composite trial {trial}"));
    }
}
