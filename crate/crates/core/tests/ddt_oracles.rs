use ibhc_core::ddt::{self, marginal_leaf_loglik, posterior_internal_values, sample_attach_location, simulate_prior_tree, DdtParams};
use ibhc_core::sampler::gibbs_internal_values;
use ibhc_core::{Shape, Tree};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Leaf log density from the dense covariance `sigma2 * t(lca(i, j))`.
fn dense_loglik(tree: &Tree, data: &[Vec<f64>], sigma2: f64) -> f64 {
    let leaves: Vec<usize> = tree.leaves().collect();
    let n = leaves.len();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            sigma2
        } else {
            sigma2 * tree.time(tree.lca(leaves[i], leaves[j]).unwrap())
        }
    });
    let chol = cov.cholesky().expect("positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let d = data[leaves[0]].len();
    (0..d)
        .map(|k| {
            let x = DVector::from_iterator(n, leaves.iter().map(|&l| data[l][k]));
            let sol = chol.solve(&x);
            -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + x.dot(&sol))
        })
        .sum()
}

fn random_data(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect()
}

#[test]
fn message_passing_matches_dense_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..60 {
        let n = 1 + trial % 8;
        let d = 1 + trial % 3;
        let sigma2 = 0.5 + rng.random::<f64>();
        let params = DdtParams::new(sigma2, 1.0, d).unwrap();
        let tree = simulate_prior_tree(n, d, &params, &mut rng).unwrap();
        let data = random_data(n, d, &mut rng);
        let a = marginal_leaf_loglik(&tree, &data, &params).unwrap();
        let b = dense_loglik(&tree, &data, sigma2);
        assert!(((a - b) / b).abs() <= 1e-8, "trial {trial}: {a} vs {b}");
    }
}

fn reversed(shape: Shape) -> Shape {
    match shape {
        Shape::Leaf(_) => shape,
        Shape::Node(kids) => Shape::Node(kids.into_iter().rev().map(reversed).collect()),
    }
}

#[test]
fn marginal_ignores_child_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = DdtParams::new(1.0, 1.0, 2).unwrap();
    for n in 2..9 {
        let t = simulate_prior_tree(n, 2, &params, &mut rng).unwrap();
        let a = Tree::from_shape(t.to_shape()).unwrap();
        let b = Tree::from_shape(reversed(t.to_shape())).unwrap();
        let data = random_data(n, 2, &mut rng);
        let la = marginal_leaf_loglik(&a, &data, &params).unwrap();
        let lb = marginal_leaf_loglik(&b, &data, &params).unwrap();
        assert!((la - lb).abs() < 1e-10);
    }
}

#[test]
fn gibbs_means_match_exact_posterior_means() {
    let params = DdtParams::new(1.0, 1.0, 1).unwrap();
    let data = vec![vec![-1.0], vec![-0.6], vec![0.9], vec![1.4], vec![0.2]];
    let shape = Tree::from_shape((((0, 1), 4), (2, 3))).unwrap();
    let mut tree = shape.with_values(&data).unwrap();
    let exact = posterior_internal_values(&tree, &data, &params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (batches, per_batch) = (50, 800);
    let mut batch_means = vec![vec![0.0; batches]; exact.len()];
    for _ in 0..200 {
        gibbs_internal_values(&mut tree, &params, &mut rng).unwrap();
    }
    for b in 0..batches {
        for _ in 0..per_batch {
            gibbs_internal_values(&mut tree, &params, &mut rng).unwrap();
            for (i, (id, _, _)) in exact.iter().enumerate() {
                batch_means[i][b] += tree.value(*id)[0] / per_batch as f64;
            }
        }
    }
    for (i, (_, mean, _)) in exact.iter().enumerate() {
        let bm = &batch_means[i];
        let m = bm.iter().sum::<f64>() / batches as f64;
        let var = bm.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (batches - 1) as f64;
        let se = (var / batches as f64).sqrt();
        assert!((m - mean[0]).abs() < 3.0 * se + 1e-3, "node {i}: {m} vs {} (se {se})", mean[0]);
    }
}

#[test]
fn single_branch_divergence_time_follows_hazard() {
    let params = DdtParams::new(1.0, 1.0, 1).unwrap();
    let tree = Tree::from_shape((0, 1)).unwrap().induce(&[0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let mut times: Vec<f64> = (0..n).map(|_| sample_attach_location(&tree, &params, None, &mut rng).unwrap().time).collect();
    times.sort_by(f64::total_cmp);
    let ks = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = 1.0 - (-params.cumulative_hazard(t).unwrap()).exp();
            (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "ks {ks}");
}

#[test]
fn walk_splits_by_leaf_count() {
    let params = DdtParams::new(1.0, 1.0, 1).unwrap();
    let tree = Tree::from_shape(((0, 1), 2)).unwrap();
    let pair = tree.lca(0, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut below, mut left) = (0usize, 0usize);
    for _ in 0..100_000 {
        let loc = sample_attach_location(&tree, &params, None, &mut rng).unwrap();
        if loc.parent == tree.stem() {
            continue;
        }
        below += 1;
        if loc.child == pair || tree.is_ancestor_or_self(pair, loc.child) {
            left += 1;
        }
    }
    let p = left as f64 / below as f64;
    let sd = (2.0 / 9.0 / below as f64).sqrt();
    assert!((p - 2.0 / 3.0).abs() < 2.0 * sd, "{p}");
}

#[test]
fn attach_density_integrates_to_one() {
    // sum over branches of the integral of the walk density along each
    let params = DdtParams::new(1.0, 1.3, 1).unwrap();
    let tree = Tree::from_shape((((0, 1), 2), (3, 4))).unwrap();
    let mut total = 0.0;
    for child in tree.preorder() {
        let parent = tree.parent(child).unwrap();
        let (lo, hi) = (tree.time(parent), tree.time(child));
        let g = 20_000;
        for k in 0..g {
            // t = hi - (hi - lo)(1 - u)^2 removes the leaf-edge singularity
            let u = (k as f64 + 0.5) / g as f64;
            let t = hi - (hi - lo) * (1.0 - u) * (1.0 - u);
            let jac = 2.0 * (hi - lo) * (1.0 - u) / g as f64;
            let loc = ddt::AttachLocation { parent, child, time: t };
            total += ddt::attach_log_density(&tree, &params, &loc).unwrap().exp() * jac;
        }
    }
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}
