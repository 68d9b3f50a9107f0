mod common;

use common::{rel_err, scalar_fuse};
use ndarray::{array, concatenate, Array2, Axis};
use proptest::prelude::*;
use style3d::attn::*;

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn tensor(a: Array2<f64>, kind: FeatureKind) -> FeatureTensor {
    FeatureTensor::anonymous(a, kind).unwrap()
}

fn cfg(beta: Beta, lambda: f64) -> AttnConfig {
    AttnConfig::builder().beta(beta).lambda(lambda).build().unwrap()
}

fn fuse(qc: &Array2<f64>, qp: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, c: &AttnConfig) -> Array2<f64> {
    fuse_attention_arrays(qc.view(), qp.view(), k.view(), v.view(), c, 0).unwrap()
}

#[test]
fn worked_example_matches_the_scalar_oracle() {
    let qc = array![[1.0, 0.0]];
    let qp = array![[0.0, 1.0]];
    let k = array![[1.0, 0.0], [0.0, 1.0]];
    let v = array![[1.0, 2.0], [3.0, 4.0]];
    let c = cfg(Beta::new(0.5, 0.5).unwrap(), 1.0);
    let out = fuse_attention(
        &tensor(qc.clone(), FeatureKind::Query),
        &tensor(qp.clone(), FeatureKind::QueryPreserve),
        &tensor(k.clone(), FeatureKind::Key),
        &tensor(v.clone(), FeatureKind::Value),
        &c,
        0,
    )
    .unwrap();
    // the blended query scores both keys equally
    assert_eq!(out.data(), &array![[2.0, 3.0]]);
    let o = scalar_fuse(&rows(&qc), &rows(&qp), &rows(&k), &rows(&v), (0.5, 0.5), 1.0);
    assert_eq!(o, vec![vec![2.0, 3.0]]);
}

fn mat(n: usize, d: usize, scale: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-scale..scale, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
}

/// `(q_c, q_c_p, k_s, v_s)` with ≤ 8 tokens and dims ≤ 8.
fn instance() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>)> {
    (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8)
        .prop_flat_map(|(n, m, d, dv)| (mat(n, d, 2.0), mat(n, d, 2.0), mat(m, d, 2.0), mat(m, dv, 2.0)))
}

fn beta() -> impl Strategy<Value = Beta> {
    (0.0f64..=1.0).prop_map(|c| Beta::from_content(c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fused_attention_matches_the_scalar_oracle((qc, qp, k, v) in instance(), b in beta(), l in 0.05f64..4.0) {
        let out = fuse(&qc, &qp, &k, &v, &cfg(b, l));
        let o = scalar_fuse(&rows(&qc), &rows(&qp), &rows(&k), &rows(&v), (b.content(), b.preserve()), l);
        prop_assert_eq!(out.dim(), (qc.nrows(), v.ncols()));
        for (i, row) in o.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                prop_assert!(rel_err(out[[i, j]], *x) < 1e-6);
            }
        }
    }

    #[test]
    fn weights_are_row_stochastic((qc, qp, k, _v) in instance(), b in beta(), l in 0.05f64..20.0) {
        let w = fused_weights(qc.view(), qp.view(), k.view(), b, l).unwrap();
        for row in w.outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn constant_logit_shift_leaves_weights_unchanged((q, _qp, k, _v) in instance(), shift in -50.0f64..50.0, s in 0.1f64..3.0) {
        // an extra query column `shift/s` against an all-ones key column adds `shift` to every logit of the row
        let qx = concatenate![Axis(1), q, Array2::from_elem((q.nrows(), 1), shift / s)];
        let kx = concatenate![Axis(1), k, Array2::ones((k.nrows(), 1))];
        let a = attention_weights(q.view(), k.view(), s).unwrap();
        let b = attention_weights(qx.view(), kx.view(), s).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn output_is_linear_in_values(
        (qc, qp, k, v1) in instance(), seed in any::<u64>(), a in -3.0f64..3.0, c in -3.0f64..3.0, b in beta()
    ) {
        let mut r = style3d::nn::rng(seed);
        let v2 = style3d::nn::gaussian_matrix(&mut r, v1.nrows(), v1.ncols(), 1.0);
        let conf = cfg(b, 1.5);
        let mixed = &v1 * a + &v2 * c;
        let lhs = fuse(&qc, &qp, &k, &mixed, &conf);
        let rhs = fuse(&qc, &qp, &k, &v1, &conf) * a + fuse(&qc, &qp, &k, &v2, &conf) * c;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            prop_assert!(rel_err(*x, *y) < 1e-6);
        }
    }

    #[test]
    fn beta_endpoints_ignore_the_other_query((qc, qp, k, v) in instance(), seed in any::<u64>(), l in 0.1f64..3.0) {
        let mut r = style3d::nn::rng(seed);
        let noise = style3d::nn::gaussian_matrix(&mut r, qc.nrows(), qc.ncols(), 5.0);
        let content_only = cfg(Beta::new(1.0, 0.0).unwrap(), l);
        prop_assert_eq!(fuse(&qc, &qp, &k, &v, &content_only), fuse(&qc, &(&qp + &noise), &k, &v, &content_only));
        let preserve_only = cfg(Beta::new(0.0, 1.0).unwrap(), l);
        prop_assert_eq!(fuse(&qc, &qp, &k, &v, &preserve_only), fuse(&(&qc + &noise), &qp, &k, &v, &preserve_only));
    }

    #[test]
    fn larger_lambda_never_raises_row_entropy((qc, qp, k, _v) in instance(), b in beta(), l1 in 0.05f64..5.0, dl in 0.0f64..5.0) {
        let e1 = row_entropy(fused_weights(qc.view(), qp.view(), k.view(), b, l1).unwrap().view());
        let e2 = row_entropy(fused_weights(qc.view(), qp.view(), k.view(), b, l1 + dl).unwrap().view());
        for (a, c) in e1.iter().zip(&e2) {
            prop_assert!(*c <= a + 1e-9, "{} -> {}", a, c);
        }
    }
}
