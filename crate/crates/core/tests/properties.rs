use laguna_core::benchmark::random_orthogonal;
use laguna_core::data::{subsample_target, Dataset};
use laguna_core::losses::volume_regularizer_var;
use laguna_core::numeric::{cholesky_logdet, softmax_rows, JitterPolicy};
use laguna_core::relative::{
    classify_by_relative, reference_affinities, rel, relative_matrix, AnchorSet, RelativeEncoding,
};
use laguna_core::supervisor::PseudoLabelTable;
use laguna_core::{Matrix, Tape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

/// Rows with norm at least 0.1, so cosine is well defined.
fn nonzero_rows(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
    matrix(rows, cols).prop_filter("rows need a direction", |m| {
        m.iter_rows().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 0.01)
    })
}

fn spd(n: usize) -> impl Strategy<Value = Matrix<f64>> {
    matrix(n, n).prop_map(move |b| b.matmul(&b.transpose()).unwrap().add(&Matrix::identity(n).scale(0.3)).unwrap())
}

fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    if m.len() == 1 {
        return m[0][0];
    }
    (0..m.len())
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|r| r.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, &v)| v).collect())
                .collect();
            (if j % 2 == 0 { 1.0 } else { -1.0 }) * m[0][j] * cofactor_det(&minor)
        })
        .sum()
}

fn small_dataset(n_target: usize) -> Dataset<f64> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = laguna_core::benchmark::SynthConfig {
        n_classes: 3,
        feature_dim: 4,
        anchor_dim: 3,
        caption_dim: 3,
        samples_per_class_per_domain: n_target.div_ceil(3),
        ..Default::default()
    };
    let manifest = laguna_core::benchmark::generate(&cfg, dir.path()).unwrap();
    laguna_core::data::load_manifest(&manifest).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_encoding_is_rotation_invariant(q in nonzero_rows(4, 5), a in nonzero_rows(3, 5), seed in any::<u64>()) {
        let rot = random_orthogonal(5, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = relative_matrix(&q, &a).unwrap();
        let rr = relative_matrix(&q.matmul(&rot).unwrap(), &a.matmul(&rot).unwrap()).unwrap();
        prop_assert!(r.sub(&rr).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn relative_encoding_is_bounded_and_matches_naive_cosine(q in nonzero_rows(4, 5), a in nonzero_rows(3, 5)) {
        let r = relative_matrix(&q, &a).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let (x, y) = (q.row(i), a.row(j));
                let dot: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
                let nx = x.iter().map(|u| u * u).sum::<f64>().sqrt();
                let ny = y.iter().map(|u| u * u).sum::<f64>().sqrt();
                prop_assert!((-1.0..=1.0).contains(&r.get(i, j)));
                prop_assert!((r.get(i, j) - dot / (nx * ny)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinities_have_unit_diagonal_and_symmetry(a in nonzero_rows(4, 6)) {
        let g = reference_affinities(&AnchorSet::reference(a).unwrap()).unwrap();
        for i in 0..4 {
            prop_assert_eq!(g.get(i, i), 1.0);
            for j in 0..4 {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
    }

    #[test]
    fn predicted_class_ignores_anchor_rescaling(v in nonzero_rows(1, 5), a in nonzero_rows(4, 5),
                                                  scales in prop::collection::vec(0.01f64..100.0, 4)) {
        let scaled = Matrix::from_fn(4, 5, |i, j| a.get(i, j) * scales[i]);
        let label = |m: Matrix<f64>| {
            let r = rel(v.row(0), &AnchorSet::reference(m).unwrap()).unwrap();
            classify_by_relative(&r, 1.0).unwrap().1
        };
        let r = rel(v.row(0), &AnchorSet::reference(a.clone()).unwrap()).unwrap();
        // ties between near-equal cosines may legitimately break either way
        let mut sorted = r.values().to_vec();
        sorted.sort_by(|x, y| y.total_cmp(x));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(label(a), label(scaled));
    }

    #[test]
    fn logdet_matches_cofactor_determinant(m in (1usize..=6).prop_flat_map(spd)) {
        let rows: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
        let want = cofactor_det(&rows).ln();
        let got = cholesky_logdet(&m, &JitterPolicy::fixed(0.0)).unwrap().value;
        prop_assert!((got - want).abs() < 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shifts(x in matrix(3, 5), shift in -50.0f64..50.0, t in 0.1f64..5.0) {
        let p = softmax_rows(&x, t).unwrap();
        for r in p.iter_rows() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax_rows(&x.map(|v| v + shift), t).unwrap();
        prop_assert!(p.sub(&shifted).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn volume_regularizer_is_finite_and_nonnegative(s in matrix(3, 5), t in matrix(3, 5), ld_ref in -10.0f64..10.0) {
        let tape = Tape::new();
        let (vs, vt) = (tape.leaf(s), tape.leaf(t));
        let gs = vs.matmul(vs.transpose().unwrap()).unwrap();
        let gt = vt.matmul(vt.transpose().unwrap()).unwrap();
        // near-singular Grams may exhaust the jitter ladder, which is an error, never a NaN
        if let Ok(loss) = volume_regularizer_var(gs, gt, ld_ref, &JitterPolicy::escalating()) {
            prop_assert!(loss.item().is_finite() && loss.item() >= 0.0);
        }
    }

    #[test]
    fn pseudo_labels_are_the_argmax_of_their_encoding(z in nonzero_rows(6, 4), a in nonzero_rows(3, 4)) {
        let reference = AnchorSet::reference(a).unwrap();
        let table = PseudoLabelTable::from_embeddings(&[0, 1, 2, 3, 4, 5], &z, &reference).unwrap();
        for row in table.rows() {
            let enc: &RelativeEncoding<f64> = &row.r;
            let best = enc.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(enc.values()[row.label], best);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn subsampling_is_nested_and_full_ratio_is_identity(lo in 0.05f64..1.0, hi in 0.05f64..1.0, seed in any::<u64>()) {
        let d = small_dataset(30);
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let small: Vec<usize> = subsample_target(&d, lo, seed).unwrap().target_samples.iter().map(|s| s.index).collect();
        let large: Vec<usize> = subsample_target(&d, hi, seed).unwrap().target_samples.iter().map(|s| s.index).collect();
        prop_assert!(small.iter().all(|i| large.contains(i)));
        let full = subsample_target(&d, 1.0, seed).unwrap();
        prop_assert_eq!(full.target_samples, d.target_samples);
    }
}
