use proptest::prelude::*;
use qsearch::datasets::random_dissimilarities;
use qsearch::formats;
use qsearch::projection::{canonical_exact, project, verify_q_triangle};
use qsearch::qcore::{dissimilarity, q_path_length, q_triangle_violation};
use qsearch::vptree::Pruning;
use qsearch::{
    Dataset, DenseData, DissimilarityKind, DistanceMatrix, Point, ProjectionConfig, QExponent, SparseSet, VantagePolicy,
    VpTree,
};

fn exponent() -> impl Strategy<Value = QExponent> {
    prop_oneof![
        (1.0f64..8.0).prop_map(|q| QExponent::finite(q).unwrap()),
        Just(QExponent::Infinity),
    ]
}

fn points(max_n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 2..max_n)
}

fn brute(n: usize, k: usize, dist: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut all: Vec<f64> = (0..n).map(dist).collect();
    all.sort_by(f64::total_cmp);
    all.truncate(k);
    all
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn path_length_shrinks_as_q_grows(
        edges in prop::collection::vec(0.0f64..10.0, 1..8),
        q1 in 1.0f64..6.0,
        dq in 0.0f64..6.0,
    ) {
        let lo = QExponent::finite(q1).unwrap();
        let hi = QExponent::finite(q1 + dq).unwrap();
        let a = q_path_length(&edges, lo).unwrap();
        let b = q_path_length(&edges, hi).unwrap();
        let c = q_path_length(&edges, QExponent::Infinity).unwrap();
        let max = edges.iter().copied().fold(0.0, f64::max);
        let sum: f64 = edges.iter().sum();
        prop_assert!(b <= a * (1.0 + 1e-12));
        prop_assert!(c <= b * (1.0 + 1e-12));
        prop_assert_eq!(c, max);
        prop_assert!(a <= sum * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn combine_is_a_commutative_monoid(q in exponent(), a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
        prop_assert_eq!(q.combine(a, b), q.combine(b, a));
        prop_assert_eq!(q.combine(a, 0.0), a);
        let left = q.combine(q.combine(a, b), c);
        let right = q.combine(a, q.combine(b, c));
        prop_assert!((left - right).abs() <= 1e-12 * left.max(1.0));
        prop_assert!(q.combine(a, b) >= a.max(b));
    }

    #[test]
    fn dense_dissimilarities_are_symmetric_and_nonnegative(pts in points(3, 5)) {
        for kind in [
            DissimilarityKind::Euclidean,
            DissimilarityKind::Manhattan,
            DissimilarityKind::Cosine,
            DissimilarityKind::Correlation,
        ] {
            let ab = dissimilarity(Point::Dense(&pts[0]), Point::Dense(&pts[1]), kind);
            let ba = dissimilarity(Point::Dense(&pts[1]), Point::Dense(&pts[0]), kind);
            match (ab, ba) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x, y);
                    prop_assert!(x >= 0.0);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric failure for {}", kind),
            }
        }
    }

    #[test]
    fn jaccard_is_a_bounded_symmetric_metric(
        a in prop::collection::vec(0u32..40, 1..15),
        b in prop::collection::vec(0u32..40, 1..15),
        c in prop::collection::vec(0u32..40, 1..15),
    ) {
        let (a, b, c) = (SparseSet::from_unsorted(a), SparseSet::from_unsorted(b), SparseSet::from_unsorted(c));
        let j = |x: &SparseSet, y: &SparseSet| {
            dissimilarity(Point::Sparse(x), Point::Sparse(y), DissimilarityKind::Jaccard).unwrap()
        };
        prop_assert_eq!(j(&a, &b), j(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j(&a, &b)));
        prop_assert!(j(&a, &c) <= j(&a, &b) + j(&b, &c) + 1e-12);
    }

    #[test]
    fn exact_projection_is_a_dominated_idempotent_q_metric(n in 3usize..14, seed in any::<u64>(), q in exponent()) {
        let d = random_dissimilarities(n, seed);
        let p = canonical_exact(&d, q).unwrap();
        prop_assert!(verify_q_triangle(p.matrix(), q, 1e-9).is_empty());
        for i in 0..n {
            prop_assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(p.get(i, j) <= d.get(i, j));
                prop_assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
        let again = canonical_exact(p.matrix(), q).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((again.get(i, j) - p.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn approximate_projection_sits_between_exact_and_input(
        n in 5usize..14,
        seed in any::<u64>(),
        q in exponent(),
        knn in 1usize..5,
        iters in 1usize..4,
    ) {
        let d = random_dissimilarities(n, seed);
        let exact = canonical_exact(&d, q).unwrap();
        let approx = project(&d, &ProjectionConfig::approximate(q, knn, iters)).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!(approx.get(i, j) <= d.get(i, j));
                prop_assert!(approx.get(i, j) >= exact.get(i, j) * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn extended_space_is_a_q_metric(
        n in 3usize..12,
        seed in any::<u64>(),
        q in exponent(),
        query in prop::collection::vec(0.01f64..1.0, 12),
    ) {
        let p = canonical_exact(&random_dissimilarities(n, seed), q).unwrap();
        let ext = p.query_extension();
        let space = ext.space(&query[..n]).unwrap();
        // Index n stands for the query.
        let dist = |i: usize, j: usize| match (i == n, j == n) {
            (true, true) => 0.0,
            (true, false) => space.query_distance(j),
            (false, true) => space.query_distance(i),
            (false, false) => space.distance(i, j),
        };
        for i in 0..=n {
            for j in 0..=n {
                prop_assert_eq!(dist(i, j), dist(j, i));
                for k in 0..=n {
                    let v = q_triangle_violation(dist(i, j), dist(i, k), dist(k, j), q);
                    prop_assert!(v <= 1e-9, "({}, {}, {}) violates by {}", i, j, k, v);
                }
            }
        }
    }

    #[test]
    fn tree_search_matches_brute_force_on_a_q_metric(
        n in 2usize..40,
        seed in any::<u64>(),
        q in exponent(),
        k in 1usize..6,
        query in prop::collection::vec(0.01f64..1.0, 40),
        policy in prop_oneof![Just(VantagePolicy::Random), Just(VantagePolicy::First)],
    ) {
        let p = canonical_exact(&random_dissimilarities(n, seed), q).unwrap();
        let ext = p.query_extension();
        let space = ext.space(&query[..n]).unwrap();
        let ids: Vec<usize> = (0..n).collect();
        let tree = VpTree::build(&ids, |i, j| space.distance(i, j), q, seed, policy).unwrap();
        let k = k.min(n);
        let truth = brute(n, k, |i| space.query_distance(i));

        let pruned = tree.search_knn(|i| space.query_distance(i), k).unwrap();
        prop_assert_eq!(pruned.distances(), truth.clone());
        let full = tree.search_knn_with(|i| space.query_distance(i), k, Pruning::Off).unwrap();
        prop_assert_eq!(full.distances(), truth);
        prop_assert_eq!(full.comparisons, n);
        prop_assert!(pruned.comparisons <= n);
    }

    #[test]
    fn euclidean_tree_search_is_exact_at_q_one(pts in points(60, 3), k in 1usize..5, query in prop::collection::vec(-5.0f64..5.0, 3)) {
        let d = |a: &[f64], b: &[f64]| {
            dissimilarity(Point::Dense(a), Point::Dense(b), DissimilarityKind::Euclidean).unwrap()
        };
        let ids: Vec<usize> = (0..pts.len()).collect();
        let tree = VpTree::build(&ids, |i, j| d(&pts[i], &pts[j]), QExponent::ONE, 1, VantagePolicy::Random).unwrap();
        let k = k.min(pts.len());
        let out = tree.search_knn(|i| d(&pts[i], &query), k).unwrap();
        prop_assert_eq!(out.distances(), brute(pts.len(), k, |i| d(&pts[i], &query)));
    }

    #[test]
    fn dense_and_sparse_formats_round_trip(pts in points(20, 4), sets in prop::collection::vec(prop::collection::vec(0u32..1000, 0..10), 1..20)) {
        // Vectors are stored as f32.
        let pts: Vec<Vec<f64>> = pts.iter().map(|r| r.iter().map(|&v| v as f32 as f64).collect()).collect();
        let dense = Dataset::Dense(DenseData::from_rows(&pts).unwrap());
        let bytes = formats::encode_dataset(&dense).unwrap();
        prop_assert_eq!(formats::decode_dataset(&bytes).unwrap(), dense);

        let sparse = Dataset::Sparse(sets.into_iter().map(SparseSet::from_unsorted).collect());
        let bytes = formats::encode_dataset(&sparse).unwrap();
        prop_assert_eq!(formats::decode_dataset(&bytes).unwrap(), sparse);
    }

    #[test]
    fn matrix_format_round_trips(n in 1usize..12, seed in any::<u64>(), q in prop::option::of(exponent())) {
        let d = random_dissimilarities(n, seed);
        let bytes = formats::encode_matrix(&d, q).unwrap();
        let back = formats::decode_matrix(&bytes).unwrap();
        prop_assert_eq!(back.q, q);
        prop_assert_eq!(back.matrix, d.clone());
        let truncated = &bytes[..bytes.len() - 1];
        prop_assert!(formats::decode_matrix(truncated).is_err());
    }

    #[test]
    fn matrix_rejects_asymmetry(n in 2usize..6, seed in any::<u64>(), bump in 0.01f64..1.0) {
        let d = random_dissimilarities(n, seed);
        let mut entries: Vec<f64> = (0..n).flat_map(|i| d.row(i).to_vec()).collect();
        entries[1] += bump;
        prop_assert!(DistanceMatrix::new(n, entries).is_err());
    }
}
