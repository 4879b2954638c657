use std::collections::HashSet;

use fanonet_core::chain::{marginal_covariance, precision_matrix, ChainParams};
use fanonet_core::hypothesis::{enumerate_class, hypothesis_at, index_of, ClassParams, DEFAULT_BUDGET};
use nalgebra::SymmetricEigen;

#[test]
fn enumeration_counts_match_log_cardinality() {
    for p in 3..=6 {
        for d in 1..=3 {
            for r in 1..=3.min(p - 1) {
                let class = ClassParams::new(p, d, r).unwrap();
                let count = enumerate_class(class, DEFAULT_BUDGET).unwrap().count() as f64;
                assert_eq!(count, class.log_cardinality().exp().round(), "{class}");
            }
        }
    }
}

#[test]
fn smallest_classes_are_distinct_and_round_trip() {
    for (d, expected) in [(1, 16), (2, 32)] {
        let class = ClassParams::new(3, d, 2).unwrap();
        let all: Vec<_> = enumerate_class(class, DEFAULT_BUDGET).unwrap().collect();
        assert_eq!(all.len(), expected);
        let set: HashSet<String> = all.iter().map(|h| serde_json::to_string(h).unwrap()).collect();
        assert_eq!(set.len(), expected);
        for (k, h) in all.iter().enumerate() {
            assert_eq!(index_of(h).unwrap(), k as u128);
            assert_eq!(&hypothesis_at(class, k as u128).unwrap(), h);
        }
    }
}

#[test]
fn effective_norm_exhaustive() {
    for p in 3..=6 {
        for r in 1..p {
            let d = if p == 6 { 1 } else { 2 };
            let class = ClassParams::new(p, d, r).unwrap();
            let c2d = class.scale().powi(2 * d as i32);
            let tail = (-(r as f64)).exp2();
            for h in enumerate_class(class, DEFAULT_BUDGET).unwrap() {
                assert!((h.effective_vector().norm_squared() - (1.0 - tail + c2d * tail)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn precision_inverse_matches_recursion_exhaustively() {
    for (p, d, r) in [(4, 1, 2), (4, 2, 2), (5, 2, 2), (5, 3, 2), (3, 3, 1)] {
        let class = ClassParams::new(p, d, r).unwrap();
        for h in enumerate_class(class, DEFAULT_BUDGET).unwrap() {
            let params = ChainParams::from_hypothesis(&h, 1.0).unwrap();
            let prec = precision_matrix(&params);
            let full = prec.dense.clone().cholesky().expect("SPD").inverse();
            let o = prec.offsets[d];
            let block = full.view((o, o), (p, p)).into_owned();
            assert!((block - marginal_covariance(&params).unwrap()).norm() < 1e-9);
        }
    }
}

#[test]
fn covariance_eigenvalues_on_class() {
    for (p, d, r) in [(4, 1, 2), (4, 2, 2), (5, 2, 2), (5, 3, 2)] {
        let class = ClassParams::new(p, d, r).unwrap();
        let c2 = class.scale().powi(2);
        let s: f64 = (1..=d).map(|j| c2.powi(j as i32)).sum();
        let s2 = 2.0;
        let mut expected: Vec<f64> =
            (0..p).map(|i| if i < r { s2 * (d as f64 + 1.0) } else { s2 * (1.0 + s) }).collect();
        expected.sort_by(f64::total_cmp);
        for h in enumerate_class(class, DEFAULT_BUDGET).unwrap() {
            let cov = marginal_covariance(&ChainParams::from_hypothesis(&h, s2).unwrap()).unwrap();
            let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
