use irt_core::analysis::kendall_tau;
use irt_core::ensemble::{ability_softmax_weights, vote, VoteInputs, VotingScheme};
use irt_core::io::{
    read_confidence_matrix, read_response_matrix, write_confidence_matrix, write_response_matrix, MatrixFormat,
};
use irt_core::irt::{icc_2pl, icc_3pl};
use irt_core::matrix::{ConfidenceMatrix, PredictionMatrix, ResponseMatrix};
use proptest::prelude::*;

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn response_matrix() -> impl Strategy<Value = ResponseMatrix> {
    (1usize..8, 1usize..12).prop_flat_map(|(n, m)| {
        proptest::collection::vec(0u8..2, n * m)
            .prop_map(move |cells| ResponseMatrix::new(ids("m", n), ids("i", m), cells).unwrap())
    })
}

fn distinct_values(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #[test]
    fn response_csv_round_trip(r in response_matrix(), tsv in any::<bool>()) {
        let format = if tsv { MatrixFormat::Tsv } else { MatrixFormat::Csv };
        let mut buf = Vec::new();
        write_response_matrix(&r, &mut buf, format).unwrap();
        prop_assert_eq!(read_response_matrix(buf.as_slice(), format).unwrap(), r);
    }

    #[test]
    fn confidence_csv_round_trip_is_exact(cells in proptest::collection::vec(0.0f64..=1.0, 12)) {
        let c = ConfidenceMatrix::new(ids("m", 3), ids("i", 4), cells).unwrap();
        let mut buf = Vec::new();
        write_confidence_matrix(&c, &mut buf, MatrixFormat::Csv).unwrap();
        prop_assert_eq!(read_confidence_matrix(buf.as_slice(), MatrixFormat::Csv).unwrap(), c);
    }

    #[test]
    fn transpose_is_an_involution(r in response_matrix()) {
        let t = r.transposed();
        prop_assert_eq!(t.n_models(), r.n_items());
        for i in 0..r.n_models() {
            for j in 0..r.n_items() {
                prop_assert_eq!(t.get(j, i), r.get(i, j));
            }
        }
        prop_assert_eq!(t.transposed(), r);
    }

    #[test]
    fn kendall_is_rank_based_and_antisymmetric(x in distinct_values(3..40), y in distinct_values(3..40)) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        if let Ok(t) = kendall_tau(x, y) {
            prop_assert!((-1.0..=1.0).contains(&t));
            // strictly increasing transform of x keeps every pair's order
            let ex: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 - 1.0).collect();
            prop_assert!((kendall_tau(&ex, y).unwrap() - t).abs() < 1e-12);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((kendall_tau(x, &neg).unwrap() + t).abs() < 1e-12);
            prop_assert!((kendall_tau(y, x).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_weights_ignore_a_common_shift(theta in distinct_values(1..20), shift in -50.0f64..50.0) {
        let w = ability_softmax_weights(&theta).unwrap();
        let shifted: Vec<f64> = theta.iter().map(|t| t + shift).collect();
        let ws = ability_softmax_weights(&shifted).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn guessing_only_lifts_the_curve(
        theta in -4.0f64..4.0,
        b in -4.0f64..4.0,
        gamma in 0.1f64..3.0,
        lambda in 0.0f64..1.0,
    ) {
        let p2 = icc_2pl(theta, b, gamma).unwrap();
        let p3 = icc_3pl(theta, b, gamma, lambda).unwrap();
        prop_assert!(p3 >= p2 - 1e-15 && p3 >= lambda - 1e-15 && p3 <= 1.0);
    }

    #[test]
    fn voting_is_equivariant_under_model_reordering(
        labels in proptest::collection::vec(0u8..4, 5 * 9),
        truth in proptest::collection::vec(0u8..4, 9),
        theta in proptest::collection::vec(-3.0f64..3.0, 5),
        order in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let pred = PredictionMatrix::new(
            ids("m", 5),
            ids("i", 9),
            labels.iter().map(|l| format!("c{l}")).collect(),
            truth.iter().map(|l| format!("c{l}")).collect(),
        )
        .unwrap();
        let permuted = pred.permute_models(&order).unwrap();
        let theta_p: Vec<f64> = order.iter().map(|&i| theta[i]).collect();
        for scheme in [VotingScheme::MajorityVote, VotingScheme::StrongestModel] {
            let a = vote(&pred, scheme, VoteInputs { abilities: Some(&theta), probabilities: None }).unwrap();
            let b = vote(&permuted, scheme, VoteInputs { abilities: Some(&theta_p), probabilities: None }).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
