use approx::assert_relative_eq;
use ecl::experiment::{decode, encode, Checkpoint};
use ecl::metrics::{
    combine_average, combine_hard_vote, combine_majority_vote, final_accuracy, forgetting, learning_accuracy,
    AccuracyMatrix, PredictionBatch,
};
use ecl::numkit::{MlpSpec, Purpose, SeededRng};
use ecl::trainers::Snapshot;
use ecl::weightspace::{convex_combine, init_ensemble, midpoint, sample_simplex, subspace_grad_distribute, SimplexPoint};
use proptest::prelude::*;

fn probs(n: usize, b: usize, k: usize, raw: &[f64]) -> Vec<f64> {
    raw[..n * b * k]
        .chunks(k)
        .flat_map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(move |v| v / s)
        })
        .collect()
}

fn lower_triangular() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..7).prop_flat_map(|t| {
        (1..=t)
            .map(|i| prop::collection::vec(0.0f64..=1.0, i))
            .collect::<Vec<_>>()
    })
}

proptest! {
    #[test]
    fn simplex_draws_are_valid(seed in any::<u64>(), n in 1usize..12) {
        let a = sample_simplex(n, &mut SeededRng::for_purpose(seed, Purpose::Test, 0));
        prop_assert_eq!(a.n(), n);
        prop_assert!(a.alpha().iter().all(|&v| v >= 0.0));
        prop_assert!((a.alpha().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn vertices_recover_members(seed in 0u64..1000, n in 1usize..5) {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let w = init_ensemble(&spec, n, 0.8, seed).unwrap();
        for i in 0..n {
            prop_assert_eq!(&convex_combine(&w, &SimplexPoint::vertex(n, i)).unwrap(), w.member(i));
        }
        let mid = convex_combine(&w, &SimplexPoint::uniform(n)).unwrap();
        prop_assert!(mid.max_abs_diff(&midpoint(&w)) <= 1e-12);
    }

    #[test]
    fn distributed_gradients_sum_back(seed in 0u64..1000, n in 1usize..6) {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let mut r = SeededRng::for_purpose(seed, Purpose::Test, 1);
        let g = spec.init_params(&mut r);
        let alpha = sample_simplex(n, &mut r);
        let parts = subspace_grad_distribute(&g, &alpha);
        for j in 0..g.len() {
            let total: f64 = parts.iter().map(|p| p.data()[j]).sum();
            assert_relative_eq!(total, g.data()[j], epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn combiners_ignore_row_scaling(
        n in 1usize..5, b in 1usize..6, k in 2usize..6,
        raw in prop::collection::vec(0.01f64..1.0, 150),
        scale in prop::collection::vec(0.1f64..10.0, 30),
    ) {
        let p = probs(n, b, k, &raw);
        let scaled: Vec<f64> = p
            .chunks(k)
            .zip(scale.iter().cycle())
            .flat_map(|(row, c)| {
                let s: f64 = row.iter().map(|v| v * c).sum();
                row.iter().map(move |v| v * c / s)
            })
            .collect();
        let (p, q) = (PredictionBatch::new(n, b, k, p).unwrap(), PredictionBatch::new(n, b, k, scaled).unwrap());
        prop_assert_eq!(combine_average(&p), combine_average(&q));
        prop_assert_eq!(combine_hard_vote(&p), combine_hard_vote(&q));
        prop_assert_eq!(combine_majority_vote(&p), combine_majority_vote(&q));
    }

    #[test]
    fn identical_members_make_combiners_agree(
        n in 1usize..5, b in 1usize..6, k in 2usize..6,
        raw in prop::collection::vec(0.01f64..1.0, 30),
    ) {
        let one = probs(1, b, k, &raw);
        let all: Vec<f64> = (0..n).flat_map(|_| one.iter().copied()).collect();
        let p = PredictionBatch::new(n, b, k, all).unwrap();
        let avg = combine_average(&p);
        prop_assert_eq!(&combine_hard_vote(&p), &avg);
        prop_assert_eq!(&combine_majority_vote(&p), &avg);
    }

    #[test]
    fn metrics_stay_in_range(rows in lower_triangular()) {
        let a = AccuracyMatrix::new(rows).unwrap();
        prop_assert!((0.0..=1.0).contains(&final_accuracy(&a)));
        prop_assert!((0.0..=1.0).contains(&learning_accuracy(&a)));
        prop_assert!((-1.0..=1.0).contains(&forgetting(&a)));
        if a.num_tasks() == 1 {
            prop_assert_eq!(forgetting(&a), 0.0);
        }
    }

    #[test]
    fn accuracy_csv_round_trips(rows in lower_triangular()) {
        let a = AccuracyMatrix::new(rows).unwrap();
        let back = AccuracyMatrix::read_csv(a.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), n in 1usize..4, task in 1usize..20, hidden in 1usize..6) {
        let spec = MlpSpec::new(3, vec![hidden], 2).unwrap();
        let w = init_ensemble(&spec, n, 1.0, seed).unwrap();
        let entries = w.members().iter().enumerate().map(|(i, m)| (format!("member{}", i + 1), m.clone())).collect();
        let ck = Checkpoint { n, snapshot: Snapshot { task, entries } };
        let bytes = encode(&ck);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.n, n);
        prop_assert_eq!(&back.snapshot, &ck.snapshot);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(seed in 0u64..100, cut in 1usize..64) {
        let spec = MlpSpec::new(3, vec![2], 2).unwrap();
        let w = init_ensemble(&spec, 2, 1.0, seed).unwrap();
        let ck = Checkpoint { n: 2, snapshot: Snapshot { task: 1, entries: vec![("mid".into(), midpoint(&w))] } };
        let bytes = encode(&ck);
        prop_assert!(decode(&bytes[..bytes.len() - cut.min(bytes.len())]).is_err());
    }
}
