use ecl::metrics::{forgetting, Combiner};
use ecl::numkit::{cross_entropy, mlp_logits, MlpSpec, Purpose, SeededRng};
use ecl::tasks::{make_synthetic_stream, stack_examples, ReplayBuffer, ReplayPolicy, SyntheticSpec, TaskStream};
use ecl::trainers::{
    connectivity_loss, train, train_batch_ensemble, train_multitask, train_single, train_subspace,
    train_subspace_connectivity, train_subspace_er, train_vanilla_ensemble, Method, TrainConfig,
};
use ecl::weightspace::{
    convex_combine, init_ensemble, midpoint, sample_simplex, EnsembleWeights, FastInit, SimplexPoint,
};
use ecl::Error;

fn stream(tasks: usize, drift: f64, per_class: usize) -> TaskStream {
    make_synthetic_stream(
        &SyntheticSpec {
            tasks,
            classes: 3,
            dims: 4,
            train_per_class: per_class,
            test_per_class: 20,
            cluster_spread: 0.3,
            drift_deg: drift,
        },
        7,
    )
    .unwrap()
}

fn spec() -> MlpSpec {
    MlpSpec::new(4, vec![8], 3).unwrap()
}

fn cfg(n: usize) -> TrainConfig {
    TrainConfig {
        n_models: n,
        lr_decay_per_task: 1.0,
        connect_steps: 10,
        ..TrainConfig::default()
    }
}

fn bitwise_same(a: &ecl::trainers::RunRecord, b: &ecl::trainers::RunRecord, la: &str, lb: &str) {
    assert_eq!(a.accuracy, b.accuracy);
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(sa.get(la).unwrap().data(), sb.get(lb).unwrap().data());
    }
}

#[test]
fn one_task_gives_one_by_one_matrix() {
    let s = stream(1, 0.0, 20);
    let rec = train_single(&s, &cfg(1), &spec()).unwrap();
    assert_eq!(rec.accuracy.rows().len(), 1);
    assert_eq!(rec.accuracy.rows()[0].len(), 1);
    assert_eq!(forgetting(&rec.accuracy), 0.0);
}

#[test]
fn no_drift_keeps_first_task_accuracy() {
    let s = stream(3, 0.0, 60);
    let rec = train_single(&s, &cfg(1), &spec()).unwrap();
    let a = &rec.accuracy;
    assert!((a.get(2, 0).unwrap() - a.get(0, 0).unwrap()).abs() <= 0.02, "{:?}", a.rows());
}

#[test]
fn rows_grow_by_one_entry_per_task() {
    let s = stream(3, 30.0, 10);
    for m in [Method::Single, Method::Subspace, Method::BatchEnsemble, Method::SubspaceConnectivity] {
        let rec = train(m, &s, &cfg(2), &spec(), Combiner::Average).unwrap();
        assert!(rec.accuracy.is_lower_triangular());
        for (i, r) in rec.accuracy.rows().iter().enumerate() {
            assert_eq!(r.len(), i + 1);
        }
    }
}

#[test]
fn single_member_ensemble_is_single_model() {
    let s = stream(2, 45.0, 15);
    let single = train_single(&s, &cfg(1), &spec()).unwrap();
    let ve = train_vanilla_ensemble(&s, &cfg(1), &spec(), Combiner::Average).unwrap();
    bitwise_same(&single, &ve, "model", "member1");
}

#[test]
fn identical_members_vote_like_one() {
    let s = stream(2, 45.0, 15);
    let c = TrainConfig { sigma_init: 0.0, ..cfg(3) };
    let ve = train_vanilla_ensemble(&s, &c, &spec(), Combiner::Average).unwrap();
    let members = ve.member_accuracy.as_ref().unwrap();
    assert_eq!(members.len(), 3);
    for m in members {
        assert_eq!(m, &ve.accuracy);
    }
}

#[test]
fn single_member_subspace_is_single_model() {
    let s = stream(2, 45.0, 15);
    let single = train_single(&s, &cfg(1), &spec()).unwrap();
    let se = train_subspace(&s, &cfg(1), &spec()).unwrap();
    bitwise_same(&single, &se, "model", "mid");
}

#[test]
fn one_subspace_step_moves_mix_by_alpha_norm() {
    let s = stream(1, 0.0, 4);
    let sp = spec();
    let c = TrainConfig { batch_size: 12, ..cfg(3) };
    let w0 = init_ensemble(&sp, 3, c.sigma_init, c.seed).unwrap();
    let alpha = sample_simplex(3, &mut SeededRng::for_purpose(c.seed, Purpose::Simplex, 0));
    let mixed0 = convex_combine(&w0, &alpha).unwrap();
    let (x, y) = stack_examples(&s.tasks[0].train);
    let (_, g) = {
        let (logits, cache) = ecl::numkit::mlp_forward(&sp, &mixed0, &x, ecl::numkit::Mode::Eval).unwrap();
        let (l, gl) = cross_entropy(&logits, &y).unwrap();
        (l, ecl::numkit::mlp_backward(&sp, &cache, &gl).unwrap())
    };
    let rec = train_subspace(&s, &c, &sp).unwrap();
    let snap = &rec.snapshots[0];
    let w1 = EnsembleWeights::new((1..=3).map(|i| snap.get(&format!("member{i}")).unwrap().clone()).collect()).unwrap();
    let mixed1 = convex_combine(&w1, &alpha).unwrap();
    let a2: f64 = alpha.alpha().iter().map(|a| a * a).sum();
    let mut expect = mixed0.clone();
    expect.axpy(-c.lr0 * a2, &g).unwrap();
    assert!(mixed1.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn single_member_batch_ensemble_with_frozen_identity_is_single_model() {
    let s = stream(2, 45.0, 15);
    let c = TrainConfig {
        be_fast_init: FastInit::Identity,
        be_train_fast: false,
        ..cfg(1)
    };
    let single = train_single(&s, &c, &spec()).unwrap();
    let be = train_batch_ensemble(&s, &c, &spec()).unwrap();
    assert_eq!(single.accuracy, be.accuracy);
    for (a, b) in single.snapshots.iter().zip(&be.snapshots) {
        assert!(a.get("model").unwrap().max_abs_diff(b.get("member1").unwrap()) < 1e-10);
    }
}

#[test]
fn replay_matches_subspace_on_first_task() {
    let s = stream(2, 45.0, 15);
    let se = train_subspace(&s, &cfg(3), &spec()).unwrap();
    let er = train_subspace_er(&s, &cfg(3), &spec()).unwrap();
    assert_eq!(se.snapshots[0], er.snapshots[0]);
    assert_ne!(se.snapshots[1], er.snapshots[1]);
}

#[test]
fn buffer_holds_m_b_per_class_and_task() {
    let s = stream(3, 30.0, 15);
    let mut buf = ReplayBuffer::new(2, ReplayPolicy::First, SeededRng::for_purpose(0, Purpose::Replay, 1));
    for (ti, task) in s.tasks.iter().enumerate() {
        for ex in &task.train {
            buf.insert(ex.clone());
        }
        for t in 1..=ti + 1 {
            for c in 0..3 {
                assert_eq!(buf.items_for(t, c).len(), 2);
            }
        }
        assert_eq!(buf.len(), 2 * 3 * (ti + 1));
    }
}

#[test]
fn connectivity_on_one_task_is_subspace() {
    let s = stream(1, 0.0, 15);
    let se = train_subspace(&s, &cfg(3), &spec()).unwrap();
    let sc = train_subspace_connectivity(&s, &cfg(3), &spec()).unwrap();
    assert_eq!(se.accuracy, sc.accuracy);
    for i in 1..=3 {
        let l = format!("member{i}");
        assert_eq!(se.snapshots[0].get(&l), sc.snapshots[0].get(&l));
    }
    assert_eq!(se.snapshots[0].get("mid"), sc.snapshots[0].get("hat_mid"));
}

#[test]
fn connectivity_keeps_both_solutions() {
    let s = stream(3, 30.0, 10);
    let sc = train_subspace_connectivity(&s, &cfg(2), &spec()).unwrap();
    for snap in &sc.snapshots {
        for l in ["hat_member1", "hat_member2", "hat_mid", "member1", "member2", "mid"] {
            assert!(snap.get(l).is_some(), "{l} missing at task {}", snap.task);
        }
    }
    assert_ne!(sc.snapshots[1].get("mid"), sc.snapshots[1].get("hat_mid"));
}

#[test]
fn anchor_term_evaluates_previous_midpoint() {
    let s = stream(2, 30.0, 10);
    let sp = spec();
    let sc = train_subspace_connectivity(&s.truncated(1), &cfg(1), &sp).unwrap();
    let prev = sc.snapshots[0].get("mid").unwrap().clone();
    let hat = init_ensemble(&sp, 1, 1.0, 3).unwrap();
    let (px, py) = stack_examples(&s.tasks[0].train[..6]);
    let cur = stack_examples(&s.tasks[1].train[..6]);
    let alpha = SimplexPoint::new(vec![0.0, 1.0]).unwrap();
    let cl = connectivity_loss(&sp, &hat, &alpha, &prev, &midpoint(&hat), &[(px.clone(), py.clone())], &cur).unwrap();
    let (direct, _) = cross_entropy(&mlp_logits(&sp, &prev, &px).unwrap(), &py).unwrap();
    assert!((cl.loss_previous - direct).abs() <= 1e-12);
    assert!(cl.member_grads[0].norm() == 0.0);
}

#[test]
fn connectivity_rejects_wrong_simplex_size() {
    let sp = spec();
    let w = init_ensemble(&sp, 2, 1.0, 0).unwrap();
    let s = stream(1, 0.0, 2);
    let b = stack_examples(&s.tasks[0].train);
    let err = connectivity_loss(&sp, &w, &SimplexPoint::uniform(2), w.member(0), w.member(1), &[], &b);
    assert!(matches!(err, Err(Error::Input(_))));
}

#[test]
fn multitask_has_zero_forgetting_and_reduces_to_single() {
    let s = stream(3, 30.0, 10);
    let mt = train_multitask(&s, &cfg(1), &spec()).unwrap();
    assert_eq!(mt.accuracy.rows().len(), 1);
    assert_eq!(forgetting(&mt.accuracy), 0.0);
    let one = s.truncated(1);
    bitwise_same(&train_single(&one, &cfg(1), &spec()).unwrap(), &train_multitask(&one, &cfg(1), &spec()).unwrap(), "model", "model");
}

#[test]
fn every_method_is_deterministic() {
    let s = stream(2, 30.0, 10);
    for m in Method::ALL {
        let a = train(m, &s, &cfg(2), &spec(), Combiner::Average).unwrap();
        let b = train(m, &s, &cfg(2), &spec(), Combiner::Average).unwrap();
        assert_eq!(a.accuracy, b.accuracy, "{}", m.name());
        assert_eq!(a.snapshots, b.snapshots, "{}", m.name());
    }
}

#[test]
fn member_one_does_not_depend_on_ensemble_size() {
    let sp = spec();
    let a = init_ensemble(&sp, 2, 1.0, 5).unwrap();
    let b = init_ensemble(&sp, 5, 1.0, 5).unwrap();
    assert_eq!(a.member(0), b.member(0));
    assert_eq!(a.member(1), b.member(1));
}

#[test]
fn mismatched_model_is_a_config_error() {
    let s = stream(1, 0.0, 2);
    let bad = MlpSpec::new(5, vec![8], 3).unwrap();
    assert!(matches!(train(Method::Single, &s, &cfg(1), &bad, Combiner::Average), Err(Error::Config(_))));
}

#[test]
fn divergence_is_reported_as_numeric_error() {
    let s = stream(1, 0.0, 20);
    let c = TrainConfig { lr0: 1e200, ..cfg(1) };
    assert!(matches!(train_single(&s, &c, &spec()), Err(Error::Numeric(_))));
}
