use std::fs;

use super::*;
use crate::Error;

fn tiny(method: Method, env: EnvKind) -> RunConfig {
    let mut cfg = RunConfig {
        method,
        env,
        total_steps: 512,
        eval_every: 256,
        eval_episodes: 2,
        seed: 3,
        ..RunConfig::default()
    };
    cfg.train.hidden = vec![16, 16];
    cfg.train.num_lanes = 8;
    cfg.train.num_steps = 16;
    cfg.train.minibatch_size = 32;
    cfg.train.num_epochs = 1;
    cfg
}

#[test]
fn config_json_round_trip() {
    let cfg = tiny(Method::DualLeoPpo, EnvKind::GridcraftSmall);
    let back = RunConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(cfg, back);
}

#[test]
fn overrides_reach_nested_fields() {
    let cfg = RunConfig::load(
        None,
        &[
            "train.lr=0.001".into(),
            "method=uvfa_pqn".into(),
            "train.hidden.1=7".into(),
            r#"goal_subsample={"k":3}"#.into(),
        ],
    )
    .unwrap();
    assert_eq!(cfg.train.lr, 1e-3);
    assert_eq!(cfg.method, Method::UvfaPqn);
    assert_eq!(cfg.train.hidden[1], 7);
    assert_eq!(cfg.goal_subsample.unwrap().k, 3);
}

#[test]
fn bad_overrides_name_the_field() {
    match RunConfig::load(None, &["train.bogus=1".into()]) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "bogus"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(RunConfig::load(None, &["noequals".into()]), Err(Error::Config { .. })));
    assert!(matches!(RunConfig::load(None, &["train.hidden.9=1".into()]), Err(Error::Config { .. })));
}

#[test]
fn continuous_method_and_env_must_agree() {
    for (m, e) in [
        (Method::LeoDpg, EnvKind::GridcraftSmall),
        (Method::Leo, EnvKind::Pointmaze),
        (Method::Ppo, EnvKind::Pointmaze),
    ] {
        match tiny(m, e).validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "method"),
            other => panic!("{m:?}/{e:?}: {other:?}"),
        }
    }
    tiny(Method::LeoDpg, EnvKind::Pointmaze).validate().unwrap();
}

#[test]
fn subsample_keeps_required_goals() {
    let mut cfg = tiny(Method::Leo, EnvKind::GridcraftSmall);
    let all = grid_env(&cfg).unwrap().goals.set().len();
    let name = grid_env(&cfg).unwrap().goals.set().name(crate::goalspace::GoalId(all - 1)).to_string();
    cfg.goal_subsample = Some(GoalSubsample {
        k: 3,
        must_include: vec![name.clone()],
    });
    let t = Trainer::new(cfg).unwrap();
    assert_eq!(t.num_goals(), 3);
    assert!(t.names.contains(&name));
}

#[test]
fn training_is_reproducible_byte_for_byte() {
    for method in [Method::Leo, Method::UvfaPqnHer, Method::DualLeoPqn, Method::Ppo, Method::DualLeoPpo] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            Trainer::new(tiny(method, EnvKind::GridcraftSmall))
                .unwrap()
                .train(Some(d.path()), |_, _| Ok(()))
                .unwrap();
        }
        let read = |i: usize| fs::read(dirs[i].path().join("metrics.jsonl")).unwrap();
        assert_eq!(read(0), read(1), "{method:?}");
        assert_eq!(String::from_utf8(read(0)).unwrap().lines().count(), 2);
        for f in ["config.json", "summary.csv", "final_eval.csv"] {
            assert!(dirs[0].path().join(f).exists(), "{f}");
        }
    }
}

#[test]
fn continuous_training_runs_and_respects_return_bound() {
    let mut cfg = tiny(Method::LeoDpg, EnvKind::Pointmaze);
    cfg.total_steps = 256;
    let mut t = Trainer::new(cfg).unwrap();
    let recs = t.train(None, |_, _| Ok(())).unwrap();
    assert!(recs.last().unwrap().losses.contains_key("critic_loss"));
    assert_eq!(t.return_violations, 0);
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    let cfg = tiny(Method::DualLeoPqn, EnvKind::GridcraftSmall);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.train(None, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save_checkpoint(dir.path()).unwrap();
    let before = t.evaluate(Component::Acting, &[], 2).unwrap();
    let mut fresh = Trainer::new(cfg).unwrap();
    fresh.load_checkpoint(dir.path()).unwrap();
    let after = fresh.evaluate(Component::Acting, &[], 2).unwrap();
    assert_eq!(before.per_goal_success, after.per_goal_success);
}

#[test]
fn checkpoint_mismatches_are_descriptive() {
    let cfg = tiny(Method::Leo, EnvKind::GridcraftSmall);
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(cfg.clone()).unwrap().save_checkpoint(dir.path()).unwrap();

    let mut wide = cfg.clone();
    wide.train.hidden = vec![32, 16];
    match Trainer::new(wide).unwrap().load_checkpoint(dir.path()) {
        Err(Error::Checkpoint { message, .. }) => assert!(message.contains("shape mismatch"), "{message}"),
        other => panic!("{other:?}"),
    }
    let mut dual = cfg;
    dual.method = Method::DualLeoPqn;
    match Trainer::new(dual).unwrap().load_checkpoint(dir.path()) {
        Err(Error::Checkpoint { message, .. }) => assert!(message.contains("missing") || message.contains("saved by method leo"), "{message}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn eval_rows_are_sorted_and_unknown_goals_rejected() {
    let cfg = tiny(Method::Leo, EnvKind::GridcraftSmall);
    let s = eval_checkpoint(&cfg, None, None, 2).unwrap();
    assert_eq!(s.rows.len(), Trainer::new(cfg.clone()).unwrap().num_goals());
    assert!(s.rows.windows(2).all(|w| w[0].success >= w[1].success));
    assert!(s.table().contains("mean"));
    let one = eval_checkpoint(&cfg, None, Some(&s.rows[0].goal), 2).unwrap();
    assert_eq!(one.rows.len(), 1);
    assert!(matches!(eval_checkpoint(&cfg, None, Some("no_such_goal"), 1), Err(Error::UnknownGoal(_))));
}

#[test]
fn goal_listing_covers_both_families() {
    let g = list_goals(&tiny(Method::Leo, EnvKind::GridcraftSmall)).unwrap();
    assert!(g.lines().count() > 2);
    let p = list_goals(&tiny(Method::LeoDpg, EnvKind::Pointmaze)).unwrap();
    assert!(p.contains("cell0_"));
}

#[test]
fn bench_emits_one_row_per_cell() {
    let cfg = BenchConfig {
        goal_counts: vec![1, 4],
        steps: 64,
        width: 16,
        minibatch_size: 16,
        num_lanes: 4,
        num_steps: 4,
        ..BenchConfig::default()
    };
    let rows = run_bench(&cfg).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.sps > 0.0));
    let csv = bench_csv(&rows);
    assert!(csv.starts_with("goal_count,method,sps\n"));
    assert_eq!(csv.lines().count(), 7);
    let upd = run_bench(&BenchConfig { update_only: true, ..cfg }).unwrap();
    assert_eq!(upd.len(), 6);
}

#[test]
fn every_loss_passes_gradcheck() {
    for seed in 0..4 {
        let res = gradcheck_suite(None, seed).unwrap();
        assert_eq!(res.len(), 10);
        for r in &res {
            assert!(r.passed(), "seed {seed}: {} rel err {}", r.loss, r.max_rel_error);
        }
    }
    let leo = gradcheck_suite(Some(Method::Leo), 11).unwrap();
    let names: Vec<_> = leo.iter().map(|r| r.loss.as_str()).collect();
    assert_eq!(names, ["quadratic", "leo_q", "leo_q_masked"]);
}
