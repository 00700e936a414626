use super::*;
use crate::gridcraft::{self, GridConfig, GridGoals, GridPredicate, Item, NUM_ACTIONS};
use crate::pointmaze::{Dynamics, MazeSpec, PointState};
use rand::Rng;

fn grid_env() -> GridEnv {
    GridEnv::new(GridConfig { size: 8, t_max: 40, ..GridConfig::default() }, GridGoals::small()).unwrap()
}

fn random_actions(seed: u64) -> impl FnMut(&[f32], &[GoalId]) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    move |_, goals| Ok(goals.iter().map(|_| rng.random_range(0..NUM_ACTIONS)).collect())
}

#[test]
fn idle_policy_only_resets_at_time_limit() {
    let env = GridEnv::new(
        GridConfig { size: 8, t_max: 10, ..GridConfig::default() },
        GridGoals::from_predicates(vec![GridPredicate::Inventory { item: Item::Coal, count: 1 }]).unwrap(),
    )
    .unwrap();
    let mut tracker = SeenGoalTracker::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut lanes = Lanes::new(&env, 4, 7, CommandSampling::Uniform, &tracker, &mut rng).unwrap();
    // walking never collects anything
    let mut walk = |_: &[f32], g: &[GoalId]| -> Result<Vec<usize>> { Ok(vec![0; g.len()]) };
    let segs = collect(&env, &mut lanes, &mut walk, 25, &mut tracker, &mut rng).unwrap();
    assert_eq!(lanes.stats.world_resets, 4 * 2);
    assert_eq!(lanes.stats.commanded_hits, 0);
    for seg in &segs {
        for (t, tr) in seg.transitions.iter().enumerate() {
            assert_eq!(tr.reward_vec.rewards[0], 0.0);
            assert_eq!(tr.episode_done, t % 10 == 9);
        }
    }
}

/// Replays the same action stream by hand: stepping, rewards, goal
/// resampling and world resets.
#[test]
fn collect_matches_manual_bookkeeping() {
    let env = grid_env();
    let ng = env.num_goals();
    let lane_seed = 11;
    let mut tracker = SeenGoalTracker::new(ng);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lanes = Lanes::new(&env, 1, lane_seed, CommandSampling::Uniform, &tracker, &mut rng).unwrap();
    let mut policy = random_actions(9);
    let steps = 400;
    let segs = collect(&env, &mut lanes, &mut policy, steps, &mut tracker, &mut rng).unwrap();
    let seg = &segs[0];

    let mut oracle_rng = ChaCha8Rng::seed_from_u64(5);
    let mut actions = random_actions(9);
    let mut worlds = 1;
    let mut state = gridcraft::generate_world(mix_seed(lane_seed, worlds), &env.cfg).unwrap();
    let mut cmd = oracle_rng.random_range(0..ng);
    let mut hits = 0;
    for t in 0..steps {
        let tr = &seg.transitions[t];
        assert_eq!(tr.obs, gridcraft::observe(&state, 3));
        assert_eq!(tr.commanded, GoalId(cmd));
        let a = actions(&[], &[GoalId(0)]).unwrap()[0];
        assert_eq!(tr.action, a);
        let next = gridcraft::step(&state, gridcraft::Action::ALL[a]);
        let mask = gridcraft::achieved_goals(&next, &env.goals);
        assert_eq!(tr.achieved_mask, mask);
        assert_eq!(tr.next_obs, gridcraft::observe(&next, 3));
        for g in 0..ng {
            assert_eq!(tr.reward_vec.rewards[g] == 1.0, mask.get(g));
            assert_eq!(tr.reward_vec.dones[g], mask.get(g) || next.is_terminal());
        }
        if mask.get(cmd) || next.is_terminal() {
            hits += mask.get(cmd) as u64;
            cmd = oracle_rng.random_range(0..ng);
        }
        state = if next.is_terminal() {
            worlds += 1;
            gridcraft::generate_world(mix_seed(lane_seed, worlds), &env.cfg).unwrap()
        } else {
            next
        };
    }
    assert!(hits > 0, "random walk should hit some commanded goal");
    assert_eq!(lanes.stats.commanded_hits, hits);
    assert_eq!(seg.bootstrap_obs, gridcraft::observe(&state, 3));
}

#[test]
fn pseudo_termination_keeps_the_world() {
    let env = grid_env();
    let mut tracker = SeenGoalTracker::new(env.num_goals());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lanes = Lanes::new(&env, 8, 2, CommandSampling::Uniform, &tracker, &mut rng).unwrap();
    let segs = collect(&env, &mut lanes, &mut random_actions(4), 60, &mut tracker, &mut rng).unwrap();
    let mut boundaries = 0;
    for seg in &segs {
        for w in seg.transitions.windows(2) {
            if w[0].achieved_mask.get(w[0].commanded.index()) && !w[0].episode_done {
                boundaries += 1;
                assert_eq!(w[1].obs, w[0].next_obs);
            }
        }
    }
    assert!(boundaries > 0);
}

#[test]
fn tracker_is_the_fold_of_all_masks() {
    let env = grid_env();
    let ng = env.num_goals();
    let mut tracker = SeenGoalTracker::new(ng);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lanes = Lanes::new(&env, 6, 1, CommandSampling::SeenGoals, &tracker, &mut rng).unwrap();
    let mut policy = random_actions(1);
    let mut fold = GoalMask::new(ng);
    for _ in 0..3 {
        let segs = collect(&env, &mut lanes, &mut policy, 16, &mut tracker, &mut rng).unwrap();
        for tr in segs.iter().flat_map(|s| &s.transitions) {
            fold.or_assign(&tr.achieved_mask);
        }
        let seen: Vec<bool> = (0..ng).map(|g| fold.get(g)).collect();
        assert_eq!(tracker.seen(), &seen[..]);
    }
}

#[test]
fn collect_is_deterministic_and_bounded() {
    let env = grid_env();
    let run = || {
        let mut tracker = SeenGoalTracker::new(env.num_goals());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut lanes = Lanes::new(&env, 5, 3, CommandSampling::SeenGoals, &tracker, &mut rng).unwrap();
        let mut policy = random_actions(2);
        let mut all = Vec::new();
        for _ in 0..6 {
            all.extend(collect(&env, &mut lanes, &mut policy, 12, &mut tracker, &mut rng).unwrap());
        }
        (all, lanes.stats)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(sa.return_violations, 0);
    for seg in &a {
        for r in commanded_returns(seg) {
            assert!(r == 0.0 || r == 1.0);
        }
    }
}

#[test]
fn commanded_returns_split_on_dones_and_goal_changes() {
    let env = grid_env();
    let mut tracker = SeenGoalTracker::new(env.num_goals());
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut lanes = Lanes::new(&env, 1, 30, CommandSampling::Uniform, &tracker, &mut rng).unwrap();
    let seg = collect(&env, &mut lanes, &mut random_actions(30), 80, &mut tracker, &mut rng)
        .unwrap()
        .remove(0);
    let r = commanded_returns(&seg);
    let ones = r.iter().filter(|&&x| x == 1.0).count() as u64;
    assert_eq!(ones, lanes.stats.commanded_hits);
}

#[test]
fn evaluation_matches_monte_carlo_replay() {
    let env = grid_env();
    let goals = vec![GoalId(0), GoalId(9), GoalId(19)];
    let report = evaluate(&env, &mut random_actions(6), &goals, 5, 13, 4).unwrap();
    // oracle: same episode order, same action stream, sequential
    let mut actions = random_actions(6);
    let mut want = [0usize; 3];
    let jobs: Vec<(usize, usize)> = (0..3).flat_map(|gi| (0..5).map(move |k| (gi, k))).collect();
    for chunk in jobs.chunks(4) {
        let mut states: Vec<_> = chunk.iter().map(|&(_, k)| env.reset(mix_seed(13, k as u64)).unwrap()).collect();
        let mut live: Vec<usize> = (0..chunk.len()).collect();
        while !live.is_empty() {
            let acts = actions(&[], &vec![GoalId(0); live.len()]).unwrap();
            let mut still = Vec::new();
            for (&j, a) in live.iter().zip(acts) {
                let next = gridcraft::step(&states[j], gridcraft::Action::ALL[a]);
                if env.goals.goal_holds(&next, goals[chunk[j].0]).unwrap() {
                    want[chunk[j].0] += 1;
                } else if !next.is_terminal() {
                    states[j] = next;
                    still.push(j);
                }
            }
            live = still;
        }
    }
    for gi in 0..3 {
        assert_eq!(report.per_goal_success[gi], want[gi] as f64 / 5.0);
        assert_eq!(report.commanded_success[gi], report.per_goal_success[gi]);
    }
    let mean = report.per_goal_success.iter().sum::<f64>() / 3.0;
    assert!((report.mean_success - mean).abs() < 1e-12);
    assert_eq!(report.violations, 0);
}

#[test]
fn unreachable_goal_scores_zero() {
    let env = grid_env();
    // coal needs Do; this policy only walks
    let mut walk = |_: &[f32], g: &[GoalId]| -> Result<Vec<usize>> { Ok(g.iter().map(|x| x.index() % 4).collect()) };
    let report = evaluate(&env, &mut walk, &[GoalId(6)], 3, 0, 8).unwrap();
    assert_eq!(report.per_goal_success, vec![0.0]);
    assert!(evaluate(&env, &mut walk, &[GoalId(6)], 0, 0, 8).is_err());
    assert!(matches!(evaluate(&env, &mut walk, &[GoalId(99)], 1, 0, 8), Err(Error::UnknownGoal(_))));
}

fn point_env() -> PointEnv {
    PointEnv::new(MazeSpec::umaze(), Dynamics::default(), 0.5, 0.1).unwrap()
}

#[test]
fn point_env_goals_and_targets() {
    let env = point_env();
    assert_eq!(env.num_goals(), 234);
    assert!(env.adequate());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for g in (0..env.num_goals()).step_by(7) {
        let t = env.eval_target(GoalId(g), &mut rng);
        let c = env.grid.center(GoalId(g));
        assert!((t.target[0] - c.0).abs() <= 0.25 && (t.target[1] - c.1).abs() <= 0.25);
        assert!(env.spec.is_goal_location(t.target));
    }
    let s = PointState { pos: [0.25, 0.25], vel: [0.0; 2], step_count: 0 };
    let mut m = GoalMask::new(0);
    env.achieved_into(&s, &mut m);
    assert_eq!(m.ones().collect::<Vec<_>>(), vec![0]);
    let (cont, q) = env.sample_goal(&mut rng).unwrap();
    assert!(env.spec.is_goal_location(cont.target));
    assert!(q.index() < env.num_goals());
}

#[test]
fn point_quantized_success_implies_continuous() {
    let env = point_env();
    // a policy that heads for the commanded cell center
    let centers: Vec<(f64, f64)> = env.grid.centers().to_vec();
    let mut seek = |obs: &[f32], goals: &[GoalId]| -> Result<Vec<[f32; 2]>> {
        Ok(goals
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let o = &obs[i * 4..i * 4 + 4];
                let c = centers[g.index()];
                let (dx, dy) = (c.0 / 8.0 - o[0] as f64, c.1 / 8.0 - o[1] as f64);
                let k = 40.0;
                [(k * dx - 3.0 * o[2] as f64) as f32, (k * dy - 3.0 * o[3] as f64) as f32]
            })
            .collect())
    };
    let goals: Vec<GoalId> = (0..env.num_goals()).map(GoalId).collect();
    let report = evaluate(&env, &mut seek, &goals, 2, 4, 64).unwrap();
    assert_eq!(report.violations, 0);
    assert!(report.commanded_success.iter().sum::<f64>() > 0.0);
    for (c, p) in report.commanded_success.iter().zip(&report.per_goal_success) {
        assert!(c <= p);
    }
}
