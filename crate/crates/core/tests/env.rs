mod common;

use deepcars::env::{parse_ascii, render_ascii, spawn_row};
use deepcars::{Action, DeepCars, EnvConfig, EnvState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Straight-line re-statement of one step without spawning: move, shift
/// every row down, count what fell off, test the ego cell.
fn oracle_step(state: &EnvState, action: Action) -> (Vec<Vec<bool>>, usize, u64, bool) {
    let rows = state.grid.rows();
    let lanes = state.grid.lanes();
    let lane = match action {
        Action::Left => state.ego_lane.saturating_sub(1),
        Action::Stay => state.ego_lane,
        Action::Right => (state.ego_lane + 1).min(lanes - 1),
    };
    let old: Vec<Vec<bool>> = (0..rows)
        .map(|r| (0..lanes).map(|l| state.grid.get(r, l)).collect())
        .collect();
    let passed = old[rows - 1].iter().filter(|&&c| c).count() as u64;
    let mut new = vec![vec![false; lanes]; rows];
    new[1..rows].clone_from_slice(&old[0..rows - 1]);
    let collided = new[rows - 1][lane];
    (new, lane, passed, collided)
}

fn config(lanes: usize, rows: usize) -> EnvConfig {
    EnvConfig {
        lanes,
        rows,
        spawn_interval: 3,
        occupancy_prob: 0.4,
        max_episode_steps: 200,
        seed: 0,
    }
}

fn action_strategy() -> impl Strategy<Value = Action> {
    (0usize..3).prop_map(|c| Action::from_code(c).unwrap())
}

#[test]
fn swerving_right_dodges_the_car_about_to_arrive() {
    let cfg = EnvConfig::default();
    let ego_row = cfg.ego_row();
    let state = common::state_with(&cfg, &[(ego_row - 1, 2)], 2);
    let mut env = DeepCars::from_state(cfg.clone(), state.clone(), 1).unwrap();
    let out = env.step(Action::Right).unwrap();

    let (grid, lane, passed, collided) = oracle_step(&state, Action::Right);
    assert_eq!(lane, 3);
    assert!(!collided);
    assert_eq!(passed, 0);
    assert!(grid[ego_row][2]);
    assert_eq!(out.next_state.ego_lane, 3);
    assert!(out.next_state.grid.get(ego_row, 2));
    assert_eq!(out.reward, 1.0);
    assert!(!out.terminal);

    let mut env = DeepCars::from_state(cfg, state, 1).unwrap();
    let out = env.step(Action::Stay).unwrap();
    assert!(out.collided);
    assert_eq!(out.reward, -1.0);
    assert!(out.terminal);
}

proptest! {
    #[test]
    fn step_matches_oracle(
        seed in any::<u64>(),
        lanes in 2usize..8,
        rows in 3usize..10,
        density in 0.0f64..0.7,
        action in action_strategy(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = common::random_state(&mut rng, rows, lanes, density);
        let cfg = config(lanes, rows);
        let mut env = DeepCars::from_state(cfg, state.clone(), seed).unwrap();
        let out = env.step(action).unwrap();
        let (grid, lane, passed, collided) = oracle_step(&state, action);

        prop_assert_eq!(out.next_state.ego_lane, lane);
        prop_assert_eq!(out.cars_passed_this_step, passed);
        prop_assert_eq!(out.collided, collided);
        // Row 0 only changes when a spawn is due; step 1 with interval 3 is not.
        for (r, row) in grid.iter().enumerate() {
            for (l, &c) in row.iter().enumerate() {
                prop_assert_eq!(out.next_state.grid.get(r, l), c);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), actions in prop::collection::vec(action_strategy(), 1..300)) {
        let cfg = EnvConfig::default();
        let mut a = DeepCars::reset_with(cfg.clone(), seed).unwrap();
        let mut b = DeepCars::reset_with(cfg, seed).unwrap();
        for act in actions {
            let oa = a.step(act).unwrap();
            let ob = b.step(act).unwrap();
            prop_assert_eq!(&oa, &ob);
            if oa.terminal {
                break;
            }
        }
    }

    #[test]
    fn cars_are_conserved_and_rewards_are_binary(
        seed in any::<u64>(),
        lanes in 2usize..7,
        p in 0.0f64..1.0,
        actions in prop::collection::vec(action_strategy(), 1..400),
    ) {
        let cfg = EnvConfig { lanes, occupancy_prob: p, ..EnvConfig::default() };
        let mut env = DeepCars::reset_with(cfg.clone(), seed).unwrap();
        for act in actions {
            let before = env.state().ego_lane;
            let out = env.step(act).unwrap();
            let s = &out.next_state;
            prop_assert_eq!(s.spawned_count, s.passed_count + s.grid.car_count() as u64);
            prop_assert!(out.reward == 1.0 || out.reward == -1.0);
            prop_assert_eq!(out.reward < 0.0, out.collided);
            prop_assert_eq!(out.terminal, out.collided || s.step_count >= cfg.max_episode_steps);
            prop_assert!(s.ego_lane < lanes);
            prop_assert!(s.ego_lane.abs_diff(before) <= 1);
            if out.terminal {
                prop_assert!(env.step(Action::Stay).is_err());
                break;
            }
        }
    }

    #[test]
    fn spawned_rows_leave_a_reachable_gap(
        seed in any::<u64>(),
        lanes in 2usize..10,
        reach in 1usize..4,
        p in 0.0f64..1.0,
        mask in prop::collection::vec(any::<bool>(), 10),
    ) {
        let cfg = EnvConfig { lanes, spawn_interval: reach, occupancy_prob: p, ..EnvConfig::default() };
        let previous: Vec<usize> = (0..lanes).filter(|&l| mask[l]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let row = spawn_row(&mut rng, &cfg, &previous);
        prop_assert_eq!(row.len(), lanes);
        prop_assert!(row.iter().any(|&c| !c));
        for &q in &previous {
            prop_assert!((0..lanes).any(|l| !row[l] && l.abs_diff(q) <= reach), "lane {} stranded in {:?}", q, row);
        }
    }

    #[test]
    fn ascii_round_trip(seed in any::<u64>(), lanes in 1usize..9, rows in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_state(&mut rng, rows, lanes, 0.4);
        let text = render_ascii(&s);
        prop_assert_eq!(text.lines().count(), rows);
        prop_assert_eq!(parse_ascii(&text).unwrap(), s);
    }
}

#[test]
fn edges_clamp() {
    let cfg = EnvConfig::default();
    let mut env = DeepCars::from_state(cfg.clone(), common::state_with(&cfg, &[], 0), 0).unwrap();
    assert_eq!(env.step(Action::Left).unwrap().next_state.ego_lane, 0);
    let last = cfg.lanes - 1;
    let mut env =
        DeepCars::from_state(cfg.clone(), common::state_with(&cfg, &[], last), 0).unwrap();
    assert_eq!(env.step(Action::Right).unwrap().next_state.ego_lane, last);
}

#[test]
fn mismatched_state_is_rejected() {
    let cfg = EnvConfig::default();
    let narrow = common::state_with(&config(3, 8), &[], 1);
    assert!(DeepCars::from_state(cfg, narrow, 0).is_err());
}
