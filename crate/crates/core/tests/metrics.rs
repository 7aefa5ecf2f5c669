use deepcars::metrics::{
    accuracy, format_accuracy, plot_svg, RunMetrics, ValidationRecord, WINDOW_EPISODES,
};
use proptest::prelude::*;

fn metrics_strategy() -> impl Strategy<Value = RunMetrics> {
    (
        prop::collection::vec((prop::bool::ANY, 0.0f64..1.0), 0..400),
        prop::collection::vec(
            (
                -200.0f64..200.0,
                prop::option::of(0.0f64..100.0),
                any::<bool>(),
            ),
            0..20,
        ),
        0u64..100_000,
        0u64..1_000,
    )
        .prop_map(|(steps, vals, passed, collided)| {
            let mut m = RunMetrics::new();
            let mut episode = 0;
            let mut total = 0.0;
            for (i, (crash, eps)) in steps.into_iter().enumerate() {
                let step = i as u64 + 1;
                let reward = if crash { -1.0 } else { 1.0 };
                m.record_step(step, episode, reward, eps);
                total += reward;
                if crash {
                    m.end_episode(total, step);
                    episode += 1;
                    total = 0.0;
                }
            }
            for (i, (mean_reward, accuracy, is_new_best)) in vals.into_iter().enumerate() {
                m.validations.push(ValidationRecord {
                    step: (i as u64 + 1) * 2000,
                    mean_reward,
                    accuracy,
                    is_new_best,
                });
            }
            m.passed = passed;
            m.collided = collided;
            m
        })
}

proptest! {
    #[test]
    fn csv_round_trip(m in metrics_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        m.write_csv(dir.path()).unwrap();
        let back = RunMetrics::read_csv(dir.path()).unwrap();
        prop_assert!(m.same_records(&back));
        let again = tempfile::tempdir().unwrap();
        back.write_csv(again.path()).unwrap();
        for f in ["steps.csv", "windows.csv", "validation.csv", "counters.csv"] {
            prop_assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn windows_average_disjoint_blocks(rewards in prop::collection::vec(-50.0f64..200.0, 0..450)) {
        let mut m = RunMetrics::new();
        for (i, r) in rewards.iter().enumerate() {
            m.end_episode(*r, i as u64);
        }
        prop_assert_eq!(m.windows.len(), rewards.len() / WINDOW_EPISODES);
        prop_assert_eq!(m.completed_episodes(), rewards.len());
        for (k, w) in m.windows.iter().enumerate() {
            let block = &rewards[k * WINDOW_EPISODES..(k + 1) * WINDOW_EPISODES];
            let mean = block.iter().sum::<f64>() / WINDOW_EPISODES as f64;
            prop_assert!((w.mean_reward - mean).abs() < 1e-9);
            prop_assert_eq!(w.window, k as u64);
        }
    }
}

#[test]
fn accuracy_definition() {
    assert_eq!(accuracy(0, 0), None);
    assert_eq!(accuracy(10, 0), Some(100.0));
    assert_eq!(accuracy(0, 3), Some(0.0));
    assert!((accuracy(9914, 86).unwrap() - 99.14).abs() < 1e-9);
    assert_eq!(format_accuracy(None), "n/a (no cars encountered)");
}

#[test]
fn corrupt_rows_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    RunMetrics::new().write_csv(dir.path()).unwrap();
    std::fs::write(
        dir.path().join("windows.csv"),
        "window,mean_reward\n0,1.5\n1,abc\n",
    )
    .unwrap();
    let err = RunMetrics::read_csv(dir.path()).unwrap_err().to_string();
    assert!(err.contains("windows.csv:3"), "{err}");
}

#[test]
fn svg_has_fixed_canvas_and_one_path_per_series() {
    let a: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
    let b: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 100.0 - i as f64)).collect();
    let svg = plot_svg(&[a.clone(), b], &["DQN", "DDQN"], "mean reward").unwrap();
    assert!(svg.starts_with("<?xml") && svg.contains("<svg "));
    assert!(svg.contains("width=\"960\"") && svg.contains("height=\"540\""));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(
        svg.matches("<polyline").count() + svg.matches("<path").count(),
        2
    );
    assert!(svg.find("DQN").unwrap() < svg.find("DDQN").unwrap());
    assert_eq!(
        svg,
        plot_svg(
            &[
                a.clone(),
                (0..5).map(|i| (i as f64, 100.0 - i as f64)).collect()
            ],
            &["DQN", "DDQN"],
            "mean reward"
        )
        .unwrap()
    );
    assert!(plot_svg(&[a], &["x", "y"], "r").is_err());
    assert!(plot_svg(&[], &[], "r").is_err());
}
