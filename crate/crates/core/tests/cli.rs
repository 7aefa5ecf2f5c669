use std::fs;
use std::path::Path;
use std::process::Command;

use deepcars::cli::{resolve_dqn, run_with_output};

fn run(args: &[&str]) -> (i32, String) {
    let mut argv = vec!["deepcars"];
    argv.extend_from_slice(args);
    let mut out = Vec::new();
    let code = run_with_output(&argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_deepcars"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const QUICK_DQN: &[&str] = &[
    "--steps",
    "1000",
    "--hidden",
    "8",
    "--learn-start",
    "100",
    "--fast-val-period",
    "250",
    "--fast-val-episodes",
    "3",
    "--deep-val-period",
    "500",
    "--deep-val-episodes",
    "4",
];

#[test]
fn empty_hidden_entry_is_a_usage_error() {
    let out = bin(&["train-dqn", "--hidden", "16,,16", "--steps", "10"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("16,,16"), "{stderr}");
}

#[test]
fn unknown_subcommand_and_conflicting_flags() {
    assert_eq!(bin(&["fly"]).status.code(), Some(2));
    assert_eq!(
        bin(&["train-dqn", "--hidden", "8", "--arch", "deep"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bin(&["train-dqn", "--arch", "huge"]).status.code(), Some(2));
}

#[test]
fn flags_beat_file_beats_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# overrides\nlanes=4\nrows=6\ngamma=0.8\nbatch_size=16\n",
    )
    .unwrap();
    let (env, hp) = resolve_dqn(&[
        "deepcars",
        "train-dqn",
        "--config",
        p(&cfg),
        "--lanes",
        "3",
        "--batch-size",
        "64",
    ])
    .unwrap();
    assert_eq!(env.lanes, 3);
    assert_eq!(env.rows, 6);
    assert_eq!(env.spawn_interval, 3);
    assert_eq!(hp.gamma, 0.8);
    assert_eq!(hp.batch_size, 64);
    assert_eq!(hp.target_sync_period, 1000);

    let (_, hp) = resolve_dqn(&["deepcars", "train-dqn", "--arch", "ddqn16"]).unwrap();
    assert_eq!(hp.hidden, vec![16]);
    assert!(hp.double_q);

    fs::write(&cfg, "lanes=4\nwheels=3\n").unwrap();
    let (code, _) = run(&["train-tabular", "--config", p(&cfg), "--steps", "10"]);
    assert_eq!(code, 2);
    let (code, _) = run(&["train-tabular", "--config", p(&dir.path().join("none.cfg"))]);
    assert_eq!(code, 2);
}

#[test]
fn train_dqn_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train-dqn", "--out", p(&out), "--seed", "4", "--double-q"];
    args.extend_from_slice(QUICK_DQN);
    let (code, stdout) = run(&args);
    assert_eq!(code, 0, "{stdout}");
    for f in [
        "config.resolved",
        "final_model.txt",
        "best_model.txt",
        "best_model.txt.meta",
        "steps.csv",
        "windows.csv",
        "validation.csv",
        "counters.csv",
    ] {
        let path = out.join(f);
        assert!(path.is_file(), "missing {f}");
        assert!(stdout.contains(p(&path)), "{f} not listed in:\n{stdout}");
    }
    let meta = fs::read_to_string(out.join("best_model.txt.meta")).unwrap();
    for key in [
        "training_step=",
        "mean_validation_reward=",
        "double_q=true",
        "hidden=8",
        "lanes=5",
    ] {
        assert!(meta.contains(key), "{key} missing from\n{meta}");
    }
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(
        resolved.contains("seed=4") && resolved.contains("train_steps=1000"),
        "{resolved}"
    );
    let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 1001);
    let validation = fs::read_to_string(out.join("validation.csv")).unwrap();
    assert_eq!(validation.lines().count(), 5);
}

#[test]
fn evaluate_and_demo_a_tabular_agent() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("tab");
    let (code, _) = run(&[
        "train-tabular",
        "--out",
        p(&train),
        "--lanes",
        "3",
        "--steps",
        "20000",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 0);
    let table = train.join("qtable.txt");
    assert!(table.is_file() && train.join("windows.svg").is_file());

    let eval = dir.path().join("eval");
    let (code, stdout) = run(&[
        "evaluate",
        "--model",
        p(&table),
        "--lanes",
        "3",
        "--steps",
        "5000",
        "--out",
        p(&eval),
    ]);
    assert_eq!(code, 0);
    let line = stdout.lines().next().unwrap();
    assert!(
        line.starts_with("accuracy: ") && line.ends_with("over 5000 steps"),
        "{line}"
    );
    assert!(eval.join("evaluation").join("steps.csv").is_file());

    // A 3-lane table cannot drive the 5-lane default road.
    let (code, _) = run(&[
        "evaluate",
        "--model",
        p(&table),
        "--steps",
        "10",
        "--out",
        p(&eval),
    ]);
    assert_eq!(code, 2);

    let demo = |seed: &str| {
        run(&[
            "demo",
            "--model",
            p(&table),
            "--lanes",
            "3",
            "--episodes",
            "2",
            "--seed",
            seed,
            "--out",
            p(&eval),
        ])
    };
    let (code, first) = demo("5");
    assert_eq!(code, 0);
    assert_eq!(first, demo("5").1);
    assert!(first.starts_with("episode 1\n"));
    assert!(first.contains("step 1: action="));
    assert!(first.contains("episode 2 reward: "));
    assert_ne!(first, demo("6").1);
}

#[test]
fn evaluate_rejects_bad_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train-dqn", "--out", p(&out)];
    args.extend_from_slice(QUICK_DQN);
    assert_eq!(run(&args).0, 0);

    let model = out.join("final_model.txt");
    let text = fs::read_to_string(&model).unwrap();
    let future = dir.path().join("future.txt");
    fs::write(
        &future,
        text.replacen("deepcars-mlp 1", "deepcars-mlp 9", 1),
    )
    .unwrap();
    let res = bin(&[
        "evaluate",
        "--model",
        p(&future),
        "--steps",
        "10",
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("version mismatch"));

    let missing = dir.path().join("nope.txt");
    assert_eq!(
        run(&["evaluate", "--model", p(&missing), "--out", p(&out)]).0,
        2
    );
    assert_eq!(
        run(&[
            "evaluate",
            "--model",
            p(&model),
            "--steps",
            "0",
            "--out",
            p(&out)
        ])
        .0,
        2
    );
    // The default network expects the 5x8 observation.
    assert_eq!(
        run(&[
            "evaluate",
            "--model",
            p(&model),
            "--rows",
            "6",
            "--steps",
            "10",
            "--out",
            p(&out)
        ])
        .0,
        2
    );
    let (code, stdout) = run(&[
        "evaluate",
        "--model",
        p(&model),
        "--steps",
        "300",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("over 300 steps"));
}

#[test]
fn plot_combines_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "window,mean_reward\n0,10\n1,20\n").unwrap();
    fs::write(&b, "window,mean_reward\n0,5\n1,50\n2,60\n").unwrap();
    let out = dir.path().join("plots");
    let (code, _) = run(&[
        "plot",
        p(&a),
        p(&b),
        "--labels",
        "DQN,DDQN",
        "--out",
        p(&out),
        "--name",
        "cmp.svg",
    ]);
    assert_eq!(code, 0);
    let svg = fs::read_to_string(out.join("cmp.svg")).unwrap();
    assert!(svg.contains(">DQN<") && svg.contains(">DDQN<"));
    assert_eq!(
        run(&["plot", p(&a), "--labels", "x,y", "--out", p(&out)]).0,
        2
    );
    fs::write(&b, "window,mean_reward\n0,five\n").unwrap();
    assert_eq!(run(&["plot", p(&b), "--out", p(&out)]).0, 2);
}
