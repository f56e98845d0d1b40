use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bpa(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpa"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("BPA_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = bpa(out, args);
    assert!(
        o.status.success(),
        "bpa {args:?} failed:\n{}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

const SMALL: &str = r#"
[hyperparams]
hidden = [16]
episodes = 6

[clusters]
corpus_size = 400
k_max = 5
"#;

#[test]
fn identical_seeds_give_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(
            out,
            &[
                "--config",
                cfg,
                "--seed",
                "42",
                "train",
                "--mode",
                "persistent",
                "--profile",
                "realistic",
            ],
        );
    }
    let file = |root: &Path, name: &str| {
        fs::read(
            root.join("runs/cartpole-persistent-realistic-s0")
                .join(name),
        )
        .unwrap()
    };
    for name in ["metrics.jsonl", "checkpoint.txt", "store.json", "run.json"] {
        assert_eq!(file(&a, name), file(&b, name), "{name} differs");
    }
    assert_eq!(
        String::from_utf8(file(&a, "metrics.jsonl"))
            .unwrap()
            .lines()
            .count(),
        6
    );

    let c = dir.path().join("c");
    ok(
        &c,
        &[
            "--config",
            cfg,
            "--seed",
            "43",
            "train",
            "--mode",
            "persistent",
            "--profile",
            "realistic",
        ],
    );
    assert_ne!(file(&a, "metrics.jsonl"), file(&c, "metrics.jsonl"));
}

#[test]
fn cluster_commands_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let text = ok(out, &["collect-states", "--env", "nav", "--count", "300"]);
    assert!(text.starts_with("300 states"));
    let corpus = out.join("clusters/nav/corpus.csv");
    assert_eq!(fs::read_to_string(&corpus).unwrap().lines().count(), 301);

    let text = ok(
        out,
        &[
            "fit-clusters",
            "--env",
            "nav",
            "--corpus",
            corpus.to_str().unwrap(),
            "--k-max",
            "6",
        ],
    );
    assert!(text.contains("elbow k="));
    let sse = fs::read_to_string(out.join("clusters/nav/sse.csv")).unwrap();
    assert_eq!(sse.lines().count(), 7);
    let model = fs::read_to_string(out.join("clusters/nav/model.txt")).unwrap();
    assert!(model.starts_with("bpa-clusters v1\n"));
    assert!(model.contains("dim 5\n"));

    ok(
        out,
        &[
            "fit-clusters",
            "--env",
            "nav",
            "--corpus",
            corpus.to_str().unwrap(),
            "--k",
            "4",
        ],
    );
    let model = fs::read_to_string(out.join("clusters/nav/model.txt")).unwrap();
    assert!(model.contains("k 4\n"));
}

#[test]
fn campaign_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        format!("{SMALL}\n[campaign]\nrepeats = 2\nprofiles = [\"optimistic\"]\nworkers = 1\n"),
    )
    .unwrap();
    let out = dir.path().join("out");
    let text = ok(&out, &["--config", cfg.to_str().unwrap(), "campaign"]);
    assert!(
        text.contains("6 runs completed, 0 already present"),
        "{text}"
    );
    assert!(text.contains("cartpole-persistent-optimistic"));
    let interactions = fs::read_to_string(out.join("report/interactions.csv")).unwrap();
    assert!(interactions.contains("cartpole-baseline,0 (0.00%)"));
    assert!(
        interactions.contains("cartpole-non_persistent-optimistic,2400 (100.00%)"),
        "{interactions}"
    );
    let curve = fs::read_to_string(out.join("report/curves/cartpole-baseline.csv")).unwrap();
    assert_eq!(curve.lines().count(), 7);

    let text = ok(&out, &["--config", cfg.to_str().unwrap(), "campaign"]);
    assert!(text.contains("0 runs completed, 6 already present"));
    let text = ok(&out, &["report", "--threshold", "1"]);
    assert!(text.contains("cartpole-persistent-optimistic"));
    let summary = fs::read_to_string(out.join("report/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn bad_input_fails_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = bpa(out, &["train", "--mode", "greedy"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("greedy"));

    let o = bpa(out, &["train", "--profile", "lenient", "--episodes", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("lenient"));

    let cfg = out.join("bad.toml");
    fs::write(&cfg, "[hyperparams]\nlearning_rat = 0.1\n").unwrap();
    let o = bpa(out, &["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));

    let o = bpa(&out.join("empty"), &["report"]);
    assert!(!o.status.success());

    let missing = out.join("nope.txt");
    let o = bpa(
        out,
        &[
            "train",
            "--model",
            missing.to_str().unwrap(),
            "--episodes",
            "1",
        ],
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.txt"));
}
