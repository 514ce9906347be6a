use std::path::Path;
use std::process::{Command, Output};

const DATA: &str = "synth:n=60,k=2,f=8,noise=0.5,seed=3";

fn robagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robagg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `key=value` field from the single-line reports the binary prints.
fn field<'a>(out: &'a str, key: &str) -> &'a str {
    let prefix = format!("{key}=");
    out.split_whitespace()
        .find_map(|t| t.strip_prefix(prefix.as_str()))
        .unwrap_or_else(|| panic!("{key} missing from {out}"))
}

fn train(dir: &Path, extra: &[&str]) -> (Output, String) {
    let ckpt = dir.join("m.ckpt");
    let ckpt_s = ckpt.to_str().unwrap().to_string();
    let mut args = vec!["train", "--dataset", DATA, "--hidden", "8", "--out", &ckpt_s];
    args.extend_from_slice(extra);
    (robagg(&args), ckpt_s)
}

#[test]
fn train_inject_sweep_prune_round() {
    let dir = tempfile::tempdir().unwrap();
    let (out, ckpt) = train(dir.path(), &["--epochs", "20", "--agg", "distribution"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(field(&stdout(&out), "epochs_run"), "20");
    assert!(Path::new(&ckpt).exists());

    // zero rate leaves accuracy untouched at every site
    for site in ["weights", "embeddings", "adjacency"] {
        let o = robagg(&["inject", "--ckpt", &ckpt, "--dataset", DATA, "--site", site, "--ber", "0"]);
        assert!(o.status.success());
        let s = stdout(&o);
        assert_eq!(field(&s, "acc"), field(&s, "clean_acc"), "{site}");
        assert_eq!(field(&s, "bits_flipped"), "0");
        assert_eq!(field(&s, "aggregator"), "distribution:3:3");
    }
    let o = robagg(&["inject", "--ckpt", &ckpt, "--dataset", DATA, "--site", "weights", "--ber", "1e-2", "--agg", "median"]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "aggregator"), "median");
    assert_ne!(field(&stdout(&o), "bits_flipped"), "0");

    let sweep_dir = dir.path().join("sweep");
    let sd = sweep_dir.to_str().unwrap();
    let sweep = |extra: &[&str]| {
        let mut args = vec![
            "sweep", "--ckpt", &ckpt, "--dataset", DATA, "--aggs", "mean,median", "--sites", "weights",
            "--bers", "0,1e-3", "--seeds", "2", "--repeats", "2", "--out", sd,
        ];
        args.extend_from_slice(extra);
        robagg(&args)
    };
    let o = sweep(&["--limit", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&stdout(&o), "records"), "3");
    let o = sweep(&[]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert_eq!(field(&s, "records"), "16");
    assert_eq!(field(&s, "resumed"), "3");
    for f in ["records.csv", "timings.csv", "summary.json", "acc_vs_ber.csv", "pareto.csv"] {
        assert!(sweep_dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(sweep_dir.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17, "header plus one row per cell");

    let pruned = dir.path().join("p.ckpt");
    let o = robagg(&[
        "prune", "--ckpt", &ckpt, "--dataset", DATA, "--sparsity", "0.5", "--finetune-epochs", "3",
        "--out", pruned.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let achieved: f64 = field(&stdout(&o), "sparsity").parse().unwrap();
    assert!((achieved - 0.5).abs() < 0.01);
    assert!(pruned.exists());
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = train(dir.path(), &["--agg", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let (o, _) = train(dir.path(), &["--arch", "sage"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(robagg(&["train"]).status.code(), Some(2), "missing required flags");
    assert_eq!(robagg(&["frobnicate"]).status.code(), Some(2));

    let (o, ckpt) = train(dir.path(), &["--epochs", "2"]);
    assert!(o.status.success());
    let out = dir.path().join("never");
    let o = robagg(&[
        "sweep", "--ckpt", &ckpt, "--dataset", DATA, "--sites", "weights,cache", "--bers", "0", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists(), "no work before validation");
    let o = robagg(&["inject", "--ckpt", &ckpt, "--dataset", DATA, "--site", "weights", "--ber", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = robagg(&["train", "--config", "/nonexistent/robagg.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_sets_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, format!("# quick run\ndataset = {DATA}\nepochs = 3\npatience = 0\nhidden = 4\n")).unwrap();
    let cfg = cfg.to_str().unwrap();
    let ckpt = dir.path().join("c.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let o = robagg(&["train", "--config", cfg, "--out", ckpt]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&stdout(&o), "epochs_run"), "3");
    let o = robagg(&["train", "--config", cfg, "--epochs", "5", "--out", ckpt]);
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "epochs_run"), "5");
}

#[test]
fn profile_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let o = robagg(&[
        "profile", "--sizes", "2000,4000", "--aggs", "mean,cosine", "--warmup", "3", "--iters", "30", "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 5, "header plus 2 aggregators x 2 sizes");
    let s = stdout(&o);
    assert!(s.lines().any(|l| l.starts_with("cosine:0 ")), "{s}");
    let o = robagg(&["profile", "--sizes", "2000", "--iters", "5", "--out", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "too few measured iterations");
}
