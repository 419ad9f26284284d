use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MICRO: &str = r#"
[data]
synth_seed = 3

[data.synth]
length = 200
coupling = [1.0]

[model.gcgnet]
lookback = 8
horizon = 4
patch_len = 4
d_model = 4
latent_gen = 2
latent_graph = 2

[train]
epochs = 3
patience = 3
seed = 1
"#;

fn gcgnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcgnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("{MICRO}{extra}")).unwrap();
    path
}

fn train_into(config: &Path, out: &Path) -> Output {
    gcgnet(&["train", s(config), "--out", s(out)])
}

fn assert_ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn micro_training_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let out = dir.path().join("out");
    assert_ok(&train_into(&cfg, &out));
    for f in ["resolved_config.toml", "checkpoint.gcgn", "history.csv", "metrics.txt", "forecast.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let history = read(out.join("history.csv"));
    assert!(history.starts_with("epoch,l_f,l_align,kl_v,kl_g,total,val_mse\n"));
    assert_eq!(history.lines().count(), 4);
    let metrics: toml::Value = toml::from_str(&read(out.join("metrics.txt"))).unwrap();
    assert!(metrics["test"]["mse"].as_float().unwrap().is_finite());
    assert_eq!(metrics["test"]["window_count"].as_integer(), Some(29));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_ok(&train_into(&cfg, &a));
    assert_ok(&train_into(&cfg, &b));
    assert_eq!(read(a.join("history.csv")), read(b.join("history.csv")));
    assert_eq!(read(a.join("metrics.txt")), read(b.join("metrics.txt")));
    assert_ok(&train_into(&a.join("resolved_config.toml"), &c));
    assert_eq!(read(a.join("history.csv")), read(c.join("history.csv")));
}

#[test]
fn variant_b_has_zero_alignment_loss() {
    let dir = tempfile::tempdir().unwrap();
    let check = |out: &Path| {
        let history = read(out.join("history.csv"));
        let rows: Vec<&str> = history.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        for row in rows {
            assert_eq!(row.split(',').nth(2), Some("0.0"), "{row}");
        }
    };
    let cfg = write_config(dir.path(), "b.toml", "\n[experiment]\nvariant = \"b\"\n");
    let out = dir.path().join("b");
    assert_ok(&train_into(&cfg, &out));
    check(&out);

    let plain = write_config(dir.path(), "run.toml", "");
    let ablated = dir.path().join("ablate");
    assert_ok(&gcgnet(&["ablate", s(&plain), "--variant", "b", "--out", s(&ablated)]));
    check(&ablated);
    assert_eq!(read(out.join("history.csv")), read(ablated.join("history.csv")));
}

fn eval_test_mse(args: &[&str], out: &Path) -> (f64, Vec<f64>) {
    let mut all = args.to_vec();
    all.extend(["--out", s(out)]);
    assert_ok(&gcgnet(&all));
    let m: toml::Value = toml::from_str(&read(out.join("metrics.txt"))).unwrap();
    let masked = m
        .get("masked")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().map(|r| r["mse"].as_float().unwrap()).collect())
        .unwrap_or_default();
    (m["test"]["mse"].as_float().unwrap(), masked)
}

#[test]
fn eval_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let run = dir.path().join("run");
    assert_ok(&train_into(&cfg, &run));
    let ckpt = run.join("checkpoint.gcgn");
    let base = ["eval", s(&cfg), "--checkpoint", s(&ckpt)];

    let (plain, _) = eval_test_mse(&base, &dir.path().join("e1"));
    let (again, _) = eval_test_mse(&base, &dir.path().join("e2"));
    assert_eq!(plain, again);
    let trained: toml::Value = toml::from_str(&read(run.join("metrics.txt"))).unwrap();
    assert_eq!(trained["test"]["mse"].as_float(), Some(plain));

    let mut null_mask = base.to_vec();
    null_mask.extend(["--mask", "zeros:0.0:1", "--mask", "zeros:0.5:1"]);
    let (_, masked) = eval_test_mse(&null_mask, &dir.path().join("e3"));
    assert_eq!(masked[0], plain);
    assert_ne!(masked[1], plain);

    let mut no_future = base.to_vec();
    no_future.push("--no-future-exo");
    let (generated, _) = eval_test_mse(&no_future, &dir.path().join("e4"));
    assert!(generated.is_finite());
    let m: toml::Value = toml::from_str(&read(dir.path().join("e4/metrics.txt"))).unwrap();
    assert_eq!(m["future_exo"].as_bool(), Some(false));
}

#[test]
fn eval_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let run = dir.path().join("run");
    assert_ok(&train_into(&cfg, &run));
    let other = dir.path().join("other.toml");
    std::fs::write(&other, MICRO.replace("coupling = [1.0]", "coupling = [1.0, 0.5]")).unwrap();
    let o = gcgnet(&["eval", s(&other), "--checkpoint", s(&run.join("checkpoint.gcgn"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "length = 300\ncoupling = [1.0, -0.5, 0.25]\n").unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_ok(&gcgnet(&["synth", "--spec", s(&spec), "--seed", "7", "--out", s(&a)]));
    assert_ok(&gcgnet(&["synth", "--spec", s(&spec), "--seed", "7", "--out", s(&b)]));
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("t,x0,x1,x2,y\n"));
    assert_eq!(text.lines().count(), 301);
    let record: toml::Value = toml::from_str(&read(dir.path().join("a.synth.toml"))).unwrap();
    assert_eq!(record["seed"].as_integer(), Some(7));
    assert_eq!(record["spec"]["length"].as_integer(), Some(300));
}

#[test]
fn forecast_emits_one_row_per_channel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let run = dir.path().join("run");
    assert_ok(&train_into(&cfg, &run));
    let csv = dir.path().join("data.csv");
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "length = 40\ncoupling = [1.0]\n").unwrap();
    assert_ok(&gcgnet(&["synth", "--spec", s(&spec), "--seed", "1", "--out", s(&csv)]));
    let ckpt = run.join("checkpoint.gcgn");

    let out = dir.path().join("forecast.csv");
    assert_ok(&gcgnet(&["forecast", "--checkpoint", s(&ckpt), "--csv", s(&csv), "--out", s(&out)]));
    let text = read(out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "channel,h1,h2,h3,h4");
    assert_eq!(lines.len(), 1 + 1);
    let values: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 4);
    assert!(values.iter().all(|v| v.is_finite()));

    let o = gcgnet(&["forecast", "--checkpoint", s(&ckpt), "--csv", s(&csv), "--horizon", "2", "--no-future-exo"]);
    assert_ok(&o);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("channel,h1,h2\ny,"));

    let o = gcgnet(&["forecast", "--checkpoint", s(&ckpt), "--csv", s(&csv), "--horizon", "9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_on_micro_config() {
    let o = gcgnet(&["gradcheck"]);
    assert_ok(&o);
    let stdout = String::from_utf8(o.stdout).unwrap();
    let last = stdout.lines().last().unwrap();
    let err: f64 = last
        .strip_prefix("max relative error ")
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-3, "{stdout}");
}

#[test]
fn bad_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.toml", format!("{MICRO}\n[experiment]\nbogus = 1\n")),
        ("both.toml", MICRO.replace("synth_seed = 3", "synth_seed = 3\ncsv = \"x.csv\"")),
        ("split.toml", MICRO.replace("synth_seed = 3", "synth_seed = 3\nsplit = [1.0, 0.0, 0.0]")),
        ("patch.toml", MICRO.replace("patch_len = 4", "patch_len = 0")),
        ("mask.toml", format!("{MICRO}\n[experiment]\nmasks = [\"zeros:1.5:1\"]\n")),
        ("kind.toml", MICRO.replace("[model.gcgnet]", "[model.transformer]")),
    ];
    for (name, body) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        let o = train_into(&path, &dir.path().join("out"));
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(gcgnet(&["train"]).status.code(), Some(2));
    assert_eq!(gcgnet(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", "");
    let missing = dir.path().join("missing.gcgn");
    let o = gcgnet(&["eval", s(&cfg), "--checkpoint", s(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    let garbage = dir.path().join("garbage.gcgn");
    std::fs::write(&garbage, b"not a checkpoint at all, just bytes").unwrap();
    let o = gcgnet(&["eval", s(&cfg), "--checkpoint", s(&garbage)]);
    assert_eq!(o.status.code(), Some(1));
}
