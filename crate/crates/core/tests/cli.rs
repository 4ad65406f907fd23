mod common;

use std::path::Path;
use std::process::Command;

use tvlm::config::RunConfig;
use tvlm::val::decode_pnm;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn tvlm(args: &[&str], env: &[(&str, &str)]) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tvlm"));
    cmd.args(args).env_remove(tvlm::cli::BRIDGE_ENV);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let o = cmd.output().expect("spawn tvlm");
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field(stdout: &str, key: &str) -> f64 {
    stdout
        .split_whitespace()
        .find_map(|w| w.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {stdout}"))
        .parse()
        .unwrap()
}

fn history_column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let col = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn train_is_deterministic_and_consistent_with_eval() {
    let (dir, cfg) = common::small_run("", "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = tvlm(&["train", "--config", s(&cfg), "--out", s(&a)], &[]);
    assert_eq!(ra.code, 0, "{}", ra.stderr);
    let rb = tvlm(&["train", "--config", s(&cfg), "--out", s(&b)], &[]);
    assert_eq!(rb.code, 0, "{}", rb.stderr);
    assert_eq!(std::fs::read(a.join("history.csv")).unwrap(), std::fs::read(b.join("history.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("checkpoint.tvlm")).unwrap(), std::fs::read(b.join("checkpoint.tvlm")).unwrap());
    assert_eq!(ra.stdout, rb.stdout.replace(s(&b), s(&a)));
    assert!(ra.stdout.contains("val_mse=") && ra.stdout.contains("val_mae="));

    let header = std::fs::read_to_string(a.join("history.csv")).unwrap();
    assert!(header.starts_with("epoch,train_mse,val_mse,best_val_mse,lr"));
    let best = history_column(&a.join("history.csv"), "best_val_mse");
    assert!(!best.is_empty());
    assert!(best.windows(2).all(|w| w[1] <= w[0]), "{best:?}");
    let lr = history_column(&a.join("history.csv"), "lr");
    for (e, v) in lr.iter().enumerate() {
        assert_eq!(*v, 1e-3 * 0.5f64.powi(e as i32));
    }

    let echoed = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(ra.stderr.contains(&echoed));
    assert_eq!(RunConfig::parse(&echoed).unwrap(), RunConfig::load(&cfg).unwrap());

    let ev = tvlm(&["eval", "--config", s(&cfg), "--out", s(&a), "--split", "train"], &[]);
    assert_eq!(ev.code, 0, "{}", ev.stderr);
    let metrics = std::fs::read_to_string(a.join("metrics_train.csv")).unwrap();
    let mut rows = metrics.lines();
    assert_eq!(rows.next(), Some("metric,value"));
    let mse: f64 = rows.next().unwrap().strip_prefix("mse,").unwrap().parse().unwrap();
    assert!(rows.next().unwrap().starts_with("mae,"));
    let final_train = field(&ra.stdout, "final_train_mse");
    assert!((mse - final_train).abs() < 1e-6, "{mse} vs {final_train}");

    let test = tvlm(&["eval", "--config", s(&cfg), "--out", s(&a)], &[]);
    assert_eq!(test.code, 0, "{}", test.stderr);
    assert!(test.stdout.lines().next().unwrap().starts_with("metric"));

    let fc = tvlm(&["forecast", "--config", s(&cfg), "--out", s(&a)], &[]);
    assert_eq!(fc.code, 0, "{}", fc.stderr);
    let csv = std::fs::read_to_string(a.join("forecast.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,a,b");
    assert_eq!(lines.len(), 9);
    // first column sits around 10 in original units
    let v: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((v - 10.0).abs() < 3.0, "{v}");
    let fw = tvlm(&["forecast", "--config", s(&cfg), "--out", s(&a), "--window", "2", "--split", "val"], &[]);
    assert_eq!(fw.code, 0, "{}", fw.stderr);
    assert!(a.join("forecast_val_2.csv").exists());
}

#[test]
fn short_horizon_report() {
    let (dir, cfg) = common::small_run("eval_mode = \"short\"", "max_steps = 4");
    let out = dir.path().join("o");
    assert_eq!(tvlm(&["train", "--config", s(&cfg), "--out", s(&out)], &[]).code, 0);
    let ev = tvlm(&["eval", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert_eq!(ev.code, 0, "{}", ev.stderr);
    let m = std::fs::read_to_string(out.join("metrics_test.csv")).unwrap();
    let names: Vec<&str> = m.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["smape", "mase", "owa"]);
}

#[test]
fn missing_dataset_exits_two_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, common::small_config("no/such/file.csv", "", "")).unwrap();
    let r = tvlm(&["train", "--config", s(&cfg)], &[]);
    assert_eq!(r.code, 2);
    let last = r.stderr.lines().last().unwrap();
    assert!(last.starts_with("error: ") && last.contains("no/such/file.csv"), "{last}");
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, common::small_config("x.csv", "", "warmup = 3")).unwrap();
    let r = tvlm(&["train", "--config", s(&cfg)], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("warmup"), "{}", r.stderr);
    assert_eq!(r.stderr.lines().count(), 1);
}

#[test]
fn empty_test_split_reports_no_windows() {
    let (dir, cfg) = common::small_run("split = [200, 35, 5]", "max_steps = 2");
    let out = dir.path().join("o");
    assert_eq!(tvlm(&["train", "--config", s(&cfg), "--out", s(&out)], &[]).code, 0);
    let r = tvlm(&["eval", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("no windows"), "{}", r.stderr);
}

#[test]
fn fingerprint_mismatch_is_refused() {
    let (dir, cfg) = common::small_run("", "max_steps = 2");
    let out = dir.path().join("o");
    assert_eq!(tvlm(&["train", "--config", s(&cfg), "--out", s(&out)], &[]).code, 0);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("d_model = 16", "d_model = 8");
    let other = dir.path().join("other.toml");
    std::fs::write(&other, text).unwrap();
    let r = tvlm(&["eval", "--config", s(&other), "--out", s(&out)], &[]);
    assert_eq!(r.code, 2);
    let hashes = r.stderr.split(|c: char| !c.is_ascii_hexdigit()).filter(|w| w.len() == 64).count();
    assert_eq!(hashes, 2, "{}", r.stderr);
}

#[test]
fn render_is_byte_identical() {
    let (dir, cfg) = common::small_run("", "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let r = tvlm(&["render", "--config", s(&cfg), "--out", s(o), "--window", "3"], &[]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    for f in ["render_test_3.ppm", "render_test_3.txt", "render_test_3.meta"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let img = decode_pnm(&std::fs::read(a.join("render_test_3.ppm")).unwrap()).unwrap();
    assert_eq!(img.shape(), &[3, 16, 16]);
    assert_eq!(img.max_value(), 255.0);
    assert_eq!(img.min_value(), 0.0);

    let cfg_v = RunConfig::load(&cfg).unwrap();
    let ws = cfg_v.workspace().unwrap();
    let (x, _) = ws.windows("test").unwrap().sample(3).unwrap();
    let prompt = std::fs::read_to_string(a.join("render_test_3.txt")).unwrap();
    let stats = tvlm::tal::window_stats(&x).unwrap();
    assert!(prompt.contains(&format!("[{:.3}, {:.3}]", stats.min, stats.max)), "{prompt}");

    let r = tvlm(&["render", "--config", s(&cfg), "--out", s(&a), "--window", "100000"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("out of range"), "{}", r.stderr);
}

#[test]
fn constant_window_renders_black_without_periodic_channels() {
    let dir = tempfile::tempdir().unwrap();
    common::write_csv(&dir.path().join("flat.csv"), &["v"], 200, |_, _| 3.25);
    let cfg = dir.path().join("run.toml");
    let text = common::small_config("flat.csv", "scale = false", "")
        .replace("d_fusion = 16", "d_fusion = 16\nchannels = [\"raw\", \"freq\"]");
    std::fs::write(&cfg, text).unwrap();
    let r = tvlm(&["render", "--config", s(&cfg), "--out", s(dir.path())], &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let img = decode_pnm(&std::fs::read(dir.path().join("render_test_0.ppm")).unwrap()).unwrap();
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn remote_training_through_env_endpoint() {
    let b = common::spawn(common::BridgeSpec::new(20, 16, 4, common::Mode::Echo));
    let (dir, cfg) = common::small_run("", "max_steps = 3");
    let out = dir.path().join("o");
    let r = tvlm(
        &["train", "--config", s(&cfg), "--out", s(&out), "--encoder", "remote", "--endpoint", "http://127.0.0.1:1"],
        &[(tvlm::cli::BRIDGE_ENV, &b.url)],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(std::fs::read_to_string(out.join("config.toml")).unwrap().contains(&b.url));

    let dead = tvlm(&["train", "--config", s(&cfg), "--out", s(&out), "--encoder", "remote", "--endpoint", &common::dead_url()], &[]);
    assert_eq!(dead.code, 3, "{}", dead.stderr);
}
