use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use vocspec::dataset::io::{read_spectra_csv, write_spectra_csv};
use vocspec::dataset::{Corpus, VocClass, N_CHANNELS};

fn vocspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vocspec")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vocspec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small balanced corpus with trained basic and CVAE fold models, shared
/// across tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data.csv")
    }
    fn basic(&self) -> PathBuf {
        self.root.join("basic")
    }
    fn cvae(&self) -> PathBuf {
        self.root.join("cvae")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data.csv");
        ok(&["--seed", "3", "gen-data", "--per-class", "20", "--out", s(&data)]);
        let basic = root.join("basic");
        ok(&[
            "--seed", "3", "train", "--data", s(&data), "--out-dir", s(&basic), "--epochs", "25", "--learning-rate", "3e-3",
        ]);
        let cvae = root.join("cvae");
        ok(&["--seed", "3", "train", "--model", "cvae", "--data", s(&data), "--out-dir", s(&cvae), "--epochs", "2"]);
        Fixture { _dir: dir, root }
    })
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let out = vocspec(&["gen-data", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&vocspec(&["--help"])), 0);
    assert_eq!(code(&vocspec(&["--seed", "1", "no-such-command"])), 1);
    assert_eq!(code(&vocspec(&["--seed", "1", "gen-data", "--preset", "lopsided", "--out", "/tmp/unused.csv"])), 1);
    assert_eq!(code(&vocspec(&["--seed", "x", "gen-data"])), 1);
    assert_eq!(code(&vocspec(&["--seed", "1", "gen-data"])), 1);
}

#[test]
fn gen_data_is_deterministic_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["--seed", "7", "gen-data", "--preset", "balanced", "--per-class", "5", "--out", s(&a)]);
    ok(&["--seed", "7", "gen-data", "--preset", "balanced", "--per-class", "5", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 50);
    assert!(rows.iter().all(|r| r.split(',').count() == 2 + N_CHANNELS));
    let recipe = json(&dir.path().join("a.recipe.json"));
    assert_eq!(recipe["seed"], 7);
}

#[test]
fn starved_preset_starves_the_xylenes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    ok(&["--seed", "2", "gen-data", "--preset", "starved", "--out", s(&p)]);
    let spectra = read_spectra_csv(&p).unwrap();
    let count = |c: VocClass| spectra.iter().filter(|x| x.class() == c).count();
    let max = VocClass::ALL.iter().map(|&c| count(c)).max().unwrap();
    for c in [VocClass::OXylene, VocClass::PXylene] {
        assert!(count(c) >= 1);
        assert!(count(c) as f64 <= 0.02 * max as f64);
    }
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"gen-data": {"per_class": 3, "preset": "balanced"}}"#).unwrap();
    let a = dir.path().join("a.csv");
    ok(&["--seed", "1", "--config", s(&cfg), "gen-data", "--out", s(&a)]);
    assert_eq!(read_spectra_csv(&a).unwrap().len(), 30);
    ok(&["--seed", "1", "--config", s(&cfg), "gen-data", "--out", s(&a), "--per-class", "2"]);
    assert_eq!(read_spectra_csv(&a).unwrap().len(), 20);
    fs::write(&cfg, r#"{"per_class": "many"}"#).unwrap();
    assert_eq!(code(&vocspec(&["--seed", "1", "--config", s(&cfg), "gen-data", "--out", s(&a)])), 1);
}

#[test]
fn train_writes_five_checkpoints_and_a_report() {
    let f = fixture();
    for k in 0..5 {
        assert!(f.basic().join(format!("fold{k}.ckpt")).exists());
        assert!(f.cvae().join(format!("fold{k}.ckpt")).exists());
    }
    let ckpts = fs::read_dir(f.basic()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "ckpt");
    assert_eq!(ckpts.count(), 5);
    let report = json(&f.basic().join("report.json"));
    let acc = report["metrics"]["accuracy"]["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["metrics"]["folds"].as_array().unwrap().len(), 5);
    let emb = fs::read_to_string(f.cvae().join("embeddings.csv")).unwrap();
    assert_eq!(emb.lines().count(), 1 + 200);
}

#[test]
fn train_rerun_is_byte_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "--seed", "3", "train", "--data", s(&f.data()), "--out-dir", s(dir.path()), "--epochs", "25", "--learning-rate", "3e-3",
    ]);
    for name in ["report.json", "report.csv", "fold0.ckpt", "fold4.ckpt"] {
        assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(f.basic().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let missing = vocspec(&["--seed", "1", "train", "--data", "/nonexistent/x.csv", "--out-dir", s(dir.path())]);
    assert_eq!(code(&missing), 2);
    let diverged = vocspec(&[
        "--seed", "1", "train", "--data", s(&f.data()), "--out-dir", s(dir.path()), "--epochs", "2", "--learning-rate", "1e300",
    ]);
    assert_eq!(code(&diverged), 3);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "# format_version=1\nclass,concentration_ppm\nstyrene,abc\n").unwrap();
    let parse = vocspec(&["--seed", "1", "evaluate", "--model-dir", s(&f.basic()), "--data", s(&bad), "--out-dir", s(dir.path())]);
    assert_eq!(code(&parse), 2);
    assert!(String::from_utf8_lossy(&parse.stderr).contains("bad.csv:"));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn r2(t: &[f64], p: &[f64]) -> f64 {
    let m = t.iter().sum::<f64>() / t.len() as f64;
    let ss_res: f64 = t.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = t.iter().map(|a| (a - m).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[test]
fn evaluate_predictions_match_the_report() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&["--seed", "1", "evaluate", "--model-dir", s(&f.basic()), "--data", s(&f.data()), "--out-dir", s(dir.path())]);
    let rows = read_csv(&dir.path().join("predictions.csv"));
    assert_eq!(rows.len() - 1, 200);
    let report = json(&dir.path().join("report.json"));
    for k in 0..5 {
        let col = 3 + 2 * k + 1;
        for class in ["acetone", "toluene", "styrene"] {
            let (t, p): (Vec<f64>, Vec<f64>) = rows[1..]
                .iter()
                .filter(|r| r[1] == class)
                .map(|r| (r[2].parse::<f64>().unwrap(), r[col].parse::<f64>().unwrap()))
                .unzip();
            let stored = report["metrics"]["folds"][k]["per_class_r2"][class].as_f64().unwrap();
            assert!((stored - r2(&t, &p)).abs() < 1e-9, "{class} fold {k}");
        }
    }
    let first = fs::read(dir.path().join("report.json")).unwrap();
    ok(&["--seed", "1", "evaluate", "--model-dir", s(&f.basic()), "--data", s(&f.data()), "--out-dir", s(dir.path())]);
    assert_eq!(first, fs::read(dir.path().join("report.json")).unwrap());
}

#[test]
fn training_folds_score_at_least_as_well_as_validation_folds() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(read_spectra_csv(&f.data()).unwrap(), 3).unwrap();
    let report = json(&f.basic().join("report.json"));
    let mut train_acc = 0.0;
    let mut val_acc = 0.0;
    for k in 0..5 {
        let split = corpus.kfold_split(k).unwrap();
        let train: Vec<_> = corpus.select(&split.train).into_iter().cloned().collect();
        let path = dir.path().join(format!("train{k}.csv"));
        write_spectra_csv(&path, &train, false).unwrap();
        let out = dir.path().join(format!("eval{k}"));
        let ckpt = f.basic().join(format!("fold{k}.ckpt"));
        ok(&["--seed", "1", "evaluate", "--checkpoints", s(&ckpt), "--data", s(&path), "--out-dir", s(&out)]);
        train_acc += json(&out.join("report.json"))["metrics"]["accuracy"]["mean"].as_f64().unwrap();
        val_acc += report["metrics"]["folds"][k]["accuracy"].as_f64().unwrap();
    }
    assert!(train_acc >= val_acc, "train {train_acc} < validation {val_acc}");
}

#[test]
fn generate_rows_positive_and_seeded() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let p = dir.path().join(name);
        let ck = f.cvae().join("fold1.ckpt");
        ok(&["--seed", seed, "generate", "--checkpoint", s(&ck), "--class", "benzene", "--concentration", "12.5", "--n", "4", "--out", s(&p)]);
        p
    };
    let a = run("5", "a.csv");
    let b = run("5", "b.csv");
    let c = run("6", "c.csv");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let spectra = read_spectra_csv(&a).unwrap();
    assert_eq!(spectra.len(), 4);
    for sp in &spectra {
        assert_eq!(sp.class(), VocClass::Benzene);
        assert_eq!(sp.concentration(), 12.5);
        assert!(sp.absorbance().iter().all(|&v| v > 0.0));
    }
    assert!(fs::read_to_string(&a).unwrap().contains("cvae_generated"));
    let ck = f.cvae().join("fold1.ckpt");
    let neg = vocspec(&["--seed", "5", "generate", "--checkpoint", s(&ck), "--class", "benzene", "--concentration=-1", "--n", "1", "--out", s(&c)]);
    assert_eq!(code(&neg), 2);
}

#[test]
fn saliency_is_normalised_and_deterministic() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ck = f.basic().join("fold0.ckpt");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["--seed", "1", "saliency", "--checkpoint", s(&ck), "--data", s(&f.data()), "--index", "42", "--out", s(&a)]);
    ok(&["--seed", "1", "saliency", "--checkpoint", s(&ck), "--data", s(&f.data()), "--index", "42", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = read_csv(&a);
    assert_eq!(rows.len() - 1, N_CHANNELS);
    let v: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    assert_eq!(v.iter().cloned().fold(0.0, f64::max), 1.0);
    let out_of_range = vocspec(&["--seed", "1", "saliency", "--checkpoint", s(&ck), "--data", s(&f.data()), "--index", "999", "--out", s(&a)]);
    assert_eq!(code(&out_of_range), 2);
}

#[test]
fn compare_self_and_three_way() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let eval = |name: &str, ckpts: &[&str]| {
        let out = dir.path().join(name);
        let paths: Vec<PathBuf> = ckpts.iter().map(|c| f.basic().join(c)).collect();
        let data = f.data();
        let mut args = vec!["--seed", "1", "evaluate", "--data", s(&data), "--out-dir", s(&out), "--checkpoints"];
        args.extend(paths.iter().map(|p| s(p)));
        ok(&args);
        out.join("report.json")
    };
    let all = eval("all", &["fold0.ckpt", "fold1.ckpt", "fold2.ckpt", "fold3.ckpt", "fold4.ckpt"]);
    let self_dir = dir.path().join("self");
    ok(&["--seed", "1", "compare", "--reports", s(&all), s(&all), "--names", "a", "b", "--out-dir", s(&self_dir)]);
    let m = json(&self_dir.join("significance.json"));
    assert_eq!(m["significant"][0][1], false);
    assert!(fs::read_to_string(self_dir.join("significance.csv")).unwrap().contains("a,b,"));

    let r1 = eval("r1", &["fold0.ckpt", "fold1.ckpt"]);
    let r2 = eval("r2", &["fold2.ckpt", "fold3.ckpt"]);
    let three = dir.path().join("three");
    ok(&["--seed", "1", "compare", "--reports", s(&all), s(&r1), s(&r2), "--out-dir", s(&three)]);
    let m = json(&three.join("significance.json"));
    let p = m["p"].as_array().unwrap();
    assert_eq!(p.len(), 3);
    for i in 0..3 {
        assert_eq!(p[i].as_array().unwrap().len(), 3);
        for j in 0..3 {
            assert_eq!(p[i][j], p[j][i]);
            assert_eq!(m["significant"][i][j], m["significant"][j][i]);
        }
    }
    let omnibus = json(&three.join("omnibus.json"));
    assert_eq!(omnibus["statistic"], "H");
    assert_eq!(code(&vocspec(&["--seed", "1", "compare", "--reports", s(&all), "--out-dir", s(&three)])), 1);
}

fn raw_csv(rows: &[(&str, &str)], lo: f64, hi: f64) -> String {
    let grid: Vec<f64> = (0..=700).map(|i| lo + (hi - lo) * i as f64 / 700.0).collect();
    let mut out = String::from("# format_version=1\nclass,pid_ppm");
    for nu in &grid {
        out.push_str(&format!(",{nu}"));
    }
    out.push('\n');
    for (class, ppm) in rows {
        out.push_str(&format!("{class},{ppm}"));
        for nu in &grid {
            out.push_str(&format!(",{}", 0.001 * (nu - 650.0) / 700.0));
        }
        out.push('\n');
    }
    out
}

#[test]
fn ingest_converts_readings_and_regrids() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(&raw, raw_csv(&[("styrene", "100"), ("acetone", "10"), ("air", "")], 650.0, 1350.0)).unwrap();
    let out = dir.path().join("spectra.csv");
    ok(&["--seed", "1", "ingest", "--input", s(&raw), "--out", s(&out)]);
    let spectra = read_spectra_csv(&out).unwrap();
    assert_eq!(spectra.len(), 3);
    assert!((spectra[0].concentration() - 23.076_923_076_923).abs() < 1e-9);
    assert!((spectra[1].concentration() - 6.346_153_846_154).abs() < 1e-9);
    assert_eq!(spectra[2].concentration(), 0.0);
    let a = spectra[0].absorbance();
    assert_eq!(a.len(), N_CHANNELS);
    let expect = |nu: f64| 0.001 * (nu - 650.0) / 700.0;
    assert!((a[0] - expect(700.0)).abs() < 1e-12);
    assert!((a[N_CHANNELS - 1] - expect(1300.0)).abs() < 1e-12);

    let narrow = dir.path().join("narrow.csv");
    fs::write(&narrow, raw_csv(&[("styrene", "100")], 750.0, 1350.0)).unwrap();
    assert_eq!(code(&vocspec(&["--seed", "1", "ingest", "--input", s(&narrow), "--out", s(&out)])), 2);
}

#[test]
fn oversample_sweep_selects_argmin() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "--seed", "3", "augment-sweep", "--mode", "oversample", "--data", s(&f.data()), "--grid", "10,20", "--epochs", "2",
        "--out-dir", s(dir.path()),
    ]);
    let rows = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows[0], ["mode", "per_class_count", "fold", "validation_mse", "validation_accuracy"]);
    assert_eq!(rows.len() - 1, 10);
    let mean = |count: &str| {
        let v: Vec<f64> = rows[1..].iter().filter(|r| r[1] == count).map(|r| r[3].parse().unwrap()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let expected = if mean("20") < mean("10") { 20 } else { 10 };
    let summary = json(&dir.path().join("sweep.json"));
    assert_eq!(summary["selected_count"], expected);
    assert_eq!(summary["selected_checkpoints"].as_array().unwrap().len(), 5);
    assert!(dir.path().join("fold4.ckpt").exists());
    let bad_grid = vocspec(&["--seed", "3", "augment-sweep", "--mode", "oversample", "--data", s(&f.data()), "--grid", "30", "--out-dir", s(dir.path())]);
    assert_eq!(code(&bad_grid), 1);
}

#[test]
fn synthetic_sweep_needs_matching_cvaes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let missing = vocspec(&["--seed", "3", "augment-sweep", "--mode", "synthetic", "--data", s(&f.data()), "--out-dir", s(dir.path())]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("train --model cvae"));
    ok(&[
        "--seed", "3", "augment-sweep", "--mode", "synthetic", "--data", s(&f.data()), "--cvae-dir", s(&f.cvae()), "--grid",
        "10", "--epochs", "2", "--out-dir", s(dir.path()),
    ]);
    assert_eq!(json(&dir.path().join("sweep.json"))["selected_count"], 10);
    // Fold assignment depends on the seed, so these CVAEs saw other folds.
    let leaky = vocspec(&[
        "--seed", "4", "augment-sweep", "--mode", "synthetic", "--data", s(&f.data()), "--cvae-dir", s(&f.cvae()), "--grid",
        "10", "--epochs", "2", "--out-dir", s(dir.path()),
    ]);
    assert_eq!(code(&leaky), 2);
    assert!(String::from_utf8_lossy(&leaky.stderr).contains("not trained on"));
}
