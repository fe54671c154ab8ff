use std::fs;
use std::path::Path;
use std::process::Command;

use wlssgan::cli::{
    cmd_baseline, cmd_eval, cmd_gen_data, cmd_sweep, cmd_synth, cmd_train, render_svg, ExperimentConfig, PlotLabels,
    Series, SweepGrid,
};
use wlssgan::losses::LayerSet;
use wlssgan::synth::{read_dataset, ClutterClass, Role};
use wlssgan::trainer::TrainMode;

fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Small, fast settings rooted in `dir`.
fn quick(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(
        None,
        &pairs(&[
            ("per_class", "10"),
            ("epochs", "2"),
            ("batch_size", "4"),
            ("max_iterations", "3"),
            ("nlab", "6"),
            ("n_synth", "4"),
            ("knn_k", "3"),
        ]),
    )
    .unwrap();
    cfg.out = dir.join("out");
    cfg.dataset = Some(dir.join("data.slcd"));
    cfg
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.cfg");
    fs::write(&file, "# experiment\nepochs = 50\nalpha = 0.4\nbeta = 0.6\nlr = 0.001\n").unwrap();
    let cfg = ExperimentConfig::load(Some(&file), &pairs(&[("epochs", "7")])).unwrap();
    assert_eq!(cfg.train.epochs, 7);
    assert_eq!((cfg.train.loss.alpha, cfg.train.loss.beta), (0.4, 0.6));
    assert_eq!(cfg.train.adam.lr, 0.001);
    assert_eq!(cfg.train.batch_size, ExperimentConfig::default().train.batch_size);

    let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn bad_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ExperimentConfig::load(None, &pairs(&[("epochz", "3")])).is_err());
    assert!(ExperimentConfig::load(None, &pairs(&[("epochs", "three")])).is_err());
    assert!(ExperimentConfig::load(None, &pairs(&[("alpha", "0.9")])).is_err());
    assert!(ExperimentConfig::from_text("seed = 1\nseed = 2\n").is_err());
    assert!(ExperimentConfig::load(Some(&dir.path().join("missing.cfg")), &[]).is_err());

    let mut cfg = quick(dir.path());
    assert!(cfg.require_dataset().is_err());
    cfg.dataset = None;
    assert!(cmd_train(&cfg, |_| {}).is_err());
    cfg.checkpoint = Some(dir.path().join("none.ckpt"));
    assert!(cfg.require_checkpoint().is_err());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    cfg.out = blocker;
    assert!(cfg.prepare_out().is_err());
}

#[test]
fn gen_data_writes_a_reproducible_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.per_class = 30;
    let path = cmd_gen_data(&cfg).unwrap();
    let ds = read_dataset(&path).unwrap();
    assert_eq!(ds.len(), 90);
    for c in ClutterClass::ALL {
        assert_eq!(ds.count(Role::Train, Some(c)), 21);
        assert_eq!(ds.count(Role::Test, Some(c)), 9);
    }
    let first = fs::read(&path).unwrap();
    cmd_gen_data(&cfg).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);

    cfg.dataset = None;
    let default_path = cmd_gen_data(&cfg).unwrap();
    assert_eq!(default_path, cfg.out.join("dataset.slcd"));
    assert_eq!(fs::read(default_path).unwrap(), first);
}

#[test]
fn train_then_eval_and_synth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let art = cmd_train(&cfg, |_| {}).unwrap();
    let csv = fs::read_to_string(&art.csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,d_total,supervised,unsupervised,g_total,adv,fm_joint,test_acc");
    assert_eq!(lines.len(), 1 + art.report.epochs.len());
    for p in [&art.loss_svg, &art.accuracy_svg] {
        assert!(fs::read_to_string(p).unwrap().starts_with("<svg"));
    }

    let mut again = cfg.clone();
    again.out = dir.path().join("again");
    let art2 = cmd_train(&again, |_| {}).unwrap();
    assert_eq!(fs::read(&art.csv).unwrap(), fs::read(&art2.csv).unwrap());
    assert_eq!(fs::read(&art.checkpoint).unwrap(), fs::read(&art2.checkpoint).unwrap());

    let mut use_ck = cfg.clone();
    use_ck.checkpoint = Some(art.checkpoint.clone());
    let acc = cmd_eval(&use_ck).unwrap();
    assert_eq!(Some(acc), art.report.epochs.last().unwrap().test_acc);
    assert!(cfg.out.join("eval.csv").is_file());

    use_ck.n_synth = 1;
    let syn = cmd_synth(&use_ck).unwrap();
    assert_eq!(syn.report.n_pairs, 1);
    assert_eq!(syn.examples.len(), 1);
    assert_eq!(read_dataset(&syn.signals).unwrap().len(), 1);
    let report = fs::read_to_string(&syn.report_csv).unwrap();
    assert!(report.starts_with("n_pairs,ad,cs,pcc\n1,"));
}

#[test]
fn supervised_mode_ignores_loss_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = quick(dir.path());
    a.mode = TrainMode::Supervised;
    cmd_gen_data(&a).unwrap();
    let mut b = a.clone();
    b.out = dir.path().join("b");
    b.set("alpha", "0.2").unwrap();
    b.set("beta", "0.8").unwrap();
    b.set("lmul", "1").unwrap();
    let (ra, rb) = (cmd_train(&a, |_| {}).unwrap(), cmd_train(&b, |_| {}).unwrap());
    assert_eq!(fs::read(&ra.csv).unwrap(), fs::read(&rb.csv).unwrap());
    assert_eq!(fs::read(&ra.checkpoint).unwrap(), fs::read(&rb.checkpoint).unwrap());
}

#[test]
fn sweep_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.train.max_iterations = Some(1);
    cmd_gen_data(&cfg).unwrap();
    cfg.sweep = SweepGrid::single(0.7, 0.3, LayerSet::prefix(2).unwrap(), 6);
    let out = cmd_sweep(&cfg).unwrap();
    assert_eq!(out.len(), 1);
    let runs = fs::read_to_string(cfg.out.join("sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 1 + 1);
    let table = fs::read_to_string(cfg.out.join("sweep_table.csv")).unwrap();
    assert_eq!(table.lines().collect::<Vec<_>>()[0], "mode,alpha,beta,lmul,n_lab=6");
    assert_eq!(table.lines().count(), 2);

    cfg.sweep.seeds = 3;
    cfg.sweep.include_supervised = true;
    cfg.workers = 2;
    let out = cmd_sweep(&cfg).unwrap();
    assert_eq!(out.len(), 6);
    let runs = fs::read_to_string(cfg.out.join("sweep_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 6 + 2);
    assert_eq!(runs.lines().filter(|l| l.contains(",mean,")).count(), 2);
    let table = fs::read_to_string(cfg.out.join("sweep_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("supervised,"));
}

#[test]
fn baselines_report_three_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let rows = cmd_baseline(&cfg).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.method).collect();
    assert_eq!(names, ["knn", "logistic_regression", "self_training"]);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    let csv = fs::read_to_string(cfg.out.join("baselines.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("knn,6,"));
}

#[test]
fn plot_matches_golden_file() {
    let series = [
        Series::new("train", vec![(1.0, 0.5), (2.0, 0.75), (3.0, 0.9)]),
        Series::new("test <held out>", vec![(1.0, 0.4), (2.0, 0.7), (3.0, 0.85)]),
        Series::new("final", vec![(3.0, 0.95)]),
    ];
    let labels = PlotLabels {
        title: "Accuracy & loss".into(),
        x: "epoch".into(),
        y: "accuracy".into(),
    };
    let svg = render_svg(&series, &labels).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/accuracy_plot.svg");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, &svg).unwrap();
    }
    assert_eq!(svg, fs::read_to_string(&golden).unwrap());
}

#[test]
fn binary_runs_gen_data_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_file = dir.path().join("exp.cfg");
    fs::write(&cfg_file, "per_class = 40\nseed = 3\n").unwrap();
    let data = dir.path().join("d.slcd");
    let status = Command::new(env!("CARGO_BIN_EXE_wlssgan"))
        .args(["gen-data", "--config"])
        .arg(&cfg_file)
        .args(["--per-class", "12", "--dataset"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read_dataset(&data).unwrap().len(), 36);

    let out = Command::new(env!("CARGO_BIN_EXE_wlssgan"))
        .args(["train", "--set", "no_such_key=1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}
