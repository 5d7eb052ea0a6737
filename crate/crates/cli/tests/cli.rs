use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use demp_cli::config::parse_config;
use demp_cli::runner::train_seed;
use demp_core::engine::{train_plain, TrainData};
use demp_core::optim::Optimizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BLOBS: &str = r#"
name = "blobs"
steps = 150
seeds = [0, 1, 2]

[model]
kind = "mlp"
input_shape = [6]
hidden = [24, 12]
outputs = 4

[optimizer]
kind = "adam"
lr = 0.02

[demp]
sigma2 = { peak = 0.01 }
noise = "asymmetric"
dynamic_pruning = true
prune_period = 50
probe_size = 64

[data]
source = "blobs"
classes = 4
per_class = 40
dim = 6
separation = 3.0
eval_fraction = 0.25
batch_size = 16

[run]
metrics_every = 10
"#;

fn demp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demp")).args(args).env("DEMP_OUT", out).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn dead_trace(csv: &str) -> Vec<String> {
    csv.lines()
        .skip(2)
        .map(|l| l.split(',').skip(8).collect::<Vec<_>>().join(","))
        .collect()
}

#[test]
fn seeds_fan_out_into_separate_runs_with_one_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "blobs.toml", BLOBS);
    let out = dir.path().join("out");
    let o = demp(&["train", cfg.to_str().unwrap(), "--quiet"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let csvs: Vec<String> = (0..3)
        .map(|s| std::fs::read_to_string(out.join(format!("blobs-seed{s}/metrics.csv"))).unwrap())
        .collect();
    let header = csvs[0].lines().nth(1).unwrap();
    assert!(header.starts_with("step,train_loss,eval_accuracy,neuron_sparsity,weight_sparsity,flops_estimate,lambda_t,sigma2_t,dead_count_layer_0,dead_count_layer_1"));
    for (s, csv) in csvs.iter().enumerate() {
        let first = csv.lines().next().unwrap();
        assert!(first.starts_with("# config_hash=") && first.ends_with(&format!(" seed={s}")), "{first}");
        assert_eq!(csv.lines().nth(1).unwrap(), header);
    }
    let traces: Vec<_> = csvs.iter().map(|c| dead_trace(c)).collect();
    assert!(traces[0] != traces[1] || traces[1] != traces[2], "dead-count traces coincide");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("blobs-seed1/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 1);
    assert_eq!(summary["config_text"], BLOBS);
    assert_eq!(summary["config"]["steps"], 150);
    assert!(summary["final"]["dead_counts"].is_array());
    assert!(summary["overlap_trace"].is_array());
    let hash = summary["config_hash"].as_str().unwrap();
    assert!(csvs[1].starts_with(&format!("# config_hash={hash} seed=1\n")));
}

#[test]
fn rerunning_a_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "blobs.toml", BLOBS);
    let read = |root: &Path| std::fs::read(root.join("blobs-seed0/metrics.csv")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(demp(&["train", cfg.to_str().unwrap(), "--quiet", "--seed-override", "0"], &a).status.success());
    assert!(demp(&["train", cfg.to_str().unwrap(), "--quiet", "--seed-override", "0", "--out", b.to_str().unwrap()], &a)
        .status
        .success());
    assert_eq!(read(&a), read(&b));
    assert!(!a.join("blobs-seed1").exists());
}

#[test]
fn invalid_config_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &BLOBS.replace("lr = 0.02", "lr = 0.02\nlearnig_rate = 1"));
    let o = demp(&["train", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml:15:") && err.contains("learnig_rate"), "{err}");

    let cfg = write_config(dir.path(), "bad2.toml", &BLOBS.replace("kind = \"adam\"", "kind = \"adamw\""));
    assert_eq!(demp(&["train", cfg.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn diverging_run_exits_1_and_keeps_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let text = BLOBS.replace("kind = \"adam\"\nlr = 0.02", "kind = \"sgd\"\nlr = 1e200");
    let cfg = write_config(dir.path(), "div.toml", &text);
    let out = dir.path().join("out");
    let o = demp(&["train", cfg.to_str().unwrap(), "--quiet", "--seed-override", "0"], &out);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("blobs-seed0/summary.json")).unwrap()).unwrap();
    assert!(summary["aborted"].is_string());
}

#[test]
fn degenerate_config_reproduces_the_plain_loop() {
    let text = BLOBS
        .replace("sigma2 = { peak = 0.01 }\nnoise = \"asymmetric\"\ndynamic_pruning = true", "dynamic_pruning = false");
    let variants = parse_config(&text, Path::new("plain.toml")).unwrap();
    let v = &variants[0];
    let (train, eval) = demp_cli::runner::load_data(v, Path::new(".")).unwrap();
    let outcome = train_seed(v, 2, &train, eval.as_ref()).unwrap();
    let net = v.config.build_network(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let opt = Optimizer::new(v.config.optimizer_kind().unwrap(), &net).unwrap();
    let data = TrainData { train: &train, eval: eval.as_ref() };
    let plain = train_plain(net, &data, opt, &v.config.train_settings(2)).unwrap();
    assert_eq!(outcome.losses, plain.losses);
}

#[test]
fn absorbing_grid_has_27_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = demp(&["theory", "absorbing", "--grid", "--trajectories", "200", "--n-sub", "100"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "w0,eta,t,mc_survival,closed_form,stderr");
    assert_eq!(lines.len(), 28);
    assert!(text.contains("\n1,0.01,100,"));
}

#[test]
fn lemma2_row_reports_the_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("l2.csv");
    let o = demp(
        &["theory", "lemma2", "--h", "-0.1", "--sigma2", "1", "--samples", "20000", "--out", file.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(file).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let min_p: f64 = row[header.iter().position(|&c| c == "min_p").unwrap()].parse().unwrap();
    assert!((min_p + 0.5355).abs() < 1e-4, "{min_p}");
    assert_eq!(&header[..6], &["h", "sigma2", "eta", "mu_mc", "mu_stderr", "P_of_eta"]);
}

#[test]
fn geometric_without_noise_is_exactly_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = demp(&["theory", "geometric", "--h", "1", "--eta", "0.1", "--c", "0", "--steps", "100"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let lyapunov: f64 = row.last().unwrap().parse().unwrap();
    assert_eq!(lyapunov, (1.0f64 - 0.1).ln());

    let o = demp(&["theory", "geometric", "--h", "1", "--eta", "2", "--c", "0.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schedule_dump_has_inclusive_fence_posts() {
    let dir = tempfile::tempdir().unwrap();
    let o = demp(&["schedule", "--kind", "one-cycle", "--peak", "1", "--steps", "100", "--warmup", "0.1"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,value");
    assert_eq!(lines.len(), 102);
    assert_eq!(lines[1], "0,0");
    assert_eq!(lines[11], "10,1");
    let last: f64 = lines[101].split(',').nth(1).unwrap().parse().unwrap();
    assert!(lines[101].starts_with("100,") && last.abs() < 1e-15);
    let o = demp(&["schedule", "--warmup", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["mnist_noise_regimes", "adam_eps_sweep", "width_sweep", "schedule_ablation", "reg_strength_sweep", "pruning_neutrality"] {
        let (_, variants) = demp_cli::load_config(&dir.join(format!("{name}.toml"))).unwrap();
        assert!(variants.len() >= 2, "{name}");
        assert!(variants.iter().all(|v| v.config.seeds == [0, 1, 2]), "{name}");
    }
}
