use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[signal]
n_samples = 1200
train_count = 8
dev_count = 4
eval_count = 4

[enhancer]
n_filters = 16
kernel_len = 8
bottleneck = 8
repeats = 1
blocks_per_repeat = 2
conv_channels = 16

[training.pretrain]
max_epochs = 2
batch_size = 4

[training.finetune]
max_epochs = 1
batch_size = 4
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("cfg.toml"), format!("{TINY}\n{extra}")).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sslse"))
            .current_dir(self.dir.path())
            .env("RUST_LOG", "warn")
            .env_remove("SSLSE_SEED")
            .env("SSLSE_WORKDIR", self.path("work"))
            .arg("--config")
            .arg(self.path("cfg.toml"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn pretrain(&self) {
        self.ok(&["train"]);
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn log_epochs(path: &Path) -> Vec<(u64, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let epoch = l.split("\"epoch\":").nth(1).unwrap();
            let n: String = epoch.chars().take_while(|c| c.is_ascii_digit()).collect();
            (n.parse().unwrap(), l.to_string())
        })
        .collect()
}

#[test]
fn simulate_writes_a_reproducible_manifest() {
    let ws = Workspace::new("");
    ws.ok(&["simulate", "--count", "10", "--out", "a"]);
    ws.ok(&["simulate", "--count", "10", "--out", "b"]);
    let a = fs::read_to_string(ws.path("a/manifest.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 10);
    assert_eq!(a, fs::read_to_string(ws.path("b/manifest.jsonl")).unwrap());
    assert!(ws.path("a/noisy/syn3-000009.wav").is_file());

    let bad = ws.run(&["simulate", "--snr-lo", "5", "--snr-hi", "3"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn usage_errors_exit_with_2() {
    let ws = Workspace::new("");
    assert_eq!(code(&ws.run(&["--bogus"])), 2);
    assert_eq!(code(&ws.run(&["train", "--epochs", "x"])), 2);
    assert_eq!(code(&ws.run(&["finetune", "--loss", "sisnr"])), 2);
    fs::write(ws.path("bad.toml"), "[signal]\ntypo = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sslse"))
        .args(["--config", ws.path("bad.toml").to_str().unwrap(), "show-config"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(code(&ws.run(&["report", "--in", "missing.csv"])), 3);
}

#[test]
fn help_lists_every_flag() {
    let ws = Workspace::new("");
    let cases: [(&str, &[&str]); 7] = [
        ("simulate", &["--count", "--snr-lo", "--snr-hi", "--out"]),
        ("train", &["--epochs", "--resume", "--out"]),
        ("finetune", &["--loss", "--alpha", "--lambda", "--resume", "--init"]),
        ("enhance", &["--in", "--beta", "--out", "--checkpoint"]),
        ("evaluate", &["--betas", "--report", "--system", "--checkpoint"]),
        ("sweep", &["--alphas", "--report", "--loss", "--epochs"]),
        ("report", &["--in", "--out", "--plots"]),
    ];
    for (cmd, flags) in cases {
        let help = ws.ok(&[cmd, "--help"]);
        for f in flags.iter().chain(&["--config", "--workers", "--seed", "--work-dir"]) {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn config_dump_round_trips() {
    let ws = Workspace::new("");
    let dumped = ws.ok(&["show-config"]);
    fs::write(ws.path("dumped.toml"), &dumped).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_sslse"))
        .env_remove("SSLSE_WORKDIR")
        .env_remove("SSLSE_SEED")
        .args(["--config", ws.path("dumped.toml").to_str().unwrap(), "show-config"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(again.stdout).unwrap(), dumped);
    let seeded = ws.ok(&["--seed", "99", "show-config"]);
    assert!(seeded.starts_with("seed = 99"));
}

#[test]
fn finetune_logs_components_and_resumes() {
    let ws = Workspace::new("");
    ws.pretrain();
    let out = ws.ok(&["finetune", "--loss", "ssl_mt", "--alpha", "0.1", "--out", "ft"]);
    assert!(out.contains("best checkpoint"));
    let log = log_epochs(&ws.path("ft/train_log.jsonl"));
    assert_eq!(log.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1]);
    assert!(log.iter().all(|(_, l)| l.contains("\"ssl_mse\"") && l.contains("\"snr\"")));

    ws.ok(&["finetune", "--loss", "ssl_mt", "--alpha", "0.1", "--out", "ft", "--epochs", "2", "--resume"]);
    let log = log_epochs(&ws.path("ft/train_log.jsonl"));
    assert_eq!(log.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn asr_mt_needs_a_recognizer() {
    let ws = Workspace::new("");
    ws.pretrain();
    assert_eq!(code(&ws.run(&["finetune", "--loss", "asr_mt"])), 2);
    let with = Workspace::new("[losses.recognizer]\nseed = 1\n");
    with.pretrain();
    with.ok(&["finetune", "--loss", "asr_mt", "--out", "asr"]);
    let log = fs::read_to_string(with.path("asr/train_log.jsonl")).unwrap();
    assert!(log.contains("\"ctc\"") && log.contains("\"att\""));
}

#[test]
fn enhance_observation_adding_endpoints() {
    let ws = Workspace::new("");
    let missing = ws.run(&["enhance", "--in", "x.wav", "--out", "e"]);
    assert_eq!(code(&missing), 2);
    ws.pretrain();
    ws.ok(&["simulate", "--count", "2", "--out", "d"]);
    ws.ok(&["enhance", "--in", "d/noisy", "--beta", "1", "--out", "e1"]);
    for name in ["syn3-000000.wav", "syn3-000001.wav"] {
        assert_eq!(
            fs::read(ws.path("d/noisy").join(name)).unwrap(),
            fs::read(ws.path("e1").join(name)).unwrap()
        );
    }
    for beta in ["0", "0.1", "0.5"] {
        ws.ok(&["enhance", "--in", "d/manifest.jsonl", "--beta", beta, "--out", "m"]);
    }
    assert_eq!(code(&ws.run(&["enhance", "--in", "d/noisy", "--beta", "1.5", "--out", "e"])), 2);
}

#[test]
fn evaluate_is_deterministic_and_reports_every_beta() {
    let ws = Workspace::new("");
    ws.pretrain();
    ws.ok(&["evaluate", "--report", "r1.csv"]);
    ws.ok(&["--workers", "1", "evaluate", "--report", "r2.csv", "--no-plots"]);
    let r1 = fs::read_to_string(ws.path("r1.csv")).unwrap();
    assert_eq!(r1, fs::read_to_string(ws.path("r2.csv")).unwrap());
    let mut lines = r1.lines();
    assert_eq!(lines.next(), Some("system,beta,alpha,si_sdr_db,sd_snr_db,ssl_feature_mse,n_utterances"));
    assert_eq!(lines.count(), 4);
    assert!(ws.path("si_sdr_db_vs_beta.svg").is_file());

    ws.ok(&["evaluate", "--system", "oracle", "--betas", "0", "--report", "o.json"]);
    assert!(fs::read_to_string(ws.path("o.json")).unwrap().contains("\"si_sdr_db\": 60.0"));

    fs::write(ws.path("empty.jsonl"), "").unwrap();
    let cfg = format!("[paths]\neval_manifest = \"{}\"\n", ws.path("empty.jsonl").display());
    let empty = Workspace::new(&cfg);
    assert_eq!(code(&empty.run(&["evaluate", "--system", "passthrough"])), 2);
}

#[test]
fn sweep_defaults_to_the_seven_point_grid() {
    let ws = Workspace::new("");
    ws.pretrain();
    ws.ok(&["sweep", "--epochs", "1", "--report", "s/report.csv"]);
    let text = fs::read_to_string(ws.path("s/report.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("snr_baseline,0,,"));
    assert!(ws.path("s/si_sdr_db_vs_alpha.svg").is_file());
    let svg = fs::read_to_string(ws.path("s/si_sdr_db_vs_alpha.svg")).unwrap();
    assert_eq!(svg.matches("class=\"xtick\"").count(), 7);

    ws.ok(&["sweep", "--alphas", "0.1", "--epochs", "1", "--report", "one.csv", "--no-plots"]);
    assert_eq!(fs::read_to_string(ws.path("one.csv")).unwrap().lines().count(), 3);
}
