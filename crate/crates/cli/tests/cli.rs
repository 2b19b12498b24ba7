use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use unlearn_forge::evalreport::sha256_hex;

const TINY: &str = r#"
seed = 5
paradigm = "contrastive"
out_dir = "out"

[data]
source = "synthetic"
classes = 3
per_class = 40
dim = 6
separation = 4.0

[split]
member_retain = 24
member_forget = 12
nonmember = 40
test = 24

[model]
hidden = [16]
embedding = 8
projector = [6]

[train]
epochs = 10
batch_size = 16

[unlearn]
epochs = 2
batch_size = 6

[attack]
n_views = 3
steps = 40
"#;

fn workspace(text: &str) -> (TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, text).unwrap();
    (dir, path)
}

/// Runs the binary from the config's directory so `out_dir` lands there.
fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn-forge"))
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn run_config(config: &Path, stage: &str) -> Output {
    let cwd = config.parent().unwrap();
    run(
        cwd,
        &[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--stage",
            stage,
        ],
    )
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_digests(root: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, sha256_hex(&fs::read(&p).unwrap())));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_run_writes_a_report_and_is_reproducible() {
    let (a, cfg_a) = workspace(TINY);
    let (b, cfg_b) = workspace(TINY);
    for cfg in [&cfg_a, &cfg_b] {
        let o = run_config(cfg, "all");
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert_eq!(stdout.lines().count(), 6, "{stdout}");
    }
    let out_a = a.path().join("out");
    assert!(out_a.join("report/manifest.json").is_file());
    assert!(out_a.join("checkpoints/unlearned.ulck").is_file());
    let da = csv_digests(&out_a);
    assert!(!da.is_empty());
    assert_eq!(da, csv_digests(&b.path().join("out")));
}

#[test]
fn gen_is_deterministic() {
    let (dir, cfg) = workspace(TINY);
    let read = || {
        csv_digests(&dir.path().join("out/data"))
            .into_iter()
            .chain([(
                "meta".into(),
                sha256_hex(&fs::read(dir.path().join("out/data/meta.json")).unwrap()),
            )])
            .collect::<Vec<_>>()
    };
    assert!(run_config(&cfg, "gen").status.success());
    let first = read();
    assert!(run_config(&cfg, "gen").status.success());
    assert_eq!(first, read());
}

#[test]
fn stages_run_one_at_a_time() {
    let (dir, cfg) = workspace(TINY);
    for stage in ["gen", "train", "attack", "unlearn", "attack", "report"] {
        let o = run_config(&cfg, stage);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    assert!(dir.path().join("out/stages/attack_after.json").is_file());
    let o = run(dir.path(), &["retrain", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/stages/retrain.json").is_file());
}

#[test]
fn unknown_key_is_a_config_error() {
    let (_dir, cfg) = workspace(&TINY.replace("[train]\n", "[train]\nlearning_rate = 0.1\n"));
    let o = run_config(&cfg, "all");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn interpolated_variant_without_pool_is_a_config_error() {
    let text = TINY.replace("[unlearn]\n", "[unlearn]\nvariant = \"interpolated_v1\"\n");
    let (_dir, cfg) = workspace(&text);
    let o = run_config(&cfg, "all");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unlearn_pool"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_three() {
    let (_dir, cfg) = workspace(&TINY.replace("[unlearn]\n", "[unlearn]\nlr = 1e300\n"));
    let o = run_config(&cfg, "all");
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("stage unlearn"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_exit_four() {
    let o = run(
        Path::new("."),
        &["run", "--config", "/nonexistent/exp.toml"],
    );
    assert_eq!(o.status.code(), Some(4));

    let (_dir, cfg) = workspace(TINY);
    let o = run_config(&cfg, "unlearn");
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("stage unlearn"), "{}", stderr(&o));
}
