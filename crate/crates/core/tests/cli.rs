use std::path::Path;
use std::process::{Command, Output};

fn bmhrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bmhrl")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path) -> String {
    let text = format!(
        r#"
mode = "bmhrl"
seed = 2
dataset = "{data}"
output_dir = "{run}"

[grammar]
n_samples = 80
vocab_size = 60
jitter = 0.1

[model]
d_latent = 16
d_ff = 32
d_text = 8
heads = 2
encoder_layers = 1
decoder_layers = 1
d_goal = 4

[optimizer]
kind = "adam"
learning_rate = 0.003

[training]
warmstart_epochs = 1
hrl_epochs = 2
batch_size = 8
"#,
        data = dir.join("data.bin").display(),
        run = dir.join("run").display()
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let stdout = ok(bmhrl(&["gen-data", "--config", &cfg]));
    assert!(stdout.contains("80 samples"));

    let stdout = ok(bmhrl(&["train", "--config", &cfg]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    let log = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert!(log.starts_with("epoch,phase,train_loss"));
    assert_eq!(log.lines().count(), 4);

    let ckpt = dir.path().join("run/checkpoints/epoch_003.ckpt");
    let eval_dir = dir.path().join("eval");
    ok(bmhrl(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--split", "all", "--out", eval_dir.to_str().unwrap()]));
    let eval = std::fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert!(eval.contains("meteor") && eval.lines().count() == 2);
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let c = dir.path().join("c.bin");
    ok(bmhrl(&["gen-data", "--config", &cfg, "--seed", "5", "--out", a.to_str().unwrap()]));
    ok(bmhrl(&["gen-data", "--config", &cfg, "--seed", "5", "--out", b.to_str().unwrap()]));
    ok(bmhrl(&["gen-data", "--config", &cfg, "--seed", "6", "--out", c.to_str().unwrap()]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn compare_div_writes_tables_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cmp.toml");
    std::fs::write(&cfg, "gt = \"a man plays the guitar\"\npred = \"a man the plays guitar\"\nplot = true\n").unwrap();
    let out = dir.path().join("cmp");
    let stdout = ok(bmhrl(&["compare-div", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(stdout.contains("normalized"));
    for f in ["tokens.csv", "pairs.csv", "summary.csv", "divergence.png"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "gamma_worker = 3.0\n").unwrap();
    let out = bmhrl(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
