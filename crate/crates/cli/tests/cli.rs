use std::path::Path;
use std::process::{Command, Output};

fn haircard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haircard")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "synth_strands=120",
    "--n-cards", "6",
    "--n-textures", "3",
    "--epochs", "2",
    "--render-resolution", "32",
    "--eval-views", "4",
    "--set", "eval_resolution=32",
    "--set", "train_views=4",
    "--set", "slot_width=64",
    "--set", "slot_height=32",
    "--set", "ao_rays=4",
    "--set", "cap_resolution=64",
];

fn with_out<'a>(cmd: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut v = vec![cmd, "--out", out];
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn config_prints_every_key() {
    let o = haircard(&["config", "--n-cards", "40", "--preset", "curly"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "n_cards = 40"));
    assert!(text.lines().any(|l| l == "preset = curly"));
    assert!(text.lines().all(|l| l.contains(" = ")));
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(haircard(&["config", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(haircard(&["config", "--n-textures", "100"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "epochs\n").unwrap();
    assert_eq!(haircard(&["config", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn full_run_and_stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let o = haircard(&with_out("fit", out));
    assert_eq!(o.status.code(), Some(12), "fit before cluster");
    assert!(haircard(&with_out("cluster", out)).status.success());
    assert!(haircard(&with_out("run", out)).status.success());
    for d in ["01_cluster", "04_reduce", "06_bake", "07_cap", "08_eval"] {
        assert!(Path::new(out).join(d).is_dir(), "{d}");
    }
    let o = haircard(&with_out("eval", out));
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("psnr "));
    let mut args = with_out("preview", out);
    args.extend(["--artifact", "cluster", "--views", "2"]);
    let o = haircard(&args);
    assert!(o.status.success());
    let shown = String::from_utf8(o.stdout).unwrap();
    assert_eq!(std::fs::read_dir(shown.trim()).unwrap().count(), 2);
}

#[test]
fn locked_output_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".lock"), "1\n").unwrap();
    let o = haircard(&with_out("run", dir.path().to_str().unwrap()));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn synth_writes_loadable_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let hair = dir.path().join("wig.hair");
    let head = dir.path().join("head.obj");
    let o = haircard(&[
        "synth", "--hair", hair.to_str().unwrap(), "--head", head.to_str().unwrap(), "--strands", "80",
    ]);
    assert!(o.status.success());
    let out = dir.path().join("out");
    let mut args = with_out("fit", out.to_str().unwrap());
    args.extend(["--hair", hair.to_str().unwrap(), "--head", head.to_str().unwrap()]);
    let mut cluster = args.clone();
    cluster[0] = "cluster";
    assert!(haircard(&cluster).status.success());
    assert!(haircard(&args).status.success());
    let other = dir.path().join("other");
    let mut missing = with_out("cluster", other.to_str().unwrap());
    missing.extend(["--hair", "/nonexistent.hair"]);
    assert_eq!(haircard(&missing).status.code(), Some(10));
}
