use std::path::Path;
use std::process::{Command, Output};

fn divacq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divacq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let text = format!(
        "synthetic_n = 80\nsynthetic_seed = 3\nresolution = 16\nd_z = 4\nk = 5\nd_v = 64\n\
         target_size = 40\nn_rep = 5\nmaster_seed = 11\noutput_dir = {:?}\n{extra}",
        out.to_str().unwrap()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(code(&divacq(&[])), 2);
    assert_eq!(code(&divacq(&["run"])), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "tau_one = 0.5\n");
    let o = divacq(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tau_one"), "{}", stderr(&o));
}

#[test]
fn invalid_acquisition_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "tau2 = 0.5\n");
    assert_eq!(
        code(&divacq(&["run", "--config", cfg.to_str().unwrap()])),
        2
    );
}

#[test]
fn zero_shapes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let pack = dir.path().join("c.shpb");
    let o = divacq(&["gen-corpus", "--n", "0", "--out", pack.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_pack_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let pack = dir.path().join("bad.shpb");
    std::fs::write(&pack, b"SHPBxx").unwrap();
    let out = dir.path().join("z.csv");
    let o = divacq(&[
        "descriptor",
        "--pack",
        pack.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn file_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let o = divacq(&[
        "gen-corpus",
        "--n",
        "30",
        "--seed",
        "2",
        "--resolution",
        "16",
        "--out",
        &p("c.shpb"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).contains("n = 30"),
        "resolved settings are printed"
    );
    let params = read(&dir.path().join("c.params.csv"));
    assert_eq!(params.lines().count(), 31);
    assert!(params.starts_with("id,t0,t1,t2,t3\n"));

    let o = divacq(&[
        "descriptor",
        "--pack",
        &p("c.shpb"),
        "--d-z",
        "3",
        "--out",
        &p("z.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let z = read(&dir.path().join("z.csv"));
    assert!(z.lines().any(|l| l.starts_with("id,z0,z1,z2")));

    // re-importing the written latents is accepted unchanged
    let o = divacq(&[
        "descriptor",
        "--pack",
        &p("c.shpb"),
        "--import",
        &p("z.csv"),
        "--out",
        &p("z2.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = divacq(&[
        "evaluate",
        "--pack",
        &p("c.shpb"),
        "--ids",
        "0,4,7",
        "--out",
        &p("props.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let props = read(&dir.path().join("props.csv"));
    let ids: Vec<&str> = props
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids, ["0", "4", "7"]);

    let o = divacq(&[
        "evaluate",
        "--pack",
        &p("c.shpb"),
        "--ids",
        "99",
        "--out",
        &p("x.csv"),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = small_config(a.path(), "");
    let cfg_b = small_config(b.path(), "");

    let o = divacq(&["run", "--config", cfg_a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("master_seed = 11"));

    // the second run stops early and resumes from its checkpoint
    let o = divacq(&[
        "run",
        "--config",
        cfg_b.to_str().unwrap(),
        "--max-iterations",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let partial = read(&b.path().join("out/manifest.csv"));
    assert_eq!(partial.lines().count(), 1 + 15);
    let o = divacq(&["run", "--config", cfg_b.to_str().unwrap(), "--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    for file in ["manifest.csv", "history.csv"] {
        let x = read(&a.path().join("out").join(file));
        let y = read(&b.path().join("out").join(file));
        assert_eq!(x, y, "{file} differs");
    }
    let manifest = read(&a.path().join("out/manifest.csv"));
    assert!(manifest.starts_with("rank,id,C11,C12,C22,C33,q\n"));
    assert_eq!(manifest.lines().count(), 41);
    let history = read(&a.path().join("out/history.csv"));
    assert!(history.starts_with("iter,stage,n_selected,residual,gain_shape,gain_property\n"));

    // export rebuilds the same files from the checkpoint
    let exp = a.path().join("export");
    let o = divacq(&[
        "export",
        "--checkpoint",
        a.path().join("out/checkpoint.json").to_str().unwrap(),
        "--out-dir",
        exp.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(&exp.join("manifest.csv")), manifest);
    assert_eq!(read(&exp.join("history.csv")), history);
}

#[test]
fn seed_flag_overrides_config() {
    let a = tempfile::tempdir().unwrap();
    let cfg = small_config(a.path(), "");
    let o = divacq(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "99",
        "--max-iterations",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("master_seed = 99"));
    assert!(read(&a.path().join("out/config.toml")).contains("master_seed = 99"));
}

#[test]
fn resume_with_changed_config_is_refused() {
    let a = tempfile::tempdir().unwrap();
    let cfg = small_config(a.path(), "");
    let o = divacq(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--max-iterations",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = divacq(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--resume",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn metrics_of_random_subsets_are_near_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let o = divacq(&[
        "gen-corpus",
        "--n",
        "400",
        "--seed",
        "5",
        "--resolution",
        "16",
        "--out",
        &p("c.shpb"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = divacq(&[
        "descriptor",
        "--pack",
        &p("c.shpb"),
        "--d-z",
        "4",
        "--out",
        &p("z.csv"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // every seventh shape: unrelated to the generator's stream
    let mut manifest = String::from("rank,id\n");
    for (rank, id) in (0..400).step_by(7).enumerate() {
        manifest.push_str(&format!("{rank},{id}\n"));
    }
    std::fs::write(dir.path().join("m.csv"), manifest).unwrap();
    let o = divacq(&[
        "metrics",
        "--manifest",
        &p("m.csv"),
        "--latents",
        &p("z.csv"),
        "--n-rep",
        "30",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let gain: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("gain_shape = "))
        .expect("gain line")
        .parse()
        .unwrap();
    assert!((gain - 1.0).abs() < 0.1, "gain {gain}");

    // property gain needs the property columns
    let o = divacq(&["evaluate", "--pack", &p("c.shpb"), "--out", &p("props.csv")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = divacq(&[
        "metrics",
        "--manifest",
        &p("m.csv"),
        "--latents",
        &p("z.csv"),
        "--properties",
        &p("props.csv"),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("C11"), "{}", stderr(&o));
}
