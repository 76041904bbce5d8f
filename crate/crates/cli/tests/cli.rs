use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cqfb_cli::config::ScenarioConfig;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cqfb(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqfb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn shipped(name: &str) -> String {
    configs_dir().join(name).to_str().unwrap().to_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"
[plant]
dim = 4
hamiltonian = "pauli_xx"
phi0 = "00"

[protocol]
design = "builtin"
gamma = 5.0

[initial_state]
kind = "random"

[run]
t_end = 2.0
samples = 21
seed = 3

[outputs]
csv = "small.csv"
"#;

#[test]
fn shipped_configs_round_trip() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ScenarioConfig::load(&path).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        cfg.build().unwrap();
    }
}

#[test]
fn fig1_passes_its_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = cqfb(&["run", &shipped("fig1.cfg")], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().last().unwrap().starts_with("plateau="));
    assert!(dir.path().join("fig1.csv").exists());
    assert!(dir.path().join("fig1_certificate.txt").exists());
}

#[test]
fn fig2_sweep_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = cqfb(&["sweep", &shipped("fig2.cfg")], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("monotone=true baseline_largest=true"));
    for g in [0, 5, 10, 15, 20] {
        assert!(dir.path().join(format!("fig2_g{g}.csv")).exists());
    }
}

#[test]
fn certify_and_discretize_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = cqfb(&["certify", &shipped("certify.cfg")], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("is_unique_density_steady: true"));
    let out = cqfb(&["discretize", &shipped("discretize.cfg"), "--cells", "32,64,128"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("convergence_midpoint.csv").exists());
}

#[test]
fn non_hermitian_hamiltonian_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(r#"hamiltonian = "pauli_xx""#, r#"hamiltonian = "S01 I""#);
    let cfg = write_config(dir.path(), "bad.cfg", &text);
    let out = cqfb(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plant.hamiltonian"));
}

#[test]
fn wrongly_sized_literal_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(r#"hamiltonian = "pauli_xx""#, "hamiltonian = [[[1.0, 0.0]]]");
    let cfg = write_config(dir.path(), "bad.cfg", &text);
    let out = cqfb(&["certify", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plant.hamiltonian: matrix literal must be 4x4"));
}

fn custom_protocol(interaction: &str, coupling: &str) -> String {
    SMALL.replace(
        "design = \"builtin\"",
        &format!(
            "design = \"custom\"\ninteraction = \"{interaction}\"\ncouplings = [\"{coupling}\"]\ncontroller_state = [1.0, 0.0]"
        ),
    )
}

#[test]
fn degenerate_protocols_fail_certification() {
    let dir = tempfile::tempdir().unwrap();
    for (name, interaction, coupling) in [("no_coupling", "X X X", "zero"), ("no_interaction", "zero", "S01")] {
        let cfg = write_config(dir.path(), &format!("{name}.cfg"), &custom_protocol(interaction, coupling));
        let out = cqfb(&["certify", &cfg], dir.path());
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert_eq!(out.status.code(), Some(1), "{name}: {stdout}");
        assert!(stdout.contains("is_unique_density_steady: false"), "{name}");
    }
}

#[test]
fn identical_inputs_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = cqfb(&["run", &cfg, "--seed", "11"], &out_dir);
        assert_eq!(out.status.code(), Some(0));
        outputs.push(std::fs::read(out_dir.join("small.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(String::from_utf8_lossy(&outputs[0]).lines().count(), 22);
}

#[test]
fn empty_gain_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let out = cqfb(&["sweep", &cfg, "--gamma", ""], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = cqfb(&["sweep", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no gains"));
}

#[test]
fn guide_example_config_builds() {
    let chapter = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src/cli.md")).unwrap();
    let block = chapter.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg = ScenarioConfig::parse(block).unwrap();
    let built = cfg.build().unwrap();
    assert_eq!(built.setup.noise.transient_events.len(), 1);
    assert!(built.t_end.is_none());
}
