use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_adiaprep");

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("ADIAPREP_OUT")
        .env_remove("ADIAPREP_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

const ISING_2: &str = r#"
[lattice]
kind = "chain"
sites = 2

[model]
mode = "thermal"
beta = 0.9
terms = [{ pauli = { ZZ = 0.8, ZI = 0.35, IZ = 0.35 } }]
"#;

#[test]
fn thermal_state_matches_gibbs_state() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", ISING_2);
    let o = run("state", &cfg, tmp.path(), &[]);
    assert_ok(&o);
    let v = read_json(tmp.path().join("state.json"));
    assert!(v["trace_distance"].as_f64().unwrap() <= 1e-10);
    assert!((v["target_norm"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(v["parent"]["ff_residual"].as_f64().unwrap() < 1e-9);
    assert_eq!(v["maximally_mixed"], Value::Bool(false));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn infinite_temperature_state_is_maximally_mixed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &ISING_2.replace("beta = 0.9", "beta = 0.0"));
    assert_ok(&run("state", &cfg, tmp.path(), &[]));
    let v = read_json(tmp.path().join("state.json"));
    assert_eq!(v["maximally_mixed"], Value::Bool(true));
    let rho = v["reduced_density"].as_array().unwrap();
    assert_eq!(rho.len(), 4);
    assert!((rho[2][2][0].as_f64().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn malformed_config_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    for (name, text) in [
        ("syntax.toml", "[lattice\nkind = chain"),
        ("unknown.toml", "[lattice]\nkind = \"chain\"\nsites = 2\nbogus = 1\n"),
        ("terms.toml", &ISING_2.replace("ZZ = 0.8,", "ZZZ = 0.8,")),
        ("huge.toml", &ISING_2.replace("sites = 2", "sites = 8")),
    ] {
        let cfg = write_config(tmp.path(), name, text);
        let o = run("state", &cfg, tmp.path(), &[]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        let err = stderr_json(&o);
        assert_eq!(err["error"], "config", "{name}");
        assert_eq!(err["exit_code"], 2);
    }
    let o = run("state", &tmp.path().join("missing.toml"), tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_is_monotone_and_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs_dir().join("single_qubit_sweep.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_ok(&run("sweep", &cfg, &a, &[]));
    assert_ok(&run("sweep", &cfg, &b, &["--threads", "1"]));
    let csv_a = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("sweep.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(!text.contains('\r'));
    let errors: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errors.len(), 4);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn single_runtime_gives_single_row() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("single_qubit_sweep.toml")).unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &text.replace("taus = [5.0, 10.0, 20.0, 40.0]", "taus = [8.0]"));
    assert_ok(&run("sweep", &cfg, tmp.path(), &[]));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn unordered_runtimes_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("single_qubit_sweep.toml")).unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &text.replace("taus = [5.0, 10.0, 20.0, 40.0]", "taus = [10.0, 5.0]"));
    assert_eq!(run("sweep", &cfg, tmp.path(), &[]).status.code(), Some(2));
}

const CLASSICAL_CHAIN: &str = r#"
[lattice]
kind = "chain"
sites = 3

[model]
mode = "thermal"
beta = 0.4
terms = [{ pauli = { ZZ = 0.5, ZI = 0.2 } }]

[run]
r = [1, 2]
"#;

/// Supports of the 3-site chain touching pair `μ` (system vertex `2μ`).
fn touches(support: usize, anchor: usize) -> bool {
    support == anchor || support + 1 == anchor
}

fn cluster_rows(path: PathBuf) -> Vec<(usize, Vec<usize>, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let omega = f[1].split_whitespace().map(|k| k.parse().unwrap()).collect();
            (f[0].parse().unwrap(), omega, f[3].parse().unwrap())
        })
        .collect()
}

#[test]
fn commuting_cluster_terms_stay_local() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CLASSICAL_CHAIN);
    assert_ok(&run("cluster", &cfg, tmp.path(), &[]));
    let rows = cluster_rows(tmp.path().join("cluster_r2.csv"));
    let mut far = 0;
    for (anchor, omega, norm) in rows {
        if omega.iter().any(|&k| !touches(k, anchor)) {
            far += 1;
            assert!(norm <= 1e-10, "anchor {anchor} omega {omega:?}: {norm}");
        }
    }
    assert!(far > 0);
}

#[test]
fn zero_temperature_cluster_terms_vanish() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &CLASSICAL_CHAIN.replace("beta = 0.4", "beta = 0.0"));
    assert_ok(&run("cluster", &cfg, tmp.path(), &[]));
    for (_, omega, norm) in cluster_rows(tmp.path().join("cluster_r2.csv")) {
        if !omega.is_empty() {
            assert!(norm == 0.0, "{omega:?}: {norm}");
        }
    }
}

#[test]
fn transverse_field_certificates_hold() {
    let tmp = TempDir::new().unwrap();
    let o = run("cluster", &configs_dir().join("tfi_cluster.toml"), tmp.path(), &[]);
    assert_ok(&o);
    let v = read_json(tmp.path().join("cluster.json"));
    let mut checked = 0;
    for cert in v["certificates"].as_array().unwrap() {
        for a in cert["anchors"].as_array().unwrap() {
            if let Some(ok) = a["within_bound"].as_bool() {
                assert!(ok, "{a}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 2);
    for row in v["gap_table"].as_array().unwrap() {
        assert!(row["gap"].as_f64().unwrap() >= 0.5);
    }
    let prep = &v["preparation"];
    assert!(prep["infidelity"].as_f64().unwrap() <= 1e-2);
    assert_eq!(prep["forced"], Value::Bool(true));
}

#[test]
fn uncertified_preparation_is_refused() {
    let tmp = TempDir::new().unwrap();
    let text = std::fs::read_to_string(configs_dir().join("tfi_cluster.toml")).unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &text.replace("allow_uncertified = true", ""));
    let o = run("cluster", &cfg, tmp.path(), &[]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"], "certification_refused");
}

#[test]
fn mcmc_correspondence_holds() {
    let tmp = TempDir::new().unwrap();
    assert_ok(&run("mcmc", &configs_dir().join("mcmc_triangle.toml"), tmp.path(), &[]));
    let v = read_json(tmp.path().join("mcmc.json"));
    for r in v["runs"].as_array().unwrap() {
        assert!(r["spectral_mismatch"].as_f64().unwrap() <= 1e-9);
        assert!(r["ground_fidelity"].as_f64().unwrap() >= 1.0 - 1e-10);
    }

    let single = "[classical]\nn_spins = 1\nfields = [0.7]\nbetas = [0.0]\n";
    let cfg = write_config(tmp.path(), "one.toml", single);
    assert_ok(&run("mcmc", &cfg, tmp.path(), &[]));
    let v = read_json(tmp.path().join("mcmc.json"));
    // zero up to the rounding of the non-symmetric eigensolver
    assert!(v["runs"][0]["spectral_mismatch"].as_f64().unwrap() <= 8.0 * f64::EPSILON);
}

#[test]
fn seed_selects_the_random_model() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs_dir().join("random_peps.toml");
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    assert_ok(&run("state", &cfg, &dirs[0], &[]));
    assert_ok(&run("state", &cfg, &dirs[1], &[]));
    assert_ok(&run("state", &cfg, &dirs[2], &["--seed", "8"]));
    let read = |d: &PathBuf| std::fs::read(d.join("state.json")).unwrap();
    assert_eq!(read(&dirs[0]), read(&dirs[1]));
    let (a, c) = (read_json(dirs[0].join("state.json")), read_json(dirs[2].join("state.json")));
    assert_eq!(c["seed"], 8);
    assert_ne!(a["q0"], c["q0"]);
    assert!(a["parent"]["ff_residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", ISING_2);
    let target = tmp.path().join("from_env");
    let o = Command::new(BIN)
        .args(["state", "--config"])
        .arg(&cfg)
        .env("ADIAPREP_OUT", &target)
        .env("ADIAPREP_THREADS", "2")
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(target.join("state.json").exists());
}

#[test]
fn shipped_configs_run() {
    let tmp = TempDir::new().unwrap();
    for (cmd, name) in [("state", "thermal_ising.toml"), ("sweep", "random_peps.toml")] {
        assert_ok(&run(cmd, &configs_dir().join(name), tmp.path(), &[]));
    }
}
