use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rwre(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwre"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const TWO_POINT: &str = "kind = \"two_point\"\np_low = 0.25\np_high = 0.75\nq = 0.3\nepsilon0 = 0.25\nmaster_seed = 5\n";

#[test]
fn help_and_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&rwre(&["--help"], dir.path())), 0);
    assert_eq!(code(&rwre(&["check-env", "--no-such-flag"], dir.path())), 3);
    assert_eq!(code(&rwre(&["no-such-command"], dir.path())), 3);
    assert_eq!(code(&rwre(&["collide", "--starts", "0,1"], dir.path())), 3);
    assert_eq!(code(&rwre(&["collide", "--d", "3", "--starts", "0,2"], dir.path())), 3);
    let bad = write_config(dir.path(), "kind = \"two_point\"\nbogus = 1\n");
    assert_eq!(code(&rwre(&["--config", &bad, "check-env"], dir.path())), 3);
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&rwre(&["--config", missing.to_str().unwrap(), "check-env"], dir.path())), 3);
}

#[test]
fn check_env_reports_kappa() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("{TWO_POINT}\n[check_env]\npath_window = [-10, 100]\n"));
    let o = rwre(&["--config", &cfg, "check-env"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("check_env.json")).unwrap()).unwrap();
    let kappa = report["assumptions"]["moments"]["kappa"].as_f64().unwrap();
    assert!((kappa - (7.0f64 / 3.0).ln() / 3f64.ln()).abs() < 1e-12);
    assert_eq!(report["seed"], 5);
    assert!(report["config_hash"].as_str().unwrap().len() == 64);
    let csv = fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert!(csv.starts_with('#'));
    assert_eq!(csv.lines().count(), 2 + 111);

    let heavy = write_config(dir.path(), &TWO_POINT.replace("q = 0.3", "q = 0.2"));
    assert_eq!(code(&rwre(&["--config", &heavy, "check-env"], dir.path())), 1);
}

#[test]
fn small_collide_run() {
    let dir = TempDir::new().unwrap();
    let o = rwre(&["--seed", "3", "--jobs", "2", "collide", "--d", "2", "--horizon", "20000", "--seeds", "3"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("collide.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("seed,env_seed,n_meetings"));
    assert_eq!(rows.len(), 4);
    for k in 0..3 {
        let f = dir.path().join("collide").join(format!("seed_{k:04}.json"));
        let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(f).unwrap()).unwrap();
        assert_eq!(run["starts"], serde_json::json!([0, 2]));
        assert_eq!(run["horizon"], 20000);
    }
}

#[test]
fn valleys_and_verify_with_a_small_budget() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "{TWO_POINT}\n[valleys]\ni_max = 4\n\n[verify]\nsweep_seeds = 2\ntriples_per_seed = 20\nmc_configs = 2\n\
         exit_prob_runs = 2000\nexit_time_runs = 500\ngolosov_runs = 1000\nld_samples = 20000\ntail_samples = 50000\n\
         conditioned_samples = 300\ncalibration_runs = 200\ncoupling_runs = 20\n"
    );
    let cfg = write_config(dir.path(), &body);
    let o = rwre(&["--config", &cfg, "valleys"], dir.path());
    assert!(matches!(code(&o), 0 | 1), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("valleys.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);

    let o = rwre(&["--config", &cfg, "verify"], dir.path());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["hard_failures"], 0);
    assert_eq!(code(&o), report["exit_code"].as_i64().unwrap() as i32);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
