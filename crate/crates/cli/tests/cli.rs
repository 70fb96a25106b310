use std::fs;
use std::path::Path;
use std::process::Command;

use fedmap_cli::report::{aggregate, cmd_report};
use fedmap_cli::run::{cmd_run, read_results, ResultRow, ALL_ROUNDS, RESULTS_HEADER};
use fedmap_cli::synth::cmd_synth;
use fedmap_cli::verify::verify_with;
use fedmap_cli::{CliError, ExperimentConfig};
use fedmap_core::data::{load_csv, summarize};
use fedmap_core::nn::{ModelWeights, Sample};

const SMALL: &str = r#"
seed = 3

[data]
test_fraction = 0.1

[data.synth]
n_users = 2
weeks = 1
samples_per_hour = 10.0
seed = 5

[fed]
T_hours = 24
R = 1
eta = 0.01
hidden = [8, 8]

[attack]
max_iters = 2000
inits_per_round = 1

[metrics]
projections = 50
verify_instances = 8
verify_max_batch = 8
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedmap"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn synth_is_reproducible_and_fully_counted() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let stats = cmd_synth(&small(), &a).unwrap();
    cmd_synth(&small(), &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = load_csv(&a).unwrap();
    assert_eq!(stats.iter().map(|s| s.total()).sum::<usize>(), ds.len());
    assert_eq!(stats, summarize(&ds, 24 * 3600));
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "user_id,cell_id,timestamp,lat,lon,rsrp");
    assert_eq!(text.lines().count(), ds.len() + 1);
}

#[test]
fn synth_without_users_fails() {
    // caught when the config is checked, before anything is generated
    let dir = tempfile::tempdir().unwrap();
    let res = ExperimentConfig::from_toml(&SMALL.replace("n_users = 2", "n_users = 0"))
        .and_then(|cfg| cmd_synth(&cfg, &dir.path().join("x.csv")).map(|_| ()));
    assert!(res.is_err());
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn one_round_one_point_gives_one_round_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_run(&small(), dir.path()).unwrap();
    let rows = read_results(&out.results).unwrap();
    let text = fs::read_to_string(&out.results).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER.join(","));
    let per_round: Vec<&ResultRow> = rows.iter().filter(|r| r.round != ALL_ROUNDS).collect();
    assert_eq!(per_round.len(), 1);
    assert_eq!(rows.len(), 2);
    let r = per_round[0];
    assert_eq!((r.scheme.as_str(), r.b.as_str(), r.e), ("fedsgd", "inf", 1));
    assert!(r.rmse.unwrap() > 0.0);
    assert!(dir.path().join("trace.csv").exists() && dir.path().join("summary.json").exists());
}

#[test]
fn batch_sweep_gives_one_group_per_value() {
    let text = format!("{SMALL}\n[sweep]\nB = [20, \"inf\"]\n");
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_run(&ExperimentConfig::from_toml(&text).unwrap(), dir.path()).unwrap();
    let groups = aggregate(&read_results(&out.results).unwrap());
    let all: Vec<_> = groups.iter().filter(|g| g.round == ALL_ROUNDS).collect();
    assert_eq!(all.len(), 2);
    assert_eq!((all[0].scheme.as_str(), all[0].b.as_str()), ("fedavg", "20"));
    assert_eq!((all[1].scheme.as_str(), all[1].b.as_str()), ("fedsgd", "inf"));
}

#[test]
fn wrong_sign_closed_form_breaks_the_identity() {
    fn flipped(w: &ModelWeights, b: &[Sample]) -> fedmap_core::Result<[f64; 2]> {
        let x = fedmap_core::attack::closed_form_xdlg(w, b)?;
        Ok([-x[0], -x[1]])
    }
    let good = verify_with(&small(), fedmap_core::attack::closed_form_xdlg).unwrap();
    assert!(good.check("closed_form_error_identity").unwrap().passed());
    let bad = verify_with(&small(), flipped).unwrap();
    assert!(!bad.check("closed_form_error_identity").unwrap().passed());
    assert!(!bad.passed());
}

fn row(scheme: &str, round: &str, rmse: Option<f64>, emd: Option<f64>) -> ResultRow {
    ResultRow {
        scheme: scheme.into(),
        round: round.into(),
        b: "inf".into(),
        e: 1,
        t_hours: 24.0,
        eps_km: None,
        num: None,
        dp_epsilon: None,
        rmse,
        emd_m: emd,
        diverged_frac: Some(0.0),
        centroid_dist_m: None,
        dlg_iters: Some(10.0),
    }
}

fn write_rows(path: &Path, rows: &[ResultRow]) {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).unwrap();
    w.write_record(RESULTS_HEADER).unwrap();
    for r in rows {
        w.serialize(r).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn report_of_an_empty_file_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("results.csv");
    write_rows(&p, &[]);
    let rep = cmd_report(&p, dir.path()).unwrap();
    assert!(rep.groups.is_empty());
    assert_eq!(rep.table.lines().count(), 1);
}

#[test]
fn report_passes_a_single_row_through() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("results.csv");
    let r = row("fedsgd", ALL_ROUNDS, Some(4.5), Some(120.0));
    write_rows(&p, std::slice::from_ref(&r));
    let rep = cmd_report(&p, dir.path()).unwrap();
    assert_eq!(rep.groups.len(), 1);
    let g = &rep.groups[0];
    assert_eq!((g.rows, g.rmse, g.emd_m, g.centroid_dist_m), (1, Some(4.5), Some(120.0), None));
    assert!(rep.json.exists() && rep.series.exists());
}

#[test]
fn report_means_match_hand_aggregation() {
    let rows = vec![
        row("fedsgd", ALL_ROUNDS, Some(2.0), Some(100.0)),
        row("fedavg", ALL_ROUNDS, Some(9.0), None),
        row("fedsgd", ALL_ROUNDS, Some(4.0), None),
        row("fedsgd", "3", Some(1.0), Some(50.0)),
        row("fedsgd", ALL_ROUNDS, None, Some(300.0)),
    ];
    let g = aggregate(&rows);
    assert_eq!(g.len(), 3);
    assert_eq!((g[0].scheme.as_str(), g[0].round.as_str(), g[0].rows), ("fedsgd", "all", 3));
    assert_eq!(g[0].rmse, Some(3.0));
    assert_eq!(g[0].emd_m, Some(200.0));
    assert_eq!((g[1].scheme.as_str(), g[1].rmse, g[1].emd_m), ("fedavg", Some(9.0), None));
    assert_eq!((g[2].round.as_str(), g[2].rows), ("3", 1));
}

#[test]
fn report_rejects_a_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("other.csv");
    fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(matches!(cmd_report(&p, dir.path()), Err(CliError::Schema(_))));
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "seed = 1\n[fed]\nbogus = 2\n");
    let s = bin().args(["run", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(s.status.code(), Some(2), "{}", String::from_utf8_lossy(&s.stderr));

    let missing = bin().args(["report"]).arg(dir.path().join("nope.csv")).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));

    let good = write_config(dir.path(), SMALL);
    let csv = dir.path().join("d.csv");
    let s = bin().args(["synth", "--config"]).arg(&good).arg("--out").arg(&csv).output().unwrap();
    assert!(s.status.success());
    assert!(String::from_utf8_lossy(&s.stdout).starts_with("wrote "));

    let s = bin().args(["--seed-override", "9", "--jobs", "2", "synth", "--config"]).arg(&good).arg("--out").arg(dir.path().join("e.csv")).output().unwrap();
    assert!(s.status.success());
    assert_ne!(fs::read(&csv).unwrap(), fs::read(dir.path().join("e.csv")).unwrap());
}
