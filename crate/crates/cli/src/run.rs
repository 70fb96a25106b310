//! `run`: sweep points times replicates, each a full online experiment.

use std::fs;
use std::path::{Path, PathBuf};

use fedmap_core::attack::{AttackResult, AttackStatus};
use fedmap_core::data::{geojson_points, load_csv, synth_trajectories, Dataset, LabeledPoint, PointKind};
use fedmap_core::defense::coordinate_variance;
use fedmap_core::fed::{run_experiment, AttackPlan, ExperimentInputs, ExperimentOutcome};
use fedmap_core::metrics::{centroid_distance, emd_sliced, random_baseline_emd, retained_locations};
use fedmap_core::model::{build_model, Standardizer};
use fedmap_core::seed;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SweepPoint};
use crate::error::CliError;

pub const RESULTS_HEADER: [&str; 13] = [
    "scheme",
    "round",
    "B",
    "E",
    "T_hours",
    "eps_km",
    "num",
    "dp_epsilon",
    "rmse",
    "emd_m",
    "diverged_frac",
    "centroid_dist_m",
    "dlg_iters",
];

/// Label used in the `round` column for the whole-experiment row.
pub const ALL_ROUNDS: &str = "all";

/// One line of the results CSV. Empty cells mean "not applicable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: String,
    pub round: String,
    #[serde(rename = "B")]
    pub b: String,
    #[serde(rename = "E")]
    pub e: usize,
    #[serde(rename = "T_hours")]
    pub t_hours: f64,
    pub eps_km: Option<f64>,
    pub num: Option<usize>,
    pub dp_epsilon: Option<f64>,
    pub rmse: Option<f64>,
    pub emd_m: Option<f64>,
    pub diverged_frac: Option<f64>,
    pub centroid_dist_m: Option<f64>,
    pub dlg_iters: Option<f64>,
}

/// One line of the per-attack trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub point: usize,
    pub replicate: usize,
    pub round: usize,
    pub ordinal: usize,
    pub attack: usize,
    pub status: String,
    pub start_e: f64,
    pub start_n: f64,
    pub x_e: f64,
    pub x_n: f64,
    pub final_loss: f64,
    pub cosine: f64,
    pub iterations: usize,
    pub observed_norm: f64,
    pub batch_n: usize,
    pub selected_n: usize,
    pub selected_var_m2: f64,
    pub centroid_e: f64,
    pub centroid_n: f64,
    pub closed_e: Option<f64>,
    pub closed_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub point: usize,
    pub replicate: usize,
    pub scheme: String,
    pub seed: u64,
    pub final_rmse: Option<f64>,
    pub emd_m: Option<f64>,
    pub random_baseline_emd_m: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub results: PathBuf,
    pub trace: PathBuf,
    pub summary: PathBuf,
    pub geojson: Vec<PathBuf>,
    pub rows: Vec<ResultRow>,
}

/// Master seed of one replicate; shared by all sweep points so that points
/// differing in one knob see the same data, split and initial model.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    seed::derive_seed(master, &[replicate as u64])
}

/// The dataset of one replicate. Synthetic data is regenerated with the
/// generator seed offset by the replicate index.
pub fn load_dataset(cfg: &ExperimentConfig, replicate: usize) -> Result<Dataset, CliError> {
    if let Some(path) = &cfg.data.csv {
        return Ok(load_csv(path)?);
    }
    let mut synth = cfg.data.synth.clone().expect("validated: one data source");
    synth.seed = synth.seed.wrapping_add(replicate as u64);
    Ok(synth_trajectories(&synth)?)
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

struct Run {
    point: SweepPoint,
    replicate: usize,
    seed: u64,
    ds: Dataset,
    outcome: ExperimentOutcome,
    random_baseline: Option<f64>,
}

fn execute(cfg: &ExperimentConfig, point: &SweepPoint, replicate: usize, ds: &Dataset) -> Result<Run, CliError> {
    let s = replicate_seed(cfg.seed, replicate);
    let fed = point.fed_config(&cfg.dp)?;
    let (train, test) = if cfg.data.test_fraction > 0.0 {
        let (a, b) = ds.split_holdout(cfg.data.test_fraction, s)?;
        (a, b.measurements)
    } else {
        (ds.clone(), Vec::new())
    };
    let st = Standardizer::fit(&train)?;
    let arch = point.fed.arch_config()?;
    let initial = build_model(&arch, seed::derive_seed(s, &[0x1A17]))?;
    let boundary = cfg.attack.boundary_for(ds.measurements.iter().map(|m| m.location()))?;
    let attack = cfg.attack.enabled.then(|| AttackPlan {
        config: cfg.attack.config,
        boundary,
        inits_per_round: cfg.attack.inits_per_round,
        closed_form: cfg.attack.closed_form,
    });
    let inputs = ExperimentInputs {
        train: &train,
        test: &test,
        standardizer: st,
        initial,
        fed,
        target_user: cfg.data.target_user,
        attack,
        seed: s,
    };
    let outcome = run_experiment(&inputs)?;
    let random_baseline = if cfg.metrics.random_baseline > 0 {
        let truth: Vec<[f64; 2]> = target_truth(&outcome);
        if truth.is_empty() {
            None
        } else {
            let mut rng = seed::rng_for(s, &[0xBA5E]);
            Some(random_baseline_emd(
                &truth,
                &boundary,
                cfg.metrics.random_baseline,
                cfg.metrics.projections,
                &mut rng,
            )?)
        }
    } else {
        None
    };
    info!(
        "point {} replicate {replicate}: {} rounds",
        point.index,
        outcome.rounds.len()
    );
    Ok(Run {
        point: point.clone(),
        replicate,
        seed: s,
        ds: ds.clone(),
        outcome,
        random_baseline,
    })
}

fn target_truth(outcome: &ExperimentOutcome) -> Vec<[f64; 2]> {
    outcome
        .rounds
        .iter()
        .filter_map(|r| r.target.as_ref())
        .flat_map(|t| t.batch.locations())
        .collect()
}

fn base_row(p: &SweepPoint, round: String) -> ResultRow {
    let selective = !matches!(p.defense.policy, crate::config::PolicyKind::Full);
    ResultRow {
        scheme: p.scheme(),
        round,
        b: p.fed.batch_size.to_string(),
        e: p.fed.epochs,
        t_hours: p.fed.t_hours,
        eps_km: selective.then_some(p.defense.eps_km),
        num: (p.defense.policy == crate::config::PolicyKind::Farthest).then_some(p.defense.num),
        dp_epsilon: p.dp_epsilon,
        rmse: None,
        emd_m: None,
        diverged_frac: None,
        centroid_dist_m: None,
        dlg_iters: None,
    }
}

struct AttackStats {
    emd: Option<f64>,
    diverged: Option<f64>,
    centroid: Option<f64>,
    iters: Option<f64>,
}

fn attack_stats(
    attacks: &[(AttackResult, [f64; 2])],
    truth: &[[f64; 2]],
    projections: usize,
    rng_seed: u64,
) -> Result<AttackStats, CliError> {
    if attacks.is_empty() {
        return Ok(AttackStats {
            emd: None,
            diverged: None,
            centroid: None,
            iters: None,
        });
    }
    let results: Vec<AttackResult> = attacks.iter().map(|(a, _)| *a).collect();
    let kept = retained_locations(&results);
    let emd = if kept.is_empty() || truth.is_empty() {
        None
    } else {
        Some(emd_sliced(truth, &kept, projections, &mut seed::rng_for(rng_seed, &[]))?.mean)
    };
    let diverged = fedmap_core::metrics::divergence_rate(&results);
    let centroid = mean(
        attacks
            .iter()
            .filter(|(a, _)| a.status != AttackStatus::DivergedOutOfBounds && a.status != AttackStatus::Degenerate)
            .map(|(a, c)| centroid_distance(a.x_dlg, *c)),
    );
    Ok(AttackStats {
        emd,
        diverged: Some(diverged),
        centroid,
        iters: mean(results.iter().map(|a| a.iterations as f64)),
    })
}

fn rows_for(run: &Run, projections: usize) -> Result<Vec<ResultRow>, CliError> {
    let mut rows = Vec::with_capacity(run.outcome.rounds.len() + 1);
    let mut all_attacks = Vec::new();
    for r in &run.outcome.rounds {
        let mut row = base_row(&run.point, r.ordinal.to_string());
        row.rmse = r.rmse;
        if let Some(t) = &r.target {
            let attacks: Vec<(AttackResult, [f64; 2])> = t.attacks.iter().map(|a| (*a, t.batch.centroid)).collect();
            let stats = attack_stats(
                &attacks,
                &t.batch.locations(),
                projections,
                seed::derive_seed(run.seed, &[0xE3D, r.round as u64]),
            )?;
            row.emd_m = stats.emd;
            row.diverged_frac = stats.diverged;
            row.centroid_dist_m = stats.centroid;
            row.dlg_iters = stats.iters;
            all_attacks.extend(attacks);
        }
        rows.push(row);
    }
    let mut all = base_row(&run.point, ALL_ROUNDS.to_string());
    all.rmse = run.outcome.rounds.last().and_then(|r| r.rmse);
    let stats = attack_stats(
        &all_attacks,
        &target_truth(&run.outcome),
        projections,
        seed::derive_seed(run.seed, &[0xE3D, u64::MAX]),
    )?;
    all.emd_m = stats.emd;
    all.diverged_frac = stats.diverged;
    all.centroid_dist_m = stats.centroid;
    all.dlg_iters = stats.iters;
    rows.push(all);
    Ok(rows)
}

fn trace_for(run: &Run) -> Vec<TraceRow> {
    let mut out = Vec::new();
    for r in &run.outcome.rounds {
        let Some(t) = &r.target else { continue };
        let var = coordinate_variance(&t.selected.locations());
        for (k, a) in t.attacks.iter().enumerate() {
            out.push(TraceRow {
                point: run.point.index,
                replicate: run.replicate,
                round: r.round,
                ordinal: r.ordinal,
                attack: k,
                status: format!("{:?}", a.status),
                start_e: a.start[0],
                start_n: a.start[1],
                x_e: a.x_dlg[0],
                x_n: a.x_dlg[1],
                final_loss: a.final_loss,
                cosine: a.cosine,
                iterations: a.iterations,
                observed_norm: t.observed_norm,
                batch_n: t.batch.len(),
                selected_n: t.selected.len(),
                selected_var_m2: var,
                centroid_e: t.batch.centroid[0],
                centroid_n: t.batch.centroid[1],
                closed_e: t.closed_form.map(|c| c[0]),
                closed_n: t.closed_form.map(|c| c[1]),
            });
        }
    }
    out
}

fn geojson_for(run: &Run) -> serde_json::Value {
    let mut pts = Vec::new();
    let selective = !matches!(run.point.defense.policy, crate::config::PolicyKind::Full);
    for r in &run.outcome.rounds {
        let Some(t) = &r.target else { continue };
        pts.extend(t.batch.locations().into_iter().map(|location| LabeledPoint {
            location,
            kind: PointKind::True,
            round: r.ordinal,
        }));
        if selective {
            pts.extend(t.selected.locations().into_iter().map(|location| LabeledPoint {
                location,
                kind: PointKind::Selected,
                round: r.ordinal,
            }));
        }
        pts.extend(retained_locations(&t.attacks).into_iter().map(|location| LabeledPoint {
            location,
            kind: PointKind::Reconstructed,
            round: r.ordinal,
        }));
    }
    geojson_points(&run.ds, &pts)
}

/// Runs every sweep point and replicate and writes `results.csv`,
/// `trace.csv`, `summary.json` and one GeoJSON per sweep point (replicate 0)
/// under `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let points = cfg.sweep_points();
    let datasets: Vec<Dataset> = (0..cfg.sweep.replicates)
        .map(|r| load_dataset(cfg, r))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..cfg.sweep.replicates).map(move |r| (p, r)))
        .collect();
    info!("{} sweep points x {} replicates", points.len(), cfg.sweep.replicates);
    let runs: Vec<Run> = jobs
        .par_iter()
        .map(|&(p, r)| execute(cfg, &points[p], r, &datasets[r]))
        .collect::<Result<_, _>>()?;

    let results = out.join("results.csv");
    let trace = out.join("trace.csv");
    let summary = out.join("summary.json");
    let mut rw = csv::WriterBuilder::new().has_headers(false).from_path(&results)?;
    rw.write_record(RESULTS_HEADER)?;
    let mut tw = csv::Writer::from_path(&trace)?;
    let mut all_rows = Vec::new();
    let mut records = Vec::new();
    let mut geo = Vec::new();
    for run in &runs {
        let rows = rows_for(run, cfg.metrics.projections)?;
        for row in &rows {
            rw.serialize(row)?;
        }
        for t in trace_for(run) {
            tw.serialize(t)?;
        }
        let all = rows.last().expect("summary row");
        records.push(RunRecord {
            point: run.point.index,
            replicate: run.replicate,
            scheme: run.point.scheme(),
            seed: run.seed,
            final_rmse: all.rmse,
            emd_m: all.emd_m,
            random_baseline_emd_m: run.random_baseline,
        });
        if run.replicate == 0 {
            let dir = out.join("geojson");
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("point_{:03}.geojson", run.point.index));
            fs::write(&path, serde_json::to_string_pretty(&geojson_for(run)).expect("json"))?;
            geo.push(path);
        }
        all_rows.extend(rows);
    }
    rw.flush()?;
    tw.flush()?;
    fs::write(&summary, serde_json::to_string_pretty(&records).expect("json"))?;
    Ok(RunOutput {
        results,
        trace,
        summary,
        geojson: geo,
        rows: all_rows,
    })
}

/// Reads a results CSV back, checking the header.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(CliError::Schema(format!(
            "{}: expected header {}, got {}",
            path.display(),
            RESULTS_HEADER.join(","),
            header.join(",")
        )));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
