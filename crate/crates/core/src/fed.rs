//! Online federated rounds with an honest-but-curious server attacking one client.
//!
//! Time is cut into intervals of length `T`; in round `t` each participating
//! client trains on the measurements it collected during interval `t` (or on
//! everything so far in cumulative mode), starting from the broadcast global
//! model. The server averages the returned models by data size and, for the
//! designated target, runs the reconstruction attack on the target's update.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, warn};
use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{dlg_attack, init_dummy, AttackConfig, AttackResult, BiasTerms, Boundary};
use crate::data::{interval_index, Dataset, Measurement};
use crate::defense::{self, gaussian_mechanism, DpConfig, SelectionOptions, SelectionPolicy};
use crate::error::{FedmapError, Result};
use crate::model::{rmse_of, Standardizer};
use crate::nn::{sgd_step, weight_gradient, DropoutMode, GradientVector, ModelWeights, Sample};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    /// Round interval `T` in seconds.
    pub interval_s: i64,
    /// Number of rounds `R`; all non-empty intervals when absent.
    pub rounds: Option<usize>,
    /// Mini-batch size `B`; the whole local batch when absent.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    /// Fraction `C` of the round's clients that participate.
    pub client_fraction: f64,
    pub eta: f64,
    pub selection: SelectionPolicy,
    pub selection_options: SelectionOptions,
    pub dp: Option<DpConfig>,
    /// Train on the union of all data seen so far instead of the latest interval.
    pub cumulative: bool,
    /// Every round reuses each client's first batch.
    pub fixed_batch: bool,
    /// Always include the target when sampling clients.
    pub force_target: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            interval_s: 7 * 86_400,
            rounds: None,
            batch_size: None,
            epochs: 1,
            client_fraction: 1.0,
            eta: 0.001,
            selection: SelectionPolicy::Full,
            selection_options: SelectionOptions::default(),
            dp: None,
            cumulative: false,
            fixed_batch: false,
            force_target: true,
        }
    }
}

impl FedConfig {
    pub fn is_fedsgd(&self) -> bool {
        self.batch_size.is_none() && self.epochs == 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FedmapError::Config(m.into()));
        if self.interval_s <= 0 {
            return bad("round interval must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("mini-batch size must be at least 1");
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return bad("client fraction must lie in (0, 1]");
        }
        if !(self.eta > 0.0) {
            return bad("learning rate must be positive");
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        match self.selection {
            SelectionPolicy::Diverse { eps_km }
            | SelectionPolicy::Farthest { eps_km, .. }
            | SelectionPolicy::RandomMatched { eps_km }
                if !(eps_km > 0.0) => {
                bad("selection eps must be positive")
            }
            SelectionPolicy::Farthest { num: 0, .. } => bad("farthest batch needs num >= 1"),
            _ => Ok(()),
        }
    }
}

/// One client's data for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBatch {
    pub round: usize,
    pub user: u32,
    pub measurements: Vec<Measurement>,
    pub centroid: [f64; 2],
    /// Population variance per coordinate.
    pub variance: [f64; 2],
}

impl LocalBatch {
    pub fn new(round: usize, user: u32, measurements: Vec<Measurement>) -> Result<Self> {
        if measurements.is_empty() {
            return Err(FedmapError::Empty(format!("batch of user {user} in round {round}")));
        }
        let locs: Vec<[f64; 2]> = measurements.iter().map(Measurement::location).collect();
        let n = locs.len() as f64;
        let centroid = defense::centroid(&locs, 0..locs.len());
        let variance = [
            locs.iter().map(|p| (p[0] - centroid[0]).powi(2)).sum::<f64>() / n,
            locs.iter().map(|p| (p[1] - centroid[1]).powi(2)).sum::<f64>() / n,
        ];
        Ok(Self {
            round,
            user,
            measurements,
            centroid,
            variance,
        })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn locations(&self) -> Vec<[f64; 2]> {
        self.measurements.iter().map(Measurement::location).collect()
    }

    /// The sub-batch a selection policy keeps, in original order.
    pub fn select(&self, policy: SelectionPolicy, opts: SelectionOptions) -> Result<LocalBatch> {
        if policy == SelectionPolicy::Full {
            return Ok(self.clone());
        }
        let seed = seed::derive_seed(0x5E1, &[self.round as u64, self.user as u64]);
        let idx = defense::select(&self.locations(), policy, opts, seed);
        if idx.is_empty() {
            return Err(FedmapError::SelectionEmpty {
                round: self.round,
                user: self.user,
            });
        }
        let mut idx = idx;
        idx.sort_unstable();
        LocalBatch::new(self.round, self.user, idx.iter().map(|&i| self.measurements[i].clone()).collect())
    }
}

/// Per-user batches keyed by interval index, intervals anchored at the
/// dataset's earliest timestamp. Empty intervals produce no batch.
pub fn partition_rounds(ds: &Dataset, interval_s: i64) -> BTreeMap<u32, Vec<LocalBatch>> {
    let mut out: BTreeMap<u32, Vec<LocalBatch>> = BTreeMap::new();
    let Some(origin) = ds.measurements.iter().map(|m| m.timestamp).min() else {
        return out;
    };
    let mut groups: BTreeMap<(u32, usize), Vec<Measurement>> = BTreeMap::new();
    for m in &ds.measurements {
        groups
            .entry((m.user_id, interval_index(m.timestamp, origin, interval_s)))
            .or_default()
            .push(m.clone());
    }
    for ((user, t), ms) in groups {
        out.entry(user)
            .or_default()
            .push(LocalBatch::new(t, user, ms).expect("grouped batches are non-empty"));
    }
    out
}

/// Result of one client's local training.
#[derive(Debug, Clone)]
pub struct UserUpdate {
    pub user: u32,
    pub weights: ModelWeights,
    /// Samples actually trained on.
    pub n: usize,
    pub steps: usize,
}

/// Local epochs of mini-batch gradient descent from `start` on standardized samples.
pub fn local_train(start: &ModelWeights, samples: &[Sample], cfg: &FedConfig, seed: u64) -> Result<(ModelWeights, usize)> {
    if samples.is_empty() {
        return Err(FedmapError::Precondition("local training on an empty batch".into()));
    }
    let b = cfg.batch_size.unwrap_or(samples.len()).min(samples.len());
    let mut w = start.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut steps = 0;
    let mut mb = Vec::with_capacity(b);
    for epoch in 0..cfg.epochs {
        if b < samples.len() {
            order.shuffle(&mut seed::rng_for(seed, &[0xE0, epoch as u64]));
        }
        for (k, chunk) in order.chunks(b).enumerate() {
            mb.clear();
            mb.extend(chunk.iter().map(|&i| samples[i]));
            let mode = DropoutMode::Train {
                seed: seed::derive_seed(seed, &[0xD0, epoch as u64, k as u64]),
            };
            let g = weight_gradient(&w, &mb, mode)?;
            w = sgd_step(&w, &g, cfg.eta)?;
            steps += 1;
        }
    }
    Ok((w, steps))
}

/// Selection, local training, then optional clipping and noise on the
/// transmitted update.
pub fn user_update(
    start: &ModelWeights,
    batch: &LocalBatch,
    cfg: &FedConfig,
    st: &Standardizer,
    seed: u64,
) -> Result<UserUpdate> {
    let selected = batch.select(cfg.selection, cfg.selection_options)?;
    let samples = st.samples(&selected.measurements);
    let (mut w, steps) = local_train(start, &samples, cfg, seed)?;
    if let Some(dp) = &cfg.dp {
        // the transmitted update itself is clipped and noised
        let delta = observed_gradient(&w, start)?;
        let noised = gaussian_mechanism(&delta, dp, &mut seed::rng_for(seed, &[0xDB]));
        let flat = start.flat().iter().zip(noised.flat()).map(|(s, d)| s + d).collect();
        w = start.with_flat(flat)?;
    }
    Ok(UserUpdate {
        user: batch.user,
        weights: w,
        n: selected.len(),
        steps,
    })
}

/// Data-size weighted average of client models.
pub fn server_round(updates: &[(ModelWeights, usize)]) -> Result<ModelWeights> {
    let Some((first, _)) = updates.first() else {
        return Err(FedmapError::Empty("no client updates".into()));
    };
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FedmapError::Precondition("all client data sizes are zero".into()));
    }
    let mut acc = vec![0.0; first.len()];
    for (w, n) in updates {
        first.check_same_shape(w.arch(), w.len())?;
        let c = *n as f64 / total as f64;
        for (a, v) in acc.iter_mut().zip(w.flat()) {
            *a += c * v;
        }
    }
    first.with_flat(acc)
}

/// `w_end - w_start`: what the server sees of a client's round.
pub fn observed_gradient(w_end: &ModelWeights, w_start: &ModelWeights) -> Result<GradientVector> {
    w_start.check_same_shape(w_end.arch(), w_end.len())?;
    let flat = w_end.flat().iter().zip(w_start.flat()).map(|(e, s)| e - s).collect();
    GradientVector::from_flat(w_start.arch(), flat)
}

/// Attacker-side knobs for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub config: AttackConfig,
    pub boundary: Boundary,
    /// Independent initializations per round.
    pub inits_per_round: usize,
    /// Also evaluate the closed-form location on the trained batch.
    pub closed_form: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentInputs<'a> {
    pub train: &'a Dataset,
    /// Held-out measurements for RMSE; skipped when empty.
    pub test: &'a [Measurement],
    pub standardizer: Standardizer,
    pub initial: ModelWeights,
    pub fed: FedConfig,
    pub target_user: u32,
    pub attack: Option<AttackPlan>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct UserRound {
    pub user: u32,
    pub n_raw: usize,
    pub n_used: usize,
    pub steps: usize,
    pub update_norm: f64,
    /// Norm of the displacement from this client's own previous local model.
    pub from_previous_local_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TargetRound {
    pub user: u32,
    pub batch: LocalBatch,
    pub selected: LocalBatch,
    pub observed_norm: f64,
    pub attacks: Vec<AttackResult>,
    /// Closed-form location (meters) at the broadcast model, when requested and defined.
    pub closed_form: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Interval index of the round.
    pub round: usize,
    pub ordinal: usize,
    pub users: Vec<UserRound>,
    pub target: Option<TargetRound>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rounds: Vec<RoundRecord>,
    pub final_weights: ModelWeights,
}

fn batches_for_round(
    parts: &BTreeMap<u32, Vec<LocalBatch>>,
    round: usize,
    cfg: &FedConfig,
) -> Result<BTreeMap<u32, LocalBatch>> {
    let mut out = BTreeMap::new();
    for (&user, batches) in parts {
        if cfg.fixed_batch {
            if let Some(b) = batches.first() {
                let mut b = b.clone();
                b.round = round;
                out.insert(user, b);
            }
        } else if cfg.cumulative {
            let ms: Vec<Measurement> = batches
                .iter()
                .take_while(|b| b.round <= round)
                .flat_map(|b| b.measurements.iter().cloned())
                .collect();
            if !ms.is_empty() && batches.iter().any(|b| b.round <= round) {
                out.insert(user, LocalBatch::new(round, user, ms)?);
            }
        } else if let Some(b) = batches.iter().find(|b| b.round == round) {
            out.insert(user, b.clone());
        }
    }
    Ok(out)
}

/// The full online loop.
pub fn run_experiment(inputs: &ExperimentInputs) -> Result<ExperimentOutcome> {
    let cfg = &inputs.fed;
    cfg.validate()?;
    let st = &inputs.standardizer;
    let parts = partition_rounds(inputs.train, cfg.interval_s);
    if parts.is_empty() {
        return Err(FedmapError::Empty("no training data".into()));
    }
    let round_ids: Vec<usize> = if cfg.fixed_batch {
        (0..cfg.rounds.unwrap_or(1)).collect()
    } else {
        let all: BTreeSet<usize> = parts.values().flatten().map(|b| b.round).collect();
        all.into_iter().take(cfg.rounds.unwrap_or(usize::MAX)).collect()
    };

    let mut global = inputs.initial.clone();
    let mut last_local: BTreeMap<u32, ModelWeights> = BTreeMap::new();
    let mut previous_x: Option<[f64; 2]> = None;
    let mut records = Vec::with_capacity(round_ids.len());

    for (ordinal, &t) in round_ids.iter().enumerate() {
        let batches = batches_for_round(&parts, t, cfg)?;
        let mut users: Vec<u32> = batches.keys().copied().collect();
        let k = ((cfg.client_fraction * users.len() as f64).round() as usize).clamp(1, users.len().max(1));
        if k < users.len() {
            let mut rng = seed::rng_for(inputs.seed, &[0xC1, t as u64]);
            let has_target = cfg.force_target && users.contains(&inputs.target_user);
            let pool: Vec<u32> = users
                .iter()
                .copied()
                .filter(|&u| !has_target || u != inputs.target_user)
                .collect();
            let take = if has_target { k - 1 } else { k };
            let mut chosen: Vec<u32> = index::sample(&mut rng, pool.len(), take.min(pool.len()))
                .into_iter()
                .map(|i| pool[i])
                .collect();
            if has_target {
                chosen.push(inputs.target_user);
            }
            chosen.sort_unstable();
            users = chosen;
        }

        let updates: Vec<(u32, Result<UserUpdate>)> = users
            .par_iter()
            .map(|&u| {
                let s = seed::derive_seed(inputs.seed, &[0x55, t as u64, u as u64]);
                (u, user_update(&global, &batches[&u], cfg, st, s))
            })
            .collect();

        let mut kept: Vec<UserUpdate> = Vec::with_capacity(updates.len());
        for (u, r) in updates {
            match r {
                Ok(up) => kept.push(up),
                Err(FedmapError::SelectionEmpty { round, user }) => {
                    warn!("round {round}: user {user} selected no data, skipping");
                }
                Err(e) => return Err(e),
            }
            debug!("round {t}: user {u} trained");
        }
        if kept.is_empty() {
            continue;
        }

        let mut user_rows = Vec::with_capacity(kept.len());
        let mut target = None;
        for up in &kept {
            let obs = observed_gradient(&up.weights, &global)?;
            let from_prev = match last_local.get(&up.user) {
                Some(prev) => Some(observed_gradient(&up.weights, prev)?.norm()),
                None => None,
            };
            user_rows.push(UserRound {
                user: up.user,
                n_raw: batches[&up.user].len(),
                n_used: up.n,
                steps: up.steps,
                update_norm: obs.norm(),
                from_previous_local_norm: from_prev,
            });
            if up.user == inputs.target_user {
                let batch = batches[&up.user].clone();
                let selected = batch.select(cfg.selection, cfg.selection_options)?;
                let attacks = match &inputs.attack {
                    Some(plan) => attack_round(&global, &obs, plan, st, &batch, previous_x, inputs.seed, t)?,
                    None => Vec::new(),
                };
                if let Some(last) = attacks.last() {
                    previous_x = Some(last.x_dlg);
                }
                let closed_form = match &inputs.attack {
                    Some(plan) if plan.closed_form => {
                        let samples = st.samples(&selected.measurements);
                        match BiasTerms::new(&global, &samples) {
                            Ok(terms) => Some(terms.combine(&selected.locations())),
                            Err(FedmapError::AssumptionViolation { .. }) => None,
                            Err(e) => return Err(e),
                        }
                    }
                    _ => None,
                };
                target = Some(TargetRound {
                    user: up.user,
                    observed_norm: obs.norm(),
                    batch,
                    selected,
                    attacks,
                    closed_form,
                });
            }
        }

        let agg: Vec<(ModelWeights, usize)> = kept.iter().map(|u| (u.weights.clone(), u.n)).collect();
        global = server_round(&agg)?;
        for up in kept {
            last_local.insert(up.user, up.weights);
        }
        let rmse = if inputs.test.is_empty() {
            None
        } else {
            Some(rmse_of(&global, st, inputs.test)?)
        };
        info!(
            "round {t} ({}/{}): {} clients, rmse {:?}",
            ordinal + 1,
            round_ids.len(),
            user_rows.len(),
            rmse
        );
        records.push(RoundRecord {
            round: t,
            ordinal,
            users: user_rows,
            target,
            rmse,
        });
    }
    Ok(ExperimentOutcome {
        rounds: records,
        final_weights: global,
    })
}

#[allow(clippy::too_many_arguments)]
fn attack_round(
    global: &ModelWeights,
    observed: &GradientVector,
    plan: &AttackPlan,
    st: &Standardizer,
    batch: &LocalBatch,
    previous: Option<[f64; 2]>,
    base_seed: u64,
    round: usize,
) -> Result<Vec<AttackResult>> {
    // the descent direction; cosine matching ignores the positive scale eta
    let target = observed.scaled(-1.0);
    let label = plan.config.label_init.unwrap_or(st.label_mean);
    (0..plan.inits_per_round.max(1))
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng_for(base_seed, &[0xA7, round as u64, i as u64]);
            let start = init_dummy(
                plan.config.init,
                &plan.boundary,
                Some(batch.centroid),
                previous,
                label,
                &mut rng,
            )?;
            dlg_attack(global, &target, &plan.config, &plan.boundary, st, start)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchConfig;

    fn m(user: u32, ts: i64, e: f64) -> Measurement {
        Measurement {
            user_id: user,
            cell_id: "c".into(),
            timestamp: ts,
            lat: 0.0,
            lon: 0.0,
            easting: e,
            northing: 0.0,
            rsrp: -90.0,
        }
    }

    fn ds(ms: Vec<Measurement>) -> Dataset {
        Dataset {
            measurements: ms,
            ..Dataset::default()
        }
    }

    #[test]
    fn partition_by_hour() {
        let d = ds(vec![m(0, 0, 0.0), m(0, 1800, 1.0), m(0, 4320, 2.0)]);
        let p = partition_rounds(&d, 3600);
        let sizes: Vec<usize> = p[&0].iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 1]);
        assert_eq!(p[&0][1].round, 1);
        assert_eq!(partition_rounds(&d, 1_000_000)[&0].len(), 1);
    }

    #[test]
    fn batch_statistics() {
        let b = LocalBatch::new(0, 0, vec![m(0, 0, 0.0), m(0, 1, 2.0)]).unwrap();
        assert_eq!(b.centroid, [1.0, 0.0]);
        assert_eq!(b.variance, [1.0, 0.0]);
    }

    #[test]
    fn server_weighted_mean() {
        let arch = ArchConfig::linear();
        let a = ModelWeights::from_flat(&arch, vec![0.0; 3]).unwrap();
        let b = ModelWeights::from_flat(&arch, vec![4.0; 3]).unwrap();
        let w = server_round(&[(a.clone(), 1), (b.clone(), 3)]).unwrap();
        assert_eq!(w.flat(), &[3.0, 3.0, 3.0]);
        assert_eq!(server_round(&[(b.clone(), 5)]).unwrap(), b);
        assert!(server_round(&[]).is_err());
        assert!(server_round(&[(a, 0)]).is_err());
    }

    #[test]
    fn fedsgd_is_one_step() {
        let arch = ArchConfig::softplus(&[6]);
        let w = ModelWeights::glorot(&arch, 2);
        let s = [Sample::new([0.1, 0.2], 0.3), Sample::new([-0.5, 0.4], -1.0)];
        let cfg = FedConfig {
            eta: 0.1,
            ..FedConfig::default()
        };
        let (end, steps) = local_train(&w, &s, &cfg, 9).unwrap();
        assert_eq!(steps, 1);
        let g = weight_gradient(&w, &s, DropoutMode::Inference).unwrap();
        let want = sgd_step(&w, &g, 0.1).unwrap();
        for (a, b) in end.flat().iter().zip(want.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
        let obs = observed_gradient(&end, &w).unwrap();
        for (o, gi) in obs.flat().iter().zip(g.flat()) {
            assert!((o + 0.1 * gi).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FedConfig::default().validate().is_ok());
        assert!(FedConfig::default().is_fedsgd());
        let bad = FedConfig {
            client_fraction: 0.0,
            ..FedConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FedConfig {
            selection: SelectionPolicy::Farthest { eps_km: 0.05, num: 0 },
            ..FedConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
