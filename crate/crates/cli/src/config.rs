//! Experiment configuration read from TOML.
//!
//! Every section rejects unknown keys. `B = "inf"` (or an absent `B`) means
//! full-batch local steps.

use std::fmt;
use std::path::{Path, PathBuf};

use fedmap_core::attack::{AttackConfig, Boundary};
use fedmap_core::data::SynthConfig;
use fedmap_core::defense::{DpConfig, SelectionOptions, SelectionPolicy};
use fedmap_core::fed::FedConfig;
use fedmap_core::nn::{Activation, ArchConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CliError;

/// Mini-batch size: a count or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    Finite(usize),
    #[default]
    Inf,
}

impl BatchSize {
    pub fn as_option(self) -> Option<usize> {
        match self {
            BatchSize::Finite(b) => Some(b),
            BatchSize::Inf => None,
        }
    }
}

impl fmt::Display for BatchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchSize::Finite(b) => write!(f, "{b}"),
            BatchSize::Inf => f.write_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(i64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) if n >= 1 => Ok(BatchSize::Finite(n as usize)),
            Raw::N(n) => Err(serde::de::Error::custom(format!("B must be >= 1, got {n}"))),
            Raw::S(s) if s == "inf" => Ok(BatchSize::Inf),
            Raw::S(s) => Err(serde::de::Error::custom(format!("B must be an integer or \"inf\", got {s:?}"))),
        }
    }
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BatchSize::Finite(b) => s.serialize_u64(*b as u64),
            BatchSize::Inf => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Measurements CSV; mutually exclusive with `synth`.
    pub csv: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub test_fraction: f64,
    pub target_user: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            synth: None,
            test_fraction: 0.1,
            target_user: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// The full-size signal-map network.
    SignalMap,
    /// Softplus hidden layers of the given widths, no dropout.
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSection {
    pub arch: ArchKind,
    pub hidden: Vec<usize>,
    #[serde(rename = "T_hours")]
    pub t_hours: f64,
    #[serde(rename = "R")]
    pub rounds: Option<usize>,
    #[serde(rename = "B")]
    pub batch_size: BatchSize,
    #[serde(rename = "E")]
    pub epochs: usize,
    #[serde(rename = "C")]
    pub client_fraction: f64,
    pub eta: f64,
    pub cumulative: bool,
    pub fixed_batch: bool,
    pub force_target: bool,
}

impl Default for FedSection {
    fn default() -> Self {
        Self {
            arch: ArchKind::Softplus,
            hidden: vec![32, 32],
            t_hours: 24.0,
            rounds: Some(10),
            batch_size: BatchSize::Inf,
            epochs: 1,
            client_fraction: 1.0,
            eta: 0.01,
            cumulative: false,
            fixed_batch: false,
            force_target: true,
        }
    }
}

impl FedSection {
    pub fn arch_config(&self) -> Result<ArchConfig, CliError> {
        let arch = match self.arch {
            ArchKind::SignalMap => ArchConfig::signal_map_default(),
            ArchKind::Softplus => {
                if self.hidden.is_empty() {
                    return Err(CliError::Config("softplus arch needs at least one hidden width".into()));
                }
                let mut widths = vec![fedmap_core::nn::FEATURE_DIM];
                widths.extend(&self.hidden);
                widths.push(1);
                ArchConfig::new(widths, vec![Activation::Softplus; self.hidden.len()], 0.0)?
            }
        };
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: AttackConfig,
    pub inits_per_round: usize,
    /// Margin added around the data extent when no explicit box is given.
    pub boundary_margin_m: f64,
    /// Explicit `[min_e, min_n, max_e, max_n]` box in UTM meters.
    pub boundary: Option<[f64; 4]>,
    pub closed_form: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            enabled: true,
            config: AttackConfig {
                max_iters: 20_000,
                ..AttackConfig::default()
            },
            inits_per_round: 3,
            boundary_margin_m: 500.0,
            boundary: None,
            closed_form: false,
        }
    }
}

impl AttackSection {
    pub fn boundary_for(&self, points: impl IntoIterator<Item = [f64; 2]>) -> Result<Boundary, CliError> {
        Ok(match self.boundary {
            Some([a, b, c, d]) => Boundary::new([a, b], [c, d])?,
            None => Boundary::around(points, self.boundary_margin_m)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    Full,
    Diverse,
    Farthest,
    /// Random subset as large as the diverse output.
    RandomMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSection {
    pub policy: PolicyKind,
    pub eps_km: f64,
    pub num: usize,
    pub min_pts: usize,
    pub keep_noise: bool,
}

impl Default for DefenseSection {
    fn default() -> Self {
        let o = SelectionOptions::default();
        Self {
            policy: PolicyKind::Full,
            eps_km: 0.05,
            num: 1,
            min_pts: o.min_pts,
            keep_noise: o.keep_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    /// Noise is only added when `epsilon` is set.
    pub epsilon: Option<f64>,
    pub clip_norm: f64,
    pub delta: f64,
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            epsilon: None,
            clip_norm: 1.0,
            delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub projections: usize,
    /// Uniform random-location baselines per experiment; 0 disables.
    pub random_baseline: usize,
    /// Instances per check in `verify`.
    pub verify_instances: usize,
    /// Largest local batch used by the `verify` attack check.
    pub verify_max_batch: usize,
    /// Required agreement rate of the `verify` attack check.
    pub verify_pass_rate: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            projections: fedmap_core::metrics::DEFAULT_PROJECTIONS,
            random_baseline: 0,
            verify_instances: 60,
            verify_max_batch: 32,
            verify_pass_rate: 0.95,
        }
    }
}

/// Lists of values for scalar knobs; the run covers their cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    #[serde(rename = "B")]
    pub batch_size: Vec<BatchSize>,
    #[serde(rename = "E")]
    pub epochs: Vec<usize>,
    #[serde(rename = "T_hours")]
    pub t_hours: Vec<f64>,
    #[serde(rename = "R")]
    pub rounds: Vec<usize>,
    pub eta: Vec<f64>,
    pub eps_km: Vec<f64>,
    pub num: Vec<usize>,
    pub policy: Vec<PolicyKind>,
    /// `0` stands for no DP.
    pub dp_epsilon: Vec<f64>,
    /// Independent repetitions of every point.
    pub replicates: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            batch_size: vec![],
            epochs: vec![],
            t_hours: vec![],
            rounds: vec![],
            eta: vec![],
            eps_km: vec![],
            num: vec![],
            policy: vec![],
            dp_epsilon: vec![],
            replicates: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub fed: FedSection,
    pub attack: AttackSection,
    pub defense: DefenseSection,
    pub dp: DpSection,
    pub metrics: MetricsSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: DataSection::default(),
            fed: FedSection::default(),
            attack: AttackSection::default(),
            defense: DefenseSection::default(),
            dp: DpSection::default(),
            metrics: MetricsSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// One fully resolved combination of sweep values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub fed: FedSection,
    pub defense: DefenseSection,
    pub dp_epsilon: Option<f64>,
}

impl SweepPoint {
    pub fn policy(&self) -> SelectionPolicy {
        match self.defense.policy {
            PolicyKind::Full => SelectionPolicy::Full,
            PolicyKind::Diverse => SelectionPolicy::Diverse {
                eps_km: self.defense.eps_km,
            },
            PolicyKind::Farthest => SelectionPolicy::Farthest {
                eps_km: self.defense.eps_km,
                num: self.defense.num,
            },
            PolicyKind::RandomMatched => SelectionPolicy::RandomMatched {
                eps_km: self.defense.eps_km,
            },
        }
    }

    pub fn fed_config(&self, dp: &DpSection) -> Result<FedConfig, CliError> {
        let f = &self.fed;
        let cfg = FedConfig {
            interval_s: (f.t_hours * 3600.0).round() as i64,
            rounds: f.rounds,
            batch_size: f.batch_size.as_option(),
            epochs: f.epochs,
            client_fraction: f.client_fraction,
            eta: f.eta,
            selection: self.policy(),
            selection_options: SelectionOptions {
                min_pts: self.defense.min_pts,
                keep_noise: self.defense.keep_noise,
            },
            dp: match self.dp_epsilon {
                Some(e) => Some(DpConfig::new(dp.clip_norm, e, dp.delta)?),
                None => None,
            },
            cumulative: f.cumulative,
            fixed_batch: f.fixed_batch,
            force_target: f.force_target,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `fedsgd` or `fedavg`, suffixed with the selection rule and `dp` when active.
    pub fn scheme(&self) -> String {
        let mut s = if self.fed.batch_size == BatchSize::Inf && self.fed.epochs == 1 {
            "fedsgd".to_string()
        } else {
            "fedavg".to_string()
        };
        match self.defense.policy {
            PolicyKind::Full => {}
            PolicyKind::Diverse => s.push_str("+diverse"),
            PolicyKind::Farthest => s.push_str("+farthest"),
            PolicyKind::RandomMatched => s.push_str("+random"),
        }
        if self.dp_epsilon.is_some() {
            s.push_str("+dp");
        }
        s
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative CSV paths are taken relative to the config file
        if let (Some(csv), Some(dir)) = (cfg.data.csv.as_mut(), path.parent()) {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.csv, &self.data.synth) {
            (Some(_), Some(_)) => return Err(CliError::Config("[data] has both csv and synth".into())),
            (None, None) => return Err(CliError::Config("[data] needs csv or synth".into())),
            _ => {}
        }
        if let Some(s) = &self.data.synth {
            s.validate()?;
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(CliError::Config("test_fraction must lie in [0, 1)".into()));
        }
        if self.sweep.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        if self.attack.inits_per_round == 0 {
            return Err(CliError::Config("inits_per_round must be at least 1".into()));
        }
        if !(self.fed.t_hours > 0.0) {
            return Err(CliError::Config("T_hours must be positive".into()));
        }
        self.attack.config.validate()?;
        self.fed.arch_config()?;
        for p in self.sweep_points() {
            p.fed_config(&self.dp)?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes in a fixed nesting order.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let s = &self.sweep;
        let mut out = Vec::new();
        let dp_axis: Vec<Option<f64>> = if s.dp_epsilon.is_empty() {
            vec![self.dp.epsilon]
        } else {
            s.dp_epsilon.iter().map(|&e| (e > 0.0).then_some(e)).collect()
        };
        for &t in &axis(&s.t_hours, self.fed.t_hours) {
            for &r in &axis(&s.rounds.iter().map(|&r| Some(r)).collect::<Vec<_>>(), self.fed.rounds) {
                for &b in &axis(&s.batch_size, self.fed.batch_size) {
                    for &e in &axis(&s.epochs, self.fed.epochs) {
                        for &eta in &axis(&s.eta, self.fed.eta) {
                            for &policy in &axis(&s.policy, self.defense.policy) {
                                for &eps in &axis(&s.eps_km, self.defense.eps_km) {
                                    for &num in &axis(&s.num, self.defense.num) {
                                        for &dp in &dp_axis {
                                            out.push(SweepPoint {
                                                index: out.len(),
                                                fed: FedSection {
                                                    t_hours: t,
                                                    rounds: r,
                                                    batch_size: b,
                                                    epochs: e,
                                                    eta,
                                                    ..self.fed.clone()
                                                },
                                                defense: DefenseSection {
                                                    policy,
                                                    eps_km: eps,
                                                    num,
                                                    ..self.defense.clone()
                                                },
                                                dp_epsilon: dp,
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
