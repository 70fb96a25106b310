//! Synthetic anchor-based mobility with log-distance RSRP labels.
//!
//! Each user owns a few anchors (home, work, ...). Every hour of every day a
//! state is drawn from the hour's occupancy distribution: dwell at one anchor,
//! commute between the first two anchors, or inactive. Active hours emit a
//! Poisson number of samples.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::utm::{self, UtmCoord};
use super::{Dataset, Measurement};
use crate::error::{FedmapError, Result};
use crate::seed;

const HOURS: usize = 24;
const SECONDS_PER_HOUR: i64 = 3600;
const SECONDS_PER_DAY: i64 = 86_400;

/// Occupancy probabilities for one hour slot: one entry per anchor, then
/// commute, then inactive.
pub type SlotProbs = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub anchors_per_user: usize,
    /// Explicit anchors per user as (east, north) meter offsets from the
    /// origin. Overrides random placement when present.
    pub anchors: Option<Vec<Vec<[f64; 2]>>>,
    /// All users reuse user 0's anchors, each perturbed by this many meters.
    pub shared_anchor_jitter_m: Option<f64>,
    /// South-west corner of the area.
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Side of the square area holding random anchors.
    pub area_m: f64,
    pub dwell_sigma_m: f64,
    pub path_sigma_m: f64,
    pub samples_per_hour: f64,
    /// 24 slots each; empty means the built-in schedule.
    pub weekday: Vec<SlotProbs>,
    pub weekend: Vec<SlotProbs>,
    /// Tower position as a meter offset from the origin.
    pub tower_m: [f64; 2],
    pub p0_dbm: f64,
    pub d0_m: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub weeks: u32,
    /// Start of the first day (a Monday at midnight by default).
    pub start_timestamp: i64,
    pub cell_id: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 6,
            anchors_per_user: 2,
            anchors: None,
            shared_anchor_jitter_m: None,
            origin_lat: 33.6405,
            origin_lon: -117.8443,
            area_m: 3000.0,
            dwell_sigma_m: 25.0,
            path_sigma_m: 15.0,
            samples_per_hour: 80.0,
            weekday: Vec::new(),
            weekend: Vec::new(),
            tower_m: [1500.0, 1500.0],
            p0_dbm: -60.0,
            d0_m: 10.0,
            path_loss_exponent: 3.0,
            shadowing_sigma_db: 4.0,
            weeks: 12,
            start_timestamp: 1_499_644_800,
            cell_id: "synth-0".into(),
            seed: 42,
        }
    }
}

/// Built-in weekly rhythm for `k` anchors: nights at anchor 0, office hours at
/// anchor 1, commutes around 8h and 17h, extra anchors in the evening.
pub fn default_schedule(k: usize, weekend: bool) -> Vec<SlotProbs> {
    let (commute, inactive) = (k, k + 1);
    (0..HOURS)
        .map(|h| {
            let mut p = vec![0.0; k + 2];
            let home = |v: f64, p: &mut Vec<f64>| p[0] += v;
            match (weekend, h) {
                (_, 0..=6) => home(0.05, &mut p),
                (false, 7) => {
                    home(0.3, &mut p);
                    p[commute] = 0.2;
                }
                (false, 8) | (false, 17) => {
                    p[commute] = 0.5;
                    p[1.min(k - 1)] += 0.1;
                }
                (false, 9..=16) => p[1.min(k - 1)] += 0.35,
                (false, 18..=22) | (true, 9..=21) => {
                    if k > 2 {
                        home(0.2, &mut p);
                        for a in p.iter_mut().take(k).skip(2) {
                            *a += 0.1 / (k - 2) as f64;
                        }
                    } else {
                        home(0.3, &mut p);
                    }
                    if weekend {
                        p[commute] = 0.05;
                    }
                }
                (true, 7..=8) => home(0.05, &mut p),
                _ => home(0.1, &mut p),
            }
            p[inactive] = 1.0 - p.iter().sum::<f64>();
            p
        })
        .collect()
}

impl SynthConfig {
    fn schedules(&self) -> (Vec<SlotProbs>, Vec<SlotProbs>) {
        let k = self.anchors_per_user;
        let pick = |s: &Vec<SlotProbs>, weekend| {
            if s.is_empty() {
                default_schedule(k, weekend)
            } else {
                s.clone()
            }
        };
        (pick(&self.weekday, false), pick(&self.weekend, true))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FedmapError::Config(m));
        if self.n_users == 0 {
            return Err(FedmapError::Empty("synthetic config has zero users".into()));
        }
        if self.anchors_per_user == 0 {
            return bad("anchors_per_user must be at least 1".into());
        }
        for (name, v) in [
            ("dwell_sigma_m", self.dwell_sigma_m),
            ("path_sigma_m", self.path_sigma_m),
            ("shadowing_sigma_db", self.shadowing_sigma_db),
            ("samples_per_hour", self.samples_per_hour),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.area_m > 0.0) || !(self.d0_m > 0.0) {
            return bad("area_m and d0_m must be positive".into());
        }
        if let Some(a) = &self.anchors {
            if a.len() != self.n_users || a.iter().any(|u| u.len() != self.anchors_per_user) {
                return bad("explicit anchors must list anchors_per_user points for every user".into());
            }
        }
        let (wd, we) = self.schedules();
        for (name, sched) in [("weekday", &wd), ("weekend", &we)] {
            if sched.len() != HOURS {
                return bad(format!("{name} schedule needs {HOURS} slots"));
            }
            for (h, p) in sched.iter().enumerate() {
                if p.len() != self.anchors_per_user + 2 {
                    return bad(format!("{name} slot {h}: expected {} probabilities", self.anchors_per_user + 2));
                }
                let sum: f64 = p.iter().sum();
                if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return bad(format!("{name} slot {h}: probabilities must be non-negative and sum to 1"));
                }
            }
        }
        utm::to_utm(self.origin_lat, self.origin_lon)?;
        Ok(())
    }

    /// Log-distance RSRP without shadowing. Distances below `d0` are clamped.
    pub fn mean_rsrp(&self, distance_m: f64) -> f64 {
        self.p0_dbm - 10.0 * self.path_loss_exponent * (distance_m.max(self.d0_m) / self.d0_m).log10()
    }

    fn anchors_for(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<[f64; 2]>> {
        if let Some(a) = &self.anchors {
            return a.clone();
        }
        let random_set = |rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
            (0..self.anchors_per_user)
                .map(|_| [rng.random::<f64>() * self.area_m, rng.random::<f64>() * self.area_m])
                .collect()
        };
        match self.shared_anchor_jitter_m {
            Some(j) => {
                let base = random_set(rng);
                let noise = Normal::new(0.0, j.max(0.0)).expect("finite sigma");
                (0..self.n_users)
                    .map(|_| {
                        base.iter()
                            .map(|a| [a[0] + noise.sample(rng), a[1] + noise.sample(rng)])
                            .collect()
                    })
                    .collect()
            }
            None => (0..self.n_users).map(|_| random_set(rng)).collect(),
        }
    }
}

fn draw_state(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Generates the dataset described by `cfg`. Identical configs give identical datasets.
pub fn synth_trajectories(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let origin = utm::to_utm(cfg.origin_lat, cfg.origin_lon)?;
    let anchors = cfg.anchors_for(&mut seed::rng_for(cfg.seed, &[0xA1]));
    let (weekday, weekend) = cfg.schedules();
    let k = cfg.anchors_per_user;
    let tower = [origin.easting + cfg.tower_m[0], origin.northing + cfg.tower_m[1]];
    let dwell = Normal::new(0.0, cfg.dwell_sigma_m).expect("validated sigma");
    let path = Normal::new(0.0, cfg.path_sigma_m).expect("validated sigma");
    let shadow = Normal::new(0.0, cfg.shadowing_sigma_db).expect("validated sigma");
    let poisson = (cfg.samples_per_hour > 0.0).then(|| Poisson::new(cfg.samples_per_hour).expect("positive rate"));

    let mut out = Vec::new();
    for (user, user_anchors) in anchors.iter().enumerate() {
        let mut rng = seed::rng_for(cfg.seed, &[0xB2, user as u64]);
        let abs: Vec<[f64; 2]> = user_anchors
            .iter()
            .map(|a| [origin.easting + a[0], origin.northing + a[1]])
            .collect();
        let (a0, a1) = (abs[0], abs[1.min(k - 1)]);
        for day in 0..(cfg.weeks as i64 * 7) {
            let sched = if day % 7 < 5 { &weekday } else { &weekend };
            for (h, probs) in sched.iter().enumerate() {
                let state = draw_state(probs, rng.random());
                let Some(poisson) = &poisson else { continue };
                if state == k + 1 {
                    continue;
                }
                let n = poisson.sample(&mut rng) as usize;
                let mut offsets: Vec<i64> = (0..n).map(|_| rng.random_range(0..SECONDS_PER_HOUR)).collect();
                offsets.sort_unstable();
                for off in offsets {
                    let p = if state < k {
                        let a = abs[state];
                        [a[0] + dwell.sample(&mut rng), a[1] + dwell.sample(&mut rng)]
                    } else {
                        let (from, to) = if h < 12 { (a0, a1) } else { (a1, a0) };
                        let u = off as f64 / SECONDS_PER_HOUR as f64;
                        [
                            from[0] + u * (to[0] - from[0]) + path.sample(&mut rng),
                            from[1] + u * (to[1] - from[1]) + path.sample(&mut rng),
                        ]
                    };
                    let d = ((p[0] - tower[0]).powi(2) + (p[1] - tower[1]).powi(2)).sqrt();
                    let rsrp = cfg.mean_rsrp(d) + shadow.sample(&mut rng);
                    let (lat, lon) = utm::from_utm(UtmCoord {
                        easting: p[0],
                        northing: p[1],
                        ..origin
                    });
                    out.push(Measurement {
                        user_id: user as u32,
                        cell_id: cfg.cell_id.clone(),
                        timestamp: cfg.start_timestamp + day * SECONDS_PER_DAY + h as i64 * SECONDS_PER_HOUR + off,
                        lat,
                        lon,
                        easting: p[0],
                        northing: p[1],
                        rsrp,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(FedmapError::Empty("synthetic generator produced no samples".into()));
    }
    Dataset::from_measurements(out)
}
