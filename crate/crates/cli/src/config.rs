//! Declarative study configs.
//!
//! ```toml
//! kind = "rmse"                 # or "variance_ratio"
//! seed = 2024
//! replications = 1000
//! estimators = ["mle", "ols", "gmm"]
//! se_methods = ["plugin", "semipar", "boot", "moon-2sqrtn", "moon-2n3"]
//! boot_reps = 50
//!
//! [baseline]                    # every field optional
//! n = 50
//! n_trials = 60
//! p = 0.95
//! rho_x = 0.0
//! pi_tp = 0.98
//! pi_tn = 0.70
//! misspec = "none"              # overdispersed_tp | overdispersed_tn | overdispersed_both
//! misspec_rho = 0.0
//!
//! [[sweep]]                     # one factor at a time around the baseline
//! factor = "n"
//! start = 30
//! stop = 100
//! step = 5                      # or `points = 15` (both endpoints included)
//!
//! [[factorial]]                 # full crossing; the first factor varies fastest
//! factor = "n_trials"
//! values = [44, 69]
//!
//! [[cells]]                     # explicit cells, fields override the baseline
//! n = 30
//! ```
//!
//! Cells are ordered sweeps first, then the factorial, then explicit
//! cells. A config with none of the three runs the baseline alone.

use serde::Deserialize;

use binconv::simstudy::{Misspec, ScenarioConfig, SeMethod};
use binconv::{Estimator, RateParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Rmse,
    VarianceRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    N,
    NTrials,
    P,
    RhoX,
    PiTp,
    PiTn,
    MisspecRho,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub n: Option<usize>,
    pub n_trials: Option<u32>,
    pub p: Option<f64>,
    pub rho_x: Option<f64>,
    pub pi_tp: Option<f64>,
    pub pi_tn: Option<f64>,
    pub misspec: Option<String>,
    pub misspec_rho: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub factor: Factor,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub step: Option<f64>,
    pub points: Option<usize>,
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorLevels {
    pub factor: Factor,
    pub values: Vec<f64>,
}

fn default_estimators() -> Vec<String> {
    Estimator::ALL
        .iter()
        .map(|e| e.name().to_string())
        .collect()
}

fn default_boot_reps() -> usize {
    binconv::bootstrap::DEFAULT_SIM_REPLICATES
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: StudyKind,
    #[serde(default)]
    pub seed: u64,
    pub replications: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub se_methods: Vec<String>,
    #[serde(default = "default_boot_reps")]
    pub boot_reps: usize,
    #[serde(default)]
    pub baseline: CellSpec,
    #[serde(default)]
    pub sweep: Vec<Sweep>,
    #[serde(default)]
    pub factorial: Vec<FactorLevels>,
    #[serde(default)]
    pub cells: Vec<CellSpec>,
}

/// Cell-level design values before conversion to a `ScenarioConfig`.
#[derive(Debug, Clone)]
struct Design {
    n: usize,
    n_trials: u32,
    p: f64,
    rho_x: f64,
    pi_tp: f64,
    pi_tn: f64,
    misspec: String,
    misspec_rho: f64,
}

impl Design {
    fn baseline() -> Self {
        let b = ScenarioConfig::baseline();
        Self {
            n: b.n,
            n_trials: b.n_trials,
            p: b.p,
            rho_x: b.rho_x,
            pi_tp: b.rates.tp(),
            pi_tn: b.rates.tn(),
            misspec: "none".into(),
            misspec_rho: 0.0,
        }
    }

    fn apply(&mut self, s: &CellSpec) {
        if let Some(v) = s.n {
            self.n = v;
        }
        if let Some(v) = s.n_trials {
            self.n_trials = v;
        }
        if let Some(v) = s.p {
            self.p = v;
        }
        if let Some(v) = s.rho_x {
            self.rho_x = v;
        }
        if let Some(v) = s.pi_tp {
            self.pi_tp = v;
        }
        if let Some(v) = s.pi_tn {
            self.pi_tn = v;
        }
        if let Some(v) = &s.misspec {
            self.misspec = v.clone();
        }
        if let Some(v) = s.misspec_rho {
            self.misspec_rho = v;
        }
    }

    fn set(&mut self, f: Factor, v: f64) -> Result<(), String> {
        let whole = |v: f64| -> Result<u64, String> {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(format!("{f:?} needs a non-negative whole number, got {v}"))
            }
        };
        match f {
            Factor::N => self.n = whole(v)? as usize,
            Factor::NTrials => self.n_trials = whole(v)? as u32,
            Factor::P => self.p = v,
            Factor::RhoX => self.rho_x = v,
            Factor::PiTp => self.pi_tp = v,
            Factor::PiTn => self.pi_tn = v,
            Factor::MisspecRho => self.misspec_rho = v,
        }
        Ok(())
    }

    fn build(&self, replications: usize) -> Result<ScenarioConfig, String> {
        let cfg = ScenarioConfig {
            n: self.n,
            n_trials: self.n_trials,
            p: self.p,
            rho_x: self.rho_x,
            rates: RateParams::new(self.pi_tp, self.pi_tn).map_err(|e| e.to_string())?,
            misspec: Misspec::from_parts(&self.misspec, self.misspec_rho)
                .map_err(|e| e.to_string())?,
            replications,
            seed: 0,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// Evenly spaced values; `points` includes both endpoints, `step` stops at
/// the last value not beyond `stop`.
pub fn sweep_values(s: &Sweep) -> Result<Vec<f64>, String> {
    if let Some(v) = &s.values {
        if s.start.is_some() || s.stop.is_some() || s.step.is_some() || s.points.is_some() {
            return Err("sweep: give either `values` or a range, not both".into());
        }
        return Ok(v.clone());
    }
    let (Some(a), Some(b)) = (s.start, s.stop) else {
        return Err(format!(
            "sweep over {:?}: `start` and `stop` are required",
            s.factor
        ));
    };
    match (s.step, s.points) {
        (Some(h), None) => {
            if !(h > 0.0) || b < a {
                return Err(format!(
                    "sweep over {:?}: need step > 0 and stop >= start",
                    s.factor
                ));
            }
            let count = ((b - a) / h + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * h).collect())
        }
        (None, Some(k)) => {
            if k < 2 {
                return Err(format!(
                    "sweep over {:?}: `points` must be at least 2",
                    s.factor
                ));
            }
            Ok((0..k)
                .map(|i| {
                    if i + 1 == k {
                        b
                    } else {
                        a + (b - a) * i as f64 / (k - 1) as f64
                    }
                })
                .collect())
        }
        _ => Err(format!(
            "sweep over {:?}: give exactly one of `step` or `points`",
            s.factor
        )),
    }
}

/// A parsed config expanded to concrete cells.
#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub kind: StudyKind,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub se_methods: Vec<SeMethod>,
    pub boot_reps: usize,
    pub grid: Vec<ScenarioConfig>,
}

pub fn parse_config(text: &str) -> Result<StudyConfig, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

impl StudyConfig {
    pub fn plan(&self) -> Result<StudyPlan, String> {
        if self.replications == 0 {
            return Err("replications must be at least 1".into());
        }
        let estimators = self
            .estimators
            .iter()
            .map(|s| s.parse::<Estimator>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut se_methods = self
            .se_methods
            .iter()
            .map(|s| s.parse::<SeMethod>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        if self.kind == StudyKind::VarianceRatio && se_methods.is_empty() {
            se_methods = SeMethod::STUDY_DEFAULT.to_vec();
        }

        let mut base = Design::baseline();
        base.apply(&self.baseline);
        let mut designs = Vec::new();
        for s in &self.sweep {
            for v in sweep_values(s)? {
                let mut d = base.clone();
                d.set(s.factor, v)?;
                designs.push(d);
            }
        }
        if !self.factorial.is_empty() {
            let sizes: Vec<usize> = self.factorial.iter().map(|f| f.values.len()).collect();
            if sizes.contains(&0) {
                return Err("factorial: every factor needs at least one value".into());
            }
            let total: usize = sizes.iter().product();
            for i in 0..total {
                let mut d = base.clone();
                let mut rem = i;
                for (f, size) in self.factorial.iter().zip(&sizes) {
                    d.set(f.factor, f.values[rem % size])?;
                    rem /= size;
                }
                designs.push(d);
            }
        }
        for c in &self.cells {
            let mut d = base.clone();
            d.apply(c);
            designs.push(d);
        }
        if designs.is_empty() {
            designs.push(base);
        }
        let grid = designs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                d.build(self.replications)
                    .map_err(|e| format!("cell {i}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StudyPlan {
            kind: self.kind,
            seed: self.seed,
            estimators,
            se_methods,
            boot_reps: self.boot_reps,
            grid,
        })
    }
}
