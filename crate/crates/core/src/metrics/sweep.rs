//! Loss-weight robustness sweep: the classification weights (β and μ,
//! moved together) and the consistency weight ν are varied one at a time
//! while every other setting keeps its base value.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::DomainPair;
use crate::error::{Error, Result};
use crate::trainer::{evaluate, train, TrainOptions};

/// Values tried for each swept weight.
pub const SWEEP_VALUES: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// β and μ set to the same value.
    Classification,
    Consistency,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 2] = [SweepParameter::Classification, SweepParameter::Consistency];

    pub fn label(self) -> &'static str {
        match self {
            SweepParameter::Classification => "beta=mu",
            SweepParameter::Consistency => "nu",
        }
    }

    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        let w = &mut cfg.loss_weights;
        match self {
            SweepParameter::Classification => {
                w.beta = value;
                w.mu = value;
            }
            SweepParameter::Consistency => w.nu = value,
        }
    }
}

/// Outcome of one sweep run. Divergence is recorded, not propagated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub parameter: SweepParameter,
    pub value: f64,
    pub seed: u64,
    /// Ensemble accuracy; absent when the run diverged.
    pub accuracy: Option<f64>,
    /// Loss term that became non-finite, if any.
    pub diverged_term: Option<String>,
    /// Largest finite weighted total seen during the run.
    pub max_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
}

impl SweepResult {
    pub fn all_finite(&self) -> bool {
        self.runs.iter().all(|r| r.diverged_term.is_none())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# loss-weight sweep (one weight group varied at a time)\n");
        out.push_str(&format!("{:<10}{:>8}{:>6}{:>10}{:>14}  status\n", "weight", "value", "seed", "accuracy", "max total"));
        for r in &self.runs {
            let acc = r.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
            let status = r.diverged_term.as_deref().map_or("ok".to_string(), |t| format!("non-finite {t}"));
            out.push_str(&format!(
                "{:<10}{:>8}{:>6}{:>10}{:>14.4}  {status}\n",
                r.parameter.label(),
                r.value,
                r.seed,
                acc,
                r.max_total
            ));
        }
        out
    }
}

/// Every `(parameter, value)` configuration derived from `base`.
pub fn sweep_configs(base: &ExperimentConfig, values: &[f64]) -> Vec<(SweepParameter, f64, ExperimentConfig)> {
    let mut out = Vec::new();
    for p in SweepParameter::ALL {
        for &v in values {
            let mut cfg = base.clone();
            p.apply(&mut cfg, v);
            out.push((p, v, cfg));
        }
    }
    out
}

/// Trains every sweep configuration once per seed. Non-finite losses end
/// that run and are reported in its record; other errors abort the sweep.
pub fn run_sweep(
    base: &ExperimentConfig,
    data: &DomainPair,
    values: &[f64],
    seeds: &[u64],
    mut on_run: impl FnMut(&SweepRun),
) -> Result<SweepResult> {
    let mut runs = Vec::new();
    for (parameter, value, cfg) in sweep_configs(base, values) {
        cfg.validate()?;
        for &seed in seeds {
            let mut run = cfg.clone();
            run.schedule.seed = seed;
            let record = match train(&run, data, &TrainOptions::default()) {
                Ok(outcome) => {
                    let eval = match outcome.final_eval() {
                        Some(e) => e.clone(),
                        None => evaluate(&outcome.state, data, run.ensemble.noise_seed)?,
                    };
                    let max_total = outcome.reports.iter().map(|r| r.total).fold(0.0, f64::max);
                    SweepRun { parameter, value, seed, accuracy: Some(eval.acc_ensemble), diverged_term: None, max_total }
                }
                Err(Error::NonFinite { term, .. }) => {
                    SweepRun { parameter, value, seed, accuracy: None, diverged_term: Some(term), max_total: f64::NAN }
                }
                Err(e) => return Err(e),
            };
            on_run(&record);
            runs.push(record);
        }
    }
    Ok(SweepResult { runs })
}
