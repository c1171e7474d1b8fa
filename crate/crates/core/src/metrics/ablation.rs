use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::DomainPair;
use crate::error::Result;
use crate::losses::{LossWeights, Term};
use crate::trainer::{evaluate, train, TrainOptions};

use super::median;

/// Which terms a configuration switches on, in weight order
/// (α, β, γ, μ, η, ν).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AblationRow {
    pub name: &'static str,
    pub mask: [bool; 6],
}

impl AblationRow {
    /// Base weights with every switched-off term set to zero.
    pub fn weights(&self, base: &LossWeights) -> LossWeights {
        let mut w = *base;
        for (term, on) in Term::ALL.into_iter().zip(self.mask) {
            if !on {
                w.set(term, 0.0);
            }
        }
        w
    }
}

/// The five rows, in order: each adds components to the previous ones,
/// except that the second isolates the target-to-source half.
pub const ABLATION_ROWS: [AblationRow; 5] = [
    AblationRow { name: "S->T GAN", mask: [true, true, false, false, false, false] },
    AblationRow { name: "T->S GAN", mask: [false, false, true, true, false, false] },
    AblationRow { name: "both GANs", mask: [true, true, true, true, false, false] },
    AblationRow { name: "+ class consistency", mask: [true, true, true, true, false, true] },
    AblationRow { name: "+ self-labeling", mask: [true, true, true, true, true, true] },
];

/// Results of one row over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub name: String,
    pub weights: LossWeights,
    pub seeds: Vec<u64>,
    /// Ensemble target accuracy per seed, σ chosen on validation.
    pub accuracies: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub rows: Vec<AblationResult>,
}

impl AblationMatrix {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# ablation: target accuracy of the sigma-selected ensemble\n");
        out.push_str(&format!(
            "{:<22}{:>4}{:>4}{:>4}{:>4}{:>4}{:>4}{:>10}  per-seed\n",
            "configuration", "a", "b", "g", "m", "e", "n", "median"
        ));
        for r in &self.rows {
            let w = r.weights;
            let cells: String = [w.alpha, w.beta, w.gamma, w.mu, w.eta, w.nu]
                .iter()
                .map(|v| format!("{:>4}", if *v > 0.0 { "x" } else { "." }))
                .collect();
            let seeds: Vec<String> = r.accuracies.iter().map(|a| format!("{:.4}", a)).collect();
            out.push_str(&format!("{:<22}{cells}{:>10.4}  {}\n", r.name, r.median, seeds.join(" ")));
        }
        out
    }
}

/// One configuration per ablation row, derived from `base`.
pub fn ablation_configs(base: &ExperimentConfig) -> Vec<(AblationRow, ExperimentConfig)> {
    ABLATION_ROWS
        .iter()
        .map(|row| {
            let mut cfg = base.clone();
            cfg.loss_weights = row.weights(&base.loss_weights);
            (*row, cfg)
        })
        .collect()
}

/// Trains every row once per seed and reports the median ensemble accuracy.
/// `on_run` is called after each completed run with the row name, seed and
/// accuracy.
pub fn ablation_matrix(
    base: &ExperimentConfig,
    data: &DomainPair,
    seeds: &[u64],
    mut on_run: impl FnMut(&str, u64, f64),
) -> Result<AblationMatrix> {
    let mut rows = Vec::new();
    for (row, cfg) in ablation_configs(base) {
        let mut accuracies = Vec::new();
        let mut sigmas = Vec::new();
        for &seed in seeds {
            let mut run = cfg.clone();
            run.schedule.seed = seed;
            let outcome = train(&run, data, &TrainOptions::default())?;
            let eval = match outcome.final_eval() {
                Some(e) => e.clone(),
                None => evaluate(&outcome.state, data, run.ensemble.noise_seed)?,
            };
            on_run(row.name, seed, eval.acc_ensemble);
            accuracies.push(eval.acc_ensemble);
            sigmas.push(eval.sigma);
        }
        rows.push(AblationResult {
            name: row.name.to_string(),
            weights: cfg.loss_weights,
            seeds: seeds.to_vec(),
            median: median(&accuracies).unwrap_or(f64::NAN),
            accuracies,
            sigmas,
        });
    }
    Ok(AblationMatrix { rows })
}
