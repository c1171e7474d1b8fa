//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! The desk-scale criteria (5 to 8) train on the synthetic colour-shift pair
//! and take most of the runtime. `SYMGAN_ACCEPTANCE_EPOCHS` shortens them for
//! quick local iterations; the reported verdicts are only meaningful at the
//! default of 50 epochs.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use symgan_core::config::ExperimentConfig;
use symgan_core::data::{load_domain_pair, DomainPair, ProbBatch};
use symgan_core::inference::*;
use symgan_core::losses::LossWeights;
use symgan_core::metrics::*;
use symgan_core::models::Mode;
use symgan_core::trainer::{train, Networks, TrainOptions};

type Verdict = Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];
const CPU_BUDGET: Duration = Duration::from_secs(2 * 3600);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(id: u32, title: &str, verdict: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(verdict)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {id}: {tag} | {title} | {detail} [{secs:.1}s]");
    std::io::stdout().flush().ok();
    outcome.is_ok()
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst = ("", 0.0f64);
    let mut failures = Vec::new();
    for seed in [1, 2] {
        for (name, rep) in loss_gradient_reports(seed) {
            if rep.max_rel_error > worst.1 {
                worst = (name, rep.max_rel_error);
            }
            if !rep.passes(1e-3) {
                failures.push(format!("{name} (seed {seed}) rel {:.2e}", rep.max_rel_error));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("took {secs:.1}s"));
    }
    check(
        failures.is_empty(),
        if failures.is_empty() { format!("worst relative error {:.2e} ({})", worst.1, worst.0) } else { failures.join(", ") },
    )
}

fn loss_oracles() -> Verdict {
    let mut worst = ("", 0.0f64);
    for seed in [3, 4] {
        for (name, got, expected) in network_term_oracles(seed) {
            let err = (got - expected).abs();
            if err > worst.1 || worst.0.is_empty() {
                worst = (name, err);
            }
        }
    }
    // The weighted total against a hand-expanded sum.
    use symgan_core::losses::{total_loss, Term};
    let values = [0.3, 1.7, 0.2, 0.9, 2.5, 0.4];
    let w = LossWeights::new(0.5, 2.0, 1.5, 3.0, 0.25, 4.0).unwrap();
    let terms: Vec<(Term, f64)> = Term::ALL.iter().copied().zip(values).collect();
    let expected = 0.5 * 0.3 + 2.0 * 1.7 + 1.5 * 0.2 + 3.0 * 0.9 + 0.25 * 2.5 + 4.0 * 0.4;
    let total_err = (total_loss(&w, &terms).unwrap().total - expected).abs();
    let err = worst.1.max(total_err);
    check(err <= 1e-6, format!("largest deviation {err:.2e} ({})", if total_err > worst.1 { "total" } else { worst.0 }))
}

fn structural() -> Verdict {
    let mut problems = Vec::new();
    let (untouched, moved) = source_classifier_gradient_flow(7);
    if !(untouched && moved) {
        problems.push("L_Cs gradient reaches a generator".to_string());
    }
    if !zero_eta_gates_self_labeling(9) {
        problems.push("eta = 0 leaves self-labeling gradient".to_string());
    }

    let cfg = tiny_config();
    let data = tiny_pair(&cfg);
    let nets = Networks::build(&cfg, &data.meta, 5).unwrap();
    nets.set_mode(Mode::Eval);
    let x = data.target_val.images.all();
    let idx: Vec<usize> = (0..x.len()).collect();
    let comps = component_probs(&nets.c_s, &nets.c_t, &nets.g_ts, &x, &idx, 1).unwrap();
    if comps.combine(EnsembleWeights::new(0.0).unwrap()).unwrap() != comps.target {
        problems.push("sigma = 0 differs from C_t".into());
    }
    if comps.combine(EnsembleWeights::new(1.0).unwrap()).unwrap() != comps.source {
        problems.push("sigma = 1 differs from C_s after G_ts".into());
    }
    let mut worst_row = 0.0f64;
    let rows = |p: &ProbBatch| p.rows().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    for sigma in SIGMA_GRID {
        worst_row = worst_row.max(rows(&comps.combine(EnsembleWeights::new(sigma).unwrap()).unwrap()));
    }
    let mut r = rng(17);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..7).map(|_| rand::Rng::random_range(&mut r, -300.0..300.0)).collect();
        let t = symgan_core::tensor::Tensor::new(logits, &[1, 7]).softmax();
        worst_row = worst_row.max((t.to_vec().iter().sum::<f64>() - 1.0).abs());
    }
    if worst_row > 1e-6 {
        problems.push(format!("softmax row sum off by {worst_row:.2e}"));
    }
    check(problems.is_empty(), if problems.is_empty() { format!("row sums within {worst_row:.1e}") } else { problems.join(", ") })
}

fn ssim_checks() -> Verdict {
    use symgan_core::data::ImageShape;
    let cfg = SsimConfig::default();
    let shape = ImageShape::new(16, 16, 3);
    let mut r = rng(21);
    let mut img = || (0..shape.pixels()).map(|_| rand::Rng::random_range(&mut r, 0.0..255.0)).collect::<Vec<f64>>();
    let (a, b) = (img(), img());
    let reflexive = (ssim(&a, &a, shape, &cfg).unwrap() - 1.0).abs();
    let symmetric = (ssim(&a, &b, shape, &cfg).unwrap() - ssim(&b, &a, shape, &cfg).unwrap()).abs();
    let (c1, c2) = (40.0, 180.0);
    let flat = |v: f64| vec![v; shape.pixels()];
    let closed = (2.0 * c1 * c2 + cfg.c1()) / (c1 * c1 + c2 * c2 + cfg.c1());
    let constant = (ssim(&flat(c1), &flat(c2), shape, &cfg).unwrap() - closed).abs();
    let mnist = mnist_mean_ssim(&cfg, 0);
    let ok = reflexive <= 1e-6 && symmetric <= 1e-6 && constant <= 1e-9 && (mnist - 0.206).abs() <= 0.05;
    check(
        ok,
        format!(
            "reflexive {reflexive:.1e}, symmetric {symmetric:.1e}, constant {constant:.1e}, raw MNIST {mnist:.4} ({})",
            cfg.describe()
        ),
    )
}

fn sigma_selection() -> Verdict {
    // A briefly trained model, then frozen.
    let cfg = tiny_config();
    let data = tiny_pair(&cfg);
    let out = train(&cfg, &data, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let nets = &out.state.nets;
    nets.set_mode(Mode::Eval);
    let x = data.target_val.images.all();
    let labels = data.target_val.all_labels().unwrap();
    let sel = select_sigma(&nets.c_s, &nets.c_t, &nets.g_ts, &x, &labels, 3).unwrap();
    let idx: Vec<usize> = (0..x.len()).collect();
    let z = test_noise(&idx, cfg.arch.noise_dim, 3);
    let mut best = (0usize, f64::NAN);
    for sigma in SIGMA_GRID {
        let p = ensemble_predict(&nets.c_s, &nets.c_t, &nets.g_ts, &x, &z, EnsembleWeights::new(sigma).unwrap()).unwrap();
        let hits = p.rows().zip(labels.labels()).filter(|(row, &y)| reference_argmax(row) == y).count();
        if best.1.is_nan() || hits > best.0 {
            best = (hits, sigma);
        }
    }
    check(
        sel.weights.sigma() == best.1,
        format!("selected {} vs exhaustive optimum {} ({} / {} correct)", sel.weights.sigma(), best.1, best.0, x.len()),
    )
}

struct Desk {
    cfg: ExperimentConfig,
    data: DomainPair,
}

fn desk(epochs: u64) -> Desk {
    let mut cfg = ExperimentConfig::desk();
    if epochs != cfg.schedule.epochs {
        cfg.schedule.rescale_epochs(epochs);
    }
    let data = load_domain_pair(cfg.setting, &cfg.load_options()).unwrap();
    Desk { cfg, data }
}

fn fmt_accs(v: &[f64]) -> String {
    v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect::<Vec<_>>().join("/")
}

struct AblationRun {
    matrix: AblationMatrix,
    /// Wall time of each full-model run.
    full_time: Duration,
}

fn run_ablation(d: &Desk) -> Result<AblationRun, String> {
    let mut last = Instant::now();
    let mut full_time = Duration::ZERO;
    let matrix = ablation_matrix(&d.cfg, &d.data, &SEEDS, |name, seed, acc| {
        let t = last.elapsed();
        last = Instant::now();
        if name == ABLATION_ROWS[4].name {
            full_time += t;
        }
        eprintln!("  ablation {name:<20} seed {seed}: {:.2}% in {:.0}s", 100.0 * acc, t.as_secs_f64());
    })
    .map_err(|e| e.to_string())?;
    Ok(AblationRun { matrix, full_time })
}

fn adaptation(d: &Desk, ab: &AblationRun) -> Verdict {
    let start = Instant::now();
    let mut baseline = Vec::new();
    let mut baseline_ensemble = Vec::new();
    for seed in SEEDS {
        let mut cfg = d.cfg.clone();
        cfg.loss_weights = LossWeights::source_only(cfg.loss_weights.mu);
        cfg.schedule.seed = seed;
        let out = train(&cfg, &d.data, &TrainOptions::default()).map_err(|e| e.to_string())?;
        let e = out.final_eval().expect("the last epoch is evaluated");
        baseline.push(e.acc_source_only);
        baseline_ensemble.push(e.acc_ensemble);
    }
    let elapsed = start.elapsed() + ab.full_time;
    let full = &ab.matrix.rows[4];
    let base = median(&baseline).unwrap();
    let gain = 100.0 * (full.median - base);
    check(
        gain >= 10.0 && elapsed <= CPU_BUDGET,
        format!(
            "full ensemble median {:.2}% ({}), source-only C_s median {:.2}% ({}), gain {gain:.1} pp, \
             source-only ensemble {}, runtime {:.0}s",
            100.0 * full.median,
            fmt_accs(&full.accuracies),
            100.0 * base,
            fmt_accs(&baseline),
            fmt_accs(&baseline_ensemble),
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation_trend(ab: &AblationRun) -> Verdict {
    // The cumulative rows: S->T, both GANs, + consistency, + self-labeling.
    // The T->S-only row is a parallel branch rather than a step of the chain.
    let chain = [0, 2, 3, 4];
    let rows = &ab.matrix.rows;
    let medians: Vec<f64> = chain.iter().map(|&i| rows[i].median).collect();
    let ok = medians.windows(2).all(|w| w[1] >= w[0]);
    let listing: Vec<String> = rows.iter().map(|r| format!("{} {:.2}", r.name, 100.0 * r.median)).collect();
    check(ok, listing.join(", "))
}

fn sweep(d: &Desk) -> Verdict {
    let result = run_sweep(&d.cfg, &d.data, &SWEEP_VALUES, &[0], |r| {
        eprintln!("  sweep {}={} accuracy {:?} diverged {:?}", r.parameter.label(), r.value, r.accuracy, r.diverged_term);
    })
    .map_err(|e| e.to_string())?;
    let summary: Vec<String> = result
        .runs
        .iter()
        .map(|r| match (&r.accuracy, &r.diverged_term) {
            (Some(a), None) => format!("{}={} {:.1}%", r.parameter.label(), r.value, 100.0 * a),
            (_, t) => format!("{}={} non-finite {}", r.parameter.label(), r.value, t.as_deref().unwrap_or("?")),
        })
        .collect();
    check(result.all_finite() && result.runs.len() == 6, summary.join(", "))
}

fn determinism(d: &Desk, ab: &AblationRun) -> Verdict {
    // Rerun the full model with the first seed and compare with the
    // ablation's run of the same configuration.
    let mut cfg = d.cfg.clone();
    cfg.schedule.seed = SEEDS[0];
    let out = train(&cfg, &d.data, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let again = out.final_eval().expect("the last epoch is evaluated").acc_ensemble;
    let first = ab.matrix.rows[4].accuracies[0];
    let diff = 100.0 * (again - first).abs();
    check(diff < 0.5, format!("{:.2}% vs {:.2}% (difference {diff:.3} pp, bit-identical: {})", 100.0 * first, 100.0 * again, first == again))
}

fn main() -> ExitCode {
    let epochs: u64 = std::env::var("SYMGAN_ACCEPTANCE_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(50);
    println!("acceptance: desk-scale criteria use {epochs} epochs and seeds {SEEDS:?}");
    let mut ok = true;
    ok &= report(1, "loss gradients match central differences", gradients);
    ok &= report(2, "loss oracles on two-sample batches", loss_oracles);
    ok &= report(3, "structural invariants", structural);
    ok &= report(4, "SSIM properties and raw MNIST value", ssim_checks);
    ok &= report(9, "sigma selection is the grid optimum", sigma_selection);

    let d = desk(epochs);
    let ablation = run_ablation(&d);
    let with_ablation = |f: &dyn Fn(&AblationRun) -> Verdict| match &ablation {
        Ok(ab) => f(ab),
        Err(e) => Err(format!("ablation failed: {e}")),
    };
    ok &= report(5, "desk-scale adaptation beats source-only by 10 pp", || with_ablation(&|ab| adaptation(&d, ab)));
    ok &= report(6, "ablation medians non-decreasing towards the full model", || with_ablation(&ablation_trend));
    ok &= report(7, "loss-weight sweep stays finite", || sweep(&d));
    ok &= report(8, "seeded runs are reproducible", || with_ablation(&|ab| determinism(&d, ab)));

    println!("acceptance: {}", if ok { "all criteria passed" } else { "some criteria FAILED" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
