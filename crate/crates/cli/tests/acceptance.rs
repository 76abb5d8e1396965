//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method as HttpMethod, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sant_core::al::AlScore;
use sant_core::config::PostHoc;
use sant_core::dataset::{synth_gaussian, SynthConfig};
use sant_core::eat::{
    build_eat_input, eat_input_dim, loss_l_d, loss_l_m, loss_l_m_soft_grad, EatBatch, EatConfig, EatNetwork,
    ErrorClassWeights, FeatureRef, MarginMode,
};
use sant_core::engine::{Event, LabelPhase, Terminal};
use sant_core::harness::{drive, run_experiment, RunReport};
use sant_core::model::{calibrate, entropy, AnnotatorModel, Arch, ModelConfig};
use sant_core::record::Assignee;
use sant_core::trainer::{TrainState, TrainerConfig};
use sant_core::triage::{bi_weight, decide_half_batch, decide_uncertainty_dynamic, eta, TriageScore};
use sant_core::{Engine, ExperimentConfig, Label, LabeledDataset, Method, Oracle, TaskSpec};
use sant_service::{router, AppState, Metrics, NextItem};
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("bi-weight and eta oracle", bi_weight_oracle),
        ("L_d and hard L_m oracle", eat_loss_oracle),
        ("weighted neighborhood entropy oracle", neighborhood_oracle),
        ("gradient suite", gradient_suite),
        ("budget and termination invariants", budget_invariants),
        ("triage-rule equivalence", triage_rules),
        ("coordinate descent", coordinate_descent),
        ("trend reproduction", trend_reproduction),
        ("post-hoc mechanics", post_hoc_mechanics),
        ("calibration", calibration),
        ("service/harness parity", service_parity),
        ("quality identity", identity_summary),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2} s): {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// Every simulated run in this suite feeds the quality identity check.
static IDENTITY_CHECKED: AtomicUsize = AtomicUsize::new(0);
static IDENTITY_FAILURES: Mutex<Vec<String>> = Mutex::new(Vec::new());

fn record_identity(report: &RunReport) {
    IDENTITY_CHECKED.fetch_add(1, Ordering::SeqCst);
    let (Some(overall), Some(correct)) = (report.quality_overall, report.n_model_correct) else {
        IDENTITY_FAILURES.lock().unwrap().push("report without quality".into());
        return;
    };
    let n_human = report.counts.human + report.counts.reallocated;
    let expected = (n_human + correct) as f64 / report.dataset_size as f64;
    if overall != expected {
        IDENTITY_FAILURES.lock().unwrap().push(format!(
            "{} seed {} fraction {}: {overall} != {expected}",
            report.config.method, report.config.seed, report.config.budget_fraction
        ));
    }
}

fn identity_summary() -> Outcome {
    let checked = IDENTITY_CHECKED.load(Ordering::SeqCst);
    let failures = IDENTITY_FAILURES.lock().unwrap();
    ensure!(checked > 0, "no simulated runs were checked");
    ensure!(failures.is_empty(), "{} of {checked} runs violate it, first: {}", failures.len(), failures[0]);
    Ok(format!("quality_overall = (n_human + n_model_correct)/|X| exactly in all {checked} simulated runs"))
}

fn bi_weight_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let al: f64 = rng.gen();
        let eat_score: f64 = rng.gen();
        let n: usize = rng.gen_range(1..5000);
        let t: usize = rng.gen_range(0..=n);
        let t0: f64 = rng.gen();
        // eta = e^(t/n - T0); al^eta computed as e^(eta ln al).
        let eta_ref = std::f64::consts::E.powf(t as f64 / n as f64 - t0);
        let bi_ref = if al == 0.0 { 0.0 } else { (eta_ref * al.ln()).exp() * eat_score };
        let eta_got = eta(t, n, t0);
        let bi_got = bi_weight(al, eat_score, eta_got).map_err(|e| e.to_string())?;
        let err = (eta_got - eta_ref).abs().max((bi_got - bi_ref).abs());
        worst = worst.max(err);
        ensure!(err <= 1e-9, "al={al} eat={eat_score} t={t} n={n} T0={t0}: eta {eta_got} vs {eta_ref}, bi {bi_got} vs {bi_ref}");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("1000 tuples, max abs error {worst:.2e} (tol 1e-9), {:.1} ms", elapsed.as_secs_f64() * 1e3))
}

fn eat_loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(1..=16);
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let indicators: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let losses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let weights = ErrorClassWeights {
            weight_error: rng.gen_range(0.2..4.0),
            weight_correct: rng.gen_range(0.2..4.0),
        };
        let margin: f64 = rng.gen_range(0.0..1.5);

        // Partition by indicator, sum each side, average over n.
        let mut err_sum = 0.0;
        let mut ok_sum = 0.0;
        for i in 0..n {
            if indicators[i] {
                err_sum += -(d[i].ln());
            } else {
                ok_sum += -((1.0 - d[i]).ln());
            }
        }
        let l_d_ref = (weights.weight_error * err_sum + weights.weight_correct * ok_sum) / n as f64;
        let samples: Vec<(bool, f64)> = indicators.iter().copied().zip(d.iter().copied()).collect();
        let l_d = loss_l_d(&samples, weights);

        let human: Vec<f64> = (0..n).filter(|&i| d[i] >= 0.5).map(|i| losses[i]).collect();
        let model: Vec<f64> = (0..n).filter(|&i| d[i] < 0.5).map(|i| losses[i]).collect();
        let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let l_m_ref = f64::max(0.0, margin + avg(&model) - avg(&human));
        let per_item: Vec<(f64, f64)> = losses.iter().copied().zip(d.iter().copied()).collect();
        let l_m = loss_l_m(&per_item, margin, MarginMode::Hard);

        let err = (l_d - l_d_ref).abs().max((l_m - l_m_ref).abs());
        worst = worst.max(err);
        ensure!(err <= 1e-12, "n={n}: L_d {l_d} vs {l_d_ref}, L_m {l_m} vs {l_m_ref}");
    }
    // Difference between the two sides exactly equal to the margin.
    let boundary: [(Vec<(f64, f64)>, f64); 3] = [
        (vec![(1.5, 0.9), (1.5, 0.6), (0.25, 0.1)], 1.25),
        (vec![(2.0, 0.5), (0.5, 0.49)], 1.5),
        (vec![(0.75, 0.7)], 0.75),
    ];
    for (items, margin) in &boundary {
        let v = loss_l_m(items, *margin, MarginMode::Hard);
        ensure!(v == 0.0, "boundary case {items:?} margin {margin} gave {v}");
    }
    Ok(format!("500 batches, max abs error {worst:.2e} (tol 1e-12); 3 margin-boundary cases return 0"))
}

fn random_model(task: TaskSpec, arch: Arch, rng: &mut ChaCha8Rng) -> AnnotatorModel<f64> {
    let mut model = AnnotatorModel::<f64>::zeros(task, arch);
    if let Arch::Mlp { .. } = arch {
        let fresh = AnnotatorModel::<f64>::new(
            task,
            &ModelConfig {
                arch,
                ..ModelConfig::default()
            },
            rng.gen(),
        );
        model.net = fresh.net;
    }
    for i in 0..model.net.param_count() {
        *model.net.param_mut(i) = rng.gen_range(-1.0..1.0);
    }
    model
}

fn neighborhood_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut checked = 0;
    for case in 0..200 {
        let k = [1, 3, 5][case % 3];
        let dim = rng.gen_range(1..=4);
        let classes = rng.gen_range(2..=4);
        let size = rng.gen_range(2..=12);
        // Small integer grid, so equal similarities and zero vectors occur.
        let feats: Vec<Vec<f64>> = (0..size)
            .map(|_| (0..dim).map(|_| rng.gen_range(-2i32..=2) as f64).collect())
            .collect();
        let mut ids: Vec<String> = (0..size).map(|i| format!("n{i:02}")).collect();
        ids.shuffle(&mut rng);
        let task = TaskSpec::multiclass(classes, dim);
        let model = random_model(task, Arch::Linear, &mut rng);
        let cfg = EatConfig {
            k,
            ..EatConfig::default()
        };
        let batch: Vec<FeatureRef<'_, f64>> = (0..size)
            .map(|i| FeatureRef {
                id: &ids[i],
                features: &feats[i],
            })
            .collect();
        for q in 0..size {
            let got = build_eat_input(batch[q], &batch, &model, &cfg).map_err(|e| e.to_string())?;
            let expected = brute_eat_input(q, &feats, &ids, &model, k);
            ensure!(got == expected, "case {case} query {q} k={k}: {got:?} vs {expected:?}");
            checked += 1;
        }
    }
    Ok(format!("200 batches, {checked} queries, k in {{1,3,5}}, exact equality"))
}

fn brute_eat_input(q: usize, feats: &[Vec<f64>], ids: &[String], model: &AnnotatorModel<f64>, k: usize) -> Vec<f64> {
    let cos = |a: &[f64], b: &[f64]| {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
        }
    };
    let mut cands: Vec<(f64, &str, usize)> = (0..feats.len())
        .filter(|&j| ids[j] != ids[q])
        .map(|j| (cos(&feats[q], &feats[j]), ids[j].as_str(), j))
        .collect();
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    let mut weighted = vec![0.0; k];
    for (slot, &(sim, _, j)) in cands.iter().take(k).enumerate() {
        let p = model.predict(&feats[j]).unwrap().probs;
        let mut h = 0.0;
        for &pi in &p {
            if pi > 0.0 {
                h += -pi * pi.ln();
            }
        }
        weighted[slot] = h * sim;
    }
    let mut v = feats[q].clone();
    v.extend(model.predict(&feats[q]).unwrap().probs);
    v.extend(weighted);
    v
}

/// Relative error with an absolute floor of 1e-6 on the denominator, so
/// gradients that are zero on both sides compare as equal.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let h = 1e-6;
    let (mut worst_model, mut worst_eat, mut worst_lm) = (0.0f64, 0.0f64, 0.0f64);
    let mut params = 0;
    for inst in 0..50 {
        // Annotator head.
        let dim = rng.gen_range(1..=4);
        let classes = rng.gen_range(2..=4);
        let task = match inst % 3 {
            0 => TaskSpec::binary(dim),
            1 => TaskSpec::multiclass(classes, dim),
            _ => TaskSpec::multilabel(classes, dim),
        };
        let arch = if inst % 2 == 0 {
            Arch::Linear
        } else {
            Arch::Mlp {
                hidden: rng.gen_range(2..=5),
            }
        };
        let mut model = random_model(task, arch, &mut rng);
        let n = rng.gen_range(1..=6);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<Label> = (0..n)
            .map(|_| {
                if task.task_kind.is_multilabel() {
                    Label::tags((0..task.num_classes).filter(|_| rng.gen_bool(0.4)))
                } else {
                    Label::Class(rng.gen_range(0..task.num_classes))
                }
            })
            .collect();
        let batch = |m: &AnnotatorModel<f64>| m.batch_loss(xs.iter().map(|x| x.as_slice()).zip(labels.iter())).unwrap();
        let (_, grads) = model
            .loss_and_grad(xs.iter().map(|x| x.as_slice()).zip(labels.iter()))
            .map_err(|e| e.to_string())?;
        let analytic = grads.flat();
        for i in 0..model.net.param_count() {
            let orig = *model.net.param_mut(i);
            *model.net.param_mut(i) = orig + h;
            let up = batch(&model);
            *model.net.param_mut(i) = orig - h;
            let down = batch(&model);
            *model.net.param_mut(i) = orig;
            let e = rel_err(analytic[i], (up - down) / (2.0 * h));
            worst_model = worst_model.max(e);
            ensure!(e < 1e-4, "annotator {inst} param {i}: {} vs {}", analytic[i], (up - down) / (2.0 * h));
            params += 1;
        }

        // EAT network, L_d + soft L_m.
        let in_dim = rng.gen_range(2..=6);
        let cfg = EatConfig {
            hidden: [rng.gen_range(2..=5), rng.gen_range(2..=5)],
            ..EatConfig::default()
        };
        let mut eat = EatNetwork::<f64>::new(in_dim, &cfg, rng.gen());
        for i in 0..eat.net.param_count() {
            *eat.net.param_mut(i) = rng.gen_range(-1.0..1.0);
        }
        let m = rng.gen_range(2..=8);
        let inputs: Vec<Vec<f64>> = (0..m).map(|_| (0..in_dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let indicators: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.5)).collect();
        let model_losses: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
        let weights = ErrorClassWeights {
            weight_error: rng.gen_range(0.5..2.0),
            weight_correct: rng.gen_range(0.5..2.0),
        };
        let margin = rng.gen_range(0.5..2.0);
        let eb = EatBatch {
            inputs: &inputs,
            indicators: &indicators,
            model_losses: &model_losses,
        };
        let eval = |net: &EatNetwork<f64>| {
            let r = net.loss_and_grad(&eb, weights, margin, None::<(f64, &mut ChaCha8Rng)>).unwrap();
            r.l_d + r.l_m
        };
        let analytic = eat
            .loss_and_grad(&eb, weights, margin, None::<(f64, &mut ChaCha8Rng)>)
            .map_err(|e| e.to_string())?
            .grads
            .flat();
        for i in 0..eat.net.param_count() {
            let orig = *eat.net.param_mut(i);
            *eat.net.param_mut(i) = orig + h;
            let up = eval(&eat);
            *eat.net.param_mut(i) = orig - h;
            let down = eval(&eat);
            *eat.net.param_mut(i) = orig;
            let e = rel_err(analytic[i], (up - down) / (2.0 * h));
            worst_eat = worst_eat.max(e);
            ensure!(e < 1e-4, "EAT {inst} param {i}: {} vs {}", analytic[i], (up - down) / (2.0 * h));
            params += 1;
        }

        // Soft L_m with respect to each d^EAT, away from the hinge.
        let per_item: Vec<(f64, f64)> = loop {
            let k = rng.gen_range(1..=10);
            let v: Vec<(f64, f64)> = (0..k).map(|_| (rng.gen_range(0.0..3.0), rng.gen_range(0.05..0.95))).collect();
            let (hm, mm) = soft_means(&v);
            if (margin + mm - hm).abs() > 1e-3 {
                break v;
            }
        };
        let analytic = loss_l_m_soft_grad(&per_item, margin);
        for i in 0..per_item.len() {
            let mut up = per_item.clone();
            up[i].1 += h;
            let mut down = per_item.clone();
            down[i].1 -= h;
            let fd = (loss_l_m(&up, margin, MarginMode::Soft) - loss_l_m(&down, margin, MarginMode::Soft)) / (2.0 * h);
            let e = rel_err(analytic[i], fd);
            worst_lm = worst_lm.max(e);
            ensure!(e < 1e-4, "soft L_m {inst} item {i}: {} vs {fd}", analytic[i]);
            params += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "50 instances, {params} partials; max rel error annotator {worst_model:.1e}, EAT {worst_eat:.1e}, soft L_m {worst_lm:.1e} (tol 1e-4)"
    ))
}

fn soft_means(v: &[(f64, f64)]) -> (f64, f64) {
    let wh: f64 = v.iter().map(|p| p.1).sum();
    let wm: f64 = v.iter().map(|p| 1.0 - p.1).sum();
    let h = v.iter().map(|p| p.1 * p.0).sum::<f64>() / wh;
    let m = v.iter().map(|p| (1.0 - p.1) * p.0).sum::<f64>() / wm;
    (h, m)
}

fn synth(n: usize, classes: usize, hard_frac: f64, seed: u64) -> LabeledDataset {
    synth_gaussian(&SynthConfig {
        n,
        num_classes: classes,
        hard_frac,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn budget_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut exhausted, mut data_end, mut realloc_total) = (0, 0, 0);
    for run in 0..100 {
        let n = rng.gen_range(10..=500);
        let ld = synth(n, rng.gen_range(2..=4), rng.gen_range(0.0..0.5), rng.gen());
        let oracle = ld.oracle.unwrap();
        let dataset = Arc::new(ld.dataset);
        let method = *Method::ALL.choose(&mut rng).unwrap();
        let fraction = rng.gen_range(0.02..=1.0);
        let mut config = ExperimentConfig {
            batch_size: *[1, 4, 8, 16, 32, 64].choose(&mut rng).unwrap(),
            post_hoc: *[PostHoc::None, PostHoc::Reannotate, PostHoc::RetrainReannotate].choose(&mut rng).unwrap(),
            retrain_epochs: 3,
            ..ExperimentConfig::new(method, fraction, rng.gen())
        };
        let budget = config.budget(n);
        if rng.gen_bool(0.5) {
            config.warmup_count = Some(rng.gen_range(0..=budget.min(40)));
        }
        let out = run_experiment(&config, dataset.clone(), &oracle).map_err(|e| format!("run {run}: {e}"))?;
        let r = &out.report;
        record_identity(r);
        let c = r.counts;
        let n_human = c.human + c.reallocated;
        let ctx = format!("run {run} ({method}, n={n}, budget={budget})");
        ensure!(r.records.len() == n, "{ctx}: {} records", r.records.len());
        let ids: BTreeSet<&str> = r.records.iter().map(|x| x.item_id.as_str()).collect();
        ensure!(ids.len() == n && c.total() == n, "{ctx}: duplicate records");
        ensure!(n_human <= budget, "{ctx}: {n_human} human labels");
        ensure!(r.budget_used == n_human, "{ctx}: ledger {} vs {n_human} human labels", r.budget_used);
        let realloc_events = out
            .events
            .iter()
            .filter(|e| matches!(e, Event::Label { phase: LabelPhase::Reallocation, .. }))
            .count();
        ensure!(realloc_events == c.reallocated, "{ctx}: reallocation events");
        match r.terminal {
            Some(Terminal::BudgetExhausted { model_after_exhaustion }) => {
                exhausted += 1;
                ensure!(r.budget_used == budget, "{ctx}: exhausted with {} used", r.budget_used);
                ensure!(c.reallocated == 0, "{ctx}: re-allocation after exhaustion");
                ensure!(model_after_exhaustion <= c.model + c.reannotated, "{ctx}: model count");
            }
            Some(Terminal::DataExhausted {
                remaining_budget,
                model_annotated,
                reallocated,
            }) => {
                data_end += 1;
                realloc_total += reallocated;
                ensure!(
                    reallocated == remaining_budget.min(model_annotated),
                    "{ctx}: reallocated {reallocated} of remaining {remaining_budget}, model {model_annotated}"
                );
                ensure!(c.reallocated == reallocated, "{ctx}: record count {}", c.reallocated);
                ensure!(
                    r.budget_used == budget - remaining_budget + reallocated,
                    "{ctx}: budget consumption"
                );
            }
            None => return Err(format!("{ctx}: no terminal condition")),
        }
    }
    Ok(format!(
        "100 runs: {exhausted} budget-exhausted, {data_end} data-exhausted ({realloc_total} re-allocated labels), human <= budget throughout"
    ))
}

fn triage_rules() -> Outcome {
    let mut disagreements = 0;
    for i in 0..100 {
        for j in 0..100 {
            // Half-step grid: no point lies exactly on the boundary.
            let al = (i as f64 + 0.5) / 100.0;
            let max_pred = (j as f64 + 0.5) / 100.0;
            let d = decide_uncertainty_dynamic(TriageScore::al_only(AlScore::normalized(al)), max_pred);
            let algebraic = al > max_pred / (1.0 + max_pred);
            if (d.assignee == Assignee::Human) != algebraic {
                disagreements += 1;
            }
        }
    }
    ensure!(disagreements == 0, "{disagreements} grid points disagree");
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for n in 1..=64usize {
        let ids: Vec<String> = (0..n).map(|i| format!("h{i:02}")).collect();
        let batch: Vec<(&str, TriageScore<f64>)> = ids
            .iter()
            .map(|id| {
                // Coarse scores so ties occur.
                let bi = rng.gen_range(0..8) as f64 / 8.0;
                (id.as_str(), TriageScore::eat_only(bi))
            })
            .collect();
        let humans = decide_half_batch(&batch).iter().filter(|d| d.assignee == Assignee::Human).count();
        ensure!(humans == n.div_ceil(2), "n={n}: {humans} to human");
    }
    Ok("10^4 grid points agree with al > max_pred/(1+max_pred); half-batch gives ceil(n/2) for n in 1..=64".into())
}

fn separable(seed: u64, n: usize) -> Vec<(Vec<f64>, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            (vec![sign * rng.gen_range(0.5..2.0), rng.gen_range(-2.0..2.0)], Label::Class(c))
        })
        .collect()
}

fn coordinate_descent() -> Outcome {
    let mut worst_rise = f64::NEG_INFINITY;
    let mut min_acc = 1.0f64;
    let seeds = 10;
    for seed in 0..seeds {
        let task = TaskSpec::binary(2);
        let ecfg = EatConfig {
            dropout: 0.0,
            learning_rate: 0.01,
            ..EatConfig::default()
        };
        let model = AnnotatorModel::new(
            task,
            &ModelConfig {
                learning_rate: 0.01,
                ..ModelConfig::default()
            },
            seed,
        );
        let eat = EatNetwork::new(eat_input_dim(2, 2, ecfg.k), &ecfg, seed + 1);
        let mut st = TrainState::new(model, Some(eat), ecfg, TrainerConfig::default(), seed);
        let data = separable(seed, 40);
        for (i, (x, l)) in data.iter().enumerate() {
            st.add_human(&format!("p{i:02}"), x.clone(), l.clone()).map_err(|e| e.to_string())?;
        }
        let all = st.all_indices();
        let mut prev = st.total_loss(&all).map_err(|e| e.to_string())?.total;
        for epoch in 0..50 {
            st.train_full(1).map_err(|e| e.to_string())?;
            let now = st.total_loss(&all).map_err(|e| e.to_string())?.total;
            worst_rise = worst_rise.max(now - prev);
            ensure!(now <= prev + 1e-9, "seed {seed} epoch {epoch}: loss rose from {prev} to {now}");
            prev = now;
        }
        let correct = data
            .iter()
            .filter(|(x, l)| st.model.predict(x).unwrap().argmax() == l.class().unwrap())
            .count();
        let acc = correct as f64 / data.len() as f64;
        min_acc = min_acc.min(acc);
        ensure!(acc >= 0.95, "seed {seed}: training accuracy {acc}");
    }
    Ok(format!(
        "{seeds} seeds x 50 epochs: largest step change {worst_rise:.2e} (slack 1e-9), min training accuracy {min_acc:.3}"
    ))
}

/// Runs every config on its dataset across the available cores; results keep input order.
fn run_all(jobs: Vec<(ExperimentConfig, Arc<sant_core::Dataset>, Arc<Oracle>)>) -> Vec<RunReport> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<RunReport>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((config, dataset, oracle)) = jobs.get(i) else { break };
                let mut out = run_experiment(config, dataset.clone(), oracle).expect("simulated run").report;
                record_identity(&out);
                out.records.clear();
                out.loss_trace.clear();
                out.rounds.clear();
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().unwrap()).collect()
}

const TREND_SEEDS: u64 = 10;
const TREND_BUDGETS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn trend_reproduction() -> Outcome {
    let start = Instant::now();
    let mut jobs = Vec::new();
    for seed in 0..TREND_SEEDS {
        let ld = synth(2000, 2, 0.2, seed);
        let oracle = Arc::new(ld.oracle.unwrap());
        let dataset = Arc::new(ld.dataset);
        for method in Method::ALL {
            for fraction in TREND_BUDGETS {
                jobs.push((ExperimentConfig::new(method, fraction, seed), dataset.clone(), oracle.clone()));
            }
        }
    }
    let reports = run_all(jobs);
    let mut model_q: HashMap<(Method, u64), Vec<f64>> = HashMap::new();
    let mut overall_q: HashMap<(Method, u64), Vec<f64>> = HashMap::new();
    for r in &reports {
        let key = (r.config.method, (r.config.budget_fraction * 100.0).round() as u64);
        model_q.entry(key).or_default().push(r.quality_model_annotated.unwrap_or(f64::NAN));
        overall_q.entry(key).or_default().push(r.quality_overall.unwrap());
    }
    let mean = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    let at50 = |m: Method| mean(&model_q[&(m, 50)]);
    let (sant, random, no_eat) = (at50(Method::Sant), at50(Method::Random), at50(Method::SantNoEat));
    let elapsed = start.elapsed();

    ensure!(sant.is_finite() && random.is_finite() && no_eat.is_finite(), "missing model-annotated accuracy at 50%");
    ensure!(sant - random >= 5.0, "(a) SANT {sant:.2} vs Random {random:.2}: gap {:.2} < 5", sant - random);
    ensure!(sant >= no_eat - 0.5, "(b) SANT {sant:.2} < sant-no-eat {no_eat:.2} - 0.5");
    let mut curve_notes = Vec::new();
    for method in Method::ALL {
        let curve: Vec<f64> = TREND_BUDGETS
            .iter()
            .map(|f| mean(&overall_q[&(method, (f * 100.0).round() as u64)]))
            .collect();
        let drops: Vec<f64> = curve.windows(2).map(|w| w[0] - w[1]).filter(|&d| d > 0.0).collect();
        ensure!(
            drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.3),
            "(c) {method} overall quality not monotone: {curve:.2?}"
        );
        if !drops.is_empty() {
            curve_notes.push(format!("{method} one inversion {:.2}", drops[0]));
        }
    }
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "{} runs; at 50%: SANT {sant:.2}, Random {random:.2}, sant-no-eat {no_eat:.2}; overall quality monotone for all 8 methods{}",
        reports.len(),
        if curve_notes.is_empty() { String::new() } else { format!(" ({})", curve_notes.join(", ")) }
    ))
}

fn post_hoc_mechanics() -> Outcome {
    let seeds = 10;
    let mut plain_acc = Vec::new();
    let mut retrain_acc = Vec::new();
    let mut touched_total = 0;
    for seed in 0..seeds {
        let ld = synth(2000, 2, 0.2, 100 + seed);
        let oracle = ld.oracle.unwrap();
        let dataset = Arc::new(ld.dataset);
        let base = ExperimentConfig::new(Method::Sant, 0.5, seed);
        let plain = run_experiment(&base, dataset.clone(), &oracle).map_err(|e| e.to_string())?.report;
        record_identity(&plain);

        let mut engine = Engine::<f64>::new(
            ExperimentConfig {
                post_hoc: PostHoc::Reannotate,
                ..base.clone()
            },
            dataset.clone(),
        )
        .map_err(|e| e.to_string())?;
        drive(&mut engine, &oracle).map_err(|e| e.to_string())?;
        let reannotated = RunReport::from_engine(&engine, Some(&oracle)).map_err(|e| e.to_string())?;
        record_identity(&reannotated);

        // Same trajectory; only model records are touched.
        ensure!(plain.records.len() == reannotated.records.len(), "seed {seed}: record counts differ");
        for (a, b) in plain.records.iter().zip(&reannotated.records) {
            ensure!(a.item_id == b.item_id && a.assignee == b.assignee, "seed {seed}: record order differs");
            match a.assignee {
                Assignee::Human => ensure!(a == b, "seed {seed}: human record {} changed", a.item_id),
                Assignee::Model => {
                    ensure!(b.reannotated, "seed {seed}: model record {} not re-annotated", a.item_id);
                    touched_total += 1;
                }
            }
        }
        let model_records = plain.records.iter().filter(|r| r.assignee == Assignee::Model).count();
        ensure!(reannotated.counts.reannotated == model_records, "seed {seed}: reannotated count");

        // Idempotent with the model unchanged.
        let before: Vec<_> = engine.records().cloned().collect();
        let events_before = engine.events().len();
        let touched = engine.reannotate().map_err(|e| e.to_string())?;
        let after: Vec<_> = engine.records().cloned().collect();
        ensure!(touched == model_records, "seed {seed}: second pass touched {touched}");
        ensure!(before == after, "seed {seed}: second re-annotation changed records");
        ensure!(engine.events().len() == events_before + touched, "seed {seed}: events");

        let retrained = run_experiment(
            &ExperimentConfig {
                post_hoc: PostHoc::RetrainReannotate,
                ..base
            },
            dataset,
            &oracle,
        )
        .map_err(|e| e.to_string())?
        .report;
        record_identity(&retrained);
        plain_acc.push(plain.quality_model_annotated.unwrap());
        retrain_acc.push(retrained.quality_model_annotated.unwrap());
    }
    let mean = |v: &[f64]| 100.0 * v.iter().sum::<f64>() / v.len() as f64;
    let (p, r) = (mean(&plain_acc), mean(&retrain_acc));
    ensure!(r >= p - 1.0, "retrain+reannotate {r:.2} vs none {p:.2}");
    Ok(format!(
        "{touched_total} model records re-annotated over {seeds} seeds, human records untouched, second pass idempotent; model-annotated accuracy none {p:.2} vs retrain+reannotate {r:.2}"
    ))
}

fn calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut min_gain = f64::INFINITY;
    for i in 0..10_000 {
        let c = rng.gen_range(2..=10);
        let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-6.0..6.0)).collect();
        let raw = calibrate(&logits, 1.0).map_err(|e| e.to_string())?;
        let cal = calibrate(&logits, 1.5).map_err(|e| e.to_string())?;
        ensure!(raw.argmax() == cal.argmax(), "vector {i}: argmax changed");
        let gain = entropy(&cal) - entropy(&raw);
        min_gain = min_gain.min(gain);
        ensure!(gain >= 0.0, "vector {i}: entropy fell by {}", -gain);
    }
    Ok(format!("10^4 logit vectors at T=1.5: argmax unchanged, smallest entropy gain {min_gain:.2e} nats"))
}

async fn call(app: &Router, method: HttpMethod, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn parity_run(app: &Router, dataset_id: &str, config: &ExperimentConfig, oracle: &Oracle) -> Result<(RunReport, Metrics, Vec<Event>), String> {
    let (status, body) = call(
        app,
        HttpMethod::POST,
        "/sessions",
        Some(json!({"dataset_id": dataset_id, "config": config}).to_string()),
    )
    .await;
    ensure!(status == StatusCode::CREATED, "create session: {status} {body}");
    let sid = body["session_id"].as_str().unwrap().to_string();
    loop {
        let (status, body) = call(app, HttpMethod::GET, &format!("/sessions/{sid}/next"), None).await;
        ensure!(status == StatusCode::OK, "next: {status} {body}");
        let next: NextItem = serde_json::from_value(body).map_err(|e| e.to_string())?;
        let Some(item) = next.item else { break };
        let label = oracle.reveal(&item.item_id).map_err(|e| e.to_string())?;
        let (status, body) = call(
            app,
            HttpMethod::POST,
            &format!("/sessions/{sid}/labels"),
            Some(json!({"item_id": item.item_id, "label": label}).to_string()),
        )
        .await;
        ensure!(status == StatusCode::OK, "submit: {status} {body}");
    }
    let (_, report) = call(app, HttpMethod::GET, &format!("/sessions/{sid}/report"), None).await;
    let (_, metrics) = call(app, HttpMethod::GET, &format!("/sessions/{sid}/metrics"), None).await;
    let (_, events) = call(app, HttpMethod::GET, &format!("/sessions/{sid}/events"), None).await;
    Ok((
        serde_json::from_value(report).map_err(|e| e.to_string())?,
        serde_json::from_value(metrics).map_err(|e| e.to_string())?,
        serde_json::from_value(events).map_err(|e| e.to_string())?,
    ))
}

fn service_parity() -> Outcome {
    let ld = synth(100, 2, 0.2, 808);
    let oracle = ld.oracle.clone().unwrap();
    let dataset = Arc::new(ld.dataset.clone());
    let mut body = Vec::new();
    ld.write_jsonl(&mut body).unwrap();
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let app = router(AppState::in_memory());
        let (status, info) = call(&app, HttpMethod::POST, "/datasets", Some(String::from_utf8(body).unwrap())).await;
        ensure!(status == StatusCode::CREATED, "upload: {status} {info}");
        let did = info["dataset_id"].as_str().unwrap().to_string();
        let mut summary = Vec::new();
        for seed in 0..3 {
            let config = ExperimentConfig {
                batch_size: 16,
                ..ExperimentConfig::new(Method::Sant, 0.3, seed)
            };
            let sim = run_experiment(&config, dataset.clone(), &oracle).map_err(|e| e.to_string())?;
            record_identity(&sim.report);
            let (served, metrics, events) = parity_run(&app, &did, &config, &oracle).await?;
            ensure!(served == sim.report, "seed {seed}: served report differs from simulation");
            ensure!(events == sim.events, "seed {seed}: event logs differ");
            let r = &sim.report;
            ensure!(
                metrics.counts == r.counts
                    && metrics.quality_overall == r.quality_overall
                    && metrics.quality_model_annotated == r.quality_model_annotated
                    && metrics.n_model_correct == r.n_model_correct
                    && metrics.terminal == r.terminal
                    && metrics.budget.used == r.budget_used
                    && metrics.loss_trace == r.loss_trace,
                "seed {seed}: live metrics differ from the simulated report"
            );
            summary.push(format!(
                "seed {seed}: {} human / {} model, overall {:.3}",
                r.counts.human + r.counts.reallocated,
                r.counts.model,
                r.quality_overall.unwrap()
            ));
        }
        Ok(format!("100-item dataset, 3 seeds, reports, metrics and event logs identical ({})", summary.join("; ")))
    })
}
