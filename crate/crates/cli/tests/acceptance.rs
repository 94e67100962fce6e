//! Acceptance criteria. Each test prints one PASS/FAIL line to stdout
//! (bypassing the test harness's capture) before asserting.

// The oracles below index by position on purpose, to read like the formulas.
#![allow(clippy::needless_range_loop, clippy::manual_checked_ops)]

use std::collections::HashMap;
use std::io::Write as _;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use pgdr::commands::generate;
use pgdr::config::{GenSpec, PgdrConfig};
use pgdr::data::{
    build_blurry_stream, flip_uniform, make_gaussian_dataset, DatasetSpec, FlipMode, LabelSet,
    Sample, StreamSpec, TaskStream,
};
use pgdr::disambiguation::{fit_gmm_1d, update_pseudo, EmOptions, PseudoLabel};
use pgdr::formats::write_stream;
use pgdr::math::Rng;
use pgdr::memory::{rebuild_memory, MemoryConfig, Pool, PoolItem};
use pgdr::model::{
    total_grad, Activation, AugmentedBatch, LossWeights, Model, Objective, Parameters,
};
use pgdr::prototypes::PrototypeBank;
use pgdr::trainer::{run_stream, EvalMode, ExperimentReport, VariantTag};

fn verdict(id: &str, name: &str, pass: bool, detail: String) {
    let line = format!(
        "[{}] {id} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Gradients against central finite differences of an independent oracle.

struct OracleBatch {
    weak: Vec<Vec<f64>>,
    strong: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
}

fn oracle_logits(p: &Parameters, x: &[f64]) -> Vec<f64> {
    let (h, d, c) = (p.hidden_dim(), p.input_dim(), p.num_classes());
    let mut feat = vec![0.0; h];
    for (j, f) in feat.iter_mut().enumerate() {
        let mut a = p.encoder_bias[j];
        for k in 0..d {
            a += p.encoder_weight.get(j, k) * x[k];
        }
        *f = a.tanh();
    }
    (0..c)
        .map(|r| {
            p.head_bias[r]
                + (0..h)
                    .map(|j| p.head_weight.get(r, j) * feat[j])
                    .sum::<f64>()
        })
        .collect()
}

fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn oracle_xent(target: &[f64], q: &[f64]) -> f64 {
    -target
        .iter()
        .zip(q)
        .map(|(t, q)| t * q.max(1e-12).ln())
        .sum::<f64>()
}

fn oracle_loss(
    p: &Parameters,
    snap: Option<&Parameters>,
    b: &OracleBatch,
    w: LossWeights,
    tau: f64,
) -> f64 {
    let n = b.targets.len() as f64;
    let (mut ce, mut kd, mut cr) = (0.0, 0.0, 0.0);
    for i in 0..b.targets.len() {
        let zw = oracle_logits(p, &b.weak[i]);
        let zs = oracle_logits(p, &b.strong[i]);
        ce += oracle_xent(&b.targets[i], &oracle_softmax(&zw));
        cr += oracle_xent(&b.targets[i], &oracle_softmax(&zs));
        if let Some(s) = snap {
            let old = s.num_classes();
            let zo = oracle_logits(s, &b.weak[i]);
            let cur: Vec<f64> = zw[..old].iter().map(|v| v / tau).collect();
            let prev: Vec<f64> = zo[..old].iter().map(|v| v / tau).collect();
            kd += oracle_xent(&oracle_softmax(&prev), &oracle_softmax(&cur));
        }
    }
    w.ce * ce / n + w.kd * kd / n + w.cr * cr / n
}

fn random_params(d: usize, h: usize, c: usize, rng: &mut Rng) -> Parameters {
    let mut p = Parameters::zeros(d, h, c);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform_range(-0.8, 0.8);
        }
    }
    p
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let (d, h, c, old, n) = (4, 5, 3, 2, 6);
    let mut rng = Rng::new(2024);
    let params = random_params(d, h, c, &mut rng);
    let snap_params = random_params(d, h, old, &mut rng);
    let model = Model::from_parts(Activation::Tanh, params.clone(), params.zeros_like()).unwrap();
    let snapshot = Model::from_parts(
        Activation::Tanh,
        snap_params.clone(),
        snap_params.zeros_like(),
    )
    .unwrap();

    let mut weak = Vec::new();
    let mut strong = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        weak.push(
            x.iter()
                .map(|v| v + 0.05 * rng.normal())
                .collect::<Vec<f64>>(),
        );
        strong.push(
            x.iter()
                .map(|v| v + 0.3 * rng.normal())
                .collect::<Vec<f64>>(),
        );
        let raw: Vec<f64> = (0..c).map(|_| rng.uniform()).collect();
        let s: f64 = raw.iter().sum();
        targets.push(raw.into_iter().map(|v| v / s).collect::<Vec<f64>>());
    }
    let batch = AugmentedBatch {
        weak: weak.clone(),
        strong: strong.clone(),
        targets: targets.clone(),
    };
    let oracle_batch = OracleBatch {
        weak,
        strong,
        targets,
    };

    let cases = [
        (
            "L_ce",
            LossWeights {
                ce: 1.0,
                kd: 0.0,
                cr: 0.0,
            },
            1.0,
        ),
        (
            "L_kd",
            LossWeights {
                ce: 0.0,
                kd: 1.0,
                cr: 0.0,
            },
            1.0,
        ),
        (
            "L_cr",
            LossWeights {
                ce: 0.0,
                kd: 0.0,
                cr: 1.0,
            },
            1.0,
        ),
        (
            "weighted sum",
            LossWeights {
                ce: 0.7,
                kd: 1.3,
                cr: 0.4,
            },
            2.0,
        ),
    ];
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut value_gap = 0.0f64;
    let mut detail = Vec::new();
    for (name, weights, tau) in cases {
        let objective = Objective {
            weights,
            temperature: tau,
        };
        let (grads, values) = total_grad(&model, &batch, Some(&snapshot), &objective).unwrap();
        let oracle_value = oracle_loss(&params, Some(&snap_params), &oracle_batch, weights, tau);
        value_gap =
            value_gap.max((values.total - oracle_value).abs() / oracle_value.abs().max(1e-12));

        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.2.to_vec()).collect();
        let mut case_worst = 0.0f64;
        for (t, tensor) in analytic.iter().enumerate() {
            for (i, &a) in tensor.iter().enumerate() {
                let mut plus = params.clone();
                plus.tensors_mut()[t][i] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[t][i] -= step;
                let fd = (oracle_loss(&plus, Some(&snap_params), &oracle_batch, weights, tau)
                    - oracle_loss(&minus, Some(&snap_params), &oracle_batch, weights, tau))
                    / (2.0 * step);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                case_worst = case_worst.max(rel);
            }
        }
        worst = worst.max(case_worst);
        detail.push(format!("{name} {case_worst:.1e}"));
    }
    let elapsed = start.elapsed();
    verdict(
        "1",
        "gradient suite",
        worst < 1e-4 && value_gap < 1e-10 && elapsed < Duration::from_secs(5),
        format!(
            "max rel err {worst:.2e} (< 1e-4) [{}], loss vs oracle {value_gap:.1e}, {:.2}s (< 5s)",
            detail.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Two-component mixture on a well separated sample.

#[test]
fn criterion_2_gmm_suite() {
    let start = Instant::now();
    let mut rng = Rng::new(31);
    let mut values = Vec::with_capacity(2000);
    let mut source = Vec::with_capacity(2000);
    for i in 0..2000 {
        let s = i % 2;
        values.push(if s == 0 { 0.0 } else { 10.0 } + rng.normal());
        source.push(s);
    }
    let fit = fit_gmm_1d(&values, &EmOptions::default()).unwrap();
    let [a, b] = *fit.model.components();
    let correct = values
        .iter()
        .zip(&source)
        .filter(|(&x, &s)| (fit.model.posterior_old(x) < 0.5) == (s == 1))
        .count();
    let accuracy = correct as f64 / values.len() as f64;
    let worst_drop = fit
        .log_likelihoods
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max);
    let elapsed = start.elapsed();
    let pass = a.mean.abs() < 0.2
        && (b.mean - 10.0).abs() < 0.2
        && accuracy >= 0.99
        && worst_drop <= 1e-9
        && elapsed < Duration::from_secs(1);
    verdict(
        "2",
        "GMM suite",
        pass,
        format!(
            "means {:.4}/{:.4} (within 0.2 of 0/10), posterior accuracy {:.2}% (>= 99%), largest LL drop {worst_drop:.1e} (<= 1e-9) over {} iterations, {:.3}s (< 1s)",
            a.mean,
            b.mean,
            100.0 * accuracy,
            fit.iterations(),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Memory selection against a literal slow reference.

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Literal selection for one class group of `(id, feature)` pairs.
fn reference_class_selection(
    group: &[(u64, Vec<f64>)],
    proto: &[f64],
    budget: usize,
    k: usize,
    fraction: f64,
) -> Vec<u64> {
    let n = group.len();
    if n == 0 {
        return Vec::new();
    }
    let kk = k.min(n.saturating_sub(1));
    // Neighbourhood and score of every member, keyed by id.
    let mut hood: HashMap<u64, Vec<u64>> = HashMap::new();
    let mut score: HashMap<u64, f64> = HashMap::new();
    for (id, f) in group {
        let mut others: Vec<(f64, u64)> = group
            .iter()
            .filter(|(j, _)| j != id)
            .map(|(j, g)| (euclid(f, g), *j))
            .collect();
        others.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        let nearest = &others[..kk];
        score.insert(*id, nearest.iter().map(|p| p.0).sum());
        hood.insert(*id, nearest.iter().map(|p| p.1).collect());
    }
    let want_diverse = (fraction * budget as f64).floor() as usize;
    let mut chosen: Vec<u64> = Vec::new();
    while chosen.len() < want_diverse {
        let eligible: Vec<u64> = group
            .iter()
            .map(|(id, _)| *id)
            .filter(|id| !chosen.contains(id))
            .filter(|id| chosen.iter().all(|s| !hood[s].contains(id)))
            .collect();
        let Some(best) = eligible
            .into_iter()
            .min_by(|x, y| score[x].partial_cmp(&score[y]).unwrap().then(x.cmp(y)))
        else {
            break;
        };
        chosen.push(best);
    }
    let mut rest: Vec<(f64, u64)> = group
        .iter()
        .filter(|(id, _)| !chosen.contains(id))
        .map(|(id, f)| (euclid(f, proto), *id))
        .collect();
    rest.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
    let reps = budget - chosen.len();
    chosen.extend(rest.into_iter().take(reps).map(|p| p.1));
    chosen.sort_unstable();
    chosen
}

#[test]
fn criterion_3_memory_oracle() {
    let start = Instant::now();
    let (k, per_class) = (3, 4);
    let mut rng = Rng::new(77);
    let mut mismatches = Vec::new();
    for instance in 0..25 {
        let classes = 1 + rng.below(3);
        let config = MemoryConfig {
            budget: per_class * classes,
            neighbors: k,
            diverse_fraction: MemoryConfig::default().diverse_fraction,
        };
        let mut bank = PrototypeBank::new(2, 0.5).unwrap();
        let mut protos = Vec::new();
        for c in 0..classes {
            let p = vec![rng.below(5) as f64, rng.below(5) as f64];
            bank.set(c, p.clone()).unwrap();
            protos.push(p);
        }
        let mut ids: Vec<u64> = (0..200).collect();
        rng.shuffle(&mut ids);
        let mut items = Vec::new();
        let mut groups: Vec<Vec<(u64, Vec<f64>)>> = vec![Vec::new(); classes];
        let mut next = 0;
        for (c, group) in groups.iter_mut().enumerate() {
            for _ in 0..rng.below(13) {
                let id = ids[next];
                next += 1;
                // Coarse grid so distance ties are common.
                let f = vec![rng.below(6) as f64, rng.below(6) as f64];
                group.push((id, f.clone()));
                let cands = LabelSet::singleton(c);
                items.push(PoolItem {
                    sample: Sample {
                        id,
                        features: f.clone(),
                        true_label: c,
                        candidates: cands.clone(),
                        task: 0,
                    },
                    pseudo: PseudoLabel::uniform(&cands, classes).unwrap(),
                    feature: f,
                    class: c,
                });
            }
        }
        let pool = Pool::from_items(items).unwrap();
        let memory = rebuild_memory(&pool, &bank, classes, &config).unwrap();
        for c in 0..classes {
            let mut got: Vec<u64> = memory
                .entries()
                .iter()
                .filter(|e| e.class == c)
                .map(|e| e.sample.id)
                .collect();
            got.sort_unstable();
            let want = reference_class_selection(
                &groups[c],
                &protos[c],
                per_class,
                k,
                config.diverse_fraction,
            );
            if got != want {
                mismatches.push(format!(
                    "instance {instance} class {c}: got {got:?}, want {want:?}"
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "3",
        "memory oracle",
        mismatches.is_empty() && elapsed < Duration::from_secs(5),
        format!(
            "{} mismatching class selections over 25 instances{}, {:.3}s (< 5s)",
            mismatches.len(),
            mismatches
                .first()
                .map(|m| format!(" (first: {m})"))
                .unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Pseudo-label invariants under frozen logits.

#[test]
fn criterion_4_pseudo_label_invariants() {
    let mut rng = Rng::new(404);
    let (mut support_bad, mut sum_bad, mut geo_bad) = (0usize, 0usize, 0usize);
    let mut worst_geo = 0.0f64;
    for _ in 0..10_000 {
        let dim = 2 + rng.below(11);
        let mut cands: Vec<usize> = (0..dim).filter(|_| rng.bernoulli(0.5)).collect();
        if cands.is_empty() {
            cands.push(rng.below(dim));
        }
        let s = LabelSet::new(cands.clone());
        // Start from uniform over a non-empty subset of S.
        let mut sub: Vec<usize> = cands
            .iter()
            .copied()
            .filter(|_| rng.bernoulli(0.6))
            .collect();
        if sub.is_empty() {
            sub.push(cands[rng.below(cands.len())]);
        }
        let mut p = PseudoLabel::uniform(&LabelSet::new(sub), dim).unwrap();
        let p0 = p.as_slice().to_vec();
        let logits: Vec<f64> = (0..dim).map(|_| 3.0 * rng.normal()).collect();
        let beta = rng.uniform_range(0.05, 0.95);
        // Oracle arg-max over the candidates, smallest index on ties.
        let mut z = cands[0];
        for &c in &cands {
            if logits[c] > logits[z] {
                z = c;
            }
        }
        let dist = |v: &[f64]| -> f64 {
            v.iter()
                .enumerate()
                .map(|(j, x)| (x - if j == z { 1.0 } else { 0.0 }).abs())
                .sum()
        };
        let d0 = dist(&p0);
        for k in 1..=20 {
            let picked = update_pseudo(&mut p, &logits, &s, beta).unwrap();
            let v = p.as_slice();
            if picked != z
                || v.iter()
                    .enumerate()
                    .any(|(j, &x)| x != 0.0 && !s.contains(j))
            {
                support_bad += 1;
            }
            if (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                sum_bad += 1;
            }
            let gap = (dist(v) - beta.powi(k) * d0).abs();
            worst_geo = worst_geo.max(gap);
            if gap > 1e-9 {
                geo_bad += 1;
            }
        }
    }
    verdict(
        "4",
        "pseudo-label invariants",
        support_bad == 0 && sum_bad == 0 && geo_bad == 0,
        format!(
            "10^4 cases x 20 steps: support violations {support_bad}, sum violations {sum_bad} (tol 1e-9), geometric violations {geo_bad} (worst gap {worst_geo:.1e})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Generator statistics.

#[test]
fn criterion_5_generator_statistics() {
    let mut rng = Rng::new(5);
    let space = LabelSet::new(0..20);
    let trials = 100_000;
    let (q, negatives) = (0.1, 19.0);
    let mut total = 0usize;
    let mut present = 0usize;
    for _ in 0..trials {
        let y = rng.below(20);
        let s = flip_uniform(y, &space, q, &mut rng).unwrap();
        total += s.len();
        present += usize::from(s.contains(y));
    }
    let mean = total as f64 / trials as f64;
    let expected = 1.0 + q * negatives;
    let sigma = (negatives * q * (1.0 - q) / trials as f64).sqrt();
    let flips_ok = (mean - expected).abs() <= 3.0 * sigma && present == trials;

    let (classes, tasks, per_class) = (10, 5, 97);
    let dataset = make_gaussian_dataset(&DatasetSpec {
        num_classes: classes,
        feature_dim: 4,
        samples_per_class: per_class,
        test_per_class: 2,
        cluster_separation: 3.0,
        cluster_stddev: 0.5,
        seed: 12,
    })
    .unwrap();
    let mut split_errors = Vec::new();
    for w in [70u32, 90, 100] {
        let stream = build_blurry_stream(
            &dataset,
            &StreamSpec {
                tasks,
                w,
                q: 0.3,
                flip_mode: FlipMode::Uniform,
                seed: 3,
            },
        )
        .unwrap();
        let mut counts = vec![vec![0usize; tasks]; classes];
        for task in &stream.tasks {
            for s in &task.train {
                counts[s.true_label][task.index] += 1;
            }
        }
        for c in 0..classes {
            // Classes are introduced two per task, in stream order.
            let home = c / (classes / tasks);
            let stay = per_class * w as usize / 100;
            let later = tasks - 1 - home;
            let mut want = vec![0usize; tasks];
            if later == 0 {
                want[home] = per_class;
            } else {
                want[home] = stay;
                let rest = per_class - stay;
                for (k, slot) in want[home + 1..].iter_mut().enumerate() {
                    *slot = rest / later + usize::from(k < rest % later);
                }
            }
            if counts[c] != want {
                split_errors.push(format!("W={w} class {c}: {:?} != {want:?}", counts[c]));
            }
        }
    }
    verdict(
        "5",
        "generator statistics",
        flips_ok && split_errors.is_empty(),
        format!(
            "mean |S| {mean:.4} vs {expected:.4} (3 sigma = {:.4}), true label present {present}/{trials}, blurry split mismatches {}{}",
            3.0 * sigma,
            split_errors.len(),
            split_errors.first().map(|e| format!(" (first: {e})")).unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. End-to-end directional claims on the desk stream.

fn desk_gen_spec() -> GenSpec {
    GenSpec::parse(
        "num_classes = 10\nfeature_dim = 16\nsamples_per_class = 100\ntest_per_class = 50\n\
         cluster_separation = 10\ncluster_stddev = 0.5\ntasks = 5\nw = 90\nq = 0.3\n\
         flip_mode = uniform\nseed = 7\n",
    )
    .unwrap()
}

/// Training settings shared by every paired run: defaults, with the memory
/// budget at 4% of the 1000 training samples.
const DESK_CONFIG: &str = "seed = 7\nmemory_budget = 40\n";

fn desk_stream() -> TaskStream {
    generate(&desk_gen_spec()).unwrap()
}

struct DeskRuns {
    reports: HashMap<VariantTag, ExperimentReport>,
    elapsed: Duration,
}

fn desk_runs() -> &'static DeskRuns {
    static RUNS: OnceLock<DeskRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let stream = desk_stream();
        let base = PgdrConfig::parse(DESK_CONFIG).unwrap();
        let variants = [
            VariantTag::Pgdr,
            VariantTag::NoMemory,
            VariantTag::RandomMemory,
            VariantTag::DistanceMemory,
        ];
        let reports = std::thread::scope(|scope| {
            let handles: Vec<_> = variants
                .iter()
                .map(|&v| {
                    let cfg = PgdrConfig {
                        variant: v,
                        ..base.clone()
                    };
                    let stream = &stream;
                    scope.spawn(move || (v, run_stream(stream, &cfg).unwrap().report))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        DeskRuns {
            reports,
            elapsed: start.elapsed(),
        }
    })
}

const DESK_LIMIT: Duration = Duration::from_secs(300);

#[test]
fn criterion_6a_memory_protects_old_classes() {
    let runs = desk_runs();
    let old = |v| {
        runs.reports[&v]
            .final_task()
            .and_then(|t| t.accuracy.old)
            .unwrap()
    };
    let (pgdr, none) = (old(VariantTag::Pgdr), old(VariantTag::NoMemory));
    verdict(
        "6a",
        "final-task old-class accuracy, PGDR vs NO_MEMORY",
        pgdr >= none + 10.0 && runs.elapsed < DESK_LIMIT,
        format!(
            "PGDR {pgdr:.2} vs NO_MEMORY {none:.2} (needs a gap >= 10 points), paired runs {:.1}s (< 300s)",
            runs.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_6b_selection_beats_alternatives() {
    let runs = desk_runs();
    let avg = |v| runs.reports[&v].average_accuracy().unwrap();
    let (pgdr, random, distance) = (
        avg(VariantTag::Pgdr),
        avg(VariantTag::RandomMemory),
        avg(VariantTag::DistanceMemory),
    );
    verdict(
        "6b",
        "average incremental accuracy, PGDR vs RANDOM_MEMORY and DISTANCE_MEMORY",
        pgdr >= random && pgdr >= distance - 1.0 && runs.elapsed < DESK_LIMIT,
        format!(
            "PGDR {pgdr:.2}, RANDOM_MEMORY {random:.2} (PGDR must be >=), DISTANCE_MEMORY {distance:.2} (PGDR must be >= it - 1)"
        ),
    );
}

#[test]
fn criterion_6c_prototype_eval_vs_linear() {
    let runs = desk_runs();
    let r = &runs.reports[&VariantTag::Pgdr];
    let proto = r.average_accuracy_with(EvalMode::Prototype).unwrap();
    let linear = r.average_accuracy_with(EvalMode::Linear).unwrap();
    verdict(
        "6c",
        "prototype vs linear evaluation on the same trained state",
        proto >= linear - 1.0 && runs.elapsed < DESK_LIMIT,
        format!("prototype {proto:.2} vs linear {linear:.2} (prototype must be >= linear - 1)"),
    );
}

#[test]
fn criterion_6d_separation_accuracy() {
    let runs = desk_runs();
    let r = &runs.reports[&VariantTag::Pgdr];
    let per_task: Vec<String> = r
        .tasks
        .iter()
        .filter_map(|t| t.outcome.separation_accuracy.map(|a| format!("{a:.1}")))
        .collect();
    let mean = r.mean_separation_accuracy().unwrap_or(0.0);
    verdict(
        "6d",
        "mean separation accuracy",
        mean >= 80.0 && runs.elapsed < DESK_LIMIT,
        format!("{mean:.2}% (>= 80%), per task [{}]", per_task.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// 7. Two full command-line runs produce identical metrics.

#[test]
fn criterion_7_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let stream_path = dir.path().join("stream.tsv");
    let config_path = dir.path().join("config.txt");
    std::fs::write(&stream_path, write_stream(&desk_stream())).unwrap();
    std::fs::write(&config_path, DESK_CONFIG).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_pgdr"))
            .env_remove(pgdr::config::SEED_ENV)
            .args(["run", "--stream"])
            .arg(&stream_path)
            .arg("--config")
            .arg(&config_path)
            .arg("--out-dir")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let (a, b) = (run("first"), run("second"));
    verdict(
        "7",
        "determinism",
        a == b && !a.is_empty(),
        format!(
            "metrics.csv {} bytes vs {} bytes, {}",
            a.len(),
            b.len(),
            if a == b {
                "byte-identical"
            } else {
                "different"
            }
        ),
    );
}
