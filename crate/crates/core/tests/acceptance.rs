// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite. Runs every criterion on synthetic fixtures and prints
//! one PASS/FAIL line each; exits nonzero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use expertlens::ap::{average_precision, score_all_neurons, ApVector};
use expertlens::corpus::{
    read_activation_dump, write_activation_dump, ActivationDump, HumanPair, HumanScore, HumanSimilarityTable,
    NeuronMap, Pooling, SentenceId,
};
use expertlens::domains::random_domain_baseline;
use expertlens::experts::{extract_experts, fold_stability, jaccard, top_k_experts, FoldConfig};
use expertlens::metrics::{
    align_with_humans, ap_cosine, bootstrap_mean_ci, negadj_cosine, permutation_test, spearman, symmetric_kl,
    AlignmentConfig, BootstrapConfig, MissingPairPolicy, NegAdjForm, SimilarityMethod, SimilarityRecord, KL_EPSILON,
};
use expertlens::pipeline::{preset::write_preset, run_pipeline, RunConfig};
use expertlens::rng::{standard_normal, SeedPath};
use expertlens::synth::{generate_synthetic_concepts, generate_synthetic_hierarchy, Structure, SynthConfig};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

/// Ranked list under the pessimistic order, built by insertion sort with an
/// explicit comparator, then AP as the step integral of the PR curve with
/// every prefix recounted from scratch.
fn pr_curve_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let before = |i: usize, j: usize| {
        if scores[i] != scores[j] {
            scores[i] > scores[j]
        } else if labels[i] != labels[j] {
            !labels[i]
        } else {
            i < j
        }
    };
    let mut order: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let at = order.iter().position(|&j| before(i, j)).unwrap_or(order.len());
        order.insert(at, i);
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 1..=order.len() {
        let tp = order[..k].iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / k as f64);
        prev_recall = recall;
    }
    ap
}

/// Minimum AP over every ordering consistent with the scores.
fn min_over_tie_orders(scores: &[f64], labels: &[bool]) -> f64 {
    fn permute(rest: &mut Vec<usize>, prefix: &mut Vec<usize>, scores: &[f64], labels: &[bool], best: &mut f64) {
        if rest.is_empty() {
            let n_pos = labels.iter().filter(|&&l| l).count() as f64;
            let mut tp = 0.0;
            let mut ap = 0.0;
            for (k, &i) in prefix.iter().enumerate() {
                if labels[i] {
                    tp += 1.0;
                    ap += tp / (k + 1) as f64;
                }
            }
            *best = best.min(ap / n_pos);
            return;
        }
        for idx in 0..rest.len() {
            let i = rest[idx];
            if rest.iter().any(|&j| scores[j] > scores[i]) {
                continue;
            }
            rest.remove(idx);
            prefix.push(i);
            permute(rest, prefix, scores, labels, best);
            prefix.pop();
            rest.insert(idx, i);
        }
    }
    let mut best = f64::INFINITY;
    permute(&mut (0..scores.len()).collect(), &mut Vec::new(), scores, labels, &mut best);
    best
}

fn criterion_ap_oracle() -> Outcome {
    let mut max_diff = 0.0f64;
    let mut max_tie_diff = 0.0f64;
    let mut tie_cases = 0;
    for case in 0..1000u64 {
        let mut rng = SeedPath::root(1).child("ap").index(case).rng();
        let n = rng.random_range(2..=12);
        // few distinct values force ties
        let levels = rng.random_range(1..=4);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / 4.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let got = average_precision(&scores, &labels).map_err(fail)?;
        max_diff = max_diff.max((got - pr_curve_ap(&scores, &labels)).abs());
        if n <= 7 {
            tie_cases += 1;
            max_tie_diff = max_tie_diff.max((got - min_over_tie_orders(&scores, &labels)).abs());
        }
    }
    check(
        max_diff <= 1e-12 && max_tie_diff <= 1e-12,
        format!("1000 cases, max |AP - PR-curve oracle| = {max_diff:.1e}; {tie_cases} small cases, max |AP - min over tie orders| = {max_tie_diff:.1e}"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_planted_recovery() -> Outcome {
    let mut min_planted = f64::INFINITY;
    let (mut recovered, mut planted_total) = (0usize, 0usize);
    for seed in 0..20u64 {
        let cfg = SynthConfig::independent(10_000, 4, 50, 4.0, 1000 + seed).map_err(fail)?;
        let world = generate_synthetic_concepts(&cfg).map_err(fail)?;
        for m in &world.manifests {
            let ap = score_all_neurons(&world.dumps[0], m).map_err(fail)?;
            let planted = world.truth.planted(0, &m.concept).ok_or("no planted set")?;
            for &i in planted {
                min_planted = min_planted.min(f64::from(ap.scores[i as usize]));
            }
            let top: HashSet<u64> = top_k_experts(&ap, 50).map_err(fail)?.ids.into_iter().collect();
            recovered += planted.iter().filter(|i| top.contains(i)).count();
            planted_total += planted.len();
        }
    }
    let rate = recovered as f64 / planted_total as f64;
    check(
        min_planted >= 0.95 && rate >= 0.99,
        format!("20 seeds x 4 concepts, min planted AP = {min_planted:.4} (gate 0.95), top-50 recovery = {:.2}% (gate 99%)", 100.0 * rate),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_fold_stability() -> Outcome {
    let cfg = SynthConfig::independent(2000, 10, 50, 4.0, 31).map_err(fail)?;
    let world = generate_synthetic_concepts(&cfg).map_err(fail)?;
    let fcfg = FoldConfig {
        pos_size: 200,
        neg_size: 500,
        folds: 8,
        taus: vec![0.5],
        cross_pairs: 45,
        bootstrap: BootstrapConfig {
            replicates: 2000,
            level: 0.95,
        },
    };
    let report = fold_stability(&world.dumps[0], &world.manifests, &world.manifests, &fcfg, SeedPath::root(32)).map_err(fail)?;
    let p = &report.points[0];
    let cross = p.cross.ok_or("cross-concept overlap undefined")?;
    check(
        p.within >= 0.7 && cross <= 0.05,
        format!("tau=0.5, 10 concepts x 8 folds: within = {:.3} (gate >= 0.7), cross = {cross:.4} (gate <= 0.05)", p.within),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_anti_monotonicity() -> Outcome {
    let n_concepts = 40;
    let mut cfg = SynthConfig::independent(2000, n_concepts, 40, 0.0, 41).map_err(fail)?;
    cfg.pos_size = 100;
    cfg.neg_size = 300;
    // weak to strong concepts so that some sets empty out as tau grows
    cfg.concept_shifts = Some((0..n_concepts).map(|i| 0.5 + 2.5 * i as f64 / (n_concepts - 1) as f64).collect());
    let world = generate_synthetic_concepts(&cfg).map_err(fail)?;
    let taus = [0.5, 0.6, 0.7, 0.8, 0.9];
    let mut empty = [0usize; 5];
    for m in &world.manifests {
        let ap = score_all_neurons(&world.dumps[0], m).map_err(fail)?;
        let sets = taus.iter().map(|&t| extract_experts(&ap, t)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
        for (t, s) in sets.iter().enumerate() {
            if s.is_empty() {
                empty[t] += 1;
            }
        }
        for w in sets.windows(2) {
            let outer: HashSet<u64> = w[0].ids.iter().copied().collect();
            if w[1].len() > w[0].len() || !w[1].ids.iter().all(|i| outer.contains(i)) {
                return Err(format!("{}: set at {} not nested in set at {}", m.concept, w[1].rule, w[0].rule));
            }
        }
    }
    let frac: Vec<f64> = empty.iter().map(|&e| e as f64 / n_concepts as f64).collect();
    check(
        frac.windows(2).all(|w| w[0] <= w[1]) && frac[4] > frac[0],
        format!("{n_concepts} concepts nested and non-increasing over tau 0.5..0.9; empty fraction {frac:?}"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_alignment_recovery() -> Outcome {
    let n_pairs = 200;
    let mut rng = SeedPath::root(51).child("latent").rng();
    let latent: Vec<f64> = (0..n_pairs).map(|_| rng.random::<f64>()).collect();
    let cfg = SynthConfig {
        model: "synthetic".into(),
        checkpoints: vec!["final".into()],
        drift: 0.0,
        neuron_map: NeuronMap::uniform(1, 7000, 0).map_err(fail)?,
        experts_per_concept: 16,
        shift: 4.0,
        concept_shifts: None,
        structure: Structure::Pairs { sharing: latent.clone() },
        pos_size: 20,
        neg_size: 100,
        pooling: Pooling::Max,
        seed: 52,
    };
    let world = generate_synthetic_concepts(&cfg).map_err(fail)?;
    let tau = 0.5;
    let sets = world
        .manifests
        .iter()
        .map(|m| extract_experts(&score_all_neurons(&world.dumps[0], m)?, tau))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let method = SimilarityMethod::Jaccard { tau };
    let records = (0..n_pairs)
        .map(|i| {
            Ok(SimilarityRecord {
                a: sets[2 * i].concept.clone(),
                b: sets[2 * i + 1].concept.clone(),
                method: method.clone(),
                value: jaccard(&sets[2 * i], &sets[2 * i + 1])?,
                checkpoint: "final".into(),
                model: "synthetic".into(),
            })
        })
        .collect::<Result<Vec<_>, expertlens::Error>>()
        .map_err(fail)?;
    let table = |scores: &[f64]| {
        let pairs = records
            .iter()
            .zip(scores)
            .map(|(r, &s)| HumanPair {
                a: r.a.clone(),
                b: r.b.clone(),
                score: HumanScore::Continuous(s),
            })
            .collect();
        HumanSimilarityTable::new("latent", pairs)
    };
    let acfg = AlignmentConfig {
        bootstrap: BootstrapConfig::default(),
        permutations: 10_000,
        missing: MissingPairPolicy::Error,
    };
    let human: Vec<f64> = latent.iter().map(|h| 50.0 * h).collect();
    let real = align_with_humans(&records, &table(&human).map_err(fail)?, &method, &acfg, SeedPath::root(53)).map_err(fail)?;

    let mut abs_rho = Vec::new();
    let mut p = Vec::new();
    for s in 0..20u64 {
        let mut shuffled = human.clone();
        shuffled.shuffle(&mut SeedPath::root(54).index(s).rng());
        let r = align_with_humans(&records, &table(&shuffled).map_err(fail)?, &method, &acfg, SeedPath::root(55).index(s))
            .map_err(fail)?;
        abs_rho.push(r.rho.abs());
        p.push(r.p_value);
    }
    let median = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        (v[9] + v[10]) / 2.0
    };
    let (m_rho, m_p) = (median(abs_rho), median(p));
    check(
        real.rho >= 0.9 && real.ci.lower > 0.0 && m_rho <= 0.1 && m_p > 0.05,
        format!(
            "{n_pairs} pairs, planted: rho = {:.3}, CI [{:.3}, {:.3}]; shuffled (20 seeds): median |rho| = {m_rho:.3}, median p = {m_p:.3}",
            real.rho, real.ci.lower, real.ci.upper
        ),
    )
}

// ---------------------------------------------------------------- 6

fn mid_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn criterion_calibration() -> Outcome {
    let trials = 2000;
    let mut rejections = 0;
    for t in 0..trials {
        let mut rng = SeedPath::root(61).index(t).rng();
        let a: Vec<f64> = (0..20).map(|_| standard_normal(&mut rng)).collect();
        let b: Vec<f64> = (0..20).map(|_| standard_normal(&mut rng)).collect();
        if permutation_test(&a, &b, 999, SeedPath::root(62).index(t)).map_err(fail)? < 0.05 {
            rejections += 1;
        }
    }
    let frac = rejections as f64 / trials as f64;

    let mut worst_ratio: f64 = 1.0;
    for (k, p) in [(0u64, 0.1f64), (1, 0.3), (2, 0.5)] {
        let n = 200;
        let ones = (p * n as f64).round() as usize;
        let x: Vec<f64> = (0..n).map(|i| if i < ones { 1.0 } else { 0.0 }).collect();
        let ci = bootstrap_mean_ci(
            &x,
            &BootstrapConfig {
                replicates: 10_000,
                level: 0.95,
            },
            SeedPath::root(63).index(k),
        )
        .map_err(fail)?;
        let closed = 2.0 * 1.959_963_984_540_054 * (p * (1.0 - p) / n as f64).sqrt();
        let ratio = ci.width() / closed;
        if (ratio - 1.0).abs() > (worst_ratio - 1.0).abs() {
            worst_ratio = ratio;
        }
    }

    let mut max_diff = 0.0f64;
    let mut case = 0u64;
    let mut done = 0;
    while done < 1000 {
        let mut rng = SeedPath::root(64).index(case).rng();
        case += 1;
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6))).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6))).collect();
        if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
            continue;
        }
        let want = naive_pearson(&mid_ranks(&x), &mid_ranks(&y));
        max_diff = max_diff.max((spearman(&x, &y).map_err(fail)? - want).abs());
        done += 1;
    }
    check(
        (0.03..=0.07).contains(&frac) && (worst_ratio - 1.0).abs() <= 0.2 && max_diff <= 1e-12,
        format!(
            "null rejection rate {frac:.4} over {trials} trials; worst bootstrap/binomial width ratio {worst_ratio:.3}; spearman max |diff| {max_diff:.1e} over 1000 tied cases"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_domain_recovery() -> Outcome {
    let cfg = SynthConfig {
        model: "synthetic".into(),
        checkpoints: vec!["final".into()],
        drift: 0.0,
        neuron_map: NeuronMap::uniform(1, 4000, 0).map_err(fail)?,
        experts_per_concept: 50,
        shift: 4.0,
        concept_shifts: None,
        structure: Structure::Hierarchy {
            n_domains: 10,
            n_specific: 4,
            core_size: 10,
            broader_core_fraction: 0.5,
        },
        pos_size: 100,
        neg_size: 300,
        pooling: Pooling::Max,
        seed: 71,
    };
    let world = generate_synthetic_hierarchy(&cfg).map_err(fail)?;
    let sets = world
        .manifests
        .iter()
        .map(|m| extract_experts(&score_all_neurons(&world.dumps[0], m)?, 0.5))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let report = random_domain_baseline("synthetic", &sets, &world.truth.domains, 1000, SeedPath::root(72)).map_err(fail)?;
    let mut worst_ratio = f64::INFINITY;
    let mut worst_p: f64 = 0.0;
    let mut core_mismatch = Vec::new();
    for d in &report.domains {
        let base = d.baseline.shared_mean;
        let ratio = if base > 0.0 { d.pct_shared_in_domain / base } else { f64::INFINITY };
        if d.pct_shared_in_domain <= 0.0 {
            worst_ratio = 0.0;
        }
        worst_ratio = worst_ratio.min(ratio);
        worst_p = worst_p.max(d.baseline.p_shared);
        if world.truth.cores.get(&d.domain) != Some(&d.core) {
            core_mismatch.push(d.domain.clone());
        }
    }
    check(
        worst_ratio >= 10.0 && worst_p <= 0.01 && core_mismatch.is_empty(),
        format!(
            "10 domains: mean pct_shared {:.2}% vs baseline {:.4}%, min ratio {worst_ratio:.1}, max p {worst_p:.4}, core mismatches {core_mismatch:?}",
            report.mean_pct_shared, report.baseline_mean_pct_shared
        ),
    )
}

// ---------------------------------------------------------------- 8

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("readable output dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).expect("readable file"));
            }
        }
    }
    out
}

fn random_dump(n_sentences: usize, map: NeuronMap, seed: SeedPath) -> Result<ActivationDump, String> {
    let n = n_sentences * map.n_neurons() as usize;
    let mut rng = seed.rng();
    let values: Vec<f32> = (0..n).map(|_| standard_normal(&mut rng) as f32 * 3.0).collect();
    let ids = (0..n_sentences as u64).map(|i| SentenceId(i * 7919 + 3)).collect();
    ActivationDump::new("m", "ck", Pooling::Mean, map, ids, values).map_err(fail)
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let shapes: [(usize, NeuronMap); 3] = [
        (400, NeuronMap::uniform(10, 800, 200).map_err(fail)?),
        (37, NeuronMap::uniform(3, 17, 5).map_err(fail)?),
        (1, NeuronMap::uniform(1, 1, 0).map_err(fail)?),
    ];
    for (k, (rows, map)) in shapes.into_iter().enumerate() {
        let dump = random_dump(rows, map, SeedPath::root(81).index(k as u64))?;
        let (a, b) = (dir.path().join(format!("{k}a.actd")), dir.path().join(format!("{k}b.actd")));
        write_activation_dump(&dump, &a).map_err(fail)?;
        let back = read_activation_dump(&a).map_err(fail)?;
        let bits = |d: &ActivationDump| d.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&back) != bits(&dump) || back != dump {
            return Err(format!("ACTD round trip {k} differs"));
        }
        write_activation_dump(&back, &b).map_err(fail)?;
        if fs::read(&a).map_err(fail)? != fs::read(&b).map_err(fail)? {
            return Err(format!("ACTD rewrite {k} not byte-identical"));
        }
    }

    let cfg_path = write_preset("paper-desk", &dir.path().join("desk"), 8).map_err(fail)?;
    let base = RunConfig::load(&cfg_path).map_err(fail)?;
    let mut bundles = Vec::new();
    for (label, threads) in [("t1", 1), ("t1-again", 1), ("t8", 8)] {
        let mut cfg = base.clone();
        cfg.output_dir = dir.path().join(label);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(fail)?;
        pool.install(|| run_pipeline(&cfg)).map_err(fail)?;
        bundles.push((label, tree(&cfg.output_dir)));
    }
    let (_, reference) = &bundles[0];
    for (label, other) in &bundles[1..] {
        if other != reference {
            let differing: Vec<&String> = reference.keys().filter(|k| other.get(*k) != reference.get(*k)).collect();
            return Err(format!("bundle {label} differs from t1: {differing:?}"));
        }
    }
    Ok(format!(
        "3 ACTD dumps round-trip bit-exact; {}-file bundle identical across rerun and 1 vs 8 threads",
        reference.len()
    ))
}

// ---------------------------------------------------------------- 9

fn unit_apv(scores: Vec<f32>) -> ApVector {
    let map = Arc::new(NeuronMap::uniform(1, scores.len() as u32, 0).expect("valid map"));
    ApVector::new("c", "k", Pooling::Max, map, scores, 1, 1).expect("valid AP vector")
}

fn naive_kl(a: &[f32], b: &[f32]) -> f64 {
    let za: f64 = a.iter().map(|&x| f64::from(x) + KL_EPSILON).sum();
    let zb: f64 = b.iter().map(|&x| f64::from(x) + KL_EPSILON).sum();
    let mut pq = 0.0;
    let mut qp = 0.0;
    for i in 0..a.len() {
        let p = (f64::from(a[i]) + KL_EPSILON) / za;
        let q = (f64::from(b[i]) + KL_EPSILON) / zb;
        pq += p * (p / q).ln();
        qp += q * (q / p).ln();
    }
    pq + qp
}

fn naive_cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nx * ny)
}

fn criterion_similarity_suites() -> Outcome {
    let mut cos_diff = 0.0f64;
    let mut kl_diff = 0.0f64;
    let mut asym = 0.0f64;
    let mut bounds_ok = true;
    let mut kl_ok = true;
    for case in 0..500u64 {
        let mut rng = SeedPath::root(91).index(case).rng();
        let n = rng.random_range(2..600);
        let mut draw = || -> Vec<f32> {
            (0..n)
                .map(|_| match rng.random_range(0..10) {
                    0 => 0.0,
                    1 => 1.0,
                    2 => 0.5,
                    _ => rng.random::<f32>(),
                })
                .collect()
        };
        let (sa, sb) = (draw(), draw());
        if sa.iter().all(|&v| v == 0.5) || sb.iter().all(|&v| v == 0.5) || sa.iter().all(|&v| v == 0.0) || sb.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (a, b) = (unit_apv(sa.clone()), unit_apv(sb.clone()));
        let f = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let g = |v: &[f32]| v.iter().map(|&x| (f64::from(x) - 0.5).abs()).collect::<Vec<_>>();

        let cos = ap_cosine(&a, &b).map_err(fail)?;
        let neg = negadj_cosine(&a, &b, NegAdjForm::AbsDeviation).map_err(fail)?;
        let (ja, jb) = (extract_experts(&a, 0.5).map_err(fail)?, extract_experts(&b, 0.5).map_err(fail)?);
        let jac = jaccard(&ja, &jb).map_err(fail)?;
        let (set_a, set_b): (HashSet<usize>, HashSet<usize>) = (
            (0..n).filter(|&i| f64::from(sa[i]) >= 0.5).collect(),
            (0..n).filter(|&i| f64::from(sb[i]) >= 0.5).collect(),
        );
        let union = set_a.union(&set_b).count();
        let jac_oracle = if union == 0 { 0.0 } else { set_a.intersection(&set_b).count() as f64 / union as f64 };

        cos_diff = cos_diff
            .max((cos - naive_cosine(&f(&sa), &f(&sb))).abs())
            .max((neg - naive_cosine(&g(&sa), &g(&sb))).abs())
            .max((jac - jac_oracle).abs());
        bounds_ok &= [cos, neg, jac].iter().all(|v| (0.0..=1.0).contains(v));

        let kl = symmetric_kl(&a, &b).map_err(fail)?;
        let kl_rev = symmetric_kl(&b, &a).map_err(fail)?;
        kl_diff = kl_diff.max((kl - naive_kl(&sa, &sb)).abs());
        asym = asym.max((kl - kl_rev).abs());
        kl_ok &= kl >= 0.0 && symmetric_kl(&a, &a).map_err(fail)? == 0.0;
    }
    check(
        bounds_ok && kl_ok && cos_diff <= 1e-12 && kl_diff <= 1e-10 && asym <= 1e-12,
        format!(
            "jaccard/ap-cosine/negadj-cosine in [0,1] with max oracle diff {cos_diff:.1e}; sym-KL >= 0, KL(a,a) = 0, max asymmetry {asym:.1e}, max oracle diff {kl_diff:.1e}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("AP oracle equivalence", criterion_ap_oracle),
        ("planted-expert recovery", criterion_planted_recovery),
        ("fold-stability pattern", criterion_fold_stability),
        ("anti-monotonicity sweep", criterion_anti_monotonicity),
        ("alignment recovery", criterion_alignment_recovery),
        ("statistics calibration", criterion_calibration),
        ("domain-structure recovery", criterion_domain_recovery),
        ("format and determinism", criterion_determinism),
        ("KL/cosine suites", criterion_similarity_suites),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
