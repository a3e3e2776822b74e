// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{slug, Analysis, Bundle, LoadedInputs, RunConfig};
use crate::ap::{score_all_neurons, ApVector};
use crate::corpus::{csv_string, HumanScore};
use crate::domains::{export_concept_graph, random_domain_baseline, domain_csv, DomainReport};
use crate::error::{Error, Result};
use crate::experts::dynamics::set_size_csv;
use crate::experts::stability::stability_csv;
use crate::experts::{
    checkpoint_overlap, extract_experts, fold_stability, pairwise_jaccard, set_size_stats, size_tau_slope,
    top_k_experts, CheckpointStep, ExpertSet, FoldConfig, SelectionRule, SetSizeRow, StabilityReport,
};
use crate::intervention::{build_intervention_plan, filter_word_list, prevalence_csv, prevalence_delta, PrevalenceReport};
use crate::layers::{
    aggregate_distributions, ap_histograms_shared, compare_layer_densities, layer_csv, BlockComparison,
    LayerDistribution, SharedHistograms,
};
use crate::metrics::{
    align_with_humans, alignment::alignment_csv, ap_cosine, bootstrap_mean_ci, compare_adjacent_levels,
    embedding_cosine, negadj_cosine, symmetric_kl, AlignmentConfig, AlignmentReport, BootstrapConfig, Ci,
    SimilarityMethod, SimilarityRecord,
};
use crate::metrics::contrasts::LevelComparison;
use crate::rng::SeedPath;

/// Per-dump scoring and extraction results.
struct Scored {
    aps: Vec<ApVector>,
    /// Threshold sets, `[tau][concept]`.
    sets: Vec<Vec<ExpertSet>>,
}

pub(super) fn execute(cfg: &RunConfig, inputs: &LoadedInputs, analyses: &[Analysis], out: &mut Bundle) -> Result<()> {
    let root = SeedPath::root(cfg.seed);
    let has = |a: Analysis| analyses.contains(&a);
    let p = &cfg.params;
    let boot = BootstrapConfig {
        replicates: p.bootstrap,
        level: p.confidence,
    };

    let mut scored: Vec<Scored> = Vec::new();
    if has(Analysis::Score) {
        scored = score(inputs, out)?;
    }
    if has(Analysis::Experts) {
        experts(cfg, inputs, &mut scored, &boot, root.child("experts"), out)?;
    }
    let mut records = Vec::new();
    if has(Analysis::Similarity) {
        records = similarity(cfg, inputs, &scored[inputs.primary], out)?;
    }
    if has(Analysis::Align) {
        align(cfg, inputs, &records, &boot, root.child("align"), out)?;
    }
    if has(Analysis::Domains) {
        domains(cfg, inputs, &scored[inputs.primary], root.child("domains"), out)?;
    }
    if has(Analysis::Layers) {
        layers(cfg, inputs, &scored[inputs.primary], root.child("layers"), out)?;
    }
    if has(Analysis::Folds) {
        folds(cfg, inputs, &boot, root.child("folds"), out)?;
    }
    if has(Analysis::Checkpoints) {
        checkpoints(inputs, &scored, &boot, root.child("checkpoints"), out)?;
    }
    if has(Analysis::Plan) {
        plans(cfg, inputs, &scored[inputs.primary], out)?;
    }
    if has(Analysis::Genstats) {
        genstats(cfg, inputs, root.child("genstats"), out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ApIndexRow {
    model: String,
    checkpoint: String,
    concept: String,
    file: String,
    n_pos: usize,
    n_neg: usize,
    max_ap: f32,
    mean_ap: f64,
}

#[derive(Serialize)]
struct ApIndex {
    vectors: Vec<ApIndexRow>,
}

fn score(inputs: &LoadedInputs, out: &mut Bundle) -> Result<Vec<Scored>> {
    let mut all = Vec::with_capacity(inputs.dumps.len());
    let mut index = Vec::new();
    for dump in &inputs.dumps {
        let mut aps = Vec::with_capacity(inputs.manifests.len());
        for m in &inputs.manifests {
            let ap = score_all_neurons(dump, m)?;
            let rel = format!("ap/{}/{}/{}.apv", slug(dump.model()), slug(dump.checkpoint()), slug(&m.concept));
            out.apv(&rel, &ap)?;
            index.push(ApIndexRow {
                model: dump.model().to_string(),
                checkpoint: dump.checkpoint().to_string(),
                concept: m.concept.clone(),
                file: rel,
                n_pos: ap.n_pos,
                n_neg: ap.n_neg,
                max_ap: ap.scores.iter().copied().fold(0.0, f32::max),
                mean_ap: ap.scores.iter().map(|&s| f64::from(s)).sum::<f64>() / ap.len() as f64,
            });
            aps.push(ap);
        }
        log::info!("scored {} concepts on {}/{}", aps.len(), dump.model(), dump.checkpoint());
        all.push(Scored { aps, sets: Vec::new() });
    }
    out.report("ap/index.json", &ApIndex { vectors: index })?;
    Ok(all)
}

#[derive(Serialize)]
struct ExpertFile<'a> {
    model: &'a str,
    checkpoint: &'a str,
    threshold_sets: Vec<&'a ExpertSet>,
    top_k_sets: Vec<ExpertSet>,
}

#[derive(Serialize)]
struct SizeSlope {
    model: String,
    checkpoint: String,
    slope_log10_per_tau: Option<f64>,
}

#[derive(Serialize)]
struct SetSizeReport {
    rows: Vec<SetSizeRow>,
    slopes: Vec<SizeSlope>,
}

fn experts(
    cfg: &RunConfig,
    inputs: &LoadedInputs,
    scored: &mut [Scored],
    boot: &BootstrapConfig,
    seed: SeedPath,
    out: &mut Bundle,
) -> Result<()> {
    let p = &cfg.params;
    let mut all_sets = Vec::new();
    let mut neuron_counts = BTreeMap::new();
    for (dump, s) in inputs.dumps.iter().zip(scored.iter_mut()) {
        s.sets = p
            .taus
            .iter()
            .map(|&tau| s.aps.iter().map(|ap| extract_experts(ap, tau)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let top = s.aps.iter().map(|ap| top_k_experts(ap, p.top_k)).collect::<Result<Vec<_>>>()?;
        out.report(
            &format!("experts/{}__{}.json", slug(dump.model()), slug(dump.checkpoint())),
            &ExpertFile {
                model: dump.model(),
                checkpoint: dump.checkpoint(),
                threshold_sets: s.sets.iter().flatten().collect(),
                top_k_sets: top,
            },
        )?;
        neuron_counts.insert(dump.model().to_string(), dump.n_neurons() as u64);
        all_sets.extend(s.sets.iter().flatten().map(|set| (dump.model().to_string(), set.clone())));
    }
    let rows = set_size_stats(&all_sets, &neuron_counts, boot, seed)?;
    let mut by_run: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        if let (SelectionRule::Threshold { tau }, Some(m)) = (r.rule, r.mean_log10_size) {
            by_run.entry((r.model.clone(), r.checkpoint.clone())).or_default().push((tau, m));
        }
    }
    let slopes = by_run
        .into_iter()
        .map(|((model, checkpoint), pts)| SizeSlope {
            model,
            checkpoint,
            slope_log10_per_tau: size_tau_slope(&pts).ok(),
        })
        .collect();
    out.text("experts/set_sizes.csv", &set_size_csv(&rows)?)?;
    out.report("experts/set_sizes.json", &SetSizeReport { rows, slopes })?;
    Ok(())
}

#[derive(Serialize)]
struct SimilarityFile<'a> {
    model: &'a str,
    checkpoint: &'a str,
    concepts: Vec<&'a str>,
    records: &'a [SimilarityRecord],
}

fn similarity(cfg: &RunConfig, inputs: &LoadedInputs, s: &Scored, out: &mut Bundle) -> Result<Vec<SimilarityRecord>> {
    let dump = &inputs.dumps[inputs.primary];
    let (model, checkpoint) = (dump.model(), dump.checkpoint());
    let n = s.aps.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let form = cfg.params.negadj_form;
    let per_pair: Vec<Vec<(SimilarityMethod, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&s.aps[i], &s.aps[j]);
            let mut v = Vec::with_capacity(cfg.params.taus.len() + 3 + inputs.embeddings.len());
            for (t, &tau) in cfg.params.taus.iter().enumerate() {
                v.push((SimilarityMethod::Jaccard { tau }, crate::experts::jaccard(&s.sets[t][i], &s.sets[t][j])?));
            }
            v.push((SimilarityMethod::ApCosine, ap_cosine(a, b)?));
            v.push((SimilarityMethod::NegadjCosine, negadj_cosine(a, b, form)?));
            v.push((SimilarityMethod::SymKl, symmetric_kl(a, b)?));
            for table in &inputs.embeddings {
                if let (Some(u), Some(w)) = (table.vectors.get(&a.concept), table.vectors.get(&b.concept)) {
                    v.push((
                        SimilarityMethod::EmbCosine {
                            embedding: table.name.clone(),
                        },
                        embedding_cosine(u, w)?,
                    ));
                }
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<SimilarityRecord> = pairs
        .iter()
        .zip(per_pair)
        .flat_map(|(&(i, j), values)| {
            values.into_iter().map(move |(method, value)| SimilarityRecord {
                a: s.aps[i].concept.clone(),
                b: s.aps[j].concept.clone(),
                method,
                value,
                checkpoint: checkpoint.to_string(),
                model: model.to_string(),
            })
        })
        .collect();
    out.report(
        "similarity/records.json",
        &SimilarityFile {
            model,
            checkpoint,
            concepts: s.aps.iter().map(|a| a.concept.as_str()).collect(),
            records: &records,
        },
    )?;
    let csv = csv_string(
        "similarity csv",
        &["model", "checkpoint", "a", "b", "method", "value"],
        records.iter().map(|r| {
            vec![
                r.model.clone(),
                r.checkpoint.clone(),
                r.a.clone(),
                r.b.clone(),
                r.method.to_string(),
                r.value.to_string(),
            ]
        }),
    )?;
    out.text("similarity/records.csv", &csv)?;
    Ok(records)
}

#[derive(Serialize)]
struct LevelReport {
    human_table: String,
    method: SimilarityMethod,
    comparison: LevelComparison,
}

#[derive(Serialize)]
struct SkippedAlignment {
    human_table: String,
    method: SimilarityMethod,
    reason: String,
}

#[derive(Serialize)]
struct AlignFile {
    /// Agreement between human raters reported for the full MEN dataset;
    /// a fixed reference, not recomputed.
    men_inter_rater_reference: f64,
    reports: Vec<AlignmentReport>,
    skipped: Vec<SkippedAlignment>,
    levels: Vec<LevelReport>,
}

fn distinct_methods(records: &[SimilarityRecord]) -> Vec<SimilarityMethod> {
    let mut methods: Vec<SimilarityMethod> = Vec::new();
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    methods
}

fn align(
    cfg: &RunConfig,
    inputs: &LoadedInputs,
    records: &[SimilarityRecord],
    boot: &BootstrapConfig,
    seed: SeedPath,
    out: &mut Bundle,
) -> Result<()> {
    let acfg = AlignmentConfig {
        bootstrap: *boot,
        permutations: cfg.params.permutations,
        missing: cfg.params.missing_pairs,
    };
    let methods = distinct_methods(records);
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let mut levels = Vec::new();
    for table in &inputs.human_tables {
        for method in &methods {
            let s = seed.child(&table.name).child(&method.to_string());
            match align_with_humans(records, table, method, &acfg, s) {
                Ok(r) => reports.push(r),
                Err(e @ (Error::InvalidArgument(_) | Error::ZeroVariance)) => {
                    log::warn!("alignment {} / {method} skipped: {e}", table.name);
                    skipped.push(SkippedAlignment {
                        human_table: table.name.clone(),
                        method: method.clone(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
            let ordinal = table.pairs.iter().all(|p| matches!(p.score, HumanScore::Ordinal(_)));
            if ordinal {
                let value: BTreeMap<(String, String), f64> = records
                    .iter()
                    .filter(|r| &r.method == method)
                    .map(|r| (crate::corpus::human::pair_key(&r.a, &r.b), r.value))
                    .collect();
                let mut groups: BTreeMap<u8, (String, Vec<f64>)> = BTreeMap::new();
                for p in &table.pairs {
                    if let (HumanScore::Ordinal(bin), Some(&v)) = (p.score, value.get(&crate::corpus::human::pair_key(&p.a, &p.b))) {
                        groups.entry(bin.rank()).or_insert_with(|| (bin.to_string(), Vec::new())).1.push(v);
                    }
                }
                let groups: Vec<(String, Vec<f64>)> = groups.into_values().collect();
                if groups.len() >= 2 {
                    let comparison = compare_adjacent_levels(&groups, boot, cfg.params.permutations, s.child("levels"))?;
                    levels.push(LevelReport {
                        human_table: table.name.clone(),
                        method: method.clone(),
                        comparison,
                    });
                }
            }
        }
    }
    out.text("align/alignment.csv", &alignment_csv(&reports)?)?;
    out.report(
        "align/alignment.json",
        &AlignFile {
            men_inter_rater_reference: 0.84,
            reports,
            skipped,
            levels,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct DomainsFile {
    reports: Vec<DomainReport>,
}

fn domains(cfg: &RunConfig, inputs: &LoadedInputs, s: &Scored, seed: SeedPath, out: &mut Bundle) -> Result<()> {
    let dump = &inputs.dumps[inputs.primary];
    let reports = cfg
        .params
        .taus
        .iter()
        .enumerate()
        .map(|(t, _)| {
            random_domain_baseline(
                dump.model(),
                &s.sets[t],
                &inputs.domains,
                cfg.params.baseline_replicates,
                seed.index(t as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    out.text("domains/domains.csv", &domain_csv(&reports)?)?;
    out.report("domains/report.json", &DomainsFile { reports })?;

    let graph_sets = s
        .aps
        .iter()
        .map(|ap| extract_experts(ap, cfg.params.graph_tau))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = graph_sets.iter().map(|g| g.concept.clone()).collect();
    let matrix = pairwise_jaccard(&graph_sets)?;
    let mut domain_of = BTreeMap::new();
    for d in &inputs.domains {
        for c in d.specifics.iter().chain([&d.broader]) {
            domain_of.insert(c.clone(), d.name.clone());
        }
    }
    let graph = export_concept_graph(&names, &matrix, &domain_of, cfg.params.graph_threshold)?;
    out.text("domains/graph.dot", &graph.to_dot())?;
    out.report("domains/graph.json", &graph)?;
    Ok(())
}

#[derive(Serialize)]
struct LayerSummaryRow {
    label: String,
    rule: SelectionRule,
    total: u64,
    mean_layer: Option<f64>,
}

#[derive(Serialize)]
struct BroaderComparison {
    rule: SelectionRule,
    blocks: Vec<BlockComparison>,
}

#[derive(Serialize)]
struct LayersFile {
    summary: Vec<LayerSummaryRow>,
    broader_vs_specific: Vec<BroaderComparison>,
    histograms: Vec<SharedHistograms>,
}

fn layers(cfg: &RunConfig, inputs: &LoadedInputs, s: &Scored, seed: SeedPath, out: &mut Bundle) -> Result<()> {
    let map = inputs.dumps[inputs.primary].map();
    let mut dists: Vec<LayerDistribution> = Vec::new();
    let mut summary = Vec::new();
    let mut broader_vs_specific = Vec::new();
    for (t, sets) in s.sets.iter().enumerate() {
        let per: Vec<LayerDistribution> =
            sets.iter().map(|set| crate::layers::layer_distribution(set, map)).collect::<Result<_>>()?;
        let all = aggregate_distributions("ALL", &per)?;
        for d in per.iter().chain([&all]) {
            summary.push(LayerSummaryRow {
                label: d.label.clone(),
                rule: d.rule,
                total: d.total,
                mean_layer: d.mean_layer,
            });
        }
        dists.extend(per);
        dists.push(all);
        if !inputs.domains.is_empty() {
            let pick = |names: Vec<&String>| -> Vec<ExpertSet> {
                sets.iter().filter(|x| names.contains(&&x.concept)).cloned().collect()
            };
            let broader = pick(inputs.domains.iter().map(|d| &d.broader).collect());
            let specific = pick(inputs.domains.iter().flat_map(|d| d.specifics.iter()).collect());
            broader_vs_specific.push(BroaderComparison {
                rule: sets[0].rule,
                blocks: compare_layer_densities(&broader, &specific, map, cfg.params.permutations, seed.index(t as u64))?,
            });
        }
    }
    let index: BTreeMap<&str, &ApVector> = s.aps.iter().map(|a| (a.concept.as_str(), a)).collect();
    let mut histograms = Vec::new();
    for d in &inputs.domains {
        if let [a, b, ..] = d.specifics.as_slice() {
            histograms.push(ap_histograms_shared(
                index[a.as_str()],
                index[b.as_str()],
                cfg.params.graph_tau,
                cfg.params.histogram_bin_width,
            )?);
        }
    }
    out.text("layers/layers.csv", &layer_csv(&dists)?)?;
    out.report(
        "layers/report.json",
        &LayersFile {
            summary,
            broader_vs_specific,
            histograms,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct FoldsFile {
    reports: Vec<StabilityReport>,
}

fn folds(cfg: &RunConfig, inputs: &LoadedInputs, boot: &BootstrapConfig, seed: SeedPath, out: &mut Bundle) -> Result<()> {
    let p = &cfg.params;
    let dump = &inputs.dumps[inputs.primary];
    let reports = p
        .fold_configurations()
        .into_iter()
        .map(|(pos_size, neg_size)| {
            let fcfg = FoldConfig {
                pos_size,
                neg_size,
                folds: p.folds,
                taus: p.taus.clone(),
                cross_pairs: p.cross_pairs,
                bootstrap: *boot,
            };
            fold_stability(dump, &inputs.manifests, &inputs.manifests, &fcfg, seed.child(&format!("{pos_size}x{neg_size}")))
        })
        .collect::<Result<Vec<_>>>()?;
    out.text("folds/stability.csv", &stability_csv(&reports)?)?;
    out.report("folds/stability.json", &FoldsFile { reports })?;
    Ok(())
}

#[derive(Serialize)]
struct StepSummary {
    model: String,
    rule: SelectionRule,
    from: String,
    to: String,
    mean_jaccard: f64,
    ci: Ci,
    n_concepts: usize,
}

#[derive(Serialize)]
struct CheckpointFile {
    steps: Vec<(String, SelectionRule, CheckpointStep)>,
    summary: Vec<StepSummary>,
}

fn checkpoints(inputs: &LoadedInputs, scored: &[Scored], boot: &BootstrapConfig, seed: SeedPath, out: &mut Bundle) -> Result<()> {
    let mut by_model: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in inputs.dumps.iter().enumerate() {
        by_model.entry(d.model()).or_default().push(i);
    }
    let mut steps = Vec::new();
    let mut summary = Vec::new();
    for (model, idx) in by_model {
        if idx.len() < 2 {
            log::warn!("model {model}: one checkpoint, no overlap series");
            continue;
        }
        let n_tau = scored[idx[0]].sets.len();
        for t in 0..n_tau {
            let rule = scored[idx[0]].sets[t][0].rule;
            let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); idx.len() - 1];
            for c in 0..inputs.manifests.len() {
                let series: Vec<ExpertSet> = idx.iter().map(|&i| scored[i].sets[t][c].clone()).collect();
                for (k, step) in checkpoint_overlap(&series)?.into_iter().enumerate() {
                    per_step[k].push(step.jaccard);
                    steps.push((model.to_string(), rule, step));
                }
            }
            for (k, values) in per_step.iter().enumerate() {
                summary.push(StepSummary {
                    model: model.to_string(),
                    rule,
                    from: inputs.dumps[idx[k]].checkpoint().to_string(),
                    to: inputs.dumps[idx[k + 1]].checkpoint().to_string(),
                    mean_jaccard: values.iter().sum::<f64>() / values.len() as f64,
                    ci: bootstrap_mean_ci(values, boot, seed.child(model).index((t * 1000 + k) as u64))?,
                    n_concepts: values.len(),
                });
            }
        }
    }
    let csv = csv_string(
        "checkpoint csv",
        &["model", "rule", "from", "to", "mean_jaccard", "ci_lo", "ci_hi", "n"],
        summary.iter().map(|s| {
            vec![
                s.model.clone(),
                s.rule.to_string(),
                s.from.clone(),
                s.to.clone(),
                s.mean_jaccard.to_string(),
                s.ci.lower.to_string(),
                s.ci.upper.to_string(),
                s.n_concepts.to_string(),
            ]
        }),
    )?;
    out.text("checkpoints/overlap.csv", &csv)?;
    out.report("checkpoints/overlap.json", &CheckpointFile { steps, summary })?;
    Ok(())
}

fn plans(cfg: &RunConfig, inputs: &LoadedInputs, s: &Scored, out: &mut Bundle) -> Result<()> {
    let dump = &inputs.dumps[inputs.primary];
    for (ap, m) in s.aps.iter().zip(&inputs.manifests) {
        let plan = build_intervention_plan(ap, dump, m, cfg.params.top_k)?;
        out.report(&format!("plans/{}.json", slug(&m.concept)), &plan)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GenstatsRow {
    unseen_words: Vec<String>,
    unseen: PrevalenceReport,
    all_related: PrevalenceReport,
}

#[derive(Serialize)]
struct GenstatsFile {
    concepts: Vec<GenstatsRow>,
    n_concepts: usize,
    mean_delta_unseen: f64,
    n_positive_unseen: usize,
}

fn genstats(cfg: &RunConfig, inputs: &LoadedInputs, seed: SeedPath, out: &mut Bundle) -> Result<()> {
    let n_perm = cfg.params.permutations;
    let mut rows = Vec::with_capacity(inputs.generations.len());
    for g in &inputs.generations {
        let s = seed.child(&g.concept);
        let unseen_words = filter_word_list(&g.candidates, &g.positive_docs)?;
        let unseen = prevalence_delta(&g.concept, &g.baseline, &g.intervened, &unseen_words, n_perm, s.child("unseen"))?;
        let all_related = prevalence_delta(&g.concept, &g.baseline, &g.intervened, &g.candidates, n_perm, s.child("all"))?;
        out.text(
            &format!("genstats/words/{}.txt", slug(&g.concept)),
            &unseen_words.iter().map(|w| format!("{w}\n")).collect::<String>(),
        )?;
        rows.push(GenstatsRow {
            unseen_words,
            unseen,
            all_related,
        });
    }
    let unseen: Vec<PrevalenceReport> = rows.iter().map(|r| r.unseen.clone()).collect();
    out.text("genstats/prevalence.csv", &prevalence_csv(&unseen)?)?;
    out.report(
        "genstats/prevalence.json",
        &GenstatsFile {
            n_concepts: rows.len(),
            mean_delta_unseen: unseen.iter().map(|r| r.delta).sum::<f64>() / unseen.len().max(1) as f64,
            n_positive_unseen: unseen.iter().filter(|r| r.delta > 0.0).count(),
            concepts: rows,
        },
    )?;
    Ok(())
}
