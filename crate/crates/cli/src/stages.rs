use std::collections::HashSet;
use std::path::Path;

use clap::ValueEnum;
use consel_core::alignment::{dedup_pool, score_pool, PerturbationPool};
use consel_core::corpus::{
    read_embeddings, read_hypotheses, read_hypotheses_lenient, read_id_list, read_manifest,
    read_scores, read_subset, write_embeddings, write_id_list, write_scores, write_subset,
    EmbeddingMatrix, HypothesisRecord, Rule, SelectionResult, Split,
};
use consel_core::flmi::{preselect, GreedyMode};
use consel_core::metrics::{evaluate_subset, sweep_report};
use consel_core::mfcc::{read_wav_pcm16, MfccConfig, MfccExtractor};
use consel_core::predictor::{
    load_weights, predictor_report, read_labeled_pairs, save_weights, train, PairFiles,
    PredictorReport, TrainConfig, TrainHistory,
};
use consel_core::rules::{
    percentile_thresholds, select_cer_consistency, select_conf, select_conf_stable, select_ppl,
    select_random_hours, select_single_metric, select_stable_base, select_wer_binary,
    thresholds_for, Metric, PplMode,
};
use consel_core::synth::{files, generate, write_synth, SynthConfig};
use consel_core::Error;
use rayon::prelude::*;
use serde::Serialize;
use tracing::info;

use crate::args::*;
use crate::failure::{CliResult, Failure};
use crate::provenance::Provenance;

fn io_err(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn flag_name(v: impl ValueEnum) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Pool => Split::Pool,
        SplitArg::Query => Split::Query,
        SplitArg::Dev => Split::Dev,
        SplitArg::Test => Split::Test,
    }
}

pub fn features(a: &FeaturesArgs) -> CliResult<()> {
    let mut prov = Provenance::new("features");
    prov.input("manifest", &a.manifest)?;
    let cfg = MfccConfig::default();
    prov.config("split", a.split.map(flag_name))
        .config("mfcc", &cfg);

    let manifest = read_manifest(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let records: Vec<_> = manifest
        .iter()
        .filter(|r| a.split.is_none_or(|s| r.split == split_of(s)))
        .collect();
    let extractor = MfccExtractor::new(cfg)?;
    let rows = records
        .par_iter()
        .map(|r| {
            let rel = r.audio_path.as_deref().ok_or_else(|| Error::Missing {
                kind: "audio path",
                id: r.utt_id.clone(),
            })?;
            let (samples, _) = read_wav_pcm16(base.join(rel))?;
            let v = extractor.pooled(&samples)?;
            Ok(v.into_iter().map(|x| x as f32).collect::<Vec<f32>>())
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut m = EmbeddingMatrix::new(extractor.config().output_dim())?;
    for (r, row) in records.iter().zip(&rows) {
        m.push(r.utt_id.clone(), row)?;
    }
    write_embeddings(&m, &a.out)?;
    info!(utterances = m.len(), out = %a.out.display(), "features written");
    prov.write(&a.out, &[("out", &a.out)])?;
    Ok(())
}

pub fn preselect_stage(a: &PreselectArgs) -> CliResult<()> {
    let mut prov = Provenance::new("preselect");
    prov.input("manifest", &a.manifest)?
        .input("pool-features", &a.pool_features)?
        .input("query-features", &a.query_features)?;
    let mode = match a.mode {
        ModeArg::Exact => GreedyMode::Exact,
        ModeArg::Lazy => GreedyMode::Lazy,
    };
    prov.config("budget", a.budget)
        .config("mode", flag_name(a.mode));
    if a.chunk == 0 {
        return Err(Failure::Usage("--chunk must be positive".into()));
    }

    let manifest = read_manifest(&a.manifest)?;
    let pool: Vec<_> = manifest.into_iter().filter(|r| r.split == Split::Pool).collect();
    let pool_features = read_embeddings(&a.pool_features)?;
    let query_features = read_embeddings(&a.query_features)?;
    let ids = preselect(&pool, &pool_features, &query_features, a.budget, mode, a.chunk)?;
    let header = format!(
        "preselect budget={} mode={} config={}",
        a.budget,
        flag_name(a.mode),
        prov.config_hash()
    );
    write_id_list(&a.out, &header, &ids)?;
    info!(selected = ids.len(), candidates = pool.len(), queries = query_features.len(), "preselection done");
    prov.write(&a.out, &[("out", &a.out)])?;
    Ok(())
}

fn restrict(hyps: Vec<HypothesisRecord>, ids: Option<&Path>) -> CliResult<Vec<HypothesisRecord>> {
    let Some(path) = ids else {
        return Ok(hyps);
    };
    let keep: HashSet<String> = read_id_list(path)?.into_iter().collect();
    Ok(hyps.into_iter().filter(|h| keep.contains(&h.utt_id)).collect())
}

pub fn score(a: &ScoreArgs) -> CliResult<()> {
    let mut prov = Provenance::new("score");
    prov.input("hyps", &a.hyps)?
        .input("speech", &a.speech)?
        .input("text", &a.text)?
        .input("weights", &a.weights)?;
    if let Some(ids) = &a.ids {
        prov.input("ids", ids)?;
    }

    let hyps = restrict(read_hypotheses(&a.hyps)?, a.ids.as_deref())?;
    let skeleton = dedup_pool(&hyps)?;
    let speech = read_embeddings(&a.speech)?;
    let text = read_embeddings(&a.text)?;
    let net = load_weights(&a.weights)?;
    if net.input_dim() != speech.dim() + text.dim() {
        return Err(Error::DimMismatch {
            expected: net.input_dim(),
            found: speech.dim() + text.dim(),
        }
        .into());
    }
    let scores = score_pool(&skeleton, &speech, &text, &net)?;
    write_scores(&a.out, &scores)?;
    let dropped: usize = skeleton
        .utterances
        .iter()
        .map(|u| u.dropped_baseline_equal + u.dropped_duplicates)
        .sum();
    info!(utterances = skeleton.utterances.len(), scored = scores.len(), dropped, "pool scored");
    prov.write(&a.out, &[("out", &a.out)])?;
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a TrainConfig,
    history: &'a TrainHistory,
    dev_report: PredictorReport,
}

pub fn train_predictor(a: &TrainArgs, seed: u64) -> CliResult<()> {
    let mut prov = Provenance::new("train-predictor");
    prov.input("train-speech", &a.train_speech)?
        .input("train-text", &a.train_text)?
        .input("train-targets", &a.train_targets)?
        .input("dev-speech", &a.dev_speech)?
        .input("dev-text", &a.dev_text)?
        .input("dev-targets", &a.dev_targets)?;
    let cfg = TrainConfig {
        hidden: a.hidden.clone(),
        lr: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        dropout: a.dropout,
        seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    prov.config("train", &cfg);

    let pair_files = |speech, text, targets| PairFiles { speech, text, targets };
    let (_, train_set) = read_labeled_pairs(pair_files(&a.train_speech, &a.train_text, &a.train_targets))?;
    let (_, dev_set) = read_labeled_pairs(pair_files(&a.dev_speech, &a.dev_text, &a.dev_targets))?;
    let (net, history) = train(&train_set, &dev_set, &cfg)?;
    let preds = dev_set
        .iter()
        .map(|p| net.predict(&p.speech_emb, &p.text_emb))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<f64> = dev_set.iter().map(|p| p.target_wer).collect();
    let dev_report = predictor_report(&preds, &refs)?;
    save_weights(&net, &a.out)?;
    let best = history.best();
    info!(
        epochs = history.epochs.len() - 1,
        best_epoch = history.best_epoch,
        initial_dev_mse = history.epochs[0].dev_mse,
        best_dev_mse = best.dev_mse,
        "predictor trained"
    );
    let mut outputs = vec![("out", a.out.as_path())];
    if let Some(h) = &a.history {
        write_json(h, &TrainReport { config: &cfg, history: &history, dev_report })?;
        outputs.push(("history", h.as_path()));
    }
    prov.write(&a.out, &outputs)?;
    Ok(())
}

fn require<T: Copy>(v: Option<T>, flag: &str, rule: RuleArg) -> CliResult<T> {
    v.ok_or_else(|| Failure::Usage(format!("--rule {} requires --{flag}", flag_name(rule))))
}

pub fn select(a: &SelectArgs, seed: u64) -> CliResult<()> {
    let mut prov = Provenance::new("select");
    prov.input("hyps", &a.hyps)?;
    let rule = a.rule;
    prov.config("rule", flag_name(rule));

    let needs_scores = matches!(
        rule,
        RuleArg::Conf
            | RuleArg::Pred
            | RuleArg::Cos
            | RuleArg::Euc
            | RuleArg::Stable
            | RuleArg::ConfStable
            | RuleArg::WerBinary
    );
    let scores_path = if needs_scores {
        let p = a
            .scores
            .as_deref()
            .ok_or_else(|| Failure::Usage(format!("--rule {} requires --scores", flag_name(rule))))?;
        prov.input("scores", p)?;
        Some(p)
    } else {
        None
    };
    if let Some(ids) = &a.ids {
        prov.input("ids", ids)?;
    }
    let hyps = restrict(read_hypotheses(&a.hyps)?, a.ids.as_deref())?;
    let pool = || -> CliResult<PerturbationPool> {
        let scores = read_scores(scores_path.expect("checked above"))?;
        Ok(PerturbationPool::new(&dedup_pool(&hyps)?, &scores)?)
    };

    let result: SelectionResult = match rule {
        RuleArg::Conf => {
            let p = require(a.p, "p", rule)?;
            prov.config("p", p);
            let pool = pool()?;
            select_conf(&pool, &percentile_thresholds(&pool, p)?)?
        }
        RuleArg::Pred | RuleArg::Cos | RuleArg::Euc => {
            let p = require(a.p, "p", rule)?;
            prov.config("p", p);
            let m = match rule {
                RuleArg::Pred => Metric::Pred,
                RuleArg::Cos => Metric::Cos,
                _ => Metric::Euc,
            };
            let pool = pool()?;
            select_single_metric(&pool, &thresholds_for(&pool, p, &[m])?, m)?
        }
        RuleArg::Stable => {
            let p = require(a.p, "p", rule)?;
            prov.config("p", p);
            select_stable_base(&pool()?, p)?
        }
        RuleArg::ConfStable => {
            let p = require(a.p, "p", rule)?;
            let p2 = require(a.p2, "p2", rule)?;
            prov.config("p", p).config("p2", p2);
            select_conf_stable(&pool()?, p, p2)?
        }
        RuleArg::WerBinary => select_wer_binary(&pool()?)?,
        RuleArg::Ppl => {
            let mode = match (a.size_matched, a.p) {
                (Some(k), None) => PplMode::SizeMatched(k),
                (None, Some(p)) => PplMode::Percentile(p),
                _ => return Err(Failure::Usage("--rule ppl takes exactly one of --p, --size-matched".into())),
            };
            prov.config("p", a.p).config("size_matched", a.size_matched);
            select_ppl(&hyps, mode)?
        }
        RuleArg::Random => {
            let hours = require(a.hours, "hours", rule)?;
            let manifest_path = a
                .manifest
                .as_deref()
                .ok_or_else(|| Failure::Usage("--rule random requires --manifest".into()))?;
            prov.input("manifest", manifest_path)?;
            prov.config("hours", hours).config("seed", seed);
            select_random_hours(&read_manifest(manifest_path)?, &hyps, hours, seed)?
        }
        RuleArg::Cer => {
            let tau = require(a.tau, "tau", rule)?;
            let [z, k] = a.systems.as_slice() else {
                return Err(Failure::Usage("--rule cer requires --systems SECOND THIRD".into()));
            };
            prov.input("systems.0", z)?.input("systems.1", k)?;
            prov.config("tau", tau);
            let primary: Vec<HypothesisRecord> =
                hyps.iter().filter(|h| h.perturbation.is_baseline()).cloned().collect();
            let keep: HashSet<&str> = primary.iter().map(|h| h.utt_id.as_str()).collect();
            let other = |p: &Path| -> CliResult<Vec<HypothesisRecord>> {
                Ok(read_hypotheses_lenient(p)?
                    .into_iter()
                    .filter(|h| keep.contains(h.utt_id.as_str()))
                    .collect())
            };
            select_cer_consistency([&primary, &other(z)?, &other(k)?], tau)?
        }
    };
    write_subset(&a.out, &result)?;
    info!(rule = ?result.rule, entries = result.len(), "selection written");
    prov.write(&a.out, &[("out", &a.out)])?;
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let mut prov = Provenance::new("evaluate");
    prov.input("subset", &a.subset)?.input("manifest", &a.manifest)?;
    prov.config("normalize", a.normalize);
    let subset = read_subset(&a.subset)?.unwrap_or_else(|| SelectionResult::new(Rule::Conf));
    let manifest = read_manifest(&a.manifest)?;
    let summary = evaluate_subset(&subset, &manifest, a.normalize)?;
    write_json(&a.out, &summary)?;
    info!(wer = ?summary.corpus_wer, hours = summary.hours, "evaluation written");
    prov.write(&a.out, &[("out", &a.out)])?;
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let mut prov = Provenance::new("sweep");
    prov.input("manifest", &a.manifest)?.input("hyps", &a.hyps)?;
    prov.config("normalize", a.normalize);
    let report = sweep_report(&read_manifest(&a.manifest)?, &read_hypotheses_lenient(&a.hyps)?, a.normalize)?;
    write_json(&a.out, &report)?;
    let retained = report.rows.iter().filter(|r| r.retained).count();
    info!(configurations = report.rows.len(), retained, "sweep written");
    prov.write(&a.out, &[("out", &a.out)])?;
    Ok(())
}

pub fn synth(a: &SynthArgs, seed: u64) -> CliResult<()> {
    let cfg = SynthConfig {
        n_utts: a.n_utts,
        n_query: a.n_query,
        seed,
        rho: a.rho,
        noise_sd: a.noise_sd,
        emb_dim: a.emb_dim,
        n_train_pairs: a.train_pairs,
        n_dev_pairs: a.dev_pairs,
        ..SynthConfig::default()
    };
    let mut prov = Provenance::new("synth");
    prov.config("synth", &cfg);
    let data = generate(&cfg)?;
    write_synth(&data, &a.out_dir)?;
    let names = [
        files::MANIFEST,
        files::HYPOTHESES,
        files::SCORES,
        files::TRUTH,
        files::SPEECH,
        files::TEXT,
        files::POOL_FEATURES,
        files::QUERY_FEATURES,
        files::SYSTEM_Z,
        files::SYSTEM_K,
        files::TRAIN_SPEECH,
        files::TRAIN_TEXT,
        files::TRAIN_TARGETS,
        files::DEV_SPEECH,
        files::DEV_TEXT,
        files::DEV_TARGETS,
    ];
    let paths: Vec<_> = names.iter().map(|n| a.out_dir.join(n)).collect();
    let outputs: Vec<(&str, &Path)> = names.iter().copied().zip(paths.iter().map(|p| p.as_path())).collect();
    info!(utterances = cfg.n_utts, hypotheses = data.hypotheses.len(), dir = %a.out_dir.display(), "synthetic corpus written");
    prov.write(&a.out_dir.join("synth"), &outputs)?;
    Ok(())
}
