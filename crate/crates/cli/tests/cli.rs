use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use consel_core::corpus::{
    read_embeddings, read_id_list, read_scores, read_subset, write_manifest, Split, UtteranceRecord,
};
use consel_core::mfcc::{mfcc39, MfccConfig};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn consel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_consel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = consel(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn digest(p: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(p).unwrap()))
}

fn sidecar(p: &Path) -> Value {
    let mut name = p.file_name().unwrap().to_os_string();
    name.push(".prov.json");
    serde_json::from_slice(&std::fs::read(p.with_file_name(name)).unwrap()).unwrap()
}

fn synth(dir: &Path, seed: &str) {
    ok(&[
        "--seed", seed, "synth", "--out-dir", s(dir), "--n-utts", "80", "--n-query", "12",
        "--train-pairs", "400", "--dev-pairs", "80",
    ]);
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn full_pipeline_produces_outputs_and_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "3");
    let j = |n: &str| d.join(n);

    ok(&[
        "preselect", "--manifest", s(&j("manifest.jsonl")), "--pool-features", s(&j("pool_features.emb")),
        "--query-features", s(&j("query_features.emb")), "--budget", "30", "--out", s(&j("ids.txt")),
    ]);
    let ids = read_id_list(j("ids.txt")).unwrap();
    assert_eq!(ids.len(), 30);

    ok(&[
        "train-predictor", "--train-speech", s(&j("train_speech.emb")), "--train-text", s(&j("train_text.emb")),
        "--train-targets", s(&j("train_targets.jsonl")), "--dev-speech", s(&j("dev_speech.emb")),
        "--dev-text", s(&j("dev_text.emb")), "--dev-targets", s(&j("dev_targets.jsonl")),
        "--hidden", "16,8", "--epochs", "4", "--out", s(&j("w.json")), "--history", s(&j("hist.json")),
    ]);
    let hist: Value = serde_json::from_slice(&std::fs::read(j("hist.json")).unwrap()).unwrap();
    assert_eq!(hist["history"]["epochs"].as_array().unwrap().len(), 5);
    assert!(hist["dev_report"]["rmse"].as_f64().unwrap().is_finite());

    ok(&[
        "score", "--hyps", s(&j("hyps.jsonl")), "--speech", s(&j("speech.emb")), "--text", s(&j("text.emb")),
        "--weights", s(&j("w.json")), "--ids", s(&j("ids.txt")), "--out", s(&j("own_scores.jsonl")),
    ]);
    let scores = read_scores(j("own_scores.jsonl")).unwrap();
    assert!(!scores.is_empty());
    assert!(scores.iter().all(|q| ids.contains(&q.utt_id)));
    assert!(scores.iter().all(|q| (0.01..=0.99).contains(&q.pred_wer)));

    ok(&[
        "select", "--rule", "conf", "--p", "90", "--hyps", s(&j("hyps.jsonl")), "--scores",
        s(&j("own_scores.jsonl")), "--ids", s(&j("ids.txt")), "--out", s(&j("subset.jsonl")),
    ]);
    let subset = read_subset(j("subset.jsonl")).unwrap();
    if let Some(sub) = &subset {
        assert!(sub.entries.iter().all(|e| ids.contains(&e.utt_id)));
    }

    ok(&[
        "evaluate", "--subset", s(&j("subset.jsonl")), "--manifest", s(&j("manifest.jsonl")),
        "--out", s(&j("eval.json")),
    ]);
    let eval: Value = serde_json::from_slice(&std::fs::read(j("eval.json")).unwrap()).unwrap();
    assert!(eval["hours"].as_f64().unwrap() >= 0.0);

    ok(&["sweep", "--manifest", s(&j("manifest.jsonl")), "--hyps", s(&j("hyps.jsonl")), "--out", s(&j("sweep.json"))]);

    for (out, stage) in [
        ("ids.txt", "preselect"),
        ("w.json", "train-predictor"),
        ("own_scores.jsonl", "score"),
        ("subset.jsonl", "select"),
        ("eval.json", "evaluate"),
        ("sweep.json", "sweep"),
    ] {
        let prov = sidecar(&j(out));
        assert_eq!(prov["stage"], stage);
        assert_eq!(prov["tool"], "consel");
        assert_eq!(prov["outputs"]["out"], digest(&j(out)), "{out}");
        assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);
    }
    let prov = sidecar(&j("subset.jsonl"));
    assert_eq!(prov["inputs"]["scores"], digest(&j("own_scores.jsonl")));
    assert_eq!(prov["config"]["rule"], "conf");
    assert_eq!(prov["config"]["p"], 90);
    let synth_prov: Value = serde_json::from_slice(&std::fs::read(j("synth.prov.json")).unwrap()).unwrap();
    assert_eq!(synth_prov["outputs"]["hyps.jsonl"], digest(&j("hyps.jsonl")));
}

#[test]
fn missing_weights_exit_two_and_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "1");
    let absent = d.join("no_weights.json");
    let out = consel(&[
        "score", "--hyps", s(&d.join("hyps.jsonl")), "--speech", s(&d.join("speech.emb")),
        "--text", s(&d.join("text.emb")), "--weights", s(&absent), "--out", s(&d.join("x.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["error"], "missing-input");
    assert_eq!(err["flag"], "weights");
    assert_eq!(err["path"], s(&absent));
    assert!(!d.join("x.jsonl").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "1");
    let hyps = d.join("hyps.jsonl");
    let out = consel(&["select", "--rule", "conf", "--hyps", s(&hyps), "--out", s(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "usage");

    let out = consel(&[
        "select", "--rule", "ppl", "--p", "50", "--size-matched", "3", "--hyps", s(&hyps), "--out", s(&d.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = consel(&[
        "preselect", "--manifest", s(&d.join("manifest.jsonl")), "--pool-features", s(&d.join("pool_features.emb")),
        "--query-features", s(&d.join("query_features.emb")), "--budget", "100000", "--out", s(&d.join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "budget-too-large");

    assert_eq!(consel(&["no-such-stage"]).status.code(), Some(1));
    assert_eq!(consel(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_input_is_an_invariant_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let bad = d.join("hyps.jsonl");
    std::fs::write(&bad, "{\"utt_id\": 3}\n").unwrap();
    std::fs::write(d.join("m.jsonl"), "").unwrap();
    let out = consel(&["sweep", "--manifest", s(&d.join("m.jsonl")), "--hyps", s(&bad), "--out", s(&d.join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["path"], s(&bad));
}

#[test]
fn empty_subset_evaluates_to_empty_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "2");
    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    ok(&[
        "evaluate", "--subset", s(&d.join("empty.jsonl")), "--manifest", s(&d.join("manifest.jsonl")),
        "--out", s(&d.join("e.json")),
    ]);
    let eval: Value = serde_json::from_slice(&std::fs::read(d.join("e.json")).unwrap()).unwrap();
    assert_eq!(eval["hours"], 0.0);
    assert!(eval["corpus_wer"].is_null());
}

fn write_tone(path: &Path, freq: f64, secs: f64) -> Vec<f64> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (secs * 16_000.0) as usize;
    let mut read_back = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / 16_000.0;
        let v = (0.3 * (2.0 * PI * freq * t).sin() * 32767.0).round() as i16;
        w.write_sample(v).unwrap();
        read_back.push(f64::from(v) / 32768.0);
    }
    w.finalize().unwrap();
    read_back
}

#[test]
fn features_match_library_extraction() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("wav")).unwrap();
    let mut manifest = Vec::new();
    let mut expected = Vec::new();
    for (i, (freq, split)) in [(220.0, Split::Pool), (440.0, Split::Query), (1000.0, Split::Pool)].iter().enumerate() {
        let rel = format!("wav/u{i}.wav");
        let samples = write_tone(&d.join(&rel), *freq, 0.5 + 0.25 * i as f64);
        manifest.push(UtteranceRecord {
            utt_id: format!("u{i}"),
            duration_sec: samples.len() as f64 / 16_000.0,
            audio_path: Some(rel),
            ref_text: None,
            split: *split,
        });
        expected.push((*split, mfcc39(&samples, &MfccConfig::default()).unwrap()));
    }
    let m = d.join("manifest.jsonl");
    write_manifest(&m, &manifest).unwrap();
    let out: PathBuf = d.join("pool.emb");
    ok(&["features", "--manifest", s(&m), "--split", "pool", "--out", s(&out)]);

    let emb = read_embeddings(&out).unwrap();
    assert_eq!(emb.dim(), 39);
    assert_eq!(emb.ids(), ["u0", "u2"]);
    for (id, (_, want)) in ["u0", "u2"].iter().zip(expected.iter().filter(|(s, _)| *s == Split::Pool)) {
        let got = emb.get(id).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((f64::from(*g) - w).abs() <= 1e-5 * w.abs().max(1.0), "{id}: {g} vs {w}");
        }
    }
}

#[test]
fn features_report_missing_audio() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let m = d.join("manifest.jsonl");
    write_manifest(
        &m,
        &[UtteranceRecord {
            utt_id: "u0".into(),
            duration_sec: 1.0,
            audio_path: Some("gone.wav".into()),
            ref_text: None,
            split: Split::Pool,
        }],
    )
    .unwrap();
    let out = consel(&["features", "--manifest", s(&m), "--out", s(&d.join("f.emb"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["path"].as_str().unwrap().ends_with("gone.wav"));
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        synth(d, "11");
        ok(&[
            "--seed", "5", "select", "--rule", "random", "--hours", "0.05", "--manifest",
            s(&d.join("manifest.jsonl")), "--hyps", s(&d.join("hyps.jsonl")), "--out", s(&d.join("r.jsonl")),
        ]);
    }
    for name in ["hyps.jsonl", "scores.jsonl", "speech.emb", "synth.prov.json", "r.jsonl", "r.jsonl.prov.json"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}
