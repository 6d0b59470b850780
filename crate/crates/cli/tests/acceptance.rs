//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::*;
use kcd::hin::{build_hin, drop_cues, Cue, NodeType, Relation};
use kcd::kg::{train_transe, transe_score, EmbeddingTable, TransEConfig};
use kcd::kg::{EntityId, KnowledgeGraph};
use kcd::model::{objective, prepare_document, Batch, Model, ModelConfig, PreparedDoc, Readout};
use kcd::synth::{generate, toy_document, SynthConfig};
use kcd::tensor::check::finite_difference;
use kcd::tensor::Tape;
use kcd::train::{thread_limit, train, TrainConfig, TrainOptions};
use kcd::walk::{generate_walk, step_distribution, WalkImportance};

type Outcome = Result<(bool, String), String>;
type Check = (&'static str, fn() -> Outcome);

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let data = toy_document(8, 7).map_err(|e| e.to_string())?;
    let doc = &data.corpus.docs[0];
    let graph = build_hin(doc, &data.topics, &data.transe.entities).map_err(|e| e.to_string())?;
    let prepared = prepare_document(doc, graph, &data.embeddings()).map_err(|e| e.to_string())?;
    let batch = Batch::new(&[&prepared]).map_err(|e| e.to_string())?;
    let config = ModelConfig {
        input_dim: 8,
        hidden_dim: 8,
        layers: 2,
        heads: 2,
        dropout: 0.0,
        readout: Readout::PA,
        ..ModelConfig::default()
    };
    let model = Model::new(config, 3).map_err(|e| e.to_string())?;
    let checks = finite_difference(&model.params, 1e-6, |tape| -> kcd::Result<_> {
        let logits = model.forward(tape, &batch, None)?;
        objective(tape, logits, &batch.labels, 1e-4)
    })
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = checks
        .iter()
        .filter(|c| !c.within(0.0))
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error));
    let max_rel = worst.map_or(0.0, |c| c.relative_error);
    let ok = checks.iter().all(|c| c.within(1e-3)) && secs < 60.0;
    Ok((
        ok,
        format!(
            "{} parameter groups, max relative error {max_rel:.2e}{}, {secs:.1}s",
            checks.len(),
            worst.map(|c| format!(" ({})", c.name)).unwrap_or_default()
        ),
    ))
}

fn sampler_fidelity() -> Outcome {
    let rels: Vec<(String, String)> = (0..5)
        .map(|i| (format!("r{i}"), format!("rel {i}")))
        .collect();
    let mut ents: Vec<(String, String)> = (0..5)
        .map(|i| (format!("t{i}"), format!("tail {i}")))
        .collect();
    ents.push(("hub".into(), "hub".into()));
    let triples: Vec<(String, String, String)> = (0..5)
        .map(|i| ("hub".to_string(), format!("r{i}"), format!("t{i}")))
        .collect();
    let kg = KnowledgeGraph::from_parts(&ents, &rels, &triples).map_err(|e| e.to_string())?;
    let mut imp = WalkImportance::from_graph(&kg);
    let scores = [1.0, 0.0, 1.0, 0.0, 0.0];
    for (i, &p) in scores.iter().enumerate() {
        imp.set(kg.relation(&format!("r{i}")).map_err(|e| e.to_string())?, p)
            .map_err(|e| e.to_string())?;
    }
    let hub = kg.entity("hub").map_err(|e| e.to_string())?;
    let z: f64 = scores.iter().map(|p: &f64| p.exp()).sum();
    let expected: BTreeMap<EntityId, f64> = (0..5)
        .map(|i| (kg.entity(&format!("t{i}")).unwrap(), scores[i].exp() / z))
        .collect();
    let dist = step_distribution(&kg, hub, &imp).map_err(|e| e.to_string())?;
    let formula_gap = dist
        .iter()
        .map(|(e, p)| (p - expected[&e.tail]).abs())
        .fold(0.0, f64::max);

    let draws = 100_000u64;
    let mut counts: BTreeMap<EntityId, u64> = BTreeMap::new();
    for s in 0..draws {
        let w = generate_walk(&kg, hub, 1, &imp, s).map_err(|e| e.to_string())?;
        *counts.entry(w.end()).or_default() += 1;
    }
    let l1: f64 = expected
        .iter()
        .map(|(e, p)| (counts.get(e).copied().unwrap_or(0) as f64 / draws as f64 - p).abs())
        .sum();
    Ok((
        l1 <= 0.02 && formula_gap < 1e-12,
        format!("L1 distance {l1:.4} over {draws} draws, softmax gap {formula_gap:.1e}"),
    ))
}

fn walk_validity() -> Outcome {
    let n = 40;
    let ents: Vec<(String, String)> = (0..n)
        .map(|i| (format!("e{i}"), format!("entity {i}")))
        .collect();
    let rels = [
        ("a".to_string(), "a".to_string()),
        ("b".to_string(), "b".to_string()),
    ];
    let mut triples = Vec::new();
    for i in 0..37 {
        triples.push((
            format!("e{i}"),
            "a".to_string(),
            format!("e{}", (i * 7 + 3) % n),
        ));
        triples.push((
            format!("e{i}"),
            "b".to_string(),
            format!("e{}", (i + 11) % n),
        ));
    }
    let kg = KnowledgeGraph::from_parts(&ents, &rels, &triples).map_err(|e| e.to_string())?;
    let imp = WalkImportance::from_graph(&kg);
    let k = 8;
    let (mut invalid, mut early, mut truncated) = (0, 0, 0);
    let total = 10_000;
    for s in 0..total {
        let start = EntityId(s % n);
        let w = generate_walk(&kg, start, k, &imp, s as u64).map_err(|e| e.to_string())?;
        if !w.is_valid(&kg) || w.start() != start || w.hops() > k {
            invalid += 1;
        }
        if w.hops() < k {
            truncated += 1;
            if !kg.edges(w.end()).is_empty() {
                early += 1;
            }
        }
    }
    Ok((
        invalid == 0 && early == 0,
        format!("{total} walks, {invalid} invalid, {truncated} truncated at sinks, {early} truncated elsewhere"),
    ))
}

fn transe_ranking() -> Outcome {
    let start = Instant::now();
    let ents: Vec<(String, String)> = (0..10)
        .flat_map(|i| {
            [
                (format!("a{i}"), format!("A{i}")),
                (format!("b{i}"), format!("B{i}")),
            ]
        })
        .collect();
    let triples: Vec<(String, String, String)> = (0..10)
        .map(|i| (format!("a{i}"), "r".into(), format!("b{i}")))
        .collect();
    let kg =
        KnowledgeGraph::from_parts(&ents, &[("r".to_string(), "maps to".to_string())], &triples)
            .map_err(|e| e.to_string())?;
    let cfg = TransEConfig {
        dim: 16,
        epochs: 500,
        seed: 1,
        ..TransEConfig::default()
    };
    let (emb, _) = train_transe(&kg, &cfg).map_err(|e| e.to_string())?;
    let rank = |emb: &EmbeddingTable, i: usize| -> kcd::Result<usize> {
        let head = format!("a{i}");
        let truth = transe_score(emb, &head, "r", &format!("b{i}"))?;
        let mut better = 0;
        for e in kg.entities() {
            if transe_score(emb, &head, "r", kg.entity_key(e))? < truth {
                better += 1;
            }
        }
        Ok(better + 1)
    };
    let mut firsts = 0;
    for i in 0..10 {
        if rank(&emb, i).map_err(|e| e.to_string())? == 1 {
            firsts += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        firsts >= 8 && secs < 120.0,
        format!("{firsts}/10 true tails ranked first, {secs:.1}s"),
    ))
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let data = generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let opts = TrainOptions {
        threads: thread_limit().map_err(|e| e.to_string())?,
        checkpoint_dir: None,
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for readout in Readout::ALL {
        let cfg = TrainConfig {
            readout,
            folds: vec![0],
            ..TrainConfig::default()
        };
        let report = train(&data, &cfg, &opts).map_err(|e| e.to_string())?;
        let fold = &report.folds[0];
        ok &= report.accuracy > 0.90;
        if readout == Readout::PA {
            ok &= fold.train.accuracy == 1.0 && report.accuracy >= 0.95;
        }
        parts.push(format!(
            "{readout} train {:.3} test {:.3} ({} epochs)",
            fold.train.accuracy, report.accuracy, fold.epochs_run
        ));
    }
    Ok((
        ok,
        format!(
            "{}, {:.0}s",
            parts.join(", "),
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn readout_identity() -> Outcome {
    let data = generate(&SynthConfig {
        docs: 100,
        dim: 8,
        transe_epochs: 20,
        seed: 11,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let emb = data.embeddings();
    let models: Vec<Model> = Readout::ALL
        .iter()
        .map(|&readout| {
            Model::new(
                ModelConfig {
                    input_dim: 8,
                    hidden_dim: 8,
                    heads: 2,
                    readout,
                    ..ModelConfig::default()
                },
                5,
            )
        })
        .collect::<kcd::Result<_>>()
        .map_err(|e| e.to_string())?;
    let vector = |m: &Model, d: &PreparedDoc| -> kcd::Result<Vec<f64>> {
        let b = Batch::new(&[d])?;
        let mut tape = Tape::with_params(&m.params);
        let v = m.graph_vectors(&mut tape, &b, None)?;
        Ok(tape.value(v).iter().copied().collect())
    };
    let (mut worst, mut unequal) = (0.0f64, 0);
    for (i, doc) in data.corpus.docs.iter().enumerate() {
        let full =
            build_hin(doc, &data.topics, &data.transe.entities).map_err(|e| e.to_string())?;
        // thin one cue type by a varying amount so graph shapes differ
        let cue = Cue::ALL[i % Cue::ALL.len()];
        let thinned =
            drop_cues(&full, cue, (i % 4) as f64 / 4.0, i as u64).map_err(|e| e.to_string())?;
        let prepared = prepare_document(doc, thinned, &emb).map_err(|e| e.to_string())?;
        let n = prepared.graph.nodes.len() as f64;
        let n1 = prepared.graph.count(NodeType::Paragraph) as f64;
        let v: Vec<Vec<f64>> = models
            .iter()
            .map(|m| vector(m, &prepared))
            .collect::<kcd::Result<_>>()
            .map_err(|e| e.to_string())?;
        for ((pa, ca), ga) in v[0].iter().zip(&v[1]).zip(&v[2]) {
            worst = worst.max((n1 * pa + (n - n1) * ca - n * ga).abs());
        }

        let mut bare = full;
        for c in Cue::ALL {
            bare = drop_cues(&bare, c, 1.0, 0).map_err(|e| e.to_string())?;
        }
        let bare = prepare_document(doc, bare, &emb).map_err(|e| e.to_string())?;
        if bare.graph.nodes.len() != bare.graph.paragraph_count()
            || vector(&models[0], &bare).map_err(|e| e.to_string())?
                != vector(&models[2], &bare).map_err(|e| e.to_string())?
        {
            unequal += 1;
        }
    }
    Ok((
        worst <= 1e-10 && unequal == 0,
        format!("100 graphs, max identity residual {worst:.1e}, {unequal} paragraph-only graphs with PA != GA"),
    ))
}

fn read(path: &std::path::Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn ablation_integrity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let (data, cfg) = small_dataset(root);
    let mut notes = Vec::new();
    let mut ok = true;

    let base = root.join("base");
    kcd_ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&base),
        "--no-checkpoints",
    ]);
    let cue = root.join("cue");
    kcd_ok(&[
        "ablate",
        "cue-removal",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--grid",
        "sentiment:0,sentiment:1",
        "--out-dir",
        s(&cue),
    ]);
    let reference: serde_json::Value =
        serde_json::from_str(&read(&base.join("report.json"))?).map_err(|e| e.to_string())?;
    let rows: serde_json::Value =
        serde_json::from_str(&read(&cue.join("ablation_cue-removal.json"))?)
            .map_err(|e| e.to_string())?;
    let same = rows[0]["report"] == reference;
    ok &= same;
    notes.push(format!(
        "p=0 row {} the base run",
        if same { "equals" } else { "differs from" }
    ));

    let hin_cfg = write_file(
        root,
        "drop.toml",
        &format!("{SMALL_TRAIN}\n[cue_removal]\nsentiment = 1.0\n"),
    );
    let hin = root.join("hin");
    kcd_ok(&[
        "build-hin",
        "--data",
        s(&data),
        "--config",
        s(&hin_cfg),
        "--out-dir",
        s(&hin),
    ]);
    let mut left = 0;
    for entry in std::fs::read_dir(hin.join("graphs")).map_err(|e| e.to_string())? {
        let text = read(&entry.map_err(|e| e.to_string())?.path())?;
        let label = format!("edge\t{}\t", Relation::Cue(Cue::Sentiment).label());
        left += text.lines().filter(|l| l.starts_with(&label)).count();
    }
    let summary = read(&hin.join("summary.tsv"))?;
    let v3 = summary
        .lines()
        .skip(1)
        .filter(|l| l.split('\t').nth(5) != Some("0"))
        .count();
    ok &= left == 0 && v3 == 0;
    notes.push(format!("p=1 leaves {left} sentiment edges"));

    for (kind, file) in [
        ("walk-length", "ablation_walk-length.tsv"),
        ("data-fraction", "ablation_data-fraction.tsv"),
    ] {
        let out = root.join(kind);
        kcd_ok(&[
            "ablate",
            kind,
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--out-dir",
            s(&out),
        ]);
        let tsv = read(&out.join(file))?;
        let settings: Vec<&str> = tsv
            .lines()
            .skip(1)
            .filter_map(|l| l.split('\t').nth(1))
            .collect();
        let rows = settings.len();
        ok &= rows == 10;
        notes.push(format!(
            "{kind} {rows} rows ({}..{})",
            settings.first().unwrap_or(&""),
            settings.last().unwrap_or(&"")
        ));
    }
    Ok((ok, notes.join(", ")))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let synth = write_file(root, "synth.toml", SMALL_SYNTH);
    let cfg = write_file(root, "train.toml", SMALL_TRAIN);
    let run = |tag: &str| -> std::path::PathBuf {
        let out = root.join(tag);
        let data = out.join("data");
        kcd_ok(&["synth", "--config", s(&synth), "--out-dir", s(&data)]);
        kcd_ok(&[
            "transe",
            "--kg-dir",
            s(&data.join("kg")),
            "--dim",
            "8",
            "--epochs",
            "10",
            "--out-dir",
            s(&out.join("transe")),
        ]);
        kcd_ok(&[
            "walks",
            "--kg-dir",
            s(&data.join("kg")),
            "--corpus",
            s(&data.join("corpus.jsonl")),
            "--embed-dim",
            "16",
            "--out-dir",
            s(&out.join("walks")),
        ]);
        kcd_ok(&[
            "build-hin",
            "--data",
            s(&data),
            "--out-dir",
            s(&out.join("hin")),
        ]);
        kcd_ok(&[
            "train",
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--out-dir",
            s(&out.join("train")),
        ]);
        kcd_ok(&[
            "eval",
            "--data",
            s(&data),
            "--model",
            s(&out.join("train/checkpoints/fold0.ckpt")),
            "--fold",
            "0",
            "--out-dir",
            s(&out.join("eval")),
        ]);
        kcd_ok(&[
            "ablate",
            "walk-length",
            "--data",
            s(&data),
            "--config",
            s(&cfg),
            "--grid",
            "1,2",
            "--out-dir",
            s(&out.join("ablate")),
        ]);
        out
    };
    let (a, b) = (snapshot(&run("a")), snapshot(&run("b")));
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let ok = differing.is_empty() && a.len() == b.len();
    Ok((
        ok,
        if ok {
            format!("{} output files byte-identical across two runs", a.len())
        } else {
            format!("differing: {}", differing.join(" "))
        },
    ))
}

fn main() {
    let checks: [Check; 8] = [
        ("gradient-check", gradient_check),
        ("walk-sampler-fidelity", sampler_fidelity),
        ("walk-validity", walk_validity),
        ("transe-toy-ranking", transe_ranking),
        ("synthetic-end-to-end", synthetic_end_to_end),
        ("readout-identity", readout_identity),
        ("ablation-integrity", ablation_integrity),
        ("determinism", determinism),
    ];
    let only = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in checks {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let (ok, detail) = match std::panic::catch_unwind(check) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
