//! End-to-end checks of the library pipeline on a tiny synthetic benchmark.

use serde_json::json;
use ttfsnas::data::{generate_synthetic, load_dataset, write_dataset, LoadOptions, Split, SyntheticSpec};
use ttfsnas::pipeline::{self, Context, PipelineConfig, Preset};
use ttfsnas::search::Domain;
use ttfsnas::space::Genome;

fn tiny(extra: serde_json::Value) -> PipelineConfig {
    let mut overlay = json!({
        "macro": {"stem_channels": 4, "height": 8, "width": 8},
        "data": {"synthetic": {"train_counts": [8, 8, 8, 4, 4, 4, 4], "eval_counts": [4, 4, 4, 2, 2, 2, 2], "noise": 0.2}},
        "epochs_supernet": 2, "epochs_retrain": 2, "epochs_finetune": 1, "batch_size": 8,
        "search": {"rounds": 3, "n_eval": 4, "n_top": 4}
    });
    merge(&mut overlay, extra);
    PipelineConfig::from_overlay(Preset::Desk, &overlay).unwrap()
}

fn merge(base: &mut serde_json::Value, extra: serde_json::Value) {
    match (base, extra) {
        (serde_json::Value::Object(b), serde_json::Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

#[test]
fn transfer_preserves_every_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::open(tiny(json!({})), dir.path()).unwrap();
    let genome: Genome = "3,5,S,3".parse().unwrap();
    pipeline::retrain(&ctx, &genome).unwrap();
    let ann_path = ctx.run.checkpoint("ann");
    pipeline::transfer(&ctx, &ann_path).unwrap();
    for split in [Split::Train, Split::Eval] {
        let ann = pipeline::eval(&ctx, &ann_path, split).unwrap();
        let snn = pipeline::eval(&ctx, &ctx.run.checkpoint("snn"), split).unwrap();
        assert_eq!(ann.confusion, snn.confusion, "{split}");
        assert!((ann.war - snn.war).abs() <= 1e-9);
        assert_eq!(ann.params, snn.params);
        assert!(snn.synops_max.unwrap() <= snn.synapses.unwrap());
    }
}

#[test]
fn memorized_noise_free_set_scores_perfectly() {
    let cfg = tiny(json!({
        "data": {"synthetic": {"noise": 0.0, "train_counts": [2, 2, 2, 1, 1, 1, 1], "eval_counts": [1, 1, 1, 1, 1, 1, 1]}},
        "epochs_retrain": 60, "lr_retrain": 1e-2, "batch_size": 4
    }));
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::open(cfg, dir.path()).unwrap();
    let net = pipeline::retrain(&ctx, &"3,3,3,3".parse().unwrap()).unwrap();
    let report = pipeline::eval_ann_report("ann", &net, &ctx.split(Split::Train), Split::Train).unwrap();
    assert_eq!((report.war, report.uar), (1.0, 1.0));
}

#[test]
fn search_domains_agree_and_logs_have_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::open(tiny(json!({})), dir.path()).unwrap();
    pipeline::train_supernet(&ctx).unwrap();
    let ann = pipeline::search(&ctx, Domain::Ann).unwrap();
    let snn = pipeline::search(&ctx, Domain::Snn).unwrap();
    assert_eq!(ann.best_genomes, snn.best_genomes);
    assert_eq!(ann.history.len(), 4);
    let log = std::fs::read_to_string(ctx.run.log("search_ann")).unwrap();
    assert_eq!(log.lines().count() - 1, 4 * 4);
    assert_eq!(pipeline::searched_genome(&ctx).unwrap(), ann.best.genome);
}

#[test]
fn quantize_rejects_ann_and_finetune_names_output() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = Context::open(tiny(json!({})), dir.path()).unwrap();
    pipeline::retrain(&ctx, &"3,3,3,3".parse().unwrap()).unwrap();
    let ann = ctx.run.checkpoint("ann");
    assert!(matches!(pipeline::quantize(&ctx, &ann), Err(ttfsnas::Error::Config(_))));
    pipeline::transfer(&ctx, &ann).unwrap();
    let q = pipeline::quantize(&ctx, &ctx.run.checkpoint("snn")).unwrap();
    assert_eq!(q.quant.unwrap().weight_bits, 8);
    let (_, name) = pipeline::finetune_snn(&ctx, &ctx.run.checkpoint("snn_quant")).unwrap();
    assert_eq!(name, "snn_quant_finetuned");
    let out = ttfsnas::checkpoint::load::<ttfsnas::TtfsNetwork>("snn", &ctx.run.checkpoint(&name)).unwrap();
    assert!(out.quant.is_some());
}

#[test]
fn manifest_round_trip_feeds_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&SyntheticSpec {
        train_counts: vec![3; 7],
        eval_counts: vec![1; 7],
        height: 8,
        width: 8,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let manifest = write_dataset(&dir.path().join("data"), &data).unwrap();
    let loaded = load_dataset(&manifest, [4, 8, 8], 7, LoadOptions::default()).unwrap();
    assert_eq!(loaded.clamped, 0);
    assert_eq!(loaded.dataset.samples.len(), data.samples.len());
    for (a, b) in loaded.dataset.samples.iter().zip(&data.samples) {
        assert_eq!((a.label, a.split), (b.label, b.split));
        assert_eq!(a.frame, b.frame);
    }

    let cfg = tiny(json!({"data": {"manifest": manifest}}));
    let ctx = Context::open(cfg, &dir.path().join("run")).unwrap();
    assert_eq!(ctx.data.split(Split::Train).len(), 21 - 2);
    assert_eq!(ctx.data.split(Split::Calib).len(), 2);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let ctx = Context::open(tiny(json!({"seed": 9})), d.path()).unwrap();
        pipeline::run_all(&ctx, Domain::Ann).unwrap();
    }
    let read = |i: usize, p: &str| std::fs::read(dirs[i].path().join(p)).unwrap();
    for p in ["result.json", "checkpoints/ann.bin", "checkpoints/snn_quant_finetuned.json", "logs/metrics.csv"] {
        assert_eq!(read(0, p), read(1, p), "{p}");
    }
}
