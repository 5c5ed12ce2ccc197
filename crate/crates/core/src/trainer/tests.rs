use super::*;
use crate::corpus::Vocab;
use crate::encoder::ModelConfig;
use crate::romanizer::Romanizer;
use crate::synth::{gen_synthetic, SyntheticSpec};

fn tiny_setup(n_pairs: usize) -> (Vec<SentencePair>, Vocab, TrainConfig) {
    let spec = SyntheticSpec {
        count: n_pairs,
        lexicon_size: 30,
        min_words: 2,
        max_words: 4,
        seed: 7,
        ..Default::default()
    };
    let records = gen_synthetic(&spec).unwrap();
    let rom = Romanizer::builtin();
    let pairs = build_pairs(&records, &rom, PairingOptions::default()).unwrap();
    let texts: Vec<String> = pairs
        .iter()
        .flat_map(|p| [p.text.clone(), p.translit.clone()])
        .collect();
    let vocab = Vocab::train(&texts, 400, 0).unwrap();
    let cfg = TrainConfig {
        batch_pairs: 4,
        steps: 10,
        seed: 9,
        checkpoint_every: 5,
        model: ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            vocab_size: vocab.size(),
            max_len: 24,
            pool_layer: 2,
        },
        ..TrainConfig::desk_default(vocab.size())
    };
    (pairs, vocab, cfg)
}

#[test]
fn make_batch_counts_and_involution() {
    let (pairs, vocab, cfg) = tiny_setup(20);
    let batch = make_batch(&pairs, &vocab, &cfg, 1).unwrap();
    assert_eq!(batch.orig.len(), 4);
    assert_eq!(batch.latn.len(), 4);
    assert_eq!(batch.pair_of.len(), 8);
    for (i, &p) in batch.pair_of.iter().enumerate() {
        assert_ne!(p, i);
        assert_eq!(batch.pair_of[p], i);
    }
}

#[test]
fn make_batch_is_deterministic_per_step() {
    let (pairs, vocab, cfg) = tiny_setup(20);
    let a = make_batch(&pairs, &vocab, &cfg, 3).unwrap();
    let b = make_batch(&pairs, &vocab, &cfg, 3).unwrap();
    assert_eq!(a.indices, b.indices);
    for (x, y) in a.orig.iter().zip(&b.orig) {
        assert_eq!(x.seq.ids, y.seq.ids);
        assert_eq!(x.mask_positions, y.mask_positions);
    }
    let c = make_batch(&pairs, &vocab, &cfg, 4).unwrap();
    assert_ne!(a.indices, c.indices);
}

#[test]
fn make_batch_requires_enough_pairs() {
    let (pairs, vocab, cfg) = tiny_setup(2);
    assert!(matches!(
        make_batch(&pairs[..2], &vocab, &cfg, 1),
        Err(TrainError::StreamExhausted { need: 4, have: 2 })
    ));
}

#[test]
fn smoke_run_writes_metrics_and_checkpoint() {
    let (pairs, vocab, cfg) = tiny_setup(20);
    let dir = tempfile::tempdir().unwrap();
    let report = train(&cfg, &pairs, &vocab, dir.path(), None).unwrap();
    assert_eq!(report.steps_run, 10);
    assert!(report.records.iter().all(|r| r.loss_total.is_finite()));
    assert!(report.checkpoint_path.exists());
    assert!(dir.path().join("ckpt-000005.ckpt").exists());

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11); // header + 10 steps
    assert_eq!(lines[0], "step,loss_mlm_orig,loss_mlm_trans,loss_tcm,loss_total");
}

#[test]
fn first_step_mlm_losses_ignore_tcm_weight() {
    // Losses are computed before the first update, so at step 1 the MLM
    // values cannot depend on whether TCM participates.
    let (pairs, vocab, cfg) = tiny_setup(20);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut cfg_b = cfg.clone();
    cfg_b.weights.lambda_tcm = 0.0;
    let a = train(&cfg, &pairs, &vocab, dir_a.path(), None).unwrap();
    let b = train(&cfg_b, &pairs, &vocab, dir_b.path(), None).unwrap();
    assert_eq!(a.records[0].loss_mlm_orig.to_bits(), b.records[0].loss_mlm_orig.to_bits());
    assert_eq!(a.records[0].loss_mlm_trans.to_bits(), b.records[0].loss_mlm_trans.to_bits());
    assert_eq!(a.records[0].loss_tcm.to_bits(), b.records[0].loss_tcm.to_bits());
    assert_ne!(a.records[0].loss_total.to_bits(), b.records[0].loss_total.to_bits());
}

#[test]
fn training_is_bitwise_deterministic() {
    let (pairs, vocab, cfg) = tiny_setup(20);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    train(&cfg, &pairs, &vocab, dir_a.path(), None).unwrap();
    train(&cfg, &pairs, &vocab, dir_b.path(), None).unwrap();
    let a = std::fs::read(dir_a.path().join("metrics.csv")).unwrap();
    let b = std::fs::read(dir_b.path().join("metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_matches_uninterrupted_run_bitwise() {
    let (pairs, vocab, mut cfg) = tiny_setup(20);
    cfg.steps = 16;
    cfg.checkpoint_every = 6;

    let full_dir = tempfile::tempdir().unwrap();
    let full = train(&cfg, &pairs, &vocab, full_dir.path(), None).unwrap();

    // Stop at step 6, then resume for the remaining 10 steps.
    let mut short_cfg = cfg.clone();
    short_cfg.steps = 6;
    let part_dir = tempfile::tempdir().unwrap();
    let part = train(&short_cfg, &pairs, &vocab, part_dir.path(), None).unwrap();
    assert_eq!(part.steps_run, 6);

    let resume_dir = tempfile::tempdir().unwrap();
    let resumed = train(
        &cfg,
        &pairs,
        &vocab,
        resume_dir.path(),
        Some(&part.checkpoint_path),
    )
    .unwrap();
    assert_eq!(resumed.steps_run, 10);
    for (r, f) in resumed.records.iter().zip(full.records[6..].iter()) {
        assert_eq!(r.step, f.step);
        assert_eq!(r.loss_total.to_bits(), f.loss_total.to_bits(), "step {}", r.step);
        assert_eq!(r.loss_tcm.to_bits(), f.loss_tcm.to_bits());
    }

    // Final parameters agree bitwise too.
    let a = load_checkpoint(&full.checkpoint_path).unwrap();
    let b = load_checkpoint(&resumed.checkpoint_path).unwrap();
    assert_eq!(a.len(), b.len());
    for (name, ea) in &a {
        let eb = &b[name];
        let bits_a: Vec<u32> = ea.values.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = eb.values.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "mismatch in {name}");
    }
}

#[test]
fn config_validation_rejects_zero_steps() {
    let (_, vocab, mut cfg) = tiny_setup(8);
    cfg.steps = 0;
    assert!(matches!(
        cfg.validate(),
        Err(TrainError::InvalidConfig(_))
    ));
    cfg.steps = 1;
    cfg.lr = 0.0;
    assert!(cfg.validate().is_err());
    cfg.lr = 1e-3;
    cfg.batch_pairs = 0;
    assert!(cfg.validate().is_err());
    cfg.batch_pairs = 2;
    cfg.checkpoint_every = 0;
    assert!(cfg.validate().is_err());
    cfg.checkpoint_every = 1;
    assert!(cfg.validate().is_ok());
    drop(vocab);
}

#[test]
fn vocab_size_mismatch_is_rejected() {
    let (pairs, vocab, mut cfg) = tiny_setup(8);
    cfg.model.vocab_size += 1;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        train(&cfg, &pairs, &vocab, dir.path(), None),
        Err(TrainError::InvalidConfig(_))
    ));
}

#[test]
fn tcm_clean_forward_changes_tcm_loss_only_at_step_one() {
    let (pairs, vocab, cfg) = tiny_setup(20);
    let mut clean_cfg = cfg.clone();
    clean_cfg.tcm_clean_forward = true;
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = train(&cfg, &pairs, &vocab, dir_a.path(), None).unwrap();
    let b = train(&clean_cfg, &pairs, &vocab, dir_b.path(), None).unwrap();
    // Same masked MLM losses at step 1 (same batch, same masks), but a
    // different pooled representation source for TCM.
    assert_eq!(a.records[0].loss_mlm_orig.to_bits(), b.records[0].loss_mlm_orig.to_bits());
    assert_ne!(a.records[0].loss_tcm.to_bits(), b.records[0].loss_tcm.to_bits());
}

#[test]
fn early_stopping_halts_on_plateau() {
    let (pairs, vocab, mut cfg) = tiny_setup(20);
    cfg.steps = 200;
    cfg.lr = 1e-30; // effectively frozen: total loss cannot improve
    cfg.early_stop_patience = Some(5);
    let dir = tempfile::tempdir().unwrap();
    let report = train(&cfg, &pairs, &vocab, dir.path(), None).unwrap();
    assert!(report.stopped_early);
    assert!(report.steps_run < 200, "ran {} steps", report.steps_run);
}

#[test]
fn ablation_grid_runs_six_labeled_cells() {
    let spec = SyntheticSpec {
        count: 12,
        lexicon_size: 20,
        min_words: 2,
        max_words: 3,
        seed: 3,
        ..Default::default()
    };
    let records = gen_synthetic(&spec).unwrap();
    let rom = Romanizer::builtin();
    let pairs = build_pairs(&records, &rom, PairingOptions::default()).unwrap();
    let texts: Vec<String> = pairs
        .iter()
        .flat_map(|p| [p.text.clone(), p.translit.clone()])
        .collect();
    let vocab = Vocab::train(&texts, 320, 0).unwrap();
    let cfg = TrainConfig {
        batch_pairs: 2,
        steps: 3,
        checkpoint_every: 10,
        model: ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: vocab.size(),
            max_len: 16,
            pool_layer: 1,
        },
        ..TrainConfig::desk_default(vocab.size())
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_ablation_grid(&cfg, &records, &vocab, &rom, dir.path(), 8, 1).unwrap();
    assert_eq!(report.cells.len(), 6);

    let mut labels: Vec<(String, String)> = report
        .cells
        .iter()
        .map(|c| (c.objective.clone(), c.latin.clone()))
        .collect();
    labels.sort();
    let mut expected: Vec<(String, String)> = ["full", "w/o TCM", "w/o MLM"]
        .iter()
        .flat_map(|o| {
            ["+Latn", "-Latn"]
                .iter()
                .map(|l| (o.to_string(), l.to_string()))
        })
        .collect();
    expected.sort();
    assert_eq!(labels, expected);

    for cell in &report.cells {
        let metrics = cell
            .metrics
            .as_ref()
            .unwrap_or_else(|| panic!("cell {}/{} failed: {:?}", cell.objective, cell.latin, cell.error));
        assert!(metrics.retrieval_top10.is_finite());
        assert!(metrics.centroid_cross_script.is_finite());
        assert!(metrics.alignment.is_finite());
        if cell.objective == "w/o MLM" {
            assert_eq!(metrics.mlm_param_delta, 0.0, "MLM head moved in w/o MLM cell");
        } else {
            assert!(metrics.mlm_param_delta > 0.0);
        }
    }
}
