//! End-to-end behavior of the tiny CNN on the default synthetic pair. One
//! pretrained model is shared by every test.

use std::sync::OnceLock;

use ntprune::admm::{run_ntp, AdmmConfig, Termination};
use ntprune::datasets::{generate_synthetic_domain_pair, SyntheticPair, SyntheticPairConfig};
use ntprune::model::{ArchSpec, SplitClassifier};
use ntprune::objective::NtpLossConfig;
use ntprune::orchestrator::ExperimentConfig;
use ntprune::seed;
use ntprune::training::{accuracy, train_supervised, TrainConfig};
use ntprune::transferability::{build_slc, finetune, slc_subset, CurveCache, Init};

struct Fixture {
    pair: SyntheticPair,
    init: SplitClassifier<f32>,
    model: SplitClassifier<f32>,
    source_acc: f64,
}

fn pretrain_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 2e-3,
        batch_size: 32,
        step_every: 0,
        step_factor: 1.0,
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
            per_class: 100,
            ..SyntheticPairConfig::default()
        })
        .unwrap();
        let arch = ArchSpec::registry("tiny_cnn", pair.source.train.shape(), 10).unwrap();
        let init = SplitClassifier::<f32>::init(arch, &mut seed::rng(0)).unwrap();
        let mut model = init.clone();
        let trainable = vec![true; model.params.len()];
        train_supervised(&mut model, &pair.source.train, &pretrain_config(15), None, &trainable, &mut seed::rng(1))
            .unwrap();
        let source_acc = accuracy(&model, &pair.source.test).unwrap();
        Fixture {
            pair,
            init,
            model,
            source_acc,
        }
    })
}

#[test]
fn pretraining_learns_the_source_domain() {
    let f = fixture();
    assert!(f.source_acc >= 0.9, "source accuracy {}", f.source_acc);
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let f = fixture();
    let mut model = f.init.clone();
    let trainable = vec![true; model.params.len()];
    let losses = train_supervised(&mut model, &f.pair.source.train, &pretrain_config(0), None, &trainable, &mut seed::rng(1))
        .unwrap();
    assert!(losses.is_empty());
    assert_eq!(model.params, f.init.params);
}

#[test]
fn ntp_reaches_the_target_sparsity_and_keeps_the_source() {
    let f = fixture();
    let cfg = ExperimentConfig::default();
    let r = run_ntp(&f.model, &f.pair.source.train, &f.pair.target.train, &cfg.admm, &cfg.loss).unwrap();
    assert_ne!(r.termination_reason, Termination::Diverged);
    assert!(!r.history.is_empty());
    let s = r.mask.sparsity();
    assert!((0.8..=0.99).contains(&s), "sparsity {s}");
    let acc = accuracy(&r.pruned_model, &f.pair.source.test).unwrap();
    assert!(acc >= f.source_acc - 0.10, "source {acc} vs {}", f.source_acc);
}

#[test]
fn source_only_admm_is_close_to_lossless_at_half_sparsity() {
    let f = fixture();
    let admm = AdmmConfig {
        target_sparsity: 0.5,
        ..ExperimentConfig::default().admm
    };
    let loss = NtpLossConfig {
        alpha: 0.0,
        gamma: 0.0,
        ..NtpLossConfig::default()
    };
    let r = run_ntp(&f.model, &f.pair.source.train, &f.pair.target.train, &admm, &loss).unwrap();
    assert!(r.mask.sparsity() >= 0.5);
    let acc = accuracy(&r.pruned_model, &f.pair.source.test).unwrap();
    assert!(acc >= f.source_acc - 0.05, "source {acc} vs {}", f.source_acc);
}

/// FF accuracy of the pretrained model at n = 256, seed 0.
const FROZEN_FF_256: f64 = 0.68;

#[test]
fn full_fine_tuning_result_is_frozen() {
    let f = fixture();
    let cfg = ExperimentConfig::default().finetune;
    let subset = slc_subset(&f.pair.target.train, 256, 0).unwrap();
    let out = finetune(&f.model, None, &subset, &f.pair.target.test, &cfg, 0).unwrap();
    assert!(!out.undersized);
    assert!((out.accuracy - FROZEN_FF_256).abs() < 1e-9, "{}", out.accuracy);
}

#[test]
fn the_full_target_set_is_learnable() {
    let f = fixture();
    let cfg = ExperimentConfig::default().finetune;
    let out = finetune(&f.model, None, &f.pair.target.train, &f.pair.target.test, &cfg, 0).unwrap();
    assert!(out.accuracy > 0.9, "{}", out.accuracy);
}

#[test]
fn curves_over_seeds_have_spread() {
    let f = fixture();
    let cfg = ExperimentConfig::default().finetune;
    assert_eq!(cfg.seeds.len(), 5);
    let curve = build_slc(
        Init::Model {
            model: &f.model,
            mask: None,
        },
        &f.pair.target.train,
        &f.pair.target.test,
        &[32, 128, 512],
        &cfg,
        &CurveCache::in_memory(),
    )
    .unwrap();
    assert_eq!(curve.grid(), vec![32, 128, 512]);
    assert!(curve.points.iter().any(|p| p.std_acc > 0.0));
    assert!(curve.points.iter().all(|p| (0.0..=1.0).contains(&p.mean_acc)));
}
