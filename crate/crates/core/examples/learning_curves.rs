//! Sample-wise learning curves: fine-tunes a source-trained model on nested
//! target subsets, trains the same architecture from scratch on the same
//! subsets and integrates the accuracy gap over log10(n).
//!
//! cargo run --release --example learning_curves [SVG_PATH]

use ntprune::datasets::{generate_synthetic_domain_pair, SyntheticPairConfig};
use ntprune::model::{ArchSpec, SplitClassifier};
use ntprune::seed;
use ntprune::training::{train_supervised, TrainConfig};
use ntprune::transferability::{evaluate_slc, slc_svg, CurveCache, FineTuneConfig, Scheme};

fn main() -> ntprune::Result<()> {
    let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
        per_class: 60,
        ..SyntheticPairConfig::default()
    })?;
    let arch = ArchSpec::registry("tiny_cnn", pair.source.train.shape(), 10)?;
    let mut model = SplitClassifier::<f32>::init(arch, &mut seed::rng(0))?;
    let trainable = vec![true; model.params.len()];
    let pretrain = TrainConfig {
        epochs: 12,
        lr: 2e-3,
        batch_size: 32,
        step_every: 0,
        step_factor: 1.0,
    };
    train_supervised(&mut model, &pair.source.train, &pretrain, None, &trainable, &mut seed::rng(1))?;

    let sizes = [20, 40, 80, 160, 320];
    let scratch = CurveCache::in_memory();
    for scheme in [Scheme::FF, Scheme::LP] {
        let cfg = FineTuneConfig {
            scheme,
            epochs: 15,
            step_every: 5,
            batch_size: 16,
            seeds: vec![0, 1, 2],
            ..FineTuneConfig::default()
        };
        let transfer = CurveCache::in_memory();
        let r = evaluate_slc(
            &model,
            None,
            &pair.target.train,
            &pair.target.test,
            &sizes,
            &cfg,
            &transfer,
            &scratch,
        )?;
        println!("{} fine-tuning", scheme.as_str());
        println!("  n     transfer  scratch");
        for (t, s) in r.curve_transfer.points.iter().zip(&r.curve_scratch.points) {
            println!("  {:<5} {:.3}±{:.3}  {:.3}±{:.3}", t.n, t.mean_acc, t.std_acc, s.mean_acc, s.std_acc);
        }
        println!("  SLC-AUC {:+.4}\n", r.auc);
        if scheme == Scheme::FF {
            if let Some(path) = std::env::args().nth(1) {
                std::fs::write(&path, slc_svg(&r, "unpruned FF"))?;
                println!("figure written to {path}\n");
            }
        }
    }
    // Both schemes share the scratch curve.
    println!("scratch runs cached: {}, reused: {}", scratch.len(), scratch.hits());
    Ok(())
}
