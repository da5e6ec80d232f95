//! One-shot magnitude pruning of a source-trained model at increasing
//! sparsity, globally and per layer.
//!
//! cargo run --release --example magnitude_pruning

use ntprune::baselines::{one_shot_magnitude_prune, MagnitudePruneConfig, PruneScope};
use ntprune::datasets::{generate_synthetic_domain_pair, SyntheticPairConfig};
use ntprune::model::{ArchSpec, SplitClassifier};
use ntprune::seed;
use ntprune::training::{accuracy, train_supervised, TrainConfig};

fn main() -> ntprune::Result<()> {
    let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
        per_class: 60,
        ..SyntheticPairConfig::default()
    })?;
    let arch = ArchSpec::registry("tiny_cnn", pair.source.train.shape(), 10)?;
    let mut model = SplitClassifier::<f32>::init(arch, &mut seed::rng(0))?;
    let trainable = vec![true; model.params.len()];
    let cfg = TrainConfig {
        epochs: 12,
        lr: 2e-3,
        batch_size: 32,
        step_every: 0,
        step_factor: 1.0,
    };
    train_supervised(&mut model, &pair.source.train, &cfg, None, &trainable, &mut seed::rng(1))?;

    println!("sparsity  scope      density  source acc  target acc");
    for sparsity in [0.0, 0.5, 0.8, 0.9, 0.95, 0.98] {
        for scope in [PruneScope::Global, PruneScope::PerLayer] {
            let (pruned, mask) = one_shot_magnitude_prune(&model, &MagnitudePruneConfig { sparsity, scope })?;
            println!(
                "{sparsity:<8}  {:<9}  {:>7.4}  {:>10.3}  {:>10.3}",
                format!("{scope:?}"),
                1.0 - mask.sparsity(),
                accuracy(&pruned, &pair.source.test)?,
                accuracy(&pruned, &pair.target.test)?
            );
        }
    }
    Ok(())
}
