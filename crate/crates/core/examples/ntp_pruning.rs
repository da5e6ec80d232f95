//! Pretrains the tiny CNN on a synthetic source domain, prunes it with the
//! ADMM loop under the non-transferable objective and prints the iteration
//! history and accuracies before and after.
//!
//! cargo run --release --example ntp_pruning

use ntprune::admm::{run_ntp, AdmmConfig};
use ntprune::datasets::{generate_synthetic_domain_pair, SyntheticPairConfig};
use ntprune::model::{ArchSpec, SplitClassifier};
use ntprune::objective::NtpLossConfig;
use ntprune::orchestrator::ExperimentConfig;
use ntprune::seed;
use ntprune::training::{accuracy, train_supervised, TrainConfig};

fn main() -> ntprune::Result<()> {
    let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
        per_class: 100,
        ..SyntheticPairConfig::default()
    })?;
    let arch = ArchSpec::registry("tiny_cnn", pair.source.train.shape(), 10)?;
    let mut model = SplitClassifier::<f32>::init(arch, &mut seed::rng(0))?;
    let trainable = vec![true; model.params.len()];
    let pretrain = TrainConfig {
        epochs: 15,
        lr: 2e-3,
        batch_size: 32,
        step_every: 0,
        step_factor: 1.0,
    };
    train_supervised(&mut model, &pair.source.train, &pretrain, None, &trainable, &mut seed::rng(1))?;
    println!(
        "pretrained: source {:.3}, target {:.3}",
        accuracy(&model, &pair.source.test)?,
        accuracy(&model, &pair.target.test)?
    );

    // The settings of the built-in experiment config.
    let fixture = ExperimentConfig::default();
    let admm: AdmmConfig = fixture.admm;
    let loss: NtpLossConfig = fixture.loss;
    let r = run_ntp(&model, &pair.source.train, &pair.target.train, &admm, &loss)?;
    println!("\n  t     L_S     L_T   R_Phi  density(Z)");
    for h in &r.history {
        println!(
            "{:>3} {:>7.4} {:>7.3} {:>7.4} {:>10.3}",
            h.iteration, h.loss.l_s, h.loss.l_t, h.loss.r_phi_t, h.density
        );
    }
    println!(
        "\n{:?} after {} iterations, mask sparsity {:.3} (projected {})",
        r.termination_reason,
        r.history.len(),
        r.mask.sparsity(),
        r.projected
    );
    println!(
        "pruned: source {:.3}, target {:.3}",
        accuracy(&r.pruned_model, &pair.source.test)?,
        accuracy(&r.pruned_model, &pair.target.test)?
    );
    Ok(())
}
