//! The full experiment behind the command-line tool, driven from code:
//! pretrain, NTP and magnitude pruning, learning curves for each model and
//! the merged comparison table.
//!
//! cargo run --release --example pipeline [OUT_ROOT]
//!
//! Uses the built-in experiment config (about 20 minutes on one core). Set
//! QUICK=1 for a reduced grid with two seeds.

use std::path::PathBuf;

use ntprune::orchestrator::{collect_reports, Experiment, ExperimentConfig, Method, ModelSelection, SlcOptions};

fn main() -> ntprune::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::args().nth(1).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let mut cfg = ExperimentConfig::default();
    if std::env::var_os("QUICK").is_some() {
        cfg.finetune.seeds = vec![0, 1];
        cfg.sizes = vec![32, 128, 512];
    }
    let exp = Experiment::new(cfg, Some(&root))?;
    println!("run directory {}", exp.dir.display());

    let pre = exp.pretrain()?;
    let ntp = exp.prune(Method::Ntp, None)?;
    let mag = exp.prune(Method::Magnitude, Some(0.8))?;
    for m in [&pre, &ntp, &mag] {
        println!(
            "{:<10} sparsity {:.3}  source {:.3}  target {:.3}",
            m.stage, m.sparsity, m.source_test_accuracy, m.target_test_accuracy
        );
    }

    for sel in [ModelSelection::Pretrained, ModelSelection::Ntp, ModelSelection::Magnitude(0.8)] {
        let a = exp.slc(&sel, &SlcOptions::default())?;
        println!("{:<14} SLC-AUC {:+.4}  ({})", a.report.label, a.report.auc, a.dir.display());
    }

    let cmp = collect_reports(std::slice::from_ref(&exp.dir))?;
    cmp.write_csv(&exp.dir.join("report.csv"))?;
    print!("\n{}", cmp.table());
    Ok(())
}
