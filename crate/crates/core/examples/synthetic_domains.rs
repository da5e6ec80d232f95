//! Generates a source/target glyph pair for every shift, prints per-domain
//! statistics and shows that learning-curve subsets are nested.
//!
//! cargo run --release --example synthetic_domains [OUT_DIR]
//!
//! With OUT_DIR the background-noise target training split is saved in the
//! on-disk dataset format and loaded back.

use std::path::PathBuf;

use ntprune::datasets::{
    generate_synthetic_domain_pair, load_dataset, log_spaced_sizes, save_dataset, stratified_subset, Shift,
    SubsetSize, SubsetSpec, SyntheticPairConfig,
};
use ntprune::model::Shape3;

fn main() -> ntprune::Result<()> {
    for shift in [Shift::Identity, Shift::ColorInversion, Shift::BackgroundNoise, Shift::ChannelPermutation] {
        let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
            num_classes: 10,
            per_class: 50,
            image: Shape3::new(32, 32, 3),
            shift,
            seed: 0,
        })?;
        println!(
            "{:<20} source {} train / {} test, mean pixel {:.3} -> {:.3}",
            pair.target.train.name,
            pair.source.train.len(),
            pair.source.test.len(),
            pair.source.train.mean_pixel(),
            pair.target.train.mean_pixel(),
        );
    }

    let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
        num_classes: 10,
        per_class: 50,
        ..SyntheticPairConfig::default()
    })?;
    let train = &pair.target.train;
    let sizes = log_spaced_sizes(10, train.len(), 5)?;
    println!("\nlog-spaced grid {sizes:?}");
    let mut previous: Option<Vec<u16>> = None;
    for &n in &sizes {
        let subset = stratified_subset(
            train,
            &SubsetSpec {
                size: SubsetSize::Count(n),
                stratified: true,
                seed: 7,
            },
        )?;
        let labels = subset.labels().to_vec();
        let nested = previous.as_ref().is_none_or(|p| labels.starts_with(p));
        println!("n={n:<4} class counts {:?} nested {nested}", subset.class_counts());
        previous = Some(labels);
    }

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        save_dataset(train, &dir)?;
        let back = load_dataset(&dir)?;
        println!("\nsaved and reloaded {} samples from {}: equal {}", back.len(), dir.display(), &back == train);
    }
    Ok(())
}
