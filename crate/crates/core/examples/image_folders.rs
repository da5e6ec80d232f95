//! Loads real image domains from class-per-directory folders.
//!
//! cargo run --release --example image_folders [DIR]
//!
//! DIR must hold one subdirectory per class with image files inside. When
//! omitted, a small demo tree of generated PNGs is written to a temporary
//! directory first. The loaded domain is split 80/20 per class and a
//! stratified subset is drawn, as the experiment pipeline does for
//! `"dataset": {"folders": ...}` configs.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ntprune::datasets::{load_image_domain, stratified_subset, train_test_split, SubsetSize, SubsetSpec};
use ntprune::model::Shape3;

/// Two classes: bright horizontal bars and bright vertical bars, at
/// different sizes so resizing has work to do.
fn write_demo(root: &Path) -> std::io::Result<()> {
    for (class, horizontal) in [("bars-h", true), ("bars-v", false)] {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir)?;
        for i in 0..10u32 {
            let side = 20 + 4 * i;
            let img = RgbImage::from_fn(side, side, |x, y| {
                let t = if horizontal { y } else { x };
                if (t / 3 + i) % 2 == 0 {
                    Rgb([230, 200, 40])
                } else {
                    Rgb([20, 30, 60])
                }
            });
            img.save(dir.join(format!("{i:02}.png"))).map_err(std::io::Error::other)?;
        }
    }
    Ok(())
}

fn main() -> ntprune::Result<()> {
    let demo = tempfile::tempdir()?;
    let dir = match std::env::args().nth(1) {
        Some(d) => PathBuf::from(d),
        None => {
            write_demo(demo.path())?;
            demo.path().to_path_buf()
        }
    };
    let ds = load_image_domain(&dir, Shape3::new(16, 16, 3))?;
    ds.check_class_coverage()?;
    println!(
        "{} images in {} classes {:?}, shape {}, mean pixel {:.3}",
        ds.len(),
        ds.num_classes(),
        ds.label_set,
        ds.shape(),
        ds.mean_pixel()
    );
    let (train, test) = train_test_split(&ds, 0.8, 0)?;
    println!("train {:?} / test {:?} per class", train.class_counts(), test.class_counts());
    let subset = stratified_subset(
        &train,
        &SubsetSpec {
            size: SubsetSize::Fraction(0.5),
            stratified: true,
            seed: 1,
        },
    )?;
    println!("half-size stratified subset: {:?}", subset.class_counts());
    Ok(())
}

