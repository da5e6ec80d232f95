use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::subset::train_test_split;
use super::{DomainDataset, DomainSplits, Split};
use crate::model::Shape3;
use crate::seed;
use crate::{Error, Result};

/// Appearance change applied to source renders to produce the target domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Identity,
    /// `x -> 1 - x` on every channel.
    ColorInversion,
    /// Background pixels blended with a random color texture.
    BackgroundNoise,
    /// Cyclic permutation of the color channels.
    ChannelPermutation,
}

impl Shift {
    pub fn name(self) -> &'static str {
        match self {
            Shift::Identity => "identity",
            Shift::ColorInversion => "color_inversion",
            Shift::BackgroundNoise => "background_noise",
            Shift::ChannelPermutation => "channel_permutation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPairConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub image: Shape3,
    pub shift: Shift,
    pub seed: u64,
}

impl Default for SyntheticPairConfig {
    fn default() -> Self {
        SyntheticPairConfig {
            num_classes: 10,
            per_class: 200,
            image: Shape3::new(32, 32, 3),
            shift: Shift::BackgroundNoise,
            seed: 0,
        }
    }
}

/// Paired domains: sample `i` of the target is sample `i` of the source
/// with the shift applied, and both use the same 80/20 split.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub source: DomainSplits,
    pub target: DomainSplits,
}

pub const MAX_SYNTHETIC_CLASSES: usize = 16;

// Seven-segment layout in glyph units, y pointing down.
const SEGMENTS: [[(f32, f32); 2]; 7] = [
    [(0.0, 0.0), (1.0, 0.0)],
    [(1.0, 0.0), (1.0, 0.5)],
    [(1.0, 0.5), (1.0, 1.0)],
    [(0.0, 1.0), (1.0, 1.0)],
    [(0.0, 0.5), (0.0, 1.0)],
    [(0.0, 0.0), (0.0, 0.5)],
    [(0.0, 0.5), (1.0, 0.5)],
];

// Bit k set means segment k is lit; hex digits 0-F.
const GLYPHS: [u8; MAX_SYNTHETIC_CLASSES] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111,
    0b1111111, 0b1101111, 0b1110111, 0b1111100, 0b0111001, 0b1011110, 0b1111001, 0b1110001,
];

struct Render {
    pixels: Vec<f32>,
    coverage: Vec<f32>,
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn render(class: usize, shape: Shape3, rng: &mut seed::Rng) -> Render {
    let (h, w) = (shape.h as f32, shape.w as f32);
    let unit = h.min(w) / 32.0;
    let scale = rng.gen_range(0.8..1.15f32);
    let gw = 0.34 * w * scale;
    let gh = 0.58 * h * scale;
    let cx = w / 2.0 + rng.gen_range(-0.1..0.1f32) * w;
    let cy = h / 2.0 + rng.gen_range(-0.08..0.08f32) * h;
    let slant = rng.gen_range(-0.25..0.25f32);
    let thickness = rng.gen_range(1.6..3.0f32) * unit;
    let to_px = |(u, v): (f32, f32)| {
        let x = cx + (u - 0.5) * gw + slant * (0.5 - v) * gh;
        (x, cy + (v - 0.5) * gh)
    };
    let segs: Vec<((f32, f32), (f32, f32))> = (0..7)
        .filter(|k| GLYPHS[class] >> k & 1 == 1)
        .map(|k| (to_px(SEGMENTS[k][0]), to_px(SEGMENTS[k][1])))
        .collect();

    let mut fg = [0f32; 3];
    let mut bg = [0f32; 3];
    for c in 0..3 {
        fg[c] = rng.gen_range(0.55..1.0);
        bg[c] = rng.gen_range(0.0..0.35);
    }
    let n = shape.h * shape.w;
    let mut coverage = vec![0f32; n];
    let mut pixels = vec![0f32; shape.len()];
    for yi in 0..shape.h {
        for xi in 0..shape.w {
            let p = (xi as f32 + 0.5, yi as f32 + 0.5);
            let d = segs
                .iter()
                .map(|(a, b)| segment_distance(p, *a, *b))
                .fold(f32::INFINITY, f32::min);
            let cov = (thickness / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            let i = yi * shape.w + xi;
            coverage[i] = cov;
            for c in 0..shape.c {
                let v = if shape.c == 3 {
                    bg[c] * (1.0 - cov) + fg[c] * cov
                } else {
                    let (b, f) = (bg.iter().sum::<f32>() / 3.0, fg.iter().sum::<f32>() / 3.0);
                    b * (1.0 - cov) + f * cov
                };
                let noise = rng.gen_range(-0.04..0.04f32);
                pixels[i * shape.c + c] = (v + noise).clamp(0.0, 1.0);
            }
        }
    }
    Render { pixels, coverage }
}

fn apply_shift(shift: Shift, r: &Render, shape: Shape3, rng: &mut seed::Rng) -> Vec<f32> {
    match shift {
        Shift::Identity => r.pixels.clone(),
        Shift::ColorInversion => r.pixels.iter().map(|v| 1.0 - v).collect(),
        Shift::ChannelPermutation => {
            let c = shape.c;
            let mut out = r.pixels.clone();
            for (dst, src) in out.chunks_exact_mut(c).zip(r.pixels.chunks_exact(c)) {
                for k in 0..c {
                    dst[k] = src[(k + 1) % c];
                }
            }
            out
        }
        Shift::BackgroundNoise => {
            let cell = 4usize;
            let (bh, bw) = (shape.h.div_ceil(cell), shape.w.div_ceil(cell));
            let blocks: Vec<f32> = (0..bh * bw * shape.c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut out = r.pixels.clone();
            for yi in 0..shape.h {
                for xi in 0..shape.w {
                    let i = yi * shape.w + xi;
                    let keep = r.coverage[i];
                    let b = ((yi / cell) * bw + xi / cell) * shape.c;
                    for c in 0..shape.c {
                        let tex = 0.6 * blocks[b + c] + 0.4 * rng.gen_range(0.0..1.0f32);
                        let v = r.pixels[i * shape.c + c];
                        let mixed = 0.3 * v + 0.7 * tex;
                        out[i * shape.c + c] = (keep * v + (1.0 - keep) * mixed).clamp(0.0, 1.0);
                    }
                }
            }
            out
        }
    }
}

/// Renders `num_classes · per_class` glyph images (class of sample `i` is
/// `i mod num_classes`), derives the target by applying `shift`, and splits
/// both domains 80/20 per class with the same seed.
pub fn generate_synthetic_domain_pair(cfg: &SyntheticPairConfig) -> Result<SyntheticPair> {
    if cfg.num_classes < 2 || cfg.num_classes > MAX_SYNTHETIC_CLASSES {
        return Err(Error::invalid(format!(
            "synthetic classes must lie in [2, {MAX_SYNTHETIC_CLASSES}], got {}",
            cfg.num_classes
        )));
    }
    if cfg.per_class < 4 {
        return Err(Error::invalid("need at least 4 samples per class"));
    }
    if cfg.image.h < 8 || cfg.image.w < 8 || !(cfg.image.c == 1 || cfg.image.c == 3) {
        return Err(Error::invalid(format!(
            "synthetic images must be at least 8x8 with 1 or 3 channels, got {}",
            cfg.image
        )));
    }
    if cfg.shift == Shift::ChannelPermutation && cfg.image.c == 1 {
        return Err(Error::invalid("channel permutation needs more than one channel"));
    }
    let total = cfg.num_classes * cfg.per_class;
    let mut src = Vec::with_capacity(total * cfg.image.len());
    let mut tgt = Vec::with_capacity(total * cfg.image.len());
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = i % cfg.num_classes;
        let mut rr = seed::derived_rng(cfg.seed, "render", i as u64);
        let r = render(class, cfg.image, &mut rr);
        let mut sr = seed::derived_rng(cfg.seed, "shift", i as u64);
        tgt.extend(apply_shift(cfg.shift, &r, cfg.image, &mut sr));
        src.extend_from_slice(&r.pixels);
        labels.push(class as u16);
    }
    let label_set: Vec<String> = (0..cfg.num_classes).map(|c| format!("{c:X}")).collect();
    let build = |name: String, images: Vec<f32>, shift: Shift| -> Result<DomainSplits> {
        let mut ds = DomainDataset::new(name, cfg.image, images, labels.clone(), label_set.clone(), Split::Train)?
            .with_seed(Some(cfg.seed));
        ds.shift = Some(shift);
        let (train, test) = train_test_split(&ds, 0.8, seed::derive(cfg.seed, "split", 0))?;
        train.check_class_coverage()?;
        Ok(DomainSplits { train, test })
    };
    Ok(SyntheticPair {
        source: build("synthetic-source".into(), src, Shift::Identity)?,
        target: build(format!("synthetic-{}", cfg.shift.name()), tgt, cfg.shift)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(shift: Shift) -> SyntheticPairConfig {
        SyntheticPairConfig {
            num_classes: 4,
            per_class: 10,
            image: Shape3::new(16, 16, 3),
            shift,
            seed: 9,
        }
    }

    #[test]
    fn identity_shift_gives_equal_domains() {
        let p = generate_synthetic_domain_pair(&small(Shift::Identity)).unwrap();
        assert_eq!(p.source.train.images(), p.target.train.images());
        assert_eq!(p.source.test.labels(), p.target.test.labels());
    }

    #[test]
    fn inversion_maps_x_to_one_minus_x() {
        let p = generate_synthetic_domain_pair(&small(Shift::ColorInversion)).unwrap();
        for (s, t) in p.source.train.images().iter().zip(p.target.train.images()) {
            assert!((1.0 - s - t).abs() < 1e-6);
        }
    }

    #[test]
    fn splits_are_eighty_twenty_and_deterministic() {
        let cfg = small(Shift::BackgroundNoise);
        let a = generate_synthetic_domain_pair(&cfg).unwrap();
        assert_eq!(a.source.train.class_counts(), vec![8; 4]);
        assert_eq!(a.target.test.class_counts(), vec![2; 4]);
        assert_eq!(a, generate_synthetic_domain_pair(&cfg).unwrap());
        let b = generate_synthetic_domain_pair(&SyntheticPairConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.target.train.images(), b.target.train.images());
    }

    #[test]
    fn classes_render_differently() {
        let mut rng = seed::rng(0);
        let shape = Shape3::new(16, 16, 1);
        let one = render(1, shape, &mut rng).coverage.iter().sum::<f32>();
        let eight = render(8, shape, &mut seed::rng(0)).coverage.iter().sum::<f32>();
        assert!(eight > 2.0 * one);
    }

    #[test]
    fn background_noise_shifts_the_mean_pixel() {
        let p = generate_synthetic_domain_pair(&SyntheticPairConfig {
            shift: Shift::BackgroundNoise,
            seed: 7,
            ..SyntheticPairConfig::default()
        })
        .unwrap();
        let (s, t) = (p.source.train.mean_pixel(), p.target.train.mean_pixel());
        assert!(t - s > 0.02);
        // Regression values of the renderer.
        assert!((s - 0.240502033).abs() < 1e-6 && (t - 0.436434099).abs() < 1e-6, "{s} {t}");
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(Shift::Identity);
        cfg.num_classes = 17;
        assert!(generate_synthetic_domain_pair(&cfg).is_err());
        let mut cfg = small(Shift::ChannelPermutation);
        cfg.image.c = 1;
        assert!(generate_synthetic_domain_pair(&cfg).is_err());
    }
}
