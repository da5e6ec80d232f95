use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{CacheKey, CurveCache};
use super::curve::{InitKind, LearningCurve, SlcResult};
use crate::datasets::{stratified_subset, DomainDataset, SubsetSize, SubsetSpec};
use crate::model::{ArchSpec, Part, SparsityMask, SplitClassifier};
use crate::seed;
use crate::training::{accuracy, train_supervised, TrainConfig};
use crate::{Error, Result};

/// Which parameters the attacker trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Full fine-tuning: every parameter is trainable.
    FF,
    /// Linear probing: the feature extractor is frozen, the head trains.
    LP,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FF => "FF",
            Scheme::LP => "LP",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FF" => Ok(Scheme::FF),
            "LP" => Ok(Scheme::LP),
            _ => Err(Error::invalid(format!("unknown scheme '{s}' (expected FF or LP)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    pub scheme: Scheme,
    pub lr: f64,
    pub epochs: usize,
    pub step_every: usize,
    pub step_factor: f64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Let FF update pruned weights too; by default pruned weights stay zero.
    pub revive_zeros: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            scheme: Scheme::FF,
            lr: 1e-3,
            epochs: 30,
            step_every: 10,
            step_factor: 0.1,
            batch_size: 256,
            seeds: vec![0, 1, 2, 3, 4],
            revive_zeros: false,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("fine-tuning needs at least one seed"));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            step_every: self.step_every,
            step_factor: self.step_factor,
        }
    }
}

/// Test accuracy of one run plus whether its subset was smaller than the
/// number of classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub accuracy: f64,
    pub undersized: bool,
}

fn check_subset(subset: &DomainDataset, classes: usize) -> Result<bool> {
    if subset.is_empty() {
        return Err(Error::Empty("fine-tuning subset".into()));
    }
    let undersized = subset.len() < classes;
    if undersized {
        log::warn!("subset of {} samples is smaller than {classes} classes", subset.len());
    }
    Ok(undersized)
}

/// Reinitializes the head, trains on `subset` under `cfg.scheme` and
/// reports top-1 accuracy on `test`. Under FF the mask keeps pruned weights
/// at zero unless `cfg.revive_zeros` is set.
pub fn finetune(
    init_model: &SplitClassifier<f32>,
    mask: Option<&SparsityMask>,
    subset: &DomainDataset,
    test: &DomainDataset,
    cfg: &FineTuneConfig,
    run_seed: u64,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let undersized = check_subset(subset, init_model.num_classes())?;
    let mut model = init_model.clone();
    model.reinit_head(&mut seed::derived_rng(run_seed, "head-init", 0));
    let trainable: Vec<bool> = match cfg.scheme {
        Scheme::FF => vec![true; model.params.len()],
        Scheme::LP => model.param_info().iter().map(|p| p.part == Part::Classifier).collect(),
    };
    let mask = if cfg.revive_zeros { None } else { mask };
    let mut rng = seed::derived_rng(run_seed, "finetune", 0);
    train_supervised(&mut model, subset, &cfg.train_config(), mask, &trainable, &mut rng)?;
    Ok(RunOutcome {
        accuracy: accuracy(&model, test)?,
        undersized,
    })
}

/// The same protocol as [`finetune`] with FF semantics, starting from a
/// seeded random initialization of `arch`.
pub fn train_scratch(
    arch: &ArchSpec,
    subset: &DomainDataset,
    test: &DomainDataset,
    cfg: &FineTuneConfig,
    run_seed: u64,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let undersized = check_subset(subset, arch.num_classes)?;
    let mut model = SplitClassifier::<f32>::init(arch.clone(), &mut seed::derived_rng(run_seed, "scratch-init", 0))?;
    let trainable = vec![true; model.params.len()];
    let mut rng = seed::derived_rng(run_seed, "finetune", 0);
    let train_cfg = cfg.train_config();
    train_supervised(&mut model, subset, &train_cfg, None, &trainable, &mut rng)?;
    Ok(RunOutcome {
        accuracy: accuracy(&model, test)?,
        undersized,
    })
}

/// The size-`n` training subset used for `seed`. Subsets for one seed are
/// nested across sizes, and transfer and scratch runs share them. Sizes
/// below the class count fall back to unstratified draws.
pub fn slc_subset(train: &DomainDataset, n: usize, seed_value: u64) -> Result<DomainDataset> {
    stratified_subset(
        train,
        &SubsetSpec {
            size: SubsetSize::Count(n),
            stratified: n >= train.num_classes(),
            seed: seed::derive(seed_value, "slc-subset", 0),
        },
    )
}

/// Where a learning curve starts from.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Model {
        model: &'a SplitClassifier<f32>,
        mask: Option<&'a SparsityMask>,
    },
    Architecture(&'a ArchSpec),
}

impl Init<'_> {
    fn kind(&self) -> InitKind {
        match self {
            Init::Model { .. } => InitKind::Transfer,
            Init::Architecture(_) => InitKind::Scratch,
        }
    }
}

/// One `(mean, std)` point per size over `cfg.seeds`. Cells run on the
/// current rayon pool and are reduced by `(n, seed)`, so the result does not
/// depend on scheduling. Finished cells found in `cache` are reused; the
/// cache key does not identify the initial model, so use one cache per
/// model.
pub fn build_slc(
    init: Init<'_>,
    train: &DomainDataset,
    test: &DomainDataset,
    sizes: &[usize],
    cfg: &FineTuneConfig,
    cache: &CurveCache,
) -> Result<LearningCurve> {
    cfg.validate()?;
    if let Some(&n) = sizes.iter().find(|&&n| n > train.len() || n == 0) {
        return Err(Error::invalid(format!(
            "size {n} outside [1, {}] of the target training split",
            train.len()
        )));
    }
    let kind = init.kind();
    let scheme = match kind {
        InitKind::Transfer => cfg.scheme.as_str().to_string(),
        InitKind::Scratch => Scheme::FF.as_str().to_string(),
    };
    let cells: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(n, s)| {
            let key = CacheKey {
                init_kind: kind,
                n,
                seed: s,
                scheme: scheme.clone(),
                lr_bits: cfg.lr.to_bits(),
            };
            if let Some(acc) = cache.get(&key) {
                return Ok(acc);
            }
            let subset = slc_subset(train, n, s)?;
            let run_seed = seed::derive(s, "slc-run", n as u64);
            let out = match init {
                Init::Model { model, mask } => finetune(model, mask, &subset, test, cfg, run_seed)?,
                Init::Architecture(arch) => train_scratch(arch, &subset, test, cfg, run_seed)?,
            };
            log::debug!("{} n={n} seed={s} acc={:.4}", kind.as_str(), out.accuracy);
            cache.insert(key, out.accuracy)?;
            Ok(out.accuracy)
        })
        .collect();
    let mut runs: Vec<(usize, Vec<f64>)> = sizes.iter().map(|&n| (n, Vec::new())).collect();
    for ((n, _), r) in cells.iter().zip(results) {
        let acc = r?;
        runs.iter_mut().find(|(m, _)| m == n).unwrap().1.push(acc);
    }
    cache.compact()?;
    LearningCurve::from_runs(kind, &runs)
}

/// Transfer and scratch curves for `model` on the same grid, plus their
/// area. A transfer cache must only ever hold runs of one initial model;
/// the scratch cache can be shared by every model of an experiment.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_slc(
    model: &SplitClassifier<f32>,
    mask: Option<&SparsityMask>,
    train: &DomainDataset,
    test: &DomainDataset,
    sizes: &[usize],
    cfg: &FineTuneConfig,
    transfer_cache: &CurveCache,
    scratch_cache: &CurveCache,
) -> Result<SlcResult> {
    let transfer = build_slc(Init::Model { model, mask }, train, test, sizes, cfg, transfer_cache)?;
    let scratch = build_slc(Init::Architecture(model.arch()), train, test, sizes, cfg, scratch_cache)?;
    SlcResult::new(transfer, scratch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_domain_pair, Shift, SyntheticPairConfig};
    use crate::model::{Scope, Shape3};

    fn data() -> (DomainDataset, DomainDataset) {
        let p = generate_synthetic_domain_pair(&SyntheticPairConfig {
            num_classes: 4,
            per_class: 25,
            image: Shape3::new(8, 8, 3),
            shift: Shift::ColorInversion,
            seed: 3,
        })
        .unwrap();
        (p.target.train, p.target.test)
    }

    fn quick() -> FineTuneConfig {
        FineTuneConfig {
            epochs: 3,
            batch_size: 16,
            seeds: vec![0, 1],
            ..Default::default()
        }
    }

    #[test]
    fn constant_features_give_chance_under_lp() {
        let (train, test) = data();
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 4).unwrap();
        let mut model = SplitClassifier::<f32>::init(arch, &mut seed::rng(1)).unwrap();
        for i in model.param_indices(Scope::FeatureExtractor) {
            model.params[i].data.iter_mut().for_each(|v| *v = 0.0);
        }
        let cfg = FineTuneConfig {
            scheme: Scheme::LP,
            epochs: 10,
            ..quick()
        };
        let acc = finetune(&model, None, &train, &test, &cfg, 0).unwrap().accuracy;
        assert!((acc - 0.25).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn scratch_runs_are_deterministic() {
        let (train, test) = data();
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 4).unwrap();
        let a = train_scratch(&arch, &train, &test, &quick(), 7).unwrap();
        let b = train_scratch(&arch, &train, &test, &quick(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curves_reuse_the_cache_and_reject_oversized_grids() {
        let (train, test) = data();
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 4).unwrap();
        let cache = CurveCache::in_memory();
        let cfg = quick();
        let c1 = build_slc(Init::Architecture(&arch), &train, &test, &[8, 16], &cfg, &cache).unwrap();
        assert_eq!(cache.len(), 4);
        let c2 = build_slc(Init::Architecture(&arch), &train, &test, &[8, 16], &cfg, &CurveCache::in_memory()).unwrap();
        assert_eq!(c1, c2);
        assert!(build_slc(Init::Architecture(&arch), &train, &test, &[8, 1000], &cfg, &cache).is_err());
    }

    #[test]
    fn subsets_are_nested_per_seed() {
        let (train, _) = data();
        let small = slc_subset(&train, 12, 3).unwrap();
        let large = slc_subset(&train, 40, 3).unwrap();
        assert_eq!(small.images(), &large.images()[..small.images().len()]);
    }
}
