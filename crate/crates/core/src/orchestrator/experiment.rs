use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{DatasetSpec, ExperimentConfig};
use crate::admm::{run_ntp, write_history, AdmmConfig, Termination};
use crate::baselines::{one_shot_magnitude_prune, MagnitudePruneConfig};
use crate::datasets::{
    generate_synthetic_domain_pair, load_image_domain, train_test_split, DomainSplits, SyntheticPairConfig,
};
use crate::model::checkpoint::{self, Checkpoint, Provenance};
use crate::model::{ArchSpec, SplitClassifier};
use crate::training::{accuracy, train_supervised, TrainConfig};
use crate::transferability::{evaluate_slc, slc_svg, CurveCache, FineTuneConfig, Scheme, SlcReport, SlcResult};
use crate::{Error, Result};

/// Source and target splits of an experiment.
#[derive(Clone, Debug)]
pub struct Domains {
    pub source: DomainSplits,
    pub target: DomainSplits,
}

impl Domains {
    pub fn pair_name(&self) -> String {
        format!("{}->{}", self.source.train.name, self.target.train.name)
    }
}

/// Pruning method selectable on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ntp,
    Magnitude,
}

/// Which checkpoint a learning-curve evaluation starts from.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSelection {
    Pretrained,
    Ntp,
    /// Magnitude-pruned at the given sparsity.
    Magnitude(f64),
    /// Any checkpoint directory, with a label for reports.
    Path { dir: PathBuf, label: String },
}

impl ModelSelection {
    pub fn label(&self) -> String {
        match self {
            ModelSelection::Pretrained => "unpruned".into(),
            ModelSelection::Ntp => "ntp".into(),
            ModelSelection::Magnitude(s) => format!("magnitude-s{s}"),
            ModelSelection::Path { label, .. } => label.clone(),
        }
    }
}

/// Accuracy summary written next to every produced checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageMetrics {
    pub stage: String,
    pub config_hash: String,
    pub source_test_accuracy: f64,
    pub target_test_accuracy: f64,
    /// Sparsity of the prunable weights.
    pub sparsity: f64,
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

/// Overrides applied to one learning-curve evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlcOptions {
    pub scheme: Option<Scheme>,
    pub lr: Option<f64>,
    pub revive_zeros: bool,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

/// Result of one learning-curve evaluation.
#[derive(Clone, Debug)]
pub struct SlcArtifacts {
    pub dir: PathBuf,
    pub report: SlcReport,
    pub result: SlcResult,
    /// Runs served from the transfer and scratch caches.
    pub cache_hits: usize,
}

/// One configured experiment rooted at `<out_root>/<config hash>/`. Every
/// artifact path below the run directory depends only on the config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
    domains: OnceLock<Domains>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

impl Experiment {
    pub fn new(config: ExperimentConfig, out_root: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        let dir = config.out_root(out_root).join(&hash[..16]);
        Ok(Experiment {
            config,
            hash,
            dir,
            domains: OnceLock::new(),
        })
    }

    /// Creates the run directory and records the config in it.
    pub fn init_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut cfg = self.config.clone();
        cfg.output_dir = None;
        fs::write(self.dir.join("config.json"), cfg.to_json()? + "\n")?;
        Ok(())
    }

    pub fn pretrain_dir(&self) -> PathBuf {
        self.dir.join("pretrain")
    }

    pub fn ntp_dir(&self) -> PathBuf {
        self.dir.join("prune-ntp")
    }

    pub fn magnitude_dir(&self, sparsity: f64) -> PathBuf {
        self.dir.join(format!("prune-magnitude-s{sparsity}"))
    }

    pub fn selection_dir(&self, sel: &ModelSelection) -> PathBuf {
        match sel {
            ModelSelection::Pretrained => self.pretrain_dir(),
            ModelSelection::Ntp => self.ntp_dir(),
            ModelSelection::Magnitude(s) => self.magnitude_dir(*s),
            ModelSelection::Path { dir, .. } => dir.clone(),
        }
    }

    /// The experiment's domains, generated or loaded once.
    pub fn domains(&self) -> Result<&Domains> {
        if let Some(d) = self.domains.get() {
            return Ok(d);
        }
        let d = match &self.config.dataset {
            DatasetSpec::Synthetic(spec) => {
                let spec = SyntheticPairConfig {
                    seed: self.config.stage_seed("dataset", spec.seed),
                    ..*spec
                };
                let pair = generate_synthetic_domain_pair(&spec)?;
                Domains {
                    source: pair.source,
                    target: pair.target,
                }
            }
            DatasetSpec::Folders { source, target, shape } => {
                let split = |path: &Path, tag: &str| -> Result<DomainSplits> {
                    let ds = load_image_domain(path, *shape)?;
                    ds.check_class_coverage()?;
                    let (train, test) = train_test_split(&ds, 0.8, self.config.stage_seed(tag, 0))?;
                    Ok(DomainSplits { train, test })
                };
                let d = Domains {
                    source: split(source, "split-source")?,
                    target: split(target, "split-target")?,
                };
                if d.source.train.label_set != d.target.train.label_set {
                    return Err(Error::invalid("source and target domains have different label sets"));
                }
                d
            }
        };
        Ok(self.domains.get_or_init(|| d))
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        let d = self.domains()?;
        ArchSpec::registry(&self.config.architecture, d.source.train.shape(), d.source.train.num_classes())
    }

    fn metrics(
        &self,
        stage: &str,
        model: &SplitClassifier<f32>,
        details: BTreeMap<String, serde_json::Value>,
    ) -> Result<StageMetrics> {
        let d = self.domains()?;
        Ok(StageMetrics {
            stage: stage.into(),
            config_hash: self.hash.clone(),
            source_test_accuracy: accuracy(model, &d.source.test)?,
            target_test_accuracy: accuracy(model, &d.target.test)?,
            sparsity: 1.0 - model.prunable_density()?,
            details,
        })
    }

    /// Trains the architecture on the source training split and saves the
    /// checkpoint plus `metrics.json` under `pretrain/`.
    pub fn pretrain(&self) -> Result<StageMetrics> {
        self.init_dir()?;
        let p = self.config.pretrain;
        let seed = self.config.stage_seed("pretrain", p.seed);
        let mut model = SplitClassifier::<f32>::init(self.arch()?, &mut crate::seed::derived_rng(seed, "init", 0))?;
        let cfg = TrainConfig {
            epochs: p.epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            step_every: 0,
            step_factor: 1.0,
        };
        let trainable = vec![true; model.params.len()];
        let losses = train_supervised(
            &mut model,
            &self.domains()?.source.train,
            &cfg,
            None,
            &trainable,
            &mut crate::seed::derived_rng(seed, "batches", 0),
        )?;
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("pretraining loss".into()));
        }
        let dir = self.pretrain_dir();
        let mut details = BTreeMap::new();
        details.insert("epochs".into(), json!(p.epochs));
        details.insert("final_loss".into(), json!(losses.last().copied()));
        checkpoint::save(&dir, &model, None, seed, Provenance { stage: "pretrain".into(), details: details.clone() })?;
        let m = self.metrics("pretrain", &model, details)?;
        write_json(&dir.join("metrics.json"), &m)?;
        log::info!("pretrained: source acc {:.3}, target acc {:.3}", m.source_test_accuracy, m.target_test_accuracy);
        Ok(m)
    }

    pub fn load_pretrained(&self) -> Result<Checkpoint> {
        checkpoint::load(&self.pretrain_dir())
    }

    /// NTP-prunes the pretrained checkpoint into `prune-ntp/` with the
    /// history CSV.
    pub fn prune_ntp(&self) -> Result<StageMetrics> {
        let base = self.load_pretrained()?;
        let d = self.domains()?;
        let admm = AdmmConfig {
            seed: self.config.stage_seed("admm", self.config.admm.seed),
            ..self.config.admm
        };
        let r = run_ntp(&base.model, &d.source.train, &d.target.train, &admm, &self.config.loss)?;
        let dir = self.ntp_dir();
        fs::create_dir_all(&dir)?;
        write_history(&dir.join("history.csv"), &r.history)?;
        let mut details = BTreeMap::new();
        details.insert("termination_reason".into(), json!(r.termination_reason));
        details.insert("iterations".into(), json!(r.history.len()));
        details.insert("projected_mask".into(), json!(r.projected));
        details.insert("target_sparsity".into(), json!(admm.target_sparsity));
        checkpoint::save(
            &dir,
            &r.pruned_model,
            Some(&r.mask),
            admm.seed,
            Provenance { stage: "ntp".into(), details: details.clone() },
        )?;
        let m = self.metrics("ntp", &r.pruned_model, details)?;
        write_json(&dir.join("metrics.json"), &m)?;
        if r.termination_reason == Termination::Diverged {
            return Err(Error::NonFinite(format!("ADMM objective; partial history in {}", dir.display())));
        }
        Ok(m)
    }

    /// One-shot magnitude pruning of the pretrained checkpoint.
    pub fn prune_magnitude(&self, sparsity: Option<f64>) -> Result<StageMetrics> {
        let base = self.load_pretrained()?;
        let cfg = MagnitudePruneConfig {
            sparsity: sparsity.unwrap_or(self.config.magnitude.sparsity),
            ..self.config.magnitude
        };
        let (model, mask) = one_shot_magnitude_prune(&base.model, &cfg)?;
        let dir = self.magnitude_dir(cfg.sparsity);
        let mut details = BTreeMap::new();
        details.insert("target_sparsity".into(), json!(cfg.sparsity));
        details.insert("scope".into(), json!(cfg.scope));
        checkpoint::save(
            &dir,
            &model,
            Some(&mask),
            base.manifest.seed,
            Provenance { stage: "magnitude".into(), details: details.clone() },
        )?;
        let m = self.metrics("magnitude", &model, details)?;
        write_json(&dir.join("metrics.json"), &m)?;
        Ok(m)
    }

    pub fn prune(&self, method: Method, sparsity: Option<f64>) -> Result<StageMetrics> {
        match method {
            Method::Ntp => self.prune_ntp(),
            Method::Magnitude => self.prune_magnitude(sparsity),
        }
    }

    pub fn finetune_config(&self, opts: &SlcOptions) -> FineTuneConfig {
        let mut ft = self.config.finetune.clone();
        if let Some(s) = opts.scheme {
            ft.scheme = s;
        }
        if let Some(lr) = opts.lr {
            ft.lr = lr;
        }
        ft.revive_zeros = opts.revive_zeros;
        ft.seeds = ft.seeds.iter().map(|s| self.config.stage_seed("slc", *s)).collect();
        ft
    }

    pub fn slc_dir(&self, sel: &ModelSelection, opts: &SlcOptions) -> PathBuf {
        let ft = self.finetune_config(opts);
        let mut name = format!("slc-{}-{}-lr{}", sel.label(), ft.scheme.as_str().to_ascii_lowercase(), ft.lr);
        if ft.revive_zeros {
            name.push_str("-revive");
        }
        self.dir.join(name)
    }

    /// Learning curves of the selected checkpoint against scratch training
    /// on the target domain. Writes `report.json`, `curve.csv` and
    /// `slc.svg`; finished runs are reused from the caches.
    pub fn slc(&self, sel: &ModelSelection, opts: &SlcOptions) -> Result<SlcArtifacts> {
        let ckpt = checkpoint::load(&self.selection_dir(sel))?;
        let d = self.domains()?;
        let ft = self.finetune_config(opts);
        let dir = self.slc_dir(sel, opts);
        fs::create_dir_all(&dir)?;
        let transfer_cache = CurveCache::open(&dir.join("curve.csv"))?;
        let scratch_cache = CurveCache::open(&self.dir.join(format!("scratch-lr{}.csv", ft.lr)))?;
        let run = || {
            evaluate_slc(
                &ckpt.model,
                ckpt.mask.as_ref(),
                &d.target.train,
                &d.target.test,
                &self.config.sizes,
                &ft,
                &transfer_cache,
                &scratch_cache,
            )
        };
        let result = match opts.jobs {
            Some(j) => rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?
                .install(run)?,
            None => run()?,
        };
        let source_accuracy = Some(accuracy(&ckpt.model, &d.source.test)?);
        let t = &result.curve_transfer;
        let s = &result.curve_scratch;
        let report = SlcReport {
            label: sel.label(),
            pair: d.pair_name(),
            config_hash: self.hash.clone(),
            scheme: ft.scheme.as_str().into(),
            lr: ft.lr,
            seeds: ft.seeds.clone(),
            grid: t.grid(),
            transfer_mean: t.means(),
            transfer_std: t.points.iter().map(|p| p.std_acc).collect(),
            scratch_mean: s.means(),
            scratch_std: s.points.iter().map(|p| p.std_acc).collect(),
            auc: result.auc,
            sparsity: 1.0 - ckpt.model.prunable_density()?,
            source_accuracy,
        };
        write_json(&dir.join("report.json"), &report)?;
        let title = format!("{} {} ({})", report.label, report.scheme, report.pair);
        fs::write(dir.join("slc.svg"), slc_svg(&result, &title))?;
        log::info!("{}: SLC-AUC {:.4}", report.label, report.auc);
        Ok(SlcArtifacts {
            dir,
            report,
            result,
            cache_hits: transfer_cache.hits() + scratch_cache.hits(),
        })
    }
}
