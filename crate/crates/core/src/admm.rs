//! ADMM pruning: alternate a W-update (Adam on the objective plus the
//! augmented penalty `ρ/2·‖W − Z + U‖²`), a Z-update (soft-threshold of
//! `W + U` at `λ/ρ`) and a U-update (`U += W − Z`) until `Z` is sparse
//! enough, the objective stalls, or the iteration budget runs out.
//!
//! `W` is the feature-extractor weight vector ([`Scope::Prunable`]);
//! biases and the classifier head train freely and are never pruned.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::smallest_k_mask;
use crate::datasets::{stratified_subset, DomainDataset, SubsetSize, SubsetSpec};
use crate::model::{masked_step, Adam, Real, Scope, SparsityMask, SplitClassifier};
use crate::objective::{ntp_loss, ntp_loss_and_grad, LossBreakdown, NtpLossConfig};
use crate::seed::{self, Rng};
use crate::training::{epoch_batches, train_supervised, TrainConfig};
use crate::{Error, Result};

pub use crate::model::sparsity;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub lambda: f64,
    pub target_sparsity: f64,
    pub max_sparsity: f64,
    /// Epochs over the source subset per W-update.
    pub w_epochs: usize,
    pub max_iterations: usize,
    pub lr: f64,
    pub source_fraction: f64,
    pub target_fraction: f64,
    /// Threshold on `|Δ total|` between consecutive iterations.
    pub convergence_tol: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Source-only, mask-respecting epochs after pruning; `0` skips it.
    pub finetune_epochs: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho: 1e-2,
            lambda: 1e-4,
            target_sparsity: 0.9,
            max_sparsity: 0.99,
            w_epochs: 10,
            max_iterations: 30,
            lr: 1e-3,
            source_fraction: 0.1,
            target_fraction: 0.1,
            convergence_tol: 1e-4,
            batch_size: 64,
            seed: 0,
            finetune_epochs: 0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |f: f64| f > 0.0 && f <= 1.0;
        let ok = self.rho > 0.0
            && self.rho.is_finite()
            && self.lambda > 0.0
            && self.lambda.is_finite()
            && self.target_sparsity > 0.0
            && self.target_sparsity <= self.max_sparsity
            && self.max_sparsity < 1.0
            && self.max_iterations > 0
            && self.lr > 0.0
            && self.lr.is_finite()
            && frac(self.source_fraction)
            && frac(self.target_fraction)
            && self.convergence_tol > 0.0
            && self.batch_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("ADMM config out of range: {self:?}")))
        }
    }

    pub fn tau(&self) -> f64 {
        self.lambda / self.rho
    }
}

/// Primal, auxiliary and dual vectors over the prunable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState<T> {
    pub w: Vec<T>,
    pub z: Vec<T>,
    pub u: Vec<T>,
    pub t: usize,
}

impl<T: Real> AdmmState<T> {
    /// `Z = W`, `U = 0`, `t = 0`.
    pub fn new(w: Vec<T>) -> Self {
        AdmmState {
            z: w.clone(),
            u: vec![T::zero(); w.len()],
            w,
            t: 0,
        }
    }

    pub fn from_model(model: &SplitClassifier<T>) -> Self {
        Self::new(model.flatten(Scope::Prunable).values)
    }

    /// `‖W − Z‖₂`.
    pub fn primal_residual(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.z)
            .map(|(w, z)| (w.f64() - z.f64()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `‖W − Z + U‖₂²`.
    pub fn penalty_norm2(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.z)
            .zip(&self.u)
            .map(|((w, z), u)| (w.f64() - z.f64() + u.f64()).powi(2))
            .sum()
    }
}

/// `sign(v)·max(|v| − τ, 0)`, the minimizer of `λ|z| + ρ/2·(v − z)²` for
/// `τ = λ/ρ`.
pub fn soft_threshold<T: Real>(v: T, tau: T) -> T {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        T::zero()
    }
}

/// `Z = soft_threshold(W + U, λ/ρ)`.
pub fn z_update<T: Real>(state: &mut AdmmState<T>, cfg: &AdmmConfig) {
    let tau = T::of(cfg.tau());
    for ((z, w), u) in state.z.iter_mut().zip(&state.w).zip(&state.u) {
        *z = soft_threshold(*w + *u, tau);
    }
}

/// `U += W − Z`, then `t += 1`.
pub fn u_update<T: Real>(state: &mut AdmmState<T>) {
    for ((u, w), z) in state.u.iter_mut().zip(&state.w).zip(&state.z) {
        *u += *w - *z;
    }
    state.t += 1;
}

/// `cfg.w_epochs` epochs of Adam on the objective plus the augmented
/// penalty. Each step pairs a source minibatch with a target minibatch;
/// the target subset is cycled so both are covered every epoch. The model's
/// prunable weights are overwritten with `state.w` first and copied back to
/// it at the end. Returns the augmented objective seen at every step.
#[allow(clippy::too_many_arguments)]
pub fn w_update<T: Real>(
    state: &mut AdmmState<T>,
    model: &mut SplitClassifier<T>,
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &AdmmConfig,
    loss_cfg: &NtpLossConfig,
    optimizer: &mut Adam<T>,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("ADMM subsets".into()));
    }
    model.write_scope(Scope::Prunable, &state.w)?;
    let prunable = model.param_indices(Scope::Prunable);
    let trainable = vec![true; model.params.len()];
    let rho = T::of(cfg.rho);
    let mut trace = Vec::new();
    for _ in 0..cfg.w_epochs {
        let src_batches = epoch_batches(source.len(), cfg.batch_size, rng);
        let per_target = target.len().div_ceil(src_batches.len());
        let tgt_batches = epoch_batches(target.len(), per_target, rng);
        for (k, src_idx) in src_batches.iter().enumerate() {
            let tgt_idx = &tgt_batches[k % tgt_batches.len()];
            let (loss, mut grads) =
                ntp_loss_and_grad(model, &source.batch(src_idx), &target.batch(tgt_idx), loss_cfg)?;
            let mut penalty = 0.0;
            let mut offset = 0;
            for &i in &prunable {
                let n = grads[i].len();
                let (z, u) = (&state.z[offset..offset + n], &state.u[offset..offset + n]);
                for (j, g) in grads[i].data.iter_mut().enumerate() {
                    let r = model.params[i].data[j] - z[j] + u[j];
                    penalty += r.f64() * r.f64();
                    *g += rho * r;
                }
                offset += n;
            }
            let value = loss.total + 0.5 * cfg.rho * penalty;
            if !value.is_finite() {
                return Err(Error::NonFinite("augmented objective".into()));
            }
            trace.push(value);
            masked_step(model, optimizer, grads, cfg.lr, None, &trainable)?;
        }
    }
    state.w = model.flatten(Scope::Prunable).values;
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SparsityReached,
    Converged,
    MaxIterations,
    /// A non-finite objective stopped the loop; the result holds the last
    /// finite model, unpruned.
    Diverged,
}

/// One ADMM iteration as logged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: LossBreakdown,
    /// `density(Z)` after the Z-update.
    pub density: f64,
    /// `‖W − Z‖₂` after the Z-update.
    pub primal_residual: f64,
    /// `ρ‖Z⁽ᵗ⁾ − Z⁽ᵗ⁻¹⁾‖₂`.
    pub dual_residual: f64,
}

#[derive(Clone, Debug)]
pub struct PruneResult<T> {
    pub pruned_model: SplitClassifier<T>,
    pub mask: SparsityMask,
    pub history: Vec<IterationRecord>,
    pub termination_reason: Termination,
    pub state: AdmmState<T>,
    /// The mask came from magnitude top-k of `|W + U|` rather than the
    /// support of `Z`.
    pub projected: bool,
}

/// The pruning mask derived from the final state: the support of `Z` when
/// it meets the target without exceeding `max_sparsity`, otherwise the
/// top-k of `|W + U|` at exactly the target sparsity.
pub fn final_mask<T: Real>(state: &AdmmState<T>, cfg: &AdmmConfig) -> Result<(SparsityMask, bool)> {
    let support = SparsityMask::from_support(&state.z);
    let s = support.sparsity();
    if s >= cfg.target_sparsity && s <= cfg.max_sparsity {
        return Ok((support, false));
    }
    let scores: Vec<f64> = state
        .w
        .iter()
        .zip(&state.u)
        .map(|(w, u)| (w.f64() + u.f64()).abs())
        .collect();
    Ok((SparsityMask::from_keep(smallest_k_mask(&scores, cfg.target_sparsity)?), true))
}

/// The ADMM subsets: stratified fractions of the source and target
/// training sets, seeded from `cfg.seed`.
pub fn admm_subsets(
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &AdmmConfig,
) -> Result<(DomainDataset, DomainDataset)> {
    let pick = |ds: &DomainDataset, fraction: f64, tag: &str| {
        stratified_subset(
            ds,
            &SubsetSpec {
                size: SubsetSize::Fraction(fraction),
                stratified: true,
                seed: seed::derive(cfg.seed, tag, 0),
            },
        )
    };
    Ok((
        pick(source, cfg.source_fraction, "admm-source")?,
        pick(target, cfg.target_fraction, "admm-target")?,
    ))
}

/// Prunes a source-trained model so that it keeps source accuracy and
/// resists transfer to `target`.
pub fn run_ntp<T: Real>(
    model: &SplitClassifier<T>,
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &AdmmConfig,
    loss_cfg: &NtpLossConfig,
) -> Result<PruneResult<T>> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let (src, tgt) = admm_subsets(source, target, cfg)?;
    let full_src = src.full_batch::<T>();
    let full_tgt = tgt.full_batch::<T>();
    let mut work = model.clone();
    let mut state = AdmmState::from_model(&work);
    let mut optimizer = Adam::new();
    let mut rng = seed::derived_rng(cfg.seed, "admm-batches", 0);
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut stalled = 0;
    let mut reason = Termination::MaxIterations;
    while state.t < cfg.max_iterations {
        let checkpoint = (work.clone(), state.clone());
        let step = w_update(&mut state, &mut work, &src, &tgt, cfg, loss_cfg, &mut optimizer, &mut rng)
            .and_then(|_| ntp_loss(&work, &full_src, &full_tgt, loss_cfg));
        let loss = match step {
            Ok(loss) => loss,
            Err(Error::NonFinite(what)) => {
                log::warn!("ADMM diverged at iteration {}: non-finite {what}", state.t + 1);
                let (last, last_state) = checkpoint;
                return Ok(PruneResult {
                    mask: SparsityMask::ones(last_state.w.len()),
                    pruned_model: last,
                    history,
                    termination_reason: Termination::Diverged,
                    state: last_state,
                    projected: false,
                });
            }
            Err(e) => return Err(e),
        };
        let z_prev = state.z.clone();
        z_update(&mut state, cfg);
        u_update(&mut state);
        let dual = cfg.rho
            * state
                .z
                .iter()
                .zip(&z_prev)
                .map(|(a, b)| (a.f64() - b.f64()).powi(2))
                .sum::<f64>()
                .sqrt();
        let z_density = crate::model::density(&state.z)?;
        let record = IterationRecord {
            iteration: state.t,
            loss,
            density: z_density,
            primal_residual: state.primal_residual(),
            dual_residual: dual,
        };
        log::info!(
            "admm t={} total={:.4} L_S={:.4} L_T={:.4} R_phi={:.4} density(Z)={:.4}",
            record.iteration,
            loss.total,
            loss.l_s,
            loss.l_t,
            loss.r_phi_t,
            z_density
        );
        if let Some(prev) = history.last() {
            if (loss.total - prev.loss.total).abs() < cfg.convergence_tol {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        history.push(record);
        if 1.0 - z_density >= cfg.target_sparsity {
            reason = Termination::SparsityReached;
            break;
        }
        if stalled >= 3 {
            reason = Termination::Converged;
            break;
        }
    }
    let (mask, projected) = final_mask(&state, cfg)?;
    work.apply_mask(&mask)?;
    if cfg.finetune_epochs > 0 {
        let tc = TrainConfig {
            epochs: cfg.finetune_epochs,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            step_every: 0,
            step_factor: 1.0,
        };
        let trainable = vec![true; work.params.len()];
        let mut ft_rng = seed::derived_rng(cfg.seed, "admm-finetune", 0);
        train_supervised(&mut work, &src, &tc, Some(&mask), &trainable, &mut ft_rng)?;
    }
    Ok(PruneResult {
        pruned_model: work,
        mask,
        history,
        termination_reason: reason,
        state,
        projected,
    })
}

pub const HISTORY_COLUMNS: [&str; 9] = [
    "iteration",
    "L_S",
    "L_T",
    "R_T",
    "R_Phi_T",
    "total",
    "density",
    "primal_residual",
    "dual_residual",
];

/// Writes the per-iteration history as CSV with [`HISTORY_COLUMNS`].
pub fn write_history(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_COLUMNS)?;
    for r in history {
        let l = &r.loss;
        w.write_record(
            std::iter::once(r.iteration.to_string()).chain(
                [l.l_s, l.l_t, l.r_t, l.r_phi_t, l.total, r.density, r.primal_residual, r.dual_residual]
                    .iter()
                    .map(|v| v.to_string()),
            ),
        )?;
    }
    w.flush()?;
    Ok(())
}
