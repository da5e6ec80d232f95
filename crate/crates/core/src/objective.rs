//! The non-transferable pruning objective:
//!
//! `total = L_S + R_T + R_Φ`, with `L_S` the source cross-entropy,
//! `R_T = -min(β, α·L_T)` the capped target penalty and `R_Φ` the
//! Fisher-space ratio of between-class spread to within-class spread on
//! target features.

use serde::{Deserialize, Serialize};

use crate::model::{add_grads, Batch, FeatureBatch, GradScope, Real, SplitClassifier, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtpLossConfig {
    /// Target-loss scale.
    pub alpha: f64,
    /// Target-loss cap.
    pub beta: f64,
    /// Fisher regularizer coefficient.
    pub gamma: f64,
    /// Floor for the within-class denominator.
    pub epsilon_denom: f64,
    /// Value cap used once the denominator is floored.
    pub r_cap: f64,
}

impl Default for NtpLossConfig {
    fn default() -> Self {
        NtpLossConfig {
            alpha: 0.1,
            beta: 1.0,
            gamma: 0.1,
            epsilon_denom: 1e-8,
            r_cap: 1e6,
        }
    }
}

impl NtpLossConfig {
    /// `β` may be `+∞` to disable the cap; everything else must be finite.
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.alpha >= 0.0
            && self.beta > 0.0
            && !self.beta.is_nan()
            && self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.epsilon_denom.is_finite()
            && self.epsilon_denom > 0.0
            && self.epsilon_denom < 1e-2
            && self.r_cap.is_finite()
            && self.r_cap > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("loss config out of range: {self:?}")))
        }
    }
}

/// The terms of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_S")]
    pub l_s: f64,
    #[serde(rename = "L_T")]
    pub l_t: f64,
    #[serde(rename = "R_T")]
    pub r_t: f64,
    #[serde(rename = "R_Phi_T")]
    pub r_phi_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(l_s: f64, l_t: f64, r_t: f64, r_phi_t: f64) -> Self {
        LossBreakdown {
            l_s,
            l_t,
            r_t,
            r_phi_t,
            total: l_s + r_t + r_phi_t,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_s, self.l_t, self.r_t, self.r_phi_t, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Mean cross-entropy of `logits` (rows of `classes`) and its gradient.
pub fn cross_entropy<T: Real>(logits: &[T], labels: &[u16], classes: usize) -> Result<(T, Vec<T>)> {
    let n = labels.len();
    if n == 0 || logits.len() != n * classes {
        return Err(Error::shape(format!("{n}x{classes} logits"), logits.len()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for ((row, g), &y) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let y = y as usize;
        if y >= classes {
            return Err(Error::invalid(format!("label {y} outside {classes} classes")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|v| (*v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[y];
        for (gi, v) in g.iter_mut().zip(row) {
            *gi = (*v - log_z).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// `R_T = -min(β, α·L_T)`.
pub fn capped_target_penalty(l_t: f64, cfg: &NtpLossConfig) -> f64 {
    -(cfg.alpha * l_t).min(cfg.beta)
}

fn cap_active(l_t: f64, cfg: &NtpLossConfig) -> bool {
    cfg.alpha * l_t >= cfg.beta
}

/// Mean source cross-entropy.
pub fn source_loss<T: Real>(model: &SplitClassifier<T>, batch: &Batch<T>) -> Result<f64> {
    let logits = model.forward(&batch.x)?;
    Ok(cross_entropy(&logits, &batch.y, model.num_classes())?.0.f64())
}

/// `(R_T, L_T)` on a target batch.
pub fn target_penalty<T: Real>(
    model: &SplitClassifier<T>,
    batch: &Batch<T>,
    cfg: &NtpLossConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    let logits = model.forward(&batch.x)?;
    let l_t = cross_entropy(&logits, &batch.y, model.num_classes())?.0.f64();
    if !l_t.is_finite() {
        return Err(Error::NonFinite("target loss".into()));
    }
    Ok((capped_target_penalty(l_t, cfg), l_t))
}

/// Per-class feature statistics of a batch. Classes that do not occur in
/// the batch are left out of every sum.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats<T> {
    /// Class ids present in the batch, ascending.
    pub classes: Vec<u16>,
    /// One mean per present class, row-major `classes.len() × dim`.
    pub class_means: Vec<T>,
    pub class_counts: Vec<usize>,
    /// Mean of the class means.
    pub global_mean: Vec<T>,
    /// `Σ_i ‖z_i − z̄_{y_i}‖₂`.
    pub within_sum: T,
    /// `Σ_c ‖z̄_c − global_mean‖₂`.
    pub between_sum: T,
    pub dim: usize,
}

impl<T: Real> FeatureStats<T> {
    pub fn class_mean(&self, k: usize) -> &[T] {
        &self.class_means[k * self.dim..(k + 1) * self.dim]
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

pub fn feature_stats<T: Real>(features: &FeatureBatch<T>) -> Result<FeatureStats<T>> {
    if features.is_empty() {
        return Err(Error::Empty("feature batch".into()));
    }
    let dim = features.dim;
    let mut classes: Vec<u16> = features.y.clone();
    classes.sort_unstable();
    classes.dedup();
    let slot = |y: u16| classes.binary_search(&y).unwrap();
    let k = classes.len();
    let mut sums = vec![T::zero(); k * dim];
    let mut counts = vec![0usize; k];
    for i in 0..features.len() {
        let s = slot(features.y[i]);
        counts[s] += 1;
        sums[s * dim..(s + 1) * dim]
            .iter_mut()
            .zip(features.row(i))
            .for_each(|(a, b)| *a += *b);
    }
    for (s, count) in counts.iter().enumerate() {
        let inv = T::one() / T::of(*count as f64);
        sums[s * dim..(s + 1) * dim].iter_mut().for_each(|v| *v *= inv);
    }
    let means = sums;
    let mut global = vec![T::zero(); dim];
    for row in means.chunks_exact(dim) {
        global.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
    }
    let inv_k = T::one() / T::of(k as f64);
    global.iter_mut().for_each(|v| *v *= inv_k);

    let mut diff = vec![T::zero(); dim];
    let mut within = T::zero();
    for i in 0..features.len() {
        let s = slot(features.y[i]);
        for ((d, z), m) in diff.iter_mut().zip(features.row(i)).zip(&means[s * dim..]) {
            *d = *z - *m;
        }
        within += norm(&diff);
    }
    let between = between_class_spread(&means, &global, dim);
    Ok(FeatureStats {
        classes,
        class_means: means,
        class_counts: counts,
        global_mean: global,
        within_sum: within,
        between_sum: between,
        dim,
    })
}

/// Numerator of the Fisher ratio: summed distance of each class mean from
/// the mean of class means. Kept in one place so an alternative spread
/// measure can replace it.
fn between_class_spread<T: Real>(means: &[T], global: &[T], dim: usize) -> T {
    let mut diff = vec![T::zero(); dim];
    means
        .chunks_exact(dim)
        .map(|m| {
            diff.iter_mut()
                .zip(m.iter().zip(global))
                .for_each(|(d, (a, b))| *d = *a - *b);
            norm(&diff)
        })
        .sum()
}

/// `γ · between / within`, with the within-class sum floored at
/// `epsilon_denom` and the floored value capped at `r_cap`.
pub fn fisher_regularizer<T: Real>(features: &FeatureBatch<T>, cfg: &NtpLossConfig) -> Result<T> {
    Ok(fisher_regularizer_grad(features, cfg)?.0)
}

fn unit_or_zero<T: Real>(v: &mut [T]) {
    let n = norm(v);
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v.iter_mut().for_each(|x| *x = T::zero());
    }
}

/// Regularizer value and its gradient with respect to every feature row.
pub fn fisher_regularizer_grad<T: Real>(
    features: &FeatureBatch<T>,
    cfg: &NtpLossConfig,
) -> Result<(T, Vec<T>)> {
    cfg.validate()?;
    let stats = feature_stats(features)?;
    if stats.classes.len() < 2 {
        return Err(Error::invalid(
            "fisher regularizer needs at least two classes in the batch",
        ));
    }
    let dim = stats.dim;
    let k = stats.classes.len();
    let gamma = T::of(cfg.gamma);
    let eps = T::of(cfg.epsilon_denom);
    let (between, within) = (stats.between_sum, stats.within_sum);

    let (value, d_between, d_within) = if within > eps {
        let w2 = within * within;
        (gamma * between / within, gamma / within, -gamma * between / w2)
    } else {
        let floored = gamma * between / eps;
        if floored < T::of(cfg.r_cap) {
            (floored, gamma / eps, T::zero())
        } else {
            (T::of(cfg.r_cap), T::zero(), T::zero())
        }
    };
    let mut grad = vec![T::zero(); features.z.len()];
    if d_between == T::zero() && d_within == T::zero() {
        return Ok((value, grad));
    }
    let slot = |y: u16| stats.classes.binary_search(&y).unwrap();

    // dB/dm_c = v_c − mean(v), v_c the unit direction of m_c − global.
    let mut v = vec![T::zero(); k * dim];
    for c in 0..k {
        let row = &mut v[c * dim..(c + 1) * dim];
        row.iter_mut()
            .zip(stats.class_mean(c).iter().zip(&stats.global_mean))
            .for_each(|(d, (a, b))| *d = *a - *b);
        unit_or_zero(row);
    }
    let mut v_bar = vec![T::zero(); dim];
    for row in v.chunks_exact(dim) {
        v_bar.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
    }
    let inv_k = T::one() / T::of(k as f64);
    v_bar.iter_mut().for_each(|x| *x *= inv_k);

    // dW/dz_i = u_i − mean_{j∈c}(u_j), u_i the unit direction of z_i − m_c.
    let mut u = vec![T::zero(); features.z.len()];
    let mut u_sum = vec![T::zero(); k * dim];
    for i in 0..features.len() {
        let s = slot(features.y[i]);
        let row = &mut u[i * dim..(i + 1) * dim];
        row.iter_mut()
            .zip(features.row(i).iter().zip(stats.class_mean(s)))
            .for_each(|(d, (a, b))| *d = *a - *b);
        unit_or_zero(row);
        u_sum[s * dim..(s + 1) * dim]
            .iter_mut()
            .zip(row.iter())
            .for_each(|(a, b)| *a += *b);
    }
    for i in 0..features.len() {
        let s = slot(features.y[i]);
        let inv_n = T::one() / T::of(stats.class_counts[s] as f64);
        for d in 0..dim {
            let db = (v[s * dim + d] - v_bar[d]) * inv_n;
            let dw = u[i * dim + d] - u_sum[s * dim + d] * inv_n;
            grad[i * dim + d] = d_between * db + d_within * dw;
        }
    }
    Ok((value, grad))
}

fn to_batch_features<T: Real>(z: &[T], y: &[u16], dim: usize) -> Result<FeatureBatch<T>> {
    FeatureBatch::new(z.to_vec(), y.to_vec(), dim)
}

/// Objective value on a source and a target batch.
pub fn ntp_loss<T: Real>(
    model: &SplitClassifier<T>,
    source: &Batch<T>,
    target: &Batch<T>,
    cfg: &NtpLossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let classes = model.num_classes();
    let (l_s, _) = cross_entropy(&model.forward(&source.x)?, &source.y, classes)?;
    let trace = model.forward_trace(&target.x)?;
    let (l_t, _) = cross_entropy(&trace.logits, &target.y, classes)?;
    let r_phi = if cfg.gamma > 0.0 {
        let f = to_batch_features(&trace.features, &target.y, model.feature_dim())?;
        fisher_regularizer(&f, cfg)?.f64()
    } else {
        0.0
    };
    let l_t = l_t.f64();
    let out = LossBreakdown::new(l_s.f64(), l_t, capped_target_penalty(l_t, cfg), r_phi);
    if !out.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok(out)
}

/// Objective value and its parameter-aligned gradient. In the capped
/// regime the target cross-entropy contributes no gradient.
pub fn ntp_loss_and_grad<T: Real>(
    model: &SplitClassifier<T>,
    source: &Batch<T>,
    target: &Batch<T>,
    cfg: &NtpLossConfig,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    cfg.validate()?;
    let classes = model.num_classes();
    let src = model.forward_trace(&source.x)?;
    let (l_s, d_src) = cross_entropy(&src.logits, &source.y, classes)?;
    let mut grads = model.backward(&src, None, Some(&d_src), GradScope::All)?;

    let tgt = model.forward_trace(&target.x)?;
    let (l_t, mut d_tgt) = cross_entropy(&tgt.logits, &target.y, classes)?;
    let l_t64 = l_t.f64();
    let d_logits = if cap_active(l_t64, cfg) || cfg.alpha == 0.0 {
        None
    } else {
        let scale = T::of(-cfg.alpha);
        d_tgt.iter_mut().for_each(|g| *g *= scale);
        Some(d_tgt)
    };
    let (r_phi, d_feat) = if cfg.gamma > 0.0 {
        let f = to_batch_features(&tgt.features, &target.y, model.feature_dim())?;
        let (v, g) = fisher_regularizer_grad(&f, cfg)?;
        (v.f64(), Some(g))
    } else {
        (0.0, None)
    };
    if d_logits.is_some() || d_feat.is_some() {
        let g = model.backward(&tgt, d_feat.as_deref(), d_logits.as_deref(), GradScope::All)?;
        add_grads(&mut grads, &g);
    }
    let out = LossBreakdown::new(l_s.f64(), l_t64, capped_target_penalty(l_t64, cfg), r_phi);
    if !out.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fb(z: Vec<f64>, y: Vec<u16>, dim: usize) -> FeatureBatch<f64> {
        FeatureBatch::new(z, y, dim).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let (l, _) = cross_entropy(&[0.0f64; 20], &[3, 7], 10).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let (l, _) = cross_entropy(&[margin, 0.0, 0.0], &[0], 3).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn batch_loss_is_mean_of_per_sample_losses() {
        let logits = [0.3, -1.2, 2.0, 0.1, 0.5, 0.5, -2.0, 1.0, 0.0, 3.0, -0.7, 0.2];
        let labels = [2u16, 0, 1, 1];
        let (l, _) = cross_entropy(&logits, &labels, 3).unwrap();
        let manual: f64 = logits
            .chunks(3)
            .zip(labels)
            .map(|(r, y)| {
                let z: f64 = r.iter().map(|v: &f64| v.exp()).sum();
                -(r[y as usize].exp() / z).ln()
            })
            .sum::<f64>()
            / 4.0;
        assert!((l - manual).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        assert!(cross_entropy(&[f64::NAN, 0.0], &[0], 2).is_err());
    }

    #[test]
    fn target_penalty_examples() {
        let cfg = NtpLossConfig {
            alpha: 0.1,
            beta: 1.0,
            ..Default::default()
        };
        assert_eq!(capped_target_penalty(0.0, &cfg), 0.0);
        assert!((capped_target_penalty(5.0, &cfg) + 0.5).abs() < 1e-15);
        let capped = NtpLossConfig { alpha: 1.0, ..cfg };
        assert_eq!(capped_target_penalty(5.0, &capped), -1.0);
        assert!(cap_active(5.0, &capped));
    }

    #[test]
    fn two_class_hand_example() {
        let f = fb(vec![0.0, 2.0, 4.0, 6.0], vec![0, 0, 1, 1], 1);
        let s = feature_stats(&f).unwrap();
        assert_eq!(s.class_means, vec![1.0, 5.0]);
        assert_eq!(s.global_mean, vec![3.0]);
        assert_eq!(s.between_sum, 4.0);
        assert_eq!(s.within_sum, 4.0);
        let cfg = NtpLossConfig {
            gamma: 1.0,
            ..Default::default()
        };
        assert_eq!(fisher_regularizer(&f, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn single_sample_per_class_has_zero_within_sum() {
        let f = fb(vec![0.0, 1.0, 5.0, 2.0, -1.0, 3.0], vec![0, 1, 2], 2);
        assert_eq!(feature_stats(&f).unwrap().within_sum, 0.0);
    }

    #[test]
    fn permutation_leaves_stats_unchanged() {
        let f = fb(vec![0.0, 2.0, 4.0, 6.0, 1.0], vec![0, 0, 1, 1, 1], 1);
        let g = fb(vec![6.0, 0.0, 1.0, 4.0, 2.0], vec![1, 0, 1, 1, 0], 1);
        let (a, b) = (feature_stats(&f).unwrap(), feature_stats(&g).unwrap());
        assert!((a.within_sum - b.within_sum).abs() < 1e-12);
        assert!((a.between_sum - b.between_sum).abs() < 1e-12);
    }

    #[test]
    fn collapsed_classes_give_zero_regularizer() {
        let f = fb(vec![1.0, 3.0, 1.0, 3.0], vec![0, 0, 1, 1], 1);
        let cfg = NtpLossConfig::default();
        assert_eq!(feature_stats(&f).unwrap().between_sum, 0.0);
        assert_eq!(fisher_regularizer(&f, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn zero_within_sum_hits_the_cap() {
        let f = fb(vec![0.0, 0.0, 4.0, 4.0], vec![0, 0, 1, 1], 1);
        let cfg = NtpLossConfig {
            gamma: 1.0,
            ..Default::default()
        };
        assert_eq!(fisher_regularizer(&f, &cfg).unwrap(), cfg.r_cap);
    }

    #[test]
    fn one_class_is_an_error() {
        let f = fb(vec![0.0, 1.0], vec![0, 0], 1);
        assert!(fisher_regularizer(&f, &NtpLossConfig::default()).is_err());
        assert!(feature_stats(&fb(vec![], vec![], 1)).is_err());
    }

    #[test]
    fn fisher_gradient_matches_finite_differences() {
        let z = vec![0.3, -1.0, 2.0, 0.5, 1.5, 0.2, -0.4, 0.9, 1.1, 2.2, -0.3, 0.7];
        let y = vec![0, 1, 2, 0, 1, 2];
        let cfg = NtpLossConfig {
            gamma: 0.7,
            ..Default::default()
        };
        let (_, g) = fisher_regularizer_grad(&fb(z.clone(), y.clone(), 2), &cfg).unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let mut p = z.clone();
            p[i] += h;
            let mut m = z.clone();
            m[i] -= h;
            let fp = fisher_regularizer(&fb(p, y.clone(), 2), &cfg).unwrap();
            let fm = fisher_regularizer(&fb(m, y.clone(), 2), &cfg).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn total_is_the_sum_of_its_terms() {
        use crate::datasets::{generate_synthetic_domain_pair, SyntheticPairConfig};
        use crate::model::{ArchSpec, Shape3};
        let pair = generate_synthetic_domain_pair(&SyntheticPairConfig {
            num_classes: 3,
            per_class: 10,
            image: Shape3::new(8, 8, 3),
            ..Default::default()
        })
        .unwrap();
        let arch = ArchSpec::registry("micro_cnn", Shape3::new(8, 8, 3), 3).unwrap();
        let model = SplitClassifier::<f32>::init(arch, &mut crate::seed::rng(3)).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let (src, tgt) = (pair.source.train.batch(&idx), pair.target.train.batch(&idx));
        for (alpha, beta, gamma) in [(0.1, 1.0, 1.0), (2.0, 0.05, 3.0), (0.0, 1.0, 0.0)] {
            let cfg = NtpLossConfig {
                alpha,
                beta,
                gamma,
                ..Default::default()
            };
            for l in [ntp_loss(&model, &src, &tgt, &cfg).unwrap(), ntp_loss_and_grad(&model, &src, &tgt, &cfg).unwrap().0] {
                assert!((l.total - (l.l_s + l.r_t + l.r_phi_t)).abs() < 1e-6);
                assert!((l.r_t - capped_target_penalty(l.l_t, &cfg)).abs() < 1e-12);
                assert!((l.l_s - source_loss(&model, &src).unwrap()).abs() < 1e-6);
                assert!((l.r_t - target_penalty(&model, &tgt, &cfg).unwrap().0).abs() < 1e-6);
            }
        }
    }
}
