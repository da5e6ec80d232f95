use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Transfer,
    Scratch,
}

impl InitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InitKind::Transfer => "transfer",
            InitKind::Scratch => "scratch",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean_acc: f64,
    /// Sample standard deviation over seeds; `0` with a single seed.
    pub std_acc: f64,
}

/// Test accuracy against training-subset size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub init_kind: InitKind,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Aggregates per-seed accuracies into one point per size.
    pub fn from_runs(init_kind: InitKind, runs: &[(usize, Vec<f64>)]) -> Result<Self> {
        let mut points = Vec::with_capacity(runs.len());
        for (n, accs) in runs {
            if accs.is_empty() {
                return Err(Error::Empty(format!("no runs at n={n}")));
            }
            let k = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / k;
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            points.push(CurvePoint {
                n: *n,
                mean_acc: mean,
                std_acc: std,
            });
        }
        let curve = LearningCurve { init_kind, points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn grid(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_acc).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| w[0].n >= w[1].n) || self.points.first().is_some_and(|p| p.n == 0) {
            return Err(Error::invalid("curve sizes must be positive and strictly increasing"));
        }
        if self
            .points
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.mean_acc) || !(p.std_acc >= 0.0))
        {
            return Err(Error::invalid("curve accuracies must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Trapezoidal integral of `transfer(n) − scratch(n)` over `log10(n)`.
/// Positive means the initialization helps; negative means it hurts.
pub fn slc_auc(transfer: &LearningCurve, scratch: &LearningCurve) -> Result<f64> {
    transfer.validate()?;
    scratch.validate()?;
    if transfer.grid() != scratch.grid() {
        return Err(Error::invalid(format!(
            "curves on different grids: {:?} vs {:?}",
            transfer.grid(),
            scratch.grid()
        )));
    }
    if transfer.points.len() < 2 {
        return Err(Error::invalid("need at least two grid points"));
    }
    let gap: Vec<f64> = transfer
        .points
        .iter()
        .zip(&scratch.points)
        .map(|(a, b)| a.mean_acc - b.mean_acc)
        .collect();
    let x: Vec<f64> = transfer.points.iter().map(|p| (p.n as f64).log10()).collect();
    Ok((1..x.len()).map(|i| 0.5 * (gap[i] + gap[i - 1]) * (x[i] - x[i - 1])).sum())
}

/// Both curves and their signed area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlcResult {
    pub curve_transfer: LearningCurve,
    pub curve_scratch: LearningCurve,
    pub auc: f64,
}

impl SlcResult {
    pub fn new(curve_transfer: LearningCurve, curve_scratch: LearningCurve) -> Result<Self> {
        let auc = slc_auc(&curve_transfer, &curve_scratch)?;
        Ok(SlcResult {
            curve_transfer,
            curve_scratch,
            auc,
        })
    }
}

/// The JSON written next to every learning-curve evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlcReport {
    /// What was evaluated, e.g. `unpruned` or `ntp`.
    pub label: String,
    /// `source->target` domain names.
    pub pair: String,
    pub config_hash: String,
    pub scheme: String,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub grid: Vec<usize>,
    pub transfer_mean: Vec<f64>,
    pub transfer_std: Vec<f64>,
    pub scratch_mean: Vec<f64>,
    pub scratch_std: Vec<f64>,
    pub auc: f64,
    /// Sparsity of the evaluated model's prunable weights.
    pub sparsity: f64,
    /// Source test accuracy of the evaluated model, when known.
    pub source_accuracy: Option<f64>,
}

impl SlcReport {
    pub fn result(&self) -> Result<SlcResult> {
        let curve = |kind, mean: &[f64], std: &[f64]| {
            if mean.len() != self.grid.len() || std.len() != self.grid.len() {
                return Err(Error::shape(self.grid.len(), mean.len().min(std.len())));
            }
            let points = self
                .grid
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(n, (m, s))| CurvePoint {
                    n: *n,
                    mean_acc: *m,
                    std_acc: *s,
                })
                .collect();
            Ok(LearningCurve { init_kind: kind, points })
        };
        SlcResult::new(
            curve(InitKind::Transfer, &self.transfer_mean, &self.transfer_std)?,
            curve(InitKind::Scratch, &self.scratch_mean, &self.scratch_std)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(kind: InitKind, grid: &[usize], acc: &[f64]) -> LearningCurve {
        LearningCurve {
            init_kind: kind,
            points: grid
                .iter()
                .zip(acc)
                .map(|(n, a)| CurvePoint {
                    n: *n,
                    mean_acc: *a,
                    std_acc: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn rectangle_and_identity() {
        let t = curve(InitKind::Transfer, &[10, 100, 1000], &[0.75, 0.75, 0.75]);
        let s = curve(InitKind::Scratch, &[10, 100, 1000], &[0.25, 0.25, 0.25]);
        assert_eq!(slc_auc(&t, &s).unwrap(), 1.0);
        assert_eq!(slc_auc(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn hand_trapezoid() {
        let t = curve(InitKind::Transfer, &[10, 100], &[0.8, 0.9]);
        let s = curve(InitKind::Scratch, &[10, 100], &[0.2, 0.8]);
        assert!((slc_auc(&t, &s).unwrap() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn mismatched_or_short_grids_fail() {
        let t = curve(InitKind::Transfer, &[10, 100], &[0.8, 0.9]);
        let s = curve(InitKind::Scratch, &[10, 1000], &[0.2, 0.8]);
        assert!(slc_auc(&t, &s).is_err());
        let one = curve(InitKind::Transfer, &[10], &[0.8]);
        assert!(slc_auc(&one, &one).is_err());
    }

    #[test]
    fn aggregation_uses_sample_std() {
        let c = LearningCurve::from_runs(InitKind::Scratch, &[(8, vec![0.5, 0.7]), (16, vec![0.9])]).unwrap();
        assert!((c.points[0].mean_acc - 0.6).abs() < 1e-12);
        assert!((c.points[0].std_acc - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.points[1].std_acc, 0.0);
        assert!(LearningCurve::from_runs(InitKind::Scratch, &[(8, vec![0.5]), (8, vec![0.5])]).is_err());
    }
}
