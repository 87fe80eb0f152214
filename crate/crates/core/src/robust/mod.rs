//! Robustness evaluation: synthetic corruptions, adversarial attacks and
//! the sweep that scores a model under each condition.

pub mod attack;
pub mod corrupt;

use std::fmt;
use std::path::Path;

use log::info;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{evaluate_predictions, DepthPredictor, EvalConfig, MetricsReport};
use crate::losses::LossConfig;
use crate::ndiff::Array;
use crate::nets::checkpoint::ModelBundle;
use crate::nets::DepthRange;
use crate::pipeline::ImageTriplet;

pub use attack::{flip_attack, pgd_attack, pgd_iterations, AttackConfig, FlipDirection, LossSource, FLIP_EPSILONS, PGD_EPSILONS};
pub use corrupt::{corrupt, Corruption, CorruptionSpec};

/// One row of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    Clean,
    Corruption(CorruptionSpec),
    Pgd { epsilon: f64 },
    Flip { direction: FlipDirection, epsilon: f64 },
}

impl Condition {
    pub fn kind(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Corruption(_) => "corruption",
            Condition::Pgd { .. } => "pgd",
            Condition::Flip { .. } => "flip",
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Corruption(s) => s.kind.name(),
            Condition::Pgd { .. } => "pgd",
            Condition::Flip { direction, .. } => direction.code(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match *self {
            Condition::Pgd { epsilon } | Condition::Flip { epsilon, .. } => epsilon,
            _ => 0.0,
        }
    }

    pub fn severity(&self) -> u8 {
        match self {
            Condition::Corruption(s) => s.severity,
            _ => 0,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Corruption(s) => write!(f, "{}@{}", s.kind, s.severity),
            _ => write!(f, "{}@{}", self.name(), self.epsilon()),
        }
    }
}

/// Conditions to evaluate, plus the seed for stochastic corruptions.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSuite {
    pub conditions: Vec<Condition>,
    pub seed: u64,
}

impl SweepSuite {
    /// Clean, every corruption at severity 5, PGD at every strength and both
    /// flip attacks at every strength.
    pub fn full() -> Self {
        let mut conditions = vec![Condition::Clean];
        conditions.extend(Corruption::ALL.into_iter().map(|kind| Condition::Corruption(CorruptionSpec::worst(kind))));
        conditions.extend(PGD_EPSILONS.iter().map(|&epsilon| Condition::Pgd { epsilon }));
        for direction in [FlipDirection::Horizontal, FlipDirection::Vertical] {
            conditions.extend(FLIP_EPSILONS.iter().map(|&epsilon| Condition::Flip { direction, epsilon }));
        }
        Self { conditions, seed: 0 }
    }

    pub fn corruptions(severity: u8) -> Result<Self> {
        let mut conditions = vec![Condition::Clean];
        conditions.extend(CorruptionSpec::all(severity)?.into_iter().map(Condition::Corruption));
        Ok(Self { conditions, seed: 0 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub condition: String,
    pub name: String,
    pub epsilon: f64,
    pub severity: u8,
    pub mean_rmse: f64,
    pub n_images: usize,
}

/// RMSE is written in shortest round-trip form, so parsing it back gives
/// the exact value.
pub const SWEEP_CSV_HEADER: &str = "condition,name,epsilon,severity,mean_rmse,n_images";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.condition, r.name, r.epsilon, r.severity, r.mean_rmse, r.n_images));
    }
    out
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::write(path, sweep_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Perturbed target frames for one condition. The clean condition returns
/// the targets untouched.
pub fn perturb(bundle: &ModelBundle, dataset: &[ImageTriplet], condition: &Condition, seed: u64, loss_cfg: &LossConfig) -> Result<Vec<Array>> {
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, t)| match *condition {
            Condition::Clean => Ok(t.target.clone()),
            Condition::Corruption(spec) => corrupt(&t.target, &spec, seed.wrapping_add(i as u64)),
            Condition::Pgd { epsilon } => {
                let cfg = AttackConfig::pgd(epsilon)?;
                Ok(pgd_attack(bundle, t, &cfg, loss_cfg)?.0.target)
            }
            Condition::Flip { direction, epsilon } => {
                let cfg = AttackConfig::flip(direction, epsilon)?;
                Ok(flip_attack(&bundle.depth, &t.target, &cfg, DepthRange::default())?.0)
            }
        })
        .collect()
}

/// Mean metrics of `model` on `images` against the dataset's ground truth.
/// With the original targets this is exactly [`crate::eval::evaluate`].
pub fn evaluate_images(model: &dyn DepthPredictor, images: &[Array], dataset: &[ImageTriplet], cfg: &EvalConfig) -> Result<MetricsReport> {
    let preds: Vec<Array> = images.par_iter().map(|x| model.predict(x)).collect::<Result<_>>()?;
    MetricsReport::mean(&evaluate_predictions(&preds, dataset, cfg)?)
}

/// Score `bundle` under every condition of `suite` (median-scaled RMSE).
pub fn robustness_sweep(bundle: &ModelBundle, dataset: &[ImageTriplet], suite: &SweepSuite, loss_cfg: &LossConfig) -> Result<Vec<SweepRow>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let cfg = EvalConfig::default();
    suite
        .conditions
        .iter()
        .map(|c| {
            if let Condition::Pgd { epsilon } | Condition::Flip { epsilon, .. } = *c {
                info!("{c}: {} iterations", pgd_iterations(epsilon));
            }
            let images = perturb(bundle, dataset, c, suite.seed, loss_cfg)?;
            let report = evaluate_images(&bundle.depth, &images, dataset, &cfg)?;
            info!("{c}: rmse {:.4}", report.rmse);
            Ok(SweepRow {
                condition: c.kind().into(),
                name: c.name().into(),
                epsilon: c.epsilon(),
                severity: c.severity(),
                mean_rmse: report.rmse,
                n_images: dataset.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_size() {
        let s = SweepSuite::full();
        assert_eq!(s.conditions.len(), 1 + 15 + 8 + 6);
        assert_eq!(s.conditions[0], Condition::Clean);
    }

    #[test]
    fn csv_layout() {
        let row = SweepRow { condition: "pgd".into(), name: "pgd".into(), epsilon: 0.25, severity: 0, mean_rmse: 1.5, n_images: 3 };
        assert_eq!(sweep_csv(&[row]), "condition,name,epsilon,severity,mean_rmse,n_images\npgd,pgd,0.25,0,1.5,3\n");
    }
}
