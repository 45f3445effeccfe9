//! Cross-entropy over virtual classes and the combined training objective.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{ensure, Error, Result};
use crate::fantasy::FantasySet;
use crate::tensor::Matrix;

/// Weights of the global and local contrastive terms and the temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.2, beta: 0.8, tau: 0.07 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.alpha >= 0.0 && self.alpha.is_finite(), InvalidConfig, "alpha must be non-negative, got {}", self.alpha);
        ensure!(self.beta >= 0.0 && self.beta.is_finite(), InvalidConfig, "beta must be non-negative, got {}", self.beta);
        ensure!(self.tau > 0.0 && self.tau.is_finite(), InvalidConfig, "tau must be positive, got {}", self.tau);
        Ok(())
    }
}

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the logits.
pub fn cross_entropy_with_grad(logits: &Matrix<f64>, labels: &[usize]) -> Result<(f64, Matrix<f64>)> {
    ensure!(logits.rows() == labels.len(), InvalidInput, "{} logit rows but {} labels", logits.rows(), labels.len());
    let n = logits.rows();
    let c = logits.cols();
    let mut grad = Matrix::zeros(n, c);
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, (row, &y)) in logits.iter_rows().zip(labels).enumerate() {
        ensure!(y < c, InvalidInput, "label {y} out of range for {c} classes");
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| libm::exp(z - max)).sum();
        let log_z = max + libm::log(sum);
        total += log_z - row[y];
        let g = grad.row_mut(i);
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = libm::exp(z - log_z) / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

/// `(1/M) Σ_m CE(logits_m, labels_m)`, each term a batch mean.
pub fn ce_fantasy_loss(logits_per_variant: &[Matrix<f64>], virtual_labels: &[Vec<usize>]) -> Result<f64> {
    ce_fantasy_loss_with_grad(logits_per_variant, virtual_labels).map(|(l, _)| l)
}

pub fn ce_fantasy_loss_with_grad(logits_per_variant: &[Matrix<f64>], virtual_labels: &[Vec<usize>]) -> Result<(f64, Vec<Matrix<f64>>)> {
    let m = logits_per_variant.len();
    ensure!(m >= 1, InvalidInput, "no fantasy variants given");
    ensure!(virtual_labels.len() == m, InvalidInput, "{} label rows for {m} variants", virtual_labels.len());
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(m);
    for (logits, labels) in logits_per_variant.iter().zip(virtual_labels) {
        let (l, mut g) = cross_entropy_with_grad(logits, labels)?;
        total += l;
        for v in g.as_mut_slice() {
            *v /= m as f64;
        }
        grads.push(g);
    }
    Ok((total / m as f64, grads))
}

/// `cls + α·global + β·local`.
pub fn total_loss(cls: f64, cont_global: f64, cont_local: f64, w: &LossWeights) -> Result<f64> {
    for v in [cls, cont_global, cont_local] {
        if !v.is_finite() {
            return Err(Error::Divergence { value: v, step: None });
        }
    }
    let total = cls + w.alpha * cont_global + w.beta * cont_local;
    if !total.is_finite() {
        return Err(Error::Divergence { value: total, step: None });
    }
    Ok(total)
}

/// Ablation switches: supervised contrast, fantasy, multi-crop, incremental
/// finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AblationToggles {
    pub scl: bool,
    pub fantasy: bool,
    pub multicrop: bool,
    pub finetune: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        Self { scl: true, fantasy: true, multicrop: true, finetune: true }
    }
}

/// Parameters after the toggles are applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAblation {
    pub weights: LossWeights,
    pub fantasy: FantasySet,
    pub n_local: usize,
    pub trainable_layers: Vec<String>,
}

impl AblationToggles {
    /// The CE baseline: everything off.
    pub const CE: AblationToggles = AblationToggles { scl: false, fantasy: false, multicrop: false, finetune: false };
    /// CE plus supervised contrast only.
    pub const CE_SCL: AblationToggles = AblationToggles { scl: true, fantasy: false, multicrop: false, finetune: false };
    pub const ALL: AblationToggles = AblationToggles { scl: true, fantasy: true, multicrop: true, finetune: true };

    /// Each toggle only touches its own parameters: `scl` zeroes α and β,
    /// `fantasy` shrinks the set to the identity, `multicrop` zeroes β and the
    /// local-crop count, `finetune` empties the trainable layers.
    pub fn resolve(&self, weights: LossWeights, fantasy: &FantasySet, n_local: usize, trainable_layers: &[String]) -> ResolvedAblation {
        let mut w = weights;
        if !self.scl {
            w.alpha = 0.0;
            w.beta = 0.0;
        }
        let mut n_local = n_local;
        if !self.multicrop {
            w.beta = 0.0;
            n_local = 0;
        }
        ResolvedAblation {
            weights: w,
            fantasy: if self.fantasy { fantasy.clone() } else { FantasySet::identity() },
            n_local,
            trainable_layers: if self.finetune { trainable_layers.to_vec() } else { Vec::new() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn uniform_logits_give_log_class_count() {
        let logits = Matrix::zeros(3, 120);
        let l = ce_fantasy_loss(&[logits.clone(), logits], &[vec![0, 5, 119], vec![1, 2, 3]]).unwrap();
        assert!((l - libm::log(120.0)).abs() < 1e-12);
        assert!((l - 4.7875).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_approach_zero() {
        let mut logits = Matrix::zeros(1, 4);
        logits.set(0, 2, 1e3);
        let l = ce_fantasy_loss(&[logits], &[vec![2]]).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let logits = Matrix::zeros(1, 4);
        assert!(matches!(ce_fantasy_loss(&[logits], &[vec![4]]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights { alpha: 0.2, beta: 0.8, tau: 0.07 };
        assert!((total_loss(1.0, 0.5, 0.25, &w).unwrap() - 1.3).abs() < 1e-12);
        let off = LossWeights { alpha: 0.0, beta: 0.0, ..w };
        assert_eq!(total_loss(1.7, 3.0, 9.0, &off).unwrap(), 1.7);
        let eq4 = LossWeights { beta: 0.0, ..w };
        assert!((total_loss(1.0, 2.0, 123.0, &eq4).unwrap() - 1.4).abs() < 1e-12);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, &w), Err(Error::Divergence { .. })));
        assert!(matches!(total_loss(1.0, f64::INFINITY, 0.0, &w), Err(Error::Divergence { .. })));
    }

    #[test]
    fn total_loss_is_linear_in_each_contrastive_term() {
        let w = LossWeights::default();
        let at = |g: f64, l: f64| total_loss(0.3, g, l, &w).unwrap();
        let (a, b, c) = (at(0.0, 1.0), at(1.0, 1.0), at(2.0, 1.0));
        assert!(((b - a) - w.alpha).abs() < 1e-12 && ((c - b) - w.alpha).abs() < 1e-12);
        let (a, b, c) = (at(1.0, 0.0), at(1.0, 1.0), at(1.0, 2.0));
        assert!(((b - a) - w.beta).abs() < 1e-12 && ((c - b) - w.beta).abs() < 1e-12);
    }

    #[test]
    fn ablation_ladder() {
        let w = LossWeights::default();
        let f = FantasySet::twelve_augmentations();
        let layers = vec!["block4".to_string(), "projector".to_string()];
        let ce = AblationToggles::CE.resolve(w, &f, 2, &layers);
        assert_eq!((ce.weights.alpha, ce.weights.beta, ce.fantasy.len(), ce.n_local), (0.0, 0.0, 1, 0));
        assert!(ce.trainable_layers.is_empty());

        let scl = AblationToggles::CE_SCL.resolve(w, &f, 2, &layers);
        assert_eq!((scl.weights.alpha, scl.weights.beta, scl.fantasy.len(), scl.n_local), (0.2, 0.0, 1, 0));

        let f_on = AblationToggles { fantasy: true, ..AblationToggles::CE_SCL }.resolve(w, &f, 2, &layers);
        assert_eq!((f_on.weights.alpha, f_on.weights.beta, f_on.fantasy.len(), f_on.n_local), (0.2, 0.0, 12, 0));

        let mc = AblationToggles { finetune: false, ..AblationToggles::ALL }.resolve(w, &f, 2, &layers);
        assert_eq!((mc.weights.alpha, mc.weights.beta, mc.fantasy.len(), mc.n_local), (0.2, 0.8, 12, 2));
        assert!(mc.trainable_layers.is_empty());

        let all = AblationToggles::ALL.resolve(w, &f, 2, &layers);
        assert_eq!(all.trainable_layers, layers);
        assert_eq!(all.weights, w);
    }
}
