//! Nearest-class-mean and aggregated prototype inference.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Error, Result};
use crate::fantasy::FantasySet;
use crate::image::Image;
use crate::network::{Network, ParamStore};
use crate::prototypes::PrototypeBank;
use crate::tensor::{cosine, Matrix};

/// Winning class with its aggregate score and per-variant breakdown.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub class: usize,
    pub session: usize,
    pub score: f64,
    pub per_variant: Vec<f64>,
}

/// Argmax over the `m = 0` prototypes of cosine similarity to `feature`.
pub fn ncm_predict(feature: &[f64], bank: &PrototypeBank) -> Result<Prediction> {
    let subset = bank.subset(0);
    ensure!(!subset.is_empty(), InvalidState, "prototype bank is empty");
    let mut best: Option<Prediction> = None;
    for ((t, c), w) in subset {
        let s = cosine(feature, w)?;
        if best.as_ref().map_or(true, |b| s > b.score) {
            best = Some(Prediction { class: c, session: t, score: s, per_variant: vec![s] });
        }
    }
    Ok(best.expect("non-empty subset"))
}

/// `argmax_{c,t} Σ_m sim(f(x_m), w_{c,m}^t)` given the `M` variant features.
pub fn aggregated_predict_features(features: &[&[f64]], bank: &PrototypeBank) -> Result<Prediction> {
    let m = bank.num_transforms();
    ensure!(features.len() == m, InvalidInput, "{} variant features for a bank with {m} transforms", features.len());
    let classes = bank.classes();
    ensure!(!classes.is_empty(), InvalidState, "prototype bank is empty");
    let mut best: Option<Prediction> = None;
    let mut per = vec![0.0; m];
    for (t, c) in classes {
        let mut score = 0.0;
        for (v, f) in features.iter().enumerate() {
            let w = bank
                .get(t, c, v)
                .ok_or_else(|| Error::InvalidState(alloc::format!("missing prototype for session {t}, class {c}, variant {v}")))?;
            per[v] = cosine(f, w)?;
            score += per[v];
        }
        if best.as_ref().map_or(true, |b| score > b.score) {
            best = Some(Prediction { class: c, session: t, score, per_variant: per.clone() });
        }
    }
    Ok(best.expect("non-empty bank"))
}

/// Extracts `f(x_m)` for every image and transform: the result holds one
/// `n × d` matrix per variant.
pub fn variant_features(network: &Network, params: &ParamStore, images: &[&Image], fantasy: &FantasySet) -> Result<Vec<Matrix<f64>>> {
    fantasy
        .transforms()
        .iter()
        .map(|t| {
            let transformed = images.iter().map(|x| t.apply(x)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Image> = transformed.iter().collect();
            Ok(network.encode_images(params, &refs, 64)?.to_f64())
        })
        .collect()
}

/// Aggregated prediction for one image.
pub fn aggregated_predict(
    image: &Image,
    fantasy: &FantasySet,
    network: &Network,
    params: &ParamStore,
    bank: &PrototypeBank,
) -> Result<Prediction> {
    let mut p = predict_batch(&[image], fantasy, network, params, bank)?;
    Ok(p.remove(0))
}

/// Aggregated predictions for a list of images.
pub fn predict_batch(
    images: &[&Image],
    fantasy: &FantasySet,
    network: &Network,
    params: &ParamStore,
    bank: &PrototypeBank,
) -> Result<Vec<Prediction>> {
    ensure!(
        fantasy.len() == bank.num_transforms(),
        InvalidInput,
        "fantasy set has {} transforms, bank {}",
        fantasy.len(),
        bank.num_transforms()
    );
    let feats = variant_features(network, params, images, fantasy)?;
    (0..images.len())
        .map(|i| {
            let rows: Vec<&[f64]> = feats.iter().map(|f| f.row(i)).collect();
            aggregated_predict_features(&rows, bank)
        })
        .collect()
}

/// Counts of (true, predicted) pairs.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Matrix<u64>> {
    ensure!(predictions.len() == labels.len(), InvalidInput, "{} predictions for {} labels", predictions.len(), labels.len());
    let mut m = Matrix::zeros(num_classes, num_classes);
    for (&p, &y) in predictions.iter().zip(labels) {
        ensure!(y < num_classes && p < num_classes, InvalidInput, "label pair ({y}, {p}) out of range for {num_classes} classes");
        m.set(y, p, m.get(y, p) + 1);
    }
    Ok(m)
}

/// Percentage of matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    ensure!(predictions.len() == labels.len(), InvalidInput, "{} predictions for {} labels", predictions.len(), labels.len());
    ensure!(!labels.is_empty(), InvalidInput, "accuracy of an empty set");
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}
