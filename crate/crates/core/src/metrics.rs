//! Class-separation diagnostics and session accuracy tables.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{ensure, Error, Result};
use crate::tensor::{cosine_distance, Matrix};

/// `1 − sim(p_a, p_b)` over all unordered prototype pairs, in input order.
pub fn inter_class_distance(prototypes: &[&[f64]]) -> Result<Vec<f64>> {
    ensure!(prototypes.len() >= 2, InvalidInput, "need at least two prototypes, got {}", prototypes.len());
    let mut out = Vec::with_capacity(prototypes.len() * (prototypes.len() - 1) / 2);
    for (i, a) in prototypes.iter().enumerate() {
        for b in &prototypes[i + 1..] {
            out.push(cosine_distance(a, b)?);
        }
    }
    Ok(out)
}

/// Mean cosine distance of each class's samples to its own prototype.
/// Classes without samples are left out.
pub fn intra_class_distance(
    embeddings: &Matrix<f64>,
    labels: &[usize],
    prototypes: &BTreeMap<usize, Vec<f64>>,
) -> Result<BTreeMap<usize, f64>> {
    ensure!(embeddings.rows() == labels.len(), InvalidInput, "{} embeddings for {} labels", embeddings.rows(), labels.len());
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        let p = prototypes.get(&y).ok_or_else(|| Error::InvalidInput(alloc::format!("class {y} has no prototype")))?;
        let e = sums.entry(y).or_insert((0.0, 0));
        e.0 += cosine_distance(row, p)?;
        e.1 += 1;
    }
    for c in prototypes.keys() {
        if !sums.contains_key(c) {
            log::warn!("class {c} has no samples; excluded from intra-class distance");
        }
    }
    Ok(sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect())
}

/// Sums of pairwise cosine distances between every pair of classes, with
/// sample counts.
struct PairSums {
    classes: Vec<usize>,
    counts: Vec<usize>,
    sums: Vec<f64>,
}

impl PairSums {
    fn new(embeddings: &Matrix<f64>, labels: &[usize], subset: &[usize]) -> Result<Self> {
        ensure!(embeddings.rows() == labels.len(), InvalidInput, "{} embeddings for {} labels", embeddings.rows(), labels.len());
        let mut classes = subset.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let k = classes.len();
        let members: Vec<(usize, &[f64])> = embeddings.iter_rows().zip(labels).filter_map(|(r, y)| index.get(y).map(|&i| (i, r))).collect();
        let mut counts = vec![0usize; k];
        for &(i, _) in &members {
            counts[i] += 1;
        }
        for (c, &n) in classes.iter().zip(&counts) {
            ensure!(n > 0, InvalidInput, "class {c} has no samples");
        }
        let mut sums = vec![0.0; k * k];
        for (a, &(ia, ra)) in members.iter().enumerate() {
            for &(ib, rb) in &members[a + 1..] {
                let d = cosine_distance(ra, rb)?;
                sums[ia * k + ib] += d;
                if ia != ib {
                    sums[ib * k + ia] += d;
                } else {
                    sums[ia * k + ia] += d;
                }
            }
        }
        Ok(Self { classes, counts, sums })
    }

    fn index_of(&self, c: usize) -> usize {
        self.classes.binary_search(&c).expect("class in subset")
    }

    fn mean(&self, a: usize, b: usize) -> f64 {
        let k = self.classes.len();
        self.sums[a * k + b] / (self.counts[a] * self.counts[b]) as f64
    }

    fn within(&self, classes: &[usize]) -> f64 {
        classes.iter().map(|&c| self.index_of(c)).map(|i| self.mean(i, i)).sum::<f64>() / classes.len() as f64
    }

    fn total(&self, left: &[usize], right: &[usize]) -> f64 {
        let mut s = 0.0;
        for &a in left {
            for &b in right {
                s += self.mean(self.index_of(a), self.index_of(b));
            }
        }
        s / (left.len() * right.len()) as f64
    }
}

fn ratio(within: f64, total: f64) -> Result<f64> {
    if total <= 0.0 {
        return Err(Error::UndefinedMetric(String::from("average total distance is zero")));
    }
    Ok(1.0 - within / total)
}

fn sorted_unique(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// `R² = 1 − d̄_within / d̄_total` over the classes in `class_subset`.
pub fn r_squared(embeddings: &Matrix<f64>, labels: &[usize], class_subset: &[usize]) -> Result<f64> {
    let classes = sorted_unique(class_subset);
    ensure!(!classes.is_empty(), InvalidInput, "empty class subset");
    let s = PairSums::new(embeddings, labels, &classes)?;
    ratio(s.within(&classes), s.total(&classes, &classes))
}

/// Mutual separation: `d̄_within` over all classes, `d̄_total` over
/// (base, novel) class pairs only.
pub fn mutual_r_squared(embeddings: &Matrix<f64>, labels: &[usize], base_ids: &[usize], novel_ids: &[usize]) -> Result<f64> {
    let base = sorted_unique(base_ids);
    let novel = sorted_unique(novel_ids);
    ensure!(!base.is_empty() && !novel.is_empty(), InvalidInput, "mutual R² needs base and novel classes");
    ensure!(base.iter().all(|c| novel.binary_search(c).is_err()), InvalidInput, "base and novel classes overlap");
    let all: Vec<usize> = sorted_unique(&[base.as_slice(), novel.as_slice()].concat());
    let s = PairSums::new(embeddings, labels, &all)?;
    ratio(s.within(&all), s.total(&base, &novel))
}

/// Sorted values with their empirical cumulative fraction.
pub fn cdf_export(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    ensure!(!values.is_empty(), InvalidInput, "CDF of an empty set");
    ensure!(values.iter().all(|v| !v.is_nan()), InvalidInput, "CDF input contains NaN");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect())
}

/// Per-session accuracies (percent) and the last-session gain over a
/// baseline run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionResult {
    pub accuracies: Vec<f64>,
    pub baseline: Vec<f64>,
    pub delta_last: f64,
}

/// Rounds to two decimals, the precision accuracies are reported at.
pub fn round2(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}

pub fn session_table(accuracies: &[f64], baseline: &[f64]) -> Result<SessionResult> {
    ensure!(!accuracies.is_empty(), InvalidInput, "no sessions");
    ensure!(accuracies.len() == baseline.len(), InvalidInput, "run has {} sessions, baseline {}", accuracies.len(), baseline.len());
    for &a in accuracies.iter().chain(baseline) {
        ensure!((0.0..=100.0).contains(&a), InvalidInput, "accuracy {a} outside [0, 100]");
    }
    let delta_last = round2(accuracies[accuracies.len() - 1] - baseline[baseline.len() - 1]);
    Ok(SessionResult { accuracies: accuracies.to_vec(), baseline: baseline.to_vec(), delta_last })
}

impl SessionResult {
    /// One-line rendering: accuracies then signed `Δ_last`.
    pub fn format_row(&self, name: &str) -> String {
        let mut s = String::from(name);
        for a in &self.accuracies {
            s.push_str(&alloc::format!(" {a:.2}"));
        }
        s.push_str(&alloc::format!(" {:+.2}", self.delta_last));
        s
    }
}

/// Options for [`separation_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationOptions {
    /// Uniformly subsample embeddings above this many points.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        Self { max_points: 10_000, seed: 0 }
    }
}

/// Distances and R² values for one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeparationReport {
    pub d_inter: Vec<f64>,
    pub d_intra: Vec<f64>,
    pub r2_base: f64,
    pub r2_novel: Option<f64>,
    pub r2_mutual: Option<f64>,
    pub base_ids: Vec<usize>,
    pub novel_ids: Vec<usize>,
    pub subsampled: bool,
}

/// Computes every separation metric. `prototypes` should hold the base
/// classes for `d_inter`/`d_intra`; R² values use `embeddings` directly.
pub fn separation_report(
    embeddings: &Matrix<f64>,
    labels: &[usize],
    prototypes: &BTreeMap<usize, Vec<f64>>,
    base_ids: &[usize],
    novel_ids: &[usize],
    opts: SeparationOptions,
) -> Result<SeparationReport> {
    let base = sorted_unique(base_ids);
    let novel = sorted_unique(novel_ids);
    let (emb, lab, subsampled) = if embeddings.rows() > opts.max_points {
        let mut idx: Vec<usize> = (0..embeddings.rows()).collect();
        idx.shuffle(&mut crate::rng::stream(opts.seed, &[crate::rng::tag::SUBSAMPLE]));
        idx.truncate(opts.max_points);
        idx.sort_unstable();
        (embeddings.select_rows(&idx), idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), true)
    } else {
        (embeddings.clone(), labels.to_vec(), false)
    };
    let base_protos: Vec<&[f64]> = base.iter().filter_map(|c| prototypes.get(c).map(Vec::as_slice)).collect();
    let d_inter = if base_protos.len() >= 2 { inter_class_distance(&base_protos)? } else { Vec::new() };
    let base_map: BTreeMap<usize, Vec<f64>> = base.iter().filter_map(|c| prototypes.get(c).map(|p| (*c, p.clone()))).collect();
    let (base_emb, base_lab): (Vec<&[f64]>, Vec<usize>) =
        emb.iter_rows().zip(&lab).filter(|(_, y)| base_map.contains_key(y)).map(|(r, &y)| (r, y)).unzip();
    let d_intra = if base_emb.is_empty() {
        Vec::new()
    } else {
        intra_class_distance(&Matrix::from_rows(&base_emb)?, &base_lab, &base_map)?.into_values().collect()
    };
    let present = |c: &usize| lab.contains(c);
    let base_present: Vec<usize> = base.iter().copied().filter(present).collect();
    let novel_present: Vec<usize> = novel.iter().copied().filter(present).collect();
    let r2_base = r_squared(&emb, &lab, &base_present)?;
    let (r2_novel, r2_mutual) = if novel_present.is_empty() {
        (None, None)
    } else {
        (Some(r_squared(&emb, &lab, &novel_present)?), Some(mutual_r_squared(&emb, &lab, &base_present, &novel_present)?))
    };
    Ok(SeparationReport { d_inter, d_intra, r2_base, r2_novel, r2_mutual, base_ids: base, novel_ids: novel, subsampled })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inter_distance_examples() {
        let d = inter_class_distance(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
        assert_eq!(d[2], 2.0);
        assert!(matches!(inter_class_distance(&[&[1.0, 0.0], &[0.0, 0.0]]), Err(Error::UndefinedSimilarity)));
    }

    #[test]
    fn intra_distance_examples() {
        let protos: BTreeMap<usize, Vec<f64>> = [(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])].into_iter().collect();
        let emb = Matrix::from_rows(&[[2.0, 0.0], [3.0, 0.0], [1.0, 0.0]]).unwrap();
        let d = intra_class_distance(&emb, &[0, 0, 1], &protos).unwrap();
        assert_eq!(d[&0], 0.0);
        assert_eq!(d[&1], 1.0);
    }

    #[test]
    fn zero_variance_clusters() {
        let emb = Matrix::from_rows(&[[1.0, 0.2, 0.0], [1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.0, 1.0, 0.3], [0.1, 0.0, 1.0]]).unwrap();
        assert_eq!(r_squared(&emb, &[0, 0, 1, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(mutual_r_squared(&emb, &[0, 0, 1, 1, 2], &[0, 1], &[2]).unwrap(), 1.0);
    }

    #[test]
    fn collinear_embeddings_are_undefined() {
        let emb = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        assert!(matches!(r_squared(&emb, &[0, 1], &[0, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mutual_requires_both_sides() {
        let emb = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(mutual_r_squared(&emb, &[0, 1], &[], &[1]).is_err());
        assert!(mutual_r_squared(&emb, &[0, 1], &[0], &[0]).is_err());
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf_export(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
        let c = cdf_export(&[3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75), (4.0, 1.0)]);
        assert!(cdf_export(&[]).is_err());
    }

    #[test]
    fn session_table_examples() {
        let r = session_table(&[70.0, 62.50], &[70.0, 8.47]).unwrap();
        assert_eq!(r.delta_last, 54.03);
        assert_eq!(session_table(&[50.0, 40.0], &[50.0, 40.0]).unwrap().delta_last, 0.0);
        assert!(session_table(&[1.0], &[1.0, 2.0]).is_err());
    }
}
