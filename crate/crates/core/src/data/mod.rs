//! Samples, FSCIL session schedules and view generation.

mod augment;
mod synthetic;

pub use augment::{make_views, AugConfig, ColorJitter, CropRegion, LocalView, View, ViewBundle};
pub use synthetic::{synthetic_dataset, synthetic_split, Split, SyntheticConfig};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{ensure, Error, Result};
use crate::image::Image;

/// A labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Shots {
    /// Every available training sample (base session).
    All,
    Exactly(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionSpec {
    pub index: usize,
    pub class_ids: Vec<usize>,
    pub shots: Shots,
}

impl SessionSpec {
    pub fn ways(&self) -> usize {
        self.class_ids.len()
    }
}

/// Class counts of an FSCIL benchmark: a base session followed by
/// `incremental_sessions` sessions of `ways`-way `shots`-shot data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionSchedule {
    pub base_classes: usize,
    pub incremental_sessions: usize,
    pub ways: usize,
    pub shots: usize,
    pub resolution: usize,
}

impl SessionSchedule {
    pub fn total_classes(&self) -> usize {
        self.base_classes + self.incremental_sessions * self.ways
    }

    pub fn num_sessions(&self) -> usize {
        self.incremental_sessions + 1
    }

    /// Class ids are assigned contiguously: base classes first, then each
    /// incremental session in order.
    pub fn sessions(&self) -> Vec<SessionSpec> {
        let mut out = Vec::with_capacity(self.num_sessions());
        out.push(SessionSpec { index: 0, class_ids: (0..self.base_classes).collect(), shots: Shots::All });
        for t in 1..=self.incremental_sessions {
            let start = self.base_classes + (t - 1) * self.ways;
            out.push(SessionSpec { index: t, class_ids: (start..start + self.ways).collect(), shots: Shots::Exactly(self.shots) });
        }
        out
    }

    pub fn session_of_class(&self, class: usize) -> Option<usize> {
        if class < self.base_classes {
            Some(0)
        } else if class < self.total_classes() {
            Some(1 + (class - self.base_classes) / self.ways)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.base_classes >= 1, InvalidConfig, "at least one base class is required");
        ensure!(self.incremental_sessions == 0 || self.ways >= 1, InvalidConfig, "incremental sessions need ways >= 1");
        ensure!(self.incremental_sessions == 0 || self.shots >= 1, InvalidConfig, "incremental sessions need shots >= 1");
        ensure!(self.resolution >= 1, InvalidConfig, "resolution must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Benchmark {
    Cifar100,
    MiniImagenet,
    Cub200,
    Synthetic,
}

impl Benchmark {
    /// Published schedule for the real benchmarks; the desk-scale default for
    /// the synthetic one.
    pub fn default_schedule(self) -> SessionSchedule {
        match self {
            Benchmark::Cifar100 => SessionSchedule { base_classes: 60, incremental_sessions: 8, ways: 5, shots: 5, resolution: 32 },
            Benchmark::MiniImagenet => SessionSchedule { base_classes: 60, incremental_sessions: 8, ways: 5, shots: 5, resolution: 84 },
            Benchmark::Cub200 => SessionSchedule { base_classes: 100, incremental_sessions: 10, ways: 10, shots: 5, resolution: 224 },
            Benchmark::Synthetic => SessionSchedule { base_classes: 10, incremental_sessions: 2, ways: 2, shots: 5, resolution: 16 },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Cifar100 => "cifar100",
            Benchmark::MiniImagenet => "mini_imagenet",
            Benchmark::Cub200 => "cub200",
            Benchmark::Synthetic => "synthetic",
        }
    }
}

/// Training and test data partitioned into sessions.
#[derive(Debug, Clone)]
pub struct FscilDataset {
    pub schedule: SessionSchedule,
    pub sessions: Vec<SessionSpec>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Indices into `train` used by each session.
    pub session_train: Vec<Vec<usize>>,
}

impl FscilDataset {
    pub fn session_samples(&self, t: usize) -> Vec<Sample> {
        self.session_train[t].iter().map(|&i| self.train[i].clone()).collect()
    }

    /// Classes encountered up to and including session `t`.
    pub fn seen_classes(&self, t: usize) -> Vec<usize> {
        self.sessions[..=t].iter().flat_map(|s| s.class_ids.iter().copied()).collect()
    }

    /// Test samples of every class seen up to session `t`, in dataset order.
    pub fn test_indices_up_to(&self, t: usize) -> Vec<usize> {
        let limit = self.sessions[..=t].iter().map(|s| s.class_ids.len()).sum::<usize>();
        self.test.iter().enumerate().filter(|(_, s)| s.label < limit).map(|(i, _)| i).collect()
    }
}

/// Partitions labelled train/test sets into sessions following `schedule`.
///
/// The base session takes every training sample of the base classes; an
/// incremental class keeps its first `shots` samples in dataset order, unless
/// `shot_indices` lists explicit train indices for that session.
pub fn build_sessions(
    schedule: SessionSchedule,
    train: Vec<Sample>,
    test: Vec<Sample>,
    shot_indices: Option<&[Vec<usize>]>,
) -> Result<FscilDataset> {
    schedule.validate()?;
    let total = schedule.total_classes();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in train.iter().enumerate() {
        ensure!(s.label < total, InvalidData, "train sample {i} has label {} outside the {total} declared classes", s.label);
        by_class.entry(s.label).or_default().push(i);
    }
    for (i, s) in test.iter().enumerate() {
        ensure!(s.label < total, InvalidData, "test sample {i} has label {} outside the {total} declared classes", s.label);
    }
    let sessions = schedule.sessions();
    let mut session_train = Vec::with_capacity(sessions.len());
    for spec in &sessions {
        let mut idx = Vec::new();
        match spec.shots {
            Shots::All => {
                for c in &spec.class_ids {
                    let members = by_class.get(c).map(Vec::as_slice).unwrap_or(&[]);
                    ensure!(!members.is_empty(), InvalidData, "base class {c} has no training samples");
                    idx.extend_from_slice(members);
                }
                idx.sort_unstable();
            }
            Shots::Exactly(k) => {
                if let Some(explicit) = shot_indices.and_then(|s| s.get(spec.index - 1)) {
                    for &i in explicit {
                        let s = train.get(i).ok_or_else(|| Error::InvalidData(format!("shot index {i} out of range")))?;
                        ensure!(
                            spec.class_ids.contains(&s.label),
                            InvalidData,
                            "shot index {i} (class {}) does not belong to session {}",
                            s.label,
                            spec.index
                        );
                    }
                    for c in &spec.class_ids {
                        let n = explicit.iter().filter(|&&i| train[i].label == *c).count();
                        ensure!(n == k, InvalidData, "class {c} has {n} listed shots, expected {k}");
                    }
                    idx.extend_from_slice(explicit);
                } else {
                    for c in &spec.class_ids {
                        let members = by_class.get(c).map(Vec::as_slice).unwrap_or(&[]);
                        ensure!(members.len() >= k, InvalidData, "class {c} has {} training samples, fewer than {k} shots", members.len());
                        idx.extend_from_slice(&members[..k]);
                    }
                }
            }
        }
        session_train.push(idx);
    }
    Ok(FscilDataset { schedule, sessions, train, test, session_train })
}
