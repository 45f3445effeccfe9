//! Class prototypes per session and fantasy variant.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Sample;
use crate::error::{ensure, Error, Result};
use crate::fantasy::FantasySet;
use crate::network::{Network, ParamStore};

/// `(session, class, variant)`, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrototypeKey {
    pub session: usize,
    pub class: usize,
    pub variant: usize,
}

/// Prototypes computed for one session, not yet added to a bank.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionPrototypes {
    pub session: usize,
    pub entries: BTreeMap<(usize, usize), Vec<f64>>,
    pub counts: BTreeMap<usize, usize>,
}

impl SessionPrototypes {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The extensible prototype classifier `W`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrototypeBank {
    num_transforms: usize,
    dim: usize,
    entries: BTreeMap<PrototypeKey, Vec<f64>>,
    counts: BTreeMap<usize, usize>,
}

impl PrototypeBank {
    pub fn new(num_transforms: usize, dim: usize) -> Self {
        Self { num_transforms, dim, entries: BTreeMap::new(), counts: BTreeMap::new() }
    }

    pub fn num_transforms(&self) -> usize {
        self.num_transforms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, session: usize, class: usize, variant: usize) -> Option<&[f64]> {
        self.entries.get(&PrototypeKey { session, class, variant }).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PrototypeKey, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Number of training samples averaged into `class`.
    pub fn count(&self, class: usize) -> Option<usize> {
        self.counts.get(&class).copied()
    }

    /// Sample counts per class.
    pub fn counts(&self) -> &BTreeMap<usize, usize> {
        &self.counts
    }

    /// Sessions present, ascending.
    pub fn sessions(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.entries.keys().map(|k| k.session).collect();
        s.dedup();
        s
    }

    /// Distinct `(session, class)` pairs in tie-break order.
    pub fn classes(&self) -> Vec<(usize, usize)> {
        let mut c: Vec<(usize, usize)> = self.entries.keys().map(|k| (k.session, k.class)).collect();
        c.dedup();
        c
    }

    /// Conditional subset `W_m`.
    pub fn subset(&self, variant: usize) -> Vec<((usize, usize), &[f64])> {
        self.entries.iter().filter(|(k, _)| k.variant == variant).map(|(k, v)| ((k.session, k.class), v.as_slice())).collect()
    }

    /// Bank restricted to sessions `≤ t`.
    pub fn up_to_session(&self, t: usize) -> Self {
        let entries: BTreeMap<PrototypeKey, Vec<f64>> =
            self.entries.iter().filter(|(k, _)| k.session <= t).map(|(k, v)| (*k, v.clone())).collect();
        let counts = self.counts.iter().filter(|(c, _)| entries.keys().any(|k| k.class == **c)).map(|(c, n)| (*c, *n)).collect();
        Self { num_transforms: self.num_transforms, dim: self.dim, entries, counts }
    }

    /// Adds the prototypes of a new session. An empty set is a no-op.
    pub fn extend(&mut self, new: SessionPrototypes) -> Result<()> {
        if new.is_empty() {
            return Ok(());
        }
        ensure!(!self.sessions().contains(&new.session), InvalidState, "session {} is already in the prototype bank", new.session);
        self.check_entries(&new)?;
        let existing: Vec<usize> = self.classes().into_iter().map(|(_, c)| c).collect();
        for &(class, _) in new.entries.keys() {
            ensure!(!existing.contains(&class), InvalidState, "class {class} already has prototypes");
        }
        for ((class, variant), v) in new.entries {
            self.entries.insert(PrototypeKey { session: new.session, class, variant }, v);
        }
        self.counts.extend(new.counts);
        Ok(())
    }

    /// Overwrites the prototypes of a session already present.
    pub fn replace_session(&mut self, new: SessionPrototypes) -> Result<()> {
        self.check_entries(&new)?;
        let old: Vec<(usize, usize)> = self.entries.keys().filter(|k| k.session == new.session).map(|k| (k.class, k.variant)).collect();
        let mut incoming: Vec<(usize, usize)> = new.entries.keys().copied().collect();
        incoming.sort_unstable();
        ensure!(old == incoming, InvalidState, "replacement for session {} does not match its existing entries", new.session);
        for ((class, variant), v) in new.entries {
            self.entries.insert(PrototypeKey { session: new.session, class, variant }, v);
        }
        self.counts.extend(new.counts);
        Ok(())
    }

    fn check_entries(&self, new: &SessionPrototypes) -> Result<()> {
        for (&(class, variant), v) in &new.entries {
            ensure!(variant < self.num_transforms, InvalidInput, "variant {variant} out of range for {} transforms", self.num_transforms);
            ensure!(v.len() == self.dim, InvalidInput, "prototype for class {class} has dimension {}, bank stores {}", v.len(), self.dim);
        }
        let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
        for &(class, _) in new.entries.keys() {
            *per_class.entry(class).or_default() += 1;
        }
        ensure!(
            per_class.values().all(|&n| n == self.num_transforms),
            InvalidInput,
            "every class needs exactly {} variant prototypes",
            self.num_transforms
        );
        Ok(())
    }

    /// Restores a bank from its entries (checkpoint loading).
    pub fn from_entries(
        num_transforms: usize,
        dim: usize,
        entries: Vec<(PrototypeKey, Vec<f64>)>,
        counts: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        let mut bank = Self::new(num_transforms, dim);
        for (k, v) in entries {
            ensure!(v.len() == dim && k.variant < num_transforms, InvalidData, "malformed prototype entry {k:?}");
            if bank.entries.insert(k, v).is_some() {
                return Err(Error::InvalidData(alloc::format!("duplicate prototype entry {k:?}")));
            }
        }
        bank.counts = counts;
        Ok(bank)
    }
}

/// `bank` grown by `new`.
pub fn extend_classifier(mut bank: PrototypeBank, new: SessionPrototypes) -> Result<PrototypeBank> {
    bank.extend(new)?;
    Ok(bank)
}

/// Mean feature of every class in `classes` under every transform of
/// `fantasy`, using the deterministic evaluation transform only.
pub fn compute_prototypes(
    network: &Network,
    params: &ParamStore,
    samples: &[&Sample],
    classes: &[usize],
    session: usize,
    fantasy: &FantasySet,
    normalize_features: bool,
) -> Result<SessionPrototypes> {
    let d = network.feature_dim();
    let mut by_class: BTreeMap<usize, Vec<&Sample>> = classes.iter().map(|&c| (c, Vec::new())).collect();
    for s in samples {
        if let Some(v) = by_class.get_mut(&s.label) {
            v.push(s);
        }
    }
    let mut out = SessionPrototypes { session, ..Default::default() };
    for (&class, members) in &by_class {
        ensure!(!members.is_empty(), InvalidData, "class {class} has no samples to build a prototype from");
        out.counts.insert(class, members.len());
        for (m, t) in fantasy.transforms().iter().enumerate() {
            let images = members.iter().map(|s| t.apply(&s.image)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&crate::Image> = images.iter().collect();
            let feats = network.encode_images(params, &refs, 64)?;
            let mut mean = vec![0.0f64; d];
            for row in feats.iter_rows() {
                let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                let scale = if normalize_features {
                    let n = libm::sqrt(crate::tensor::norm_sq(&row));
                    if n > 0.0 {
                        1.0 / n
                    } else {
                        0.0
                    }
                } else {
                    1.0
                };
                for (a, v) in mean.iter_mut().zip(&row) {
                    *a += v * scale;
                }
            }
            for a in &mut mean {
                *a /= members.len() as f64;
            }
            out.entries.insert((class, m), mean);
        }
    }
    Ok(out)
}
