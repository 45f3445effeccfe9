//! Virtual classes built from a fixed set of image transforms.
//!
//! A [`FantasySet`] of size `M` turns every class `y` into `M` virtual classes
//! `y·M + m`, one per transform. Index `m = 0` is always the identity.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::data::Sample;
use crate::error::{ensure, Error, Result};
use crate::image::Image;

/// Counter-clockwise rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rotation {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::Deg0, Rotation::Deg90, Rotation::Deg180, Rotation::Deg270];

    pub fn degrees(self) -> u16 {
        self.quarter_turns() as u16 * 90
    }

    pub fn quarter_turns(self) -> u8 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 1,
            Rotation::Deg180 => 2,
            Rotation::Deg270 => 3,
        }
    }

    pub fn from_degrees(deg: u16) -> Result<Self> {
        match deg {
            0 => Ok(Rotation::Deg0),
            90 => Ok(Rotation::Deg90),
            180 => Ok(Rotation::Deg180),
            270 => Ok(Rotation::Deg270),
            _ => Err(Error::InvalidConfig(format!("rotation must be 0, 90, 180 or 270 degrees, got {deg}"))),
        }
    }

    pub fn inverse(self) -> Self {
        Rotation::ALL[((4 - self.quarter_turns()) % 4) as usize]
    }
}

/// Cyclic channel permutation. `Gbr` puts input G in output channel 0, B in 1
/// and R in 2; `Brg` is its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelPermutation {
    Rgb,
    Gbr,
    Brg,
}

impl ChannelPermutation {
    pub const ALL: [ChannelPermutation; 3] = [ChannelPermutation::Rgb, ChannelPermutation::Gbr, ChannelPermutation::Brg];

    /// Source channel for each output channel.
    pub fn source(self) -> [usize; 3] {
        match self {
            ChannelPermutation::Rgb => [0, 1, 2],
            ChannelPermutation::Gbr => [1, 2, 0],
            ChannelPermutation::Brg => [2, 0, 1],
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            ChannelPermutation::Rgb => ChannelPermutation::Rgb,
            ChannelPermutation::Gbr => ChannelPermutation::Brg,
            ChannelPermutation::Brg => ChannelPermutation::Gbr,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelPermutation::Rgb => "RGB",
            ChannelPermutation::Gbr => "GBR",
            ChannelPermutation::Brg => "BRG",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "RGB" | "rgb" => Ok(ChannelPermutation::Rgb),
            "GBR" | "gbr" => Ok(ChannelPermutation::Gbr),
            "BRG" | "brg" => Ok(ChannelPermutation::Brg),
            _ => Err(Error::InvalidConfig(format!("unknown channel permutation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransformDescriptor {
    pub rotation: Rotation,
    pub permutation: ChannelPermutation,
}

impl TransformDescriptor {
    pub const IDENTITY: TransformDescriptor = TransformDescriptor { rotation: Rotation::Deg0, permutation: ChannelPermutation::Rgb };

    pub fn new(rotation: Rotation, permutation: ChannelPermutation) -> Self {
        Self { rotation, permutation }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Rotation first, then channel permutation. The two commute.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        if self.is_identity() {
            return Ok(image.clone());
        }
        let rotated = image.rotate_ccw(self.rotation.quarter_turns())?;
        if self.permutation == ChannelPermutation::Rgb {
            return Ok(rotated);
        }
        ensure!(image.channels() == 3, InvalidInput, "channel permutation needs 3 channels, got {}", image.channels());
        rotated.permute_channels(&self.permutation.source())
    }

    pub fn inverse(&self) -> Self {
        Self { rotation: self.rotation.inverse(), permutation: self.permutation.inverse() }
    }
}

impl fmt::Display for TransformDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rot{}/{}", self.rotation.degrees(), self.permutation.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FantasyKind {
    TwoFoldRotations,
    FourFoldRotations,
    TwelveAugmentations,
    Custom,
}

impl FantasyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FantasyKind::TwoFoldRotations => "two_fold_rotations",
            FantasyKind::FourFoldRotations => "four_fold_rotations",
            FantasyKind::TwelveAugmentations => "twelve_augmentations",
            FantasyKind::Custom => "custom",
        }
    }
}

/// Ordered transform list; element 0 is the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FantasySet {
    kind: FantasyKind,
    transforms: Vec<TransformDescriptor>,
}

impl FantasySet {
    /// Identity only (`M = 1`), i.e. fantasy switched off.
    pub fn identity() -> Self {
        Self { kind: FantasyKind::Custom, transforms: alloc::vec![TransformDescriptor::IDENTITY] }
    }

    /// 0° and 180°.
    pub fn two_fold_rotations() -> Self {
        let transforms =
            [Rotation::Deg0, Rotation::Deg180].into_iter().map(|r| TransformDescriptor::new(r, ChannelPermutation::Rgb)).collect();
        Self { kind: FantasyKind::TwoFoldRotations, transforms }
    }

    pub fn four_fold_rotations() -> Self {
        let transforms = Rotation::ALL.into_iter().map(|r| TransformDescriptor::new(r, ChannelPermutation::Rgb)).collect();
        Self { kind: FantasyKind::FourFoldRotations, transforms }
    }

    /// All rotations × {RGB, GBR, BRG}, rotation-major.
    pub fn twelve_augmentations() -> Self {
        let transforms = Rotation::ALL
            .into_iter()
            .flat_map(|r| ChannelPermutation::ALL.into_iter().map(move |p| TransformDescriptor::new(r, p)))
            .collect();
        Self { kind: FantasyKind::TwelveAugmentations, transforms }
    }

    pub fn custom(transforms: Vec<TransformDescriptor>) -> Result<Self> {
        ensure!(!transforms.is_empty(), InvalidConfig, "fantasy set must contain at least the identity transform");
        ensure!(transforms[0].is_identity(), InvalidConfig, "first fantasy transform must be the identity, got {}", transforms[0]);
        for (i, t) in transforms.iter().enumerate() {
            ensure!(!transforms[..i].contains(t), InvalidConfig, "duplicate fantasy transform {t}");
        }
        Ok(Self { kind: FantasyKind::Custom, transforms })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "two_fold_rotations" => Ok(Self::two_fold_rotations()),
            "four_fold_rotations" => Ok(Self::four_fold_rotations()),
            "twelve_augmentations" => Ok(Self::twelve_augmentations()),
            "identity" | "none" => Ok(Self::identity()),
            _ => Err(Error::InvalidConfig(format!("unknown fantasy set {name:?}"))),
        }
    }

    pub fn kind(&self) -> FantasyKind {
        self.kind
    }

    /// Name used in configs and reports.
    pub fn name(&self) -> &'static str {
        if self.kind == FantasyKind::Custom && self.transforms.len() == 1 {
            "identity"
        } else {
            self.kind.as_str()
        }
    }

    /// `M`.
    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn transforms(&self) -> &[TransformDescriptor] {
        &self.transforms
    }

    pub fn has_rotation(&self) -> bool {
        self.transforms.iter().any(|t| t.rotation != Rotation::Deg0)
    }

    /// Applies every transform to one image, in order.
    pub fn apply_all(&self, image: &Image) -> Result<Vec<Image>> {
        ensure!(!self.is_empty(), InvalidConfig, "empty fantasy set");
        ensure!(
            !self.has_rotation() || image.is_square(),
            InvalidInput,
            "rotation fantasy needs square images, got {}x{}",
            image.height(),
            image.width()
        );
        self.transforms.iter().map(|t| t.apply(image)).collect()
    }
}

/// An image after a fantasy transform, with its expanded label.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSample {
    pub image: Image,
    pub real_label: usize,
    pub fantasy_index: usize,
    pub virtual_label: usize,
}

/// `y·M + m`.
pub fn virtual_label(y: usize, m: usize, num_transforms: usize) -> Result<usize> {
    ensure!(m < num_transforms, InvalidInput, "fantasy index {m} out of range for M = {num_transforms}");
    y.checked_mul(num_transforms)
        .and_then(|v| v.checked_add(m))
        .ok_or_else(|| Error::InvalidInput(format!("virtual label overflow for y = {y}, M = {num_transforms}")))
}

/// Inverse of [`virtual_label`]: `(v div M, v mod M)`.
pub fn original_label(virtual_y: usize, num_transforms: usize) -> Result<(usize, usize)> {
    ensure!(num_transforms >= 1, InvalidConfig, "fantasy set size must be at least 1");
    Ok((virtual_y / num_transforms, virtual_y % num_transforms))
}

/// Produces the `M` transformed copies of a sample; element 0 is the input.
pub fn expand(sample: &Sample, fantasy: &FantasySet) -> Result<Vec<VirtualSample>> {
    let m_total = fantasy.len();
    let images = fantasy.apply_all(&sample.image)?;
    images
        .into_iter()
        .enumerate()
        .map(|(m, image)| {
            Ok(VirtualSample { image, real_label: sample.label, fantasy_index: m, virtual_label: virtual_label(sample.label, m, m_total)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn sample(h: usize, w: usize) -> Sample {
        let image = Image::from_fn(h, w, 3, |i, j, c| ((i * 7 + j * 3 + c) % 11) as f32 / 10.0);
        Sample { image, label: 5 }
    }

    #[test]
    fn named_sets_have_expected_sizes() {
        assert_eq!(FantasySet::two_fold_rotations().len(), 2);
        assert_eq!(FantasySet::four_fold_rotations().len(), 4);
        assert_eq!(FantasySet::twelve_augmentations().len(), 12);
        for f in [FantasySet::two_fold_rotations(), FantasySet::four_fold_rotations(), FantasySet::twelve_augmentations()] {
            assert!(f.transforms()[0].is_identity());
        }
    }

    #[test]
    fn two_fold_is_zero_and_half_turn() {
        let f = FantasySet::two_fold_rotations();
        let rot: Vec<_> = f.transforms().iter().map(|t| t.rotation.degrees()).collect();
        assert_eq!(rot, vec![0, 180]);
    }

    #[test]
    fn twelve_augmentations_are_rotation_major() {
        let f = FantasySet::twelve_augmentations();
        let t = f.transforms();
        assert_eq!(t[1], TransformDescriptor::new(Rotation::Deg0, ChannelPermutation::Gbr));
        assert_eq!(t[2], TransformDescriptor::new(Rotation::Deg0, ChannelPermutation::Brg));
        assert_eq!(t[3], TransformDescriptor::new(Rotation::Deg90, ChannelPermutation::Rgb));
        assert_eq!(t[11], TransformDescriptor::new(Rotation::Deg270, ChannelPermutation::Brg));
    }

    #[test]
    fn expand_labels_and_identity() {
        let s = sample(4, 4);
        let out = expand(&s, &FantasySet::four_fold_rotations()).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].image, s.image);
        for (m, v) in out.iter().enumerate() {
            assert_eq!(v.fantasy_index, m);
            assert_eq!(v.virtual_label, 5 * 4 + m);
            assert_eq!(v.real_label, 5);
        }
        assert_eq!(out[1].image, s.image.rotate_ccw(1).unwrap());

        let only = expand(&s, &FantasySet::identity()).unwrap();
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].image, s.image);
        assert_eq!(only[0].virtual_label, 5);
    }

    #[test]
    fn expand_rejects_rectangular_images_for_rotation_sets() {
        let s = sample(4, 6);
        assert!(matches!(expand(&s, &FantasySet::two_fold_rotations()), Err(Error::InvalidInput(_))));
        assert!(expand(&s, &FantasySet::identity()).is_ok());
    }

    #[test]
    fn empty_set_is_a_config_error() {
        assert!(matches!(FantasySet::custom(vec![]), Err(Error::InvalidConfig(_))));
        let bad = FantasySet { kind: FantasyKind::Custom, transforms: vec![] };
        assert!(matches!(expand(&sample(2, 2), &bad), Err(Error::InvalidConfig(_))));
        let not_identity_first = vec![TransformDescriptor::new(Rotation::Deg90, ChannelPermutation::Rgb)];
        assert!(FantasySet::custom(not_identity_first).is_err());
    }

    #[test]
    fn label_algebra_examples() {
        assert_eq!(virtual_label(0, 0, 4).unwrap(), 0);
        assert_eq!(virtual_label(3, 2, 4).unwrap(), 14);
        assert_eq!(virtual_label(59, 1, 2).unwrap(), 119);
        assert!(virtual_label(1, 4, 4).is_err());
        assert_eq!(original_label(14, 4).unwrap(), (3, 2));
        for m in 1..13 {
            assert_eq!(original_label(0, m).unwrap(), (0, 0));
        }
        assert!(matches!(original_label(3, 0), Err(Error::InvalidConfig(_))));
        for v in 0..240 {
            let (y, m) = original_label(v, 4).unwrap();
            assert!(y < 60);
            assert_eq!(virtual_label(y, m, 4).unwrap(), v);
        }
    }

    #[test]
    fn label_expansion_is_a_bijection() {
        for m_total in 1..=12 {
            for classes in [1usize, 7, 200] {
                let mut seen = vec![false; classes * m_total];
                for y in 0..classes {
                    for m in 0..m_total {
                        let v = virtual_label(y, m, m_total).unwrap();
                        assert!(!seen[v]);
                        seen[v] = true;
                        assert_eq!(original_label(v, m_total).unwrap(), (y, m));
                    }
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..7).prop_flat_map(|n| proptest::collection::vec(0.0f32..=1.0, n * n * 3).prop_map(move |d| Image::new(n, n, 3, d).unwrap()))
    }

    proptest! {
        #[test]
        fn full_rotation_cycles_are_identity(img in arb_image()) {
            for r in Rotation::ALL {
                let t = TransformDescriptor::new(r, ChannelPermutation::Rgb);
                // order of the rotation in the cyclic group of quarter turns
                let steps = match r { Rotation::Deg0 => 1, Rotation::Deg180 => 2, _ => 4 };
                let mut cur = img.clone();
                for _ in 0..steps {
                    cur = t.apply(&cur).unwrap();
                }
                prop_assert_eq!(&cur, &img);
            }
        }

        #[test]
        fn transform_then_inverse_is_identity(img in arb_image()) {
            for t in FantasySet::twelve_augmentations().transforms() {
                let back = t.inverse().apply(&t.apply(&img).unwrap()).unwrap();
                prop_assert_eq!(&back, &img);
            }
        }

        #[test]
        fn expand_is_deterministic(img in arb_image(), label in 0usize..100) {
            let s = Sample { image: img, label };
            let f = FantasySet::twelve_augmentations();
            prop_assert_eq!(expand(&s, &f).unwrap(), expand(&s, &f).unwrap());
        }
    }
}
