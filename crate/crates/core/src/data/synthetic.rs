//! Procedural desk-scale dataset.
//!
//! Each class is a two-tone linear colour ramp: a palette (a bright and a dark
//! shade of one hue) swept along a class-specific direction. The first
//! `palettes` classes all have different hues. Later classes reuse those hues
//! but point their ramp at least 90° away from the class that first used the
//! hue, so telling them apart needs spatial structure as well as colour.
//! Samples add a random ramp offset, a brightness factor and pixel noise.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::augment::hsv_to_rgb;
use super::Sample;
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub resolution: usize,
    /// Number of distinct hues; `0` means `min(num_classes, 10)`.
    pub palettes: usize,
    pub noise_std: f64,
    /// Slope of the colour ramp across the image.
    pub ramp_slope: f64,
    /// Half-width of the uniform ramp offset.
    pub ramp_jitter: f64,
    /// Half-width of the uniform multiplicative brightness jitter.
    pub brightness_jitter: f64,
    /// Half-width, in radians, of the per-sample ramp direction jitter.
    pub direction_jitter: f64,
    /// Half-width of the per-sample hue shift (hue range is `[0, 1)`).
    pub hue_jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 14,
            train_per_class: 15,
            test_per_class: 40,
            resolution: 16,
            palettes: 0,
            noise_std: 0.3,
            ramp_slope: 1.6,
            ramp_jitter: 0.15,
            brightness_jitter: 0.1,
            direction_jitter: 0.0,
            hue_jitter: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn palette_count(&self) -> usize {
        if self.palettes == 0 {
            self.num_classes.min(10)
        } else {
            self.palettes
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.num_classes >= 2, InvalidConfig, "synthetic data needs at least 2 classes");
        ensure!(self.train_per_class >= 1, InvalidConfig, "synthetic data needs at least 1 sample per class");
        ensure!(self.resolution >= 8, InvalidConfig, "synthetic resolution must be at least 8, got {}", self.resolution);
        ensure!(self.noise_std >= 0.0, InvalidConfig, "noise_std must be non-negative");
        for (name, v) in [
            ("ramp_jitter", self.ramp_jitter),
            ("brightness_jitter", self.brightness_jitter),
            ("direction_jitter", self.direction_jitter),
            ("hue_jitter", self.hue_jitter),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), InvalidConfig, "{name} must be non-negative, got {v}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

struct ClassLook {
    hue: f64,
    direction: f64,
}

fn class_look(cfg: &SyntheticConfig, class: usize) -> ClassLook {
    let palettes = cfg.palette_count();
    let hue_slot = class % palettes;
    let generation = class / palettes;
    let hue = hue_slot as f64 / palettes as f64;
    let mut rng = stream(cfg.seed, &[tag::SYNTH_CLASS, hue_slot as u64]);
    let mut direction = rng.gen_range(0.0..2.0 * PI);
    for g in 1..=generation {
        let mut rng = stream(cfg.seed, &[tag::SYNTH_CLASS, hue_slot as u64, g as u64]);
        direction += PI / 2.0 + rng.gen_range(0.0..PI / 2.0);
    }
    ClassLook { hue, direction }
}

fn render(cfg: &SyntheticConfig, look: &ClassLook, split: Split, class: usize, index: usize) -> Image {
    let split_tag = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = stream(cfg.seed, &[tag::SYNTH_SAMPLE, split_tag, class as u64, index as u64]);
    let offset = rng.gen_range(-cfg.ramp_jitter..=cfg.ramp_jitter);
    let gain = 1.0 + rng.gen_range(-cfg.brightness_jitter..=cfg.brightness_jitter);
    let direction = look.direction + rng.gen_range(-cfg.direction_jitter..=cfg.direction_jitter);
    let hue = look.hue + rng.gen_range(-cfg.hue_jitter..=cfg.hue_jitter);
    let hue = hue - libm::floor(hue);
    let bright = hsv_to_rgb(hue, 0.8, 0.95);
    let dark = hsv_to_rgb(hue, 0.45, 0.35);
    let (s, c) = libm::sincos(direction);
    let r = cfg.resolution as f64;
    Image::from_fn(cfg.resolution, cfg.resolution, 3, |i, j, ch| {
        let x = (j as f64 + 0.5) / r - 0.5;
        let y = 0.5 - (i as f64 + 0.5) / r;
        let t = (0.5 + cfg.ramp_slope * (x * c + y * s) + offset).clamp(0.0, 1.0);
        let base = dark[ch] + t * (bright[ch] - dark[ch]);
        let noise: f64 = StandardNormal.sample(&mut rng);
        (base * gain + cfg.noise_std * noise).clamp(0.0, 1.0) as f32
    })
}

/// Samples of one split, class-major: all of class 0, then class 1, ...
pub fn synthetic_split(cfg: &SyntheticConfig, split: Split) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let per_class = match split {
        Split::Train => cfg.train_per_class,
        Split::Test => cfg.test_per_class,
    };
    let mut out = Vec::with_capacity(cfg.num_classes * per_class);
    for class in 0..cfg.num_classes {
        let look = class_look(cfg, class);
        for i in 0..per_class {
            out.push(Sample { image: render(cfg, &look, split, class, i), label: class });
        }
    }
    Ok(out)
}

/// Training split with default look parameters.
pub fn synthetic_dataset(num_classes: usize, per_class: usize, resolution: usize, seed: u64) -> Result<Vec<Sample>> {
    let cfg = SyntheticConfig { num_classes, train_per_class: per_class, resolution, seed, ..SyntheticConfig::default() };
    synthetic_split(&cfg, Split::Train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use alloc::vec;

    #[test]
    fn same_seed_gives_identical_data() {
        let a = synthetic_dataset(14, 50, 32, 7).unwrap();
        let b = synthetic_dataset(14, 50, 32, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 14 * 50);
        assert_ne!(a, synthetic_dataset(14, 50, 32, 8).unwrap());
    }

    #[test]
    fn one_per_class() {
        let d = synthetic_dataset(5, 1, 8, 0).unwrap();
        let mut counts = vec![0; 5];
        for s in &d {
            counts[s.label] += 1;
        }
        assert_eq!(counts, vec![1; 5]);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(synthetic_dataset(14, 5, 7, 0), Err(Error::InvalidConfig(_))));
        assert!(synthetic_dataset(1, 5, 16, 0).is_err());
        assert!(synthetic_dataset(3, 0, 16, 0).is_err());
    }

    #[test]
    fn pixels_are_in_unit_range() {
        for s in synthetic_dataset(14, 3, 16, 1).unwrap() {
            assert!(s.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn train_and_test_differ_but_share_classes() {
        let cfg = SyntheticConfig { num_classes: 3, train_per_class: 2, test_per_class: 2, ..Default::default() };
        let train = synthetic_split(&cfg, Split::Train).unwrap();
        let test = synthetic_split(&cfg, Split::Test).unwrap();
        assert_ne!(train[0].image, test[0].image);
        assert_eq!(train.iter().map(|s| s.label).collect::<Vec<_>>(), test.iter().map(|s| s.label).collect::<Vec<_>>());
    }
}
