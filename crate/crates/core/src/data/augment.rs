//! Query/key/local view generation.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{ensure, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Axis-aligned crop rectangle in source-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRegion {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl CropRegion {
    pub fn full(image: &Image) -> Self {
        Self { x: 0.0, y: 0.0, width: image.width() as f64, height: image.height() as f64 }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn intersection(&self, other: &CropRegion) -> f64 {
        let w = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let h = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &CropRegion) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Centred sub-rectangle covering `fraction` of this region's area.
    pub fn centered_subregion(&self, fraction: f64) -> Self {
        let s = libm::sqrt(fraction.clamp(0.0, 1.0));
        let (w, h) = (self.width * s, self.height * s);
        Self { x: self.x + (self.width - w) / 2.0, y: self.y + (self.height - h) / 2.0, width: w, height: h }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        Self { brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AugConfig {
    /// Area fraction range of global (query/key) crops.
    pub global_scale: (f64, f64),
    /// Area fraction range of local crops.
    pub local_scale: (f64, f64),
    /// Aspect-ratio range of all crops.
    pub ratio: (f64, f64),
    pub hflip_prob: f64,
    pub jitter_prob: f64,
    pub jitter: ColorJitter,
    pub grayscale_prob: f64,
    /// Output side of global views; `0` keeps the input side.
    pub global_size: usize,
    /// Output side of local views; `0` means half the input side.
    pub local_size: usize,
    /// Attempts before a local crop falls back to a centred sub-crop.
    pub max_retries: usize,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            global_scale: (0.2, 1.0),
            local_scale: (0.05, 0.4),
            ratio: (3.0 / 4.0, 4.0 / 3.0),
            hflip_prob: 0.5,
            jitter_prob: 0.8,
            jitter: ColorJitter::default(),
            grayscale_prob: 0.2,
            global_size: 0,
            local_size: 0,
            max_retries: 50,
        }
    }
}

impl AugConfig {
    /// Full-image crops and no photometric change.
    pub fn none() -> Self {
        Self {
            global_scale: (1.0, 1.0),
            local_scale: (1.0, 1.0),
            ratio: (1.0, 1.0),
            hflip_prob: 0.0,
            jitter_prob: 0.0,
            grayscale_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("global_scale", self.global_scale), ("local_scale", self.local_scale)] {
            ensure!(0.0 < lo && lo <= hi && hi <= 1.0, InvalidConfig, "{name} must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})");
        }
        ensure!(0.0 < self.ratio.0 && self.ratio.0 <= self.ratio.1, InvalidConfig, "invalid aspect ratio range");
        for (name, p) in [("hflip_prob", self.hflip_prob), ("jitter_prob", self.jitter_prob), ("grayscale_prob", self.grayscale_prob)] {
            ensure!((0.0..=1.0).contains(&p), InvalidConfig, "{name} must lie in [0, 1], got {p}");
        }
        Ok(())
    }

    fn global_side(&self, image: &Image) -> usize {
        if self.global_size == 0 {
            image.height()
        } else {
            self.global_size
        }
    }

    pub fn local_side(&self, input_side: usize) -> usize {
        if self.local_size == 0 {
            (input_side / 2).max(1)
        } else {
            self.local_size
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: Image,
    pub region: CropRegion,
}

/// A small crop that may only be encoded by the query network.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalView(View);

impl LocalView {
    pub fn image(&self) -> &Image {
        &self.0.image
    }

    pub fn region(&self) -> CropRegion {
        self.0.region
    }

    pub fn into_query_view(self) -> View {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewBundle {
    pub query: View,
    pub key: View,
    pub locals: Vec<LocalView>,
    /// Number of locals that used the centred fallback.
    pub fallbacks: usize,
}

fn random_resized_region(image: &Image, scale: (f64, f64), ratio: (f64, f64), rng: &mut Rng) -> CropRegion {
    let (w, h) = (image.width() as f64, image.height() as f64);
    if scale == (1.0, 1.0) && ratio == (1.0, 1.0) && w == h {
        return CropRegion::full(image);
    }
    let area = w * h;
    let (log_lo, log_hi) = (libm::log(ratio.0), libm::log(ratio.1));
    for _ in 0..10 {
        let target = area * sample_range(rng, scale);
        let aspect = libm::exp(sample_range(rng, (log_lo, log_hi)));
        let cw = libm::sqrt(target * aspect);
        let ch = libm::sqrt(target / aspect);
        if cw <= w && ch <= h {
            let x = sample_range(rng, (0.0, w - cw));
            let y = sample_range(rng, (0.0, h - ch));
            return CropRegion { x, y, width: cw, height: ch };
        }
    }
    CropRegion::full(image)
}

fn sample_range(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Bilinear resample of `region` to `side × side`.
pub(crate) fn resample(image: &Image, region: &CropRegion, side: usize) -> Image {
    let full = CropRegion::full(image);
    if *region == full && side == image.height() && side == image.width() {
        return image.clone();
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let sy = region.height / side as f64;
    let sx = region.width / side as f64;
    let mut out = Image::zeros(side, side, c);
    for i in 0..side {
        let fy = (region.y + (i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = (fy - y0 as f64) as f32;
        for j in 0..side {
            let fx = (region.x + (j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = (fx - x0 as f64) as f32;
            for ch in 0..c {
                let top = image.get(y0, x0, ch) * (1.0 - tx) + image.get(y0, x1, ch) * tx;
                let bot = image.get(y1, x0, ch) * (1.0 - tx) + image.get(y1, x1, ch) * tx;
                out.set(i, j, ch, top * (1.0 - ty) + bot * ty);
            }
        }
    }
    out
}

fn hflip(image: &mut Image) {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let data = image.as_mut_slice();
    for i in 0..h {
        for j in 0..w / 2 {
            for ch in 0..c {
                data.swap((i * w + j) * c + ch, (i * w + (w - 1 - j)) * c + ch);
            }
        }
    }
}

fn luma(px: &[f32]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

fn fract(x: f64) -> f64 {
    x - libm::floor(x)
}

pub(crate) fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        fract((g - b) / d / 6.0)
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = fract(h) * 6.0;
    let sector = libm::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn color_jitter(image: &mut Image, jitter: &ColorJitter, rng: &mut Rng) {
    if image.channels() != 3 {
        return;
    }
    let factor = |rng: &mut Rng, amount: f64| sample_range(rng, ((1.0 - amount).max(0.0), 1.0 + amount)) as f32;
    let b = factor(rng, jitter.brightness);
    let c = factor(rng, jitter.contrast);
    let s = factor(rng, jitter.saturation);
    let hue = sample_range(rng, (-jitter.hue, jitter.hue));
    let data = image.as_mut_slice();
    for v in data.iter_mut() {
        *v = (*v * b).clamp(0.0, 1.0);
    }
    let n = (data.len() / 3) as f32;
    let mean = data.chunks_exact(3).map(luma).sum::<f32>() / n;
    for v in data.iter_mut() {
        *v = ((*v - mean) * c + mean).clamp(0.0, 1.0);
    }
    for px in data.chunks_exact_mut(3) {
        let g = luma(px);
        for v in px.iter_mut() {
            *v = ((*v - g) * s + g).clamp(0.0, 1.0);
        }
    }
    if hue != 0.0 {
        for px in data.chunks_exact_mut(3) {
            let (h, sat, val) = rgb_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64);
            let rgb = hsv_to_rgb(h + hue, sat, val);
            for (dst, src) in px.iter_mut().zip(rgb) {
                *dst = (src as f32).clamp(0.0, 1.0);
            }
        }
    }
}

fn grayscale(image: &mut Image) {
    if image.channels() != 3 {
        return;
    }
    for px in image.as_mut_slice().chunks_exact_mut(3) {
        let g = luma(px);
        px.fill(g);
    }
}

fn photometric(image: &mut Image, cfg: &AugConfig, rng: &mut Rng) {
    if cfg.hflip_prob > 0.0 && rng.gen_bool(cfg.hflip_prob) {
        hflip(image);
    }
    if cfg.jitter_prob > 0.0 && rng.gen_bool(cfg.jitter_prob) {
        color_jitter(image, &cfg.jitter, rng);
    }
    if cfg.grayscale_prob > 0.0 && rng.gen_bool(cfg.grayscale_prob) {
        grayscale(image);
    }
}

fn global_view(image: &Image, cfg: &AugConfig, rng: &mut Rng) -> View {
    let region = random_resized_region(image, cfg.global_scale, cfg.ratio, rng);
    let mut out = resample(image, &region, cfg.global_side(image));
    photometric(&mut out, cfg, rng);
    View { image: out, region }
}

/// Draws an independent query and key view plus `n_local` local crops whose
/// IoU with the query crop is at least `overlap_threshold`.
///
/// A local crop that misses the threshold `max_retries` times is replaced by a
/// centred sub-crop of the query region.
pub fn make_views(image: &Image, cfg: &AugConfig, n_local: usize, overlap_threshold: f64, rng: &mut Rng) -> Result<ViewBundle> {
    ensure!((0.0..=1.0).contains(&overlap_threshold), InvalidConfig, "overlap threshold must lie in [0, 1], got {overlap_threshold}");
    let query = global_view(image, cfg, rng);
    let key = global_view(image, cfg, rng);
    let local_side = cfg.local_side(image.height());
    let mut locals = Vec::with_capacity(n_local);
    let mut fallbacks = 0;
    for _ in 0..n_local {
        let mut region = None;
        for _ in 0..cfg.max_retries.max(1) {
            let candidate = random_resized_region(image, cfg.local_scale, cfg.ratio, rng);
            if candidate.iou(&query.region) >= overlap_threshold {
                region = Some(candidate);
                break;
            }
        }
        let region = region.unwrap_or_else(|| {
            fallbacks += 1;
            log::debug!("local crop missed IoU {overlap_threshold} after {} tries; using centred sub-crop", cfg.max_retries);
            query.region.centered_subregion((overlap_threshold + 1.0) / 2.0)
        });
        let mut out = resample(image, &region, local_side);
        photometric(&mut out, cfg, rng);
        locals.push(LocalView(View { image: out, region }));
    }
    Ok(ViewBundle { query, key, locals, fallbacks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn img() -> Image {
        Image::from_fn(8, 8, 3, |i, j, c| ((i * 8 + j) * 3 + c) as f32 / 192.0)
    }

    #[test]
    fn noop_config_returns_input() {
        let x = img();
        let b = make_views(&x, &AugConfig { local_size: 8, ..AugConfig::none() }, 0, 0.3, &mut stream(0, &[])).unwrap();
        assert_eq!(b.query.image, x);
        assert_eq!(b.key.image, x);
        assert!(b.locals.is_empty());
    }

    #[test]
    fn contained_crop_iou_is_area_ratio() {
        let outer = CropRegion { x: 0.0, y: 0.0, width: 10.0, height: 10.0 };
        let inner = CropRegion { x: 2.0, y: 3.0, width: 4.0, height: 5.0 };
        assert!((inner.iou(&outer) - 0.2).abs() < 1e-12);
        assert_eq!(inner.iou(&CropRegion { x: 50.0, ..outer }), 0.0);
        let sub = outer.centered_subregion(0.65);
        assert!(sub.iou(&outer) >= 0.65 - 1e-12);
    }

    #[test]
    fn views_are_deterministic_per_seed() {
        let x = img();
        let cfg = AugConfig::default();
        let a = make_views(&x, &cfg, 2, 0.3, &mut stream(3, &[1])).unwrap();
        let b = make_views(&x, &cfg, 2, 0.3, &mut stream(3, &[1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.locals[0].image().height(), 4);
    }

    #[test]
    fn impossible_threshold_falls_back() {
        let x = img();
        let cfg = AugConfig { local_scale: (0.05, 0.06), max_retries: 3, ..AugConfig::default() };
        let b = make_views(&x, &cfg, 3, 0.9, &mut stream(1, &[])).unwrap();
        assert_eq!(b.fallbacks, 3);
        for l in &b.locals {
            assert!(l.region().iou(&b.query.region) >= 0.9);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let back = hsv_to_rgb(h, s, v);
            for (x, y) in back.iter().zip([r, g, b]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn photometric_output_stays_in_range() {
        let x = img();
        let cfg = AugConfig { jitter_prob: 1.0, ..AugConfig::default() };
        for seed in 0..20 {
            let b = make_views(&x, &cfg, 1, 0.0, &mut stream(seed, &[])).unwrap();
            assert!(b.query.image.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
