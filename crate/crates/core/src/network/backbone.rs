//! Feature extractors.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use rand_distr::{Distribution, Normal};

use super::layers::{conv_relu_backward, conv_relu_forward, ConvGeom};
use super::params::Param;
use crate::error::{ensure, Result};
use crate::image::ImageBatch;
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Saved activations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub buffers: Vec<Vec<f32>>,
    pub dims: Vec<[usize; 4]>,
}

/// A differentiable image → feature map `f`.
///
/// Implementations own a contiguous run of parameters (in the order returned
/// by [`Backbone::init_params`]) and must leave the tape in a state their own
/// `backward` understands.
pub trait Backbone: Debug + Send + Sync {
    fn name(&self) -> &str;

    fn feature_dim(&self) -> usize;

    /// Layer names, shallow to deep.
    fn layer_names(&self) -> Vec<String>;

    fn init_params(&self, rng: &mut Rng) -> Vec<Param>;

    fn forward(&self, params: &[Param], input: &ImageBatch, tape: Option<&mut Tape>) -> Result<Matrix<f32>>;

    /// Accumulates parameter gradients for every `trainable[i]` parameter.
    fn backward(&self, params: &[Param], tape: &Tape, grad_features: &Matrix<f32>, grads: &mut [Vec<f32>], trainable: &[bool]);
}

/// Four 3×3 stride-2 convolution blocks with ReLU, then global average
/// pooling. Layers are named `block1` … `block4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmallConv {
    pub widths: [usize; 4],
}

impl SmallConv {
    pub fn new(widths: [usize; 4]) -> Self {
        Self { widths }
    }

    fn cin(&self, l: usize) -> usize {
        if l == 0 {
            3
        } else {
            self.widths[l - 1]
        }
    }
}

impl Backbone for SmallConv {
    fn name(&self) -> &str {
        "small_conv"
    }

    fn feature_dim(&self) -> usize {
        self.widths[3]
    }

    fn layer_names(&self) -> Vec<String> {
        (1..=4).map(|i| format!("block{i}")).collect()
    }

    fn init_params(&self, rng: &mut Rng) -> Vec<Param> {
        let mut out = Vec::with_capacity(8);
        for l in 0..4 {
            let (cin, cout) = (self.cin(l), self.widths[l]);
            let fan_in = cin * 9;
            let std = libm::sqrt(2.0 / fan_in as f64);
            let normal = Normal::new(0.0, std).expect("positive std");
            let layer = format!("block{}", l + 1);
            out.push(Param {
                name: format!("{layer}.weight"),
                layer: layer.clone(),
                shape: vec![cout, cin, 3, 3],
                data: (0..cout * fan_in).map(|_| normal.sample(rng) as f32).collect(),
            });
            out.push(Param { name: format!("{layer}.bias"), layer, shape: vec![cout], data: vec![0.0; cout] });
        }
        out
    }

    fn forward(&self, params: &[Param], input: &ImageBatch, mut tape: Option<&mut Tape>) -> Result<Matrix<f32>> {
        ensure!(input.channels == 3, InvalidInput, "encoder expects 3-channel images, got {}", input.channels);
        ensure!(input.height >= 1 && input.width >= 1, InvalidInput, "empty images");
        let b = input.n;
        if b == 0 {
            return Ok(Matrix::zeros(0, self.feature_dim()));
        }
        // NCHW -> CNHW
        let plane = input.height * input.width;
        let mut x = vec![0.0f32; input.data.len()];
        for n in 0..b {
            for c in 0..3 {
                x[(c * b + n) * plane..][..plane].copy_from_slice(&input.data[(n * 3 + c) * plane..][..plane]);
            }
        }
        let (mut h, mut w) = (input.height, input.width);
        if let Some(t) = tape.as_deref_mut() {
            t.buffers.clear();
            t.dims.clear();
        }
        for l in 0..4 {
            let g = ConvGeom { cin: self.cin(l), cout: self.widths[l], batch: b, h, w, stride: 2 };
            let (cols, act) = conv_relu_forward(&x, &params[2 * l].data, &params[2 * l + 1].data, &g);
            h = g.out_h();
            w = g.out_w();
            if let Some(t) = tape.as_deref_mut() {
                t.buffers.push(cols);
                t.buffers.push(act.clone());
                t.dims.push([g.cin, b, g.h, g.w]);
            }
            x = act;
        }
        let d = self.feature_dim();
        let hw = h * w;
        let mut feats = Matrix::zeros(b, d);
        for c in 0..d {
            for n in 0..b {
                let s: f32 = x[(c * b + n) * hw..][..hw].iter().sum();
                feats.set(n, c, s / hw as f32);
            }
        }
        if let Some(t) = tape {
            t.dims.push([d, b, h, w]);
        }
        Ok(feats)
    }

    fn backward(&self, params: &[Param], tape: &Tape, grad_features: &Matrix<f32>, grads: &mut [Vec<f32>], trainable: &[bool]) {
        let [d, b, h, w] = tape.dims[4];
        let hw = h * w;
        // deepest layer whose input gradient is still needed
        let shallowest = match (0..4).find(|&l| trainable[2 * l] || trainable[2 * l + 1]) {
            Some(l) => l,
            None => return,
        };
        let mut grad = vec![0.0f32; d * b * hw];
        for c in 0..d {
            for n in 0..b {
                let v = grad_features.get(n, c) / hw as f32;
                grad[(c * b + n) * hw..][..hw].fill(v);
            }
        }
        for l in (shallowest..4).rev() {
            let [cin, batch, ih, iw] = tape.dims[l];
            let g = ConvGeom { cin, cout: self.widths[l], batch, h: ih, w: iw, stride: 2 };
            let (gw_slice, rest) = grads[2 * l..].split_at_mut(1);
            let gw = trainable[2 * l].then(|| gw_slice[0].as_mut_slice());
            let gb = trainable[2 * l + 1].then(|| rest[0].as_mut_slice());
            let next = conv_relu_backward(
                &tape.buffers[2 * l],
                &tape.buffers[2 * l + 1],
                &params[2 * l].data,
                &mut grad,
                &g,
                gw,
                gb,
                l > shallowest,
            );
            match next {
                Some(gx) => grad = gx,
                None => break,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Architecture {
    /// `widths` are the output channels of the four blocks; the last one is
    /// the feature dimension.
    SmallConv { widths: [usize; 4] },
}

impl Architecture {
    pub fn build(&self) -> Result<alloc::sync::Arc<dyn Backbone>> {
        match self {
            Architecture::SmallConv { widths } => {
                ensure!(widths.iter().all(|&w| w > 0), InvalidConfig, "small_conv widths must be positive");
                Ok(alloc::sync::Arc::new(SmallConv::new(*widths)))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Architecture::SmallConv { .. } => "small_conv".to_string(),
        }
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::SmallConv { widths: [16, 32, 64, 64] }
    }
}
