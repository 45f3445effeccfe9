use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::backbone::{Architecture, Backbone, Tape};
use super::layers::{l2_normalize_backward, l2_normalize_rows, linear_backward, linear_forward};
use super::params::{Param, ParamStore};
use crate::error::{ensure, Result};
use crate::image::ImageBatch;
use crate::rng::{stream, tag};
use crate::tensor::Matrix;

pub const PROJECTOR: &str = "projector";
pub const CLASSIFIER: &str = "classifier";

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub projection_dim: usize,
    pub num_base_classes: usize,
    /// Fantasy set size `M`.
    pub num_transforms: usize,
}

impl EncoderConfig {
    pub fn num_virtual_classes(&self) -> usize {
        self.num_base_classes * self.num_transforms
    }
}

/// Architecture of the query/key networks, without parameters.
///
/// Parameter layout: backbone parameters, then `projector.fc1.{weight,bias}`,
/// `projector.fc2.{weight,bias}`, then `classifier.weight` (query side only).
#[derive(Debug, Clone)]
pub struct Network {
    backbone: Arc<dyn Backbone>,
    config: EncoderConfig,
    n_backbone: usize,
}

/// Saved projector activations.
#[derive(Debug, Clone, Default)]
pub struct ProjectorCache {
    input: Vec<f32>,
    hidden: Vec<f32>,
    output: Vec<f32>,
    norms: Vec<f32>,
    batch: usize,
}

impl Network {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let backbone = config.architecture.build()?;
        Self::with_backbone(backbone, config)
    }

    /// Uses a caller-supplied feature extractor.
    pub fn with_backbone(backbone: Arc<dyn Backbone>, config: EncoderConfig) -> Result<Self> {
        ensure!(backbone.feature_dim() > 0, InvalidConfig, "feature dimension must be positive");
        ensure!(config.projection_dim > 0, InvalidConfig, "projection dimension must be positive");
        ensure!(config.num_transforms >= 1, InvalidConfig, "fantasy set size must be at least 1");
        ensure!(config.num_base_classes >= 1, InvalidConfig, "at least one base class is required");
        let n_backbone = backbone.init_params(&mut stream(0, &[])).len();
        Ok(Self { backbone, config, n_backbone })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn backbone(&self) -> &dyn Backbone {
        &*self.backbone
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    pub fn projection_dim(&self) -> usize {
        self.config.projection_dim
    }

    pub fn num_virtual_classes(&self) -> usize {
        self.config.num_virtual_classes()
    }

    /// All layer names, shallow to deep: backbone blocks, `projector`, `classifier`.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = self.backbone.layer_names();
        names.push(PROJECTOR.to_string());
        names.push(CLASSIFIER.to_string());
        names
    }

    fn proj(&self) -> usize {
        self.n_backbone
    }

    fn cls(&self) -> usize {
        self.n_backbone + 4
    }

    /// Fresh query-side parameters.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = stream(seed, &[tag::INIT]);
        let mut params = self.backbone.init_params(&mut rng);
        let d = self.feature_dim();
        let p = self.projection_dim();
        let c = self.num_virtual_classes();
        let linear = |name: &str, layer: &str, out: usize, inp: usize, rng: &mut crate::rng::Rng| {
            let bound = 1.0 / libm::sqrt(inp as f64);
            Param {
                name: name.to_string(),
                layer: layer.to_string(),
                shape: vec![out, inp],
                data: (0..out * inp).map(|_| rng.gen_range(-bound..bound) as f32).collect(),
            }
        };
        params.push(linear("projector.fc1.weight", PROJECTOR, d, d, &mut rng));
        params.push(Param { name: "projector.fc1.bias".into(), layer: PROJECTOR.into(), shape: vec![d], data: vec![0.0; d] });
        params.push(linear("projector.fc2.weight", PROJECTOR, p, d, &mut rng));
        params.push(Param { name: "projector.fc2.bias".into(), layer: PROJECTOR.into(), shape: vec![p], data: vec![0.0; p] });
        params.push(linear("classifier.weight", CLASSIFIER, c, d, &mut rng));
        ParamStore::new(params)
    }

    /// Key-side copy: every query parameter except the classifier.
    pub fn key_params_from(&self, query: &ParamStore) -> ParamStore {
        ParamStore::new(query.params()[..self.cls()].to_vec())
    }

    fn check_store(&self, params: &ParamStore, with_classifier: bool) -> Result<()> {
        let want = self.cls() + usize::from(with_classifier);
        ensure!(params.len() >= want, InvalidInput, "parameter store has {} tensors, expected at least {want}", params.len());
        Ok(())
    }

    /// Feature extractor `f`. Works for query and key stores.
    pub fn encode(&self, params: &ParamStore, images: &ImageBatch, tape: Option<&mut Tape>) -> Result<Matrix<f32>> {
        self.check_store(params, false)?;
        self.backbone.forward(&params.params()[..self.n_backbone], images, tape)
    }

    /// [`Network::encode`] over a list of images, `chunk` at a time.
    pub fn encode_images(&self, params: &ParamStore, images: &[&crate::Image], chunk: usize) -> Result<Matrix<f32>> {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(images.len() * d);
        for part in images.chunks(chunk.max(1)) {
            let batch = ImageBatch::from_images(part.iter().copied())?;
            data.extend_from_slice(self.encode(params, &batch, None)?.as_slice());
        }
        Matrix::from_vec(images.len(), d, data)
    }

    /// Projector `h` followed by L2 normalization.
    pub fn project(&self, params: &ParamStore, features: &Matrix<f32>, cache: Option<&mut ProjectorCache>) -> Result<Matrix<f32>> {
        self.check_store(params, false)?;
        let d = self.feature_dim();
        ensure!(features.cols() == d, InvalidInput, "features have {} columns, expected {d}", features.cols());
        let b = features.rows();
        let ps = params.params();
        let i = self.proj();
        let mut hidden = linear_forward(features.as_slice(), b, d, &ps[i].data, Some(&ps[i + 1].data), d);
        for v in &mut hidden {
            *v = v.max(0.0);
        }
        let p = self.projection_dim();
        let z = linear_forward(&hidden, b, d, &ps[i + 2].data, Some(&ps[i + 3].data), p);
        let (y, norms) = l2_normalize_rows(&z, p);
        let out = Matrix::from_vec(b, p, y.clone())?;
        if let Some(c) = cache {
            *c = ProjectorCache { input: features.as_slice().to_vec(), hidden, output: y, norms, batch: b };
        }
        Ok(out)
    }

    /// Bias-free linear classifier over the virtual classes.
    pub fn classify(&self, params: &ParamStore, features: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.check_store(params, true)?;
        let d = self.feature_dim();
        ensure!(features.cols() == d, InvalidInput, "features have {} columns, expected {d}", features.cols());
        let c = self.num_virtual_classes();
        let w = &params.params()[self.cls()].data;
        Matrix::from_vec(features.rows(), c, linear_forward(features.as_slice(), features.rows(), d, w, None, c))
    }

    pub fn encode_backward(
        &self,
        params: &ParamStore,
        tape: &Tape,
        grad_features: &Matrix<f32>,
        grads: &mut [Vec<f32>],
        trainable: &[bool],
    ) {
        let nb = self.n_backbone;
        self.backbone.backward(&params.params()[..nb], tape, grad_features, &mut grads[..nb], &trainable[..nb]);
    }

    /// Returns the gradient with respect to the projector input.
    pub fn project_backward(
        &self,
        params: &ParamStore,
        cache: &ProjectorCache,
        grad_embeddings: &Matrix<f32>,
        grads: &mut [Vec<f32>],
        trainable: &[bool],
    ) -> Matrix<f32> {
        let (d, p, b) = (self.feature_dim(), self.projection_dim(), cache.batch);
        let i = self.proj();
        let ps = params.params();
        let gz = l2_normalize_backward(&cache.output, &cache.norms, grad_embeddings.as_slice(), p);
        let (g_head, g_tail) = grads[i..].split_at_mut(2);
        let (g2w, g2b) = g_tail.split_at_mut(1);
        let mut gh = linear_backward(
            &cache.hidden,
            b,
            d,
            &ps[i + 2].data,
            p,
            &gz,
            trainable[i + 2].then(|| g2w[0].as_mut_slice()),
            trainable[i + 3].then(|| g2b[0].as_mut_slice()),
            true,
        )
        .expect("input gradient requested");
        for (g, &h) in gh.iter_mut().zip(&cache.hidden) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        let (g1w, g1b) = g_head.split_at_mut(1);
        let gx = linear_backward(
            &cache.input,
            b,
            d,
            &ps[i].data,
            d,
            &gh,
            trainable[i].then(|| g1w[0].as_mut_slice()),
            trainable[i + 1].then(|| g1b[0].as_mut_slice()),
            true,
        )
        .expect("input gradient requested");
        Matrix::from_vec(b, d, gx).expect("shape")
    }

    /// Returns the gradient with respect to the classifier input.
    pub fn classify_backward(
        &self,
        params: &ParamStore,
        features: &Matrix<f32>,
        grad_logits: &Matrix<f32>,
        grads: &mut [Vec<f32>],
        trainable: &[bool],
    ) -> Matrix<f32> {
        let (d, c, b) = (self.feature_dim(), self.num_virtual_classes(), features.rows());
        let i = self.cls();
        let gx = linear_backward(
            features.as_slice(),
            b,
            d,
            &params.params()[i].data,
            c,
            grad_logits.as_slice(),
            trainable[i].then(|| grads[i].as_mut_slice()),
            None,
            true,
        )
        .expect("input gradient requested");
        Matrix::from_vec(b, d, gx).expect("shape")
    }

    /// Per-parameter flags for a set of trainable layer names.
    pub fn trainable_mask(&self, params: &ParamStore, layers: &[String]) -> Vec<bool> {
        params.params().iter().map(|p| layers.contains(&p.layer)).collect()
    }

    pub fn check_layer_names(&self, layers: &[String]) -> Result<()> {
        let known = self.layer_names();
        for l in layers {
            ensure!(known.contains(l), InvalidConfig, "unknown layer {l:?}; known layers: {}", known.join(", "));
        }
        Ok(())
    }
}

/// Query network (with classifier) and its momentum-averaged key copy.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub network: Network,
    pub query: ParamStore,
    pub key: ParamStore,
    pub momentum: f64,
}

impl ModelPair {
    pub fn new(config: EncoderConfig, momentum: f64, seed: u64) -> Result<Self> {
        check_momentum(momentum)?;
        let network = Network::new(config)?;
        let query = network.init_params(seed);
        let key = network.key_params_from(&query);
        Ok(Self { network, query, key, momentum })
    }

    pub fn encode(&self, images: &ImageBatch) -> Result<Matrix<f32>> {
        self.network.encode(&self.query, images, None)
    }

    pub fn project(&self, features: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.network.project(&self.query, features, None)
    }

    pub fn classify(&self, features: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.network.classify(&self.query, features)
    }

    /// `g_k(x)`: key-side unit embeddings.
    pub fn key_embed(&self, images: &ImageBatch) -> Result<Matrix<f32>> {
        let f = self.network.encode(&self.key, images, None)?;
        self.network.project(&self.key, &f, None)
    }

    /// Encodes in chunks of `chunk` images to bound memory.
    pub fn encode_chunked(&self, images: &[&crate::Image], chunk: usize) -> Result<Matrix<f32>> {
        self.network.encode_images(&self.query, images, chunk)
    }
}

fn check_momentum(m: f64) -> Result<()> {
    ensure!((0.0..=1.0).contains(&m), InvalidConfig, "momentum coefficient must lie in [0, 1], got {m}");
    Ok(())
}

/// `θ_k ← m·θ_k + (1 − m)·θ_q` for every key parameter.
pub fn momentum_update(pair: &mut ModelPair, m: f64) -> Result<()> {
    momentum_update_layers(pair, m, |_| true)
}

/// [`momentum_update`] restricted to layers accepted by `filter`.
pub fn momentum_update_layers(pair: &mut ModelPair, m: f64, filter: impl Fn(&str) -> bool) -> Result<()> {
    check_momentum(m)?;
    if m == 1.0 {
        return Ok(());
    }
    let (mk, mq) = (m as f32, (1.0 - m) as f32);
    for (k, q) in pair.key.params_mut().iter_mut().zip(pair.query.params()) {
        debug_assert_eq!(k.name, q.name);
        if !filter(&k.layer) {
            continue;
        }
        if m == 0.0 {
            k.data.copy_from_slice(&q.data);
            continue;
        }
        for (a, &b) in k.data.iter_mut().zip(&q.data) {
            *a = mk * *a + mq * b;
        }
    }
    Ok(())
}

impl core::fmt::Display for EncoderConfig {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} p={} classes={}x{}", self.architecture.name(), self.projection_dim, self.num_base_classes, self.num_transforms)
    }
}
