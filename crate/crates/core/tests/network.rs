use proptest::prelude::*;
use savc_core::image::ImageBatch;
use savc_core::network::{momentum_update, momentum_update_layers, Architecture, EncoderConfig, Gradients, ModelPair};
use savc_core::{Image, Matrix};

fn config(classes: usize, m: usize) -> EncoderConfig {
    EncoderConfig {
        architecture: Architecture::SmallConv { widths: [4, 6, 8, 8] },
        projection_dim: 5,
        num_base_classes: classes,
        num_transforms: m,
    }
}

fn images(n: usize, side: usize, seed: u32) -> Vec<Image> {
    (0..n)
        .map(|k| {
            Image::from_fn(side, side, 3, |i, j, c| {
                let h = (i as u32 * 73 + j as u32 * 151 + c as u32 * 31 + k as u32 * 977 + seed * 13) % 101;
                h as f32 / 100.0
            })
        })
        .collect()
}

fn batch(imgs: &[Image]) -> ImageBatch {
    ImageBatch::from_images(imgs.iter()).unwrap()
}

#[test]
fn encode_shapes_and_determinism() {
    let pair = ModelPair::new(config(3, 2), 0.999, 1).unwrap();
    let imgs = images(4, 16, 0);
    let f = pair.encode(&batch(&imgs)).unwrap();
    assert_eq!((f.rows(), f.cols()), (4, 8));
    assert!(f.as_slice().iter().all(|v| v.is_finite()));

    let dup = vec![imgs[0].clone(), imgs[0].clone()];
    let g = pair.encode(&batch(&dup)).unwrap();
    assert_eq!(g.row(0), g.row(1));
    assert_eq!(g.row(0), f.row(0));

    // any square side works thanks to global pooling
    assert_eq!(pair.encode(&batch(&images(2, 8, 1))).unwrap().rows(), 2);
    let gray = ImageBatch { n: 1, channels: 1, height: 4, width: 4, data: vec![0.0; 16] };
    assert!(pair.encode(&gray).is_err());
}

#[test]
fn default_small_conv_is_finite_on_32px_batch() {
    let cfg = EncoderConfig { architecture: Architecture::default(), projection_dim: 128, num_base_classes: 10, num_transforms: 2 };
    let pair = ModelPair::new(cfg, 0.999, 42).unwrap();
    let f = pair.encode(&batch(&images(8, 32, 3))).unwrap();
    assert_eq!(f.cols(), 64);
    assert!(f.as_slice().iter().all(|v| v.is_finite()));
}

#[test]
fn classifier_width_is_classes_times_transforms() {
    for (c, m, want) in [(60, 2, 120), (60, 12, 720), (7, 1, 7)] {
        let pair = ModelPair::new(config(c, m), 0.9, 0).unwrap();
        let f = pair.encode(&batch(&images(2, 8, 0))).unwrap();
        assert_eq!(pair.classify(&f).unwrap().cols(), want);
    }
}

#[test]
fn projection_handles_zero_rows() {
    let pair = ModelPair::new(config(2, 1), 0.9, 0).unwrap();
    let zeros = Matrix::<f32>::zeros(3, 8);
    let e = pair.project(&zeros).unwrap();
    for row in e.iter_rows() {
        let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
        assert!(row.iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #[test]
    fn projections_are_unit_norm(data in proptest::collection::vec(-50.0f32..50.0, 4 * 8)) {
        let pair = ModelPair::new(config(2, 1), 0.9, 5).unwrap();
        let f = Matrix::from_vec(4, 8, data).unwrap();
        let e = pair.project(&f).unwrap();
        for row in e.iter_rows() {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn momentum_update_examples() {
    let mut pair = ModelPair::new(config(2, 1), 0.999, 0).unwrap();
    for p in pair.key.params_mut() {
        p.data.fill(2.0);
    }
    for p in pair.query.params_mut() {
        p.data.fill(1.0);
    }
    let before = pair.key.clone();
    momentum_update(&mut pair, 1.0).unwrap();
    assert_eq!(pair.key, before);

    momentum_update(&mut pair, 0.999).unwrap();
    for p in pair.key.params() {
        assert!(p.data.iter().all(|&v| (v - 1.999).abs() < 1e-6));
    }

    momentum_update(&mut pair, 0.0).unwrap();
    for (k, q) in pair.key.params().iter().zip(pair.query.params()) {
        assert_eq!(k.data, q.data);
    }
    assert!(momentum_update(&mut pair, 1.5).is_err());
    assert!(momentum_update(&mut pair, -0.1).is_err());
}

#[test]
fn key_converges_geometrically_to_frozen_query() {
    let mut pair = ModelPair::new(config(2, 1), 0.9, 0).unwrap();
    for (i, p) in pair.query.params_mut().iter_mut().enumerate() {
        for (j, v) in p.data.iter_mut().enumerate() {
            *v += ((i * 7 + j) % 5) as f32 * 0.1;
        }
    }
    let dist = |pair: &ModelPair| -> f64 {
        pair.key
            .params()
            .iter()
            .zip(pair.query.params())
            .flat_map(|(k, q)| k.data.iter().zip(&q.data).map(|(a, b)| ((a - b) as f64).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    let mut d = dist(&pair);
    for _ in 0..10 {
        momentum_update(&mut pair, 0.9).unwrap();
        let next = dist(&pair);
        assert!((next / d - 0.9).abs() < 1e-3, "ratio {}", next / d);
        d = next;
    }
}

#[test]
fn layer_restricted_momentum_leaves_other_layers_alone() {
    let mut pair = ModelPair::new(config(2, 1), 0.9, 0).unwrap();
    for p in pair.query.params_mut() {
        p.data.iter_mut().for_each(|v| *v += 1.0);
    }
    let before = pair.key.checksum(|l| l != "block4");
    momentum_update_layers(&mut pair, 0.5, |l| l == "block4").unwrap();
    assert_eq!(pair.key.checksum(|l| l != "block4"), before);
    assert_ne!(pair.key.checksum(|l| l == "block4"), before);
}

/// Scalar objective `Σ w·h(f(x)) + Σ v·W f(x)` with fixed random weights.
fn objective(pair: &ModelPair, imgs: &[Image], w_emb: &[f32], w_log: &[f32]) -> f64 {
    let f = pair.encode(&batch(imgs)).unwrap();
    let e = pair.project(&f).unwrap();
    let l = pair.classify(&f).unwrap();
    let a: f64 = e.as_slice().iter().zip(w_emb).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
    let b: f64 = l.as_slice().iter().zip(w_log).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
    a + b
}

#[test]
fn backward_matches_finite_differences() {
    let mut pair = ModelPair::new(config(3, 2), 0.9, 11).unwrap();
    let imgs = images(3, 8, 4);
    let net = pair.network.clone();
    let n_emb = 3 * 5;
    let n_log = 3 * 6;
    let w_emb: Vec<f32> = (0..n_emb).map(|i| ((i * 37 % 17) as f32 - 8.0) / 8.0).collect();
    let w_log: Vec<f32> = (0..n_log).map(|i| ((i * 29 % 13) as f32 - 6.0) / 6.0).collect();

    let mut tape = Default::default();
    let mut cache = Default::default();
    let f = net.encode(&pair.query, &batch(&imgs), Some(&mut tape)).unwrap();
    let _e = net.project(&pair.query, &f, Some(&mut cache)).unwrap();
    let mut grads = Gradients::zeros_like(&pair.query);
    let trainable = vec![true; pair.query.len()];
    let g_emb = Matrix::from_vec(3, 5, w_emb.clone()).unwrap();
    let g_log = Matrix::from_vec(3, 6, w_log.clone()).unwrap();
    let mut gf = net.project_backward(&pair.query, &cache, &g_emb, &mut grads.values, &trainable);
    let gc = net.classify_backward(&pair.query, &f, &g_log, &mut grads.values, &trainable);
    for (a, b) in gf.as_mut_slice().iter_mut().zip(gc.as_slice()) {
        *a += b;
    }
    net.encode_backward(&pair.query, &tape, &gf, &mut grads.values, &trainable);

    let mut checked = 0;
    let mut bad = 0;
    for pi in 0..pair.query.len() {
        let n = pair.query.params()[pi].data.len();
        for j in [0, n / 3, n - 1] {
            let eps = 1e-3f32;
            let orig = pair.query.params()[pi].data[j];
            pair.query.params_mut()[pi].data[j] = orig + eps;
            let up = objective(&pair, &imgs, &w_emb, &w_log);
            pair.query.params_mut()[pi].data[j] = orig - eps;
            let down = objective(&pair, &imgs, &w_emb, &w_log);
            pair.query.params_mut()[pi].data[j] = orig;
            let fd = (up - down) / (2.0 * eps as f64);
            let an = grads.values[pi][j] as f64;
            checked += 1;
            if (fd - an).abs() > 2e-2 * (1.0 + fd.abs().max(an.abs())) {
                bad += 1;
                eprintln!("{} [{j}]: analytic {an} vs fd {fd}", pair.query.params()[pi].name);
            }
        }
    }
    // ReLU kinks can spoil a rare finite difference
    assert!(bad * 10 <= checked, "{bad} of {checked} gradient entries disagree");
}
