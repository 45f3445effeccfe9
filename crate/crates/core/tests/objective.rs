use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use savc_core::fantasy::virtual_label;
use savc_core::objective::{ce_fantasy_loss, ce_fantasy_loss_with_grad, cross_entropy_with_grad};
use savc_core::Matrix;

fn naive_ce(row: &[f64], y: usize) -> f64 {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    -(row[y].exp() / z).ln()
}

#[test]
fn fantasy_ce_matches_row_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (m, b, c0) = (4, 3, 5);
    let logits: Vec<Matrix<f64>> =
        (0..m).map(|_| Matrix::from_vec(b, c0 * m, (0..b * c0 * m).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap()).collect();
    let ys: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c0)).collect();
    let labels: Vec<Vec<usize>> = (0..m).map(|mi| ys.iter().map(|&y| virtual_label(y, mi, m).unwrap()).collect()).collect();
    let got = ce_fantasy_loss(&logits, &labels).unwrap();
    let mut want = 0.0;
    for (lg, lb) in logits.iter().zip(&labels) {
        for (i, &y) in lb.iter().enumerate() {
            want += naive_ce(lg.row(i), y);
        }
    }
    want /= (m * b) as f64;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn ce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits: Vec<Matrix<f64>> =
        (0..2).map(|_| Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()).collect();
    let labels = vec![vec![0, 3, 1], vec![2, 2, 0]];
    let (_, grads) = ce_fantasy_loss_with_grad(&logits, &labels).unwrap();
    let h = 1e-6;
    for v in 0..2 {
        for i in 0..3 {
            for j in 0..4 {
                let mut p = logits.clone();
                p[v].set(i, j, logits[v].get(i, j) + h);
                let mut n = logits.clone();
                n[v].set(i, j, logits[v].get(i, j) - h);
                let fd = (ce_fantasy_loss(&p, &labels).unwrap() - ce_fantasy_loss(&n, &labels).unwrap()) / (2.0 * h);
                assert!((fd - grads[v].get(i, j)).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn ce_is_stable_for_large_logits() {
    let logits = Matrix::from_rows(&[[1e4, -1e4, 0.0]]).unwrap();
    let (l, g) = cross_entropy_with_grad(&logits, &[1]).unwrap();
    assert!((l - 2e4).abs() < 1e-6);
    assert!(g.as_slice().iter().all(|v| v.is_finite()));
}
