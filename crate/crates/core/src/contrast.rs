//! Momentum feature queue and the supervised contrastive loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::tensor::Matrix;

/// Unit-norm tolerance accepted for enqueued keys.
const UNIT_TOL: f64 = 1e-3;

/// Fixed-capacity FIFO of key embeddings with aligned virtual labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastQueue {
    capacity: usize,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    head: usize,
    fill: usize,
}

impl ContrastQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        ensure!(capacity >= 1, InvalidConfig, "queue length must be at least 1");
        ensure!(dim >= 1, InvalidConfig, "queue feature dimension must be at least 1");
        Ok(Self { capacity, dim, features: vec![0.0; capacity * dim], labels: vec![0; capacity], head: 0, fill: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.fill
    }

    pub fn is_empty(&self) -> bool {
        self.fill == 0
    }

    /// Slot the next key is written to.
    pub fn write_head(&self) -> usize {
        self.head
    }

    /// Appends keys, evicting the oldest entries once full.
    pub fn enqueue(&mut self, keys: &Matrix<f64>, labels: &[usize]) -> Result<()> {
        ensure!(keys.rows() == labels.len(), InvalidInput, "{} keys but {} labels", keys.rows(), labels.len());
        ensure!(keys.rows() <= self.capacity, InvalidConfig, "batch of {} keys exceeds queue length {}", keys.rows(), self.capacity);
        ensure!(
            keys.rows() == 0 || keys.cols() == self.dim,
            InvalidInput,
            "keys have dimension {}, queue stores {}",
            keys.cols(),
            self.dim
        );
        for (i, k) in keys.iter_rows().enumerate() {
            let n = libm::sqrt(crate::tensor::norm_sq(k));
            ensure!((n - 1.0).abs() <= UNIT_TOL, InvalidInput, "key {i} has norm {n}, expected unit norm");
        }
        for (k, &y) in keys.iter_rows().zip(labels) {
            self.features[self.head * self.dim..][..self.dim].copy_from_slice(k);
            self.labels[self.head] = y;
            self.head = (self.head + 1) % self.capacity;
            self.fill = (self.fill + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Valid entries in storage (slot) order.
    pub fn stored_features(&self) -> &[f64] {
        &self.features[..self.fill * self.dim]
    }

    pub fn stored_labels(&self) -> &[usize] {
        &self.labels[..self.fill]
    }

    /// Valid entries from oldest to newest.
    pub fn oldest_first(&self) -> Vec<(&[f64], usize)> {
        let start = if self.fill < self.capacity { 0 } else { self.head };
        (0..self.fill)
            .map(|i| {
                let s = (start + i) % self.capacity;
                (&self.features[s * self.dim..][..self.dim], self.labels[s])
            })
            .collect()
    }

    /// Restores a queue from its raw parts (checkpoint loading).
    pub fn from_parts(capacity: usize, dim: usize, features: Vec<f64>, labels: Vec<usize>, head: usize) -> Result<Self> {
        let fill = labels.len();
        ensure!(fill <= capacity, InvalidData, "queue holds {fill} entries but has capacity {capacity}");
        ensure!(features.len() == fill * dim, InvalidData, "queue features have {} values, expected {}", features.len(), fill * dim);
        ensure!(head < capacity.max(1), InvalidData, "queue head {head} out of range");
        ensure!(fill == capacity || head == fill, InvalidData, "partially filled queue must have head == fill");
        let mut q = Self::new(capacity, dim)?;
        q.features[..features.len()].copy_from_slice(&features);
        q.labels[..fill].copy_from_slice(&labels);
        q.head = head;
        q.fill = fill;
        Ok(q)
    }
}

/// `A(x) = k ∪ Q`: the own key followed by the queue in storage order.
pub fn candidate_set(queue: &ContrastQueue, own_key: &[f64], own_label: usize) -> (Matrix<f64>, Vec<usize>) {
    let mut feats = Vec::with_capacity((queue.len() + 1) * own_key.len());
    feats.extend_from_slice(own_key);
    feats.extend_from_slice(queue.stored_features());
    let mut labels = Vec::with_capacity(queue.len() + 1);
    labels.push(own_label);
    labels.extend_from_slice(queue.stored_labels());
    let rows = labels.len();
    (Matrix::from_vec(rows, own_key.len(), feats).expect("consistent shapes"), labels)
}

/// Query/key embeddings of one step with their virtual labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub q: Matrix<f64>,
    pub k: Matrix<f64>,
    pub virtual_labels: Vec<usize>,
    pub tau: f64,
}

/// Mean supervised contrastive loss, with `q_i` contrasted against
/// `{k_i} ∪ Q` and positives sharing its virtual label.
pub fn scl_loss(batch: &ContrastBatch, queue: &ContrastQueue) -> Result<f64> {
    let own: Vec<usize> = (0..batch.q.rows()).collect();
    scl_loss_with_grad(&batch.q, &batch.k, &own, &batch.virtual_labels, batch.tau, queue).map(|(l, _)| l)
}

#[allow(clippy::too_many_arguments)]
fn dgemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Loss averaged over queries and its gradient with respect to `queries`.
///
/// Query `i` uses key row `own_key[i]` as its own key and inherits that key's
/// label. Several queries may share one key (local crops).
pub fn scl_loss_with_grad(
    queries: &Matrix<f64>,
    keys: &Matrix<f64>,
    own_key: &[usize],
    key_labels: &[usize],
    tau: f64,
    queue: &ContrastQueue,
) -> Result<(f64, Matrix<f64>)> {
    ensure!(tau > 0.0 && tau.is_finite(), InvalidConfig, "temperature must be positive, got {tau}");
    let n = queries.rows();
    let p = queries.cols();
    ensure!(own_key.len() == n, InvalidInput, "{} own-key indices for {n} queries", own_key.len());
    ensure!(key_labels.len() == keys.rows(), InvalidInput, "{} labels for {} keys", key_labels.len(), keys.rows());
    ensure!(keys.rows() == 0 || keys.cols() == p, InvalidInput, "key dimension {} differs from query dimension {p}", keys.cols());
    ensure!(queue.is_empty() || queue.dim() == p, InvalidInput, "queue dimension {} differs from query dimension {p}", queue.dim());
    ensure!(own_key.iter().all(|&k| k < keys.rows()), InvalidInput, "own-key index out of range");
    if n == 0 {
        return Ok((0.0, Matrix::zeros(0, p)));
    }
    let l = queue.len();
    let qf = queue.stored_features();
    let ql = queue.stored_labels();
    // sims[i, j] = q_i · Q_j
    let mut sims = vec![0.0; n * l];
    dgemm(n, p, l, queries.as_slice(), (p, 1), qf, (1, p), &mut sims);

    let inv_tau = 1.0 / tau;
    let mut coef = vec![0.0; n * l];
    let mut own_coef = vec![0.0; n];
    let mut total = 0.0;
    let mut logits = vec![0.0; l + 1];
    for i in 0..n {
        let q = queries.row(i);
        let kidx = own_key[i];
        let label = key_labels[kidx];
        logits[0] = crate::tensor::dot(q, keys.row(kidx)) * inv_tau;
        for (dst, &s) in logits[1..].iter_mut().zip(&sims[i * l..(i + 1) * l]) {
            *dst = s * inv_tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
        let log_z = max + libm::log(sum);
        let n_pos = 1 + ql.iter().filter(|&&y| y == label).count();
        let inv_pos = 1.0 / n_pos as f64;
        let mut pos_sum = logits[0] - log_z;
        for (j, &y) in ql.iter().enumerate() {
            if y == label {
                pos_sum += logits[j + 1] - log_z;
            }
        }
        total += -pos_sum * inv_pos;
        own_coef[i] = libm::exp(logits[0] - log_z) - inv_pos;
        for (j, &y) in ql.iter().enumerate() {
            let prob = libm::exp(logits[j + 1] - log_z);
            coef[i * l + j] = prob - if y == label { inv_pos } else { 0.0 };
        }
    }
    let scale = inv_tau / n as f64;
    let mut grad = vec![0.0; n * p];
    dgemm(n, l, p, &coef, (l, 1), qf, (p, 1), &mut grad);
    for i in 0..n {
        let k = keys.row(own_key[i]);
        for ((g, &kv), _) in grad[i * p..(i + 1) * p].iter_mut().zip(k).zip(0..p) {
            *g = (*g + own_coef[i] * kv) * scale;
        }
    }
    Ok((total / n as f64, Matrix::from_vec(n, p, grad)?))
}
