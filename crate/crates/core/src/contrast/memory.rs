use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    seq: u64,
    v: Vec<f64>,
}

/// Per-class FIFO queues of detached unit-norm embeddings plus an
/// exponential-momentum prototype per class.
///
/// Entries are plain copies, never tape variables, so nothing downstream can
/// route a gradient into them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMemory {
    dim: usize,
    capacity: usize,
    queues: Vec<VecDeque<Entry>>,
    prototypes: Vec<Option<Vec<f64>>>,
    next_seq: u64,
}

/// Indices into [`ClassMemory::bank`] selected for one anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Retrieval {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n >= 1e-12) {
        return false;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    true
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ClassMemory {
    pub fn new(num_classes: usize, dim: usize, capacity: usize) -> Self {
        Self {
            dim,
            capacity,
            queues: vec![VecDeque::new(); num_classes],
            prototypes: vec![None; num_classes],
            next_seq: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.queues.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queue_len(&self, class: usize) -> usize {
        self.queues[class].len()
    }

    /// Stored vectors of one class, oldest first.
    pub fn queue(&self, class: usize) -> impl Iterator<Item = &[f64]> {
        self.queues[class].iter().map(|e| e.v.as_slice())
    }

    /// Insertion sequence numbers of one class, oldest first.
    pub fn queue_seqs(&self, class: usize) -> impl Iterator<Item = u64> + '_ {
        self.queues[class].iter().map(|e| e.seq)
    }

    pub fn prototype(&self, class: usize) -> Option<&[f64]> {
        self.prototypes[class].as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(|q| q.is_empty()) && self.prototypes.iter().all(|p| p.is_none())
    }

    pub fn clear(&mut self) {
        for q in &mut self.queues {
            q.clear();
        }
        for p in &mut self.prototypes {
            *p = None;
        }
    }

    /// Appends one vector to a class queue, evicting the oldest beyond capacity.
    pub fn enqueue(&mut self, class: usize, v: &[f64]) {
        let q = &mut self.queues[class];
        q.push_back(Entry { seq: self.next_seq, v: v.to_vec() });
        self.next_seq += 1;
        while q.len() > self.capacity {
            q.pop_front();
        }
    }

    /// Sets or blends a prototype: `mu <- norm(m mu + (1 - m) mean)`, or
    /// `norm(mean)` on first use. A mean that normalizes to nothing leaves
    /// the prototype unchanged.
    pub fn update_prototype(&mut self, class: usize, mean: &[f64], momentum: f64) {
        let mut next: Vec<f64> = match &self.prototypes[class] {
            None => mean.to_vec(),
            Some(mu) => mu.iter().zip(mean).map(|(a, b)| momentum * a + (1.0 - momentum) * b).collect(),
        };
        if normalize(&mut next) {
            self.prototypes[class] = Some(next);
        }
    }

    /// All stored vectors in class order (each queue oldest first), as a flat
    /// `n x dim` buffer together with `(class, seq)` per row.
    pub fn bank(&self) -> (Vec<f64>, Vec<(usize, u64)>) {
        let mut flat = Vec::new();
        let mut meta = Vec::new();
        for (c, q) in self.queues.iter().enumerate() {
            for e in q {
                flat.extend_from_slice(&e.v);
                meta.push((c, e.seq));
            }
        }
        (flat, meta)
    }

    /// Top-`p` same-class and top-`q` other-class bank rows by dot product
    /// with `anchor`. Ties break toward older entries.
    pub fn retrieve(&self, anchor: &[f64], label: usize, p: usize, q: usize) -> Retrieval {
        let (flat, meta) = self.bank();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (row, &(c, seq)) in meta.iter().enumerate() {
            let s = dot(anchor, &flat[row * self.dim..(row + 1) * self.dim]);
            if c == label {
                pos.push((s, seq, row));
            } else {
                neg.push((s, seq, row));
            }
        }
        let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        pos.sort_by(order);
        neg.sort_by(order);
        Retrieval {
            positives: pos.into_iter().take(p).map(|t| t.2).collect(),
            negatives: neg.into_iter().take(q).map(|t| t.2).collect(),
        }
    }
}

/// Post-step memory refresh: per class present in the batch, blend the
/// prototype toward the class mean, then enqueue every row as a detached copy.
pub fn memory_update<T: Scalar>(mem: &mut ClassMemory, z: &Tensor<T>, labels: &[usize], momentum: f64) -> Result<()> {
    if z.cols() != mem.dim || z.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "memory_update: batch {:?} with {} labels, memory dim {}",
            z.shape(),
            labels.len(),
            mem.dim
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= mem.num_classes()) {
        return Err(Error::InvalidArgument(format!("memory_update: label {bad} out of range")));
    }
    let rows: Vec<Vec<f64>> = (0..z.rows()).map(|r| z.row(r).iter().map(|v| v.to_f64().unwrap()).collect()).collect();
    for c in 0..mem.num_classes() {
        let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; mem.dim];
        for r in &members {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        let inv = 1.0 / members.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        mem.update_prototype(c, &mean, momentum);
    }
    for (r, &l) in rows.iter().zip(labels) {
        mem.enqueue(l, r);
    }
    Ok(())
}
