//! Replay memory: reservoir-sampled buffers of raw samples or latent codes,
//! uniform and similarity-based retrieval, and byte accounting.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{cosine, Scalar};

/// Storage cost of one scalar, independent of compute precision.
pub const BYTES_PER_SCALAR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Raw,
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem<S> {
    pub kind: PayloadKind,
    pub payload: Vec<S>,
    /// Prompt-variant condition stored with the sample.
    pub cond: Vec<S>,
    pub task_id: usize,
    /// Offer index at which the item entered the buffer.
    pub sequence: u64,
}

impl<S: Scalar> ReplayItem<S> {
    pub fn new(kind: PayloadKind, payload: Vec<S>, cond: Vec<S>, task_id: usize) -> Self {
        Self {
            kind,
            payload,
            cond,
            task_id,
            sequence: 0,
        }
    }

    pub fn bytes(&self) -> usize {
        self.payload.len() * BYTES_PER_SCALAR
    }
}

/// Fixed-capacity reservoir of replay items.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer<S> {
    capacity: usize,
    items: Vec<ReplayItem<S>>,
    seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryAccount {
    pub total_bytes: usize,
    pub per_item_bytes: Vec<usize>,
    pub item_count: usize,
}

impl<S: Scalar> MemoryBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seen: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[ReplayItem<S>] {
        &self.items
    }

    /// Classic reservoir update (Algorithm R).
    pub fn reservoir_offer<R: Rng + ?Sized>(&mut self, mut item: ReplayItem<S>, rng: &mut R) {
        item.sequence = self.seen;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else if self.capacity > 0 {
            let j = rng.random_range(0..=self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = item;
            }
        }
        self.seen += 1;
    }

    /// `k` independent uniform draws with replacement.
    pub fn retrieve_uniform<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&ReplayItem<S>>> {
        if self.items.is_empty() {
            return Err(Error::Retrieval("buffer is empty"));
        }
        Ok((0..k)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }

    /// Up to `k` items with the highest cosine similarity to `query`,
    /// ordered by similarity and then by insertion order. Zero-norm payloads
    /// rank last.
    pub fn retrieve_topk_similar(&self, query: &[S], k: usize) -> Result<Vec<(&ReplayItem<S>, S)>> {
        if self.items.is_empty() {
            return Err(Error::Retrieval("buffer is empty"));
        }
        if query.iter().all(|&q| q == S::zero()) {
            return Err(Error::Retrieval("query has zero norm"));
        }
        let mut scored = Vec::with_capacity(self.items.len());
        for item in &self.items {
            check_dim("similarity query", item.payload.len(), query.len())?;
            let s = cosine(&item.payload, query).unwrap_or(S::neg_infinity());
            scored.push((item, s));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.sequence.cmp(&b.0.sequence))
        });
        scored.truncate(k);
        Ok(scored)
    }

    pub fn account_memory(&self) -> MemoryAccount {
        let per_item_bytes: Vec<usize> = self.items.iter().map(ReplayItem::bytes).collect();
        MemoryAccount {
            total_bytes: per_item_bytes.iter().sum(),
            item_count: per_item_bytes.len(),
            per_item_bytes,
        }
    }

    /// Number of stored items per task id.
    pub fn task_composition(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut m = std::collections::BTreeMap::new();
        for it in &self.items {
            *m.entry(it.task_id).or_insert(0) += 1;
        }
        m
    }

    /// One JSON object per line: `task_id`, `kind`, `payload`, `cond`.
    pub fn dump_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line {
            task_id: usize,
            kind: PayloadKind,
            sequence: u64,
            payload: Vec<f64>,
            cond: Vec<f64>,
        }
        for it in &self.items {
            let line = Line {
                task_id: it.task_id,
                kind: it.kind,
                sequence: it.sequence,
                payload: it.payload.iter().map(|v| v.as_f64()).collect(),
                cond: it.cond.iter().map(|v| v.as_f64()).collect(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Arithmetic mean of the current batch's latents.
pub fn form_query<S: Scalar>(latents: &[Vec<S>]) -> Result<Vec<S>> {
    let first = latents.first().ok_or(Error::Retrieval("query batch is empty"))?;
    let mut q = vec![S::zero(); first.len()];
    for z in latents {
        check_dim("query batch", q.len(), z.len())?;
        for (a, &b) in q.iter_mut().zip(z) {
            *a += b;
        }
    }
    let n = S::lit(latents.len() as f64);
    q.iter_mut().for_each(|v| *v /= n);
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetCapacities {
    pub raw_capacity: usize,
    pub latent_capacity: usize,
    /// The budget could not hold even one raw sample.
    pub raw_underflow: bool,
    pub latent_underflow: bool,
}

/// Items of each representation that fit in the same byte budget.
pub fn equal_budget_capacities(
    budget_bytes: u64,
    raw_bytes_per_item: u64,
    latent_bytes_per_item: u64,
) -> Result<BudgetCapacities> {
    if raw_bytes_per_item == 0 || latent_bytes_per_item == 0 {
        return Err(Error::Config("per-item sizes must be positive".into()));
    }
    let raw = budget_bytes / raw_bytes_per_item;
    let latent = budget_bytes / latent_bytes_per_item;
    Ok(BudgetCapacities {
        raw_capacity: raw as usize,
        latent_capacity: latent as usize,
        raw_underflow: raw == 0,
        latent_underflow: latent == 0,
    })
}

/// Storage sizes at full image scale: a 512×512 RGB float32 image and a
/// 64×64×4 float32 latent.
pub mod full_scale {
    use super::BYTES_PER_SCALAR;

    pub const IMAGE_BYTES: u64 = (512 * 512 * 3 * BYTES_PER_SCALAR) as u64;
    pub const LATENT_BYTES: u64 = (64 * 64 * 4 * BYTES_PER_SCALAR) as u64;
    const MIB: u64 = 1 << 20;
    pub const SMALL_BUDGET: u64 = 30 * MIB;
    pub const MEDIUM_BUDGET: u64 = 60 * MIB;
    pub const LARGE_BUDGET: u64 = 300 * MIB;
}
