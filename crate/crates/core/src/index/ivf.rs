//! IVF-flat approximate search: k-means inverted lists with exact dot-product
//! scoring inside the probed lists. Probing more lists only ever widens the
//! candidate set, so recall is non-decreasing in `nprobe` and reaches exact
//! search at `nprobe = nlist`.

use rayon::prelude::*;

use super::{dot, sort_hits, Hit, PhraseTable};
use crate::error::{Error, Result};

pub const KMEANS_ITERS: usize = 20;

#[derive(Debug, Clone)]
pub struct IvfIndex {
    pub dim: usize,
    pub nlist: usize,
    /// [nlist × dim] centroid matrix.
    pub centroids: Vec<f32>,
    /// Entry ids per centroid, each list ascending.
    pub lists: Vec<Vec<u32>>,
}

/// Index of the best centroid for one embedding: highest dot product, ties to
/// the smaller centroid index.
fn assign_one(emb: &[f32], centroids: &[f32], nlist: usize, dim: usize) -> usize {
    let mut best = 0usize;
    let mut best_score = f32::NEG_INFINITY;
    for c in 0..nlist {
        let s = dot(emb, &centroids[c * dim..(c + 1) * dim]);
        if s > best_score {
            best_score = s;
            best = c;
        }
    }
    best
}

pub fn build_ivf(table: &PhraseTable, nlist: usize, seed: u64) -> Result<IvfIndex> {
    let n = table.len();
    if nlist == 0 || nlist > n {
        return Err(Error::Config(format!(
            "nlist {nlist} must be in 1..={n} (table size)"
        )));
    }
    let dim = table.dim;

    // Seeded init: nlist distinct entries as starting centroids.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, nlist);
    let mut centroids = vec![0.0f32; nlist * dim];
    for (c, pick) in picks.into_iter().enumerate() {
        centroids[c * dim..(c + 1) * dim].copy_from_slice(table.embedding(pick as u32));
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        // Assignment: pure map, parallel, deterministic.
        assignment = (0..n)
            .into_par_iter()
            .map(|i| assign_one(table.embedding(i as u32), &centroids, nlist, dim))
            .collect();

        // Update: sequential accumulation in entry order (bit-reproducible).
        let mut sums = vec![0.0f64; nlist * dim];
        let mut counts = vec![0usize; nlist];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            let row = table.embedding(i as u32);
            let srow = &mut sums[c * dim..(c + 1) * dim];
            for (s, &v) in srow.iter_mut().zip(row) {
                *s += v as f64;
            }
        }
        for c in 0..nlist {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for d in 0..dim {
                centroids[c * dim + d] = (sums[c * dim + d] * inv) as f32;
            }
        }

        // Re-seed empty clusters from the worst-represented entries: lowest
        // dot with their own centroid, ties by entry id.
        let empties: Vec<usize> = (0..nlist).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut ranked: Vec<(f32, u32)> = assignment
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let emb = table.embedding(i as u32);
                    (dot(emb, &centroids[c * dim..(c + 1) * dim]), i as u32)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            for (slot, &c) in empties.iter().enumerate() {
                if slot >= ranked.len() {
                    break;
                }
                let id = ranked[slot].1;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(table.embedding(id));
            }
        }
    }

    // Final assignment builds the inverted lists.
    assignment = (0..n)
        .into_par_iter()
        .map(|i| assign_one(table.embedding(i as u32), &centroids, nlist, dim))
        .collect();
    let mut lists = vec![Vec::new(); nlist];
    for (i, &c) in assignment.iter().enumerate() {
        lists[c].push(i as u32);
    }

    Ok(IvfIndex { dim, nlist, centroids, lists })
}

pub fn search_ivf(
    table: &PhraseTable,
    index: &IvfIndex,
    query: &[f32],
    k: usize,
    nprobe: usize,
) -> Result<Vec<Hit>> {
    if query.len() != index.dim || index.dim != table.dim {
        return Err(Error::DimMismatch {
            expected: table.dim,
            got: query.len(),
            context: "search_ivf query".into(),
        });
    }
    if nprobe == 0 || nprobe > index.nlist {
        return Err(Error::Config(format!(
            "nprobe {nprobe} must be in 1..={}",
            index.nlist
        )));
    }

    // Rank centroids, probe the best nprobe.
    let mut ranked: Vec<(f32, usize)> = (0..index.nlist)
        .map(|c| (dot(query, &index.centroids[c * index.dim..(c + 1) * index.dim]), c))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut hits = Vec::new();
    for &(_, c) in ranked.iter().take(nprobe) {
        for &id in &index.lists[c] {
            hits.push(Hit { entry_id: id, score: dot(table.embedding(id), query) });
        }
    }
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(hits)
}

/// Fraction of the exact top-k that the approximate result recovered.
pub fn recall_at_k(approx: &[Hit], exact: &[Hit]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let exact_ids: std::collections::HashSet<u32> = exact.iter().map(|h| h.entry_id).collect();
    let found = approx.iter().filter(|h| exact_ids.contains(&h.entry_id)).count();
    found as f64 / exact.len() as f64
}
