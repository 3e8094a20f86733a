//! Independent oracles and random fixtures shared by the integration tests
//! and the acceptance runner.

#![allow(dead_code)]

use clothswap_core::{Batch, Image, Matrix, RngStream, SemanticMask};

/// Random batch with `b` samples, per-pixel random labels and colours.
pub fn random_batch(rng: &mut RngStream, b: usize, h: usize, w: usize) -> Batch {
    let mut images = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    for _ in 0..b {
        let data = (0..3 * h * w).map(|_| rng.uniform()).collect();
        images.push(Image::new(3, h, w, data).unwrap());
        let labels = (0..h * w).map(|_| rng.below(6) as u8).collect();
        masks.push(SemanticMask::new(h, w, labels).unwrap());
    }
    let ids = (0..b).map(|_| rng.below(4)).collect();
    Batch::new(images, masks, ids).unwrap()
}

/// Sorted bit patterns of every pixel of `class` across the batch.
pub fn class_multiset(batch: &Batch, class: u8) -> Vec<[u64; 3]> {
    let mut out = Vec::new();
    for (img, mask) in batch.images().iter().zip(batch.masks()) {
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.get(r, c) == class {
                    out.push([0, 1, 2].map(|ch| img.get(ch, r, c).to_bits()));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Batch-hard triplet by enumerating every (anchor, positive, negative)
/// triple; the per-anchor loss is the worst hinge over all its triples.
pub fn triplet_oracle(f: &Matrix, labels: &[usize], margin: f64) -> f64 {
    let n = f.rows();
    let mut total = 0.0;
    for a in 0..n {
        let mut worst = 0.0f64;
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] == labels[a] {
                    continue;
                }
                let hinge = margin + dist(f.row(a), f.row(p)) - dist(f.row(a), f.row(q));
                worst = worst.max(hinge);
            }
        }
        total += worst;
    }
    total / n as f64
}

pub struct MetricOracle {
    pub cmc: Vec<f64>,
    pub map: f64,
}

/// CMC and mAP by pairwise counting: a gallery item's rank is the number of
/// gallery items strictly closer, plus equally close items at lower gallery
/// positions.
pub fn metric_oracle(f: &Matrix, ids: &[usize], query: &[usize], gallery: &[usize]) -> MetricOracle {
    let ng = gallery.len();
    let mut cmc = vec![0.0; ng];
    let mut ap_sum = 0.0;
    for &q in query {
        let d: Vec<f64> = gallery.iter().map(|&g| dist(f.row(q), f.row(g))).collect();
        let rank_of = |i: usize| {
            (0..ng)
                .filter(|&j| d[j] < d[i] || (d[j] == d[i] && j < i))
                .count()
        };
        let rel_ranks: Vec<usize> = {
            let mut v: Vec<usize> = (0..ng).filter(|&i| ids[gallery[i]] == ids[q]).map(rank_of).collect();
            v.sort_unstable();
            v
        };
        let first = rel_ranks[0];
        for slot in cmc.iter_mut().skip(first) {
            *slot += 1.0;
        }
        let ap: f64 = rel_ranks
            .iter()
            .enumerate()
            .map(|(k, &r)| (k + 1) as f64 / (r + 1) as f64)
            .sum::<f64>()
            / rel_ranks.len() as f64;
        ap_sum += ap;
    }
    let nq = query.len() as f64;
    MetricOracle {
        cmc: cmc.into_iter().map(|c| c / nq).collect(),
        map: ap_sum / nq,
    }
}

/// Random protocol over small-integer embeddings (ties are common) where
/// every query has at least one same-identity gallery record.
pub fn random_protocol(rng: &mut RngStream) -> (Matrix, Vec<usize>, Vec<usize>, Vec<usize>) {
    let ng = 1 + rng.below(20);
    let nq = 1 + rng.below(10);
    let d = 1 + rng.below(4);
    let n_ids = 1 + rng.below(6);
    let n = ng + nq;
    let data = (0..n * d).map(|_| rng.below(4) as f64).collect();
    let f = Matrix::from_vec(n, d, data).unwrap();
    let mut ids: Vec<usize> = (0..n).map(|_| rng.below(n_ids)).collect();
    let gallery: Vec<usize> = (0..ng).collect();
    let query: Vec<usize> = (ng..n).collect();
    for &q in &query {
        if !gallery.iter().any(|&g| ids[g] == ids[q]) {
            ids[q] = ids[gallery[rng.below(ng)]];
        }
    }
    (f, ids, query, gallery)
}
