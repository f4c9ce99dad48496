#![allow(dead_code)]

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use recpipe_core::corpus::{ItemId, SessionRecord, Vocab};
use recpipe_core::covis::PairTable;

pub type PairCounts = HashMap<(ItemId, ItemId), u32>;

/// Random sessions over `n_items` items per locale, prev lengths 2..=max_len.
pub fn random_sessions(seed: u64, n: usize, n_items: usize, locales: &[&str], max_len: usize) -> Vec<SessionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let locale = locales[rng.gen_range(0..locales.len())];
            let len = rng.gen_range(2..=max_len);
            let raws: Vec<String> = (0..len).map(|_| format!("i{}", rng.gen_range(0..n_items))).collect();
            let refs: Vec<&str> = raws.iter().map(String::as_str).collect();
            let next = format!("i{}", rng.gen_range(0..n_items));
            SessionRecord::new(i as u64, locale, &refs, Some(&next)).unwrap()
        })
        .collect()
}

/// The six counters by direct enumeration of index pairs, in the order
/// CS, CAXB, CAB, CBA, YAXB, YAB.
pub fn oracle_counts(sessions: &[SessionRecord]) -> [PairCounts; 6] {
    let mut out: [PairCounts; 6] = Default::default();
    for s in sessions {
        let p = &s.prev_items;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                if p[i] == p[j] {
                    continue;
                }
                *out[0].entry((p[i].clone(), p[j].clone())).or_default() += 1;
                *out[0].entry((p[j].clone(), p[i].clone())).or_default() += 1;
                *out[1].entry((p[i].clone(), p[j].clone())).or_default() += 1;
                if j == i + 1 {
                    *out[2].entry((p[i].clone(), p[j].clone())).or_default() += 1;
                    *out[3].entry((p[j].clone(), p[i].clone())).or_default() += 1;
                }
            }
        }
        if let Some(b) = &s.next_item {
            for a in p {
                *out[4].entry((a.clone(), b.clone())).or_default() += 1;
            }
            *out[5].entry((p[p.len() - 1].clone(), b.clone())).or_default() += 1;
        }
    }
    out
}

pub fn table_counts(t: &PairTable, vocab: &Vocab) -> PairCounts {
    t.iter()
        .map(|(a, b, c)| ((vocab.item(a).clone(), vocab.item(b).clone()), c))
        .collect()
}

/// Sessions drawn from one of two disjoint 20-item clusters.
pub fn two_cluster_sessions(n: usize, seed: u64) -> Vec<SessionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let base = if i % 2 == 0 { 0 } else { 20 };
            let len = rng.gen_range(3..=8);
            let raws: Vec<String> = (0..len).map(|_| format!("c{}", base + rng.gen_range(0..20))).collect();
            let refs: Vec<&str> = raws.iter().map(String::as_str).collect();
            let next = format!("c{}", base + rng.gen_range(0..20));
            SessionRecord::new(i as u64, "UK", &refs, Some(&next)).unwrap()
        })
        .collect()
}

pub fn cluster_of(id: &ItemId) -> usize {
    let n: usize = id.raw()[1..].parse().unwrap();
    n / 20
}

/// Best depth-1 split by exhaustive enumeration over raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f32,
    pub missing_left: bool,
    pub has_nulls: bool,
    pub gain: f64,
}

/// Enumerates every threshold between distinct values of every feature and
/// both null directions, using the same gain, constraints and tie order as
/// the trainer: lowest feature, then lowest threshold, null-left first.
pub fn oracle_split(cols: &[Vec<Option<f32>>], labels: &[u8], lambda: f64, min_leaf: usize) -> Option<OracleSplit> {
    let n = labels.len();
    let prior = (labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let g: Vec<f64> = labels.iter().map(|&y| prior - y as f64).collect();
    let h = prior * (1.0 - prior);
    let score = |gs: f64, cnt: usize| gs * gs / (cnt as f64 * h + lambda);
    let gt: f64 = g.iter().sum();
    let parent = score(gt, n);

    let mut cands: Vec<OracleSplit> = Vec::new();
    for (f, col) in cols.iter().enumerate() {
        let has_nulls = col.iter().any(Option::is_none);
        let mut distinct: Vec<f32> = col.iter().flatten().copied().collect();
        distinct.sort_by(f32::total_cmp);
        distinct.dedup();
        let mut eval = |threshold: f32, missing_left: bool| {
            let mut gl = 0.0;
            let mut nl = 0;
            for (i, v) in col.iter().enumerate() {
                let left = match v {
                    None => missing_left,
                    Some(x) => *x < threshold,
                };
                if left {
                    gl += g[i];
                    nl += 1;
                }
            }
            if nl < min_leaf.max(1) || n - nl < min_leaf.max(1) {
                return;
            }
            let gain = score(gl, nl) + score(gt - gl, n - nl) - parent;
            if gain > 0.0 {
                cands.push(OracleSplit {
                    feature: f,
                    threshold,
                    missing_left,
                    has_nulls,
                    gain,
                });
            }
        };
        if has_nulls && !distinct.is_empty() {
            eval(f32::NEG_INFINITY, true);
        }
        for &t in distinct.iter().skip(1) {
            eval(t, true);
            if has_nulls {
                eval(t, false);
            }
        }
    }
    let best = cands.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
    // First candidate in enumeration order that ties the maximum.
    cands.into_iter().find(|c| c.gain >= best - 1e-9 * best.abs())
}
