//! Skip-gram with negative sampling over sessions-as-sentences.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingKind, EmbeddingTable};
use crate::corpus::{ItemId, SessionRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Item2VecParams {
    pub dims: usize,
    pub subsample_threshold: f64,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: u32,
    pub initial_lr: f32,
    pub final_lr: f32,
    pub seed: u64,
}

impl Default for Item2VecParams {
    fn default() -> Self {
        Item2VecParams {
            dims: 100,
            subsample_threshold: 1e-3,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 5,
            initial_lr: 0.025,
            final_lr: 0.0001,
            seed: 1,
        }
    }
}

impl Item2VecParams {
    /// Tuned dimensions and subsampling thresholds for the six marketplace
    /// locales; anything else gets the defaults.
    pub fn for_locale(code: &str) -> Self {
        let (dims, t) = match code {
            "DE" => (100, 1e-3),
            "JP" => (100, 1e-4),
            "UK" => (100, 1e-4),
            "IT" => (100, 1e-3),
            "FR" => (75, 1e-3),
            "ES" => (100, 1e-4),
            _ => (100, 1e-3),
        };
        Item2VecParams {
            dims,
            subsample_threshold: t,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.window == 0 || self.epochs == 0 {
            return Err(Error::invalid("item2vec dims, window and epochs must be positive"));
        }
        if !(self.subsample_threshold > 0.0 && self.subsample_threshold <= 1.0) {
            return Err(Error::invalid("subsample_threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-worker trainer. Deterministic for a fixed seed and sentence order.
pub struct SkipGram {
    params: Item2VecParams,
    words: Vec<ItemId>,
    index: BTreeMap<ItemId, u32>,
    sentences: Vec<Vec<u32>>,
    keep_prob: Vec<f32>,
    noise: WeightedIndex<f64>,
    input: Vec<f32>,
    output: Vec<f32>,
    rng: ChaCha8Rng,
    total_words: u64,
    epochs_done: usize,
}

impl SkipGram {
    pub fn new(sentences: &[Vec<ItemId>], params: Item2VecParams) -> Result<Self> {
        params.validate()?;
        let mut counts: BTreeMap<ItemId, u64> = BTreeMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.clone()).or_default() += 1;
            }
        }
        counts.retain(|_, c| *c >= params.min_count as u64);
        if counts.is_empty() {
            return Err(Error::invalid("item2vec corpus is empty after min_count filtering"));
        }
        let words: Vec<ItemId> = counts.keys().cloned().collect();
        let index: BTreeMap<ItemId, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let freq: Vec<u64> = counts.values().copied().collect();
        let total: u64 = freq.iter().sum();

        // Keep probability sqrt(t/f) + t/f, capped at 1.
        let t = params.subsample_threshold;
        let keep_prob = freq
            .iter()
            .map(|&c| {
                let f = c as f64 / total as f64;
                ((t / f).sqrt() + t / f).min(1.0) as f32
            })
            .collect();
        let noise = WeightedIndex::new(freq.iter().map(|&c| (c as f64).powf(0.75)))
            .map_err(|e| Error::invalid(e.to_string()))?;

        let encoded: Vec<Vec<u32>> = sentences
            .iter()
            .map(|s| s.iter().filter_map(|w| index.get(w).copied()).collect::<Vec<_>>())
            .filter(|s: &Vec<u32>| !s.is_empty())
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let d = params.dims;
        let input = (0..words.len() * d)
            .map(|_| (rng.gen::<f32>() - 0.5) / d as f32)
            .collect();
        let output = vec![0.0; words.len() * d];
        Ok(SkipGram {
            params,
            words,
            index,
            sentences: encoded,
            keep_prob,
            noise,
            input,
            output,
            rng,
            total_words: total,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn vocab_len(&self) -> usize {
        self.words.len()
    }

    fn lr_at(&self, done: u64) -> f32 {
        let total = (self.params.epochs as u64 * self.total_words).max(1);
        let progress = (done as f64 / total as f64).min(1.0) as f32;
        self.params.initial_lr - (self.params.initial_lr - self.params.final_lr) * progress
    }

    /// One pass over all sentences.
    pub fn train_epoch(&mut self) {
        let d = self.params.dims;
        let window = self.params.window;
        let mut done = self.epochs_done as u64 * self.total_words;
        let mut kept: Vec<u32> = Vec::new();
        let mut neu1e = vec![0f32; d];
        let sentences = std::mem::take(&mut self.sentences);
        for sent in &sentences {
            let lr = self.lr_at(done);
            done += sent.len() as u64;
            kept.clear();
            for &w in sent {
                let p = self.keep_prob[w as usize];
                if p >= 1.0 || self.rng.gen::<f32>() < p {
                    kept.push(w);
                }
            }
            for pos in 0..kept.len() {
                let reduced = window - self.rng.gen_range(0..window);
                let lo = pos.saturating_sub(reduced);
                let hi = (pos + reduced).min(kept.len() - 1);
                for ctx in lo..=hi {
                    if ctx == pos {
                        continue;
                    }
                    self.train_pair(kept[pos], kept[ctx], lr, &mut neu1e);
                }
            }
        }
        self.sentences = sentences;
        self.epochs_done += 1;
    }

    fn train_pair(&mut self, center: u32, context: u32, lr: f32, neu1e: &mut [f32]) {
        let d = self.params.dims;
        neu1e.iter_mut().for_each(|x| *x = 0.0);
        let c = center as usize * d;
        for k in 0..=self.params.negatives {
            let (target, label) = if k == 0 {
                (context, 1.0)
            } else {
                let t = self.noise.sample(&mut self.rng) as u32;
                if t == context {
                    continue;
                }
                (t, 0.0)
            };
            let t = target as usize * d;
            let inv = &self.input[c..c + d];
            let outv = &mut self.output[t..t + d];
            let f: f32 = inv.iter().zip(outv.iter()).map(|(a, b)| a * b).sum();
            let g = (label - sigmoid(f)) * lr;
            for ((e, o), i) in neu1e.iter_mut().zip(outv.iter_mut()).zip(inv) {
                *e += g * *o;
                *o += g * i;
            }
        }
        for (x, e) in self.input[c..c + d].iter_mut().zip(neu1e.iter()) {
            *x += e;
        }
    }

    pub fn train(&mut self) {
        while self.epochs_done < self.params.epochs {
            self.train_epoch();
        }
    }

    /// Negative-sampling objective for one `(center, context)` pair with the
    /// given negatives; `None` if any item is out of vocabulary.
    pub fn pair_loss(&self, center: &ItemId, context: &ItemId, negatives: &[ItemId]) -> Option<f64> {
        let d = self.params.dims;
        let c = *self.index.get(center)? as usize * d;
        let inv = &self.input[c..c + d];
        let score = |w: &ItemId| -> Option<f64> {
            let t = *self.index.get(w)? as usize * d;
            Some(
                inv.iter()
                    .zip(&self.output[t..t + d])
                    .map(|(a, b)| (a * b) as f64)
                    .sum(),
            )
        };
        let ln_sig = |x: f64| -(1.0 + (-x).exp()).ln();
        let mut loss = -ln_sig(score(context)?);
        for n in negatives {
            loss -= ln_sig(-score(n)?);
        }
        Some(loss)
    }

    pub fn to_table(&self) -> EmbeddingTable {
        let d = self.params.dims;
        EmbeddingTable::new(
            EmbeddingKind::Item2Vec,
            d,
            self.words
                .iter()
                .enumerate()
                .map(|(i, w)| (w.clone(), self.input[i * d..(i + 1) * d].to_vec())),
        )
        .expect("trainer keeps vectors finite and well-sized")
    }
}

/// Trains on pre-built sentences. All items must share one locale.
pub fn train_item2vec_sentences(sentences: &[Vec<ItemId>], params: &Item2VecParams) -> Result<EmbeddingTable> {
    let mut locale = None;
    for w in sentences.iter().flatten() {
        match &locale {
            None => locale = Some(w.locale().clone()),
            Some(l) if l != w.locale() => {
                return Err(Error::invalid(format!(
                    "item2vec corpus mixes locales {l} and {}",
                    w.locale()
                )))
            }
            _ => {}
        }
    }
    let mut sg = SkipGram::new(sentences, params.clone())?;
    sg.train();
    Ok(sg.to_table())
}

/// Sentences are prev_items followed by next_item when present.
pub fn train_item2vec(sessions: &[SessionRecord], params: &Item2VecParams) -> Result<EmbeddingTable> {
    let sentences: Vec<Vec<ItemId>> = sessions
        .iter()
        .map(|s| s.prev_items.iter().chain(s.next_item.iter()).cloned().collect())
        .collect();
    train_item2vec_sentences(&sentences, params)
}
