use std::collections::BTreeMap;

use super::SessionRecord;
use crate::error::{Error, Result};

/// Contiguous fold blocks over sessions ordered by `session_id`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    fold_of: BTreeMap<u64, usize>,
}

/// Assigns session at rank `r` (by id) to fold `floor(r * k / n)`.
pub fn assign_folds(sessions: &[SessionRecord], k: usize) -> Result<FoldAssignment> {
    FoldAssignment::from_ids(sessions.iter().map(|s| s.session_id), k)
}

impl FoldAssignment {
    pub fn from_ids(ids: impl IntoIterator<Item = u64>, k: usize) -> Result<Self> {
        let mut ids: Vec<u64> = ids.into_iter().collect();
        if k < 2 {
            return Err(Error::invalid(format!("fold count must be >= 2, got {k}")));
        }
        if ids.is_empty() {
            return Err(Error::invalid("cannot assign folds to an empty session list"));
        }
        ids.sort_unstable();
        ids.dedup();
        let n = ids.len();
        if k > n {
            return Err(Error::invalid(format!("{k} folds requested for {n} sessions")));
        }
        let fold_of = ids
            .into_iter()
            .enumerate()
            .map(|(rank, id)| (id, rank * k / n))
            .collect();
        Ok(FoldAssignment { k, fold_of })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, session_id: u64) -> Option<usize> {
        self.fold_of.get(&session_id).copied()
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn members(&self, fold: usize) -> impl Iterator<Item = u64> + '_ {
        self.fold_of.iter().filter(move |(_, &f)| f == fold).map(|(&id, _)| id)
    }
}
