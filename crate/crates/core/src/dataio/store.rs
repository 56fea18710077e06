//! Micro-batch store with FIFO residency accounting.
//!
//! The training split is chunked once into micro-batches of the smallest
//! configured batch size; larger batch sizes are served as concatenations of
//! consecutive micro-batches, so the sample order per epoch is identical for
//! every candidate. The capacity limit models device memory: micro-batches
//! are "loaded" on first touch and evicted first-in-first-out, never while a
//! batch spanning them is being assembled.

use std::cell::RefCell;
use std::collections::VecDeque;

use super::{DataError, Dataset, Targets};

/// Borrowed view of one effective batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchRef<'a> {
    pub inputs: &'a [f64],
    pub dim: usize,
    pub targets: TargetsRef<'a>,
}

impl BatchRef<'_> {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TargetsRef<'a> {
    Regression { values: &'a [f64], dim: usize },
    Labels(&'a [u32]),
}

/// Sample ordering for store construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMode {
    /// Shuffle the training split once with the given seed.
    Shuffled(u64),
    /// Keep the dataset's natural training order.
    Preserve,
}

#[derive(Debug, Default)]
struct FifoState {
    resident: VecDeque<usize>,
    max_resident: usize,
    evictions: usize,
}

/// Preloaded training data served in micro-batch multiples.
#[derive(Debug)]
pub struct MicroBatchStore {
    inputs: Vec<f64>,
    dim: usize,
    targets: Targets,
    micro_batch_size: usize,
    n_micro: usize,
    candidates: Vec<usize>,
    capacity: Option<usize>,
    fifo: RefCell<FifoState>,
}

impl MicroBatchStore {
    /// Chunks the training split of `dataset` into micro-batches of
    /// `min(candidates)`. Every candidate must be a multiple of that size and
    /// `capacity` (when given) must hold at least one batch of the largest
    /// candidate.
    pub fn build(
        dataset: &Dataset,
        candidates: &[usize],
        capacity: Option<usize>,
        order: OrderMode,
    ) -> Result<Self, DataError> {
        assert!(!candidates.is_empty(), "need at least one batch candidate");
        let micro = *candidates.iter().min().unwrap();
        if micro < 1 {
            return Err(DataError::InvalidDims("batch candidates must be >= 1".into()));
        }
        for &c in candidates {
            if c % micro != 0 {
                return Err(DataError::NonMultipleCandidate { candidate: c, micro });
            }
        }
        let max_candidate = *candidates.iter().max().unwrap();
        if let Some(cap) = capacity {
            let needed = max_candidate / micro;
            if cap < needed {
                return Err(DataError::CapacityTooSmall {
                    capacity: cap,
                    candidate: max_candidate,
                    needed,
                });
            }
        }
        let mut order_indices: Vec<usize> = dataset.train_indices().to_vec();
        if order_indices.len() < micro {
            return Err(DataError::TooSmall { n: order_indices.len(), min_batch: micro });
        }
        if let OrderMode::Shuffled(seed) = order {
            let mut rng =
                crate::rng::SplitMix64::new(crate::rng::derive_seed(seed, 0x44d5));
            rng.shuffle(&mut order_indices);
        }
        // Drop the trailing partial micro-batch so every block is full.
        let n_micro = order_indices.len() / micro;
        order_indices.truncate(n_micro * micro);

        let dim = dataset.dim();
        let mut inputs = Vec::with_capacity(order_indices.len() * dim);
        for &i in &order_indices {
            inputs.extend_from_slice(dataset.row(i));
        }
        let targets = match dataset.targets() {
            Targets::Regression { values, dim: tdim } => {
                let mut out = Vec::with_capacity(order_indices.len() * tdim);
                for &i in &order_indices {
                    out.extend_from_slice(&values[i * tdim..(i + 1) * tdim]);
                }
                Targets::Regression { values: out, dim: *tdim }
            }
            Targets::Labels(labels) => {
                Targets::Labels(order_indices.iter().map(|&i| labels[i]).collect())
            }
        };
        Ok(Self {
            inputs,
            dim,
            targets,
            micro_batch_size: micro,
            n_micro,
            candidates: candidates.to_vec(),
            capacity,
            fifo: RefCell::new(FifoState::default()),
        })
    }

    pub fn micro_batch_size(&self) -> usize {
        self.micro_batch_size
    }

    pub fn n_micro(&self) -> usize {
        self.n_micro
    }

    /// Training samples resident in the store (full micro-batches only).
    pub fn n_samples(&self) -> usize {
        self.n_micro * self.micro_batch_size
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    /// Number of effective batches one epoch yields at `effective_batch`.
    pub fn batches_per_epoch(&self, effective_batch: usize) -> usize {
        self.n_micro / (effective_batch / self.micro_batch_size)
    }

    /// Number of effective batches served from the first
    /// `fraction` of the training order (the exploration partition).
    pub fn partition_batches(&self, effective_batch: usize, fraction: f64) -> usize {
        let blocks = ((self.n_micro as f64) * fraction).floor() as usize;
        blocks / (effective_batch / self.micro_batch_size)
    }

    fn check_batch_size(&self, effective_batch: usize) -> Result<usize, DataError> {
        if !self.candidates.contains(&effective_batch) {
            return Err(DataError::UnknownBatchSize(effective_batch));
        }
        Ok(effective_batch / self.micro_batch_size)
    }

    /// Iterates one full epoch at `effective_batch`.
    pub fn iter_batches(&self, effective_batch: usize) -> Result<BatchIter<'_>, DataError> {
        let blocks_per_batch = self.check_batch_size(effective_batch)?;
        Ok(BatchIter {
            store: self,
            blocks_per_batch,
            next_batch: 0,
            n_batches: self.n_micro / blocks_per_batch,
        })
    }

    /// Iterates the exploration partition: the first `fraction` of the
    /// training order.
    pub fn iter_partition(
        &self,
        effective_batch: usize,
        fraction: f64,
    ) -> Result<BatchIter<'_>, DataError> {
        let blocks_per_batch = self.check_batch_size(effective_batch)?;
        let blocks = ((self.n_micro as f64) * fraction).floor() as usize;
        Ok(BatchIter {
            store: self,
            blocks_per_batch,
            next_batch: 0,
            n_batches: blocks / blocks_per_batch,
        })
    }

    /// Marks a block range as in use, evicting the oldest resident blocks
    /// (FIFO) if the capacity would be exceeded. Blocks in the active range
    /// are never evicted.
    fn touch_blocks(&self, range: std::ops::Range<usize>) {
        let mut fifo = self.fifo.borrow_mut();
        for block in range.clone() {
            if !fifo.resident.contains(&block) {
                fifo.resident.push_back(block);
            }
        }
        if let Some(cap) = self.capacity {
            while fifo.resident.len() > cap {
                let victim = fifo
                    .resident
                    .iter()
                    .position(|b| !range.contains(b))
                    .expect("capacity >= blocks_per_batch, so a non-active block exists");
                fifo.resident.remove(victim);
                fifo.evictions += 1;
            }
        }
        fifo.max_resident = fifo.max_resident.max(fifo.resident.len());
    }

    /// Peak number of simultaneously resident micro-batches so far.
    pub fn max_resident(&self) -> usize {
        self.fifo.borrow().max_resident
    }

    pub fn evictions(&self) -> usize {
        self.fifo.borrow().evictions
    }

    fn batch_at(&self, start_block: usize, blocks: usize) -> BatchRef<'_> {
        let lo = start_block * self.micro_batch_size;
        let hi = (start_block + blocks) * self.micro_batch_size;
        let targets = match &self.targets {
            Targets::Regression { values, dim } => {
                TargetsRef::Regression { values: &values[lo * dim..hi * dim], dim: *dim }
            }
            Targets::Labels(labels) => TargetsRef::Labels(&labels[lo..hi]),
        };
        BatchRef { inputs: &self.inputs[lo * self.dim..hi * self.dim], dim: self.dim, targets }
    }
}

/// Epoch iterator; advancing it drives the FIFO residency bookkeeping.
pub struct BatchIter<'a> {
    store: &'a MicroBatchStore,
    blocks_per_batch: usize,
    next_batch: usize,
    n_batches: usize,
}

impl<'a> Iterator for BatchIter<'a> {
    type Item = BatchRef<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_batch >= self.n_batches {
            return None;
        }
        let start = self.next_batch * self.blocks_per_batch;
        self.store.touch_blocks(start..start + self.blocks_per_batch);
        self.next_batch += 1;
        Some(self.store.batch_at(start, self.blocks_per_batch))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.n_batches - self.next_batch;
        (left, Some(left))
    }
}

impl ExactSizeIterator for BatchIter<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticSpec};

    fn dataset(n: usize) -> Dataset {
        generate_synthetic(
            &SyntheticSpec::LinearRegression { n_samples: n, input_dim: 2, noise_sigma: 0.0 },
            42,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn chunking_counts() {
        let ds = dataset(64);
        let store =
            MicroBatchStore::build(&ds, &[8, 16, 32], None, OrderMode::Preserve).unwrap();
        assert_eq!(store.micro_batch_size(), 8);
        assert_eq!(store.n_micro(), 8);
        assert_eq!(store.iter_batches(8).unwrap().count(), 8);
        assert_eq!(store.iter_batches(32).unwrap().count(), 2);
    }

    #[test]
    fn non_multiple_candidate_is_rejected() {
        let ds = dataset(64);
        match MicroBatchStore::build(&ds, &[8, 12], None, OrderMode::Preserve) {
            Err(DataError::NonMultipleCandidate { candidate, micro }) => {
                assert_eq!((candidate, micro), (12, 8));
            }
            other => panic!("expected divisibility error, got {other:?}"),
        }
    }

    #[test]
    fn micro_batch_is_identity_passthrough() {
        let ds = dataset(40);
        let store = MicroBatchStore::build(&ds, &[8], None, OrderMode::Preserve).unwrap();
        let flat: Vec<f64> = store
            .iter_batches(8)
            .unwrap()
            .flat_map(|b| b.inputs.to_vec())
            .collect();
        let expect: Vec<f64> = ds
            .train_indices()
            .iter()
            .take(store.n_samples())
            .flat_map(|&i| ds.row(i).to_vec())
            .collect();
        assert_eq!(flat, expect);
    }

    #[test]
    fn sample_stream_is_identical_across_batch_sizes() {
        let ds = dataset(128);
        let store =
            MicroBatchStore::build(&ds, &[8, 16, 64], None, OrderMode::Shuffled(3)).unwrap();
        let stream = |eff: usize| -> Vec<f64> {
            store
                .iter_batches(eff)
                .unwrap()
                .flat_map(|b| b.inputs.to_vec())
                .collect()
        };
        assert_eq!(stream(16), stream(64));
        assert_eq!(stream(8), stream(64));
    }

    #[test]
    fn residency_respects_capacity() {
        let ds = dataset(64);
        let store =
            MicroBatchStore::build(&ds, &[8], Some(4), OrderMode::Preserve).unwrap();
        let mut count = 0;
        for _batch in store.iter_batches(8).unwrap() {
            assert!(store.fifo.borrow().resident.len() <= 4);
            count += 1;
        }
        assert_eq!(count, 8);
        assert_eq!(store.max_resident(), 4);
        assert!(store.evictions() >= 4);
    }

    #[test]
    fn eviction_order_is_insertion_order() {
        let ds = dataset(64);
        let store =
            MicroBatchStore::build(&ds, &[8], Some(2), OrderMode::Preserve).unwrap();
        let mut iter = store.iter_batches(8).unwrap();
        iter.next();
        iter.next();
        assert_eq!(store.fifo.borrow().resident, VecDeque::from(vec![0, 1]));
        iter.next(); // loads block 2, evicts block 0
        assert_eq!(store.fifo.borrow().resident, VecDeque::from(vec![1, 2]));
    }

    #[test]
    fn capacity_smaller_than_one_batch_is_rejected() {
        let ds = dataset(64);
        assert!(matches!(
            MicroBatchStore::build(&ds, &[8, 32], Some(2), OrderMode::Preserve),
            Err(DataError::CapacityTooSmall { .. })
        ));
    }

    #[test]
    fn unknown_batch_size_is_rejected() {
        let ds = dataset(64);
        let store = MicroBatchStore::build(&ds, &[8], None, OrderMode::Preserve).unwrap();
        assert!(matches!(store.iter_batches(16), Err(DataError::UnknownBatchSize(16))));
    }

    #[test]
    fn partition_serves_prefix() {
        let ds = dataset(128);
        let store =
            MicroBatchStore::build(&ds, &[8, 16], None, OrderMode::Shuffled(9)).unwrap();
        let part: Vec<f64> = store
            .iter_partition(8, 0.25)
            .unwrap()
            .flat_map(|b| b.inputs.to_vec())
            .collect();
        let full: Vec<f64> = store
            .iter_batches(8)
            .unwrap()
            .flat_map(|b| b.inputs.to_vec())
            .collect();
        assert_eq!(part.len(), full.len() / 4);
        assert_eq!(part[..], full[..part.len()]);
    }

    #[test]
    fn coverage_no_sample_repeats_per_epoch() {
        let ds = dataset(70); // 8 full micro-batches, 6 dropped samples
        let store =
            MicroBatchStore::build(&ds, &[8], None, OrderMode::Shuffled(1)).unwrap();
        assert_eq!(store.n_samples(), 64);
        let mut seen = std::collections::HashSet::new();
        for batch in store.iter_batches(8).unwrap() {
            for row in batch.inputs.chunks(batch.dim) {
                assert!(seen.insert(format!("{row:?}")), "sample repeated within epoch");
            }
        }
        assert_eq!(seen.len(), 64);
    }
}
