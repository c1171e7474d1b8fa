use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, ImageBatch, LabelBatch};
use crate::error::{Error, Result};

/// Seeded shuffle of `0..n` for one epoch. Each epoch uses its own ChaCha
/// stream, so any epoch can be regenerated without replaying earlier ones.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Number of full batches in an epoch.
pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n / batch_size.max(1)
}

/// Indices of the `g`-th batch of an endless sequence of shuffled epochs.
///
/// Lets a stream of one length be consumed alongside another of a different
/// length purely as a function of a global step counter.
pub fn cyclic_batch(n: usize, batch_size: usize, seed: u64, g: u64) -> Result<Vec<usize>> {
    let per = batches_per_epoch(n, batch_size) as u64;
    if per == 0 {
        return Err(Error::Empty(format!("{n} samples cannot fill a batch of {batch_size}")));
    }
    let perm = epoch_permutation(n, seed, g / per);
    let j = (g % per) as usize;
    Ok(perm[j * batch_size..(j + 1) * batch_size].to_vec())
}

/// One batch of raw-range images with labels when the dataset has them.
#[derive(Debug, Clone)]
pub struct StreamItem {
    pub indices: Vec<usize>,
    pub images: ImageBatch,
    pub labels: Option<LabelBatch>,
}

/// Iterator over the full batches of one shuffled epoch.
pub struct BatchStream<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

/// Deterministically shuffled batches for `epoch`; the trailing partial
/// batch is dropped.
pub fn batch_stream(data: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<BatchStream<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::Empty("cannot stream an empty dataset".into()));
    }
    Ok(BatchStream {
        data,
        order: epoch_permutation(data.len(), seed, epoch),
        batch_size,
        next: 0,
    })
}

impl Iterator for BatchStream<'_> {
    type Item = StreamItem;

    fn next(&mut self) -> Option<StreamItem> {
        let end = self.next + self.batch_size;
        if end > self.order.len() {
            return None;
        }
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        Some(StreamItem {
            images: self.data.images.batch(&indices),
            labels: self.data.label_batch(&indices),
            indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.next) / self.batch_size;
        (n, Some(n))
    }
}

impl ExactSizeIterator for BatchStream<'_> {}
