use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::Dataset;
use crate::error::{Error, Result};
use crate::geom::Affine;
use crate::image::{Image, LabelMap};
use crate::rng;

const ORDER_TAG: u64 = 0x0D;
const AUG_TAG: u64 = 0xA6;

/// Random similarity applied identically to every image of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub max_rotation_deg: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_translation: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation { max_rotation_deg: 10.0, min_scale: 0.95, max_scale: 1.05, max_translation: 4.0 }
    }
}

impl Augmentation {
    /// Forward transform about the center of a `size x size` image.
    pub fn sample(&self, r: &mut impl Rng, height: usize, width: usize) -> Affine {
        let angle = r.random_range(-1.0..=1.0) * self.max_rotation_deg.to_radians();
        let scale = r.random_range(self.min_scale..=self.max_scale);
        let tx = r.random_range(-1.0..=1.0) * self.max_translation;
        let ty = r.random_range(-1.0..=1.0) * self.max_translation;
        Affine::similarity_about((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, angle, scale, tx, ty)
    }
}

/// Resumable position in the shuffled stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochCursor {
    pub epoch: u64,
    pub pos: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub entries: Vec<usize>,
    pub clear: Vec<Image>,
    pub blurred: Vec<Image>,
    pub labels: Vec<Option<LabelMap>>,
    pub kernel_sizes: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Endless stream of shuffled epochs over a pool of dataset entries. The
/// last batch of an epoch may be partial.
#[derive(Clone, Debug)]
pub struct Batches<'a> {
    dataset: &'a Dataset,
    pool: Vec<usize>,
    order: Vec<usize>,
    batch_size: usize,
    augment: Option<Augmentation>,
    seed: u64,
    cursor: EpochCursor,
}

pub fn iterate_batches(dataset: &Dataset, batch_size: usize, augment: bool, seed: u64) -> Result<Batches<'_>> {
    Batches::new(dataset, (0..dataset.len()).collect(), batch_size, augment.then(Augmentation::default), seed)
}

impl<'a> Batches<'a> {
    pub fn new(
        dataset: &'a Dataset,
        pool: Vec<usize>,
        batch_size: usize,
        augment: Option<Augmentation>,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Param("batch size must be >= 1".into()));
        }
        let mut b = Batches { dataset, pool: Vec::new(), order: Vec::new(), batch_size, augment, seed, cursor: EpochCursor::default() };
        b.set_pool(pool)?;
        Ok(b)
    }

    pub fn cursor(&self) -> EpochCursor {
        self.cursor
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    /// Replaces the pool. A changed pool starts a fresh epoch.
    pub fn set_pool(&mut self, pool: Vec<usize>) -> Result<()> {
        if pool.is_empty() {
            return Err(Error::Input("no dataset entries to draw batches from".into()));
        }
        if let Some(&bad) = pool.iter().find(|&&i| i >= self.dataset.len()) {
            return Err(Error::Input(format!("entry {bad} out of range")));
        }
        if pool != self.pool {
            let fresh = !self.pool.is_empty();
            self.pool = pool;
            if fresh {
                self.cursor = EpochCursor { epoch: self.cursor.epoch + 1, pos: 0 };
            }
            self.reshuffle();
        }
        Ok(())
    }

    /// Continues from a saved cursor over `pool`.
    pub fn restore(&mut self, pool: Vec<usize>, cursor: EpochCursor) -> Result<()> {
        self.set_pool(pool)?;
        self.cursor = cursor;
        self.reshuffle();
        Ok(())
    }

    fn reshuffle(&mut self) {
        self.order = self.pool.clone();
        self.order.shuffle(&mut rng::rng(rng::derive_seed2(self.seed, ORDER_TAG, self.cursor.epoch)));
    }

    /// Entry ids of the next batch, with their position in the epoch.
    pub fn next_entries(&mut self) -> Vec<(usize, usize)> {
        if self.cursor.pos >= self.order.len() {
            self.cursor = EpochCursor { epoch: self.cursor.epoch + 1, pos: 0 };
            self.reshuffle();
        }
        let end = (self.cursor.pos + self.batch_size).min(self.order.len());
        let out = (self.cursor.pos..end).map(|p| (p, self.order[p])).collect();
        self.cursor.pos = end;
        out
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let picks = self.next_entries();
        let epoch = self.cursor.epoch;
        let mut batch = Batch {
            entries: Vec::with_capacity(picks.len()),
            clear: Vec::with_capacity(picks.len()),
            blurred: Vec::with_capacity(picks.len()),
            labels: Vec::with_capacity(picks.len()),
            kernel_sizes: Vec::with_capacity(picks.len()),
        };
        for (pos, e) in picks {
            let mut clear = self.dataset.clear(e).clone();
            let mut blurred = self.dataset.blurred(e)?;
            let mut labels = self.dataset.labels(e).cloned();
            if let Some(aug) = &self.augment {
                let mut r = rng::rng(rng::derive_seed2(self.seed, AUG_TAG ^ (epoch << 8), pos as u64));
                let (h, w) = (clear.height(), clear.width());
                let inv = aug.sample(&mut r, h, w).inverse().expect("similarity with positive scale");
                clear = clear.warp(&inv, h, w);
                blurred = blurred.warp(&inv, h, w);
                labels = labels.map(|l| l.warp(&inv, h, w));
            }
            batch.entries.push(e);
            batch.kernel_sizes.push(self.dataset.kernel_size(e));
            batch.clear.push(clear);
            batch.blurred.push(blurred);
            batch.labels.push(labels);
        }
        Ok(batch)
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}
