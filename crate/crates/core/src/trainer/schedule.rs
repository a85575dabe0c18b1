use serde::{Deserialize, Serialize};

use crate::blur::KERNEL_SIZES;
use crate::error::{Error, Result};

/// Iterations spent on each curriculum stage.
pub const DEFAULT_PERIOD: u64 = 30_000;

/// Incremental curriculum over kernel-size buckets: bucket `i` joins the
/// active set at iteration `i * period`. A period of 0 activates every
/// bucket from the start (direct training).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSchedule {
    pub size_groups: Vec<usize>,
    pub period: u64,
    pub current_iter: u64,
}

impl Default for KernelSchedule {
    fn default() -> Self {
        KernelSchedule { size_groups: KERNEL_SIZES.to_vec(), period: DEFAULT_PERIOD, current_iter: 0 }
    }
}

impl KernelSchedule {
    pub fn new(mut size_groups: Vec<usize>, period: u64) -> Result<Self> {
        if size_groups.is_empty() {
            return Err(Error::Param("kernel schedule needs at least one size".into()));
        }
        size_groups.sort_unstable();
        size_groups.dedup();
        Ok(KernelSchedule { size_groups, period, current_iter: 0 })
    }

    pub fn direct(size_groups: Vec<usize>) -> Result<Self> {
        Self::new(size_groups, 0)
    }

    /// Number of active buckets at `iter`.
    pub fn active_buckets(&self, iter: u64) -> usize {
        let n = self.size_groups.len();
        if self.period == 0 {
            return n;
        }
        ((iter / self.period).min(n as u64 - 1) + 1) as usize
    }

    pub fn active_kernel_subset(&self, iter: u64) -> Vec<usize> {
        self.size_groups[..self.active_buckets(iter)].to_vec()
    }

    pub fn current(&self) -> Vec<usize> {
        self.active_kernel_subset(self.current_iter)
    }

    /// First iteration at which every bucket is active.
    pub fn saturation_iter(&self) -> u64 {
        self.period * (self.size_groups.len() as u64 - 1)
    }
}

pub fn active_kernel_subset(schedule: &KernelSchedule, iter: u64) -> Vec<usize> {
    schedule.active_kernel_subset(iter)
}
