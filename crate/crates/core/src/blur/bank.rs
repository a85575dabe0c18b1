use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use facedeblur_tensor::Execution;
use rand::Rng;

use crate::blur::kernel::{rasterize_kernel, BlurKernel};
use crate::blur::trajectory::{sample_trajectory_with, TrajectoryParams};
use crate::error::{io_err, Error, Result};
use crate::rng;

/// The odd kernel sizes used for training and for per-size evaluation bins.
pub const KERNEL_SIZES: [usize; 8] = [13, 15, 17, 19, 21, 23, 25, 27];

const MAGIC: &[u8; 5] = b"KBNK1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    kernels: Vec<BlurKernel>,
    sizes: Vec<usize>,
    pub split: Split,
}

pub fn generate_kernel_bank(count: usize, sizes: &[usize], seed: u64) -> Result<KernelBank> {
    generate_kernel_bank_with(count, sizes, seed, &TrajectoryParams::default(), Execution::default())
}

/// Kernel `i` has size `sizes[i % sizes.len()]` and source seed
/// `derive_seed(seed, i)`. The walk is rescaled to fill between half and all
/// of the grid, so larger sizes give longer streaks.
pub fn generate_kernel_bank_with(
    count: usize,
    sizes: &[usize],
    seed: u64,
    params: &TrajectoryParams,
    exec: Execution,
) -> Result<KernelBank> {
    if count == 0 {
        return Err(Error::Param("kernel count must be >= 1".into()));
    }
    check_sizes(sizes)?;
    let kernels = exec.map_range(count, |i| {
        let size = sizes[i % sizes.len()];
        let kseed = rng::derive_seed(seed, i as u64);
        let traj = sample_trajectory_with(params, kseed)?;
        let fill: f64 = rng::rng(rng::derive_seed(kseed, 1)).random_range(0.5..=1.0);
        let half = ((size - 1) / 2) as f64;
        let extent = traj.extent();
        let traj = if extent > 0.0 { traj.scaled(fill * half / extent) } else { traj };
        Ok(rasterize_kernel(&traj, size)?.round_to_f32())
    });
    Ok(KernelBank { kernels: kernels.into_iter().collect::<Result<_>>()?, sizes: sizes.to_vec(), split: Split::Train })
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::Param("kernel size list is empty".into()));
    }
    if let Some(s) = sizes.iter().find(|s| !KERNEL_SIZES.contains(s)) {
        return Err(Error::Param(format!("kernel size {s} is not one of {KERNEL_SIZES:?}")));
    }
    Ok(())
}

impl KernelBank {
    pub fn new(kernels: Vec<BlurKernel>, split: Split) -> Result<Self> {
        let mut sizes: Vec<usize> = kernels.iter().map(|k| k.size()).collect();
        sizes.sort_unstable();
        sizes.dedup();
        for k in &kernels {
            k.validate()?;
        }
        Ok(KernelBank { kernels, sizes, split })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[BlurKernel] {
        &self.kernels
    }

    pub fn get(&self, id: usize) -> Result<&BlurKernel> {
        self.kernels.get(id).ok_or_else(|| Error::Input(format!("kernel id {id} not in bank of {}", self.len())))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Ids of kernels whose size is in `sizes`.
    pub fn ids_with_sizes(&self, sizes: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| sizes.contains(&self.kernels[i].size())).collect()
    }

    /// No kernel of `self` shares a source seed with one of `other`.
    pub fn is_disjoint_from(&self, other: &KernelBank) -> bool {
        let seeds: std::collections::HashSet<u64> = self.kernels.iter().map(|k| k.source_seed()).collect();
        other.kernels.iter().all(|k| !seeds.contains(&k.source_seed()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.kernels.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for k in &self.kernels {
            out.extend_from_slice(&(k.source_seed() as i64).to_le_bytes());
            out.extend_from_slice(&(k.size() as i32).to_le_bytes());
            for &t in k.taps() {
                out.extend_from_slice(&(t as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], split: Split) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| "truncated header")?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let count = read_u32(&mut r)? as usize;
        let n_sizes = read_u32(&mut r)? as usize;
        let sizes = (0..n_sizes).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let mut kernels = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8).map_err(|_| format!("kernel {i}: truncated"))?;
            let seed = i64::from_le_bytes(b8) as u64;
            let k = read_u32(&mut r)? as i32;
            if k <= 0 || k > 255 {
                return Err(format!("kernel {i}: bad size {k}"));
            }
            let k = k as usize;
            let mut taps = Vec::with_capacity(k * k);
            for _ in 0..k * k {
                let mut b4 = [0u8; 4];
                r.read_exact(&mut b4).map_err(|_| format!("kernel {i}: truncated taps"))?;
                taps.push(f32::from_le_bytes(b4) as f64);
            }
            kernels.push(BlurKernel::from_normalized(k, taps, seed).map_err(|e| format!("kernel {i}: {e}"))?);
        }
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        Ok(KernelBank { kernels, sizes, split })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes, split).map_err(|msg| Error::Format { path: path.into(), msg })
    }

    /// Writes `kernel_<id>.png` per kernel, scaled so the largest tap is 255.
    pub fn dump_png(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (i, k) in self.kernels.iter().enumerate() {
            k.to_image().save_png(&dir.join(format!("kernel_{i:05}.png")))?;
        }
        Ok(())
    }
}

fn read_u32(r: &mut &[u8]) -> std::result::Result<u32, String> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| "truncated".to_string())?;
    Ok(u32::from_le_bytes(b))
}
