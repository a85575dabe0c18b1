//! Motion-blur synthesis and the degradation model.

mod bank;
mod degrade;
mod kernel;
mod trajectory;

pub use bank::{generate_kernel_bank, generate_kernel_bank_with, KernelBank, Split, KERNEL_SIZES};
pub use degrade::{apply_blur, blur_unclipped, degrade, Boundary, DegradationConfig};
pub use kernel::{rasterize_kernel, BlurKernel};
pub use trajectory::{sample_trajectory, sample_trajectory_with, CameraTrajectory, TrajectoryParams};
