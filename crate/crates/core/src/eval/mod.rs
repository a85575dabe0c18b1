//! Image-quality metrics, evaluation reports and recognition protocols.

pub mod identity;
pub mod metrics;
pub mod parsing;
pub mod plot;
pub mod report;

pub use identity::{embed_all, identity_distance, topk_recognition, DownsampleEmbedder, FaceEmbedder, Identified};
pub use metrics::{psnr, ssim, PSNR_CAP};
pub use parsing::{average_fscore, parsing_fscores, FscoreTable};
pub use report::{evaluate_deblurring, evaluate_with, ImageMetrics, MetricsReport, ReportMeta, SizeAggregate};
