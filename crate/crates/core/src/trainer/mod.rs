//! Parsing and deblurring training.

pub mod config;
pub mod deblur;
pub mod gradcheck;
pub mod parsing;
pub mod schedule;

use std::path::Path;

pub use config::{OptimizerConfig, SemanticSource, TrainConfig};
pub use deblur::{discriminator_step, train_deblurring, DeblurTrainer, DiscriminatorStep, StepLosses, METRICS_HEADER};
pub use gradcheck::{finite_diff_gradcheck, GradcheckLoss};
pub use parsing::{evaluate_parser, train_parsing, ParseTrainOptions, ParseTrainReport};
pub use schedule::{active_kernel_subset, KernelSchedule};

use crate::error::{io_err, Error, Result};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format { path: path.to_path_buf(), msg: e.to_string() }
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends rows, writing the header first when the file is new.
pub(crate) fn append_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if !path.exists() {
        return write_csv(path, header, rows);
    }
    let file = std::fs::OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
