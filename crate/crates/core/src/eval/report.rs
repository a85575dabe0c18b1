use std::collections::BTreeMap;
use std::path::Path;

use facedeblur_tensor::Execution;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::deblur_net::Generator;
use crate::error::{io_err, Error, Result};
use crate::eval::metrics::{cap_psnr, psnr, ssim};
use crate::image::Image;
use crate::parse_net::ParsingModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub entry_id: usize,
    pub kernel_size: usize,
    /// Uncapped; `inf` for a perfect reconstruction.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeAggregate {
    pub kernel_size: usize,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: Option<String>,
    pub manifest: Option<String>,
}

/// Per-image rows and their aggregates. PSNR means use values capped at
/// [`crate::eval::metrics::PSNR_CAP`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageMetrics>,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub per_size: Vec<SizeAggregate>,
    pub failures: Vec<(usize, String)>,
    pub meta: ReportMeta,
}

/// JSON form without the per-image rows.
#[derive(Serialize)]
struct Aggregates<'a> {
    count: usize,
    mean_psnr: f64,
    mean_ssim: f64,
    per_size: &'a [SizeAggregate],
    failures: &'a [(usize, String)],
    meta: &'a ReportMeta,
}

fn mean(vals: impl Iterator<Item = f64>) -> (usize, f64) {
    let (n, s) = vals.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    (n, if n == 0 { f64::NAN } else { s / n as f64 })
}

impl MetricsReport {
    /// Aggregates recomputed from `per_image`.
    pub fn from_rows(per_image: Vec<ImageMetrics>, failures: Vec<(usize, String)>, meta: ReportMeta) -> Self {
        let (count, mean_psnr) = mean(per_image.iter().map(|r| cap_psnr(r.psnr)));
        let (_, mean_ssim) = mean(per_image.iter().map(|r| r.ssim));
        let mut groups: BTreeMap<usize, Vec<&ImageMetrics>> = BTreeMap::new();
        for r in &per_image {
            groups.entry(r.kernel_size).or_default().push(r);
        }
        let per_size = groups
            .into_iter()
            .map(|(kernel_size, rows)| SizeAggregate {
                kernel_size,
                count: rows.len(),
                mean_psnr: mean(rows.iter().map(|r| cap_psnr(r.psnr))).1,
                mean_ssim: mean(rows.iter().map(|r| r.ssim)).1,
            })
            .collect();
        MetricsReport { per_image, count, mean_psnr, mean_ssim, per_size, failures, meta }
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { v.to_string() };
        self.per_image
            .iter()
            .map(|r| vec![r.entry_id.to_string(), r.kernel_size.to_string(), fmt(r.psnr), fmt(r.ssim)])
            .collect()
    }

    /// Per-image CSV: `entry_id,kernel_size,psnr,ssim`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::trainer::write_csv(path, &["entry_id", "kernel_size", "psnr", "ssim"], &self.csv_rows())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ImageMetrics>> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })?;
        r.deserialize()
            .map(|row| row.map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() }))
            .collect()
    }

    pub fn aggregates_json(&self) -> Result<String> {
        let a = Aggregates {
            count: self.count,
            mean_psnr: self.mean_psnr,
            mean_ssim: self.mean_ssim,
            per_size: &self.per_size,
            failures: &self.failures,
            meta: &self.meta,
        };
        Ok(serde_json::to_string_pretty(&a)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.aggregates_json()?).map_err(io_err(path))
    }
}

/// Runs `restore(blurred, entry)` on each entry and scores the result
/// against the clear image. Failing entries are recorded, not fatal.
pub fn evaluate_with<F>(dataset: &Dataset, entries: &[usize], restore: F) -> MetricsReport
where
    F: Fn(&Image, usize) -> Result<Image> + Sync + Send,
{
    let results = Execution::default().map(entries, |&e| -> Result<ImageMetrics> {
        let blurred = dataset.blurred(e)?;
        let out = restore(&blurred, e)?;
        let clear = dataset.clear(e);
        Ok(ImageMetrics { entry_id: e, kernel_size: dataset.kernel_size(e), psnr: psnr(&out, clear)?, ssim: ssim(&out, clear)? })
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, &e) in results.into_iter().zip(entries) {
        match r {
            Ok(m) => rows.push(m),
            Err(err) => failures.push((e, err.to_string())),
        }
    }
    MetricsReport::from_rows(rows, failures, ReportMeta::default())
}

/// Parses each blurred image, deblurs it and scores the clamped fine output.
pub fn evaluate_deblurring(gen: &Generator<f32>, parser: &ParsingModel<f32>, dataset: &Dataset) -> MetricsReport {
    let entries: Vec<usize> = (0..dataset.len()).collect();
    evaluate_with(dataset, &entries, |blurred, _| {
        let sem = parser.parse_batch(&[blurred])?.remove(0);
        Ok(gen.deblur_batch(&[blurred], &[&sem])?.remove(0).1)
    })
}
