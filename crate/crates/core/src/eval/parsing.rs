use std::path::Path;

use crate::data::{Dataset, CLASS_NAMES, NUM_CLASSES};
use crate::error::Result;
use crate::image::{Image, LabelMap};
use crate::parse_net::{ClassCounts, ParsingModel};

/// Per-class F-scores of `model` with pixel counts pooled over `inputs`.
pub fn parsing_fscores(model: &ParsingModel<f32>, inputs: &[(Image, LabelMap)]) -> Result<[f64; NUM_CLASSES]> {
    let mut counts = [ClassCounts::default(); NUM_CLASSES];
    for (img, gt) in inputs {
        let pred = model.predict_labels(&[img])?.remove(0);
        for (k, c) in counts.iter_mut().enumerate() {
            c.add(&pred, gt, k as u8);
        }
    }
    Ok(counts.map(|c| c.fscore()))
}

/// Clear faces with labels, one per distinct sample.
pub fn clear_inputs(dataset: &Dataset) -> Vec<(Image, LabelMap)> {
    dataset.samples().iter().filter_map(|s| Some((s.clear.clone(), s.labels.clone()?))).collect()
}

/// Every labelled entry in degraded form.
pub fn blurred_inputs(dataset: &Dataset) -> Result<Vec<(Image, LabelMap)>> {
    (0..dataset.len())
        .filter_map(|e| dataset.labels(e).cloned().map(|l| (e, l)))
        .map(|(e, l)| Ok((dataset.blurred(e)?, l)))
        .collect()
}

/// Mean over the ten foreground components.
pub fn average_fscore(scores: &[f64; NUM_CLASSES]) -> f64 {
    scores[1..].iter().sum::<f64>() / (NUM_CLASSES - 1) as f64
}

/// A component-by-setting F-score table: one row per foreground class and
/// a final average row.
#[derive(Clone, Debug, PartialEq)]
pub struct FscoreTable {
    pub columns: Vec<String>,
    pub scores: Vec<[f64; NUM_CLASSES]>,
}

impl FscoreTable {
    pub fn rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = (1..NUM_CLASSES)
            .map(|k| {
                let mut r = vec![CLASS_NAMES[k].to_string()];
                r.extend(self.scores.iter().map(|s| format!("{:.4}", s[k])));
                r
            })
            .collect();
        let mut avg = vec!["average".to_string()];
        avg.extend(self.scores.iter().map(|s| format!("{:.4}", average_fscore(s))));
        rows.push(avg);
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["component"];
        header.extend(self.columns.iter().map(String::as_str));
        crate::trainer::write_csv(path, &header, &self.rows())
    }
}
