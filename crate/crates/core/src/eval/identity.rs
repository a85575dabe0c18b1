use crate::error::{Error, Result};
use crate::image::Image;

/// Maps a face image to a unit-norm vector of fixed dimension.
pub trait FaceEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, image: &Image) -> Result<Vec<f64>>;
}

/// Area-downsampled luma, mean-subtracted and L2-normalized.
#[derive(Clone, Copy, Debug)]
pub struct DownsampleEmbedder {
    pub side: usize,
}

impl Default for DownsampleEmbedder {
    fn default() -> Self {
        DownsampleEmbedder { side: 16 }
    }
}

impl FaceEmbedder for DownsampleEmbedder {
    fn dim(&self) -> usize {
        self.side * self.side
    }

    fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        let small = image.luma().resize_area(self.side, self.side)?;
        let m = small.data().iter().sum::<f64>() / small.data().len() as f64;
        let v: Vec<f64> = small.data().iter().map(|x| x - m).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Input("a constant image has no embedding".into()));
        }
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

fn checked(embedder: &dyn FaceEmbedder, image: &Image) -> Result<Vec<f64>> {
    let e = embedder.embed(image)?;
    let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
    if e.len() != embedder.dim() || (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("embedding of length {} has norm {norm}", e.len())));
    }
    Ok(e)
}

pub fn embedding_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// L2 distance between the embeddings of `a` and `b`, in `[0, 2]`.
pub fn identity_distance(embedder: &dyn FaceEmbedder, a: &Image, b: &Image) -> Result<f64> {
    Ok(embedding_distance(&checked(embedder, a)?, &checked(embedder, b)?))
}

/// A labelled embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Identified {
    pub embedding: Vec<f64>,
    pub identity: String,
}

/// Fraction of probes whose identity is among the `k` nearest gallery
/// entries. Equal distances keep gallery order.
pub fn topk_recognition(probes: &[Identified], gallery: &[Identified], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    if probes.is_empty() {
        return Err(Error::Protocol("no probes".into()));
    }
    if let Some(p) = probes.iter().find(|p| !gallery.iter().any(|g| g.identity == p.identity)) {
        return Err(Error::Protocol(format!("probe identity {:?} is not in the gallery", p.identity)));
    }
    let hits = probes
        .iter()
        .filter(|p| {
            let mut d: Vec<(f64, usize)> =
                gallery.iter().enumerate().map(|(i, g)| (embedding_distance(&p.embedding, &g.embedding), i)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.iter().take(k).any(|&(_, i)| gallery[i].identity == p.identity)
        })
        .count();
    Ok(hits as f64 / probes.len() as f64)
}

pub fn embed_all(embedder: &dyn FaceEmbedder, images: &[(&Image, &str)]) -> Result<Vec<Identified>> {
    images
        .iter()
        .map(|(img, id)| Ok(Identified { embedding: checked(embedder, img)?, identity: id.to_string() }))
        .collect()
}
