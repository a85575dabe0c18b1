use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::geom::Affine;
use crate::image::{Image, LabelMap};

/// Canonical positions at 128x128 of, in order: left eye, right eye, nose
/// tip, left mouth corner, right mouth corner (image left/right).
pub const TEMPLATE_128: [(f64, f64); 5] = [(44.0, 54.0), (84.0, 54.0), (64.0, 74.0), (48.0, 94.0), (80.0, 94.0)];

/// Five facial landmarks in pixel coordinates, in [`TEMPLATE_128`] order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Landmarks(pub [(f64, f64); 5]);

impl Landmarks {
    pub fn template(out_size: usize) -> Landmarks {
        let s = out_size as f64 / 128.0;
        Landmarks(TEMPLATE_128.map(|(x, y)| ((x + 0.5) * s - 0.5, (y + 0.5) * s - 0.5)))
    }

    pub fn transformed(&self, t: &Affine) -> Landmarks {
        Landmarks(self.0.map(|(x, y)| t.apply(x, y)))
    }

    /// Five `x y` rows.
    pub fn parse(text: &str) -> std::result::Result<Landmarks, String> {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if rows.len() != 5 {
            return Err(format!("expected 5 landmark rows, found {}", rows.len()));
        }
        let mut pts = [(0.0, 0.0); 5];
        for (i, row) in rows.iter().enumerate() {
            let v: Vec<f64> = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
                .collect::<std::result::Result<_, _>>()?;
            if v.len() != 2 {
                return Err(format!("row {}: expected 2 values", i + 1));
            }
            pts[i] = (v[0], v[1]);
        }
        Ok(Landmarks(pts))
    }

    pub fn load(path: &Path) -> Result<Landmarks> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Landmarks::parse(&text).map_err(|msg| Error::Format { path: path.into(), msg })
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(x, y)| format!("{x} {y}\n")).collect()
    }

    fn check(&self) -> Result<()> {
        let p = &self.0;
        if p.iter().any(|q| !q.0.is_finite() || !q.1.is_finite()) {
            return Err(Error::Alignment("non-finite landmark".into()));
        }
        for i in 0..5 {
            for j in i + 1..5 {
                if (p[i].0 - p[j].0).hypot(p[i].1 - p[j].1) < 1e-6 {
                    return Err(Error::Alignment(format!("landmarks {i} and {j} coincide")));
                }
            }
        }
        // Collinearity: the smaller principal variance vanishes.
        let (mx, my) = (p.iter().map(|q| q.0).sum::<f64>() / 5.0, p.iter().map(|q| q.1).sum::<f64>() / 5.0);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for q in p {
            let (dx, dy) = (q.0 - mx, q.1 - my);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        if det <= 1e-9 * tr * tr {
            return Err(Error::Alignment("landmarks are collinear".into()));
        }
        Ok(())
    }
}

/// Least-squares similarity transform taking `src` onto `dst`.
pub fn similarity_lstsq(src: &Landmarks, dst: &Landmarks) -> Result<Affine> {
    src.check()?;
    let n = 5.0;
    let (s, d) = (&src.0, &dst.0);
    let sm = (s.iter().map(|p| p.0).sum::<f64>() / n, s.iter().map(|p| p.1).sum::<f64>() / n);
    let dm = (d.iter().map(|p| p.0).sum::<f64>() / n, d.iter().map(|p| p.1).sum::<f64>() / n);
    let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
    for (p, q) in s.iter().zip(d) {
        let (sx, sy) = (p.0 - sm.0, p.1 - sm.1);
        let (dx, dy) = (q.0 - dm.0, q.1 - dm.1);
        num_a += sx * dx + sy * dy;
        num_b += sx * dy - sy * dx;
        den += sx * sx + sy * sy;
    }
    let (a, b) = (num_a / den, num_b / den);
    Ok(Affine { a, b: -b, c: b, d: a, tx: dm.0 - (a * sm.0 - b * sm.1), ty: dm.1 - (b * sm.0 + a * sm.1) })
}

fn to_template(landmarks: &Landmarks, out_size: usize) -> Result<Affine> {
    let t = similarity_lstsq(landmarks, &Landmarks::template(out_size))?;
    t.inverse().ok_or_else(|| Error::Alignment("singular alignment transform".into()))
}

/// Warps the face so its landmarks land on the canonical template.
pub fn align_face(image: &Image, landmarks: &Landmarks, out_size: usize) -> Result<Image> {
    Ok(image.warp(&to_template(landmarks, out_size)?, out_size, out_size))
}

/// Nearest-neighbour counterpart of [`align_face`] for label images.
pub fn align_labels(labels: &LabelMap, landmarks: &Landmarks, out_size: usize) -> Result<LabelMap> {
    Ok(labels.warp(&to_template(landmarks, out_size)?, out_size, out_size))
}
