//! Procedural face images with exact label maps and landmarks.
//!
//! Stands in for aligned face datasets in tests, benches and demos. An
//! identity fixes face shape and colors; each sample adds a small pose,
//! expression and lighting change.

use std::path::Path;

use rand::Rng;

use crate::data::Landmarks;
use crate::error::{io_err, Result};
use crate::geom::Affine;
use crate::image::{Image, LabelMap};
use crate::rng;

const IDENTITY_TAG: u64 = 0x1D;

#[derive(Clone, Debug)]
pub struct SyntheticFace {
    pub name: String,
    pub image: Image,
    pub labels: LabelMap,
    pub landmarks: Landmarks,
    pub identity: String,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn new(cx: f64, cy: f64, rx: f64, ry: f64) -> Self {
        Ellipse { cx, cy, rx, ry, angle: 0.0 }
    }

    /// Normalized squared radius; inside when `< 1`.
    fn r2(&self, u: f64, v: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - self.cx, v - self.cy);
        let a = (c * du + s * dv) / self.rx;
        let b = (-s * du + c * dv) / self.ry;
        a * a + b * b
    }
}

struct Identity {
    skin: [f64; 3],
    hair: [f64; 3],
    bg: [f64; 3],
    iris: [f64; 3],
    lip: [f64; 3],
    face: Ellipse,
    hairline: f64,
    brow_tilt: f64,
    eye_rx: f64,
    nose_w: f64,
    texture: (f64, f64, f64),
}

fn color(r: &mut impl Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    let t: f64 = r.random();
    let mut c = [0.0; 3];
    for i in 0..3 {
        let j: f64 = r.random();
        c[i] = lo[i] + (hi[i] - lo[i]) * (0.7 * t + 0.3 * j);
    }
    c
}

impl Identity {
    fn new(id: u64) -> Identity {
        let mut r = rng::rng(rng::derive_seed(IDENTITY_TAG, id));
        Identity {
            skin: color(&mut r, [0.45, 0.3, 0.22], [0.95, 0.8, 0.7]),
            hair: color(&mut r, [0.03, 0.02, 0.02], [0.6, 0.45, 0.3]),
            bg: color(&mut r, [0.1, 0.1, 0.1], [0.9, 0.9, 0.95]),
            iris: color(&mut r, [0.05, 0.05, 0.05], [0.35, 0.45, 0.5]),
            lip: color(&mut r, [0.45, 0.15, 0.15], [0.85, 0.4, 0.4]),
            face: Ellipse::new(0.5, 0.56, r.random_range(0.26..0.31), r.random_range(0.33..0.39)),
            hairline: r.random_range(0.22..0.28),
            brow_tilt: r.random_range(0.0..0.25),
            eye_rx: r.random_range(0.045..0.06),
            nose_w: r.random_range(0.03..0.045),
            texture: (r.random_range(20.0..40.0), r.random_range(20.0..40.0), r.random_range(0.0..6.3)),
        }
    }
}

struct Expression {
    open: f64,
    gaze: f64,
    light: f64,
    pose: Affine,
}

fn mul(c: [f64; 3], s: f64) -> [f64; 3] {
    [c[0] * s, c[1] * s, c[2] * s]
}

/// Class and color of canonical point `(u, v)`, painter's order.
fn shade(id: &Identity, ex: &Expression, u: f64, v: f64) -> (u8, [f64; 3]) {
    let grad = 0.85 + 0.15 * (1.0 - v);
    let mut out = (0u8, mul(id.bg, 0.9 + 0.2 * u));
    let hair = Ellipse::new(0.5, 0.47, id.face.rx + 0.06, id.face.ry + 0.03);
    if hair.r2(u, v) < 1.0 && v < 0.62 {
        let strands = 0.9 + 0.1 * (u * 90.0).sin();
        out = (10, mul(id.hair, strands));
    }
    if id.face.r2(u, v) < 1.0 {
        if v < id.hairline + 0.03 * (u * 12.0).cos() {
            out = (10, id.hair);
        } else {
            let tex = 1.0 + 0.04 * (id.texture.0 * u + id.texture.2).sin() * (id.texture.1 * v).cos();
            out = (1, mul(id.skin, grad * tex));
        }
    }
    for (side, brow_class, eye_class) in [(-1.0, 2u8, 4u8), (1.0, 3, 5)] {
        let ex_c = 0.5 + side * 0.156;
        let brow = Ellipse { angle: -side * id.brow_tilt, ..Ellipse::new(ex_c, 0.36, 0.07, 0.016) };
        if brow.r2(u, v) < 1.0 {
            out = (brow_class, mul(id.hair, 0.8));
        }
        let eye = Ellipse::new(ex_c, 0.42, id.eye_rx, 0.024);
        if eye.r2(u, v) < 1.0 {
            let iris = Ellipse::new(ex_c + ex.gaze, 0.42, 0.02, 0.02);
            out = (eye_class, if iris.r2(u, v) < 1.0 { id.iris } else { [0.93, 0.93, 0.9] });
        }
    }
    let nose = Ellipse::new(0.5, 0.53, id.nose_w, 0.075);
    if nose.r2(u, v) < 1.0 {
        out = (6, mul(id.skin, 0.8 * grad + 0.1 * (v - 0.45)));
    }
    let teeth = Ellipse::new(0.5, 0.735 + ex.open / 2.0, 0.085, 0.008 + ex.open / 2.0);
    if teeth.r2(u, v) < 1.0 {
        out = (9, [0.95, 0.94, 0.88]);
    }
    if Ellipse::new(0.5, 0.718, 0.12, 0.017).r2(u, v) < 1.0 {
        out = (7, mul(id.lip, 0.9));
    }
    if Ellipse::new(0.5, 0.754 + ex.open, 0.105, 0.022).r2(u, v) < 1.0 {
        out = (8, id.lip);
    }
    (out.0, mul(out.1, ex.light))
}

/// Canonical landmark positions in unit coordinates.
const LANDMARKS_UNIT: [(f64, f64); 5] = [(0.344, 0.42), (0.656, 0.42), (0.5, 0.578), (0.38, 0.728), (0.62, 0.728)];

/// Renders one `size x size` face with 3x3 supersampling for the image and
/// center sampling for the labels.
pub fn render_face(size: usize, identity: u64, sample_seed: u64) -> SyntheticFace {
    let id = Identity::new(identity);
    let mut r = rng::rng(sample_seed);
    let s = size as f64;
    let angle = r.random_range(-0.08..0.08);
    let scale = r.random_range(0.97..1.03);
    let shift = (r.random_range(-0.015..0.015) * s, r.random_range(-0.015..0.015) * s);
    // Canonical pixel frame -> image frame.
    let pose = Affine::similarity_about(s / 2.0, s / 2.0, angle, scale, shift.0, shift.1);
    let ex = Expression {
        open: if r.random_bool(0.5) { r.random_range(0.004..0.02) } else { 0.0 },
        gaze: r.random_range(-0.006..0.006),
        light: r.random_range(0.9..1.05),
        pose,
    };
    let inv = ex.pose.inverse().expect("pose is invertible");
    let canon = |x: f64, y: f64| {
        let (cx, cy) = inv.apply(x, y);
        ((cx + 0.5) / s, (cy + 0.5) / s)
    };
    let mut image = Image::filled(3, size, size, 0.0);
    let mut labels = LabelMap::filled(size, size, 0);
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..3 {
                for sx in 0..3 {
                    let (u, v) = canon(x as f64 + (sx as f64 - 1.0) / 3.0, y as f64 + (sy as f64 - 1.0) / 3.0);
                    let (_, c) = shade(&id, &ex, u, v);
                    (0..3).for_each(|i| acc[i] += c[i] / 9.0);
                }
            }
            for (c, v) in acc.iter().enumerate() {
                image.set(c, y, x, v.clamp(0.0, 1.0));
            }
            let (u, v) = canon(x as f64, y as f64);
            labels.set(y, x, shade(&id, &ex, u, v).0);
        }
    }
    let landmarks = Landmarks(LANDMARKS_UNIT.map(|(u, v)| ex.pose.apply(u * s - 0.5, v * s - 0.5)));
    SyntheticFace {
        name: format!("id{identity:03}_{sample_seed:016x}"),
        image,
        labels,
        landmarks,
        identity: format!("id{identity:03}"),
    }
}

/// `count` faces cycling through `identities` identities.
pub fn synth_faces(count: usize, identities: usize, size: usize, seed: u64) -> Vec<SyntheticFace> {
    (0..count)
        .map(|i| {
            let mut f = render_face(size, (i % identities.max(1)) as u64, rng::derive_seed(seed, i as u64));
            f.name = format!("{}_{i:05}", f.identity);
            f
        })
        .collect()
}

/// Writes `clear/`, `labels/` and `landmarks/` subdirectories under `dir`.
pub fn write_faces(dir: &Path, faces: &[SyntheticFace]) -> Result<()> {
    for sub in ["clear", "labels", "landmarks"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(io_err(dir.join(sub)))?;
    }
    for f in faces {
        f.image.save_png(&dir.join("clear").join(format!("{}.png", f.name)))?;
        f.labels.save_png(&dir.join("labels").join(format!("{}.png", f.name)))?;
        let lm = dir.join("landmarks").join(format!("{}.txt", f.name));
        std::fs::write(&lm, f.landmarks.to_text()).map_err(io_err(&lm))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faces_are_deterministic_and_labelled() {
        let a = render_face(64, 3, 11);
        let b = render_face(64, 3, 11);
        assert_eq!(a.image, b.image);
        assert_eq!(a.labels, b.labels);
        assert!(a.image.in_unit_range());
        let mut seen = [false; 11];
        for &l in a.labels.data() {
            seen[l as usize] = true;
        }
        for c in [0usize, 1, 2, 3, 4, 5, 6, 7, 8, 10] {
            assert!(seen[c], "class {c} missing");
        }
    }

    #[test]
    fn identities_differ() {
        let a = render_face(32, 0, 5);
        let b = render_face(32, 1, 5);
        assert_ne!(a.image, b.image);
        assert_eq!(synth_faces(4, 2, 16, 0)[2].identity, "id000");
    }
}
