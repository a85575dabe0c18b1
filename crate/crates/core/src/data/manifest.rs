use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use facedeblur_tensor::Execution;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::blur::{degrade, DegradationConfig, KernelBank, Split};
use crate::data::align::{align_face, align_labels, Landmarks};
use crate::data::semantic::encode_labels;
use crate::error::{io_err, Error, Result};
use crate::image::{Image, LabelMap};
use crate::rng;

const NOISE_TAG: u64 = 0x4E;
const PAIR_TAG: u64 = 0x50;
const FORMAT: &str = "facedeblur-manifest-1";

/// One blurred/clear pair. Paths are relative to the manifest directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clear_path: PathBuf,
    pub kernel_id: usize,
    pub noise_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    /// Materialized 8-bit copy of the degraded image, if written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blurred_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    degradation: DegradationConfig,
    kernel_bank_path: PathBuf,
    image_size: usize,
    alignment: [[f64; 2]; 5],
}

/// JSON-lines manifest: a header line followed by one line per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub degradation: DegradationConfig,
    pub kernel_bank_path: PathBuf,
    pub image_size: usize,
    pub alignment: Landmarks,
    pub base_dir: PathBuf,
}

/// `path` relative to `base`, climbing with `..` when needed. Both must be
/// absolute for the result to be meaningful.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let (a, b): (Vec<_>, Vec<_>) = (path.components().collect(), base.components().collect());
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return path.to_path_buf();
    }
    let mut out: PathBuf = b[common..].iter().map(|_| Component::ParentDir).collect();
    out.extend(&a[common..]);
    out
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn has_labels(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.labels_path.is_some())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = Header {
            format: FORMAT.into(),
            degradation: self.degradation,
            kernel_bank_path: self.kernel_bank_path.clone(),
            image_size: self.image_size,
            alignment: self.alignment.0.map(|(x, y)| [x, y]),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(io_err(path))
    }

    /// Parses and checks that every referenced file exists and every kernel
    /// id resolves in the bank.
    pub fn load(path: &Path) -> Result<DatasetManifest> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let fmt = |msg: String| Error::Format { path: path.into(), msg };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(lines.next().ok_or_else(|| fmt("empty manifest".into()))?)
            .map_err(|e| fmt(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(fmt(format!("unsupported format {:?}", header.format)));
        }
        let entries = lines
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| fmt(format!("entry {i}: {e}"))))
            .collect::<Result<Vec<ManifestEntry>>>()?;
        let m = DatasetManifest {
            entries,
            degradation: header.degradation,
            kernel_bank_path: header.kernel_bank_path,
            image_size: header.image_size,
            alignment: Landmarks(header.alignment.map(|[x, y]| (x, y))),
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        let bank = self.load_bank()?;
        for (i, e) in self.entries.iter().enumerate() {
            for p in std::iter::once(&e.clear_path).chain(e.labels_path.as_ref()) {
                if !self.resolve(p).is_file() {
                    return Err(Error::Input(format!("entry {i}: missing file {}", self.resolve(p).display())));
                }
            }
            bank.get(e.kernel_id).map_err(|_| Error::Input(format!("entry {i}: kernel id {} not in bank", e.kernel_id)))?;
        }
        Ok(())
    }

    pub fn load_bank(&self) -> Result<KernelBank> {
        KernelBank::load(&self.resolve(&self.kernel_bank_path), Split::Train)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_manifest(self)
    }
}

/// Inputs of [`synthesize_dataset`].
#[derive(Clone, Debug)]
pub struct SynthesizeOptions {
    pub clear_dir: PathBuf,
    pub labels_dir: Option<PathBuf>,
    /// Per-image `<stem>.txt` five-point landmark files; when given, images
    /// and labels are aligned to the template before use.
    pub landmarks_dir: Option<PathBuf>,
    pub kernel_bank_path: PathBuf,
    pub degradation: DegradationConfig,
    pub out_dir: PathBuf,
    /// Kernels drawn per image without replacement; `None` is the full cross product.
    pub pairs_per_image: Option<usize>,
    pub materialize: bool,
    pub image_size: usize,
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    v.sort();
    Ok(v)
}

/// Identity label from a file stem: the text before the first `_`.
fn identity_of(stem: &str) -> Option<String> {
    stem.split_once('_').map(|(id, _)| id.to_string()).filter(|s| !s.is_empty())
}

/// Builds the image x kernel manifest in `out_dir/manifest.jsonl`.
pub fn synthesize_dataset(opts: &SynthesizeOptions) -> Result<DatasetManifest> {
    opts.degradation.validate()?;
    let bank = KernelBank::load(&opts.kernel_bank_path, Split::Train)?;
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let out_dir = fs::canonicalize(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let images = list_pngs(&opts.clear_dir)?;
    if images.is_empty() {
        return Err(Error::Input(format!("no PNG images in {}", opts.clear_dir.display())));
    }
    let n_size = opts.image_size;
    let mut entries = Vec::new();
    for (i, path) in images.iter().enumerate() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut clear = Image::load_png(path)?;
        let mut labels = match &opts.labels_dir {
            Some(dir) => {
                let lp = dir.join(format!("{stem}.png"));
                if !lp.is_file() {
                    return Err(Error::Input(format!("missing label file {}", lp.display())));
                }
                let l = LabelMap::load_png(&lp)?;
                encode_labels(&l)?;
                Some((lp, l))
            }
            None => None,
        };
        let (clear_path, labels_path) = if let Some(dir) = &opts.landmarks_dir {
            let lm = Landmarks::load(&dir.join(format!("{stem}.txt")))?;
            clear = align_face(&clear, &lm, n_size)?;
            let aligned = out_dir.join("aligned");
            fs::create_dir_all(aligned.join("labels")).map_err(io_err(&aligned))?;
            let cp = aligned.join(format!("{stem}.png"));
            clear.save_png(&cp)?;
            let lp = match labels.take() {
                Some((_, l)) => {
                    let l = align_labels(&l, &lm, n_size)?;
                    let lp = aligned.join("labels").join(format!("{stem}.png"));
                    l.save_png(&lp)?;
                    Some(lp)
                }
                None => None,
            };
            (cp, lp)
        } else {
            if clear.height() != n_size || clear.width() != n_size {
                return Err(Error::Size(format!(
                    "{} is {}x{}, expected {n_size}x{n_size} (supply landmarks to align)",
                    path.display(),
                    clear.height(),
                    clear.width()
                )));
            }
            let abs = |p: &Path| fs::canonicalize(p).map_err(io_err(p));
            (abs(path)?, labels.map(|(lp, _)| abs(&lp)).transpose()?)
        };
        let kernel_ids: Vec<usize> = match opts.pairs_per_image {
            None => (0..bank.len()).collect(),
            Some(p) => {
                let mut r = rng::rng(rng::derive_seed2(opts.degradation.rng_seed, PAIR_TAG, i as u64));
                let mut ids = sample(&mut r, bank.len(), p.min(bank.len())).into_vec();
                ids.sort_unstable();
                ids
            }
        };
        for kernel_id in kernel_ids {
            let idx = entries.len() as u64;
            entries.push(ManifestEntry {
                clear_path: relative_to(&clear_path, &out_dir),
                kernel_id,
                noise_seed: rng::derive_seed2(opts.degradation.rng_seed, NOISE_TAG, idx),
                labels_path: labels_path.as_ref().map(|p| relative_to(p, &out_dir)),
                identity: identity_of(&stem),
                blurred_path: None,
            });
        }
    }
    let bank_path = fs::canonicalize(&opts.kernel_bank_path).map_err(io_err(&opts.kernel_bank_path))?;
    let mut manifest = DatasetManifest {
        entries,
        degradation: opts.degradation,
        kernel_bank_path: relative_to(&bank_path, &out_dir),
        image_size: n_size,
        alignment: Landmarks::template(n_size),
        base_dir: out_dir.clone(),
    };
    if opts.materialize {
        let dir = out_dir.join("blurred");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let data = manifest.dataset()?;
        let written = Execution::default().map_range(manifest.entries.len(), |i| {
            let p = dir.join(format!("{i:06}.png"));
            data.blurred(i)?.save_png(&p)?;
            Ok::<_, Error>(relative_to(&p, &out_dir))
        });
        for (e, p) in manifest.entries.iter_mut().zip(written) {
            e.blurred_path = Some(p?);
        }
    }
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// A clear face shared by all entries that reference it.
#[derive(Clone, Debug)]
pub struct Sample {
    pub clear: Image,
    pub labels: Option<LabelMap>,
    pub identity: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Pair {
    sample: usize,
    kernel_id: usize,
    noise_seed: u64,
}

/// In-memory dataset: distinct clear faces, the kernel bank and the
/// `(face, kernel, noise seed)` pairs. Blurred images are regenerated from
/// seeds on request.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    pairs: Vec<Pair>,
    bank: KernelBank,
    degradation: DegradationConfig,
    cache: Vec<Option<Image>>,
}

impl Dataset {
    pub fn from_manifest(m: &DatasetManifest) -> Result<Dataset> {
        let bank = m.load_bank()?;
        let mut index: HashMap<PathBuf, usize> = HashMap::new();
        let mut samples = Vec::new();
        let mut pairs = Vec::with_capacity(m.entries.len());
        for e in &m.entries {
            let cp = m.resolve(&e.clear_path);
            let s = match index.get(&cp) {
                Some(&s) => s,
                None => {
                    let clear = Image::load_png(&cp)?;
                    let labels = e.labels_path.as_ref().map(|p| LabelMap::load_png(&m.resolve(p))).transpose()?;
                    samples.push(Sample { clear, labels, identity: e.identity.clone() });
                    index.insert(cp, samples.len() - 1);
                    samples.len() - 1
                }
            };
            bank.get(e.kernel_id)?;
            pairs.push(Pair { sample: s, kernel_id: e.kernel_id, noise_seed: e.noise_seed });
        }
        Ok(Dataset { cache: vec![None; pairs.len()], samples, pairs, bank, degradation: m.degradation })
    }

    /// Full cross product of `samples` and the bank, seeded like
    /// [`synthesize_dataset`].
    pub fn in_memory(samples: Vec<Sample>, bank: KernelBank, degradation: DegradationConfig) -> Result<Dataset> {
        degradation.validate()?;
        let mut pairs = Vec::new();
        for s in 0..samples.len() {
            for kernel_id in 0..bank.len() {
                let idx = pairs.len() as u64;
                pairs.push(Pair { sample: s, kernel_id, noise_seed: rng::derive_seed2(degradation.rng_seed, NOISE_TAG, idx) });
            }
        }
        Ok(Dataset { cache: vec![None; pairs.len()], samples, pairs, bank, degradation })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn bank(&self) -> &KernelBank {
        &self.bank
    }

    pub fn has_labels(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.labels.is_some())
    }

    pub fn sample_of(&self, entry: usize) -> &Sample {
        &self.samples[self.pairs[entry].sample]
    }

    pub fn clear(&self, entry: usize) -> &Image {
        &self.sample_of(entry).clear
    }

    pub fn labels(&self, entry: usize) -> Option<&LabelMap> {
        self.sample_of(entry).labels.as_ref()
    }

    pub fn kernel_id(&self, entry: usize) -> usize {
        self.pairs[entry].kernel_id
    }

    pub fn kernel_size(&self, entry: usize) -> usize {
        self.bank.kernels()[self.pairs[entry].kernel_id].size()
    }

    pub fn noise_seed(&self, entry: usize) -> u64 {
        self.pairs[entry].noise_seed
    }

    /// Deterministic degradation of entry `entry`.
    pub fn blurred(&self, entry: usize) -> Result<Image> {
        if let Some(img) = &self.cache[entry] {
            return Ok(img.clone());
        }
        let p = self.pairs[entry];
        let cfg = DegradationConfig { rng_seed: p.noise_seed, ..self.degradation };
        degrade(&self.samples[p.sample].clear, self.bank.get(p.kernel_id)?, &cfg)
    }

    /// Precomputes every blurred image.
    pub fn cache_blurred(&mut self) -> Result<()> {
        let imgs = Execution::default().map_range(self.len(), |i| self.blurred(i));
        self.cache = imgs.into_iter().map(|r| r.map(Some)).collect::<Result<_>>()?;
        Ok(())
    }

    /// Entries whose kernel size is in `sizes`.
    pub fn entries_with_sizes(&self, sizes: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| sizes.contains(&self.kernel_size(i))).collect()
    }
}
