//! Recording directories to balanced train/val/test PNG corpora.
//!
//! Per class, recordings are sorted by file name. The first `holdout` files
//! form the validation pool, the next `test_files` the test pool and the rest
//! the training pool. Each pool receives its per-class crop target split
//! across files by [`plan_quotas`]; files whose sliding windows run out are
//! topped up with circularly shifted crops ([`segment_crops`]).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{crop_to_image, decode_png, encode_png, ImageOptions, SpectrogramImage, Stft};
use crate::error::{Error, Result};
use crate::synthgen::{load_stream, to_json, write_file, JammerClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?} (train, val, test)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub sample_rate: f64,
    pub crop_sec: f64,
    pub overlap: f64,
    pub n_fft: usize,
    pub hop: usize,
    pub eps: f64,
    pub image: ImageOptions,
    /// Crops per file for each split.
    pub crops_per_file: SplitCounts,
    /// Per-class image totals; when absent, `crops_per_file x files`.
    pub targets: Option<SplitCounts>,
    /// Validation files per class.
    pub holdout: usize,
    /// Test files per class.
    pub test_files: usize,
    /// Class directory names in label order.
    pub classes: Vec<String>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            crop_sec: 1.0,
            overlap: 0.5,
            n_fft: 1024,
            hop: 256,
            eps: 1e-6,
            image: ImageOptions::default(),
            crops_per_file: SplitCounts { train: 4, val: 5, test: 4 },
            targets: None,
            holdout: 20,
            test_files: 25,
            classes: JammerClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            seed: 0,
        }
    }
}

/// Crop geometry derived from a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropGeometry {
    /// Crop length `L` in samples.
    pub len: usize,
    /// Crop hop `H` in samples.
    pub hop: usize,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sample_rate > 0.0) || !(self.crop_sec > 0.0) {
            return bad(format!("sample_rate and crop_sec must be positive ({}, {})", self.sample_rate, self.crop_sec));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap must be in [0, 1), got {}", self.overlap));
        }
        if self.n_fft < 2 || self.hop == 0 || !(self.eps > 0.0) {
            return bad("n_fft >= 2, hop >= 1 and eps > 0 are required".into());
        }
        let im = &self.image;
        if im.img_size == 0 || !(0.0..=100.0).contains(&im.lo_pct) || !(im.lo_pct < im.hi_pct && im.hi_pct <= 100.0) {
            return bad(format!("bad image options {im:?}"));
        }
        if self.classes.len() < 2 {
            return bad(format!("need at least 2 classes, got {:?}", self.classes));
        }
        let g = self.geometry();
        if g.len < self.n_fft {
            return bad(format!("crop length {} is shorter than n_fft {}", g.len, self.n_fft));
        }
        Ok(())
    }

    /// `L = floor(crop_sec * sr)`, `H = max(1, floor(L (1 - overlap)))`.
    pub fn geometry(&self) -> CropGeometry {
        let len = (self.crop_sec * self.sample_rate).floor() as usize;
        let hop = ((len as f64 * (1.0 - self.overlap)).floor() as usize).max(1);
        CropGeometry { len, hop }
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(&to_json(self))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Splits `target` over `n_files`: every file gets `target / n`, and the
/// first `target % n` files one more.
pub fn plan_quotas(n_files: usize, target: usize) -> Result<Vec<usize>> {
    if n_files == 0 {
        return if target == 0 {
            Ok(Vec::new())
        } else {
            Err(Error::InvalidArgument(format!("cannot place {target} crops in zero files")))
        };
    }
    let (base, rem) = (target / n_files, target % n_files);
    Ok((0..n_files).map(|k| base + usize::from(k < rem)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    /// Window start in the (possibly shifted) stream.
    pub start: usize,
    /// Left rotation applied to both streams before windowing.
    pub shift: usize,
}

/// Shifts used for the `deficit` extra crops of an `n`-sample stream.
pub fn shift_schedule(n: usize, deficit: usize) -> Vec<usize> {
    (0..deficit).map(|j| ((j as u128 + 1) * n as u128 / (deficit as u128 + 1)) as usize).collect()
}

/// `min(quota, W)` sliding windows, then `quota - W` windows at start 0 of
/// streams rotated left by [`shift_schedule`], where `W = 1 + (N - L) / H`.
pub fn segment_crops(i: &[f64], q: &[f64], len: usize, hop: usize, quota: usize) -> Result<Vec<Crop>> {
    let n = i.len();
    if q.len() != n {
        return Err(Error::InvalidArgument(format!("I has {n} samples but Q has {}", q.len())));
    }
    if len == 0 || len > n || hop == 0 {
        return Err(Error::InvalidArgument(format!("crop length {len} (hop {hop}) does not fit {n} samples")));
    }
    let windows = 1 + (n - len) / hop;
    let mut out: Vec<Crop> = (0..quota.min(windows))
        .map(|k| {
            let s = k * hop;
            Crop { i: i[s..s + len].to_vec(), q: q[s..s + len].to_vec(), start: s, shift: 0 }
        })
        .collect();
    if quota > windows {
        for s in shift_schedule(n, quota - windows) {
            let rot = |x: &[f64]| (0..len).map(|k| x[(k + s) % n]).collect::<Vec<_>>();
            out.push(Crop { i: rot(i), q: rot(q), start: 0, shift: s });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// Image path relative to the corpus root.
    pub path: String,
    pub label: String,
    pub label_index: usize,
    pub split: Split,
    /// Recording path relative to the recordings root.
    pub source: String,
    pub source_sha256: String,
    pub start: usize,
    pub shift: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub config: CorpusConfig,
    pub config_hash: String,
    pub geometry: CropGeometry,
    pub classes: Vec<String>,
    pub entries: Vec<CorpusEntry>,
    /// SHA-256 of this manifest serialized with an empty `manifest_hash`.
    pub manifest_hash: String,
}

impl CorpusManifest {
    pub fn count(&self, split: Split, label_index: usize) -> usize {
        self.entries.iter().filter(|e| e.split == split && e.label_index == label_index).count()
    }

    fn compute_hash(&self) -> String {
        let mut m = self.clone();
        m.manifest_hash = String::new();
        sha256_hex(&to_json(&m))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn list_recordings(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if matches!(p.extension().and_then(|x| x.to_str()), Some("iq" | "wav")) {
            files.push(p);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Builds the image tree under `out_root` and writes `manifest.json`.
pub fn build_corpus(recordings_root: &Path, cfg: &CorpusConfig, out_root: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let geom = cfg.geometry();
    let plan = Stft::new(cfg.n_fft, cfg.hop)?;
    let mut entries = Vec::new();
    for (label_index, class) in cfg.classes.iter().enumerate() {
        let files = list_recordings(&recordings_root.join(class))?;
        let pools = split_pools(class, &files, cfg)?;
        for (split, pool) in pools {
            let target = match cfg.targets {
                Some(t) => t.get(split),
                None => cfg.crops_per_file.get(split) * pool.len(),
            };
            let quotas = plan_quotas(pool.len(), target).map_err(|_| {
                Error::Config(format!("class {class}: {split} target {target} but no {split} recordings"))
            })?;
            for (path, quota) in pool.iter().zip(quotas) {
                if quota == 0 {
                    continue;
                }
                entries.extend(process_file(recordings_root, path, class, label_index, split, quota, cfg, &plan, out_root)?);
            }
        }
    }
    entries.sort_by(|a, b| (a.split, a.label_index, &a.path).cmp(&(b.split, b.label_index, &b.path)));
    let mut manifest = CorpusManifest {
        version: 1,
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        geometry: geom,
        classes: cfg.classes.clone(),
        entries,
        manifest_hash: String::new(),
    };
    manifest.manifest_hash = manifest.compute_hash();
    write_file(&out_root.join(MANIFEST_FILE), &to_json(&manifest))?;
    Ok(manifest)
}

fn split_pools<'a>(class: &str, files: &'a [PathBuf], cfg: &CorpusConfig) -> Result<Vec<(Split, &'a [PathBuf])>> {
    let (nv, nt) = (cfg.holdout, cfg.test_files);
    let train_wanted = cfg.targets.map_or(cfg.crops_per_file.train, |t| t.train) > 0;
    let needed = nv + nt + usize::from(train_wanted);
    if files.len() < needed {
        return Err(Error::Config(format!(
            "class {class}: {} recordings, need {needed} ({nv} validation hold-out, {nt} test, {} train)",
            files.len(),
            usize::from(train_wanted)
        )));
    }
    Ok(vec![(Split::Val, &files[..nv]), (Split::Test, &files[nv..nv + nt]), (Split::Train, &files[nv + nt..])])
}

#[allow(clippy::too_many_arguments)]
fn process_file(
    root: &Path,
    path: &Path,
    class: &str,
    label_index: usize,
    split: Split,
    quota: usize,
    cfg: &CorpusConfig,
    plan: &Stft,
    out_root: &Path,
) -> Result<Vec<CorpusEntry>> {
    let stream = load_stream(path)?;
    if stream.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "{}: sample rate {} differs from corpus sample_rate {}",
            path.display(),
            stream.sample_rate,
            cfg.sample_rate
        )));
    }
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let source_sha256 = sha256_hex(&raw);
    let source = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rec").to_string();
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let i = crate::dsp::zscore_standardize(&to64(&stream.i), cfg.eps)?;
    let q = crate::dsp::zscore_standardize(&to64(&stream.q), cfg.eps)?;
    let geom = cfg.geometry();
    let crops = segment_crops(&i, &q, geom.len, geom.hop, quota)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::with_capacity(crops.len());
    for (k, c) in crops.iter().enumerate() {
        let img = crop_to_image(&c.i, &c.q, plan, cfg.eps, &cfg.image)?;
        let png = encode_png(&img)?;
        let rel = format!("{}/{class}/{stem}_{k:02}.png", split.name());
        write_file(&out_root.join(&rel), &png)?;
        out.push(CorpusEntry {
            path: rel,
            label: class.to_string(),
            label_index,
            split,
            source: source.clone(),
            source_sha256: source_sha256.clone(),
            start: c.start,
            shift: c.shift,
            sha256: sha256_hex(&png),
        });
    }
    Ok(out)
}

pub fn read_manifest(out_root: &Path) -> Result<CorpusManifest> {
    let path = out_root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: CorpusManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::io(&path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    if m.compute_hash() != m.manifest_hash {
        return Err(Error::Integrity(format!("{}: manifest hash does not match its content", path.display())));
    }
    Ok(m)
}

/// Iterator over one split of a corpus in manifest order.
pub struct CorpusReader {
    root: PathBuf,
    classes: Vec<String>,
    entries: std::vec::IntoIter<CorpusEntry>,
}

pub fn load_corpus(out_root: &Path, split: Split) -> Result<CorpusReader> {
    let m = read_manifest(out_root)?;
    let entries: Vec<CorpusEntry> = m.entries.into_iter().filter(|e| e.split == split).collect();
    Ok(CorpusReader { root: out_root.to_path_buf(), classes: m.classes, entries: entries.into_iter() })
}

impl CorpusReader {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    fn read(&self, e: &CorpusEntry) -> Result<(SpectrogramImage, usize)> {
        let path = self.root.join(&e.path);
        let dir = Path::new(&e.path).parent().and_then(|p| p.file_name()).and_then(|s| s.to_str());
        if dir != Some(e.label.as_str()) || self.classes.get(e.label_index) != Some(&e.label) {
            return Err(Error::Integrity(format!(
                "{}: label {:?} (index {}) disagrees with its directory or the class list",
                path.display(),
                e.label,
                e.label_index
            )));
        }
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::io(
                &path,
                std::io::Error::new(std::io::ErrorKind::InvalidData, "content hash differs from manifest"),
            ));
        }
        let img = decode_png(&bytes)
            .map_err(|err| Error::io(&path, std::io::Error::new(std::io::ErrorKind::InvalidData, err.to_string())))?;
        Ok((img, e.label_index))
    }
}

impl Iterator for CorpusReader {
    type Item = Result<(SpectrogramImage, usize)>;

    fn next(&mut self) -> Option<Self::Item> {
        let e = self.entries.next()?;
        Some(self.read(&e))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.entries.size_hint()
    }
}

/// A whole split held as 8-bit channel-major images.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub size: usize,
    pub classes: Vec<String>,
    /// `len x 3 x size x size` bytes.
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        3 * self.size * self.size
    }

    pub fn image(&self, k: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[k * n..(k + 1) * n]
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// First `per_class` images of each class, in original order.
    pub fn take_per_class(&self, per_class: usize) -> ImageSet {
        let mut seen = vec![0usize; self.num_classes()];
        let mut out = ImageSet { size: self.size, classes: self.classes.clone(), pixels: Vec::new(), labels: Vec::new() };
        for k in 0..self.len() {
            let l = self.labels[k];
            if seen[l] < per_class {
                seen[l] += 1;
                out.pixels.extend_from_slice(self.image(k));
                out.labels.push(l);
            }
        }
        out
    }

    pub fn from_images(classes: Vec<String>, items: impl IntoIterator<Item = (SpectrogramImage, usize)>) -> Result<Self> {
        let mut out = ImageSet { size: 0, classes, pixels: Vec::new(), labels: Vec::new() };
        for (img, l) in items {
            if out.labels.is_empty() {
                out.size = img.size;
            } else if img.size != out.size {
                return Err(Error::shape("ImageSet", format!("mixed image sizes {} and {}", out.size, img.size)));
            }
            if l >= out.classes.len() {
                return Err(Error::Integrity(format!("label {l} outside {} classes", out.classes.len())));
            }
            let n = img.size * img.size;
            for c in 0..3 {
                out.pixels.extend(img.data[c * n..(c + 1) * n].iter().map(|&v| crate::dsp::quantize(v)));
            }
            out.labels.push(l);
        }
        Ok(out)
    }
}

/// Loads a whole split into memory.
pub fn load_split(out_root: &Path, split: Split) -> Result<ImageSet> {
    let reader = load_corpus(out_root, split)?;
    let classes = reader.classes().to_vec();
    let items = reader.collect::<Result<Vec<_>>>()?;
    ImageSet::from_images(classes, items)
}
