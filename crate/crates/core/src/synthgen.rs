//! Synthetic complex-baseband recordings: a below-noise spreading signal in
//! white Gaussian noise, optionally plus one of five jammer families.
//!
//! All jammers occupy positive baseband frequencies so that the combined
//! spectrogram `S_I + j S_Q` shows them on the retained half of the DFT.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Spreading waveform power relative to the unit-power noise (-20 dB).
pub const SPREAD_POWER: f64 = 0.01;
/// Samples per spreading chip.
pub const CHIP_SAMPLES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JammerClass {
    Clean,
    SingleTone,
    SingleChirp,
    SingleAM,
    SingleFM,
    NoiseBand,
}

impl JammerClass {
    pub const ALL: [JammerClass; 6] = [
        JammerClass::Clean,
        JammerClass::SingleTone,
        JammerClass::SingleChirp,
        JammerClass::SingleAM,
        JammerClass::SingleFM,
        JammerClass::NoiseBand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            JammerClass::Clean => "Clean",
            JammerClass::SingleTone => "SingleTone",
            JammerClass::SingleChirp => "SingleChirp",
            JammerClass::SingleAM => "SingleAM",
            JammerClass::SingleFM => "SingleFM",
            JammerClass::NoiseBand => "NoiseBand",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).expect("listed")
    }
}

impl fmt::Display for JammerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JammerClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {s:?}")))
    }
}

/// Concrete jammer parameters. Frequencies in Hz, times in seconds, phases in
/// radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JammerParams {
    Tone { f0: f64, phase: f64 },
    Chirp { f_start: f64, f_stop: f64, period: f64, phase: f64 },
    Am { carrier: f64, mod_freq: f64, index: f64, phase: f64 },
    Fm { carrier: f64, mod_freq: f64, deviation: f64, phase: f64 },
    NoiseBand { center: f64, bandwidth: f64 },
}

impl JammerParams {
    pub fn class(&self) -> JammerClass {
        match self {
            JammerParams::Tone { .. } => JammerClass::SingleTone,
            JammerParams::Chirp { .. } => JammerClass::SingleChirp,
            JammerParams::Am { .. } => JammerClass::SingleAM,
            JammerParams::Fm { .. } => JammerClass::SingleFM,
            JammerParams::NoiseBand { .. } => JammerClass::NoiseBand,
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!("range {what} is invalid: [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Per-class parameter ranges for randomly drawn jammers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JammerRanges {
    pub tone_freq: Range,
    /// Chirp lower edge; the sweep runs upward by `chirp_span`.
    pub chirp_start: Range,
    pub chirp_span: Range,
    pub chirp_period: Range,
    pub am_carrier: Range,
    pub am_mod_freq: Range,
    pub am_index: Range,
    pub fm_carrier: Range,
    pub fm_mod_freq: Range,
    pub fm_deviation: Range,
    pub noise_center: Range,
    pub noise_bandwidth: Range,
}

impl Default for JammerRanges {
    fn default() -> Self {
        Self {
            tone_freq: Range::new(500.0, 7000.0),
            chirp_start: Range::new(500.0, 2500.0),
            chirp_span: Range::new(2000.0, 4500.0),
            chirp_period: Range::new(0.1, 0.5),
            am_carrier: Range::new(2500.0, 5500.0),
            am_mod_freq: Range::new(1000.0, 2000.0),
            am_index: Range::new(0.7, 1.0),
            fm_carrier: Range::new(2500.0, 5500.0),
            fm_mod_freq: Range::new(2.0, 8.0),
            fm_deviation: Range::new(600.0, 1500.0),
            noise_center: Range::new(1500.0, 6500.0),
            noise_bandwidth: Range::new(400.0, 2000.0),
        }
    }
}

impl JammerRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("tone_freq", self.tone_freq),
            ("chirp_start", self.chirp_start),
            ("chirp_span", self.chirp_span),
            ("chirp_period", self.chirp_period),
            ("am_carrier", self.am_carrier),
            ("am_mod_freq", self.am_mod_freq),
            ("am_index", self.am_index),
            ("fm_carrier", self.fm_carrier),
            ("fm_mod_freq", self.fm_mod_freq),
            ("fm_deviation", self.fm_deviation),
            ("noise_center", self.noise_center),
            ("noise_bandwidth", self.noise_bandwidth),
        ] {
            r.check(name)?;
        }
        if self.chirp_period.lo <= 0.0 || self.noise_bandwidth.lo <= 0.0 {
            return Err(Error::Config("chirp_period and noise_bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Draws parameters for a non-clean class.
    pub fn draw(&self, class: JammerClass, rng: &mut impl Rng) -> Result<JammerParams> {
        let phase = |rng: &mut dyn rand::RngCore| rng.random_range(0.0..2.0 * PI);
        Ok(match class {
            JammerClass::Clean => {
                return Err(Error::InvalidArgument("Clean has no jammer parameters".into()));
            }
            JammerClass::SingleTone => JammerParams::Tone { f0: self.tone_freq.draw(rng), phase: phase(rng) },
            JammerClass::SingleChirp => {
                let f_start = self.chirp_start.draw(rng);
                let span = self.chirp_span.draw(rng);
                JammerParams::Chirp { f_start, f_stop: f_start + span, period: self.chirp_period.draw(rng), phase: phase(rng) }
            }
            JammerClass::SingleAM => JammerParams::Am {
                carrier: self.am_carrier.draw(rng),
                mod_freq: self.am_mod_freq.draw(rng),
                index: self.am_index.draw(rng),
                phase: phase(rng),
            },
            JammerClass::SingleFM => JammerParams::Fm {
                carrier: self.fm_carrier.draw(rng),
                mod_freq: self.fm_mod_freq.draw(rng),
                deviation: self.fm_deviation.draw(rng),
                phase: phase(rng),
            },
            JammerClass::NoiseBand => {
                JammerParams::NoiseBand { center: self.noise_center.draw(rng), bandwidth: self.noise_bandwidth.draw(rng) }
            }
        })
    }
}

/// A labeled IQ stream. Samples are stored as `f32`, the on-disk precision.
#[derive(Clone, Debug, PartialEq)]
pub struct IQRecording {
    pub i: Vec<f32>,
    pub q: Vec<f32>,
    pub sample_rate: f64,
    pub label: JammerClass,
    pub seed: u64,
    pub duration: f64,
    pub jsr_db: Option<f64>,
    pub params: Option<JammerParams>,
}

impl IQRecording {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn meta(&self) -> RecordingMeta {
        RecordingMeta {
            label: self.label.name().to_string(),
            sample_rate: self.sample_rate,
            seed: Some(self.seed),
            duration: Some(self.duration),
            jsr_db: self.jsr_db,
            params: self.params.clone(),
        }
    }
}

fn sample_count(duration_s: f64, sample_rate: f64) -> Result<usize> {
    if !(duration_s > 0.0 && duration_s.is_finite()) || !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration and sample rate must be positive, got {duration_s} s at {sample_rate} Hz"
        )));
    }
    let n = (duration_s * sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{duration_s} s at {sample_rate} Hz has no samples")));
    }
    Ok(n)
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Clean complex stream in `f64`: unit-variance complex noise plus BPSK chips.
fn clean_f64(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_stream(seed, 0);
    let s = (0.5f64).sqrt();
    let mut i: Vec<f64> = Vec::with_capacity(n);
    let mut q: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        i.push(s * rng.sample::<f64, _>(StandardNormal));
        q.push(s * rng.sample::<f64, _>(StandardNormal));
    }
    let amp = (SPREAD_POWER / 2.0).sqrt();
    let mut chip = 0.0;
    for k in 0..n {
        if k % CHIP_SAMPLES == 0 {
            chip = if rng.random::<bool>() { amp } else { -amp };
        }
        i[k] += chip;
        q[k] += chip;
    }
    (i, q)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn synth_clean(duration_s: f64, sample_rate: f64, seed: u64) -> Result<IQRecording> {
    let n = sample_count(duration_s, sample_rate)?;
    let (i, q) = clean_f64(n, seed);
    Ok(IQRecording {
        i: to_f32(&i),
        q: to_f32(&q),
        sample_rate,
        label: JammerClass::Clean,
        seed,
        duration: duration_s,
        jsr_db: None,
        params: None,
    })
}

/// Unscaled complex jammer waveform.
pub fn jammer_waveform(params: &JammerParams, n: usize, sample_rate: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let dt = 1.0 / sample_rate;
    let from_phase = |phi: &dyn Fn(f64) -> f64, amp: &dyn Fn(f64) -> f64| {
        let mut i = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 * dt;
            let (s, c) = phi(t).sin_cos();
            let a = amp(t);
            i.push(a * c);
            q.push(a * s);
        }
        (i, q)
    };
    let out = match *params {
        JammerParams::Tone { f0, phase } => from_phase(&|t| 2.0 * PI * f0 * t + phase, &|_| 1.0),
        JammerParams::Chirp { f_start, f_stop, period, phase } => {
            if !(period > 0.0) {
                return Err(Error::InvalidArgument(format!("chirp period must be > 0, got {period}")));
            }
            let rate = (f_stop - f_start) / period;
            from_phase(
                &|t| {
                    let tau = t % period;
                    2.0 * PI * (f_start * tau + 0.5 * rate * tau * tau) + phase
                },
                &|_| 1.0,
            )
        }
        JammerParams::Am { carrier, mod_freq, index, phase } => from_phase(
            &|t| 2.0 * PI * carrier * t + phase,
            &|t| 1.0 + index * (2.0 * PI * mod_freq * t).cos(),
        ),
        JammerParams::Fm { carrier, mod_freq, deviation, phase } => {
            if !(mod_freq > 0.0) {
                return Err(Error::InvalidArgument(format!("FM rate must be > 0, got {mod_freq}")));
            }
            let beta = deviation / mod_freq;
            from_phase(&|t| 2.0 * PI * carrier * t + beta * (2.0 * PI * mod_freq * t).sin() + phase, &|_| 1.0)
        }
        JammerParams::NoiseBand { center, bandwidth } => {
            if !(bandwidth > 0.0) {
                return Err(Error::InvalidArgument(format!("noise bandwidth must be > 0, got {bandwidth}")));
            }
            let mut rng = rng_stream(seed, 2);
            let mut buf: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let mut planner = FftPlanner::new();
            planner.plan_fft_forward(n).process(&mut buf);
            let df = sample_rate / n as f64;
            for (k, v) in buf.iter_mut().enumerate() {
                let f = if k <= n / 2 { k as f64 * df } else { (k as f64 - n as f64) * df };
                if (f - center).abs() > bandwidth / 2.0 {
                    *v = Complex::new(0.0, 0.0);
                }
            }
            planner.plan_fft_inverse(n).process(&mut buf);
            buf.iter().map(|c| (c.re, c.im)).unzip()
        }
    };
    Ok(out)
}

fn mean_power(i: &[f64], q: &[f64]) -> f64 {
    i.iter().zip(q).map(|(a, b)| a * a + b * b).sum::<f64>() / i.len() as f64
}

fn check_jsr(jsr_db: f64) -> Result<()> {
    if !(-10.0..=40.0).contains(&jsr_db) {
        return Err(Error::InvalidArgument(format!("jsr_db must be in [-10, 40], got {jsr_db}")));
    }
    Ok(())
}

/// Clean recording for `seed` plus a jammer with explicit parameters, scaled
/// so the mean jammer power is exactly `10^(jsr_db/10)` times the clean power.
pub fn synth_jammed_with(
    params: &JammerParams,
    jsr_db: f64,
    duration_s: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<IQRecording> {
    check_jsr(jsr_db)?;
    let n = sample_count(duration_s, sample_rate)?;
    let (mut i, mut q) = clean_f64(n, seed);
    let (ji, jq) = jammer_waveform(params, n, sample_rate, seed)?;
    let pj = mean_power(&ji, &jq);
    if !(pj > 0.0) {
        return Err(Error::Numeric(format!("jammer waveform has zero power: {params:?}")));
    }
    let g = (10f64.powf(jsr_db / 10.0) * mean_power(&i, &q) / pj).sqrt();
    for k in 0..n {
        i[k] += g * ji[k];
        q[k] += g * jq[k];
    }
    Ok(IQRecording {
        i: to_f32(&i),
        q: to_f32(&q),
        sample_rate,
        label: params.class(),
        seed,
        duration: duration_s,
        jsr_db: Some(jsr_db),
        params: Some(params.clone()),
    })
}

/// As [`synth_jammed_with`] with parameters drawn from `ranges`.
pub fn synth_jammed(
    class: JammerClass,
    jsr_db: f64,
    duration_s: f64,
    sample_rate: f64,
    seed: u64,
    ranges: &JammerRanges,
) -> Result<IQRecording> {
    if class == JammerClass::Clean {
        return Err(Error::InvalidArgument("synth_jammed needs a jammer class, got Clean".into()));
    }
    check_jsr(jsr_db)?;
    let params = ranges.draw(class, &mut rng_stream(seed, 1))?;
    synth_jammed_with(&params, jsr_db, duration_s, sample_rate, seed)
}

/// Per-recording seed: first 8 bytes (LE) of `sha256(base_seed || class || index)`.
pub fn recording_seed(base_seed: u64, class: JammerClass, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(class.name().as_bytes());
    h.update((index as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Recordings per class name; missing classes count as zero.
    pub counts: BTreeMap<String, usize>,
    pub duration: f64,
    pub sample_rate: f64,
    /// Per-recording JSR is drawn uniformly from this range.
    pub jsr_db: Range,
    pub seed: u64,
    pub ranges: JammerRanges,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            counts: JammerClass::ALL.iter().map(|c| (c.name().to_string(), 120)).collect(),
            duration: 1.0,
            sample_rate: 16000.0,
            jsr_db: Range::new(10.0, 20.0),
            seed: 0,
            ranges: JammerRanges::default(),
        }
    }
}

impl SynthConfig {
    pub fn with_count(mut self, per_class: usize) -> Self {
        self.counts = JammerClass::ALL.iter().map(|c| (c.name().to_string(), per_class)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for name in self.counts.keys() {
            name.parse::<JammerClass>().map_err(|_| Error::Config(format!("synth.counts: unknown class {name:?}")))?;
        }
        sample_count(self.duration, self.sample_rate).map_err(|e| Error::Config(e.to_string()))?;
        self.jsr_db.check("jsr_db")?;
        check_jsr(self.jsr_db.lo).and(check_jsr(self.jsr_db.hi)).map_err(|e| Error::Config(e.to_string()))?;
        self.ranges.validate()
    }

    pub fn count(&self, class: JammerClass) -> usize {
        self.counts.get(class.name()).copied().unwrap_or(0)
    }
}

/// Generates recording `index` of `class` under `cfg`.
pub fn synth_one(cfg: &SynthConfig, class: JammerClass, index: usize) -> Result<IQRecording> {
    let seed = recording_seed(cfg.seed, class, index);
    if class == JammerClass::Clean {
        return synth_clean(cfg.duration, cfg.sample_rate, seed);
    }
    let jsr = cfg.jsr_db.draw(&mut rng_stream(seed, 3));
    synth_jammed(class, jsr, cfg.duration, cfg.sample_rate, seed, &cfg.ranges)
}

/// JSON sidecar of a recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub label: String,
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub jsr_db: Option<f64>,
    #[serde(default)]
    pub params: Option<JammerParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    /// Path of the `.iq` file relative to the output root.
    pub path: String,
    pub label: String,
    pub index: usize,
    pub seed: u64,
    pub jsr_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub base_seed: u64,
    pub sample_rate: f64,
    pub duration: f64,
    pub entries: Vec<SynthEntry>,
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Interleaved little-endian `f32` bytes `(I, Q, I, Q, ...)`.
pub fn iq_bytes(i: &[f32], q: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * i.len());
    for (a, b) in i.iter().zip(q) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

/// Writes `<dir>/<stem>.iq` and its `.json` sidecar; returns the `.iq` path.
pub fn write_recording(dir: &Path, stem: &str, rec: &IQRecording) -> Result<PathBuf> {
    let iq = dir.join(format!("{stem}.iq"));
    write_file(&iq, &iq_bytes(&rec.i, &rec.q))?;
    write_file(&dir.join(format!("{stem}.json")), &to_json(&rec.meta()))?;
    Ok(iq)
}

/// Writes every recording under `out_dir/<class>/<index:05>.iq` plus `manifest.json`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthManifest> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for class in JammerClass::ALL {
        for index in 0..cfg.count(class) {
            let rec = synth_one(cfg, class, index)?;
            let stem = format!("{index:05}");
            write_recording(&out_dir.join(class.name()), &stem, &rec)?;
            entries.push(SynthEntry {
                path: format!("{}/{stem}.iq", class.name()),
                label: class.name().to_string(),
                index,
                seed: rec.seed,
                jsr_db: rec.jsr_db,
            });
        }
    }
    let manifest =
        SynthManifest { base_seed: cfg.seed, sample_rate: cfg.sample_rate, duration: cfg.duration, entries };
    write_file(&out_dir.join("manifest.json"), &to_json(&manifest))?;
    Ok(manifest)
}

/// An unlabeled IQ stream read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct IqStream {
    pub i: Vec<f32>,
    pub q: Vec<f32>,
    pub sample_rate: f64,
}

fn read_iq(path: &Path) -> Result<IqStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{} bytes is not a whole IQ pair count", bytes.len())),
        ));
    }
    let side = path.with_extension("json");
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: RecordingMeta = serde_json::from_slice(&text)
        .map_err(|e| Error::io(&side, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    let (i, q) = bytes
        .chunks_exact(8)
        .map(|c| {
            (f32::from_le_bytes(c[..4].try_into().expect("4")), f32::from_le_bytes(c[4..].try_into().expect("4")))
        })
        .unzip();
    Ok(IqStream { i, q, sample_rate: meta.sample_rate })
}

fn read_wav(path: &Path) -> Result<IqStream> {
    let bad = |e: hound::Error| {
        Error::io(path, match e {
            hound::Error::IoError(e) => e,
            other => std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string()),
        })
    };
    let mut r = hound::WavReader::open(path).map_err(bad)?;
    let spec = r.spec();
    if spec.channels != 2 {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("expected 2 channels, got {}", spec.channels)),
        ));
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(bad)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<std::result::Result<_, _>>().map_err(bad)?
        }
    };
    let (i, q) = samples.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
    Ok(IqStream { i, q, sample_rate: spec.sample_rate as f64 })
}

/// Reads a `.iq` recording (with sidecar) or a 2-channel `.wav` file.
pub fn load_stream(path: &Path) -> Result<IqStream> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("iq") => read_iq(path),
        Some("wav") => read_wav(path),
        _ => Err(Error::InvalidArgument(format!("{}: expected a .iq or .wav recording", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power(i: &[f32], q: &[f32]) -> f64 {
        i.iter().zip(q).map(|(&a, &b)| (a as f64).powi(2) + (b as f64).powi(2)).sum::<f64>() / i.len() as f64
    }

    #[test]
    fn clean_shape_and_mean() {
        let r = synth_clean(1.0, 16000.0, 7).unwrap();
        assert_eq!((r.i.len(), r.q.len()), (16000, 16000));
        let mi = r.i.iter().map(|&v| v as f64).sum::<f64>() / 16000.0;
        let mq = r.q.iter().map(|&v| v as f64).sum::<f64>() / 16000.0;
        assert!(mi.abs() < 0.05 && mq.abs() < 0.05);
        assert_eq!(r, synth_clean(1.0, 16000.0, 7).unwrap());
        assert!(synth_clean(0.0, 16000.0, 1).is_err());
        assert!(synth_clean(1.0, -1.0, 1).is_err());
    }

    #[test]
    fn power_ratio_is_exact_for_all_classes() {
        let ranges = JammerRanges::default();
        for class in &JammerClass::ALL[1..] {
            for jsr in [0.0, 13.0] {
                let r = synth_jammed(*class, jsr, 1.0, 16000.0, 11, &ranges).unwrap();
                let c = synth_clean(1.0, 16000.0, 11).unwrap();
                let ji: Vec<f32> = r.i.iter().zip(&c.i).map(|(a, b)| a - b).collect();
                let jq: Vec<f32> = r.q.iter().zip(&c.q).map(|(a, b)| a - b).collect();
                let ratio = power(&ji, &jq) / power(&c.i, &c.q);
                let want = 10f64.powf(jsr / 10.0);
                assert!((ratio / want - 1.0).abs() < 0.05, "{class} {jsr}: {ratio} vs {want}");
            }
        }
    }

    #[test]
    fn drawn_params_respect_ranges() {
        let ranges = JammerRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            match ranges.draw(JammerClass::SingleAM, &mut rng).unwrap() {
                JammerParams::Am { carrier, mod_freq, index, .. } => {
                    assert!(ranges.am_carrier.contains(carrier));
                    assert!(ranges.am_mod_freq.contains(mod_freq));
                    assert!(ranges.am_index.contains(index));
                }
                other => panic!("{other:?}"),
            }
            match ranges.draw(JammerClass::SingleChirp, &mut rng).unwrap() {
                JammerParams::Chirp { f_start, f_stop, period, .. } => {
                    assert!(ranges.chirp_start.contains(f_start));
                    assert!(ranges.chirp_span.contains(f_stop - f_start));
                    assert!(ranges.chirp_period.contains(period));
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn clean_rejected_by_jammed() {
        assert!(synth_jammed(JammerClass::Clean, 10.0, 1.0, 16000.0, 1, &JammerRanges::default()).is_err());
        assert!(synth_jammed(JammerClass::SingleTone, 41.0, 1.0, 16000.0, 1, &JammerRanges::default()).is_err());
    }

    #[test]
    fn seeds_differ_by_class_and_index() {
        let a = recording_seed(1, JammerClass::Clean, 0);
        assert_ne!(a, recording_seed(1, JammerClass::Clean, 1));
        assert_ne!(a, recording_seed(1, JammerClass::NoiseBand, 0));
        assert_ne!(a, recording_seed(2, JammerClass::Clean, 0));
    }

    #[test]
    fn class_names_round_trip() {
        for c in JammerClass::ALL {
            assert_eq!(c.name().parse::<JammerClass>().unwrap(), c);
        }
        assert!("Jammer".parse::<JammerClass>().is_err());
    }
}
