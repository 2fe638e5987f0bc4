//! IQ crop to 3-channel spectrogram image.
//!
//! Conventions: non-centered framing, periodic Hann window, unnormalized
//! forward DFT keeping bins `0..=n_fft/2`. Image rows are frequency bins
//! (row 0 is DC) and columns are frames. Channels are log-magnitude, mapped
//! cosine phase and mapped sine phase.

use std::io::Cursor;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Population z-score `(v - mean) / (std + eps)`.
pub fn zscore_standardize(stream: &[f64], eps: f64) -> Result<Vec<f64>> {
    if stream.is_empty() {
        return Err(Error::InvalidArgument("zscore of an empty stream".into()));
    }
    let n = stream.len() as f64;
    let mean = stream.iter().sum::<f64>() / n;
    let var = stream.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    Ok(stream.iter().map(|v| (v - mean) / denom).collect())
}

/// `w[n] = 0.5 (1 - cos(2 pi n / len))`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())).collect()
}

/// Number of frames for `n` samples.
pub fn frame_count(n: usize, n_fft: usize, hop: usize) -> usize {
    if n < n_fft || hop == 0 {
        0
    } else {
        1 + (n - n_fft) / hop
    }
}

/// Complex time-frequency matrix, `bins x frames`, row-major by bin.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTF {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub n_fft: usize,
    pub hop: usize,
}

impl ComplexTF {
    pub fn at(&self, bin: usize, frame: usize) -> Complex<f64> {
        let k = bin * self.frames + frame;
        Complex::new(self.re[k], self.im[k])
    }
}

/// Reusable STFT plan for one `(n_fft, hop)`.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Result<Self> {
        if n_fft < 2 || hop == 0 {
            return Err(Error::InvalidArgument(format!("stft needs n_fft >= 2 and hop >= 1, got {n_fft}, {hop}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self { n_fft, hop, window: hann_periodic(n_fft), fft })
    }

    pub fn run(&self, signal: &[f64]) -> Result<ComplexTF> {
        let (n_fft, hop) = (self.n_fft, self.hop);
        if signal.len() < n_fft {
            return Err(Error::InvalidArgument(format!("stft: signal length {} < n_fft {n_fft}", signal.len())));
        }
        let frames = frame_count(signal.len(), n_fft, hop);
        let bins = n_fft / 2 + 1;
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let seg = &signal[t * hop..t * hop + n_fft];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                re[k * frames + t] = buf[k].re;
                im[k * frames + t] = buf[k].im;
            }
        }
        Ok(ComplexTF { re, im, bins, frames, n_fft, hop })
    }
}

pub fn stft(signal: &[f64], n_fft: usize, hop: usize) -> Result<ComplexTF> {
    Stft::new(n_fft, hop)?.run(signal)
}

/// Percentile of sorted data by linear interpolation between order statistics.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Degenerate-range threshold for percentile scaling.
pub const RANGE_EPS: f64 = 1e-12;

/// Maps `[a, b]` to `[0, 1]` with clamping; all zeros when `b - a < 1e-12`.
pub fn scale_between(values: &[f64], a: f64, b: f64) -> Vec<f64> {
    if !(b - a >= RANGE_EPS) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - a) / (b - a)).clamp(0.0, 1.0)).collect()
}

/// The `lo_pct` and `hi_pct` percentiles of `values`.
pub fn percentile_anchors(values: &[f64], lo_pct: f64, hi_pct: f64) -> Result<(f64, f64)> {
    if !(0.0..=100.0).contains(&lo_pct) || !(0.0..=100.0).contains(&hi_pct) || lo_pct >= hi_pct {
        return Err(Error::InvalidArgument(format!("percentiles must satisfy 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}")));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty matrix".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((percentile_sorted(&sorted, lo_pct), percentile_sorted(&sorted, hi_pct)))
}

pub fn percentile_scale(values: &[f64], lo_pct: f64, hi_pct: f64) -> Result<Vec<f64>> {
    let (a, b) = percentile_anchors(values, lo_pct, hi_pct)?;
    Ok(scale_between(values, a, b))
}

/// Per-output taps `(first input index, weights)` of a triangle filter.
///
/// Output `o` is centred at input coordinate `(o + 0.5) * n_in / n_out`; the
/// filter support is one input pixel, widened by the scale factor when
/// shrinking so every input contributes. Weights are normalized over the
/// in-range taps.
fn triangle_taps(n_in: usize, n_out: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = n_in as f64 / n_out as f64;
    let support = scale.max(1.0);
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(n_in);
            let mut w: Vec<f64> = (lo..hi)
                .map(|i| (1.0 - ((i as f64 + 0.5 - center) / support).abs()).max(0.0))
                .collect();
            let sum: f64 = w.iter().sum();
            for v in &mut w {
                *v /= sum;
            }
            (lo, w)
        })
        .collect()
}

/// Bilinear (triangle filter) resize with half-pixel-centred sampling.
///
/// Enlarging or keeping the size is plain bilinear interpolation with edge
/// clamping; shrinking widens the filter by the scale factor (antialiasing).
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let (ty, tx) = (triangle_taps(h, out_h), triangle_taps(w, out_w));
    let mut cols = vec![0.0; h * out_w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for (o, (lo, wt)) in tx.iter().enumerate() {
            cols[r * out_w + o] = wt.iter().zip(&row[*lo..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (o, (lo, wt)) in ty.iter().enumerate() {
        let dst = &mut out[o * out_w..(o + 1) * out_w];
        for (k, &wk) in wt.iter().enumerate() {
            let srow = &cols[(lo + k) * out_w..(lo + k + 1) * out_w];
            for (d, &v) in dst.iter_mut().zip(srow) {
                *d += wk * v;
            }
        }
    }
    out
}

/// Where the log-magnitude percentile anchors come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PercentileScope {
    /// Anchors computed on each crop.
    PerCrop,
    /// Fixed anchors `(lo, hi)` in log-magnitude units, shared by every crop.
    Fixed { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageOptions {
    pub img_size: usize,
    pub lo_pct: f64,
    pub hi_pct: f64,
    pub scope: PercentileScope,
}

impl Default for ImageOptions {
    fn default() -> Self {
        Self { img_size: 64, lo_pct: 0.5, hi_pct: 99.5, scope: PercentileScope::PerCrop }
    }
}

/// Three `size x size` channels in `[0, 1]`, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramImage {
    pub size: usize,
    pub data: Vec<f32>,
}

impl SpectrogramImage {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    /// Interleaved 8-bit RGB, `round(v * 255)` clamped.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.size * self.size;
        let mut out = Vec::with_capacity(3 * n);
        for p in 0..n {
            for c in 0..3 {
                out.push(quantize(self.data[c * n + p]));
            }
        }
        out
    }

    /// Inverse of [`SpectrogramImage::to_rgb8`]: each byte becomes `v / 255`.
    pub fn from_rgb8(size: usize, rgb: &[u8]) -> Result<Self> {
        let n = size * size;
        if rgb.len() != 3 * n {
            return Err(Error::shape("from_rgb8", format!("{} bytes for a {size}x{size} RGB image", rgb.len())));
        }
        let mut data = vec![0.0f32; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                data[c * n + p] = dequantize(rgb[3 * p + c]);
            }
        }
        Ok(Self { size, data })
    }
}

pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Combines the per-stream STFTs into `S = S_I + j S_Q` and maps it to an image.
pub fn tf_channels(s_i: &ComplexTF, s_q: &ComplexTF, opts: &ImageOptions) -> Result<SpectrogramImage> {
    if (s_i.bins, s_i.frames) != (s_q.bins, s_q.frames) {
        return Err(Error::InvalidArgument(format!(
            "tf_channels: S_I is {}x{} but S_Q is {}x{}",
            s_i.bins, s_i.frames, s_q.bins, s_q.frames
        )));
    }
    if opts.img_size == 0 || s_i.bins == 0 || s_i.frames == 0 {
        return Err(Error::InvalidArgument("tf_channels: empty input or zero img_size".into()));
    }
    let n = s_i.re.len();
    let mut logmag = Vec::with_capacity(n);
    let mut cos = Vec::with_capacity(n);
    let mut sin = Vec::with_capacity(n);
    for k in 0..n {
        let re = s_i.re[k] - s_q.im[k];
        let im = s_i.im[k] + s_q.re[k];
        let mag = re.hypot(im);
        logmag.push(mag.ln_1p());
        if mag > 0.0 {
            cos.push((re / mag + 1.0) / 2.0);
            sin.push((im / mag + 1.0) / 2.0);
        } else {
            cos.push(1.0);
            sin.push(0.5);
        }
    }
    let ch0 = match opts.scope {
        PercentileScope::PerCrop => percentile_scale(&logmag, opts.lo_pct, opts.hi_pct)?,
        PercentileScope::Fixed { lo, hi } => scale_between(&logmag, lo, hi),
    };
    let s = opts.img_size;
    let mut data = Vec::with_capacity(3 * s * s);
    for ch in [&ch0, &cos, &sin] {
        data.extend(resize_bilinear(ch, s_i.bins, s_i.frames, s, s).into_iter().map(|v| v.clamp(0.0, 1.0) as f32));
    }
    Ok(SpectrogramImage { size: s, data })
}

/// Full crop pipeline: z-score each stream, STFT each, then [`tf_channels`].
pub fn crop_to_image(i: &[f64], q: &[f64], plan: &Stft, eps: f64, opts: &ImageOptions) -> Result<SpectrogramImage> {
    let zi = zscore_standardize(i, eps)?;
    let zq = zscore_standardize(q, eps)?;
    tf_channels(&plan.run(&zi)?, &plan.run(&zq)?, opts)
}

/// 8-bit RGB PNG with `(R, G, B) = (ch0, ch1, ch2)`.
pub fn encode_png(img: &SpectrogramImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.size as u32, img.size as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(format!("png header: {e}")))?;
        w.write_image_data(&img.to_rgb8()).map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes a square 8-bit RGB PNG produced by [`encode_png`].
pub fn decode_png(bytes: &[u8]) -> Result<SpectrogramImage> {
    let mut r = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(|e| Error::Format(format!("png: {e}")))?;
    let mut buf = vec![0u8; r.output_buffer_size().ok_or_else(|| Error::Format("png: image too large".into()))?];
    let info = r.next_frame(&mut buf).map_err(|e| Error::Format(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight || info.width != info.height {
        return Err(Error::Format(format!(
            "png: expected square 8-bit RGB, got {:?}/{:?} {}x{}",
            info.color_type, info.bit_depth, info.width, info.height
        )));
    }
    buf.truncate(info.buffer_size());
    SpectrogramImage::from_rgb8(info.width as usize, &buf)
}
