use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::ImageSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{kernels, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub classes: Vec<String>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Images `idx` of `set` as an `n x 3 x S x S` tensor in `[0, 1]`.
pub(crate) fn batch_tensor(set: &ImageSet, idx: &[usize]) -> Tensor<f32> {
    let n = set.image_len();
    let mut data = Vec::with_capacity(idx.len() * n);
    for &k in idx {
        data.extend(set.image(k).iter().map(|&b| crate::dsp::dequantize(b)));
    }
    Tensor::new(&[idx.len(), 3, set.size, set.size], data).expect("batch shape")
}

/// Argmax accuracy and confusion matrix, no augmentation.
pub fn evaluate(model: &Model, set: &ImageSet, batch: usize) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluate on an empty split".into()));
    }
    let c = model.arch.num_classes;
    if set.num_classes() != c {
        return Err(Error::InvalidArgument(format!("split has {} classes, model {c}", set.num_classes())));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let logits = model.logits(&batch_tensor(set, chunk))?;
        for (r, &k) in chunk.iter().enumerate() {
            confusion[set.labels[k]][kernels::argmax(logits.row(r))] += 1;
        }
    }
    let correct = (0..c).map(|k| confusion[k][k]).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / set.len() as f64,
        correct,
        total: set.len(),
        classes: set.classes.clone(),
        confusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub params: usize,
    pub checkpoint_bytes: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
}

/// Parameter count, serialized size and single-sample forward latency.
pub fn bench(model: &Model, repetitions: usize) -> Result<BenchReport> {
    let s = model.arch.img_size;
    let x = Tensor::from_fn(&[1, model.arch.in_channels, s, s], |k| ((k * 31 % 97) as f32) / 97.0);
    for _ in 0..repetitions.clamp(10, 100) {
        std::hint::black_box(model.logits(&x)?);
    }
    let mut times = Vec::with_capacity(repetitions.max(1));
    for _ in 0..repetitions.max(1) {
        let t = Instant::now();
        std::hint::black_box(model.logits(std::hint::black_box(&x))?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let m = times.len();
    let median_ms = if m % 2 == 1 { times[m / 2] } else { 0.5 * (times[m / 2 - 1] + times[m / 2]) };
    Ok(BenchReport {
        params: model.param_count().total,
        checkpoint_bytes: model.to_bytes().len(),
        repetitions: m,
        median_ms,
        mean_ms,
        min_ms: times[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, BackboneConfig};

    fn set() -> ImageSet {
        ImageSet {
            size: 16,
            classes: (0..6).map(|c| c.to_string()).collect(),
            pixels: (0..12 * 768).map(|k| (k % 251) as u8).collect(),
            labels: (0..12).map(|k| k % 6).collect(),
        }
    }

    #[test]
    fn constant_predictor() {
        let mut m = build_model(&BackboneConfig { img_size: 16, ..Default::default() }, 0).unwrap();
        for w in m.classifier.weight.data_mut() {
            *w = 0.0;
        }
        m.classifier.bias.data_mut()[0] = 1.0;
        let r = evaluate(&m, &set(), 5).unwrap();
        assert_eq!(r.accuracy, 1.0 / 6.0);
        for row in &r.confusion {
            assert_eq!(row[0], 2);
            assert_eq!(row.iter().sum::<usize>(), 2);
        }
        assert_eq!(r, evaluate(&m, &set(), 7).unwrap());
    }

    #[test]
    fn empty_split_rejected() {
        let m = build_model(&BackboneConfig { img_size: 16, ..Default::default() }, 0).unwrap();
        let mut s = set();
        s.pixels.clear();
        s.labels.clear();
        assert!(evaluate(&m, &s, 4).is_err());
    }
}
