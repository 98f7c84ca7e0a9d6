//! Offline evaluation: layout rationality, text fidelity and the attention cost model.

use serde::{Deserialize, Serialize};

use crate::design::types::{BBox, ElementKind, Layout};
use crate::error::{Error, Result};

fn axes(b: &BBox) -> [f64; 6] {
    let [x0, y0, x1, y1] = b.coords();
    [x0, (x0 + x1) / 2.0, x1, y0, (y0 + y1) / 2.0, y1]
}

/// Mean over boxes of the smallest axis gap to any other box. Lower is better.
pub fn alignment_score(l: &Layout) -> Result<f64> {
    let n = l.boxes.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("alignment needs at least two boxes".into()));
    }
    let ax: Vec<[f64; 6]> = l.boxes.iter().map(axes).collect();
    let total: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (0..6).map(|k| (ax[i][k] - ax[j][k]).abs()).fold(f64::INFINITY, f64::min))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / n as f64)
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.coords();
    let [bx0, by0, bx1, by1] = b.coords();
    (ax1.min(bx1) - ax0.max(bx0)).max(0.0) * (ay1.min(by1) - ay0.max(by0)).max(0.0)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Mean over box pairs of intersection over the smaller area.
pub fn overlap_score(l: &Layout) -> Result<f64> {
    let n = l.boxes.len();
    if n < 2 {
        return Err(Error::UndefinedMetric("overlap needs at least two boxes".into()));
    }
    if let Some(b) = l.boxes.iter().find(|b| b.area() <= 0.0) {
        return Err(Error::InvalidLayout(format!("zero-area box {:?}", b.bins)));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            sum += intersection(&l.boxes[i], &l.boxes[j]) / l.boxes[i].area().min(l.boxes[j].area());
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Best total IoU of a one-to-one matching between `a` and `b`.
fn best_matching(a: &[&BBox], b: &[&BBox]) -> f64 {
    fn go(a: &[&BBox], b: &[&BBox], used: &mut Vec<bool>) -> f64 {
        let Some((first, rest)) = a.split_first() else { return 0.0 };
        let mut best = go(rest, b, used);
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(iou(first, b[j]) + go(rest, b, used));
                used[j] = false;
            }
        }
        best
    }
    go(a, b, &mut vec![false; b.len()])
}

/// Maximum mean IoU under same-type one-to-one matching, averaged over the larger layout.
pub fn max_iou(gen: &Layout, gt: &Layout) -> f64 {
    let denom = gen.boxes.len().max(gt.boxes.len());
    if denom == 0 {
        return 0.0;
    }
    let total: f64 = [ElementKind::Product, ElementKind::Text]
        .iter()
        .map(|&k| {
            let a: Vec<&BBox> = gen.boxes.iter().filter(|b| b.kind == k).collect();
            let b: Vec<&BBox> = gt.boxes.iter().filter(|b| b.kind == k).collect();
            if a.len() <= b.len() {
                best_matching(&a, &b)
            } else {
                best_matching(&b, &a)
            }
        })
        .sum();
    total / denom as f64
}

pub fn sentence_accuracy(preds: &[String], gts: &[String]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!("{} predictions for {} references", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Err(Error::invalid("no strings to compare"));
    }
    Ok(preds.iter().zip(gts).filter(|(p, g)| p == g).count() as f64 / gts.len() as f64)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut diag = row[0];
        row[0] = i;
        for j in 1..=b.len() {
            let up = row[j];
            row[j] = (diag + usize::from(a[i - 1] != b[j - 1])).min(row[j - 1] + 1).min(up + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Mean of edit distance over the longer length; two empty strings count 0.
pub fn normalized_edit_distance(preds: &[String], gts: &[String]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!("{} predictions for {} references", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Err(Error::invalid("no strings to compare"));
    }
    let total: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let m = p.chars().count().max(g.chars().count());
            if m == 0 {
                0.0
            } else {
                levenshtein(p, g) as f64 / m as f64
            }
        })
        .sum();
    Ok(total / gts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDims {
    pub d: u64,
    pub h: u64,
    pub r: u64,
    pub m: u64,
    pub n: u64,
}

impl BlockDims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.r == 0 || self.m == 0 {
            return Err(Error::invalid("block dims must be positive"));
        }
        if self.d % self.h != 0 {
            return Err(Error::invalid(format!("width {} not divisible by {} heads", self.d, self.h)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Full,
    Decomposed,
}

/// Multiply-add counted as two flops. Linear layers per token: qkv 6d², output
/// 2d², MLP 4rd². Attention over q queries and k keys: 4qkd.
///
/// Full attends jointly over L = M + 3N tokens. Decomposed runs self-attention
/// over each N-token condition stream, then a cross-attention from the M + N
/// prompt and noise queries to all L keys, reusing the condition streams' own
/// key/value projections. The linear cost is identical in both modes.
pub fn attention_flops(dims: BlockDims, mode: AttentionMode) -> Result<u64> {
    dims.validate()?;
    let BlockDims { d, r, m, n, .. } = dims;
    let l = m + 3 * n;
    let linear = l * (8 * d * d + 4 * r * d * d);
    let attn = match mode {
        AttentionMode::Full => 4 * l * l * d,
        AttentionMode::Decomposed => 2 * 4 * n * n * d + 4 * (m + n) * l * d,
    };
    Ok(linear + attn)
}

/// Fractional saving of the decomposed block over the full one.
pub fn flops_reduction(dims: BlockDims) -> Result<f64> {
    let full = attention_flops(dims, AttentionMode::Full)? as f64;
    let dec = attention_flops(dims, AttentionMode::Decomposed)? as f64;
    Ok(1.0 - dec / full)
}

/// Image-level scores that need large pretrained networks are plugged in from outside.
pub trait ExternalScorer {
    fn name(&self) -> &str;
    fn score(&self, images: &[crate::render::Raster], prompts: &[String]) -> Result<f64>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub alignment: Option<f64>,
    pub overlap: Option<f64>,
    pub miou: f64,
    pub sen_acc: Option<f64>,
    pub ned: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub alignment: f64,
    pub overlap: f64,
    pub miou: f64,
    pub sen_acc: f64,
    pub ned: f64,
    pub samples: Vec<SampleMetrics>,
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub external: std::collections::BTreeMap<String, f64>,
}

/// One prediction to score: generated and reference layouts, plus OCR
/// readings and reference strings when text fidelity is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub layout: Layout,
    pub reference: Layout,
    #[serde(default)]
    pub ocr: Vec<String>,
    #[serde(default)]
    pub texts: Vec<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn evaluate(records: &[EvalRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let mut samples = Vec::with_capacity(records.len());
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for r in records {
        // A missing reading (e.g. an unrenderable poster) counts as an empty string.
        if r.ocr.len() > r.texts.len() {
            return Err(Error::invalid(format!("{} OCR readings for {} texts", r.ocr.len(), r.texts.len())));
        }
        let mut ocr = r.ocr.clone();
        ocr.resize(r.texts.len(), String::new());
        let text = if r.texts.is_empty() {
            (None, None)
        } else {
            (Some(sentence_accuracy(&ocr, &r.texts)?), Some(normalized_edit_distance(&ocr, &r.texts)?))
        };
        preds.extend(ocr);
        gts.extend(r.texts.iter().cloned());
        samples.push(SampleMetrics {
            alignment: alignment_score(&r.layout).ok(),
            overlap: overlap_score(&r.layout).ok(),
            miou: max_iou(&r.layout, &r.reference),
            sen_acc: text.0,
            ned: text.1,
        });
    }
    let (sen_acc, ned) = if gts.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (sentence_accuracy(&preds, &gts)?, normalized_edit_distance(&preds, &gts)?)
    };
    Ok(MetricsReport {
        alignment: mean(samples.iter().filter_map(|s| s.alignment)),
        overlap: mean(samples.iter().filter_map(|s| s.overlap)),
        miou: mean(samples.iter().map(|s| s.miou)),
        sen_acc,
        ned,
        samples,
        external: Default::default(),
    })
}
