//! Pixel-level ROC and precision-recall curves.
//!
//! Thresholds sweep the distinct score values from high to low; all pixels
//! sharing a score switch to "positive" together. The ROC area is the
//! trapezoidal integral, which equals the Mann-Whitney statistic with ties
//! counted one half. The PR area is the step-wise sum `Σ (Rₖ − Rₖ₋₁)·Pₖ`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::AnomalyMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    /// Pixels scoring at least this value are called defective.
    pub threshold: f64,
    /// False positive rate (ROC) or recall (PR).
    pub x: f64,
    /// True positive rate (ROC) or precision (PR).
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

/// Cumulative (threshold, tp, fp) after each tie group, highest score
/// first, plus the positive and negative totals.
type Sweep = (Vec<(f64, usize, usize)>, usize, usize);

fn sweep(scores: &[f64], labels: &[bool]) -> Result<Sweep> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {bad}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    let mut steps = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((s, tp, fp));
    }
    Ok((steps, positives, negatives))
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<EvalCurve> {
    let (steps, p, n) = sweep(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(
            "ROC needs at least one positive and one negative pixel".into(),
        ));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    points.extend(steps.iter().map(|&(t, tp, fp)| CurvePoint {
        threshold: t,
        x: fp as f64 / n as f64,
        y: tp as f64 / p as f64,
    }));
    let auc = points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0)
        .sum();
    Ok(EvalCurve {
        kind: CurveKind::Roc,
        points,
        auc,
    })
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<EvalCurve> {
    let (steps, p, _) = sweep(scores, labels)?;
    if p == 0 {
        return Err(Error::UndefinedMetric(
            "precision-recall needs at least one positive pixel".into(),
        ));
    }
    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 1.0,
    }];
    points.extend(steps.iter().map(|&(t, tp, fp)| CurvePoint {
        threshold: t,
        x: tp as f64 / p as f64,
        y: tp as f64 / (tp + fp) as f64,
    }));
    let auc = points.windows(2).map(|w| (w[1].x - w[0].x) * w[1].y).sum();
    Ok(EvalCurve {
        kind: CurveKind::Pr,
        points,
        auc,
    })
}

impl EvalCurve {
    /// `threshold,x,y` rows under a header naming the axes.
    pub fn to_csv(&self) -> String {
        let (x, y) = match self.kind {
            CurveKind::Roc => ("fpr", "tpr"),
            CurveKind::Pr => ("recall", "precision"),
        };
        let mut out = format!("threshold,{x},{y}\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.x, p.y).expect("string write");
        }
        out
    }

    /// A self-contained line plot.
    pub fn to_svg(&self, title: &str) -> String {
        const SIZE: f64 = 360.0;
        const PAD: f64 = 48.0;
        let (xl, yl) = match self.kind {
            CurveKind::Roc => ("false positive rate", "true positive rate"),
            CurveKind::Pr => ("recall", "precision"),
        };
        let map = |x: f64, y: f64| (PAD + x * SIZE, PAD + (1.0 - y) * SIZE);
        let mut path = String::new();
        for (i, p) in self.points.iter().enumerate() {
            if self.kind == CurveKind::Pr && i > 0 {
                // step-wise: move right at the previous precision, then to the new one
                let (sx, sy) = map(p.x, self.points[i - 1].y);
                write!(path, " L{sx:.2},{sy:.2}").expect("string write");
            }
            let (sx, sy) = map(p.x, p.y);
            let cmd = if i == 0 { "M" } else { " L" };
            write!(path, "{cmd}{sx:.2},{sy:.2}").expect("string write");
        }
        let full = SIZE + 2.0 * PAD;
        format!(
            r##"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">
<rect width="100%" height="100%" fill="white"/>
<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#888"/>
<text x="{cx}" y="{ty}" text-anchor="middle" font-family="sans-serif" font-size="14">{title} (AUC {auc:.4})</text>
<text x="{cx}" y="{bx}" text-anchor="middle" font-family="sans-serif" font-size="12">{xl}</text>
<text x="14" y="{cx}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {cx})">{yl}</text>
<text x="{PAD}" y="{bl}" text-anchor="middle" font-family="sans-serif" font-size="10">0</text>
<text x="{r}" y="{bl}" text-anchor="middle" font-family="sans-serif" font-size="10">1</text>
<path d="{path}" fill="none" stroke="#1f77b4" stroke-width="2"/>
</svg>
"##,
            cx = full / 2.0,
            ty = PAD / 2.0,
            bx = full - 10.0,
            bl = PAD + SIZE + 14.0,
            r = PAD + SIZE,
            auc = self.auc,
        )
    }
}

/// Pixel scores and labels gathered from scanned images.
#[derive(Clone, Debug, Default)]
pub struct PixelSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    /// Pixels outside every scoring block.
    pub excluded: usize,
    /// Defective pixels among the excluded ones.
    pub excluded_positive: usize,
}

impl PixelSet {
    /// Adds the scored pixels of `map`; unscored pixels are counted, not used.
    pub fn push_map(&mut self, map: &AnomalyMap, labels: &[u8]) -> Result<()> {
        if labels.len() != map.scores.len() {
            return Err(Error::InvalidArgument(
                "label mask does not match the anomaly map".into(),
            ));
        }
        for ((&s, &c), &l) in map.scores.iter().zip(&map.coverage).zip(labels) {
            if c == 0 {
                self.excluded += 1;
                self.excluded_positive += usize::from(l != 0);
            } else {
                self.scores.push(s as f64);
                self.labels.push(l != 0);
            }
        }
        Ok(())
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub auroc: f64,
    pub auprc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub excluded_pixels: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub roc: EvalCurve,
    pub pr: EvalCurve,
    pub summary: EvalSummary,
}

pub fn evaluate(pixels: &PixelSet) -> Result<Evaluation> {
    let roc = roc_curve(&pixels.scores, &pixels.labels)?;
    let pr = pr_curve(&pixels.scores, &pixels.labels)?;
    let positives = pixels.positives();
    let summary = EvalSummary {
        auroc: roc.auc,
        auprc: pr.auc,
        positives,
        negatives: pixels.labels.len() - positives,
        excluded_pixels: pixels.excluded,
    };
    Ok(Evaluation { roc, pr, summary })
}

impl Evaluation {
    /// Writes `roc.csv`, `pr.csv`, `metrics.json` and, optionally, SVG plots.
    pub fn write(&self, dir: &Path, plots: bool) -> Result<()> {
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("roc.csv", self.roc.to_csv())?;
        write("pr.csv", self.pr.to_csv())?;
        let json = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        write("metrics.json", json + "\n")?;
        if plots {
            write("roc.svg", self.roc.to_svg("ROC"))?;
            write("pr.svg", self.pr.to_svg("Precision-recall"))?;
        }
        Ok(())
    }
}
