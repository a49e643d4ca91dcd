//! Evaluation metrics: PCK (torso-relative), PCKh (head-relative), PCP
//! (per-limb), and the bounding-box containment rate. All thresholds are
//! inclusive, and joints hidden in the ground truth never enter a
//! denominator.

use std::fmt;

use crate::error::{Error, Result};
use crate::keypoints::Keypoints;

/// Correct/counted tally for one joint or limb.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemRate {
    pub name: String,
    pub correct: u64,
    pub counted: u64,
}

impl ItemRate {
    pub fn rate(&self) -> Option<f64> {
        (self.counted > 0).then(|| self.correct as f64 / self.counted as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    /// Threshold fraction for distance metrics; `None` for containment.
    pub threshold: Option<f64>,
    pub samples: usize,
    pub correct: u64,
    pub counted: u64,
    pub items: Vec<ItemRate>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn overall(&self) -> f64 {
        self.correct as f64 / self.counted as f64
    }

    fn label(&self) -> String {
        match self.threshold {
            Some(t) => format!("{}@{}", self.metric, t),
            None => self.metric.clone(),
        }
    }

    /// Key-value document; one fact per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("metric {}\n", self.metric));
        if let Some(t) = self.threshold {
            s.push_str(&format!("threshold {t}\n"));
        }
        s.push_str(&format!("samples {}\n", self.samples));
        s.push_str(&format!("correct {}\n", self.correct));
        s.push_str(&format!("counted {}\n", self.counted));
        s.push_str(&format!("overall {:.6}\n", self.overall()));
        for item in &self.items {
            s.push_str(&format!("item {} {} {}\n", item.name, item.correct, item.counted));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning {w}\n"));
        }
        s
    }

    /// Count-weighted aggregation of per-batch reports for the same metric.
    pub fn merge(reports: &[MetricReport]) -> Result<MetricReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
        let mut out = first.clone();
        for r in &reports[1..] {
            if r.metric != out.metric || r.threshold != out.threshold {
                return Err(Error::InvalidArgument(format!(
                    "cannot merge {} into {}",
                    r.label(),
                    out.label()
                )));
            }
            if r.items.len() != out.items.len()
                || r.items.iter().zip(&out.items).any(|(a, b)| a.name != b.name)
            {
                return Err(Error::InvalidArgument(format!(
                    "item tables differ between {} reports",
                    out.metric
                )));
            }
            out.samples += r.samples;
            out.correct += r.correct;
            out.counted += r.counted;
            for (slot, item) in out.items.iter_mut().zip(&r.items) {
                slot.correct += item.correct;
                slot.counted += item.counted;
            }
            out.warnings.extend(r.warnings.iter().cloned());
        }
        Ok(out)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} over {} samples: {} ({}/{})",
            self.label(),
            self.samples,
            percent(self.correct, self.counted),
            self.correct,
            self.counted
        )?;
        for item in &self.items {
            writeln!(
                f,
                "  {:<12} {} ({}/{})",
                item.name,
                percent(item.correct, item.counted),
                item.correct,
                item.counted
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

fn percent(correct: u64, counted: u64) -> String {
    if counted == 0 {
        return "  n/a ".to_string();
    }
    format!("{:6.2}%", 100.0 * correct as f64 / counted as f64)
}

struct Tally {
    report: MetricReport,
}

impl Tally {
    fn new(metric: &str, threshold: Option<f64>, item_names: Vec<String>) -> Self {
        Tally {
            report: MetricReport {
                metric: metric.to_string(),
                threshold,
                samples: 0,
                correct: 0,
                counted: 0,
                items: item_names
                    .into_iter()
                    .map(|name| ItemRate { name, correct: 0, counted: 0 })
                    .collect(),
                warnings: Vec::new(),
            },
        }
    }

    fn record(&mut self, item: usize, correct: bool) {
        self.report.counted += 1;
        self.report.items[item].counted += 1;
        if correct {
            self.report.correct += 1;
            self.report.items[item].correct += 1;
        }
    }

    fn finish(mut self) -> Result<MetricReport> {
        if self.report.counted == 0 {
            return Err(Error::ZeroDenominator { metric: self.report.metric });
        }
        self.report.warnings.sort();
        Ok(self.report)
    }
}

fn check_paired(pred: &[Keypoints], gt: &[Keypoints], metric: &str) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "{metric}: {} predictions for {} ground-truth samples",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::ZeroDenominator { metric: metric.to_string() });
    }
    for (i, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || g.len() != gt[0].len() {
            return Err(Error::InvalidArgument(format!(
                "{metric}: sample {i} mixes joint counts ({} predicted, {} ground truth, {} expected)",
                p.len(),
                g.len(),
                gt[0].len()
            )));
        }
    }
    Ok(())
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn keypoint_metric(
    metric: &str,
    pred: &[Keypoints],
    gt: &[Keypoints],
    fraction: f64,
    reference: impl Fn(&Keypoints) -> Result<f64>,
) -> Result<MetricReport> {
    if !(fraction > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{metric}: threshold fraction must be > 0, got {fraction}"
        )));
    }
    check_paired(pred, gt, metric)?;
    let k = gt[0].len();
    let mut tally = Tally::new(metric, Some(fraction), (0..k).map(|j| format!("joint_{j}")).collect());
    for (p, g) in pred.iter().zip(gt) {
        let threshold = fraction * reference(g)?;
        tally.report.samples += 1;
        for j in 0..k {
            if !g.visible(j) {
                continue;
            }
            tally.record(j, dist(p.position(j), g.position(j)) <= threshold);
        }
    }
    tally.finish()
}

/// Percentage of correct keypoints against a fraction of the torso diameter.
pub fn pck(pred: &[Keypoints], gt: &[Keypoints], fraction: f64) -> Result<MetricReport> {
    keypoint_metric("pck", pred, gt, fraction, Keypoints::torso_length)
}

/// Percentage of correct keypoints against a fraction of the head diameter.
pub fn pckh(pred: &[Keypoints], gt: &[Keypoints], fraction: f64) -> Result<MetricReport> {
    keypoint_metric("pckh", pred, gt, fraction, Keypoints::head_length)
}

/// Percentage of correct parts: a limb counts when both endpoints are within
/// `fraction` of its ground-truth length. Limbs with a hidden endpoint are
/// skipped; zero-length ground-truth limbs are excluded with a warning.
pub fn pcp(pred: &[Keypoints], gt: &[Keypoints], fraction: f64) -> Result<MetricReport> {
    if !(fraction > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pcp: threshold fraction must be > 0, got {fraction}"
        )));
    }
    check_paired(pred, gt, "pcp")?;
    let limbs = gt[0].limbs().to_vec();
    if limbs.is_empty() {
        return Err(Error::MissingReference("limb pair list".into()));
    }
    let names = limbs.iter().map(|(a, b)| format!("limb_{a}_{b}")).collect();
    let mut tally = Tally::new("pcp", Some(fraction), names);
    for (s, (p, g)) in pred.iter().zip(gt).enumerate() {
        if g.limbs() != limbs.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "pcp: sample {s} has a different limb list"
            )));
        }
        tally.report.samples += 1;
        for (li, &(a, b)) in limbs.iter().enumerate() {
            if !g.visible(a) || !g.visible(b) {
                continue;
            }
            let len = g.limb_length(li);
            if len <= 0.0 {
                tally.report.warnings.push(format!(
                    "sample {s}: limb_{a}_{b} has zero ground-truth length; excluded"
                ));
                continue;
            }
            let threshold = fraction * len;
            let ok = dist(p.position(a), g.position(a)) <= threshold
                && dist(p.position(b), g.position(b)) <= threshold;
            tally.record(li, ok);
        }
    }
    tally.finish()
}

/// Fraction of predicted joints that land inside the per-sample box
/// (edges inclusive). Ground-truth visibility gates the denominator.
pub fn bbox_containment_rate(
    pred: &[Keypoints],
    gt: &[Keypoints],
    boxes: &[(f64, f64, f64, f64)],
) -> Result<MetricReport> {
    check_paired(pred, gt, "bbox_containment")?;
    if boxes.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "bbox_containment: {} boxes for {} samples",
            boxes.len(),
            gt.len()
        )));
    }
    let k = gt[0].len();
    let mut tally =
        Tally::new("bbox_containment", None, (0..k).map(|j| format!("joint_{j}")).collect());
    for (s, ((p, g), &(x0, y0, x1, y1))) in pred.iter().zip(gt).zip(boxes).enumerate() {
        if x0 > x1 || y0 > y1 {
            return Err(Error::InvalidArgument(format!(
                "bbox_containment: sample {s} box ({x0}, {y0}, {x1}, {y1}) has min > max"
            )));
        }
        tally.report.samples += 1;
        for j in 0..k {
            if !g.visible(j) {
                continue;
            }
            let (x, y) = p.position(j);
            tally.record(j, x >= x0 && x <= x1 && y >= y0 && y <= y1);
        }
    }
    tally.finish()
}
