use std::fmt;
use std::str::FromStr;

use crate::envsim::UNLABELED;
use crate::{Error, Result};

/// Segmentation quality in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub miou: f64,
    pub fwiou: f64,
    pub macc: f64,
    pub pacc: f64,
}

impl MetricReport {
    pub const HEADER: [&'static str; 4] = ["mIoU", "fwIoU", "mACC", "pACC"];

    pub fn values(&self) -> [f64; 4] {
        [self.miou, self.fwiou, self.macc, self.pacc]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        MetricReport { miou: v[0], fwiou: v[1], macc: v[2], pacc: v[3] }
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 4];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        Some(MetricReport::from_values(acc.map(|a| a / n)))
    }
}

/// Tab-separated `mIoU fwIoU mACC pACC`, full precision.
impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.miou, self.fwiou, self.macc, self.pacc)
    }
}

impl FromStr for MetricReport {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<f64> = s
            .split('\t')
            .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad metric value {x:?}")))
            .collect::<std::result::Result<_, _>>()?;
        let arr: [f64; 4] = v.try_into().map_err(|_| "expected 4 tab-separated metrics".to_string())?;
        Ok(MetricReport::from_values(arr))
    }
}

/// `counts[gt * (C + 1) + pred]`; the extra column collects predictions
/// outside `[0, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Confusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { classes, counts: vec![0; classes * (classes + 1)] }
    }

    /// Accumulates one map pair; unlabelled ground-truth pixels are skipped.
    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Invalid(format!("prediction has {} pixels, ground truth {}", pred.len(), gt.len())));
        }
        let c = self.classes;
        for (&p, &g) in pred.iter().zip(gt) {
            if g == UNLABELED || g as usize >= c {
                continue;
            }
            let col = (p as usize).min(c);
            self.counts[g as usize * (c + 1) + col] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Metrics over the classes present in the ground truth.
    pub fn report(&self) -> Result<MetricReport> {
        let c = self.classes;
        let total = self.total();
        if total == 0 {
            return Err(Error::Invalid("ground truth is entirely unlabeled".into()));
        }
        let row = |g: usize| &self.counts[g * (c + 1)..(g + 1) * (c + 1)];
        let (mut iou_sum, mut fw, mut acc_sum, mut tp_sum, mut present) = (0.0, 0.0, 0.0, 0u64, 0usize);
        for k in 0..c {
            let gt_k: u64 = row(k).iter().sum();
            if gt_k == 0 {
                continue;
            }
            let tp = row(k)[k];
            let fp: u64 = (0..c).filter(|&g| g != k).map(|g| row(g)[k]).sum();
            let iou = tp as f64 / (gt_k + fp) as f64;
            present += 1;
            iou_sum += iou;
            fw += gt_k as f64 / total as f64 * iou;
            acc_sum += tp as f64 / gt_k as f64;
            tp_sum += tp;
        }
        Ok(MetricReport {
            miou: 100.0 * iou_sum / present as f64,
            fwiou: 100.0 * fw,
            macc: 100.0 * acc_sum / present as f64,
            pacc: 100.0 * tp_sum as f64 / total as f64,
        })
    }
}

/// Metrics for a single map pair.
pub fn metrics(pred: &[u8], gt: &[u8], classes: usize) -> Result<MetricReport> {
    let mut c = Confusion::new(classes);
    c.add(pred, gt)?;
    c.report()
}

/// Collects a split's predictions and reports both averaging conventions:
/// one confusion matrix over all pixels, and the mean of per-image metrics.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    pub confusion: Confusion,
    pub per_image: Vec<MetricReport>,
}

impl MetricAccumulator {
    pub fn new(classes: usize) -> Self {
        MetricAccumulator { confusion: Confusion::new(classes), per_image: vec![] }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        self.confusion.add(pred, gt)?;
        // unlabelled images contribute to neither variant
        if let Ok(r) = metrics(pred, gt, self.confusion.classes) {
            self.per_image.push(r);
        }
        Ok(())
    }

    pub fn global(&self) -> Result<MetricReport> {
        self.confusion.report()
    }

    pub fn per_image_mean(&self) -> Result<MetricReport> {
        MetricReport::mean(&self.per_image).ok_or_else(|| Error::Invalid("no labelled images".into()))
    }
}
