//! Semantic mIoU and panoptic PQ / SQ / RQ against ground truth.
//!
//! Pixels whose truth class is [`IGNORE`] never count. Panoptic matching
//! pairs a predicted and a truth segment of the same class when their IoU
//! exceeds the threshold (0.5 by default), which makes matches unique.
//! Overall SQ and RQ pool the counts of all classes, so PQ = SQ·RQ.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::raster::{PanopticTruth, IGNORE};

pub const MATCH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction has {found} pixels, truth has {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: u32,
    /// Absent when the class never occurs in prediction or truth.
    pub iou: Option<f64>,
    pub pq: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanopticSummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub miou: f64,
    pub panoptic: Option<PanopticSummary>,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    pub per_class: BTreeMap<u32, f64>,
    pub mean: f64,
}

fn check(len: usize, truth: &PanopticTruth) -> Result<(), MetricsError> {
    let expected = truth.width * truth.height;
    if len != expected {
        return Err(MetricsError::DimensionMismatch { expected, found: len });
    }
    Ok(())
}

pub fn miou(pred: &[u32], truth: &PanopticTruth) -> Result<IouReport, MetricsError> {
    check(pred.len(), truth)?;
    let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
    let mut union: BTreeMap<u32, usize> = BTreeMap::new();
    for (p, &c) in pred.iter().enumerate() {
        let t = truth.class_ids[p];
        if t == IGNORE {
            continue;
        }
        if c == t {
            *inter.entry(c).or_default() += 1;
            *union.entry(c).or_default() += 1;
        } else {
            *union.entry(c).or_default() += 1;
            *union.entry(t).or_default() += 1;
        }
    }
    let per_class: BTreeMap<u32, f64> = union
        .iter()
        .map(|(&c, &u)| (c, inter.get(&c).copied().unwrap_or(0) as f64 / u as f64))
        .collect();
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(IouReport { per_class, mean })
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
    iou_sum: f64,
}

fn ratios(c: &Counts) -> (f64, f64, f64) {
    let denom = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
    let sq = if c.tp > 0 { c.iou_sum / c.tp as f64 } else { 0.0 };
    let rq = if denom > 0.0 { c.tp as f64 / denom } else { 0.0 };
    (sq * rq, sq, rq)
}

/// Per-class panoptic counts and pooled totals.
fn panoptic_counts(
    pred_class: &[u32],
    pred_instance: &[u32],
    truth: &PanopticTruth,
    threshold: f64,
) -> BTreeMap<u32, Counts> {
    let mut pred_area: HashMap<(u32, u32), usize> = HashMap::new();
    let mut pred_void: HashMap<(u32, u32), usize> = HashMap::new();
    let mut truth_area: HashMap<(u32, u32), usize> = HashMap::new();
    let mut inter: HashMap<((u32, u32), (u32, u32)), usize> = HashMap::new();
    for p in 0..pred_class.len() {
        let ps = (pred_class[p], pred_instance[p]);
        *pred_area.entry(ps).or_default() += 1;
        if truth.is_ignored(p) {
            *pred_void.entry(ps).or_default() += 1;
            continue;
        }
        let ts = (truth.class_ids[p], truth.instance_ids[p]);
        *truth_area.entry(ts).or_default() += 1;
        if ps.0 == ts.0 {
            *inter.entry((ps, ts)).or_default() += 1;
        }
    }

    let mut counts: BTreeMap<u32, Counts> = BTreeMap::new();
    let mut matched_pred: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut matched_truth: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut pairs: Vec<_> = inter.into_iter().collect();
    pairs.sort_unstable_by_key(|&(k, _)| k);
    for ((ps, ts), i) in pairs {
        let void = pred_void.get(&ps).copied().unwrap_or(0);
        let union = pred_area[&ps] + truth_area[&ts] - i - void;
        let iou = i as f64 / union as f64;
        if iou > threshold {
            let c = counts.entry(ps.0).or_default();
            c.tp += 1;
            c.iou_sum += iou;
            matched_pred.insert(ps);
            matched_truth.insert(ts);
        }
    }
    for ts in truth_area.keys() {
        if !matched_truth.contains(ts) {
            counts.entry(ts.0).or_default().fn_ += 1;
        }
    }
    for (ps, &area) in &pred_area {
        if matched_pred.contains(ps) {
            continue;
        }
        let void = pred_void.get(ps).copied().unwrap_or(0);
        if void as f64 / area as f64 > 0.5 {
            continue;
        }
        counts.entry(ps.0).or_default().fp += 1;
    }
    counts
}

/// Full report: mIoU always, panoptic quality when `panoptic` is set.
pub fn evaluate(
    pred_class: &[u32],
    pred_instance: &[u32],
    truth: &PanopticTruth,
    panoptic: bool,
) -> Result<EvalReport, MetricsError> {
    check(pred_class.len(), truth)?;
    check(pred_instance.len(), truth)?;
    let iou = miou(pred_class, truth)?;
    let counts = if panoptic {
        panoptic_counts(pred_class, pred_instance, truth, MATCH_THRESHOLD)
    } else {
        BTreeMap::new()
    };
    let classes: BTreeSet<u32> = iou.per_class.keys().chain(counts.keys()).copied().collect();
    let per_class = classes
        .into_iter()
        .map(|class| {
            let c = counts.get(&class);
            let r = c.filter(|c| c.tp + c.fp + c.fn_ > 0).map(ratios);
            let c = c.copied().unwrap_or_default();
            ClassMetrics {
                class,
                iou: iou.per_class.get(&class).copied(),
                pq: r.map(|r| r.0),
                sq: r.map(|r| r.1),
                rq: r.map(|r| r.2),
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
            }
        })
        .collect();
    let summary = panoptic.then(|| {
        let total = counts.values().fold(Counts::default(), |a, c| Counts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
            iou_sum: a.iou_sum + c.iou_sum,
        });
        let (pq, sq, rq) = ratios(&total);
        PanopticSummary {
            pq,
            sq,
            rq,
            tp: total.tp,
            fp: total.fp,
            fn_: total.fn_,
        }
    });
    Ok(EvalReport {
        miou: iou.mean,
        panoptic: summary,
        per_class,
    })
}

pub fn panoptic_quality(
    pred_class: &[u32],
    pred_instance: &[u32],
    truth: &PanopticTruth,
) -> Result<EvalReport, MetricsError> {
    evaluate(pred_class, pred_instance, truth, true)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// One row per class with columns class, iou, pq, sq, rq, tp, fp, fn.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,iou,pq,sq,rq,tp,fp,fn\n");
        for c in &self.per_class {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.class,
                cell(c.iou),
                cell(c.pq),
                cell(c.sq),
                cell(c.rq),
                c.tp,
                c.fp,
                c.fn_
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(classes: Vec<u32>, instances: Vec<u32>) -> PanopticTruth {
        let n = classes.len();
        PanopticTruth::new(n, 1, classes, instances).unwrap()
    }

    #[test]
    fn identical_maps() {
        let t = truth(vec![0, 0, 1, 2], vec![0, 0, 1, 2]);
        let r = evaluate(&t.class_ids, &t.instance_ids, &t, true).unwrap();
        assert_eq!(r.miou, 1.0);
        let p = r.panoptic.unwrap();
        assert_eq!((p.pq, p.sq, p.rq), (1.0, 1.0, 1.0));
    }

    #[test]
    fn four_pixel_miou() {
        let t = truth(vec![0, 1, 1, 1], vec![0; 4]);
        let r = miou(&[0, 0, 1, 1], &t).unwrap();
        assert_eq!(r.per_class[&0], 0.5);
        assert!((r.per_class[&1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.mean - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn ignored_class_is_excluded() {
        let t = truth(vec![0, IGNORE, IGNORE], vec![0; 3]);
        let r = miou(&[0, 0, 0], &t).unwrap();
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn single_pair_at_iou_0_6() {
        // truth segment 5 px, prediction covers 3 of them plus 0 extra
        // → IoU 3/5
        let t = truth(vec![1, 1, 1, 1, 1, 0, 0], vec![1, 1, 1, 1, 1, 0, 0]);
        let pc = [1, 1, 1, 0, 0, 0, 0];
        let pi = [1, 1, 1, 0, 0, 0, 0];
        let r = panoptic_quality(&pc, &pi, &t).unwrap();
        let c1 = r.per_class.iter().find(|c| c.class == 1).unwrap();
        assert_eq!(c1.tp, 1);
        assert!((c1.sq.unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(c1.rq.unwrap(), 1.0);
        assert!((c1.pq.unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn below_threshold_is_fp_and_fn() {
        let t = truth(vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0], vec![1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
        let pc = [1, 1, 0, 0, 0, 1, 1, 0, 0, 0];
        let pi = [4, 4, 0, 0, 0, 4, 4, 0, 0, 0];
        let r = panoptic_quality(&pc, &pi, &t).unwrap();
        let c1 = r.per_class.iter().find(|c| c.class == 1).unwrap();
        assert_eq!((c1.tp, c1.fp, c1.fn_), (0, 1, 1));
        assert_eq!(c1.rq, Some(0.0));
        assert_eq!(c1.pq, Some(0.0));
    }

    #[test]
    fn mostly_void_prediction_is_not_a_false_positive() {
        let t = truth(vec![IGNORE, IGNORE, IGNORE, 0], vec![0; 4]);
        let r = panoptic_quality(&[3, 3, 3, 0], &[0; 4], &t).unwrap();
        assert_eq!(r.panoptic.as_ref().unwrap().fp, 0);
        assert_eq!(r.panoptic.unwrap().pq, 1.0);
    }

    #[test]
    fn instance_renumbering_does_not_matter() {
        let t = truth(vec![1, 1, 1, 1], vec![1, 1, 2, 2]);
        let a = panoptic_quality(&[1, 1, 1, 1], &[5, 5, 9, 9], &t).unwrap();
        let b = panoptic_quality(&[1, 1, 1, 1], &[9, 9, 5, 5], &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_mismatch() {
        let t = truth(vec![0, 0], vec![0, 0]);
        assert_eq!(
            miou(&[0], &t).unwrap_err(),
            MetricsError::DimensionMismatch { expected: 2, found: 1 }
        );
    }

    #[test]
    fn csv_layout() {
        let t = truth(vec![0, 1], vec![0, 0]);
        let r = evaluate(&[0, 0], &[0, 0], &t, false).unwrap();
        assert_eq!(r.to_csv(), "class,iou,pq,sq,rq,tp,fp,fn\n0,0.5,,,,0,0,0\n1,0,,,,0,0,0\n");
    }
}
