//! Binary change-detection metrics from confusion counts.

use std::fmt;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::dim(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub pre: f64,
    pub rec: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    pub kc: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<&'static str>,
}

fn ratio(num: f64, den: f64, name: &'static str, undefined: &mut Vec<&'static str>) -> f64 {
    if den == 0.0 {
        undefined.push(name);
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "pre,rec,f1,iou,oa,kc";

    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        let total = c.total() as f64;
        if total == 0.0 {
            return Err(Error::Contract("metrics over zero pixels".into()));
        }
        let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
        let mut undefined = Vec::new();
        let pre = ratio(tp, tp + fp, "pre", &mut undefined);
        let rec = ratio(tp, tp + fn_, "rec", &mut undefined);
        let f1 = ratio(2.0 * pre * rec, pre + rec, "f1", &mut undefined);
        let iou = ratio(tp, tp + fp + fn_, "iou", &mut undefined);
        let oa = (tp + tn) / total;
        let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (total * total);
        let kc = ratio(oa - pe, 1.0 - pe, "kc", &mut undefined);
        Ok(Self {
            pre,
            rec,
            f1,
            iou,
            oa,
            kc,
            undefined,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.pre, self.rec, self.f1, self.iou, self.oa, self.kc]
    }

    /// Percentages with two decimals, in [`Metrics::CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{:.2}", v * 100.0))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = ["Pre", "Rec", "F1", "IoU", "OA", "KC"];
        for (name, v) in names.iter().zip(self.values()) {
            writeln!(f, "{name:<4} {:6.2}", v * 100.0)?;
        }
        if !self.undefined.is_empty() {
            writeln!(f, "undefined (reported as 0): {}", self.undefined.join(", "))?;
        }
        Ok(())
    }
}
