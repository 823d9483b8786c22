//! Confusion-matrix evaluation: unweighted average recall, macro precision
//! and macro F1.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub uar: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn n_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: u64 = (0..self.n_classes()).map(|k| self.confusion[k][k]).sum();
        hits as f64 / self.total() as f64
    }

    /// Plain-text CSV: the three scores, then one confusion row per truth class.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "metric,value").unwrap();
        writeln!(out, "uar,{}", self.uar).unwrap();
        writeln!(out, "macro_precision,{}", self.macro_precision).unwrap();
        writeln!(out, "macro_f1,{}", self.macro_f1).unwrap();
        let k = self.n_classes();
        let header: Vec<String> = (0..k).map(|j| format!("pred_{j}")).collect();
        writeln!(out, "truth,{}", header.join(",")).unwrap();
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{i},{}", cells.join(",")).unwrap();
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<Vec<Vec<u64>>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let mut conf = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(Error::InvalidInput(format!(
                "label pair ({t}, {p}) out of range for {k} classes"
            )));
        }
        conf[t][p] += 1;
    }
    Ok(conf)
}

/// Classes with no true examples are left out of the UAR mean; classes never
/// predicted are left out of the precision mean. F1 averages over all classes.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<EvalReport> {
    let confusion = confusion_matrix(y_true, y_pred, k)?;
    let mut recalls = Vec::with_capacity(k);
    let mut precisions = Vec::with_capacity(k);
    let mut f1s = Vec::with_capacity(k);
    for c in 0..k {
        let hit = confusion[c][c] as f64;
        let row: u64 = confusion[c].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[c]).sum();
        let recall = (row > 0).then(|| hit / row as f64);
        let precision = (col > 0).then(|| hit / col as f64);
        recalls.extend(recall);
        precisions.extend(precision);
        let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
        f1s.push(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
    }
    Ok(EvalReport {
        confusion,
        uar: mean(&recalls),
        macro_precision: mean(&precisions),
        macro_f1: mean(&f1s),
    })
}

/// UAR only; convenience for training loops.
pub fn uar(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<f64> {
    evaluate(y_true, y_pred, k).map(|r| r.uar)
}
