use serde::Serialize;

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::dim("confusion_matrix", "counts must be a non-empty square grid"));
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Tallies `(truth, prediction)` pairs.
    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(classes);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let k = self.classes();
        if truth >= k || pred >= k {
            return Err(Error::Contract(format!("class pair ({truth}, {pred}) outside [0, {k})")));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        self.counts.iter().map(|r| r[p]).sum()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        metrics(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Chance agreement from the marginals.
    pub p_e: f64,
    /// Recall per class; `None` for classes with no true samples.
    pub per_class: Vec<Option<f64>>,
}

impl Metrics {
    /// Classes left out of the AA mean.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// OA = trace/N; AA = mean recall over non-empty classes;
/// κ = (p_o − p_e)/(1 − p_e), defined as 0 when p_e = 1.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Contract("metrics of an empty confusion matrix".into()));
    }
    let k = cm.classes();
    let nf = n as f64;
    let oa = cm.trace() as f64 / nf;
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|t| match cm.row_sum(t) {
            0 => None,
            r => Some(cm.counts[t][t] as f64 / r as f64),
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    // integer numerator keeps p_e exact up to one rounding
    let pe_num: u128 = (0..k).map(|i| cm.row_sum(i) as u128 * cm.col_sum(i) as u128).sum();
    let p_e = pe_num as f64 / (n as u128 * n as u128) as f64;
    let kappa = if pe_num == n as u128 * n as u128 { 0.0 } else { (oa - p_e) / (1.0 - p_e) };
    Ok(Metrics { oa, aa, kappa, p_e, per_class })
}
