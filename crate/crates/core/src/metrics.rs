//! Depth evaluation metrics over a validity mask.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MIN_VALID_DEPTH: f64 = 1e-3;

const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.5625, 1.953125];

/// Seven-metric summary of one prediction/ground-truth pair (or an
/// aggregate). Deltas are fractions in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub log_rel: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
}

/// Computes all metrics over the pixels where the ground truth is at least
/// `min_valid_depth` and the prediction is positive.
pub fn evaluate(pred: &Tensor, gt: &Tensor, min_valid_depth: f64) -> Result<MetricsReport> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "evaluate",
            format!(
                "prediction shape {:?} does not match ground truth {:?}",
                pred.shape(),
                gt.shape()
            ),
        ));
    }
    if !(min_valid_depth > 0.0) {
        return Err(Error::Param {
            name: "min_valid_depth",
            msg: format!("must be > 0, got {min_valid_depth}"),
        });
    }
    let mut n = 0usize;
    let mut sq_sum = 0.0;
    let mut log_sum = 0.0;
    let mut abs_sum = 0.0;
    let mut sqrel_sum = 0.0;
    let mut hits = [0usize; 3];
    for (&d, &g) in pred.data().iter().zip(gt.data()) {
        if g < min_valid_depth || d <= 0.0 {
            continue;
        }
        n += 1;
        let err = d - g;
        sq_sum += err * err;
        log_sum += (d.log10() - g.log10()).abs();
        abs_sum += err.abs() / g;
        sqrel_sum += err * err / g;
        let ratio = (d / g).max(g / d);
        for (h, &t) in hits.iter_mut().zip(&DELTA_THRESHOLDS) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Eval(
            "no valid pixels: every ground-truth value is below the validity threshold \
             or every prediction is nonpositive"
                .into(),
        ));
    }
    let nf = n as f64;
    Ok(MetricsReport {
        rmse: (sq_sum / nf).sqrt(),
        log_rel: log_sum / nf,
        abs_rel: abs_sum / nf,
        sq_rel: sqrel_sum / nf,
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        n_valid: n,
    })
}

/// Pools per-image reports into one: pixel-count-weighted means for the
/// linear metrics, squared errors pooled before the root for RMSE.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Contract("aggregate requires at least one report".into()));
    }
    let total: usize = reports.iter().map(|r| r.n_valid).sum();
    let tf = total as f64;
    let weighted = |f: fn(&MetricsReport) -> f64| -> f64 {
        reports
            .iter()
            .map(|r| f(r) * r.n_valid as f64)
            .sum::<f64>()
            / tf
    };
    Ok(MetricsReport {
        rmse: weighted(|r| r.rmse * r.rmse).sqrt(),
        log_rel: weighted(|r| r.log_rel),
        abs_rel: weighted(|r| r.abs_rel),
        sq_rel: weighted(|r| r.sq_rel),
        delta1: weighted(|r| r.delta1),
        delta2: weighted(|r| r.delta2),
        delta3: weighted(|r| r.delta3),
        n_valid: total,
    })
}
