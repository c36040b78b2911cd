//! Standard monocular depth evaluation metrics.

use crate::error::{Error, Result};
use crate::spectrum::DepthMap;

/// Predictions are clamped into `[PRED_FLOOR, cap]` before evaluation so
/// the logarithmic and inverse metrics stay defined.
pub const PRED_FLOOR: f64 = 1e-3;

/// The usual error/accuracy suite. Errors are dimensionless except `rmse`
/// (meters) and `irmse` (1/meters); `silog` is scaled by 100 as is
/// conventional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub rmse_log: f64,
    pub irmse: f64,
    pub silog: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl MetricReport {
    pub const TSV_HEADER: &'static str =
        "abs_rel\tsq_rel\trmse\tlog10\trmse_log\tirmse\tsilog\tdelta1\tdelta2\tdelta3";

    pub fn tsv_row(&self) -> String {
        format!(
            "{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.log10,
            self.rmse_log,
            self.irmse,
            self.silog,
            self.delta1,
            self.delta2,
            self.delta3
        )
    }
}

/// Evaluates `pred` against `gt` over the pixels that are valid in the
/// ground truth and within `(0, cap]` meters. Predictions are clamped into
/// `[PRED_FLOOR, cap]`. The threshold accuracies use the strict comparison
/// `max(pred/gt, gt/pred) < 1.25^k`.
pub fn eval_metrics(pred: &DepthMap, gt: &DepthMap, cap: f64) -> Result<MetricReport> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch {
            lhs: vec![pred.height(), pred.width()],
            rhs: vec![gt.height(), gt.width()],
        });
    }
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument(format!("depth cap must be positive, got {cap}")));
    }
    let mut count = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut log10, mut sq_log, mut sq_inv) =
        (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut dsum, mut dsq) = (0.0f64, 0.0);
    let (mut d1, mut d2, mut d3) = (0usize, 0, 0);
    for i in 0..gt.values().len() {
        let g = gt.values()[i];
        if !gt.valid()[i] || !(g > 0.0) || g > cap {
            continue;
        }
        let p = pred.values()[i].clamp(PRED_FLOOR, cap);
        count += 1;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        log10 += (p.log10() - g.log10()).abs();
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        dsum += dl;
        dsq += dl * dl;
        let inv = 1.0 / p - 1.0 / g;
        sq_inv += inv * inv;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1;
        }
        if ratio < 1.25 * 1.25 {
            d2 += 1;
        }
        if ratio < 1.25 * 1.25 * 1.25 {
            d3 += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyValidSet(
            "no pixels survive validity masking and the depth cap".into(),
        ));
    }
    let n = count as f64;
    let silog_var = dsq / n - (dsum / n) * (dsum / n);
    Ok(MetricReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        log10: log10 / n,
        rmse_log: (sq_log / n).sqrt(),
        irmse: (sq_inv / n).sqrt(),
        silog: 100.0 * silog_var.max(0.0).sqrt(),
        delta1: d1 as f64 / n,
        delta2: d2 as f64 / n,
        delta3: d3 as f64 / n,
    })
}
