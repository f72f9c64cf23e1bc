//! Central finite-difference gradient certification.

use std::ops::Range;

use serde::Serialize;

/// Denominator floor of the relative error. With a `1e-4` threshold this is
/// a `1e-6` absolute floor.
pub const REL_ERROR_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_error: f64,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` with central differences of `f` at `params`, per block.
/// An empty `blocks` treats the whole vector as one block.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64, blocks: &[(String, Range<usize>)]) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let whole = [("all".to_string(), 0..params.len())];
    let blocks = if blocks.is_empty() { &whole[..] } else { blocks };
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(blocks.len());
    for (name, range) in blocks {
        let mut rel: f64 = 0.0;
        let mut abs: f64 = 0.0;
        for i in range.clone() {
            let orig = x[i];
            x[i] = orig + h;
            let fp = f(&x);
            x[i] = orig - h;
            let fm = f(&x);
            x[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            rel = rel.max(relative_error(analytic[i], numeric));
            abs = abs.max((analytic[i] - numeric).abs());
        }
        out.push(BlockError {
            name: name.clone(),
            max_rel_error: rel,
            max_abs_error: abs,
        });
    }
    let max_rel_error = out.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        blocks: out,
        max_rel_error,
    }
}
