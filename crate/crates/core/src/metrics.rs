//! Result-quality metrics: missing-group fraction, average relative error,
//! and skewness of group selectivities.

use std::collections::HashMap;

use thiserror::Error;

use crate::result::AggregateResult;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ground truth has no groups")]
    EmptyGroundTruth,
    #[error("no group is shared between ground truth and approximation")]
    NoSharedGroups,
    #[error("skewness needs at least two values")]
    TooFewValues,
}

/// `|G_groups − A_groups| / |G_groups|`: 0 means full coverage.
pub fn bin_missing(truth: &AggregateResult, approx: &AggregateResult) -> Result<f64, MetricError> {
    if truth.groups.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let have: HashMap<&[String], ()> = approx.groups.iter().map(|g| (g.key.as_slice(), ())).collect();
    let missing = truth
        .groups
        .iter()
        .filter(|g| !have.contains_key(g.key.as_slice()))
        .count();
    Ok(missing as f64 / truth.groups.len() as f64)
}

/// Per shared group `(key, |G − A| / |G|)`; groups whose true value is zero
/// are skipped with a warning.
pub fn relative_errors(truth: &AggregateResult, approx: &AggregateResult) -> Vec<(Vec<String>, f64)> {
    let approx_map: HashMap<&[String], f64> =
        approx.groups.iter().map(|g| (g.key.as_slice(), g.value)).collect();
    truth
        .groups
        .iter()
        .filter_map(|g| {
            let a = *approx_map.get(g.key.as_slice())?;
            if g.value == 0.0 {
                log::warn!("group {:?} has true value 0; relative error undefined, skipped", g.key);
                return None;
            }
            Some((g.key.clone(), (g.value - a).abs() / g.value.abs()))
        })
        .collect()
}

/// Mean relative error over the groups present in both results.
pub fn avg_rel_error(truth: &AggregateResult, approx: &AggregateResult) -> Result<f64, MetricError> {
    let errs = relative_errors(truth, approx);
    if errs.is_empty() {
        return Err(MetricError::NoSharedGroups);
    }
    Ok(errs.iter().map(|(_, e)| e).sum::<f64>() / errs.len() as f64)
}

/// Third standardized moment with the population standard deviation;
/// 0 for constant input.
pub fn skewness(y: &[f64]) -> Result<f64, MetricError> {
    if y.len() < 2 {
        return Err(MetricError::TooFewValues);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let m2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let sd = m2.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return Ok(0.0);
    }
    Ok(m3 / sd.powi(3))
}
