//! Range error statistics against ground truth.

use std::collections::BTreeMap;

use statrs::statistics::Statistics;

use super::trajectory::GroundTruth;
use crate::mesh::{NodeLayout, RangeSample};
use crate::state::InstanceId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeEvalConfig {
    /// Errors beyond this magnitude count as significant outliers, m.
    pub gate: f64,
    pub bin_width: f64,
}

impl Default for RangeEvalConfig {
    fn default() -> Self {
        Self { gate: 5.0, bin_width: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// Lower edge of the first bin.
    pub origin: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins are aligned to integer multiples of `bin_width`.
    pub fn new(values: &[f64], bin_width: f64) -> Self {
        if values.is_empty() {
            return Self { origin: 0.0, bin_width, counts: Vec::new() };
        }
        let bin = |v: f64| (v / bin_width).floor() as i64;
        let lo = values.iter().map(|&v| bin(v)).min().expect("non-empty");
        let hi = values.iter().map(|&v| bin(v)).max().expect("non-empty");
        let mut counts = vec![0; (hi - lo + 1) as usize];
        for &v in values {
            counts[(bin(v) - lo) as usize] += 1;
        }
        Self { origin: lo as f64 * bin_width, bin_width, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `(lower edge, count)` per bin.
    pub fn bins(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.counts.iter().enumerate().map(|(k, &c)| (self.origin + k as f64 * self.bin_width, c))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairStats {
    pub initiator: InstanceId,
    pub responder: InstanceId,
    /// Samples inside the gate.
    pub count: usize,
    pub outliers: usize,
    /// Gaussian fit of the gated errors: constant bias estimate.
    pub mean: f64,
    pub std_dev: f64,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RangeEvaluation {
    /// One entry per observed ordered pair.
    pub pairs: Vec<PairStats>,
    /// Samples without a truth bracket or with an unknown device.
    pub skipped: usize,
}

impl RangeEvaluation {
    pub fn pair(&self, initiator: InstanceId, responder: InstanceId) -> Option<&PairStats> {
        self.pairs.iter().find(|p| p.initiator == initiator && p.responder == responder)
    }
}

/// Error of every sample against the distance implied by interpolated truth.
pub fn evaluate_ranges(
    samples: &[RangeSample],
    truth: &GroundTruth,
    layout: &NodeLayout,
    config: &RangeEvalConfig,
) -> RangeEvaluation {
    let mut errors: BTreeMap<(InstanceId, InstanceId), Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    for s in samples {
        let (Some(a), Some(b)) =
            (layout.position(s.initiator, s.t, truth), layout.position(s.responder, s.t, truth))
        else {
            skipped += 1;
            continue;
        };
        errors.entry((s.initiator, s.responder)).or_default().push(s.range - (a - b).norm());
    }
    let pairs = errors
        .into_iter()
        .map(|((initiator, responder), errs)| {
            let kept: Vec<f64> = errs.iter().copied().filter(|e| e.abs() <= config.gate).collect();
            let (mean, std_dev) = if kept.len() >= 2 {
                (kept.iter().mean(), kept.iter().std_dev())
            } else {
                (kept.first().copied().unwrap_or(f64::NAN), f64::NAN)
            };
            PairStats {
                initiator,
                responder,
                count: kept.len(),
                outliers: errs.len() - kept.len(),
                mean,
                std_dev,
                histogram: Histogram::new(&kept, config.bin_width),
            }
        })
        .collect();
    RangeEvaluation { pairs, skipped }
}
