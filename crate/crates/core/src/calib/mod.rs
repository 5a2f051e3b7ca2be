//! Fly-by calibration of a stationary anchor from ranges to devices with
//! known positions.
//!
//! Samples are grouped by reference device. Each group contributes a constant
//! bias `γ_g` and, when the reference moves, a scale `β_g`; the range model is
//! `z = β_g · ‖p - p_ref‖ + γ_g`. Groups whose reference does not move
//! (known anchors) are static: `β_g` is fixed to one and they only enter the
//! nonlinear stage.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::InstanceId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("unobservable geometry (null direction {null_direction:?})")]
    Unobservable { null_direction: Vec<f64> },
    #[error("not enough samples: need {needed}, have {available}")]
    NotEnoughSamples { needed: usize, available: usize },
    #[error("degenerate refinement: normal matrix is singular")]
    DegenerateRefinement,
    #[error("insufficient inliers: {inliers} < {needed}")]
    InsufficientInliers { inliers: usize, needed: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationSample {
    pub t: f64,
    pub reference_id: InstanceId,
    pub reference_position: Vector3<f64>,
    pub range: f64,
    /// 1σ of the reference position, m.
    pub sigma_position: f64,
    /// 1σ of the range, m.
    pub sigma_range: f64,
}

impl CalibrationSample {
    pub fn new(
        t: f64,
        reference_id: InstanceId,
        reference_position: Vector3<f64>,
        range: f64,
        sigma_position: f64,
        sigma_range: f64,
    ) -> Result<Self, CalibrationError> {
        if !(range > 0.0) || !range.is_finite() {
            return Err(CalibrationError::InvalidSample(format!("range {range}")));
        }
        if !reference_position.iter().all(|v| v.is_finite()) || !t.is_finite() {
            return Err(CalibrationError::InvalidSample("non-finite reference".into()));
        }
        Ok(Self { t, reference_id, reference_position, range, sigma_position, sigma_range })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub reference_id: InstanceId,
    /// Indices into the problem's samples, in time order.
    pub samples: Vec<usize>,
    pub is_static: bool,
}

/// Samples of a single unknown anchor, grouped by reference device.
#[derive(Clone, Debug)]
pub struct CalibrationProblem {
    pub anchor_id: InstanceId,
    samples: Vec<CalibrationSample>,
    groups: Vec<Group>,
}

/// Reference spread below which a group counts as static, m.
pub const STATIC_SPREAD: f64 = 0.05;

impl CalibrationProblem {
    /// Groups with fewer than `min_group_size` samples are discarded.
    pub fn new(anchor_id: InstanceId, samples: Vec<CalibrationSample>, min_group_size: usize) -> Self {
        let mut by_ref: BTreeMap<InstanceId, Vec<usize>> = BTreeMap::new();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a].t.total_cmp(&samples[b].t));
        for i in order {
            by_ref.entry(samples[i].reference_id).or_default().push(i);
        }
        let groups = by_ref
            .into_iter()
            .filter(|(_, idx)| idx.len() >= min_group_size.max(1))
            .map(|(reference_id, idx)| {
                let first = samples[idx[0]].reference_position;
                let spread = idx.iter().map(|&i| (samples[i].reference_position - first).norm()).fold(0.0, f64::max);
                Group { reference_id, samples: idx, is_static: spread < STATIC_SPREAD }
            })
            .collect();
        Self { anchor_id, samples, groups }
    }

    pub fn samples(&self) -> &[CalibrationSample] {
        &self.samples
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    /// Indices of samples that belong to a retained group.
    pub fn used_samples(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.groups.iter().flat_map(|g| g.samples.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Groups solved by the linear stage.
    pub fn moving_groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.iter().filter(|g| !g.is_static)
    }

    /// Restriction to the given sample indices; grouping is recomputed.
    pub fn subset(&self, indices: &[usize], min_group_size: usize) -> Self {
        let samples = indices.iter().map(|&i| self.samples[i]).collect();
        Self::new(self.anchor_id, samples, min_group_size)
    }

    /// Number of unknowns `[p, γ, β]` of the nonlinear stage.
    pub fn parameter_count(&self) -> usize {
        3 + self.groups.len() + self.moving_groups().count()
    }
}

/// Greedy max-separation pairing: pairs are taken in decreasing order of
/// reference displacement, each sample at most once. Ties go to the pair
/// with the earlier timestamps.
pub fn select_optimal_pairs(samples: &[CalibrationSample], group: &[usize]) -> Vec<(usize, usize)> {
    if group.len() < 2 {
        return Vec::new();
    }
    let mut candidates = Vec::with_capacity(group.len() * (group.len() - 1) / 2);
    for (a, &i) in group.iter().enumerate() {
        for &j in &group[a + 1..] {
            let (i, j) = if samples[i].t <= samples[j].t { (i, j) } else { (j, i) };
            let score = (samples[i].reference_position - samples[j].reference_position).norm();
            candidates.push((score, i, j));
        }
    }
    candidates.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(samples[x.1].t.total_cmp(&samples[y.1].t))
            .then(samples[x.2].t.total_cmp(&samples[y.2].t))
    });
    let mut used = vec![false; samples.len()];
    let mut pairs = Vec::with_capacity(group.len() / 2);
    for (_, i, j) in candidates {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
            if pairs.len() == group.len() / 2 {
                break;
            }
        }
    }
    pairs
}

/// Rows of the double-difference system over the moving groups; the unknown
/// vector is `[p; γ_moving]`.
pub fn linear_system(
    samples: &[CalibrationSample],
    pairs_per_group: &[Vec<(usize, usize)>],
) -> (DMatrix<f64>, DVector<f64>) {
    let groups = pairs_per_group.len();
    let rows: usize = pairs_per_group.iter().map(Vec::len).sum();
    let mut a = DMatrix::zeros(rows, 3 + groups);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for (g, pairs) in pairs_per_group.iter().enumerate() {
        for &(i, j) in pairs {
            let (s1, s2) = (&samples[i], &samples[j]);
            let dp = s1.reference_position - s2.reference_position;
            for k in 0..3 {
                a[(r, k)] = -2.0 * dp[k];
            }
            a[(r, 3 + g)] = 2.0 * (s1.range - s2.range);
            b[r] = s1.range * s1.range - s2.range * s2.range - s1.reference_position.norm_squared()
                + s2.reference_position.norm_squared();
            r += 1;
        }
    }
    (a, b)
}

/// Smallest singular value must exceed this fraction of the largest.
pub const OBSERVABILITY_RATIO: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolution {
    pub position: Vector3<f64>,
    /// Constant bias per moving group, in group order.
    pub gammas: Vec<(InstanceId, f64)>,
    pub singular_values: Vec<f64>,
    pub condition_number: f64,
    pub rows: usize,
}

fn solve_svd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, Vec<f64>), CalibrationError> {
    // tall systems are reduced to their square R factor first; A and R share
    // singular values and right singular vectors
    let (a, b) = if a.nrows() > a.ncols() {
        let qr = a.clone().qr();
        let qtb = qr.q().tr_mul(b);
        (qr.r(), qtb)
    } else {
        (a.clone(), b.clone())
    };
    let (a, b) = (&a, &b);
    let svd = a.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let (k_min, s_min) = sv.iter().copied().enumerate().min_by(|x, y| x.1.total_cmp(&y.1)).expect("non-empty");
    let s_max = sv.iter().copied().fold(0.0, f64::max);
    let v_t = svd.v_t.as_ref().expect("requested");
    if !(s_max > 0.0) || s_min <= OBSERVABILITY_RATIO * s_max {
        return Err(CalibrationError::Unobservable { null_direction: v_t.row(k_min).iter().copied().collect() });
    }
    let x = svd.solve(b, 0.0).map_err(|_| CalibrationError::Unobservable { null_direction: Vec::new() })?;
    Ok((x, sv))
}

/// Samples per group entering the pairing of the linear stage. Pairing is
/// quadratic in the group size and the linear solution only initializes the
/// refinement, so larger groups are thinned evenly in time.
pub const LINEAR_GROUP_LIMIT: usize = 500;

fn thin(group: &[usize], limit: usize) -> Vec<usize> {
    if group.len() <= limit {
        return group.to_vec();
    }
    (0..limit).map(|k| group[k * group.len() / limit]).collect()
}

/// Least-squares position and moving-group biases with `β = 1`.
pub fn solve_linear(problem: &CalibrationProblem) -> Result<LinearSolution, CalibrationError> {
    let moving: Vec<&Group> = problem.moving_groups().collect();
    let pairs: Vec<Vec<(usize, usize)>> =
        moving.iter().map(|g| select_optimal_pairs(&problem.samples, &thin(&g.samples, LINEAR_GROUP_LIMIT))).collect();
    let (a, b) = linear_system(&problem.samples, &pairs);
    let unknowns = a.ncols();
    if a.nrows() < unknowns || moving.is_empty() {
        return Err(CalibrationError::NotEnoughSamples { needed: 2 * unknowns, available: 2 * a.nrows() });
    }
    let (x, sv) = solve_svd(&a, &b)?;
    let s_max = sv.iter().copied().fold(0.0, f64::max);
    let s_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LinearSolution {
        position: Vector3::new(x[0], x[1], x[2]),
        gammas: moving.iter().enumerate().map(|(g, grp)| (grp.reference_id, x[3 + g])).collect(),
        singular_values: sv,
        condition_number: s_max / s_min,
        rows: a.nrows(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub initial_lambda: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub relative_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { initial_lambda: 1e-3, max_iterations: 100, relative_tolerance: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupBias {
    pub reference_id: InstanceId,
    pub gamma: f64,
    pub beta: f64,
    pub is_static: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub anchor_id: InstanceId,
    pub position: Vector3<f64>,
    pub biases: Vec<GroupBias>,
    /// Covariance of `[p, γ per group, β per moving group]`.
    pub covariance: DMatrix<f64>,
    /// Over the problem's samples; samples of discarded groups are false.
    pub inliers: Vec<bool>,
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Costs of the initial point and of every accepted step.
    pub cost_history: Vec<f64>,
}

impl CalibrationResult {
    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    pub fn bias_for(&self, reference: InstanceId) -> Option<&GroupBias> {
        self.biases.iter().find(|b| b.reference_id == reference)
    }

    pub fn handover(&self) -> AnchorHandover {
        let cov = self.position_covariance();
        AnchorHandover {
            anchor_id: self.anchor_id,
            position: [self.position.x, self.position.y, self.position.z],
            position_cov: std::array::from_fn(|k| cov[(k / 3, k % 3)]),
            biases: self
                .biases
                .iter()
                .map(|b| HandoverBias { other_id: b.reference_id, gamma: b.gamma, beta: b.beta })
                .collect(),
            inlier_count: self.inlier_count(),
        }
    }
}

/// Calibration output handed to the filter for registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorHandover {
    pub anchor_id: InstanceId,
    pub position: [f64; 3],
    /// Row-major 3x3.
    pub position_cov: [f64; 9],
    pub biases: Vec<HandoverBias>,
    pub inlier_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoverBias {
    pub other_id: InstanceId,
    pub gamma: f64,
    pub beta: f64,
}

/// Parameter layout of the nonlinear stage.
struct Layout {
    /// Per group: (gamma index, beta index if moving).
    slots: Vec<(usize, Option<usize>)>,
    /// Group of every retained sample.
    members: Vec<(usize, usize)>,
    dim: usize,
}

impl Layout {
    fn new(problem: &CalibrationProblem) -> Self {
        let g = problem.groups.len();
        let mut next_beta = 3 + g;
        let mut slots = Vec::with_capacity(g);
        let mut members = Vec::new();
        for (k, grp) in problem.groups.iter().enumerate() {
            let beta = (!grp.is_static).then(|| {
                next_beta += 1;
                next_beta - 1
            });
            slots.push((3 + k, beta));
            members.extend(grp.samples.iter().map(|&i| (i, k)));
        }
        members.sort_unstable();
        Self { slots, members, dim: next_beta }
    }

    fn residuals(&self, samples: &[CalibrationSample], x: &DVector<f64>) -> DVector<f64> {
        let p = Vector3::new(x[0], x[1], x[2]);
        DVector::from_iterator(
            self.members.len(),
            self.members.iter().map(|&(i, g)| {
                let (gi, bi) = self.slots[g];
                let beta = bi.map_or(1.0, |b| x[b]);
                samples[i].range - (beta * (p - samples[i].reference_position).norm() + x[gi])
            }),
        )
    }

    /// Jacobian of the predicted ranges.
    fn jacobian(&self, samples: &[CalibrationSample], x: &DVector<f64>) -> DMatrix<f64> {
        let p = Vector3::new(x[0], x[1], x[2]);
        let mut j = DMatrix::zeros(self.members.len(), self.dim);
        for (r, &(i, g)) in self.members.iter().enumerate() {
            let (gi, bi) = self.slots[g];
            let diff = p - samples[i].reference_position;
            let d = diff.norm().max(1e-12);
            let beta = bi.map_or(1.0, |b| x[b]);
            for k in 0..3 {
                j[(r, k)] = beta * diff[k] / d;
            }
            j[(r, gi)] = 1.0;
            if let Some(b) = bi {
                j[(r, b)] = d;
            }
        }
        j
    }
}

/// Levenberg-Marquardt refinement of `[p, γ, β]` starting from the linear
/// solution. Static groups start from their mean residual.
pub fn refine_nonlinear(
    problem: &CalibrationProblem,
    initial_position: Vector3<f64>,
    initial_gammas: &[(InstanceId, f64)],
    options: &LmOptions,
) -> Result<CalibrationResult, CalibrationError> {
    let layout = Layout::new(problem);
    let samples = &problem.samples;
    if layout.members.len() < layout.dim {
        return Err(CalibrationError::NotEnoughSamples { needed: layout.dim, available: layout.members.len() });
    }
    let mut x = DVector::zeros(layout.dim);
    x.fixed_rows_mut::<3>(0).copy_from(&initial_position);
    for (k, grp) in problem.groups.iter().enumerate() {
        let (gi, bi) = layout.slots[k];
        if let Some(b) = bi {
            x[b] = 1.0;
        }
        x[gi] = match initial_gammas.iter().find(|(id, _)| *id == grp.reference_id) {
            Some(&(_, gamma)) => gamma,
            None => {
                let sum: f64 = grp
                    .samples
                    .iter()
                    .map(|&i| samples[i].range - (initial_position - samples[i].reference_position).norm())
                    .sum();
                sum / grp.samples.len() as f64
            }
        };
    }

    let cost_of = |x: &DVector<f64>| 0.5 * layout.residuals(samples, x).norm_squared();
    let mut cost = cost_of(&x);
    let mut history = vec![cost];
    let mut lambda = options.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let r = layout.residuals(samples, &x);
        let j = layout.jacobian(samples, &x);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() <= 1e-15 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj.clone();
            for k in 0..layout.dim {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let candidate = &x + chol.solve(&g);
            let c = cost_of(&candidate);
            if c.is_finite() && c < cost {
                let decrease = (cost - c) / cost.max(f64::MIN_POSITIVE);
                x = candidate;
                cost = c;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if decrease < options.relative_tolerance || cost <= 1e-28 * layout.members.len() as f64 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!("anchor {} refinement stopped after {iterations} iterations", problem.anchor_id);
    }

    let j = layout.jacobian(samples, &x);
    let jtj = j.transpose() * &j;
    let n = layout.members.len() as f64;
    let rms = (2.0 * cost / n).sqrt();
    let inverse = jtj.cholesky().ok_or(CalibrationError::DegenerateRefinement)?.inverse();
    let mut covariance = inverse * (rms * rms);
    crate::state::symmetrize(&mut covariance);

    let mut inliers = vec![false; samples.len()];
    for &(i, _) in &layout.members {
        inliers[i] = true;
    }
    Ok(CalibrationResult {
        anchor_id: problem.anchor_id,
        position: Vector3::new(x[0], x[1], x[2]),
        biases: problem
            .groups
            .iter()
            .zip(&layout.slots)
            .map(|(grp, &(gi, bi))| GroupBias {
                reference_id: grp.reference_id,
                gamma: x[gi],
                beta: bi.map_or(1.0, |b| x[b]),
                is_static: grp.is_static,
            })
            .collect(),
        covariance,
        inliers,
        rms,
        iterations,
        converged,
        cost_history: history,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    /// Expected outlier fraction.
    pub outlier_ratio: f64,
    /// Probability of drawing at least one outlier-free set.
    pub success_probability: f64,
    pub sigma_range: f64,
    pub sigma_position: f64,
    /// Rounds of re-selecting inliers against the refined model; zero keeps
    /// the inlier set of the best linear model.
    pub refit_rounds: usize,
}

impl RansacOptions {
    pub fn new(outlier_ratio: f64, sigma_range: f64, sigma_position: f64) -> Self {
        Self { outlier_ratio, success_probability: 0.99, sigma_range, sigma_position, refit_rounds: 10 }
    }

    pub fn threshold(&self) -> f64 {
        self.sigma_range + self.sigma_position
    }
}

/// Samples per RANSAC draw: two per linear unknown, so the disjoint pairs
/// alone can determine the system, plus a margin of two.
pub fn minimal_sample_size(moving_groups: usize) -> usize {
    2 * (3 + moving_groups) + 2
}

/// `ceil(log(1-p) / log(1-(1-ε)^m))`, at least one.
pub fn ransac_iterations(outlier_ratio: f64, success_probability: f64, m: usize) -> usize {
    let clean = (1.0 - outlier_ratio).powi(m as i32);
    if outlier_ratio <= 0.0 || clean >= 1.0 {
        return 1;
    }
    if clean <= 0.0 {
        return usize::MAX;
    }
    ((1.0 - success_probability).ln() / (1.0 - clean).ln()).ceil().max(1.0) as usize
}

/// Residuals of every retained sample under a linear model. Groups without
/// a given bias take their median residual.
fn model_residuals(problem: &CalibrationProblem, position: &Vector3<f64>, gammas: &[(InstanceId, f64)]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for grp in &problem.groups {
        let raw: Vec<(usize, f64)> = grp
            .samples
            .iter()
            .map(|&i| (i, problem.samples[i].range - (position - problem.samples[i].reference_position).norm()))
            .collect();
        let gamma = match gammas.iter().find(|(id, _)| *id == grp.reference_id) {
            Some(&(_, g)) => g,
            None => median(raw.iter().map(|r| r.1).collect()),
        };
        out.extend(raw.into_iter().map(|(i, r)| (i, r - gamma)));
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Random draw of `m` samples from the moving groups, two per group first.
fn draw<R: Rng + ?Sized>(problem: &CalibrationProblem, m: usize, rng: &mut R) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(m);
    let mut pool = Vec::new();
    for grp in problem.moving_groups() {
        let picked = index::sample(rng, grp.samples.len(), 2.min(grp.samples.len()));
        let mut taken = vec![false; grp.samples.len()];
        for k in picked.iter() {
            taken[k] = true;
            chosen.push(grp.samples[k]);
        }
        pool.extend(grp.samples.iter().zip(taken).filter(|(_, t)| !t).map(|(&i, _)| i));
    }
    let extra = m.saturating_sub(chosen.len()).min(pool.len());
    for k in index::sample(rng, pool.len(), extra).iter() {
        chosen.push(pool[k]);
    }
    chosen.sort_unstable();
    chosen
}

/// Robust calibration. Every linear model drawn from a minimal sample is
/// scored by its truncated squared cost over all samples. Each new best model
/// is locally optimized: its inliers are refined, re-selected against the
/// refined model and refined again until stable. The refined model with the
/// lowest truncated cost is returned.
pub fn ransac_calibrate<R: Rng + ?Sized>(
    problem: &CalibrationProblem,
    ransac: &RansacOptions,
    lm: &LmOptions,
    rng: &mut R,
) -> Result<CalibrationResult, CalibrationError> {
    let moving = problem.moving_groups().count();
    let m = minimal_sample_size(moving);
    let used = problem.used_samples();
    if used.len() <= m {
        return Err(CalibrationError::NotEnoughSamples { needed: m + 1, available: used.len() });
    }
    let iterations = ransac_iterations(ransac.outlier_ratio, ransac.success_probability, m).min(100_000);
    let threshold = ransac.threshold();
    let mut best_linear = f64::INFINITY;
    let mut best: Option<(f64, Vec<usize>, CalibrationResult)> = None;
    let mut most_inliers = 0;
    for _ in 0..iterations {
        let subset = problem.subset(&draw(problem, m, rng), 2);
        if subset.moving_groups().count() != moving {
            continue;
        }
        let Ok(model) = solve_linear(&subset) else { continue };
        // the sample's biases are its least determined part; each group's
        // offset is re-fitted robustly so that no group drops out wholesale
        let residuals = model_residuals(problem, &model.position, &[]);
        let cost = truncated_cost(&residuals, threshold);
        if cost >= best_linear {
            continue;
        }
        best_linear = cost;
        most_inliers = most_inliers.max(within(&residuals, threshold).len());
        if let Some(candidate) = locally_optimize(problem, &model, &residuals, threshold, m, ransac.refit_rounds, lm) {
            if best.as_ref().is_none_or(|(c, _, _)| candidate.0 < *c) {
                best = Some(candidate);
            }
        }
    }
    let (_, inliers, mut result) =
        best.ok_or(CalibrationError::InsufficientInliers { inliers: most_inliers, needed: m })?;
    let mut mask = vec![false; problem.samples.len()];
    for (k, &i) in inliers.iter().enumerate() {
        mask[i] = result.inliers[k];
    }
    result.inliers = mask;
    Ok(result)
}

/// `Σ min(r², d²)`: every outlier costs the same, so a wrong model cannot
/// win by fitting the outliers' mean.
fn truncated_cost(residuals: &[(usize, f64)], threshold: f64) -> f64 {
    residuals.iter().map(|(_, r)| (r * r).min(threshold * threshold)).sum()
}

/// Sorted indices of residuals within the threshold.
fn within(residuals: &[(usize, f64)], threshold: f64) -> Vec<usize> {
    let mut v: Vec<usize> = residuals.iter().filter(|(_, r)| r.abs() <= threshold).map(|(i, _)| *i).collect();
    v.sort_unstable();
    v
}

/// Gate widths of local optimization, in multiples of the inlier threshold.
/// Starting wide and shrinking keeps the re-selection from locking onto the
/// first refinement along poorly observed directions.
const LOCAL_GATES: [f64; 4] = [4.0, 2.0, 1.5, 1.0];

/// Refines the samples near a linear model, starting both from the model and
/// from a fresh linear solution of those samples. Samples are then
/// re-selected against the refinement with a shrinking gate, and finally at
/// the inlier threshold until the set is stable. Returns the truncated cost
/// over all samples, the indices of the samples behind the refinement and
/// the refinement.
///
/// The linear solution of a large inlier set is not enough on its own: noise
/// on the reference positions biases it by metres when the anchor is far
/// from the references, and inliers selected against it are meaningless.
fn locally_optimize(
    problem: &CalibrationProblem,
    model: &LinearSolution,
    residuals: &[(usize, f64)],
    threshold: f64,
    m: usize,
    rounds: usize,
    lm: &LmOptions,
) -> Option<(f64, Vec<usize>, CalibrationResult)> {
    let groups = problem.groups.len();
    let usable = |idx: &[usize]| {
        let subset = problem.subset(idx, 2);
        (idx.len() >= m && subset.groups.len() == groups).then_some(subset)
    };
    let initial = within(residuals, LOCAL_GATES[0] * threshold);
    let subset = usable(&initial)?;
    let mut starts = vec![(model.position, Vec::new())];
    if let Ok(linear) = solve_linear(&subset) {
        starts.push((linear.position, linear.gammas));
    }
    let mut best: Option<(f64, Vec<usize>, CalibrationResult)> = None;
    for (position, gammas) in starts {
        let Ok(mut result) = refine_nonlinear(&subset, position, &gammas, lm) else { continue };
        let mut current = initial.clone();
        let gates = LOCAL_GATES[1..].iter().copied().chain(std::iter::repeat_n(1.0, rounds));
        for gate in gates {
            let next = within(&refined_residuals(problem, &result), gate * threshold);
            if next == current {
                if gate == 1.0 {
                    break;
                }
                continue;
            }
            let Some(next_subset) = usable(&next) else { break };
            let gammas: Vec<(InstanceId, f64)> = result.biases.iter().map(|b| (b.reference_id, b.gamma)).collect();
            match refine_nonlinear(&next_subset, result.position, &gammas, lm) {
                Ok(r) => {
                    result = r;
                    current = next;
                }
                Err(_) => break,
            }
        }
        let cost = truncated_cost(&refined_residuals(problem, &result), threshold);
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
            best = Some((cost, current, result));
        }
    }
    best
}

/// Range residuals of every retained sample under a refined model.
fn refined_residuals(problem: &CalibrationProblem, result: &CalibrationResult) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for grp in &problem.groups {
        let Some(bias) = result.biases.iter().find(|b| b.reference_id == grp.reference_id) else { continue };
        for &i in &grp.samples {
            let s = &problem.samples[i];
            let predicted = bias.beta * (result.position - s.reference_position).norm() + bias.gamma;
            out.push((i, s.range - predicted));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CalibrationOptions {
    pub ransac: Option<RansacOptions>,
    pub lm: LmOptions,
}

/// Linear initialization followed by refinement, optionally robustified.
pub fn calibrate<R: Rng + ?Sized>(
    problem: &CalibrationProblem,
    options: &CalibrationOptions,
    rng: &mut R,
) -> Result<CalibrationResult, CalibrationError> {
    match &options.ransac {
        Some(ransac) => ransac_calibrate(problem, ransac, &options.lm, rng),
        None => {
            let linear = solve_linear(problem)?;
            refine_nonlinear(problem, linear.position, &linear.gammas, &options.lm)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_samples(xs: &[f64]) -> Vec<CalibrationSample> {
        xs.iter()
            .enumerate()
            .map(|(k, &x)| {
                CalibrationSample::new(k as f64, InstanceId(100), Vector3::new(x, 0.0, 0.0), 5.0, 0.1, 0.1).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_samples_single_pair() {
        let s = line_samples(&[0.0, 1.0]);
        assert_eq!(select_optimal_pairs(&s, &[0, 1]), vec![(0, 1)]);
    }

    #[test]
    fn max_separation_first() {
        let s = line_samples(&[0.0, 1.0, 2.0, 3.0]);
        let pairs = select_optimal_pairs(&s, &[0, 1, 2, 3]);
        assert_eq!(pairs[0], (0, 3));
        assert_eq!(pairs[1], (1, 2));
    }

    #[test]
    fn ties_prefer_earlier_samples() {
        let s = line_samples(&[0.0, 1.0, 0.0, 1.0]);
        let pairs = select_optimal_pairs(&s, &[0, 1, 2, 3]);
        assert_eq!(pairs, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn single_sample_group_yields_nothing() {
        let s = line_samples(&[0.0]);
        assert!(select_optimal_pairs(&s, &[0]).is_empty());
    }

    #[test]
    fn iteration_count() {
        assert_eq!(ransac_iterations(0.0, 0.99, 7), 1);
        // (0.9)^7 = 0.4783 -> ln(0.01)/ln(0.5217) = 7.07
        assert_eq!(ransac_iterations(0.1, 0.99, 7), 8);
        assert_eq!(minimal_sample_size(2), 12);
    }

    #[test]
    fn rejects_invalid_sample() {
        assert!(CalibrationSample::new(0.0, InstanceId(1), Vector3::zeros(), 0.0, 0.1, 0.1).is_err());
        assert!(CalibrationSample::new(0.0, InstanceId(1), Vector3::new(f64::NAN, 0.0, 0.0), 1.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn coplanar_references_are_unobservable() {
        let anchor = Vector3::new(1.0, 2.0, 3.0);
        let samples: Vec<CalibrationSample> = (0..20)
            .map(|k| {
                let a = k as f64 * 0.7;
                let p = Vector3::new(3.0 * a.cos(), 2.0 * a.sin() + 0.1 * k as f64, 0.0);
                CalibrationSample::new(k as f64, InstanceId(100), p, (anchor - p).norm(), 0.0, 0.0).unwrap()
            })
            .collect();
        let problem = CalibrationProblem::new(InstanceId(106), samples, 2);
        match solve_linear(&problem) {
            Err(CalibrationError::Unobservable { null_direction }) => {
                assert_relative_eq!(null_direction[2].abs(), 1.0, epsilon = 1e-6);
            }
            other => panic!("expected unobservable, got {other:?}"),
        }
    }
}
