//! Detection error rates over a threshold sweep.

use serde::{Deserialize, Serialize};

use super::{ScoreSet, TrialLabel};
use crate::error::{Error, Result};

/// Operating point of the detection cost function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.05,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::Config(format!(
                "p_target {} must lie in (0, 1)",
                self.p_target
            )));
        }
        if !(self.c_miss > 0.0
            && self.c_fa > 0.0
            && self.c_miss.is_finite()
            && self.c_fa.is_finite())
        {
            return Err(Error::Config("detection costs must be positive".into()));
        }
        Ok(())
    }
}

/// `(P_miss, P_fa)` for every distinct acceptance threshold, from accepting
/// everything to rejecting everything. A trial is accepted when its score is
/// at least the threshold, so equal scores move together.
pub fn operating_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<(f64, f64)>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::invalid(
            "error rates need both target and nontarget scores",
        ));
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|s| (*s, true))
        .chain(nontargets.iter().map(|s| (*s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    let (mut miss, mut fa) = (0usize, nontargets.len());
    let mut points = vec![(0.0, 1.0)];
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        points.push((miss as f64 / nt, fa as f64 / nn));
    }
    Ok(points)
}

/// Equal error rate: where the piecewise-linear curve through consecutive
/// operating points crosses `P_miss = P_fa`.
pub fn eer(targets: &[f64], nontargets: &[f64]) -> Result<f64> {
    Ok(eer_from_points(&operating_points(targets, nontargets)?))
}

pub(crate) fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    for w in points.windows(2) {
        let ((m1, f1), (m2, f2)) = (w[0], w[1]);
        let (d1, d2) = (m1 - f1, m2 - f2);
        if d1 <= 0.0 && d2 >= 0.0 {
            if d2 == d1 {
                return m1;
            }
            let a = -d1 / (d2 - d1);
            return m1 + a * (m2 - m1);
        }
    }
    unreachable!("curve runs from (0, 1) to (1, 0)")
}

/// Minimum detection cost over all thresholds, normalized by the cost of
/// the better trivial system.
pub fn min_dcf(targets: &[f64], nontargets: &[f64], p: &DcfParams) -> Result<f64> {
    p.validate()?;
    Ok(min_dcf_from_points(
        &operating_points(targets, nontargets)?,
        p,
    ))
}

pub(crate) fn min_dcf_from_points(points: &[(f64, f64)], p: &DcfParams) -> f64 {
    let miss_w = p.c_miss * p.p_target;
    let fa_w = p.c_fa * (1.0 - p.p_target);
    let best = points
        .iter()
        .map(|(m, f)| miss_w * m + fa_w * f)
        .fold(f64::INFINITY, f64::min);
    best / miss_w.min(fa_w)
}

fn split(s: &ScoreSet) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut n = Vec::new();
    for (trial, score) in &s.scores {
        match trial.label {
            TrialLabel::Target => t.push(*score),
            TrialLabel::Nontarget => n.push(*score),
        }
    }
    (t, n)
}

pub fn compute_eer(s: &ScoreSet) -> Result<f64> {
    let (t, n) = split(s);
    eer(&t, &n)
}

pub fn compute_min_dcf(s: &ScoreSet, p: &DcfParams) -> Result<f64> {
    let (t, n) = split(s);
    min_dcf(&t, &n, p)
}
