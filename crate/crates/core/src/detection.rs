//! GLRT line-of-sight detection and the joint detection/estimation driver.

use serde::{Deserialize, Serialize};

use crate::estimation::{ChannelEstimate, Estimator, Hypothesis};
use crate::{CVector, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// LoS blocked.
    H0,
    /// LoS present.
    H1,
}

/// Which blocked-LoS estimator feeds the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NlosVariant {
    Ml,
    Lc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Decision,
    pub los: ChannelEstimate,
    pub nlos: ChannelEstimate,
}

impl DetectionResult {
    /// The estimate matching the decision.
    pub fn selected(&self) -> &ChannelEstimate {
        match self.decision {
            Decision::H1 => &self.los,
            Decision::H0 => &self.nlos,
        }
    }
}

/// `½ (residual_NLoS − residual_LoS)`.
pub fn glrt_statistic(nlos: &ChannelEstimate, los: &ChannelEstimate) -> f64 {
    0.5 * (nlos.residual - los.residual)
}

/// H1 iff `statistic > threshold`.
pub fn decide(statistic: f64, threshold: f64) -> Decision {
    if statistic > threshold {
        Decision::H1
    } else {
        Decision::H0
    }
}

/// Runs both hypotheses on `y` and thresholds the GLRT statistic. The LoS
/// model is also fitted at the blocked estimate's CFO and angles and keeps
/// the smaller residual, so the nested LoS fit is never worse.
pub fn detect_and_estimate(est: &Estimator, y: &CVector, threshold: f64, variant: NlosVariant) -> Result<DetectionResult> {
    let nlos = match variant {
        NlosVariant::Ml => est.nlos_ml(y)?,
        NlosVariant::Lc => est.nlos_lc(y)?,
    };
    let mut los = est.los(y)?;
    if let Ok(c) = est.fit_at(y, nlos.nu, nlos.aods.clone(), Hypothesis::Los) {
        if c.residual < los.residual {
            los = c;
        }
    }
    let statistic = glrt_statistic(&nlos, &los);
    Ok(DetectionResult { statistic, threshold, decision: decide(statistic, threshold), los, nlos })
}

/// Threshold chosen from H1 statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    /// Detection rate of `threshold` on the calibration statistics.
    pub achieved_pd: f64,
    /// False when `target_pd` could not be met.
    pub reachable: bool,
    /// Sorted calibration statistics.
    pub statistics: Vec<f64>,
}

/// Largest threshold whose detection rate on `statistics` is at least
/// `target_pd`. An unreachable target yields the best-effort threshold
/// below the smallest statistic and `reachable = false`.
pub fn calibrate_from_statistics(statistics: &[f64], target_pd: f64) -> Result<Calibration> {
    if statistics.is_empty() {
        return Err(Error::Config("calibration needs at least one trial".into()));
    }
    if statistics.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("calibration statistic".into()));
    }
    let mut s = statistics.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let need = (target_pd * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let reachable = need <= n && target_pd <= 1.0;
    let need = need.min(n).max(1);
    let threshold = next_below(s[n - need]);
    let achieved_pd = s.iter().filter(|&&v| v > threshold).count() as f64 / n as f64;
    Ok(Calibration { threshold, achieved_pd, reachable, statistics: s })
}

fn next_below(x: f64) -> f64 {
    if x == 0.0 {
        -f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}
