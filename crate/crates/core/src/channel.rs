//! Received-signal synthesis: path gains, CFO phasor, RIS responses, noise
//! and the Rician multipath variant.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coding::RisSchedule;
use crate::geometry::{steering_vector, Angle2};
use crate::model::SignalModel;
use crate::scenario::Scenario;
use crate::{CVector, Error, Result};

/// `[b(ν)]_m = exp(j 2π m Ts ν)`.
pub fn cfo_vector(nu: f64, m: usize, ts: f64) -> CVector {
    let w = 2.0 * PI * ts * nu;
    CVector::from_fn(m, |i, _| Complex64::from_polar(1.0, w * i as f64))
}

/// Complex path amplitudes. `los` is `None` when the direct path is blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGains {
    pub los: Option<Complex64>,
    pub ris: Vec<Complex64>,
}

/// Received samples plus what generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    pub y: CVector,
    pub nu: f64,
    pub gains: PathGains,
}

/// Rician factors; `kappa_br` and `kappa_rr` hold one value per RIS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RicianParams {
    pub kappa0: f64,
    pub kappa_br: Vec<f64>,
    pub kappa_rr: Vec<f64>,
}

impl RicianParams {
    /// The same factor on every link of `r` RISs.
    pub fn uniform(kappa: f64, r: usize) -> Self {
        Self { kappa0: kappa, kappa_br: vec![kappa; r], kappa_rr: vec![kappa; r] }
    }

    fn validate(&self, r: usize) -> Result<()> {
        if self.kappa_br.len() != r || self.kappa_rr.len() != r {
            return Err(Error::Dimension("one Rician factor per RIS is required".into()));
        }
        let all = std::iter::once(&self.kappa0).chain(&self.kappa_br).chain(&self.kappa_rr);
        for k in all {
            if !(*k >= 0.0) {
                return Err(Error::Domain(format!("Rician factor {k} is negative")));
            }
        }
        Ok(())
    }
}

/// `(specular, diffuse)` weights `(√(κ/(κ+1)), √(1/(κ+1)))`.
fn rician_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    }
}

/// Free-space amplitudes with phases uniform on `[0, 2π)`. The LoS phase is
/// always drawn so that the random stream does not depend on `los`.
pub fn fspl_gains<R: Rng + ?Sized>(scenario: &Scenario, los: bool, rng: &mut R) -> Result<PathGains> {
    let lambda = scenario.waveform.wavelength;
    let d0 = (scenario.ue - scenario.bs).norm();
    if !(d0 > 0.0) {
        return Err(Error::Domain("BS and UE coincide".into()));
    }
    let ph0 = rng.gen_range(0.0..2.0 * PI);
    let los = los.then(|| Complex64::from_polar(lambda / (4.0 * PI * d0), ph0));
    let mut ris = Vec::with_capacity(scenario.num_ris());
    for node in &scenario.ris {
        let d_br = (node.position - scenario.bs).norm();
        let d_ru = (scenario.ue - node.position).norm();
        if !(d_br > 0.0) || !(d_ru > 0.0) {
            return Err(Error::Domain("RIS coincides with BS or UE".into()));
        }
        let mag = lambda * lambda / (16.0 * PI * PI * d_br * d_ru);
        ris.push(Complex64::from_polar(mag, rng.gen_range(0.0..2.0 * PI)));
    }
    Ok(PathGains { los, ris })
}

/// Coded response `x_r(θ)` of RIS `r` (0-based) under `schedule`.
pub fn ris_response(scenario: &Scenario, schedule: &RisSchedule, r: usize, theta: &Angle2) -> Result<CVector> {
    if r >= scenario.num_ris() {
        return Err(Error::Dimension(format!("RIS index {r} out of range")));
    }
    Ok(SignalModel::new(scenario, schedule)?.x(r, theta))
}

/// One `CN(0, var)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Adds `CN(0, σ² I)` noise in place.
pub fn add_noise<R: Rng + ?Sized>(y: &mut CVector, var: f64, rng: &mut R) {
    if var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(var, rng);
        }
    }
}

/// `y = √P (α0 b(ν) + Σ α_r x_r(θ_r) ⊙ b(ν)) + n` at the scenario's true UE.
pub fn synthesize<R: Rng + ?Sized>(
    scenario: &Scenario,
    schedule: &RisSchedule,
    nu: f64,
    gains: &PathGains,
    rng: &mut R,
) -> Result<ObservationVector> {
    let model = SignalModel::new(scenario, schedule)?;
    synthesize_with(&model, scenario, nu, gains, rng)
}

/// [`synthesize`] with a prebuilt model.
pub fn synthesize_with<R: Rng + ?Sized>(
    model: &SignalModel,
    scenario: &Scenario,
    nu: f64,
    gains: &PathGains,
    rng: &mut R,
) -> Result<ObservationVector> {
    if gains.ris.len() != model.num_ris() {
        return Err(Error::Dimension("one gain per RIS is required".into()));
    }
    let params = crate::model::ChannelParams {
        nu,
        aods: scenario.aods()?,
        alpha0: gains.los,
        alphas: gains.ris.clone(),
    };
    let mut y = model.noiseless(&params);
    add_noise(&mut y, scenario.waveform.noise_var, rng);
    Ok(ObservationVector { y, nu, gains: gains.clone() })
}

/// Signal with Rician multipath on the BS–UE, BS–RIS and RIS–UE links.
/// Diffuse components are drawn once per call: the LoS scalar first, then per
/// RIS the BS–RIS vector and the RIS–UE vector, then the noise.
pub fn synthesize_multipath<R: Rng + ?Sized>(
    scenario: &Scenario,
    schedule: &RisSchedule,
    nu: f64,
    gains: &PathGains,
    rician: &RicianParams,
    rng: &mut R,
) -> Result<ObservationVector> {
    let r_count = scenario.num_ris();
    rician.validate(r_count)?;
    if gains.ris.len() != r_count || schedule.num_ris() != r_count {
        return Err(Error::Dimension("one gain and one profile set per RIS are required".into()));
    }
    let w = &scenario.waveform;
    let (m, l) = (w.m, schedule.code_length());
    let sqrt_p = w.power.sqrt();
    let b = cfo_vector(nu, m, w.ts);

    let mut y = CVector::zeros(m);
    if let Some(a0) = gains.los {
        let (s, t) = rician_weights(rician.kappa0);
        let h = complex_gaussian(1.0, rng);
        y += &b * (a0 * sqrt_p * (s + t * h));
    }
    for r in 0..r_count {
        let node = &scenario.ris[r];
        let n = node.layout.len();
        let a_phi = steering_vector(&scenario.aoa(r)?, &node.layout, w.wavelength);
        let a_theta = steering_vector(&scenario.aod(r)?, &node.layout, w.wavelength);
        let h_br = CVector::from_fn(n, |_, _| complex_gaussian(1.0, rng));
        let h_ru = CVector::from_fn(n, |_, _| complex_gaussian(1.0, rng));
        let (sb, tb) = rician_weights(rician.kappa_br[r]);
        let (sr, tr) = rician_weights(rician.kappa_rr[r]);
        let e = CVector::from_fn(n, |i, _| (a_phi[i] * sb + h_br[i] * tb) * (a_theta[i] * sr + h_ru[i] * tr));
        let xbar = schedule.profile(r).tr_mul(&e);
        let c = schedule.ris_code(r);
        let g = gains.ris[r] * sqrt_p;
        for i in 0..m {
            y[i] += g * xbar[i / l] * c[i % l] * b[i];
        }
    }
    add_noise(&mut y, w.noise_var, rng);
    Ok(ObservationVector { y, nu, gains: gains.clone() })
}
