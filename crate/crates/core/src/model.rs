//! Noise-free signal model tied to one scenario and one schedule.
//!
//! `W̄_r = a(φ_r) ⊙ P_r` is cached per RIS so that the uncoded response
//! `x̄_r(θ) = W̄_rᵀ a(θ)` costs one matrix-vector product. The coded response
//! is `x_r[kL + l] = c_r[l] x̄_r[k]`.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::channel::cfo_vector;
use crate::coding::RisSchedule;
use crate::geometry::{steering_vector, Angle2, Position3, RisArrayLayout};
use crate::scenario::Scenario;
use crate::{CMatrix, CVector, Error, Result};

/// Channel-domain parameters of the noise-free model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub nu: f64,
    pub aods: Vec<Angle2>,
    /// LoS gain, absent under the blocked hypothesis.
    pub alpha0: Option<Complex64>,
    pub alphas: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct SignalModel {
    m: usize,
    l: usize,
    ts: f64,
    sqrt_p: f64,
    wavelength: f64,
    layouts: Vec<RisArrayLayout>,
    codes: Vec<Vec<f64>>,
    /// `N × K` effective weights per RIS.
    wbar: Vec<CMatrix>,
    ris_pos: Vec<Position3>,
    rotations: Vec<crate::geometry::Rotation3>,
}

impl SignalModel {
    pub fn new(scenario: &Scenario, schedule: &RisSchedule) -> Result<Self> {
        scenario.waveform.validate()?;
        if schedule.num_ris() != scenario.num_ris() {
            return Err(Error::Dimension(format!(
                "schedule has {} RISs, scenario has {}",
                schedule.num_ris(),
                scenario.num_ris()
            )));
        }
        if schedule.num_transmissions() != scenario.waveform.m {
            return Err(Error::Dimension("schedule and scenario disagree on M".into()));
        }
        let lambda = scenario.waveform.wavelength;
        let mut wbar = Vec::with_capacity(scenario.num_ris());
        for (r, node) in scenario.ris.iter().enumerate() {
            let p = schedule.profile(r);
            if p.nrows() != node.layout.len() {
                return Err(Error::Dimension(format!(
                    "profile {} has {} rows for {} elements",
                    r + 1,
                    p.nrows(),
                    node.layout.len()
                )));
            }
            let a_phi = steering_vector(&scenario.aoa(r)?, &node.layout, lambda);
            let mut w = p.clone();
            for (mut row, a) in w.row_iter_mut().zip(a_phi.iter()) {
                row *= *a;
            }
            wbar.push(w);
        }
        Ok(Self {
            m: scenario.waveform.m,
            l: schedule.code_length(),
            ts: scenario.waveform.ts,
            sqrt_p: scenario.waveform.power.sqrt(),
            wavelength: lambda,
            layouts: scenario.ris.iter().map(|n| n.layout.clone()).collect(),
            codes: (0..=schedule.num_ris()).map(|i| schedule.code(i).iter().copied().collect()).collect(),
            wbar,
            ris_pos: scenario.ris.iter().map(|n| n.position).collect(),
            rotations: scenario.ris.iter().map(|n| n.rotation).collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn k(&self) -> usize {
        self.m / self.l
    }
    pub fn ts(&self) -> f64 {
        self.ts
    }
    pub fn sqrt_power(&self) -> f64 {
        self.sqrt_p
    }

    pub fn set_power(&mut self, watts: f64) -> Result<()> {
        if !(watts >= 0.0) || !watts.is_finite() {
            return Err(Error::Config("transmit power must be non-negative".into()));
        }
        self.sqrt_p = watts.sqrt();
        Ok(())
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn num_ris(&self) -> usize {
        self.wbar.len()
    }
    pub fn layout(&self, r: usize) -> &RisArrayLayout {
        &self.layouts[r]
    }
    pub fn wbar(&self, r: usize) -> &CMatrix {
        &self.wbar[r]
    }
    /// Code of RIS `r` (0-based).
    pub fn code(&self, r: usize) -> &[f64] {
        &self.codes[r + 1]
    }
    pub fn los_code(&self) -> &[f64] {
        &self.codes[0]
    }

    pub fn ris_position(&self, r: usize) -> Position3 {
        self.ris_pos[r]
    }
    pub fn rotation(&self, r: usize) -> &crate::geometry::Rotation3 {
        &self.rotations[r]
    }

    /// AoD of RIS `r` toward point `p`.
    pub fn aod_at(&self, r: usize, p: &Position3) -> Result<Angle2> {
        crate::geometry::compute_aod(p, &self.ris_pos[r], &self.rotations[r])
    }

    /// Uncoded response `x̄_r(θ)`, length `K`.
    pub fn xbar(&self, r: usize, theta: &Angle2) -> CVector {
        let a = steering_vector(theta, &self.layouts[r], self.wavelength);
        self.wbar[r].tr_mul(&a)
    }

    /// Coded response `x_r(θ)`, length `M`.
    pub fn x(&self, r: usize, theta: &Angle2) -> CVector {
        self.expand(r + 1, &self.xbar(r, theta))
    }

    /// Expands a block-rate vector with code `i` (0 is LoS).
    pub fn expand(&self, i: usize, xbar: &CVector) -> CVector {
        let c = &self.codes[i];
        CVector::from_fn(self.m, |m, _| xbar[m / self.l] * c[m % self.l])
    }

    /// `x̄_r` with its derivatives along az and el.
    pub fn xbar_with_derivatives(&self, r: usize, theta: &Angle2) -> (CVector, CVector, CVector) {
        let a = steering_vector(theta, &self.layouts[r], self.wavelength);
        let scale = 2.0 * std::f64::consts::PI / self.wavelength;
        let (d_az, d_el): (Vector3<f64>, Vector3<f64>) = theta.direction_jacobian();
        let q = self.layouts[r].positions();
        let j = Complex64::i();
        let da = CVector::from_fn(a.len(), |n, _| a[n] * j * (scale * d_az.dot(&q[n])));
        let de = CVector::from_fn(a.len(), |n, _| a[n] * j * (scale * d_el.dot(&q[n])));
        let w = &self.wbar[r];
        (w.tr_mul(&a), w.tr_mul(&da), w.tr_mul(&de))
    }

    /// Columns of `A(ν, θ)`: `b(ν)` first when `los`, then `x_r(θ_r) ⊙ b(ν)`.
    pub fn design_matrix(&self, nu: f64, aods: &[Angle2], los: bool) -> CMatrix {
        let b = cfo_vector(nu, self.m, self.ts);
        let xs: Vec<CVector> = aods.iter().enumerate().map(|(r, t)| self.x(r, t)).collect();
        self.design_from_responses(&b, &xs, los)
    }

    pub(crate) fn design_from_responses(&self, b: &CVector, xs: &[CVector], los: bool) -> CMatrix {
        let off = usize::from(los);
        let mut a = CMatrix::zeros(self.m, xs.len() + off);
        if los {
            a.set_column(0, b);
        }
        for (r, x) in xs.iter().enumerate() {
            a.set_column(r + off, &x.component_mul(b));
        }
        a * Complex64::from(self.sqrt_p)
    }

    /// Noise-free observation `z` for the given parameters.
    pub fn noiseless(&self, p: &ChannelParams) -> CVector {
        let los = p.alpha0.is_some();
        let a = self.design_matrix(p.nu, &p.aods, los);
        let mut g: Vec<Complex64> = p.alpha0.into_iter().collect();
        g.extend_from_slice(&p.alphas);
        a * CVector::from_vec(g)
    }

    /// AoD of RIS `r` expressed as in-plane direction cosines scaled by the
    /// aperture, so that one unit is roughly one beamwidth.
    pub fn to_beam_coords(&self, r: usize, theta: &Angle2) -> [f64; 2] {
        let lay = &self.layouts[r];
        let (c1, c2) = lay.plane().cosines(&theta.direction());
        let (s1, s2) = self.beam_scales(r);
        [c1 * s1, c2 * s2]
    }

    /// Inverse of [`SignalModel::to_beam_coords`]; `None` outside the
    /// visible region.
    pub fn from_beam_coords(&self, r: usize, u: &[f64]) -> Option<Angle2> {
        let (s1, s2) = self.beam_scales(r);
        let dir = self.layouts[r].plane().direction_from_cosines(u[0] / s1, u[1] / s2)?;
        Angle2::from_direction(&dir).ok()
    }

    fn beam_scales(&self, r: usize) -> (f64, f64) {
        let lay = &self.layouts[r];
        if lay.is_uniform() {
            let d = lay.spacing() / self.wavelength;
            ((lay.cols() as f64 * d).max(1.0), (lay.rows() as f64 * d).max(1.0))
        } else {
            let ext = lay.positions().iter().map(|q| q.norm()).fold(0.0, f64::max) * 2.0 / self.wavelength;
            (ext.max(1.0), ext.max(1.0))
        }
    }
}
