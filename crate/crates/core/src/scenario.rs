//! Physical scenario: node positions, RIS panels and waveform constants.

use std::f64::consts::PI;

use crate::geometry::{compute_aod, Angle2, PanelPlane, Position3, RisArrayLayout, Rotation3};
use crate::{Error, Result};

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Receiver noise power `σ² = (N0 / Ts) · n_f` from a PSD in dBm/Hz and a
/// noise figure in dB.
pub fn noise_power(n0_dbm_per_hz: f64, noise_figure_db: f64, ts: f64) -> f64 {
    dbm_to_watts(n0_dbm_per_hz) / ts * 10f64.powf(noise_figure_db / 10.0)
}

/// One RIS: centre, orientation and element layout.
#[derive(Debug, Clone, PartialEq)]
pub struct RisNode {
    pub position: Position3,
    pub rotation: Rotation3,
    pub layout: RisArrayLayout,
}

/// Waveform constants shared by every transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformParams {
    /// Number of transmissions `M`.
    pub m: usize,
    /// Sampling time, seconds.
    pub ts: f64,
    /// Transmit power, watts.
    pub power: f64,
    /// Noise power, watts.
    pub noise_var: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
}

impl WaveformParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("M must be positive".into()));
        }
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::Config("sampling time must be positive".into()));
        }
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::Config("transmit power must be non-negative".into()));
        }
        if !(self.noise_var >= 0.0) || !self.noise_var.is_finite() {
            return Err(Error::Config("noise power must be non-negative".into()));
        }
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            return Err(Error::Config("wavelength must be positive".into()));
        }
        Ok(())
    }
}

/// Complete physical description of one simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bs: Position3,
    pub ue: Position3,
    pub ris: Vec<RisNode>,
    pub waveform: WaveformParams,
}

impl Scenario {
    /// The reference two-RIS setup at 30 dBm transmit power.
    pub fn table1() -> Self {
        let layout = RisArrayLayout::uniform(64, 64, 0.005, PanelPlane::Xz).expect("valid layout");
        let ts = 10e-6;
        Self {
            bs: Position3::zeros(),
            ue: Position3::new(5.0, 2.0, 0.5),
            ris: vec![
                RisNode {
                    position: Position3::new(10.0, -10.0, 0.0),
                    rotation: Rotation3::about_z(0.0),
                    layout: layout.clone(),
                },
                RisNode { position: Position3::new(0.0, 10.0, 0.0), rotation: Rotation3::about_z(PI), layout },
            ],
            waveform: WaveformParams {
                m: 256,
                ts,
                power: dbm_to_watts(30.0),
                noise_var: noise_power(-174.0, 8.0, ts),
                wavelength: 0.01,
            },
        }
    }

    /// Same scenario with the RIS panels replaced by `rows × cols` grids.
    pub fn with_panel(mut self, rows: usize, cols: usize) -> Result<Self> {
        for node in &mut self.ris {
            let l = &node.layout;
            node.layout = RisArrayLayout::uniform(rows, cols, l.spacing(), l.plane())?;
        }
        Ok(self)
    }

    pub fn with_power_dbm(mut self, dbm: f64) -> Self {
        self.waveform.power = dbm_to_watts(dbm);
        self
    }

    pub fn with_noise_var(mut self, var: f64) -> Self {
        self.waveform.noise_var = var;
        self
    }

    pub fn num_ris(&self) -> usize {
        self.ris.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        let finite = |p: &Position3| p.iter().all(|v| v.is_finite());
        if !finite(&self.bs) || !finite(&self.ue) || !self.ris.iter().all(|r| finite(&r.position)) {
            return Err(Error::Config("positions must be finite".into()));
        }
        for (i, r) in self.ris.iter().enumerate() {
            if (r.position - self.ue).norm() < 1e-9 || (r.position - self.bs).norm() < 1e-9 {
                return Err(Error::Config(format!("RIS {} coincides with BS or UE", i + 1)));
            }
        }
        Ok(())
    }

    /// Known angle at RIS `r` toward the BS.
    pub fn aoa(&self, r: usize) -> Result<Angle2> {
        let n = &self.ris[r];
        compute_aod(&self.bs, &n.position, &n.rotation)
    }

    /// True angle of departure from RIS `r` toward the UE.
    pub fn aod(&self, r: usize) -> Result<Angle2> {
        self.aod_at(r, &self.ue)
    }

    /// Angle of departure from RIS `r` toward an arbitrary point.
    pub fn aod_at(&self, r: usize, p: &Position3) -> Result<Angle2> {
        let n = &self.ris[r];
        compute_aod(p, &n.position, &n.rotation)
    }

    /// All true AoDs.
    pub fn aods(&self) -> Result<Vec<Angle2>> {
        (0..self.ris.len()).map(|r| self.aod(r)).collect()
    }

    /// Half-width of the unambiguous CFO range, `1/(2 Ts)`.
    pub fn cfo_limit(&self) -> f64 {
        0.5 / self.waveform.ts
    }
}
