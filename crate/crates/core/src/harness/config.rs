//! Run configuration, loaded from TOML. Every field has a default, so an
//! empty file reproduces the reference two-RIS setup.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::detection::NlosVariant;
use crate::estimation::GridSpec;
use crate::geometry::{PanelPlane, Position3, RisArrayLayout, Rotation3};
use crate::scenario::{dbm_to_watts, noise_power, RisNode, Scenario, WaveformParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometryConfig,
    pub array: ArrayConfig,
    pub waveform: WaveformConfig,
    pub run: RunConfig,
    pub grid: GridConfig,
    pub detector: DetectorConfig,
    pub multipath: MultipathConfig,
    pub cfo_sweep: CfoSweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub bs: [f64; 3],
    pub ue: [f64; 3],
    pub ris: Vec<RisConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisConfig {
    pub position: [f64; 3],
    /// Rotation about z, degrees. Ignored when `rotation` is given.
    #[serde(default)]
    pub rotation_z_deg: f64,
    /// Full rotation matrix, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub plane: PanelPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub wavelength_m: f64,
    pub ts_s: f64,
    pub m: usize,
    pub n0_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// True CFO for the power and detection sweeps.
    pub cfo_hz: f64,
    /// Transmit power for single-shot commands.
    pub power_dbm: f64,
    /// Hadamard code length; smallest valid power of two when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub code_length: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Los,
    Ml,
    Lc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Random,
    /// Beams around the true UE position.
    Directional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub trials: usize,
    pub power_dbm: Vec<f64>,
    /// Estimator for `simulate` and the multipath and CFO sweeps. The data
    /// contain a LoS path exactly when this is `los`.
    pub estimator: EstimatorKind,
    pub profiles: ProfileKind,
    /// Draw the RIS profiles once per run instead of once per trial.
    pub fixed_profiles: bool,
    /// Refine position and CFO on the raw signal after the line intersection.
    pub refine_position: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// CFO search interval, Hz; `±1/(2 Ts)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfo_min_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfo_max_hz: Option<f64>,
    pub cfo_points: usize,
    pub ml_cfo_points: usize,
    pub aod_points: usize,
    pub refine: bool,
    pub cfo_estimation: bool,
    pub refine_tol: f64,
    pub refine_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Fixed threshold, watts. Calibrated from LoS trials when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub variant: NlosVariant,
    pub target_pd: f64,
    pub calibration_power_dbm: f64,
    pub calibration_trials: usize,
    /// Trials per point of the detection sweep; `run.trials` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Also run LoS trials at every point to measure the detection rate.
    pub measure_pd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultipathConfig {
    /// Common Rician factor of every link.
    pub kappa: Vec<f64>,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfoSweepConfig {
    pub cfo_hz: Vec<f64>,
    pub power_dbm: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            bs: [0.0, 0.0, 0.0],
            ue: [5.0, 2.0, 0.5],
            ris: vec![
                RisConfig { position: [10.0, -10.0, 0.0], rotation_z_deg: 0.0, rotation: None },
                RisConfig { position: [0.0, 10.0, 0.0], rotation_z_deg: 180.0, rotation: None },
            ],
        }
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self { rows: 64, cols: 64, spacing_m: 0.005, plane: PanelPlane::Xz }
    }
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self {
            wavelength_m: 0.01,
            ts_s: 10e-6,
            m: 256,
            n0_dbm_hz: -174.0,
            noise_figure_db: 8.0,
            cfo_hz: -40e3,
            power_dbm: 30.0,
            code_length: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 100,
            power_dbm: vec![0.0, 10.0, 20.0, 30.0, 40.0],
            estimator: EstimatorKind::Los,
            profiles: ProfileKind::Random,
            fixed_profiles: false,
            refine_position: true,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            cfo_min_hz: None,
            cfo_max_hz: None,
            cfo_points: g.cfo_points,
            ml_cfo_points: g.ml_cfo_points,
            aod_points: g.aod_points,
            refine: g.refine,
            cfo_estimation: g.cfo_estimation,
            refine_tol: g.refine_tol,
            refine_iters: g.refine_iters,
        }
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            variant: NlosVariant::Ml,
            target_pd: 1.0,
            calibration_power_dbm: 30.0,
            calibration_trials: 500,
            trials: Some(500),
            measure_pd: true,
        }
    }
}

impl Default for MultipathConfig {
    fn default() -> Self {
        Self { kappa: vec![1.0, 10.0, 100.0, 1000.0], power_dbm: 35.0 }
    }
}

impl Default for CfoSweepConfig {
    fn default() -> Self {
        Self { cfo_hz: vec![0.0, 50.0, 100.0, 200.0, -40e3], power_dbm: 35.0 }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            array: ArrayConfig::default(),
            waveform: WaveformConfig::default(),
            run: RunConfig::default(),
            grid: GridConfig::default(),
            detector: DetectorConfig::default(),
            multipath: MultipathConfig::default(),
            cfo_sweep: CfoSweepConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    /// Scenario at `power_dbm`.
    pub fn scenario(&self, power_dbm: f64) -> Result<Scenario> {
        let a = &self.array;
        let layout = RisArrayLayout::uniform(a.rows, a.cols, a.spacing_m, a.plane)
            .map_err(|e| Error::Config(format!("array: {e}")))?;
        let ris = self
            .geometry
            .ris
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let rotation = match r.rotation {
                    Some(m) => Rotation3::from_matrix(Matrix3::from_fn(|a, b| m[a][b]))
                        .map_err(|e| Error::Config(format!("RIS {}: {e}", i + 1)))?,
                    None => Rotation3::about_z(r.rotation_z_deg.to_radians()),
                };
                Ok(RisNode { position: vec3(r.position), rotation, layout: layout.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        let w = &self.waveform;
        let sc = Scenario {
            bs: vec3(self.geometry.bs),
            ue: vec3(self.geometry.ue),
            ris,
            waveform: WaveformParams {
                m: w.m,
                ts: w.ts_s,
                power: dbm_to_watts(power_dbm),
                noise_var: noise_power(w.n0_dbm_hz, w.noise_figure_db, w.ts_s),
                wavelength: w.wavelength_m,
            },
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn grid_spec(&self, scenario: &Scenario) -> GridSpec {
        let g = &self.grid;
        let lim = scenario.cfo_limit();
        GridSpec {
            cfo_min: g.cfo_min_hz.unwrap_or(-lim),
            cfo_max: g.cfo_max_hz.unwrap_or(lim),
            cfo_points: g.cfo_points,
            ml_cfo_points: g.ml_cfo_points,
            aod_points: g.aod_points,
            refine: g.refine,
            cfo_estimation: g.cfo_estimation,
            refine_tol: g.refine_tol,
            refine_iters: g.refine_iters,
        }
    }

    /// Trials per point of the detection sweep.
    pub fn detection_trials(&self) -> usize {
        self.detector.trials.unwrap_or(self.run.trials)
    }

    /// Checks everything a sweep needs before any trial runs.
    pub fn validate(&self) -> Result<()> {
        if self.geometry.ris.is_empty() {
            return Err(Error::Config("at least one RIS is required".into()));
        }
        if self.run.trials == 0 {
            return Err(Error::Config("trials must be positive".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.run.power_dbm) || !finite(&self.cfo_sweep.cfo_hz) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        if self.multipath.kappa.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::Config("Rician factors must be non-negative".into()));
        }
        let d = &self.detector;
        if !(d.target_pd > 0.0 && d.target_pd <= 1.0) {
            return Err(Error::Config("detector.target_pd must lie in (0, 1]".into()));
        }
        if d.calibration_trials == 0 || d.trials == Some(0) {
            return Err(Error::Config("detector trial counts must be positive".into()));
        }
        if d.threshold.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("detector.threshold must be finite".into()));
        }
        let sc = self.scenario(self.waveform.power_dbm)?;
        let lim = sc.cfo_limit();
        let cfos = self.cfo_sweep.cfo_hz.iter().chain(std::iter::once(&self.waveform.cfo_hz));
        if cfos.into_iter().any(|c| c.abs() >= lim) {
            return Err(Error::Config(format!("CFO values must lie inside ±{lim} Hz")));
        }
        crate::coding::code_length(sc.num_ris(), sc.waveform.m, self.waveform.code_length)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.grid_spec(&sc).validate(&sc)
    }
}

fn vec3(v: [f64; 3]) -> Position3 {
    Position3::new(v[0], v[1], v[2])
}
