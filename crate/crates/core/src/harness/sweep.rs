//! Monte-Carlo experiment driver.
//!
//! Trials form the outer loop and sweep points the inner one: each trial
//! draws its RIS profiles and path gains once and reuses them at every
//! point, so curves are compared on common random numbers. Trial `t` owns a
//! ChaCha generator seeded with `seed ⊕ t`; stream 0 carries profiles and
//! gains, stream `i + 1` the multipath and noise of point `i`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EstimatorKind, ProfileKind, ScenarioConfig};
use crate::bounds::{compute_bounds, BoundsReport};
use crate::channel::{fspl_gains, synthesize_multipath, synthesize_with, PathGains, RicianParams};
use crate::coding::{build_schedule, BaseKind, RisSchedule};
use crate::detection::{calibrate_from_statistics, detect_and_estimate, Calibration, Decision};
use crate::estimation::{ChannelEstimate, Estimator, GridSpec, Hypothesis};
use crate::geometry::{wrap_angle, Position3};
use crate::localization::{coarse_fix, refine_position, FixMethod, PositionEstimate};
use crate::model::ChannelParams;
use crate::scenario::Scenario;
use crate::{CVector, Error, Result};

/// Stream offset of the calibration trials.
const CALIBRATION_STREAM: u64 = 1 << 40;
/// Stream of the run-wide profiles under `fixed_profiles`.
const FIXED_PROFILE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    LosPower,
    NlosPowerMl,
    NlosPowerLc,
    DetectPower,
    Kappa,
    CfoSensitivity,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::LosPower,
        Experiment::NlosPowerMl,
        Experiment::NlosPowerLc,
        Experiment::DetectPower,
        Experiment::Kappa,
        Experiment::CfoSensitivity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::LosPower => "los_power",
            Experiment::NlosPowerMl => "nlos_power_ml",
            Experiment::NlosPowerLc => "nlos_power_lc",
            Experiment::DetectPower => "detect_power",
            Experiment::Kappa => "kappa",
            Experiment::CfoSensitivity => "cfo_sensitivity",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Aggregated results at one sweep value. Angles are in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub sweep_var: String,
    pub value: f64,
    pub rmse_pos: f64,
    pub crb_pos: Option<f64>,
    pub rmse_cfo: f64,
    pub crb_cfo: Option<f64>,
    /// `(az, el)` per RIS.
    pub rmse_aod: Vec<(f64, f64)>,
    pub crb_aod: Option<Vec<(f64, f64)>>,
    pub pfa: Option<f64>,
    pub pd: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub experiment: Experiment,
    pub num_ris: usize,
    pub points: Vec<SweepPoint>,
    /// Detector threshold used by `detect_power`, watts.
    pub threshold: Option<f64>,
    pub elapsed: Duration,
}

/// Per-trial squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialErrors {
    pub pos2: f64,
    pub cfo2: f64,
    pub aod2: Vec<(f64, f64)>,
}

/// Squared errors of a channel estimate and a position fix against truth.
pub fn trial_errors(scenario: &Scenario, nu: f64, est: &ChannelEstimate, pos: &PositionEstimate) -> Result<TrialErrors> {
    let truth = scenario.aods()?;
    let aod2 = truth
        .iter()
        .zip(&est.aods)
        .map(|(t, e)| (wrap_angle(e.az - t.az).powi(2), (e.el - t.el).powi(2)))
        .collect();
    Ok(TrialErrors { pos2: (pos.p - scenario.ue).norm_squared(), cfo2: (pos.nu - nu).powi(2), aod2 })
}

/// Line intersection from the estimated angles, then raw-signal refinement
/// of position and CFO when `refine`. Parallel bearing lines fall back to the
/// RIS centroid.
pub fn localize(est: &Estimator, scenario: &Scenario, y: &CVector, ce: &ChannelEstimate, refine: bool) -> PositionEstimate {
    let coarse = coarse_fix(scenario, &ce.aods, ce.nu).unwrap_or_else(|_| {
        let c = scenario.ris.iter().map(|n| n.position).sum::<Position3>() / scenario.num_ris() as f64;
        PositionEstimate { p: c, nu: ce.nu, method: FixMethod::CoarseIntersection, conditioning: 0.0 }
    });
    if !refine {
        return coarse;
    }
    let los = ce.hypothesis == Hypothesis::Los;
    let grid = est.grid();
    refine_position(est.model(), y, &coarse.p, coarse.nu, los, grid.cfo_estimation, &grid.refine_options())
        .unwrap_or(coarse)
}

#[derive(Debug, Clone)]
struct Acc {
    n: usize,
    pos: f64,
    cfo: f64,
    aod: Vec<(f64, f64)>,
    crb_n: usize,
    crb_ok: bool,
    crb_pos: f64,
    crb_cfo: f64,
    crb_aod: Vec<(f64, f64)>,
    fa: usize,
    fa_n: usize,
    det: usize,
    det_n: usize,
}

impl Acc {
    fn new(r: usize) -> Self {
        Self {
            n: 0,
            pos: 0.0,
            cfo: 0.0,
            aod: vec![(0.0, 0.0); r],
            crb_n: 0,
            crb_ok: true,
            crb_pos: 0.0,
            crb_cfo: 0.0,
            crb_aod: vec![(0.0, 0.0); r],
            fa: 0,
            fa_n: 0,
            det: 0,
            det_n: 0,
        }
    }

    fn add_errors(&mut self, e: &TrialErrors) {
        self.n += 1;
        self.pos += e.pos2;
        self.cfo += e.cfo2;
        for (a, b) in self.aod.iter_mut().zip(&e.aod2) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }

    fn add_bounds(&mut self, b: Option<&BoundsReport>) {
        let Some(b) = b else {
            self.crb_ok = false;
            return;
        };
        self.crb_n += 1;
        self.crb_pos += b.peb * b.peb;
        self.crb_cfo += b.cfo * b.cfo;
        for (a, v) in self.crb_aod.iter_mut().zip(&b.aod) {
            a.0 += v.0 * v.0;
            a.1 += v.1 * v.1;
        }
    }

    fn finish(&self, sweep_var: &str, value: f64, trials: usize, seed: u64, pfa: bool, pd: bool) -> Result<SweepPoint> {
        if self.n != trials {
            return Err(Error::Dimension(format!("{} trials aggregated, {trials} configured", self.n)));
        }
        let n = self.n as f64;
        let rms = |s: f64| (s / n).sqrt();
        let crb_ok = self.crb_ok && self.crb_n > 0;
        let cn = self.crb_n as f64;
        let crms = |s: f64| (s / cn).sqrt();
        Ok(SweepPoint {
            sweep_var: sweep_var.to_string(),
            value,
            rmse_pos: rms(self.pos),
            crb_pos: crb_ok.then(|| crms(self.crb_pos)),
            rmse_cfo: rms(self.cfo),
            crb_cfo: crb_ok.then(|| crms(self.crb_cfo)),
            rmse_aod: self.aod.iter().map(|a| (rms(a.0), rms(a.1))).collect(),
            crb_aod: crb_ok.then(|| self.crb_aod.iter().map(|a| (crms(a.0), crms(a.1))).collect()),
            pfa: (pfa && self.fa_n > 0).then(|| self.fa as f64 / self.fa_n as f64),
            pd: (pd && self.det_n > 0).then(|| self.det as f64 / self.det_n as f64),
            trials,
            seed,
        })
    }
}

/// Generator of trial `trial`, stream `stream`.
pub fn trial_rng(seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ trial);
    rng.set_stream(stream);
    rng
}

/// Shared state of one run: the validated config and its base scenario.
struct Run<'a> {
    cfg: &'a ScenarioConfig,
    base: Scenario,
    grid: GridSpec,
    fixed: Option<RisSchedule>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.scenario(cfg.waveform.power_dbm)?;
        let grid = cfg.grid_spec(&base);
        let mut run = Self { cfg, base, grid, fixed: None };
        if cfg.run.fixed_profiles {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
            rng.set_stream(FIXED_PROFILE_STREAM);
            run.fixed = Some(run.draw_schedule(&mut rng)?);
        }
        Ok(run)
    }

    fn draw_schedule(&self, rng: &mut ChaCha8Rng) -> Result<RisSchedule> {
        let kind = match self.cfg.run.profiles {
            ProfileKind::Random => BaseKind::Random,
            ProfileKind::Directional => BaseKind::Directional { toward: self.base.ue },
        };
        let n = self.base.ris[0].layout.len();
        build_schedule(
            self.base.num_ris(),
            self.base.waveform.m,
            n,
            kind,
            Some(&self.base),
            self.cfg.waveform.code_length,
            rng,
        )
    }

    fn schedule(&self, rng: &mut ChaCha8Rng) -> Result<RisSchedule> {
        match &self.fixed {
            Some(s) => Ok(s.clone()),
            None => self.draw_schedule(rng),
        }
    }

    fn estimate(&self, est: &Estimator, kind: EstimatorKind, y: &CVector) -> Result<ChannelEstimate> {
        match kind {
            EstimatorKind::Los => est.los(y),
            EstimatorKind::Ml => est.nlos_ml(y),
            EstimatorKind::Lc => est.nlos_lc(y),
        }
    }
}

fn bounds(est: &Estimator, sc: &Scenario, nu: f64, gains: &PathGains) -> Option<BoundsReport> {
    let truth = ChannelParams { nu, aods: sc.aods().ok()?, alpha0: gains.los, alphas: gains.ris.clone() };
    compute_bounds(est.model(), &sc.ue, &truth, sc.waveform.noise_var).ok()
}

struct PointSpec {
    sweep_var: &'static str,
    value: f64,
    power_dbm: f64,
    nu: f64,
    kappa: Option<f64>,
    cfo_estimation: bool,
}

/// Runs one experiment. Configuration problems are reported before any trial.
pub fn run_sweep(cfg: &ScenarioConfig, experiment: Experiment) -> Result<SweepResult> {
    let start = Instant::now();
    let run = Run::new(cfg)?;
    let (points, threshold) = match experiment {
        Experiment::LosPower => (estimation_sweep(&run, EstimatorKind::Los, &power_points(cfg))?, None),
        Experiment::NlosPowerMl => (estimation_sweep(&run, EstimatorKind::Ml, &power_points(cfg))?, None),
        Experiment::NlosPowerLc => (estimation_sweep(&run, EstimatorKind::Lc, &power_points(cfg))?, None),
        Experiment::Kappa => {
            let specs: Vec<PointSpec> = cfg
                .multipath
                .kappa
                .iter()
                .map(|&k| PointSpec {
                    sweep_var: "kappa",
                    value: k,
                    power_dbm: cfg.multipath.power_dbm,
                    nu: cfg.waveform.cfo_hz,
                    kappa: Some(k),
                    cfo_estimation: cfg.grid.cfo_estimation,
                })
                .collect();
            (estimation_sweep(&run, cfg.run.estimator, &specs)?, None)
        }
        Experiment::CfoSensitivity => {
            let mut specs = Vec::new();
            for (var, on) in [("cfo_hz", true), ("cfo_hz_noest", false)] {
                for &nu in &cfg.cfo_sweep.cfo_hz {
                    specs.push(PointSpec {
                        sweep_var: var,
                        value: nu,
                        power_dbm: cfg.cfo_sweep.power_dbm,
                        nu,
                        kappa: None,
                        cfo_estimation: on,
                    });
                }
            }
            (estimation_sweep(&run, cfg.run.estimator, &specs)?, None)
        }
        Experiment::DetectPower => {
            let threshold = match cfg.detector.threshold {
                Some(t) => t,
                None => calibrate(&run)?.threshold,
            };
            (detection_sweep(&run, threshold)?, Some(threshold))
        }
    };
    Ok(SweepResult { experiment, num_ris: run.base.num_ris(), points, threshold, elapsed: start.elapsed() })
}

fn power_points(cfg: &ScenarioConfig) -> Vec<PointSpec> {
    cfg.run
        .power_dbm
        .iter()
        .map(|&p| PointSpec {
            sweep_var: "power_dbm",
            value: p,
            power_dbm: p,
            nu: cfg.waveform.cfo_hz,
            kappa: None,
            cfo_estimation: cfg.grid.cfo_estimation,
        })
        .collect()
}

fn estimation_sweep(run: &Run, kind: EstimatorKind, specs: &[PointSpec]) -> Result<Vec<SweepPoint>> {
    let cfg = run.cfg;
    let r = run.base.num_ris();
    let los = kind == EstimatorKind::Los;
    let trials = cfg.run.trials;
    let mut accs = vec![Acc::new(r); specs.len()];
    for t in 0..trials as u64 {
        let mut rng = trial_rng(cfg.run.seed, t, 0);
        let schedule = run.schedule(&mut rng)?;
        let gains = fspl_gains(&run.base, los, &mut rng)?;
        let mut est = Estimator::new(&run.base, &schedule, run.grid)?;
        for (i, p) in specs.iter().enumerate() {
            let sc = run.base.clone().with_power_dbm(p.power_dbm);
            est.set_power(sc.waveform.power)?;
            est.set_grid(GridSpec { cfo_estimation: p.cfo_estimation, ..run.grid });
            let mut prng = trial_rng(cfg.run.seed, t, i as u64 + 1);
            let y = match p.kappa {
                Some(k) => {
                    synthesize_multipath(&sc, &schedule, p.nu, &gains, &RicianParams::uniform(k, r), &mut prng)?.y
                }
                None => synthesize_with(est.model(), &sc, p.nu, &gains, &mut prng)?.y,
            };
            let ce = run.estimate(&est, kind, &y)?;
            let pos = localize(&est, &sc, &y, &ce, cfg.run.refine_position);
            accs[i].add_errors(&trial_errors(&sc, p.nu, &ce, &pos)?);
            accs[i].add_bounds(bounds(&est, &sc, p.nu, &gains).as_ref());
        }
    }
    specs
        .iter()
        .zip(&accs)
        .map(|(p, a)| a.finish(p.sweep_var, p.value, trials, cfg.run.seed, false, false))
        .collect()
}

/// Monte-Carlo threshold calibration on LoS data at the calibration power.
pub fn calibrate_threshold(cfg: &ScenarioConfig) -> Result<Calibration> {
    calibrate(&Run::new(cfg)?)
}

fn calibrate(run: &Run) -> Result<Calibration> {
    let cfg = run.cfg;
    let d = &cfg.detector;
    let sc = run.base.clone().with_power_dbm(d.calibration_power_dbm);
    let nu = cfg.waveform.cfo_hz;
    let mut stats = Vec::with_capacity(d.calibration_trials);
    for t in 0..d.calibration_trials as u64 {
        let mut rng = trial_rng(cfg.run.seed, t, CALIBRATION_STREAM);
        let schedule = run.schedule(&mut rng)?;
        let gains = fspl_gains(&sc, true, &mut rng)?;
        let est = Estimator::new(&sc, &schedule, run.grid)?;
        let y = synthesize_with(est.model(), &sc, nu, &gains, &mut rng)?.y;
        stats.push(detect_and_estimate(&est, &y, 0.0, d.variant)?.statistic);
    }
    calibrate_from_statistics(&stats, d.target_pd)
}

/// Blocked-LoS trials give the false-alarm rate and the RMSE of the selected
/// estimate; LoS trials on the same draws give the detection rate.
fn detection_sweep(run: &Run, threshold: f64) -> Result<Vec<SweepPoint>> {
    let cfg = run.cfg;
    let d = &cfg.detector;
    let r = run.base.num_ris();
    let nu = cfg.waveform.cfo_hz;
    let trials = cfg.detection_trials();
    let powers = &cfg.run.power_dbm;
    let mut accs = vec![Acc::new(r); powers.len()];
    for t in 0..trials as u64 {
        let mut rng = trial_rng(cfg.run.seed, t, 0);
        let schedule = run.schedule(&mut rng)?;
        let with_los = fspl_gains(&run.base, true, &mut rng)?;
        let blocked = PathGains { los: None, ris: with_los.ris.clone() };
        let mut est = Estimator::new(&run.base, &schedule, run.grid)?;
        for (i, &p) in powers.iter().enumerate() {
            let sc = run.base.clone().with_power_dbm(p);
            est.set_power(sc.waveform.power)?;
            let mut prng = trial_rng(cfg.run.seed, t, 2 * i as u64 + 1);
            let y0 = synthesize_with(est.model(), &sc, nu, &blocked, &mut prng)?.y;
            let res = detect_and_estimate(&est, &y0, threshold, d.variant)?;
            let acc = &mut accs[i];
            acc.fa_n += 1;
            acc.fa += usize::from(res.decision == Decision::H1);
            let pos = localize(&est, &sc, &y0, res.selected(), cfg.run.refine_position);
            acc.add_errors(&trial_errors(&sc, nu, res.selected(), &pos)?);
            acc.add_bounds(bounds(&est, &sc, nu, &blocked).as_ref());
            if d.measure_pd {
                let mut prng = trial_rng(cfg.run.seed, t, 2 * i as u64 + 2);
                let y1 = synthesize_with(est.model(), &sc, nu, &with_los, &mut prng)?.y;
                let res = detect_and_estimate(&est, &y1, threshold, d.variant)?;
                acc.det_n += 1;
                acc.det += usize::from(res.decision == Decision::H1);
            }
        }
    }
    powers
        .iter()
        .zip(&accs)
        .map(|(&p, a)| a.finish("power_dbm", p, trials, cfg.run.seed, true, d.measure_pd))
        .collect()
}

/// Outcome of a single trial.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub scenario: Scenario,
    pub nu: f64,
    pub gains: PathGains,
    pub estimate: ChannelEstimate,
    pub position: PositionEstimate,
    pub errors: TrialErrors,
    pub bounds: Option<BoundsReport>,
}

/// One trial of `run.estimator` at `power_dbm`, using trial index 0.
pub fn simulate(cfg: &ScenarioConfig, power_dbm: f64) -> Result<TrialReport> {
    let run = Run::new(cfg)?;
    let sc = run.base.clone().with_power_dbm(power_dbm);
    let kind = cfg.run.estimator;
    let nu = cfg.waveform.cfo_hz;
    let mut rng = trial_rng(cfg.run.seed, 0, 0);
    let schedule = run.schedule(&mut rng)?;
    let gains = fspl_gains(&sc, kind == EstimatorKind::Los, &mut rng)?;
    let est = Estimator::new(&sc, &schedule, run.grid)?;
    let y = synthesize_with(est.model(), &sc, nu, &gains, &mut trial_rng(cfg.run.seed, 0, 1))?.y;
    let estimate = run.estimate(&est, kind, &y)?;
    let position = localize(&est, &sc, &y, &estimate, cfg.run.refine_position);
    let errors = trial_errors(&sc, nu, &estimate, &position)?;
    let bounds = bounds(&est, &sc, nu, &gains);
    Ok(TrialReport { scenario: sc, nu, gains, estimate, position, errors, bounds })
}

/// Bounds at every configured power under both hypotheses, using the
/// profiles and gains of trial 0.
pub fn bounds_table(cfg: &ScenarioConfig) -> Result<Vec<(Hypothesis, f64, BoundsReport)>> {
    let run = Run::new(cfg)?;
    let mut rng = trial_rng(cfg.run.seed, 0, 0);
    let schedule = run.schedule(&mut rng)?;
    let with_los = fspl_gains(&run.base, true, &mut rng)?;
    let mut model = crate::model::SignalModel::new(&run.base, &schedule)?;
    let nu = cfg.waveform.cfo_hz;
    let mut rows = Vec::new();
    for h in [Hypothesis::Los, Hypothesis::Nlos] {
        let alpha0 = if h == Hypothesis::Los { with_los.los } else { None };
        for &p in &cfg.run.power_dbm {
            let sc = run.base.clone().with_power_dbm(p);
            model.set_power(sc.waveform.power)?;
            let truth = ChannelParams { nu, aods: sc.aods()?, alpha0, alphas: with_los.ris.clone() };
            rows.push((h, p, compute_bounds(&model, &sc.ue, &truth, sc.waveform.noise_var)?));
        }
    }
    Ok(rows)
}
