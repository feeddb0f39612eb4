//! Channel-parameter estimation: CFO, angles of departure and path gains
//! under the line-of-sight and blocked hypotheses.

mod los;
mod nlos;
pub mod refine;
pub mod search;

use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::cfo_vector;
use crate::coding::{decode, reshape_observations, RisSchedule};
use crate::geometry::Angle2;
use crate::model::SignalModel;
use crate::scenario::Scenario;
use crate::{CMatrix, CVector, Error, Result};

pub use refine::{refine_local, RefineOptions, RefineOutcome};
pub use search::{aod_objective, AodSearch};

/// Which model an estimate was fitted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Los,
    Nlos,
}

/// Search grids and refinement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    /// CFO search interval, Hz. Defaults to `±1/(2 Ts)`.
    pub cfo_min: f64,
    pub cfo_max: f64,
    /// CFO grid size for the LoS and low-complexity estimators.
    pub cfo_points: usize,
    /// CFO grid size of the ML estimator's outer loop.
    pub ml_cfo_points: usize,
    /// Angle bins per direction-cosine axis.
    pub aod_points: usize,
    /// Local refinement after the grid stages.
    pub refine: bool,
    /// When false the CFO is taken as zero and never estimated.
    pub cfo_estimation: bool,
    pub refine_tol: f64,
    pub refine_iters: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cfo_min: -5e4,
            cfo_max: 5e4,
            cfo_points: 512,
            ml_cfo_points: 256,
            aod_points: 128,
            refine: true,
            cfo_estimation: true,
            refine_tol: 1e-9,
            refine_iters: 100,
        }
    }
}

impl GridSpec {
    /// Defaults spanning the full unambiguous CFO range of `scenario`.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let lim = scenario.cfo_limit();
        Self { cfo_min: -lim, cfo_max: lim, ..Self::default() }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let lim = scenario.cfo_limit() * (1.0 + 1e-12);
        if !(self.cfo_min < self.cfo_max) || self.cfo_min < -lim || self.cfo_max > lim {
            return Err(Error::Config(format!(
                "CFO range [{}, {}] must be increasing and inside ±{}",
                self.cfo_min,
                self.cfo_max,
                scenario.cfo_limit()
            )));
        }
        if self.cfo_points == 0 || self.ml_cfo_points == 0 || self.aod_points < 2 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::Config("refinement tolerance must be positive".into()));
        }
        Ok(())
    }

    /// `n` CFO grid points `lo + i (hi − lo)/n`.
    pub fn cfo_grid(&self, n: usize) -> Vec<f64> {
        let step = (self.cfo_max - self.cfo_min) / n as f64;
        (0..n).map(|i| self.cfo_min + step * i as f64).collect()
    }

    pub fn refine_options(&self) -> RefineOptions {
        RefineOptions { tol: self.refine_tol, max_iters: self.refine_iters, ..RefineOptions::default() }
    }
}

/// Estimated channel parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub nu: f64,
    pub aods: Vec<Angle2>,
    pub alpha0: Option<Complex64>,
    pub alphas: Vec<Complex64>,
    pub hypothesis: Hypothesis,
    /// `‖y − A α̂‖²` at the returned parameters.
    pub residual: f64,
    /// Set when some per-RIS angle search saw an all-zero objective.
    pub degenerate: bool,
}

/// The low-complexity estimator's unstructured signal model
/// `Y = D(ν) C H`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnstructuredModel {
    pub d: CVector,
    pub c: nalgebra::DMatrix<f64>,
    pub h: CMatrix,
}

impl UnstructuredModel {
    /// Diagonal of `D(ν) = diag(e^{j2π l Ts ν})`, `l < L`.
    pub fn phase_diagonal(nu: f64, l: usize, ts: f64) -> CVector {
        cfo_vector(nu, l, ts)
    }

    /// `E(ν) = I_K ⊗ (D(ν) C)`.
    pub fn lifted(nu: f64, schedule: &RisSchedule, ts: f64) -> CMatrix {
        let (l, k, r) = (schedule.code_length(), schedule.num_blocks(), schedule.num_ris());
        let d = Self::phase_diagonal(nu, l, ts);
        let c = schedule.code_matrix();
        let mut e = CMatrix::zeros(l * k, r * k);
        for b in 0..k {
            for i in 0..l {
                for j in 0..r {
                    e[(b * l + i, b * r + j)] = d[i] * c[(i, j)];
                }
            }
        }
        e
    }
}

/// Closed-form gains `(AᴴA)⁻¹Aᴴy` for fixed `(ν, θ)`.
pub fn conditional_gains(model: &SignalModel, y: &CVector, nu: f64, aods: &[Angle2], los: bool) -> Result<CVector> {
    let a = model.design_matrix(nu, aods, los);
    least_squares(&a, y)
}

/// `‖y − A α̂‖²` with gains profiled out, plus the gains.
pub fn compressed_residual(
    model: &SignalModel,
    y: &CVector,
    nu: f64,
    aods: &[Angle2],
    los: bool,
) -> Result<(f64, CVector)> {
    let a = model.design_matrix(nu, aods, los);
    let g = least_squares(&a, y)?;
    Ok(((y - &a * &g).norm_squared(), g))
}

pub(crate) fn least_squares(a: &CMatrix, y: &CVector) -> Result<CVector> {
    if a.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows vs {} observations", a.nrows(), y.len())));
    }
    if a.ncols() == 0 {
        return Ok(CVector::zeros(0));
    }
    let gram = a.adjoint() * a;
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-13 * max {
        return Err(Error::RankDeficient(format!(
            "gain design matrix is rank deficient (eigenvalue ratio {:e})",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    let rhs = a.adjoint() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Precomputed tables for running every estimator on one scenario and
/// schedule.
#[derive(Clone)]
pub struct Estimator {
    model: SignalModel,
    searches: Vec<AodSearch>,
    grid: GridSpec,
}

impl Estimator {
    pub fn new(scenario: &Scenario, schedule: &RisSchedule, grid: GridSpec) -> Result<Self> {
        grid.validate(scenario)?;
        let model = SignalModel::new(scenario, schedule)?;
        Ok(Self::from_model(model, grid))
    }

    pub fn from_model(model: SignalModel, grid: GridSpec) -> Self {
        let searches = (0..model.num_ris()).map(|r| AodSearch::new(&model, r, grid.aod_points)).collect();
        Self { model, searches, grid }
    }

    pub fn model(&self) -> &SignalModel {
        &self.model
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Swaps the grid settings, rebuilding the angle tables only when their
    /// size changes.
    pub fn set_grid(&mut self, grid: GridSpec) {
        if grid.aod_points != self.grid.aod_points {
            self.searches = (0..self.model.num_ris()).map(|r| AodSearch::new(&self.model, r, grid.aod_points)).collect();
        }
        self.grid = grid;
    }

    /// Changes the transmit power, watts. The search tables do not depend on it.
    pub fn set_power(&mut self, watts: f64) -> Result<()> {
        self.model.set_power(watts)
    }

    /// `y ⊙ b(−ν)`.
    pub fn wipe(&self, y: &CVector, nu: f64) -> CVector {
        y.component_mul(&cfo_vector(-nu, self.model.m(), self.model.ts()))
    }

    /// Per-RIS decoded blocks of a CFO-free signal.
    pub fn decode_all(&self, ytilde: &CVector) -> Result<Vec<CVector>> {
        let ym = reshape_observations(ytilde, self.model.l())?;
        (0..self.model.num_ris())
            .map(|r| decode(&ym, &nalgebra::DVector::from_column_slice(self.model.code(r))))
            .collect()
    }

    /// Grid search plus optional 2-D refinement of one RIS's angle, and the
    /// matching gain `x̄ᴴỹ / (√P ‖x̄‖²)`. The flag marks an all-zero input.
    pub fn estimate_aod(&self, r: usize, ytilde: &CVector) -> Result<(Angle2, Complex64, bool)> {
        let Some((coarse, _)) = self.searches[r].coarse(&self.model, ytilde) else {
            let fallback = self.model.from_beam_coords(r, &[0.0, 0.0]).expect("boresight is visible");
            return Ok((fallback, Complex64::new(0.0, 0.0), true));
        };
        let theta = if self.grid.refine { self.refine_aod(r, ytilde, coarse)? } else { coarse };
        let x = self.model.xbar(r, &theta);
        let alpha = x.dotc(ytilde) / (self.model.sqrt_power() * x.norm_squared());
        Ok((theta, alpha, false))
    }

    fn refine_aod(&self, r: usize, ytilde: &CVector, start: Angle2) -> Result<Angle2> {
        let u0 = self.model.to_beam_coords(r, &start);
        let f = |u: &[f64]| match self.model.from_beam_coords(r, u) {
            Some(t) => -aod_objective(&self.model, r, ytilde, &t),
            None => f64::INFINITY,
        };
        let out = refine_local(f, &u0, &self.grid.refine_options())?;
        Ok(self.model.from_beam_coords(r, &out.x).unwrap_or(start))
    }

    /// Residual and gains at `(ν, θ)`; rank problems count as `+∞`.
    fn fit(&self, y: &CVector, nu: f64, aods: &[Angle2], los: bool) -> (f64, Option<CVector>) {
        match compressed_residual(&self.model, y, nu, aods, los) {
            Ok((r, g)) => (r, Some(g)),
            Err(_) => (f64::INFINITY, None),
        }
    }

    /// Estimate at given CFO and angles, with the gains fitted by least squares.
    pub fn fit_at(&self, y: &CVector, nu: f64, aods: Vec<Angle2>, hypothesis: Hypothesis) -> Result<ChannelEstimate> {
        self.finish(y, nu, aods, hypothesis, false)
    }

    fn finish(
        &self,
        y: &CVector,
        nu: f64,
        aods: Vec<Angle2>,
        hypothesis: Hypothesis,
        degenerate: bool,
    ) -> Result<ChannelEstimate> {
        let los = hypothesis == Hypothesis::Los;
        let (residual, gains) = compressed_residual(&self.model, y, nu, &aods, los)?;
        let mut it = gains.iter().copied();
        let alpha0 = if los { it.next() } else { None };
        Ok(ChannelEstimate { nu, aods, alpha0, alphas: it.collect(), hypothesis, residual, degenerate })
    }
}

/// CFO-only stage of the LoS estimator: grid argmax of `|bᴴ(ν) y|²`, refined.
pub fn estimate_cfo_los(model: &SignalModel, y: &CVector, grid: &GridSpec) -> Result<f64> {
    los::cfo(model, y, grid)
}

/// Per-RIS angle and gain from a CFO-free decoded block signal.
pub fn estimate_aod_per_ris(est: &Estimator, ytilde_r: &CVector, r: usize) -> Result<(Angle2, Complex64)> {
    est.estimate_aod(r, ytilde_r).map(|(t, a, _)| (t, a))
}

/// Line-of-sight estimator.
pub fn estimate_los(est: &Estimator, y: &CVector) -> Result<ChannelEstimate> {
    est.los(y)
}

/// Blocked-LoS maximum-likelihood estimator.
pub fn estimate_nlos_ml(est: &Estimator, y: &CVector) -> Result<ChannelEstimate> {
    est.nlos_ml(y)
}

/// Blocked-LoS low-complexity estimator.
pub fn estimate_nlos_lc(est: &Estimator, y: &CVector) -> Result<ChannelEstimate> {
    est.nlos_lc(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{fspl_gains, synthesize};
    use crate::coding::{build_schedule, BaseKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(super) fn small(rows: usize, seed: u64) -> (Scenario, RisSchedule) {
        let sc = Scenario::table1().with_panel(rows, rows).unwrap();
        let s = build_schedule(2, 256, rows * rows, BaseKind::Random, None, None, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        (sc, s)
    }

    /// Dense normal equations solved by Gaussian elimination on explicit A.
    fn dense_ls(a: &CMatrix, y: &CVector) -> Vec<Complex64> {
        let n = a.ncols();
        let mut g = vec![vec![Complex64::new(0.0, 0.0); n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = (0..a.nrows()).map(|m| a[(m, i)].conj() * a[(m, j)]).sum();
            }
            g[i][n] = (0..a.nrows()).map(|m| a[(m, i)].conj() * y[m]).sum();
        }
        for p in 0..n {
            let piv = g[p][p];
            for j in p..=n {
                g[p][j] /= piv;
            }
            for i in 0..n {
                if i != p {
                    let f = g[i][p];
                    for j in p..=n {
                        let v = g[p][j];
                        g[i][j] -= f * v;
                    }
                }
            }
        }
        (0..n).map(|i| g[i][n]).collect()
    }

    #[test]
    fn gains_recovered_exactly() {
        let (sc, s) = small(6, 1);
        let sc = sc.with_noise_var(0.0);
        let model = SignalModel::new(&sc, &s).unwrap();
        let g = fspl_gains(&sc, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = synthesize(&sc, &s, -40e3, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().y;
        let est = conditional_gains(&model, &y, -40e3, &sc.aods().unwrap(), true).unwrap();
        let truth = [g.los.unwrap(), g.ris[0], g.ris[1]];
        for (e, t) in est.iter().zip(truth) {
            assert!((e - t).norm() <= 1e-9 * t.norm());
        }
        let zero = conditional_gains(&model, &CVector::zeros(256), 0.0, &sc.aods().unwrap(), true).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn gains_match_dense_oracle_on_noisy_data() {
        let (sc, s) = small(6, 2);
        let model = SignalModel::new(&sc, &s).unwrap();
        let g = fspl_gains(&sc, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = synthesize(&sc, &s, 1234.0, &g, &mut ChaCha8Rng::seed_from_u64(8)).unwrap().y;
        let aods = vec![Angle2 { az: 1.7, el: 1.4 }, Angle2 { az: 2.2, el: 1.5 }];
        let est = conditional_gains(&model, &y, 1000.0, &aods, true).unwrap();
        let oracle = dense_ls(&model.design_matrix(1000.0, &aods, true), &y);
        for (e, o) in est.iter().zip(&oracle) {
            assert!((e - o).norm() <= 1e-9 * o.norm());
        }
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let (sc, s) = small(3, 1);
        let model = SignalModel::new(&sc, &s).unwrap();
        let theta = sc.aod(0).unwrap();
        let mut a = model.design_matrix(0.0, &[theta, theta], true);
        let c1 = a.column(1).into_owned();
        a.set_column(2, &c1);
        let y = CVector::from_element(256, Complex64::new(1.0, 0.0));
        assert!(matches!(least_squares(&a, &y), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn lifted_model_is_scaled_isometry() {
        let (_, s) = small(2, 1);
        for nu in [0.0, -40e3, 12345.6] {
            let e = UnstructuredModel::lifted(nu, &s, 1e-5);
            let g = e.adjoint() * &e;
            let eye = CMatrix::identity(g.nrows(), g.ncols()) * Complex64::from(4.0);
            assert!((g - eye).norm() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn residual_orthogonal_to_columns(seed in 0u64..500) {
            let (sc, s) = small(4, seed);
            let model = SignalModel::new(&sc, &s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = fspl_gains(&sc, true, &mut rng).unwrap();
            let y = synthesize(&sc, &s, rng.gen_range(-4e4..4e4), &g, &mut rng).unwrap().y;
            let aods = vec![
                Angle2 { az: rng.gen_range(0.5..2.5), el: rng.gen_range(1.0..2.0) },
                Angle2 { az: rng.gen_range(0.5..2.5), el: rng.gen_range(1.0..2.0) },
            ];
            let nu = rng.gen_range(-4e4..4e4);
            let a = model.design_matrix(nu, &aods, true);
            let alpha = conditional_gains(&model, &y, nu, &aods, true).unwrap();
            let res = &y - &a * &alpha;
            let proj = a.adjoint() * res;
            for (j, p) in proj.iter().enumerate() {
                prop_assert!(p.norm() <= 1e-9 * a.column(j).norm() * y.norm());
            }
        }

        #[test]
        fn aod_argmax_scale_invariant(re in -3.0..3.0f64, im in -3.0..3.0f64) {
            prop_assume!(re.abs() + im.abs() > 1e-3);
            let (sc, s) = small(6, 4);
            let model = SignalModel::new(&sc, &s).unwrap();
            let search = AodSearch::new(&model, 0, 32);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let y = CVector::from_fn(64, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let a = search.coarse(&model, &y).unwrap().0;
            let b = search.coarse(&model, &(y * Complex64::new(re, im))).unwrap().0;
            prop_assert_eq!(a, b);
        }
    }
}
