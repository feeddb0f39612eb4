use super::los::{grid_argmax, refine_cfo};
use super::*;
use crate::coding::reshape_observations;

impl Estimator {
    /// Full-residual CFO search with per-RIS grid angles at every CFO point,
    /// then joint refinement of CFO and all angles.
    pub fn nlos_ml(&self, y: &CVector) -> Result<ChannelEstimate> {
        self.check_len(y)?;
        let nus = if self.grid.cfo_estimation { self.grid.cfo_grid(self.grid.ml_cfo_points) } else { vec![0.0] };
        let mut best: Option<(f64, f64, Vec<Angle2>, bool)> = None;
        for nu in nus {
            let (aods, deg) = self.coarse_aods(y, nu)?;
            let (res, _) = self.fit(y, nu, &aods, false);
            if best.as_ref().map_or(true, |b| res < b.0) {
                best = Some((res, nu, aods, deg));
            }
        }
        let (res0, nu0, aods0, deg) = best.expect("non-empty CFO grid");
        if !self.grid.refine || !res0.is_finite() {
            return self.finish(y, nu0, aods0, Hypothesis::Nlos, deg);
        }

        let unit = 1.0 / (self.model.m() as f64 * self.model.ts());
        let with_cfo = self.grid.cfo_estimation;
        let mut x0 = Vec::with_capacity(1 + 2 * aods0.len());
        if with_cfo {
            x0.push(nu0 / unit);
        }
        for (r, t) in aods0.iter().enumerate() {
            x0.extend_from_slice(&self.model.to_beam_coords(r, t));
        }
        let unpack = |x: &[f64]| -> Option<(f64, Vec<Angle2>)> {
            let (nu, rest) = if with_cfo { (x[0] * unit, &x[1..]) } else { (0.0, x) };
            if nu < self.grid.cfo_min || nu > self.grid.cfo_max {
                return None;
            }
            let aods = (0..self.model.num_ris())
                .map(|r| self.model.from_beam_coords(r, &rest[2 * r..2 * r + 2]))
                .collect::<Option<Vec<_>>>()?;
            Some((nu, aods))
        };
        let f = |x: &[f64]| match unpack(x) {
            Some((nu, aods)) => self.fit(y, nu, &aods, false).0,
            None => f64::INFINITY,
        };
        let out = refine_local(f, &x0, &self.grid.refine_options())?;
        match unpack(&out.x) {
            Some((nu, aods)) if out.value < res0 => self.finish(y, nu, aods, Hypothesis::Nlos, deg),
            _ => self.finish(y, nu0, aods0, Hypothesis::Nlos, deg),
        }
    }

    /// Unstructured CFO search `argmax ‖Cᴴ Dᴴ(ν) Y‖²_F`, then the same
    /// per-RIS angle stage as the LoS estimator.
    pub fn nlos_lc(&self, y: &CVector) -> Result<ChannelEstimate> {
        self.check_len(y)?;
        let ym = reshape_observations(y, self.model.l())?;
        let codes: Vec<&[f64]> = (0..self.model.num_ris()).map(|r| self.model.code(r)).collect();
        let ts = self.model.ts();
        let obj = |nu: f64| lc_objective(&ym, &codes, nu, ts);
        let nu_c =
            if self.grid.cfo_estimation { grid_argmax(&self.grid.cfo_grid(self.grid.cfo_points), obj) } else { 0.0 };
        let nu = if self.grid.refine && self.grid.cfo_estimation {
            refine_cfo(&self.grid, nu_c, 1.0 / (self.model.m() as f64 * ts), obj)?
        } else {
            nu_c
        };
        self.staged(y, nu_c, nu, Hypothesis::Nlos)
    }
}

/// `‖Cᴴ Dᴴ(ν) Y‖²_F` for the reshaped observations `Y`.
pub(super) fn lc_objective(ym: &CMatrix, codes: &[&[f64]], nu: f64, ts: f64) -> f64 {
    let l = ym.nrows();
    let d = cfo_vector(-nu, l, ts);
    let mut total = 0.0;
    for k in 0..ym.ncols() {
        let col: Vec<Complex64> = (0..l).map(|i| d[i] * ym[(i, k)]).collect();
        for c in codes {
            let v: Complex64 = col.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
            total += v.norm_sqr();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::super::tests::small;
    use super::*;
    use crate::channel::{fspl_gains, synthesize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nlos_data(rows: usize, nu: f64) -> (Scenario, RisSchedule, CVector, crate::channel::PathGains) {
        let (sc, s) = small(rows, 5);
        let sc = sc.with_noise_var(0.0);
        let g = fspl_gains(&sc, false, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let y = synthesize(&sc, &s, nu, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().y;
        (sc, s, y, g)
    }

    #[test]
    fn ml_recovers_noise_free_parameters() {
        let (sc, s, y, g) = nlos_data(16, -40e3);
        let grid = GridSpec { ml_cfo_points: 256, aod_points: 64, ..GridSpec::for_scenario(&sc) };
        let est = Estimator::new(&sc, &s, grid).unwrap();
        let e = est.nlos_ml(&y).unwrap();
        assert_eq!(e.hypothesis, Hypothesis::Nlos);
        assert!(e.alpha0.is_none());
        assert!((e.nu + 40e3).abs() < 1.0, "nu {}", e.nu);
        for r in 0..2 {
            assert!(e.aods[r].direction().dot(&sc.aod(r).unwrap().direction()) > 1.0 - 1e-8);
            assert!((e.alphas[r] - g.ris[r]).norm() < 1e-3 * g.ris[r].norm());
        }
        let (truth_res, _) = compressed_residual(est.model(), &y, -40e3, &sc.aods().unwrap(), false).unwrap();
        assert!(e.residual <= truth_res + 1e-12 * y.norm_squared());
    }

    #[test]
    fn lc_cfo_maximizes_grid_objective() {
        let (sc, s, y, _) = nlos_data(8, -40e3);
        let grid = GridSpec { refine: false, ..GridSpec::for_scenario(&sc) };
        let est = Estimator::new(&sc, &s, grid).unwrap();
        let e = est.nlos_lc(&y).unwrap();
        let ym = reshape_observations(&y, 4).unwrap();
        let codes: Vec<&[f64]> = (0..2).map(|r| est.model().code(r)).collect();
        let best = grid
            .cfo_grid(grid.cfo_points)
            .into_iter()
            .map(|nu| lc_objective(&ym, &codes, nu, 1e-5))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lc_objective(&ym, &codes, e.nu, 1e-5), best);
    }

    #[test]
    fn lc_objective_matches_lifted_form() {
        let (sc, s, y, _) = nlos_data(4, 3000.0);
        let est = Estimator::new(&sc, &s, GridSpec::for_scenario(&sc)).unwrap();
        let ym = reshape_observations(&y, 4).unwrap();
        let codes: Vec<&[f64]> = (0..2).map(|r| est.model().code(r)).collect();
        let nu = 2500.0;
        let e = UnstructuredModel::lifted(nu, &s, 1e-5);
        let lifted = (e.adjoint() * &y).norm_squared();
        assert!((lifted - lc_objective(&ym, &codes, nu, 1e-5)).abs() <= 1e-9 * lifted);
    }

    #[test]
    fn ml_matches_los_angle_stage_on_exact_grid() {
        let nu = -40e3;
        let (sc, s, y, _) = nlos_data(8, nu);
        let grid = GridSpec { cfo_min: nu, cfo_max: nu + 1.0, ml_cfo_points: 1, refine: false, ..GridSpec::default() };
        let est = Estimator::new(&sc, &s, grid).unwrap();
        let e = est.nlos_ml(&y).unwrap();
        let (aods, _) = est.coarse_aods(&y, nu).unwrap();
        assert_eq!(e.aods, aods);
    }

    #[test]
    fn estimators_never_worse_than_their_coarse_stage() {
        let (sc, s) = small(8, 9);
        let sc = sc.with_power_dbm(20.0);
        let g = fspl_gains(&sc, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let y = synthesize(&sc, &s, 777.0, &g, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().y;
        let grid = GridSpec { ml_cfo_points: 64, aod_points: 32, ..GridSpec::for_scenario(&sc) };
        let fine = Estimator::new(&sc, &s, grid).unwrap();
        let coarse = Estimator::new(&sc, &s, GridSpec { refine: false, ..grid }).unwrap();
        assert!(fine.nlos_ml(&y).unwrap().residual <= coarse.nlos_ml(&y).unwrap().residual);
        assert!(fine.nlos_lc(&y).unwrap().residual <= coarse.nlos_lc(&y).unwrap().residual);
        assert!(fine.los(&y).unwrap().residual <= coarse.los(&y).unwrap().residual);
    }
}
