use super::*;

/// `|bᴴ(ν) y|²`.
fn periodogram(y: &CVector, nu: f64, ts: f64) -> f64 {
    let w = -2.0 * std::f64::consts::PI * ts * nu;
    let (mut acc, rot) = (Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, w));
    let mut ph = Complex64::new(1.0, 0.0);
    for v in y.iter() {
        acc += v * ph;
        ph *= rot;
    }
    acc.norm_sqr()
}

/// Lowest-index argmax of `f` over `points`.
pub(super) fn grid_argmax(points: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (points[0], f64::NEG_INFINITY);
    for &p in points {
        let v = f(p);
        if v > best.1 {
            best = (p, v);
        }
    }
    best.0
}

/// Maximizes `f` over ν near `nu0`, with ν measured in units of `unit` Hz and
/// confined to the grid range.
pub(super) fn refine_cfo(grid: &GridSpec, nu0: f64, unit: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let (lo, hi) = (grid.cfo_min, grid.cfo_max);
    let obj = |t: &[f64]| {
        let nu = t[0] * unit;
        if nu < lo || nu > hi {
            f64::INFINITY
        } else {
            -f(nu)
        }
    };
    let out = refine_local(obj, &[nu0 / unit], &grid.refine_options())?;
    Ok(out.x[0] * unit)
}

pub(super) fn cfo(model: &SignalModel, y: &CVector, grid: &GridSpec) -> Result<f64> {
    if !grid.cfo_estimation {
        return Ok(0.0);
    }
    let ts = model.ts();
    let coarse = grid_argmax(&grid.cfo_grid(grid.cfo_points), |nu| periodogram(y, nu, ts));
    if !grid.refine {
        return Ok(coarse);
    }
    refine_cfo(grid, coarse, 1.0 / (model.m() as f64 * ts), |nu| periodogram(y, nu, ts))
}

impl Estimator {
    /// Grid-only angles for every RIS at CFO `nu`.
    pub(super) fn coarse_aods(&self, y: &CVector, nu: f64) -> Result<(Vec<Angle2>, bool)> {
        let decoded = self.decode_all(&self.wipe(y, nu))?;
        let mut degenerate = false;
        let aods = decoded
            .iter()
            .enumerate()
            .map(|(r, d)| match self.searches[r].coarse(&self.model, d) {
                Some((t, _)) => t,
                None => {
                    degenerate = true;
                    self.model.from_beam_coords(r, &[0.0, 0.0]).expect("boresight is visible")
                }
            })
            .collect();
        Ok((aods, degenerate))
    }

    /// Angles (grid plus refinement) for every RIS at CFO `nu`.
    pub(super) fn refined_aods(&self, y: &CVector, nu: f64) -> Result<(Vec<Angle2>, bool)> {
        let decoded = self.decode_all(&self.wipe(y, nu))?;
        let mut degenerate = false;
        let mut aods = Vec::with_capacity(decoded.len());
        for (r, d) in decoded.iter().enumerate() {
            let (t, _, deg) = self.estimate_aod(r, d)?;
            degenerate |= deg;
            aods.push(t);
        }
        Ok((aods, degenerate))
    }

    /// CFO, then per-RIS angles on the CFO-free decoded blocks, then gains.
    /// `nu_coarse` is the grid stage of the CFO search.
    pub(super) fn staged(&self, y: &CVector, nu_coarse: f64, nu: f64, hypothesis: Hypothesis) -> Result<ChannelEstimate> {
        let los = hypothesis == Hypothesis::Los;
        let (aods, deg) = self.refined_aods(y, nu)?;
        let (res, _) = self.fit(y, nu, &aods, los);
        if self.grid.refine {
            let (c_aods, c_deg) = self.coarse_aods(y, nu_coarse)?;
            let (c_res, _) = self.fit(y, nu_coarse, &c_aods, los);
            if c_res < res || !res.is_finite() {
                return self.finish(y, nu_coarse, c_aods, hypothesis, c_deg);
            }
        }
        self.finish(y, nu, aods, hypothesis, deg)
    }

    pub fn los(&self, y: &CVector) -> Result<ChannelEstimate> {
        self.check_len(y)?;
        let ts = self.model.ts();
        let nu_c = if self.grid.cfo_estimation {
            grid_argmax(&self.grid.cfo_grid(self.grid.cfo_points), |nu| periodogram(y, nu, ts))
        } else {
            0.0
        };
        let nu = if self.grid.refine && self.grid.cfo_estimation {
            refine_cfo(&self.grid, nu_c, 1.0 / (self.model.m() as f64 * ts), |nu| periodogram(y, nu, ts))?
        } else {
            nu_c
        };
        self.staged(y, nu_c, nu, Hypothesis::Los)
    }

    pub(super) fn check_len(&self, y: &CVector) -> Result<()> {
        if y.len() != self.model.m() {
            return Err(Error::Dimension(format!("{} samples, expected {}", y.len(), self.model.m())));
        }
        Ok(())
    }
}
