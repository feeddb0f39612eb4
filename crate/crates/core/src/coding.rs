//! Hadamard-coded RIS phase schedules and the reshape/decode step that
//! separates per-path contributions.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

use crate::channel::cfo_vector;
use crate::geometry::{steering_vector, Position3};
use crate::scenario::Scenario;
use crate::{CMatrix, CVector, Error, Result};

/// Sylvester-ordered Hadamard matrix of order `n` (a power of two). Row `i`
/// is the `i`th code.
pub fn hadamard(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Config(format!("Hadamard order {n} is not a power of two")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 }))
}

/// Smallest admissible code length for `r` RISs plus the LoS path over `m`
/// transmissions, or a validated override.
pub fn code_length(r: usize, m: usize, l_override: Option<usize>) -> Result<usize> {
    let min = (r + 1).next_power_of_two();
    let l = match l_override {
        Some(l) => {
            if !l.is_power_of_two() || l < min {
                return Err(Error::Config(format!(
                    "code length {l} must be a power of two no smaller than {min}"
                )));
            }
            l
        }
        None => min,
    };
    if m == 0 || m % l != 0 {
        return Err(Error::Config(format!("code length {l} does not divide M = {m}")));
    }
    Ok(l)
}

/// How base phase profiles are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseKind {
    /// Independent uniform phases per element and per block.
    Random,
    /// Conjugate-phase beams toward points around a hypothesized UE
    /// position.
    Directional { toward: Position3 },
}

/// Base profiles plus temporal codes for every RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct RisSchedule {
    l: usize,
    m: usize,
    /// `codes[0]` is the constant LoS code; `codes[r]` belongs to RIS `r`
    /// (1-based).
    codes: Vec<DVector<f64>>,
    /// `N × K` base profiles, one per RIS.
    profiles: Vec<CMatrix>,
}

impl RisSchedule {
    /// Assembles a schedule from explicit base profiles, each `N_r × M/L`.
    pub fn from_profiles(m: usize, profiles: Vec<CMatrix>, l_override: Option<usize>) -> Result<Self> {
        let r = profiles.len();
        let l = code_length(r, m, l_override)?;
        let k = m / l;
        for (i, p) in profiles.iter().enumerate() {
            if p.ncols() != k {
                return Err(Error::Dimension(format!("profile {} has {} columns, expected {k}", i + 1, p.ncols())));
            }
            if p.iter().any(|g| (g.norm() - 1.0).abs() > 1e-9) {
                return Err(Error::Domain(format!("profile {} has non-unit-modulus entries", i + 1)));
            }
        }
        let h = hadamard(l)?;
        let codes = (0..=r).map(|i| h.row(i).transpose()).collect();
        Ok(Self { l, m, codes, profiles })
    }

    pub fn code_length(&self) -> usize {
        self.l
    }

    pub fn num_transmissions(&self) -> usize {
        self.m
    }

    /// Number of blocks `K = M / L`.
    pub fn num_blocks(&self) -> usize {
        self.m / self.l
    }

    pub fn num_ris(&self) -> usize {
        self.profiles.len()
    }

    /// Code `c_i`; index 0 is the LoS code.
    pub fn code(&self, i: usize) -> &DVector<f64> {
        &self.codes[i]
    }

    /// Base profile matrix of RIS `r` (0-based).
    pub fn profile(&self, r: usize) -> &CMatrix {
        &self.profiles[r]
    }

    /// Code vector of RIS `r` (0-based).
    pub fn ris_code(&self, r: usize) -> &DVector<f64> {
        &self.codes[r + 1]
    }

    /// Expanded profile `γ_{r,m}` of RIS `r` (0-based) at transmission `m`.
    pub fn gamma(&self, r: usize, m: usize) -> Result<CVector> {
        if r >= self.profiles.len() || m >= self.m {
            return Err(Error::Dimension(format!("no profile for RIS {r} at transmission {m}")));
        }
        let (k, l) = (m / self.l, m % self.l);
        Ok(self.profiles[r].column(k) * Complex64::from(self.codes[r + 1][l]))
    }

    /// `L × R` matrix whose columns are the RIS codes.
    pub fn code_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.l, self.num_ris(), |i, j| self.codes[j + 1][i])
    }
}

/// Builds a schedule for `r` RISs of `n` elements each over `m` transmissions.
pub fn build_schedule<R: Rng + ?Sized>(
    r: usize,
    m: usize,
    n: usize,
    kind: BaseKind,
    scenario: Option<&Scenario>,
    l_override: Option<usize>,
    rng: &mut R,
) -> Result<RisSchedule> {
    let l = code_length(r, m, l_override)?;
    let k = m / l;
    let profiles = match kind {
        BaseKind::Random => (0..r)
            .map(|_| CMatrix::from_fn(n, k, |_, _| Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))))
            .collect(),
        BaseKind::Directional { toward } => {
            let sc = scenario
                .ok_or_else(|| Error::Config("directional profiles need the scenario geometry".into()))?;
            if sc.num_ris() != r {
                return Err(Error::Dimension("scenario RIS count differs from schedule".into()));
            }
            (0..r).map(|i| directional_profiles(sc, i, &toward, k)).collect::<Result<_>>()?
        }
    };
    RisSchedule::from_profiles(m, profiles, Some(l))
}

/// Conjugate-phase beams from RIS `r` toward `k` directions spread within a
/// couple of beamwidths of the hypothesized position.
fn directional_profiles(sc: &Scenario, r: usize, toward: &Position3, k: usize) -> Result<CMatrix> {
    let node = &sc.ris[r];
    let lambda = sc.waveform.wavelength;
    let a_phi = steering_vector(&sc.aoa(r)?, &node.layout, lambda);
    let center = sc.aod_at(r, toward)?;
    let plane = node.layout.plane();
    let (c1, c2) = plane.cosines(&center.direction());
    let span = node.layout.spacing() * node.layout.cols().max(node.layout.rows()) as f64;
    let bw = lambda / span;
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut out = CMatrix::zeros(node.layout.len(), k);
    for col in 0..k {
        let rad = 2.0 * bw * ((col as f64 + 0.5) / k as f64).sqrt();
        let ang = golden * col as f64;
        let (mut u1, mut u2) = (c1 + rad * ang.cos(), c2 + rad * ang.sin());
        let s = (u1 * u1 + u2 * u2).sqrt();
        if s > 0.999 {
            u1 *= 0.999 / s;
            u2 *= 0.999 / s;
        }
        let dir = plane.direction_from_cosines(u1, u2).expect("inside visible disk");
        let ang2 = crate::geometry::Angle2::from_direction(&dir)?;
        let a = steering_vector(&ang2, &node.layout, lambda);
        for n in 0..a.len() {
            out[(n, col)] = Complex64::from_polar(1.0, -(a_phi[n] * a[n]).arg());
        }
    }
    Ok(out)
}

/// `L × (M/L)` arrangement of `y`; column `k` holds samples `kL .. kL+L-1`.
pub fn reshape_observations(y: &CVector, l: usize) -> Result<CMatrix> {
    if l == 0 || y.len() % l != 0 {
        return Err(Error::Dimension(format!("length {} is not a multiple of {l}", y.len())));
    }
    Ok(CMatrix::from_column_slice(l, y.len() / l, y.as_slice()))
}

/// `(1/L) Yᵀ c`.
pub fn decode(y: &CMatrix, c: &DVector<f64>) -> Result<CVector> {
    if y.nrows() != c.len() {
        return Err(Error::Dimension(format!("{} rows vs code of length {}", y.nrows(), c.len())));
    }
    let l = c.len() as f64;
    Ok(CVector::from_fn(y.ncols(), |k, _| {
        y.column(k).iter().zip(c.iter()).map(|(v, &ci)| v * ci).sum::<Complex64>() / l
    }))
}

/// Fraction of path power that leaks into the other paths' decoders at CFO
/// `nu`, with unit-gain paths. Zero at `nu = 0`.
pub fn residual_interference(schedule: &RisSchedule, nu: f64, scenario: &Scenario) -> Result<f64> {
    let model = crate::model::SignalModel::new(scenario, schedule)?;
    let m = schedule.num_transmissions();
    let l = schedule.code_length();
    let b = cfo_vector(nu, m, scenario.waveform.ts);
    let mut paths: Vec<(usize, CVector)> = vec![(0, b.clone())];
    for r in 0..schedule.num_ris() {
        let x = model.x(r, &scenario.aod(r)?);
        paths.push((r + 1, x.component_mul(&b)));
    }
    let (mut leak, mut power) = (0.0, 0.0);
    for (i, z) in &paths {
        power += z.norm_squared() / l as f64;
        let zm = reshape_observations(z, l)?;
        for (j, _) in &paths {
            if j != i {
                leak += decode(&zm, schedule.code(*j))?.norm_squared();
            }
        }
    }
    Ok(if power > 0.0 { leak / power } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn two_ris_codes() {
        let s = build_schedule(2, 256, 4, BaseKind::Random, None, None, &mut rng()).unwrap();
        assert_eq!(s.code_length(), 4);
        assert_eq!(s.code(0).as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.code(1).as_slice(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(s.code(2).as_slice(), &[1.0, 1.0, -1.0, -1.0]);
        assert_eq!(s.num_blocks(), 64);
    }

    #[test]
    fn three_ris_still_fit_length_four() {
        assert_eq!(code_length(3, 256, None).unwrap(), 4);
        assert_eq!(code_length(4, 256, None).unwrap(), 8);
        assert!(matches!(code_length(2, 6, None), Err(Error::Config(_))));
        assert!(code_length(2, 256, Some(3)).is_err());
        assert_eq!(code_length(2, 256, Some(16)).unwrap(), 16);
    }

    #[test]
    fn codes_are_orthogonal() {
        for l in [2usize, 4, 8, 16] {
            let h = hadamard(l).unwrap();
            let g = &h * h.transpose();
            assert_eq!(g, DMatrix::identity(l, l) * l as f64);
        }
    }

    #[test]
    fn gamma_follows_code_and_block() {
        let s = build_schedule(2, 16, 3, BaseKind::Random, None, None, &mut rng()).unwrap();
        for m in 0..16 {
            let g = s.gamma(1, m).unwrap();
            let expect = s.profile(1).column(m / 4) * Complex64::from(s.ris_code(1)[m % 4]);
            assert_eq!(g, expect);
            assert!(g.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        }
        assert!(s.gamma(2, 0).is_err());
    }

    #[test]
    fn reshape_layout_and_round_trip() {
        let y = CVector::from_fn(8, |i, _| Complex64::new(i as f64, 0.0));
        let m = reshape_observations(&y, 4).unwrap();
        assert_eq!(m.column(0).iter().map(|v| v.re).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(m.column(1).iter().map(|v| v.re).collect::<Vec<_>>(), vec![4.0, 5.0, 6.0, 7.0]);
        assert_eq!(m.as_slice(), y.as_slice());
        assert!(reshape_observations(&y, 3).is_err());
    }

    #[test]
    fn decode_checks_dimensions() {
        let y = CMatrix::zeros(4, 3);
        assert!(matches!(decode(&y, &DVector::from_element(2, 1.0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_code_decode_vanishes() {
        let mut r = rng();
        let xbar: Vec<Complex64> = (0..8).map(|_| Complex64::new(r.gen(), r.gen())).collect();
        let h = hadamard(4).unwrap();
        let c1 = h.row(1).transpose();
        let y = CVector::from_fn(32, |m, _| xbar[m / 4] * c1[m % 4]);
        let ym = reshape_observations(&y, 4).unwrap();
        for s in [0, 2, 3] {
            let d = decode(&ym, &h.row(s).transpose()).unwrap();
            assert!(d.norm() == 0.0);
        }
        let d = decode(&ym, &c1).unwrap();
        for k in 0..8 {
            assert!((d[k] - xbar[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn energy_conservation_with_full_code_set() {
        let mut r = rng();
        let y = CVector::from_fn(64, |_, _| Complex64::new(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5));
        let ym = reshape_observations(&y, 4).unwrap();
        let h = hadamard(4).unwrap();
        let all: f64 = (0..4).map(|i| decode(&ym, &h.row(i).transpose()).unwrap().norm_squared()).sum();
        assert!((all - y.norm_squared() / 4.0).abs() < 1e-12 * all);
        let part: f64 = (0..3).map(|i| decode(&ym, &h.row(i).transpose()).unwrap().norm_squared()).sum();
        assert!(part <= y.norm_squared() / 4.0);
    }

    #[test]
    fn interference_zero_at_zero_cfo_and_growing() {
        let sc = Scenario::table1().with_panel(8, 8).unwrap();
        let s = build_schedule(2, 256, 64, BaseKind::Random, None, None, &mut rng()).unwrap();
        assert!(residual_interference(&s, 0.0, &sc).unwrap() < 1e-25);
        assert!(residual_interference(&s, -40e3, &sc).unwrap() > 0.0);
        let top = 1.0 / (8.0 * 4.0 * sc.waveform.ts);
        let mut prev = 0.0;
        for i in 0..=40 {
            let v = residual_interference(&s, top * i as f64 / 40.0, &sc).unwrap();
            assert!(v >= prev - 1e-15, "step {i}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn directional_profiles_point_at_target() {
        let sc = Scenario::table1().with_panel(16, 16).unwrap();
        let s = build_schedule(2, 256, 256, BaseKind::Directional { toward: sc.ue }, Some(&sc), None, &mut rng())
            .unwrap();
        let model = crate::model::SignalModel::new(&sc, &s).unwrap();
        let on = model.xbar(0, &sc.aod(0).unwrap()).norm();
        let off = model.xbar(0, &crate::geometry::Angle2 { az: 0.3, el: 1.2 }).norm();
        assert!(on > 4.0 * off);
    }
}
