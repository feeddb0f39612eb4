//! Fisher information and Cramér-Rao bounds.
//!
//! Channel parameters are ordered as
//! `[Re α0, Im α0, Re α1, Im α1, …, ν, az1, el1, az2, el2, …]`, with the
//! `α0` pair present only under the LoS hypothesis. Positional parameters
//! replace the angle block by `[px, py, pz]`.

use nalgebra::{DMatrix, Matrix2x3, SymmetricEigen, Vector3};
use num_complex::Complex64;

use crate::channel::cfo_vector;
use crate::estimation::Hypothesis;
use crate::geometry::Position3;
use crate::model::{ChannelParams, SignalModel};
use crate::{CMatrix, CVector, Error, Result};

/// Channel-domain FIM.
#[derive(Debug, Clone, PartialEq)]
pub struct FimChannel {
    pub matrix: DMatrix<f64>,
    pub hypothesis: Hypothesis,
    pub num_ris: usize,
}

/// Position-domain FIM.
#[derive(Debug, Clone, PartialEq)]
pub struct FimPosition {
    pub matrix: DMatrix<f64>,
    pub hypothesis: Hypothesis,
    pub num_ris: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub hypothesis: Hypothesis,
    /// Position error bound, meters.
    pub peb: f64,
    /// CFO bound, Hz.
    pub cfo: f64,
    /// Per-RIS `(az, el)` bounds, radians.
    pub aod: Vec<(f64, f64)>,
    /// Smallest over largest eigenvalue of the diagonally scaled positional
    /// FIM.
    pub conditioning: f64,
}

fn gain_count(h: Hypothesis, r: usize) -> usize {
    2 * r + if h == Hypothesis::Los { 2 } else { 0 }
}

/// Index of `ν` in either parameter vector.
pub fn cfo_index(h: Hypothesis, r: usize) -> usize {
    gain_count(h, r)
}

/// `∂z/∂η_ch` as columns.
pub fn channel_derivatives(model: &SignalModel, truth: &ChannelParams) -> Result<CMatrix> {
    let r = model.num_ris();
    if truth.aods.len() != r || truth.alphas.len() != r {
        return Err(Error::Dimension("one angle and one gain per RIS are required".into()));
    }
    let h = if truth.alpha0.is_some() { Hypothesis::Los } else { Hypothesis::Nlos };
    let m = model.m();
    let sp = Complex64::from(model.sqrt_power());
    let j = Complex64::i();
    let b = cfo_vector(truth.nu, m, model.ts());
    let ng = gain_count(h, r);
    let mut d = CMatrix::zeros(m, ng + 1 + 2 * r);
    let mut z = CVector::zeros(m);
    let mut col = 0;
    if let Some(a0) = truth.alpha0 {
        let v = &b * sp;
        z += &v * a0;
        d.set_column(0, &v);
        d.set_column(1, &(&v * j));
        col = 2;
    }
    for (i, theta) in truth.aods.iter().enumerate() {
        let (xb, dxa, dxe) = model.xbar_with_derivatives(i, theta);
        let v = model.expand(i + 1, &xb).component_mul(&b) * sp;
        z += &v * truth.alphas[i];
        d.set_column(col, &v);
        d.set_column(col + 1, &(&v * j));
        col += 2;
        let g = truth.alphas[i] * sp;
        let ca = ng + 1 + 2 * i;
        d.set_column(ca, &(model.expand(i + 1, &dxa).component_mul(&b) * g));
        d.set_column(ca + 1, &(model.expand(i + 1, &dxe).component_mul(&b) * g));
    }
    let ts = model.ts();
    let dnu = CVector::from_fn(m, |k, _| z[k] * j * (2.0 * std::f64::consts::PI * k as f64 * ts));
    d.set_column(ng, &dnu);
    Ok(d)
}

/// `F = (2/σ²) Re{DᴴD}` with `D = ∂z/∂η_ch`.
pub fn fim_channel(model: &SignalModel, truth: &ChannelParams, noise_var: f64) -> Result<FimChannel> {
    if !(noise_var > 0.0) {
        return Err(Error::Domain("noise power must be positive".into()));
    }
    let d = channel_derivatives(model, truth)?;
    let g = d.adjoint() * &d;
    let f = g.map(|v| v.re * 2.0 / noise_var);
    let f = (&f + f.transpose()) * 0.5;
    let hypothesis = if truth.alpha0.is_some() { Hypothesis::Los } else { Hypothesis::Nlos };
    Ok(FimChannel { matrix: f, hypothesis, num_ris: model.num_ris() })
}

/// `∂(az, el)/∂p` for RIS `r` at UE position `p`.
pub fn aod_position_jacobian(model: &SignalModel, r: usize, p: &Position3) -> Result<Matrix2x3<f64>> {
    let rot = model.rotation(r).matrix();
    let v = rot * (p - model.ris_position(r));
    let rho2 = v.norm_squared();
    let planar2 = v.x * v.x + v.y * v.y;
    if !(rho2 > 0.0) {
        return Err(Error::Domain("UE coincides with a RIS".into()));
    }
    if planar2 <= 1e-24 * rho2 {
        return Err(Error::Singular { what: format!("RIS {} sees the UE on its local z axis", r + 1), conditioning: 0.0 });
    }
    let planar = planar2.sqrt();
    let daz = Vector3::new(-v.y, v.x, 0.0) / planar2;
    let del = (v * (v.z / rho2) - Vector3::z()) / planar;
    let local = Matrix2x3::from_rows(&[daz.transpose(), del.transpose()]);
    Ok(local * rot)
}

/// `J_{m,n} = ∂[η_ch]_m / ∂[η]_n`; rows follow the channel ordering and
/// columns the positional ordering.
pub fn jacobian_channel_to_position(model: &SignalModel, p: &Position3, hypothesis: Hypothesis) -> Result<DMatrix<f64>> {
    let r = model.num_ris();
    let ng = gain_count(hypothesis, r);
    let mut jm = DMatrix::zeros(ng + 1 + 2 * r, ng + 4);
    for i in 0..=ng {
        jm[(i, i)] = 1.0;
    }
    for k in 0..r {
        let blk = aod_position_jacobian(model, k, p)?;
        for a in 0..2 {
            for c in 0..3 {
                jm[(ng + 1 + 2 * k + a, ng + 1 + c)] = blk[(a, c)];
            }
        }
    }
    Ok(jm)
}

/// `F_pos = Jᵀ F_ch J`.
pub fn fim_position(fch: &FimChannel, j: &DMatrix<f64>) -> Result<FimPosition> {
    if j.nrows() != fch.matrix.nrows() {
        return Err(Error::Dimension("Jacobian rows differ from the channel FIM size".into()));
    }
    let f = j.transpose() * &fch.matrix * j;
    Ok(FimPosition { matrix: (&f + f.transpose()) * 0.5, hypothesis: fch.hypothesis, num_ris: fch.num_ris })
}

/// Inverse of a symmetric PSD matrix after Jacobi scaling, with the scaled
/// eigenvalue ratio. Fails when that ratio is below `1e-12`.
pub fn invert_fim(f: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = f.nrows();
    let diag: Vec<f64> = (0..n).map(|i| f[(i, i)]).collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::Singular { what: "FIM has a zero diagonal entry".into(), conditioning: 0.0 });
    }
    let s: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, k| f[(i, k)] * s[i] * s[k]);
    let eig = SymmetricEigen::new(scaled.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = lo / hi;
    if !(cond > 1e-12) {
        return Err(Error::Singular { what: "Fisher information is singular; parameters are not identifiable".into(), conditioning: cond });
    }
    let inv = scaled
        .cholesky()
        .ok_or(Error::Singular { what: "Cholesky factorization failed".into(), conditioning: cond })?
        .inverse();
    Ok((DMatrix::from_fn(n, n, |i, k| inv[(i, k)] * s[i] * s[k]), cond))
}

/// PEB and CFO bound from `F_pos`; per-angle bounds from `F_ch` when given.
pub fn bounds_report(fpos: &FimPosition, fch: Option<&FimChannel>) -> Result<BoundsReport> {
    let (inv, cond) = invert_fim(&fpos.matrix)?;
    let nu = cfo_index(fpos.hypothesis, fpos.num_ris);
    let peb = (inv[(nu + 1, nu + 1)] + inv[(nu + 2, nu + 2)] + inv[(nu + 3, nu + 3)]).max(0.0).sqrt();
    let cfo = inv[(nu, nu)].max(0.0).sqrt();
    let aod = match fch {
        Some(fc) => {
            let (ci, _) = invert_fim(&fc.matrix)?;
            (0..fc.num_ris)
                .map(|r| {
                    let i = nu + 1 + 2 * r;
                    (ci[(i, i)].max(0.0).sqrt(), ci[(i + 1, i + 1)].max(0.0).sqrt())
                })
                .collect()
        }
        None => Vec::new(),
    };
    Ok(BoundsReport { hypothesis: fpos.hypothesis, peb, cfo, aod, conditioning: cond })
}

/// All bounds for a scenario's true UE position and the given gains.
pub fn compute_bounds(model: &SignalModel, ue: &Position3, truth: &ChannelParams, noise_var: f64) -> Result<BoundsReport> {
    let fch = fim_channel(model, truth, noise_var)?;
    let j = jacobian_channel_to_position(model, ue, fch.hypothesis)?;
    let fpos = fim_position(&fch, &j)?;
    bounds_report(&fpos, Some(&fch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::fspl_gains;
    use crate::coding::{build_schedule, BaseKind};
    use crate::scenario::Scenario;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn truth(sc: &Scenario, los: bool, seed: u64) -> ChannelParams {
        let g = fspl_gains(sc, los, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        ChannelParams { nu: -40e3, aods: sc.aods().unwrap(), alpha0: g.los, alphas: g.ris }
    }

    fn setup(rows: usize) -> (Scenario, SignalModel) {
        let sc = Scenario::table1().with_panel(rows, rows).unwrap();
        let s = build_schedule(2, 256, rows * rows, BaseKind::Random, None, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let m = SignalModel::new(&sc, &s).unwrap();
        (sc, m)
    }

    #[test]
    fn jacobian_shapes_and_identity_block() {
        let (sc, model) = setup(4);
        let j = jacobian_channel_to_position(&model, &sc.ue, Hypothesis::Los).unwrap();
        assert_eq!(j.shape(), (11, 10));
        for i in 0..7 {
            for k in 0..10 {
                assert_eq!(j[(i, k)], if i == k { 1.0 } else { 0.0 });
            }
        }
        let j = jacobian_channel_to_position(&model, &sc.ue, Hypothesis::Nlos).unwrap();
        assert_eq!(j.shape(), (9, 8));
    }

    #[test]
    fn angle_jacobian_matches_differences() {
        let (sc, model) = setup(2);
        let p = sc.ue;
        for r in 0..2 {
            let jac = aod_position_jacobian(&model, r, &p).unwrap();
            for c in 0..3 {
                let h = 1e-6;
                let mut dp = Vector3::zeros();
                dp[c] = h;
                let a = model.aod_at(r, &(p + dp)).unwrap();
                let b = model.aod_at(r, &(p - dp)).unwrap();
                let faz = crate::geometry::wrap_angle(a.az - b.az) / (2.0 * h);
                let fel = (a.el - b.el) / (2.0 * h);
                assert!((faz - jac[(0, c)]).abs() <= 1e-5 * jac.row(0).norm());
                assert!((fel - jac[(1, c)]).abs() <= 1e-5 * jac.row(1).norm());
            }
        }
    }

    #[test]
    fn cfo_column_is_phase_ramp() {
        let (sc, model) = setup(3);
        let t = truth(&sc, true, 2);
        let d = channel_derivatives(&model, &t).unwrap();
        let z = model.noiseless(&t);
        for m in [0usize, 1, 100, 255] {
            let expect = z[m] * Complex64::i() * (2.0 * std::f64::consts::PI * m as f64 * 1e-5);
            assert!((d[(m, 6)] - expect).norm() <= 1e-12 * expect.norm().max(1e-30));
        }
    }

    #[test]
    fn fim_scales_with_power_and_noise() {
        let (sc, _) = setup(3);
        let s = build_schedule(2, 256, 9, BaseKind::Random, None, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let t = truth(&sc, true, 2);
        let m1 = SignalModel::new(&sc, &s).unwrap();
        let m4 = SignalModel::new(&sc.clone().with_power_dbm(36.0205999132796), &s).unwrap();
        let f1 = fim_channel(&m1, &t, 1e-15).unwrap().matrix;
        let f4 = fim_channel(&m4, &t, 1e-15).unwrap().matrix;
        let f1n = fim_channel(&m1, &t, 2e-15).unwrap().matrix;
        assert!((&f4 - &f1 * 4.0).norm() <= 1e-9 * f4.norm());
        assert!((&f1n * 2.0 - &f1).norm() <= 1e-12 * f1.norm());
    }

    #[test]
    fn fim_symmetric_psd() {
        let (sc, model) = setup(4);
        for los in [true, false] {
            let f = fim_channel(&model, &truth(&sc, los, 5), sc.waveform.noise_var).unwrap().matrix;
            assert!((&f - f.transpose()).norm() <= 1e-12 * f.norm());
            let eig = SymmetricEigen::new(f.clone()).eigenvalues;
            assert!(eig.min() >= -1e-9 * f.trace());
        }
    }

    #[test]
    fn peb_halves_with_four_times_power() {
        let (sc, model) = setup(8);
        let s = build_schedule(2, 256, 64, BaseKind::Random, None, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let t = truth(&sc, true, 3);
        let a = compute_bounds(&model, &sc.ue, &t, sc.waveform.noise_var).unwrap();
        let m4 = SignalModel::new(&sc.clone().with_power_dbm(30.0 + 10.0 * 4f64.log10()), &s).unwrap();
        let b = compute_bounds(&m4, &sc.ue, &t, sc.waveform.noise_var).unwrap();
        assert!((b.peb - a.peb / 2.0).abs() <= 1e-6 * a.peb);
    }

    #[test]
    fn single_ris_nlos_is_not_identifiable() {
        let mut sc = Scenario::table1().with_panel(4, 4).unwrap();
        sc.ris.truncate(1);
        let s = build_schedule(1, 256, 16, BaseKind::Random, None, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let model = SignalModel::new(&sc, &s).unwrap();
        let t = truth(&sc, false, 1);
        assert!(matches!(compute_bounds(&model, &sc.ue, &t, sc.waveform.noise_var), Err(Error::Singular { .. })));
    }

    #[test]
    fn third_ris_never_hurts() {
        let sc = Scenario::table1().with_panel(6, 6).unwrap();
        let mut sc3 = sc.clone();
        let mut extra = sc.ris[0].clone();
        extra.position = Position3::new(12.0, 8.0, 1.0);
        extra.rotation = crate::geometry::Rotation3::about_z(std::f64::consts::PI * 0.75);
        sc3.ris.push(extra);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s3 = build_schedule(3, 256, 36, BaseKind::Random, None, None, &mut rng).unwrap();
        let s2 = crate::coding::RisSchedule::from_profiles(256, vec![s3.profile(0).clone(), s3.profile(1).clone()], Some(4)).unwrap();
        let m2 = SignalModel::new(&sc, &s2).unwrap();
        let m3 = SignalModel::new(&sc3, &s3).unwrap();
        let g = fspl_gains(&sc3, true, &mut rng).unwrap();
        let t3 = ChannelParams { nu: 0.0, aods: sc3.aods().unwrap(), alpha0: g.los, alphas: g.ris.clone() };
        let t2 = ChannelParams { nu: 0.0, aods: sc.aods().unwrap(), alpha0: g.los, alphas: g.ris[..2].to_vec() };
        let p2 = compute_bounds(&m2, &sc.ue, &t2, sc.waveform.noise_var).unwrap().peb;
        let p3 = compute_bounds(&m3, &sc3.ue, &t3, sc.waveform.noise_var).unwrap().peb;
        assert!(p3 <= p2 * (1.0 + 1e-9));
    }
}
