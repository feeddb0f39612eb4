//! Position from angles of departure: least-squares intersection of bearing
//! lines, then optional refinement of position and CFO on the raw signal.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::estimation::{compressed_residual, refine_local, RefineOptions};
use crate::geometry::{direction_vector, Angle2, Position3};
use crate::model::SignalModel;
use crate::scenario::Scenario;
use crate::{CVector, Error, Result};

/// Ray `anchor + β·direction`, `β ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingLine {
    pub anchor: Position3,
    pub direction: Vector3<f64>,
}

impl BearingLine {
    /// Normalizes `direction`; rejects zero or non-finite vectors.
    pub fn new(anchor: Position3, direction: Vector3<f64>) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("bearing direction must be non-zero".into()));
        }
        Ok(Self { anchor, direction: direction / n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixMethod {
    CoarseIntersection,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub p: Position3,
    pub nu: f64,
    pub method: FixMethod,
    /// Smallest eigenvalue of `Σ (I − u uᵀ)` over the bearing lines.
    pub conditioning: f64,
}

/// Bearing lines from each RIS along the given AoDs.
pub fn bearing_lines(scenario: &Scenario, aods: &[Angle2]) -> Vec<BearingLine> {
    scenario
        .ris
        .iter()
        .zip(aods)
        .map(|(n, a)| BearingLine { anchor: n.position, direction: direction_vector(a, &n.rotation) })
        .collect()
}

fn normal_system(lines: &[BearingLine]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut s = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for l in lines {
        let proj = Matrix3::identity() - l.direction * l.direction.transpose();
        s += proj;
        b += proj * l.anchor;
    }
    (s, b)
}

/// Smallest eigenvalue of `Σ (I − u uᵀ)`.
pub fn line_conditioning(lines: &[BearingLine]) -> f64 {
    let (s, _) = normal_system(lines);
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Point minimizing the summed squared distance to all lines.
pub fn intersect_lines(lines: &[BearingLine]) -> Result<Position3> {
    if lines.len() < 2 {
        return Err(Error::Domain("at least two bearing lines are needed".into()));
    }
    let (s, b) = normal_system(lines);
    let cond = SymmetricEigen::new(s).eigenvalues.min();
    if !(cond > 1e-10 * lines.len() as f64) {
        return Err(Error::Singular { what: "bearing lines are parallel".into(), conditioning: cond });
    }
    s.cholesky()
        .map(|c| c.solve(&b))
        .ok_or(Error::Singular { what: "bearing-line normal matrix".into(), conditioning: cond })
}

/// Coarse fix from estimated angles.
pub fn coarse_fix(scenario: &Scenario, aods: &[Angle2], nu: f64) -> Result<PositionEstimate> {
    let lines = bearing_lines(scenario, aods);
    let p = intersect_lines(&lines)?;
    Ok(PositionEstimate { p, nu, method: FixMethod::CoarseIntersection, conditioning: line_conditioning(&lines) })
}

/// Raw-signal residual with angles tied to `p`.
pub fn position_residual(model: &SignalModel, y: &CVector, p: &Position3, nu: f64, los: bool) -> f64 {
    let aods: Option<Vec<Angle2>> = (0..model.num_ris()).map(|r| model.aod_at(r, p).ok()).collect();
    match aods {
        Some(a) => compressed_residual(model, y, nu, &a, los).map(|r| r.0).unwrap_or(f64::INFINITY),
        None => f64::INFINITY,
    }
}

/// Position length unit inside the optimizer, meters.
const POS_UNIT: f64 = 0.05;

/// Local minimization of the raw-signal residual over position and, when
/// `refine_cfo`, the CFO. Never returns a worse residual than the start.
pub fn refine_position(
    model: &SignalModel,
    y: &CVector,
    p0: &Position3,
    nu0: f64,
    los: bool,
    refine_cfo: bool,
    opts: &RefineOptions,
) -> Result<PositionEstimate> {
    if !p0.iter().all(|v| v.is_finite()) || !nu0.is_finite() {
        return Err(Error::NonFinite("initial position or CFO".into()));
    }
    let f0 = position_residual(model, y, p0, nu0, los);
    if !f0.is_finite() {
        return Err(Error::NonFinite("residual at the initial position".into()));
    }
    let cfo_unit = 1.0 / (model.m() as f64 * model.ts());
    let unpack = |x: &[f64]| {
        let p = Position3::new(x[0], x[1], x[2]) * POS_UNIT;
        let nu = if refine_cfo { x[3] * cfo_unit } else { nu0 };
        (p, nu)
    };
    let mut x0 = vec![p0.x / POS_UNIT, p0.y / POS_UNIT, p0.z / POS_UNIT];
    if refine_cfo {
        x0.push(nu0 / cfo_unit);
    }
    let out = refine_local(
        |x| {
            let (p, nu) = unpack(x);
            position_residual(model, y, &p, nu, los)
        },
        &x0,
        opts,
    )?;
    let (p, nu) = if out.value <= f0 { unpack(&out.x) } else { (*p0, nu0) };
    let lines: Vec<BearingLine> = (0..model.num_ris())
        .filter_map(|r| BearingLine::new(model.ris_position(r), p - model.ris_position(r)).ok())
        .collect();
    Ok(PositionEstimate { p, nu, method: FixMethod::Refined, conditioning: line_conditioning(&lines) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{fspl_gains, synthesize};
    use crate::coding::{build_schedule, BaseKind};
    use nalgebra::Rotation3 as NaRot;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_lines_meet_at_ue() {
        let sc = Scenario::table1();
        let lines = bearing_lines(&sc, &sc.aods().unwrap());
        let p = intersect_lines(&lines).unwrap();
        assert!((p - sc.ue).norm() <= 1e-9);
    }

    #[test]
    fn skew_lines_give_midpoint() {
        let lines = [
            BearingLine::new(Position3::zeros(), Vector3::x()).unwrap(),
            BearingLine::new(Position3::new(0.0, 1.0, 1.0), Vector3::y()).unwrap(),
        ];
        let p = intersect_lines(&lines).unwrap();
        assert!((p - Position3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        let cost = |q: &Position3| {
            lines
                .iter()
                .map(|l| {
                    let d = q - l.anchor;
                    (d - l.direction * d.dot(&l.direction)).norm_squared()
                })
                .sum::<f64>()
        };
        let mut best = (f64::INFINITY, Position3::zeros());
        for i in -20..=20 {
            for j in -20..=20 {
                for k in -20..=20 {
                    let q = Position3::new(i as f64, j as f64, k as f64) * 0.05;
                    let c = cost(&q);
                    if c < best.0 {
                        best = (c, q);
                    }
                }
            }
        }
        assert!((best.1 - p).norm() < 0.05);
        assert!(cost(&p) <= best.0);
    }

    #[test]
    fn parallel_lines_are_singular() {
        let lines = [
            BearingLine::new(Position3::zeros(), Vector3::x()).unwrap(),
            BearingLine::new(Position3::new(0.0, 1.0, 0.0), Vector3::x()).unwrap(),
        ];
        assert!(matches!(intersect_lines(&lines), Err(Error::Singular { .. })));
    }

    #[test]
    fn refinement_returns_to_truth() {
        let sc = Scenario::table1().with_panel(16, 16).unwrap().with_noise_var(0.0);
        let s = build_schedule(2, 256, 256, BaseKind::Random, None, None, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let model = SignalModel::new(&sc, &s).unwrap();
        let g = fspl_gains(&sc, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = synthesize(&sc, &s, -40e3, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().y;
        let opts = RefineOptions { max_iters: 200, ..Default::default() };

        let at = refine_position(&model, &y, &sc.ue, -40e3, true, true, &opts).unwrap();
        assert!((at.p - sc.ue).norm() < 1e-6);

        let start = sc.ue + Vector3::new(0.06, -0.05, 0.05);
        let back = refine_position(&model, &y, &start, -40e3 + 20.0, true, true, &opts).unwrap();
        assert!((back.p - sc.ue).norm() < 1e-3, "{:?}", back.p);
        assert!(position_residual(&model, &y, &back.p, back.nu, true) <= position_residual(&model, &y, &start, -40e3 + 20.0, true));
    }

    proptest! {
        #[test]
        fn intersection_is_rigid_motion_equivariant(
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in -1.0..1.0f64,
            tx in -5.0..5.0f64, ty in -5.0..5.0f64, tz in -5.0..5.0f64,
            d1 in -1.0..1.0f64, d2 in -1.0..1.0f64,
        ) {
            let lines = vec![
                BearingLine::new(Position3::new(10.0, -10.0, 0.0), Vector3::new(-5.0 + d1, 12.0, 0.5)).unwrap(),
                BearingLine::new(Position3::new(0.0, 10.0, 0.0), Vector3::new(5.0, -8.0 + d2, 0.5)).unwrap(),
                BearingLine::new(Position3::new(-3.0, 1.0, 4.0), Vector3::new(8.0, 1.0, -3.5)).unwrap(),
            ];
            let p = intersect_lines(&lines).unwrap();
            let rot = NaRot::from_euler_angles(ax, ay, az);
            let t = Vector3::new(tx, ty, tz);
            let moved: Vec<BearingLine> = lines
                .iter()
                .map(|l| BearingLine { anchor: rot * l.anchor + t, direction: rot * l.direction })
                .collect();
            let q = intersect_lines(&moved).unwrap();
            prop_assert!((q - (rot * p + t)).norm() < 1e-9);
        }

        #[test]
        fn consistent_lines_have_zero_cost(x in -4.0..8.0f64, y in -6.0..6.0f64, z in -2.0..3.0f64) {
            let sc = Scenario { ue: Position3::new(x, y, z), ..Scenario::table1() };
            prop_assume!(sc.validate().is_ok());
            let lines = bearing_lines(&sc, &sc.aods().unwrap());
            prop_assume!(line_conditioning(&lines) > 1e-3);
            let p = intersect_lines(&lines).unwrap();
            prop_assert!((p - sc.ue).norm() < 1e-7);
        }
    }
}
