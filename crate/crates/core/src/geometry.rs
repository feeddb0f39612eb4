//! Positions, RIS orientations, angles of departure and steering vectors.
//!
//! All angles are radians. A RIS local frame is obtained from the global
//! frame through its rotation matrix, and the angle of departure toward a
//! point is read off the local direction vector: azimuth in the local x-y
//! plane, elevation measured from the local z axis.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point in the global frame, meters.
pub type Position3 = Vector3<f64>;

/// Orthonormal, determinant +1 rotation mapping global coordinates into a
/// RIS local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rotation by `theta` about the z axis.
    pub fn about_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Validates a raw matrix: `RᵀR = I` within 1e-12 and `det R = +1`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("rotation matrix has non-finite entries".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > 1e-12 {
            return Err(Error::Domain(format!(
                "rotation matrix is not orthonormal (max |RᵀR - I| = {err:e})"
            )));
        }
        if (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("rotation matrix has determinant -1".into()));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Global vector to local frame.
    pub fn to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Local vector to global frame.
    pub fn to_global(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transpose() * v
    }
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

/// Azimuth/elevation pair. `az ∈ (−π, π]`, `el ∈ [0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angle2 {
    pub az: f64,
    pub el: f64,
}

impl Angle2 {
    /// Wraps `az` into `(−π, π]`; rejects elevations outside `[0, π]`.
    pub fn new(az: f64, el: f64) -> Result<Self> {
        if !az.is_finite() || !el.is_finite() {
            return Err(Error::Domain("non-finite angle".into()));
        }
        if !(0.0..=PI).contains(&el) {
            return Err(Error::Domain(format!("elevation {el} outside [0, π]")));
        }
        Ok(Self { az: wrap_angle(az), el })
    }

    /// Angle of a (not necessarily unit) local direction vector. The azimuth
    /// is fixed to 0 when the direction lies on the local z axis.
    pub fn from_direction(v: &Vector3<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("zero-length direction".into()));
        }
        let el = (v.z / norm).clamp(-1.0, 1.0).acos();
        let planar = v.x.hypot(v.y);
        let az = if planar <= 1e-15 * norm { 0.0 } else { v.y.atan2(v.x) };
        Ok(Self { az: wrap_angle(az), el })
    }

    /// Unit direction in the local frame.
    pub fn direction(&self) -> Vector3<f64> {
        let (se, ce) = self.el.sin_cos();
        let (sa, ca) = self.az.sin_cos();
        Vector3::new(se * ca, se * sa, ce)
    }

    /// Derivatives of [`Angle2::direction`] with respect to az and el.
    pub fn direction_jacobian(&self) -> (Vector3<f64>, Vector3<f64>) {
        let (se, ce) = self.el.sin_cos();
        let (sa, ca) = self.az.sin_cos();
        (
            Vector3::new(-se * sa, se * ca, 0.0),
            Vector3::new(ce * ca, ce * sa, -se),
        )
    }
}

/// Maps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Which two local axes span the RIS panel. The remaining axis is the panel
/// normal; only directions on its positive side are served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelPlane {
    /// Panel in local x–y, boresight +z.
    Xy,
    /// Panel in local x–z, boresight +y.
    #[default]
    Xz,
}

impl PanelPlane {
    /// (first in-plane axis, second in-plane axis, normal) as unit vectors.
    pub fn axes(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self {
            PanelPlane::Xy => (Vector3::x(), Vector3::y(), Vector3::z()),
            PanelPlane::Xz => (Vector3::x(), Vector3::z(), Vector3::y()),
        }
    }

    /// Local direction from in-plane direction cosines, on the front side.
    /// `None` outside the visible disk.
    pub fn direction_from_cosines(&self, c1: f64, c2: f64) -> Option<Vector3<f64>> {
        let rest = 1.0 - c1 * c1 - c2 * c2;
        if !(rest >= 0.0) {
            return None;
        }
        let (e1, e2, n) = self.axes();
        Some(e1 * c1 + e2 * c2 + n * rest.sqrt())
    }

    /// In-plane direction cosines of a local unit direction.
    pub fn cosines(&self, dir: &Vector3<f64>) -> (f64, f64) {
        let (e1, e2, _) = self.axes();
        (dir.dot(&e1), dir.dot(&e2))
    }
}

/// Element layout of a RIS in its local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RisArrayLayout {
    positions: Vec<Vector3<f64>>,
    spacing: f64,
    rows: usize,
    cols: usize,
    plane: PanelPlane,
    uniform: bool,
}

impl RisArrayLayout {
    /// Uniform `rows × cols` grid centred on the RIS origin. Element `n`
    /// sits at row `n / cols`, column `n % cols`; columns run along the first
    /// in-plane axis and rows along the second.
    pub fn uniform(rows: usize, cols: usize, spacing: f64, plane: PanelPlane) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("RIS layout needs at least one row and column".into()));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Config(format!("invalid element spacing {spacing}")));
        }
        let (e1, e2, _) = plane.axes();
        let c0 = (cols as f64 - 1.0) / 2.0;
        let r0 = (rows as f64 - 1.0) / 2.0;
        let positions = (0..rows)
            .flat_map(|i| {
                (0..cols).map(move |j| e1 * ((j as f64 - c0) * spacing) + e2 * ((i as f64 - r0) * spacing))
            })
            .collect();
        Ok(Self { positions, spacing, rows, cols, plane, uniform: true })
    }

    /// Arbitrary element positions; each must lie in the panel plane.
    pub fn from_positions(positions: Vec<Vector3<f64>>, spacing: f64, plane: PanelPlane) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("RIS layout has no elements".into()));
        }
        let (_, _, normal) = plane.axes();
        if positions.iter().any(|q| q.dot(&normal).abs() > 1e-12 || !q.iter().all(|v| v.is_finite())) {
            return Err(Error::Config("RIS element outside the panel plane".into()));
        }
        let n = positions.len();
        Ok(Self { positions, spacing, rows: 1, cols: n, plane, uniform: false })
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn plane(&self) -> PanelPlane {
        self.plane
    }

    /// True for layouts built by [`RisArrayLayout::uniform`].
    pub fn is_uniform(&self) -> bool {
        self.uniform
    }
}

/// Angle of departure from a RIS at `ris` with rotation `rot` toward `ue`.
pub fn compute_aod(ue: &Position3, ris: &Position3, rot: &Rotation3) -> Result<Angle2> {
    let delta = ue - ris;
    let dist = delta.norm();
    if !(dist > 1e-12) {
        return Err(Error::Domain("UE coincides with RIS".into()));
    }
    Angle2::from_direction(&rot.to_local(&delta))
}

/// Wavenumber vector `k(ψ)`, rad/m.
pub fn wavenumber(angle: &Angle2, wavelength: f64) -> Vector3<f64> {
    angle.direction() * (2.0 * PI / wavelength)
}

/// RIS steering vector `[a]_n = exp(j kᵀ q_n)`.
pub fn steering_vector(angle: &Angle2, layout: &RisArrayLayout, wavelength: f64) -> DVector<Complex64> {
    let k = wavenumber(angle, wavelength);
    DVector::from_iterator(
        layout.len(),
        layout.positions().iter().map(|q| Complex64::from_polar(1.0, k.dot(q))),
    )
}

/// Unit vector in the global frame pointing from the RIS along `angle`.
pub fn direction_vector(angle: &Angle2, rot: &Rotation3) -> Vector3<f64> {
    rot.to_global(&angle.direction()).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn axis_aligned_aod() {
        let a = compute_aod(&Position3::new(1.0, 0.0, 0.0), &Position3::zeros(), &Rotation3::identity()).unwrap();
        assert_relative_eq!(a.az, 0.0);
        assert_relative_eq!(a.el, PI / 2.0);
    }

    #[test]
    fn boresight_aod_has_zero_azimuth() {
        let a = compute_aod(&Position3::new(0.0, 0.0, 1.0), &Position3::zeros(), &Rotation3::identity()).unwrap();
        assert_eq!(a.az, 0.0);
        assert_eq!(a.el, 0.0);
    }

    #[test]
    fn table_geometry_aod() {
        let a = compute_aod(
            &Position3::new(5.0, 2.0, 0.5),
            &Position3::new(0.0, 10.0, 0.0),
            &Rotation3::about_z(PI),
        )
        .unwrap();
        assert_relative_eq!(a.az, 2.129395642138459, epsilon = 1e-12);
        assert_relative_eq!(a.el, 1.5178459746926782, epsilon = 1e-12);
    }

    #[test]
    fn coincident_points_rejected() {
        let p = Position3::new(1.0, 2.0, 3.0);
        assert!(matches!(compute_aod(&p, &p, &Rotation3::identity()), Err(Error::Domain(_))));
    }

    #[test]
    fn wavenumber_examples() {
        let k = wavenumber(&Angle2 { az: 1.3, el: 0.0 }, 0.01);
        assert_relative_eq!(k, Vector3::new(0.0, 0.0, 200.0 * PI), epsilon = 1e-9);
        let k = wavenumber(&Angle2 { az: 0.0, el: PI / 2.0 }, 0.01);
        assert_relative_eq!(k, Vector3::new(200.0 * PI, 0.0, 0.0), epsilon = 1e-9);
        let k = wavenumber(&Angle2 { az: PI / 4.0, el: PI / 4.0 }, 0.01);
        let expect = Vector3::new(0.5, 0.5, 2f64.sqrt() / 2.0) * 200.0 * PI;
        assert_relative_eq!(k, expect, epsilon = 1e-9);
    }

    #[test]
    fn steering_single_element_and_endfire_pair() {
        let one = RisArrayLayout::from_positions(vec![Vector3::zeros()], 0.005, PanelPlane::Xy).unwrap();
        let a = steering_vector(&Angle2 { az: 0.3, el: 0.7 }, &one, 0.01);
        assert_relative_eq!(a[0].re, 1.0);
        assert_relative_eq!(a[0].im, 0.0);

        let d = 0.005;
        let pair = RisArrayLayout::from_positions(vec![Vector3::zeros(), Vector3::new(d, 0.0, 0.0)], d, PanelPlane::Xz)
            .unwrap();
        let a = steering_vector(&Angle2 { az: 0.0, el: PI / 2.0 }, &pair, 2.0 * d);
        assert_relative_eq!(a[0].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(a[1].re, -1.0, epsilon = 1e-12);
        assert!(a[1].im.abs() < 1e-12);
    }

    #[test]
    fn direction_vector_examples() {
        let ang = Angle2 { az: 0.0, el: PI / 2.0 };
        assert_relative_eq!(direction_vector(&ang, &Rotation3::identity()), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(direction_vector(&ang, &Rotation3::about_z(PI)), -Vector3::x(), epsilon = 1e-12);

        let ue = Position3::new(5.0, 2.0, 0.5);
        let ris = Position3::new(0.0, 10.0, 0.0);
        let rot = Rotation3::about_z(PI);
        let u = direction_vector(&compute_aod(&ue, &ris, &rot).unwrap(), &rot);
        assert!(u.dot(&(ue - ris).normalize()) > 1.0 - 1e-9);
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation3::from_matrix(Matrix3::identity()).is_ok());
        assert!(Rotation3::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0)).is_err());
        assert!(Rotation3::from_matrix(Matrix3::identity() * 1.01).is_err());
    }

    #[test]
    fn uniform_layout_is_row_major_and_centred() {
        let l = RisArrayLayout::uniform(2, 3, 0.5, PanelPlane::Xz).unwrap();
        assert_eq!(l.len(), 6);
        assert_relative_eq!(l.positions()[0], Vector3::new(-0.5, 0.0, -0.25));
        assert_relative_eq!(l.positions()[1], Vector3::new(0.0, 0.0, -0.25));
        assert_relative_eq!(l.positions()[5], Vector3::new(0.5, 0.0, 0.25));
        let centroid: Vector3<f64> = l.positions().iter().sum::<Vector3<f64>>() / 6.0;
        assert!(centroid.norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn aod_round_trip(x in -20.0..20.0f64, y in -20.0..20.0f64, z in -20.0..20.0f64, rz in -PI..PI) {
            let ris = Position3::new(1.0, -2.0, 0.5);
            let ue = Position3::new(x, y, z);
            prop_assume!((ue - ris).norm() > 1e-3);
            let rot = Rotation3::about_z(rz);
            let u = direction_vector(&compute_aod(&ue, &ris, &rot).unwrap(), &rot);
            prop_assert!(u.dot(&(ue - ris).normalize()) >= 1.0 - 1e-9);
        }

        #[test]
        fn aod_scale_invariant(x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64, s in 0.01..100.0f64) {
            let d = Vector3::new(x, y, z);
            prop_assume!(d.norm() > 1e-3);
            let rot = Rotation3::about_z(0.7);
            let a = compute_aod(&d, &Position3::zeros(), &rot).unwrap();
            let b = compute_aod(&(d * s), &Position3::zeros(), &rot).unwrap();
            prop_assert!((a.el - b.el).abs() < 1e-12);
            prop_assert!(wrap_angle(a.az - b.az).abs() < 1e-12);
        }

        #[test]
        fn steering_entries_unit_modulus(az in -PI..PI, el in 0.0..PI) {
            let l = RisArrayLayout::uniform(4, 5, 0.005, PanelPlane::Xz).unwrap();
            let a = steering_vector(&Angle2 { az, el }, &l, 0.01);
            for v in a.iter() {
                prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}
