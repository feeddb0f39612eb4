//! Coarse angle-of-departure search over the visible region of a RIS.
//!
//! For a uniform grid layout the correlation `ỹᴴ x̄(θ)` is a 2-D spatial
//! Fourier transform of `V_n = Σ_k ỹ*_k W̄[n, k]`, so one zero-padded FFT
//! evaluates it on a dense grid of in-plane direction cosines. The
//! normalizer `‖x̄(θ)‖²` does not depend on the data and is tabulated once per
//! schedule. Other layouts fall back to direct evaluation on the same
//! direction-cosine grid.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geometry::{Angle2, RisArrayLayout};
use crate::model::SignalModel;
use crate::CVector;

/// One candidate bin of the search grid.
#[derive(Debug, Clone, Copy)]
struct Bin {
    /// Flat index into the FFT buffer (or into `directs`).
    index: usize,
    angle: Angle2,
    /// `‖x̄(θ)‖²` at this bin.
    norm2: f64,
}

#[derive(Clone)]
enum Backend {
    Fft { size: usize, fft: Arc<dyn Fft<f64>>, rows: usize, cols: usize },
    Direct { responses: Vec<CVector> },
}

/// Precomputed search tables for one RIS.
#[derive(Clone)]
pub struct AodSearch {
    ris: usize,
    bins: Vec<Bin>,
    backend: Backend,
}

impl AodSearch {
    /// Tables for RIS `r` with `points` bins per axis (rounded up to a power
    /// of two and to at least the panel size for uniform layouts).
    pub fn new(model: &SignalModel, r: usize, points: usize) -> Self {
        let layout = model.layout(r);
        let lambda = model.wavelength();
        if layout.is_uniform() {
            let size = points.max(layout.rows()).max(layout.cols()).max(2).next_power_of_two();
            let fft = FftPlanner::new().plan_fft_inverse(size);
            let wbar = model.wbar(r);
            let mut den = vec![0.0; size * size];
            let mut buf = vec![Complex64::new(0.0, 0.0); size * size];
            for k in 0..wbar.ncols() {
                fill(&mut buf, size, layout, |n| wbar[(n, k)]);
                fft2(&mut buf, size, fft.as_ref());
                for (d, v) in den.iter_mut().zip(&buf) {
                    *d += v.norm_sqr();
                }
            }
            let scale = lambda / (layout.spacing() * size as f64);
            let plane = layout.plane();
            let mut bins = Vec::new();
            for i2 in 0..size {
                for i1 in 0..size {
                    let c1 = signed(i1, size) as f64 * scale;
                    let c2 = signed(i2, size) as f64 * scale;
                    let Some(dir) = plane.direction_from_cosines(c1, c2) else { continue };
                    if 1.0 - c1 * c1 - c2 * c2 < 1e-9 {
                        continue;
                    }
                    let index = i2 * size + i1;
                    if den[index] <= 0.0 {
                        continue;
                    }
                    let angle = Angle2::from_direction(&dir).expect("unit direction");
                    bins.push(Bin { index, angle, norm2: den[index] });
                }
            }
            Self { ris: r, bins, backend: Backend::Fft { size, fft, rows: layout.rows(), cols: layout.cols() } }
        } else {
            let plane = layout.plane();
            let mut bins = Vec::new();
            let mut responses = Vec::new();
            for i2 in 0..points {
                for i1 in 0..points {
                    let c1 = -1.0 + 2.0 * (i1 as f64 + 0.5) / points as f64;
                    let c2 = -1.0 + 2.0 * (i2 as f64 + 0.5) / points as f64;
                    let Some(dir) = plane.direction_from_cosines(c1, c2) else { continue };
                    let angle = Angle2::from_direction(&dir).expect("unit direction");
                    let x = model.xbar(r, &angle);
                    let norm2 = x.norm_squared();
                    if norm2 > 0.0 {
                        bins.push(Bin { index: responses.len(), angle, norm2 });
                        responses.push(x);
                    }
                }
            }
            Self { ris: r, bins, backend: Backend::Direct { responses } }
        }
    }

    pub fn ris(&self) -> usize {
        self.ris
    }

    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    /// Grid argmax of `|ỹᴴ x̄(θ)|² / ‖x̄(θ)‖²`. Ties go to the lowest bin.
    /// Returns `None` when the objective is zero everywhere.
    pub fn coarse(&self, model: &SignalModel, ytilde: &CVector) -> Option<(Angle2, f64)> {
        let corr: Vec<f64> = match &self.backend {
            Backend::Fft { size, fft, .. } => {
                let wbar = model.wbar(self.ris);
                let v = wbar * ytilde.map(|c| c.conj());
                let layout = model.layout(self.ris);
                let mut buf = vec![Complex64::new(0.0, 0.0); size * size];
                fill(&mut buf, *size, layout, |n| v[n]);
                fft2(&mut buf, *size, fft.as_ref());
                self.bins.iter().map(|b| buf[b.index].norm_sqr() / b.norm2).collect()
            }
            Backend::Direct { responses } => self
                .bins
                .iter()
                .map(|b| responses[b.index].dotc(ytilde).norm_sqr() / b.norm2)
                .collect(),
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, &c) in corr.iter().enumerate() {
            if best.map_or(true, |(_, v)| c > v) {
                best = Some((i, c));
            }
        }
        let (i, v) = best?;
        (v > 0.0).then(|| (self.bins[i].angle, v))
    }

    /// Panel shape used by the FFT backend.
    pub fn fft_shape(&self) -> Option<(usize, usize, usize)> {
        match &self.backend {
            Backend::Fft { size, rows, cols, .. } => Some((*size, *rows, *cols)),
            Backend::Direct { .. } => None,
        }
    }
}

/// `|ỹᴴ x̄(θ)|² / ‖x̄(θ)‖²`, or 0 when `x̄` vanishes.
pub fn aod_objective(model: &SignalModel, r: usize, ytilde: &CVector, theta: &Angle2) -> f64 {
    let x = model.xbar(r, theta);
    let n2 = x.norm_squared();
    if n2 > 0.0 {
        x.dotc(ytilde).norm_sqr() / n2
    } else {
        0.0
    }
}

fn signed(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Scatters element values onto the padded grid: element `(row, col)` goes to
/// buffer cell `row * size + col`.
fn fill(buf: &mut [Complex64], size: usize, layout: &RisArrayLayout, val: impl Fn(usize) -> Complex64) {
    buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
    let cols = layout.cols();
    for n in 0..layout.len() {
        let (row, col) = (n / cols, n % cols);
        buf[row * size + col] = val(n);
    }
}

fn fft2(buf: &mut [Complex64], size: usize, fft: &dyn Fft<f64>) {
    fft.process(buf);
    let mut col = vec![Complex64::new(0.0, 0.0); size];
    for c in 0..size {
        for r in 0..size {
            col[r] = buf[r * size + c];
        }
        fft.process(&mut col);
        for r in 0..size {
            buf[r * size + c] = col[r];
        }
    }
}
