//! Single-qubit Pauli-4 measurement frame.
//!
//! The four effects are `M_0 = |0⟩⟨0|/3`, `M_1 = |+⟩⟨+|/3`,
//! `M_2 = |r⟩⟨r|/3` with `|r⟩ = (|0⟩ + i|1⟩)/√2`, and the remainder
//! `M_3 = I − M_0 − M_1 − M_2`. The overlap matrix `T[a][b] = tr(M_a M_b)`
//! is invertible, and the dual frame `Θ_a = Σ_b T⁻¹[a][b] M_b` satisfies
//! `ρ = Σ_a tr(ρ M_a) Θ_a` for every single-qubit operator `ρ`.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{QstError, Result};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Dense 2×2 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[C0, C0], [C0, C0]]);
    pub const IDENTITY: Mat2 = Mat2([[C1, C0], [C0, C1]]);

    /// `|v⟩⟨v|`.
    pub fn projector(v: [Complex64; 2]) -> Mat2 {
        let mut m = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = v[i] * v[j].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|x| *x *= s);
        m
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn adjoint(&self) -> Mat2 {
        let a = &self.0;
        Mat2([[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]])
    }

    pub fn max_abs_diff(&self, other: &Mat2) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// Eigenvalues (ascending) of a Hermitian matrix, from trace and determinant.
    pub fn hermitian_eigenvalues(&self) -> [f64; 2] {
        let a = self.0[0][0].re;
        let d = self.0[1][1].re;
        let b = self.0[0][1];
        let half_gap = (((a - d) * 0.5).powi(2) + b.norm_sqr()).sqrt();
        let mid = 0.5 * (a + d);
        [mid - half_gap, mid + half_gap]
    }

    /// `⟨u|M|v⟩`.
    pub fn sandwich(&self, u: [Complex64; 2], v: [Complex64; 2]) -> Complex64 {
        let mv = [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ];
        u[0].conj() * mv[0] + u[1].conj() * mv[1]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let mut m = self;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] += rhs.0[i][j];
            }
        }
        m
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        self + rhs.scale(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let mut m = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = self.0[i][0] * rhs.0[0][j] + self.0[i][1] * rhs.0[1][j];
            }
        }
        m
    }
}

/// A four-outcome single-qubit frame with its overlap matrix and dual.
#[derive(Clone, Debug)]
pub struct PovmFrame {
    pub effects: [Mat2; 4],
    pub overlap: [[f64; 4]; 4],
    pub dual: [Mat2; 4],
}

impl PovmFrame {
    /// Builds a frame from arbitrary effects, computing overlap and dual.
    pub fn from_effects(effects: [Mat2; 4]) -> Result<PovmFrame> {
        let overlap = overlap_matrix(&effects);
        let dual = dual_frame(&effects, &overlap)?;
        Ok(PovmFrame { effects, overlap, dual })
    }

    /// `[tr(ρ M_0), …, tr(ρ M_3)]`, real parts.
    pub fn probabilities(&self, rho: &Mat2) -> [f64; 4] {
        std::array::from_fn(|a| (*rho * self.effects[a]).trace().re)
    }

    /// `Σ_a p_a Θ_a`.
    pub fn reconstruct(&self, probs: &[f64; 4]) -> Mat2 {
        probs
            .iter()
            .zip(&self.dual)
            .fold(Mat2::ZERO, |acc, (&p, theta)| acc + theta.scale(p))
    }

    /// Max entrywise deviation of `Σ_a tr(ρ M_a) Θ_a` from `ρ`.
    pub fn reconstruction_residual(&self, rho: &Mat2) -> f64 {
        let probs: [f64; 4] = std::array::from_fn(|a| (*rho * self.effects[a]).trace().re);
        self.reconstruct(&probs).max_abs_diff(rho)
    }
}

/// The Pauli-4 frame.
pub fn pauli4_povm() -> PovmFrame {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let zero = [C1, C0];
    let plus = [Complex64::new(s, 0.0), Complex64::new(s, 0.0)];
    let right = [Complex64::new(s, 0.0), Complex64::new(0.0, s)];
    let m0 = Mat2::projector(zero).scale(1.0 / 3.0);
    let m1 = Mat2::projector(plus).scale(1.0 / 3.0);
    let m2 = Mat2::projector(right).scale(1.0 / 3.0);
    let m3 = Mat2::IDENTITY - m0 - m1 - m2;
    PovmFrame::from_effects([m0, m1, m2, m3]).expect("Pauli-4 frame is informationally complete")
}

pub fn overlap_matrix(effects: &[Mat2; 4]) -> [[f64; 4]; 4] {
    std::array::from_fn(|a| std::array::from_fn(|b| (effects[a] * effects[b]).trace().re))
}

/// Inverse and determinant of a 4×4 matrix by Gauss-Jordan elimination with partial pivoting.
fn invert4(m: &[[f64; 4]; 4]) -> ([[f64; 4]; 4], f64) {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut det = 1.0;
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return (inv, 0.0);
        }
        if pivot != col {
            a.swap(pivot, col);
            inv.swap(pivot, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        for j in 0..4 {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..4 {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..4 {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    (inv, det)
}

/// Dual frame `Θ_a = Σ_b T⁻¹[a][b] M_b`.
pub fn dual_frame(effects: &[Mat2; 4], overlap: &[[f64; 4]; 4]) -> Result<[Mat2; 4]> {
    let (inv, det) = invert4(overlap);
    if det.abs() < 1e-14 {
        return Err(QstError::SingularOverlap { det });
    }
    Ok(std::array::from_fn(|a| {
        (0..4).fold(Mat2::ZERO, |acc, b| acc + effects[b].scale(inv[a][b]))
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameCheck {
    pub name: &'static str,
    pub passed: bool,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<FrameCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&FrameCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Largest residual among the checks measured as deviations.
    pub fn max_residual(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.name != "psd")
            .map(|c| c.residual)
            .fold(0.0, f64::max)
    }
}

/// Fixed probe set of Hermitian trace-one matrices.
fn probe_states() -> Vec<Mat2> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re, im| Complex64::new(re, im);
    let pure = [
        [c(1.0, 0.0), c(0.0, 0.0)],
        [c(0.0, 0.0), c(1.0, 0.0)],
        [c(s, 0.0), c(s, 0.0)],
        [c(s, 0.0), c(-s, 0.0)],
        [c(s, 0.0), c(0.0, s)],
        [c(0.6, 0.0), c(0.48, -0.64)],
    ];
    let mut probes: Vec<Mat2> = pure.iter().map(|&v| Mat2::projector(v)).collect();
    probes.push(Mat2::IDENTITY.scale(0.5));
    // Trace-one but indefinite: the identity holds on all Hermitian operators.
    probes.push(Mat2([[c(1.3, 0.0), c(0.2, 0.7)], [c(0.2, -0.7), c(-0.3, 0.0)]]));
    probes
}

/// Runs the frame checks; failures are reported, never raised.
pub fn validate_frame(frame: &PovmFrame) -> ValidationReport {
    let mut checks = Vec::new();

    let sum = frame.effects.iter().fold(Mat2::ZERO, |acc, m| acc + *m);
    let completeness = sum.max_abs_diff(&Mat2::IDENTITY);
    checks.push(FrameCheck { name: "completeness", passed: completeness <= 1e-12, residual: completeness });

    let hermitian = frame.effects.iter().map(Mat2::hermiticity_residual).fold(0.0, f64::max);
    checks.push(FrameCheck { name: "hermitian", passed: hermitian <= 1e-12, residual: hermitian });

    let min_eig = frame
        .effects
        .iter()
        .map(|m| m.hermitian_eigenvalues()[0])
        .fold(f64::INFINITY, f64::min);
    checks.push(FrameCheck { name: "psd", passed: min_eig >= -1e-12, residual: min_eig });

    let t = &frame.overlap;
    let symmetry = (0..4)
        .flat_map(|a| (0..4).map(move |b| (t[a][b] - t[b][a]).abs()))
        .fold(0.0, f64::max);
    checks.push(FrameCheck { name: "overlap_symmetry", passed: symmetry <= 1e-12, residual: symmetry });

    let reconstruction = probe_states()
        .iter()
        .map(|rho| frame.reconstruction_residual(rho))
        .fold(0.0, f64::max);
    checks.push(FrameCheck {
        name: "reconstruction",
        passed: reconstruction <= 1e-10,
        residual: reconstruction,
    });

    ValidationReport { checks }
}
