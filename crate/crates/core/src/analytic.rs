//! Closed-form optimal antibunching parameters for the driven three-site chain
//! and the weak-drive amplitude solver behind them.
//!
//! The weak-drive ansatz truncates the steady state to at most two bosons,
//! `|psi> = C000|000> + sum C_abc |abc>`, with the drive on site 0 (the `C`
//! site), site 1 the central `B` site and site 2 the `A` site.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use num_complex::Complex64;
use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalyticError {
    #[error("U must be positive and finite, got {0}")]
    BadInteraction(f64),
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("negative radicand {0} in the optimal hopping")]
    NegativeRadicand(f64),
    #[error("singular {0} sector (resonant parameters)")]
    Singular(&'static str),
    #[error("single-boson amplitude on site {0} vanishes")]
    VanishingAmplitude(usize),
}

fn check(u: f64, gamma: f64) -> Result<(), AnalyticError> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(AnalyticError::BadInteraction(u));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(AnalyticError::BadGamma(gamma));
    }
    Ok(())
}

/// Negative root of the imaginary-part condition, `(U - sqrt(U^2 + 12 gamma^2)) / 12`.
pub fn optimal_detuning(u: f64, gamma: f64) -> Result<f64, AnalyticError> {
    check(u, gamma)?;
    // rationalised form, avoids cancellation for large U
    Ok(-gamma * gamma / (u + (u * u + 12.0 * gamma * gamma).sqrt()))
}

pub fn optimal_hopping(u: f64, gamma: f64) -> Result<f64, AnalyticError> {
    let d = optimal_detuning(u, gamma)?;
    let g2 = gamma * gamma;
    let rad = g2 / 4.0 - d * d + 4.0 * d * d * d / u - 3.0 * g2 * d / u;
    if rad < 0.0 {
        return Err(AnalyticError::NegativeRadicand(rad));
    }
    Ok(rad.sqrt())
}

/// Real and imaginary parts of `4 z^3 - U z^2 - J^2 U` with `z = delta + i gamma / 2`.
pub fn optimality_residuals(delta: f64, j: f64, u: f64, gamma: f64) -> (f64, f64) {
    let z = Complex64::new(delta, gamma / 2.0);
    let r = 4.0 * z * z * z - u * z * z - j * j * u;
    (r.re, r.im)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalParams {
    pub u: f64,
    pub gamma: f64,
    pub delta_opt: f64,
    pub j_opt: f64,
    pub residual_re: f64,
    pub residual_im: f64,
}

pub fn optimal_params(u: f64, gamma: f64) -> Result<OptimalParams, AnalyticError> {
    let delta_opt = optimal_detuning(u, gamma)?;
    let j_opt = optimal_hopping(u, gamma)?;
    let (residual_re, residual_im) = optimality_residuals(delta_opt, j_opt, u, gamma);
    Ok(OptimalParams { u, gamma, delta_opt, j_opt, residual_re, residual_im })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakDriveAmplitudes {
    pub delta: f64,
    pub u: f64,
    pub gamma: f64,
    pub j: f64,
    pub f: f64,
    pub c000: Complex64,
    pub c100: Complex64,
    pub c010: Complex64,
    pub c001: Complex64,
    pub c200: Complex64,
    pub c020: Complex64,
    pub c002: Complex64,
    pub c110: Complex64,
    pub c101: Complex64,
    pub c011: Complex64,
}

impl WeakDriveAmplitudes {
    pub fn single(&self) -> [Complex64; 3] {
        [self.c100, self.c010, self.c001]
    }

    pub fn double(&self) -> [Complex64; 3] {
        [self.c200, self.c020, self.c002]
    }

    /// Residuals of the nine steady-state amplitude equations.
    pub fn equation_residuals(&self) -> [Complex64; 9] {
        let (d, u, g, j, f) = (self.delta, self.u, self.gamma, self.j, self.f);
        let s = 2f64.sqrt();
        let i = Complex64::i();
        let z = -d - i * g / 2.0;
        let w = 2.0 * (-d + u / 2.0 - i * g / 2.0);
        let v = 2.0 * z;
        [
            z * self.c100 + j * self.c010 + f * self.c000,
            z * self.c010 + j * (self.c100 + self.c001),
            z * self.c001 + j * self.c010,
            w * self.c200 + s * j * self.c110 + s * f * self.c100,
            w * self.c020 + s * j * (self.c110 + self.c011),
            w * self.c002 + s * j * self.c011,
            v * self.c110 + j * self.c101 + s * j * (self.c200 + self.c020) + f * self.c010,
            v * self.c101 + j * (self.c110 + self.c011) + f * self.c001,
            v * self.c011 + j * self.c101 + s * j * (self.c020 + self.c002),
        ]
    }
}

/// Solve the one- and two-boson amplitude equations with `C000 = 1`.
pub fn solve_weak_drive_3site(
    delta: f64,
    u: f64,
    gamma: f64,
    j: f64,
    f: f64,
) -> Result<WeakDriveAmplitudes, AnalyticError> {
    let c = |x: f64| Complex64::new(x, 0.0);
    let zero = c(0.0);
    let i = Complex64::i();
    let z = -delta - i * gamma / 2.0;
    let jc = c(j);
    let one = Matrix3::new(z, jc, zero, jc, z, jc, zero, jc, z);
    let rhs1 = Vector3::new(c(-f), zero, zero);
    let c1 = one.lu().solve(&rhs1).ok_or(AnalyticError::Singular("one-boson"))?;

    let s = 2f64.sqrt();
    let w = 2.0 * (-delta + u / 2.0 - i * gamma / 2.0);
    let v = 2.0 * z;
    let sj = c(s * j);
    // order: 200, 020, 002, 110, 101, 011
    #[rustfmt::skip]
    let two = Matrix6::from_row_slice(&[
        w,    zero, zero, sj,   zero, zero,
        zero, w,    zero, sj,   zero, sj,
        zero, zero, w,    zero, zero, sj,
        sj,   sj,   zero, v,    jc,   zero,
        zero, zero, zero, jc,   v,    jc,
        zero, sj,   sj,   zero, jc,   v,
    ]);
    let rhs2 = Vector6::new(-s * f * c1[0], zero, zero, -f * c1[1], -f * c1[2], zero);
    let c2 = two.lu().solve(&rhs2).ok_or(AnalyticError::Singular("two-boson"))?;

    Ok(WeakDriveAmplitudes {
        delta,
        u,
        gamma,
        j,
        f,
        c000: c(1.0),
        c100: c1[0],
        c010: c1[1],
        c001: c1[2],
        c200: c2[0],
        c020: c2[1],
        c002: c2[2],
        c110: c2[3],
        c101: c2[4],
        c011: c2[5],
    })
}

/// Leading-order `g2(0) = 2 |C_double|^2 / |C_single|^4` on each of the three sites.
pub fn weak_drive_g2(amp: &WeakDriveAmplitudes) -> Result<[f64; 3], AnalyticError> {
    let one = amp.single();
    let two = amp.double();
    let mut out = [0.0; 3];
    for k in 0..3 {
        let p = one[k].norm_sqr();
        if p == 0.0 {
            return Err(AnalyticError::VanishingAmplitude(k));
        }
        out[k] = 2.0 * two[k].norm_sqr() / (p * p);
    }
    Ok(out)
}
