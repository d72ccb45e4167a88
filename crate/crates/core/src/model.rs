//! Physical parameters and coherent drive schemes.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::lattice::{LatticeGraph, SiteId, Sublattice};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("U must be non-negative and finite, got {0}")]
    BadInteraction(f64),
    #[error("non-finite detuning {0}")]
    BadDetuning(f64),
    #[error("site {0} is not part of the lattice")]
    UnknownSite(usize),
    #[error("background drive target must be a C site, got {0}")]
    TargetNotC(String),
    #[error("two-site drive needs distinct targets, got {0} twice")]
    DuplicateTarget(usize),
}

/// On-site detuning per sublattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublatticeDetuning {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SublatticeDetuning {
    pub fn uniform(delta: f64) -> Self {
        SublatticeDetuning { a: delta, b: delta, c: delta }
    }

    pub fn get(&self, s: Sublattice) -> f64 {
        match s {
            Sublattice::A => self.a,
            Sublattice::B => self.b,
            Sublattice::C => self.c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub u: f64,
    pub gamma: f64,
    pub detuning: SublatticeDetuning,
    /// Per-site overrides, keyed by site index. Take precedence over `detuning`.
    #[serde(default)]
    pub site_detuning: BTreeMap<usize, f64>,
}

impl ModelParams {
    pub fn new(u: f64, gamma: f64, detuning: SublatticeDetuning) -> Result<Self, ModelError> {
        let p = ModelParams { u, gamma, detuning, site_detuning: BTreeMap::new() };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(delta: f64, u: f64, gamma: f64) -> Result<Self, ModelError> {
        Self::new(u, gamma, SublatticeDetuning::uniform(delta))
    }

    pub fn with_site_detuning(mut self, site: SiteId, delta: f64) -> Self {
        self.site_detuning.insert(site.0, delta);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ModelError::BadGamma(self.gamma));
        }
        if !(self.u >= 0.0 && self.u.is_finite()) {
            return Err(ModelError::BadInteraction(self.u));
        }
        let d = self.detuning;
        for v in [d.a, d.b, d.c].into_iter().chain(self.site_detuning.values().copied()) {
            if !v.is_finite() {
                return Err(ModelError::BadDetuning(v));
            }
        }
        Ok(())
    }

    pub fn detuning_at(&self, lattice: &LatticeGraph, site: SiteId) -> f64 {
        match self.site_detuning.get(&site.0) {
            Some(&d) => d,
            None => self.detuning.get(lattice.sublattice(site)),
        }
    }

    /// Detuning of every site, in site order.
    pub fn site_detunings(&self, lattice: &LatticeGraph) -> Vec<f64> {
        (0..lattice.n_sites()).map(|i| self.detuning_at(lattice, SiteId(i))).collect()
    }

    /// Same physics with every energy divided by `gamma`, so that `gamma == 1`.
    pub fn in_gamma_units(&self) -> ModelParams {
        let g = self.gamma;
        ModelParams {
            u: self.u / g,
            gamma: 1.0,
            detuning: SublatticeDetuning { a: self.detuning.a / g, b: self.detuning.b / g, c: self.detuning.c / g },
            site_detuning: self.site_detuning.iter().map(|(&k, &v)| (k, v / g)).collect(),
        }
    }
}

/// Coherent drive amplitude `F_j` for every site.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveScheme {
    amplitudes: Vec<Complex64>,
}

impl DriveScheme {
    pub fn zero(lattice: &LatticeGraph) -> Self {
        DriveScheme { amplitudes: vec![Complex64::new(0.0, 0.0); lattice.n_sites()] }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Self {
        DriveScheme { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, site: SiteId) -> Complex64 {
        self.amplitudes.get(site.0).copied().unwrap_or_default()
    }

    /// Indices of sites with a nonzero drive.
    pub fn support(&self) -> Vec<usize> {
        (0..self.amplitudes.len()).filter(|&i| self.amplitudes[i] != Complex64::new(0.0, 0.0)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.support().is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DriveScheme { amplitudes: self.amplitudes.iter().map(|f| f * factor).collect() }
    }
}

fn check_site(lattice: &LatticeGraph, site: SiteId) -> Result<(), ModelError> {
    if lattice.contains(site) {
        Ok(())
    } else {
        Err(ModelError::UnknownSite(site.0))
    }
}

pub fn drive_single(lattice: &LatticeGraph, target: SiteId, f: Complex64) -> Result<DriveScheme, ModelError> {
    check_site(lattice, target)?;
    let mut d = DriveScheme::zero(lattice);
    d.amplitudes[target.0] = f;
    Ok(d)
}

/// `f` on `target`, `f_bg` on every other C site.
pub fn drive_with_background(
    lattice: &LatticeGraph,
    target: SiteId,
    f: Complex64,
    f_bg: Complex64,
) -> Result<DriveScheme, ModelError> {
    check_site(lattice, target)?;
    let site = &lattice.sites()[target.0];
    if site.sublattice != Sublattice::C {
        return Err(ModelError::TargetNotC(site.label()));
    }
    let mut d = DriveScheme::zero(lattice);
    for s in lattice.sites() {
        if s.sublattice == Sublattice::C {
            d.amplitudes[s.id.0] = if s.id == target { f } else { f_bg };
        }
    }
    Ok(d)
}

pub fn drive_two_site(lattice: &LatticeGraph, targets: [SiteId; 2], f: Complex64) -> Result<DriveScheme, ModelError> {
    check_site(lattice, targets[0])?;
    check_site(lattice, targets[1])?;
    if targets[0] == targets[1] {
        return Err(ModelError::DuplicateTarget(targets[0].0));
    }
    let mut d = DriveScheme::zero(lattice);
    d.amplitudes[targets[0].0] = f;
    d.amplitudes[targets[1].0] = f;
    Ok(d)
}
