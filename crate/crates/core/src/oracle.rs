//! Exact Lindblad steady states in a truncated Fock basis.
//!
//! The master equation is written as
//! `L(rho) = -i (Heff rho - rho Heff^dag) + sum_j a_j rho a_j^dag` with
//! `Heff = H - i gamma/2 sum_j n_j`. Small problems are solved directly by LU
//! on the dense superoperator (one row swapped for the trace condition);
//! larger ones are propagated with RK4 until the residual `|L(rho)|` is small.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::lattice::LatticeGraph;
use crate::model::{DriveScheme, ModelParams};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("density matrix with {entries} entries exceeds the ceiling of {ceiling}")]
    TooLarge { entries: f64, ceiling: f64 },
    #[error("truncation too tight: top-level population {population:.3e} exceeds 1e-6, raise the cutoff")]
    RaiseCutoff { population: f64 },
    #[error("steady state did not converge: residual {0:.3e}")]
    NoConvergence(f64),
    #[error("singular Liouvillian")]
    Singular,
    #[error("drive has {got} amplitudes but the lattice has {expected} sites")]
    DriveSize { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("delay grid must be non-negative and increasing")]
    BadTaus,
}

const TOP_LEVEL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleConfig {
    /// Largest occupation of any single site.
    pub cutoff: usize,
    /// Optional cap on the total boson number.
    pub total_cap: Option<usize>,
    /// Refuse density matrices with more entries than this.
    pub max_entries: f64,
    /// Largest Liouville dimension (`dim^2`) handled by dense LU.
    pub dense_limit: usize,
    /// Stop propagation once `max |L(rho)|` drops below this.
    pub tolerance: f64,
    /// Give up after this much propagation time.
    pub max_time: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cutoff: 10,
            total_cap: Some(10),
            max_entries: 1e8,
            dense_limit: 1600,
            tolerance: 1e-12,
            max_time: 1e4,
        }
    }
}

/// Occupation-number basis with a per-site cutoff and an optional total cap.
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_sites: usize,
    cutoff: usize,
    total_cap: Option<usize>,
    states: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
}

impl FockBasis {
    pub fn new(n_sites: usize, cutoff: usize, total_cap: Option<usize>) -> Self {
        let cap = total_cap.unwrap_or(usize::MAX);
        let mut states = Vec::new();
        let mut cur = vec![0u8; n_sites];
        loop {
            if cur.iter().map(|&x| x as usize).sum::<usize>() <= cap {
                states.push(cur.clone());
            }
            // odometer increment, last site fastest
            let mut k = n_sites;
            loop {
                if k == 0 {
                    let index = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
                    return FockBasis { n_sites, cutoff, total_cap, states, index };
                }
                k -= 1;
                if (cur[k] as usize) < cutoff {
                    cur[k] += 1;
                    break;
                }
                cur[k] = 0;
            }
        }
    }

    pub fn dimension(&self) -> usize {
        self.states.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.states[i]
    }

    pub fn find(&self, occ: &[u8]) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// Whether state `i` sits on the truncation boundary.
    pub fn is_top(&self, i: usize) -> bool {
        let s = &self.states[i];
        s.iter().any(|&x| x as usize == self.cutoff)
            || self.total_cap.is_some_and(|c| s.iter().map(|&x| x as usize).sum::<usize>() == c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateResult {
    pub n: Vec<f64>,
    pub g2: Vec<Option<f64>>,
    pub trace_residual: f64,
    pub hermiticity_residual: f64,
    pub liouvillian_residual: f64,
    pub top_population: f64,
    pub cutoff: usize,
    pub total_cap: Option<usize>,
    pub dimension: usize,
    pub method: &'static str,
}

/// A solved steady state together with its density matrix (row-major).
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub result: SteadyStateResult,
    pub rho: Vec<Complex64>,
}

/// Superoperator for one (lattice, model, drive) in a fixed basis.
pub struct Oracle {
    basis: FockBasis,
    cfg: OracleConfig,
    // Heff in CSR form
    h_off: Vec<usize>,
    h_col: Vec<usize>,
    h_val: Vec<Complex64>,
    // per site: (state s, state s - e_j, sqrt n_j(s))
    lower: Vec<Vec<(usize, usize, f64)>>,
}

impl Oracle {
    pub fn new(
        lattice: &LatticeGraph,
        model: &ModelParams,
        drive: &DriveScheme,
        cfg: OracleConfig,
    ) -> Result<Self, OracleError> {
        let ns = lattice.n_sites();
        if drive.amplitudes().len() != ns {
            return Err(OracleError::DriveSize { expected: ns, got: drive.amplitudes().len() });
        }
        model.validate().map_err(|e| OracleError::Model(e.to_string()))?;
        let cap = cfg.total_cap.map(|c| c.min(cfg.cutoff * ns));
        let est = estimate_dimension(ns, cfg.cutoff, cap);
        if est * est > cfg.max_entries {
            return Err(OracleError::TooLarge { entries: est * est, ceiling: cfg.max_entries });
        }
        let basis = FockBasis::new(ns, cfg.cutoff, cap);
        let dim = basis.dimension();
        let det = model.site_detunings(lattice);
        let f = drive.amplitudes();
        let mut rows: Vec<HashMap<usize, Complex64>> = vec![HashMap::new(); dim];
        let mut add = |r: usize, c: usize, v: Complex64| *rows[r].entry(c).or_default() += v;
        let mut occ = vec![0u8; ns];
        for s in 0..dim {
            let st = basis.state(s).to_vec();
            let mut diag = Complex64::new(0.0, 0.0);
            for j in 0..ns {
                let n = st[j] as f64;
                diag += -det[j] * n + 0.5 * model.u * n * (n - 1.0) - Complex64::new(0.0, 0.5 * model.gamma * n);
            }
            add(s, s, diag);
            for j in 0..ns {
                if f[j] == Complex64::new(0.0, 0.0) {
                    continue;
                }
                occ.copy_from_slice(&st);
                occ[j] += 1;
                if let Some(t) = basis.find(&occ) {
                    add(t, s, f[j] * (occ[j] as f64).sqrt());
                }
                if st[j] > 0 {
                    occ.copy_from_slice(&st);
                    occ[j] -= 1;
                    let t = basis.find(&occ).expect("lowering stays in the basis");
                    add(t, s, f[j].conj() * (st[j] as f64).sqrt());
                }
            }
            for e in lattice.edges() {
                let (a, b, jj) = (e.a.0, e.b.0, e.hopping);
                // -J a_a^dag a_b and -J* a_b^dag a_a
                for (to, from, amp) in [(a, b, jj), (b, a, jj.conj())] {
                    if st[from] == 0 {
                        continue;
                    }
                    occ.copy_from_slice(&st);
                    occ[from] -= 1;
                    occ[to] += 1;
                    if let Some(t) = basis.find(&occ) {
                        add(t, s, -amp * ((st[from] as f64) * (occ[to] as f64)).sqrt());
                    }
                }
            }
        }
        let mut h_off = vec![0];
        let mut h_col = Vec::new();
        let mut h_val = Vec::new();
        for row in rows {
            let mut entries: Vec<_> = row.into_iter().filter(|(_, v)| *v != Complex64::new(0.0, 0.0)).collect();
            entries.sort_by_key(|&(c, _)| c);
            for (c, v) in entries {
                h_col.push(c);
                h_val.push(v);
            }
            h_off.push(h_col.len());
        }
        let lower = (0..ns)
            .map(|j| {
                (0..dim)
                    .filter(|&s| basis.state(s)[j] > 0)
                    .map(|s| {
                        let mut o = basis.state(s).to_vec();
                        o[j] -= 1;
                        (s, basis.find(&o).expect("lowering stays in the basis"), (basis.state(s)[j] as f64).sqrt())
                    })
                    .collect()
            })
            .collect();
        Ok(Oracle { basis, cfg, h_off, h_col, h_val, lower })
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    fn dim(&self) -> usize {
        self.basis.dimension()
    }

    /// `Heff * rho` for row-major `rho`.
    fn heff_times(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let d = self.dim();
        out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for r in 0..d {
            let dst = &mut out[r * d..(r + 1) * d];
            for e in self.h_off[r]..self.h_off[r + 1] {
                let (c, v) = (self.h_col[e], self.h_val[e]);
                let src = &rho[c * d..(c + 1) * d];
                for (o, x) in dst.iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
    }

    fn add_jumps(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let d = self.dim();
        for low in &self.lower {
            for &(s, t, qs) in low {
                for &(s2, t2, q2) in low {
                    out[t * d + t2] += rho[s * d + s2] * (qs * q2);
                }
            }
        }
    }

    /// `L(rho)` for Hermitian `rho`.
    pub fn apply_hermitian(&self, rho: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        let d = self.dim();
        self.heff_times(rho, scratch);
        let mi = Complex64::new(0.0, -1.0);
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = mi * (scratch[r * d + c] - scratch[c * d + r].conj());
            }
        }
        self.add_jumps(rho, out);
    }

    /// `L(rho)` for arbitrary `rho`.
    pub fn apply(&self, rho: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        let d = self.dim();
        self.heff_times(rho, scratch);
        let mi = Complex64::new(0.0, -1.0);
        for (o, x) in out.iter_mut().zip(scratch.iter()) {
            *o = mi * x;
        }
        // + i rho Heff^dag: (rho Heff^dag)[r][c] = sum_k rho[r][k] conj(Heff[c][k])
        for c in 0..d {
            for e in self.h_off[c]..self.h_off[c + 1] {
                let (k, v) = (self.h_col[e], self.h_val[e].conj());
                for r in 0..d {
                    out[r * d + c] += Complex64::new(0.0, 1.0) * rho[r * d + k] * v;
                }
            }
        }
        self.add_jumps(rho, out);
    }

    fn rk4_step(&self, rho: &mut [Complex64], h: f64, buf: &mut [Vec<Complex64>; 6]) {
        let [k1, k2, k3, k4, tmp, scratch] = buf;
        self.apply_hermitian(rho, k1, scratch);
        for i in 0..rho.len() {
            tmp[i] = rho[i] + k1[i] * (0.5 * h);
        }
        self.apply_hermitian(tmp, k2, scratch);
        for i in 0..rho.len() {
            tmp[i] = rho[i] + k2[i] * (0.5 * h);
        }
        self.apply_hermitian(tmp, k3, scratch);
        for i in 0..rho.len() {
            tmp[i] = rho[i] + k3[i] * h;
        }
        self.apply_hermitian(tmp, k4, scratch);
        for i in 0..rho.len() {
            rho[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
        }
    }

    /// Stable RK4 step for the spectral radius bound of `L`.
    fn rk4_dt(&self) -> f64 {
        let d = self.dim();
        let mut norm: f64 = 0.0;
        for r in 0..d {
            let row: f64 = (self.h_off[r]..self.h_off[r + 1]).map(|e| self.h_val[e].norm()).sum();
            norm = norm.max(row);
        }
        let jump: f64 = self.lower.iter().map(|l| l.iter().map(|x| x.2 * x.2).fold(0.0, f64::max)).sum();
        (2.0 / (2.0 * norm + jump)).min(0.05)
    }

    fn propagate_to_steady(&self) -> Result<Vec<Complex64>, OracleError> {
        let d = self.dim();
        let mut rho = vec![Complex64::new(0.0, 0.0); d * d];
        rho[0] = Complex64::new(1.0, 0.0);
        let h = self.rk4_dt();
        let mut buf: [Vec<Complex64>; 6] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); d * d]);
        let check_every = 50usize;
        let mut t = 0.0;
        let mut res = f64::INFINITY;
        while t < self.cfg.max_time {
            for _ in 0..check_every {
                self.rk4_step(&mut rho, h, &mut buf);
            }
            t += h * check_every as f64;
            let [k1, _, _, _, _, scratch] = &mut buf;
            self.apply_hermitian(&rho, k1, scratch);
            res = k1.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if res < self.cfg.tolerance {
                return Ok(rho);
            }
        }
        Err(OracleError::NoConvergence(res))
    }

    fn dense_steady(&self) -> Result<Vec<Complex64>, OracleError> {
        let d = self.dim();
        let n = d * d;
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); n];
        for p in 0..n {
            e[p] = Complex64::new(1.0, 0.0);
            self.apply(&e, &mut col, &mut scratch);
            e[p] = Complex64::new(0.0, 0.0);
            for (r, v) in col.iter().enumerate() {
                m[(r, p)] = *v;
            }
        }
        for c in 0..n {
            m[(0, c)] = Complex64::new(0.0, 0.0);
        }
        for i in 0..d {
            m[(0, i * d + i)] = Complex64::new(1.0, 0.0);
        }
        let mut rhs = DVector::<Complex64>::zeros(n);
        rhs[0] = Complex64::new(1.0, 0.0);
        let x = m.lu().solve(&rhs).ok_or(OracleError::Singular)?;
        let mut rho: Vec<Complex64> = x.iter().copied().collect();
        // symmetrise away LU rounding
        for r in 0..d {
            for c in r..d {
                let v = 0.5 * (rho[r * d + c] + rho[c * d + r].conj());
                rho[r * d + c] = v;
                rho[c * d + r] = v.conj();
            }
        }
        Ok(rho)
    }

    /// Steady state with populations and `g2(0)` on every site.
    ///
    /// Fails with [`OracleError::RaiseCutoff`] when the truncation boundary
    /// holds more than `1e-6` of the population.
    pub fn steady_state(&self) -> Result<SteadyState, OracleError> {
        let d = self.dim();
        let (rho, method) = if d * d <= self.cfg.dense_limit {
            (self.dense_steady()?, "dense-lu")
        } else {
            (self.propagate_to_steady()?, "rk4")
        };
        let trace: Complex64 = (0..d).map(|i| rho[i * d + i]).sum();
        let mut herm: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                herm = herm.max((rho[r * d + c] - rho[c * d + r].conj()).norm());
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        let mut scratch = out.clone();
        self.apply_hermitian(&rho, &mut out, &mut scratch);
        let resid = out.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let top: f64 = (0..d).filter(|&i| self.basis.is_top(i)).map(|i| rho[i * d + i].re).sum();
        if top > TOP_LEVEL_LIMIT {
            return Err(OracleError::RaiseCutoff { population: top });
        }
        let ns = self.basis.n_sites();
        let mut n = vec![0.0; ns];
        let mut nn = vec![0.0; ns];
        for i in 0..d {
            let p = rho[i * d + i].re;
            for (j, &k) in self.basis.state(i).iter().enumerate() {
                let k = k as f64;
                n[j] += p * k;
                nn[j] += p * k * (k - 1.0);
            }
        }
        let g2 = n.iter().zip(&nn).map(|(&a, &b)| if a > 0.0 { Some(b / (a * a)) } else { None }).collect();
        Ok(SteadyState {
            result: SteadyStateResult {
                n,
                g2,
                trace_residual: (trace - 1.0).norm(),
                hermiticity_residual: herm,
                liouvillian_residual: resid,
                top_population: top,
                cutoff: self.cfg.cutoff,
                total_cap: self.basis.total_cap,
                dimension: d,
                method,
            },
            rho,
        })
    }

    /// `g2(tau)` on `sites` by the quantum regression theorem: propagate
    /// `a_j rho a_j^dag` and trace against `n_j`.
    pub fn g2_tau(
        &self,
        ss: &SteadyState,
        sites: &[usize],
        taus: &[f64],
    ) -> Result<Vec<Vec<Option<f64>>>, OracleError> {
        if taus.iter().any(|&t| t < 0.0) || taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(OracleError::BadTaus);
        }
        let d = self.dim();
        let h_max = self.rk4_dt().min(0.01);
        let mut buf: [Vec<Complex64>; 6] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); d * d]);
        let mut curves = Vec::new();
        for &j in sites {
            let nj = ss.result.n[j];
            if !(nj > 0.0) {
                curves.push(vec![None; taus.len()]);
                continue;
            }
            let mut sigma = vec![Complex64::new(0.0, 0.0); d * d];
            for &(s, t, qs) in &self.lower[j] {
                for &(s2, t2, q2) in &self.lower[j] {
                    sigma[t * d + t2] += ss.rho[s * d + s2] * (qs * q2);
                }
            }
            let mut now = 0.0;
            let mut curve = Vec::with_capacity(taus.len());
            for &tau in taus {
                let gap = tau - now;
                if gap > 0.0 {
                    let steps = (gap / h_max).ceil() as usize;
                    let h = gap / steps as f64;
                    for _ in 0..steps {
                        self.rk4_step(&mut sigma, h, &mut buf);
                    }
                    now = tau;
                }
                let num: f64 = (0..d).map(|i| sigma[i * d + i].re * self.basis.state(i)[j] as f64).sum();
                curve.push(Some(num / (nj * nj)));
            }
            curves.push(curve);
        }
        Ok(curves)
    }

    /// Smallest eigenvalue of the (Hermitian) density matrix.
    pub fn min_eigenvalue(&self, rho: &[Complex64]) -> f64 {
        let d = self.dim();
        let m = DMatrix::from_row_slice(d, d, rho);
        m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn estimate_dimension(ns: usize, cutoff: usize, cap: Option<usize>) -> f64 {
    match cap {
        // upper bound: simplex count ignoring the per-site limit
        Some(c) => {
            let mut v = 1.0;
            for i in 1..=ns {
                v *= (c + i) as f64 / i as f64;
            }
            v.min(((cutoff + 1) as f64).powi(ns as i32))
        }
        None => ((cutoff + 1) as f64).powi(ns as i32),
    }
}
