//! Positive-P stochastic integration.
//!
//! Each site carries two independent complex fields `alpha` and `beta`. Their
//! Ito equations are
//!
//! ```text
//! d alpha = [ i(D alpha - U alpha^2 beta - F + sum J alpha') - gamma/2 alpha ] dt + sqrt(-iU) alpha dW
//! d beta  = [-i(D beta  - U alpha beta^2 - F* + sum J* beta') - gamma/2 beta  ] dt + sqrt( iU) beta  dW'
//! ```
//!
//! Every step consumes `2 * n_sites` standard normals per noise substep, in
//! the order `xi_alpha[0..n]` then `xi_beta[0..n]`. Trajectory `k` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` switched to stream `k`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::io::{self, Read, Write};
use std::sync::Mutex;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lattice::LatticeGraph;
use crate::model::{DriveScheme, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum IntegratorError {
    #[error("invalid integration config: {0}")]
    Config(String),
    #[error("drive has {got} amplitudes but the lattice has {expected} sites")]
    DriveSize { expected: usize, got: usize },
    #[error("{diverged} of {total} trajectories diverged (limit is 0.1%); first diverged index {first}")]
    Divergence { diverged: usize, total: usize, first: usize },
    #[error("no trajectory survived")]
    Empty,
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("raw dump: {0}")]
    Io(#[from] io::Error),
    #[error("raw dump header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Three fixed-point iterations of the drift midpoint, explicit Ito noise.
    #[default]
    SemiImplicit,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_burn: f64,
    pub t_end: f64,
    pub sample_interval: f64,
    pub n_trajectories: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Each step's noise is the normalised sum of this many fine-grained
    /// draws, so a run with `dt` and 2 substeps sees the same Brownian path as
    /// a run with `dt / 2` and 1 substep.
    #[serde(default = "one")]
    pub noise_substeps: u32,
}

fn one() -> u32 {
    1
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            dt: 1e-3,
            t_burn: 20.0,
            t_end: 120.0,
            sample_interval: 0.05,
            n_trajectories: 2000,
            seed: 1,
            scheme: Scheme::SemiImplicit,
            noise_substeps: 1,
        }
    }
}

fn whole(x: f64, what: &str) -> Result<u64, IntegratorError> {
    let r = x.round();
    if (x - r).abs() > 1e-6 * x.abs().max(1.0) || r < 0.0 {
        return Err(IntegratorError::Config(format!("{what} must be a whole number of steps, got {x}")));
    }
    Ok(r as u64)
}

/// Step counts derived from an [`IntegrationConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPlan {
    pub burn_steps: u64,
    pub stride: u64,
    pub n_samples: usize,
}

impl StepPlan {
    pub fn total_steps(&self) -> u64 {
        self.burn_steps + self.stride * (self.n_samples as u64 - 1)
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<StepPlan, IntegratorError> {
        let bad = |m: String| Err(IntegratorError::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.sample_interval >= self.dt) {
            return bad(format!("sample_interval {} is shorter than dt {}", self.sample_interval, self.dt));
        }
        if !(self.t_burn >= 0.0 && self.t_burn < self.t_end && self.t_end.is_finite()) {
            return bad(format!("need 0 <= t_burn < t_end, got {} and {}", self.t_burn, self.t_end));
        }
        if self.n_trajectories < 1 {
            return bad("n_trajectories must be at least 1".into());
        }
        if self.noise_substeps < 1 {
            return bad("noise_substeps must be at least 1".into());
        }
        let stride = whole(self.sample_interval / self.dt, "sample_interval / dt")?;
        let burn_steps = whole(self.t_burn / self.dt, "t_burn / dt")?;
        let n_samples = ((self.t_end - self.t_burn) / self.sample_interval + 1e-9).floor() as usize + 1;
        Ok(StepPlan { burn_steps, stride, n_samples })
    }

    pub fn sample_times(&self) -> Result<Vec<f64>, IntegratorError> {
        let plan = self.validate()?;
        Ok((0..plan.n_samples).map(|i| self.t_burn + i as f64 * self.sample_interval).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceState {
    pub alpha: Vec<Complex64>,
    pub beta: Vec<Complex64>,
    pub t: f64,
}

impl PhaseSpaceState {
    pub fn vacuum(n_sites: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        PhaseSpaceState { alpha: vec![z; n_sites], beta: vec![z; n_sites], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// The SDE right-hand side for one (lattice, model, drive) triple, flattened
/// for fast evaluation.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    n: usize,
    detuning: Vec<f64>,
    u: f64,
    half_gamma: f64,
    drive: Vec<Complex64>,
    offsets: Vec<usize>,
    nbr: Vec<usize>,
    hop: Vec<Complex64>,
    noise_alpha: Complex64,
    noise_beta: Complex64,
}

impl SdeSystem {
    pub fn new(lattice: &LatticeGraph, model: &ModelParams, drive: &DriveScheme) -> Result<Self, IntegratorError> {
        let n = lattice.n_sites();
        if drive.amplitudes().len() != n {
            return Err(IntegratorError::DriveSize { expected: n, got: drive.amplitudes().len() });
        }
        model.validate().map_err(|e| IntegratorError::Config(e.to_string()))?;
        let mut offsets = vec![0];
        let mut nbr = Vec::new();
        let mut hop = Vec::new();
        for j in 0..n {
            for &(k, jj) in lattice.neighbors(j) {
                nbr.push(k);
                hop.push(jj);
            }
            offsets.push(nbr.len());
        }
        let su = model.u.sqrt();
        Ok(SdeSystem {
            n,
            detuning: model.site_detunings(lattice),
            u: model.u,
            half_gamma: model.gamma / 2.0,
            drive: drive.amplitudes().to_vec(),
            offsets,
            nbr,
            hop,
            noise_alpha: Complex64::new(su * FRAC_1_SQRT_2, -su * FRAC_1_SQRT_2),
            noise_beta: Complex64::new(su * FRAC_1_SQRT_2, su * FRAC_1_SQRT_2),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn gamma(&self) -> f64 {
        2.0 * self.half_gamma
    }

    /// Deterministic part of both equations.
    pub fn drift(&self, alpha: &[Complex64], beta: &[Complex64], da: &mut [Complex64], db: &mut [Complex64]) {
        let i = Complex64::i();
        for j in 0..self.n {
            let (a, b) = (alpha[j], beta[j]);
            let mut ha = Complex64::new(0.0, 0.0);
            let mut hb = Complex64::new(0.0, 0.0);
            for e in self.offsets[j]..self.offsets[j + 1] {
                let k = self.nbr[e];
                ha += self.hop[e] * alpha[k];
                hb += self.hop[e].conj() * beta[k];
            }
            let nab = self.u * a * b;
            let d = self.detuning[j];
            da[j] = i * (d * a - nab * a - self.drive[j] + ha) - self.half_gamma * a;
            db[j] = -i * (d * b - nab * b - self.drive[j].conj() + hb) - self.half_gamma * b;
        }
    }

    /// Multiplicative noise amplitudes `sqrt(U) e^{-i pi/4} alpha` and `sqrt(U) e^{i pi/4} beta`.
    pub fn noise_amplitudes(
        &self,
        alpha: &[Complex64],
        beta: &[Complex64],
        ba: &mut [Complex64],
        bb: &mut [Complex64],
    ) {
        for j in 0..self.n {
            ba[j] = self.noise_alpha * alpha[j];
            bb[j] = self.noise_beta * beta[j];
        }
    }

    /// Fixed point of the drift with the interaction switched off.
    pub fn linear_steady_state(&self) -> Option<Vec<Complex64>> {
        use nalgebra::{DMatrix, DVector};
        let n = self.n;
        let i = Complex64::i();
        // 0 = i(D a - F + sum J a') - gamma/2 a
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        let mut rhs = DVector::<Complex64>::zeros(n);
        for j in 0..n {
            m[(j, j)] = i * self.detuning[j] - self.half_gamma;
            for e in self.offsets[j]..self.offsets[j + 1] {
                m[(j, self.nbr[e])] += i * self.hop[e];
            }
            rhs[j] = i * self.drive[j];
        }
        m.lu().solve(&rhs).map(|v| v.iter().copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diverged;

/// Scratch buffers and step settings for one trajectory.
pub struct Stepper<'a> {
    sys: &'a SdeSystem,
    dt: f64,
    scheme: Scheme,
    substeps: u32,
    xi: Vec<f64>,
    mid_a: Vec<Complex64>,
    mid_b: Vec<Complex64>,
    da: Vec<Complex64>,
    db: Vec<Complex64>,
    ba: Vec<Complex64>,
    bb: Vec<Complex64>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a SdeSystem, dt: f64, scheme: Scheme, noise_substeps: u32) -> Self {
        let n = sys.n;
        let z = vec![Complex64::new(0.0, 0.0); n];
        Stepper {
            sys,
            dt,
            scheme,
            substeps: noise_substeps.max(1),
            xi: vec![0.0; 2 * n],
            mid_a: z.clone(),
            mid_b: z.clone(),
            da: z.clone(),
            db: z.clone(),
            ba: z.clone(),
            bb: z,
        }
    }

    /// Fill the noise buffer with the next step's normals.
    pub fn draw_noise<R: Rng>(&mut self, rng: &mut R) {
        if self.substeps == 1 {
            for x in self.xi.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
        } else {
            self.xi.iter_mut().for_each(|x| *x = 0.0);
            for _ in 0..self.substeps {
                for x in self.xi.iter_mut() {
                    *x += rng.sample::<f64, _>(StandardNormal);
                }
            }
            let norm = 1.0 / (self.substeps as f64).sqrt();
            self.xi.iter_mut().for_each(|x| *x *= norm);
        }
    }

    pub fn step<R: Rng>(&mut self, state: &mut PhaseSpaceState, rng: &mut R) -> Result<(), Diverged> {
        self.draw_noise(rng);
        self.step_with_noise(state)
    }

    /// Advance using the normals currently in the noise buffer.
    pub fn step_with_noise(&mut self, state: &mut PhaseSpaceState) -> Result<(), Diverged> {
        let n = self.sys.n;
        let dt = self.dt;
        let sdt = dt.sqrt();
        self.sys.noise_amplitudes(&state.alpha, &state.beta, &mut self.ba, &mut self.bb);
        match self.scheme {
            Scheme::EulerMaruyama => {
                self.sys.drift(&state.alpha, &state.beta, &mut self.da, &mut self.db);
                for j in 0..n {
                    state.alpha[j] += self.da[j] * dt + self.ba[j] * (self.xi[j] * sdt);
                    state.beta[j] += self.db[j] * dt + self.bb[j] * (self.xi[n + j] * sdt);
                }
            }
            Scheme::SemiImplicit => {
                self.mid_a.copy_from_slice(&state.alpha);
                self.mid_b.copy_from_slice(&state.beta);
                let h = 0.5 * dt;
                for _ in 0..3 {
                    self.sys.drift(&self.mid_a, &self.mid_b, &mut self.da, &mut self.db);
                    for j in 0..n {
                        self.mid_a[j] = state.alpha[j] + self.da[j] * h;
                        self.mid_b[j] = state.beta[j] + self.db[j] * h;
                    }
                }
                for j in 0..n {
                    state.alpha[j] = 2.0 * self.mid_a[j] - state.alpha[j] + self.ba[j] * (self.xi[j] * sdt);
                    state.beta[j] = 2.0 * self.mid_b[j] - state.beta[j] + self.bb[j] * (self.xi[n + j] * sdt);
                }
            }
        }
        state.t += dt;
        if state.is_finite() {
            Ok(())
        } else {
            Err(Diverged)
        }
    }
}

pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sampled fields of one trajectory on the uniform grid `t_burn + i * sample_interval`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub t0: f64,
    pub sample_interval: f64,
    pub n_sites: usize,
    pub n_samples: usize,
    alpha: Vec<Complex64>,
    beta: Vec<Complex64>,
}

impl TrajectoryRecord {
    pub fn new(index: usize, t0: f64, sample_interval: f64, n_sites: usize, n_samples: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        TrajectoryRecord {
            index,
            t0,
            sample_interval,
            n_sites,
            n_samples,
            alpha: vec![z; n_sites * n_samples],
            beta: vec![z; n_sites * n_samples],
        }
    }

    /// Fields of all sites at sample `i`.
    pub fn alpha_at(&self, i: usize) -> &[Complex64] {
        &self.alpha[i * self.n_sites..(i + 1) * self.n_sites]
    }

    pub fn beta_at(&self, i: usize) -> &[Complex64] {
        &self.beta[i * self.n_sites..(i + 1) * self.n_sites]
    }

    pub fn set_sample(&mut self, i: usize, alpha: &[Complex64], beta: &[Complex64]) {
        let r = i * self.n_sites..(i + 1) * self.n_sites;
        self.alpha[r.clone()].copy_from_slice(alpha);
        self.beta[r].copy_from_slice(beta);
    }

    /// Time series of one site.
    pub fn site_series(&self, site: usize) -> (Vec<Complex64>, Vec<Complex64>) {
        let a = (0..self.n_samples).map(|i| self.alpha[i * self.n_sites + site]).collect();
        let b = (0..self.n_samples).map(|i| self.beta[i * self.n_sites + site]).collect();
        (a, b)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.t0 + i as f64 * self.sample_interval).collect()
    }
}

/// Integrate trajectory `index` from vacuum and record it.
pub fn run_trajectory(sys: &SdeSystem, cfg: &IntegrationConfig, index: usize) -> Result<TrajectoryRecord, Diverged> {
    let plan = cfg.validate().map_err(|_| Diverged)?;
    let mut rng = trajectory_rng(cfg.seed, index as u64);
    let mut stepper = Stepper::new(sys, cfg.dt, cfg.scheme, cfg.noise_substeps);
    let mut state = PhaseSpaceState::vacuum(sys.n);
    let mut rec = TrajectoryRecord::new(index, cfg.t_burn, cfg.sample_interval, sys.n, plan.n_samples);
    for _ in 0..plan.burn_steps {
        stepper.step(&mut state, &mut rng)?;
    }
    rec.set_sample(0, &state.alpha, &state.beta);
    for i in 1..plan.n_samples {
        for _ in 0..plan.stride {
            stepper.step(&mut state, &mut rng)?;
        }
        rec.set_sample(i, &state.alpha, &state.beta);
    }
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleReport {
    pub n_trajectories: usize,
    pub n_used: usize,
    pub diverged: Vec<usize>,
}

/// How the per-trajectory results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Reduction {
    /// Fold fixed chunks of trajectories and merge the chunk results in index order.
    pub deterministic: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

const CHUNK: usize = 8;

/// Run the whole ensemble, folding every surviving trajectory into an accumulator.
///
/// Fails when more than 0.1% of the trajectories diverge.
pub fn run_ensemble<A, I, F, M>(
    sys: &SdeSystem,
    cfg: &IntegrationConfig,
    reduction: Reduction,
    init: I,
    fold: F,
    merge: M,
) -> Result<(A, EnsembleReport), IntegratorError>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &TrajectoryRecord) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    cfg.validate()?;
    let total = cfg.n_trajectories;
    let work = || -> (A, Vec<usize>) {
        let run_chunk = |c: usize| {
            let mut acc = init();
            let mut bad = Vec::new();
            for k in c * CHUNK..((c + 1) * CHUNK).min(total) {
                match run_trajectory(sys, cfg, k) {
                    Ok(rec) => fold(&mut acc, &rec),
                    Err(Diverged) => bad.push(k),
                }
            }
            (acc, bad)
        };
        let n_chunks = total.div_ceil(CHUNK);
        if reduction.deterministic {
            let parts: Vec<(A, Vec<usize>)> = (0..n_chunks).into_par_iter().map(run_chunk).collect();
            let mut acc = init();
            let mut bad = Vec::new();
            for (a, b) in parts {
                acc = merge(acc, a);
                bad.extend(b);
            }
            (acc, bad)
        } else {
            (0..n_chunks).into_par_iter().map(run_chunk).reduce(
                || (init(), Vec::new()),
                |(a1, mut b1), (a2, b2)| {
                    b1.extend(b2);
                    (merge(a1, a2), b1)
                },
            )
        }
    };
    let (acc, mut diverged) = match reduction.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| IntegratorError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };
    diverged.sort_unstable();
    // more than 0.1% is fatal
    if diverged.len() * 1000 > total {
        return Err(IntegratorError::Divergence { diverged: diverged.len(), total, first: diverged[0] });
    }
    if diverged.len() == total {
        return Err(IntegratorError::Empty);
    }
    let report = EnsembleReport { n_trajectories: total, n_used: total - diverged.len(), diverged };
    Ok((acc, report))
}

const MAGIC: &[u8; 8] = b"DDBHRAW1";

/// Header of the raw trajectory dump.
///
/// Layout, all little-endian: 8-byte magic `DDBHRAW1`, `u64` header length,
/// that many bytes of JSON (this struct), then one block per trajectory:
/// `u64` trajectory index followed by `n_samples * n_sites` records of four
/// `f64` (`Re alpha`, `Im alpha`, `Re beta`, `Im beta`), sample-major.
/// Blocks may appear in any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub lattice_hash: String,
    pub n_sites: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub config: IntegrationConfig,
}

pub struct DumpWriter<W: Write> {
    inner: Mutex<W>,
    header: DumpHeader,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut w: W, header: DumpHeader) -> Result<Self, IntegratorError> {
        let json = serde_json::to_vec(&header).map_err(|e| IntegratorError::Header(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        Ok(DumpWriter { inner: Mutex::new(w), header })
    }

    pub fn write_record(&self, rec: &TrajectoryRecord) -> Result<(), IntegratorError> {
        if rec.n_sites != self.header.n_sites || rec.n_samples != self.header.n_samples {
            return Err(IntegratorError::Header("record shape does not match header".into()));
        }
        let mut buf = Vec::with_capacity(8 + 32 * rec.n_sites * rec.n_samples);
        buf.extend_from_slice(&(rec.index as u64).to_le_bytes());
        for (a, b) in rec.alpha.iter().zip(&rec.beta) {
            for x in [a.re, a.im, b.re, b.im] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut w = self.inner.lock().expect("dump writer poisoned");
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(self) -> Result<W, IntegratorError> {
        let mut w = self.inner.into_inner().expect("dump writer poisoned");
        w.flush()?;
        Ok(w)
    }
}

/// Read a whole dump back, records sorted by trajectory index.
pub fn read_dump<R: Read>(mut r: R) -> Result<(DumpHeader, Vec<TrajectoryRecord>), IntegratorError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IntegratorError::Header("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: DumpHeader = serde_json::from_slice(&json).map_err(|e| IntegratorError::Header(e.to_string()))?;
    let mut out = Vec::new();
    let per = header.n_sites * header.n_samples;
    let mut block = vec![0u8; 32 * per];
    loop {
        let mut idx = [0u8; 8];
        match r.read_exact(&mut idx) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut block)?;
        let mut rec = TrajectoryRecord::new(
            u64::from_le_bytes(idx) as usize,
            header.config.t_burn,
            header.config.sample_interval,
            header.n_sites,
            header.n_samples,
        );
        let f = |k: usize| f64::from_le_bytes(block[8 * k..8 * k + 8].try_into().unwrap());
        for p in 0..per {
            rec.alpha[p] = Complex64::new(f(4 * p), f(4 * p + 1));
            rec.beta[p] = Complex64::new(f(4 * p + 2), f(4 * p + 3));
        }
        out.push(rec);
    }
    out.sort_by_key(|r| r.index);
    Ok((header, out))
}
