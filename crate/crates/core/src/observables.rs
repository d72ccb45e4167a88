//! Reduction of sampled trajectories to occupations, second-order
//! correlations and the momentum-frequency occupation spectrum.
//!
//! Error bars use batch means. Each trajectory's sample axis is cut into
//! batches of fixed length; one (trajectory, batch) pair is a unit. Ratio
//! estimators get their standard error from the linearised influence of each
//! unit. All sums are exact, so merging accumulators in any order gives
//! bitwise-identical estimates.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix3;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::exact::{weighted_sum, ExactSum};
use crate::integrator::TrajectoryRecord;
use crate::lattice::{Geometry, LatticeGraph, CELL_SPACING};
use crate::model::SublatticeDetuning;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObservableError {
    #[error("no samples accumulated")]
    Empty,
    #[error("lag grid must start at 0 and increase strictly")]
    BadLags,
    #[error("lag {tau} exceeds the sampled window {window}")]
    LagTooLong { tau: f64, window: f64 },
    #[error("site {0} out of range")]
    BadSite(usize),
    #[error("site {0} has no lag curve")]
    NoCurve(usize),
    #[error("record shape does not match the accumulator layout")]
    Shape,
    #[error("spectrum needs a quasi-1D Lieb lattice")]
    NotQuasi1d,
    #[error("no resolvable maximum on both sides of zero delay")]
    NoMaxima,
    #[error("delay grid must start at 0 with uniform spacing")]
    BadCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Which quantities to accumulate and how to batch them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableLayout {
    pub n_sites: usize,
    pub sample_interval: f64,
    pub batch_len: usize,
    /// Delays in units of the sample interval, starting at 0.
    pub lags: Vec<usize>,
    /// Sites that get a full delay curve; every site gets the zero-delay moment.
    pub curve_sites: Vec<usize>,
}

impl ObservableLayout {
    /// `batch_time` and `tau_max` in time units; delays on every sample up to `tau_max`.
    pub fn new(
        n_sites: usize,
        sample_interval: f64,
        batch_time: f64,
        tau_max: f64,
        curve_sites: Vec<usize>,
    ) -> Result<Self, ObservableError> {
        let max_lag = (tau_max / sample_interval + 1e-9).floor().max(0.0) as usize;
        Self::with_lags(n_sites, sample_interval, batch_time, (0..=max_lag).collect(), curve_sites)
    }

    pub fn with_lags(
        n_sites: usize,
        sample_interval: f64,
        batch_time: f64,
        lags: Vec<usize>,
        curve_sites: Vec<usize>,
    ) -> Result<Self, ObservableError> {
        if lags.first() != Some(&0) || lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ObservableError::BadLags);
        }
        if let Some(&s) = curve_sites.iter().find(|&&s| s >= n_sites) {
            return Err(ObservableError::BadSite(s));
        }
        let batch_len = ((batch_time / sample_interval).round() as usize).max(1);
        Ok(ObservableLayout { n_sites, sample_interval, batch_len, lags, curve_sites })
    }

    pub fn taus(&self) -> Vec<f64> {
        self.lags.iter().map(|&l| l as f64 * self.sample_interval).collect()
    }

    pub fn check_window(&self, n_samples: usize) -> Result<(), ObservableError> {
        let last = *self.lags.last().unwrap();
        if last >= n_samples {
            return Err(ObservableError::LagTooLong {
                tau: last as f64 * self.sample_interval,
                window: (n_samples.saturating_sub(1)) as f64 * self.sample_interval,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct PairMoments {
    p: ExactSum,
    cp: ExactSum,
    pp: ExactSum,
    cpcp: ExactSum,
    pcp: ExactSum,
    px: ExactSum,
    pc: ExactSum,
    cpx: ExactSum,
    cpc: ExactSum,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct SiteMoments {
    x: ExactSum,
    xi: ExactSum,
    c: ExactSum,
    xx: ExactSum,
    xixi: ExactSum,
    cc: ExactSum,
    xc: ExactSum,
    xic: ExactSum,
    lags: Vec<PairMoments>,
}

/// Streaming sums for every site; see the module docs for the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableAccumulator {
    layout: ObservableLayout,
    units: u64,
    trajectories: u64,
    sites: Vec<SiteMoments>,
    // site -> slot in the curve list
    curve_slot: Vec<Option<usize>>,
}

impl ObservableAccumulator {
    pub fn new(layout: ObservableLayout) -> Self {
        let mut curve_slot = vec![None; layout.n_sites];
        for (k, &s) in layout.curve_sites.iter().enumerate() {
            curve_slot[s] = Some(k);
        }
        let sites = (0..layout.n_sites)
            .map(|s| SiteMoments {
                lags: vec![PairMoments::default(); if curve_slot[s].is_some() { layout.lags.len() } else { 1 }],
                ..Default::default()
            })
            .collect();
        ObservableAccumulator { layout, units: 0, trajectories: 0, sites, curve_slot }
    }

    pub fn layout(&self) -> &ObservableLayout {
        &self.layout
    }

    pub fn units(&self) -> u64 {
        self.units
    }

    pub fn trajectories(&self) -> u64 {
        self.trajectories
    }

    pub fn add_record(&mut self, rec: &TrajectoryRecord) -> Result<(), ObservableError> {
        if rec.n_sites != self.layout.n_sites {
            return Err(ObservableError::Shape);
        }
        self.layout.check_window(rec.n_samples)?;
        let m_len = rec.n_samples;
        let bl = self.layout.batch_len;
        let nb = (m_len / bl).max(1);
        let mut m = vec![Complex64::new(0.0, 0.0); m_len];
        for (j, site) in self.sites.iter_mut().enumerate() {
            for (i, mi) in m.iter_mut().enumerate() {
                *mi = rec.alpha_at(i)[j] * rec.beta_at(i)[j];
            }
            for b in 0..nb {
                let lo = b * bl;
                let hi = if b + 1 == nb { m_len } else { lo + bl };
                let (mut x, mut xi) = (0.0, 0.0);
                for mi in &m[lo..hi] {
                    x += mi.re;
                    xi += mi.im;
                }
                let c = (hi - lo) as f64;
                site.x.add(x);
                site.xi.add(xi);
                site.c.add(c);
                add_products(&mut [
                    (&mut site.xx, x, x),
                    (&mut site.xixi, xi, xi),
                    (&mut site.cc, c, c),
                    (&mut site.xc, x, c),
                    (&mut site.xic, xi, c),
                ]);
                for (slot, pm) in site.lags.iter_mut().enumerate() {
                    let lag = self.layout.lags[slot];
                    let end = hi.min(m_len - lag);
                    let mut p = 0.0;
                    for i in lo..end.max(lo) {
                        p += (m[i] * m[i + lag]).re;
                    }
                    let cp = end.saturating_sub(lo) as f64;
                    pm.p.add(p);
                    pm.cp.add(cp);
                    add_products(&mut [
                        (&mut pm.pp, p, p),
                        (&mut pm.cpcp, cp, cp),
                        (&mut pm.pcp, p, cp),
                        (&mut pm.px, p, x),
                        (&mut pm.pc, p, c),
                        (&mut pm.cpx, cp, x),
                        (&mut pm.cpc, cp, c),
                    ]);
                }
            }
        }
        self.units += nb as u64;
        self.trajectories += 1;
        Ok(())
    }

    /// Combine with another accumulator of the same layout. Exact.
    pub fn merge(&mut self, other: &ObservableAccumulator) {
        assert_eq!(self.layout, other.layout, "merging accumulators with different layouts");
        for (a, b) in self.sites.iter_mut().zip(&other.sites) {
            for (s, o) in [
                (&mut a.x, &b.x),
                (&mut a.xi, &b.xi),
                (&mut a.c, &b.c),
                (&mut a.xx, &b.xx),
                (&mut a.xixi, &b.xixi),
                (&mut a.cc, &b.cc),
                (&mut a.xc, &b.xc),
                (&mut a.xic, &b.xic),
            ] {
                s.merge(o);
            }
            for (pa, pb) in a.lags.iter_mut().zip(&b.lags) {
                for (s, o) in [
                    (&mut pa.p, &pb.p),
                    (&mut pa.cp, &pb.cp),
                    (&mut pa.pp, &pb.pp),
                    (&mut pa.cpcp, &pb.cpcp),
                    (&mut pa.pcp, &pb.pcp),
                    (&mut pa.px, &pb.px),
                    (&mut pa.pc, &pb.pc),
                    (&mut pa.cpx, &pb.cpx),
                    (&mut pa.cpc, &pb.cpc),
                ] {
                    s.merge(o);
                }
            }
        }
        self.units += other.units;
        self.trajectories += other.trajectories;
    }

    pub fn merged(mut self, other: ObservableAccumulator) -> Self {
        self.merge(&other);
        self
    }

    fn site(&self, site: usize) -> Result<&SiteMoments, ObservableError> {
        let s = self.sites.get(site).ok_or(ObservableError::BadSite(site))?;
        if self.units == 0 || s.c.value() == 0.0 {
            return Err(ObservableError::Empty);
        }
        Ok(s)
    }

    fn bessel(&self) -> f64 {
        if self.units < 2 {
            f64::NAN
        } else {
            self.units as f64 / (self.units as f64 - 1.0)
        }
    }

    fn mean_of(&self, x: &ExactSum, xx: &ExactSum, xc: &ExactSum, s: &SiteMoments) -> Estimate {
        let c = s.c.value();
        let n = x.value() / c;
        let quad = weighted_sum(&[(1.0, 1.0, xx), (-2.0 * n, 1.0, xc), (n, n, &s.cc)]) / (c * c);
        Estimate { value: n, stderr: (quad.max(0.0) * self.bessel()).sqrt() }
    }

    /// Real part of `<alpha beta>`.
    pub fn occupation(&self, site: usize) -> Result<Estimate, ObservableError> {
        let s = self.site(site)?;
        Ok(self.mean_of(&s.x, &s.xx, &s.xc, s))
    }

    /// Imaginary part of `<alpha beta>`; zero in expectation.
    pub fn occupation_imag(&self, site: usize) -> Result<Estimate, ObservableError> {
        let s = self.site(site)?;
        Ok(self.mean_of(&s.xi, &s.xixi, &s.xic, s))
    }

    fn g2_slot(&self, site: usize, slot: usize) -> Result<Option<Estimate>, ObservableError> {
        let s = self.site(site)?;
        let n = self.occupation(site)?;
        if !(n.value > 3.0 * n.stderr) || n.value <= 0.0 {
            return Ok(None);
        }
        let pm = &s.lags[slot];
        let (sp, cp, sx, c) = (pm.p.value(), pm.cp.value(), s.x.value(), s.c.value());
        if cp == 0.0 {
            return Ok(None);
        }
        let g = (sp / cp) / ((sx / c) * (sx / c));
        let (wp, wcp, wx, wc) = (1.0 / sp, -1.0 / cp, -2.0 / sx, 2.0 / c);
        let quad = weighted_sum(&[
            (wp, wp, &pm.pp),
            (wcp, wcp, &pm.cpcp),
            (wx, wx, &s.xx),
            (wc, wc, &s.cc),
            (2.0 * wp, wcp, &pm.pcp),
            (2.0 * wp, wx, &pm.px),
            (2.0 * wp, wc, &pm.pc),
            (2.0 * wcp, wx, &pm.cpx),
            (2.0 * wcp, wc, &pm.cpc),
            (2.0 * wx, wc, &s.xc),
        ]);
        let stderr = (g * g * quad.max(0.0) * self.bessel()).sqrt();
        Ok(Some(Estimate { value: g, stderr }))
    }

    /// Equal-time `g2(0)`; `None` when the occupation is not resolved above 3 standard errors.
    pub fn g2_zero(&self, site: usize) -> Result<Option<Estimate>, ObservableError> {
        self.g2_slot(site, 0)
    }

    /// `g2(tau)` for `tau >= 0` on the layout's delay grid.
    pub fn g2_tau(&self, site: usize) -> Result<Vec<(f64, Option<Estimate>)>, ObservableError> {
        if self.curve_slot.get(site).copied().flatten().is_none() {
            return Err(ObservableError::NoCurve(site));
        }
        let taus = self.layout.taus();
        (0..taus.len()).map(|k| Ok((taus[k], self.g2_slot(site, k)?))).collect()
    }
}

fn add_products(items: &mut [(&mut ExactSum, f64, f64)]) {
    for (s, a, b) in items.iter_mut() {
        s.add_product(*a, *b);
    }
}

/// Extend a `tau >= 0` curve to negative delays using `g2(-tau) = g2(tau)`.
pub fn mirror_curve<T: Clone>(curve: &[(f64, T)]) -> Vec<(f64, T)> {
    let mut out: Vec<(f64, T)> = curve.iter().skip(1).rev().map(|(t, v)| (-t, v.clone())).collect();
    out.extend(curve.iter().cloned());
    out
}

/// Gap between the first maxima either side of zero delay.
///
/// `taus` is the uniform non-negative half of the curve starting at 0. The
/// curve is mirrored and smoothed with a 3-point moving average first.
pub fn oscillation_period(taus: &[f64], values: &[f64]) -> Result<f64, ObservableError> {
    if taus.len() != values.len() || taus.len() < 3 || taus[0] != 0.0 {
        return Err(ObservableError::BadCurve);
    }
    let h = taus[1] - taus[0];
    if !(h > 0.0) || taus.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(ObservableError::BadCurve);
    }
    let n = values.len();
    let full: Vec<f64> = values[1..].iter().rev().chain(values.iter()).copied().collect();
    let smooth: Vec<f64> = (0..full.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(full.len() - 1);
            full[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let centre = n - 1;
    let is_max = |i: usize| i > 0 && i + 1 < smooth.len() && smooth[i] > smooth[i - 1] && smooth[i] >= smooth[i + 1];
    let right = (centre + 1..smooth.len()).find(|&i| is_max(i)).ok_or(ObservableError::NoMaxima)?;
    let left = (0..centre).rev().find(|&i| is_max(i)).ok_or(ObservableError::NoMaxima)?;
    Ok((right - left) as f64 * h)
}

/// Momentum grid `k_m = 2 pi m / (N d)` folded into `(-pi/d, pi/d]`, in index order.
pub fn k_grid(n_cells: usize) -> Vec<f64> {
    let d = CELL_SPACING;
    (0..n_cells)
        .map(|m| {
            let k = 2.0 * PI * m as f64 / (n_cells as f64 * d);
            if k > PI / d + 1e-12 {
                k - 2.0 * PI / d
            } else {
                k
            }
        })
        .collect()
}

/// FFT angular frequencies for `n` samples at spacing `dt`, in FFT index order.
pub fn omega_grid(n: usize, dt: f64) -> Vec<f64> {
    (0..n)
        .map(|l| {
            let f = if 2 * l < n { l as f64 } else { l as f64 - n as f64 };
            2.0 * PI * f / (n as f64 * dt)
        })
        .collect()
}

/// Precomputed phases and FFT plans for one lattice and sample grid.
pub struct SpectrumPlan {
    n_cells: usize,
    n_sites: usize,
    n_t: usize,
    sample_interval: f64,
    t0: f64,
    hann: bool,
    k: Vec<f64>,
    omega: Vec<f64>,
    // [k][site]
    phase: Vec<Complex64>,
    window: Vec<f64>,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl SpectrumPlan {
    pub fn new(
        lattice: &LatticeGraph,
        n_samples: usize,
        sample_interval: f64,
        t0: f64,
        hann: bool,
    ) -> Result<Self, ObservableError> {
        let n_cells = match lattice.geometry() {
            Geometry::Quasi1d { cells, .. } => cells,
            _ => return Err(ObservableError::NotQuasi1d),
        };
        let k = k_grid(n_cells);
        let mut phase = Vec::with_capacity(n_cells * lattice.n_sites());
        for &km in &k {
            for s in lattice.sites() {
                phase.push(Complex64::from_polar(1.0, km * s.position[0]));
            }
        }
        let window = (0..n_samples)
            .map(|i| if hann { 0.5 - 0.5 * (2.0 * PI * i as f64 / n_samples as f64).cos() } else { 1.0 })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(SpectrumPlan {
            n_cells,
            n_sites: lattice.n_sites(),
            n_t: n_samples,
            sample_interval,
            t0,
            hann,
            k,
            omega: omega_grid(n_samples, sample_interval),
            phase,
            window,
            inverse: planner.plan_fft_inverse(n_samples),
            forward: planner.plan_fft_forward(n_samples),
        })
    }

    pub fn accumulator(&self) -> SpectrumAccumulator {
        let len = self.n_cells * self.n_t;
        SpectrumAccumulator {
            re: vec![0.0; len],
            im: vec![0.0; len],
            re2: vec![0.0; len],
            im2: vec![0.0; len],
            count: 0,
        }
    }

    /// `alpha~(k, w) beta~(k, w)` for one trajectory, `[k][w]` in index order.
    ///
    /// The `exp(+-i w t0)` phases of the two transforms cancel in the product
    /// and are left out.
    pub fn trajectory_product(&self, rec: &TrajectoryRecord) -> Result<Vec<Complex64>, ObservableError> {
        if rec.n_sites != self.n_sites || rec.n_samples != self.n_t {
            return Err(ObservableError::Shape);
        }
        let (nk, nt) = (self.n_cells, self.n_t);
        let mut a = vec![Complex64::new(0.0, 0.0); nk * nt];
        let mut b = a.clone();
        for t in 0..nt {
            let (al, be) = (rec.alpha_at(t), rec.beta_at(t));
            let w = self.window[t];
            for m in 0..nk {
                let ph = &self.phase[m * self.n_sites..(m + 1) * self.n_sites];
                let (mut sa, mut sb) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
                for s in 0..self.n_sites {
                    sa += al[s] * ph[s];
                    sb += be[s] * ph[s].conj();
                }
                a[m * nt + t] = sa * w;
                b[m * nt + t] = sb * w;
            }
        }
        for m in 0..nk {
            self.inverse.process(&mut a[m * nt..(m + 1) * nt]);
            self.forward.process(&mut b[m * nt..(m + 1) * nt]);
        }
        let norm = 1.0 / (nk as f64 * nt as f64);
        Ok(a.iter().zip(&b).map(|(x, y)| x * y * (norm * norm)).collect())
    }

    pub fn add_record(&self, acc: &mut SpectrumAccumulator, rec: &TrajectoryRecord) -> Result<(), ObservableError> {
        let prod = self.trajectory_product(rec)?;
        for (i, z) in prod.iter().enumerate() {
            acc.re[i] += z.re;
            acc.im[i] += z.im;
            acc.re2[i] += z.re * z.re;
            acc.im2[i] += z.im * z.im;
        }
        acc.count += 1;
        Ok(())
    }

    /// Trajectory-averaged spectrum with both axes sorted ascending.
    pub fn finish(&self, acc: &SpectrumAccumulator) -> Result<SpectrumGrid, ObservableError> {
        if acc.count == 0 {
            return Err(ObservableError::Empty);
        }
        let n = acc.count as f64;
        let err = |s: f64, s2: f64| {
            if acc.count < 2 {
                f64::NAN
            } else {
                let mean = s / n;
                ((s2 / n - mean * mean).max(0.0) / (n - 1.0)).sqrt()
            }
        };
        let mut k_order: Vec<usize> = (0..self.n_cells).collect();
        k_order.sort_by(|&x, &y| self.k[x].total_cmp(&self.k[y]));
        let mut w_order: Vec<usize> = (0..self.n_t).collect();
        w_order.sort_by(|&x, &y| self.omega[x].total_cmp(&self.omega[y]));
        let mut g = SpectrumGrid {
            k: k_order.iter().map(|&m| self.k[m]).collect(),
            omega: w_order.iter().map(|&l| self.omega[l]).collect(),
            re: Vec::new(),
            im: Vec::new(),
            re_err: Vec::new(),
            im_err: Vec::new(),
            n_cells: self.n_cells,
            n_t: self.n_t,
            d: CELL_SPACING,
            t0: self.t0,
            sample_interval: self.sample_interval,
            hann: self.hann,
            trajectories: acc.count,
        };
        for &m in &k_order {
            let row = |v: &Vec<f64>| w_order.iter().map(|&l| v[m * self.n_t + l] / n).collect::<Vec<_>>();
            g.re.push(row(&acc.re));
            g.im.push(row(&acc.im));
            g.re_err.push(w_order.iter().map(|&l| err(acc.re[m * self.n_t + l], acc.re2[m * self.n_t + l])).collect());
            g.im_err.push(w_order.iter().map(|&l| err(acc.im[m * self.n_t + l], acc.im2[m * self.n_t + l])).collect());
        }
        Ok(g)
    }
}

/// Per-trajectory sums of the spectrum product.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumAccumulator {
    re: Vec<f64>,
    im: Vec<f64>,
    re2: Vec<f64>,
    im2: Vec<f64>,
    count: u64,
}

impl SpectrumAccumulator {
    pub fn merge(&mut self, other: &SpectrumAccumulator) {
        for (a, b) in [
            (&mut self.re, &other.re),
            (&mut self.im, &other.im),
            (&mut self.re2, &other.re2),
            (&mut self.im2, &other.im2),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Occupation spectrum on an `N x N_t` grid, rows indexed by `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumGrid {
    pub k: Vec<f64>,
    pub omega: Vec<f64>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub re_err: Vec<Vec<f64>>,
    pub im_err: Vec<Vec<f64>>,
    pub n_cells: usize,
    pub n_t: usize,
    pub d: f64,
    pub t0: f64,
    pub sample_interval: f64,
    pub hann: bool,
    pub trajectories: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RidgeSummary {
    /// Weighted frequency centroid of the strongest peak at each `k`.
    pub centroids: Vec<f64>,
    /// `max - min` of the centroids over `k`.
    pub spread: f64,
}

impl SpectrumGrid {
    /// Locate the dominant ridge: at each `k` take the arg-max of `Re n~` and
    /// the weighted centroid of the positive weight within 2 bins of it.
    pub fn ridge(&self) -> RidgeSummary {
        let centroids: Vec<f64> = self
            .re
            .iter()
            .map(|row| {
                let top = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                let lo = top.saturating_sub(2);
                let hi = (top + 2).min(row.len() - 1);
                let (mut wsum, mut acc) = (0.0, 0.0);
                for l in lo..=hi {
                    let w = row[l].max(0.0);
                    wsum += w;
                    acc += w * self.omega[l];
                }
                if wsum > 0.0 {
                    acc / wsum
                } else {
                    self.omega[top]
                }
            })
            .collect();
        let spread = centroids.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - centroids.iter().cloned().fold(f64::INFINITY, f64::min);
        RidgeSummary { centroids, spread }
    }

    /// Grid mean of `Im n~` and its standard error.
    pub fn imag_mean(&self) -> Estimate {
        let cells = (self.n_cells * self.n_t) as f64;
        let sum: f64 = self.im.iter().flatten().sum();
        let var: f64 = self.im_err.iter().flatten().map(|e| e * e).sum();
        Estimate { value: sum / cells, stderr: var.sqrt() / cells }
    }
}

/// Bloch bands of the quasi-1D Lieb ribbon, ascending, for each `k`.
///
/// Basis `(B, C, A)`: on-site `-Delta_s`, `B-C` hopping `-J` and `B-A`
/// hopping `-2J cos(k d / 2)`.
pub fn single_particle_bands(detuning: &SublatticeDetuning, j: f64, ks: &[f64]) -> Vec<[f64; 3]> {
    ks.iter()
        .map(|&k| {
            let t = -2.0 * j * (k * CELL_SPACING / 2.0).cos();
            let h = Matrix3::new(-detuning.b, -j, t, -j, -detuning.c, 0.0, t, 0.0, -detuning.a);
            let mut e: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
            e.sort_by(f64::total_cmp);
            [e[0], e[1], e[2]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n_sites: usize, samples: &[(Vec<Complex64>, Vec<Complex64>)], index: usize) -> TrajectoryRecord {
        let mut r = TrajectoryRecord::new(index, 0.0, 0.1, n_sites, samples.len());
        for (i, (a, b)) in samples.iter().enumerate() {
            r.set_sample(i, a, b);
        }
        r
    }

    fn noisy_record(index: usize, len: usize) -> TrajectoryRecord {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(index as u64);
        let samples: Vec<_> = (0..len)
            .map(|_| {
                let a: Vec<Complex64> =
                    (0..2).map(|_| Complex64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5))).collect();
                let b: Vec<Complex64> =
                    a.iter().map(|z| z.conj() + Complex64::new(rng.gen_range(-0.1..0.1), 0.0)).collect();
                (a, b)
            })
            .collect();
        record(2, &samples, index)
    }

    #[test]
    fn constant_fields_give_coherent_statistics() {
        let a = vec![Complex64::new(1.0, 2.0)];
        let b = vec![Complex64::new(1.0, -2.0)];
        let samples = vec![(a, b); 40];
        let layout = ObservableLayout::new(1, 0.1, 1.0, 1.0, vec![0]).unwrap();
        let mut acc = ObservableAccumulator::new(layout);
        for k in 0..3 {
            acc.add_record(&record(1, &samples, k)).unwrap();
        }
        assert_eq!(acc.units(), 12);
        let n = acc.occupation(0).unwrap();
        assert_eq!(n.value, 5.0);
        assert_eq!(n.stderr, 0.0);
        let g = acc.g2_zero(0).unwrap().unwrap();
        assert_eq!(g.value, 1.0);
        for (_, e) in acc.g2_tau(0).unwrap() {
            assert_eq!(e.unwrap().value, 1.0);
        }
    }

    #[test]
    fn vacuum_has_undefined_g2() {
        let z = vec![Complex64::new(0.0, 0.0)];
        let samples = vec![(z.clone(), z); 20];
        let layout = ObservableLayout::new(1, 0.1, 0.5, 0.0, vec![]).unwrap();
        let mut acc = ObservableAccumulator::new(layout);
        acc.add_record(&record(1, &samples, 0)).unwrap();
        assert_eq!(acc.occupation(0).unwrap().value, 0.0);
        assert_eq!(acc.g2_zero(0).unwrap(), None);
        assert_eq!(acc.g2_tau(0).unwrap_err(), ObservableError::NoCurve(0));
    }

    #[test]
    fn empty_accumulator_errors() {
        let layout = ObservableLayout::new(2, 0.1, 0.5, 0.0, vec![]).unwrap();
        let acc = ObservableAccumulator::new(layout);
        assert_eq!(acc.occupation(0).unwrap_err(), ObservableError::Empty);
        assert_eq!(acc.occupation(5).unwrap_err(), ObservableError::BadSite(5));
    }

    #[test]
    fn layout_validation() {
        assert_eq!(ObservableLayout::with_lags(1, 0.1, 1.0, vec![1, 2], vec![]).unwrap_err(), ObservableError::BadLags);
        assert_eq!(
            ObservableLayout::with_lags(1, 0.1, 1.0, vec![0, 2, 2], vec![]).unwrap_err(),
            ObservableError::BadLags
        );
        assert_eq!(ObservableLayout::new(1, 0.1, 1.0, 1.0, vec![3]).unwrap_err(), ObservableError::BadSite(3));
        let l = ObservableLayout::new(1, 0.05, 5.0, 6.0, vec![0]).unwrap();
        assert_eq!(l.batch_len, 100);
        assert_eq!(l.lags.len(), 121);
        assert!(l.check_window(100).is_err());
    }

    #[test]
    fn zero_delay_matches_equal_time_estimator() {
        let layout = ObservableLayout::new(2, 0.1, 1.0, 2.0, vec![0, 1]).unwrap();
        let mut acc = ObservableAccumulator::new(layout);
        for k in 0..5 {
            acc.add_record(&noisy_record(k, 60)).unwrap();
        }
        for s in 0..2 {
            let g0 = acc.g2_zero(s).unwrap().unwrap();
            let curve = acc.g2_tau(s).unwrap();
            assert_eq!(curve[0].1.unwrap(), g0);
            assert!(g0.stderr > 0.0 && g0.stderr.is_finite());
        }
    }

    #[test]
    fn merge_is_exact_in_any_order() {
        let layout = ObservableLayout::new(2, 0.1, 1.0, 2.0, vec![1]).unwrap();
        let recs: Vec<_> = (0..6).map(|k| noisy_record(k, 50)).collect();
        let mut all = ObservableAccumulator::new(layout.clone());
        recs.iter().for_each(|r| all.add_record(r).unwrap());
        let mut left = ObservableAccumulator::new(layout.clone());
        let mut right = ObservableAccumulator::new(layout.clone());
        recs[..2].iter().for_each(|r| left.add_record(r).unwrap());
        recs[2..].iter().rev().for_each(|r| right.add_record(r).unwrap());
        let merged = right.merged(left);
        for s in 0..2 {
            assert_eq!(all.occupation(s).unwrap(), merged.occupation(s).unwrap());
            assert_eq!(all.g2_zero(s).unwrap(), merged.g2_zero(s).unwrap());
        }
        assert_eq!(all.g2_tau(1).unwrap(), merged.g2_tau(1).unwrap());
    }

    #[test]
    fn stderr_matches_plain_batch_means() {
        // equal-size units: the influence formula reduces to the textbook standard error
        let layout = ObservableLayout::new(2, 0.1, 1.0, 0.0, vec![]).unwrap();
        let mut acc = ObservableAccumulator::new(layout);
        let recs: Vec<_> = (0..4).map(|k| noisy_record(k, 30)).collect();
        recs.iter().for_each(|r| acc.add_record(r).unwrap());
        let mut means = Vec::new();
        for r in &recs {
            for b in 0..3 {
                let s: f64 = (b * 10..b * 10 + 10).map(|i| (r.alpha_at(i)[0] * r.beta_at(i)[0]).re).sum();
                means.push(s / 10.0);
            }
        }
        let k = means.len() as f64;
        let mu = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (k - 1.0);
        let n = acc.occupation(0).unwrap();
        assert!((n.value - mu).abs() < 1e-12);
        assert!((n.stderr - (var / k).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn period_of_synthetic_cosine() {
        let t_period = 1.3;
        let taus: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let vals: Vec<f64> = taus.iter().map(|t| 1.0 - (2.0 * PI * t / t_period).cos()).collect();
        let p = oscillation_period(&taus, &vals).unwrap();
        assert!((p - t_period).abs() <= 0.05 + 1e-12, "{p}");
        let flat = vec![1.0; 200];
        assert_eq!(oscillation_period(&taus, &flat).unwrap_err(), ObservableError::NoMaxima);
        assert_eq!(oscillation_period(&taus[1..], &vals[1..]).unwrap_err(), ObservableError::BadCurve);
    }

    #[test]
    fn mirrored_curve_is_symmetric() {
        let c = vec![(0.0, 1), (0.5, 2), (1.0, 3)];
        let m = mirror_curve(&c);
        assert_eq!(m, vec![(-1.0, 3), (-0.5, 2), (0.0, 1), (0.5, 2), (1.0, 3)]);
    }

    #[test]
    fn grids() {
        let k = k_grid(4);
        assert_eq!(k, vec![0.0, PI / 4.0, PI / 2.0, -PI / 4.0]);
        let w = omega_grid(4, 0.5);
        assert_eq!(w, vec![0.0, PI, -2.0 * PI, -PI]);
    }

    #[test]
    fn flat_band_for_uniform_detuning() {
        let ks: Vec<f64> = k_grid(20);
        let det = SublatticeDetuning::uniform(-0.2);
        for (k, e) in ks.iter().zip(single_particle_bands(&det, 3.0, &ks)) {
            assert!((e[1] - 0.2).abs() < 1e-12, "k={k}");
            let r = 3.0 * (1.0 + 4.0 * (k * CELL_SPACING / 2.0).cos().powi(2)).sqrt();
            assert!((e[0] - (0.2 - r)).abs() < 1e-12 && (e[2] - (0.2 + r)).abs() < 1e-12);
        }
        let zero = single_particle_bands(&SublatticeDetuning::uniform(0.0), 1.0, &[0.0])[0];
        assert!(
            (zero[0] + 5f64.sqrt()).abs() < 1e-12 && zero[1].abs() < 1e-12 && (zero[2] - 5f64.sqrt()).abs() < 1e-12
        );
    }

    #[test]
    fn detuned_c_sites_remove_the_flat_band() {
        let ks = k_grid(20);
        let det = SublatticeDetuning { a: -0.2, b: -0.2, c: -5.0 };
        let mid: Vec<f64> = single_particle_bands(&det, 3.0, &ks).iter().map(|e| e[1]).collect();
        let spread = mid.iter().cloned().fold(f64::MIN, f64::max) - mid.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 1.0, "{spread}");
    }
}
