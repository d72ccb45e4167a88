//! Scenario configuration, figure presets, parameter sweeps and result files.
//!
//! Configs are TOML. Energies are given in units of `model.gamma` and times
//! in units of `1 / model.gamma`; everything written back out uses the same
//! units.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, AnalyticError, OptimalParams};
use crate::integrator::{
    self, DumpHeader, DumpWriter, EnsembleReport, IntegrationConfig, IntegratorError, Reduction, Scheme, SdeSystem,
};
use crate::lattice::{self, Geometry, LatticeError, LatticeGraph, SiteId, Sublattice};
use crate::model::{self, DriveScheme, ModelError, ModelParams, SublatticeDetuning};
use crate::observables::{
    self, Estimate, ObservableAccumulator, ObservableError, ObservableLayout, RidgeSummary, SpectrumAccumulator,
    SpectrumGrid, SpectrumPlan,
};
use crate::oracle::{Oracle, OracleConfig, OracleError, SteadyStateResult};

pub const SUMMARY_SCHEMA_ID: &str = "ddbh-summary/1";
pub const SITES_HEADER: &str = "site,label,sublattice,x,y,n,n_err,n_imag,n_imag_err,g2,g2_err";
pub const G2_TAU_HEADER: &str = "site,label,tau,g2,g2_err";
pub const SPECTRUM_HEADER: &str = "k,omega,re,im,re_err,im_err";
pub const BANDS_HEADER: &str = "k,band_lower,band_middle,band_upper";
pub const SWEEP_HEADER_TAIL: &str = "site,n,n_err,g2,g2_err,status";
pub const OPTIMIZE_HEADER: &str = "u,gamma,delta_opt,j_opt,residual_re,residual_im";

pub const PRESETS: &[&str] =
    &["fig3", "fig3-lowdrive", "fig4", "fig6", "fig8", "fig9-flat", "fig9-dispersive", "fig10"];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("unknown preset `{0}`; known presets: {known}", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Chain,
    Quasi1d,
    Lieb2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default = "yes")]
    pub smooth: bool,
    pub hopping: f64,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "unit")]
    pub gamma: f64,
    pub u: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_c: Option<f64>,
    /// Per-site detuning keyed by site label, e.g. `"3C" = -1.0`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub site_delta: BTreeMap<String, f64>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DriveKind {
    #[default]
    None,
    Single,
    Background,
    TwoSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    #[serde(default)]
    pub kind: DriveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<String>>,
    #[serde(default)]
    pub f: f64,
    /// Drive phase in radians.
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub f_bg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_burn")]
    pub t_burn: f64,
    #[serde(default = "d_end")]
    pub t_end: f64,
    #[serde(default = "d_si")]
    pub sample_interval: f64,
    #[serde(default = "d_traj")]
    pub trajectories: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "d_sub")]
    pub noise_substeps: u32,
}

fn d_dt() -> f64 {
    1e-3
}
fn d_burn() -> f64 {
    20.0
}
fn d_end() -> f64 {
    120.0
}
fn d_si() -> f64 {
    0.05
}
fn d_traj() -> usize {
    2000
}
fn d_sub() -> u32 {
    1
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        IntegrationSpec {
            dt: d_dt(),
            t_burn: d_burn(),
            t_end: d_end(),
            sample_interval: d_si(),
            trajectories: d_traj(),
            scheme: Scheme::SemiImplicit,
            noise_substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    #[serde(default = "d_tau")]
    pub tau_max: f64,
    /// Sites that get a `g2(tau)` curve; all sites when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_sites: Option<Vec<String>>,
    #[serde(default = "d_batch")]
    pub batch_time: f64,
    #[serde(default)]
    pub spectrum: bool,
    #[serde(default)]
    pub hann: bool,
}

fn d_tau() -> f64 {
    6.0
}
fn d_batch() -> f64 {
    5.0
}

impl Default for ObservableSpec {
    fn default() -> Self {
        ObservableSpec { tau_max: d_tau(), curve_sites: None, batch_time: d_batch(), spectrum: false, hann: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "d_cut")]
    pub cutoff: usize,
    /// Cap on the total boson number; 0 disables the cap.
    #[serde(default = "d_cut")]
    pub total_cap: usize,
    #[serde(default = "d_tol")]
    pub tolerance: f64,
}

fn d_cut() -> usize {
    10
}
fn d_tol() -> f64 {
    1e-12
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { cutoff: d_cut(), total_cap: d_cut(), tolerance: d_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    pub geometry: GeometrySpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub drive: DriveSpec,
    #[serde(default)]
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub observables: ObservableSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
}

fn d_seed() -> u64 {
    1
}

/// A config resolved into physical objects. Energies and times are scaled by `gamma`.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub lattice: LatticeGraph,
    pub model: ModelParams,
    pub drive: DriveScheme,
    pub integration: IntegrationConfig,
    pub curve_sites: Vec<usize>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        let g = self.model.gamma;
        if !(g > 0.0 && g.is_finite()) {
            return config_err(format!("model.gamma must be positive, got {g}"));
        }
        let geo = &self.geometry;
        let need = |v: Option<usize>, field: &str| match v {
            Some(x) => Ok(x),
            None => config_err(format!("geometry.{field} is required for this geometry kind")),
        };
        let j = geo.hopping * g;
        let lattice = match geo.kind {
            GeometryKind::Chain => lattice::build_chain(need(geo.sites, "sites")?, j)?,
            GeometryKind::Quasi1d => lattice::build_quasi1d_lieb(need(geo.cells, "cells")?, geo.smooth, j)?,
            GeometryKind::Lieb2d => lattice::build_lieb_2d(need(geo.nx, "nx")?, need(geo.ny, "ny")?, geo.smooth, j)?,
        };
        let m = &self.model;
        let det = SublatticeDetuning {
            a: m.delta_a.unwrap_or(m.delta) * g,
            b: m.delta_b.unwrap_or(m.delta) * g,
            c: m.delta_c.unwrap_or(m.delta) * g,
        };
        let mut model = ModelParams::new(m.u * g, g, det).map_err(|e| ScenarioError::Config(format!("model: {e}")))?;
        for (label, &d) in &m.site_delta {
            let id = site(&lattice, label, "model.site_delta")?;
            model = model.with_site_detuning(id, d * g);
        }
        let dr = &self.drive;
        let f = Complex64::from_polar(dr.f * g, dr.phase);
        let drive = match dr.kind {
            DriveKind::None => DriveScheme::zero(&lattice),
            DriveKind::Single => {
                let t = target(&lattice, dr)?;
                model::drive_single(&lattice, t, f)?
            }
            DriveKind::Background => {
                let t = target(&lattice, dr)?;
                model::drive_with_background(&lattice, t, f, Complex64::new(dr.f_bg * g, 0.0))?
            }
            DriveKind::TwoSite => {
                let ts = match &dr.targets {
                    Some(v) if v.len() == 2 => v,
                    _ => return config_err("drive.targets must list exactly two sites for kind = two-site"),
                };
                let a = site(&lattice, &ts[0], "drive.targets")?;
                let b = site(&lattice, &ts[1], "drive.targets")?;
                model::drive_two_site(&lattice, [a, b], f)?
            }
        };
        let it = &self.integration;
        let integration = IntegrationConfig {
            dt: it.dt / g,
            t_burn: it.t_burn / g,
            t_end: it.t_end / g,
            sample_interval: it.sample_interval / g,
            n_trajectories: it.trajectories,
            seed: self.seed,
            scheme: it.scheme,
            noise_substeps: it.noise_substeps,
        };
        let plan = integration.validate().map_err(|e| ScenarioError::Config(format!("integration: {e}")))?;
        let ob = &self.observables;
        let curve_sites = match &ob.curve_sites {
            None => (0..lattice.n_sites()).collect(),
            Some(v) => {
                v.iter().map(|l| site(&lattice, l, "observables.curve_sites").map(|s| s.0)).collect::<Result<_, _>>()?
            }
        };
        if !(ob.batch_time > 0.0) {
            return config_err("observables.batch_time must be positive");
        }
        if !(ob.tau_max >= 0.0) {
            return config_err("observables.tau_max must be non-negative");
        }
        let window = (plan.n_samples - 1) as f64 * it.sample_interval;
        if ob.tau_max > window + 1e-9 {
            return config_err(format!("observables.tau_max {} exceeds the sampled window {window}", ob.tau_max));
        }
        if ob.spectrum && !matches!(lattice.geometry(), Geometry::Quasi1d { .. }) {
            return config_err("observables.spectrum needs geometry.kind = quasi1d");
        }
        Ok(Scenario { config: self.clone(), lattice, model, drive, integration, curve_sites })
    }
}

fn site(lattice: &LatticeGraph, label: &str, field: &str) -> Result<SiteId, ScenarioError> {
    lattice
        .site_by_label(label)
        .map_err(|_| ScenarioError::Config(format!("{field}: no site `{label}` in this lattice")))
}

fn target(lattice: &LatticeGraph, dr: &DriveSpec) -> Result<SiteId, ScenarioError> {
    match &dr.target {
        Some(t) => site(lattice, t, "drive.target"),
        None => config_err("drive.target is required for this drive kind"),
    }
}

fn base_config(geometry: GeometrySpec, u: f64, delta: f64, drive: DriveSpec) -> ScenarioConfig {
    ScenarioConfig {
        name: None,
        seed: 1,
        geometry,
        model: ModelSpec {
            gamma: 1.0,
            u,
            delta,
            delta_a: None,
            delta_b: None,
            delta_c: None,
            site_delta: BTreeMap::new(),
        },
        drive,
        integration: IntegrationSpec::default(),
        observables: ObservableSpec::default(),
        oracle: OracleSpec::default(),
    }
}

fn geom(kind: GeometryKind, hopping: f64) -> GeometrySpec {
    GeometrySpec { kind, sites: None, cells: None, nx: None, ny: None, smooth: true, hopping }
}

fn single(target: &str, f: f64) -> DriveSpec {
    DriveSpec { kind: DriveKind::Single, target: Some(target.into()), f, ..Default::default() }
}

/// Parameter sets of the reproduced figures.
pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let curves = |v: &[&str]| Some(v.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    let mut c = match name {
        "fig3" | "fig3-lowdrive" => {
            let f = if name == "fig3" { 1.0 } else { 0.5 };
            let g = GeometrySpec { sites: Some(3), ..geom(GeometryKind::Chain, 2.775) };
            base_config(g, 0.1, -0.28, single("1C", f))
        }
        "fig4" => {
            let g = GeometrySpec { sites: Some(5), ..geom(GeometryKind::Chain, 1.5) };
            let mut c = base_config(g, 0.1, -0.2, single("1A", 1.5));
            c.observables.curve_sites = curves(&["1B", "2B"]);
            c
        }
        "fig6" => {
            let g = GeometrySpec { cells: Some(5), ..geom(GeometryKind::Quasi1d, 3.0) };
            let mut c = base_config(g, 0.1, -0.2, single("3C", 3.0));
            c.observables.curve_sites = curves(&["3B"]);
            c
        }
        "fig8" => {
            let g = GeometrySpec { cells: Some(5), ..geom(GeometryKind::Quasi1d, 1.5) };
            let d = DriveSpec {
                kind: DriveKind::Background,
                target: Some("3C".into()),
                f: 1.5,
                f_bg: 0.8,
                ..Default::default()
            };
            let mut c = base_config(g, 0.1, -0.2, d);
            c.observables.curve_sites = curves(&["3B"]);
            c
        }
        "fig9-flat" | "fig9-dispersive" => {
            let g = GeometrySpec { cells: Some(20), ..geom(GeometryKind::Quasi1d, 3.0) };
            let mut c = base_config(g, 0.1, -0.2, single("11C", 3.0));
            if name == "fig9-dispersive" {
                c.model.delta_c = Some(-5.0);
            }
            c.observables.curve_sites = curves(&["11B"]);
            c.observables.spectrum = true;
            c
        }
        "fig10" => {
            let g = GeometrySpec { nx: Some(5), ny: Some(5), ..geom(GeometryKind::Lieb2d, 3.0) };
            let d = DriveSpec {
                kind: DriveKind::TwoSite,
                targets: Some(vec!["(3,3)C".into(), "(3,4)C".into()]),
                f: 3.0,
                ..Default::default()
            };
            let mut c = base_config(g, 0.1, -0.2, d);
            c.observables.curve_sites = curves(&["(3,3)B"]);
            c
        }
        other => return Err(ScenarioError::UnknownPreset(other.to_string())),
    };
    c.name = Some(name.to_string());
    Ok(c)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub deterministic: bool,
    pub workers: Option<usize>,
    /// Write every trajectory to this raw dump file.
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteRow {
    pub site: usize,
    pub label: String,
    pub sublattice: Sublattice,
    pub x: f64,
    pub y: f64,
    pub n: Estimate,
    pub n_imag: Option<Estimate>,
    pub g2: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub site: usize,
    pub label: String,
    /// `(tau, g2)` for `tau >= 0`, `tau` in units of `1 / gamma`.
    pub points: Vec<(f64, Option<Estimate>)>,
}

impl Curve {
    /// Oscillation period (units of `1 / gamma`) from the point values.
    pub fn period(&self) -> Result<f64, ObservableError> {
        let taus: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        let vals: Vec<f64> = self.points.iter().map(|p| p.1.map_or(f64::NAN, |e| e.value)).collect();
        observables::oscillation_period(&taus, &vals)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub kind: &'static str,
    pub sites: Vec<SiteRow>,
    pub curves: Vec<Curve>,
    pub spectrum: Option<SpectrumGrid>,
    pub bands: Option<Vec<(f64, [f64; 3])>>,
    pub ridge: Option<RidgeSummary>,
    pub report: Option<EnsembleReport>,
    pub oracle: Option<SteadyStateResult>,
    pub runtime_seconds: f64,
    pub lattice_hash: u64,
    pub config: ScenarioConfig,
}

impl SimulationResult {
    pub fn site(&self, label: &str) -> Option<&SiteRow> {
        self.sites.iter().find(|s| s.label == label)
    }

    pub fn curve(&self, label: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

struct Acc {
    obs: ObservableAccumulator,
    spec: Option<SpectrumAccumulator>,
}

/// Run the positive-P ensemble for a resolved scenario.
pub fn simulate(sc: &Scenario, opts: &RunOptions) -> Result<SimulationResult, ScenarioError> {
    let start = Instant::now();
    let g = sc.model.gamma;
    let cfg = &sc.integration;
    let plan = cfg.validate()?;
    let ob = &sc.config.observables;
    let layout = ObservableLayout::new(
        sc.lattice.n_sites(),
        cfg.sample_interval,
        ob.batch_time / g,
        ob.tau_max / g,
        sc.curve_sites.clone(),
    )?;
    let spec_plan = if ob.spectrum {
        Some(SpectrumPlan::new(&sc.lattice, plan.n_samples, cfg.sample_interval, cfg.t_burn, ob.hann)?)
    } else {
        None
    };
    let sys = SdeSystem::new(&sc.lattice, &sc.model, &sc.drive)?;
    let dump = match &opts.dump {
        Some(path) => {
            let header = DumpHeader {
                lattice_hash: format!("{:016x}", sc.lattice.fingerprint()),
                n_sites: sc.lattice.n_sites(),
                n_samples: plan.n_samples,
                seed: cfg.seed,
                config: cfg.clone(),
            };
            Some(DumpWriter::new(BufWriter::new(fs::File::create(path)?), header)?)
        }
        None => None,
    };
    let dump_err = std::sync::Mutex::new(None::<IntegratorError>);
    let (acc, report) = integrator::run_ensemble(
        &sys,
        cfg,
        Reduction { deterministic: opts.deterministic, workers: opts.workers },
        || Acc { obs: ObservableAccumulator::new(layout.clone()), spec: spec_plan.as_ref().map(|p| p.accumulator()) },
        |acc, rec| {
            acc.obs.add_record(rec).expect("layout checked against the sample grid");
            if let (Some(p), Some(s)) = (&spec_plan, acc.spec.as_mut()) {
                p.add_record(s, rec).expect("spectrum plan matches the sample grid");
            }
            if let Some(w) = &dump {
                if let Err(e) = w.write_record(rec) {
                    dump_err.lock().unwrap().get_or_insert(e);
                }
            }
        },
        |mut a, b| {
            a.obs.merge(&b.obs);
            if let (Some(x), Some(y)) = (a.spec.as_mut(), b.spec.as_ref()) {
                x.merge(y);
            }
            a
        },
    )?;
    if let Some(e) = dump_err.into_inner().unwrap() {
        return Err(e.into());
    }
    if let Some(w) = dump {
        w.finish()?;
    }
    let sites = site_rows(&sc.lattice, |j| {
        Ok((acc.obs.occupation(j)?, Some(acc.obs.occupation_imag(j)?), acc.obs.g2_zero(j)?))
    })?;
    let mut curves = Vec::new();
    for &j in &sc.curve_sites {
        let points = acc.obs.g2_tau(j)?.into_iter().map(|(t, e)| (t * g, e)).collect();
        curves.push(Curve { site: j, label: sc.lattice.sites()[j].label(), points });
    }
    let (spectrum, bands, ridge) = match (&spec_plan, &acc.spec) {
        (Some(p), Some(s)) => {
            let mut grid = p.finish(s)?;
            grid.omega.iter_mut().for_each(|w| *w /= g);
            let unit = sc.model.in_gamma_units();
            let bands = observables::single_particle_bands(&unit.detuning, sc.config.geometry.hopping, &grid.k);
            let ridge = grid.ridge();
            (Some(grid.clone()), Some(grid.k.iter().copied().zip(bands).collect()), Some(ridge))
        }
        _ => (None, None, None),
    };
    Ok(SimulationResult {
        kind: "simulate",
        sites,
        curves,
        spectrum,
        bands,
        ridge,
        report: Some(report),
        oracle: None,
        runtime_seconds: start.elapsed().as_secs_f64(),
        lattice_hash: sc.lattice.fingerprint(),
        config: sc.config.clone(),
    })
}

type SiteEstimates = (Estimate, Option<Estimate>, Option<Estimate>);

fn site_rows(
    lattice: &LatticeGraph,
    mut f: impl FnMut(usize) -> Result<SiteEstimates, ScenarioError>,
) -> Result<Vec<SiteRow>, ScenarioError> {
    lattice
        .sites()
        .iter()
        .map(|s| {
            let (n, n_imag, g2) = f(s.id.0)?;
            Ok(SiteRow {
                site: s.id.0,
                label: s.label(),
                sublattice: s.sublattice,
                x: s.position[0],
                y: s.position[1],
                n,
                n_imag,
                g2,
            })
        })
        .collect()
}

pub fn oracle_config(spec: &OracleSpec) -> OracleConfig {
    OracleConfig {
        cutoff: spec.cutoff,
        total_cap: if spec.total_cap == 0 { None } else { Some(spec.total_cap) },
        tolerance: spec.tolerance,
        ..Default::default()
    }
}

/// Exact steady state and regression `g2(tau)` for a small scenario.
pub fn oracle_run(sc: &Scenario) -> Result<SimulationResult, ScenarioError> {
    let start = Instant::now();
    let g = sc.model.gamma;
    let o = Oracle::new(&sc.lattice, &sc.model, &sc.drive, oracle_config(&sc.config.oracle))?;
    let ss = o.steady_state()?;
    let exact = |v: f64| Estimate { value: v, stderr: 0.0 };
    let sites = site_rows(&sc.lattice, |j| Ok((exact(ss.result.n[j]), None, ss.result.g2[j].map(exact))))?;
    let step = sc.config.integration.sample_interval;
    let n_tau = (sc.config.observables.tau_max / step + 1e-9).floor() as usize;
    let taus: Vec<f64> = (0..=n_tau).map(|i| i as f64 * step).collect();
    let phys: Vec<f64> = taus.iter().map(|t| t / g).collect();
    let raw = o.g2_tau(&ss, &sc.curve_sites, &phys)?;
    let curves = sc
        .curve_sites
        .iter()
        .zip(raw)
        .map(|(&j, c)| Curve {
            site: j,
            label: sc.lattice.sites()[j].label(),
            points: taus.iter().copied().zip(c.into_iter().map(|v| v.map(exact))).collect(),
        })
        .collect();
    Ok(SimulationResult {
        kind: "oracle",
        sites,
        curves,
        spectrum: None,
        bands: None,
        ridge: None,
        report: None,
        oracle: Some(ss.result),
        runtime_seconds: start.elapsed().as_secs_f64(),
        lattice_hash: sc.lattice.fingerprint(),
        config: sc.config.clone(),
    })
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn opt(e: Option<Estimate>) -> (String, String) {
    match e {
        Some(e) => (num(e.value), num(e.stderr)),
        None => (String::new(), String::new()),
    }
}

pub fn sites_csv(rows: &[SiteRow]) -> String {
    let mut s = String::from(SITES_HEADER);
    s.push('\n');
    for r in rows {
        let (ni, nie) = opt(r.n_imag);
        let (g, ge) = opt(r.g2);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.site,
            csv_field(&r.label),
            r.sublattice,
            num(r.x),
            num(r.y),
            num(r.n.value),
            num(r.n.stderr),
            ni,
            nie,
            g,
            ge
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Delay curves mirrored to negative `tau`.
pub fn g2_tau_csv(curves: &[Curve]) -> String {
    let mut s = String::from(G2_TAU_HEADER);
    s.push('\n');
    for c in curves {
        for (t, e) in observables::mirror_curve(&c.points) {
            let (g, ge) = opt(e);
            let _ = writeln!(s, "{},{},{},{},{}", c.site, csv_field(&c.label), num(t), g, ge);
        }
    }
    s
}

pub fn spectrum_csv(grid: &SpectrumGrid) -> String {
    let mut s = String::from(SPECTRUM_HEADER);
    s.push('\n');
    for (m, &k) in grid.k.iter().enumerate() {
        for (l, &w) in grid.omega.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                num(k),
                num(w),
                num(grid.re[m][l]),
                num(grid.im[m][l]),
                num(grid.re_err[m][l]),
                num(grid.im_err[m][l])
            );
        }
    }
    s
}

pub fn bands_csv(bands: &[(f64, [f64; 3])]) -> String {
    let mut s = String::from(BANDS_HEADER);
    s.push('\n');
    for (k, e) in bands {
        let _ = writeln!(s, "{},{},{},{}", num(*k), num(e[0]), num(e[1]), num(e[2]));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct LatticeInfo {
    kind: Geometry,
    n_sites: usize,
    n_edges: usize,
    hash: String,
}

#[derive(Debug, Clone, Serialize)]
struct SiteSummary {
    label: String,
    n: f64,
    n_err: f64,
    g2: Option<f64>,
    g2_err: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryInfo {
    requested: usize,
    used: usize,
    diverged: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    schema: &'static str,
    kind: &'static str,
    name: Option<&'a str>,
    seed: u64,
    lattice: LatticeInfo,
    trajectories: Option<TrajectoryInfo>,
    sites: Vec<SiteSummary>,
    periods: BTreeMap<String, Option<f64>>,
    ridge: Option<&'a RidgeSummary>,
    oracle: Option<&'a SteadyStateResult>,
    runtime_seconds: f64,
    config: &'a ScenarioConfig,
}

pub fn summary_json(res: &SimulationResult, lattice: &LatticeGraph) -> Result<String, ScenarioError> {
    let summary = Summary {
        schema: SUMMARY_SCHEMA_ID,
        kind: res.kind,
        name: res.config.name.as_deref(),
        seed: res.config.seed,
        lattice: LatticeInfo {
            kind: lattice.geometry(),
            n_sites: lattice.n_sites(),
            n_edges: lattice.edges().len(),
            hash: format!("{:016x}", res.lattice_hash),
        },
        trajectories: res.report.as_ref().map(|r| TrajectoryInfo {
            requested: r.n_trajectories,
            used: r.n_used,
            diverged: r.diverged.clone(),
        }),
        sites: res
            .sites
            .iter()
            .map(|s| SiteSummary {
                label: s.label.clone(),
                n: s.n.value,
                n_err: s.n.stderr,
                g2: s.g2.map(|e| e.value),
                g2_err: s.g2.map(|e| e.stderr),
            })
            .collect(),
        periods: res.curves.iter().map(|c| (c.label.clone(), c.period().ok())).collect(),
        ridge: res.ridge.as_ref(),
        oracle: res.oracle.as_ref(),
        runtime_seconds: res.runtime_seconds,
        config: &res.config,
    };
    Ok(serde_json::to_string_pretty(&summary)?)
}

/// Write `sites.csv`, `g2_tau.csv`, `spectrum.csv`, `bands.csv` and `summary.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    res: &SimulationResult,
    lattice: &LatticeGraph,
) -> Result<Vec<PathBuf>, ScenarioError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), ScenarioError> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("sites.csv", sites_csv(&res.sites))?;
    if !res.curves.is_empty() {
        put("g2_tau.csv", g2_tau_csv(&res.curves))?;
    }
    if let Some(g) = &res.spectrum {
        put("spectrum.csv", spectrum_csv(g))?;
    }
    if let Some(b) = &res.bands {
        put("bands.csv", bands_csv(b))?;
    }
    put("summary.json", summary_json(res, lattice)?)?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Cartesian product of all value lists, first parameter slowest.
    #[default]
    Grid,
    /// Lists of equal length stepped together.
    Zip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParam {
    /// Config field such as `model.delta`; join several with `+` to lock them
    /// together, e.g. `drive.f+geometry.hopping`.
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<ScenarioConfig>,
    #[serde(default)]
    pub mode: SweepMode,
    /// Sites reported per point.
    pub sites: Vec<String>,
    pub params: Vec<SweepParam>,
}

pub const SWEEPABLE: &[&str] = &[
    "model.gamma",
    "model.u",
    "model.delta",
    "model.delta_a",
    "model.delta_b",
    "model.delta_c",
    "geometry.hopping",
    "drive.f",
    "drive.f_bg",
    "drive.phase",
    "integration.dt",
];

fn set_field(c: &mut ScenarioConfig, name: &str, v: f64) -> Result<(), ScenarioError> {
    match name {
        "model.gamma" => c.model.gamma = v,
        "model.u" => c.model.u = v,
        "model.delta" => c.model.delta = v,
        "model.delta_a" => c.model.delta_a = Some(v),
        "model.delta_b" => c.model.delta_b = Some(v),
        "model.delta_c" => c.model.delta_c = Some(v),
        "geometry.hopping" => c.geometry.hopping = v,
        "drive.f" => c.drive.f = v,
        "drive.f_bg" => c.drive.f_bg = v,
        "drive.phase" => c.drive.phase = v,
        "integration.dt" => c.integration.dt = v,
        other => return config_err(format!("cannot sweep `{other}`; sweepable fields: {}", SWEEPABLE.join(", "))),
    }
    Ok(())
}

/// Seed of sweep point `index`: the base seed for point 0, a mixed value otherwise.
pub fn point_seed(base: u64, index: usize) -> u64 {
    if index == 0 {
        return base;
    }
    let mut z = base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub seed: u64,
    pub values: Vec<f64>,
    pub outcome: Result<Vec<(String, Estimate, Option<Estimate>)>, String>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn base_config(&self) -> Result<ScenarioConfig, ScenarioError> {
        match (&self.preset, &self.base) {
            (Some(p), None) => preset(p),
            (None, Some(b)) => Ok(b.clone()),
            _ => config_err("sweep needs exactly one of `preset` or `[base]`"),
        }
    }

    /// Parameter values of every point.
    pub fn points(&self) -> Result<Vec<Vec<f64>>, ScenarioError> {
        if self.params.is_empty() {
            return config_err("sweep needs at least one [[params]] entry");
        }
        let mut probe = self.base_config()?;
        for p in &self.params {
            for part in p.name.split('+') {
                set_field(&mut probe, part.trim(), 0.0)?;
            }
            if p.values.is_empty() {
                return config_err(format!("sweep parameter `{}` has no values", p.name));
            }
        }
        match self.mode {
            SweepMode::Zip => {
                let len = self.params[0].values.len();
                if self.params.iter().any(|p| p.values.len() != len) {
                    return config_err("zip sweeps need value lists of equal length");
                }
                Ok((0..len).map(|i| self.params.iter().map(|p| p.values[i]).collect()).collect())
            }
            SweepMode::Grid => {
                let mut out = vec![Vec::new()];
                for p in &self.params {
                    out = out
                        .into_iter()
                        .flat_map(|head| {
                            p.values.iter().map(move |&v| {
                                let mut h = head.clone();
                                h.push(v);
                                h
                            })
                        })
                        .collect();
                }
                Ok(out)
            }
        }
    }

    pub fn config_for(&self, index: usize, values: &[f64]) -> Result<ScenarioConfig, ScenarioError> {
        let mut c = self.base_config()?;
        for (p, &v) in self.params.iter().zip(values) {
            for part in p.name.split('+') {
                set_field(&mut c, part.trim(), v)?;
            }
        }
        c.seed = point_seed(c.seed, index);
        Ok(c)
    }
}

/// Run every sweep point; failures are kept per point.
pub fn sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<Vec<SweepPoint>, ScenarioError> {
    let points = spec.points()?;
    let inner = RunOptions { dump: None, workers: None, ..opts.clone() };
    let run_point = |(index, values): (usize, &Vec<f64>)| -> SweepPoint {
        let seed = spec.config_for(index, values).map(|c| c.seed).unwrap_or_default();
        let outcome = (|| -> Result<_, ScenarioError> {
            let sc = spec.config_for(index, values)?.resolve()?;
            let res = simulate(&sc, &inner)?;
            spec.sites
                .iter()
                .map(|l| {
                    let row =
                        res.site(l).or_else(|| sc.lattice.site_by_label(l).ok().and_then(|id| res.sites.get(id.0)));
                    match row {
                        Some(r) => Ok((r.label.clone(), r.n, r.g2)),
                        None => config_err(format!("sweep.sites: no site `{l}`")),
                    }
                })
                .collect()
        })()
        .map_err(|e| e.to_string());
        SweepPoint { index, seed, values: values.clone(), outcome }
    };
    let work = || points.iter().enumerate().collect::<Vec<_>>().into_par_iter().map(run_point).collect();
    match opts.workers {
        Some(w) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| ScenarioError::Config(e.to_string()))?
            .install(work)),
        None => Ok(work()),
    }
}

pub fn sweep_csv(spec: &SweepSpec, points: &[SweepPoint]) -> String {
    let mut s = String::from("point,seed");
    for p in &spec.params {
        s.push(',');
        s.push_str(&csv_field(&p.name));
    }
    s.push(',');
    s.push_str(SWEEP_HEADER_TAIL);
    s.push('\n');
    for pt in points {
        let head = {
            let mut h = format!("{},{}", pt.index, pt.seed);
            for v in &pt.values {
                let _ = write!(h, ",{}", num(*v));
            }
            h
        };
        match &pt.outcome {
            Ok(rows) => {
                for (label, n, g2) in rows {
                    let (g, ge) = opt(*g2);
                    let _ = writeln!(s, "{head},{},{},{},{g},{ge},ok", csv_field(label), num(n.value), num(n.stderr));
                }
            }
            Err(e) => {
                let _ = writeln!(s, "{head},,,,,,{}", csv_field(&format!("error: {e}")));
            }
        }
    }
    s
}

/// Optimal parameters at each `U`.
pub fn optimize3(us: &[f64], gamma: f64) -> Result<Vec<OptimalParams>, ScenarioError> {
    us.iter().map(|&u| Ok(analytic::optimal_params(u, gamma)?)).collect()
}

pub fn optimize3_csv(rows: &[OptimalParams]) -> String {
    let mut s = String::from(OPTIMIZE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            num(r.u),
            num(r.gamma),
            num(r.delta_opt),
            num(r.j_opt),
            num(r.residual_re),
            num(r.residual_im)
        );
    }
    s
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
