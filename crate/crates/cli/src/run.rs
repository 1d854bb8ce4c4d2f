use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ffgap::ffunction::{convolution_constant, lieb_robinson_velocity, shifted_base, transform_f_phi};
use ffgap::interaction::validate_unperturbed;
use ffgap::linalg;
use ffgap::ltqo::{profile, LtqoProfile, OmegaModel};
use ffgap::models::{
    aklt_interaction, default_probes, orbital_interaction, random_even_perturbation, verify_orbital_ltqo,
    OrbitalModel,
};
use ffgap::spectra::{gap_curve, higher_gap_track, sp0_diameter_scan, GapRow};
use ffgap::spectral_flow::{analyze_flow, flow_unitaries, FlowAnalysis, FlowOptions, FlowSetup, GeneratorMethod};
use ffgap::stability_bounds::{
    calibrate_c, edge_bulk_strengths, form_bound_constants, gap_bound_check, higher_gap_bound_check,
    sp0_envelope, verify_form_bound, BoundConstants, BoundInputs, CSample, CSource, ConstantsLedger,
    FormBoundReport,
};
use ffgap::{FFunctionSpec, Interaction, Interval, Kind, LocalOperator};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, Format, ModelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pipeline {
    Validate,
    Ltqo,
    Flow,
    Bounds,
    Gapsweep,
    Highergaps,
    Sp0scan,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::Validate,
        Pipeline::Ltqo,
        Pipeline::Flow,
        Pipeline::Bounds,
        Pipeline::Gapsweep,
        Pipeline::Highergaps,
        Pipeline::Sp0scan,
    ];

    fn perturbs(self) -> bool {
        !matches!(self, Pipeline::Validate | Pipeline::Ltqo)
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

fn config_err(field: &str, message: impl Into<String>) -> RunError {
    RunError::Config(ConfigError { field: field.into(), message: message.into() })
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// The unperturbed model, instantiated per volume.
pub struct Model {
    pub kind: ModelKind,
    custom: Option<Interaction>,
    offset: i64,
}

impl Model {
    pub fn load(cfg: &ExperimentConfig) -> Result<Model, RunError> {
        let custom = match cfg.model.kind {
            ModelKind::Custom => {
                let path = cfg.custom_file().expect("checked at parse time");
                let text = fs::read_to_string(&path)
                    .map_err(|e| config_err("model.file", format!("cannot read {}: {e}", path.display())))?;
                let eta = Interaction::from_json(&text).map_err(|e| config_err("model.file", e.to_string()))?;
                if eta.is_empty() {
                    return Err(config_err("model.file", "the interaction has no terms"));
                }
                Some(eta)
            }
            _ => None,
        };
        let model = Model { kind: cfg.model.kind, custom, offset: cfg.model.offset };
        if let Some(window) = model.custom.as_ref().and_then(Interaction::window) {
            for &l in cfg.lengths.iter().chain(&cfg.flow.lengths) {
                if !window.contains_interval(&model.volume(l)) {
                    return Err(config_err("lengths", format!("{} lies outside the interaction window {window}", model.volume(l))));
                }
            }
        }
        Ok(model)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Orbital => "orbital",
            ModelKind::Aklt => "aklt",
            ModelKind::Custom => "custom",
        }
    }

    pub fn volume(&self, length: usize) -> Interval {
        Interval::new(self.offset, self.offset + length as i64 - 1).expect("length ≥ 2")
    }

    pub fn site_kind(&self) -> Kind {
        match (&self.kind, &self.custom) {
            (ModelKind::Orbital, _) => Kind::Fermion,
            (ModelKind::Aklt, _) => Kind::Spin(3),
            (ModelKind::Custom, Some(eta)) => eta.kind,
            (ModelKind::Custom, None) => unreachable!(),
        }
    }

    pub fn range(&self) -> u64 {
        match &self.custom {
            Some(eta) => eta.range.unwrap_or_else(|| eta.max_diameter()),
            None => 1,
        }
    }

    pub fn orbital(&self, lam: &Interval) -> Option<OrbitalModel> {
        (self.kind == ModelKind::Orbital).then(|| OrbitalModel::default_instance(lam))
    }

    pub fn eta(&self, lam: &Interval) -> ffgap::Result<Interaction> {
        match self.kind {
            ModelKind::Orbital => orbital_interaction(&OrbitalModel::default_instance(lam)),
            ModelKind::Aklt => aklt_interaction(lam),
            ModelKind::Custom => {
                let eta = self.custom.as_ref().expect("custom model");
                Ok(eta.filtered(|t| lam.contains_interval(&t.support())))
            }
        }
    }

    /// Validation probes `validate_unperturbed` at two offsets, so it gets a
    /// window one site longer than the largest length.
    fn validation_eta(&self, max_len: usize) -> ffgap::Result<Interaction> {
        match &self.custom {
            Some(eta) => Ok(eta.clone()),
            None => self.eta(&self.volume(max_len + 1)),
        }
    }

    pub fn omega(&self, cfg: &ExperimentConfig) -> Option<OmegaModel> {
        cfg.constants.omega.clone().or(match self.kind {
            ModelKind::Orbital => {
                let d = OrbitalModel::default_instance(&self.volume(cfg.lengths[0])).d();
                Some(OmegaModel::Step { cutoff: d, height: 2.0 })
            }
            ModelKind::Aklt => Some(OmegaModel::Geometric { amplitude: 1.0, ratio: 1.0 / 3.0 }),
            ModelKind::Custom => None,
        })
    }
}

struct FlowCell {
    length: usize,
    seed: u64,
    lam: Interval,
    setup: FlowSetup,
    analysis: FlowAnalysis,
    eta_norm: f64,
    bulk_norm: f64,
    generator_gap: f64,
}

// CSV row prefixes; rows are written as `(prefix, row)` pairs.

#[derive(Serialize)]
struct CellKey<'a> {
    model: &'a str,
    length: usize,
    seed: u64,
}

#[derive(Serialize)]
struct ValidateRow {
    a: i64,
    b: i64,
    length: usize,
    ground_energy: f64,
    kernel_dim: usize,
    min_nonzero: Option<f64>,
    frustration_free: bool,
}

#[derive(Serialize)]
struct GapCsvRow {
    model: String,
    length: usize,
    #[serde(rename = "D")]
    d: u64,
    seed: u64,
    eps: f64,
    gamma: f64,
    sp0_min: f64,
    sp0_max: f64,
    sp0_diam: f64,
    sp1_min: f64,
}

#[derive(Serialize)]
struct HigherGapRow {
    nu: f64,
    mu: f64,
    eps: f64,
    gamma: f64,
}

#[derive(Serialize)]
struct Sp0CsvRow<'a> {
    model: &'a str,
    length: usize,
    #[serde(rename = "D")]
    d: u64,
    seed: u64,
    eps: f64,
    sp0_diam: f64,
    gamma: f64,
    envelope: Option<f64>,
}

#[derive(Serialize)]
struct FormRow {
    eps: f64,
    delta: f64,
    beta: f64,
    random_vectors: usize,
    eigenvectors: usize,
    violations: usize,
    min_slack: f64,
    max_ratio: f64,
}

#[derive(Serialize)]
struct GeneratorRow {
    generator_gap: f64,
}

pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    out: PathBuf,
    pub checks: Vec<Check>,
    notes: Vec<String>,
    gamma0: Option<f64>,
    flows: Option<Vec<FlowCell>>,
    constants: Option<BoundConstants>,
    ledger: Option<ConstantsLedger>,
}

impl<'a> Runner<'a> {
    /// Loads the model and checks everything the requested pipelines need
    /// before any computation starts.
    pub fn new(cfg: &'a ExperimentConfig, out: PathBuf, pipelines: &[Pipeline]) -> Result<Self, RunError> {
        let model = Model::load(cfg)?;
        if pipelines.iter().any(|p| p.perturbs()) {
            let kind = model.site_kind();
            if !matches!(kind, Kind::Fermion | Kind::Spin(2)) {
                return Err(config_err(
                    "model.kind",
                    format!("{} has {}-level sites; perturbation pipelines need two-level sites", model.name(), kind.local_dim()),
                ));
            }
            let d0 = cfg.d.values()[0];
            ExperimentConfig::check_stability_lengths("lengths", &cfg.lengths, model.range(), &[d0])?;
            if pipelines.iter().any(|p| matches!(p, Pipeline::Flow | Pipeline::Bounds)) {
                ExperimentConfig::check_stability_lengths("flow.lengths", &cfg.flow.lengths, model.range(), &[d0])?;
            }
            if pipelines.contains(&Pipeline::Sp0scan) {
                ExperimentConfig::check_stability_lengths("lengths", &cfg.lengths, model.range(), &cfg.d.values())?;
            }
            if model.omega(cfg).is_none() && pipelines.iter().any(|p| matches!(p, Pipeline::Flow | Pipeline::Bounds)) {
                return Err(config_err("constants.omega", "custom models need an explicit LTQO profile"));
            }
            let params = cfg.perturbation();
            random_even_perturbation(&model.volume(cfg.lengths[0]), 0, &params, 0, kind)
                .map_err(|e| config_err("perturbation", e.to_string()))?;
        }
        Ok(Runner {
            cfg,
            model,
            out,
            checks: Vec::new(),
            notes: Vec::new(),
            gamma0: cfg.constants.gamma0,
            flows: None,
            constants: None,
            ledger: None,
        })
    }

    pub fn run(&mut self, pipelines: &[Pipeline]) -> Result<(), RunError> {
        fs::create_dir_all(&self.out)?;
        for &p in pipelines {
            let result = match p {
                Pipeline::Validate => self.validate(),
                Pipeline::Ltqo => self.ltqo(),
                Pipeline::Flow => self.flow(),
                Pipeline::Bounds => self.bounds(),
                Pipeline::Gapsweep => self.gapsweep(),
                Pipeline::Highergaps => self.highergaps(),
                Pipeline::Sp0scan => self.sp0scan(),
            };
            match result {
                Ok(()) => {}
                Err(Step::Numeric(e)) => self.check(&format!("{p:?}").to_lowercase(), false, format!("error: {e}")),
                Err(Step::Run(e)) => return Err(e),
            }
        }
        self.write_ledger()?;
        self.write_summary()?;
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    fn grid(&self) -> Vec<f64> {
        self.cfg.eps_grid.points()
    }

    fn d0(&self) -> u64 {
        self.cfg.d.values()[0]
    }

    fn decay(&self) -> ffgap::Result<FFunctionSpec> {
        self.cfg
            .perturbation()
            .decay()
            .ok_or_else(|| ffgap::Error::Domain("the perturbation envelope has no dominating F-function".into()))
    }

    fn perturbation(&self, lam: &Interval, d: u64, seed: u64) -> ffgap::Result<ffgap::models::RandomPerturbation> {
        random_even_perturbation(lam, d, &self.cfg.perturbation(), seed, self.model.site_kind())
    }

    fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<(), RunError> {
        if !self.cfg.outputs.formats.contains(&Format::Csv) {
            return Ok(());
        }
        let mut w = csv::Writer::from_path(self.out.join(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    // -----------------------------------------------------------------------

    fn validate(&mut self) -> Result<(), Step> {
        let max_len = *self.cfg.lengths.iter().max().unwrap();
        let eta = self.model.validation_eta(max_len)?;
        if let Some(om) = self.model.orbital(&self.model.volume(max_len + 1)) {
            for &l in &self.cfg.lengths {
                om.validate(&self.model.volume(l))?;
            }
        }
        let report = validate_unperturbed(&eta, &self.cfg.lengths)?;
        let rows: Vec<_> = report
            .probes
            .iter()
            .map(|p| {
                (
                    self.model.name(),
                    ValidateRow {
                        a: p.interval.a,
                        b: p.interval.b,
                        length: p.interval.len(),
                        ground_energy: p.ground_energy,
                        kernel_dim: p.kernel_dim,
                        min_nonzero: p.min_nonzero,
                        frustration_free: p.frustration_free,
                    },
                )
            })
            .map(|(m, r)| (ModelCol { model: m }, r))
            .collect();
        self.csv("validate.csv", &rows)?;
        if self.gamma0.is_none() {
            self.gamma0 = report.gamma0;
        }
        let kernels: Vec<String> = report.probes.iter().map(|p| format!("{}:{}", p.interval, p.kernel_dim)).collect();
        self.check(
            "validate",
            report.passed(),
            format!(
                "frustration-free {}, hermitian {}, nonnegative {}, γ₀ candidate {}, kernels {}",
                report.frustration_free,
                report.all_hermitian,
                report.all_nonnegative,
                report.gamma0.map_or("none".into(), |g| format!("{g:.6}")),
                kernels.join(" ")
            ),
        );
        Ok(())
    }

    fn ltqo(&mut self) -> Result<(), Step> {
        let cfg = self.cfg;
        let kind = self.model.site_kind();
        let even_only = cfg.ltqo.even_only.unwrap_or(kind == Kind::Fermion);
        let profiles: Vec<ffgap::Result<(usize, LtqoProfile)>> = cfg
            .lengths
            .par_iter()
            .map(|&l| {
                let lam = self.model.volume(l);
                let prof = match self.model.orbital(&lam) {
                    Some(om) => verify_orbital_ltqo(&om, &lam, &default_probes(&lam, cfg.ltqo.max_k)?)?,
                    None => profile(&self.model.eta(&lam)?, &lam, cfg.ltqo.max_k, even_only, cfg.seeds[0])?,
                };
                Ok((l, prof))
            })
            .collect();
        let mut rows = Vec::new();
        for item in profiles {
            let (l, prof) = item?;
            rows.extend(prof.rows(self.model.name(), l));
            let lam = self.model.volume(l);
            let (passed, detail) = match self.model.kind {
                ModelKind::Orbital => {
                    let d = self.model.orbital(&lam).unwrap().d();
                    let certifiable = lam.diam() > 2 * d;
                    let bad = prof.samples.iter().filter(|w| {
                        if w.separation >= d && certifiable {
                            !(w.exact_zero && w.basis_residual <= 1e-11)
                        } else {
                            w.lower_bound > 2.0 + 1e-12
                        }
                    });
                    let bad = bad.count();
                    let zeros = prof.samples.iter().filter(|w| w.exact_zero).count();
                    let note = if certifiable { "" } else { " (diam ≤ 2D: step not certified)" };
                    (bad == 0, format!("{} probes, {zeros} exact zeros, {bad} violations{note}", prof.samples.len()))
                }
                ModelKind::Aklt => {
                    let worst = prof
                        .samples
                        .iter()
                        .filter(|w| w.separation >= 1)
                        .map(|w| w.lower_bound / (1.5 * (1.0f64 / 3.0).powi(w.separation as i32)))
                        .fold(0.0f64, f64::max);
                    (worst <= 1.0, format!("{} probes, max lower_bound/(1.5·3^-sep) = {worst:.4}", prof.samples.len()))
                }
                ModelKind::Custom => {
                    let ok = prof.samples.iter().all(|w| w.lower_bound <= 2.0 + 1e-12 && (!w.exact_zero || w.lower_bound == 0.0));
                    (ok, format!("{} probes", prof.samples.len()))
                }
            };
            let fit = prof.fitted.as_ref().map_or("no fit".to_string(), |f| format!("fit {:?}", f.model));
            self.check(&format!("ltqo L={l}"), passed, format!("{detail}; {fit}"));
        }
        self.csv("ltqo.csv", &rows)?;
        Ok(())
    }

    fn compute_flows(&mut self) -> Result<(), Step> {
        if self.flows.is_some() {
            return Ok(());
        }
        let cfg = self.cfg;
        let f = self.decay()?;
        let omega = self.model.omega(cfg).expect("checked in preflight");
        let grid: Vec<f64> = self.grid().into_iter().filter(|&e| e <= cfg.flow.max_eps * (1.0 + 1e-12)).collect();
        let d0 = self.d0();
        let cells: Vec<(usize, u64)> =
            cfg.flow.lengths.iter().flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s))).collect();
        let results: Vec<ffgap::Result<FlowCell>> = cells
            .par_iter()
            .map(|&(length, seed)| {
                let lam = self.model.volume(length);
                let eta = self.model.eta(&lam)?;
                let pert = self.perturbation(&lam, d0, seed)?;
                let setup = FlowSetup::new(&eta, &pert.split.bulk, &lam, cfg.flow.gamma)?;
                let flow = flow_unitaries(&setup, &grid, &FlowOptions::default())?;
                let eta_norm = eta.f_norm(&f);
                let bulk_norm = pert.split.bulk.f_norm(&f);
                let ffgap::Weight::StretchedExp { k, s } = f.weight else {
                    return Err(ffgap::Error::Domain("flow needs a stretched-exponential weight".into()));
                };
                let nu = lieb_robinson_velocity(convolution_constant(&f, 64)?, eta_norm + bulk_norm);
                let f_phi = transform_f_phi(&f, cfg.flow.gamma, nu, k, s, self.model.range())?;
                let analysis = analyze_flow(&setup, &eta, &flow, &omega, &f_phi)?;
                let eps = *grid.last().unwrap();
                let a = setup.generator(eps, GeneratorMethod::EigenbasisFilter)?;
                let b = setup.generator(eps, GeneratorMethod::TimeQuadrature)?;
                let generator_gap = linalg::op_norm(&(&a - &b));
                Ok(FlowCell { length, seed, lam, setup, analysis, eta_norm, bulk_norm, generator_gap })
            })
            .collect();
        self.flows = Some(results.into_iter().collect::<ffgap::Result<_>>()?);
        Ok(())
    }

    fn flow(&mut self) -> Result<(), Step> {
        self.compute_flows()?;
        let name = self.model.name();
        let flows = self.flows.as_ref().unwrap();
        let key = |c: &FlowCell| CellKey { model: name, length: c.length, seed: c.seed };
        let rows: Vec<_> = flows.iter().flat_map(|c| c.analysis.rows.iter().map(move |r| (key(c), r))).collect();
        self.csv("flow.csv", &rows)?;
        let points: Vec<_> = flows.iter().flat_map(|c| c.analysis.points.iter().map(move |p| (key(c), p))).collect();
        self.csv("flow_points.csv", &points)?;
        let gens: Vec<_> = flows.iter().map(|c| (key(c), GeneratorRow { generator_gap: c.generator_gap })).collect();
        self.csv("flow_generators.csv", &gens)?;
        let mut checks = Vec::new();
        for c in flows {
            let p = &c.analysis.points;
            let max = |f: fn(&ffgap::spectral_flow::FlowPointReport) -> f64| p.iter().map(f).fold(0.0f64, f64::max);
            let inter = max(|q| q.intertwining);
            let comm = max(|q| q.max_anchor_commutator);
            let ident = [
                max(|q| q.decomposition_residual),
                max(|q| q.split_residual),
                max(|q| q.theta_residual),
                max(|q| q.theta_annihilation),
            ]
            .into_iter()
            .fold(0.0f64, f64::max);
            let kappa: usize = p.iter().map(|q| q.kappa_violations).sum();
            let lemma: usize = p.iter().map(|q| q.lemma_violations).sum();
            let passed = inter <= 1e-6 && comm <= 1e-6 && c.generator_gap <= 1e-6 && ident <= 1e-10;
            checks.push((
                format!("flow L={} seed={}", c.length, c.seed),
                passed,
                format!(
                    "intertwining {inter:.1e}, [P,Φ¹_x] {comm:.1e}, generators {:.1e}, identities {ident:.1e}, \
                     one-sided estimate violations: κ {kappa}, block {lemma}",
                    c.generator_gap
                ),
            ));
        }
        for (n, p, d) in checks {
            self.check(&n, p, d);
        }
        Ok(())
    }

    fn compute_constants(&mut self) -> Result<(), Step> {
        if self.constants.is_some() {
            return Ok(());
        }
        let cfg = self.cfg;
        let f = self.decay()?;
        let omega = self.model.omega(cfg).ok_or_else(|| ffgap::Error::Domain("no LTQO profile".into()))?;
        let gamma0 = match self.gamma0 {
            Some(g) => g,
            None => {
                let max_len = *cfg.lengths.iter().max().unwrap();
                let report = validate_unperturbed(&self.model.validation_eta(max_len)?, &cfg.lengths)?;
                let g = report.gamma0.ok_or_else(|| ffgap::Error::Domain("no unperturbed gap found".into()))?;
                self.gamma0 = Some(g);
                g
            }
        };
        let (c, c_source) = match cfg.constants.c {
            Some(c) => (c, CSource::Supplied),
            None => {
                self.compute_flows()?;
                let samples: Vec<CSample> = self
                    .flows
                    .as_ref()
                    .unwrap()
                    .iter()
                    .flat_map(|cell| {
                        cell.analysis.points.iter().map(|p| CSample {
                            eps: p.eps,
                            phi1_norm: p.phi1_f_norm,
                            eta_norm: cell.eta_norm,
                            psi_norm: cell.bulk_norm,
                        })
                    })
                    .collect();
                (calibrate_c(&samples)?, CSource::Calibrated)
            }
        };
        let largest = self.model.volume(*cfg.lengths.iter().max().unwrap());
        let eta_norm = self.model.eta(&largest)?.f_norm(&f);
        let probes: Vec<Interval> = cfg.lengths.iter().map(|&l| self.model.volume(l)).collect();
        let d0 = self.d0();
        let (mut m_int, mut m_d) = (0.0f64, 0.0f64);
        for &seed in &cfg.seeds {
            let phi_for = |lam: &Interval| Ok(self.perturbation(lam, d0, seed)?.whole);
            let s = edge_bulk_strengths(phi_for, &probes, d0, self.model.range(), &f)?;
            m_int = m_int.max(s.m_int);
            m_d = m_d.max(s.m_d);
        }
        let inputs = BoundInputs {
            gamma0,
            c,
            c_source,
            eta_norm,
            m_int,
            m_d,
            omega,
            f0: shifted_base(&f.base(), self.model.range()),
        };
        let bc = BoundConstants::new(inputs)?;
        self.ledger = Some(bc.ledger());
        self.constants = Some(bc);
        Ok(())
    }

    fn bounds(&mut self) -> Result<(), Step> {
        self.compute_constants()?;
        self.compute_flows()?;
        let bc = self.constants.as_ref().unwrap();
        let th = &bc.threshold;
        let tails_ok = [&bc.j.j1, &bc.j.j2, &bc.j.j3].iter().all(|t| t.tail.is_finite() && t.value().is_finite());
        let detail = format!(
            "C={:.4e} ({:?}), J1={:.4e}, J2={:.4e}, J3={:.4e}, m={:.4e}, display form {:.4e} + |n|≤2 block {:.4e}, \
             forms agree raw {} / with block {}, M_Int={:.4}, M_D={:.4}, ε(γ₀)={:.4e}",
            bc.inputs.c,
            bc.inputs.c_source,
            bc.j.j1.value(),
            bc.j.j2.value(),
            bc.j.j3.value(),
            th.m,
            th.m_display,
            th.low_block,
            th.forms_agree_raw,
            th.forms_agree_with_block,
            bc.inputs.m_int,
            bc.inputs.m_d,
            bc.eps_star()
        );
        let constants_ok = tails_ok && th.forms_agree_with_block;
        let cfg = self.cfg;
        let j = bc.j.clone();
        let gamma0 = bc.inputs.gamma0;
        let flows = self.flows.as_ref().unwrap();
        let reports: Vec<ffgap::Result<Vec<(CellKey, FormRow)>>> = flows
            .par_iter()
            .map(|c| {
                let form = form_bound_constants(c.eta_norm, c.bulk_norm, gamma0, &j)?;
                let h = LocalOperator::new(c.setup.h0.clone(), c.lam, self.model.site_kind())?;
                let mut out = Vec::new();
                for (i, p) in c.analysis.points.iter().enumerate().filter(|(_, p)| p.eps > 0.0) {
                    let phi2 = LocalOperator::new(c.analysis.splits[i].phi2.clone(), c.lam, self.model.site_kind())?;
                    let r: FormBoundReport =
                        verify_form_bound(&h, &phi2, form.delta, form.beta, p.eps, cfg.flow.trials, c.seed ^ i as u64)?;
                    out.push((
                        CellKey { model: self.model.name(), length: c.length, seed: c.seed },
                        FormRow {
                            eps: r.eps,
                            delta: r.delta,
                            beta: r.beta,
                            random_vectors: r.random_vectors,
                            eigenvectors: r.eigenvectors,
                            violations: r.violations,
                            min_slack: r.min_slack,
                            max_ratio: r.max_ratio,
                        },
                    ));
                }
                Ok(out)
            })
            .collect();
        let mut rows = Vec::new();
        for r in reports {
            rows.extend(r?);
        }
        let violations: usize = rows.iter().map(|(_, r)| r.violations).sum();
        let max_ratio = rows.iter().map(|(_, r)| r.max_ratio).fold(0.0f64, f64::max);
        self.csv("form_bound.csv", &rows)?;
        self.check("bounds constants", constants_ok, detail);
        self.check(
            "bounds form",
            violations == 0,
            format!("{} ε points, {violations} violations, max |⟨v,Φ²v⟩|/(δε+βε⟨v,Hv⟩) = {max_ratio:.2e}", rows.len()),
        );
        Ok(())
    }

    fn gapsweep(&mut self) -> Result<(), Step> {
        let cfg = self.cfg;
        let grid = self.grid();
        let d0 = self.d0();
        let cells: Vec<(usize, u64)> = cfg.lengths.iter().flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s))).collect();
        let curves: Vec<ffgap::Result<Vec<GapRow>>> = cells
            .par_iter()
            .map(|&(l, seed)| {
                let lam = self.model.volume(l);
                let phi = self.perturbation(&lam, d0, seed)?.whole;
                let curve = gap_curve(&self.model.eta(&lam)?, &phi, &lam, &grid)?;
                Ok(curve.iter().map(|s| GapRow::new(self.model.name(), l, d0, s)).collect())
            })
            .collect();
        let mut per_cell: Vec<Vec<GapCsvRow>> = Vec::with_capacity(cells.len());
        for (curve, &(_, seed)) in curves.into_iter().zip(&cells) {
            per_cell.push(
                curve?
                    .into_iter()
                    .map(|r| GapCsvRow {
                        model: r.model,
                        length: r.length,
                        d: r.d,
                        seed,
                        eps: r.eps,
                        gamma: r.gamma,
                        sp0_min: r.sp0_min,
                        sp0_max: r.sp0_max,
                        sp0_diam: r.sp0_diam,
                        sp1_min: r.sp1_min,
                    })
                    .collect(),
            );
        }
        let rows: Vec<&GapCsvRow> = per_cell.iter().flatten().collect();
        self.csv("gaps.csv", &rows)?;
        let floor = cfg.gamma;
        let min_gap = rows.iter().map(|r| r.gamma).fold(f64::INFINITY, f64::min);
        self.check(
            "gapsweep",
            min_gap > floor,
            format!("{} rows over lengths {:?}, min γ(ε) = {min_gap:.6} (floor {floor})", rows.len(), cfg.lengths),
        );
        if self.constants.is_none() && cfg.constants.c.is_some() {
            self.compute_constants()?;
        }
        match (&self.constants, &mut self.ledger) {
            (Some(bc), Some(ledger)) => {
                let mut checks = Vec::new();
                for (&(l, seed), chunk) in cells.iter().zip(&per_cell) {
                    let measured: Vec<(f64, f64)> = chunk.iter().map(|r| (r.eps, r.gamma)).collect();
                    checks.extend(gap_bound_check(bc, l, &measured).into_iter().map(|row| (seed, row)));
                }
                let passed = checks.iter().all(|(_, r)| r.passed());
                let vacuous = checks.iter().filter(|(_, r)| r.eps > 0.0 && r.vacuous).count();
                let swept = checks.iter().filter(|(_, r)| r.eps > 0.0).count();
                ledger.gap_checks.extend(checks.iter().map(|(_, r)| r.clone()));
                let keyed: Vec<_> = checks.iter().map(|(seed, r)| (SeedCol { seed: *seed }, r)).collect();
                self.csv("gap_bounds.csv", &keyed)?;
                let note = if vacuous == swept {
                    "bound vacuous at every swept ε > 0 (desk scale)".to_string()
                } else {
                    format!("bound vacuous at {vacuous}/{swept} swept ε > 0, dominated elsewhere")
                };
                self.check("gapsweep vs bound", passed, format!("ε(γ₀) = {:.3e}; {note}", bc.eps_star()));
            }
            _ => self.notes.push("gap bound comparison skipped: no constants (run `bounds` or supply constants.C)".into()),
        }
        Ok(())
    }

    fn highergaps(&mut self) -> Result<(), Step> {
        let cfg = self.cfg;
        let grid = self.grid();
        let d0 = self.d0();
        let (nu, mu) = (cfg.higher_gaps.nu, cfg.higher_gaps.mu);
        let cells: Vec<(usize, u64)> = cfg.lengths.iter().flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s))).collect();
        let tracks: Vec<ffgap::Result<Vec<ffgap::spectra::HigherGapPoint>>> = cells
            .par_iter()
            .map(|&(l, seed)| {
                let lam = self.model.volume(l);
                let phi = self.perturbation(&lam, d0, seed)?.whole;
                higher_gap_track(&self.model.eta(&lam)?, &phi, &lam, nu, mu, &grid)
            })
            .collect();
        let mut rows = Vec::new();
        let mut per_cell = Vec::new();
        for (track, &(l, seed)) in tracks.into_iter().zip(&cells) {
            let track = track?;
            per_cell.push((l, seed, track.clone()));
            rows.extend(track.iter().map(|p| {
                (CellKey { model: self.model.name(), length: l, seed }, HigherGapRow { nu, mu, eps: p.eps, gamma: p.gamma })
            }));
        }
        self.csv("higher_gaps.csv", &rows)?;
        let min_gap = rows.iter().map(|(_, r)| r.gamma).fold(f64::INFINITY, f64::min);
        self.check(
            "highergaps",
            min_gap > cfg.gamma,
            format!("γ({nu},{mu},ε) over lengths {:?}: min {min_gap:.6} (floor {})", cfg.lengths, cfg.gamma),
        );
        if let (Some(bc), Some(ledger)) = (&self.constants, &mut self.ledger) {
            let mut checks = Vec::new();
            for (l, seed, track) in &per_cell {
                let measured: Vec<(f64, f64)> = track.iter().map(|p| (p.eps, p.gamma)).collect();
                checks.extend(higher_gap_bound_check(bc, *l, nu, mu, &measured).into_iter().map(|r| (*seed, r)));
            }
            let passed = checks.iter().all(|(_, r)| r.passed());
            let vacuous = checks.iter().filter(|(_, r)| r.eps > 0.0 && r.vacuous).count();
            ledger.higher_gap_checks.extend(checks.iter().map(|(_, r)| r.clone()));
            let keyed: Vec<_> = checks.iter().map(|(seed, r)| (SeedCol { seed: *seed }, r)).collect();
            self.csv("higher_gap_bounds.csv", &keyed)?;
            self.check("highergaps vs bound", passed, format!("{vacuous}/{} rows with a vacuous bound", checks.len()));
        }
        Ok(())
    }

    fn sp0scan(&mut self) -> Result<(), Step> {
        let cfg = self.cfg;
        let ds = cfg.d.values();
        let eps = cfg.sp0scan.eps;
        let envelope_inputs = match (&cfg.constants.f_tilde, &self.constants) {
            (Some(ft), Some(bc)) => Some((ft.clone(), bc.inputs.clone())),
            (Some(_), None) => {
                self.notes.push("sp₀ envelope skipped: no constants (run `bounds` or `all`)".into());
                None
            }
            _ => None,
        };
        let mut rows = Vec::new();
        let mut bad = Vec::new();
        for &seed in &cfg.seeds {
            let phi_for = |lam: &Interval| Ok(self.perturbation(lam, 0, seed)?.whole);
            for &l in &cfg.lengths {
                let lam = self.model.volume(l);
                let eta = self.model.eta(&lam)?;
                let cells: Vec<(Interval, u64)> = ds.iter().map(|&d| (lam, d)).collect();
                let at_eps = sp0_diameter_scan(&eta, &phi_for, &cells, eps)?;
                let at_zero = sp0_diameter_scan(&eta, &phi_for, &cells, 0.0)?;
                for r in at_zero.iter().filter(|r| r.sp0_diam.abs() > 1e-8) {
                    bad.push(format!("L={l} D={} seed={seed}: diam {:.2e} at ε=0", r.d, r.sp0_diam));
                }
                let mut ordered: Vec<_> = at_eps.iter().collect();
                ordered.sort_by_key(|r| r.d);
                for w in ordered.windows(2) {
                    if w[1].sp0_diam > w[0].sp0_diam + 1e-8 {
                        bad.push(format!("L={l} seed={seed}: diam grows from D={} to D={}", w[0].d, w[1].d));
                    }
                }
                for r in at_zero.iter().chain(&at_eps) {
                    let envelope = match &envelope_inputs {
                        Some((ft, inp)) => Some(
                            r.eps
                                * sp0_envelope(r.d as f64, ft, inp.c, inp.m_int, inp.eta_norm, &inp.omega, &inp.f0)?
                                    .value(),
                        ),
                        None => None,
                    };
                    rows.push(Sp0CsvRow {
                        model: self.model.name(),
                        length: l,
                        d: r.d,
                        seed,
                        eps: r.eps,
                        sp0_diam: r.sp0_diam,
                        gamma: r.gamma,
                        envelope,
                    });
                }
            }
        }
        self.csv("sp0.csv", &rows)?;
        let trend: Vec<String> = rows
            .iter()
            .filter(|r| r.eps > 0.0)
            .map(|r| format!("L={} D={}:{:.3e}", r.length, r.d, r.sp0_diam))
            .collect();
        let detail = if bad.is_empty() { format!("diam sp₀ at ε={eps}: {}", trend.join(" ")) } else { bad.join("; ") };
        self.check("sp0scan", bad.is_empty(), detail);
        Ok(())
    }

    // -----------------------------------------------------------------------

    fn write_ledger(&self) -> Result<(), RunError> {
        if let Some(ledger) = &self.ledger {
            if self.cfg.outputs.formats.contains(&Format::Json) {
                let json = ledger.to_json().map_err(|e| RunError::Io(e.to_string()))?;
                fs::write(self.out.join("constants.json"), json + "\n")?;
            }
        }
        Ok(())
    }

    fn write_summary(&self) -> Result<(), RunError> {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model.name());
        let _ = writeln!(s, "lengths: {:?}", self.cfg.lengths);
        let _ = writeln!(s, "seeds: {:?}", self.cfg.seeds);
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.checks.len());
        fs::write(self.out.join("summary.txt"), s)?;
        Ok(())
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out.join("summary.txt")
    }
}

#[derive(Serialize)]
struct ModelCol<'a> {
    model: &'a str,
}

#[derive(Serialize)]
struct SeedCol {
    seed: u64,
}

/// A pipeline failure: numerical errors become failed checks, I/O aborts the run.
pub enum Step {
    Numeric(ffgap::Error),
    Run(RunError),
}

impl From<ffgap::Error> for Step {
    fn from(e: ffgap::Error) -> Self {
        Step::Numeric(e)
    }
}

impl From<RunError> for Step {
    fn from(e: RunError) -> Self {
        Step::Run(e)
    }
}

pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None if cfg.outputs.directory.is_absolute() => cfg.outputs.directory.clone(),
        None => cfg.base_dir.join(&cfg.outputs.directory),
    }
}
