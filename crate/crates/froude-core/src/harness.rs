//! Configuration, reproducible initial data and the experiment drivers behind
//! the command-line tool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bilinear_forms::{Forms, TriadClass};
use crate::error::{Error, Result};
use crate::littlewood_paley::{bernstein_ratio, dyadic_block, dyadic_regularity, q_max, sobolev_norm};
use crate::resonance::enumerate_kstar;
use crate::solvers::{
    remainder_norm, scheme_by_name, BoundConstants, FilteredSolver, FilteredSystem, LimitSystem, SimState,
};
use crate::torus_spectral::{has_horizontal, SpectralField, Stencil, TorusGeometry, Transformer, C64};
use crate::wave_basis::{Sign, WaveBasis};

// ---- configuration ---------------------------------------------------------

/// Everything an experiment needs; parsed from flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub period_sq: [Ratio<i64>; 3],
    pub n_max: usize,
    pub nu: f64,
    /// `f64::INFINITY` selects the limit system alone.
    pub epsilons: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub limit_dt: f64,
    /// Spacing of the sweep snapshots.
    pub snapshot_dt: f64,
    /// Norm weight; sweep errors are measured in `H^{s-2}`.
    pub s: f64,
    pub seed: u64,
    /// Amplitudes fall off like `(1 + |ň|²)^{-r}`.
    pub spectrum_r: f64,
    pub amplitude: f64,
    pub out_dir: PathBuf,
    pub scheme: String,
    pub bounds: BoundConstants,
    /// Empty means every registered check.
    pub audit_checks: Vec<String>,
    pub audit_seeds: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let one = Ratio::from_integer(1);
        SimConfig {
            period_sq: [one; 3],
            n_max: 4,
            nu: 0.1,
            epsilons: vec![0.1, 0.01, 0.001],
            t_end: 1.0,
            dt: 1e-3,
            limit_dt: 1e-2,
            snapshot_dt: 1e-2,
            s: 5.0,
            seed: 0,
            spectrum_r: 3.0,
            amplitude: 1.0,
            out_dir: PathBuf::from("out"),
            scheme: "exponential".into(),
            bounds: BoundConstants::default(),
            audit_checks: Vec::new(),
            audit_seeds: 3,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{key} = {value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl SimConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
    /// keys are errors, missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if seen.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        let mut c = SimConfig::default();
        for (k, v) in &seen {
            let v = v.as_str();
            match k.as_str() {
                "a1_sq" => c.period_sq[0] = parse_value(k, v)?,
                "a2_sq" => c.period_sq[1] = parse_value(k, v)?,
                "a3_sq" => c.period_sq[2] = parse_value(k, v)?,
                "n" => c.n_max = parse_value(k, v)?,
                "nu" => c.nu = parse_value(k, v)?,
                "epsilon" => c.epsilons = parse_list(k, v)?,
                "t_end" => c.t_end = parse_value(k, v)?,
                "dt" => c.dt = parse_value(k, v)?,
                "limit_dt" => c.limit_dt = parse_value(k, v)?,
                "snapshot_dt" => c.snapshot_dt = parse_value(k, v)?,
                "s" => c.s = parse_value(k, v)?,
                "seed" => c.seed = parse_value(k, v)?,
                "spectrum_r" => c.spectrum_r = parse_value(k, v)?,
                "amplitude" => c.amplitude = parse_value(k, v)?,
                "out" => c.out_dir = PathBuf::from(v),
                "scheme" => c.scheme = v.to_string(),
                "bound_C" => c.bounds.big_c = parse_value(k, v)?,
                "bound_c" => c.bounds.small_c = parse_value(k, v)?,
                "bound_K" => c.bounds.k = parse_value(k, v)?,
                "bound_p" => c.bounds.p = parse_value(k, v)?,
                "bound_sigma" => c.bounds.sigma = parse_value(k, v)?,
                "audit_checks" => c.audit_checks = parse_list(k, v)?,
                "audit_seeds" => c.audit_seeds = parse_value(k, v)?,
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn geometry(&self) -> Result<TorusGeometry> {
        TorusGeometry::new(self.period_sq, self.n_max).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every positivity and consistency constraint; also run by `parse`.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        self.geometry()?;
        if self.n_max == 0 {
            return bad("n must be at least 1");
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive and finite");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return bad("epsilon must list positive values (inf allowed)");
        }
        for (name, x) in [("t_end", self.t_end), ("dt", self.dt), ("limit_dt", self.limit_dt)] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(&format!("{name} must be positive and finite"));
            }
        }
        if self.dt > self.t_end || self.limit_dt > self.t_end {
            return bad("time steps must not exceed t_end");
        }
        if !(self.snapshot_dt >= self.dt && self.snapshot_dt >= self.limit_dt && self.snapshot_dt.is_finite()) {
            return bad("snapshot_dt must be at least both time steps");
        }
        for (name, dt) in [("dt", self.dt), ("limit_dt", self.limit_dt)] {
            let ratio = self.snapshot_dt / dt;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return bad(&format!("snapshot_dt must be a multiple of {name}"));
            }
        }
        if !(self.s > 0.5 && self.s.is_finite()) {
            return bad("s must exceed 1/2");
        }
        if !(self.spectrum_r.is_finite() && self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return bad("spectrum_r and amplitude must be finite, amplitude non-negative");
        }
        let b = &self.bounds;
        if !(b.big_c > 0.0 && b.small_c > 0.0 && b.k > 0.0 && b.p >= 1.0 && b.sigma >= 0.0) {
            return bad("bound constants must be positive, bound_p ≥ 1");
        }
        scheme_by_name(&self.scheme).map_err(|e| Error::Config(e.to_string()))?;
        for name in &self.audit_checks {
            check_by_name(name)?;
        }
        if self.audit_seeds == 0 {
            return bad("audit_seeds must be at least 1");
        }
        Ok(())
    }

    fn every(&self, dt: f64) -> usize {
        (self.snapshot_dt / dt).round() as usize
    }
}

// ---- initial data -----------------------------------------------------------

#[derive(Clone, Debug)]
pub struct InitialData {
    pub field: SpectralField,
    pub underline_norm: f64,
    pub bar_norm: f64,
    pub osc_norm: f64,
    /// `|‖V‖² - Σ‖parts‖²| / ‖V‖²`.
    pub pythagoras_defect: f64,
}

/// Random field from a fixed seed: uniform complex coefficients drawn in
/// lattice order, shaped by the spectrum law, then made real, mean free and
/// solenoidal.
pub fn random_field(geom: TorusGeometry, seed: u64, r: f64, amplitude: f64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = SpectralField::from_fn(geom, |n| {
        let w = amplitude * (1.0 + geom.freq_sq(n).1).powf(-r);
        [(); 4].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w)
    });
    f.enforce_hermitian();
    f.pin_zero_mode();
    f.leray_project_unchecked()
}

pub fn random_initial_data(config: &SimConfig) -> Result<InitialData> {
    random_initial_data_seeded(config, config.seed)
}

fn random_initial_data_seeded(config: &SimConfig, seed: u64) -> Result<InitialData> {
    let geom = config.geometry()?;
    let field = random_field(geom, seed, config.spectrum_r, config.amplitude);
    let d = WaveBasis::new(geom).decompose(&field)?;
    let (u, b, o) = (d.underline.norm(), d.bar.norm(), d.osc.norm());
    let total = field.norm_sq();
    let pythagoras_defect = if total > 0.0 {
        (total - u * u - b * b - o * o).abs() / total
    } else {
        0.0
    };
    Ok(InitialData {
        field,
        underline_norm: u,
        bar_norm: b,
        osc_norm: o,
        pythagoras_defect,
    })
}

// ---- tables ----------------------------------------------------------------

/// A report table with fixed headers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Floats with 17 significant digits, independent of locale.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, table.to_csv_string()?).map_err(|e| Error::io(path, e))
}

// ---- sweep -----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub t: f64,
    /// `‖V^ε - (U̲ + Ū + L(t/ε)U_osc)‖_{H^{s-2}}`
    pub error: f64,
    pub energy_drift: f64,
    pub remainder: f64,
}

#[derive(Clone, Debug)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    /// Largest error over the snapshots; `None` when the run failed.
    pub max_error: Option<f64>,
    pub max_drift: Option<f64>,
    pub failure: Option<String>,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<EpsilonSummary>,
    /// Largest finite-difference residual of the limit trajectory against the
    /// full resonant right-hand side, relative to its size; only for the `inf`
    /// sentinel.
    pub limit_residual: Option<f64>,
    pub limit_elapsed: Duration,
}

impl SweepReport {
    /// Whether the maximal errors strictly decrease along the listed ε, with
    /// every run completed.
    pub fn errors_decreasing(&self) -> bool {
        let errs: Option<Vec<f64>> = self
            .summaries
            .iter()
            .filter(|s| s.epsilon.is_finite())
            .map(|s| s.max_error)
            .collect();
        errs.is_some_and(|e| e.windows(2).all(|w| w[1] < w[0]))
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["epsilon", "t", "err_Hs2", "energy_drift", "remainder_L2"]);
        for r in &self.rows {
            t.push(vec![
                fmt_f64(r.epsilon),
                fmt_f64(r.t),
                fmt_f64(r.error),
                fmt_f64(r.energy_drift),
                fmt_f64(r.remainder),
            ]);
        }
        t
    }
}

/// Residual of `dU/dt = -Q(U,U) + A_2^0 U` along the limit trajectory, from
/// five-point differences at a few interior times.
pub fn limit_self_residual(system: &LimitSystem, v0: &SpectralField, t_end: f64, dt: f64) -> Result<f64> {
    let traj = system.solve(v0, t_end, dt, 1)?;
    let states: Vec<SpectralField> = traj.snapshots.iter().map(|s| s.recombine()).collect();
    let h = traj.snapshots.get(1).map_or(dt, |s| s.t);
    if states.len() < 5 {
        return Err(Error::InvalidArgument("limit residual needs at least five steps".into()));
    }
    let interior = states.len() - 4;
    let picks: Vec<usize> = (0..5).map(|j| 2 + j * (interior - 1) / 4).collect();
    let mut worst: f64 = 0.0;
    for i in picks {
        let d = (&(&states[i - 2] - &states[i + 2]) + &(&states[i + 1] - &states[i - 1]).scaled(8.0))
            .scaled(1.0 / (12.0 * h));
        let rhs = system.full_rhs(&states[i])?;
        let scale = rhs.norm().max(d.norm());
        let r = (&d - &rhs).norm();
        worst = worst.max(if scale > 0.0 { r / scale } else { r });
    }
    Ok(worst)
}

/// Solves the limit system once, then the filtered system for every finite ε
/// from the same data, comparing at the snapshot times.
pub fn run_sweep(config: &SimConfig) -> Result<SweepReport> {
    let geom = config.geometry()?;
    let data = random_initial_data(config)?;
    let v0 = &data.field;
    let start = Instant::now();
    let limit = LimitSystem::new(geom, config.nu)?;
    let traj = limit.solve(v0, config.t_end, config.limit_dt, config.every(config.limit_dt))?;
    let limit_residual = if config.epsilons.iter().any(|e| e.is_infinite()) {
        Some(limit_self_residual(&limit, v0, config.t_end, config.limit_dt)?)
    } else {
        None
    };
    let limit_elapsed = start.elapsed();

    let basis = limit.forms().basis();
    let resonant = limit.forms().table(&[TriadClass::Wave, TriadClass::Mixed, TriadClass::Averaged], |t| t.resonant);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &eps in config.epsilons.iter().filter(|e| e.is_finite()) {
        let start = Instant::now();
        let attempt = || -> Result<Vec<SweepRow>> {
            let system = FilteredSystem::new(geom, config.nu, eps)?;
            let solver = FilteredSolver::new(system, scheme_by_name(&config.scheme)?);
            let s0 = SimState::new(v0.clone(), config.nu, eps)?;
            let run = solver.run(&s0, config.t_end, config.dt, config.every(config.dt))?;
            let e0 = run.ledger[0].energy;
            let forms = solver.system().forms();
            let mut out = Vec::new();
            for (s, l) in run.snapshots.iter().zip(&traj.snapshots) {
                let record = run
                    .ledger
                    .iter()
                    .min_by(|a, b| (a.t - s.t).abs().total_cmp(&(b.t - s.t).abs()))
                    .expect("ledger is never empty");
                let diff = &s.physical(basis) - &l.reconstruct(basis, eps);
                out.push(SweepRow {
                    epsilon: eps,
                    t: s.t,
                    error: sobolev_norm(config.s - 2.0, &diff),
                    energy_drift: record.drift(e0),
                    remainder: remainder_norm(forms, &resonant, s.t, eps, &s.u)?,
                });
            }
            Ok(out)
        };
        match attempt() {
            Ok(r) => {
                summaries.push(EpsilonSummary {
                    epsilon: eps,
                    max_error: Some(r.iter().map(|x| x.error).fold(0.0, f64::max)),
                    max_drift: Some(r.iter().map(|x| x.energy_drift).fold(0.0, f64::max)),
                    failure: None,
                    elapsed: start.elapsed(),
                });
                rows.extend(r);
            }
            Err(e) => summaries.push(EpsilonSummary {
                epsilon: eps,
                max_error: None,
                max_drift: None,
                failure: Some(e.to_string()),
                elapsed: start.elapsed(),
            }),
        }
    }
    Ok(SweepReport {
        rows,
        summaries,
        limit_residual,
        limit_elapsed,
    })
}

// ---- cancellation audit ----------------------------------------------------

/// One structural identity of the limit forms, evaluated on a data field.
pub trait AuditCheck: Send + Sync {
    fn name(&self) -> &'static str;
    /// Relative residual; zero data gives zero.
    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64>;
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// The horizontally averaged resonant output of fields without horizontal
/// averages vanishes.
pub struct UnderlineCancellation;

impl AuditCheck for UnderlineCancellation {
    fn name(&self) -> &'static str {
        "underline-cancellation"
    }

    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64> {
        let b = forms.basis();
        let tilde = &b.bar_part(data) + &b.osc_part(data);
        Ok(relative(forms.q_underline(&tilde, &tilde)?.norm(), tilde.norm_sq()))
    }
}

/// Barotropic self-interaction has no wave component.
pub struct BarOscFree;

impl AuditCheck for BarOscFree {
    fn name(&self) -> &'static str {
        "bar-osc-free"
    }

    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64> {
        let b = forms.basis();
        let bar = b.bar_part(data);
        Ok(relative(b.osc_part(&forms.q_tilde1(&bar, &bar)?).norm(), bar.norm_sq()))
    }
}

/// Barotropic self-interaction is projected 2D transport.
pub struct BarTransport;

impl AuditCheck for BarTransport {
    fn name(&self) -> &'static str {
        "bar-transport"
    }

    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64> {
        let b = forms.basis();
        let bar = b.bar_part(data);
        let q = b.bar_part(&forms.q_tilde1(&bar, &bar)?);
        let reference = b.bar_part(&forms.transformer().convolve_quadratic(&bar, &bar, Stencil::Horizontal)?);
        Ok(relative((&q - &reference).norm(), reference.norm().max(bar.norm_sq())))
    }
}

/// On waves the averaged dissipation is half the Laplacian.
pub struct OscDissipation;

impl AuditCheck for OscDissipation {
    fn name(&self) -> &'static str {
        "osc-dissipation"
    }

    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64> {
        let b = forms.basis();
        let g = *data.geometry();
        let tilde = &b.bar_part(data) + &b.osc_part(data);
        let osc = b.osc_part(data);
        let got = b.osc_part(&forms.a2_limit(&tilde)?);
        let half_nu = 0.5 * forms.nu();
        let reference = osc.map_modes(|n, x| x.map(|z| z * (-half_nu * g.freq_sq(n).1)));
        Ok(relative((&got - &reference).norm(), reference.norm()))
    }
}

/// The resonant limit form does no work: `Re<Q(U,U), U> = 0`.
pub struct EnergyNeutrality;

impl AuditCheck for EnergyNeutrality {
    fn name(&self) -> &'static str {
        "energy-neutrality"
    }

    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64> {
        let q = forms.q_limit(data, data)?;
        Ok(relative(q.inner(data).re.abs(), q.norm() * data.norm()))
    }
}

/// Horizontal sums feeding the vertical modes pair up antisymmetrically:
/// `B^{+,-} = -B^{-,+}` and `C^{+,-} = -C^{-,+}` for each even `n_3`.
pub struct BcAntisymmetry;

/// `Σ_{m_h} ň_3 U^{a,3}(-m_h, k_3) U^{b,l}(m_h, k_3)` with `k_3 = n_3/2` for
/// each listed component `l`, where `U^a(k)` is the branch-`a` part of `U`.
/// Horizontal velocity gives `B`, the density gives `C`.
pub fn bc_sum(basis: &WaveBasis, data: &SpectralField, n3: i64, a: Sign, b: Sign, comps: &[usize]) -> Vec<C64> {
    let g = basis.geometry();
    let nm = g.n_max() as i64;
    let x = basis.coefficients(data);
    let branch = |s: Sign| match s {
        Sign::Zero => 0,
        Sign::Plus => 1,
        Sign::Minus => 2,
    };
    let part = |n: [i64; 3], s: Sign| -> [C64; 4] {
        let idx = g.index(n);
        let e = basis.triple(idx).expect("modes with horizontal part have a wave triple");
        let j = branch(s);
        e.vectors[j].map(|z| z * x[idx][j])
    };
    let k3 = n3 / 2;
    let n3_check = g.check_frequency([0, 0, n3])[2];
    let mut acc = vec![C64::new(0.0, 0.0); comps.len()];
    for m1 in -nm..=nm {
        for m2 in -nm..=nm {
            let m = [m1, m2, k3];
            if !has_horizontal(m) {
                continue;
            }
            let left = part([-m1, -m2, k3], a)[2] * n3_check;
            let right = part(m, b);
            for (o, &l) in acc.iter_mut().zip(comps) {
                *o += left * right[l];
            }
        }
    }
    acc
}

impl AuditCheck for BcAntisymmetry {
    fn name(&self) -> &'static str {
        "bc-antisymmetry"
    }

    fn residual(&self, forms: &Forms, data: &SpectralField) -> Result<f64> {
        let basis = forms.basis();
        let nm = basis.geometry().n_max() as i64;
        let norm = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut worst: f64 = 0.0;
        for n3 in (-nm..=nm).filter(|n| n % 2 == 0 && *n != 0) {
            for comps in [&[0, 1][..], &[3][..]] {
                let pm = bc_sum(basis, data, n3, Sign::Plus, Sign::Minus, comps);
                let mp = bc_sum(basis, data, n3, Sign::Minus, Sign::Plus, comps);
                let sum: Vec<C64> = pm.iter().zip(&mp).map(|(p, m)| p + m).collect();
                worst = worst.max(relative(norm(&sum), norm(&pm) + norm(&mp)));
            }
        }
        Ok(worst)
    }
}

pub fn audit_checks() -> Vec<Box<dyn AuditCheck>> {
    vec![
        Box::new(UnderlineCancellation),
        Box::new(BarOscFree),
        Box::new(BarTransport),
        Box::new(OscDissipation),
        Box::new(EnergyNeutrality),
        Box::new(BcAntisymmetry),
    ]
}

pub fn check_by_name(name: &str) -> Result<Box<dyn AuditCheck>> {
    audit_checks().into_iter().find(|c| c.name() == name).ok_or_else(|| {
        let known: Vec<_> = audit_checks().iter().map(|c| c.name()).collect();
        Error::Config(format!("unknown audit check `{name}` (known: {})", known.join(", ")))
    })
}

pub const AUDIT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub check: &'static str,
    pub seed: u64,
    pub residual: f64,
    pub elapsed: Duration,
}

impl AuditRow {
    pub fn passed(&self) -> bool {
        self.residual <= AUDIT_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(AuditRow::passed)
    }

    /// Names of the failing identities, each once.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = self.rows.iter().filter(|r| !r.passed()).map(|r| r.check).collect();
        out.dedup();
        out
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::Audit(format!("identities failed: {}", self.failures().join(", "))))
        }
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["check", "seed", "residual", "passed"]);
        for r in &self.rows {
            t.push(vec![r.check.into(), r.seed.to_string(), fmt_f64(r.residual), r.passed().to_string()]);
        }
        t
    }
}

/// Runs the configured checks on `audit_seeds` random fields with seeds
/// `seed, seed + 1, ...`.
pub fn audit_cancellations(config: &SimConfig) -> Result<AuditReport> {
    let checks: Vec<Box<dyn AuditCheck>> = if config.audit_checks.is_empty() {
        audit_checks()
    } else {
        config.audit_checks.iter().map(|n| check_by_name(n)).collect::<Result<_>>()?
    };
    let forms = Forms::new(config.geometry()?, config.nu)?;
    let seeds: Vec<u64> = (0..config.audit_seeds).map(|j| config.seed.wrapping_add(j)).collect();
    let fields: Vec<SpectralField> = seeds
        .iter()
        .map(|&s| random_initial_data_seeded(config, s).map(|d| d.field))
        .collect::<Result<_>>()?;
    audit_fields(&forms, &checks, &seeds, &fields)
}

/// Evaluates `checks` on explicit fields, labelled by `seeds`.
pub fn audit_fields(
    forms: &Forms,
    checks: &[Box<dyn AuditCheck>],
    seeds: &[u64],
    fields: &[SpectralField],
) -> Result<AuditReport> {
    let mut rows = Vec::new();
    for check in checks {
        for (&seed, field) in seeds.iter().zip(fields) {
            let start = Instant::now();
            let residual = check.residual(forms, field)?;
            rows.push(AuditRow {
                check: check.name(),
                seed,
                residual,
                elapsed: start.elapsed(),
            });
        }
    }
    Ok(AuditReport { rows })
}

// ---- resonance atlas and norms report --------------------------------------

pub fn resonance_table(geom: &TorusGeometry) -> Result<Table> {
    let mut t = Table::new(&["k1", "k2", "k3", "m1", "m2", "m3", "n1", "n2", "n3", "a", "b", "c"]);
    for r in enumerate_kstar(geom, geom.n_max())? {
        let mut row: Vec<String> = r.k.iter().chain(&r.m).chain(&r.n).map(|x| x.to_string()).collect();
        row.extend([r.a, r.b, r.c].map(|s| s.symbol().to_string()));
        t.push(row);
    }
    Ok(t)
}

/// Dyadic block norms, regularity coefficients and Bernstein ratios of the
/// configured initial data.
pub fn norms_table(config: &SimConfig) -> Result<Table> {
    let geom = config.geometry()?;
    let v = random_initial_data(config)?.field;
    let tr = Transformer::new(geom);
    let reg = dyadic_regularity(config.s, &v);
    let mut t = Table::new(&["q", "block_L2", "c_q", "bernstein_derivative", "bernstein_integrability"]);
    for (j, q) in (-1..=q_max(&geom)).enumerate() {
        let block = dyadic_block(q, &v);
        let (der, int) = if block.norm() > 0.0 {
            let r = bernstein_ratio(&tr, q, &block, 1.0, 2.0, f64::INFINITY)?;
            (r.derivative, r.integrability)
        } else {
            (0.0, 0.0)
        };
        t.push(vec![q.to_string(), fmt_f64(block.norm()), fmt_f64(reg.coefficients[j]), fmt_f64(der), fmt_f64(int)]);
    }
    Ok(t)
}

/// Energy ledger of one filtered run as a table.
pub fn simulate(config: &SimConfig, eps: f64) -> Result<(Table, SimState)> {
    let geom = config.geometry()?;
    let v0 = random_initial_data(config)?.field;
    let solver = FilteredSolver::new(FilteredSystem::new(geom, config.nu, eps)?, scheme_by_name(&config.scheme)?);
    let run = solver.run(&SimState::new(v0, config.nu, eps)?, config.t_end, config.dt, config.every(config.dt))?;
    let e0 = run.ledger[0].energy;
    let mut t = Table::new(&["t", "energy", "dissipated", "energy_drift"]);
    for r in &run.ledger {
        t.push(vec![fmt_f64(r.t), fmt_f64(r.energy), fmt_f64(r.dissipated), fmt_f64(r.drift(e0))]);
    }
    let last = run.snapshots.last().expect("runs keep their final state").clone();
    Ok((t, last))
}

/// Norms of the three parts along the limit trajectory.
pub fn limit_table(config: &SimConfig) -> Result<Table> {
    let geom = config.geometry()?;
    let v0 = random_initial_data(config)?.field;
    let system = LimitSystem::new(geom, config.nu)?;
    let traj = system.solve(&v0, config.t_end, config.limit_dt, config.every(config.limit_dt))?;
    let mut t = Table::new(&["t", "underline_L2", "bar_L2", "osc_L2", "osc_dissipated"]);
    for (s, d) in traj.snapshots.iter().zip(&traj.osc_dissipated) {
        t.push(vec![fmt_f64(s.t), fmt_f64(s.underline.norm()), fmt_f64(s.bar.norm()), fmt_f64(s.osc.norm()), fmt_f64(*d)]);
    }
    Ok(t)
}
