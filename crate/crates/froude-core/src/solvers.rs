//! Time integration of the filtered system and of the resonant limit
//! system, a priori energy bounds, remainder diagnostics and checkpoints.
//!
//! The filter is `V = L(t/ε) U` with `L(τ) = exp(-τ PA)`. Differentiating
//! gives `∂_t U = -L(-τ) P(L(τ)U·∇L(τ)U) + L(-τ) A_2 L(τ) U`, which is
//! [`Forms::q_eps`] and [`Forms::a2_eps`] evaluated at `-t`.

use std::fs;
use std::path::Path;

use num_rational::Ratio;

use crate::bilinear_forms::{Forms, TriadClass, TriadTable};
use crate::error::{Error, Result};
use crate::torus_spectral::{Mode, SpectralField, TorusGeometry, Transformer, C64, ZERO4};
use crate::wave_basis::{BranchCoeffs, WaveBasis};

/// `t/ε`, with `ε = ∞` meaning the filter is switched off.
pub fn phase(t: f64, eps: f64) -> f64 {
    if eps.is_infinite() {
        0.0
    } else {
        t / eps
    }
}

fn validate_params(nu: f64, eps: f64) -> Result<()> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("viscosity {nu} must be finite and nonnegative")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
    }
    Ok(())
}

fn check_field(u: &SpectralField, t: f64) -> Result<()> {
    if !u.is_finite() {
        return Err(Error::Numerical {
            t,
            reason: "non-finite coefficients".into(),
        });
    }
    u.require_zero_mean(1e-12)?;
    u.require_divergence_free(1e-10)
}

/// State of the filtered system: `U^ε` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: SpectralField,
    pub nu: f64,
    pub eps: f64,
}

impl SimState {
    pub fn new(u: SpectralField, nu: f64, eps: f64) -> Result<Self> {
        validate_params(nu, eps)?;
        check_field(&u, 0.0)?;
        Ok(SimState { t: 0.0, u, nu, eps })
    }

    pub fn geometry(&self) -> &TorusGeometry {
        self.u.geometry()
    }

    pub fn tau(&self) -> f64 {
        phase(self.t, self.eps)
    }

    /// The physical unknown `V^ε = L(t/ε) U^ε`.
    pub fn physical(&self, basis: &WaveBasis) -> SpectralField {
        basis.apply_filter(self.tau(), &self.u)
    }
}

// ---- per-mode linear propagators ------------------------------------------

type Block = [[C64; 3]; 3];

const ZERO_BLOCK: Block = [[C64 { re: 0.0, im: 0.0 }; 3]; 3];

/// `exp(hG)` for a generator that couples branches 1 and 2 only.
fn exp_block(g: &Block, h: f64) -> Block {
    let mut out = ZERO_BLOCK;
    out[0][0] = (g[0][0] * h).exp();
    let s = (g[1][1] + g[2][2]) * 0.5;
    let k = [[g[1][1] - s, g[1][2]], [g[2][1], g[2][2] - s]];
    // K² = d·I for a traceless 2×2 matrix.
    let d = k[0][0] * k[0][0] + k[0][1] * k[1][0];
    let z2 = d * (h * h);
    let (ch, sh) = if z2.norm() < 1e-6 {
        (
            1.0 + z2 / 2.0 + z2 * z2 / 24.0,
            (1.0 + z2 / 6.0 + z2 * z2 / 120.0) * h,
        )
    } else {
        let z = z2.sqrt();
        (z.cosh(), z.sinh() / z * h)
    };
    let es = (s * h).exp();
    out[1][1] = es * (ch + sh * k[0][0]);
    out[1][2] = es * sh * k[0][1];
    out[2][1] = es * sh * k[1][0];
    out[2][2] = es * (ch + sh * k[1][1]);
    out
}

#[derive(Clone, Debug)]
struct Propagator {
    mats: Vec<Option<Block>>,
}

impl Propagator {
    fn new(generators: &[Option<Block>], h: f64) -> Self {
        Propagator {
            mats: generators.iter().map(|g| g.as_ref().map(|g| exp_block(g, h))).collect(),
        }
    }

    fn apply_coeffs(&self, x: &[[C64; 3]]) -> BranchCoeffs {
        x.iter()
            .zip(&self.mats)
            .map(|(xs, m)| match m {
                Some(m) => [0, 1, 2].map(|i| m[i][0] * xs[0] + m[i][1] * xs[1] + m[i][2] * xs[2]),
                None => [C64::new(0.0, 0.0); 3],
            })
            .collect()
    }

    fn apply(&self, basis: &WaveBasis, v: &SpectralField) -> SpectralField {
        basis.synthesize(&self.apply_coeffs(&basis.coefficients(v)))
    }
}

/// Branch generators `x' = Gx` of `A_2 - PA/ε` (`exact`) and of the resonant
/// average of `A_2` (`averaged`), one block per mode.
fn generators(forms: &Forms, eps: f64, averaged: bool) -> Vec<Option<Block>> {
    let basis = forms.basis();
    (0..forms.geometry().mode_count())
        .map(|idx| {
            let e = basis.triple(idx)?;
            let m = forms.a2_branch_matrix(idx);
            let mut g = ZERO_BLOCK;
            for a in 0..3 {
                for b in 0..3 {
                    if !averaged || e.sign(a) == e.sign(b) {
                        g[b][a] = m[a][b];
                    }
                }
                if !averaged && !eps.is_infinite() {
                    g[a][a] += C64::new(0.0, e.branch_frequency(a) / eps);
                }
            }
            debug_assert!([g[0][1], g[0][2], g[1][0], g[2][0]].iter().all(|z| z.norm() < 1e-9 * (1.0 + g[0][0].norm())));
            Some(g)
        })
        .collect()
}

// ---- Lawson RK4 ------------------------------------------------------------

/// Result of one integrating-factor RK4 step.
#[derive(Clone, Debug)]
pub struct LawsonStep {
    pub y: SpectralField,
    /// Stage values at `t`, `t + h/2`, `t + h/2`, `t + h`.
    pub stages: [SpectralField; 4],
}

/// RK4 on `y' = Ly + N(t, y)` after factoring out the exact flow of `L`.
fn lawson_rk4(
    basis: &WaveBasis,
    y0: &SpectralField,
    t: f64,
    h: f64,
    half: &Propagator,
    full: &Propagator,
    mut rhs: impl FnMut(usize, f64, &SpectralField) -> Result<SpectralField>,
) -> Result<LawsonStep> {
    let e_half = |v: &SpectralField| half.apply(basis, v);
    let e_full = |v: &SpectralField| full.apply(basis, v);

    let k1 = rhs(0, t, y0)?;
    let mut ya = y0.clone();
    ya.axpy(0.5 * h, &k1);
    let ya = e_half(&ya);
    let k2 = rhs(1, t + 0.5 * h, &ya)?;
    let y0_half = e_half(y0);
    let mut yb = y0_half.clone();
    yb.axpy(0.5 * h, &k2);
    let k3 = rhs(2, t + 0.5 * h, &yb)?;
    let y0_full = e_full(y0);
    let mut yc = y0_full.clone();
    yc.axpy(h, &e_half(&k3));
    let k4 = rhs(3, t + h, &yc)?;

    let mut mid = &k2 + &k3;
    mid = e_half(&mid);
    let mut y = y0_full;
    y.axpy(h / 6.0, &e_full(&k1));
    y.axpy(h / 3.0, &mid);
    y.axpy(h / 6.0, &k4);
    Ok(LawsonStep {
        y,
        stages: [y0.clone(), ya, yb, yc],
    })
}

fn rk4_quadrature(h: f64, f: [f64; 4]) -> f64 {
    h / 6.0 * (f[0] + 2.0 * f[1] + 2.0 * f[2] + f[3])
}

// ---- filtered system -------------------------------------------------------

/// Right-hand-side data of the filtered system on one lattice.
#[derive(Clone, Debug)]
pub struct FilteredSystem {
    forms: Forms,
    eps: f64,
    nonlinear: bool,
    exact: Vec<Option<Block>>,
    averaged: Vec<Option<Block>>,
}

impl FilteredSystem {
    pub fn new(geom: TorusGeometry, nu: f64, eps: f64) -> Result<Self> {
        validate_params(nu, eps)?;
        let forms = Forms::new(geom, nu)?;
        let exact = generators(&forms, eps, false);
        let averaged = generators(&forms, eps, true);
        Ok(FilteredSystem {
            forms,
            eps,
            nonlinear: true,
            exact,
            averaged,
        })
    }

    /// Switches the transport term on or off.
    pub fn with_nonlinear(mut self, on: bool) -> Self {
        self.nonlinear = on;
        self
    }

    pub fn forms(&self) -> &Forms {
        &self.forms
    }

    pub fn basis(&self) -> &WaveBasis {
        self.forms.basis()
    }

    pub fn nu(&self) -> f64 {
        self.forms.nu()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn check_state(&self, state: &SimState) -> Result<()> {
        if *state.geometry() != *self.forms.geometry() {
            return Err(Error::Mismatch("state lattice differs from the system lattice".into()));
        }
        if state.nu != self.nu() || state.eps != self.eps {
            return Err(Error::Mismatch(format!(
                "state (ν = {}, ε = {}) does not match system (ν = {}, ε = {})",
                state.nu,
                state.eps,
                self.nu(),
                self.eps
            )));
        }
        Ok(())
    }

    /// `-P(v·∇V)` for solenoidal `V`.
    fn transport(&self, v: &SpectralField) -> Result<SpectralField> {
        if !self.nonlinear {
            return Ok(SpectralField::zeros(*v.geometry()));
        }
        let s = self.forms.transformer().self_transport(v)?;
        Ok(-&s.leray_project_unchecked())
    }

    /// `½‖V‖²` on coefficients.
    pub fn energy(v: &SpectralField) -> f64 {
        0.5 * v.norm_sq()
    }

    /// `ν‖∇v‖²` with `v` the velocity part of `V`.
    pub fn dissipation_rate(&self, v: &SpectralField) -> f64 {
        let g = v.geometry();
        self.nu()
            * v.coeffs()
                .iter()
                .enumerate()
                .map(|(i, c)| g.freq_sq(g.mode(i)).1 * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()))
                .sum::<f64>()
    }

    /// Advective bound `dt ≤ 0.5 / (N max|u|)`.
    pub fn cfl_limit(&self, v: &SpectralField) -> Result<f64> {
        let phys = self.forms.transformer().to_physical(v)?;
        let m3 = phys.grid_size().pow(3);
        let umax = (0..m3)
            .map(|x| (0..3).map(|l| phys.component(l)[x].powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(if umax == 0.0 {
            f64::INFINITY
        } else {
            0.5 / (self.forms.geometry().n_max() as f64 * umax)
        })
    }

    fn finish(&self, t: f64, u: SpectralField, state: &SimState) -> Result<SimState> {
        let mut u = u.leray_project_unchecked();
        u.pin_zero_mode();
        if !u.is_finite() {
            return Err(Error::Numerical {
                t,
                reason: "non-finite coefficients after step".into(),
            });
        }
        Ok(SimState {
            t,
            u,
            nu: state.nu,
            eps: state.eps,
        })
    }
}

/// Outcome of a single step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: SimState,
    /// `ν ∫ ‖∇v‖² dt` over the step.
    pub dissipation: f64,
}

/// A time integrator for the filtered system.
pub trait TimeScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn step(&self, sys: &FilteredSystem, state: &SimState, dt: f64) -> Result<StepOutcome>;
}

/// Integrates `V` with the exact per-mode flow of `A_2 - PA/ε` and RK4 on the
/// transport, then maps back to `U`. No step restriction comes from `1/ε`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExponentialScheme;

impl TimeScheme for ExponentialScheme {
    fn name(&self) -> &'static str {
        "exponential"
    }

    fn step(&self, sys: &FilteredSystem, state: &SimState, dt: f64) -> Result<StepOutcome> {
        let basis = sys.basis();
        let t = state.t;
        let v0 = state.physical(basis);
        let half = Propagator::new(&sys.exact, 0.5 * dt);
        let full = Propagator::new(&sys.exact, dt);
        let step = lawson_rk4(basis, &v0, t, dt, &half, &full, |_, _, v| sys.transport(v))?;
        let rates = [0, 1, 2, 3].map(|i| sys.dissipation_rate(&step.stages[i]));
        let u1 = basis.apply_filter(-phase(t + dt, sys.eps), &step.y);
        Ok(StepOutcome {
            state: sys.finish(t + dt, u1, state)?,
            dissipation: rk4_quadrature(dt, rates),
        })
    }
}

/// Integrates `U` directly: the resonant average of the dissipation is the
/// integrating factor and the oscillating remainder of `A_2^ε` joins the
/// transport inside the RK4 stages.
#[derive(Clone, Copy, Debug, Default)]
pub struct AveragedFactorScheme;

impl TimeScheme for AveragedFactorScheme {
    fn name(&self) -> &'static str {
        "averaged-factor"
    }

    fn step(&self, sys: &FilteredSystem, state: &SimState, dt: f64) -> Result<StepOutcome> {
        let basis = sys.basis();
        let forms = sys.forms();
        let eps = sys.eps;
        let t = state.t;
        let half = Propagator::new(&sys.averaged, 0.5 * dt);
        let full = Propagator::new(&sys.averaged, dt);
        let step = lawson_rk4(basis, &state.u, t, dt, &half, &full, |_, s, u| {
            let tau = phase(s, eps);
            let mut r = if sys.nonlinear {
                -&forms.q_eps_self(-tau, u)?
            } else {
                SpectralField::zeros(*u.geometry())
            };
            r += &dissipative_oscillation(forms, tau, u)?;
            Ok(r)
        })?;
        let times = [t, t + 0.5 * dt, t + 0.5 * dt, t + dt];
        let rates = [0, 1, 2, 3].map(|i| sys.dissipation_rate(&basis.apply_filter(phase(times[i], eps), &step.stages[i])));
        Ok(StepOutcome {
            state: sys.finish(t + dt, step.y, state)?,
            dissipation: rk4_quadrature(dt, rates),
        })
    }
}

/// All registered schemes; the first is the default.
pub fn schemes() -> Vec<Box<dyn TimeScheme>> {
    vec![Box::new(ExponentialScheme), Box::new(AveragedFactorScheme)]
}

pub fn scheme_by_name(name: &str) -> Result<Box<dyn TimeScheme>> {
    schemes().into_iter().find(|s| s.name() == name).ok_or_else(|| {
        let known: Vec<_> = schemes().iter().map(|s| s.name()).collect();
        Error::Config(format!("unknown scheme '{name}' (known: {})", known.join(", ")))
    })
}

/// Energy bookkeeping of a filtered run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    /// `½‖V(t)‖²`
    pub energy: f64,
    /// `ν ∫_0^t ‖∇v‖²`
    pub dissipated: f64,
}

impl EnergyRecord {
    /// Relative defect of `½‖V‖² + ν∫‖∇v‖² = ½‖V_0‖²`.
    pub fn drift(&self, initial: f64) -> f64 {
        if initial == 0.0 {
            (self.energy + self.dissipated).abs()
        } else {
            (self.energy + self.dissipated - initial).abs() / initial
        }
    }
}

/// Snapshots and energy ledger of a filtered run.
#[derive(Clone, Debug)]
pub struct FilteredRun {
    pub snapshots: Vec<SimState>,
    pub ledger: Vec<EnergyRecord>,
}

impl FilteredRun {
    pub fn max_drift(&self) -> f64 {
        let e0 = self.ledger[0].energy;
        self.ledger.iter().map(|r| r.drift(e0)).fold(0.0, f64::max)
    }
}

/// A filtered system paired with a time scheme.
pub struct FilteredSolver {
    system: FilteredSystem,
    scheme: Box<dyn TimeScheme>,
}

impl FilteredSolver {
    pub fn new(system: FilteredSystem, scheme: Box<dyn TimeScheme>) -> Self {
        FilteredSolver { system, scheme }
    }

    pub fn system(&self) -> &FilteredSystem {
        &self.system
    }

    pub fn scheme_name(&self) -> &'static str {
        self.scheme.name()
    }

    /// One step, with the advective step bound and finiteness enforced.
    pub fn step(&self, state: &SimState, dt: f64) -> Result<StepOutcome> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
        }
        self.system.check_state(state)?;
        let v = state.physical(self.system.basis());
        let limit = if self.system.nonlinear {
            self.system.cfl_limit(&v)?
        } else {
            f64::INFINITY
        };
        if dt > limit {
            return Err(Error::Numerical {
                t: state.t,
                reason: format!("step {dt:e} exceeds the advective bound {limit:e}"),
            });
        }
        self.scheme.step(&self.system, state, dt)
    }

    /// Advances to `t_end` with fixed steps, keeping every `every`-th state
    /// (and the last one).
    pub fn run(&self, initial: &SimState, t_end: f64, dt: f64, every: usize) -> Result<FilteredRun> {
        let steps = step_count(t_end - initial.t, dt)?;
        let every = every.max(1);
        let basis = self.system.basis();
        let mut state = initial.clone();
        let mut dissipated = 0.0;
        let record = |s: &SimState, d: f64| EnergyRecord {
            t: s.t,
            energy: FilteredSystem::energy(&s.physical(basis)),
            dissipated: d,
        };
        let mut ledger = vec![record(&state, 0.0)];
        let mut snapshots = vec![state.clone()];
        let h = (t_end - initial.t) / steps as f64;
        for i in 1..=steps {
            let out = self.step(&state, h)?;
            dissipated += out.dissipation;
            state = out.state;
            ledger.push(record(&state, dissipated));
            if i % every == 0 || i == steps {
                snapshots.push(state.clone());
            }
        }
        Ok(FilteredRun { snapshots, ledger })
    }
}

fn step_count(span: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && span >= 0.0 && span.is_finite()) {
        return Err(Error::InvalidArgument(format!("cannot cover [0, {span}] with step {dt}")));
    }
    Ok(((span / dt) - 1e-9).ceil().max(0.0) as usize)
}

// ---- limit system ---------------------------------------------------------

/// Exact solution of the horizontally averaged heat flow: velocity modes
/// decay like `exp(-ν ň_3² t)`, the density is frozen.
pub fn solve_underline(nu: f64, u0: &SpectralField, t: f64) -> Result<SpectralField> {
    let g = *u0.geometry();
    let scale = u0.max_abs();
    for (i, c) in u0.coeffs().iter().enumerate() {
        let n = g.mode(i);
        let live = c.iter().any(|z| z.norm() > 0.0);
        if live && (n[0] != 0 || n[1] != 0) {
            return Err(Error::Support(format!("horizontally averaged data has mode {n:?}")));
        }
        if c[2].norm() > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "horizontally averaged data has vertical velocity {:e} at mode {n:?}",
                c[2].norm()
            )));
        }
    }
    Ok(u0.map_modes(|n, c| {
        let f = (-nu * g.freq_sq(n).1 * t).exp();
        [c[0] * f, c[1] * f, C64::new(0.0, 0.0), c[3]]
    }))
}

/// The three parts of the limit solution at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitState {
    pub t: f64,
    pub underline: SpectralField,
    pub bar: SpectralField,
    pub osc: SpectralField,
}

impl LimitState {
    pub fn from_initial(basis: &WaveBasis, v0: &SpectralField) -> Result<Self> {
        let d = basis.decompose(v0)?;
        Ok(LimitState {
            t: 0.0,
            underline: d.underline,
            bar: d.bar,
            osc: d.osc,
        })
    }

    /// `U̲ + Ū + U_osc`.
    pub fn recombine(&self) -> SpectralField {
        &(&self.underline + &self.bar) + &self.osc
    }

    /// `U̲ + Ū + L(t/ε) U_osc`, the approximation of `V^ε(t)`.
    pub fn reconstruct(&self, basis: &WaveBasis, eps: f64) -> SpectralField {
        let osc = basis.apply_filter(phase(self.t, eps), &self.osc);
        &(&self.underline + &self.bar) + &osc
    }
}

/// Stores of a limit solve.
#[derive(Clone, Debug)]
pub struct LimitTrajectory {
    pub snapshots: Vec<LimitState>,
    /// `ν ∫_0^t ‖∇U_osc‖²` at each snapshot.
    pub osc_dissipated: Vec<f64>,
    /// Largest component of a raw step leaving its subspace.
    pub projection_drift: f64,
}

/// The decoupled limit system: exact heat flow for the horizontal average,
/// 2.5D Navier–Stokes for the barotropic part and resonant wave dynamics.
#[derive(Clone, Debug)]
pub struct LimitSystem {
    forms: Forms,
    osc_table: TriadTable,
    averaged: Vec<Option<Block>>,
}

impl LimitSystem {
    pub fn new(geom: TorusGeometry, nu: f64) -> Result<Self> {
        validate_params(nu, f64::INFINITY)?;
        let forms = Forms::new(geom, nu)?;
        let osc_table = forms.osc_table();
        let averaged = generators(&forms, f64::INFINITY, true);
        Ok(LimitSystem {
            forms,
            osc_table,
            averaged,
        })
    }

    pub fn forms(&self) -> &Forms {
        &self.forms
    }

    pub fn nu(&self) -> f64 {
        self.forms.nu()
    }

    pub fn osc_table(&self) -> &TriadTable {
        &self.osc_table
    }

    fn underline_stages(&self, u0: &SpectralField, t: f64, dt: f64) -> Result<[SpectralField; 4]> {
        let mid = solve_underline(self.nu(), u0, t + 0.5 * dt)?;
        Ok([
            solve_underline(self.nu(), u0, t)?,
            mid.clone(),
            mid,
            solve_underline(self.nu(), u0, t + dt)?,
        ])
    }

    fn bar_rhs(&self, underline: &SpectralField, bar: &SpectralField) -> Result<SpectralField> {
        let carrier = underline + bar;
        let adv = self
            .forms
            .transformer()
            .convolve_quadratic(&carrier, bar, crate::torus_spectral::Stencil::Horizontal)?;
        Ok(-&self.forms.basis().bar_part(&adv))
    }

    /// One RK4 step of `∂_t ū + Π_0[(ū + u̲)·∇_h ū] = νΔū`, with the
    /// horizontal average given exactly from its initial value `u0`.
    pub fn step_bar(&self, bar: &SpectralField, u0: &SpectralField, t: f64, dt: f64) -> Result<LawsonStep> {
        let under = self.underline_stages(u0, t, dt)?;
        let half = Propagator::new(&self.averaged, 0.5 * dt);
        let full = Propagator::new(&self.averaged, dt);
        lawson_rk4(self.forms.basis(), bar, t, dt, &half, &full, |i, _, b| self.bar_rhs(&under[i], b))
    }

    fn osc_rhs(&self, underline: &SpectralField, bar: &SpectralField, osc: &SpectralField) -> SpectralField {
        let basis = self.forms.basis();
        let total = &(underline + bar) + osc;
        let x = basis.coefficients(&total);
        let mut out = self.osc_table.apply(&x, &x);
        for o in out.iter_mut() {
            o[0] = C64::new(0.0, 0.0);
            o[1] = -o[1];
            o[2] = -o[2];
        }
        basis.synthesize(&out)
    }

    /// One RK4 step of the resonant wave equation, driven by the barotropic
    /// and averaged fields at the stage times. The wave dissipation is the
    /// resonant average of `A_2`, i.e. `(ν/2)Δ`.
    pub fn step_osc(
        &self,
        osc: &SpectralField,
        bar_stages: &[SpectralField; 4],
        underline_stages: &[SpectralField; 4],
        t: f64,
        dt: f64,
    ) -> Result<LawsonStep> {
        let half = Propagator::new(&self.averaged, 0.5 * dt);
        let full = Propagator::new(&self.averaged, dt);
        lawson_rk4(self.forms.basis(), osc, t, dt, &half, &full, |i, _, o| {
            Ok(self.osc_rhs(&underline_stages[i], &bar_stages[i], o))
        })
    }

    /// `ν‖∇W‖²` summed over all four components.
    fn gradient_rate(&self, w: &SpectralField) -> f64 {
        let g = w.geometry();
        self.nu()
            * w.coeffs()
                .iter()
                .enumerate()
                .map(|(i, c)| g.freq_sq(g.mode(i)).1 * c.iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
    }

    /// Advances underline, bar and osc parts together; the underline part is
    /// always recomputed from its initial value.
    pub fn solve(&self, v0: &SpectralField, t_end: f64, dt: f64, every: usize) -> Result<LimitTrajectory> {
        let basis = self.forms.basis();
        let mut state = LimitState::from_initial(basis, v0)?;
        let u0 = state.underline.clone();
        let steps = step_count(t_end, dt)?;
        let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
        let every = every.max(1);
        let mut snapshots = vec![state.clone()];
        let mut dissipated = 0.0;
        let mut osc_dissipated = vec![0.0];
        let mut drift: f64 = 0.0;
        for i in 1..=steps {
            let t = state.t;
            let under = self.underline_stages(&u0, t, h)?;
            let bar = self.step_bar(&state.bar, &u0, t, h)?;
            let osc = self.step_osc(&state.osc, &bar.stages, &under, t, h)?;
            let rates = [0, 1, 2, 3].map(|j| self.gradient_rate(&osc.stages[j]));
            dissipated += rk4_quadrature(h, rates);
            let bar_y = basis.bar_part(&bar.y);
            let osc_y = basis.osc_part(&osc.y);
            drift = drift.max((&bar_y - &bar.y).max_abs()).max((&osc_y - &osc.y).max_abs());
            let t1 = t + h;
            if !(bar_y.is_finite() && osc_y.is_finite()) {
                return Err(Error::Numerical {
                    t: t1,
                    reason: "non-finite limit solution".into(),
                });
            }
            state = LimitState {
                t: t1,
                underline: under[3].clone(),
                bar: bar_y,
                osc: osc_y,
            };
            if i % every == 0 || i == steps {
                snapshots.push(state.clone());
                osc_dissipated.push(dissipated);
            }
        }
        Ok(LimitTrajectory {
            snapshots,
            osc_dissipated,
            projection_drift: drift,
        })
    }

    /// `-Q(U, U) + A_2^0 U` from the full resonant sums, for residual checks.
    pub fn full_rhs(&self, u: &SpectralField) -> Result<SpectralField> {
        let q = self.forms.q_limit(u, u)?;
        let a = self.forms.a2_limit(u)?;
        Ok(&a - &q)
    }
}

// ---- energy bounds ---------------------------------------------------------

/// Constants of the a priori bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    pub big_c: f64,
    pub small_c: f64,
    pub k: f64,
    /// Vertical integrability exponent; `f64::INFINITY` allowed.
    pub p: f64,
    /// Horizontal regularity.
    pub sigma: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants {
            big_c: 1.0,
            small_c: 1.0,
            k: 1.0,
            p: f64::INFINITY,
            sigma: 1.0,
        }
    }
}

/// Norms of the decomposed initial data entering the bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundNorms {
    /// `‖ū^h_0‖_{H^s}`
    pub bar_hs: f64,
    /// `‖∇_h ū^h_0‖_{L^p_v H^σ_h}`
    pub grad_bar_lp: f64,
    /// `‖∇_h ū^h_0‖_{L^∞_v L²_h}`
    pub grad_bar_linf: f64,
    /// `‖ū^h_0‖_{L^∞_v L²_h}`
    pub bar_linf: f64,
    /// `‖u̲^h_0‖_{H^s}`
    pub underline_h_hs: f64,
    /// `‖U̲_0‖_{H^s}`
    pub underline_hs: f64,
    /// `‖U̲_0‖_{L²}`
    pub underline_l2: f64,
    /// `‖U_osc,0‖_{L²}`
    pub osc_l2: f64,
    /// `‖U_osc,0‖_{H^s}`
    pub osc_hs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBounds {
    pub horizon: f64,
    pub phi: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub norms: BoundNorms,
}

fn sobolev(s: f64, v: &SpectralField, comps: &[usize]) -> f64 {
    let g = v.geometry();
    v.coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| (1.0 + g.freq_sq(g.mode(i)).1).powf(s) * comps.iter().map(|&l| c[l].norm_sqr()).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Horizontal norms of the slices `x_3 = const` of components `comps`,
/// `(Σ_{n_h} w(n_h) |Σ_{n_3} V̂(n) e^{iň_3x_3}|²)^{1/2}`, sampled on `m`
/// equispaced heights.
fn slice_norms(v: &SpectralField, comps: &[usize], m: usize, w: impl Fn(Mode) -> f64) -> Vec<f64> {
    let g = v.geometry();
    let n = g.n_max() as i64;
    let mut acc = vec![0.0; m];
    for n1 in -n..=n {
        for n2 in -n..=n {
            let weight = w([n1, n2, 0]);
            if weight == 0.0 {
                continue;
            }
            for &l in comps {
                for (j, a) in acc.iter_mut().enumerate() {
                    let x = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    let s: C64 = (-n..=n).map(|n3| v.get([n1, n2, n3])[l] * C64::from_polar(1.0, n3 as f64 * x)).sum();
                    *a += weight * s.norm_sqr();
                }
            }
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

/// `L^p` over the vertical samples with the normalized measure.
fn vertical_lp(samples: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        samples.iter().copied().fold(0.0, f64::max)
    } else {
        (samples.iter().map(|x| x.powf(p)).sum::<f64>() / samples.len() as f64).powf(1.0 / p)
    }
}

/// Nested-exponential a priori bounds evaluated from the decomposed data.
/// Norms use the normalized measure, so `L²` norms are coefficient sums.
pub fn energy_bounds(
    basis: &WaveBasis,
    v0: &SpectralField,
    horizon: f64,
    nu: f64,
    s: f64,
    c: &BoundConstants,
) -> Result<EnergyBounds> {
    if !(s > 0.5) {
        return Err(Error::InvalidArgument(format!("regularity s = {s} must exceed 1/2")));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument("the bounds need ν > 0".into()));
    }
    let d = basis.decompose(v0)?;
    let g = *v0.geometry();
    let m = 2 * (2 * g.n_max() + 1);
    let hgrad = |n: Mode| g.freq_sq(n).0;
    let hs_weight = |n: Mode| {
        let h2 = g.freq_sq(n).0;
        h2 * (1.0 + h2).powf(c.sigma)
    };
    let norms = BoundNorms {
        bar_hs: sobolev(s, &d.bar, &[0, 1]),
        grad_bar_lp: vertical_lp(&slice_norms(&d.bar, &[0, 1], m, hs_weight), c.p),
        grad_bar_linf: vertical_lp(&slice_norms(&d.bar, &[0, 1], m, hgrad), f64::INFINITY),
        bar_linf: vertical_lp(&slice_norms(&d.bar, &[0, 1], m, |_| 1.0), f64::INFINITY),
        underline_h_hs: sobolev(s, &d.underline, &[0, 1]),
        underline_hs: sobolev(s, &d.underline, &[0, 1, 2, 3]),
        underline_l2: d.underline.norm(),
        osc_l2: d.osc.norm(),
        osc_hs: sobolev(s, &d.osc, &[0, 1, 2, 3]),
    };
    let cn = c.small_c * nu;
    let g2 = norms.grad_bar_linf.powi(2);
    let inner = (c.k / cn * (1.0 + norms.bar_linf.powi(2)) * g2).exp();
    let phi = (c.big_c * c.k * c.k * g2 / cn * inner).exp();
    let e1 = c.big_c
        * norms.bar_hs.powi(2)
        * (c.big_c * c.k * phi / cn * norms.grad_bar_lp + c.big_c / nu * norms.underline_h_hs.powi(2)).exp();
    let e2 = c.big_c * norms.osc_l2.powi(2) * (e1 / nu + horizon * norms.underline_hs.powi(2)).exp();
    let e3 = norms.osc_hs.powi(2) * (e1 / nu + horizon * norms.underline_l2.powi(2) + e2 * e2 / nu).exp();
    Ok(EnergyBounds {
        horizon,
        phi,
        e1,
        e2,
        e3,
        norms,
    })
}

// ---- remainders ------------------------------------------------------------

/// Oscillating remainders of the filtered system around its limit.
#[derive(Clone, Debug)]
pub struct Remainders {
    /// Non-resonant interactions among horizontally oscillating modes.
    pub wave: SpectralField,
    /// Non-resonant interactions with one horizontally averaged input.
    pub mixed: SpectralField,
    /// Non-resonant interactions landing on horizontally averaged modes.
    pub averaged: SpectralField,
    /// `-(A_2^ε - A_2^0) U`.
    pub dissipative: SpectralField,
    /// `‖Σ parts - [(Q^ε - Q)(U,U) - (A_2^ε - A_2^0)U]‖`, the latter from the
    /// pseudo-spectral forms.
    pub identity_residual: f64,
}

impl Remainders {
    pub fn total(&self) -> SpectralField {
        &(&(&self.wave + &self.mixed) + &self.averaged) + &self.dissipative
    }
}

/// `(A_2^ε - A_2^0) U` for the filter direction used by the dynamics.
fn dissipative_oscillation(forms: &Forms, tau: f64, u: &SpectralField) -> Result<SpectralField> {
    let b = forms.basis();
    let filtered = b.apply_filter(-tau, &forms.a2(&b.apply_filter(tau, u)));
    Ok(&filtered - &forms.a2_limit(u)?)
}

/// Splits `Q^ε(U,U) - Q(U,U)` by triad class, summing the non-resonant terms
/// with their phases `e^{iτΩ}`, and adds the dissipative remainder.
pub fn remainders(forms: &Forms, t: f64, eps: f64, u: &SpectralField) -> Result<Remainders> {
    validate_params(forms.nu(), eps)?;
    u.require_zero_mean(1e-12)?;
    u.require_divergence_free(1e-10)?;
    let tau = phase(t, eps);
    let part = |class: TriadClass| -> Result<SpectralField> {
        Ok(forms
            .triad_sum(u, u, &[class], |term| (!term.resonant).then(|| C64::from_polar(1.0, tau * term.omega)))?
            .field)
    };
    let wave = part(TriadClass::Wave)?;
    let mixed = part(TriadClass::Mixed)?;
    let averaged = part(TriadClass::Averaged)?;
    let dissipative = -&dissipative_oscillation(forms, tau, u)?;
    let q_eps = forms.q_eps(-tau, 1.0, u, u)?;
    let reference = &(&q_eps - &forms.q_limit(u, u)?) + &dissipative;
    let out = Remainders {
        wave,
        mixed,
        averaged,
        dissipative,
        identity_residual: 0.0,
    };
    let identity_residual = (&out.total() - &reference).norm();
    Ok(Remainders {
        identity_residual,
        ..out
    })
}

/// `‖(Q^ε - Q)(U,U) - (A_2^ε - A_2^0)U‖` from a precomputed resonant table;
/// cheap enough to evaluate at every snapshot.
pub fn remainder_norm(forms: &Forms, resonant: &TriadTable, t: f64, eps: f64, u: &SpectralField) -> Result<f64> {
    let tau = phase(t, eps);
    let b = forms.basis();
    let x = b.coefficients(u);
    let q = b.synthesize(&resonant.apply(&x, &x));
    let q_eps = forms.q_eps_self(-tau, u)?;
    let s = dissipative_oscillation(forms, tau, u)?;
    Ok((&(&q_eps - &q) - &s).norm())
}

// ---- blow-up monitor ------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct BlowupReport {
    pub times: Vec<f64>,
    /// `‖∇u(t)‖_{L^∞}` (pointwise Frobenius norm of the velocity gradient).
    pub sup_gradient: Vec<f64>,
    /// Trapezoid-rule running integral of `sup_gradient`.
    pub integral: Vec<f64>,
    /// Set when the gradient ends above its initial value.
    pub growing: bool,
}

pub fn sup_gradient(tr: &Transformer, v: &SpectralField) -> Result<f64> {
    let g = *tr.geometry();
    if *v.geometry() != g {
        return Err(Error::Mismatch("field and transformer lattices differ".into()));
    }
    let mut scalars = Vec::with_capacity(9);
    for j in 0..3 {
        for l in 0..3 {
            scalars.push(
                v.coeffs()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| C64::new(0.0, g.check_frequency(g.mode(i))[j]) * c[l])
                    .collect(),
            );
        }
    }
    let grids = tr.scalars_to_grid(&scalars);
    let m3 = tr.grid_size().pow(3);
    Ok((0..m3)
        .map(|x| grids.iter().map(|gr| gr[x] * gr[x]).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

pub fn blowup_monitor(tr: &Transformer, snapshots: &[(f64, SpectralField)]) -> Result<BlowupReport> {
    let mut times = Vec::with_capacity(snapshots.len());
    let mut sup = Vec::with_capacity(snapshots.len());
    for (t, v) in snapshots {
        times.push(*t);
        sup.push(sup_gradient(tr, v)?);
    }
    let mut integral = vec![0.0; sup.len().min(1)];
    for i in 1..sup.len() {
        let prev = integral[i - 1];
        integral.push(prev + 0.5 * (times[i] - times[i - 1]) * (sup[i] + sup[i - 1]));
    }
    let growing = match (sup.first(), sup.last()) {
        (Some(a), Some(b)) => b > a,
        _ => false,
    };
    Ok(BlowupReport {
        times,
        sup_gradient: sup,
        integral,
        growing,
    })
}

// ---- checkpoints ----------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FRSP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 6 * 8;

/// Writes `state` as a little-endian binary checkpoint.
pub fn write_checkpoint(path: &Path, state: &SimState) -> Result<()> {
    let g = state.geometry();
    let mut buf = Vec::with_capacity(HEADER_LEN + g.mode_count() * 64);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(g.n_max() as u32).to_le_bytes());
    for x in g.periods().into_iter().chain([state.nu, state.eps, state.t]) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    for c in state.u.coeffs() {
        for z in c {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Best rational approximation of `x` with denominator at most `max_den`.
fn rationalize(x: f64, max_den: i64) -> Option<Ratio<i64>> {
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut r = x;
    let mut best = None;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            break;
        }
        let a = a as i64;
        let h = a.checked_mul(h1)?.checked_add(h0)?;
        let k = a.checked_mul(k1)?.checked_add(k0)?;
        if k > max_den {
            break;
        }
        best = Some(Ratio::new(h, k));
        if ((h as f64 / k as f64) - x).abs() <= 1e-13 * x.abs().max(1.0) {
            break;
        }
        (h0, h1, k0, k1) = (h1, h, k1, k);
        let frac = r - a as f64;
        if frac == 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    best
}

/// Reads a checkpoint written by [`write_checkpoint`]. Squared periods are
/// recovered as the nearest fraction with denominator at most 10⁶.
pub fn read_checkpoint(path: &Path) -> Result<SimState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic bytes".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u32_at(8) as usize;
    let mut square = [Ratio::new(1, 1); 3];
    for (i, s) in square.iter_mut().enumerate() {
        let a = f64_at(12 + 8 * i);
        if !(a > 0.0 && a.is_finite()) {
            return Err(bad(format!("period a{} = {a} is not positive", i + 1)));
        }
        *s = rationalize(a * a, 1_000_000)
            .filter(|r| ((*r.numer() as f64 / *r.denom() as f64).sqrt() - a).abs() <= 1e-12 * a)
            .ok_or_else(|| bad(format!("period a{} = {a} has no rational square", i + 1)))?;
    }
    let (nu, eps, t) = (f64_at(36), f64_at(44), f64_at(52));
    let geom = TorusGeometry::new(square, n).map_err(|e| bad(e.to_string()))?;
    let expected = HEADER_LEN + geom.mode_count() * 64;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut coeffs = Vec::with_capacity(geom.mode_count());
    let mut o = HEADER_LEN;
    for _ in 0..geom.mode_count() {
        let mut c = ZERO4;
        for z in c.iter_mut() {
            *z = C64::new(f64_at(o), f64_at(o + 8));
            o += 16;
        }
        coeffs.push(c);
    }
    validate_params(nu, eps).map_err(|e| bad(e.to_string()))?;
    Ok(SimState {
        t,
        u: SpectralField::from_coeffs(geom, coeffs)?,
        nu,
        eps,
    })
}
