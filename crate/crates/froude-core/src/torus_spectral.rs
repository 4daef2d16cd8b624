//! Lattice geometry on the anisotropic torus, Fourier coefficient fields,
//! grid transforms and the four-component Leray projector.
//!
//! Conventions: the box is `[0, 2π a_1) × [0, 2π a_2) × [0, 2π a_3)`, a field is
//! `V(x) = Σ_n V̂(n) e^{i ň·x}` with check-frequencies `ň_i = n_i / a_i`, and
//! every norm or inner product on [`SpectralField`] is the plain coefficient sum
//! `Σ_n Σ_l |V̂_l(n)|²`. Multiply by [`TorusGeometry::volume`] for the integral.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::Arc;

use num_complex::Complex64;
use num_integer::Integer;
use num_rational::Ratio;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Vec4 = [C64; 4];
pub type Mode = [i64; 3];

pub const ZERO4: Vec4 = [C64 { re: 0.0, im: 0.0 }; 4];

/// Periods of the torus. The squared periods are kept as exact rationals so
/// that squared wave frequencies are rational too.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusGeometry {
    period_sq: [Ratio<i64>; 3],
    periods: [f64; 3],
    n_max: usize,
    // L * ň_i² = weights[i] * n_i², with L the lcm of the numerators of a_i².
    weights: [i128; 3],
}

impl TorusGeometry {
    pub fn new(period_sq: [Ratio<i64>; 3], n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Geometry("truncation N must be at least 1".into()));
        }
        if n_max > 64 {
            return Err(Error::Geometry(format!("truncation N = {n_max} is too large")));
        }
        for r in &period_sq {
            if *r.numer() <= 0 || *r.denom() <= 0 {
                return Err(Error::Geometry(format!("squared period {r} must be positive")));
            }
        }
        let lcm = period_sq
            .iter()
            .fold(1i64, |acc, r| acc.lcm(r.numer()));
        let mut weights = [0i128; 3];
        for (w, r) in weights.iter_mut().zip(&period_sq) {
            *w = (*r.denom() as i128) * (lcm as i128) / (*r.numer() as i128);
        }
        let periods = period_sq.map(|r| (*r.numer() as f64 / *r.denom() as f64).sqrt());
        Ok(TorusGeometry {
            period_sq,
            periods,
            n_max,
            weights,
        })
    }

    /// Torus with integer squared periods.
    pub fn with_squared_periods(a_sq: [i64; 3], n_max: usize) -> Result<Self> {
        Self::new(a_sq.map(Ratio::from_integer), n_max)
    }

    pub fn unit(n_max: usize) -> Self {
        Self::with_squared_periods([1, 1, 1], n_max).expect("unit torus is valid")
    }

    /// Same periods, different truncation.
    pub fn with_truncation(&self, n_max: usize) -> Result<Self> {
        Self::new(self.period_sq, n_max)
    }

    pub fn periods(&self) -> [f64; 3] {
        self.periods
    }

    pub fn period_sq(&self) -> [Ratio<i64>; 3] {
        self.period_sq
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(3) * self.periods.iter().product::<f64>()
    }

    pub fn check_frequency(&self, n: Mode) -> [f64; 3] {
        [
            n[0] as f64 / self.periods[0],
            n[1] as f64 / self.periods[1],
            n[2] as f64 / self.periods[2],
        ]
    }

    /// `(|ň_h|², |ň|²)`.
    pub fn freq_sq(&self, n: Mode) -> (f64, f64) {
        let c = self.check_frequency(n);
        let h = c[0] * c[0] + c[1] * c[1];
        (h, h + c[2] * c[2])
    }

    /// Integer multiples `(L|ň_h|², L|ň|²)` of the squared frequencies, with
    /// `L` fixed per geometry.
    pub fn freq_sq_exact(&self, n: Mode) -> (i128, i128) {
        let w = &self.weights;
        let h = w[0] * (n[0] as i128).pow(2) + w[1] * (n[1] as i128).pow(2);
        (h, h + w[2] * (n[2] as i128).pow(2))
    }

    pub fn side(&self) -> usize {
        2 * self.n_max + 1
    }

    pub fn mode_count(&self) -> usize {
        self.side().pow(3)
    }

    pub fn contains(&self, n: Mode) -> bool {
        let nm = self.n_max as i64;
        n.iter().all(|&c| c.abs() <= nm)
    }

    /// Lexicographic index, `n_1` slowest and `n_3` fastest.
    pub fn index(&self, n: Mode) -> usize {
        debug_assert!(self.contains(n));
        let s = self.side() as i64;
        let nm = self.n_max as i64;
        (((n[0] + nm) * s + (n[1] + nm)) * s + (n[2] + nm)) as usize
    }

    pub fn try_index(&self, n: Mode) -> Option<usize> {
        self.contains(n).then(|| self.index(n))
    }

    pub fn mode(&self, idx: usize) -> Mode {
        let s = self.side();
        let nm = self.n_max as i64;
        [
            (idx / (s * s)) as i64 - nm,
            ((idx / s) % s) as i64 - nm,
            (idx % s) as i64 - nm,
        ]
    }

    /// Index of `-n` given the index of `n`.
    pub fn neg_index(&self, idx: usize) -> usize {
        self.mode_count() - 1 - idx
    }

    pub fn zero_index(&self) -> usize {
        self.mode_count() / 2
    }

    pub fn modes(&self) -> impl Iterator<Item = (usize, Mode)> + '_ {
        (0..self.mode_count()).map(move |i| (i, self.mode(i)))
    }

    /// Same torus up to truncation.
    pub fn same_torus(&self, other: &TorusGeometry) -> bool {
        self.period_sq == other.period_sq
    }
}

pub fn add_modes(a: Mode, b: Mode) -> Mode {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub_modes(a: Mode, b: Mode) -> Mode {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn is_zero_mode(n: Mode) -> bool {
    n == [0, 0, 0]
}

pub fn has_horizontal(n: Mode) -> bool {
    n[0] != 0 || n[1] != 0
}

/// Hermitian inner product `Σ_l a_l conj(b_l)`.
pub fn dot4(a: &Vec4, b: &Vec4) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

pub fn norm4_sq(a: &Vec4) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Fourier coefficients of a four-component field on the truncated lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    geom: TorusGeometry,
    coeffs: Vec<Vec4>,
}

impl SpectralField {
    pub fn zeros(geom: TorusGeometry) -> Self {
        SpectralField {
            geom,
            coeffs: vec![ZERO4; geom.mode_count()],
        }
    }

    pub fn from_coeffs(geom: TorusGeometry, coeffs: Vec<Vec4>) -> Result<Self> {
        if coeffs.len() != geom.mode_count() {
            return Err(Error::Mismatch(format!(
                "expected {} modes, got {}",
                geom.mode_count(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { geom, coeffs })
    }

    pub fn from_fn(geom: TorusGeometry, mut f: impl FnMut(Mode) -> Vec4) -> Self {
        let coeffs = geom.modes().map(|(_, n)| f(n)).collect();
        SpectralField { geom, coeffs }
    }

    /// A real field `V̂(n) = c`, `V̂(-n) = conj(c)`.
    pub fn single_mode(geom: TorusGeometry, n: Mode, c: Vec4) -> Self {
        let mut f = Self::zeros(geom);
        f.set(n, c);
        f.set([-n[0], -n[1], -n[2]], c.map(|z| z.conj()));
        f
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn coeffs(&self) -> &[Vec4] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Vec4] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Vec4> {
        self.coeffs
    }

    pub fn get(&self, n: Mode) -> Vec4 {
        self.coeffs[self.geom.index(n)]
    }

    pub fn set(&mut self, n: Mode, v: Vec4) {
        let i = self.geom.index(n);
        self.coeffs[i] = v;
    }

    pub fn check_same_geometry(&self, other: &SpectralField) -> Result<()> {
        if self.geom != other.geom {
            return Err(Error::Mismatch("fields live on different lattices".into()));
        }
        Ok(())
    }

    pub fn map_modes(&self, mut f: impl FnMut(Mode, &Vec4) -> Vec4) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, v)| f(self.geom.mode(i), v))
            .collect();
        SpectralField {
            geom: self.geom,
            coeffs,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(norm4_sq).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn inner(&self, other: &SpectralField) -> C64 {
        debug_assert_eq!(self.geom, other.geom);
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| dot4(a, b))
            .sum()
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &SpectralField) {
        debug_assert_eq!(self.geom, x.geom);
        for (a, b) in self.coeffs.iter_mut().zip(&x.coeffs) {
            for l in 0..4 {
                a[l] += b[l] * alpha;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map_modes(|_, v| v.map(|z| z * alpha))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs
            .iter()
            .flat_map(|v| v.iter())
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn pin_zero_mode(&mut self) {
        let z = self.geom.zero_index();
        self.coeffs[z] = ZERO4;
    }

    /// Replace each coefficient pair by its Hermitian average so the field is real.
    pub fn enforce_hermitian(&mut self) {
        let count = self.geom.mode_count();
        for i in 0..count / 2 + 1 {
            let j = count - 1 - i;
            let mut avg = ZERO4;
            for l in 0..4 {
                avg[l] = (self.coeffs[i][l] + self.coeffs[j][l].conj()) * 0.5;
            }
            self.coeffs[i] = avg;
            self.coeffs[j] = avg.map(|z| z.conj());
        }
    }

    /// Largest `|V̂(n) - conj(V̂(-n))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let count = self.geom.mode_count();
        let mut worst: f64 = 0.0;
        for i in 0..count {
            let j = count - 1 - i;
            for l in 0..4 {
                worst = worst.max((self.coeffs[i][l] - self.coeffs[j][l].conj()).norm());
            }
        }
        worst
    }

    pub fn mean(&self) -> Vec4 {
        self.coeffs[self.geom.zero_index()]
    }

    /// Per-mode divergence `Σ_i ň_i v̂_i(n)`.
    pub fn divergence(&self) -> Vec<C64> {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = self.geom.check_frequency(self.geom.mode(i));
                v[0] * c[0] + v[1] * c[1] + v[2] * c[2]
            })
            .collect()
    }

    /// Worst normalized divergence `|ň·v̂(n)| / |ň|` and the mode where it occurs.
    pub fn divergence_residual(&self) -> (Mode, f64) {
        let mut worst = ([0, 0, 0], 0.0);
        for (i, d) in self.divergence().into_iter().enumerate() {
            let n = self.geom.mode(i);
            if is_zero_mode(n) {
                continue;
            }
            let r = d.norm() / self.geom.freq_sq(n).1.sqrt();
            if r > worst.1 {
                worst = (n, r);
            }
        }
        worst
    }

    pub fn require_divergence_free(&self, rel_tol: f64) -> Result<()> {
        let (mode, residual) = self.divergence_residual();
        if residual > rel_tol * self.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotDivergenceFree { mode, residual });
        }
        Ok(())
    }

    pub fn require_zero_mean(&self, rel_tol: f64) -> Result<()> {
        let m = norm4_sq(&self.mean()).sqrt();
        if m > rel_tol * self.norm() || (m > 0.0 && self.norm() == m) {
            return Err(Error::NonzeroMean(m));
        }
        Ok(())
    }

    /// Leray projection of the velocity components; the fourth component is
    /// left alone. Rejects a field with nonzero mean.
    pub fn leray_project(&self) -> Result<SpectralField> {
        self.require_zero_mean(1e-13)?;
        let mut out = self.leray_project_unchecked();
        out.pin_zero_mode();
        Ok(out)
    }

    pub(crate) fn leray_project_unchecked(&self) -> SpectralField {
        let g = self.geom;
        self.map_modes(|n, v| {
            if is_zero_mode(n) {
                return ZERO4;
            }
            leray_mode(&g, n, v)
        })
    }
}

/// Leray symbol `δ_ij - ň_i ň_j / |ň|²` applied to one coefficient.
pub fn leray_mode(geom: &TorusGeometry, n: Mode, v: &Vec4) -> Vec4 {
    let c = geom.check_frequency(n);
    let nn = c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    let d = (v[0] * c[0] + v[1] * c[1] + v[2] * c[2]) / nn;
    [v[0] - d * c[0], v[1] - d * c[1], v[2] - d * c[2], v[3]]
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&SpectralField> for SpectralField {
    fn sub_assign(&mut self, rhs: &SpectralField) {
        self.axpy(-1.0, rhs);
    }
}

/// Which derivatives enter the transport product `a·∇B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `a_1∂_1 + a_2∂_2 + a_3∂_3`
    Full,
    /// `a_1∂_1 + a_2∂_2`
    Horizontal,
}

impl Stencil {
    fn axes(self) -> &'static [usize] {
        match self {
            Stencil::Full => &[0, 1, 2],
            Stencil::Horizontal => &[0, 1],
        }
    }
}

/// Smallest 5-smooth size that resolves quadratic products of a lattice
/// truncated at `n_max` without aliasing. Sums of two retained modes reach
/// `2N`, which must not fold back onto `[-N, N]`, so `M ≥ 3N + 1`.
pub fn dealias_grid_size(n_max: usize) -> usize {
    let mut m = 3 * n_max + 1;
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Samples of a real four-component field on a uniform `M³` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    geom: TorusGeometry,
    m: usize,
    comps: [Vec<f64>; 4],
}

impl PhysicalField {
    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn component(&self, l: usize) -> &[f64] {
        &self.comps[l]
    }

    pub fn component_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.comps[l]
    }

    pub fn cell_volume(&self) -> f64 {
        self.geom.volume() / (self.m as f64).powi(3)
    }

    /// Value at grid point `(j1, j2, j3)`, located at `x_i = 2π a_i j_i / M`.
    pub fn sample(&self, j: [usize; 3]) -> [f64; 4] {
        let idx = (j[0] * self.m + j[1]) * self.m + j[2];
        [
            self.comps[0][idx],
            self.comps[1][idx],
            self.comps[2][idx],
            self.comps[3][idx],
        ]
    }

    /// `∫ |V|² dx` by the rectangle rule (exact for trigonometric data).
    pub fn l2_norm_sq(&self) -> f64 {
        let s: f64 = (0..self.m.pow(3))
            .map(|i| self.comps.iter().map(|c| c[i] * c[i]).sum::<f64>())
            .sum();
        s * self.cell_volume()
    }

    /// `(∫ |V|^p dx)^{1/p}` with `|·|` the Euclidean norm over components;
    /// `p = ∞` gives the grid maximum.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let pointwise = (0..self.m.pow(3))
            .map(|i| self.comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt());
        if p.is_infinite() {
            pointwise.fold(0.0, f64::max)
        } else {
            (pointwise.map(|v| v.powf(p)).sum::<f64>() * self.cell_volume()).powf(1.0 / p)
        }
    }
}

/// FFT plans and index tables for one lattice and grid size.
#[derive(Clone)]
pub struct Transformer {
    geom: TorusGeometry,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    grid_index: Vec<usize>,
}

impl std::fmt::Debug for Transformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transformer")
            .field("n_max", &self.geom.n_max())
            .field("grid", &self.m)
            .finish()
    }
}

impl Transformer {
    /// Transformer on the dealiasing grid.
    pub fn new(geom: TorusGeometry) -> Self {
        Self::with_grid(geom, dealias_grid_size(geom.n_max())).expect("dealias grid is valid")
    }

    /// Transformer on a custom grid. The grid must at least resolve the lattice.
    pub fn with_grid(geom: TorusGeometry, m: usize) -> Result<Self> {
        if m < geom.side() {
            return Err(Error::Mismatch(format!(
                "grid size {m} cannot hold modes up to {}",
                geom.n_max()
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let wrap = |c: i64| c.rem_euclid(m as i64) as usize;
        let grid_index = geom
            .modes()
            .map(|(_, n)| (wrap(n[0]) * m + wrap(n[1])) * m + wrap(n[2]))
            .collect();
        Ok(Transformer {
            geom,
            m,
            fwd,
            inv,
            grid_index,
        })
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    /// True when quadratic products are computed without aliasing.
    pub fn dealiases(&self) -> bool {
        self.m > 3 * self.geom.n_max()
    }

    fn fft3(&self, buf: &mut [C64], inverse: bool) {
        let m = self.m;
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // Fastest axis: contiguous lines.
        plan.process_with_scratch(buf, &mut scratch);
        let mut line = vec![C64::new(0.0, 0.0); m];
        // Middle axis.
        for i in 0..m {
            for k in 0..m {
                for j in 0..m {
                    line[j] = buf[(i * m + j) * m + k];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for j in 0..m {
                    buf[(i * m + j) * m + k] = line[j];
                }
            }
        }
        // Slowest axis.
        for j in 0..m {
            for k in 0..m {
                for i in 0..m {
                    line[i] = buf[(i * m + j) * m + k];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for i in 0..m {
                    buf[(i * m + j) * m + k] = line[i];
                }
            }
        }
    }

    /// Grid samples of real scalar fields given by their lattice coefficients.
    /// Two scalars share one complex transform, so inputs must be Hermitian.
    pub fn scalars_to_grid(&self, scalars: &[Vec<C64>]) -> Vec<Vec<f64>> {
        let size = self.m.pow(3);
        let mut out = Vec::with_capacity(scalars.len());
        for pair in scalars.chunks(2) {
            let mut buf = vec![C64::new(0.0, 0.0); size];
            for (i, &g) in self.grid_index.iter().enumerate() {
                let mut z = pair[0][i];
                if let Some(second) = pair.get(1) {
                    z += C64::i() * second[i];
                }
                buf[g] = z;
            }
            self.fft3(&mut buf, true);
            out.push(buf.iter().map(|z| z.re).collect());
            if pair.len() == 2 {
                out.push(buf.iter().map(|z| z.im).collect());
            }
        }
        out
    }

    /// Lattice coefficients of real grid data, truncated to `|n|∞ ≤ N`.
    pub fn grid_to_scalars(&self, grids: &[Vec<f64>]) -> Vec<Vec<C64>> {
        let size = self.m.pow(3);
        let norm = 1.0 / size as f64;
        let count = self.geom.mode_count();
        let mut out = Vec::with_capacity(grids.len());
        for pair in grids.chunks(2) {
            let mut buf: Vec<C64> = match pair.get(1) {
                Some(second) => pair[0]
                    .iter()
                    .zip(second)
                    .map(|(&a, &b)| C64::new(a, b))
                    .collect(),
                None => pair[0].iter().map(|&a| C64::new(a, 0.0)).collect(),
            };
            self.fft3(&mut buf, false);
            if pair.len() == 1 {
                out.push(self.grid_index.iter().map(|&g| buf[g] * norm).collect());
                continue;
            }
            let mut first = Vec::with_capacity(count);
            let mut second = Vec::with_capacity(count);
            for i in 0..count {
                let g = buf[self.grid_index[i]];
                let h = buf[self.grid_index[count - 1 - i]].conj();
                first.push((g + h) * (0.5 * norm));
                second.push((g - h) * C64::new(0.0, -0.5 * norm));
            }
            out.push(first);
            out.push(second);
        }
        out
    }

    fn component_scalars(field: &SpectralField, l: usize) -> Vec<C64> {
        field.coeffs().iter().map(|v| v[l]).collect()
    }

    fn check(&self, field: &SpectralField) -> Result<()> {
        if *field.geometry() != self.geom {
            return Err(Error::Mismatch("field and transformer lattices differ".into()));
        }
        Ok(())
    }

    pub fn to_physical(&self, field: &SpectralField) -> Result<PhysicalField> {
        self.check(field)?;
        let scalars: Vec<_> = (0..4).map(|l| Self::component_scalars(field, l)).collect();
        let mut grids = self.scalars_to_grid(&scalars).into_iter();
        let comps = [(); 4].map(|_| grids.next().expect("four grids"));
        Ok(PhysicalField {
            geom: self.geom,
            m: self.m,
            comps,
        })
    }

    pub fn to_spectral(&self, phys: &PhysicalField) -> Result<SpectralField> {
        if phys.geom != self.geom || phys.m != self.m {
            return Err(Error::Mismatch("physical grid does not match transformer".into()));
        }
        let scalars = self.grid_to_scalars(&phys.comps);
        let coeffs = (0..self.geom.mode_count())
            .map(|i| [scalars[0][i], scalars[1][i], scalars[2][i], scalars[3][i]])
            .collect();
        SpectralField::from_coeffs(self.geom, coeffs)
    }

    /// Coefficients of `i ň_j B̂_l`, i.e. of `∂_j B_l`.
    fn derivative_scalars(&self, b: &SpectralField, j: usize, l: usize) -> Vec<C64> {
        b.coeffs()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = self.geom.check_frequency(self.geom.mode(i));
                C64::new(0.0, c[j]) * v[l]
            })
            .collect()
    }

    /// Fourier coefficients of `a·∇B` with `a` the velocity part of `A`,
    /// computed on the dealiasing grid and truncated to the lattice.
    pub fn convolve_quadratic(
        &self,
        a: &SpectralField,
        b: &SpectralField,
        stencil: Stencil,
    ) -> Result<SpectralField> {
        self.check(a)?;
        self.check(b)?;
        let axes = stencil.axes();
        let mut scalars: Vec<Vec<C64>> = axes.iter().map(|&j| Self::component_scalars(a, j)).collect();
        for &j in axes {
            for l in 0..4 {
                scalars.push(self.derivative_scalars(b, j, l));
            }
        }
        let grids = self.scalars_to_grid(&scalars);
        let size = self.m.pow(3);
        let na = axes.len();
        let products: Vec<Vec<f64>> = (0..4)
            .map(|l| {
                (0..size)
                    .map(|x| (0..na).map(|q| grids[q][x] * grids[na + 4 * q + l][x]).sum())
                    .collect()
            })
            .collect();
        Ok(self.assemble(self.grid_to_scalars(&products)))
    }

    /// Coefficients of `v·∇V` for divergence-free `v`, via `∂_j(v_j V_l)`.
    /// Cheaper than [`Self::convolve_quadratic`] with both arguments equal.
    pub fn self_transport(&self, field: &SpectralField) -> Result<SpectralField> {
        self.check(field)?;
        let scalars: Vec<_> = (0..4).map(|l| Self::component_scalars(field, l)).collect();
        let g = self.scalars_to_grid(&scalars);
        let size = self.m.pow(3);
        // Products v_j V_l with the symmetric velocity pairs stored once.
        const PAIRS: [(usize, usize); 9] =
            [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2), (0, 3), (1, 3), (2, 3)];
        let products: Vec<Vec<f64>> = PAIRS
            .iter()
            .map(|&(p, q)| (0..size).map(|x| g[p][x] * g[q][x]).collect())
            .collect();
        let hat = self.grid_to_scalars(&products);
        let slot = |j: usize, l: usize| -> usize {
            let (p, q) = if l == 3 { (j, 3) } else { (j.min(l), j.max(l)) };
            PAIRS.iter().position(|&e| e == (p, q)).expect("pair present")
        };
        let mut out = SpectralField::zeros(self.geom);
        for (i, v) in out.coeffs_mut().iter_mut().enumerate() {
            let c = self.geom.check_frequency(self.geom.mode(i));
            for l in 0..4 {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..3 {
                    acc += C64::new(0.0, c[j]) * hat[slot(j, l)][i];
                }
                v[l] = acc;
            }
        }
        out.pin_zero_mode();
        Ok(out)
    }

    fn assemble(&self, comps: Vec<Vec<C64>>) -> SpectralField {
        let coeffs = (0..self.geom.mode_count())
            .map(|i| [comps[0][i], comps[1][i], comps[2][i], comps[3][i]])
            .collect();
        let mut f = SpectralField::from_coeffs(self.geom, coeffs).expect("lattice sized");
        f.pin_zero_mode();
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_field(geom: TorusGeometry, seed: u64, solenoidal: bool) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralField::from_fn(geom, |_| {
            [(); 4].map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        });
        f.enforce_hermitian();
        f.pin_zero_mode();
        if solenoidal {
            f = f.leray_project().unwrap();
        }
        f
    }

    #[test]
    fn check_frequency_examples() {
        let g = TorusGeometry::unit(4);
        assert_eq!(g.check_frequency([3, 4, 0]), [3.0, 4.0, 0.0]);
        assert_eq!(g.freq_sq([3, 4, 0]), (25.0, 25.0));
        let g2 = TorusGeometry::with_squared_periods([4, 1, 1], 4).unwrap();
        assert_eq!(g2.check_frequency([3, 4, 0]), [1.5, 4.0, 0.0]);
        assert_eq!(g.check_frequency([0, 0, 0]), [0.0; 3]);
    }

    #[test]
    fn exact_weights_match_float_frequencies() {
        let g = TorusGeometry::new(
            [Ratio::new(9, 4), Ratio::new(2, 3), Ratio::from_integer(5)],
            3,
        )
        .unwrap();
        let (_, t1) = g.freq_sq_exact([1, 0, 0]);
        for (_, n) in g.modes() {
            let (h, t) = g.freq_sq_exact(n);
            let (hf, tf) = g.freq_sq(n);
            let scale = t1 as f64 * 9.0 / 4.0;
            assert!((h as f64 / scale - hf).abs() < 1e-12);
            assert!((t as f64 / scale - tf).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_rejects_bad_input() {
        assert!(TorusGeometry::with_squared_periods([1, 0, 1], 2).is_err());
        assert!(TorusGeometry::with_squared_periods([1, 1, 1], 0).is_err());
    }

    #[test]
    fn index_roundtrip_and_negation() {
        let g = TorusGeometry::unit(3);
        for (i, n) in g.modes() {
            assert_eq!(g.index(n), i);
            assert_eq!(g.mode(g.neg_index(i)), [-n[0], -n[1], -n[2]]);
        }
        assert_eq!(g.mode(g.zero_index()), [0, 0, 0]);
    }

    #[test]
    fn leray_examples() {
        let g = TorusGeometry::unit(2);
        let v = [c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.)];
        assert_eq!(leray_mode(&g, [1, 0, 0], &v), [c(0., 0.), c(2., 0.), c(3., 0.), c(4., 0.)]);
        let w = leray_mode(&g, [1, 1, 0], &[c(1., 0.), c(1., 0.), c(0., 0.), c(7., 0.)]);
        for (a, b) in w.iter().zip(&[0.0, 0.0, 0.0, 7.0]) {
            assert!((a - b).norm() < 1e-15);
        }
        let mut f = SpectralField::zeros(g);
        f.set([0, 0, 0], [c(1., 0.), ZERO4[0], ZERO4[0], ZERO4[0]]);
        f.set([1, 0, 0], [c(1., 0.); 4]);
        assert!(matches!(f.leray_project(), Err(Error::NonzeroMean(_))));
    }

    #[test]
    fn leray_is_idempotent_and_keeps_density() {
        let g = TorusGeometry::with_squared_periods([1, 4, 2], 3).unwrap();
        let f = random_field(g, 3, false);
        let p = f.leray_project().unwrap();
        let pp = p.leray_project().unwrap();
        assert!((&p - &pp).norm() < 1e-14 * p.norm());
        assert!(p.divergence_residual().1 < 1e-14);
        for (a, b) in f.coeffs().iter().zip(p.coeffs()).skip(1) {
            assert_eq!(a[3], b[3]);
        }
    }

    #[test]
    fn transform_roundtrip_and_parseval() {
        let g = TorusGeometry::with_squared_periods([1, 4, 1], 3).unwrap();
        let t = Transformer::new(g);
        let f = random_field(g, 11, false);
        let p = t.to_physical(&f).unwrap();
        let back = t.to_spectral(&p).unwrap();
        assert!((&back - &f).norm() < 1e-13 * f.norm());
        let phys = p.l2_norm_sq();
        let spec = f.norm_sq() * g.volume();
        assert!((phys - spec).abs() < 1e-12 * spec);
    }

    #[test]
    fn single_mode_samples_exponential() {
        let g = TorusGeometry::with_squared_periods([4, 1, 1], 2).unwrap();
        let t = Transformer::new(g);
        let n = [1, -1, 2];
        let f = SpectralField::single_mode(g, n, [c(0.5, 0.), ZERO4[0], ZERO4[0], ZERO4[0]]);
        let p = t.to_physical(&f).unwrap();
        let m = t.grid_size();
        let a = g.periods();
        let nc = g.check_frequency(n);
        for j in [[0, 0, 0], [1, 2, 3], [m - 1, 4, 2]] {
            let x: Vec<f64> = (0..3).map(|i| 2.0 * PI * a[i] * j[i] as f64 / m as f64).collect();
            let phase = nc[0] * x[0] + nc[1] * x[1] + nc[2] * x[2];
            assert!((p.sample(j)[0] - phase.cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn grid_size_avoids_aliasing() {
        assert_eq!(dealias_grid_size(4), 15);
        assert_eq!(dealias_grid_size(6), 20);
        assert_eq!(dealias_grid_size(8), 25);
        assert!(Transformer::with_grid(TorusGeometry::unit(4), 8).is_err());
    }

    #[test]
    fn two_mode_convolution() {
        let g = TorusGeometry::with_squared_periods([1, 2, 1], 3).unwrap();
        let t = Transformer::new(g);
        let k = [1, 0, -1];
        let m = [0, 2, 1];
        let a = SpectralField::single_mode(g, k, [c(0.3, 0.1), c(-0.2, 0.5), c(0.7, 0.0), c(1.0, 1.0)]);
        let b = SpectralField::single_mode(g, m, [c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 0.5), c(0.25, 0.0)]);
        let out = t.convolve_quadratic(&a, &b, Stencil::Full).unwrap();
        let mc = g.check_frequency(m);
        let av = a.get(k);
        let s = C64::i() * (av[0] * mc[0] + av[1] * mc[1] + av[2] * mc[2]);
        let expect = b.get(m).map(|z| z * s);
        let n = add_modes(k, m);
        for l in 0..4 {
            assert!((out.get(n)[l] - expect[l]).norm() < 1e-13);
        }
        let far = out.get([3, 3, 3]);
        assert!(norm4_sq(&far) < 1e-26);
    }

    #[test]
    fn transport_is_skew_and_forms_agree() {
        let g = TorusGeometry::with_squared_periods([1, 2, 1], 4).unwrap();
        let t = Transformer::new(g);
        let a = random_field(g, 5, true);
        let b = random_field(g, 6, false);
        let ab = t.convolve_quadratic(&a, &b, Stencil::Full).unwrap();
        assert!(ab.inner(&b).re.abs() < 1e-10 * a.norm() * b.norm_sq());
        let direct = t.convolve_quadratic(&a, &a, Stencil::Full).unwrap();
        let cons = t.self_transport(&a).unwrap();
        assert!((&direct - &cons).norm() < 1e-12 * direct.norm());
        assert!(ab.hermitian_defect() < 1e-13);
    }
}
