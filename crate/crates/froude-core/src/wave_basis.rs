//! Per-mode eigen-analysis of the projected buoyancy operator `PA`, the split
//! of a field into horizontal average, vortical part and waves, and the
//! filtering group `L(τ) = exp(-τ PA)`.
//!
//! For `n_h ≠ 0` the basis is `e_0`, `e_+`, `e_-` with `PA e_± = ∓iω e_±`,
//! `ω = |ň_h|/|ň|`; for `n_h = 0` it is `f_1, f_2, f_3` and `PA` is nilpotent
//! on the solenoidal fibre. `L(τ)` multiplies the `e_±` coefficient by
//! `e^{±iτω}`.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::torus_spectral::{
    dot4, has_horizontal, is_zero_mode, Mode, SpectralField, TorusGeometry, Vec4, C64, ZERO4,
};

/// Sign attached to a branch frequency: `ω^+ = ω`, `ω^- = -ω`, `ω^0 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Plus,
    Minus,
    Zero,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
            Sign::Zero => 0,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
            Sign::Zero => Sign::Zero,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
            Sign::Zero => "0",
        }
    }
}

/// Whether a mode carries a horizontal wavenumber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    /// `n_h ≠ 0`: basis `e_0, e_+, e_-`.
    Horizontal,
    /// `n_h = 0`: basis `f_1, f_2, f_3`, all in the kernel.
    Vertical,
}

/// Eigen-data of `PA(n)` on the solenoidal fibre at one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenTriple {
    pub mode: Mode,
    pub omega: f64,
    pub kind: ModeKind,
    /// `[e_0, e_+, e_-]` or `[f_1, f_2, f_3]`.
    pub vectors: [Vec4; 3],
}

/// Branch labels in storage order.
pub const HORIZONTAL_SIGNS: [Sign; 3] = [Sign::Zero, Sign::Plus, Sign::Minus];

impl EigenTriple {
    pub fn sign(&self, alpha: usize) -> Sign {
        match self.kind {
            ModeKind::Horizontal => HORIZONTAL_SIGNS[alpha],
            ModeKind::Vertical => Sign::Zero,
        }
    }

    /// `ω^α(n)` for the branch stored at position `alpha`.
    pub fn branch_frequency(&self, alpha: usize) -> f64 {
        self.omega * self.sign(alpha).value() as f64
    }

    pub fn branch_frequencies(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.branch_frequency(a))
    }

    /// Eigenvalue of `PA(n)` on branch `alpha`: `-i ω^α`.
    pub fn eigenvalue(&self, alpha: usize) -> C64 {
        C64::new(0.0, -self.branch_frequency(alpha))
    }

    pub fn is_wave(&self, alpha: usize) -> bool {
        self.sign(alpha) != Sign::Zero
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// The symbol `PA(n)` as a real 4×4 matrix.
pub fn pa_symbol(geom: &TorusGeometry, n: Mode) -> Result<[[f64; 4]; 4]> {
    if is_zero_mode(n) {
        return Err(Error::ZeroMode);
    }
    let k = geom.check_frequency(n);
    let nn = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    let mut m = [[0.0; 4]; 4];
    m[0][3] = -k[0] * k[2] / nn;
    m[1][3] = -k[1] * k[2] / nn;
    m[2][3] = 1.0 - k[2] * k[2] / nn;
    m[3][2] = -1.0;
    Ok(m)
}

pub fn apply_matrix(m: &[[f64; 4]; 4], v: &Vec4) -> Vec4 {
    let mut out = ZERO4;
    for (r, row) in m.iter().enumerate() {
        out[r] = row.iter().zip(v).map(|(a, z)| z * *a).sum();
    }
    out
}

pub fn eigenbasis(geom: &TorusGeometry, n: Mode) -> Result<EigenTriple> {
    if is_zero_mode(n) {
        return Err(Error::ZeroMode);
    }
    let (h2, t2) = geom.freq_sq(n);
    let o = C64::new(0.0, 0.0);
    let one = c(1.0, 0.0);
    if !has_horizontal(n) {
        return Ok(EigenTriple {
            mode: n,
            omega: 0.0,
            kind: ModeKind::Vertical,
            vectors: [[one, o, o, o], [o, one, o, o], [o, o, o, one]],
        });
    }
    let k = geom.check_frequency(n);
    let h = h2.sqrt();
    let t = t2.sqrt();
    let e0 = [c(-k[1] / h, 0.0), c(k[0] / h, 0.0), o, o];
    let s = FRAC_1_SQRT_2;
    let wave = |sg: f64| {
        [
            c(0.0, -sg * s * k[0] * k[2] / (h * t)),
            c(0.0, -sg * s * k[1] * k[2] / (h * t)),
            c(0.0, sg * s * h / t),
            c(s, 0.0),
        ]
    };
    Ok(EigenTriple {
        mode: n,
        omega: h / t,
        kind: ModeKind::Horizontal,
        vectors: [e0, wave(1.0), wave(-1.0)],
    })
}

/// The three parts of a solenoidal field.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDecomposition {
    /// Modes with `n_h = 0`.
    pub underline: SpectralField,
    /// `e_0` components.
    pub bar: SpectralField,
    /// `e_±` components.
    pub osc: SpectralField,
}

impl KernelDecomposition {
    pub fn recombine(&self) -> SpectralField {
        let mut out = &self.underline + &self.bar;
        out += &self.osc;
        out
    }

    /// Projection onto the kernel of `PA`.
    pub fn kernel(&self) -> SpectralField {
        &self.underline + &self.bar
    }
}

/// Per-mode coefficients `X_α(n) = <V̂(n), e_α(n)>`.
pub type BranchCoeffs = Vec<[C64; 3]>;

/// Eigenbases for every mode of a lattice, computed once.
#[derive(Clone, Debug)]
pub struct WaveBasis {
    geom: TorusGeometry,
    table: Vec<Option<EigenTriple>>,
}

impl WaveBasis {
    pub fn new(geom: TorusGeometry) -> Self {
        let table = geom.modes().map(|(_, n)| eigenbasis(&geom, n).ok()).collect();
        WaveBasis { geom, table }
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn triple(&self, idx: usize) -> Option<&EigenTriple> {
        self.table[idx].as_ref()
    }

    pub fn triple_at(&self, n: Mode) -> Option<&EigenTriple> {
        self.triple(self.geom.index(n))
    }

    fn check(&self, v: &SpectralField) -> Result<()> {
        if *v.geometry() != self.geom {
            return Err(Error::Mismatch("field and wave basis lattices differ".into()));
        }
        Ok(())
    }

    pub fn coefficients(&self, v: &SpectralField) -> BranchCoeffs {
        v.coeffs()
            .iter()
            .zip(&self.table)
            .map(|(x, e)| match e {
                Some(e) => e.vectors.map(|b| dot4(x, &b)),
                None => [C64::new(0.0, 0.0); 3],
            })
            .collect()
    }

    pub fn synthesize(&self, coeffs: &[[C64; 3]]) -> SpectralField {
        let mut out = SpectralField::zeros(self.geom);
        for ((v, e), x) in out.coeffs_mut().iter_mut().zip(&self.table).zip(coeffs) {
            if let Some(e) = e {
                for (b, xa) in e.vectors.iter().zip(x) {
                    for l in 0..4 {
                        v[l] += b[l] * xa;
                    }
                }
            }
        }
        out
    }

    /// Keep only the branches selected by `keep(kind, alpha)`.
    pub fn restrict(&self, v: &SpectralField, keep: impl Fn(ModeKind, usize) -> bool) -> SpectralField {
        let mut x = self.coefficients(v);
        for (xs, e) in x.iter_mut().zip(&self.table) {
            if let Some(e) = e {
                for (a, xa) in xs.iter_mut().enumerate() {
                    if !keep(e.kind, a) {
                        *xa = C64::new(0.0, 0.0);
                    }
                }
            }
        }
        self.synthesize(&x)
    }

    pub fn underline_part(&self, v: &SpectralField) -> SpectralField {
        self.restrict(v, |k, _| k == ModeKind::Vertical)
    }

    pub fn bar_part(&self, v: &SpectralField) -> SpectralField {
        self.restrict(v, |k, a| k == ModeKind::Horizontal && a == 0)
    }

    pub fn osc_part(&self, v: &SpectralField) -> SpectralField {
        self.restrict(v, |k, a| k == ModeKind::Horizontal && a != 0)
    }

    pub fn decompose(&self, v: &SpectralField) -> Result<KernelDecomposition> {
        self.check(v)?;
        v.require_zero_mean(1e-12)?;
        v.require_divergence_free(1e-10)?;
        Ok(KernelDecomposition {
            underline: self.underline_part(v),
            bar: self.bar_part(v),
            osc: self.osc_part(v),
        })
    }

    /// `PA V` mode by mode.
    pub fn apply_pa(&self, v: &SpectralField) -> SpectralField {
        let g = self.geom;
        v.map_modes(|n, x| match pa_symbol(&g, n) {
            Ok(m) => apply_matrix(&m, x),
            Err(_) => ZERO4,
        })
    }

    /// `L(τ) V`. Only the `e_±` coefficients move; anything outside the
    /// solenoidal span passes through unchanged.
    pub fn apply_filter(&self, tau: f64, v: &SpectralField) -> SpectralField {
        let mut out = v.clone();
        for (x, e) in out.coeffs_mut().iter_mut().zip(&self.table) {
            let Some(e) = e else { continue };
            if e.kind == ModeKind::Vertical {
                continue;
            }
            let ph = C64::from_polar(1.0, tau * e.omega);
            let mut delta = ZERO4;
            for (alpha, rot) in [(1usize, ph - 1.0), (2usize, ph.conj() - 1.0)] {
                let b = &e.vectors[alpha];
                let xa = dot4(x, b) * rot;
                for l in 0..4 {
                    delta[l] += b[l] * xa;
                }
            }
            for l in 0..4 {
                x[l] += delta[l];
            }
        }
        out
    }

    /// Applies the filter to branch coefficients in place.
    pub fn filter_coefficients(&self, tau: f64, x: &mut [[C64; 3]]) {
        for (xs, e) in x.iter_mut().zip(&self.table) {
            if let Some(e) = e.filter(|e| e.kind == ModeKind::Horizontal) {
                let ph = C64::from_polar(1.0, tau * e.omega);
                xs[1] *= ph;
                xs[2] *= ph.conj();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_spectral::norm4_sq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Vec4, b: &Vec4, tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    fn random_solenoidal(geom: TorusGeometry, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralField::from_fn(geom, |_| {
            [(); 4].map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        });
        f.enforce_hermitian();
        f.pin_zero_mode();
        f.leray_project().unwrap()
    }

    #[test]
    fn symbol_examples() {
        let g = TorusGeometry::unit(2);
        let m = pa_symbol(&g, [0, 0, 1]).unwrap();
        for (r, row) in m.iter().enumerate() {
            for (col, &x) in row.iter().enumerate() {
                let expect = if (r, col) == (3, 2) { -1.0 } else { 0.0 };
                assert_eq!(x, expect);
            }
        }
        let m = pa_symbol(&g, [1, 0, 0]).unwrap();
        assert_eq!([m[0][3], m[1][3], m[2][3], m[3][3]], [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(m[3][2], -1.0);
        assert!(matches!(pa_symbol(&g, [0, 0, 0]), Err(Error::ZeroMode)));
    }

    #[test]
    fn symbol_range_is_solenoidal() {
        let g = TorusGeometry::with_squared_periods([1, 4, 1], 3).unwrap();
        for (_, n) in g.modes().filter(|(_, n)| !is_zero_mode(*n)) {
            let m = pa_symbol(&g, n).unwrap();
            let k = g.check_frequency(n);
            for col in 0..4 {
                let d: f64 = (0..3).map(|r| m[r][col] * k[r]).sum();
                assert!(d.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn eigenbasis_examples() {
        let g = TorusGeometry::unit(4);
        let e = eigenbasis(&g, [3, 4, 0]).unwrap();
        assert!((e.omega - 1.0).abs() < 1e-15);
        assert!(close(&e.vectors[0], &[c(-0.8, 0.), c(0.6, 0.), c(0., 0.), c(0., 0.)], 1e-15));
        let e = eigenbasis(&g, [1, 0, 1]).unwrap();
        assert!((e.omega - FRAC_1_SQRT_2).abs() < 1e-15);
        // e_- carries the eigenvalue +iω.
        assert!(close(&e.vectors[2], &[c(0., 0.5), c(0., 0.), c(0., -0.5), c(FRAC_1_SQRT_2, 0.)], 1e-15));
        assert!(close(&e.vectors[1], &[c(0., -0.5), c(0., 0.), c(0., 0.5), c(FRAC_1_SQRT_2, 0.)], 1e-15));
        let e = eigenbasis(&g, [0, 0, 3]).unwrap();
        assert_eq!(e.kind, ModeKind::Vertical);
        assert_eq!(e.omega, 0.0);
        assert_eq!(e.vectors[2][3], c(1.0, 0.0));
    }

    #[test]
    fn eigen_relation_and_orthonormality() {
        for a in [[1, 1, 1], [1, 4, 1], [2, 3, 5]] {
            let g = TorusGeometry::with_squared_periods(a, 3).unwrap();
            for (_, n) in g.modes().filter(|(_, n)| !is_zero_mode(*n)) {
                let e = eigenbasis(&g, n).unwrap();
                let m = pa_symbol(&g, n).unwrap();
                let k = g.check_frequency(n);
                for a in 0..3 {
                    let lhs = apply_matrix(&m, &e.vectors[a]);
                    let rhs = e.vectors[a].map(|z| z * e.eigenvalue(a));
                    assert!(close(&lhs, &rhs, 1e-14), "{n:?} {a}");
                    let div: C64 = (0..3).map(|i| e.vectors[a][i] * k[i]).sum();
                    assert!(div.norm() < 1e-14);
                    for b in 0..3 {
                        let d = dot4(&e.vectors[a], &e.vectors[b]);
                        let want = if a == b { 1.0 } else { 0.0 };
                        assert!((d - want).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_is_orthogonal_projection_triple() {
        let g = TorusGeometry::with_squared_periods([1, 4, 1], 4).unwrap();
        let wb = WaveBasis::new(g);
        let v = random_solenoidal(g, 9);
        let d = wb.decompose(&v).unwrap();
        assert!((&d.recombine() - &v).norm() < 1e-13 * v.norm());
        let sum = d.underline.norm_sq() + d.bar.norm_sq() + d.osc.norm_sq();
        assert!((sum - v.norm_sq()).abs() < 1e-12 * v.norm_sq());
        assert!(d.bar.inner(&d.osc).norm() < 1e-13 * v.norm_sq());
        for part in [&d.underline, &d.bar, &d.osc] {
            let again = wb.decompose(part).unwrap();
            assert!((&again.recombine() - part).norm() < 1e-13 * v.norm());
        }
        let dd = wb.decompose(&d.osc).unwrap();
        assert!(dd.bar.norm() < 1e-13 && dd.underline.norm() < 1e-13);
        for (i, x) in d.bar.coeffs().iter().enumerate() {
            assert!(x[2].norm() < 1e-14 && x[3].norm() < 1e-14, "{:?}", g.mode(i));
        }
        for (i, x) in d.osc.coeffs().iter().enumerate() {
            if !has_horizontal(g.mode(i)) {
                assert_eq!(norm4_sq(x), 0.0);
            }
        }
        assert!(wb.decompose(&SpectralField::single_mode(g, [1, 0, 0], [c(1., 0.); 4])).is_err());
    }

    #[test]
    fn filter_phases_and_group_law() {
        let g = TorusGeometry::unit(3);
        let wb = WaveBasis::new(g);
        let e = *wb.triple_at([1, 0, 0]).unwrap();
        let mut v = SpectralField::zeros(g);
        let mut x = [C64::new(0.0, 0.0); 4];
        for a in 0..3 {
            for l in 0..4 {
                x[l] += e.vectors[a][l] * (a as f64 + 1.0);
            }
        }
        v.set([1, 0, 0], x);
        let f = wb.apply_filter(std::f64::consts::PI, &v);
        let coeff = wb.coefficients(&f)[g.index([1, 0, 0])];
        assert!((coeff[0] - 1.0).norm() < 1e-14);
        assert!((coeff[1] + 2.0).norm() < 1e-14);
        assert!((coeff[2] + 3.0).norm() < 1e-14);

        let v = random_solenoidal(g, 4);
        let a = wb.apply_filter(0.3, &wb.apply_filter(1.1, &v));
        let b = wb.apply_filter(1.4, &v);
        assert!((&a - &b).norm() < 1e-13 * v.norm());
        assert!((wb.apply_filter(2.7, &v).norm() - v.norm()).abs() < 1e-13 * v.norm());
        let k = wb.decompose(&v).unwrap().kernel();
        assert!((&wb.apply_filter(5.0, &k) - &k).norm() < 1e-14 * v.norm());
    }

    #[test]
    fn filter_generator_is_minus_pa() {
        let g = TorusGeometry::with_squared_periods([1, 4, 1], 3).unwrap();
        let wb = WaveBasis::new(g);
        let v = random_solenoidal(g, 2);
        let pa = wb.apply_pa(&v);
        let mut errs = vec![];
        for h in [1e-2, 1e-3, 1e-4] {
            let mut d = &wb.apply_filter(h, &v) - &v;
            d = d.scaled(1.0 / h);
            d += &pa;
            errs.push(d.norm());
        }
        let order = (errs[0] / errs[2]).log10() / 2.0;
        assert!(order > 0.9, "{errs:?}");
    }
}
