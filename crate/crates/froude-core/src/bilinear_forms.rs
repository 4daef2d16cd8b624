//! The filtered transport `Q^ε`, the filtered dissipation `A_2^ε`, and their
//! resonant limits.
//!
//! Limit forms are evaluated by direct summation over triads `k + m = n` in
//! the wave basis. A triad term couples branch `a` at `k`, branch `b` at `m`
//! and branch `c` at `n` through the coefficient
//! `½ i [(m̌·e_a(k)) <e_b(m), e_c(n)> + (ǩ·e_b(m)) <e_a(k), e_c(n)>]` and, under
//! the filter, oscillates like `e^{-iτΩ}` with `Ω = ω^a(k) + ω^b(m) - ω^c(n)`.
//! The limit keeps the terms with `Ω = 0` exactly.

use std::time::{Duration, Instant};

use num_integer::Integer;

use crate::error::{Error, Result};
use crate::resonance::{enumerate_kstar, RadicalValue};
use crate::torus_spectral::{
    dot4, has_horizontal, Mode, SpectralField, Stencil, TorusGeometry, Transformer, C64,
};
use crate::wave_basis::{BranchCoeffs, EigenTriple, ModeKind, Sign, WaveBasis};

/// Which triads a limit form sums over, by horizontal structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriadClass {
    /// `k_h, m_h, n_h ≠ 0`.
    Wave,
    /// `n_h ≠ 0` and exactly one input with zero horizontal wavenumber.
    Mixed,
    /// `n_h = 0`.
    Averaged,
}

impl TriadClass {
    fn of(k: ModeKind, m: ModeKind, n: ModeKind) -> Option<TriadClass> {
        use ModeKind::*;
        match (k, m, n) {
            (_, _, Vertical) => Some(TriadClass::Averaged),
            (Horizontal, Horizontal, Horizontal) => Some(TriadClass::Wave),
            (Vertical, Vertical, Horizontal) => None,
            _ => Some(TriadClass::Mixed),
        }
    }
}

/// One coefficient of the triad expansion.
#[derive(Clone, Copy, Debug)]
pub struct TriadTerm {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub class: TriadClass,
    pub coef: C64,
    /// `ω^a(k) + ω^b(m) - ω^c(n)`.
    pub omega: f64,
    pub resonant: bool,
}

/// Output of a triad summation.
#[derive(Clone, Debug)]
pub struct FormEvaluation {
    pub field: SpectralField,
    /// Number of triad terms that contributed.
    pub interactions: usize,
    pub elapsed: Duration,
}

/// A precomputed list of triad terms, for repeated evaluation of one form.
#[derive(Clone, Debug, Default)]
pub struct TriadTable {
    terms: Vec<TriadTerm>,
}

impl TriadTable {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[TriadTerm] {
        &self.terms
    }

    /// `Σ coef · X1_a(k) · X2_b(m)` into branch `c` at `n`.
    pub fn apply(&self, x1: &[[C64; 3]], x2: &[[C64; 3]]) -> BranchCoeffs {
        let mut out = vec![[C64::new(0.0, 0.0); 3]; x1.len()];
        for t in &self.terms {
            out[t.n][t.c] += t.coef * x1[t.k][t.a] * x2[t.m][t.b];
        }
        out
    }
}

/// Forms on one lattice with viscosity `nu`.
#[derive(Clone, Debug)]
pub struct Forms {
    geom: TorusGeometry,
    basis: WaveBasis,
    fft: Transformer,
    nu: f64,
    // ω(n)² as a reduced fraction, so equal frequencies compare exactly.
    freq_key: Vec<(i128, i128)>,
}

/// Terms whose float phase exceeds this cannot be resonant; closer ones are
/// decided exactly.
const PHASE_SCREEN: f64 = 1e-8;

impl Forms {
    pub fn new(geom: TorusGeometry, nu: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity {nu} must be finite and nonnegative")));
        }
        let basis = WaveBasis::new(geom);
        let freq_key = geom
            .modes()
            .map(|(_, n)| {
                let (h, t) = geom.freq_sq_exact(n);
                let g = h.gcd(&t).max(1);
                (h / g, t / g)
            })
            .collect();
        Ok(Forms {
            geom,
            fft: Transformer::new(geom),
            basis,
            nu,
            freq_key,
        })
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn basis(&self) -> &WaveBasis {
        &self.basis
    }

    pub fn transformer(&self) -> &Transformer {
        &self.fft
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    fn check(&self, v: &SpectralField) -> Result<()> {
        if *v.geometry() != self.geom {
            return Err(Error::Mismatch("field lattice differs from the forms lattice".into()));
        }
        Ok(())
    }

    // ---- pseudo-spectral route -------------------------------------------

    /// `P(½(a·∇B + b·∇A))`.
    pub fn symmetric_transport(&self, a: &SpectralField, b: &SpectralField) -> Result<SpectralField> {
        let ab = self.fft.convolve_quadratic(a, b, Stencil::Full)?;
        let ba = self.fft.convolve_quadratic(b, a, Stencil::Full)?;
        let mut s = &ab + &ba;
        s = s.scaled(0.5);
        Ok(s.leray_project_unchecked())
    }

    /// `Q^ε(t)(V1, V2) = ½ L(t/ε) P[L(-t/ε)V1·∇L(-t/ε)V2 + L(-t/ε)V2·∇L(-t/ε)V1]`.
    pub fn q_eps(&self, t: f64, eps: f64, v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
        }
        self.check(v1)?;
        self.check(v2)?;
        let tau = t / eps;
        let w1 = self.basis.apply_filter(-tau, v1);
        let w2 = self.basis.apply_filter(-tau, v2);
        let s = self.symmetric_transport(&w1, &w2)?;
        Ok(self.basis.apply_filter(tau, &s))
    }

    /// `Q^ε(t)(V, V)` through the cheaper conservative transport.
    pub fn q_eps_self(&self, tau: f64, v: &SpectralField) -> Result<SpectralField> {
        self.check(v)?;
        let w = self.basis.apply_filter(-tau, v);
        let s = self.fft.self_transport(&w)?.leray_project_unchecked();
        Ok(self.basis.apply_filter(tau, &s))
    }

    /// The dissipation `A_2 W = (νΔw, 0)`.
    pub fn a2(&self, w: &SpectralField) -> SpectralField {
        let g = self.geom;
        let nu = self.nu;
        w.map_modes(|n, x| {
            let d = -nu * g.freq_sq(n).1;
            [x[0] * d, x[1] * d, x[2] * d, C64::new(0.0, 0.0)]
        })
    }

    /// `A_2^ε(t) W = L(t/ε) A_2 L(-t/ε) W`.
    pub fn a2_eps(&self, t: f64, eps: f64, w: &SpectralField) -> Result<SpectralField> {
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("ε = {eps} must be positive")));
        }
        self.check(w)?;
        let tau = t / eps;
        Ok(self.basis.apply_filter(tau, &self.a2(&self.basis.apply_filter(-tau, w))))
    }

    /// `<A_2 e_a, e_b>` at one mode.
    pub fn a2_branch_matrix(&self, idx: usize) -> [[C64; 3]; 3] {
        let mut out = [[C64::new(0.0, 0.0); 3]; 3];
        if let Some(e) = self.basis.triple(idx) {
            let d = -self.nu * self.geom.freq_sq(e.mode).1;
            for a in 0..3 {
                let mut img = e.vectors[a].map(|z| z * d);
                img[3] = C64::new(0.0, 0.0);
                for b in 0..3 {
                    out[a][b] = dot4(&img, &e.vectors[b]);
                }
            }
        }
        out
    }

    /// Resonant average of `A_2^ε`: only branch pairs with `ω^a(n) = ω^b(n)`
    /// survive. On waves this is `(ν/2)Δ`, since half of each wave's energy
    /// sits in the non-diffusing density.
    pub fn a2_limit(&self, w: &SpectralField) -> Result<SpectralField> {
        self.check(w)?;
        let x = self.basis.coefficients(w);
        let mut out = vec![[C64::new(0.0, 0.0); 3]; x.len()];
        for (idx, (o, xs)) in out.iter_mut().zip(&x).enumerate() {
            let Some(e) = self.basis.triple(idx) else { continue };
            let m = self.a2_branch_matrix(idx);
            for a in 0..3 {
                for b in 0..3 {
                    if e.sign(a) == e.sign(b) {
                        o[b] += m[a][b] * xs[a];
                    }
                }
            }
        }
        Ok(self.basis.synthesize(&out))
    }

    // ---- triad route -----------------------------------------------------

    fn sign(&self, idx: usize, a: usize) -> Sign {
        self.basis.triple(idx).map_or(Sign::Zero, |e| e.sign(a))
    }

    /// Exact decision of `ω^a(k) + ω^b(m) - ω^c(n) = 0`.
    fn is_phase_free(&self, k: usize, a: usize, m: usize, b: usize, n: usize, c: usize, omega: f64) -> bool {
        let terms = [(self.sign(k, a), k), (self.sign(m, b), m), (self.sign(n, c).flip(), n)];
        let live: Vec<(Sign, usize)> = terms.into_iter().filter(|t| t.0 != Sign::Zero).collect();
        match live.len() {
            0 => true,
            1 => false,
            2 => live[0].0 != live[1].0 && self.freq_key[live[0].1] == self.freq_key[live[1].1],
            _ => {
                if omega.abs() > PHASE_SCREEN {
                    return false;
                }
                let vals: Vec<RadicalValue> = live
                    .iter()
                    .map(|&(s, i)| RadicalValue::of(&self.geom, self.geom.mode(i), s))
                    .collect();
                crate::resonance::sum_is_zero(&vals).expect("lattice frequencies stay in range")
            }
        }
    }

    /// Visits every triad term with `k, m, n ≠ 0` whose class passes `classes`,
    /// skipping pairs where `skip(k, m)` holds.
    fn for_each_term(
        &self,
        classes: &[TriadClass],
        mut live: impl FnMut(usize, usize) -> (u8, u8),
        mut visit: impl FnMut(&TriadTerm),
    ) {
        let g = &self.geom;
        let nm = g.n_max() as i64;
        for (n_idx, n) in g.modes() {
            let Some(en) = self.basis.triple(n_idx) else { continue };
            let lo = |c: i64| (c - nm).max(-nm);
            let hi = |c: i64| (c + nm).min(nm);
            for k0 in lo(n[0])..=hi(n[0]) {
                for k1 in lo(n[1])..=hi(n[1]) {
                    for k2 in lo(n[2])..=hi(n[2]) {
                        let k = [k0, k1, k2];
                        let m = [n[0] - k0, n[1] - k1, n[2] - k2];
                        let k_idx = g.index(k);
                        let m_idx = g.index(m);
                        let (Some(ek), Some(em)) = (self.basis.triple(k_idx), self.basis.triple(m_idx))
                        else {
                            continue;
                        };
                        let Some(class) = TriadClass::of(ek.kind, em.kind, en.kind) else { continue };
                        if !classes.contains(&class) {
                            continue;
                        }
                        let masks = live(k_idx, m_idx);
                        if masks.0 == 0 || masks.1 == 0 {
                            continue;
                        }
                        self.pair_terms(class, masks, (k_idx, k, ek), (m_idx, m, em), (n_idx, en), &mut visit);
                    }
                }
            }
        }
    }

    /// Terms of one pair `(k, m)`; `masks` flag the input branches to keep.
    fn pair_terms(
        &self,
        class: TriadClass,
        masks: (u8, u8),
        (k_idx, k, ek): (usize, Mode, &EigenTriple),
        (m_idx, m, em): (usize, Mode, &EigenTriple),
        (n_idx, en): (usize, &EigenTriple),
        visit: &mut impl FnMut(&TriadTerm),
    ) {
        let kc = self.geom.check_frequency(k);
        let mc = self.geom.check_frequency(m);
        let vel_dot = |e: &[C64; 4], w: &[f64; 3]| e[0] * w[0] + e[1] * w[1] + e[2] * w[2];
        let s1: [C64; 3] = ek.vectors.map(|e| vel_dot(&e, &mc));
        let s2: [C64; 3] = em.vectors.map(|e| vel_dot(&e, &kc));
        let half_i = C64::new(0.0, 0.5);
        for c in 0..3 {
            let p_k: [C64; 3] = ek.vectors.map(|e| dot4(&e, &en.vectors[c]));
            let p_m: [C64; 3] = em.vectors.map(|e| dot4(&e, &en.vectors[c]));
            for a in (0..3).filter(|a| masks.0 >> a & 1 == 1) {
                for b in (0..3).filter(|b| masks.1 >> b & 1 == 1) {
                    let coef = half_i * (s1[a] * p_m[b] + s2[b] * p_k[a]);
                    if coef.norm_sqr() < 1e-30 {
                        continue;
                    }
                    let omega = ek.branch_frequency(a) + em.branch_frequency(b) - en.branch_frequency(c);
                    let resonant = self.is_phase_free(k_idx, a, m_idx, b, n_idx, c, omega);
                    visit(&TriadTerm {
                        k: k_idx,
                        m: m_idx,
                        n: n_idx,
                        a,
                        b,
                        c,
                        class,
                        coef,
                        omega,
                        resonant,
                    });
                }
            }
        }
    }

    /// Weighted triad sum `Σ w(term) · coef · X1_a(k) · X2_b(m)`.
    pub fn triad_sum(
        &self,
        v1: &SpectralField,
        v2: &SpectralField,
        classes: &[TriadClass],
        weight: impl Fn(&TriadTerm) -> Option<C64>,
    ) -> Result<FormEvaluation> {
        self.check(v1)?;
        self.check(v2)?;
        let start = Instant::now();
        let x1 = self.basis.coefficients(v1);
        let x2 = self.basis.coefficients(v2);
        let mask = |x: &[C64; 3]| (0..3).filter(|&a| x[a].norm_sqr() > 0.0).fold(0u8, |m, a| m | 1 << a);
        let live1: Vec<u8> = x1.iter().map(mask).collect();
        let live2: Vec<u8> = x2.iter().map(mask).collect();
        let mut out = vec![[C64::new(0.0, 0.0); 3]; x1.len()];
        let mut interactions = 0usize;
        self.for_each_term(
            classes,
            |k, m| (live1[k], live2[m]),
            |t| {
                if let Some(w) = weight(t) {
                    out[t.n][t.c] += w * t.coef * x1[t.k][t.a] * x2[t.m][t.b];
                    interactions += 1;
                }
            },
        );
        let field = self.basis.synthesize(&out);
        Ok(FormEvaluation {
            field,
            interactions,
            elapsed: start.elapsed(),
        })
    }

    /// Triad sum with the filter phases at `τ = t/ε`; equals `Q^ε(t)` on
    /// solenoidal inputs.
    pub fn q_eps_triads(&self, tau: f64, v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
        let all = [TriadClass::Wave, TriadClass::Mixed, TriadClass::Averaged];
        Ok(self
            .triad_sum(v1, v2, &all, |t| Some(C64::from_polar(1.0, -tau * t.omega)))?
            .field)
    }

    fn resonant_sum(&self, v1: &SpectralField, v2: &SpectralField, classes: &[TriadClass]) -> Result<FormEvaluation> {
        self.triad_sum(v1, v2, classes, |t| t.resonant.then_some(C64::new(1.0, 0.0)))
    }

    /// Full resonant limit `Q(V1, V2)`.
    pub fn q_limit(&self, v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
        let all = [TriadClass::Wave, TriadClass::Mixed, TriadClass::Averaged];
        Ok(self.resonant_sum(v1, v2, &all)?.field)
    }

    /// Resonant interactions among modes with nonzero horizontal wavenumber.
    pub fn q_tilde1(&self, v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
        Ok(self.resonant_sum(v1, v2, &[TriadClass::Wave])?.field)
    }

    pub fn q_tilde1_eval(&self, v1: &SpectralField, v2: &SpectralField) -> Result<FormEvaluation> {
        self.resonant_sum(v1, v2, &[TriadClass::Wave])
    }

    /// Resonant part of `Q(U, U)` at `n_h ≠ 0` coming from one horizontally
    /// averaged input, for `U = underline + tilde`.
    pub fn q_tilde2(&self, underline: &SpectralField, tilde: &SpectralField) -> Result<SpectralField> {
        let u = underline + tilde;
        Ok(self.resonant_sum(&u, &u, &[TriadClass::Mixed])?.field)
    }

    /// Resonant interactions landing on `n_h = 0`.
    pub fn q_underline(&self, v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
        Ok(self.resonant_sum(v1, v2, &[TriadClass::Averaged])?.field)
    }

    /// Wave part of `q_tilde2`, written out: the wave at `n` is driven by the
    /// averaged field at `(0, 0, 2n_3)` and the same-branch wave at
    /// `(n_h, -n_3)`.
    pub fn b_form(&self, underline: &SpectralField, osc: &SpectralField) -> Result<SpectralField> {
        self.check(underline)?;
        self.check(osc)?;
        let g = &self.geom;
        let xu = self.basis.coefficients(underline);
        let xo = self.basis.coefficients(osc);
        let mut out = vec![[C64::new(0.0, 0.0); 3]; xu.len()];
        let half_i = C64::new(0.0, 0.5);
        for (n_idx, n) in g.modes() {
            if !has_horizontal(n) {
                continue;
            }
            let k = [0, 0, 2 * n[2]];
            let m = [n[0], n[1], -n[2]];
            let (Some(k_idx), Some(m_idx)) = (g.try_index(k), g.try_index(m)) else { continue };
            let (Some(ek), Some(em), Some(en)) =
                (self.basis.triple(k_idx), self.basis.triple(m_idx), self.basis.triple(n_idx))
            else {
                continue;
            };
            let kc = g.check_frequency(k);
            let mc = g.check_frequency(m);
            for c in 1..3 {
                let b = c;
                let em_b = &em.vectors[b];
                let s2 = em_b[0] * kc[0] + em_b[1] * kc[1] + em_b[2] * kc[2];
                let p_m = dot4(em_b, &en.vectors[c]);
                for j in 0..3 {
                    let ej = &ek.vectors[j];
                    let s1 = ej[0] * mc[0] + ej[1] * mc[1] + ej[2] * mc[2];
                    let p_k = dot4(ej, &en.vectors[c]);
                    // Both orderings of the symmetric coefficient.
                    let coef = half_i * (s1 * p_m + s2 * p_k) * 2.0;
                    out[n_idx][c] += coef * xu[k_idx][j] * xo[m_idx][b];
                }
            }
        }
        Ok(self.basis.synthesize(&out))
    }

    /// Precomputed resonant terms feeding the waves of the limit system:
    /// wave-class terms with an output wave branch and at least one wave input,
    /// and mixed-class terms with an output wave branch.
    pub fn osc_table(&self) -> TriadTable {
        let mut terms = Vec::new();
        self.for_each_term(
            &[TriadClass::Wave, TriadClass::Mixed],
            |_, _| (7, 7),
            |t| {
                if t.resonant && t.c != 0 {
                    terms.push(*t);
                }
            },
        );
        TriadTable { terms }
    }

    /// Table of every term in the given classes, resonant or not.
    pub fn table(&self, classes: &[TriadClass], keep: impl Fn(&TriadTerm) -> bool) -> TriadTable {
        let mut terms = Vec::new();
        self.for_each_term(classes, |_, _| (7, 7), |t| {
            if keep(t) {
                terms.push(*t);
            }
        });
        TriadTable { terms }
    }

    /// `Σ_l Σ_{(k,n)} Â_l(k) B̂_l(n-k) conj(Ĉ_l(n))` over pairs `(k, n)` that
    /// carry a resonant wave triad.
    pub fn trilinear_resonant(&self, a: &SpectralField, b: &SpectralField, c: &SpectralField) -> Result<C64> {
        self.check(a)?;
        self.check(b)?;
        self.check(c)?;
        let g = &self.geom;
        let mut pairs: Vec<(Mode, Mode)> = enumerate_kstar(g, g.n_max())?
            .into_iter()
            .map(|t| (t.k, t.n))
            .collect();
        pairs.dedup();
        let mut acc = C64::new(0.0, 0.0);
        for (k, n) in pairs {
            let m = [n[0] - k[0], n[1] - k[1], n[2] - k[2]];
            let (ak, bm, cn) = (a.get(k), b.get(m), c.get(n));
            for l in 0..4 {
                acc += ak[l] * bm[l] * cn[l].conj();
            }
        }
        Ok(acc)
    }

    /// Mean of `Q^ε` over the filter phases `τ_j`, through the pseudo-spectral route.
    pub fn average_q_eps(&self, taus: &[f64], v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
        let mut acc = SpectralField::zeros(self.geom);
        for &tau in taus {
            acc += &self.q_eps(tau, 1.0, v1, v2)?;
        }
        Ok(acc.scaled(1.0 / taus.len() as f64))
    }

    /// Mean of `A_2^ε` over the filter phases `τ_j`.
    pub fn average_a2_eps(&self, taus: &[f64], w: &SpectralField) -> Result<SpectralField> {
        let mut acc = SpectralField::zeros(self.geom);
        for &tau in taus {
            acc += &self.a2_eps(tau, 1.0, w)?;
        }
        Ok(acc.scaled(1.0 / taus.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_spectral::ZERO4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_solenoidal(geom: TorusGeometry, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralField::from_fn(geom, |_| {
            [(); 4].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        });
        f.enforce_hermitian();
        f.pin_zero_mode();
        f.leray_project().unwrap()
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn triad_route_matches_pseudo_spectral() {
        let g = TorusGeometry::with_squared_periods([1, 4, 2], 2).unwrap();
        let f = Forms::new(g, 0.1).unwrap();
        let v1 = random_solenoidal(g, 1);
        let v2 = random_solenoidal(g, 2);
        for tau in [0.0, 0.7, 13.0] {
            let ps = f.q_eps(tau, 1.0, &v1, &v2).unwrap();
            let tr = f.q_eps_triads(tau, &v1, &v2).unwrap();
            assert!(rel(&tr, &ps) < 1e-12, "tau={tau}: {}", rel(&tr, &ps));
        }
        let ps = f.q_eps_self(0.4, &v1).unwrap();
        let tr = f.q_eps(0.4, 1.0, &v1, &v1).unwrap();
        assert!(rel(&ps, &tr) < 1e-12);
    }

    #[test]
    fn q_eps_basic_properties() {
        let g = TorusGeometry::unit(3);
        let f = Forms::new(g, 0.1).unwrap();
        let v = random_solenoidal(g, 3);
        let w = random_solenoidal(g, 4);
        let z = SpectralField::zeros(g);
        let qz = f.q_eps(0.3, 0.1, &v, &z).unwrap().norm();
        assert!(qz < 1e-13 * v.norm_sq(), "{qz}");
        let vw = f.q_eps(0.3, 0.1, &v, &w).unwrap();
        let wv = f.q_eps(0.3, 0.1, &w, &v).unwrap();
        assert!(rel(&vw, &wv) < 1e-14);
        let at0 = f.q_eps(0.0, 0.1, &v, &v).unwrap();
        let direct = f.fft.convolve_quadratic(&v, &v, Stencil::Full).unwrap().leray_project().unwrap();
        assert!(rel(&at0, &direct) < 1e-12);
        let qv = f.q_eps(2.0, 1e-3, &v, &v).unwrap();
        assert!(qv.inner(&v).re.abs() < 1e-12 * qv.norm() * v.norm());
        assert!(f.q_eps(0.0, 0.0, &v, &v).is_err());
    }

    #[test]
    fn a2_examples() {
        let g = TorusGeometry::unit(3);
        let f = Forms::new(g, 1.0).unwrap();
        let one = C64::new(1.0, 0.0);
        let u = SpectralField::single_mode(g, [0, 0, 1], [one, one, ZERO4[0], one]);
        let out = f.a2_limit(&u).unwrap().get([0, 0, 1]);
        assert!((out[0] + 1.0).norm() < 1e-14 && (out[1] + 1.0).norm() < 1e-14);
        assert!(out[3].norm() < 1e-14);
        // A wave at n = (1,0,1): |ň|² = 2, halved by the density share.
        let e = *f.basis.triple_at([1, 0, 1]).unwrap();
        let w = SpectralField::single_mode(g, [1, 0, 1], e.vectors[1]);
        let lim = f.a2_limit(&w).unwrap();
        assert!(rel(&lim, &w.scaled(-1.0)) < 1e-14);
        let v = random_solenoidal(g, 5);
        assert!(rel(&f.a2_eps(1e-9, 1e9, &v).unwrap(), &f.a2(&v)) < 1e-12);
    }

    #[test]
    fn limit_forms_energy_neutral_and_symmetric() {
        let g = TorusGeometry::with_squared_periods([1, 2, 1], 3).unwrap();
        let f = Forms::new(g, 0.1).unwrap();
        let v = random_solenoidal(g, 7);
        let w = random_solenoidal(g, 8);
        let q = f.q_tilde1(&v, &v).unwrap();
        assert!(q.inner(&v).re.abs() < 1e-10 * q.norm() * v.norm());
        let full = f.q_limit(&v, &v).unwrap();
        assert!(full.inner(&v).re.abs() < 1e-10 * full.norm() * v.norm());
        let vw = f.q_tilde1(&v, &w).unwrap();
        let wv = f.q_tilde1(&w, &v).unwrap();
        assert!(rel(&vw, &wv) < 1e-14);
    }

    #[test]
    fn limit_pieces_recombine() {
        let g = TorusGeometry::unit(3);
        let f = Forms::new(g, 0.1).unwrap();
        let v = random_solenoidal(g, 9);
        let d = f.basis.decompose(&v).unwrap();
        let tilde = &d.bar + &d.osc;
        let mut sum = f.q_tilde1(&tilde, &tilde).unwrap();
        sum += &f.q_tilde2(&d.underline, &tilde).unwrap();
        sum += &f.q_underline(&v, &v).unwrap();
        assert!(rel(&sum, &f.q_limit(&v, &v).unwrap()) < 1e-13);
    }

    #[test]
    fn b_form_matches_mixed_triads() {
        let g = TorusGeometry::unit(3);
        let f = Forms::new(g, 0.1).unwrap();
        let v = random_solenoidal(g, 10);
        let d = f.basis.decompose(&v).unwrap();
        let b = f.b_form(&d.underline, &d.osc).unwrap();
        let q2 = f.q_tilde2(&d.underline, &d.osc).unwrap();
        let q2_osc = f.basis.osc_part(&q2);
        assert!(rel(&b, &q2_osc) < 1e-13);
        assert!(b.norm() > 0.0);

        // Single modes: averaged field at n_3 = 2 and a wave at (1,0,-1).
        let one = C64::new(1.0, 0.0);
        let ul = SpectralField::single_mode(g, [0, 0, 2], [one, C64::new(0.0, 0.5), ZERO4[0], one]);
        let e = *f.basis.triple_at([1, 0, -1]).unwrap();
        let osc = SpectralField::single_mode(g, [1, 0, -1], e.vectors[1]);
        let out = f.b_form(&ul, &osc).unwrap();
        for (i, x) in out.coeffs().iter().enumerate() {
            let n = g.mode(i);
            if n != [1, 0, 1] && n != [-1, 0, -1] {
                assert!(x.iter().all(|z| z.norm() < 1e-15), "{n:?}");
            }
        }
        assert!(out.norm() > 1e-3);
    }

    #[test]
    fn osc_table_reproduces_sums() {
        let g = TorusGeometry::unit(2);
        let f = Forms::new(g, 0.1).unwrap();
        let v = random_solenoidal(g, 11);
        let d = f.basis.decompose(&v).unwrap();
        let table = f.osc_table();
        let x = f.basis.coefficients(&v);
        let via_table = f.basis.synthesize(&table.apply(&x, &x));
        let tilde = &d.bar + &d.osc;
        let mut direct = f.q_tilde1(&tilde, &tilde).unwrap();
        direct += &f.q_tilde2(&d.underline, &tilde).unwrap();
        let direct = f.basis.osc_part(&direct);
        assert!(rel(&via_table, &direct) < 1e-13);
    }
}
