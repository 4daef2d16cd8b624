//! Exact detection of resonant wave interactions.
//!
//! Squared frequencies `ω(n)² = |ň_h|²/|ň|²` are rational whenever the squared
//! periods are, so a relation `±ω(k) ± ω(m) = ±ω(n)` can be decided in
//! integers: split the terms by sign, then square away the radicals.

use crate::error::{Error, Result};
use crate::torus_spectral::{add_modes, has_horizontal, sub_modes, Mode, TorusGeometry};
use crate::wave_basis::Sign;

/// `sign·√(num/den)`, an exact branch frequency `ω^sign(n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RadicalValue {
    pub sign: Sign,
    pub num: i128,
    pub den: i128,
}

impl RadicalValue {
    pub fn of(geom: &TorusGeometry, n: Mode, sign: Sign) -> Self {
        let (h, t) = geom.freq_sq_exact(n);
        RadicalValue {
            sign,
            num: h,
            den: t.max(1),
        }
    }

    pub fn negated(self) -> Self {
        RadicalValue {
            sign: self.sign.flip(),
            ..self
        }
    }

    pub fn to_f64(self) -> f64 {
        self.sign.value() as f64 * (self.num as f64 / self.den as f64).sqrt()
    }

    fn is_null(&self) -> bool {
        self.sign == Sign::Zero || self.num == 0
    }
}

fn mul(a: i128, b: i128) -> Result<i128> {
    a.checked_mul(b).ok_or(Error::Overflow)
}

fn sub(a: i128, b: i128) -> Result<i128> {
    a.checked_sub(b).ok_or(Error::Overflow)
}

/// `√(x) = √(y)` for nonnegative rationals.
fn radicals_equal(x: &RadicalValue, y: &RadicalValue) -> Result<bool> {
    Ok(mul(x.num, y.den)? == mul(y.num, x.den)?)
}

/// `√a + √b = √c` for nonnegative rationals `a, b, c`.
fn radical_sum_equals(a: &RadicalValue, b: &RadicalValue, c: &RadicalValue) -> Result<bool> {
    // a + b + 2√(ab) = c  ⇔  c - a - b ≥ 0 and 4ab = (c - a - b)²,
    // everything multiplied through by the denominators.
    let (ha, ta) = (a.num, a.den);
    let (hb, tb) = (b.num, b.den);
    let (hc, tc) = (c.num, c.den);
    let d = sub(
        sub(mul(mul(hc, ta)?, tb)?, mul(mul(ha, tb)?, tc)?)?,
        mul(mul(hb, ta)?, tc)?,
    )?;
    if d < 0 {
        return Ok(false);
    }
    let lhs = mul(mul(mul(4, mul(ha, hb)?)?, mul(ta, tb)?)?, mul(tc, tc)?)?;
    Ok(lhs == mul(d, d)?)
}

/// Exact test of `Σ terms = 0` for up to three signed radicals.
pub fn sum_is_zero(terms: &[RadicalValue]) -> Result<bool> {
    let live: Vec<&RadicalValue> = terms.iter().filter(|t| !t.is_null()).collect();
    let mut pos: Vec<&RadicalValue> = live.iter().copied().filter(|t| t.sign == Sign::Plus).collect();
    let mut neg: Vec<&RadicalValue> = live.iter().copied().filter(|t| t.sign == Sign::Minus).collect();
    if pos.len() < neg.len() {
        std::mem::swap(&mut pos, &mut neg);
    }
    match (pos.len(), neg.len()) {
        (0, 0) => Ok(true),
        (_, 0) => Ok(false),
        (1, 1) => radicals_equal(pos[0], neg[0]),
        (2, 1) => radical_sum_equals(pos[0], pos[1], neg[0]),
        _ => Err(Error::InvalidArgument(
            "exact radical sums are limited to three terms".into(),
        )),
    }
}

/// Exact test of `ω^a(k) + ω^b(m) = ω^c(n)`. Zero signs are allowed.
pub fn is_resonant(
    geom: &TorusGeometry,
    k: Mode,
    m: Mode,
    n: Mode,
    a: Sign,
    b: Sign,
    c: Sign,
) -> Result<bool> {
    if add_modes(k, m) != n {
        return Err(Error::InvalidArgument(format!("{k:?} + {m:?} != {n:?}")));
    }
    sum_is_zero(&[
        RadicalValue::of(geom, k, a),
        RadicalValue::of(geom, m, b),
        RadicalValue::of(geom, n, c).negated(),
    ])
}

/// A wave triad with its exact frequency relation attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResonantTriad {
    pub k: Mode,
    pub m: Mode,
    pub n: Mode,
    pub a: Sign,
    pub b: Sign,
    pub c: Sign,
    /// `[ω^a(k), ω^b(m), -ω^c(n)]`, summing to zero.
    pub certificate: [RadicalValue; 3],
}

impl ResonantTriad {
    fn key(&self) -> (Mode, Mode, Mode, Sign, Sign, Sign) {
        (self.k, self.m, self.n, self.a, self.b, self.c)
    }

    /// Recomputes the certificate from the geometry and re-checks it.
    pub fn verify(&self, geom: &TorusGeometry) -> Result<bool> {
        let fresh = [
            RadicalValue::of(geom, self.k, self.a),
            RadicalValue::of(geom, self.m, self.b),
            RadicalValue::of(geom, self.n, self.c).negated(),
        ];
        Ok(fresh == self.certificate
            && add_modes(self.k, self.m) == self.n
            && has_horizontal(self.k)
            && has_horizontal(self.m)
            && has_horizontal(self.n)
            && sum_is_zero(&fresh)?)
    }
}

fn cube(n_max: i64) -> impl Iterator<Item = Mode> {
    (-n_max..=n_max).flat_map(move |x| {
        (-n_max..=n_max).flat_map(move |y| (-n_max..=n_max).map(move |z| [x, y, z]))
    })
}

const WAVE_SIGNS: [Sign; 2] = [Sign::Plus, Sign::Minus];

/// All wave triads `(k, m, n = k + m)` with `|·|∞ ≤ n_max`, nonzero horizontal
/// parts and signs in `{+,-}`, sorted lexicographically.
pub fn enumerate_kstar(geom: &TorusGeometry, n_max: usize) -> Result<Vec<ResonantTriad>> {
    let nm = n_max as i64;
    let mut out = Vec::new();
    for k in cube(nm).filter(|&k| has_horizontal(k)) {
        let rk = RadicalValue::of(geom, k, Sign::Plus);
        for m in cube(nm).filter(|&m| has_horizontal(m)) {
            let n = add_modes(k, m);
            if !has_horizontal(n) || n.iter().any(|c| c.abs() > nm) {
                continue;
            }
            let rm = RadicalValue::of(geom, m, Sign::Plus);
            let rn = RadicalValue::of(geom, n, Sign::Plus);
            // With all three magnitudes positive, some sign choice works iff
            // one magnitude is the sum of the other two.
            let hit = radical_sum_equals(&rk, &rm, &rn)?
                || radical_sum_equals(&rk, &rn, &rm)?
                || radical_sum_equals(&rm, &rn, &rk)?;
            if !hit {
                continue;
            }
            for a in WAVE_SIGNS {
                for b in WAVE_SIGNS {
                    for c in WAVE_SIGNS {
                        let cert = [
                            RadicalValue::of(geom, k, a),
                            RadicalValue::of(geom, m, b),
                            RadicalValue::of(geom, n, c).negated(),
                        ];
                        if sum_is_zero(&cert)? {
                            out.push(ResonantTriad {
                                k,
                                m,
                                n,
                                a,
                                b,
                                c,
                                certificate: cert,
                            });
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(|t| t.key());
    Ok(out)
}

/// Smallest `b ≥ 0` such that `ω(p)² < ω(n)²/4` whenever `|p_3| ≥ b`, for
/// `p = (p_h, p_3)`.
fn decay_radius(geom: &TorusGeometry, p_h: [i64; 2], n: Mode) -> Result<i64> {
    let (hp, _) = geom.freq_sq_exact([p_h[0], p_h[1], 0]);
    let (hn, tn) = geom.freq_sq_exact(n);
    let (_, w3) = geom.freq_sq_exact([0, 0, 1]);
    let lhs = mul(mul(4, hp)?, tn)?;
    let mut b: i64 = 0;
    loop {
        let tp = hp + mul(w3, (b as i128).pow(2))?;
        if lhs < mul(hn, tp)? {
            return Ok(b);
        }
        b += 1;
        if b > 1 << 20 {
            return Err(Error::Overflow);
        }
    }
}

/// Largest number of distinct `k_3` that a fiber may contain.
pub const FIBER_BOUND: usize = 8;

/// Every `k_3 ∈ ℤ` for which `(k, n - k, n)` with `k = (k_h, k_3)` is resonant
/// for some choice of wave signs.
pub fn fiber(geom: &TorusGeometry, k_h: [i64; 2], n: Mode) -> Result<Vec<i64>> {
    if k_h == [0, 0] || !has_horizontal(n) {
        return Err(Error::InvalidArgument("fiber needs k_h ≠ 0 and n_h ≠ 0".into()));
    }
    let m_h = [n[0] - k_h[0], n[1] - k_h[1]];
    if m_h == [0, 0] {
        return Ok(Vec::new());
    }
    // Outside both windows ω(k) + ω(m) < ω(n), so nothing resonates there.
    let bk = decay_radius(geom, k_h, n)?;
    let bm = decay_radius(geom, m_h, n)?;
    let mut candidates: Vec<i64> = (-bk + 1..bk).chain(n[2] - bm + 1..n[2] + bm).collect();
    candidates.sort_unstable();
    candidates.dedup();
    let rn = RadicalValue::of(geom, n, Sign::Plus);
    let mut out = Vec::new();
    for k3 in candidates {
        let k = [k_h[0], k_h[1], k3];
        let m = sub_modes(n, k);
        let rk = RadicalValue::of(geom, k, Sign::Plus);
        let rm = RadicalValue::of(geom, m, Sign::Plus);
        if radical_sum_equals(&rk, &rm, &rn)?
            || radical_sum_equals(&rk, &rn, &rm)?
            || radical_sum_equals(&rm, &rn, &rk)?
        {
            out.push(k3);
        }
    }
    if out.len() > FIBER_BOUND {
        return Err(Error::FiberBound(format!(
            "k_h = {k_h:?}, n = {n:?} has {} resonant k_3: {out:?}",
            out.len()
        )));
    }
    Ok(out)
}

/// Pairs `(k, m)` with `k + m = (0, 0, n_3)`, `k_h = -m_h ≠ 0`, `|·|∞ ≤ n_max`
/// and `ω^a(k) + ω^b(m) = 0`, sorted by `k`.
pub fn enumerate_iab(
    geom: &TorusGeometry,
    n3: i64,
    n_max: usize,
    a: Sign,
    b: Sign,
) -> Result<Vec<(Mode, Mode)>> {
    let nm = n_max as i64;
    let mut out = Vec::new();
    for k in cube(nm).filter(|&k| has_horizontal(k)) {
        let m = [-k[0], -k[1], n3 - k[2]];
        if m[2].abs() > nm {
            continue;
        }
        let terms = [RadicalValue::of(geom, k, a), RadicalValue::of(geom, m, b)];
        if sum_is_zero(&terms)? {
            out.push((k, m));
        }
    }
    Ok(out)
}
