//! Dyadic frequency decomposition, Sobolev norms, paraproducts and
//! Bernstein-type measurements.

use crate::error::{Error, Result};
use crate::torus_spectral::{Mode, SpectralField, TorusGeometry, Transformer, C64, ZERO4};

const CHI_FLAT: f64 = 0.75;
const CHI_EDGE: f64 = 4.0 / 3.0;

fn bump(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// Smooth monotone step: 0 for `x ≤ 0`, 1 for `x ≥ 1`.
fn smooth_step(x: f64) -> f64 {
    let (a, b) = (bump(x), bump(1.0 - x));
    a / (a + b)
}

/// Radial profiles `χ` and `φ(t) = χ(t/2) − χ(t)`.
///
/// `χ = 1` on `[0, 3/4]` and vanishes from `4/3` on, so `φ` is supported in
/// the annulus `(3/4, 8/3)` and the sum over dyadic dilates telescopes.
#[derive(Clone, Copy, Debug, Default)]
pub struct DyadicPartition;

impl DyadicPartition {
    pub fn chi(&self, t: f64) -> f64 {
        1.0 - smooth_step((t - CHI_FLAT) / (CHI_EDGE - CHI_FLAT))
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.chi(t / 2.0) - self.chi(t)
    }

    /// Multiplier of block `q` at radius `t`; `q = -1` is the low ball.
    pub fn block_weight(&self, q: i32, t: f64) -> f64 {
        if q < 0 {
            self.chi(t)
        } else {
            self.phi(t / 2f64.powi(q))
        }
    }

    /// Multiplier of `S_q = Σ_{q' ≤ q-1} Δ_{q'}`.
    pub fn low_weight(&self, q: i32, t: f64) -> f64 {
        if q < 0 {
            0.0
        } else {
            self.chi(t / 2f64.powi(q))
        }
    }

    /// Whether `t` lies strictly inside the support of block `q`.
    pub fn in_block_support(&self, q: i32, t: f64) -> bool {
        if q < 0 {
            t < CHI_EDGE
        } else {
            let s = t / 2f64.powi(q);
            s > CHI_FLAT && s < 2.0 * CHI_EDGE
        }
    }
}

/// Largest block index that can be nonzero on the lattice.
pub fn q_max(geom: &TorusGeometry) -> i32 {
    let n = geom.n_max() as i64;
    let (_, t) = geom.freq_sq([n, n, n]);
    t.sqrt().log2().ceil() as i32 + 1
}

fn radius(geom: &TorusGeometry, n: Mode) -> f64 {
    geom.freq_sq(n).1.sqrt()
}

fn multiply(v: &SpectralField, f: impl Fn(f64) -> f64) -> SpectralField {
    let geom = *v.geometry();
    v.map_modes(|n, c| {
        let w = f(radius(&geom, n));
        if w == 0.0 {
            ZERO4
        } else {
            c.map(|z| z * w)
        }
    })
}

/// `(Σ (1+|ň|²)^s |V̂(n)|²)^{1/2}`.
pub fn sobolev_norm(s: f64, v: &SpectralField) -> f64 {
    weighted_norm(v, |t2| (1.0 + t2).powf(s))
}

/// `‖(−Δ)^{s/2} V‖` on coefficients; the zero mode is dropped.
pub fn homogeneous_sobolev_norm(s: f64, v: &SpectralField) -> f64 {
    weighted_norm(v, |t2| if t2 == 0.0 { 0.0 } else { t2.powf(s) })
}

fn weighted_norm(v: &SpectralField, w: impl Fn(f64) -> f64) -> f64 {
    let geom = v.geometry();
    v.coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (_, t2) = geom.freq_sq(geom.mode(i));
            w(t2) * c.iter().map(|z| z.norm_sqr()).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Anisotropic norm with separate horizontal and vertical weights.
pub fn anisotropic_sobolev_norm(s_h: f64, s_v: f64, v: &SpectralField) -> f64 {
    let geom = v.geometry();
    v.coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (h2, t2) = geom.freq_sq(geom.mode(i));
            (1.0 + h2).powf(s_h) * (1.0 + t2 - h2).powf(s_v) * c.iter().map(|z| z.norm_sqr()).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// `Δ_q V`.
pub fn dyadic_block(q: i32, v: &SpectralField) -> SpectralField {
    let p = DyadicPartition;
    multiply(v, |t| p.block_weight(q, t))
}

/// `S_q V`.
pub fn low_cut(q: i32, v: &SpectralField) -> SpectralField {
    let p = DyadicPartition;
    multiply(v, |t| p.low_weight(q, t))
}

/// All blocks `Δ_{-1} … Δ_{Q_max}`; entry `j` holds `Δ_{j-1}`.
pub fn blocks(v: &SpectralField) -> Vec<SpectralField> {
    (-1..=q_max(v.geometry())).map(|q| dyadic_block(q, v)).collect()
}

/// Anisotropic block `Δ_q^h Δ_{q'}^v`.
pub fn anisotropic_block(q_h: i32, q_v: i32, v: &SpectralField) -> SpectralField {
    let p = DyadicPartition;
    let geom = *v.geometry();
    v.map_modes(|n, c| {
        let (h2, t2) = geom.freq_sq(n);
        let w = p.block_weight(q_h, h2.sqrt()) * p.block_weight(q_v, (t2 - h2).sqrt());
        c.map(|z| z * w)
    })
}

/// Componentwise dealiased product `(U_l V_l)_l`.
pub fn product(tr: &Transformer, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.check_same_geometry(v)?;
    if u.geometry() != tr.geometry() {
        return Err(Error::Mismatch("field and transformer lattices differ".into()));
    }
    let mut scalars: Vec<Vec<C64>> = Vec::with_capacity(8);
    for f in [u, v] {
        for l in 0..4 {
            scalars.push(f.coeffs().iter().map(|c| c[l]).collect());
        }
    }
    let g = tr.scalars_to_grid(&scalars);
    let prods: Vec<Vec<f64>> = (0..4)
        .map(|l| g[l].iter().zip(&g[4 + l]).map(|(a, b)| a * b).collect())
        .collect();
    let hat = tr.grid_to_scalars(&prods);
    let coeffs = (0..u.geometry().mode_count())
        .map(|i| [hat[0][i], hat[1][i], hat[2][i], hat[3][i]])
        .collect();
    SpectralField::from_coeffs(*u.geometry(), coeffs)
}

/// Paraproduct decomposition `U·V = T_U V + T_V U + R(U, V)`.
#[derive(Clone, Debug)]
pub struct BonySplit {
    pub t_uv: SpectralField,
    pub t_vu: SpectralField,
    pub remainder: SpectralField,
}

impl BonySplit {
    pub fn sum(&self) -> SpectralField {
        &(&self.t_uv + &self.t_vu) + &self.remainder
    }
}

/// `T_U V = Σ_q S_{q-1}U Δ_q V`, its mirror, and the diagonal remainder
/// `Σ_{|q-q'| ≤ 1} Δ_q U Δ_{q'} V`, each computed from its own products.
pub fn bony_split(tr: &Transformer, u: &SpectralField, v: &SpectralField) -> Result<BonySplit> {
    u.check_same_geometry(v)?;
    let qm = q_max(u.geometry());
    let geom = *u.geometry();
    let mut t_uv = SpectralField::zeros(geom);
    let mut t_vu = SpectralField::zeros(geom);
    let mut remainder = SpectralField::zeros(geom);
    let bu = blocks(u);
    let bv = blocks(v);
    for q in 0..=qm {
        let j = (q + 1) as usize;
        // S_{q-1} covers blocks -1..=q-2.
        let lu = low_cut(q - 1, u);
        let lv = low_cut(q - 1, v);
        if lu.max_abs() > 0.0 && bv[j].max_abs() > 0.0 {
            t_uv += &product(tr, &lu, &bv[j])?;
        }
        if lv.max_abs() > 0.0 && bu[j].max_abs() > 0.0 {
            t_vu += &product(tr, &lv, &bu[j])?;
        }
    }
    for (j, uj) in bu.iter().enumerate() {
        if uj.max_abs() == 0.0 {
            continue;
        }
        let lo = j.saturating_sub(1);
        let hi = (j + 1).min(bv.len() - 1);
        let mut near = SpectralField::zeros(geom);
        for vk in &bv[lo..=hi] {
            near += vk;
        }
        if near.max_abs() > 0.0 {
            remainder += &product(tr, uj, &near)?;
        }
    }
    Ok(BonySplit {
        t_uv,
        t_vu,
        remainder,
    })
}

/// `c_q = 2^{qs}‖Δ_q V‖ / (Σ_{q'} 2^{2q's}‖Δ_{q'} V‖²)^{1/2}` for every block,
/// together with the constant relating the dyadic sum to `‖V‖_{H^s}`.
#[derive(Clone, Debug)]
pub struct DyadicRegularity {
    pub coefficients: Vec<f64>,
    pub constant: f64,
}

pub fn dyadic_regularity(s: f64, v: &SpectralField) -> DyadicRegularity {
    let weighted: Vec<f64> = (-1..=q_max(v.geometry()))
        .map(|q| 2f64.powf(q as f64 * s) * dyadic_block(q, v).norm())
        .collect();
    let total = weighted.iter().map(|x| x * x).sum::<f64>().sqrt();
    let hs = sobolev_norm(s, v);
    DyadicRegularity {
        coefficients: weighted.iter().map(|x| if total > 0.0 { x / total } else { 0.0 }).collect(),
        constant: if hs > 0.0 { total / hs } else { 0.0 },
    }
}

/// Measured Bernstein constants for a block-supported field.
#[derive(Clone, Copy, Debug)]
pub struct BernsteinRatios {
    /// `‖(−Δ)^{k/2}V‖_{L^p} / (2^{qk}‖V‖_{L^p})`
    pub derivative: f64,
    /// `‖V‖_{L^r} / (2^{3q(1/p - 1/r)}‖V‖_{L^p})`
    pub integrability: f64,
}

fn require_block_support(q: i32, v: &SpectralField) -> Result<()> {
    let p = DyadicPartition;
    let geom = v.geometry();
    for (i, c) in v.coeffs().iter().enumerate() {
        let n = geom.mode(i);
        if c.iter().any(|z| z.norm_sqr() > 0.0) && !p.in_block_support(q, radius(geom, n)) {
            return Err(Error::Support(format!("mode {n:?} lies outside dyadic block {q}")));
        }
    }
    Ok(())
}

pub fn bernstein_ratio(
    tr: &Transformer,
    q: i32,
    v: &SpectralField,
    k: f64,
    p: f64,
    r: f64,
) -> Result<BernsteinRatios> {
    require_block_support(q, v)?;
    let base = tr.to_physical(v)?.lp_norm(p);
    if base == 0.0 {
        return Err(Error::Support("field vanishes".into()));
    }
    let scale = 2f64.powi(q);
    let derivative = if k == 0.0 {
        1.0
    } else {
        let dv = multiply(v, |t| t.powf(k));
        tr.to_physical(&dv)?.lp_norm(p) / (scale.powf(k) * base)
    };
    let gain = 3.0 * (1.0 / p - 1.0 / r);
    let integrability = tr.to_physical(v)?.lp_norm(r) / (scale.powf(gain) * base);
    Ok(BernsteinRatios {
        derivative,
        integrability,
    })
}

/// Horizontal/vertical Bernstein ratios for an anisotropic block:
/// `‖∇_h V‖/(2^{q_h}‖V‖)` and `‖∂_3 V‖/(2^{q_v}‖V‖)` in `L²`.
pub fn anisotropic_bernstein(q_h: i32, q_v: i32, v: &SpectralField) -> Result<(f64, f64)> {
    let base = v.norm();
    if base == 0.0 {
        return Err(Error::Support("field vanishes".into()));
    }
    let geom = *v.geometry();
    let grad = |vertical: bool| {
        v.map_modes(|n, c| {
            let (h2, t2) = geom.freq_sq(n);
            let w = if vertical { (t2 - h2).sqrt() } else { h2.sqrt() };
            c.map(|z| z * w)
        })
        .norm()
    };
    Ok((
        grad(false) / (2f64.powi(q_h) * base),
        grad(true) / (2f64.powi(q_v) * base),
    ))
}
