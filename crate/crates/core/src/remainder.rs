//! First-order remainders `(n1, u1, phi1) = (solution - limit) / eps`, the
//! Taylor remainder `R1` of the Boltzmann nonlinearity, the eps-weighted
//! triple norms and the defect of the remainder equations along a recorded
//! trajectory.

use serde::Serialize;
use thiserror::Error;

use crate::flow::{EpState, LimitState};
use crate::spectral::Field;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("snapshot times differ: {0} vs {1}")]
    TimeMismatch(f64, f64),
    #[error("eps must be positive, got {0}")]
    InvalidEps(f64),
    #[error("density must be positive (min {0})")]
    NonPositiveDensity(f64),
    #[error("limit relation n0 = exp(phi0) violated by {0:e}")]
    LimitRelation(f64),
    #[error(
        "density bracket sigma'/2 < n^eps < 2 sigma'' violated: n^eps in [{min_eps}, {max_eps}], n0 in [{min0}, {max0}]"
    )]
    DensityBracket { min_eps: f64, max_eps: f64, min0: f64, max0: f64 },
    #[error("derivative order {0} is out of range")]
    Order(usize),
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
}

/// Scaled differences at one time, with `phi1` built from the solved
/// potential `ep.phi` and the limit potential `ln n0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Remainder {
    pub t: f64,
    pub eps: f64,
    pub n1: Field,
    pub u1: Field,
    pub phi1: Field,
}

pub(crate) fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

pub fn form_remainder(ep: &EpState, lim: &LimitState, eps: f64) -> Result<Remainder, DiagError> {
    if !same_time(ep.t, lim.t) {
        return Err(DiagError::TimeMismatch(ep.t, lim.t));
    }
    if !(eps > 0.0) {
        return Err(DiagError::InvalidEps(eps));
    }
    for n in [&ep.n, &lim.n] {
        if !(n.min() > 0.0) {
            return Err(DiagError::NonPositiveDensity(n.min()));
        }
    }
    let inv = 1.0 / eps;
    let n1 = ep.n.zip_map(&lim.n, |a, b| (a - b) * inv);
    let u1 = ep.u.zip_map(&lim.u, |a, b| (a - b) * inv);
    let phi1 = ep.phi.zip_map(&lim.n, |p, n| (p - n.ln()) * inv);
    Ok(Remainder {
        t: ep.t,
        eps,
        n1,
        u1,
        phi1,
    })
}

fn check_limit_relation(phi0: &Field, n0: &Field) -> Result<(), DiagError> {
    let worst = phi0
        .values()
        .iter()
        .zip(n0.values())
        .map(|(p, n)| (n - p.exp()).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max);
    if worst > 1e-10 {
        return Err(DiagError::LimitRelation(worst));
    }
    Ok(())
}

/// `R1 = eps^(-3/2) (n0 + eps n0 phi1 - exp(phi0 + eps phi1))`, pointwise.
pub fn r1_field(phi0: &Field, phi1: &Field, n0: &Field, eps: f64) -> Result<Field, DiagError> {
    if !(eps > 0.0) {
        return Err(DiagError::InvalidEps(eps));
    }
    check_limit_relation(phi0, n0)?;
    let scale = eps.powf(-1.5);
    let values = (0..phi0.len())
        .map(|i| {
            let (p0, p1, n) = (phi0.values()[i], phi1.values()[i], n0.values()[i]);
            scale * (n + eps * n * p1 - (p0 + eps * p1).exp())
        })
        .collect();
    Field::new(phi0.grid(), values).map_err(|_| DiagError::LimitRelation(f64::INFINITY))
}

/// `int_0^1 (1 - theta) exp(theta h) d theta = sum_m h^m / (m + 2)!`.
fn taylor_kernel(h: f64) -> f64 {
    let mut term: f64 = 0.5;
    let mut sum = term;
    let mut m = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        m += 1.0;
        term *= h / (m + 2.0);
        sum += term;
        if m > 200.0 {
            break;
        }
    }
    sum
}

/// Integral (Taylor) form of the remainder magnitude,
/// `sqrt(eps) exp(phi0) (phi1)^2 int_0^1 (1 - theta) exp(theta eps phi1) d theta`.
///
/// Equals `|R1|` pointwise in exact arithmetic; evaluated by a power series
/// so it avoids the cancellation inside [`r1_field`].
pub fn r1_integral_form(phi0: &Field, phi1: &Field, eps: f64) -> Field {
    let root = eps.sqrt();
    phi0.zip_map(phi1, |p0, p1| root * p0.exp() * p1 * p1 * taylor_kernel(eps * p1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripleNorm {
    pub s: usize,
    pub n1_part: f64,
    pub u1_part: f64,
    pub phi1_part: f64,
    /// `sqrt(u1_part^2 + phi1_part^2)`.
    pub combined: f64,
}

pub fn triple_norm(rem: &Remainder, s: usize) -> TripleNorm {
    let eps = rem.eps;
    let n1_part = rem.n1.hs_norm(s);
    let u1_part = (rem.u1.hs_norm(s).powi(2) + eps * rem.u1.dx().hs_norm(s).powi(2)).sqrt();
    let phi1_part = (rem.phi1.hs_norm(s).powi(2)
        + eps * rem.phi1.dx().hs_norm(s).powi(2)
        + eps * eps * rem.phi1.dxx().hs_norm(s).powi(2))
    .sqrt();
    TripleNorm {
        s,
        n1_part,
        u1_part,
        phi1_part,
        combined: u1_part.hypot(phi1_part),
    }
}

/// The two ratios whose boundedness expresses the elliptic estimates between
/// `n1` and `phi1` at order `k`:
///
/// * `|n1|_k^2 / (1 + |phi1|_k^2 + eps^2 |phi1''|_k^2)`
/// * `(|phi1|_k^2 + eps |phi1'|_k^2 + eps^2 |phi1''|_k^2) / (1 + |n1|_k^2)`
pub fn elliptic_ratios(rem: &Remainder, k: usize) -> (f64, f64) {
    let eps = rem.eps;
    let n1 = rem.n1.hs_norm(k).powi(2);
    let p0 = rem.phi1.hs_norm(k).powi(2);
    let p1 = rem.phi1.dx().hs_norm(k).powi(2);
    let p2 = rem.phi1.dxx().hs_norm(k).powi(2);
    (n1 / (1.0 + p0 + eps * eps * p2), (p0 + eps * p1 + eps * eps * p2) / (1.0 + n1))
}

/// L2 defects of the three remainder equations at the middle snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderResidual {
    pub t: f64,
    pub res_n: f64,
    pub res_u: f64,
    pub res_phi: f64,
}

/// Defects of the remainder system at `window[1]`, with time derivatives
/// taken as centered differences across `window[0]` and `window[2]`.
/// `lim` is the limit state at the middle time.
pub fn remainder_residual(window: [&Remainder; 3], lim: &LimitState) -> Result<RemainderResidual, DiagError> {
    let [prev, mid, next] = window;
    if !same_time(mid.t, lim.t) {
        return Err(DiagError::TimeMismatch(mid.t, lim.t));
    }
    let eps = mid.eps;
    let span = next.t - prev.t;
    let ddt = |a: &Field, b: &Field| b.zip_map(a, |y1, y0| (y1 - y0) / span);

    let (n0, u0) = (&lim.n, &lim.u);
    let (n1, u1, phi1) = (&mid.n1, &mid.u1, &mid.phi1);

    // dn1/dt + (n0 u1 + u0 n1)_x + eps (n1 u1)_x
    let flux = &(&n0.product(u1) + &u0.product(n1)) + &(&n1.product(u1) * eps);
    let res_n = (&ddt(&prev.n1, &next.n1) + &flux.dx()).l2_norm();

    // du1/dt + u0 u1_x + u1 u0_x + eps u1 u1_x + phi1_x
    let adv = &(&u0.product(&u1.dx()) + &u1.product(&u0.dx())) + &(&u1.product(&u1.dx()) * eps);
    let res_u = (&(&ddt(&prev.u1, &next.u1) + &adv) + &phi1.dx()).l2_norm();

    // -eps phi1'' = phi0'' + n1 - n0 phi1 + sqrt(eps) R1
    let phi0 = &lim.phi;
    let r1 = r1_field(phi0, phi1, n0, eps)?;
    let root = eps.sqrt();
    let lhs = &phi1.dxx() * (-eps);
    let phi0_xx = phi0.dxx();
    let values = (0..lhs.len())
        .map(|i| {
            lhs.values()[i]
                - (phi0_xx.values()[i] + n1.values()[i] - n0.values()[i] * phi1.values()[i]
                    + root * r1.values()[i])
        })
        .collect();
    let res_phi = Field::new(lhs.grid(), values)
        .map(|f| f.l2_norm())
        .unwrap_or(f64::INFINITY);

    Ok(RemainderResidual {
        t: mid.t,
        res_n,
        res_u,
        res_phi,
    })
}

/// Residuals at every interior record of a uniformly spaced series.
/// Records whose neighbours are not equally spaced are skipped.
pub fn residual_series(rems: &[Remainder], lims: &[LimitState]) -> Result<Vec<RemainderResidual>, DiagError> {
    let mut out = Vec::new();
    for i in 1..rems.len().saturating_sub(1) {
        let (a, b, c) = (&rems[i - 1], &rems[i], &rems[i + 1]);
        if !same_time(b.t - a.t, c.t - b.t) {
            continue;
        }
        out.push(remainder_residual([a, b, c], &lims[i])?);
    }
    Ok(out)
}

/// CSV rows `t,eps,s,n1_Hs,u1_triple,phi1_triple,combined,res_n,res_u,res_phi`.
/// Residual columns are `NaN` where no centered difference exists.
pub fn remainder_csv(rems: &[Remainder], residuals: &[RemainderResidual], s_list: &[usize]) -> String {
    let mut out = String::from("t,eps,s,n1_Hs,u1_triple,phi1_triple,combined,res_n,res_u,res_phi\n");
    for rem in rems {
        let res = residuals.iter().find(|r| same_time(r.t, rem.t));
        let (rn, ru, rp) = res.map_or((f64::NAN, f64::NAN, f64::NAN), |r| (r.res_n, r.res_u, r.res_phi));
        for &s in s_list {
            let tn = triple_norm(rem, s);
            out.push_str(&format!(
                "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                rem.t, rem.eps, s, tn.n1_part, tn.u1_part, tn.phi1_part, tn.combined, rn, ru, rp
            ));
        }
    }
    out
}
