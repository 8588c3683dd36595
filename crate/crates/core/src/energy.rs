//! Weighted energies of the remainder, the four-term decomposition of
//! `1/2 d/dt |d^g u1|^2`, the sweep-level boundedness monitor and sampling of
//! the commutator (Kato-Ponce) inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::flow::{BlowUpEvent, EpState, LimitState, Trajectory};
use crate::remainder::{form_remainder, same_time, DiagError, Remainder};
use crate::spectral::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySnapshot {
    pub t: f64,
    pub gamma: usize,
    /// `1/2 |d^g u1|^2`
    pub e_kin: f64,
    /// `1/2 int (n0 / n^eps) |d^g phi1|^2`
    pub e_phi: f64,
    /// `eps/2 int (1 / n^eps) |d^g phi1_x|^2`
    pub e_grad: f64,
    /// `eps/2 int |d^g u1_x|^2`
    pub e_visc: f64,
    /// `eps^2/2 int (1 / n^eps) |d^g phi1_xx|^2`
    pub e_lap: f64,
    /// The four terms `I + II + III + IV` of `d/dt e_kin`.
    pub terms: [f64; 4],
}

impl EnergySnapshot {
    pub fn terms_sum(&self) -> f64 {
        self.terms.iter().sum()
    }
}

fn weighted(weight: &Field, f: &Field) -> f64 {
    weight.zip_map(f, |w, v| w * v * v).integrate()
}

fn inner(a: &Field, b: &Field) -> f64 {
    a.zip_map(b, |x, y| x * y).integrate()
}

pub fn energy_snapshot(
    ep: &EpState,
    lim: &LimitState,
    rem: &Remainder,
    eps: f64,
    gamma: usize,
) -> Result<EnergySnapshot, DiagError> {
    if !same_time(ep.t, lim.t) {
        return Err(DiagError::TimeMismatch(ep.t, lim.t));
    }
    if !same_time(rem.t, lim.t) {
        return Err(DiagError::TimeMismatch(rem.t, lim.t));
    }
    let n0 = &lim.n;
    let n_eps = n0.zip_map(&rem.n1, |a, b| a + eps * b);
    let (min0, max0) = (n0.min(), n0.max());
    let (min_eps, max_eps) = (n_eps.min(), n_eps.max());
    if !(min0 > 0.0 && min_eps > 0.5 * min0 && max_eps < 2.0 * max0) {
        return Err(DiagError::DensityBracket {
            min_eps,
            max_eps,
            min0,
            max0,
        });
    }
    let d = |f: &Field, extra: usize| f.derivative(gamma + extra).map_err(|_| DiagError::Order(gamma + extra));

    let u1 = &rem.u1;
    let u0 = &lim.u;
    let du1 = d(u1, 0)?;
    let du1_x = d(u1, 1)?;
    let dphi = d(&rem.phi1, 0)?;
    let dphi_x = d(&rem.phi1, 1)?;
    let dphi_xx = d(&rem.phi1, 2)?;
    let ratio = n0.zip_map(&n_eps, |a, b| a / b);
    let inv = n_eps.map(|b| 1.0 / b);

    let u1_x = u1.dx();
    let u0_x = u0.dx();
    let term = |product: Field| -> Result<f64, DiagError> { Ok(-inner(&d(&product, 0)?, &du1)) };
    let terms = [
        -inner(&dphi_x, &du1),
        eps * term(u1.product(&u1_x))?,
        term(u0.product(&u1_x))?,
        term(u1.product(&u0_x))?,
    ];

    Ok(EnergySnapshot {
        t: rem.t,
        gamma,
        e_kin: 0.5 * du1.l2_norm().powi(2),
        e_phi: 0.5 * weighted(&ratio, &dphi),
        e_grad: 0.5 * eps * weighted(&inv, &dphi_x),
        e_visc: 0.5 * eps * du1_x.l2_norm().powi(2),
        e_lap: 0.5 * eps * eps * weighted(&inv, &dphi_xx),
        terms,
    })
}

/// One interior time of the identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityRow {
    pub t: f64,
    /// Centered difference of `e_kin`.
    pub lhs: f64,
    /// `I + II + III + IV` at the snapshot.
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub eps: f64,
    pub gamma: usize,
    pub snapshots: Vec<EnergySnapshot>,
    pub rows: Vec<IdentityRow>,
    /// `max |lhs - rhs| / max |rhs|` over the window (absolute when the
    /// right-hand side vanishes identically).
    pub max_relative_defect: f64,
}

impl IdentityCheck {
    fn scale(&self) -> f64 {
        self.rows.iter().fold(0.0, |m, r| m.max(r.rhs.abs()))
    }

    /// Ledger rows `t,gamma,e_kin,e_phi,e_grad,e_visc,e_lap,I,II,III,IV,defect`.
    pub fn to_csv(&self) -> String {
        let scale = self.scale();
        let mut out = String::from("t,gamma,e_kin,e_phi,e_grad,e_visc,e_lap,I,II,III,IV,defect\n");
        for s in &self.snapshots {
            let defect = self
                .rows
                .iter()
                .find(|r| same_time(r.t, s.t))
                .map_or(f64::NAN, |r| relative(r.lhs - r.rhs, scale));
            out.push_str(&format!(
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                s.t, s.gamma, s.e_kin, s.e_phi, s.e_grad, s.e_visc, s.e_lap, s.terms[0], s.terms[1], s.terms[2], s.terms[3], defect
            ));
        }
        out
    }
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff.abs() / scale
    } else {
        diff.abs()
    }
}

/// Energy snapshots for every matched record of an Euler-Poisson and a limit
/// trajectory.
pub fn energy_series(ep: &Trajectory, lim: &Trajectory, eps: f64, gamma: usize) -> Result<Vec<EnergySnapshot>, DiagError> {
    ep.records
        .iter()
        .zip(&lim.records)
        .map(|(e, l)| {
            let rem = form_remainder(e, l, eps)?;
            energy_snapshot(e, l, &rem, eps, gamma)
        })
        .collect()
}

/// Compares the centered-difference derivative of `e_kin` with
/// `I + II + III + IV` at every interior record with equally spaced
/// neighbours.
pub fn identity_2_12_check(ep: &Trajectory, lim: &Trajectory, eps: f64, gamma: usize) -> Result<IdentityCheck, DiagError> {
    let snapshots = energy_series(ep, lim, eps, gamma)?;
    if snapshots.len() < 3 {
        return Err(DiagError::TooFewRecords {
            needed: 3,
            got: snapshots.len(),
        });
    }
    let mut rows = Vec::new();
    for w in snapshots.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        if !same_time(b.t - a.t, c.t - b.t) {
            continue;
        }
        rows.push(IdentityRow {
            t: b.t,
            lhs: (c.e_kin - a.e_kin) / (c.t - a.t),
            rhs: b.terms_sum(),
        });
    }
    let mut check = IdentityCheck {
        eps,
        gamma,
        snapshots,
        rows,
        max_relative_defect: 0.0,
    };
    let scale = check.scale();
    check.max_relative_defect = check
        .rows
        .iter()
        .fold(0.0, |m, r| m.max(relative(r.lhs - r.rhs, scale)));
    Ok(check)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    /// Not evaluated, e.g. an order fit on too narrow an eps range.
    Skipped,
}

/// Per-eps input to [`gronwall_monitor`]: the supremum over time of the
/// combined triple norm at order `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRun {
    pub eps: f64,
    pub sup_combined: f64,
    pub event: Option<BlowUpEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRow {
    pub eps: f64,
    pub sup_combined: f64,
    /// `sup_combined / reference`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    pub s: usize,
    pub bound_factor: f64,
    /// Value at the largest eps.
    pub reference: f64,
    pub rows: Vec<MonitorRow>,
    pub verdict: Verdict,
    pub events: Vec<BlowUpEvent>,
}

/// PASS when every run's sup-in-time combined norm stays within
/// `bound_factor` times the value at the largest eps. Any blow-up makes the
/// verdict INCONCLUSIVE.
pub fn gronwall_monitor(runs: &[MonitorRun], s: usize, bound_factor: f64) -> GronwallReport {
    let reference = runs
        .iter()
        .max_by(|a, b| a.eps.total_cmp(&b.eps))
        .map_or(f64::NAN, |r| r.sup_combined);
    let rows: Vec<MonitorRow> = runs
        .iter()
        .map(|r| MonitorRow {
            eps: r.eps,
            sup_combined: r.sup_combined,
            ratio: r.sup_combined / reference,
        })
        .collect();
    let events: Vec<BlowUpEvent> = runs.iter().filter_map(|r| r.event.clone()).collect();
    let verdict = if !events.is_empty() || runs.is_empty() {
        Verdict::Inconclusive
    } else if runs
        .iter()
        .all(|r| r.sup_combined.is_finite() && r.sup_combined <= bound_factor * reference)
    {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    GronwallReport {
        s,
        bound_factor,
        reference,
        rows,
        verdict,
        events,
    }
}

/// Commutator sample `(lhs, rhs)` at derivative order `k`:
///
/// * `lhs = |d^k(f g) - f d^k g|`
/// * `rhs = max|f_x| |d^(k-1) g| + |d^k f| max|g|`
///
/// Everything is evaluated on a grid twice as fine so products are
/// alias-free.
pub fn kato_ponce_sample(f: &Field, g: &Field, k: usize) -> (f64, f64) {
    assert!(k >= 1, "commutator order must be >= 1");
    let f = f.upsample(2);
    let g = g.upsample(2);
    let fg = f.zip_map(&g, |a, b| a * b);
    let dk = |h: &Field, order: usize| h.derivative(order).expect("commutator order within cap");
    let f_dkg = f.zip_map(&dk(&g, k), |a, b| a * b);
    let lhs = (&dk(&fg, k) - &f_dkg).l2_norm();
    let rhs = f.dx().max_abs() * dk(&g, k - 1).l2_norm() + dk(&f, k).l2_norm() * g.max_abs();
    (lhs, rhs)
}

/// Real trigonometric polynomial with modes `0..=max_mode` and coefficients
/// uniform in `[-1, 1]`, drawn in a fixed order so the same seed yields the
/// same function on any grid.
pub fn random_band_limited(grid: &Grid, rng: &mut impl Rng, max_mode: usize) -> Field {
    let mean: f64 = rng.gen_range(-1.0..=1.0);
    let coeffs: Vec<(f64, f64)> = (1..=max_mode)
        .map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
        .collect();
    grid.sample(|x| {
        coeffs.iter().enumerate().fold(mean, |acc, (m, (a, b))| {
            let arg = 2.0 * std::f64::consts::PI * (m + 1) as f64 * x;
            acc + a * arg.cos() + b * arg.sin()
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KatoPonceRow {
    pub k: usize,
    pub max_ratio: f64,
    pub min_rhs: f64,
}

/// Largest `lhs / rhs` over `samples` seeded random pairs, per order `k`.
pub fn kato_ponce_battery(grid: &Grid, samples: usize, ks: &[usize], seed: u64, max_mode: usize) -> Vec<KatoPonceRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Field, Field)> = (0..samples)
        .map(|_| {
            let f = random_band_limited(grid, &mut rng, max_mode);
            let g = random_band_limited(grid, &mut rng, max_mode);
            (f, g)
        })
        .collect();
    ks.iter()
        .map(|&k| {
            let (max_ratio, min_rhs) = pairs.iter().fold((0.0f64, f64::INFINITY), |(m, r), (f, g)| {
                let (lhs, rhs) = kato_ponce_sample(f, g, k);
                (m.max(lhs / rhs), r.min(rhs))
            });
            KatoPonceRow { k, max_ratio, min_rhs }
        })
        .collect()
}
