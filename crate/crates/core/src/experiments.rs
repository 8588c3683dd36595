//! eps-sweeps: run both flows from shared data, reduce every matched record
//! to remainder, gap and energy diagnostics, then fit convergence orders and
//! issue verdicts.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::energy::{gronwall_monitor, identity_2_12_check, GronwallReport, MonitorRun, Verdict};
use crate::flow::{run, BlowUpEvent, FlowError, RunOptions, Trajectory};
use crate::init::{make_initial, InitError, InitParams};
use crate::remainder::{elliptic_ratios, form_remainder, residual_series, triple_norm, DiagError, Remainder};
use crate::spectral::{Grid, SpectralError, S_MAX};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] SpectralError),
    #[error(transparent)]
    Init(#[from] InitError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 3 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("pair ({0}, {1}) is not strictly positive")]
    NonPositive(f64, f64),
    #[error("all eps values coincide")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub grid_points: usize,
    /// Non-increasing, positive.
    pub eps_list: Vec<f64>,
    /// Template for every run; `eps` is overwritten per row.
    pub run: RunOptions,
    /// Step override. `None` uses [`RunOptions::cfl_dt`] of the initial
    /// velocity, shared by all rows and the limit run.
    pub dt: Option<f64>,
    pub init: InitParams,
    pub s_list: Vec<usize>,
    pub seed: u64,
    pub bound_factor: f64,
    /// Elliptic ratios may grow to this multiple of their largest-eps value.
    pub ratio_factor: f64,
    pub identity_gamma: usize,
    pub order_min: f64,
    pub order_max: f64,
    pub min_r_squared: f64,
    /// Bound on `| |e^phi - n| - eps |phi''| |` per snapshot.
    pub identity_gap_tol: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            grid_points: 256,
            eps_list: vec![1e-1, 1e-2, 1e-3, 1e-4],
            run: RunOptions::default(),
            dt: None,
            init: InitParams::default(),
            s_list: vec![0, 1, 2],
            seed: 0,
            bound_factor: 2.0,
            ratio_factor: 3.0,
            identity_gamma: 0,
            order_min: 0.85,
            order_max: 1.15,
            min_r_squared: 0.99,
            identity_gap_tol: 1e-9,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::Invalid(m));
        if self.eps_list.is_empty() {
            return bad("eps_list is empty".into());
        }
        if let Some(e) = self.eps_list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return bad(format!("eps values must be positive and finite, got {e}"));
        }
        if self.eps_list.windows(2).any(|w| w[1] > w[0]) {
            return bad("eps_list must be non-increasing".into());
        }
        if self.s_list.is_empty() {
            return bad("s_list is empty".into());
        }
        if let Some(s) = self.s_list.iter().find(|s| **s > S_MAX) {
            return bad(format!("s = {s} exceeds {S_MAX}"));
        }
        if self.identity_gamma + 2 > crate::spectral::MAX_DERIVATIVE_ORDER {
            return bad(format!("identity_gamma = {} is too large", self.identity_gamma));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dt must be positive, got {dt}"));
            }
        }
        for (name, v) in [
            ("bound_factor", self.bound_factor),
            ("ratio_factor", self.ratio_factor),
            ("identity_gap_tol", self.identity_gap_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.order_min <= self.order_max) {
            return bad("order_min exceeds order_max".into());
        }
        self.init.validate()?;
        RunOptions {
            eps: self.eps_list[0],
            dt: self.dt.unwrap_or(self.run.dt),
            ..self.run
        }
        .validate()?;
        Ok(())
    }

    /// Sobolev order used for the convergence fits: 2 when monitored,
    /// otherwise the largest monitored order.
    pub fn fit_order_s(&self) -> usize {
        if self.s_list.contains(&2) {
            2
        } else {
            self.s_list.iter().copied().max().unwrap_or(0)
        }
    }

    /// Distinct eps values span at least 3 points and 2 decades.
    pub fn supports_fits(&self) -> bool {
        let distinct = distinct_eps(&self.eps_list);
        distinct.len() >= 3 && distinct[0] / distinct[distinct.len() - 1] >= 100.0 * (1.0 - 1e-12)
    }
}

fn distinct_eps(list: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &e in list {
        if !out.contains(&e) {
            out.push(e);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowStatus {
    Ok,
    Blowup,
}

/// Supremum over time of the triple-norm parts at order `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupNorms {
    pub s: usize,
    pub n1: f64,
    pub u1_triple: f64,
    pub phi1_triple: f64,
    pub combined: f64,
}

/// `sup_t |n^eps - n0|_{H^s}` and `sup_t |u^eps - u0|_{H^s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HsErrors {
    pub s: usize,
    pub n: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowErrors {
    pub hs: Vec<HsErrors>,
    /// `sup_t |phi^eps - ln n^eps|_{L2}`
    pub phi_ln_n: f64,
    /// `sup_t |exp(phi^eps) - n^eps|_{L2}`
    pub quasineutral_gap: f64,
    /// `max_t | |exp(phi) - n| - eps |phi''| |`
    pub gap_identity_defect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticSup {
    pub k: usize,
    pub ratio_n: f64,
    pub ratio_phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualMax {
    pub res_n: f64,
    pub res_u: f64,
    pub res_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub status: RowStatus,
    pub event: Option<BlowUpEvent>,
    /// Last matched time.
    pub t_reached: f64,
    pub records: usize,
    pub sup_norms: Vec<SupNorms>,
    pub errors: RowErrors,
    pub elliptic: Vec<EllipticSup>,
    pub identity_defect: Option<f64>,
    pub residual_max: Option<ResidualMax>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% confidence interval of the slope (Student t).
    pub slope_ci95: (f64, f64),
    pub points: usize,
    /// Largest eps dropped by the pre-asymptotic guard.
    pub excluded_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fits {
    pub s: usize,
    pub n_error: Option<OrderFit>,
    pub u_error: Option<OrderFit>,
    pub quasineutral_gap: Option<OrderFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticVerdict {
    pub k: usize,
    pub reference: (f64, f64),
    pub max_growth: (f64, f64),
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub gronwall: Vec<GronwallReport>,
    pub convergence: Verdict,
    pub gap_order: Verdict,
    pub gap_identity: Verdict,
    pub elliptic: Vec<EllipticVerdict>,
}

impl Verdicts {
    fn all(&self) -> impl Iterator<Item = Verdict> + '_ {
        self.gronwall
            .iter()
            .map(|g| g.verdict)
            .chain([self.convergence, self.gap_order, self.gap_identity])
            .chain(self.elliptic.iter().map(|e| e.verdict))
    }

    pub fn any_fail(&self) -> bool {
        self.all().any(|v| v == Verdict::Fail)
    }

    pub fn all_pass(&self) -> bool {
        self.all().all(|v| matches!(v, Verdict::Pass | Verdict::Skipped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub dt: f64,
    pub rows: Vec<SweepRow>,
    pub fits: Fits,
    pub verdicts: Verdicts,
}

impl SweepReport {
    pub fn any_blowup(&self) -> bool {
        self.rows.iter().any(|r| r.status == RowStatus::Blowup)
    }

    /// Copy with wall times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.wall_time_s = 0.0;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// One line per `(eps, s)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "eps,status,s,sup_combined,sup_n1,sup_u1_triple,sup_phi1_triple,err_n_Hs,err_u_Hs,ratio_n,ratio_phi,\
             quasineutral_gap,phi_ln_n,gap_identity_defect,identity_defect,res_n,res_u,res_phi,wall_time_s\n",
        );
        for r in &self.rows {
            let status = match r.status {
                RowStatus::Ok => "OK",
                RowStatus::Blowup => "BLOWUP",
            };
            let res = r.residual_max.unwrap_or(ResidualMax {
                res_n: f64::NAN,
                res_u: f64::NAN,
                res_phi: f64::NAN,
            });
            for ((sn, er), el) in r.sup_norms.iter().zip(&r.errors.hs).zip(&r.elliptic) {
                out.push_str(&format!(
                    "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.6}\n",
                    r.eps,
                    status,
                    sn.s,
                    sn.combined,
                    sn.n1,
                    sn.u1_triple,
                    sn.phi1_triple,
                    er.n,
                    er.u,
                    el.ratio_n,
                    el.ratio_phi,
                    r.errors.quasineutral_gap,
                    r.errors.phi_ln_n,
                    r.errors.gap_identity_defect,
                    r.identity_defect.unwrap_or(f64::NAN),
                    res.res_n,
                    res.res_u,
                    res.res_phi,
                    r.wall_time_s
                ));
            }
        }
        out
    }
}

/// Ordinary least squares of `ln err` against `ln eps`:
/// `(slope, intercept, r_squared)`. `r_squared` is 1 when the errors are all
/// equal.
pub fn fit_order(pairs: &[(f64, f64)]) -> Result<(f64, f64, f64), FitError> {
    Ok(fit_full(pairs)?.0)
}

fn fit_full(pairs: &[(f64, f64)]) -> Result<((f64, f64, f64), f64), FitError> {
    if pairs.len() < 3 {
        return Err(FitError::TooFewPairs(pairs.len()));
    }
    if let Some(&(e, r)) = pairs.iter().find(|(e, r)| !(*e > 0.0 && *r > 0.0 && e.is_finite() && r.is_finite())) {
        return Err(FitError::NonPositive(e, r));
    }
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let se = (sse / (m - 2.0) / sxx).sqrt();
    Ok(((slope, intercept, r2), se))
}

fn order_fit(pairs: &[(f64, f64)], excluded_eps: Option<f64>) -> Result<OrderFit, FitError> {
    let ((slope, intercept, r_squared), se) = fit_full(pairs)?;
    let dof = pairs.len() as f64 - 2.0;
    let t = StudentsT::new(0.0, 1.0, dof).map_or(f64::INFINITY, |d| d.inverse_cdf(0.975));
    let half = if se == 0.0 { 0.0 } else { t * se };
    Ok(OrderFit {
        slope,
        intercept,
        r_squared,
        slope_ci95: (slope - half, slope + half),
        points: pairs.len(),
        excluded_eps,
    })
}

/// Fit with the pre-asymptotic guard: when `r_squared < min_r2` and more than
/// three points are available, the largest eps is dropped once.
pub fn guarded_fit(pairs: &[(f64, f64)], min_r2: f64) -> Result<OrderFit, FitError> {
    let full = order_fit(pairs, None)?;
    if full.r_squared >= min_r2 || pairs.len() <= 3 {
        return Ok(full);
    }
    let (drop_idx, &(drop_eps, _)) = pairs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("non-empty");
    let rest: Vec<(f64, f64)> = pairs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != drop_idx)
        .map(|(_, p)| *p)
        .collect();
    order_fit(&rest, Some(drop_eps))
}

/// `sup_t |exp(phi) - n|_{L2}` over the recorded states.
pub fn quasineutrality_gap(traj: &Trajectory) -> f64 {
    traj.records
        .iter()
        .map(|s| (&s.phi.exp() - &s.n).l2_norm())
        .fold(0.0, f64::max)
}

/// `max_t | |exp(phi) - n|_{L2} - eps |phi''|_{L2} |`: the gap and the
/// rescaled curvature of the potential must agree for a converged solve.
pub fn quasineutrality_identity_defect(traj: &Trajectory, eps: f64) -> f64 {
    traj.records
        .iter()
        .map(|s| ((&s.phi.exp() - &s.n).l2_norm() - eps * s.phi.dxx().l2_norm()).abs())
        .fold(0.0, f64::max)
}

fn sup(acc: &mut f64, v: f64) {
    if v > *acc || v.is_nan() {
        *acc = v;
    }
}

fn reduce_row(spec: &SweepSpec, eps: f64, ep: &Trajectory, lim: &Trajectory, wall: f64) -> Result<SweepRow, SweepError> {
    let matched = ep.records.len().min(lim.records.len());
    let ep_recs = &ep.records[..matched];
    let lim_recs = &lim.records[..matched];
    let event = ep.event.clone().or_else(|| lim.event.clone());
    let status = if event.is_some() { RowStatus::Blowup } else { RowStatus::Ok };

    let rems: Vec<Remainder> = ep_recs
        .iter()
        .zip(lim_recs)
        .map(|(e, l)| form_remainder(e, l, eps))
        .collect::<Result<_, _>>()?;

    let mut sup_norms: Vec<SupNorms> = spec
        .s_list
        .iter()
        .map(|&s| SupNorms {
            s,
            n1: 0.0,
            u1_triple: 0.0,
            phi1_triple: 0.0,
            combined: 0.0,
        })
        .collect();
    let mut hs: Vec<HsErrors> = spec.s_list.iter().map(|&s| HsErrors { s, n: 0.0, u: 0.0 }).collect();
    let mut elliptic: Vec<EllipticSup> = spec
        .s_list
        .iter()
        .map(|&k| EllipticSup {
            k,
            ratio_n: 0.0,
            ratio_phi: 0.0,
        })
        .collect();
    let mut phi_ln_n = 0.0;
    for (rem, e) in rems.iter().zip(ep_recs) {
        for ((sn, er), el) in sup_norms.iter_mut().zip(&mut hs).zip(&mut elliptic) {
            let tn = triple_norm(rem, sn.s);
            sup(&mut sn.n1, tn.n1_part);
            sup(&mut sn.u1_triple, tn.u1_part);
            sup(&mut sn.phi1_triple, tn.phi1_part);
            sup(&mut sn.combined, tn.combined);
            // |n^eps - n0| = eps |n1|
            sup(&mut er.n, eps * tn.n1_part);
            sup(&mut er.u, eps * rem.u1.hs_norm(sn.s));
            let (rn, rp) = elliptic_ratios(rem, el.k);
            sup(&mut el.ratio_n, rn);
            sup(&mut el.ratio_phi, rp);
        }
        sup(&mut phi_ln_n, (&e.phi - &e.n.ln()).l2_norm());
    }

    let ep_view = Trajectory {
        flow: ep.flow,
        records: ep_recs.to_vec(),
        event: None,
    };
    let lim_view = Trajectory {
        flow: lim.flow,
        records: lim_recs.to_vec(),
        event: None,
    };
    let errors = RowErrors {
        hs,
        phi_ln_n,
        quasineutral_gap: quasineutrality_gap(&ep_view),
        gap_identity_defect: quasineutrality_identity_defect(&ep_view, eps),
    };

    let identity_defect = if matched >= 3 {
        Some(identity_2_12_check(&ep_view, &lim_view, eps, spec.identity_gamma)?.max_relative_defect)
    } else {
        None
    };
    let residuals = residual_series(&rems, lim_recs)?;
    let residual_max = if residuals.is_empty() {
        None
    } else {
        let mut m = ResidualMax {
            res_n: 0.0,
            res_u: 0.0,
            res_phi: 0.0,
        };
        for r in &residuals {
            sup(&mut m.res_n, r.res_n);
            sup(&mut m.res_u, r.res_u);
            sup(&mut m.res_phi, r.res_phi);
        }
        Some(m)
    };

    Ok(SweepRow {
        eps,
        status,
        event,
        t_reached: ep_recs.last().map_or(0.0, |s| s.t),
        records: matched,
        sup_norms,
        errors,
        elliptic,
        identity_defect,
        residual_max,
        wall_time_s: wall,
    })
}

fn fit_series(rows: &[SweepRow], spec: &SweepSpec, value: impl Fn(&SweepRow) -> f64) -> Option<OrderFit> {
    if !spec.supports_fits() {
        return None;
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == RowStatus::Ok) {
        if !pairs.iter().any(|p| p.0 == r.eps) {
            pairs.push((r.eps, value(r)));
        }
    }
    guarded_fit(&pairs, spec.min_r_squared).ok()
}

fn order_verdict(spec: &SweepSpec, blown: bool, fits: &[Option<OrderFit>]) -> Verdict {
    if !spec.supports_fits() {
        return Verdict::Skipped;
    }
    if blown {
        return Verdict::Inconclusive;
    }
    let ok = fits.iter().all(|f| {
        f.is_some_and(|f| f.slope >= spec.order_min && f.slope <= spec.order_max && f.r_squared >= spec.min_r_squared)
    });
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn largest_eps_row(rows: &[SweepRow]) -> &SweepRow {
    rows.iter()
        .max_by(|a, b| a.eps.total_cmp(&b.eps))
        .expect("validated sweep has rows")
}

fn verdicts(spec: &SweepSpec, rows: &[SweepRow], fits: &Fits) -> Verdicts {
    let blown = rows.iter().any(|r| r.status == RowStatus::Blowup);
    let gronwall = spec
        .s_list
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let runs: Vec<MonitorRun> = rows
                .iter()
                .map(|r| MonitorRun {
                    eps: r.eps,
                    sup_combined: r.sup_norms[i].combined,
                    event: r.event.clone(),
                })
                .collect();
            gronwall_monitor(&runs, s, spec.bound_factor)
        })
        .collect();

    let convergence = order_verdict(spec, blown, &[fits.n_error, fits.u_error]);
    let gap_order = order_verdict(spec, blown, &[fits.quasineutral_gap]);
    let gap_identity = if rows.iter().all(|r| r.errors.gap_identity_defect <= spec.identity_gap_tol) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };

    let reference = largest_eps_row(rows);
    let elliptic = spec
        .s_list
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let r0 = reference.elliptic[i];
            let growth = |v: f64, base: f64| if base > 0.0 { v / base } else if v > 0.0 { f64::INFINITY } else { 0.0 };
            let max_growth = rows.iter().fold((0.0f64, 0.0f64), |(gn, gp), r| {
                (
                    gn.max(growth(r.elliptic[i].ratio_n, r0.ratio_n)),
                    gp.max(growth(r.elliptic[i].ratio_phi, r0.ratio_phi)),
                )
            });
            let verdict = if blown {
                Verdict::Inconclusive
            } else if max_growth.0 <= spec.ratio_factor && max_growth.1 <= spec.ratio_factor {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            EllipticVerdict {
                k,
                reference: (r0.ratio_n, r0.ratio_phi),
                max_growth,
                verdict,
            }
        })
        .collect();

    Verdicts {
        gronwall,
        convergence,
        gap_order,
        gap_identity,
        elliptic,
    }
}

/// Runs the limit flow once and every Euler-Poisson member on up to `jobs`
/// threads (`0` lets the pool decide). Rows come back in `eps_list` order;
/// a blown-up member is reported, not fatal.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepReport, SweepError> {
    spec.validate()?;
    let grid = Grid::new(spec.grid_points)?;
    let (n0, u0) = make_initial(&spec.init, &grid)?;
    let dt = spec.dt.unwrap_or_else(|| RunOptions::cfl_dt(&grid, &u0));
    let template = RunOptions { dt, ..spec.run };

    let lim = run(n0.clone(), u0.clone(), &RunOptions { eps: 0.0, ..template }, |_| {})?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        spec.eps_list
            .par_iter()
            .map(|&eps| {
                let start = Instant::now();
                let ep = run(n0.clone(), u0.clone(), &RunOptions { eps, ..template }, |_| {})?;
                let row = reduce_row(spec, eps, &ep, &lim, 0.0)?;
                Ok(SweepRow {
                    wall_time_s: start.elapsed().as_secs_f64(),
                    ..row
                })
            })
            .collect::<Result<Vec<_>, SweepError>>()
    })?;

    let s = spec.fit_order_s();
    let si = spec.s_list.iter().position(|&x| x == s).expect("fit order is monitored");
    let fits = Fits {
        s,
        n_error: fit_series(&rows, spec, |r| r.errors.hs[si].n),
        u_error: fit_series(&rows, spec, |r| r.errors.hs[si].u),
        quasineutral_gap: fit_series(&rows, spec, |r| r.errors.quasineutral_gap),
    };
    let verdicts = verdicts(spec, &rows, &fits);
    Ok(SweepReport {
        spec: spec.clone(),
        dt,
        rows,
        fits,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_exact_power_laws() {
        let (slope, _, r2) = fit_order(&[(0.1, 0.1), (0.01, 0.01), (0.001, 0.001)]).unwrap();
        assert!((slope - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
        let (slope, _, _) = fit_order(&[(0.1, 0.01), (0.01, 1e-4), (1e-3, 1e-6)]).unwrap();
        assert!((slope - 2.0).abs() < 1e-12);
        let (slope, _, r2) = fit_order(&[(0.1, 3.0), (0.01, 3.0), (1e-3, 3.0)]).unwrap();
        assert_eq!(slope, 0.0);
        assert_eq!(r2, 1.0);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert_eq!(fit_order(&[(0.1, 0.1), (0.01, 0.01)]), Err(FitError::TooFewPairs(2)));
        assert!(matches!(
            fit_order(&[(0.1, 0.1), (0.01, 0.0), (1e-3, 1e-3)]),
            Err(FitError::NonPositive(..))
        ));
        assert_eq!(
            fit_order(&[(0.1, 0.1), (0.1, 0.2), (0.1, 0.3)]),
            Err(FitError::Degenerate)
        );
    }

    #[test]
    fn guard_drops_largest_eps_once() {
        let pairs = [(1e-1, 1.0), (1e-2, 1e-2), (1e-3, 1e-3), (1e-4, 1e-4)];
        let f = guarded_fit(&pairs, 0.99).unwrap();
        assert_eq!(f.excluded_eps, Some(1e-1));
        assert_eq!(f.points, 3);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert_eq!(f.slope_ci95, (f.slope, f.slope));

        let clean = guarded_fit(&pairs[1..], 0.99).unwrap();
        assert_eq!(clean.excluded_eps, None);
    }

    #[test]
    fn confidence_interval_contains_slope() {
        let pairs = [(1e-1, 0.11), (1e-2, 0.0098), (1e-3, 0.00103), (1e-4, 0.000099)];
        let f = guarded_fit(&pairs, 0.9).unwrap();
        assert!(f.slope_ci95.0 < f.slope && f.slope < f.slope_ci95.1);
        assert!(f.slope_ci95.1 - f.slope_ci95.0 < 0.2);
    }

    #[test]
    fn spec_validation() {
        let ok = SweepSpec::default();
        assert!(ok.validate().is_ok());
        assert!(ok.supports_fits());
        for eps_list in [vec![], vec![0.1, -0.01], vec![0.01, 0.1]] {
            let s = SweepSpec {
                eps_list,
                ..SweepSpec::default()
            };
            assert!(matches!(s.validate(), Err(SweepError::Invalid(_))));
        }
        let dup = SweepSpec {
            eps_list: vec![0.1, 0.1],
            ..SweepSpec::default()
        };
        assert!(dup.validate().is_ok());
        assert!(!dup.supports_fits());
        let narrow = SweepSpec {
            eps_list: vec![0.1, 0.05, 0.02],
            ..SweepSpec::default()
        };
        assert!(!narrow.supports_fits());
    }

    fn small_spec() -> SweepSpec {
        SweepSpec {
            grid_points: 32,
            eps_list: vec![0.1, 0.1],
            run: RunOptions {
                t_end: 0.02,
                ..RunOptions::default()
            },
            dt: Some(5e-3),
            ..SweepSpec::default()
        }
    }

    #[test]
    fn duplicated_eps_gives_identical_rows() {
        let rep = run_sweep(&small_spec(), 2).unwrap().without_timing();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0], rep.rows[1]);
        assert_eq!(rep.verdicts.convergence, Verdict::Skipped);
        for r in &rep.rows {
            assert_eq!(r.status, RowStatus::Ok);
            assert_eq!(r.records, 5);
            assert!(r.errors.hs.iter().all(|e| e.n.is_finite() && e.n >= 0.0 && e.u >= 0.0));
        }
    }

    #[test]
    fn equilibrium_sweep_has_no_error() {
        let spec = SweepSpec {
            init: InitParams {
                n_amp: 0.0,
                u_amp: 0.0,
                ..InitParams::default()
            },
            eps_list: vec![0.1, 0.01],
            ..small_spec()
        };
        let rep = run_sweep(&spec, 1).unwrap();
        for r in &rep.rows {
            assert!(r.errors.hs.iter().all(|e| e.n <= 1e-10 && e.u <= 1e-10));
            assert!(r.errors.quasineutral_gap <= 1e-10);
            assert!(r.identity_defect.unwrap() <= 1e-10);
        }
        assert!(rep.verdicts.all_pass());
    }

    #[test]
    fn report_serializes_with_schema_keys() {
        let rep = run_sweep(&small_spec(), 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        for key in ["spec", "rows", "fits", "verdicts"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["rows"][0]["status"], "OK");
        assert!(v["rows"][0]["sup_norms"].is_array());
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
    }

    #[test]
    fn blown_member_is_reported() {
        let spec = SweepSpec {
            run: RunOptions {
                norm_ceiling: 1e-3,
                ..small_spec().run
            },
            ..small_spec()
        };
        let rep = run_sweep(&spec, 1).unwrap();
        assert!(rep.any_blowup());
        assert!(rep.rows.iter().all(|r| r.status == RowStatus::Blowup));
        assert!(rep.verdicts.gronwall.iter().all(|g| g.verdict == Verdict::Inconclusive));
    }
}
