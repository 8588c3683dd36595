//! Time integration of the cold-ion Euler-Poisson system and of its
//! quasineutral limit (isothermal compressible Euler with unit sound speed).
//!
//! Space is pseudospectral with 2/3-rule dealiased products; time is the
//! classical four-stage Runge-Kutta scheme at fixed step. The Euler-Poisson
//! flow re-solves the potential at every stage, warm-started from the
//! previous stage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poisson::{solve_phi, solve_phi_limit, PbSolveOptions, PoissonError};
use crate::spectral::{Field, Grid, S_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlowUpReason {
    DensityFloor { min_n: f64, floor: f64 },
    NormCeiling { norm: f64, ceiling: f64 },
    NonFinite,
    PotentialSolve { message: String },
}

/// Runtime guard that fired; the trajectory up to `t` is still valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUpEvent {
    pub t: f64,
    pub reason: BlowUpReason,
}

impl std::fmt::Display for BlowUpEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.reason {
            BlowUpReason::DensityFloor { min_n, floor } => {
                write!(f, "t = {}: min density {min_n:e} below floor {floor:e}", self.t)
            }
            BlowUpReason::NormCeiling { norm, ceiling } => {
                write!(f, "t = {}: Sobolev monitor {norm:e} above ceiling {ceiling:e}", self.t)
            }
            BlowUpReason::NonFinite => write!(f, "t = {}: non-finite state", self.t),
            BlowUpReason::PotentialSolve { message } => {
                write!(f, "t = {}: potential solve failed: {message}", self.t)
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid run options: {0}")]
    InvalidOptions(String),
    #[error("blow-up: {0}")]
    BlowUp(BlowUpEvent),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// Which system is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Flow {
    EulerPoisson { eps: f64 },
    Limit,
}

impl Flow {
    /// `eps == 0` selects the limit flow.
    pub fn from_eps(eps: f64) -> Self {
        if eps == 0.0 {
            Flow::Limit
        } else {
            Flow::EulerPoisson { eps }
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            Flow::EulerPoisson { eps } => *eps,
            Flow::Limit => 0.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Flow::EulerPoisson { .. } => "ep",
            Flow::Limit => "limit",
        }
    }
}

/// `(t, n, u)` snapshot together with the potential slaved to `n`:
/// the Poisson-Boltzmann solution for the Euler-Poisson flow, `ln n` for the
/// limit flow.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub n: Field,
    pub u: Field,
    pub phi: Field,
}

pub type EpState = State;
pub type LimitState = State;

impl State {
    /// Builds a state and solves for its potential.
    pub fn new(flow: Flow, t: f64, n: Field, u: Field, pb_opts: &PbSolveOptions) -> Result<Self, FlowError> {
        if n.grid() != u.grid() {
            return Err(FlowError::InvalidState("n and u live on different grids".into()));
        }
        if !n.is_finite() || !u.is_finite() {
            return Err(FlowError::InvalidState("non-finite field".into()));
        }
        let phi = potential(flow, &n, pb_opts, None)?;
        Ok(Self { t, n, u, phi })
    }

    pub fn grid(&self) -> &Grid {
        self.n.grid()
    }
}

fn potential(flow: Flow, n: &Field, pb_opts: &PbSolveOptions, warm: Option<&Field>) -> Result<Field, PoissonError> {
    match flow {
        Flow::EulerPoisson { eps } => Ok(solve_phi(n, eps, pb_opts, warm)?.phi),
        Flow::Limit => solve_phi_limit(n),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub dt: f64,
    pub t_end: f64,
    /// `0` integrates the limit flow.
    pub eps: f64,
    pub density_floor: f64,
    pub norm_ceiling: f64,
    pub pb_opts: PbSolveOptions,
    pub record_every: usize,
    /// Sobolev order of the norm-ceiling monitor.
    pub monitor_s: usize,
    /// Exponential spectral filter applied after each step. Off by default.
    pub filter: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 0.5,
            eps: 1e-2,
            density_floor: 1e-6,
            norm_ceiling: 1e6,
            pb_opts: PbSolveOptions::default(),
            record_every: 1,
            monitor_s: 2,
            filter: false,
        }
    }
}

impl RunOptions {
    /// `dt = 0.25 dx / (max|u0| + 1.5)`.
    pub fn cfl_dt(grid: &Grid, u0: &Field) -> f64 {
        0.25 * grid.dx() / (u0.max_abs() + 1.5)
    }

    pub fn flow(&self) -> Flow {
        Flow::from_eps(self.eps)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: String| Err(FlowError::InvalidOptions(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return bad(format!("dt = {} exceeds t_end = {}", self.dt, self.t_end));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be >= 0, got {}", self.eps));
        }
        if !(self.density_floor > 0.0) {
            return bad(format!("density_floor must be positive, got {}", self.density_floor));
        }
        if !(self.norm_ceiling > 0.0) {
            return bad(format!("norm_ceiling must be positive, got {}", self.norm_ceiling));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if self.monitor_s > S_MAX {
            return bad(format!("monitor_s must be <= {S_MAX}"));
        }
        self.pb_opts
            .validate()
            .map_err(|e| FlowError::InvalidOptions(e.to_string()))
    }

    /// Number of fixed steps and the step actually used to land on `t_end`.
    pub fn schedule(&self) -> (usize, f64) {
        if self.t_end == 0.0 {
            return (0, self.dt);
        }
        let steps = (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize;
        (steps, self.t_end / steps as f64)
    }
}

fn divergence_flux(n: &Field, u: &Field) -> Field {
    // dn = -d/dx (n u)
    -&n.product(u).dx()
}

fn momentum(u: &Field, phi: &Field) -> Field {
    // du = -u u_x - phi_x
    let adv = u.product(&u.dx());
    let grad = phi.dx();
    adv.zip_map(&grad, |a, g| -a - g)
}

/// Right-hand side of the Euler-Poisson flow. Solves the potential for
/// `state.n` (warm-started from `state.phi`).
pub fn rhs_ep(state: &EpState, eps: f64, pb_opts: &PbSolveOptions) -> Result<(Field, Field), FlowError> {
    if !(eps > 0.0) {
        return Err(FlowError::InvalidOptions(format!("eps must be positive, got {eps}")));
    }
    let phi = solve_phi(&state.n, eps, pb_opts, Some(&state.phi))?.phi;
    Ok((divergence_flux(&state.n, &state.u), momentum(&state.u, &phi)))
}

/// Right-hand side of the limit flow, `phi = ln n`.
pub fn rhs_limit(state: &LimitState) -> Result<(Field, Field), FlowError> {
    let phi = solve_phi_limit(&state.n)?;
    Ok((divergence_flux(&state.n, &state.u), momentum(&state.u, &phi)))
}

fn exponential_filter(f: &Field) -> Field {
    let grid = f.grid();
    let half = (grid.n_points() / 2) as f64;
    let mut spec = f.spectrum();
    for (slot, c) in spec.iter_mut().enumerate() {
        let eta = grid.mode(slot).unsigned_abs() as f64 / half;
        *c *= (-36.0 * eta.powi(36)).exp();
    }
    Field::from_spectrum(grid, spec)
}

fn blowup(t: f64, reason: BlowUpReason) -> FlowError {
    FlowError::BlowUp(BlowUpEvent { t, reason })
}

fn stage_potential(flow: Flow, n: &Field, opts: &RunOptions, warm: &Field, t: f64) -> Result<Field, FlowError> {
    if !n.is_finite() {
        return Err(blowup(t, BlowUpReason::NonFinite));
    }
    let min_n = n.min();
    if min_n < opts.density_floor {
        return Err(blowup(
            t,
            BlowUpReason::DensityFloor {
                min_n,
                floor: opts.density_floor,
            },
        ));
    }
    potential(flow, n, &opts.pb_opts, Some(warm)).map_err(|e| match e {
        PoissonError::NonPositiveDensity { min, .. } => blowup(
            t,
            BlowUpReason::DensityFloor {
                min_n: min,
                floor: opts.density_floor,
            },
        ),
        other => FlowError::Poisson(other),
    })
}

fn axpy(base: &Field, h: f64, incr: &Field) -> Field {
    base.zip_map(incr, |b, d| b + h * d)
}

fn advance(state: &State, flow: Flow, opts: &RunOptions, dt: f64, t_new: f64) -> Result<State, FlowError> {
    let t = state.t;
    let (k1n, k1u) = (divergence_flux(&state.n, &state.u), momentum(&state.u, &state.phi));

    let n2 = axpy(&state.n, 0.5 * dt, &k1n);
    let u2 = axpy(&state.u, 0.5 * dt, &k1u);
    let phi2 = stage_potential(flow, &n2, opts, &state.phi, t)?;
    let (k2n, k2u) = (divergence_flux(&n2, &u2), momentum(&u2, &phi2));

    let n3 = axpy(&state.n, 0.5 * dt, &k2n);
    let u3 = axpy(&state.u, 0.5 * dt, &k2u);
    let phi3 = stage_potential(flow, &n3, opts, &phi2, t)?;
    let (k3n, k3u) = (divergence_flux(&n3, &u3), momentum(&u3, &phi3));

    let n4 = axpy(&state.n, dt, &k3n);
    let u4 = axpy(&state.u, dt, &k3u);
    let phi4 = stage_potential(flow, &n4, opts, &phi3, t)?;
    let (k4n, k4u) = (divergence_flux(&n4, &u4), momentum(&u4, &phi4));

    let combine = |base: &Field, k1: &Field, k2: &Field, k3: &Field, k4: &Field| {
        let v: Vec<f64> = (0..base.len())
            .map(|i| {
                base.values()[i]
                    + dt / 6.0
                        * (k1.values()[i] + 2.0 * k2.values()[i] + 2.0 * k3.values()[i] + k4.values()[i])
            })
            .collect();
        Field::new(base.grid(), v)
    };
    let (mut n, mut u) = match (
        combine(&state.n, &k1n, &k2n, &k3n, &k4n),
        combine(&state.u, &k1u, &k2u, &k3u, &k4u),
    ) {
        (Ok(n), Ok(u)) => (n, u),
        _ => return Err(blowup(t_new, BlowUpReason::NonFinite)),
    };
    if opts.filter {
        n = exponential_filter(&n);
        u = exponential_filter(&u);
    }
    for norm in [n.hs_norm(opts.monitor_s), u.hs_norm(opts.monitor_s)] {
        if !(norm <= opts.norm_ceiling) {
            return Err(blowup(
                t_new,
                BlowUpReason::NormCeiling {
                    norm,
                    ceiling: opts.norm_ceiling,
                },
            ));
        }
    }
    let phi = stage_potential(flow, &n, opts, &phi4, t_new)?;
    Ok(State { t: t_new, n, u, phi })
}

/// One RK4 step of size `opts.dt` of the flow selected by `opts.eps`.
pub fn step(state: &State, opts: &RunOptions) -> Result<State, FlowError> {
    opts.validate()?;
    advance(state, opts.flow(), opts, opts.dt, state.t + opts.dt)
}

/// Recorded states of one run. `event` is set when a guard stopped it early.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub flow: Flow,
    pub records: Vec<State>,
    pub event: Option<BlowUpEvent>,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.event.is_none()
    }

    pub fn last(&self) -> &State {
        self.records.last().expect("trajectory always holds the initial state")
    }
}

/// Steps from `initial` to `t_end`, recording the initial state, every
/// `record_every`-th step and the final state. `observer` sees each recorded
/// state as it is produced.
///
/// The step is shrunk to `t_end / ceil(t_end / dt)` so the run lands on
/// `t_end`; times are `t0 + i * dt`, so two runs with the same options are
/// recorded at bitwise-identical times.
pub fn evolve(initial: State, opts: &RunOptions, mut observer: impl FnMut(&State)) -> Result<Trajectory, FlowError> {
    opts.validate()?;
    let flow = opts.flow();
    let (steps, dt) = opts.schedule();
    let t0 = initial.t;
    observer(&initial);
    let mut records = vec![initial];
    let mut current = records[0].clone();
    let mut event = None;
    for i in 1..=steps {
        let t_new = t0 + i as f64 * dt;
        match advance(&current, flow, opts, dt, t_new) {
            Ok(next) => current = next,
            Err(FlowError::BlowUp(e)) => {
                event = Some(e);
                break;
            }
            Err(FlowError::Poisson(e)) => {
                event = Some(BlowUpEvent {
                    t: current.t,
                    reason: BlowUpReason::PotentialSolve { message: e.to_string() },
                });
                break;
            }
            Err(e) => return Err(e),
        }
        if i % opts.record_every == 0 || i == steps {
            observer(&current);
            records.push(current.clone());
        }
    }
    Ok(Trajectory { flow, records, event })
}

/// Convenience: build the initial state for `opts` and evolve it.
pub fn run(n0: Field, u0: Field, opts: &RunOptions, observer: impl FnMut(&State)) -> Result<Trajectory, FlowError> {
    opts.validate()?;
    let initial = State::new(opts.flow(), 0.0, n0, u0, &opts.pb_opts)?;
    evolve(initial, opts, observer)
}

/// Time series `t,norm_n_Hs,norm_u_Hs,mass,min_n,max_n,quasineutral_residual`.
pub fn trajectory_csv(traj: &Trajectory, s: usize) -> String {
    let mut out = String::from("t,norm_n_Hs,norm_u_Hs,mass,min_n,max_n,quasineutral_residual\n");
    for st in &traj.records {
        let qn = (&st.phi.exp() - &st.n).l2_norm();
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            st.t,
            st.n.hs_norm(s),
            st.u.hs_norm(s),
            st.n.integrate(),
            st.n.min(),
            st.n.max(),
            qn
        ));
    }
    out
}

/// File name of a field snapshot: `snap_<flow>_<eps>_<t>.csv`. Each field
/// (`n`, `u`, `phi`) goes in its own subdirectory under that name.
pub fn snapshot_name(flow: Flow, t: f64) -> String {
    format!("snap_{}_{:e}_{:.6}.csv", flow.label(), flow.eps(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn opts(eps: f64, dt: f64, t_end: f64) -> RunOptions {
        RunOptions {
            dt,
            t_end,
            eps,
            ..RunOptions::default()
        }
    }

    #[test]
    fn equilibrium_rhs_vanishes() {
        let g = Grid::new(64).unwrap();
        let pb = PbSolveOptions::default();
        let ep = State::new(Flow::from_eps(0.01), 0.0, g.constant(1.3), g.zeros(), &pb).unwrap();
        let (dn, du) = rhs_ep(&ep, 0.01, &pb).unwrap();
        assert!(dn.max_abs() < 1e-14 && du.max_abs() < 1e-14);
        let lim = State::new(Flow::Limit, 0.0, g.constant(1.3), g.zeros(), &pb).unwrap();
        let (dn, du) = rhs_limit(&lim).unwrap();
        assert!(dn.max_abs() < 1e-14 && du.max_abs() < 1e-14);
    }

    #[test]
    fn density_rhs_has_zero_mean() {
        let g = Grid::new(64).unwrap();
        let pb = PbSolveOptions::default();
        let n = g.sample(|x| 1.0 + 0.3 * (2.0 * PI * x).sin());
        let u = g.sample(|x| 0.4 * (4.0 * PI * x).cos() + 0.1);
        let ep = State::new(Flow::from_eps(0.05), 0.0, n.clone(), u.clone(), &pb).unwrap();
        assert!(rhs_ep(&ep, 0.05, &pb).unwrap().0.integrate().abs() < 1e-15);
        let lim = State::new(Flow::Limit, 0.0, n, u, &pb).unwrap();
        assert!(rhs_limit(&lim).unwrap().0.integrate().abs() < 1e-15);
    }

    #[test]
    fn ep_velocity_rhs_is_minus_potential_gradient_at_rest() {
        // Manufactured potential: n chosen so phi* solves the constraint exactly.
        let g = Grid::new(128).unwrap();
        let eps = 1e-3;
        let pb = PbSolveOptions::default();
        let phi_star = g.sample(|x| (1.0 + 0.01 * (2.0 * PI * x).sin()).ln());
        let n = &phi_star.exp() - &(&phi_star.dxx() * eps);
        let st = State::new(Flow::from_eps(eps), 0.0, n, g.zeros(), &pb).unwrap();
        let (_, du) = rhs_ep(&st, eps, &pb).unwrap();
        let expected = -&phi_star.dx();
        assert!((&du - &expected).max_abs() <= 1e-10);
    }

    #[test]
    fn step_keeps_constant_state() {
        let g = Grid::new(64).unwrap();
        for eps in [0.0, 0.01] {
            let o = opts(eps, 1e-3, 1.0);
            let s0 = State::new(o.flow(), 0.0, g.constant(0.8), g.zeros(), &o.pb_opts).unwrap();
            let s1 = step(&s0, &o).unwrap();
            assert!((&s1.n - &s0.n).max_abs() <= 1e-12);
            assert!(s1.u.max_abs() <= 1e-12);
            assert!((s1.t - 1e-3).abs() < 1e-18);
        }
    }

    #[test]
    fn invalid_options_are_rejected() {
        let g = Grid::new(32).unwrap();
        let s0 = State::new(Flow::Limit, 0.0, g.constant(1.0), g.zeros(), &PbSolveOptions::default()).unwrap();
        for bad in [
            opts(-1.0, 1e-3, 1.0),
            opts(0.0, 0.0, 1.0),
            opts(0.0, 2.0, 1.0),
            RunOptions {
                record_every: 0,
                ..RunOptions::default()
            },
            RunOptions {
                density_floor: 0.0,
                ..RunOptions::default()
            },
        ] {
            assert!(matches!(step(&s0, &bad), Err(FlowError::InvalidOptions(_))));
        }
    }

    #[test]
    fn density_floor_triggers_blow_up_event() {
        let g = Grid::new(64).unwrap();
        let n0 = g.sample(|x| 1.0 + 0.5 * (2.0 * PI * x).sin());
        let u0 = g.sample(|x| -0.8 * (2.0 * PI * x).sin());
        let o = RunOptions {
            density_floor: 0.45,
            ..opts(0.0, 1e-3, 0.5)
        };
        let traj = run(n0, u0, &o, |_| {}).unwrap();
        let ev = traj.event.clone().expect("guard must fire");
        assert!(matches!(ev.reason, BlowUpReason::DensityFloor { .. }));
        assert!(traj.records.len() >= 1);
        assert!(traj.last().n.min() >= 0.45);
    }

    #[test]
    fn norm_ceiling_triggers_blow_up_event() {
        let g = Grid::new(64).unwrap();
        let n0 = g.sample(|x| 1.0 + 0.1 * (2.0 * PI * x).sin());
        let o = RunOptions {
            norm_ceiling: 1.0,
            ..opts(0.0, 1e-3, 0.01)
        };
        let traj = run(n0, g.zeros(), &o, |_| {}).unwrap();
        assert!(matches!(traj.event.unwrap().reason, BlowUpReason::NormCeiling { .. }));
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn zero_length_run_records_initial_state_only() {
        let g = Grid::new(32).unwrap();
        let o = RunOptions {
            t_end: 0.0,
            ..opts(0.01, 1e-3, 0.0)
        };
        let mut seen = 0;
        let traj = run(g.constant(1.0), g.zeros(), &o, |_| seen += 1).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(seen, 1);
    }

    #[test]
    fn recording_schedule_includes_final_state() {
        let g = Grid::new(32).unwrap();
        let o = RunOptions {
            record_every: 4,
            ..opts(0.0, 0.01, 0.1)
        };
        let traj = run(g.sample(|x| 1.0 + 0.05 * (2.0 * PI * x).cos()), g.zeros(), &o, |_| {}).unwrap();
        let times: Vec<f64> = traj.records.iter().map(|s| s.t).collect();
        assert_eq!(times.len(), 4);
        assert!((times[3] - 0.1).abs() < 1e-15);
        assert!((times[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn filter_is_identity_on_low_modes() {
        let g = Grid::new(64).unwrap();
        let f = g.sample(|x| (2.0 * PI * x).sin());
        assert!((&exponential_filter(&f) - &f).max_abs() < 1e-14);
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let g = Grid::new(32).unwrap();
        let o = opts(0.01, 0.01, 0.05);
        let traj = run(g.sample(|x| 1.0 + 0.05 * (2.0 * PI * x).cos()), g.zeros(), &o, |_| {}).unwrap();
        let csv = trajectory_csv(&traj, 2);
        assert_eq!(csv.lines().count(), traj.records.len() + 1);
        assert!(csv.starts_with("t,norm_n_Hs,norm_u_Hs,mass,min_n,max_n,quasineutral_residual"));
        assert_eq!(snapshot_name(Flow::from_eps(0.01), 0.5), "snap_ep_1e-2_0.500000.csv");
    }
}
