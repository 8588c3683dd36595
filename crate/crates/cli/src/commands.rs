use std::fs;
use std::path::{Path, PathBuf};

use debye_limit::energy::{identity_2_12_check, kato_ponce_battery};
use debye_limit::experiments::{run_sweep, SweepError};
use debye_limit::flow::{snapshot_name, trajectory_csv};
use debye_limit::io::write_atomic;
use debye_limit::remainder::{remainder_csv, residual_series, Remainder};
use debye_limit::{form_remainder, make_initial, run, Field, FlowError, Grid, RunOptions, Trajectory};
use serde_json::json;

use crate::config::{Config, FlowKind};

/// Why a command did not produce a clean result.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or arguments (exit 2).
    Usage(String),
    /// I/O or numerical failure outside the guard contract (exit 1).
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "error: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    BlowUp,
    VerdictFail,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::BlowUp => 3,
            Status::VerdictFail => 4,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn flow_failure(e: FlowError) -> Failure {
    match e {
        FlowError::InvalidOptions(_) | FlowError::InvalidState(_) => usage(e),
        other => Failure::Runtime(other.to_string()),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    write_atomic(&path, contents.as_bytes()).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn initial(cfg: &Config) -> Result<(Grid, Field, Field), Failure> {
    let grid = Grid::new(cfg.grid.n_points).map_err(usage)?;
    let (n0, u0) = make_initial(&cfg.init, &grid).map_err(usage)?;
    Ok((grid, n0, u0))
}

fn step_size(cfg: &Config, grid: &Grid, u0: &Field) -> f64 {
    cfg.run.dt.unwrap_or_else(|| RunOptions::cfl_dt(grid, u0))
}

fn checked_options(cfg: &Config, eps: f64, dt: f64) -> Result<RunOptions, Failure> {
    let opts = cfg.run_options(eps, dt);
    opts.validate().map_err(flow_failure)?;
    if cfg.run.s > debye_limit::spectral::S_MAX {
        return Err(usage(format!("s = {} exceeds {}", cfg.run.s, debye_limit::spectral::S_MAX)));
    }
    Ok(opts)
}

pub fn simulate(cfg: &Config, out: &Path) -> Result<Status, Failure> {
    let (grid, n0, u0) = initial(cfg)?;
    let eps = match cfg.run.flow {
        FlowKind::Ep if !(cfg.run.eps > 0.0 && cfg.run.eps.is_finite()) => {
            return Err(usage(format!("the ep flow needs eps > 0, got {}", cfg.run.eps)));
        }
        FlowKind::Ep => cfg.run.eps,
        FlowKind::Limit if cfg.run.eps < 0.0 || !cfg.run.eps.is_finite() => {
            return Err(usage(format!("eps must be >= 0, got {}", cfg.run.eps)));
        }
        FlowKind::Limit => 0.0,
    };
    let dt = step_size(cfg, &grid, &u0);
    let opts = checked_options(cfg, eps, dt)?;
    let traj = run(n0, u0, &opts, |_| {}).map_err(flow_failure)?;

    let flow = opts.flow();
    let tag = format!("{}_{:e}", flow.label(), flow.eps());
    let csv = write(out, &format!("trajectory_{tag}.csv"), &trajectory_csv(&traj, cfg.run.s))?;
    if cfg.output.snapshots {
        for st in &traj.records {
            let name = snapshot_name(flow, st.t);
            for (sub, field) in [("n", &st.n), ("u", &st.u), ("phi", &st.phi)] {
                write(&out.join(sub), &name, &field.to_csv())?;
            }
        }
    }
    let (steps, dt_eff) = opts.schedule();
    let summary = json!({
        "flow": flow.label(),
        "eps": flow.eps(),
        "n_points": grid.n_points(),
        "dt": dt_eff,
        "steps": steps,
        "t_end": opts.t_end,
        "t_reached": traj.last().t,
        "records": traj.records.len(),
        "completed": traj.completed(),
        "event": traj.event,
    });
    write(out, &format!("run_{tag}.json"), &format!("{:#}\n", summary))?;

    println!("wrote {}", csv.display());
    match &traj.event {
        None => {
            println!("completed: t = {} after {steps} steps of {dt_eff:.6e}", opts.t_end);
            Ok(Status::Ok)
        }
        Some(e) => {
            println!("blow-up: {e}");
            Ok(Status::BlowUp)
        }
    }
}

pub fn sweep(cfg: &Config, out: &Path) -> Result<Status, Failure> {
    let spec = cfg.sweep_spec();
    let report = run_sweep(&spec, cfg.output.jobs).map_err(|e| match e {
        SweepError::Invalid(_) | SweepError::Grid(_) | SweepError::Init(_) => usage(e),
        SweepError::Flow(f) => flow_failure(f),
        other => Failure::Runtime(other.to_string()),
    })?;
    write(out, "sweep_report.json", &report.to_json())?;
    write(out, "sweep_report.csv", &report.to_csv())?;

    for r in &report.rows {
        let top = r.errors.hs.last().expect("s_list is non-empty");
        println!(
            "eps {:>8.1e}  {:?}  |n-n0|_H{} {:.4e}  |u-u0|_H{} {:.4e}  gap {:.4e}  {:.1} s",
            r.eps, r.status, top.s, top.n, top.s, top.u, r.errors.quasineutral_gap, r.wall_time_s
        );
    }
    let fits = &report.fits;
    for (name, fit) in [("n", fits.n_error), ("u", fits.u_error), ("gap", fits.quasineutral_gap)] {
        if let Some(f) = fit {
            println!(
                "order[{name}] = {:.4} (95% CI {:.4}..{:.4}, r2 {:.5}{})",
                f.slope,
                f.slope_ci95.0,
                f.slope_ci95.1,
                f.r_squared,
                f.excluded_eps.map_or(String::new(), |e| format!(", excluded eps {e:e}"))
            );
        }
    }
    let v = &report.verdicts;
    for g in &v.gronwall {
        println!("gronwall s={}: {:?}", g.s, g.verdict);
    }
    println!("convergence: {:?}", v.convergence);
    println!("gap order: {:?}", v.gap_order);
    println!("gap identity: {:?}", v.gap_identity);
    for e in &v.elliptic {
        println!("elliptic k={}: {:?}", e.k, e.verdict);
    }
    println!("wrote {}", out.join("sweep_report.json").display());

    Ok(if report.any_blowup() {
        Status::BlowUp
    } else if v.any_fail() || !v.all_pass() {
        Status::VerdictFail
    } else {
        Status::Ok
    })
}

fn within(value: f64, tol: f64) -> bool {
    value.is_finite() && value <= tol
}

pub fn check(cfg: &Config, out: &Path) -> Result<Status, Failure> {
    let c = &cfg.check;
    if !(c.eps > 0.0 && c.eps.is_finite()) {
        return Err(usage(format!("check needs eps > 0, got {}", c.eps)));
    }
    if c.gamma + 2 > debye_limit::spectral::MAX_DERIVATIVE_ORDER {
        return Err(usage(format!("gamma = {} is too large", c.gamma)));
    }
    if c.kp_orders.iter().any(|&k| k == 0 || k > debye_limit::spectral::MAX_DERIVATIVE_ORDER) {
        return Err(usage("kp_orders must lie in 1..=8"));
    }
    let (grid, n0, u0) = initial(cfg)?;
    let dt = step_size(cfg, &grid, &u0);
    let ep_opts = checked_options(cfg, c.eps, dt)?;
    let lim_opts = checked_options(cfg, 0.0, dt)?;
    let ep = run(n0.clone(), u0.clone(), &ep_opts, |_| {}).map_err(flow_failure)?;
    let lim = run(n0, u0, &lim_opts, |_| {}).map_err(flow_failure)?;
    if let Some(e) = ep.event.as_ref().or(lim.event.as_ref()) {
        println!("blow-up: {e}");
        return Ok(Status::BlowUp);
    }

    let diag = |e: debye_limit::remainder::DiagError| Failure::Runtime(e.to_string());
    let identity = identity_2_12_check(&ep, &lim, c.eps, c.gamma).map_err(diag)?;
    write(out, "energy_ledger.csv", &identity.to_csv())?;

    let rems = remainders(&ep, &lim, c.eps).map_err(diag)?;
    let residuals = residual_series(&rems, &lim.records).map_err(diag)?;
    write(out, "remainder.csv", &remainder_csv(&rems, &residuals, &cfg.s_list()))?;
    let res_phi = residuals.iter().map(|r| r.res_phi).fold(0.0, f64::max);
    let res_transport = residuals.iter().map(|r| r.res_n.max(r.res_u)).fold(0.0, f64::max);

    let kp = kato_ponce_battery(&grid, c.kp_samples, &c.kp_orders, c.seed, c.kp_max_mode);
    let mut kp_csv = String::from("k,max_ratio,min_rhs\n");
    for r in &kp {
        kp_csv.push_str(&format!("{},{:.16e},{:.16e}\n", r.k, r.max_ratio, r.min_rhs));
    }
    write(out, "commutator.csv", &kp_csv)?;
    let kp_max = kp.iter().map(|r| r.max_ratio).fold(0.0, f64::max);

    let results = [
        ("identity defect", identity.max_relative_defect, c.identity_tol),
        ("potential residual", res_phi, c.residual_phi_tol),
        ("transport residual", res_transport, c.residual_transport_tol),
        ("commutator ratio", kp_max, c.kp_max_ratio),
    ];
    let mut all_ok = true;
    let mut entries = Vec::new();
    for (name, value, tol) in results {
        let ok = within(value, tol);
        all_ok &= ok;
        println!("{} {name}: {value:.4e} (tolerance {tol:.1e})", if ok { "PASS" } else { "FAIL" });
        entries.push(json!({ "check": name, "value": value, "tolerance": tol, "pass": ok }));
    }
    let report = json!({
        "eps": c.eps,
        "gamma": c.gamma,
        "n_points": grid.n_points(),
        "dt": ep_opts.schedule().1,
        "records": ep.records.len(),
        "checks": entries,
        "commutator": kp,
    });
    write(out, "check_report.json", &format!("{:#}\n", report))?;
    Ok(if all_ok { Status::Ok } else { Status::VerdictFail })
}

fn remainders(ep: &Trajectory, lim: &Trajectory, eps: f64) -> Result<Vec<Remainder>, debye_limit::remainder::DiagError> {
    ep.records
        .iter()
        .zip(&lim.records)
        .map(|(e, l)| form_remainder(e, l, eps))
        .collect()
}
