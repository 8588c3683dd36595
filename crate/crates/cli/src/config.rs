//! TOML configuration. Every key has a default, unknown keys are rejected,
//! and command-line flags override file values.

use std::path::{Path, PathBuf};

use debye_limit::experiments::SweepSpec;
use debye_limit::{InitParams, PbSolveOptions, RunOptions};
use serde::{Deserialize, Serialize};

pub const OUT_ENV: &str = "DEBYE_LIMIT_OUT";
pub const DEFAULT_OUT: &str = "debye-limit-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    #[default]
    Ep,
    Limit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n_points: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub flow: FlowKind,
    pub eps: f64,
    /// Absent: `0.25 dx / (max|u0| + 1.5)`.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub density_floor: f64,
    pub norm_ceiling: f64,
    pub record_every: usize,
    pub monitor_s: usize,
    pub filter: bool,
    /// Highest Sobolev order reported.
    pub s: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let r = RunOptions::default();
        Self {
            flow: FlowKind::Ep,
            eps: r.eps,
            dt: None,
            t_end: r.t_end,
            density_floor: r.density_floor,
            norm_ceiling: r.norm_ceiling,
            record_every: r.record_every,
            monitor_s: r.monitor_s,
            filter: r.filter,
            s: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub eps_list: Vec<f64>,
    pub seed: u64,
    pub bound_factor: f64,
    pub ratio_factor: f64,
    pub identity_gamma: usize,
    pub order_min: f64,
    pub order_max: f64,
    pub min_r_squared: f64,
    pub identity_gap_tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self {
            eps_list: s.eps_list,
            seed: s.seed,
            bound_factor: s.bound_factor,
            ratio_factor: s.ratio_factor,
            identity_gamma: s.identity_gamma,
            order_min: s.order_min,
            order_max: s.order_max,
            min_r_squared: s.min_r_squared,
            identity_gap_tol: s.identity_gap_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub eps: f64,
    pub gamma: usize,
    pub identity_tol: f64,
    pub residual_phi_tol: f64,
    pub residual_transport_tol: f64,
    pub kp_samples: usize,
    pub kp_orders: Vec<usize>,
    pub kp_max_mode: usize,
    pub kp_max_ratio: f64,
    pub seed: u64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            gamma: 0,
            identity_tol: 1e-5,
            residual_phi_tol: 1e-8,
            residual_transport_tol: 1e-3,
            kp_samples: 100,
            kp_orders: vec![1, 2, 3],
            kp_max_mode: 8,
            kp_max_ratio: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub snapshots: bool,
    /// Worker threads for sweeps; 0 uses every core.
    pub jobs: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            snapshots: false,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    pub init: InitParams,
    pub run: RunSection,
    pub pb: PbSolveOptions,
    pub sweep: SweepSection,
    pub check: CheckSection,
    pub output: OutputSection,
}

/// Command-line values that override the file. `None` leaves the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub eps: Option<f64>,
    pub flow: Option<FlowKind>,
    pub grid: Option<usize>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub s: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub n_amp: Option<f64>,
    pub u_amp: Option<f64>,
    pub bound_factor: Option<f64>,
    pub eps_list: Option<Vec<f64>>,
    pub identity_tol: Option<f64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.eps {
            self.run.eps = v;
            self.check.eps = v;
        }
        if let Some(v) = o.flow {
            self.run.flow = v;
        }
        if let Some(v) = o.grid {
            self.grid.n_points = v;
        }
        if let Some(v) = o.t_end {
            self.run.t_end = v;
        }
        if let Some(v) = o.dt {
            self.run.dt = Some(v);
        }
        if let Some(v) = o.s {
            self.run.s = v;
        }
        if let Some(v) = &o.out {
            self.output.dir = Some(v.clone());
        }
        if let Some(v) = o.jobs {
            self.output.jobs = v;
        }
        if let Some(v) = o.seed {
            self.sweep.seed = v;
            self.check.seed = v;
        }
        if let Some(v) = o.n_amp {
            self.init.n_amp = v;
        }
        if let Some(v) = o.u_amp {
            self.init.u_amp = v;
        }
        if let Some(v) = o.bound_factor {
            self.sweep.bound_factor = v;
        }
        if let Some(v) = &o.eps_list {
            self.sweep.eps_list = v.clone();
        }
        if let Some(v) = o.identity_tol {
            self.check.identity_tol = v;
        }
    }

    /// `--out`, then the file, then `DEBYE_LIMIT_OUT`, then the built-in.
    pub fn out_dir(&self, env: Option<String>) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Run options for the selected flow with an explicit step.
    pub fn run_options(&self, eps: f64, dt: f64) -> RunOptions {
        RunOptions {
            dt,
            t_end: self.run.t_end,
            eps,
            density_floor: self.run.density_floor,
            norm_ceiling: self.run.norm_ceiling,
            pb_opts: self.pb,
            record_every: self.run.record_every,
            monitor_s: self.run.monitor_s,
            filter: self.run.filter,
        }
    }

    pub fn s_list(&self) -> Vec<usize> {
        (0..=self.run.s).collect()
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let sw = &self.sweep;
        SweepSpec {
            grid_points: self.grid.n_points,
            eps_list: sw.eps_list.clone(),
            run: self.run_options(sw.eps_list.first().copied().unwrap_or(0.0), self.run.dt.unwrap_or(1e-3)),
            dt: self.run.dt,
            init: self.init,
            s_list: self.s_list(),
            seed: sw.seed,
            bound_factor: sw.bound_factor,
            ratio_factor: sw.ratio_factor,
            identity_gamma: sw.identity_gamma,
            order_min: sw.order_min,
            order_max: sw.order_max,
            min_r_squared: sw.min_r_squared,
            identity_gap_tol: sw.identity_gap_tol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn sections_override_defaults() {
        let c = Config::parse(
            "[grid]\nn_points = 64\n[run]\nflow = \"limit\"\ndt = 0.01\n[init]\nn_amp = 0.2\n[sweep]\neps_list = [0.1, 0.01]\n",
        )
        .unwrap();
        assert_eq!(c.grid.n_points, 64);
        assert_eq!(c.run.flow, FlowKind::Limit);
        assert_eq!(c.run.dt, Some(0.01));
        assert_eq!(c.init.n_amp, 0.2);
        assert_eq!(c.init.u_amp, 0.1);
        assert_eq!(c.sweep.eps_list, vec![0.1, 0.01]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = Config::parse("[run]\nt_edn = 1.0\n").unwrap_err();
        assert!(err.contains("t_edn"), "{err}");
        assert!(err.contains("line 2"), "{err}");
        assert!(Config::parse("[nope]\n").is_err());
        assert!(Config::parse("[pb]\ntol = \"x\"\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut c = Config::parse("[run]\neps = 0.5\n[output]\ndir = \"a\"\n").unwrap();
        c.apply(&Overrides {
            eps: Some(0.25),
            out: Some("b".into()),
            ..Overrides::default()
        });
        assert_eq!(c.run.eps, 0.25);
        assert_eq!(c.out_dir(Some("env".into())), PathBuf::from("b"));
    }

    #[test]
    fn output_dir_precedence() {
        let c = Config::default();
        assert_eq!(c.out_dir(None), PathBuf::from(DEFAULT_OUT));
        assert_eq!(c.out_dir(Some("from-env".into())), PathBuf::from("from-env"));
        let c = Config::parse("[output]\ndir = \"file\"\n").unwrap();
        assert_eq!(c.out_dir(Some("from-env".into())), PathBuf::from("file"));
    }
}
