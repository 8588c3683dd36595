//! Smooth, strictly positive initial data shared by both flows.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{Field, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("n_base must be positive and finite, got {0}")]
    BaseDensity(f64),
    #[error("|n_amp| = {amp} must stay below n_base = {base}")]
    AmplitudeTooLarge { amp: f64, base: f64 },
    #[error("mode must be >= 1")]
    Mode,
    #[error("non-finite parameter {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// One sinusoid at `mode`.
    #[default]
    Single,
    /// First three harmonics of `mode` with `1/m^2` decay, rescaled so the
    /// peak amplitude bound is still `n_amp`.
    MultiMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitParams {
    pub n_base: f64,
    pub n_amp: f64,
    pub u_amp: f64,
    pub mode: u32,
    pub phase_u: f64,
    pub profile: Profile,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            n_base: 1.0,
            n_amp: 0.1,
            u_amp: 0.1,
            mode: 1,
            phase_u: 0.0,
            profile: Profile::Single,
        }
    }
}

impl InitParams {
    pub fn validate(&self) -> Result<(), InitError> {
        for (name, v) in [("n_base", self.n_base), ("n_amp", self.n_amp), ("u_amp", self.u_amp), ("phase_u", self.phase_u)] {
            if !v.is_finite() {
                return Err(InitError::NonFinite(name));
            }
        }
        if !(self.n_base > 0.0) {
            return Err(InitError::BaseDensity(self.n_base));
        }
        if self.n_amp.abs() >= self.n_base {
            return Err(InitError::AmplitudeTooLarge {
                amp: self.n_amp,
                base: self.n_base,
            });
        }
        if self.mode == 0 {
            return Err(InitError::Mode);
        }
        Ok(())
    }

    /// Guaranteed lower bound on the initial density.
    pub fn sigma(&self) -> f64 {
        self.n_base - self.n_amp.abs()
    }
}

fn shape(profile: Profile, mode: u32, phase: f64, x: f64) -> f64 {
    let k = 2.0 * PI * mode as f64;
    match profile {
        Profile::Single => (k * x + phase).sin(),
        Profile::MultiMode => {
            let norm: f64 = (1..=3).map(|m| 1.0 / (m * m) as f64).sum();
            (1..=3)
                .map(|m| {
                    let m = m as f64;
                    (m * k * x + phase).sin() / (m * m)
                })
                .sum::<f64>()
                / norm
        }
    }
}

/// Builds `(n0, u0)`; both flows must start from exactly these fields.
pub fn make_initial(p: &InitParams, grid: &Grid) -> Result<(Field, Field), InitError> {
    p.validate()?;
    let n0 = grid.sample(|x| p.n_base + p.n_amp * shape(p.profile, p.mode, 0.0, x));
    let u0 = grid.sample(|x| p.u_amp * shape(p.profile, p.mode, p.phase_u, x));
    Ok((n0, u0))
}
