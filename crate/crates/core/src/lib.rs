//! Pseudospectral simulator for the cold-ion Euler-Poisson system on the
//! unit torus and its quasineutral limit, with the remainder, weighted-norm
//! and energy diagnostics used to study convergence as the Debye parameter
//! `eps` goes to zero.

pub mod energy;
pub mod experiments;
pub mod flow;
pub mod init;
pub mod io;
pub mod poisson;
pub mod remainder;
pub mod spectral;

pub use flow::{evolve, run, step, BlowUpEvent, Flow, FlowError, RunOptions, State, Trajectory};
pub use init::{make_initial, InitParams, Profile};
pub use poisson::{pb_residual, solve_phi, solve_phi_limit, PbSolution, PbSolveOptions, PoissonError};
pub use spectral::{Field, Grid, SpectralError};
pub use energy::{energy_snapshot, gronwall_monitor, identity_2_12_check, kato_ponce_sample, EnergySnapshot, Verdict};
pub use experiments::{fit_order, run_sweep, SweepReport, SweepSpec};
pub use remainder::{form_remainder, triple_norm, Remainder, TripleNorm};
