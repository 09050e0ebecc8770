//! Numerics for pumped-up SU(1,1) interferometry.
//!
//! Two platforms are modeled: a three-mode spinor Bose–Einstein condensate
//! (pump + two side modes coupled by spin-mixing collisions) and a
//! four-mode hybrid atom–light system (two pumps + two side modes coupled
//! by four-wave mixing). In both, the interferometer is the five-stage
//! echo sequence
//!
//! ```text
//! parametric amplifier (r) → splitter (θ, ϑ) → phase (φ) →
//! splitter (−θ) → parametric amplifier (−r)
//! ```
//!
//! and the questions asked are: what phase sensitivity Δφ does the
//! side-mode population readout reach, how close is that to the quantum
//! Cramér–Rao bound 1/√F set by the quantum Fisher information (QFI) F,
//! and how robust are both to detection noise, phase diffusion, and loss.
//!
//! The same physics is computed by four mutually checking engines:
//!
//! * [`analytic`] — closed-form undepleted-pump expressions;
//! * [`gaussian`] — numerical Gaussian (Bogoliubov) moment propagation,
//!   exact for the linearized pump at any φ;
//! * [`fock`] — exact dense simulation in number-sector bases, with no
//!   linearization (the depletion oracle);
//! * [`tw`] — truncated-Wigner Monte Carlo sampling, the only engine that
//!   handles particle loss during the nonlinear stages.
//!
//! [`optimize`] locates optimal operating points, [`noise`] evaluates
//! robustness studies, and [`config`] holds the shared parameter and
//! result types.

pub mod analytic;
pub mod config;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod noise;
pub mod optimize;
pub mod tw;

pub use config::{
    derive_params, DerivedParams, GeneralMoments, InterferometerConfig, Method, NoiseSpec,
    OperatingPoint, Platform, SensitivityResult, SignalMoments, SmallPhiSeries,
};
pub use error::{Error, Result};
