//! Operating-point optimization: robust 1-D scan-and-refine searches and
//! interferometer-level optimizers built on them.
//!
//! The 1-D searches evaluate on a coarse grid first, refine every local
//! extremum bracket by golden-section search, and report whether the
//! landscape was multimodal. Interferometer optimization nests them:
//! canonical phase ν on the outer level, splitter angle θ inside, with the
//! phase φ handled innermost (analytically, since the small-phase series
//! already encodes the φ → 0 optimum of the readout).

use crate::analytic;
use crate::config::{derive_params, InterferometerConfig, Method, Platform};
use crate::error::{Error, Result};
use crate::fock;
use crate::gaussian;

/// Result of a 1-D extremum search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum1d {
    /// Location of the best extremum (ties resolved toward smaller `x`).
    pub x: f64,
    /// Function value there.
    pub value: f64,
    /// `true` when the scan found more than one interior local extremum.
    pub multimodal: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9; // (√5 − 1)/2
/// Relative tie tolerance when comparing candidate extrema.
const TIE_TOL: f64 = 1e-12;

fn golden_max<F: FnMut(f64) -> Result<f64>>(
    f: &mut F,
    mut a: f64,
    mut b: f64,
) -> Result<(f64, f64)> {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Maximize `f` on `[lo, hi]`: scan `n_scan` panels, golden-refine every
/// interior local-maximum bracket, and compare against the endpoints.
/// Ties within a relative 1e-12 resolve toward smaller `x`.
pub fn maximize_1d<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    lo: f64,
    hi: f64,
    n_scan: usize,
) -> Result<Extremum1d> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidConfig(format!("bad search interval [{lo}, {hi}]")));
    }
    if n_scan < 4 {
        return Err(Error::InvalidConfig("n_scan must be at least 4".into()));
    }
    let xs: Vec<f64> = (0..=n_scan)
        .map(|i| lo + (hi - lo) * i as f64 / n_scan as f64)
        .collect();
    let mut gs = Vec::with_capacity(xs.len());
    for &x in &xs {
        gs.push(f(x)?);
    }
    // Candidates: both endpoints plus every refined interior local maximum.
    let mut candidates = vec![(xs[0], gs[0]), (xs[n_scan], gs[n_scan])];
    let mut interior = 0usize;
    for i in 1..n_scan {
        if gs[i] >= gs[i - 1] && gs[i] >= gs[i + 1] {
            interior += 1;
            candidates.push(golden_max(&mut f, xs[i - 1], xs[i + 1])?);
        }
    }
    let mut best = candidates[0];
    for &(x, v) in &candidates[1..] {
        let scale = v.abs().max(best.1.abs()).max(1.0);
        if v > best.1 + TIE_TOL * scale || ((v - best.1).abs() <= TIE_TOL * scale && x < best.0) {
            best = (x, v);
        }
    }
    Ok(Extremum1d { x: best.0, value: best.1, multimodal: interior > 1 })
}

/// Minimize `f` on `[lo, hi]` (see [`maximize_1d`]).
pub fn minimize_1d<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    lo: f64,
    hi: f64,
    n_scan: usize,
) -> Result<Extremum1d> {
    let m = maximize_1d(|x| f(x).map(|v| -v), lo, hi, n_scan)?;
    Ok(Extremum1d { x: m.x, value: -m.value, multimodal: m.multimodal })
}

/// Quantity optimized (or tabulated in sweeps).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Quantum Fisher information (maximized).
    Qfi,
    /// Small-phase readout sensitivity Δφ_N (minimized).
    DeltaPhiN,
    /// Δφ_N divided by the conventional SU(1,1) sensitivity at the same
    /// side population (minimized).
    Ratio,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Qfi => "qfi",
            Objective::DeltaPhiN => "delta_phi_n",
            Objective::Ratio => "ratio",
        })
    }
}

/// Optimized interferometer operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferometerOptimum {
    /// Optimal splitter angle.
    pub theta: f64,
    /// Optimal canonical phase.
    pub nu: f64,
    /// Objective value at the optimum.
    pub value: f64,
    /// QFI at the optimal point.
    pub qfi: f64,
    /// Small-phase readout sensitivity at the optimal point.
    pub delta_phi_n: f64,
    /// Whether the θ landscape at the optimal ν had several local optima.
    pub multimodal: bool,
}

fn qfi_at(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    match cfg.platform {
        Platform::Spinor3 => analytic::spinor_qfi(theta, nu, cfg),
        Platform::Hybrid4 => analytic::hybrid_qfi(theta, nu, cfg),
    }
}

fn objective_at(theta: f64, nu: f64, cfg: &InterferometerConfig, obj: Objective) -> Result<f64> {
    match obj {
        Objective::Qfi => qfi_at(theta, nu, cfg),
        Objective::DeltaPhiN => analytic::delta_phi_n(theta, nu, cfg),
        Objective::Ratio => {
            let conv = analytic::conventional_sensitivity(cfg.n_s())?
                .delta_phi
                .ok_or_else(|| Error::Domain("ratio undefined at n_s = 0".into()))?;
            Ok(analytic::delta_phi_n(theta, nu, cfg)? / conv)
        }
    }
}

/// Optimize the closed-form objective over the operating point: ν on
/// `[0, 2π]` outside, θ on `[0, π/2]` inside. For sensitivity objectives
/// the φ-optimization is analytic (small-phase series).
///
/// For the QFI objective the closed-form critical-angle candidates at the
/// refined ν are folded in, so the reported optimum is never below the
/// analytic stationary-point value.
pub fn optimize_interferometer(
    cfg: &InterferometerConfig,
    obj: Objective,
) -> Result<InterferometerOptimum> {
    cfg.validate()?;
    let maximizing = obj == Objective::Qfi;
    let theta_hi = std::f64::consts::FRAC_PI_2;
    let inner = |nu: f64| -> Result<Extremum1d> {
        if maximizing {
            maximize_1d(|th| objective_at(th, nu, cfg, obj), 0.0, theta_hi, 64)
        } else {
            minimize_1d(|th| objective_at(th, nu, cfg, obj), 0.0, theta_hi, 64)
        }
    };
    let signed = |v: f64| if maximizing { v } else { -v };
    let outer = maximize_1d(
        |nu| inner(nu).map(|e| signed(e.value)),
        0.0,
        2.0 * std::f64::consts::PI,
        64,
    )?;
    let mut nu_opt = outer.x;
    let mut at_nu = inner(nu_opt)?;
    let mut theta_opt = at_nu.x;
    let mut value = at_nu.value;

    // Fold in the closed-form stationary candidates for the QFI objective.
    if maximizing {
        let mut probe = cfg.clone();
        // Encode ν via the splitter phase (pump and squeezing phases zero).
        probe.vartheta = 0.5 * nu_opt;
        probe.vartheta_pump = 0.0;
        probe.vartheta_sq = 0.0;
        let cs = match cfg.platform {
            Platform::Spinor3 => analytic::spinor_qfi_critical(&probe)?,
            Platform::Hybrid4 => analytic::hybrid_qfi_critical(&probe)?,
        };
        if cs.qfi_opt > value {
            value = cs.qfi_opt;
            theta_opt = cs.theta_opt;
        }
        // The exact ν optimum is sin ν = −1; snap if it improves.
        let nu_star = 1.5 * std::f64::consts::PI;
        at_nu = inner(nu_star)?;
        if at_nu.value > value {
            value = at_nu.value;
            theta_opt = at_nu.x;
            nu_opt = nu_star;
        }
    }

    Ok(InterferometerOptimum {
        theta: theta_opt,
        nu: nu_opt,
        value,
        qfi: qfi_at(theta_opt, nu_opt, cfg)?,
        delta_phi_n: analytic::delta_phi_n(theta_opt, nu_opt, cfg)?,
        multimodal: at_nu.multimodal,
    })
}

/// Optimum of the Loschmidt-echo readout sensitivity over θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoschmidtOptimum {
    /// Optimal projection angle (π/4 up to `O(1/N̄)` corrections).
    pub theta: f64,
    /// Sensitivity at the optimum.
    pub delta_phi: f64,
    /// Large-`N̄` floor `2e^{−r}/√N̄` the optimum approaches.
    pub lo_minimum: f64,
}

/// Minimize the coherent-pump Loschmidt sensitivity over θ at the
/// configuration's canonical phase.
pub fn loschmidt_optimum(cfg: &InterferometerConfig) -> Result<LoschmidtOptimum> {
    cfg.validate()?;
    let ext = minimize_1d(
        |th| analytic::loschmidt_restricted_sensitivity(th, cfg).map(|s| s.delta_phi),
        0.01,
        std::f64::consts::FRAC_PI_2 - 0.01,
        64,
    )?;
    Ok(LoschmidtOptimum {
        theta: ext.x,
        delta_phi: ext.value,
        lo_minimum: analytic::loschmidt_lo_minimum(cfg)?,
    })
}

// ---------------------------------------------------------------------------
// Grid sweeps
// ---------------------------------------------------------------------------

/// Configuration axis swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Side population `N_s` (sets `r = asinh √(N_s/2)`).
    Ns,
    /// Squeezing parameter r.
    R,
    /// Splitter angle θ.
    Theta,
    /// Canonical phase ν (sets the splitter phase ϑ accordingly).
    Nu,
    /// Probe phase φ.
    Phi,
    /// Detection noise Δn (Gaussian engine only).
    DeltaN,
    /// Dephasing width σ_φ (Gaussian engine only).
    SigmaVarphi,
    /// Loss rate γ; rows report an error directing to the loss study.
    Gamma,
    /// Hybrid pump-imbalance parameter n_f (hybrid platform only).
    Nf,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Ns => "n_s",
            SweepAxis::R => "r",
            SweepAxis::Theta => "theta",
            SweepAxis::Nu => "nu",
            SweepAxis::Phi => "phi",
            SweepAxis::DeltaN => "delta_n",
            SweepAxis::SigmaVarphi => "sigma_varphi",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Nf => "n_f",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "n_s" => SweepAxis::Ns,
            "r" => SweepAxis::R,
            "theta" => SweepAxis::Theta,
            "nu" => SweepAxis::Nu,
            "phi" => SweepAxis::Phi,
            "delta_n" => SweepAxis::DeltaN,
            "sigma_varphi" => SweepAxis::SigmaVarphi,
            "gamma" => SweepAxis::Gamma,
            "n_f" => SweepAxis::Nf,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown sweep axis '{other}'"
                )))
            }
        })
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qfi" => Ok(Objective::Qfi),
            "delta_phi_n" => Ok(Objective::DeltaPhiN),
            "ratio" => Ok(Objective::Ratio),
            other => Err(Error::InvalidConfig(format!(
                "unknown objective '{other}' (expected qfi, delta_phi_n, or ratio)"
            ))),
        }
    }
}

/// A grid sweep: one objective tabulated against one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Swept axis.
    pub axis: SweepAxis,
    /// Strictly increasing grid of axis values.
    pub values: Vec<f64>,
    /// Tabulated objective.
    pub objective: Objective,
}

impl SweepSpec {
    /// Validated sweep specification.
    pub fn new(axis: SweepAxis, values: Vec<f64>, objective: Objective) -> Result<Self> {
        let spec = SweepSpec { axis, values, objective };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid sanity: nonempty, finite, strictly increasing, nonnegative for
    /// the scale-like axes (angles may be any finite value).
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("sweep grid entries must be finite".into()));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "sweep grid must be strictly increasing".into(),
            ));
        }
        let nonnegative = matches!(
            self.axis,
            SweepAxis::Ns
                | SweepAxis::R
                | SweepAxis::DeltaN
                | SweepAxis::SigmaVarphi
                | SweepAxis::Gamma
                | SweepAxis::Nf
        );
        if nonnegative && self.values[0] < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "axis {} requires nonnegative values, got {}",
                self.axis, self.values[0]
            )));
        }
        Ok(())
    }
}

/// One row of a sweep table. Exactly one of `value`/`error` is set; per-row
/// failures are recorded, never fatal for the sweep as a whole.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Axis value of the row.
    pub x: f64,
    /// Objective value, when the row evaluated cleanly.
    pub value: Option<f64>,
    /// Standard error of the value (0 for the deterministic engines).
    pub stderr: f64,
    /// Failure description, when the row did not evaluate.
    pub error: Option<String>,
}

fn engine_delta_phi(cfg: &InterferometerConfig, engine: Method, delta_n: f64) -> Result<f64> {
    match engine {
        Method::Analytic => {
            if delta_n != 0.0 {
                return Err(Error::InvalidConfig(
                    "detection noise needs the Gaussian engine".into(),
                ));
            }
            analytic::delta_phi_n(cfg.theta, derive_params(cfg)?.nu, cfg)
        }
        Method::Gaussian => Ok(gaussian::sensitivity_numeric(cfg, delta_n)?.delta_phi),
        Method::Fock => {
            let phi = if cfg.phi > 0.0 { cfg.phi } else { gaussian::DEFAULT_PHI_EVAL };
            let m = fock::chain_moments_fock(cfg, phi, 0.0)?;
            Ok(analytic::sensitivity_from_moments(&m, delta_n)?.delta_phi)
        }
        Method::Tw => Err(Error::InvalidConfig(
            "truncated-Wigner rows need explicit Monte-Carlo settings; \
             use the tw module directly"
                .into(),
        )),
    }
}

fn engine_objective(
    cfg: &InterferometerConfig,
    engine: Method,
    obj: Objective,
    delta_n: f64,
) -> Result<f64> {
    match obj {
        Objective::Qfi => match engine {
            Method::Analytic => qfi_at(cfg.theta, derive_params(cfg)?.nu, cfg),
            Method::Gaussian => gaussian::qfi_gaussian(cfg, cfg.theta, cfg.vartheta),
            Method::Fock => fock::qfi_fock(cfg, cfg.theta, cfg.vartheta),
            Method::Tw => Err(Error::InvalidConfig(
                "the truncated-Wigner engine does not tabulate the QFI".into(),
            )),
        },
        Objective::DeltaPhiN => engine_delta_phi(cfg, engine, delta_n),
        Objective::Ratio => {
            let conv = analytic::conventional_sensitivity(cfg.n_s())?
                .delta_phi
                .ok_or_else(|| Error::Domain("ratio undefined at n_s = 0".into()))?;
            Ok(engine_delta_phi(cfg, engine, delta_n)? / conv)
        }
    }
}

fn dephased_objective(cfg: &InterferometerConfig, sigma: f64, obj: Objective) -> Result<f64> {
    let p = gaussian::phase_noise_sensitivity(cfg, sigma)?;
    match obj {
        Objective::DeltaPhiN => Ok(p.delta_phi),
        Objective::Ratio => {
            let conv = analytic::conventional_sensitivity(cfg.n_s())?
                .delta_phi
                .ok_or_else(|| Error::Domain("ratio undefined at n_s = 0".into()))?;
            Ok(p.delta_phi / conv)
        }
        Objective::Qfi => Err(Error::InvalidConfig(
            "the QFI does not depend on the dephasing width".into(),
        )),
    }
}

/// Configuration with the axis value applied (noise axes leave it as is;
/// their value feeds the evaluation instead).
fn apply_axis(cfg: &InterferometerConfig, axis: SweepAxis, v: f64) -> InterferometerConfig {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Ns => c.r = (v / 2.0).sqrt().asinh(),
        SweepAxis::R => c.r = v,
        SweepAxis::Theta => c.theta = v,
        SweepAxis::Nu => c = c.with_nu(v),
        SweepAxis::Phi => c.phi = v,
        SweepAxis::Nf => c.n_f = v,
        SweepAxis::DeltaN | SweepAxis::SigmaVarphi | SweepAxis::Gamma => {}
    }
    c
}

/// Tabulate `spec.objective` against `spec.axis` with the given engine:
/// one row per axis value in grid order, evaluation failures recorded per
/// row. Rows are computed sequentially — every supported engine is either
/// trivial per row or already saturates the thread pool internally — so
/// output ordering and determinism come for free.
///
/// Axis semantics: configuration axes replace the corresponding field of
/// `cfg` (`n_s` sets `r = asinh √(N_s/2)`; `nu` adjusts the splitter
/// phase); `delta_n` feeds the Gaussian readout quadrature, `sigma_varphi`
/// the Gauss–Hermite dephasing average. The `gamma` axis has no
/// deterministic engine: its rows carry an error pointing at the
/// Monte-Carlo loss study, which owns loss physics.
pub fn sweep(
    cfg: &InterferometerConfig,
    spec: &SweepSpec,
    engine: Method,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    spec.validate()?;
    if engine == Method::Tw {
        return Err(Error::InvalidConfig(
            "truncated-Wigner sweeps need explicit Monte-Carlo settings; \
             use the tw module ops or noise::loss_study"
                .into(),
        ));
    }
    if spec.axis == SweepAxis::Nf && cfg.platform != Platform::Hybrid4 {
        return Err(Error::InvalidConfig(
            "the n_f axis applies to the hybrid platform only".into(),
        ));
    }
    if matches!(spec.axis, SweepAxis::DeltaN | SweepAxis::SigmaVarphi) {
        if spec.objective == Objective::Qfi {
            return Err(Error::InvalidConfig(format!(
                "the QFI does not depend on the {} axis",
                spec.axis
            )));
        }
        if engine != Method::Gaussian {
            return Err(Error::InvalidConfig(format!(
                "the {} axis needs the Gaussian engine",
                spec.axis
            )));
        }
    }

    let rows = spec
        .values
        .iter()
        .map(|&v| {
            let outcome = match spec.axis {
                SweepAxis::Gamma => Err(Error::InvalidConfig(
                    "particle loss has no deterministic engine; \
                     use noise::loss_study for gamma grids"
                        .into(),
                )),
                SweepAxis::DeltaN => engine_objective(cfg, engine, spec.objective, v),
                SweepAxis::SigmaVarphi => dephased_objective(cfg, v, spec.objective),
                _ => {
                    let c = apply_axis(cfg, spec.axis, v);
                    c.validate()
                        .and_then(|()| engine_objective(&c, engine, spec.objective, 0.0))
                }
            };
            match outcome {
                Ok(value) => SweepRow { x: v, value: Some(value), stderr: 0.0, error: None },
                Err(e) => SweepRow { x: v, value: None, stderr: 0.0, error: Some(e.to_string()) },
            }
        })
        .collect();
    Ok(rows)
}
