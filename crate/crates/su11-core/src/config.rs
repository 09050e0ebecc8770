//! Shared configuration and result types for both interferometer platforms.
//!
//! # Protocol
//!
//! Every engine in this crate evaluates the same five-stage echo protocol
//!
//! ```text
//! PA(r) → splitter(θ, ϑ) → phase(φ/2 ± φ_d/2 on the side modes)
//!       → splitter(−θ, ϑ) → PA(−r)
//! ```
//!
//! where `PA` is a parametric-amplifier stage that pumps the side-mode pair
//! and `splitter` is the pump–side mixing element (a symmetric three-mode
//! tritter on the spinor platform, a pair of two-mode beam splitters on the
//! hybrid platform). The observable is the total side-mode population
//! `N̂_s` after the echo.
//!
//! # Phase conventions
//!
//! The physics depends on the pump, splitter, and squeezing phases only
//! through the canonical combination
//!
//! * spinor:  ν = 2(ϑ − ϑ_p) − ϑ_sq
//! * hybrid:  ν = 2ϑ − (ϑ_{p,a} + ϑ_{p,b}) − ϑ_sq
//!
//! reduced to `[0, 2π)`. For the hybrid platform the configuration stores
//! the *sum* of the two pump phases in [`InterferometerConfig::vartheta_pump`].
//! The gain factor of the pumped-up scheme is
//!
//! ```text
//! η = cosh 2r − w · sin ν · sinh 2r ,   w = 1 (spinor),  w = 2√n_f/(1+n_f) (hybrid)
//! ```
//!
//! maximized at ν = 3π/2 where `η = cosh 2r + w sinh 2r ≥ e^{−2r}`.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;

/// Fraction `N_s/N̄` above which the undepleted-pump closed forms are
/// considered untrustworthy and [`InterferometerConfig::validate`] rejects
/// the configuration (the exact oracles may still run via
/// [`InterferometerConfig::validate_for_oracle`]).
pub const UNDEPLETED_GUARD: f64 = 1.0;

/// Which physical realization of the pumped-up interferometer is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Platform {
    /// Spin-1 condensate: one pump mode (m = 0) and two side modes
    /// (m = ±1) coupled by spin-changing collisions. 3 modes total.
    Spinor3,
    /// Hybrid atom–light scheme: atomic and optical pump modes
    /// (â₀, b̂₀) and side modes (â₁, b̂₁) coupled by four-wave mixing.
    /// 4 modes total.
    Hybrid4,
}

impl Platform {
    /// Number of bosonic modes carried by the platform.
    pub fn n_modes(self) -> usize {
        match self {
            Platform::Spinor3 => 3,
            Platform::Hybrid4 => 4,
        }
    }

    /// Indices of the pump modes in the canonical mode ordering.
    pub fn pump_modes(self) -> &'static [usize] {
        match self {
            Platform::Spinor3 => &[0],
            Platform::Hybrid4 => &[0, 1],
        }
    }

    /// Indices of the side (signal) modes in the canonical mode ordering.
    pub fn side_modes(self) -> &'static [usize] {
        match self {
            Platform::Spinor3 => &[1, 2],
            Platform::Hybrid4 => &[2, 3],
        }
    }
}

impl std::fmt::Display for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Platform::Spinor3 => write!(f, "spinor3"),
            Platform::Hybrid4 => write!(f, "hybrid4"),
        }
    }
}

/// Complete operating point of the five-stage interferometer.
///
/// All fields are public; [`InterferometerConfig::validate`] checks the
/// domain constraints listed on each field.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferometerConfig {
    /// Physical platform (fixes mode count and splitter type).
    pub platform: Platform,
    /// Mean total particle number `N̄` fed into the pump mode(s). Must be
    /// positive and finite; need not be an integer (the Fock oracle draws
    /// pump numbers from a Poisson distribution of this mean).
    pub n_total: f64,
    /// Squeezing parameter of the parametric stage, `r ≥ 0`. The side-mode
    /// population produced by the first stage is `N_s = 2 sinh²r`.
    pub r: f64,
    /// Splitter mixing angle `θ ∈ [0, π/2]`. `θ = 0` recovers the
    /// conventional SU(1,1) interferometer.
    pub theta: f64,
    /// Splitter phase ϑ.
    pub vartheta: f64,
    /// Pump phase: ϑ_p for the spinor platform, the sum ϑ_{p,a} + ϑ_{p,b}
    /// for the hybrid platform.
    pub vartheta_pump: f64,
    /// Squeezing phase ϑ_sq of the parametric stage.
    pub vartheta_sq: f64,
    /// Interferometric phase φ (sum phase imprinted on the side modes).
    pub phi: f64,
    /// Hybrid only: pump asymmetry `n_f = N_{a0}/N_{b0} > 0`. The initial
    /// pump populations are `f·N̄` and `g·N̄` with `f = n_f/(1+n_f)`,
    /// `g = 1/(1+n_f)`. Ignored by the spinor platform.
    pub n_f: f64,
}

impl InterferometerConfig {
    /// Spinor-platform configuration at the standard operating point
    /// θ = π/4, ν = 3π/2 (via ϑ = 3π/4), φ = 0.
    pub fn spinor(n_total: f64, r: f64) -> Self {
        InterferometerConfig {
            platform: Platform::Spinor3,
            n_total,
            r,
            theta: std::f64::consts::FRAC_PI_4,
            vartheta: 0.75 * std::f64::consts::PI,
            vartheta_pump: 0.0,
            vartheta_sq: 0.0,
            phi: 0.0,
            n_f: 1.0,
        }
    }

    /// Hybrid-platform configuration at the standard operating point
    /// θ = π/4, ν = 3π/2 (via ϑ = 3π/4), φ = 0.
    pub fn hybrid(n_total: f64, r: f64, n_f: f64) -> Self {
        InterferometerConfig {
            platform: Platform::Hybrid4,
            n_total,
            r,
            theta: std::f64::consts::FRAC_PI_4,
            vartheta: 0.75 * std::f64::consts::PI,
            vartheta_pump: 0.0,
            vartheta_sq: 0.0,
            phi: 0.0,
            n_f,
        }
    }

    /// Side-mode population created by the parametric stage, `N_s = 2 sinh²r`.
    pub fn n_s(&self) -> f64 {
        2.0 * self.r.sinh().powi(2)
    }

    /// Initial pump fractions `(f, g)`: `(1, 0)` for the spinor platform,
    /// `(n_f, 1)/(1+n_f)` for the hybrid platform.
    pub fn pump_fractions(&self) -> (f64, f64) {
        match self.platform {
            Platform::Spinor3 => (1.0, 0.0),
            Platform::Hybrid4 => {
                let f = self.n_f / (1.0 + self.n_f);
                (f, 1.0 - f)
            }
        }
    }

    /// Copy of the configuration with the splitter phase ϑ chosen so the
    /// canonical phase equals `nu` (inverting the platform's combination,
    /// with the pump and squeezing phases held fixed).
    pub fn with_nu(&self, nu: f64) -> Self {
        let mut out = self.clone();
        out.vartheta = match self.platform {
            Platform::Spinor3 => self.vartheta_pump + 0.5 * (nu + self.vartheta_sq),
            Platform::Hybrid4 => 0.5 * (nu + self.vartheta_pump + self.vartheta_sq),
        };
        out
    }

    /// Basic domain checks shared by all engines (finiteness, ranges).
    /// Does *not* enforce the undepleted-pump guard.
    pub fn validate_for_oracle(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.n_total.is_finite() && self.n_total > 0.0) {
            return bad(format!("n_total must be positive, got {}", self.n_total));
        }
        if !(self.r.is_finite() && self.r >= 0.0) {
            return bad(format!("r must be nonnegative, got {}", self.r));
        }
        if !(self.theta.is_finite()
            && (0.0..=std::f64::consts::FRAC_PI_2).contains(&self.theta))
        {
            return bad(format!("theta must lie in [0, pi/2], got {}", self.theta));
        }
        for (name, v) in [
            ("vartheta", self.vartheta),
            ("vartheta_pump", self.vartheta_pump),
            ("vartheta_sq", self.vartheta_sq),
            ("phi", self.phi),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if self.platform == Platform::Hybrid4 && !(self.n_f.is_finite() && self.n_f > 0.0) {
            return bad(format!("n_f must be positive, got {}", self.n_f));
        }
        Ok(())
    }

    /// Full validation: domain checks plus the undepleted-pump guard
    /// `N_s < N̄` required by the closed-form and Gaussian engines.
    pub fn validate(&self) -> Result<()> {
        self.validate_for_oracle()?;
        let ns = self.n_s();
        if ns >= UNDEPLETED_GUARD * self.n_total {
            return Err(Error::InvalidConfig(format!(
                "undepleted-pump guard violated: N_s = {ns:.6} >= N_total = {}",
                self.n_total
            )));
        }
        Ok(())
    }
}

/// Quantities derived from a configuration; see [`derive_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Side population after the first parametric stage, `N_s = 2 sinh²r`.
    pub n_s: f64,
    /// Canonical phase ν reduced to `[0, 2π)` (module docs give the
    /// platform-specific combination).
    pub nu: f64,
    /// Gain factor `η = cosh 2r − w sin ν sinh 2r`.
    pub eta: f64,
}

/// Side-mode weight `w` entering η: 1 for the spinor platform,
/// `2√n_f/(1+n_f) ≤ 1` for the hybrid platform.
pub fn eta_weight(platform: Platform, n_f: f64) -> f64 {
    match platform {
        Platform::Spinor3 => 1.0,
        Platform::Hybrid4 => 2.0 * n_f.sqrt() / (1.0 + n_f),
    }
}

/// Gain factor `η = cosh 2r − w sin ν sinh 2r` for side-mode weight `w`.
pub fn eta_of(r: f64, w: f64, nu: f64) -> f64 {
    (2.0 * r).cosh() - w * nu.sin() * (2.0 * r).sinh()
}

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_2pi(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let y = x.rem_euclid(two_pi);
    if y == two_pi { 0.0 } else { y }
}

/// Compute `N_s`, the canonical phase ν, and the gain factor η for a
/// validated configuration.
pub fn derive_params(cfg: &InterferometerConfig) -> Result<DerivedParams> {
    cfg.validate_for_oracle()?;
    let nu_raw = match cfg.platform {
        Platform::Spinor3 => 2.0 * (cfg.vartheta - cfg.vartheta_pump) - cfg.vartheta_sq,
        Platform::Hybrid4 => 2.0 * cfg.vartheta - cfg.vartheta_pump - cfg.vartheta_sq,
    };
    let nu = wrap_2pi(nu_raw);
    let w = eta_weight(cfg.platform, cfg.n_f);
    Ok(DerivedParams {
        n_s: cfg.n_s(),
        nu,
        eta: eta_of(cfg.r, w, nu),
    })
}

/// Experimental imperfections evaluated by the robustness studies.
///
/// All fields are standard deviations or rates and must be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Detection noise: rms uncertainty Δn of the side-population readout.
    pub delta_n: f64,
    /// Phase-difference noise: standard deviation σ_φ of a Gaussian spread
    /// of the differential phase φ_d.
    pub sigma_varphi: f64,
    /// Spinor two-body loss rate γ (all channels), in units of κ.
    pub gamma: f64,
    /// Hybrid one-body loss rate of the atomic pump, in units of κ.
    pub gamma_a0: f64,
    /// Hybrid one-body loss rate of the optical pump, in units of κ.
    pub gamma_b0: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { delta_n: 0.0, sigma_varphi: 0.0, gamma: 0.0, gamma_a0: 0.0, gamma_b0: 0.0 }
    }
}

impl NoiseSpec {
    /// Check all rates are finite and nonnegative.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_n", self.delta_n),
            ("sigma_varphi", self.sigma_varphi),
            ("gamma", self.gamma),
            ("gamma_a0", self.gamma_a0),
            ("gamma_b0", self.gamma_b0),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise rate {name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Which engine produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Closed-form undepleted-pump expressions.
    Analytic,
    /// Gaussian moment propagation through the stage maps.
    Gaussian,
    /// Exact Fock-space evolution (sector-blocked).
    Fock,
    /// Truncated-Wigner trajectory sampling.
    Tw,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Analytic => write!(f, "analytic"),
            Method::Gaussian => write!(f, "gaussian"),
            Method::Fock => write!(f, "fock"),
            Method::Tw => write!(f, "tw"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Method::Analytic),
            "gaussian" => Ok(Method::Gaussian),
            "fock" => Ok(Method::Fock),
            "tw" => Ok(Method::Tw),
            other => Err(Error::InvalidConfig(format!(
                "unknown engine '{other}' (expected analytic, gaussian, fock, or tw)"
            ))),
        }
    }
}

/// Operating point a sensitivity result refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Splitter angle θ.
    pub theta: f64,
    /// Canonical phase ν.
    pub nu: f64,
    /// Interferometric phase φ at which the readout slope was taken
    /// (0 denotes the φ → 0 series limit).
    pub phi: f64,
}

/// A phase sensitivity Δφ with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    /// Estimated phase uncertainty, strictly positive.
    pub delta_phi: f64,
    /// One standard error of `delta_phi` (0 for deterministic engines).
    pub stderr: f64,
    /// Engine that produced the estimate.
    pub method: Method,
    /// Operating point of the estimate.
    pub operating_point: OperatingPoint,
}

impl SensitivityResult {
    /// Construct after checking the positivity invariant.
    pub fn new(
        delta_phi: f64,
        stderr: f64,
        method: Method,
        operating_point: OperatingPoint,
    ) -> Result<Self> {
        if !(delta_phi.is_finite() && delta_phi > 0.0) {
            return Err(Error::Numerics(format!(
                "sensitivity must be positive and finite, got {delta_phi}"
            )));
        }
        if !(stderr.is_finite() && stderr >= 0.0) {
            return Err(Error::Numerics(format!("stderr must be nonnegative, got {stderr}")));
        }
        Ok(SensitivityResult { delta_phi, stderr, method, operating_point })
    }
}

/// φ → 0 series coefficients of the readout. Near φ = 0 the signal behaves
/// as `mean ≈ ½·(2·mean₂)·φ²`, `slope ≈ slope₁·φ`, `var ≈ var₂·φ²`, so the
/// small-phase sensitivity is `Δφ_N = √var₂ / slope₁` without ever dividing
/// two vanishing floats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallPhiSeries {
    /// `lim_{φ→0} slope(φ)/φ`.
    pub slope_per_phi: f64,
    /// `lim_{φ→0} var(φ)/φ²`.
    pub var_per_phi2: f64,
}

/// First two moments and phase slope of the side-population readout `N̂_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMoments {
    /// `⟨N̂_s⟩` at the operating point.
    pub mean: f64,
    /// `∂⟨N̂_s⟩/∂φ` at the operating point.
    pub slope: f64,
    /// `Var(N̂_s)` at the operating point.
    pub variance: f64,
    /// Operating point of the evaluation.
    pub operating_point: OperatingPoint,
    /// φ → 0 series coefficients when the engine can supply them
    /// (closed-form engine only).
    pub series: Option<SmallPhiSeries>,
}

/// Moments of the prepared probe state (after the parametric stage, before
/// the splitter) that determine the quantum Fisher information.
///
/// `N̂₀` is the total pump population, `N̂_s` the total side population;
/// `pair` is the platform pair correlator
/// `⟨â₀² â₊† â₋†⟩` (spinor) or `⟨â₀ b̂₀ â₁† b̂₁†⟩` (hybrid).
/// Second moments are raw (not centered).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralMoments {
    /// `⟨N̂₀⟩`.
    pub mean_n0: f64,
    /// `⟨N̂₀²⟩` (raw).
    pub mean_n0_sq: f64,
    /// `⟨N̂_s⟩`.
    pub mean_ns: f64,
    /// `⟨N̂_s²⟩` (raw).
    pub mean_ns_sq: f64,
    /// `⟨N̂₀ N̂_s⟩` (raw, symmetrized; the two operators commute).
    pub mean_n0_ns: f64,
    /// Pair correlator (complex).
    pub pair: C64,
}

impl GeneralMoments {
    /// Pump-population variance.
    pub fn var_n0(&self) -> f64 {
        self.mean_n0_sq - self.mean_n0 * self.mean_n0
    }

    /// Side-population variance.
    pub fn var_ns(&self) -> f64 {
        self.mean_ns_sq - self.mean_ns * self.mean_ns
    }

    /// Pump–side covariance.
    pub fn cov(&self) -> f64 {
        self.mean_n0_ns - self.mean_n0 * self.mean_ns
    }

    /// Check the variance invariants (small negative round-off is allowed
    /// relative to the second-moment scale).
    pub fn validate(&self) -> Result<()> {
        let tol0 = 1e-9 * (1.0 + self.mean_n0_sq.abs());
        let tols = 1e-9 * (1.0 + self.mean_ns_sq.abs());
        if self.var_n0() < -tol0 || self.var_ns() < -tols {
            return Err(Error::Numerics(format!(
                "negative variance in general moments: var_n0 = {}, var_ns = {}",
                self.var_n0(),
                self.var_ns()
            )));
        }
        for (name, v) in [
            ("mean_n0", self.mean_n0),
            ("mean_n0_sq", self.mean_n0_sq),
            ("mean_ns", self.mean_ns),
            ("mean_ns_sq", self.mean_ns_sq),
            ("mean_n0_ns", self.mean_n0_ns),
        ] {
            if !v.is_finite() {
                return Err(Error::Numerics(format!("{name} is not finite: {v}")));
            }
        }
        if !self.pair.re.is_finite() || !self.pair.im.is_finite() {
            return Err(Error::Numerics("pair correlator is not finite".into()));
        }
        Ok(())
    }
}
