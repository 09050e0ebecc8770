//! Closed-form sensitivities and quantum Fisher information (QFI) in the
//! undepleted-pump regime.
//!
//! Everything here is an explicit formula — no state propagation. Results
//! are exact in the linearized (undepleted-pump) description of the
//! parametric stage; the Gaussian, Fock, and truncated-Wigner engines
//! provide independent checks and depletion corrections.
//!
//! Conventions follow [`crate::config`]: `N̄` is the total input number,
//! `N_s = 2 sinh²r` the side population after the parametric stage,
//! ν the canonical phase, and `η = cosh 2r − w sin ν sinh 2r` the gain
//! factor with side weight `w`.
//!
//! # Leading-order (LO) versus full undepleted forms
//!
//! Functions with `_lo` in the name keep only the leading order in `1/N̄`
//! (these are the compact published-style expressions); their full
//! undepleted counterparts are exact for a linearized pump at any `N̄`.
//! The signal *variance* at finite φ is only available here to O(φ²) —
//! [`SignalMoments::variance`] from this module carries that leading form,
//! while mean and slope are full-φ expressions. Use the Gaussian engine
//! for exact finite-φ variances.

use crate::config::{
    derive_params, eta_of, eta_weight, GeneralMoments, InterferometerConfig, Method,
    OperatingPoint, Platform, SensitivityResult, SignalMoments, SmallPhiSeries,
};
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;

/// Below this side population the small-`N_s` branch of the peak-QFI
/// estimates applies (the optimum sits at θ = π/2).
pub const SMALL_NS_BRANCH: f64 = 0.25;

// ---------------------------------------------------------------------------
// Conventional SU(1,1) baseline
// ---------------------------------------------------------------------------

/// QFI of the conventional SU(1,1) interferometer, `F(0) = N_s(N_s + 2)`.
pub fn conventional_qfi(n_s: f64) -> f64 {
    n_s * (n_s + 2.0)
}

/// Conventional SU(1,1) QFI and phase sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConventionalSensitivity {
    /// `F(0) = N_s(N_s + 2)`.
    pub qfi: f64,
    /// `1/√F(0)`; `None` when `N_s = 0` (no signal, sensitivity undefined).
    pub delta_phi: Option<f64>,
}

/// Conventional SU(1,1) sensitivity `Δφ = 1/√(N_s(N_s+2))`.
pub fn conventional_sensitivity(n_s: f64) -> Result<ConventionalSensitivity> {
    if !(n_s.is_finite() && n_s >= 0.0) {
        return Err(Error::Domain(format!("n_s must be nonnegative, got {n_s}")));
    }
    let qfi = conventional_qfi(n_s);
    let delta_phi = if n_s > 0.0 { Some(1.0 / qfi.sqrt()) } else { None };
    Ok(ConventionalSensitivity { qfi, delta_phi })
}

// ---------------------------------------------------------------------------
// Spinor QFI (undepleted pump)
// ---------------------------------------------------------------------------

/// Undepleted-pump QFI of the pumped-up spinor interferometer at splitter
/// angle θ and canonical phase ν.
///
/// ```text
/// F(θ) = N̄ [1 + (N_s − Q sin ν) cos²θ] sin²θ
///      + (N_s/2) [N_s + (N_s+4)cos²θ + ¼(2Q sin ν − 3N_s − 1) sin²2θ]
/// ```
/// with `Q = √(N_s(N_s+2))`. Reduces to `N_s(N_s+2)` at θ = 0 and to
/// `N̄ + N_s²/2` at θ = π/2.
pub fn spinor_qfi(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let n_bar = cfg.n_total;
    let ns = cfg.n_s();
    let q = (ns * (ns + 2.0)).sqrt();
    let (s2, c2) = (theta.sin().powi(2), theta.cos().powi(2));
    let sin_2t_sq = (2.0 * theta).sin().powi(2);
    let f = n_bar * (1.0 + (ns - q * nu.sin()) * c2) * s2
        + 0.5
            * ns
            * (ns
                + (ns + 4.0) * c2
                + 0.25 * (2.0 * q * nu.sin() - 3.0 * ns - 1.0) * sin_2t_sq);
    Ok(f)
}

/// Same QFI in the alternative grouping
///
/// ```text
/// F(θ) = N̄ sin²θ + ¼(N̄ − N_s) G sin²2θ + (N_s/2){N_s + [3 + (N_s+1)cos²θ]cos²θ}
/// ```
/// with `G = N_s − √(N_s(N_s+2)) sin 2ϑ`; algebraically identical to
/// [`spinor_qfi`] with ν = 2ϑ. Kept as an independent regrouping check.
pub fn spinor_qfi_grouped(theta: f64, vartheta: f64, cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let n_bar = cfg.n_total;
    let ns = cfg.n_s();
    let g = ns - (ns * (ns + 2.0)).sqrt() * (2.0 * vartheta).sin();
    let (s2, c2) = (theta.sin().powi(2), theta.cos().powi(2));
    let sin_2t_sq = (2.0 * theta).sin().powi(2);
    Ok(n_bar * s2
        + 0.25 * (n_bar - ns) * g * sin_2t_sq
        + 0.5 * ns * (ns + (3.0 + (ns + 1.0) * c2) * c2))
}

/// Stationary points of a QFI-versus-θ curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalSet {
    /// `x_c = cos 2θ_c` from the stationarity condition.
    pub x_c: f64,
    /// Whether an interior critical angle exists (`|x_c| < 1`).
    pub theta_c_exists: bool,
    /// Candidate optima `(θ, F(θ))`: always θ = 0 and θ = π/2, plus the
    /// interior θ_c when it exists.
    pub candidates: Vec<(f64, f64)>,
    /// Angle of the best candidate (ties resolved toward smaller θ).
    pub theta_opt: f64,
    /// QFI at `theta_opt`.
    pub qfi_opt: f64,
}

fn pick_best(x_c: f64, candidates: Vec<(f64, f64)>) -> CriticalSet {
    let mut best = candidates[0];
    for &(t, f) in candidates.iter().skip(1) {
        if f > best.1 + 1e-12 * best.1.abs().max(1.0) || (f >= best.1 && t < best.0) {
            // strictly better, or tie resolved toward smaller θ
            if f > best.1 || (f - best.1).abs() <= 1e-12 * best.1.abs().max(1.0) {
                best = (t, f);
            }
        }
        if f > best.1 {
            best = (t, f);
        }
    }
    CriticalSet {
        x_c,
        theta_c_exists: x_c.is_finite() && x_c.abs() < 1.0,
        candidates,
        theta_opt: best.0,
        qfi_opt: best.1,
    }
}

/// Critical splitter angle and optimum of the undepleted spinor QFI.
///
/// The interior stationary angle satisfies `cos 2θ_c = x_c` with
/// ```text
/// x_c = [N_s(N_s+4) − 2N̄] / [N_s(2N̄ − 3N_s − 1) − 2(N̄ − N_s) Q sin ν]
/// ```
pub fn spinor_qfi_critical(cfg: &InterferometerConfig) -> Result<CriticalSet> {
    cfg.validate()?;
    let d = derive_params(cfg)?;
    let (n_bar, ns, nu) = (cfg.n_total, d.n_s, d.nu);
    let q = (ns * (ns + 2.0)).sqrt();
    let num = ns * (ns + 4.0) - 2.0 * n_bar;
    let den = ns * (2.0 * n_bar - 3.0 * ns - 1.0) - 2.0 * (n_bar - ns) * q * nu.sin();
    let x_c = num / den;
    let mut candidates = vec![
        (0.0, spinor_qfi(0.0, nu, cfg)?),
        (std::f64::consts::FRAC_PI_2, spinor_qfi(std::f64::consts::FRAC_PI_2, nu, cfg)?),
    ];
    if x_c.is_finite() && x_c.abs() < 1.0 {
        let theta_c = 0.5 * x_c.acos();
        candidates.push((theta_c, spinor_qfi(theta_c, nu, cfg)?));
    }
    Ok(pick_best(x_c, candidates))
}

/// Large-`N̄` asymptote of the critical angle,
/// `θ_c → ¼(π + 2 csc⁻¹(N_s + w√(N_s(N_s+2))))` with side weight `w`.
pub fn theta_c_asymptote(n_s: f64, w: f64) -> f64 {
    let arg = n_s + w * (n_s * (n_s + 2.0)).sqrt();
    0.25 * (std::f64::consts::PI + 2.0 * (1.0 / arg).asin())
}

/// Leading-order peak QFI of the spinor scheme,
/// `F(θ_c) ≈ e^{2r}(1 + coth r)/8 · N̄`.
pub fn spinor_qfi_lo_peak(cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.r <= 0.0 {
        return Err(Error::Domain("LO peak requires r > 0".into()));
    }
    Ok((2.0 * cfg.r).exp() * (1.0 + 1.0 / cfg.r.tanh()) / 8.0 * cfg.n_total)
}

/// Branch-wise estimate of the spinor peak QFI: `N̄ + N_s²/2` for
/// `N_s < ¼` (exact, attained at θ = π/2), otherwise the larger of the
/// LO interior peak and the conventional `F(0)`.
pub fn spinor_qfi_peak_estimate(cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let ns = cfg.n_s();
    if ns < SMALL_NS_BRANCH {
        Ok(cfg.n_total + 0.5 * ns * ns)
    } else {
        Ok(spinor_qfi_lo_peak(cfg)?.max(conventional_qfi(ns)))
    }
}

// ---------------------------------------------------------------------------
// Spinor number-sum signal
// ---------------------------------------------------------------------------

/// `D(θ) = 3 + 4cos²θ + cos²2θ` appearing in the spinor readout moments.
fn d_factor(theta: f64) -> f64 {
    3.0 + 4.0 * theta.cos().powi(2) + (2.0 * theta).cos().powi(2)
}

/// Depleted pump population fed to the splitter, `|α(r)|² = N̄ − 2 sinh²r`.
fn spinor_pump_population(cfg: &InterferometerConfig) -> Result<f64> {
    let a2 = cfg.n_total - 2.0 * cfg.r.sinh().powi(2);
    if a2 < 0.0 {
        return Err(Error::PumpDepleted(format!(
            "N̄ − 2 sinh²r = {a2:.6} < 0 (N̄ = {}, r = {})",
            cfg.n_total, cfg.r
        )));
    }
    Ok(a2)
}

/// Undepleted-pump moments of the side-population readout of the spinor
/// platform at phase φ.
///
/// Mean and slope are full-φ closed forms; the variance is the
/// leading-order `var₂ φ²` expression (see module docs). The φ → 0 series
/// coefficients are always populated.
pub fn spinor_number_sum_moments(
    theta: f64,
    nu: f64,
    phi: f64,
    cfg: &InterferometerConfig,
) -> Result<SignalMoments> {
    cfg.validate()?;
    let a2 = spinor_pump_population(cfg)?;
    let r = cfg.r;
    let (sh2, ch2) = ((2.0 * r).sinh(), (2.0 * r).cosh());
    let sh_sq = r.sinh().powi(2);
    let ch_sq = r.cosh().powi(2);
    let s2t_sq = (2.0 * theta).sin().powi(2);
    let d = d_factor(theta);
    let (sq4, cq4) = ((0.25 * phi).sin(), (0.25 * phi).cos());

    let mean = a2 * s2t_sq * sq4 * sq4 * (ch2 - (nu + 0.5 * phi).sin() * sh2)
        + sq4 * sq4 * (s2t_sq + 4.0 * d * cq4 * cq4 * ch_sq) * sh_sq;

    let slope = 0.5 * a2 * s2t_sq * sq4 * (cq4 * ch2 - (nu + 0.75 * phi).sin() * sh2)
        + cq4 * (2.0 * d * (0.5 * phi).cos() * ch_sq + 0.5 * s2t_sq) * sq4 * sh_sq;

    let eta_nu = ch2 - nu.sin() * sh2;
    let var2 = (a2 * s2t_sq * eta_nu + s2t_sq * sh_sq + 2.0 * d * sh2 * sh2) / 16.0;
    let slope1 = (a2 * s2t_sq * eta_nu + s2t_sq * sh_sq + d * sh2 * sh2) / 8.0;

    Ok(SignalMoments {
        mean,
        slope,
        variance: var2 * phi * phi,
        operating_point: OperatingPoint { theta, nu, phi },
        series: Some(SmallPhiSeries { slope_per_phi: slope1, var_per_phi2: var2 }),
    })
}

/// Small-phase sensitivity `Δφ_N = √var₂ / slope₁` of the number-sum
/// readout, exact in the undepleted regime (valid at any θ including 0).
pub fn delta_phi_n(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    let m = match cfg.platform {
        Platform::Spinor3 => spinor_number_sum_moments(theta, nu, 0.0, cfg)?,
        Platform::Hybrid4 => hybrid_number_sum_moments(theta, nu, 0.0, cfg)?,
    };
    let s = m.series.expect("number-sum moments always carry series");
    if s.slope_per_phi == 0.0 {
        return Err(Error::Domain("zero small-phase slope; no sensitivity".into()));
    }
    Ok(s.var_per_phi2.sqrt() / s.slope_per_phi.abs())
}

/// Two-term large-`N̄` expansion of the spinor number-sum sensitivity,
/// `Δφ_N ≈ 2|csc 2θ| (1/√(ηN̄) + (η − ½) sinh²r/(ηN̄)^{3/2})`.
pub fn spinor_delta_phi_n_lo(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let s2t = (2.0 * theta).sin();
    if s2t == 0.0 {
        return Err(Error::Domain("csc(2θ) expansion undefined at sin 2θ = 0".into()));
    }
    let eta = eta_of(cfg.r, 1.0, nu);
    let en = eta * cfg.n_total;
    Ok(2.0 / s2t.abs() * (1.0 / en.sqrt() + (eta - 0.5) * cfg.r.sinh().powi(2) / en.powf(1.5)))
}

/// Two-term large-`N̄` expansion of the hybrid number-sum sensitivity,
/// `Δφ_N ≈ 2|csc 2θ| [1/√(ηN̄) + ((1+n_f)/√n_f · cosh r sin ν − 2 sinh r) sinh³r/(ηN̄)^{3/2}]`.
pub fn hybrid_delta_phi_n_lo(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let s2t = (2.0 * theta).sin();
    if s2t == 0.0 {
        return Err(Error::Domain("csc(2θ) expansion undefined at sin 2θ = 0".into()));
    }
    let eta = eta_of(cfg.r, eta_weight(Platform::Hybrid4, cfg.n_f), nu);
    let en = eta * cfg.n_total;
    let corr = ((1.0 + cfg.n_f) / cfg.n_f.sqrt() * cfg.r.cosh() * nu.sin() - 2.0 * cfg.r.sinh())
        * cfg.r.sinh().powi(3);
    Ok(2.0 / s2t.abs() * (1.0 / en.sqrt() + corr / en.powf(1.5)))
}

/// Convert signal moments into a sensitivity, adding detection noise Δn in
/// quadrature.
///
/// At finite slope the quadrature formula `√(var + Δn²)/|slope|` is used.
/// At the φ = 0 operating point (slope exactly zero) the φ → 0 series limit
/// `√var₂/slope₁` is returned instead of dividing two vanishing floats; in
/// that limit any Δn > 0 makes the sensitivity diverge, which is reported
/// as a domain error.
pub fn sensitivity_from_moments(m: &SignalMoments, delta_n: f64) -> Result<SensitivityResult> {
    if !(delta_n.is_finite() && delta_n >= 0.0) {
        return Err(Error::Domain(format!("delta_n must be nonnegative, got {delta_n}")));
    }
    let var_floor = -1e-9 * (1.0 + m.mean * m.mean);
    if m.variance < var_floor {
        return Err(Error::Numerics(format!("negative signal variance {}", m.variance)));
    }
    if m.slope != 0.0 {
        let dp = (m.variance.max(0.0) + delta_n * delta_n).sqrt() / m.slope.abs();
        return SensitivityResult::new(dp, 0.0, Method::Analytic, m.operating_point);
    }
    let series = m.series.ok_or_else(|| {
        Error::Domain("zero slope and no φ → 0 series available".into())
    })?;
    if delta_n > 0.0 {
        return Err(Error::Domain(
            "detection noise diverges in the φ → 0 limit; evaluate at finite φ".into(),
        ));
    }
    if series.slope_per_phi == 0.0 {
        return Err(Error::Numerics("series slope is zero; no limit".into()));
    }
    let dp = series.var_per_phi2.max(0.0).sqrt() / series.slope_per_phi.abs();
    SensitivityResult::new(dp, 0.0, Method::Analytic, m.operating_point)
}

// ---------------------------------------------------------------------------
// Hybrid QFI (undepleted pump)
// ---------------------------------------------------------------------------

/// Pump populations fed to the splitters, `(|α|², |β|²) = (fN̄, gN̄) − sinh²r`.
fn hybrid_pump_populations(cfg: &InterferometerConfig) -> Result<(f64, f64)> {
    let (f, g) = cfg.pump_fractions();
    let sh_sq = cfg.r.sinh().powi(2);
    let a2 = f * cfg.n_total - sh_sq;
    let b2 = g * cfg.n_total - sh_sq;
    if a2 < 0.0 || b2 < 0.0 {
        return Err(Error::PumpDepleted(format!(
            "pump populations (fN̄ − sinh²r, gN̄ − sinh²r) = ({a2:.6}, {b2:.6}) not both ≥ 0"
        )));
    }
    Ok((a2, b2))
}

/// Undepleted-pump QFI of the hybrid interferometer at beam-splitter angle
/// θ and canonical phase ν:
///
/// ```text
/// F(θ) = (N̄ − N_s) sin⁴θ + N_s(N_s+2) cos⁴θ
///      + [N̄ + N_s(N̄ − N_s) − 2Q √((fN̄−N_s)(gN̄−N_s)) sin ν] cos²θ sin²θ
/// ```
/// with `Q = √(N_s(N_s+2))`.
pub fn hybrid_qfi(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    if cfg.platform != Platform::Hybrid4 {
        return Err(Error::Domain("hybrid_qfi requires the hybrid platform".into()));
    }
    let n_bar = cfg.n_total;
    let ns = cfg.n_s();
    let (f, g) = cfg.pump_fractions();
    let (fa, gb) = (f * n_bar - ns, g * n_bar - ns);
    if fa < 0.0 || gb < 0.0 {
        return Err(Error::PumpDepleted(format!(
            "(fN̄ − N_s, gN̄ − N_s) = ({fa:.6}, {gb:.6}) not both ≥ 0"
        )));
    }
    let q = (ns * (ns + 2.0)).sqrt();
    let (s2, c2) = (theta.sin().powi(2), theta.cos().powi(2));
    Ok((n_bar - ns) * s2 * s2
        + ns * (ns + 2.0) * c2 * c2
        + (n_bar + ns * (n_bar - ns) - 2.0 * q * (fa * gb).sqrt() * nu.sin()) * c2 * s2)
}

/// Critical beam-splitter angle and optimum of the undepleted hybrid QFI:
/// `cos 2θ_c = x_c` with
/// ```text
/// x_c = [N̄ − N_s(N_s+3)] / [N_s(2N_s + 1 − N̄) + 2Q √((fN̄−N_s)(gN̄−N_s)) sin ν]
/// ```
pub fn hybrid_qfi_critical(cfg: &InterferometerConfig) -> Result<CriticalSet> {
    cfg.validate()?;
    let d = derive_params(cfg)?;
    let (n_bar, ns, nu) = (cfg.n_total, d.n_s, d.nu);
    let (f, g) = cfg.pump_fractions();
    let (fa, gb) = (f * n_bar - ns, g * n_bar - ns);
    if fa < 0.0 || gb < 0.0 {
        return Err(Error::PumpDepleted("pump fraction below N_s".into()));
    }
    let q = (ns * (ns + 2.0)).sqrt();
    let num = n_bar - ns * (ns + 3.0);
    let den = ns * (2.0 * ns + 1.0 - n_bar) + 2.0 * q * (fa * gb).sqrt() * nu.sin();
    let x_c = num / den;
    let mut candidates = vec![
        (0.0, hybrid_qfi(0.0, nu, cfg)?),
        (std::f64::consts::FRAC_PI_2, hybrid_qfi(std::f64::consts::FRAC_PI_2, nu, cfg)?),
    ];
    if x_c.is_finite() && x_c.abs() < 1.0 {
        let theta_c = 0.5 * x_c.acos();
        candidates.push((theta_c, hybrid_qfi(theta_c, nu, cfg)?));
    }
    Ok(pick_best(x_c, candidates))
}

/// Leading-order peak QFI of the hybrid scheme, `F(θ_c) ≈ η²/(4(η−1)) · N̄`.
/// At `n_f = 1` this coincides with [`spinor_qfi_lo_peak`].
pub fn hybrid_qfi_lo_peak(cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let d = derive_params(cfg)?;
    if d.eta <= 1.0 {
        return Err(Error::Domain(format!(
            "LO peak requires η > 1, got η = {} (no interior gain)",
            d.eta
        )));
    }
    Ok(d.eta * d.eta / (4.0 * (d.eta - 1.0)) * cfg.n_total)
}

/// Branch-wise estimate of the hybrid peak QFI: `N̄ − N_s` for `N_s < ¼`
/// (θ = π/2 branch), otherwise the larger of the LO interior peak and the
/// conventional `F(0)`.
pub fn hybrid_qfi_peak_estimate(cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let ns = cfg.n_s();
    if ns < SMALL_NS_BRANCH {
        Ok(cfg.n_total - ns)
    } else {
        Ok(hybrid_qfi_lo_peak(cfg)?.max(conventional_qfi(ns)))
    }
}

/// Undepleted-pump moments of the side-population readout of the hybrid
/// platform at phase φ (same leading-order-variance caveat as
/// [`spinor_number_sum_moments`]).
pub fn hybrid_number_sum_moments(
    theta: f64,
    nu: f64,
    phi: f64,
    cfg: &InterferometerConfig,
) -> Result<SignalMoments> {
    cfg.validate()?;
    if cfg.platform != Platform::Hybrid4 {
        return Err(Error::Domain("hybrid moments require the hybrid platform".into()));
    }
    let (a2, b2) = hybrid_pump_populations(cfg)?;
    let ab = (a2 * b2).sqrt();
    let r = cfg.r;
    let (sh2, ch2) = ((2.0 * r).sinh(), (2.0 * r).cosh());
    let sh_sq = r.sinh().powi(2);
    let ch_sq = r.cosh().powi(2);
    let (st_sq, ct_sq) = (theta.sin().powi(2), theta.cos().powi(2));
    let s2t_sq = (2.0 * theta).sin().powi(2);

    let mean = 2.0 * ct_sq * ct_sq * (0.5 * phi).sin().powi(2) * sh2 * sh2
        + s2t_sq
            * (0.25 * phi).sin().powi(2)
            * ((a2 + b2) * ch2 + 2.0 * sh_sq - 2.0 * ab * (nu + 0.5 * phi).sin() * sh2);

    let slope = ((a2 + b2) * st_sq * (0.5 * phi).sin() * ch2
        + 2.0 * (st_sq * (0.5 * phi).sin() + 2.0 * ct_sq * phi.sin() * ch_sq) * sh_sq
        - 4.0 * ab * st_sq * (nu + 0.75 * phi).sin() * (0.25 * phi).sin() * sh2)
        * ct_sq;

    let b_coef = (a2 + b2 + 1.0) * ch2 - 2.0 * ab * nu.sin() * sh2;
    let var2 = 0.125
        * ct_sq
        * (4.0 * ct_sq * (4.0 * r).cosh() - 2.0 * (1.0 + ct_sq) + 2.0 * st_sq * b_coef);
    let slope1 = 2.0
        * (ct_sq * ct_sq * sh2 * sh2 / 2.0
            + s2t_sq / 16.0 * ((a2 + b2) * ch2 + 2.0 * sh_sq - 2.0 * ab * nu.sin() * sh2));

    Ok(SignalMoments {
        mean,
        slope,
        variance: var2 * phi * phi,
        operating_point: OperatingPoint { theta, nu, phi },
        series: Some(SmallPhiSeries { slope_per_phi: slope1, var_per_phi2: var2 }),
    })
}

/// Exact φ → 0 sensitivity of the hybrid number-sum readout in closed form,
///
/// ```text
/// Δφ = sec²θ √(2cosh4r − 1 − sec²θ + B tan²θ) / |cosh4r − 1 + (B − 1)tan²θ|
/// B = (|α|² + |β|² + 1) cosh2r − 2αβ sinν sinh2r
/// ```
/// Equal to `√var₂/slope₁` from [`hybrid_number_sum_moments`]; kept as an
/// independent regrouping check.
pub fn hybrid_small_phi_closed(theta: f64, nu: f64, cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    let (a2, b2) = hybrid_pump_populations(cfg)?;
    let ab = (a2 * b2).sqrt();
    let r = cfg.r;
    let ch4 = (4.0 * r).cosh();
    let b = (a2 + b2 + 1.0) * (2.0 * r).cosh() - 2.0 * ab * nu.sin() * (2.0 * r).sinh();
    let sec2 = 1.0 / theta.cos().powi(2);
    let t2 = theta.tan().powi(2);
    let num = sec2 * (2.0 * ch4 - 1.0 - sec2 + b * t2).sqrt();
    let den = (ch4 - 1.0 + (b - 1.0) * t2).abs();
    if den == 0.0 {
        return Err(Error::Domain("vanishing small-phase slope".into()));
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// QFI from general (possibly depleted) moments
// ---------------------------------------------------------------------------

/// Pair-correlator phase term `A(ϑ) = e^{−2iϑ}⟨pair⟩ + c.c.`
pub fn general_a_of(m: &GeneralMoments, vartheta: f64) -> f64 {
    2.0 * (C64::from_polar(1.0, -2.0 * vartheta) * m.pair).re
}

/// QFI evaluated from exact prepared-state moments (no undepleted-pump
/// assumption). `vartheta` enters only through `A(ϑ)`; the maximizing
/// choice gives `A = −2|pair|`.
pub fn qfi_from_general_moments(
    m: &GeneralMoments,
    theta: f64,
    vartheta: f64,
    platform: Platform,
) -> Result<f64> {
    m.validate()?;
    let a = general_a_of(m, vartheta);
    let (s2, c2) = (theta.sin().powi(2), theta.cos().powi(2));
    match platform {
        Platform::Spinor3 => {
            let sin_2t_sq = (2.0 * theta).sin().powi(2);
            Ok(0.25 * (1.0 + c2).powi(2) * m.var_ns()
                + (m.var_n0() + 0.25 * (0.5 * m.mean_ns_sq + m.mean_ns)) * s2 * s2
                + (1.0 + 2.0 * c2) * s2 * m.cov()
                + 0.25
                    * (m.mean_n0 * (m.mean_ns + 1.0) + 0.5 * m.mean_ns - a)
                    * sin_2t_sq)
        }
        Platform::Hybrid4 => Ok(m.var_n0() * s2 * s2
            + m.var_ns() * c2 * c2
            + (m.mean_n0 * (m.mean_ns + 1.0) + m.mean_ns + 3.0 * m.cov() - 2.0 * a) * c2 * s2),
    }
}

/// Interior critical angle `x_c = cos 2θ_c` of the spinor QFI from general
/// moments, evaluated at the optimal pair phase (`A = −2|pair|`):
///
/// ```text
/// x_c = [⟨N_s⟩(⟨N_s⟩+2) − 5Var(N_s) + 8Var(N_0) + 8Cov]
///     / [8(Var(N_0) − ⟨N_0⟩(⟨N_s⟩+1) − 2Cov + A) + ⟨N_s⟩(⟨N_s⟩−2) + 3Var(N_s)]
/// ```
pub fn spinor_general_x_c(m: &GeneralMoments) -> f64 {
    let a = -2.0 * m.pair.norm();
    let num = m.mean_ns * (m.mean_ns + 2.0) - 5.0 * m.var_ns() + 8.0 * m.var_n0() + 8.0 * m.cov();
    let den = 8.0 * (m.var_n0() - m.mean_n0 * (m.mean_ns + 1.0) - 2.0 * m.cov() + a)
        + m.mean_ns * (m.mean_ns - 2.0)
        + 3.0 * m.var_ns();
    num / den
}

/// Interior critical angle of the hybrid QFI from general moments at the
/// optimal pair phase. Obtained by differentiating the hybrid
/// [`qfi_from_general_moments`] form directly:
///
/// ```text
/// ∂F/∂θ = sin2θ [(Var(N_0) − Var(N_s)) + (K − Var(N_0) − Var(N_s)) cos2θ]
/// x_c = [Var(N_s) − Var(N_0)] / [K − Var(N_0) − Var(N_s)]
/// K = ⟨N_0⟩(⟨N_s⟩+1) + ⟨N_s⟩ + 3Cov − 2A
/// ```
/// On undepleted moments this reduces exactly to the closed-form `x_c` of
/// [`hybrid_qfi_critical`].
pub fn hybrid_general_x_c(m: &GeneralMoments) -> f64 {
    let a = -2.0 * m.pair.norm();
    let k = m.mean_n0 * (m.mean_ns + 1.0) + m.mean_ns + 3.0 * m.cov() - 2.0 * a;
    (m.var_ns() - m.var_n0()) / (k - m.var_n0() - m.var_ns())
}

// ---------------------------------------------------------------------------
// Loschmidt-echo readout (restricted measurement)
// ---------------------------------------------------------------------------

/// Sensitivity of the Loschmidt-echo readout (projection back onto the
/// initial state), which resolves less than the full QFI when the pump has
/// number fluctuations:
///
/// `Δφ = 1/√(F(θ) − Var(N̂₀)|_{ψ₀} sin⁴θ)` with `Var(N̂₀)|_{ψ₀} = N̄` for a
/// coherent pump. See [`loschmidt_sensitivity_with_pump_var`] for other
/// input states (e.g. a number-state pump with zero variance).
pub fn loschmidt_restricted_sensitivity(
    theta: f64,
    cfg: &InterferometerConfig,
) -> Result<SensitivityResult> {
    loschmidt_sensitivity_with_pump_var(theta, cfg, cfg.n_total)
}

/// [`loschmidt_restricted_sensitivity`] with an explicit initial pump
/// number variance.
pub fn loschmidt_sensitivity_with_pump_var(
    theta: f64,
    cfg: &InterferometerConfig,
    pump_var: f64,
) -> Result<SensitivityResult> {
    if !(pump_var.is_finite() && pump_var >= 0.0) {
        return Err(Error::Domain(format!("pump_var must be nonnegative, got {pump_var}")));
    }
    let d = derive_params(cfg)?;
    let f = spinor_qfi(theta, d.nu, cfg)? - pump_var * theta.sin().powi(4);
    if f <= 0.0 {
        return Err(Error::Domain(format!(
            "restricted information F(θ) − Var(N̂₀) sin⁴θ = {f:.6} is not positive"
        )));
    }
    SensitivityResult::new(
        1.0 / f.sqrt(),
        0.0,
        Method::Analytic,
        OperatingPoint { theta, nu: d.nu, phi: 0.0 },
    )
}

/// Large-`N̄` minimum of the coherent-pump Loschmidt sensitivity,
/// `Δφ → 2 e^{−r}/√N̄` at θ = π/4, ν = 3π/2.
pub fn loschmidt_lo_minimum(cfg: &InterferometerConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(2.0 * (-cfg.r).exp() / cfg.n_total.sqrt())
}

// ---------------------------------------------------------------------------
// Detection noise
// ---------------------------------------------------------------------------

/// Leading-order variance and slope polynomials of the pumped-up readout at
/// the operating point ν = 3π/2, θ = π/4, as functions of φ, with side
/// weight `w` (1 for spinor, `2√n_f/(1+n_f)` for hybrid).
///
/// Returns `(v₁, s₁)` such that `Δφ·√N̄ = √v₁/|s₁|` to leading order in
/// `1/N̄`. Detection noise Δn ≲ N̄ does not enter at this order, which is
/// the robustness statement probed by the detection study.
pub fn pumped_detection_lo(r: f64, phi: f64, w: f64) -> (f64, f64) {
    let c = (0.5 * phi).cos();
    let s2 = r.sinh().powi(2);
    let vaa = 2.0 * c.powi(3) * s2 * (s2 + 1.0) * (2.0 * s2 + 1.0)
        - c * c * s2 * (8.0 * s2 * s2 + 8.0 * s2 + 1.0) / 2.0
        - c * (8.0 * s2.powi(3) + 20.0 * s2 * s2 + 12.0 * s2 + 1.0) / 2.0
        + (s2 + 1.0) * (8.0 * s2 * s2 + 8.0 * s2 + 1.0) / 2.0;
    let vab = r.sinh()
        * r.cosh()
        * (8.0 * c.powi(4) * s2 * s2 + 8.0 * c.powi(4) * s2
            - 8.0 * c.powi(3) * s2 * s2
            - 4.0 * c.powi(3) * s2
            - 8.0 * c * c * s2 * s2
            - 16.0 * c * c * s2
            - 3.0 * c * c
            + 8.0 * c * s2 * s2
            + 12.0 * c * s2
            + 4.0 * c
            - 1.0);
    let v1 = vaa + 0.5 * w * vab;
    let s1 = 0.25 * (0.5 * phi).sin() * ((2.0 * r).cosh() + w * (2.0 * c - 1.0) * (2.0 * r).sinh());
    (v1, s1)
}

/// Scaled LO detection sensitivity `Δφ·√N̄ = √v₁/|s₁|` at ν = 3π/2, θ = π/4.
pub fn pumped_detection_lo_curve(r: f64, phi: f64, w: f64) -> Result<f64> {
    let (v1, s1) = pumped_detection_lo(r, phi, w);
    if s1 == 0.0 {
        return Err(Error::Domain("zero readout slope".into()));
    }
    if v1 < 0.0 {
        return Err(Error::Numerics(format!("negative LO variance {v1}")));
    }
    Ok(v1.sqrt() / s1.abs())
}

/// φ-optimized pumped-up sensitivity under detection noise. To leading
/// order the optimum stays at φ → 0 with `Δφ = 2/√(ηN̄)` independent of Δn;
/// the LO curve is scanned over φ to confirm no interior point beats the
/// limit, and the better of the two is returned as `(φ_opt, Δφ)`.
pub fn pumped_detection_optimum(cfg: &InterferometerConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let w = eta_weight(cfg.platform, cfg.n_f);
    let eta = eta_of(cfg.r, w, 1.5 * std::f64::consts::PI);
    let limit = 2.0 / (eta * cfg.n_total).sqrt();
    let mut best = (0.0, limit);
    let n = 128;
    for i in 1..n {
        let phi = 1e-3 + (std::f64::consts::PI - 2e-3) * i as f64 / n as f64;
        let dp = pumped_detection_lo_curve(cfg.r, phi, w)? / cfg.n_total.sqrt();
        if dp < best.1 {
            best = (phi, dp);
        }
    }
    Ok(best)
}

/// Conventional SU(1,1) sensitivity at phase φ under detection noise Δn:
///
/// ```text
/// Δφ(φ) = √( ⅛ csch⁴2r { 4[2Δn² − sin²(φ/2)] csc²φ + cosh8r sec²(φ/2) } − 1 )
/// ```
pub fn conventional_detection_curve(r: f64, delta_n: f64, phi: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::Domain("requires r > 0".into()));
    }
    if phi.sin() == 0.0 || (0.5 * phi).cos() == 0.0 {
        return Err(Error::Domain(format!("curve undefined at φ = {phi}")));
    }
    let csch2 = 1.0 / (2.0 * r).sinh();
    let inner = 4.0 * (2.0 * delta_n * delta_n - (0.5 * phi).sin().powi(2)) / phi.sin().powi(2)
        + (8.0 * r).cosh() / (0.5 * phi).cos().powi(2);
    let rad = 0.125 * csch2.powi(4) * inner - 1.0;
    if rad < 0.0 {
        return Err(Error::Numerics(format!("negative radicand {rad} at φ = {phi}")));
    }
    Ok(rad.sqrt())
}

/// Optimal operating point and sensitivity of the conventional SU(1,1)
/// interferometer under detection noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvDetectionOptimum {
    /// Optimal phase `φ_opt = 2 asin √(2Δn/(2Δn + √(2(2Δn² + cosh8r − 1))))`.
    pub phi_opt: f64,
    /// `Δφ(φ_opt) = |csch2r| √(1 + (Δn/2)(csch²2r Δn + √(4coth²2r + csch⁴2r Δn²)))`.
    pub delta_phi: f64,
}

/// Closed-form optimum of [`conventional_detection_curve`].
pub fn conventional_detection_noise(r: f64, delta_n: f64) -> Result<ConvDetectionOptimum> {
    if r <= 0.0 {
        return Err(Error::Domain("requires r > 0".into()));
    }
    if !(delta_n.is_finite() && delta_n >= 0.0) {
        return Err(Error::Domain(format!("delta_n must be nonnegative, got {delta_n}")));
    }
    let phi_opt = if delta_n == 0.0 {
        0.0
    } else {
        let root = (2.0 * (2.0 * delta_n * delta_n + (8.0 * r).cosh() - 1.0)).sqrt();
        2.0 * (2.0 * delta_n / (2.0 * delta_n + root)).sqrt().asin()
    };
    let csch2 = 1.0 / (2.0 * r).sinh();
    let coth2 = 1.0 / (2.0 * r).tanh();
    let delta_phi = csch2.abs()
        * (1.0
            + 0.5
                * delta_n
                * (csch2 * csch2 * delta_n
                    + (4.0 * coth2 * coth2 + csch2.powi(4) * delta_n * delta_n).sqrt()))
        .sqrt();
    Ok(ConvDetectionOptimum { phi_opt, delta_phi })
}

// ---------------------------------------------------------------------------
// Tests: anchored against high-precision reference evaluations
// ---------------------------------------------------------------------------
