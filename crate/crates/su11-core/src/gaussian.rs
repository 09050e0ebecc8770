//! Gaussian (Bogoliubov) moment-propagation engine.
//!
//! Propagates the mean vector and the second-moment matrices of the mode
//! operators exactly through every stage of the echo protocol. Splitter and
//! phase stages are number-conserving linear maps; the parametric stage is
//! linearized around a classical pump whose magnitude is bookkept at the
//! mean-field level: after each parametric stage the pump mean loses exactly
//! the side population the stage created, so the echo stage restores it and
//! `|⟨â₀⟩|² = N̄ − N_s` holds between the two parametric stages.
//!
//! Unlike the closed forms in [`crate::analytic`] (whose variance is the
//! leading `var₂ φ²` term), this engine produces the **full-φ variance** of
//! the readout, and it works at any differential phase `φ_d`.
//!
//! # State convention
//!
//! `mean_i = ⟨â_i⟩`, `normal_cov N_ij = ⟨δâ_i† δâ_j⟩`,
//! `anomalous M_ij = ⟨δâ_i δâ_j⟩` with `δâ = â − ⟨â⟩`. A stage acts as the
//! affine Bogoliubov map `â_i → Σ_j A_ij â_j + B_ij â_j†`, under which
//!
//! ```text
//! μ' = A μ + B μ̄
//! N' = Ā N Aᵀ + Ā M̄ Bᵀ + B̄ M Aᵀ + B̄ (I + Nᵀ) Bᵀ
//! M' = A M Aᵀ + A (I + Nᵀ) Bᵀ + B N Aᵀ + B M̄ Bᵀ
//! ```
//!
//! # Phase bookkeeping
//!
//! The initial pump mean carries the pump phase (spinor `√N̄ e^{iϑ_p}`;
//! hybrid `√(fN̄) e^{iϑ_pa+ϑ_pb}` and `√(gN̄)` — only the sum enters any
//! observable), and the parametric stage carries the squeezing phase ϑ_sq
//! for both the forward and the echo pass:
//! `â_± → â_± cosh r − i e^{−iϑ_sq} â_∓† sinh r`, echo `r → −r`. The physics
//! then depends on the phases only through the canonical combination ν of
//! [`crate::config`].

use crate::analytic;
use crate::config::{
    derive_params, GeneralMoments, InterferometerConfig, Method, OperatingPoint, Platform,
    SensitivityResult, SignalMoments,
};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

/// Central-difference step for the φ-slope of the chain (one Richardson
/// extrapolation is applied on top, giving O(h⁴) truncation).
pub const SLOPE_STEP: f64 = 1e-4;

/// Phase at which [`sensitivity_numeric`] evaluates the readout when the
/// configuration requests the φ → 0 operating point (`cfg.phi = 0`).
pub const DEFAULT_PHI_EVAL: f64 = 1e-3;

/// Relative tolerance of the physicality checks ([`GaussianState::check_physical`]).
pub const PHYSICAL_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// Mean vector and second-moment matrices of an `n_modes`-mode Gaussian
/// state (see module docs for the index conventions).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    /// Number of bosonic modes.
    pub n_modes: usize,
    /// `⟨â_i⟩`.
    pub mean: Array1<C64>,
    /// Normal covariance `N_ij = ⟨δâ_i† δâ_j⟩` (Hermitian, PSD).
    pub normal_cov: Array2<C64>,
    /// Anomalous covariance `M_ij = ⟨δâ_i δâ_j⟩` (symmetric).
    pub anomalous: Array2<C64>,
}

impl GaussianState {
    /// The `n`-mode vacuum.
    pub fn vacuum(n: usize) -> Self {
        GaussianState {
            n_modes: n,
            mean: Array1::zeros(n),
            normal_cov: Array2::zeros((n, n)),
            anomalous: Array2::zeros((n, n)),
        }
    }

    /// Coherent state with the given mean vector (vacuum fluctuations).
    pub fn coherent(mean: Array1<C64>) -> Self {
        let n = mean.len();
        GaussianState {
            n_modes: n,
            mean,
            normal_cov: Array2::zeros((n, n)),
            anomalous: Array2::zeros((n, n)),
        }
    }

    /// Population `⟨n̂_i⟩ = |μ_i|² + N_ii` of mode `i`.
    pub fn population(&self, i: usize) -> f64 {
        self.mean[i].norm_sqr() + self.normal_cov[[i, i]].re
    }

    /// Number covariance `Cov(n̂_i, n̂_j)` by Wick's theorem:
    ///
    /// ```text
    /// Cov(n̂_i, n̂_j) = 2Re[μ̄_i μ̄_j M_ij] + 2Re[μ_i μ̄_j N_ij]
    ///               + δ_ij (|μ_i|² + N_ii) + |M_ij|² + |N_ij|²
    /// ```
    pub fn number_cov(&self, i: usize, j: usize) -> f64 {
        let mu_i = self.mean[i];
        let mu_j = self.mean[j];
        let n_ij = self.normal_cov[[i, j]];
        let m_ij = self.anomalous[[i, j]];
        let mut c = 2.0 * (mu_i.conj() * mu_j.conj() * m_ij).re
            + 2.0 * (mu_i * mu_j.conj() * n_ij).re
            + m_ij.norm_sqr()
            + n_ij.norm_sqr();
        if i == j {
            c += mu_i.norm_sqr() + self.normal_cov[[i, i]].re;
        }
        c
    }

    /// Mean and variance of the population sum `Σ_{i ∈ modes} n̂_i`.
    pub fn number_sum_moments(&self, modes: &[usize]) -> (f64, f64) {
        let mean: f64 = modes.iter().map(|&i| self.population(i)).sum();
        let var: f64 = modes
            .iter()
            .flat_map(|&i| modes.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.number_cov(i, j))
            .sum();
        (mean, var)
    }

    /// Apply the affine Bogoliubov map `(A, B)` (module docs give the
    /// moment-update rules).
    pub fn apply_affine(&mut self, a: &Array2<C64>, b: &Array2<C64>) {
        let n = self.n_modes;
        let id = Array2::<C64>::eye(n);
        let ac = a.mapv(|z| z.conj());
        let bc = b.mapv(|z| z.conj());
        let at = a.t();
        let bt = b.t();
        let ncov = &self.normal_cov;
        let m = &self.anomalous;
        let mc = m.mapv(|z| z.conj());
        let i_nt = &id + &ncov.t();

        let new_mean = a.dot(&self.mean) + b.dot(&self.mean.mapv(|z| z.conj()));
        let new_n = ac.dot(ncov).dot(&at)
            + ac.dot(&mc).dot(&bt)
            + bc.dot(m).dot(&at)
            + bc.dot(&i_nt).dot(&bt);
        let new_m = a.dot(m).dot(&at)
            + a.dot(&i_nt).dot(&bt)
            + b.dot(ncov).dot(&at)
            + b.dot(&mc).dot(&bt);

        self.mean = new_mean;
        self.normal_cov = new_n;
        self.anomalous = new_m;
    }

    /// Verify the state is a physical Gaussian state to relative tolerance
    /// `tol`: finite entries, Hermitian `N`, symmetric `M`, and positive
    /// semidefiniteness of the fluctuation block matrix
    /// `Σ = [[I + Nᵀ, M], [M̄, N]]` (checked by diagonally pivoted
    /// elimination; pure states sit on the PSD boundary and must pass).
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        let n = self.mean.len();
        if self.n_modes != n
            || self.normal_cov.dim() != (n, n)
            || self.anomalous.dim() != (n, n)
        {
            return Err(Error::Numerics("inconsistent Gaussian state dimensions".into()));
        }
        for z in self
            .mean
            .iter()
            .chain(self.normal_cov.iter())
            .chain(self.anomalous.iter())
        {
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(Error::Numerics("non-finite entry in Gaussian state".into()));
            }
        }
        let scale = 1.0
            + (0..n)
                .map(|i| self.normal_cov[[i, i]].norm())
                .fold(0.0, f64::max);
        for i in 0..n {
            for j in 0..n {
                if (self.normal_cov[[i, j]] - self.normal_cov[[j, i]].conj()).norm() > tol * scale
                {
                    return Err(Error::Numerics(format!(
                        "normal covariance is not Hermitian at ({i},{j})"
                    )));
                }
                if (self.anomalous[[i, j]] - self.anomalous[[j, i]]).norm() > tol * scale {
                    return Err(Error::Numerics(format!(
                        "anomalous covariance is not symmetric at ({i},{j})"
                    )));
                }
            }
        }

        // Σ = [[I + Nᵀ, M], [M̄, N]] ⪰ 0.
        let m2 = 2 * n;
        let mut sig = Array2::<C64>::zeros((m2, m2));
        for i in 0..n {
            for j in 0..n {
                sig[[i, j]] = self.normal_cov[[j, i]];
                sig[[i, n + j]] = self.anomalous[[i, j]];
                sig[[n + i, j]] = self.anomalous[[i, j]].conj();
                sig[[n + i, n + j]] = self.normal_cov[[i, j]];
            }
            sig[[i, i]] += C64::from(1.0);
        }
        let floor = tol * (1.0 + (0..m2).map(|i| sig[[i, i]].re).fold(0.0, f64::max));
        for k in 0..m2 {
            let p = (k..m2)
                .max_by(|&i, &j| sig[[i, i]].re.total_cmp(&sig[[j, j]].re))
                .expect("non-empty pivot range");
            if p != k {
                for j in 0..m2 {
                    sig.swap([k, j], [p, j]);
                }
                for i in 0..m2 {
                    sig.swap([i, k], [i, p]);
                }
            }
            let d = sig[[k, k]].re;
            if d < -floor {
                return Err(Error::Numerics(format!(
                    "fluctuation matrix is not positive semidefinite (pivot {d:.3e})"
                )));
            }
            if d <= floor {
                // Rank-deficient (pure-state) tail: the remaining block must
                // vanish for Σ to stay PSD.
                let zero_tol = (floor.abs() * scale).sqrt() + floor.abs();
                for i in k..m2 {
                    for j in k..m2 {
                        if sig[[i, j]].norm() > zero_tol {
                            return Err(Error::Numerics(format!(
                                "fluctuation matrix is not positive semidefinite \
                                 (nonzero row under zero pivot: {:.3e})",
                                sig[[i, j]].norm()
                            )));
                        }
                    }
                }
                break;
            }
            for i in (k + 1)..m2 {
                for j in (k + 1)..m2 {
                    let v = sig[[i, k]] * sig[[j, k]].conj() / d;
                    sig[[i, j]] -= v;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// One element of the five-stage echo protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    /// Parametric amplifier on the side-mode pair:
    /// `â_± → â_± cosh r − i e^{−i phase} â_∓† sinh r` (negative `r` is the
    /// echo pass). Pump means are depleted/restored by the created side
    /// population.
    ParametricAmp { r: f64, phase: f64 },
    /// Pump–side mixer: three-mode tritter (spinor) or a beam splitter per
    /// species (hybrid), both with mixing angle θ and phase ϑ.
    Splitter { theta: f64, vartheta: f64 },
    /// Mode-local phase imprint `â_k → e^{−i p_k} â_k`.
    PhaseShift { phases: Vec<f64> },
}

/// Build the `(A, B)` matrices of a stage on the given platform.
pub(crate) fn stage_matrices(
    stage: &Stage,
    platform: Platform,
) -> Result<(Array2<C64>, Array2<C64>)> {
    let n = platform.n_modes();
    let mut a = Array2::<C64>::eye(n);
    let mut b = Array2::<C64>::zeros((n, n));
    match *stage {
        Stage::ParametricAmp { r, phase } => {
            let ch = C64::from(r.cosh());
            let sq = -C64::i() * C64::from_polar(1.0, -phase) * r.sinh();
            let sides = platform.side_modes();
            let (s1, s2) = (sides[0], sides[1]);
            a[[s1, s1]] = ch;
            a[[s2, s2]] = ch;
            b[[s1, s2]] = sq;
            b[[s2, s1]] = sq;
        }
        Stage::Splitter { theta, vartheta } => match platform {
            Platform::Spinor3 => {
                let c = C64::from(theta.cos());
                let up = -C64::i()
                    * C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, vartheta)
                    * theta.sin();
                let dn = -C64::i()
                    * C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, -vartheta)
                    * theta.sin();
                let cc = C64::from((0.5 * theta).cos().powi(2));
                let ss = C64::from(-(0.5 * theta).sin().powi(2));
                a[[0, 0]] = c;
                a[[0, 1]] = up;
                a[[0, 2]] = up;
                a[[1, 0]] = dn;
                a[[2, 0]] = dn;
                a[[1, 1]] = cc;
                a[[2, 2]] = cc;
                a[[1, 2]] = ss;
                a[[2, 1]] = ss;
            }
            Platform::Hybrid4 => {
                let c = C64::from(theta.cos());
                let up = -C64::i() * C64::from_polar(1.0, vartheta) * theta.sin();
                let dn = -C64::i() * C64::from_polar(1.0, -vartheta) * theta.sin();
                for (p, s) in [(0usize, 2usize), (1, 3)] {
                    a[[p, p]] = c;
                    a[[s, s]] = c;
                    a[[p, s]] = up;
                    a[[s, p]] = dn;
                }
            }
        },
        Stage::PhaseShift { ref phases } => {
            if phases.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "phase stage carries {} phases for {n} modes",
                    phases.len()
                )));
            }
            for (k, &p) in phases.iter().enumerate() {
                a[[k, k]] = C64::from_polar(1.0, -p);
            }
        }
    }
    Ok((a, b))
}

/// Reduce a pump mean from `|μ|²` to `|μ|² − delta` quanta, keeping its
/// phase; negative `delta` restores energy (echo pass).
fn deplete(state: &mut GaussianState, pump: usize, delta: f64) -> Result<()> {
    let mu = state.mean[pump];
    let m2 = mu.norm_sqr();
    let target = m2 - delta;
    let tol = 1e-9 * (1.0 + m2 + delta.abs());
    if target < -tol {
        return Err(Error::PumpDepleted(format!(
            "parametric stage draws {delta:.6} quanta from pump mode {pump} holding {m2:.6}"
        )));
    }
    if m2 > 0.0 {
        state.mean[pump] = mu * (target.max(0.0) / m2).sqrt();
    } else if target > tol {
        return Err(Error::Numerics(
            "cannot restore pump energy onto a zero-mean pump".into(),
        ));
    }
    Ok(())
}

/// Apply a stage in place. For the parametric stage the pump mean(s) are
/// depleted by the side population the stage created (spinor: both sides
/// draw on â₀; hybrid: â₁ draws on â₀ and b̂₁ on b̂₀).
pub fn apply_stage(
    state: &mut GaussianState,
    stage: &Stage,
    platform: Platform,
) -> Result<()> {
    if state.n_modes != platform.n_modes() {
        return Err(Error::InvalidConfig(format!(
            "state has {} modes but platform {platform} has {}",
            state.n_modes,
            platform.n_modes()
        )));
    }
    let (a, b) = stage_matrices(stage, platform)?;
    if let Stage::ParametricAmp { .. } = stage {
        let sides = platform.side_modes();
        let before: Vec<f64> = sides.iter().map(|&s| state.population(s)).collect();
        state.apply_affine(&a, &b);
        match platform {
            Platform::Spinor3 => {
                let delta: f64 = sides
                    .iter()
                    .zip(&before)
                    .map(|(&s, &b0)| state.population(s) - b0)
                    .sum();
                deplete(state, 0, delta)?;
            }
            Platform::Hybrid4 => {
                let da = state.population(sides[0]) - before[0];
                let db = state.population(sides[1]) - before[1];
                deplete(state, 0, da)?;
                deplete(state, 1, db)?;
            }
        }
    } else {
        state.apply_affine(&a, &b);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The five-stage chain
// ---------------------------------------------------------------------------

/// Initial coherent pump state of a configuration (side modes in vacuum).
pub fn initial_state(cfg: &InterferometerConfig) -> Result<GaussianState> {
    cfg.validate_for_oracle()?;
    let mut mean = Array1::<C64>::zeros(cfg.platform.n_modes());
    match cfg.platform {
        Platform::Spinor3 => {
            mean[0] = C64::from_polar(cfg.n_total.sqrt(), cfg.vartheta_pump);
        }
        Platform::Hybrid4 => {
            let (f, g) = cfg.pump_fractions();
            mean[0] = C64::from_polar((f * cfg.n_total).sqrt(), cfg.vartheta_pump);
            mean[1] = C64::from((g * cfg.n_total).sqrt());
        }
    }
    Ok(GaussianState::coherent(mean))
}

/// Stage list of the echo protocol at interferometric phase `phi` and
/// differential phase `phi_diff` (the side modes acquire `φ/2 ± φ_d/2`).
/// `cfg.phi` is ignored; callers pass the phase explicitly.
pub fn chain_stages(cfg: &InterferometerConfig, phi: f64, phi_diff: f64) -> Vec<Stage> {
    let mut phases = vec![0.0; cfg.platform.n_modes()];
    let sides = cfg.platform.side_modes();
    phases[sides[0]] = 0.5 * (phi + phi_diff);
    phases[sides[1]] = 0.5 * (phi - phi_diff);
    vec![
        Stage::ParametricAmp { r: cfg.r, phase: cfg.vartheta_sq },
        Stage::Splitter { theta: cfg.theta, vartheta: cfg.vartheta },
        Stage::PhaseShift { phases },
        Stage::Splitter { theta: -cfg.theta, vartheta: cfg.vartheta },
        Stage::ParametricAmp { r: -cfg.r, phase: cfg.vartheta_sq },
    ]
}

/// Run the full five-stage chain and return the output state.
pub fn run_chain(
    cfg: &InterferometerConfig,
    phi: f64,
    phi_diff: f64,
) -> Result<GaussianState> {
    let mut state = initial_state(cfg)?;
    for stage in &chain_stages(cfg, phi, phi_diff) {
        apply_stage(&mut state, stage, cfg.platform)?;
    }
    Ok(state)
}

/// Mean and variance of the side-population readout `N̂_s` after the chain,
/// with the output state checked for physicality.
pub fn chain_signal(cfg: &InterferometerConfig, phi: f64, phi_diff: f64) -> Result<(f64, f64)> {
    let state = run_chain(cfg, phi, phi_diff)?;
    state.check_physical(PHYSICAL_TOL)?;
    Ok(state.number_sum_moments(cfg.platform.side_modes()))
}

/// Richardson-extrapolated central difference `df/dx` at `x` with base step
/// `h`: `(4 D_{h/2} − D_h)/3` where `D_h = (f(x+h) − f(x−h))/2h`.
pub fn richardson_slope(
    mut f: impl FnMut(f64) -> Result<f64>,
    x: f64,
    h: f64,
) -> Result<f64> {
    let mut central = |hh: f64| -> Result<f64> {
        Ok((f(x + hh)? - f(x - hh)?) / (2.0 * hh))
    };
    let d1 = central(h)?;
    let d2 = central(0.5 * h)?;
    Ok((4.0 * d2 - d1) / 3.0)
}

/// Full signal moments (mean, φ-slope, full-φ variance) at `(phi, phi_diff)`.
/// The slope is a numerical φ-derivative (step [`SLOPE_STEP`] + Richardson);
/// no φ → 0 series is attached — use the closed-form engine for that.
pub fn chain_moments(
    cfg: &InterferometerConfig,
    phi: f64,
    phi_diff: f64,
) -> Result<SignalMoments> {
    let (mean, variance) = chain_signal(cfg, phi, phi_diff)?;
    let slope = richardson_slope(
        |p| chain_signal(cfg, p, phi_diff).map(|(m, _)| m),
        phi,
        SLOPE_STEP,
    )?;
    let nu = derive_params(cfg)?.nu;
    Ok(SignalMoments {
        mean,
        slope,
        variance,
        operating_point: OperatingPoint { theta: cfg.theta, nu, phi },
        series: None,
    })
}

/// Phase sensitivity `√(Var(N̂_s) + Δn²)/|∂_φ⟨N̂_s⟩|` from the propagated
/// chain, evaluated at `cfg.phi` if positive, else at [`DEFAULT_PHI_EVAL`].
pub fn sensitivity_numeric(
    cfg: &InterferometerConfig,
    delta_n: f64,
) -> Result<SensitivityResult> {
    if !(delta_n.is_finite() && delta_n >= 0.0) {
        return Err(Error::Domain(format!("delta_n must be nonnegative, got {delta_n}")));
    }
    let phi_eval = if cfg.phi > 0.0 { cfg.phi } else { DEFAULT_PHI_EVAL };
    let m = chain_moments(cfg, phi_eval, 0.0)?;
    if m.slope == 0.0 {
        return Err(Error::Domain("zero readout slope; no sensitivity".into()));
    }
    let dp = (m.variance.max(0.0) + delta_n * delta_n).sqrt() / m.slope.abs();
    SensitivityResult::new(dp, 0.0, Method::Gaussian, m.operating_point)
}

// ---------------------------------------------------------------------------
// Prepared-state moments and QFI
// ---------------------------------------------------------------------------

/// State after the first parametric stage only (the probe whose moments fix
/// the quantum Fisher information).
pub fn prepared_state(cfg: &InterferometerConfig) -> Result<GaussianState> {
    let mut state = initial_state(cfg)?;
    apply_stage(
        &mut state,
        &Stage::ParametricAmp { r: cfg.r, phase: cfg.vartheta_sq },
        cfg.platform,
    )?;
    Ok(state)
}

/// Spinor pair correlator `⟨â₀² â₊† â₋†⟩` of a Gaussian state by Wick's
/// theorem (modes 0 = pump, 1 = +, 2 = −).
fn pair_spinor(st: &GaussianState) -> C64 {
    let mu0 = st.mean[0];
    let mup = st.mean[1];
    let mum = st.mean[2];
    let m00 = st.anomalous[[0, 0]];
    let mpm = st.anomalous[[1, 2]];
    let n_p0 = st.normal_cov[[1, 0]];
    let n_m0 = st.normal_cov[[2, 0]];
    mu0 * mu0 * mup.conj() * mum.conj()
        + mu0 * mu0 * mpm.conj()
        + mup.conj() * mum.conj() * m00
        + m00 * mpm.conj()
        + 2.0 * mu0 * mup.conj() * n_m0
        + 2.0 * mu0 * mum.conj() * n_p0
        + 2.0 * n_p0 * n_m0
}

/// Hybrid pair correlator `⟨â₀ b̂₀ â₁† b̂₁†⟩` of a Gaussian state by Wick's
/// theorem (modes 0 = â₀, 1 = b̂₀, 2 = â₁, 3 = b̂₁).
fn pair_hybrid(st: &GaussianState) -> C64 {
    let (ma, mb) = (st.mean[0], st.mean[1]);
    let (mc, md) = (st.mean[2], st.mean[3]);
    let m_ab = st.anomalous[[0, 1]];
    let m_cd = st.anomalous[[2, 3]];
    let n = &st.normal_cov;
    ma * mb * mc.conj() * md.conj()
        + ma * mb * m_cd.conj()
        + ma * mc.conj() * n[[3, 1]]
        + ma * md.conj() * n[[2, 1]]
        + mb * mc.conj() * n[[3, 0]]
        + mb * md.conj() * n[[2, 0]]
        + mc.conj() * md.conj() * m_ab
        + m_ab * m_cd.conj()
        + n[[2, 0]] * n[[3, 1]]
        + n[[3, 0]] * n[[2, 1]]
}

/// Exact moments of the prepared probe (pump/side populations, their second
/// moments, and the platform pair correlator) from the Gaussian engine.
pub fn prepared_general_moments(cfg: &InterferometerConfig) -> Result<GeneralMoments> {
    let st = prepared_state(cfg)?;
    st.check_physical(PHYSICAL_TOL)?;
    let pumps = cfg.platform.pump_modes();
    let sides = cfg.platform.side_modes();
    let (mean_n0, var_n0) = st.number_sum_moments(pumps);
    let (mean_ns, var_ns) = st.number_sum_moments(sides);
    let cov: f64 = pumps
        .iter()
        .flat_map(|&p| sides.iter().map(move |&s| (p, s)))
        .map(|(p, s)| st.number_cov(p, s))
        .sum();
    let pair = match cfg.platform {
        Platform::Spinor3 => pair_spinor(&st),
        Platform::Hybrid4 => pair_hybrid(&st),
    };
    let m = GeneralMoments {
        mean_n0,
        mean_n0_sq: var_n0 + mean_n0 * mean_n0,
        mean_ns,
        mean_ns_sq: var_ns + mean_ns * mean_ns,
        mean_n0_ns: cov + mean_n0 * mean_ns,
        pair,
    };
    m.validate()?;
    Ok(m)
}

/// QFI at splitter angle θ and phase ϑ from the Gaussian prepared-state
/// moments (`cfg.theta`/`cfg.vartheta` are ignored so callers can scan the
/// splitter without re-propagating the probe).
pub fn qfi_gaussian(cfg: &InterferometerConfig, theta: f64, vartheta: f64) -> Result<f64> {
    let m = prepared_general_moments(cfg)?;
    analytic::qfi_from_general_moments(&m, theta, vartheta, cfg.platform)
}

// ---------------------------------------------------------------------------
// Dephasing: Gauss–Hermite averages over differential-phase noise
// ---------------------------------------------------------------------------

/// Base node count of the Gauss–Hermite rule used by the dephasing average.
pub const GH_NODES: usize = 41;
/// Refined node count used to confirm quadrature convergence.
pub const GH_NODES_FINE: usize = 81;
/// Maximum relative Δφ shift tolerated when the quadrature is refined from
/// [`GH_NODES`] to [`GH_NODES_FINE`]; a larger shift is a convergence error.
pub const GH_DRIFT_TOL: f64 = 1e-4;
/// Lower edge of the probe-phase search window in [`phase_noise_sensitivity`]
/// (the slope vanishes at φ = 0, so the window excludes it).
pub const PHI_SEARCH_MIN: f64 = 1e-3;

/// Orthonormal Hermite polynomial `p_n(x)` (orthonormal under weight
/// `e^{−x²}`) together with `p_{n−1}(x)`, by the stable three-term
/// recurrence `p_{k+1} = x√(2/(k+1)) p_k − √(k/(k+1)) p_{k−1}`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0; // p_{-1}
    let mut cur = std::f64::consts::PI.powf(-0.25); // p_0
    for k in 0..n {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule,
/// `∫ f(x) e^{−x²} dx ≈ Σᵢ wᵢ f(xᵢ)`, nodes ascending. Roots are found by
/// Newton iteration on the orthonormal recurrence (derivative
/// `p_n' = √(2n) p_{n−1}`), weights from `wᵢ = 2/p_n'(xᵢ)²`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "Gauss–Hermite rule needs at least 2 nodes, got {n}"
        )));
    }
    let nf = n as f64;
    let dnorm = (2.0 * nf).sqrt();
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Positive roots in descending order, seeded by the standard asymptotic
    // guesses and the outward spacing of the previous two roots.
    let half = n.div_ceil(2);
    let mut found: Vec<f64> = Vec::with_capacity(half);
    for i in 0..half {
        let mut z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => found[0] - 1.14 * nf.powf(0.426) / found[0],
            2 => 1.86 * found[1] - 0.86 * found[0],
            3 => 1.91 * found[2] - 0.91 * found[1],
            _ => 2.0 * found[i - 1] - found[i - 2],
        };
        let mut converged = false;
        for _ in 0..100 {
            let (p, pm) = hermite_orthonormal(n, z);
            let step = p / (dnorm * pm);
            z -= step;
            if step.abs() <= 1e-14 * (1.0 + z.abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged(format!(
                "Gauss–Hermite Newton iteration stalled at node {i} of the {n}-point rule"
            )));
        }
        if z.abs() < 1e-10 {
            z = 0.0; // odd-order central root is exactly zero
        }
        found.push(z);
        let (_, pm) = hermite_orthonormal(n, z);
        let dp = dnorm * pm;
        let w = 2.0 / (dp * dp);
        nodes[n - 1 - i] = z;
        weights[n - 1 - i] = w;
        nodes[i] = -z;
        weights[i] = w;
    }
    Ok((nodes, weights))
}

/// Mean and total variance of the side-sum readout with the differential
/// phase dephased, `φ_d ~ Normal(0, σ²)`, averaged with the supplied
/// Gauss–Hermite rule. The total variance is the law-of-total-variance sum
/// `E[Var] + Var[E]`: fluctuations of the fringe mean are real readout
/// noise for an observer who cannot resolve single shots of φ_d.
fn dephased_signal(
    cfg: &InterferometerConfig,
    phi: f64,
    sigma: f64,
    nodes: &[f64],
    weights: &[f64],
) -> Result<(f64, f64)> {
    if sigma == 0.0 {
        return chain_signal(cfg, phi, 0.0);
    }
    let scale = std::f64::consts::SQRT_2 * sigma;
    let norm = std::f64::consts::PI.sqrt();
    let (mut m1, mut m2, mut ev) = (0.0, 0.0, 0.0);
    for (&x, &w) in nodes.iter().zip(weights) {
        let (m, v) = chain_signal(cfg, phi, scale * x)?;
        m1 += w * m;
        m2 += w * m * m;
        ev += w * v;
    }
    m1 /= norm;
    m2 /= norm;
    ev /= norm;
    Ok((m1, ev + (m2 - m1 * m1).max(0.0)))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!(
            "dephasing width must be finite and nonnegative, got {sigma}"
        )));
    }
    Ok(())
}

/// Signal moments at probe phase `phi` under differential-phase dephasing
/// of rms width `sigma` ([`GH_NODES`]-point average). The slope is the φ
/// derivative of the dephased mean.
pub fn dephased_chain_moments(
    cfg: &InterferometerConfig,
    phi: f64,
    sigma: f64,
) -> Result<SignalMoments> {
    check_sigma(sigma)?;
    let (nodes, weights) = gauss_hermite(GH_NODES)?;
    let (mean, variance) = dephased_signal(cfg, phi, sigma, &nodes, &weights)?;
    let slope = richardson_slope(
        |p| dephased_signal(cfg, p, sigma, &nodes, &weights).map(|(m, _)| m),
        phi,
        SLOPE_STEP,
    )?;
    let nu = derive_params(cfg)?.nu;
    Ok(SignalMoments {
        mean,
        slope,
        variance,
        operating_point: OperatingPoint { theta: cfg.theta, nu, phi },
        series: None,
    })
}

fn dephased_delta_phi(
    cfg: &InterferometerConfig,
    phi: f64,
    sigma: f64,
    nodes: &[f64],
    weights: &[f64],
) -> Result<f64> {
    let (_, variance) = dephased_signal(cfg, phi, sigma, nodes, weights)?;
    let slope = richardson_slope(
        |p| dephased_signal(cfg, p, sigma, nodes, weights).map(|(m, _)| m),
        phi,
        SLOPE_STEP,
    )?;
    if slope == 0.0 {
        return Err(Error::Domain(format!("zero dephased readout slope at φ = {phi}")));
    }
    Ok(variance.max(0.0).sqrt() / slope.abs())
}

/// Effective objective value for probe phases where the undepleted-pump
/// chain leaves its domain (the echo stage would overdraw the pump, or the
/// dephased slope vanishes); large enough that such phases never win the
/// search, finite so the search bookkeeping stays well ordered.
const PHI_PENALTY: f64 = 1e300;

/// Readout sensitivity under Gaussian dephasing of the differential phase,
/// minimized over the probe phase `φ ∈ [PHI_SEARCH_MIN, π − PHI_SEARCH_MIN]`.
///
/// Without dephasing the optimum sits at the lower edge of the window (the
/// echo dark port); dephasing injects mean-fringe noise that does not vanish
/// with φ, pushing the optimum to an interior phase. Probe phases outside
/// the undepleted-pump domain are treated as infeasible rather than fatal.
/// The minimum found with the base rule is re-evaluated with the refined
/// rule; a relative shift beyond [`GH_DRIFT_TOL`] reports
/// [`Error::NotConverged`].
pub fn phase_noise_sensitivity(
    cfg: &InterferometerConfig,
    sigma_varphi: f64,
) -> Result<SensitivityResult> {
    check_sigma(sigma_varphi)?;
    let (nodes, weights) = gauss_hermite(GH_NODES)?;
    let ext = crate::optimize::minimize_1d(
        |p| match dephased_delta_phi(cfg, p, sigma_varphi, &nodes, &weights) {
            Ok(v) => Ok(v),
            Err(Error::PumpDepleted(_) | Error::Domain(_)) => Ok(PHI_PENALTY),
            Err(e) => Err(e),
        },
        PHI_SEARCH_MIN,
        std::f64::consts::PI - PHI_SEARCH_MIN,
        48,
    )?;
    if ext.value >= PHI_PENALTY {
        return Err(Error::Domain(
            "no feasible probe phase in the search window".into(),
        ));
    }
    let (fine_nodes, fine_weights) = gauss_hermite(GH_NODES_FINE)?;
    let refined = dephased_delta_phi(cfg, ext.x, sigma_varphi, &fine_nodes, &fine_weights)?;
    if (refined - ext.value).abs() > GH_DRIFT_TOL * refined.abs() {
        return Err(Error::NotConverged(format!(
            "dephasing quadrature not converged: Δφ moved from {} to {} on node refinement",
            ext.value, refined
        )));
    }
    let nu = derive_params(cfg)?.nu;
    SensitivityResult::new(
        refined,
        0.0,
        Method::Gaussian,
        OperatingPoint { theta: cfg.theta, nu, phi: ext.x },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::wrap_2pi;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn spinor_cfg(n_bar: f64, r: f64, theta: f64, nu: f64) -> InterferometerConfig {
        let mut cfg = InterferometerConfig::spinor(n_bar, r);
        cfg.theta = theta;
        cfg.vartheta = 0.5 * nu; // ϑ_p = ϑ_sq = 0 ⇒ ν = 2ϑ
        cfg
    }

    fn hybrid_cfg(n_bar: f64, r: f64, theta: f64, nu: f64, n_f: f64) -> InterferometerConfig {
        let mut cfg = InterferometerConfig::hybrid(n_bar, r, n_f);
        cfg.theta = theta;
        cfg.vartheta = 0.5 * nu;
        cfg
    }

    const NU_OPT: f64 = 4.71238898038469; // 3π/2

    #[test]
    fn splitter_matrices_are_unitary() {
        for platform in [Platform::Spinor3, Platform::Hybrid4] {
            for (theta, vartheta) in [(0.4, 1.1), (-0.8, 2.9), (1.3, -0.6)] {
                let (a, _b) = stage_matrices(&Stage::Splitter { theta, vartheta }, platform)
                    .unwrap();
                let prod = a.mapv(|z| z.conj()).t().dot(&a);
                let id = Array2::<C64>::eye(platform.n_modes());
                for (x, y) in prod.iter().zip(id.iter()) {
                    assert_abs_diff_eq!(x.re, y.re, epsilon = 1e-14);
                    assert_abs_diff_eq!(x.im, y.im, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn spinor_chain_matches_closed_form_and_frozen_variance() {
        // (n̄, r, θ, ν, φ, full-φ variance)
        let rows: [(f64, f64, f64, f64, f64, f64); 3] = [
            (1e4, 1.0, std::f64::consts::FRAC_PI_4, NU_OPT, 0.2, 211.0554482934414),
            (200.0, 0.8, 0.6, 2.1, 0.9, 46.95791310852892),
            (1000.0, 0.5, 1.1, 5.5, 0.05, 0.24100574633098792),
        ];
        for (n_bar, r, theta, nu, phi, var) in rows {
            let cfg = spinor_cfg(n_bar, r, theta, nu);
            let m = chain_moments(&cfg, phi, 0.0).unwrap();
            let closed = analytic::spinor_number_sum_moments(theta, nu, phi, &cfg).unwrap();
            assert_relative_eq!(m.mean, closed.mean, max_relative = 1e-10);
            assert_relative_eq!(m.slope, closed.slope, max_relative = 1e-9);
            assert_relative_eq!(m.variance, var, max_relative = 1e-10);
        }
    }

    #[test]
    fn hybrid_chain_matches_closed_form_and_frozen_variance() {
        let rows: [(f64, f64, f64, f64, f64, f64, f64); 3] = [
            (1e4, 1.0, std::f64::consts::FRAC_PI_4, NU_OPT, 0.2, 1.0, 210.8305003244318),
            (500.0, 0.8, 0.6, 2.1, 0.9, 0.25, 120.51412905164236),
            (1000.0, 0.5, 1.1, 5.5, 0.05, 4.0, 0.22303469813872356),
        ];
        for (n_bar, r, theta, nu, phi, n_f, var) in rows {
            let cfg = hybrid_cfg(n_bar, r, theta, nu, n_f);
            let m = chain_moments(&cfg, phi, 0.0).unwrap();
            let closed = analytic::hybrid_number_sum_moments(theta, nu, phi, &cfg).unwrap();
            assert_relative_eq!(m.mean, closed.mean, max_relative = 1e-10);
            assert_relative_eq!(m.slope, closed.slope, max_relative = 1e-9);
            assert_relative_eq!(m.variance, var, max_relative = 1e-10);
        }
    }

    /// (n̄, r, θ, ν, φ, φ_d, mean, slope, var)
    type PhidRow = (f64, f64, f64, f64, f64, f64, f64, f64, f64);

    #[test]
    fn differential_phase_rows_match_frozen_values() {
        let spinor_rows: [PhidRow; 3] = [
            (
                1e4, 1.0, std::f64::consts::FRAC_PI_4, NU_OPT, 0.2, 0.35,
                210.2678545777695, 1890.3678399394453, 254.28723127120145,
            ),
            (
                200.0, 0.8, 0.6, 2.1, 0.9, -0.5,
                25.71625031400569, 28.185893134941935, 113.71568194239663,
            ),
            (
                1e4, 2.0, 0.3, NU_OPT, 0.7, 0.9,
                5359.410677925858, 14673.03351510291, 1580858.4561689927,
            ),
        ];
        for (n_bar, r, theta, nu, phi, phi_d, mean, slope, var) in spinor_rows {
            let cfg = spinor_cfg(n_bar, r, theta, nu);
            let m = chain_moments(&cfg, phi, phi_d).unwrap();
            assert_relative_eq!(m.mean, mean, max_relative = 1e-10);
            assert_relative_eq!(m.slope, slope, max_relative = 1e-8);
            assert_relative_eq!(m.variance, var, max_relative = 1e-10);
        }

        // Hybrid rows additionally carry n_f ahead of the moments.
        let hybrid_rows: [(PhidRow, f64); 2] = [
            (
                (
                    1e4, 1.0, std::f64::consts::FRAC_PI_4, NU_OPT, 0.2, 0.35,
                    194.4432126916087, 1834.840842945461, 230.6094346114261,
                ),
                1.0,
            ),
            (
                (
                    500.0, 0.8, 0.6, 2.1, 0.9, -0.5,
                    92.70879124104991, 119.04494733423994, 302.2875217387,
                ),
                0.25,
            ),
        ];
        for ((n_bar, r, theta, nu, phi, phi_d, mean, slope, var), n_f) in hybrid_rows {
            let cfg = hybrid_cfg(n_bar, r, theta, nu, n_f);
            let m = chain_moments(&cfg, phi, phi_d).unwrap();
            assert_relative_eq!(m.mean, mean, max_relative = 1e-10);
            assert_relative_eq!(m.slope, slope, max_relative = 1e-8);
            assert_relative_eq!(m.variance, var, max_relative = 1e-9);
        }
    }

    #[test]
    fn echo_restores_input_at_zero_phase() {
        for cfg in [
            spinor_cfg(1e4, 1.2, 0.9, 2.2),
            hybrid_cfg(1e4, 1.2, 0.9, 2.2, 0.7),
        ] {
            let out = run_chain(&cfg, 0.0, 0.0).unwrap();
            let init = initial_state(&cfg).unwrap();
            for i in 0..out.n_modes {
                assert_abs_diff_eq!(
                    (out.mean[i] - init.mean[i]).norm(),
                    0.0,
                    epsilon = 1e-9 * cfg.n_total.sqrt()
                );
            }
            for z in out.normal_cov.iter().chain(out.anomalous.iter()) {
                assert_abs_diff_eq!(z.norm(), 0.0, epsilon = 1e-10);
            }
            let (mean, var) = out.number_sum_moments(cfg.platform.side_modes());
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn observables_depend_only_on_canonical_phase() {
        // Shift ϑ_p and ϑ_sq while co-rotating ϑ to hold ν fixed.
        let nu = NU_OPT;
        let phi = 0.2;
        let mut reference: Option<(f64, f64)> = None;
        for (vp, vsq) in [(0.0, 0.0), (0.3, 0.0), (0.0, 0.4), (0.5, -0.7)] {
            let mut cfg = InterferometerConfig::spinor(5e3, 1.0);
            cfg.vartheta_pump = vp;
            cfg.vartheta_sq = vsq;
            cfg.vartheta = 0.5 * (nu + 2.0 * vp + vsq);
            let (mean, var) = chain_signal(&cfg, phi, 0.0).unwrap();
            match reference {
                None => reference = Some((mean, var)),
                Some((m0, v0)) => {
                    assert_relative_eq!(mean, m0, max_relative = 1e-12);
                    assert_relative_eq!(var, v0, max_relative = 1e-12);
                }
            }
        }

        let mut reference_h: Option<(f64, f64)> = None;
        for (vp_sum, vsq) in [(0.0, 0.0), (0.8, 0.0), (0.0, -0.6), (0.4, 0.9)] {
            let mut cfg = InterferometerConfig::hybrid(5e3, 1.0, 0.5);
            cfg.vartheta_pump = vp_sum;
            cfg.vartheta_sq = vsq;
            cfg.vartheta = 0.5 * (nu + vp_sum + vsq);
            let (mean, var) = chain_signal(&cfg, phi, 0.0).unwrap();
            match reference_h {
                None => reference_h = Some((mean, var)),
                Some((m0, v0)) => {
                    assert_relative_eq!(mean, m0, max_relative = 1e-12);
                    assert_relative_eq!(var, v0, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn prepared_spinor_moments_equal_linearized_pump_set() {
        let mut cfg = InterferometerConfig::spinor(1e4, 1.0);
        cfg.vartheta_pump = 0.3;
        cfg.vartheta_sq = 0.4;
        let ns = cfg.n_s();
        let m = prepared_general_moments(&cfg).unwrap();
        assert_relative_eq!(m.mean_n0, 1e4 - ns, max_relative = 1e-12);
        assert_relative_eq!(m.var_n0(), 1e4 - ns, max_relative = 1e-9);
        assert_relative_eq!(m.mean_ns, ns, max_relative = 1e-12);
        assert_relative_eq!(m.mean_ns_sq, 2.0 * ns * (ns + 1.0), max_relative = 1e-12);
        assert_relative_eq!(m.var_ns(), (2.0f64).sinh().powi(2), max_relative = 1e-12);
        assert_abs_diff_eq!(m.cov(), 0.0, epsilon = 1e-8 * 1e4);
        let expected_pair = C64::from_polar(
            (1e4 - ns) * 1.0f64.sinh() * 1.0f64.cosh(),
            std::f64::consts::FRAC_PI_2 + 2.0 * 0.3 + 0.4,
        );
        assert_relative_eq!(m.pair.re, expected_pair.re, max_relative = 1e-10);
        assert_relative_eq!(m.pair.im, expected_pair.im, max_relative = 1e-10);
    }

    #[test]
    fn gaussian_qfi_matches_closed_forms() {
        // Spinor: exact agreement with the undepleted closed form.
        let cfg = InterferometerConfig::spinor(1e4, 1.0);
        for (theta, vartheta) in [
            (0.3, 1.1),
            (std::f64::consts::FRAC_PI_4, 0.75 * std::f64::consts::PI),
            (0.7, 2.0),
            (1.5, 0.4),
        ] {
            let g = qfi_gaussian(&cfg, theta, vartheta).unwrap();
            let a = analytic::spinor_qfi(theta, wrap_2pi(2.0 * vartheta), &cfg).unwrap();
            assert_relative_eq!(g, a, max_relative = 1e-10);
        }
        // Phase plumbing: nonzero pump/squeezing phases shift ν consistently.
        let mut cfgp = InterferometerConfig::spinor(1e4, 1.0);
        cfgp.vartheta_pump = 0.25;
        cfgp.vartheta_sq = -0.6;
        let g = qfi_gaussian(&cfgp, 0.8, 1.3).unwrap();
        let nu = wrap_2pi(2.0 * (1.3 - 0.25) + 0.6);
        let a = analytic::spinor_qfi(0.8, nu, &cfgp).unwrap();
        assert_relative_eq!(g, a, max_relative = 1e-10);

        // Hybrid: agreement within the pump-depletion band O(N_s/N̄), and
        // converging to the closed form as N̄ grows.
        for n_f in [1.0, 0.25] {
            let cfg = InterferometerConfig::hybrid(1e4, 1.0, n_f);
            let ns = cfg.n_s();
            let g = qfi_gaussian(&cfg, 0.9, 0.75 * std::f64::consts::PI).unwrap();
            let a = analytic::hybrid_qfi(0.9, NU_OPT, &cfg).unwrap();
            assert_relative_eq!(g, a, max_relative = 4.0 * ns / 1e4);
        }
        let big = InterferometerConfig::hybrid(1e8, 1.0, 1.0);
        let g = qfi_gaussian(&big, 0.9, 0.75 * std::f64::consts::PI).unwrap();
        let a = analytic::hybrid_qfi(0.9, NU_OPT, &big).unwrap();
        assert_relative_eq!(g, a, max_relative = 1e-6);
    }

    #[test]
    fn sensitivity_approaches_small_phase_limit() {
        // 2 e^{−r}/√N̄ at θ = π/4, ν = 3π/2, N̄ = 10⁶, r = 1.
        let cfg = InterferometerConfig::spinor(1e6, 1.0);
        let s = sensitivity_numeric(&cfg, 0.0).unwrap();
        assert_relative_eq!(s.delta_phi, 7.357588823428846e-4, max_relative = 1e-4);
        assert_eq!(s.method, Method::Gaussian);
        assert_relative_eq!(s.operating_point.phi, DEFAULT_PHI_EVAL);
    }

    #[test]
    fn variance_series_consistency_at_small_phase() {
        let cfg = InterferometerConfig::spinor(1e4, 1.0);
        let (_, var) = chain_signal(&cfg, 1e-3, 0.0).unwrap();
        let series = analytic::spinor_number_sum_moments(
            cfg.theta,
            NU_OPT,
            0.0,
            &cfg,
        )
        .unwrap()
        .series
        .unwrap();
        assert_relative_eq!(var, series.var_per_phi2 * 1e-6, max_relative = 5e-3);
    }

    #[test]
    fn chain_rejects_overdepleted_pump() {
        // N_s = 2 sinh²2 ≈ 26.3 exceeds N̄ = 10.
        let cfg = InterferometerConfig::spinor(10.0, 2.0);
        let err = run_chain(&cfg, 0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::PumpDepleted(_)), "got {err}");
    }

    #[test]
    fn physicality_check_flags_corruption() {
        let cfg = InterferometerConfig::spinor(1e3, 0.8);
        let mut st = prepared_state(&cfg).unwrap();
        st.check_physical(PHYSICAL_TOL).unwrap();

        // Negative population: Σ acquires a negative pivot.
        st.normal_cov[[1, 1]] = C64::from(-0.5);
        st.normal_cov[[2, 2]] = C64::from(-0.5);
        assert!(st.check_physical(PHYSICAL_TOL).is_err());

        // Non-Hermitian normal block.
        let mut st2 = prepared_state(&cfg).unwrap();
        st2.normal_cov[[0, 1]] = C64::new(0.3, 0.0);
        assert!(st2.check_physical(PHYSICAL_TOL).is_err());

        // Overstated pair correlations: uncertainty violation.
        let mut st3 = prepared_state(&cfg).unwrap();
        st3.anomalous[[1, 2]] *= 2.0;
        st3.anomalous[[2, 1]] *= 2.0;
        assert!(st3.check_physical(PHYSICAL_TOL).is_err());
    }

    #[test]
    fn gauss_hermite_rule_integrates_gaussian_moments() {
        let rt_pi = std::f64::consts::PI.sqrt();
        for n in [5, 41, 81] {
            let (x, w) = gauss_hermite(n).unwrap();
            assert_eq!(x.len(), n);
            assert!(x.windows(2).all(|p| p[0] < p[1]), "nodes not ascending");
            let s0: f64 = w.iter().sum();
            let s2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
            let s4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
            let s1: f64 = x.iter().zip(&w).map(|(x, w)| w * x).sum();
            // ∫e^{−x²} = √π, ∫x²e^{−x²} = √π/2, ∫x⁴e^{−x²} = 3√π/4.
            assert_relative_eq!(s0, rt_pi, max_relative = 1e-13);
            assert_relative_eq!(s2, 0.5 * rt_pi, max_relative = 1e-13);
            assert_relative_eq!(s4, 0.75 * rt_pi, max_relative = 1e-13);
            assert_abs_diff_eq!(s1, 0.0, epsilon = 1e-14);
        }
        // An analytic non-polynomial check: ∫e^{−x²}cos(2bx)dx = √π e^{−b²}.
        let (x, w) = gauss_hermite(GH_NODES).unwrap();
        let b = 1.3;
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * (2.0 * b * x).cos()).sum();
        assert_relative_eq!(s, rt_pi * (-b * b).exp(), max_relative = 1e-12);
        assert!(gauss_hermite(1).is_err());
    }

    #[test]
    fn dephased_moments_match_frozen_values() {
        // 41-node Gauss–Hermite averages at (N̄ = 1e4, r = 1, θ = π/4,
        // ν = 3π/2, φ = 0.5, σ = 0.3), pinned against an independent
        // high-precision evaluation of the same averages.
        let cfg = spinor_cfg(1e4, 1.0, std::f64::consts::FRAC_PI_4, NU_OPT);
        let m = dephased_chain_moments(&cfg, 0.5, 0.3).unwrap();
        assert_relative_eq!(m.mean, 1170.9283321691905, max_relative = 1e-9);
        assert_relative_eq!(m.slope, 4528.192173579348, max_relative = 1e-9);
        assert_relative_eq!(m.variance, 5281.177789026976, max_relative = 1e-9);
        assert_relative_eq!(
            m.variance.sqrt() / m.slope,
            0.01604872533115191,
            max_relative = 1e-9
        );

        let hcfg = hybrid_cfg(1e4, 1.0, std::f64::consts::FRAC_PI_4, NU_OPT, 1.0);
        let h = dephased_chain_moments(&hcfg, 0.5, 0.3).unwrap();
        assert_relative_eq!(h.mean, 1138.4942915426686, max_relative = 1e-9);
        assert_relative_eq!(h.slope, 4430.315498249779, max_relative = 1e-9);
        assert_relative_eq!(h.variance, 2293.0017151632082, max_relative = 1e-9);
        assert_relative_eq!(
            h.variance.sqrt() / h.slope,
            0.010808552461614034,
            max_relative = 1e-9
        );
    }

    #[test]
    fn zero_dephasing_reduces_to_noiseless_chain() {
        let cfg = spinor_cfg(2e3, 0.9, 0.7, 2.2);
        let plain = chain_moments(&cfg, 0.4, 0.0).unwrap();
        let deph = dephased_chain_moments(&cfg, 0.4, 0.0).unwrap();
        assert_relative_eq!(deph.mean, plain.mean, max_relative = 1e-14);
        assert_relative_eq!(deph.slope, plain.slope, max_relative = 1e-12);
        assert_relative_eq!(deph.variance, plain.variance, max_relative = 1e-14);

        // The σ = 0 optimum sits at the lower window edge, which is exactly
        // where sensitivity_numeric evaluates a zero-φ configuration.
        let base = InterferometerConfig::spinor(1e4, 1.0);
        let opt = phase_noise_sensitivity(&base, 0.0).unwrap();
        let plain = sensitivity_numeric(&base, 0.0).unwrap();
        assert_relative_eq!(opt.delta_phi, plain.delta_phi, max_relative = 1e-6);
        assert_relative_eq!(opt.operating_point.phi, DEFAULT_PHI_EVAL, max_relative = 1e-9);
        assert_eq!(opt.method, Method::Gaussian);
        assert_eq!(opt.stderr, 0.0);
    }

    #[test]
    fn dephasing_monotonically_degrades_sensitivity() {
        let cfg = InterferometerConfig::spinor(1e3, 1.0);
        let mut last = 0.0;
        for (i, sigma) in [0.0, 0.05, 0.2, 0.5, 1.0].into_iter().enumerate() {
            let res = phase_noise_sensitivity(&cfg, sigma).unwrap();
            assert!(
                i == 0 || res.delta_phi >= last * (1.0 - 1e-12),
                "Δφ({sigma}) = {} < previous {last}",
                res.delta_phi
            );
            last = res.delta_phi;
        }
        // Large dephasing pushes the optimal probe phase into the interior.
        let noisy = phase_noise_sensitivity(&cfg, 0.5).unwrap();
        assert!(noisy.operating_point.phi > 10.0 * PHI_SEARCH_MIN);
    }

    #[test]
    fn dephasing_rejects_bad_width() {
        let cfg = InterferometerConfig::spinor(1e3, 1.0);
        assert!(matches!(
            phase_noise_sensitivity(&cfg, -0.1).unwrap_err(),
            Error::Domain(_)
        ));
        assert!(matches!(
            dephased_chain_moments(&cfg, 0.3, f64::NAN).unwrap_err(),
            Error::Domain(_)
        ));
    }
}
