//! Exact Fock-space oracle: dense state-vector evolution in conserved
//! number sectors, with no linearization of the pump.
//!
//! # Sector decomposition
//!
//! Both platforms conserve quantities that block-diagonalize the dynamics:
//!
//! * spinor — the total atom number `N = n₀ + n₊ + n₋`; a sector holds all
//!   occupations `(n₀, n₊, n₋)` with that sum, dimension `(N+1)(N+2)/2`;
//! * hybrid — the per-species totals `C₁ = n_{a0} + n_{a1}` and
//!   `C₂ = n_{b0} + n_{b1}`; a sector is indexed by the side occupations
//!   `(k, l) = (n_{a1}, n_{b1})`, dimension `(C₁+1)(C₂+1)`.
//!
//! A coherent pump is treated as a **Poisson mixture over sectors**. This
//! is exact for every observable used here (populations, their powers, and
//! the pair correlators), because all of them conserve the sector charges
//! and therefore never see intersector coherences.
//!
//! # Stages
//!
//! The parametric stage evolves the microscopic mixing Hamiltonian for unit
//! time (echo: time −1),
//!
//! ```text
//! spinor:  H = κ_t [e^{iχ} â₀² â₊† â₋† + h.c.] + κ_t (n̂₀ − ½)(n̂₊ + n̂₋)
//!              + q_t (n̂₊ + n̂₋),      κ_t = r/N̄,  q_t = −κ_t (N̄ − ½)
//! hybrid:  H = κ_t [e^{iχ} â₀ b̂₀ â₁† b̂₁† + h.c.],  κ_t = r/√(N_{a0} N_{b0})
//! ```
//!
//! `q_t` cancels the mean-field phase rotation of the side modes so the
//! undepleted limit is a pure two-mode squeezer with parameter `r`. The
//! gauge phase `χ = −(2ϑ_p + ϑ_sq)` (spinor) or `−(ϑ_{p,a}+ϑ_{p,b}+ϑ_sq)`
//! (hybrid) makes the sector-basis chain — in which pump phases drop out —
//! reproduce the configured canonical phase `ν` of [`crate::config`]
//! exactly. The splitter stage applies `exp(−iθK̂)` with the tritter /
//! beam-splitter generator; the phase stage is diagonal.
//!
//! # Propagation
//!
//! `exp(−itH)v` is evaluated by scaling-and-squaring on the vector: the
//! step is split into `2^s` substeps with `s = ⌈log₂‖tH‖_∞⌉` and each
//! substep is a Taylor series of the matrix exponential applied to the
//! vector, truncated when two consecutive term norms fall below 1e-16 of
//! the running result. Unitarity (norm conservation) is verified after
//! every stage.

use crate::analytic;
use crate::config::{
    derive_params, GeneralMoments, InterferometerConfig, OperatingPoint, Platform, SignalMoments,
};
use crate::error::{Error, Result};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

/// Probability mass a pump mixture may drop (beyond-cap plus floored
/// sectors).
pub const MIXTURE_TAIL_TOL: f64 = 1e-8;

/// Largest sector charge the oracle will enumerate; configurations whose
/// Poisson weights need more are rejected as infeasible.
pub const SECTOR_CAP: usize = 120;

/// Per-sector weight below which a sector is dropped from the mixture
/// (the dropped mass is recorded in the tail).
const WEIGHT_FLOOR: f64 = 1e-13;

/// Central-difference step for the φ-slope of the Fock chain.
pub const FOCK_SLOPE_STEP: f64 = 1e-3;

const TAYLOR_MAX_TERMS: usize = 60;
const TAYLOR_TOL: f64 = 1e-16;

// ---------------------------------------------------------------------------
// Sectors and states
// ---------------------------------------------------------------------------

/// A conserved-charge sector of the platform Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectorId {
    /// Spinor sector with total atom number `n`.
    Spinor { n: usize },
    /// Hybrid sector with per-species totals `c1` (atoms) and `c2` (light).
    Hybrid { c1: usize, c2: usize },
}

impl SectorId {
    /// Dimension of the sector basis.
    pub fn dim(&self) -> usize {
        match *self {
            SectorId::Spinor { n } => (n + 1) * (n + 2) / 2,
            SectorId::Hybrid { c1, c2 } => (c1 + 1) * (c2 + 1),
        }
    }

    /// Platform this sector belongs to.
    pub fn platform(&self) -> Platform {
        match self {
            SectorId::Spinor { .. } => Platform::Spinor3,
            SectorId::Hybrid { .. } => Platform::Hybrid4,
        }
    }
}

/// Basis index of the spinor occupation `(n₀ = n − n₊ − n₋, n₊, n₋)`;
/// states are ordered by `n₊`, then `n₋`.
fn spinor_index(n: usize, np: usize, nm: usize) -> usize {
    np * (2 * n + 3 - np) / 2 + nm
}

/// Basis index of the hybrid side occupation `(k = n_{a1}, l = n_{b1})`.
fn hybrid_index(c2: usize, k: usize, l: usize) -> usize {
    k * (c2 + 1) + l
}

/// Dense state vector within one sector.
#[derive(Debug, Clone, PartialEq)]
pub struct FockSectorState {
    /// Sector the amplitudes live in.
    pub sector: SectorId,
    /// Amplitudes in the canonical basis order of the sector.
    pub amps: Vec<C64>,
}

impl FockSectorState {
    /// Squared norm of the amplitudes.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// All-pump basis state of a sector (sides empty), the per-sector input of
/// the chain.
pub fn initial_sector_state(sector: SectorId) -> FockSectorState {
    let mut amps = vec![C64::default(); sector.dim()];
    let idx = match sector {
        SectorId::Spinor { n } => spinor_index(n, 0, 0),
        SectorId::Hybrid { c2, .. } => hybrid_index(c2, 0, 0),
    };
    amps[idx] = C64::from(1.0);
    FockSectorState { sector, amps }
}

// ---------------------------------------------------------------------------
// Coherent-pump mixture
// ---------------------------------------------------------------------------

/// Poisson sector mixture representing coherent pump(s); weights are not
/// renormalized — consumers divide by the actual weight sum — and the
/// dropped probability mass is recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherentPumpMixture {
    /// Sectors carrying non-negligible weight.
    pub sectors: Vec<SectorId>,
    /// Poisson weight of each sector (same order as `sectors`).
    pub weights: Vec<f64>,
    /// Probability mass dropped (floored sectors plus beyond-cap tail).
    pub tail: f64,
}

impl CoherentPumpMixture {
    /// Check the mixture invariants: positive weights summing, together
    /// with the tail, to 1 within round-off, and tail below
    /// [`MIXTURE_TAIL_TOL`].
    pub fn validate(&self) -> Result<()> {
        if self.sectors.len() != self.weights.len() || self.sectors.is_empty() {
            return Err(Error::Numerics("malformed pump mixture".into()));
        }
        if self.weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::Numerics("non-positive weight in pump mixture".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if !(0.0..=MIXTURE_TAIL_TOL).contains(&self.tail) || (sum + self.tail - 1.0).abs() > 1e-9
        {
            return Err(Error::Numerics(format!(
                "pump mixture mass {sum} + tail {} does not reach 1",
                self.tail
            )));
        }
        Ok(())
    }
}

/// Poisson weights `w_n = e^{−mean} meanⁿ/n!` for `n ≤ cap`, keeping those
/// above the floor. Returns the kept `(n, w)` list and the dropped mass.
fn poisson_weights(mean: f64, tail_tol: f64) -> Result<(Vec<(usize, f64)>, f64)> {
    let mut w = (-mean).exp();
    if w == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "pump mean {mean} too large for the Fock oracle"
        )));
    }
    let mut kept = Vec::new();
    for n in 0..=SECTOR_CAP {
        if n > 0 {
            w *= mean / n as f64;
        }
        if w >= WEIGHT_FLOOR {
            kept.push((n, w));
        }
    }
    let kept_sum: f64 = kept.iter().map(|&(_, w)| w).sum();
    let tail = 1.0 - kept_sum;
    if tail > tail_tol {
        return Err(Error::NotConverged(format!(
            "coherent pump of mean {mean} needs sectors beyond {SECTOR_CAP} \
             (dropped mass {tail:.3e}); the configuration is infeasible for the Fock oracle"
        )));
    }
    Ok((kept, tail.max(0.0)))
}

/// Build the sector mixture of the configuration's coherent pump(s).
pub fn coherent_pump_mixture(cfg: &InterferometerConfig) -> Result<CoherentPumpMixture> {
    cfg.validate_for_oracle()?;
    let mix = match cfg.platform {
        Platform::Spinor3 => {
            let (kept, tail) = poisson_weights(cfg.n_total, MIXTURE_TAIL_TOL)?;
            CoherentPumpMixture {
                sectors: kept.iter().map(|&(n, _)| SectorId::Spinor { n }).collect(),
                weights: kept.iter().map(|&(_, w)| w).collect(),
                tail,
            }
        }
        Platform::Hybrid4 => {
            // Each species gets half the tail budget so the product mixture
            // stays within MIXTURE_TAIL_TOL overall.
            let (f, g) = cfg.pump_fractions();
            let (ka, _) = poisson_weights(f * cfg.n_total, 0.5 * MIXTURE_TAIL_TOL)?;
            let (kb, _) = poisson_weights(g * cfg.n_total, 0.5 * MIXTURE_TAIL_TOL)?;
            let mut sectors = Vec::with_capacity(ka.len() * kb.len());
            let mut weights = Vec::with_capacity(ka.len() * kb.len());
            for &(c1, wa) in &ka {
                for &(c2, wb) in &kb {
                    sectors.push(SectorId::Hybrid { c1, c2 });
                    weights.push(wa * wb);
                }
            }
            let sum: f64 = weights.iter().sum();
            CoherentPumpMixture { sectors, weights, tail: (1.0 - sum).max(0.0) }
        }
    };
    mix.validate()?;
    Ok(mix)
}

// ---------------------------------------------------------------------------
// Sparse Hermitian operators and the exponential map
// ---------------------------------------------------------------------------

/// Hermitian operator stored as a real diagonal plus one entry per
/// conjugate off-diagonal pair: `(src, dst, g)` means `⟨dst|H|src⟩ = g`
/// (and implicitly `⟨src|H|dst⟩ = ḡ`).
struct SparseHermitian {
    dim: usize,
    diag: Vec<f64>,
    couplings: Vec<(usize, usize, C64)>,
}

impl SparseHermitian {
    fn zeros(dim: usize) -> Self {
        SparseHermitian { dim, diag: vec![0.0; dim], couplings: Vec::new() }
    }

    /// `out = H v` (out is overwritten).
    fn apply(&self, v: &[C64], out: &mut [C64]) {
        for (o, (&d, &x)) in out.iter_mut().zip(self.diag.iter().zip(v.iter())) {
            *o = x * d;
        }
        for &(src, dst, g) in &self.couplings {
            out[dst] += g * v[src];
            out[src] += g.conj() * v[dst];
        }
    }

    /// Row-sum (∞) norm upper bound.
    fn inf_norm(&self) -> f64 {
        let mut rows: Vec<f64> = self.diag.iter().map(|d| d.abs()).collect();
        for &(src, dst, g) in &self.couplings {
            let a = g.norm();
            rows[src] += a;
            rows[dst] += a;
        }
        rows.into_iter().fold(0.0, f64::max)
    }
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// In-place `v ← exp(−i t H) v` by substepped vector-Taylor expansion.
fn expm_apply(h: &SparseHermitian, t: f64, v: &mut [C64]) -> Result<()> {
    if v.len() != h.dim {
        return Err(Error::Numerics("state/operator dimension mismatch".into()));
    }
    let norm_before = l2(v);
    let scaled = h.inf_norm() * t.abs();
    let s = if scaled > 1.0 { scaled.log2().ceil() as u32 } else { 0 };
    if s > 24 {
        return Err(Error::NotConverged(format!(
            "operator norm {scaled:.3e} too large for the exponential map"
        )));
    }
    let steps = 1u32 << s;
    let factor = C64::new(0.0, -t / steps as f64);
    let mut term = vec![C64::default(); h.dim];
    let mut ht = vec![C64::default(); h.dim];
    for _ in 0..steps {
        term.copy_from_slice(v);
        let mut prev_ratio = f64::INFINITY;
        let mut converged = false;
        for k in 1..=TAYLOR_MAX_TERMS {
            h.apply(&term, &mut ht);
            let scale = factor / k as f64;
            for (t_i, &h_i) in term.iter_mut().zip(ht.iter()) {
                *t_i = h_i * scale;
            }
            for (v_i, &t_i) in v.iter_mut().zip(term.iter()) {
                *v_i += t_i;
            }
            let ratio = l2(&term) / l2(v).max(f64::MIN_POSITIVE);
            if ratio < TAYLOR_TOL && prev_ratio < TAYLOR_TOL {
                converged = true;
                break;
            }
            prev_ratio = ratio;
        }
        if !converged {
            return Err(Error::NotConverged(
                "Taylor series of the exponential map did not converge".into(),
            ));
        }
    }
    let norm_after = l2(v);
    if (norm_after - norm_before).abs() > 1e-9 * norm_before.max(f64::MIN_POSITIVE) {
        return Err(Error::Numerics(format!(
            "unitarity violated by the exponential map: norm {norm_before:.15} → {norm_after:.15}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage generators
// ---------------------------------------------------------------------------

/// Spin-mixing Hamiltonian of a spinor sector (see module docs).
fn spin_mixing_h(n: usize, kappa_t: f64, q_t: f64, chi: f64) -> SparseHermitian {
    let dim = SectorId::Spinor { n }.dim();
    let mut h = SparseHermitian::zeros(dim);
    let phase = C64::from_polar(kappa_t, chi);
    for np in 0..=n {
        for nm in 0..=(n - np) {
            let n0 = n - np - nm;
            let i = spinor_index(n, np, nm);
            let ns = (np + nm) as f64;
            h.diag[i] = kappa_t * (n0 as f64 - 0.5) * ns + q_t * ns;
            if n0 >= 2 {
                let j = spinor_index(n, np + 1, nm + 1);
                let amp = ((n0 * (n0 - 1) * (np + 1) * (nm + 1)) as f64).sqrt();
                h.couplings.push((i, j, phase * amp));
            }
        }
    }
    h
}

/// Four-wave-mixing Hamiltonian of a hybrid sector.
fn fwm_h(c1: usize, c2: usize, kappa_t: f64, chi: f64) -> SparseHermitian {
    let dim = SectorId::Hybrid { c1, c2 }.dim();
    let mut h = SparseHermitian::zeros(dim);
    let phase = C64::from_polar(kappa_t, chi);
    for k in 0..c1 + 1 {
        for l in 0..c2 + 1 {
            let (na0, nb0) = (c1 - k, c2 - l);
            if na0 >= 1 && nb0 >= 1 {
                let i = hybrid_index(c2, k, l);
                let j = hybrid_index(c2, k + 1, l + 1);
                let amp = ((na0 * nb0 * (k + 1) * (l + 1)) as f64).sqrt();
                h.couplings.push((i, j, phase * amp));
            }
        }
    }
    h
}

/// Tritter generator `K̂ = (e^{iϑ}/√2)(â₀†â₊ + â₀†â₋) + h.c.` of a spinor
/// sector; the splitter is `exp(−iθK̂)`.
fn tritter_k(n: usize, vartheta: f64) -> SparseHermitian {
    let dim = SectorId::Spinor { n }.dim();
    let mut h = SparseHermitian::zeros(dim);
    let phase = C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, vartheta);
    for np in 0..=n {
        for nm in 0..=(n - np) {
            let n0 = n - np - nm;
            let i = spinor_index(n, np, nm);
            if np >= 1 {
                let j = spinor_index(n, np - 1, nm);
                h.couplings.push((i, j, phase * (((n0 + 1) * np) as f64).sqrt()));
            }
            if nm >= 1 {
                let j = spinor_index(n, np, nm - 1);
                h.couplings.push((i, j, phase * (((n0 + 1) * nm) as f64).sqrt()));
            }
        }
    }
    h
}

/// Beam-splitter generator `K̂ = e^{iϑ}(â₀†â₁ + b̂₀†b̂₁) + h.c.` of a hybrid
/// sector (same angle and phase for both species).
fn hybrid_bs_k(c1: usize, c2: usize, vartheta: f64) -> SparseHermitian {
    let dim = SectorId::Hybrid { c1, c2 }.dim();
    let mut h = SparseHermitian::zeros(dim);
    let phase = C64::from_polar(1.0, vartheta);
    for k in 0..c1 + 1 {
        for l in 0..c2 + 1 {
            let i = hybrid_index(c2, k, l);
            if k >= 1 {
                let j = hybrid_index(c2, k - 1, l);
                h.couplings.push((i, j, phase * (((c1 - k + 1) * k) as f64).sqrt()));
            }
            if l >= 1 {
                let j = hybrid_index(c2, k, l - 1);
                h.couplings.push((i, j, phase * (((c2 - l + 1) * l) as f64).sqrt()));
            }
        }
    }
    h
}

/// Diagonal phase stage: side modes acquire `e^{−i(φ ± φ_d)/2}` per quantum.
fn apply_phase_stage(state: &mut FockSectorState, phi: f64, phi_diff: f64) {
    let p_plus = 0.5 * (phi + phi_diff);
    let p_minus = 0.5 * (phi - phi_diff);
    match state.sector {
        SectorId::Spinor { n } => {
            for np in 0..=n {
                for nm in 0..=(n - np) {
                    let i = spinor_index(n, np, nm);
                    let ph = p_plus * np as f64 + p_minus * nm as f64;
                    state.amps[i] *= C64::from_polar(1.0, -ph);
                }
            }
        }
        SectorId::Hybrid { c1, c2 } => {
            for k in 0..c1 + 1 {
                for l in 0..c2 + 1 {
                    let i = hybrid_index(c2, k, l);
                    let ph = p_plus * k as f64 + p_minus * l as f64;
                    state.amps[i] *= C64::from_polar(1.0, -ph);
                }
            }
        }
    }
}

/// Parametric-stage Hamiltonian of a sector for the given configuration
/// (time +1 is the forward stage, −1 the echo).
fn parametric_h(cfg: &InterferometerConfig, sector: SectorId) -> Result<SparseHermitian> {
    match sector {
        SectorId::Spinor { n } => {
            let kappa_t = cfg.r / cfg.n_total;
            let q_t = -kappa_t * (cfg.n_total - 0.5);
            let chi = -(2.0 * cfg.vartheta_pump + cfg.vartheta_sq);
            Ok(spin_mixing_h(n, kappa_t, q_t, chi))
        }
        SectorId::Hybrid { c1, c2 } => {
            let (f, g) = cfg.pump_fractions();
            let denom = (f * cfg.n_total * g * cfg.n_total).sqrt();
            if denom <= 0.0 {
                return Err(Error::InvalidConfig("hybrid pump populations must be positive".into()));
            }
            let kappa_t = cfg.r / denom;
            let chi = -(cfg.vartheta_pump + cfg.vartheta_sq);
            Ok(fwm_h(c1, c2, kappa_t, chi))
        }
    }
}

/// Run the first parametric stage only (prepared probe of a sector).
pub fn run_parametric_sector(
    cfg: &InterferometerConfig,
    sector: SectorId,
) -> Result<FockSectorState> {
    let mut st = initial_sector_state(sector);
    let h = parametric_h(cfg, sector)?;
    expm_apply(&h, 1.0, &mut st.amps)?;
    Ok(st)
}

/// Run the full five-stage chain in one sector.
pub fn run_chain_sector(
    cfg: &InterferometerConfig,
    sector: SectorId,
    phi: f64,
    phi_diff: f64,
) -> Result<FockSectorState> {
    let mut st = initial_sector_state(sector);
    let h_pa = parametric_h(cfg, sector)?;
    let k_split = match sector {
        SectorId::Spinor { n } => tritter_k(n, cfg.vartheta),
        SectorId::Hybrid { c1, c2 } => hybrid_bs_k(c1, c2, cfg.vartheta),
    };
    expm_apply(&h_pa, 1.0, &mut st.amps)?;
    expm_apply(&k_split, cfg.theta, &mut st.amps)?;
    apply_phase_stage(&mut st, phi, phi_diff);
    expm_apply(&k_split, -cfg.theta, &mut st.amps)?;
    expm_apply(&h_pa, -1.0, &mut st.amps)?;
    Ok(st)
}

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

/// Raw sector expectations (normalized by the state norm).
#[derive(Debug, Clone, Copy, Default)]
struct SectorObs {
    ns: f64,
    ns_sq: f64,
    n0: f64,
    n0_sq: f64,
    n0_ns: f64,
    pair: C64,
}

fn sector_observables(state: &FockSectorState) -> SectorObs {
    let mut o = SectorObs::default();
    let norm = state.norm_sqr();
    match state.sector {
        SectorId::Spinor { n } => {
            for np in 0..=n {
                for nm in 0..=(n - np) {
                    let i = spinor_index(n, np, nm);
                    let p = state.amps[i].norm_sqr();
                    let ns = (np + nm) as f64;
                    let n0 = (n - np - nm) as f64;
                    o.ns += p * ns;
                    o.ns_sq += p * ns * ns;
                    o.n0 += p * n0;
                    o.n0_sq += p * n0 * n0;
                    o.n0_ns += p * n0 * ns;
                    let n0u = n - np - nm;
                    if n0u >= 2 {
                        let j = spinor_index(n, np + 1, nm + 1);
                        let amp = ((n0u * (n0u - 1) * (np + 1) * (nm + 1)) as f64).sqrt();
                        o.pair += state.amps[j].conj() * state.amps[i] * amp;
                    }
                }
            }
        }
        SectorId::Hybrid { c1, c2 } => {
            for k in 0..c1 + 1 {
                for l in 0..c2 + 1 {
                    let i = hybrid_index(c2, k, l);
                    let p = state.amps[i].norm_sqr();
                    let ns = (k + l) as f64;
                    let n0 = ((c1 - k) + (c2 - l)) as f64;
                    o.ns += p * ns;
                    o.ns_sq += p * ns * ns;
                    o.n0 += p * n0;
                    o.n0_sq += p * n0 * n0;
                    o.n0_ns += p * n0 * ns;
                    if c1 - k >= 1 && c2 - l >= 1 {
                        let j = hybrid_index(c2, k + 1, l + 1);
                        let amp = (((c1 - k) * (c2 - l) * (k + 1) * (l + 1)) as f64).sqrt();
                        o.pair += state.amps[j].conj() * state.amps[i] * amp;
                    }
                }
            }
        }
    }
    let inv = 1.0 / norm;
    SectorObs {
        ns: o.ns * inv,
        ns_sq: o.ns_sq * inv,
        n0: o.n0 * inv,
        n0_sq: o.n0_sq * inv,
        n0_ns: o.n0_ns * inv,
        pair: o.pair * inv,
    }
}

/// Mixture-averaged observables of `f(sector)` over the coherent pump.
fn mixture_observables<F>(cfg: &InterferometerConfig, f: F) -> Result<SectorObs>
where
    F: Fn(SectorId) -> Result<FockSectorState> + Sync,
{
    let mix = coherent_pump_mixture(cfg)?;
    let per: Vec<SectorObs> = mix
        .sectors
        .par_iter()
        .map(|&sec| f(sec).map(|st| sector_observables(&st)))
        .collect::<Result<_>>()?;
    let wsum: f64 = mix.weights.iter().sum();
    let mut acc = SectorObs::default();
    for (o, &w) in per.iter().zip(&mix.weights) {
        acc.ns += w * o.ns;
        acc.ns_sq += w * o.ns_sq;
        acc.n0 += w * o.n0;
        acc.n0_sq += w * o.n0_sq;
        acc.n0_ns += w * o.n0_ns;
        acc.pair += o.pair * w;
    }
    let inv = 1.0 / wsum;
    Ok(SectorObs {
        ns: acc.ns * inv,
        ns_sq: acc.ns_sq * inv,
        n0: acc.n0 * inv,
        n0_sq: acc.n0_sq * inv,
        n0_ns: acc.n0_ns * inv,
        pair: acc.pair * inv,
    })
}

/// Mean and variance of the side-population readout after the exact chain.
pub fn chain_signal_fock(
    cfg: &InterferometerConfig,
    phi: f64,
    phi_diff: f64,
) -> Result<(f64, f64)> {
    let o = mixture_observables(cfg, |sec| run_chain_sector(cfg, sec, phi, phi_diff))?;
    Ok((o.ns, o.ns_sq - o.ns * o.ns))
}

/// Full signal moments of the exact chain; the slope is a plain central
/// difference with step [`FOCK_SLOPE_STEP`].
pub fn chain_moments_fock(
    cfg: &InterferometerConfig,
    phi: f64,
    phi_diff: f64,
) -> Result<SignalMoments> {
    let (mean, variance) = chain_signal_fock(cfg, phi, phi_diff)?;
    let h = FOCK_SLOPE_STEP;
    let (m_plus, _) = chain_signal_fock(cfg, phi + h, phi_diff)?;
    let (m_minus, _) = chain_signal_fock(cfg, phi - h, phi_diff)?;
    let nu = derive_params(cfg)?.nu;
    Ok(SignalMoments {
        mean,
        slope: (m_plus - m_minus) / (2.0 * h),
        variance,
        operating_point: OperatingPoint { theta: cfg.theta, nu, phi },
        series: None,
    })
}

/// Exact prepared-probe moments (pump/side populations, second moments,
/// pair correlator) over the coherent-pump mixture.
pub fn prepared_general_moments_fock(cfg: &InterferometerConfig) -> Result<GeneralMoments> {
    let o = mixture_observables(cfg, |sec| run_parametric_sector(cfg, sec))?;
    let m = GeneralMoments {
        mean_n0: o.n0,
        mean_n0_sq: o.n0_sq,
        mean_ns: o.ns,
        mean_ns_sq: o.ns_sq,
        mean_n0_ns: o.n0_ns,
        pair: o.pair,
    };
    m.validate()?;
    Ok(m)
}

/// QFI at splitter angle θ and phase ϑ from the exact prepared moments
/// (`cfg.theta`/`cfg.vartheta` are ignored; scan θ by reusing
/// [`prepared_general_moments_fock`]).
pub fn qfi_fock(cfg: &InterferometerConfig, theta: f64, vartheta: f64) -> Result<f64> {
    let m = prepared_general_moments_fock(cfg)?;
    analytic::qfi_from_general_moments(&m, theta, vartheta, cfg.platform)
}

// ---------------------------------------------------------------------------
// Two-mode squeezed vacuum by direct number-basis summation
// ---------------------------------------------------------------------------

/// Side-mode moments of the two-mode squeezed vacuum summed directly over
/// the pair-number distribution `p_k = sech²r tanh^{2k}r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmsvOracle {
    /// `⟨N̂_s⟩ = 2⟨k⟩`.
    pub mean_ns: f64,
    /// `Var(N̂_s)`.
    pub var_ns: f64,
    /// Conventional-interferometer QFI `F(0) = Var(N̂_s)`.
    pub qfi: f64,
    /// Probability mass beyond the summation cutoff (`tanh^{2(K+1)}r`).
    pub tail: f64,
    /// Number of retained terms `K + 1`.
    pub terms: usize,
}

/// Sum the TMSV pair-number distribution until the geometric tail falls
/// below `tail_tol`.
pub fn tmsv_side_moments(r: f64, tail_tol: f64) -> Result<TmsvOracle> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Domain(format!("squeezing must be positive, got {r}")));
    }
    if !(tail_tol.is_finite() && tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::Domain(format!("tail tolerance out of range: {tail_tol}")));
    }
    let t2 = r.tanh().powi(2);
    // Tail after K terms is exactly t2^{K+1}.
    let k_max = (tail_tol.ln() / t2.ln()).ceil().max(1.0) as usize;
    if k_max > 100_000 {
        return Err(Error::NotConverged(format!(
            "TMSV summation needs {k_max} terms; tighten r or loosen the tolerance"
        )));
    }
    let mut p = 1.0 / r.cosh().powi(2); // p_0 = sech²r
    let (mut norm, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in 0..=k_max {
        if k > 0 {
            p *= t2;
        }
        let ns = 2.0 * k as f64;
        norm += p;
        m1 += p * ns;
        m2 += p * ns * ns;
    }
    let mean_ns = m1 / norm;
    let var_ns = m2 / norm - mean_ns * mean_ns;
    Ok(TmsvOracle {
        mean_ns,
        var_ns,
        qfi: var_ns,
        tail: t2.powi(k_max as i32 + 1),
        terms: k_max + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn smallest_sector_rabi_oscillation() {
        // In the N = 2 sector, |2,0,0⟩ ↔ |0,1,1⟩ is an exact two-level
        // system once q_t = κ_t/2 makes it resonant:
        // P(|0,1,1⟩) = sin²(√2 κ_t).
        for kappa_t in [0.3, 1.1] {
            let h = spin_mixing_h(2, kappa_t, 0.5 * kappa_t, 0.0);
            let mut amps = vec![C64::default(); 6];
            amps[spinor_index(2, 0, 0)] = C64::from(1.0);
            expm_apply(&h, 1.0, &mut amps).unwrap();
            let p = amps[spinor_index(2, 1, 1)].norm_sqr();
            assert_relative_eq!(
                p,
                (std::f64::consts::SQRT_2 * kappa_t).sin().powi(2),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn sector_charges_and_norm_are_conserved() {
        let mut cfg = InterferometerConfig::spinor(12.0, 0.8);
        cfg.phi = 0.0;
        let sector = SectorId::Spinor { n: 12 };
        let st = run_chain_sector(&cfg, sector, 0.4, 0.1).unwrap();
        assert_relative_eq!(st.norm_sqr(), 1.0, max_relative = 1e-11);
        let o = sector_observables(&st);
        assert_relative_eq!(o.ns + o.n0, 12.0, max_relative = 1e-11);

        let hcfg = InterferometerConfig::hybrid(8.0, 0.5, 1.0);
        let hsec = SectorId::Hybrid { c1: 5, c2: 4 };
        let hst = run_chain_sector(&hcfg, hsec, 0.4, -0.2).unwrap();
        assert_relative_eq!(hst.norm_sqr(), 1.0, max_relative = 1e-11);
        let ho = sector_observables(&hst);
        assert_relative_eq!(ho.ns + ho.n0, 9.0, max_relative = 1e-11);
    }

    #[test]
    fn echo_restores_vacuum_sides_at_zero_phase() {
        let cfg = InterferometerConfig::spinor(12.0, 0.8);
        let (mean, var) = chain_signal_fock(&cfg, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 0.0, epsilon = 1e-10);

        let hcfg = InterferometerConfig::hybrid(6.0, 0.5, 1.0);
        let (hmean, hvar) = chain_signal_fock(&hcfg, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(hmean, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(hvar, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn pump_mixture_mass_is_accounted() {
        let cfg = InterferometerConfig::spinor(30.0, 1.0);
        let mix = coherent_pump_mixture(&cfg).unwrap();
        mix.validate().unwrap();
        let sum: f64 = mix.weights.iter().sum();
        assert!(sum > 1.0 - MIXTURE_TAIL_TOL);
        assert!(mix.tail < MIXTURE_TAIL_TOL);

        // Means beyond the sector cap are rejected, not silently truncated.
        let big = InterferometerConfig::spinor(500.0, 1.0);
        assert!(coherent_pump_mixture(&big).is_err());
    }

    #[test]
    fn undepleted_limit_approaches_gaussian_chain() {
        // At N_s/N̄ ≪ 1 the exact chain converges to the linearized-pump
        // (Gaussian) chain with corrections O(1/N̄); doubling N̄ must shrink
        // the gap.
        let phi = 0.3;
        let mut errs = Vec::new();
        for n_bar in [32.0, 64.0] {
            let cfg = InterferometerConfig::spinor(n_bar, 0.5);
            let exact = chain_signal_fock(&cfg, phi, 0.0).unwrap();
            let lin = gaussian::chain_signal(&cfg, phi, 0.0).unwrap();
            let err = ((exact.0 - lin.0) / lin.0).abs().max(((exact.1 - lin.1) / lin.1).abs());
            errs.push(err);
        }
        // Measured gap at N̄ = 32 is 0.124 — a genuine depletion correction
        // (the exact chain is pinned against a dense-matrix reference in
        // `chain_matches_dense_reference`); the shrink assertion below is the
        // actual O(1/N̄) convergence statement.
        assert!(errs[0] < 0.15, "N̄ = 32 gap too large: {}", errs[0]);
        assert!(errs[1] < 0.7 * errs[0], "gap does not shrink with N̄: {errs:?}");
    }

    #[test]
    fn hybrid_undepleted_limit_approaches_gaussian_chain() {
        let cfg = InterferometerConfig::hybrid(24.0, 0.4, 1.0);
        let exact = chain_signal_fock(&cfg, 0.3, 0.0).unwrap();
        let lin = gaussian::chain_signal(&cfg, 0.3, 0.0).unwrap();
        assert_relative_eq!(exact.0, lin.0, max_relative = 0.1);
        assert_relative_eq!(exact.1, lin.1, max_relative = 0.15);
    }

    #[test]
    fn prepared_moments_approach_linearized_values() {
        let cfg = InterferometerConfig::spinor(40.0, 0.5);
        let exact = prepared_general_moments_fock(&cfg).unwrap();
        let lin = gaussian::prepared_general_moments(&cfg).unwrap();
        assert_relative_eq!(exact.mean_ns, lin.mean_ns, max_relative = 0.05);
        assert_relative_eq!(exact.mean_n0, lin.mean_n0, max_relative = 0.01);
        assert_relative_eq!(exact.pair.norm(), lin.pair.norm(), max_relative = 0.05);
        // Pair phase: i e^{i(2ϑ_p+ϑ_sq)} reduces to +i here.
        assert_abs_diff_eq!(
            exact.pair.arg(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 0.05
        );
    }

    #[test]
    fn observables_depend_only_on_canonical_phase() {
        // ν = 2ϑ − 2ϑ_p − ϑ_sq: co-rotating ϑ with (ϑ_p, ϑ_sq) leaves the
        // chain invariant thanks to the gauge phase χ.
        let nu = 4.71238898038469;
        let mut reference: Option<(f64, f64)> = None;
        for (vp, vsq) in [(0.0, 0.0), (0.3, 0.0), (0.0, 0.4)] {
            let mut cfg = InterferometerConfig::spinor(12.0, 0.8);
            cfg.vartheta_pump = vp;
            cfg.vartheta_sq = vsq;
            cfg.vartheta = 0.5 * (nu + 2.0 * vp + vsq);
            let (mean, var) = chain_signal_fock(&cfg, 0.35, 0.0).unwrap();
            match reference {
                None => reference = Some((mean, var)),
                Some((m0, v0)) => {
                    assert_relative_eq!(mean, m0, max_relative = 1e-10);
                    assert_relative_eq!(var, v0, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn tmsv_summation_matches_closed_forms() {
        for r in [0.5, 1.0] {
            // Second-moment truncation error scales like tail·K², so the
            // summation tail must sit well below the comparison tolerance.
            let t = tmsv_side_moments(r, 1e-16).unwrap();
            let ns = 2.0 * r.sinh().powi(2);
            assert!(t.tail < 1e-10);
            assert_relative_eq!(t.mean_ns, ns, max_relative = 1e-10);
            assert_relative_eq!(t.qfi, analytic::conventional_qfi(ns), max_relative = 1e-10);
        }
    }
    #[test]
    fn chain_matches_dense_reference() {
        // Pinned against an independent dense-matrix implementation of the
        // same chain (full expm per sector, explicit basis maps) at small N̄
        // with non-trivial pump/squeezing phases and a differential phase.
        let mut cfg = InterferometerConfig::spinor(8.0, 0.6);
        cfg.vartheta_pump = 0.2;
        cfg.vartheta_sq = 0.7;
        let (mean, var) = chain_signal_fock(&cfg, 0.3, 0.1).unwrap();
        assert_relative_eq!(mean, 0.1212638583555883, max_relative = 1e-12);
        assert_relative_eq!(var, 0.14430020200855487, max_relative = 1e-12);

        let mut hcfg = InterferometerConfig::hybrid(6.0, 0.5, 0.5);
        hcfg.vartheta_pump = 0.4;
        hcfg.vartheta_sq = -0.3;
        let (hmean, hvar) = chain_signal_fock(&hcfg, 0.3, 0.1).unwrap();
        assert_relative_eq!(hmean, 0.07128642281350815, max_relative = 1e-12);
        assert_relative_eq!(hvar, 0.07998505925926773, max_relative = 1e-12);
    }
}
