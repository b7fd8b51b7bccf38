//! Closed-form network model: detection probabilities, harvested energy,
//! transmission rates, player payoffs, analytic derivatives and the
//! constraint system of the time-scheduling game.
//!
//! Everything here is a pure function of its inputs. All solvers work in the
//! reduced per-transmitter coordinates `(tau_t, tau_b)`; the harvesting time
//! is implied by busy-slot saturation, `tau_h = T - tau_s - tau_b`.
//!
//! Units: powers in watts, times in seconds, rates in bit/s. SNR and channel
//! gains are linear (dB/dBm conversion happens at config ingestion).

use thiserror::Error;

pub const LN2: f64 = core::f64::consts::LN_2;

/// Errors raised by the model functions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network parameters: {0}")]
    InvalidParams(String),
    #[error("sensing time must be strictly positive, got {0}")]
    NonPositiveSensingTime(f64),
    #[error("transmitter index {0} out of range (K = {1})")]
    StIndex(usize, usize),
    #[error("transmit power undefined at tau_t = 0")]
    UndefinedPower,
    #[error("rate log argument {0} <= 0: supply-power constraint violated")]
    InfeasibleRate(f64),
}

// ---------------------------------------------------------------------------
// Parameters and strategies
// ---------------------------------------------------------------------------

/// All physical and protocol constants of a network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// Probability of the primary channel being idle.
    pub p0: f64,
    /// Probability of the primary channel being busy (`1 - p0`).
    pub p1: f64,
    /// Slot length in seconds.
    pub t_slot: f64,
    /// Channel bandwidth in Hz.
    pub w: f64,
    /// Primary transmit power in watts.
    pub p_pt: f64,
    /// Noise variance at the gateway detector in watts.
    pub xi2: f64,
    /// Linear SNR of the primary signal at the gateway.
    pub gamma: f64,
    /// Channel power gain from the primary transmitter to the gateway.
    pub h_pt_sg: f64,
    /// Energy harvesting efficiency in [0, 1].
    pub delta: f64,
    /// Valuation per unit transmission rate.
    pub nu_value: f64,
    /// Circuit power drawn during active transmission, watts.
    pub pc: f64,
    /// Miss-detection probability cap tolerated by the primary network.
    pub pbar_m: f64,
    /// Lower bound on the detection threshold.
    pub eps_lo: f64,
    /// Upper bound on the detection threshold.
    pub eps_hi: f64,
    /// Per-transmitter channel gain from the primary transmitter.
    pub h_pt_k: Vec<f64>,
    /// Per-transmitter channel gain to the gateway.
    pub h_k: Vec<f64>,
    /// Per-transmitter AWGN power on the secondary link, watts.
    pub sigma2_k: Vec<f64>,
    /// Per-transmitter transmission efficiency in [0, 1].
    pub kappa_k: Vec<f64>,
    /// Per-transmitter fixed backscatter bitrate, bit/s.
    pub rbar_b_k: Vec<f64>,
}

fn unit_interval(name: &str, v: f64) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
        return Err(ModelError::InvalidParams(format!(
            "{name} = {v} must lie in [0, 1]"
        )));
    }
    Ok(())
}

fn strictly_positive(name: &str, v: f64) -> Result<(), ModelError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(ModelError::InvalidParams(format!(
            "{name} = {v} must be strictly positive"
        )));
    }
    Ok(())
}

impl NetworkParams {
    /// Validates every invariant and returns the parameter set.
    pub fn new(mut p: NetworkParams) -> Result<NetworkParams, ModelError> {
        unit_interval("p0", p.p0)?;
        unit_interval("p1", p.p1)?;
        if (p.p0 + p.p1 - 1.0).abs() > 1e-12 {
            return Err(ModelError::InvalidParams(format!(
                "p0 + p1 = {} must equal 1",
                p.p0 + p.p1
            )));
        }
        p.p1 = 1.0 - p.p0;
        unit_interval("delta", p.delta)?;
        unit_interval("pbar_m", p.pbar_m)?;
        strictly_positive("T", p.t_slot)?;
        strictly_positive("W", p.w)?;
        strictly_positive("P_PT", p.p_pt)?;
        strictly_positive("xi2", p.xi2)?;
        strictly_positive("h_pt_sg", p.h_pt_sg)?;
        strictly_positive("nu", p.nu_value)?;
        strictly_positive("Pc", p.pc)?;
        if !(p.eps_lo < p.eps_hi) {
            return Err(ModelError::InvalidParams(format!(
                "eps_lo = {} must be < eps_hi = {}",
                p.eps_lo, p.eps_hi
            )));
        }
        let k = p.h_pt_k.len();
        if k == 0 {
            return Err(ModelError::InvalidParams("need at least one ST".into()));
        }
        for (name, arr) in [
            ("h_pt_k", &p.h_pt_k),
            ("h_k", &p.h_k),
            ("sigma2_k", &p.sigma2_k),
            ("kappa_k", &p.kappa_k),
            ("rbar_b_k", &p.rbar_b_k),
        ] {
            if arr.len() != k {
                return Err(ModelError::InvalidParams(format!(
                    "{name} has length {}, expected {k}",
                    arr.len()
                )));
            }
        }
        for i in 0..k {
            strictly_positive("h_pt_k", p.h_pt_k[i])?;
            strictly_positive("h_k", p.h_k[i])?;
            strictly_positive("sigma2_k", p.sigma2_k[i])?;
            strictly_positive("rbar_b_k", p.rbar_b_k[i])?;
            unit_interval("kappa_k", p.kappa_k[i])?;
        }
        let gamma_implied = p.h_pt_sg * p.p_pt / p.xi2;
        if (p.gamma - gamma_implied).abs() > 1e-9 * gamma_implied.abs() {
            return Err(ModelError::InvalidParams(format!(
                "gamma = {} inconsistent with h_pt_sg * P_PT / xi2 = {}",
                p.gamma, gamma_implied
            )));
        }
        Ok(p)
    }

    /// Number of secondary transmitters.
    pub fn num_st(&self) -> usize {
        self.h_pt_k.len()
    }

    fn check_index(&self, k: usize) -> Result<(), ModelError> {
        if k >= self.num_st() {
            Err(ModelError::StIndex(k, self.num_st()))
        } else {
            Ok(())
        }
    }

    /// Coefficient of the supply-power constraint after relaxing `p^d` to
    /// `1 - pbar_m`: the maximum harvest power usable per second of
    /// harvesting time.
    pub fn supply_coeff(&self, k: usize) -> f64 {
        self.p1 * (1.0 - self.pbar_m) * self.delta * self.h_pt_k[k] * self.p_pt
    }
}

/// Gateway strategy: interference price, sensing time and detection
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderStrategy {
    /// Price per unit interference time, >= 0.
    pub alpha: f64,
    /// Sensing time in seconds, in (0, T].
    pub tau_s: f64,
    /// Detection threshold, in [eps_lo, eps_hi].
    pub eps: f64,
}

impl LeaderStrategy {
    /// Miss-detection constraint value `1 - p^d - pbar_m`; feasible iff <= 0.
    pub fn miss_constraint(&self, p: &NetworkParams) -> Result<f64, ModelError> {
        let det = detection_probs(self.tau_s, self.eps, p)?;
        Ok(1.0 - det.pd - p.pbar_m)
    }

    /// Box bounds plus the miss-detection cap of the leader problem.
    pub fn is_feasible(&self, p: &NetworkParams) -> bool {
        self.alpha >= 0.0
            && self.tau_s > 0.0
            && self.tau_s <= p.t_slot
            && self.eps >= p.eps_lo
            && self.eps <= p.eps_hi
            && self.miss_constraint(p).map(|z| z <= 0.0).unwrap_or(false)
    }
}

/// Reduced per-transmitter allocation: active-transmission time and
/// backscattering time. Harvesting time is implied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FollowerStrategy {
    pub tau_t: f64,
    pub tau_b: f64,
}

impl FollowerStrategy {
    pub fn new(tau_t: f64, tau_b: f64) -> Self {
        Self { tau_t, tau_b }
    }

    /// Implied harvesting time `T - tau_s - tau_b` (busy-slot saturation).
    pub fn tau_h(&self, s0: &LeaderStrategy, p: &NetworkParams) -> f64 {
        p.t_slot - s0.tau_s - self.tau_b
    }
}

/// Stacked strategies of all transmitters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointFollowerStrategy {
    pub entries: Vec<FollowerStrategy>,
}

impl JointFollowerStrategy {
    pub fn new(entries: Vec<FollowerStrategy>) -> Self {
        Self { entries }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            entries: vec![FollowerStrategy::default(); k],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stacked vector `(tau_t_1, tau_b_1, ..., tau_t_K, tau_b_K)`.
    pub fn stacked(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|s| [s.tau_t, s.tau_b])
            .collect()
    }

    pub fn from_stacked(x: &[f64]) -> Self {
        assert!(x.len() % 2 == 0, "stacked strategy must have even length");
        Self {
            entries: x
                .chunks_exact(2)
                .map(|c| FollowerStrategy::new(c[0], c[1]))
                .collect(),
        }
    }

    /// Infinity norm of the element-wise difference to `other`.
    pub fn diff_inf_norm(&self, other: &JointFollowerStrategy) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a.tau_t - b.tau_t).abs().max((a.tau_b - b.tau_b).abs()))
            .fold(0.0, f64::max)
    }

    pub fn sum_tau_t(&self) -> f64 {
        self.entries.iter().map(|s| s.tau_t).sum()
    }

    pub fn sum_tau_b(&self) -> f64 {
        self.entries.iter().map(|s| s.tau_b).sum()
    }
}

/// Which sub-slot types a transmitter may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransmissionMode {
    /// Both backscattering and harvest-then-transmit.
    Hybrid,
    /// Harvest-then-transmit only: `tau_b` pinned to zero.
    HarvestOnly,
    /// Backscattering only: `tau_t` pinned to zero.
    BackscatterOnly,
}

impl TransmissionMode {
    pub fn name(&self) -> &'static str {
        match self {
            TransmissionMode::Hybrid => "hybrid",
            TransmissionMode::HarvestOnly => "harvest_only",
            TransmissionMode::BackscatterOnly => "backscatter_only",
        }
    }
}

/// Energy-detector operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionProbs {
    /// Probability of false alarm.
    pub pf: f64,
    /// Probability of detection.
    pub pd: f64,
}

/// Recovered KKT multipliers and residual norms for the follower system.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    /// Shared multipliers for the two joint time-budget constraints.
    pub lambda: [f64; 2],
    /// Local multipliers, one triple per transmitter.
    pub mu: Vec<[f64; 3]>,
    /// Scale-normalized infinity norm of the stationarity defect.
    pub stationarity_residual: f64,
    /// Scale-normalized maximum of `multiplier * constraint` magnitudes.
    pub complementarity_residual: f64,
    /// Largest positive constraint value, normalized by the slot length.
    pub feasibility_residual: f64,
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

/// Gaussian tail probability `Q(x) = 1/sqrt(2 pi) * int_x^inf exp(-t^2/2) dt`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

/// Derivative of the Q-function, `-exp(-x^2/2)/sqrt(2 pi)`.
fn q_function_deriv(x: f64) -> f64 {
    -(-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt()
}

/// False-alarm and detection probabilities of the gateway energy detector
/// with `N = W * tau_s` samples.
pub fn detection_probs(
    tau_s: f64,
    eps: f64,
    p: &NetworkParams,
) -> Result<DetectionProbs, ModelError> {
    if !(tau_s > 0.0) {
        return Err(ModelError::NonPositiveSensingTime(tau_s));
    }
    let sqrt_n = (p.w * tau_s).sqrt();
    let xf = (eps - p.xi2) / (core::f64::consts::SQRT_2 * p.xi2) * sqrt_n;
    let xd = (eps - (1.0 + p.gamma) * p.xi2)
        / (core::f64::consts::SQRT_2 * (1.0 + p.gamma) * p.xi2)
        * sqrt_n;
    Ok(DetectionProbs {
        pf: q_function(xf),
        pd: q_function(xd),
    })
}

/// Partial derivatives of `(pf, pd)` with respect to `(tau_s, eps)`.
#[derive(Debug, Clone, Copy)]
pub struct DetectionDerivs {
    pub pf_tau_s: f64,
    pub pf_eps: f64,
    pub pd_tau_s: f64,
    pub pd_eps: f64,
}

pub fn detection_prob_derivs(
    tau_s: f64,
    eps: f64,
    p: &NetworkParams,
) -> Result<DetectionDerivs, ModelError> {
    if !(tau_s > 0.0) {
        return Err(ModelError::NonPositiveSensingTime(tau_s));
    }
    let sqrt_n = (p.w * tau_s).sqrt();
    let cf = 1.0 / (core::f64::consts::SQRT_2 * p.xi2);
    let cd = 1.0 / (core::f64::consts::SQRT_2 * (1.0 + p.gamma) * p.xi2);
    let xf = (eps - p.xi2) * cf * sqrt_n;
    let xd = (eps - (1.0 + p.gamma) * p.xi2) * cd * sqrt_n;
    let qf = q_function_deriv(xf);
    let qd = q_function_deriv(xd);
    Ok(DetectionDerivs {
        pf_tau_s: qf * xf / (2.0 * tau_s),
        pf_eps: qf * cf * sqrt_n,
        pd_tau_s: qd * xd / (2.0 * tau_s),
        pd_eps: qd * cd * sqrt_n,
    })
}

// ---------------------------------------------------------------------------
// Energy and rates
// ---------------------------------------------------------------------------

/// Expected RF energy harvested by ST `k` over a harvesting phase of length
/// `tau_h`, joules.
pub fn harvested_energy(
    tau_s: f64,
    eps: f64,
    tau_h: f64,
    k: usize,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    p.check_index(k)?;
    let det = detection_probs(tau_s, eps, p)?;
    Ok(p.p1 * det.pd * tau_h * p.delta * p.h_pt_k[k] * p.p_pt)
}

/// Expected backscattering rate of ST `k`, bit/s.
pub fn backscatter_rate(
    tau_s: f64,
    eps: f64,
    k: usize,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    p.check_index(k)?;
    let det = detection_probs(tau_s, eps, p)?;
    Ok(p.p1 * det.pd * p.rbar_b_k[k])
}

/// Expected transmit power sustained by ST `k` over `tau_t` seconds of
/// active transmission, watts. Undefined at `tau_t = 0`.
pub fn transmit_power(
    tau_s: f64,
    eps: f64,
    tau_h: f64,
    tau_t: f64,
    k: usize,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    p.check_index(k)?;
    if tau_t == 0.0 {
        return Err(ModelError::UndefinedPower);
    }
    let eh = harvested_energy(tau_s, eps, tau_h, k, p)?;
    Ok(eh / tau_t - p.pc)
}

/// Expected active transmission rate of ST `k`, bit/s. Zero by convention at
/// `tau_t = 0`.
pub fn active_rate(
    tau_s: f64,
    eps: f64,
    tau_h: f64,
    tau_t: f64,
    k: usize,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    p.check_index(k)?;
    if tau_t == 0.0 {
        return Ok(0.0);
    }
    let det = detection_probs(tau_s, eps, p)?;
    let pk = transmit_power(tau_s, eps, tau_h, tau_t, k, p)?;
    let arg_idle = 1.0 - p.pc + p.h_k[k] * pk / p.sigma2_k[k];
    let arg_miss = 1.0 - p.pc + p.h_k[k] * pk / (p.h_pt_sg * p.p_pt + p.sigma2_k[k]);
    if arg_idle <= 0.0 {
        return Err(ModelError::InfeasibleRate(arg_idle));
    }
    if arg_miss <= 0.0 {
        return Err(ModelError::InfeasibleRate(arg_miss));
    }
    Ok(p.p0 * (1.0 - det.pf) * p.kappa_k[k] * p.w * arg_idle.log2()
        + p.p1 * (1.0 - det.pd) * p.kappa_k[k] * p.w * arg_miss.log2())
}

// ---------------------------------------------------------------------------
// Payoff internals
// ---------------------------------------------------------------------------

/// Per-transmitter coefficients of the payoff once `(pf, pd)` are fixed.
///
/// With `u_i = cc_i + slope_i * tau_h / tau_t` the value of the throughput
/// term is `tau_t * sum_i a_i * log2(u_i)`: index 0 is the correctly detected
/// idle slot, index 1 the miss-detection slot. Solvers cache one of these per
/// transmitter to avoid re-deriving the detection probabilities on every
/// payoff evaluation.
pub(crate) struct PayoffTerms {
    /// `nu * p_x * (1 - p^{f|d}) * kappa_k * W` per branch.
    a: [f64; 2],
    /// `h_k * p1 * p^d * delta * h_pt_k * P_PT / den_i`.
    slope: [f64; 2],
    /// `slope_i / p^d`, kept separately so `pd -> 0` stays well defined.
    slope_per_pd: [f64; 2],
    /// `1 - Pc - h_k * Pc / den_i`.
    cc: [f64; 2],
    /// `nu * p1 * p^d * rbar_b_k`: expected value per second of backscatter.
    bsc_value: f64,
    /// `p1 * (1 - p^d)`: interference-time coefficient of the price term.
    price_coeff: f64,
}

impl PayoffTerms {
    pub(crate) fn new(
        s0: &LeaderStrategy,
        k: usize,
        p: &NetworkParams,
    ) -> Result<Self, ModelError> {
        p.check_index(k)?;
        let det = detection_probs(s0.tau_s, s0.eps, p)?;
        Ok(Self::with_probs(det.pf, det.pd, k, p))
    }

    fn with_probs(pf: f64, pd: f64, k: usize, p: &NetworkParams) -> Self {
        let den = [p.sigma2_k[k], p.h_pt_sg * p.p_pt + p.sigma2_k[k]];
        let harvest = p.p1 * p.delta * p.h_pt_k[k] * p.p_pt; // per unit pd
        let mut slope = [0.0; 2];
        let mut slope_per_pd = [0.0; 2];
        let mut cc = [0.0; 2];
        for i in 0..2 {
            slope_per_pd[i] = p.h_k[k] * harvest / den[i];
            slope[i] = pd * slope_per_pd[i];
            cc[i] = 1.0 - p.pc - p.h_k[k] * p.pc / den[i];
        }
        PayoffTerms {
            a: [
                p.nu_value * p.p0 * (1.0 - pf) * p.kappa_k[k] * p.w,
                p.nu_value * p.p1 * (1.0 - pd) * p.kappa_k[k] * p.w,
            ],
            slope,
            slope_per_pd,
            cc,
            bsc_value: p.nu_value * p.p1 * pd * p.rbar_b_k[k],
            price_coeff: p.p1 * (1.0 - pd),
        }
    }

    fn log_args(&self, tau_t: f64, tau_h: f64) -> [f64; 2] {
        [
            self.cc[0] + self.slope[0] * tau_h / tau_t,
            self.cc[1] + self.slope[1] * tau_h / tau_t,
        ]
    }

    /// Payoff value at reduced coordinates with an explicit harvesting time.
    pub(crate) fn value(
        &self,
        tau_t: f64,
        tau_b: f64,
        tau_h: f64,
        alpha: f64,
    ) -> Result<f64, ModelError> {
        let mut theta = self.bsc_value * tau_b;
        if tau_t > 0.0 {
            let u = self.log_args(tau_t, tau_h);
            for i in 0..2 {
                if u[i] <= 0.0 {
                    return Err(ModelError::InfeasibleRate(u[i]));
                }
                theta += self.a[i] * tau_t * u[i].log2();
            }
            theta -= alpha * self.price_coeff * tau_t;
        }
        Ok(theta)
    }
}

/// Expected payoff `theta_k` of ST `k` in reduced coordinates.
pub fn st_payoff(
    s_k: &FollowerStrategy,
    s0: &LeaderStrategy,
    k: usize,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    let terms = PayoffTerms::new(s0, k, p)?;
    terms.value(s_k.tau_t, s_k.tau_b, s_k.tau_h(s0, p), s0.alpha)
}

/// Expected gateway revenue `theta_0`.
pub fn sg_revenue(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    let det = detection_probs(s0.tau_s, s0.eps, p)?;
    Ok(s0.alpha * p.p1 * (1.0 - det.pd) * joint.sum_tau_t())
}

/// Exact potential of the follower sub-game: the sum of all ST payoffs.
pub fn potential(
    joint: &JointFollowerStrategy,
    s0: &LeaderStrategy,
    p: &NetworkParams,
) -> Result<f64, ModelError> {
    let mut phi = 0.0;
    for (k, s_k) in joint.entries.iter().enumerate() {
        phi += st_payoff(s_k, s0, k, p)?;
    }
    Ok(phi)
}

// ---------------------------------------------------------------------------
// Derivatives
// ---------------------------------------------------------------------------

/// Analytic gradient `(d theta_k / d tau_t, d theta_k / d tau_b)` in reduced
/// coordinates.
///
/// At `tau_t = 0` with positive harvesting time the right-hand one-sided
/// derivative in `tau_t` diverges (the rate term grows like `-log tau_t`);
/// the component is reported as `+inf` then.
pub fn grad_theta_k(
    s_k: &FollowerStrategy,
    s0: &LeaderStrategy,
    k: usize,
    p: &NetworkParams,
) -> Result<[f64; 2], ModelError> {
    let terms = PayoffTerms::new(s0, k, p)?;
    let tau_h = s_k.tau_h(s0, p);
    grad_from_terms(&terms, s_k.tau_t, tau_h, s0.alpha)
}

pub(crate) fn grad_from_terms(
    terms: &PayoffTerms,
    tau_t: f64,
    tau_h: f64,
    alpha: f64,
) -> Result<[f64; 2], ModelError> {
    if tau_t == 0.0 {
        let g_t = if tau_h > 0.0 && (terms.slope[0] > 0.0 || terms.slope[1] > 0.0) {
            f64::INFINITY
        } else {
            let mut v = -alpha * terms.price_coeff;
            for i in 0..2 {
                if terms.cc[i] <= 0.0 {
                    return Err(ModelError::InfeasibleRate(terms.cc[i]));
                }
                v += terms.a[i] * terms.cc[i].log2();
            }
            v
        };
        return Ok([g_t, terms.bsc_value]);
    }
    let u = terms.log_args(tau_t, tau_h);
    let mut g_t = -alpha * terms.price_coeff;
    let mut d_theta_d_h = 0.0;
    for i in 0..2 {
        if u[i] <= 0.0 {
            return Err(ModelError::InfeasibleRate(u[i]));
        }
        g_t += terms.a[i] * (u[i].log2() - terms.slope[i] * tau_h / (tau_t * u[i] * LN2));
        d_theta_d_h += terms.a[i] * terms.slope[i] / (u[i] * LN2);
    }
    Ok([g_t, terms.bsc_value - d_theta_d_h])
}

/// Analytic 2x2 Hessian of `theta_k` in reduced coordinates; symmetric and
/// negative semidefinite on the feasible set.
pub fn hessian_theta_k(
    s_k: &FollowerStrategy,
    s0: &LeaderStrategy,
    k: usize,
    p: &NetworkParams,
) -> Result<[[f64; 2]; 2], ModelError> {
    let terms = PayoffTerms::new(s0, k, p)?;
    let tau_h = s_k.tau_h(s0, p);
    hessian_from_terms(&terms, s_k.tau_t, tau_h)
}

pub(crate) fn hessian_from_terms(
    terms: &PayoffTerms,
    tau_t: f64,
    tau_h: f64,
) -> Result<[[f64; 2]; 2], ModelError> {
    if tau_t == 0.0 {
        // Limit along tau_h = 0: the rate term vanishes identically.
        return Ok([[0.0, 0.0], [0.0, 0.0]]);
    }
    let u = terms.log_args(tau_t, tau_h);
    let ratio = tau_h / tau_t;
    let mut h_tt = 0.0;
    let mut h_tb = 0.0;
    let mut h_bb = 0.0;
    for i in 0..2 {
        if u[i] <= 0.0 {
            return Err(ModelError::InfeasibleRate(u[i]));
        }
        let term = terms.a[i] * terms.slope[i] * terms.slope[i] / (u[i] * u[i] * tau_t * LN2);
        h_tt -= term * ratio * ratio;
        h_tb -= term * ratio;
        h_bb -= term;
    }
    Ok([[h_tt, h_tb], [h_tb, h_bb]])
}

/// Mixed second partials of `theta_k`: rows are the reduced follower
/// coordinates `(tau_t, tau_b)`, columns the leader coordinates
/// `(alpha, tau_s, eps)`.
pub fn mixed_partials_theta_k(
    s_k: &FollowerStrategy,
    s0: &LeaderStrategy,
    k: usize,
    p: &NetworkParams,
) -> Result<[[f64; 3]; 2], ModelError> {
    let terms = PayoffTerms::new(s0, k, p)?;
    let derivs = detection_prob_derivs(s0.tau_s, s0.eps, p)?;
    let tau_t = s_k.tau_t;
    let tau_h = s_k.tau_h(s0, p);
    if tau_t == 0.0 {
        // The rate term is identically zero along tau_t = 0; only the price
        // and backscatter-value terms survive in the one-sided derivatives.
        let nu_p1_rb = p.nu_value * p.p1 * p.rbar_b_k[k];
        let dgt = [
            -terms.price_coeff,
            s0.alpha * p.p1 * derivs.pd_tau_s,
            s0.alpha * p.p1 * derivs.pd_eps,
        ];
        let dgb = [
            0.0,
            nu_p1_rb * derivs.pd_tau_s,
            nu_p1_rb * derivs.pd_eps,
        ];
        return Ok([dgt, dgb]);
    }
    let u = terms.log_args(tau_t, tau_h);
    for i in 0..2 {
        if u[i] <= 0.0 {
            return Err(ModelError::InfeasibleRate(u[i]));
        }
    }
    let nu_k_w = p.nu_value * p.kappa_k[k] * p.w;

    // Sensitivity of the gradient to pf (only the idle branch, i = 0).
    let dgt_dpf = -p.p0 * nu_k_w * (u[0].log2() - terms.slope[0] * tau_h / (tau_t * u[0] * LN2));
    let dgb_dpf = p.p0 * nu_k_w * terms.slope[0] / (u[0] * LN2);

    // Sensitivity to pd: the miss branch coefficient, the harvest slopes,
    // the backscatter value and the price term all carry pd.
    let mut dgt_dpd =
        -p.p1 * nu_k_w * (u[1].log2() - terms.slope[1] * tau_h / (tau_t * u[1] * LN2))
            + s0.alpha * p.p1;
    let mut dgb_dpd =
        p.nu_value * p.p1 * p.rbar_b_k[k] + p.p1 * nu_k_w * terms.slope[1] / (u[1] * LN2);
    for i in 0..2 {
        dgt_dpd += terms.a[i] * terms.slope[i] * terms.slope_per_pd[i] * tau_h * tau_h
            / (tau_t * tau_t * u[i] * u[i] * LN2);
        dgb_dpd -= terms.a[i] * terms.slope_per_pd[i] * terms.cc[i] / (u[i] * u[i] * LN2);
    }

    // Sensitivity to tau_h (tau_s enters through tau_h = T - tau_s - tau_b
    // with d tau_h / d tau_s = -1).
    let mut dgt_dh = 0.0;
    let mut dgb_dh = 0.0;
    for i in 0..2 {
        let term = terms.a[i] * terms.slope[i] * terms.slope[i] / (u[i] * u[i] * tau_t * LN2);
        dgt_dh += term * tau_h / tau_t;
        dgb_dh += term;
    }

    let dgt = [
        -terms.price_coeff,
        dgt_dpf * derivs.pf_tau_s + dgt_dpd * derivs.pd_tau_s - dgt_dh,
        dgt_dpf * derivs.pf_eps + dgt_dpd * derivs.pd_eps,
    ];
    let dgb = [
        0.0,
        dgb_dpf * derivs.pf_tau_s + dgb_dpd * derivs.pd_tau_s - dgb_dh,
        dgb_dpf * derivs.pf_eps + dgb_dpd * derivs.pd_eps,
    ];
    Ok([dgt, dgb])
}

/// Gradient of the gateway revenue with respect to `(alpha, tau_s, eps)`.
pub fn grad_theta0_s0(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
) -> Result<[f64; 3], ModelError> {
    let det = detection_probs(s0.tau_s, s0.eps, p)?;
    let derivs = detection_prob_derivs(s0.tau_s, s0.eps, p)?;
    let sum_t = joint.sum_tau_t();
    Ok([
        p.p1 * (1.0 - det.pd) * sum_t,
        -s0.alpha * p.p1 * derivs.pd_tau_s * sum_t,
        -s0.alpha * p.p1 * derivs.pd_eps * sum_t,
    ])
}

/// Gradient of the gateway revenue with respect to the stacked follower
/// strategy (length `2K`).
pub fn grad_theta0_st(
    s0: &LeaderStrategy,
    p: &NetworkParams,
) -> Result<Vec<f64>, ModelError> {
    let det = detection_probs(s0.tau_s, s0.eps, p)?;
    let per_t = s0.alpha * p.p1 * (1.0 - det.pd);
    let mut g = vec![0.0; 2 * p.num_st()];
    for k in 0..p.num_st() {
        g[2 * k] = per_t;
    }
    Ok(g)
}

/// Gradient of the leader's miss-detection constraint `Z_0` with respect to
/// `(alpha, tau_s, eps)`.
pub fn grad_leader_constraint(
    s0: &LeaderStrategy,
    p: &NetworkParams,
) -> Result<[f64; 3], ModelError> {
    let derivs = detection_prob_derivs(s0.tau_s, s0.eps, p)?;
    Ok([0.0, -derivs.pd_tau_s, -derivs.pd_eps])
}

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

/// Shared time-budget constraints `G`: feasible iff both entries <= 0.
pub fn constraints_g(
    joint: &JointFollowerStrategy,
    s0: &LeaderStrategy,
    p: &NetworkParams,
) -> [f64; 2] {
    let budget = p.t_slot - s0.tau_s;
    [joint.sum_tau_t() - budget, joint.sum_tau_b() - budget]
}

/// Local constraints `Z_k` of ST `k`: nonnegativity of the two times and the
/// relaxed supply-power constraint. Feasible iff all entries <= 0.
pub fn constraints_z(
    s_k: &FollowerStrategy,
    s0: &LeaderStrategy,
    k: usize,
    p: &NetworkParams,
) -> [f64; 3] {
    [
        -s_k.tau_t,
        -s_k.tau_b,
        p.pc * s_k.tau_t - p.supply_coeff(k) * (p.t_slot - s0.tau_s - s_k.tau_b),
    ]
}

/// Strictly interior point of the follower strategy polytope, adapted to the
/// transmission mode.
pub fn slater_point(
    s0: &LeaderStrategy,
    p: &NetworkParams,
    mode: TransmissionMode,
) -> JointFollowerStrategy {
    let k = p.num_st();
    let budget = (p.t_slot - s0.tau_s).max(0.0);
    let entries = (0..k)
        .map(|i| {
            let share = budget / (2.0 * k as f64);
            match mode {
                TransmissionMode::BackscatterOnly => FollowerStrategy::new(0.0, share),
                TransmissionMode::HarvestOnly => {
                    let tau_t = share.min(0.5 * p.supply_coeff(i) * budget / p.pc);
                    FollowerStrategy::new(tau_t, 0.0)
                }
                TransmissionMode::Hybrid => {
                    let tau_t = share;
                    let z3_cap = budget - p.pc * tau_t / p.supply_coeff(i);
                    let tau_b = share.min(0.5 * z3_cap.max(0.0));
                    FollowerStrategy::new(tau_t, tau_b)
                }
            }
        })
        .collect();
    JointFollowerStrategy::new(entries)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Table-1 style parameter set with explicit channel gains.
    pub(crate) fn table1_params(k: usize) -> NetworkParams {
        let gamma = 10f64.powf(0.3);
        let xi2 = 0.01;
        let p_pt = 10.0;
        NetworkParams::new(NetworkParams {
            p0: 0.6,
            p1: 0.4,
            t_slot: 1.0,
            w: 1e6,
            p_pt,
            xi2,
            gamma,
            h_pt_sg: gamma * xi2 / p_pt,
            delta: 0.6,
            nu_value: 1.0,
            pc: 10f64.powf(-3.5) * 1e-3, // -35 dBm
            pbar_m: 0.1,
            eps_lo: 0.005,
            eps_hi: 2.0 * (1.0 + gamma) * xi2,
            h_pt_k: vec![1e-3; k],
            h_k: vec![10f64.powf(-3.5); k],
            sigma2_k: vec![1e-7; k], // -40 dBm
            kappa_k: vec![0.6; k],
            rbar_b_k: vec![1e5; k],
        })
        .expect("valid params")
    }

    pub(crate) fn feasible_leader(p: &NetworkParams) -> LeaderStrategy {
        // pd = 0.95 at this threshold; comfortably inside the miss cap.
        let sqrt_n = (p.w * 0.05).sqrt();
        let x = super::inverse_q_for_tests(0.95);
        let eps = (1.0 + p.gamma) * p.xi2
            * (1.0 + core::f64::consts::SQRT_2 * x / sqrt_n);
        LeaderStrategy {
            alpha: 1e8,
            tau_s: 0.05,
            eps,
        }
    }

    fn fd_gradient(
        f: impl Fn(f64, f64) -> f64,
        x: f64,
        y: f64,
        h: f64,
    ) -> [f64; 2] {
        [
            (f(x + h, y) - f(x - h, y)) / (2.0 * h),
            (f(x, y + h) - f(x, y - h)) / (2.0 * h),
        ]
    }

    #[test]
    fn q_function_basics() {
        assert_eq!(q_function(0.0), 0.5);
        assert!(q_function(40.0) < 1e-300);
        // Reference value for Q(1) (Gaussian tail).
        assert!((q_function(1.0) - 0.15865525393145705).abs() < 1e-14);
        assert!(q_function(-1.0) > q_function(1.0));
    }

    #[test]
    fn detection_edges() {
        let p = table1_params(1);
        let det = detection_probs(0.05, p.xi2, &p).unwrap();
        assert!((det.pf - 0.5).abs() < 1e-12);
        let det = detection_probs(0.05, (1.0 + p.gamma) * p.xi2, &p).unwrap();
        assert!((det.pd - 0.5).abs() < 1e-12);
        assert!(detection_probs(0.0, 0.02, &p).is_err());
    }

    #[test]
    fn detection_monotone_in_eps() {
        let p = table1_params(1);
        let mut prev: Option<DetectionProbs> = None;
        for i in 0..200 {
            let eps = p.eps_lo + (p.eps_hi - p.eps_lo) * i as f64 / 199.0;
            let det = detection_probs(0.05, eps, &p).unwrap();
            if let Some(q) = prev {
                assert!(det.pf <= q.pf + 1e-15);
                assert!(det.pd <= q.pd + 1e-15);
            }
            if eps >= p.xi2 && eps <= (1.0 + p.gamma) * p.xi2 {
                assert!(det.pd >= det.pf);
            }
            prev = Some(det);
        }
    }

    #[test]
    fn energy_and_rates_direct_values() {
        // Direct evaluations with pd forced to 1 via a tiny threshold.
        let p = table1_params(1);
        let s = 0.05;
        let eps = p.eps_lo; // pd = 1 to machine precision at Table-1 scale
        let det = detection_probs(s, eps, &p).unwrap();
        assert!((det.pd - 1.0).abs() < 1e-12);

        let eh = harvested_energy(s, eps, 0.5, 0, &p).unwrap();
        let expect = 0.4 * 1.0 * 0.5 * 0.6 * p.h_pt_k[0] * 10.0;
        assert!((eh - expect).abs() < 1e-12 * expect);
        assert_eq!(harvested_energy(s, eps, 0.0, 0, &p).unwrap(), 0.0);

        let rb = backscatter_rate(s, eps, 0, &p).unwrap();
        assert!((rb - 0.4 * 1e5).abs() < 1e-6);

        let pw = transmit_power(s, eps, 0.5, 0.25, 0, &p).unwrap();
        assert!((pw - (eh / 0.25 - p.pc)).abs() < 1e-15);
        assert!(matches!(
            transmit_power(s, eps, 0.5, 0.0, 0, &p),
            Err(ModelError::UndefinedPower)
        ));

        assert_eq!(active_rate(s, eps, 0.5, 0.0, 0, &p).unwrap(), 0.0);
        assert!(harvested_energy(s, eps, 0.5, 3, &p).is_err());
    }

    #[test]
    fn transmit_power_drains_circuit_without_harvest() {
        let p = table1_params(1);
        let pw = transmit_power(0.05, p.eps_lo, 0.0, 0.25, 0, &p).unwrap();
        assert!((pw + p.pc).abs() < 1e-18);
    }

    #[test]
    fn payoff_zero_and_pricing_decomposition() {
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        let zero = FollowerStrategy::new(0.0, 0.0);
        assert_eq!(st_payoff(&zero, &s0, 0, &p).unwrap(), 0.0);

        let s_k = FollowerStrategy::new(0.3, 0.4);
        let free = LeaderStrategy { alpha: 0.0, ..s0 };
        let theta = st_payoff(&s_k, &free, 0, &p).unwrap();
        let tau_h = s_k.tau_h(&free, &p);
        let rb = backscatter_rate(free.tau_s, free.eps, 0, &p).unwrap();
        let rt = active_rate(free.tau_s, free.eps, tau_h, s_k.tau_t, 0, &p).unwrap();
        let throughput = s_k.tau_b * rb + s_k.tau_t * rt;
        assert!((theta - p.nu_value * throughput).abs() <= 1e-12 * theta.abs());
    }

    #[test]
    fn revenue_direct_value() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let joint = JointFollowerStrategy::new(vec![
            FollowerStrategy::new(0.25, 0.1),
            FollowerStrategy::new(0.25, 0.1),
        ]);
        let det = detection_probs(s0.tau_s, s0.eps, &p).unwrap();
        let expect = s0.alpha * p.p1 * (1.0 - det.pd) * 0.5;
        assert!((sg_revenue(&s0, &joint, &p).unwrap() - expect).abs() < 1e-9 * expect.abs());
        let zero_alpha = LeaderStrategy { alpha: 0.0, ..s0 };
        assert_eq!(sg_revenue(&zero_alpha, &joint, &p).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        for &(t, b) in &[(0.2, 0.3), (0.05, 0.6), (0.4, 0.01), (0.31, 0.44)] {
            let g = grad_theta_k(&FollowerStrategy::new(t, b), &s0, 0, &p).unwrap();
            let f = |x: f64, y: f64| {
                st_payoff(&FollowerStrategy::new(x, y), &s0, 0, &p).unwrap()
            };
            let fd = fd_gradient(f, t, b, 1e-6);
            for i in 0..2 {
                let scale = g[i].abs().max(1.0);
                assert!(
                    (g[i] - fd[i]).abs() < 1e-6 * scale,
                    "component {i}: analytic {} vs fd {}",
                    g[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn gradient_sign_under_heavy_pricing() {
        let p = table1_params(1);
        let s0 = LeaderStrategy {
            alpha: 1e15,
            ..feasible_leader(&p)
        };
        let g = grad_theta_k(&FollowerStrategy::new(0.2, 0.3), &s0, 0, &p).unwrap();
        assert!(g[0] < 0.0);
    }

    #[test]
    fn gradient_chain_rule_through_tau_h() {
        // With rbar contribution removed, d theta / d tau_b = -d theta / d tau_h.
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        let s_k = FollowerStrategy::new(0.2, 0.3);
        let g = grad_theta_k(&s_k, &s0, 0, &p).unwrap();
        let rb_term = p.nu_value
            * backscatter_rate(s0.tau_s, s0.eps, 0, &p).unwrap();
        let d_dh = rb_term - g[1];
        // Central difference of theta in tau_h at fixed tau_t, tau_b.
        let h = 1e-6;
        let f = |tau_h: f64| {
            let terms_b = p.t_slot - s0.tau_s - tau_h; // tau_b giving this tau_h
            st_payoff(&FollowerStrategy::new(s_k.tau_t, terms_b), &s0, 0, &p).unwrap()
                - p.nu_value
                    * backscatter_rate(s0.tau_s, s0.eps, 0, &p).unwrap()
                    * terms_b
        };
        let tau_h0 = s_k.tau_h(&s0, &p);
        let fd = (f(tau_h0 + h) - f(tau_h0 - h)) / (2.0 * h);
        assert!((d_dh - fd).abs() < 1e-5 * d_dh.abs().max(1.0));
    }

    #[test]
    fn hessian_nsd_and_null_direction() {
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        let s_k = FollowerStrategy::new(0.2, 0.3);
        let h = hessian_theta_k(&s_k, &s0, 0, &p).unwrap();
        assert_eq!(h[0][1], h[1][0]);
        let tau_h = s_k.tau_h(&s0, &p);
        // Reduced image of the original null direction (tau_h, tau_t).
        let v = [s_k.tau_t, -tau_h];
        let q = v[0] * (h[0][0] * v[0] + h[0][1] * v[1])
            + v[1] * (h[1][0] * v[0] + h[1][1] * v[1]);
        assert!(q.abs() < 1e-9 * (v[0] * v[0] + v[1] * v[1]));
        for &(v1, v2) in &[(1.0, 0.0), (0.0, 1.0), (0.7, -0.4), (-2.0, 5.0)] {
            let q = v1 * (h[0][0] * v1 + h[0][1] * v2) + v2 * (h[1][0] * v1 + h[1][1] * v2);
            assert!(q <= 1e-10 * (v1 * v1 + v2 * v2));
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let p = table1_params(1);
        let s0 = feasible_leader(&p);
        let (t, b) = (0.2, 0.3);
        let hess = hessian_theta_k(&FollowerStrategy::new(t, b), &s0, 0, &p).unwrap();
        let h = 1e-6;
        for col in 0..2 {
            let (dt, db) = if col == 0 { (h, 0.0) } else { (0.0, h) };
            let gp = grad_theta_k(&FollowerStrategy::new(t + dt, b + db), &s0, 0, &p).unwrap();
            let gm = grad_theta_k(&FollowerStrategy::new(t - dt, b - db), &s0, 0, &p).unwrap();
            for row in 0..2 {
                let fd = (gp[row] - gm[row]) / (2.0 * h);
                let scale = hess[row][col].abs().max(1.0);
                assert!(
                    (hess[row][col] - fd).abs() < 1e-4 * scale,
                    "H[{row}][{col}] analytic {} vs fd {}",
                    hess[row][col],
                    fd
                );
            }
        }
    }

    #[test]
    fn mixed_partials_match_finite_differences() {
        let p = table1_params(1);
        // Work at a threshold where pd sits strictly inside (0, 1) so the
        // detection derivatives are alive.
        let sqrt_n = (p.w * 0.05f64).sqrt();
        let eps = (1.0 + p.gamma) * p.xi2 * (1.0 - 1.2 * core::f64::consts::SQRT_2 / sqrt_n);
        let s0 = LeaderStrategy {
            alpha: 1e8,
            tau_s: 0.05,
            eps,
        };
        let s_k = FollowerStrategy::new(0.2, 0.3);
        let mp = mixed_partials_theta_k(&s_k, &s0, 0, &p).unwrap();
        let steps = [1.0, 1e-9, 1e-9]; // alpha, tau_s, eps step sizes
        for col in 0..3 {
            let h = steps[col];
            let mut s_plus = s0;
            let mut s_minus = s0;
            match col {
                0 => {
                    s_plus.alpha += h;
                    s_minus.alpha -= h;
                }
                1 => {
                    s_plus.tau_s += h;
                    s_minus.tau_s -= h;
                }
                _ => {
                    s_plus.eps += h;
                    s_minus.eps -= h;
                }
            }
            let gp = grad_theta_k(&s_k, &s_plus, 0, &p).unwrap();
            let gm = grad_theta_k(&s_k, &s_minus, 0, &p).unwrap();
            for row in 0..2 {
                let fd = (gp[row] - gm[row]) / (2.0 * h);
                let scale = mp[row][col].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (mp[row][col] - fd).abs() < 2e-4 * scale,
                    "mixed[{row}][{col}] analytic {} vs fd {}",
                    mp[row][col],
                    fd
                );
            }
        }
    }

    #[test]
    fn potential_is_exact() {
        let p = table1_params(3);
        let s0 = feasible_leader(&p);
        let mut joint = JointFollowerStrategy::new(vec![
            FollowerStrategy::new(0.1, 0.2),
            FollowerStrategy::new(0.2, 0.1),
            FollowerStrategy::new(0.05, 0.3),
        ]);
        let phi_a = potential(&joint, &s0, &p).unwrap();
        let theta_a = st_payoff(&joint.entries[1], &s0, 1, &p).unwrap();
        joint.entries[1] = FollowerStrategy::new(0.15, 0.25);
        let phi_b = potential(&joint, &s0, &p).unwrap();
        let theta_b = st_payoff(&joint.entries[1], &s0, 1, &p).unwrap();
        let lhs = phi_b - phi_a;
        let rhs = theta_b - theta_a;
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn constraints_and_slater() {
        let p = table1_params(2);
        let s0 = feasible_leader(&p);
        let zero = JointFollowerStrategy::zeros(2);
        let g = constraints_g(&zero, &s0, &p);
        assert!(g[0] < 0.0 && g[1] < 0.0);

        let budget = p.t_slot - s0.tau_s;
        let full = JointFollowerStrategy::new(vec![
            FollowerStrategy::new(budget / 2.0, 0.0),
            FollowerStrategy::new(budget / 2.0, 0.0),
        ]);
        let g = constraints_g(&full, &s0, &p);
        assert!(g[0].abs() < 1e-12);

        let slater = slater_point(&s0, &p, TransmissionMode::Hybrid);
        let g = constraints_g(&slater, &s0, &p);
        assert!(g[0] < 0.0 && g[1] < 0.0);
        for (k, s_k) in slater.entries.iter().enumerate() {
            let z = constraints_z(s_k, &s0, k, &p);
            assert!(z.iter().all(|&v| v < 0.0), "Z = {z:?}");
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = table1_params(1);
        p.p0 = 0.7; // breaks p0 + p1 = 1
        assert!(NetworkParams::new(p).is_err());
        let mut p = table1_params(1);
        p.eps_lo = p.eps_hi;
        assert!(NetworkParams::new(p).is_err());
        let mut p = table1_params(1);
        p.gamma *= 1.001;
        assert!(NetworkParams::new(p).is_err());
    }
}

// Test-only helper: numeric inverse of the Q-function by bisection.
#[cfg(test)]
pub(crate) fn inverse_q_for_tests(target: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
