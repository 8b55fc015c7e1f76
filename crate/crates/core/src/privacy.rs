//! Rényi-DP accounting for the client-subsampled Gaussian mechanism,
//! conversion to `(ε, δ)`, noise calibration and masked noise injection.
//!
//! Accounting is sensitivity-normalised: the mechanism adds noise with
//! standard deviation `σ` times the L2 sensitivity, so only `σ` and the
//! client sampling ratio `q` enter the curve. Rand-k, top-k and dense
//! DP-FedAvg share the same accounting because each client's clipped
//! contribution has L2 norm at most `C` regardless of how many coordinates
//! carry noise.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{param, Error, Result};
use crate::numeric::{gaussian_sample, ParamVector, RngStream};
use crate::sparsify::MaskVector;

/// Largest integer order on the default grid.
pub const MAX_ORDER: u32 = 256;

/// Parameters of one DP training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub clip: f64,
    pub noise_multiplier: f64,
    /// `q = r / n`.
    pub sampling_ratio: f64,
    pub rounds: u64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(param("clip must be positive and finite"));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(param("noise multiplier must be finite and non-negative"));
        }
        check_q(self.sampling_ratio)?;
        check_delta(self.delta)?;
        if self.rounds == 0 {
            return Err(param("rounds must be at least 1"));
        }
        Ok(())
    }
}

/// `δ = n^{-1.1}`, which stays below `1/n`.
pub fn default_delta(n_clients: usize) -> f64 {
    libm::pow(n_clients as f64, -1.1)
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(param("sampling ratio q must lie in (0, 1]"));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(param("delta must lie in (0, 1)"));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma == 0.0 {
        return Err(Error::InfinitePrivacyLoss);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(param("noise multiplier must be positive and finite"));
    }
    Ok(())
}

/// RDP orders paired with their privacy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub rho: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if orders.len() != rho.len() {
            return Err(param("orders and rho must have the same length"));
        }
        if orders.iter().any(|&a| !(a > 1.0)) || rho.iter().any(|&r| !(r >= 0.0)) {
            return Err(param("orders must exceed 1 and rho must be non-negative"));
        }
        Ok(Self { orders, rho })
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }
}

/// `{1.5, 1.75} ∪ {2, …, 256}`.
pub fn default_orders() -> Vec<f64> {
    let mut orders = alloc::vec![1.5, 1.75];
    orders.extend((2..=MAX_ORDER).map(f64::from));
    orders
}

/// Gaussian mechanism with unit sensitivity: `ρ(α) = α / (2σ²)`.
pub fn rdp_gaussian(alpha: f64, sigma: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(param("RDP order must exceed 1"));
    }
    check_sigma(sigma)?;
    Ok(alpha / (2.0 * sigma * sigma))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

fn ln_binom(n: u32, k: u32) -> f64 {
    let (n, k) = (f64::from(n), f64::from(k));
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// Upper bound on the RDP of the Gaussian mechanism applied to a uniformly
/// subsampled (without replacement) population at integer order `alpha`:
///
/// `(1/(α−1)) · log(1 + q²·C(α,2)·min{4(e^{ρ(2)}−1), 2e^{ρ(2)}} + Σ_{j=3}^{α} q^j·C(α,j)·2e^{(j−1)ρ(j)})`
///
/// with `ρ(j) = j/(2σ²)`. The sum is evaluated in log space; a non-finite
/// result is reported as `+∞`.
pub fn rdp_subsampled_gaussian(alpha: u32, sigma: f64, q: f64) -> Result<f64> {
    if alpha < 2 {
        return Err(param("subsampled bound needs an integer order >= 2"));
    }
    check_sigma(sigma)?;
    check_q(q)?;
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let ln_q = libm::log(q);
    let rho2 = 2.0 * inv2s2;
    let ln_min = libm::fmin(libm::log(4.0 * libm::expm1(rho2)), core::f64::consts::LN_2 + rho2);
    let mut acc = 0.0;
    acc = log_add(acc, 2.0 * ln_q + ln_binom(alpha, 2) + ln_min);
    for j in 3..=alpha {
        let jf = f64::from(j);
        let term = jf * ln_q + ln_binom(alpha, j) + core::f64::consts::LN_2 + (jf - 1.0) * jf * inv2s2;
        acc = log_add(acc, term);
    }
    let rho = acc / f64::from(alpha - 1);
    Ok(if rho.is_finite() { rho } else { f64::INFINITY })
}

/// Per-round curve on `orders`. Fractional orders take the bound of the next
/// integer order, which is valid because Rényi divergence is nondecreasing
/// in the order.
pub fn subsampled_gaussian_curve(sigma: f64, q: f64, orders: &[f64]) -> Result<RdpCurve> {
    check_sigma(sigma)?;
    check_q(q)?;
    let mut rho = Vec::with_capacity(orders.len());
    for &alpha in orders {
        if !(alpha > 1.0) {
            return Err(param("RDP order must exceed 1"));
        }
        let int_order = libm::ceil(alpha).max(2.0) as u32;
        rho.push(rdp_subsampled_gaussian(int_order, sigma, q)?);
    }
    RdpCurve::new(orders.to_vec(), rho)
}

/// `T`-fold composition: every `ρ(α)` multiplied by `T`.
pub fn compose(curve: &RdpCurve, rounds: u64) -> RdpCurve {
    RdpCurve {
        orders: curve.orders.clone(),
        rho: curve.rho.iter().map(|r| r * rounds as f64).collect(),
    }
}

/// `min_α ρ(α) + log(1/δ)/(α−1)` and the minimising order.
pub fn to_eps_delta(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    check_delta(delta)?;
    if curve.is_empty() {
        return Err(param("RDP curve is empty"));
    }
    let ln_inv_delta = -libm::log(delta);
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&alpha, &rho) in curve.orders.iter().zip(&curve.rho) {
        let eps = rho + ln_inv_delta / (alpha - 1.0);
        if eps < best.0 {
            best = (eps, alpha);
        }
    }
    Ok(best)
}

/// `(ε, best α)` after `rounds` rounds on the default order grid.
pub fn epsilon(sigma: f64, q: f64, rounds: u64, delta: f64) -> Result<(f64, f64)> {
    let curve = subsampled_gaussian_curve(sigma, q, &default_orders())?;
    to_eps_delta(&compose(&curve, rounds), delta)
}

/// Closed-form noise multiplier `σ = sqrt(7q²T(ε + 2 log(1/δ)) / ε²)`,
/// admissible only for `0 < ε < 2 log(1/δ)`.
pub fn calibrate_sigma_theorem1(eps: f64, delta: f64, q: f64, rounds: u64) -> Result<f64> {
    check_delta(delta)?;
    check_q(q)?;
    if rounds == 0 {
        return Err(param("rounds must be at least 1"));
    }
    let ln_inv_delta = -libm::log(delta);
    if !(eps > 0.0 && eps < 2.0 * ln_inv_delta) {
        return Err(param(format!(
            "closed form requires 0 < eps < 2 log(1/delta) = {:.6}, got {eps}",
            2.0 * ln_inv_delta
        )));
    }
    Ok(libm::sqrt(7.0 * q * q * rounds as f64 * (eps + 2.0 * ln_inv_delta) / (eps * eps)))
}

/// Whether `(α, σ, q)` satisfies `σ² ≥ 0.7` and
/// `α ≤ (2/3)σ² log(1/(qα(1+σ²))) + 1` (sensitivity normalised to 1), under
/// which the subsampled bound simplifies to `3.5 q² α / σ²`.
pub fn simplified_bound_applies(alpha: f64, sigma: f64, q: f64) -> bool {
    let s2 = sigma * sigma;
    s2 >= 0.7 && alpha <= (2.0 / 3.0) * s2 * libm::log(1.0 / (q * alpha * (1.0 + s2))) + 1.0
}

/// Order used by the closed-form calibration, `1 + 2 log(1/δ)/ε`.
pub fn theorem1_order(eps: f64, delta: f64) -> f64 {
    1.0 - 2.0 * libm::log(delta) / eps
}

/// Bisection for the smallest noise multiplier whose accountant `ε` lies in
/// `[eps_target·(1−1e−3), eps_target]`. The bracket must straddle the target.
pub fn calibrate_sigma_accountant(
    eps_target: f64,
    delta: f64,
    q: f64,
    rounds: u64,
    sigma_bracket: (f64, f64),
) -> Result<f64> {
    if !(eps_target > 0.0) || !eps_target.is_finite() {
        return Err(param("target epsilon must be positive and finite"));
    }
    let (mut lo, mut hi) = sigma_bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(param("sigma bracket must satisfy 0 < low < high"));
    }
    let eps_at = |s: f64| epsilon(s, q, rounds, delta).map(|e| e.0);
    let (eps_lo, eps_hi) = (eps_at(lo)?, eps_at(hi)?);
    if !(eps_lo > eps_target && eps_hi <= eps_target) {
        return Err(Error::Calibration(format!(
            "bracket [{lo}, {hi}] gives eps [{eps_lo:.6}, {eps_hi:.6}], which does not straddle {eps_target}"
        )));
    }
    let floor = eps_target * (1.0 - 1e-3);
    let mut eps_hi = eps_hi;
    for _ in 0..200 {
        if eps_hi >= floor {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        let e = eps_at(mid)?;
        if e <= eps_target {
            hi = mid;
            eps_hi = e;
        } else {
            lo = mid;
        }
    }
    Err(Error::Calibration("bisection did not converge".into()))
}

/// Default bracket for [`calibrate_sigma_accountant`].
pub const DEFAULT_SIGMA_BRACKET: (f64, f64) = (0.05, 1.0e4);

/// Adds iid `N(0, C²σ²/r)` to the masked coordinates of `update`; other
/// coordinates are untouched. `σ = 0` returns the input unchanged.
pub fn perturb_masked(
    update: &[f64],
    mask: &MaskVector,
    clip: f64,
    sigma: f64,
    r: usize,
    stream: &RngStream,
) -> Result<ParamVector> {
    if update.len() != mask.dim() {
        return Err(param("update length does not match mask dimension"));
    }
    if r == 0 {
        return Err(param("clients per round must be at least 1"));
    }
    let mut out = ParamVector::from(update);
    if sigma == 0.0 {
        return Ok(out);
    }
    let std = clip * sigma / libm::sqrt(r as f64);
    let noise = gaussian_sample(stream, std, mask.k())?;
    for (&i, z) in mask.indices().iter().zip(noise) {
        out[i] += z;
    }
    Ok(out)
}

/// Running accountant: the per-round curve is fixed, composition counts
/// rounds.
#[derive(Debug, Clone)]
pub struct Accountant {
    per_round: Option<RdpCurve>,
    rounds: u64,
    delta: f64,
}

impl Accountant {
    /// `σ = 0` yields an accountant that always reports `+∞`.
    pub fn new(sigma: f64, q: f64, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let per_round = match subsampled_gaussian_curve(sigma, q, &default_orders()) {
            Ok(c) => Some(c),
            Err(Error::InfinitePrivacyLoss) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            per_round,
            rounds: 0,
            delta,
        })
    }

    pub fn step(&mut self) {
        self.rounds += 1;
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Cumulative `(ε, best α)`; `ε = 0` before the first round.
    pub fn epsilon(&self) -> (f64, f64) {
        match (&self.per_round, self.rounds) {
            (_, 0) => (0.0, f64::NAN),
            (None, _) => (f64::INFINITY, f64::NAN),
            (Some(curve), t) => to_eps_delta(&compose(curve, t), self.delta).unwrap_or((f64::INFINITY, f64::NAN)),
        }
    }
}
