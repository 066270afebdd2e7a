//! Finite-blocklength and channel mathematics.
//!
//! Everything here is a pure function of its arguments. SNR values are
//! linear (not dB) and powers are in watts; conversion from dBm happens once
//! when a configuration is loaded.
//!
//! The received SNR under path-loss inversion power control with Rayleigh
//! fading is exponential with mean `P0 / sigma^2`. The packet error
//! probability is the expectation of the piecewise-linear error curve
//!
//! ```text
//! eps(g) = 1                    g <= g1
//!        = 1/2 - mu (g - beta)  g1 < g <= g2
//!        = 0                    g > g2
//! ```
//!
//! over that exponential law.

use std::f64::consts::{LN_2, LOG2_E, PI, SQRT_2};

use crate::error::{Error, Result};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Per-user large-scale geometry, used only for transmit-power reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    pub distance_m: f64,
    pub alpha: f64,
    pub rho0: f64,
}

/// Received-power threshold and noise floor, in linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub p0_watts: f64,
    pub noise_watts: f64,
    pub snr_avg: f64,
    pub path_loss: Option<PathLoss>,
}

impl ChannelParams {
    pub fn new(p0_watts: f64, noise_watts: f64) -> Result<Self> {
        if !(p0_watts > 0.0 && p0_watts.is_finite()) {
            return Err(Error::Domain(format!("p0_watts must be > 0, got {p0_watts}")));
        }
        if !(noise_watts > 0.0 && noise_watts.is_finite()) {
            return Err(Error::Domain(format!(
                "noise_watts must be > 0, got {noise_watts}"
            )));
        }
        Ok(Self {
            p0_watts,
            noise_watts,
            snr_avg: p0_watts / noise_watts,
            path_loss: None,
        })
    }

    pub fn from_dbm(p0_dbm: f64, noise_dbm: f64) -> Result<Self> {
        Self::new(dbm_to_watts(p0_dbm), dbm_to_watts(noise_dbm))
    }

    pub fn with_path_loss(mut self, path_loss: PathLoss) -> Result<Self> {
        if !(path_loss.distance_m > 0.0) {
            return Err(Error::Domain("distance must be > 0".into()));
        }
        if !(path_loss.alpha >= 2.0) {
            return Err(Error::Domain("path-loss exponent must be >= 2".into()));
        }
        if !(path_loss.rho0 > 0.0) {
            return Err(Error::Domain("reference gain rho0 must be > 0".into()));
        }
        self.path_loss = Some(path_loss);
        Ok(self)
    }
}

/// Parameters of the linearized error curve for one blocklength and packet size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbErrorParams {
    pub mu: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `mu * beta`, kept separately because it stays finite when `beta`
    /// overflows.
    pub mu_beta: f64,
}

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

// Acklam's rational approximation of the standard normal quantile.
fn normal_quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671010229528e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse of the Gaussian tail: returns `x` with `Q(x) = p`.
pub fn inverse_q(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inverse_q needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return inverse_q(1.0 - p).map(|x| -x);
    }
    // Upper tail: Q^{-1}(p) = -Phi^{-1}(p).
    let mut x = -normal_quantile_approx(p);
    for _ in 0..4 {
        let pdf = std_normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let step = (q_function(x) - p) / pdf;
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Normal-approximation achievable rate in bits per symbol.
///
/// Can be negative when `n` is tiny; callers decide what that means.
pub fn achievable_rate(n: f64, gamma: f64, eps: f64) -> Result<f64> {
    if !(n > 0.0) || !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "achievable_rate needs n > 0 and gamma > 0, got n={n}, gamma={gamma}"
        )));
    }
    let dispersion = 1.0 - (1.0 + gamma).powi(-2);
    Ok(gamma.ln_1p() * LOG2_E - (dispersion / n).sqrt() * inverse_q(eps)? * LOG2_E)
}

/// Slope, midpoint and breakpoints of the linearized error curve.
///
/// With `z = B ln2 / n` the terms are expressed through `expm1` and
/// `tanh(z/2)` so that `mu * beta` stays finite even when `2^(B/n)` does not.
pub fn error_linearization(n: f64, b_bits: f64) -> Result<FbErrorParams> {
    if !(n > 0.0) || !(b_bits > 0.0) {
        return Err(Error::Domain(format!(
            "error_linearization needs n > 0 and B > 0, got n={n}, B={b_bits}"
        )));
    }
    let z = b_bits * LN_2 / n;
    let beta = z.exp_m1();
    // ln(2^{2B/n} - 1), evaluated without forming the power for large z.
    let ln_em1_2z = if 2.0 * z > 30.0 {
        2.0 * z + (-(-2.0 * z).exp()).ln_1p()
    } else {
        (2.0 * z).exp_m1().ln()
    };
    let ln_mu = -(2.0 * PI).ln() + 0.5 * (n.ln() - ln_em1_2z);
    let mu = ln_mu.exp();
    let mu_beta = n.sqrt() / (2.0 * PI) * (0.5 * z).tanh().sqrt();
    let half_width_over_beta = 0.5 / mu_beta;
    let (gamma1, gamma2) = if beta.is_finite() && mu > 0.0 {
        let half_width = 0.5 / mu;
        (beta - half_width, beta + half_width)
    } else {
        (
            beta * (1.0 - half_width_over_beta),
            beta * (1.0 + half_width_over_beta),
        )
    };
    Ok(FbErrorParams {
        mu,
        beta,
        gamma1,
        gamma2,
        mu_beta,
    })
}

impl FbErrorParams {
    /// Error probability of the linearized curve at an instantaneous SNR.
    pub fn error_at(&self, snr: f64) -> f64 {
        if snr <= self.gamma1 {
            1.0
        } else if snr > self.gamma2 {
            0.0
        } else {
            (0.5 + self.mu_beta - self.mu * snr).clamp(0.0, 1.0)
        }
    }
}

/// Expected packet error probability over the exponential SNR law.
///
/// For `gamma1 >= 0` this is the usual closed form
/// `1 - mu s (e^{-g1/s} - e^{-g2/s})` with `s` the mean SNR. When the lower
/// breakpoint is negative the integral runs over `[0, g2]` only, which gives
/// `(1 - e^{-g2/s})(1/2 + mu beta - mu s) + (mu beta + 1/2) e^{-g2/s}`.
pub fn packet_error_prob(n: f64, b_bits: f64, ch: &ChannelParams) -> Result<f64> {
    let lin = error_linearization(n, b_bits)?;
    Ok(expected_linearized_error(&lin, ch.snr_avg))
}

pub(crate) fn expected_linearized_error(lin: &FbErrorParams, snr_avg: f64) -> f64 {
    let s = snr_avg;
    let value = if lin.gamma1 >= 0.0 {
        // e^{-g1/s} - e^{-g2/s} = e^{-g1/s} (1 - e^{-1/(mu s)})
        let lead = (-lin.gamma1 / s).exp();
        if lead == 0.0 {
            1.0
        } else {
            1.0 - lin.mu * s * lead * (-(-1.0 / (lin.mu * s)).exp_m1())
        }
    } else {
        let tail = (-lin.gamma2 / s).exp();
        let mass = -(-lin.gamma2 / s).exp_m1();
        mass * (0.5 + lin.mu_beta - lin.mu * s) + (lin.mu_beta + 0.5) * tail
    };
    debug_assert!(
        (-1e-12..=1.0 + 1e-12).contains(&value),
        "packet error probability {value} outside [0,1]"
    );
    value.clamp(0.0, 1.0)
}

/// Normal-approximation error at an instantaneous SNR, without linearization.
pub fn normal_approx_error(n: f64, b_bits: f64, snr: f64) -> f64 {
    if snr <= 0.0 {
        return 1.0;
    }
    let dispersion = 1.0 - (1.0 + snr).powi(-2);
    let arg = (n * snr.ln_1p() - b_bits * LN_2) / (n * dispersion).sqrt();
    q_function(arg)
}

/// Probability that no other user picks the same preamble: `(1 - 1/M)^(K-1)`.
pub fn collision_avoidance_prob(k_users: usize, m_pre: usize) -> Result<f64> {
    if k_users == 0 || m_pre == 0 {
        return Err(Error::Domain(format!(
            "collision_avoidance_prob needs K >= 1 and M >= 1, got K={k_users}, M={m_pre}"
        )));
    }
    let m = m_pre as f64;
    Ok((1.0 - 1.0 / m).powi(k_users as i32 - 1))
}

/// Successful access and transmission probability for one attempt.
pub fn success_prob(
    n: f64,
    b_bits: f64,
    ch: &ChannelParams,
    k_users: usize,
    m_pre: usize,
) -> Result<f64> {
    let p_err = packet_error_prob(n, b_bits, ch)?;
    Ok((1.0 - p_err) * collision_avoidance_prob(k_users, m_pre)?)
}

/// Transmit power such that the mean received power equals `P0`.
///
/// Received power is `P_k * rho0 * d^-alpha`, so `P_k = P0 d^alpha / rho0`.
pub fn transmit_power(ch: &ChannelParams, distance_m: f64, alpha: f64, rho0: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !(rho0 > 0.0) {
        return Err(Error::Domain(format!(
            "transmit_power needs d > 0 and rho0 > 0, got d={distance_m}, rho0={rho0}"
        )));
    }
    Ok(ch.p0_watts * distance_m.powf(alpha) / rho0)
}

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
mod oracles;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_channel() -> ChannelParams {
        ChannelParams::new(1e-12, 1e-12).unwrap()
    }

    #[test]
    fn inverse_q_reference_points() {
        assert_eq!(inverse_q(0.5).unwrap(), 0.0);
        let want_05 = oracles::inverse_q_by_bisection(0.05);
        let want_1e3 = oracles::inverse_q_by_bisection(1e-3);
        assert!((want_05 - 1.6449).abs() < 1e-4);
        assert!((want_1e3 - 3.0902).abs() < 1e-4);
        assert!((inverse_q(0.05).unwrap() - want_05).abs() < 1e-9);
        assert!((inverse_q(1e-3).unwrap() - want_1e3).abs() < 1e-9);
    }

    #[test]
    fn inverse_q_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(inverse_q(p), Err(Error::Domain(_))), "p={p}");
        }
    }

    proptest! {
        #[test]
        fn inverse_q_roundtrip(log_p in -9.0f64..-1e-9, flip in any::<bool>()) {
            let p = 10f64.powf(log_p);
            let p = if flip { 1.0 - p } else { p };
            let x = inverse_q(p).unwrap();
            prop_assert!((q_function(x) - p).abs() <= 1e-10);
        }
    }

    #[test]
    fn achievable_rate_examples() {
        let shannon = achievable_rate(1e12, 1.0, 1e-3).unwrap();
        assert!((shannon - 1.0).abs() < 1e-5);
        let r = achievable_rate(200.0, 1.0, 1e-3).unwrap();
        let oracle = 1.0
            - (0.75f64 / 200.0).sqrt() * oracles::inverse_q_by_bisection(1e-3) * LOG2_E;
        assert!((r - oracle).abs() < 1e-9);
        assert!((r - 0.727).abs() < 5e-4);
        for (n, g) in [(10.0, 0.3), (5000.0, 7.0)] {
            let exact = achievable_rate(n, g, 0.5).unwrap();
            assert!((exact - (1.0 + g).log2()).abs() < 1e-15);
        }
    }

    #[test]
    fn linearization_examples() {
        let lin = error_linearization(200.0, 100.0).unwrap();
        assert!((lin.mu - 2.2508).abs() < 1e-4);
        assert!((lin.beta - 0.41421).abs() < 1e-5);
        assert!((lin.gamma1 - 0.19206).abs() < 1e-5);
        assert!((lin.gamma2 - 0.63636).abs() < 1e-5);
        assert!((lin.mu_beta - lin.mu * lin.beta).abs() < 1e-12);

        let unit = error_linearization(100.0, 100.0).unwrap();
        assert_eq!(unit.beta, 1.0);
    }

    proptest! {
        #[test]
        fn breakpoint_gap_is_inverse_slope(n in 20.0f64..5000.0, b in 1.0f64..800.0) {
            let lin = error_linearization(n, b).unwrap();
            let gap = lin.gamma2 - lin.gamma1;
            prop_assert!((gap * lin.mu - 1.0).abs() < 1e-9);
            prop_assert!(((lin.gamma1 + lin.gamma2) / 2.0 - lin.beta).abs() <= 1e-12 * lin.beta.max(1.0));
        }
    }

    #[test]
    fn linearization_survives_huge_payload() {
        let lin = error_linearization(1.0, 5000.0).unwrap();
        assert!(lin.mu_beta.is_finite());
        assert!(!lin.gamma1.is_nan() && !lin.gamma2.is_nan());
        let p = packet_error_prob(1.0, 5000.0, &unit_channel()).unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(packet_error_prob(50.0, 1e5, &unit_channel()).unwrap(), 1.0);
    }

    #[test]
    fn packet_error_examples() {
        let ch = unit_channel();
        let p = packet_error_prob(200.0, 100.0, &ch).unwrap();
        let oracle = oracles::packet_error_by_quadrature(200.0, 100.0, 1.0);
        assert!((p - oracle).abs() < 1e-9, "{p} vs {oracle}");
        assert!((p - 0.3337).abs() < 1e-4);

        assert!(packet_error_prob(200.0, 1e-6, &ch).unwrap() < 2e-5);
        assert!(packet_error_prob(10.0, 1000.0, &ch).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn negative_lower_breakpoint_matches_quadrature() {
        // Small payloads put gamma1 below zero.
        for (n, b, s) in [(2000.0, 5.0, 1.0), (500.0, 10.0, 0.5), (300.0, 20.0, 4.0)] {
            let lin = error_linearization(n, b).unwrap();
            assert!(lin.gamma1 < 0.0, "n={n} b={b}");
            let ch = ChannelParams::new(s * 1e-12, 1e-12).unwrap();
            let p = packet_error_prob(n, b, &ch).unwrap();
            let oracle = oracles::packet_error_by_quadrature(n, b, s);
            assert!((p - oracle).abs() < 1e-9, "n={n} b={b} s={s}: {p} vs {oracle}");
        }
    }

    #[test]
    fn packet_error_monotone_on_grid() {
        let ch = unit_channel();
        let ns: Vec<f64> = (1..=40).map(|i| 50.0 * i as f64).collect();
        let bs: Vec<f64> = (1..=10).map(|i| 50.0 * i as f64).collect();
        for &b in &bs {
            for w in ns.windows(2) {
                let lo = packet_error_prob(w[0], b, &ch).unwrap();
                let hi = packet_error_prob(w[1], b, &ch).unwrap();
                assert!(hi <= lo + 1e-15, "not non-increasing in n at b={b}, n={}", w[1]);
            }
        }
        for &n in &ns {
            for w in bs.windows(2) {
                let lo = packet_error_prob(n, w[0], &ch).unwrap();
                let hi = packet_error_prob(n, w[1], &ch).unwrap();
                assert!(hi + 1e-15 >= lo, "not non-decreasing in B at n={n}");
            }
        }
    }

    #[test]
    fn linearized_curve_shape() {
        let lin = error_linearization(200.0, 100.0).unwrap();
        assert_eq!(lin.error_at(0.0), 1.0);
        assert_eq!(lin.error_at(lin.gamma1), 1.0);
        assert!((lin.error_at(lin.beta) - 0.5).abs() < 1e-12);
        assert_eq!(lin.error_at(lin.gamma2 + 1e-9), 0.0);
    }

    #[test]
    fn collision_examples() {
        assert_eq!(collision_avoidance_prob(1, 20).unwrap(), 1.0);
        assert!((collision_avoidance_prob(20, 20).unwrap() - 0.37735).abs() < 1e-5);
        assert!((collision_avoidance_prob(100, 20).unwrap() - 0.00623).abs() < 1e-5);
        assert!(collision_avoidance_prob(0, 20).is_err());
        assert!(collision_avoidance_prob(3, 0).is_err());
    }

    #[test]
    fn collision_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (k, m, trials) = (20usize, 20usize, 1_000_000usize);
        let mut unique = 0usize;
        for _ in 0..trials {
            let mine = rng.random_range(0..m);
            if (1..k).all(|_| rng.random_range(0..m) != mine) {
                unique += 1;
            }
        }
        let emp = unique as f64 / trials as f64;
        let p = collision_avoidance_prob(k, m).unwrap();
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((emp - p).abs() <= 3.0 * se, "emp={emp} p={p}");
    }

    #[test]
    fn collision_combinatorial_identity() {
        for k in 1..60 {
            for m in 1..40 {
                let mf = m as f64;
                let combinatorial = mf * (1.0 / mf) * (1.0 - 1.0 / mf).powi(k as i32 - 1);
                let p = collision_avoidance_prob(k, m).unwrap();
                assert!((p - combinatorial).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn success_examples() {
        let ch = unit_channel();
        let s = success_prob(200.0, 1e-9, &ch, 1, 20).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        let s = success_prob(200.0, 100.0, &ch, 20, 20).unwrap();
        let product = (1.0 - oracles::packet_error_by_quadrature(200.0, 100.0, 1.0))
            * 0.95f64.powi(19);
        assert!((s - product).abs() < 1e-9);
        assert!((s - 0.2514).abs() < 1e-4);

        let mut prev = 0.0;
        for n in (1..=40).map(|i| 50.0 * i as f64) {
            let s = success_prob(n, 100.0, &ch, 20, 20).unwrap();
            assert!(s >= prev);
            assert!((0.0..=1.0).contains(&s));
            let factors = (1.0 - packet_error_prob(n, 100.0, &ch).unwrap())
                * collision_avoidance_prob(20, 20).unwrap();
            assert_eq!(s, factors);
            prev = s;
        }
        let mut prev = 1.0;
        for k in 1..80 {
            let s = success_prob(500.0, 100.0, &ch, k, 20).unwrap();
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn transmit_power_examples() {
        let ch = unit_channel();
        assert_eq!(transmit_power(&ch, 1.0, 3.5, 1.0).unwrap(), ch.p0_watts);
        let p = transmit_power(&ch, 2.0, 2.0, 1.0).unwrap();
        assert!((p - 4e-12).abs() < 1e-24);
        for alpha in [2.0, 3.0, 3.7] {
            let a = transmit_power(&ch, 10.0, alpha, 0.01).unwrap();
            let b = transmit_power(&ch, 20.0, alpha, 0.01).unwrap();
            assert!((b / a - 2f64.powf(alpha)).abs() < 1e-9);
        }
        assert!(transmit_power(&ch, 0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn channel_validation() {
        let ch = ChannelParams::from_dbm(-90.0, -90.0).unwrap();
        assert_eq!(ch.snr_avg, 1.0);
        assert!((ch.p0_watts - 1e-12).abs() < 1e-24);
        assert!(ChannelParams::new(0.0, 1.0).is_err());
        let pl = PathLoss {
            distance_m: 10.0,
            alpha: 1.5,
            rho0: 1.0,
        };
        assert!(ch.with_path_loss(pl).is_err());
    }

    #[test]
    fn exact_error_is_a_probability() {
        for snr in [0.0, 0.1, 1.0, 10.0] {
            let e = normal_approx_error(200.0, 100.0, snr);
            assert!((0.0..=1.0).contains(&e));
        }
        assert!(normal_approx_error(1000.0, 100.0, 10.0) < 1e-12);
    }
}
