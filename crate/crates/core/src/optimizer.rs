//! Time efficiency, the optimal load factor and the resulting frame size.
//!
//! Expected slot counts use the exact binomial fill model; only the
//! closed-form efficiency curve [`predicted_time_efficiency`] and the
//! optimum derived from it rely on the Poisson limit.

use std::f64::consts::E;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timing::{SlotOutcome, TimingProfile};

/// Largest frame any strategy may request (Gen2 `Q <= 15`).
pub const F_MAX: u32 = 1 << 15;

/// Largest Gen2 slot-count exponent.
pub const Q_MAX: u32 = 15;

/// Idle / success / collision slot counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameStats {
    pub idle: u64,
    pub success: u64,
    pub collision: u64,
}

impl FrameStats {
    pub fn new(idle: u64, success: u64, collision: u64) -> Self {
        FrameStats {
            idle,
            success,
            collision,
        }
    }

    pub fn record(&mut self, outcome: SlotOutcome) {
        match outcome {
            SlotOutcome::Idle => self.idle += 1,
            SlotOutcome::Success => self.success += 1,
            SlotOutcome::Collision => self.collision += 1,
        }
    }

    pub fn slots(&self) -> u64 {
        self.idle + self.success + self.collision
    }

    pub fn is_empty(&self) -> bool {
        self.slots() == 0
    }

    /// Successes per slot.
    pub fn throughput(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.success as f64 / self.slots() as f64)
    }

    pub fn total_time(&self, profile: &TimingProfile) -> f64 {
        profile.total_time(self.idle, self.success, self.collision)
    }
}

impl AddAssign for FrameStats {
    fn add_assign(&mut self, rhs: FrameStats) {
        self.idle += rhs.idle;
        self.success += rhs.success;
        self.collision += rhs.collision;
    }
}

/// Tags per slot, `n / F`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LoadFactor(f64);

impl LoadFactor {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda >= 0.0 {
            Ok(LoadFactor(lambda))
        } else {
            Err(Error::InvalidFrame(format!(
                "load factor must be finite and non-negative, got {lambda}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// How a real-valued optimal frame size is turned into a slot count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Rounding {
    /// Nearest integer in `[1, F_MAX]`.
    #[default]
    Integer,
    /// `2^Q` with `Q` the nearest integer exponent in `[0, Q_MAX]`.
    PowerOfTwo,
}

/// Share of the elapsed time spent in success slots.
///
/// Fails with [`Error::EmptyStats`] when no slot has been observed.
pub fn measured_time_efficiency(stats: &FrameStats, profile: &TimingProfile) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::EmptyStats);
    }
    let useful = stats.success as f64 * profile.t_success;
    Ok(useful / stats.total_time(profile))
}

/// Expected idle, success and collision counts when `n` tags each pick one
/// of `f` slots uniformly. `E + S + C == f`, the collision count being the
/// complement.
pub fn expected_counts(n: u64, f: u32) -> (f64, f64, f64) {
    assert!(f >= 1, "frame size must be at least 1");
    let frame = f as f64;
    if n == 0 {
        return (frame, 0.0, 0.0);
    }
    let (idle, success) = if f == 1 {
        (0.0, if n == 1 { 1.0 } else { 0.0 })
    } else {
        let log_q = (-1.0 / frame).ln_1p();
        let n = n as f64;
        (frame * (n * log_q).exp(), n * ((n - 1.0) * log_q).exp())
    };
    (idle, success, frame - idle - success)
}

/// Poisson-limit time efficiency at load factor `lambda`.
pub fn predicted_time_efficiency(lambda: LoadFactor, profile: &TimingProfile) -> f64 {
    let l = lambda.value();
    if l == 0.0 {
        return 0.0;
    }
    let decay = (-l).exp();
    let success = l * decay * profile.t_success;
    let collision_share = -(-l).exp_m1() - l * decay;
    success / (success + profile.t_idle * decay + profile.t_collision * collision_share)
}

const LAMBERT_MAX_ITER: usize = 50;
const LAMBERT_STEP_TOL: f64 = 1e-14;

/// Principal branch of the Lambert W function, `w * e^w = x` with `w >= -1`.
///
/// Halley iteration. The starting point comes from the branch-point series
/// near `-1/e`, `x` itself on `(-0.25, 1)`, `ln(1 + x)` up to `e` and the
/// asymptotic `ln x - ln ln x` beyond.
pub fn lambert_w0(x: f64) -> Result<f64> {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch {
        // Values computed as -1/e can land a few ulps low.
        if x.is_nan() || branch - x > 4.0 * f64::EPSILON {
            return Err(Error::LambertDomain(x));
        }
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }

    let mut w = if x < -0.25 {
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 1.0 {
        x
    } else if x < E {
        x.ln_1p()
    } else {
        let l = x.ln();
        l - l.ln()
    };

    for _ in 0..LAMBERT_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        let next = (w - step).max(-1.0);
        let moved = (next - w).abs();
        w = next;
        if moved <= LAMBERT_STEP_TOL * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// Load factor maximising [`predicted_time_efficiency`] for `profile`:
/// `1 + W0((t_idle / t_collision - 1) / e)`.
pub fn optimal_lambda(profile: &TimingProfile) -> LoadFactor {
    let ratio = profile.t_idle / profile.t_collision;
    // (ratio - 1) / e > -1/e for any positive ratio, so W0 is defined.
    let w = lambert_w0((ratio - 1.0) / E).expect("argument is above -1/e for a valid profile");
    LoadFactor(1.0 + w)
}

/// Left-hand side of the stationarity condition that [`optimal_lambda`]
/// solves: `e^lambda (lambda - 1) + 1`, which equals `t_idle / t_collision`
/// at the optimum.
pub fn stationarity_lhs(lambda: f64) -> f64 {
    lambda.exp() * (lambda - 1.0) + 1.0
}

/// Frame size `n_hat / lambda` under the chosen rounding mode.
pub fn optimal_frame_size(n_hat: f64, lambda: LoadFactor, mode: Rounding) -> u32 {
    let l = lambda.value();
    assert!(l > 0.0, "optimal frame size needs a positive load factor");
    let target = n_hat.max(0.0) / l;
    match mode {
        Rounding::Integer => target.round().clamp(1.0, F_MAX as f64) as u32,
        Rounding::PowerOfTwo => {
            let q = if target > 0.0 {
                target.log2().round().clamp(0.0, Q_MAX as f64) as u32
            } else {
                0
            };
            1 << q
        }
    }
}

/// Gen2 exponent of a frame size, `round(log2 f)`.
pub fn frame_exponent(f: u32) -> u32 {
    (f.max(1) as f64).log2().round() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P_EXAMPLE: TimingProfile = TimingProfile {
        t_idle: 0.3,
        t_success: 1.5,
        t_collision: 0.9,
    };

    fn bisect(mut lo: f64, mut hi: f64, target: f64) -> f64 {
        // stationarity_lhs is increasing on (0, inf).
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if stationarity_lhs(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn measured_efficiency_examples() {
        let any = TimingProfile::DEFAULT;
        assert_eq!(
            measured_time_efficiency(&FrameStats::new(0, 10, 0), &any).unwrap(),
            1.0
        );
        assert_eq!(
            measured_time_efficiency(&FrameStats::new(1, 1, 0), &TimingProfile::UNIFORM).unwrap(),
            0.5
        );
        let eff = measured_time_efficiency(&FrameStats::new(2, 3, 1), &P_EXAMPLE).unwrap();
        assert!((eff - 0.75).abs() < 1e-15, "{eff}");
    }

    #[test]
    fn measured_efficiency_rejects_empty() {
        assert_eq!(
            measured_time_efficiency(&FrameStats::default(), &P_EXAMPLE),
            Err(Error::EmptyStats)
        );
    }

    #[test]
    fn expected_counts_examples() {
        assert_eq!(expected_counts(0, 16), (16.0, 0.0, 0.0));
        let (e, s, c) = expected_counts(1, 16);
        assert!((e - 15.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12 && c.abs() < 1e-12);
        let (e, s, c) = expected_counts(2, 2);
        assert!((e - 0.5).abs() < 1e-15 && (s - 1.0).abs() < 1e-15 && (c - 0.5).abs() < 1e-15);
        assert_eq!(expected_counts(1, 1), (0.0, 1.0, 0.0));
        assert_eq!(expected_counts(3, 1), (0.0, 0.0, 1.0));
    }

    #[test]
    fn predicted_efficiency_examples() {
        let z = LoadFactor::new(0.0).unwrap();
        assert_eq!(predicted_time_efficiency(z, &P_EXAMPLE), 0.0);
        let one = LoadFactor::new(1.0).unwrap();
        let v = predicted_time_efficiency(one, &TimingProfile::UNIFORM);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);
        let w = lambert_w0(-0.2943).unwrap();
        assert!((w - (-0.472)).abs() < 1e-3, "{w}");
        assert!((w * w.exp() + 0.2943).abs() < 1e-12);
        assert_eq!(lambert_w0(-1.0 / E).unwrap(), -1.0);
    }

    #[test]
    fn lambert_rejects_below_branch_point() {
        assert!(matches!(lambert_w0(-0.5), Err(Error::LambertDomain(_))));
        assert!(lambert_w0(f64::NAN).is_err());
    }

    #[test]
    fn lambert_matches_newton_oracle() {
        // Plain Newton from w0 = x, as an independent route.
        let x = -0.2943f64;
        let mut w = x;
        for _ in 0..100 {
            w -= (w * w.exp() - x) / ((1.0 + w) * w.exp());
        }
        assert!((lambert_w0(x).unwrap() - w).abs() < 1e-13);
    }

    #[test]
    fn optimal_lambda_examples() {
        let equal = TimingProfile::new(0.5, 1.0, 0.5).unwrap();
        assert_eq!(optimal_lambda(&equal).value(), 1.0);

        let third = TimingProfile::new(1.0, 2.0, 3.0).unwrap();
        let l = optimal_lambda(&third).value();
        let b = bisect(1e-12, 1.0, 1.0 / 3.0);
        assert!(l > 0.0 && l < 1.0);
        assert!((l - b).abs() < 1e-9, "{l} vs {b}");
        assert!((stationarity_lhs(l) - 1.0 / 3.0).abs() < 1e-9);

        let three = TimingProfile::new(3.0, 2.0, 1.0).unwrap();
        let l = optimal_lambda(&three).value();
        let b = bisect(1.0, 3.0, 3.0);
        assert!(l > 1.0);
        assert!((l - b).abs() < 1e-9, "{l} vs {b}");
        assert!((stationarity_lhs(l) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn default_profile_optimal_lambda_beats_grid() {
        let l = optimal_lambda(&TimingProfile::DEFAULT);
        let best = predicted_time_efficiency(l, &TimingProfile::DEFAULT);
        for k in 1..=500 {
            let g = LoadFactor::new(k as f64 * 0.01).unwrap();
            assert!(best >= predicted_time_efficiency(g, &TimingProfile::DEFAULT));
        }
    }

    #[test]
    fn frame_size_examples() {
        let one = LoadFactor::new(1.0).unwrap();
        assert_eq!(optimal_frame_size(100.0, one, Rounding::Integer), 100);
        assert_eq!(optimal_frame_size(0.0, one, Rounding::Integer), 1);
        let l = LoadFactor::new(0.528).unwrap();
        assert_eq!(optimal_frame_size(100.0, l, Rounding::PowerOfTwo), 256);
        assert_eq!(optimal_frame_size(0.0, l, Rounding::PowerOfTwo), 1);
        assert_eq!(optimal_frame_size(1e9, one, Rounding::Integer), F_MAX);
        assert_eq!(optimal_frame_size(1e9, one, Rounding::PowerOfTwo), F_MAX);
    }

    #[test]
    fn poisson_tracks_binomial_for_large_frames() {
        for f in [64u32, 128, 512, 4096] {
            for k in 0..=15 {
                let lambda = 0.5 + 0.1 * k as f64;
                let n = (lambda * f as f64).round() as u64;
                let lambda = n as f64 / f as f64;
                let (e, s, _) = expected_counts(n, f);
                let e_p = f as f64 * (-lambda).exp();
                let s_p = f as f64 * lambda * (-lambda).exp();
                assert!(((e - e_p) / e).abs() < 0.02, "idle f={f} n={n}");
                assert!(((s - s_p) / s).abs() < 0.02, "success f={f} n={n}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn lambert_round_trip(x in (-1.0 / E + 1e-6)..1e3f64) {
            let w = lambert_w0(x).unwrap();
            prop_assert!(w >= -1.0);
            prop_assert!((w * w.exp() - x).abs() / x.abs().max(1.0) < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn expected_counts_sum_to_frame(n in 0u64..20_000, f in 1u32..70_000) {
            let (e, s, c) = expected_counts(n, f);
            prop_assert!(e >= 0.0 && s >= 0.0 && c >= -1e-9);
            prop_assert!((e + s + c - f as f64).abs() <= 1e-9 * f as f64);
        }

        #[test]
        fn optimal_lambda_beats_grid(
            t_idle in 1e-5f64..1e-2, t_success in 1e-5f64..1e-2, t_collision in 1e-5f64..1e-2
        ) {
            let p = TimingProfile::new(t_idle, t_success, t_collision).unwrap();
            let best = predicted_time_efficiency(optimal_lambda(&p), &p);
            for k in 1..=500 {
                let g = LoadFactor::new(k as f64 * 0.01).unwrap();
                prop_assert!(best >= predicted_time_efficiency(g, &p));
            }
        }

        #[test]
        fn optimal_lambda_is_stationary(
            t_idle in 1e-5f64..1e-2, t_success in 1e-5f64..1e-2, t_collision in 1e-5f64..1e-2
        ) {
            let p = TimingProfile::new(t_idle, t_success, t_collision).unwrap();
            let l = optimal_lambda(&p).value();
            prop_assert!(l > 0.0);
            prop_assert!((stationarity_lhs(l) - t_idle / t_collision).abs() < 1e-9);
        }
    }
}
