//! Piecewise sigmoid control waveforms for one LMT Bloch pulse.
//!
//! Timeline (seconds): load ramp of the depth on `[0, tau_load]`, acceleration
//! window of length `T` starting at `tau_load` (sigmoid rise over the first
//! `tau_ramp`, plateau, sigmoid fall over the last `tau_ramp`), then a mirrored
//! unload ramp of the depth over `tau_load`.

use crate::error::{invalid, Error, Result};
use crate::numerics::{adaptive_simpson, bisect_secant, gauss_legendre};
use crate::physconfig::SpeciesLattice;

/// Default sigmoid steepness relative to the segment duration.
pub const DEFAULT_SHAPE_H: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSchedule {
    /// Number of Bloch oscillations, i.e. `2N hbar k_L` total momentum.
    pub oscillations: f64,
    /// Peak lattice depth in `E_r`.
    pub depth_peak: f64,
    /// Peak acceleration (m/s^2).
    pub accel_peak: f64,
    /// s
    pub tau_load: f64,
    /// s
    pub tau_ramp: f64,
    /// Duration of the acceleration window (s), solved from the momentum target.
    pub accel_time: f64,
    pub shape_h: f64,
    /// `hbar k_L / m` of the configuration the schedule was built for (m/s).
    recoil_velocity: f64,
    /// 1/m
    wave_number: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rising sigmoid of width `w` centred at `c`; a unit step when `w == 0`.
fn rise(t: f64, c: f64, w: f64) -> f64 {
    if w > 0.0 {
        logistic((t - c) / w)
    } else if t >= c {
        1.0
    } else {
        0.0
    }
}

impl PulseSchedule {
    /// Builds the schedule for `n` oscillations, solving the acceleration
    /// window length so the final lattice velocity is `2 n hbar k_L / m`.
    pub fn build(
        cfg: &SpeciesLattice,
        n: f64,
        depth_peak: f64,
        accel_peak: f64,
        tau_load: f64,
        tau_ramp: f64,
    ) -> Result<Self> {
        Self::build_with_shape(cfg, n, depth_peak, accel_peak, tau_load, tau_ramp, DEFAULT_SHAPE_H)
    }

    pub fn build_with_shape(
        cfg: &SpeciesLattice,
        n: f64,
        depth_peak: f64,
        accel_peak: f64,
        tau_load: f64,
        tau_ramp: f64,
        shape_h: f64,
    ) -> Result<Self> {
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("N", format!("must be positive, got {n}")));
        }
        if !(depth_peak >= 0.0 && depth_peak.is_finite()) {
            return Err(invalid("V0_peak", format!("must be >= 0, got {depth_peak}")));
        }
        if !(tau_load >= 0.0 && tau_ramp >= 0.0) {
            return Err(invalid("tau", "durations must be >= 0"));
        }
        if !(shape_h > 0.0 && shape_h < 0.5) {
            return Err(invalid("shape_h", format!("must lie in (0, 0.5), got {shape_h}")));
        }
        let period = cfg.bloch_period(accel_peak)?;
        // The two ramps together deliver exactly accel_peak * tau_ramp, so the
        // plateau must be non-negative: n T_B >= tau_ramp.
        if n * period < tau_ramp {
            return Err(Error::Infeasible { minimal_n: (tau_ramp / period).ceil() as u64 });
        }
        let mut sched = PulseSchedule {
            oscillations: n,
            depth_peak,
            accel_peak,
            tau_load,
            tau_ramp,
            accel_time: n * period,
            shape_h,
            recoil_velocity: cfg.recoil_velocity(),
            wave_number: cfg.wave_number(),
        };
        if tau_ramp > 0.0 {
            let target = 2.0 * n * sched.recoil_velocity;
            let tol = 1e-12 * target;
            let residual = |big_t: f64| {
                let mut s = sched;
                s.accel_time = big_t;
                s.integrated_velocity(tol) - target
            };
            let lo = n * period;
            let hi = n * period + 2.0 * tau_ramp;
            sched.accel_time = bisect_secant(residual, lo, hi, 1e-15 * hi)?;
        }
        Ok(sched)
    }

    /// Final velocity by adaptive quadrature of the acceleration waveform.
    fn integrated_velocity(&self, tol: f64) -> f64 {
        let t0 = self.tau_load;
        let t1 = t0 + self.accel_time;
        let f = |t: f64| self.accel(t);
        if self.tau_ramp == 0.0 {
            return self.accel_peak * self.accel_time;
        }
        let a = t0 + self.tau_ramp;
        let b = t1 - self.tau_ramp;
        adaptive_simpson(&f, t0, a, tol) + self.accel_peak * (b - a) + adaptive_simpson(&f, b, t1, tol)
    }

    /// Total duration including load and unload ramps.
    pub fn duration(&self) -> f64 {
        self.accel_time + 2.0 * self.tau_load
    }

    pub fn accel_start(&self) -> f64 {
        self.tau_load
    }

    pub fn accel_end(&self) -> f64 {
        self.tau_load + self.accel_time
    }

    /// Segment boundaries in time order (duplicates removed).
    pub fn boundaries(&self) -> Vec<f64> {
        let s = self.accel_start();
        let e = self.accel_end();
        let mut b = vec![0.0, s, s + self.tau_ramp, e - self.tau_ramp, e, self.duration()];
        b.dedup_by(|x, y| (*x - *y).abs() < 1e-300);
        b
    }

    fn load_width(&self) -> f64 {
        self.shape_h * self.tau_load
    }

    fn ramp_width(&self) -> f64 {
        self.shape_h * self.tau_ramp
    }

    /// Lattice depth `V0(t)` in `E_r`.
    pub fn depth(&self, t: f64) -> f64 {
        let tl = self.tau_load;
        let end = self.accel_end();
        if t < 0.0 || t > end + tl {
            return 0.0;
        }
        let w = self.load_width();
        if t < tl {
            self.depth_peak * rise(t, tl / 2.0, w)
        } else if t <= end {
            self.depth_peak
        } else {
            self.depth_peak * (1.0 - rise(t, end + tl / 2.0, w))
        }
    }

    /// Lattice acceleration `a_L(t)` (m/s^2).
    pub fn accel(&self, t: f64) -> f64 {
        let s = t - self.tau_load;
        let big_t = self.accel_time;
        let tr = self.tau_ramp;
        if s < 0.0 || s > big_t {
            return 0.0;
        }
        let w = self.ramp_width();
        if s < tr {
            self.accel_peak * rise(s, tr / 2.0, w)
        } else if s <= big_t - tr {
            self.accel_peak
        } else {
            self.accel_peak * (1.0 - rise(s, big_t - tr / 2.0, w))
        }
    }

    /// Lattice velocity `int_0^t a_L` (m/s), closed form.
    pub fn velocity(&self, t: f64) -> f64 {
        let s = (t - self.tau_load).min(self.accel_time);
        if s <= 0.0 {
            return 0.0;
        }
        let a = self.accel_peak;
        let tr = self.tau_ramp;
        let big_t = self.accel_time;
        if tr == 0.0 {
            return a * s;
        }
        let w = self.ramp_width();
        let half = tr / (2.0 * w);
        // rise: a w [softplus((s - tr/2)/w) - softplus(-tr/2w)]
        let rise_part = |s: f64| a * w * (softplus((s - tr / 2.0) / w) - softplus(-half));
        let rise_total = a * tr / 2.0;
        if s < tr {
            return rise_part(s);
        }
        if s <= big_t - tr {
            return rise_total + a * (s - tr);
        }
        let c = big_t - tr / 2.0;
        rise_total + a * (big_t - 2.0 * tr) + a * w * (softplus(half) - softplus(-(s - c) / w))
    }

    /// Transferred momentum `m v_L(t)` in units of `hbar k_L`.
    pub fn momentum(&self, t: f64) -> f64 {
        self.velocity(t) / self.recoil_velocity
    }

    /// Lattice displacement `int_0^t v_L` (m) by piecewise Gauss-Legendre quadrature.
    pub fn position(&self, t: f64) -> f64 {
        let t = t.min(self.duration()).max(0.0);
        let mut total = 0.0;
        let mut prev = 0.0;
        for b in self.boundaries().into_iter().skip(1) {
            let hi = b.min(t);
            if hi > prev {
                total += gauss_legendre(|u| self.velocity(u), prev, hi, 16);
            }
            prev = b;
            if b >= t {
                break;
            }
        }
        if t > self.duration() {
            total += self.velocity(t) * (t - self.duration());
        }
        total
    }

    /// Frequency difference of the counter-propagating beams, `(k_L/pi) v_L(t)` (Hz).
    pub fn frequency_difference(&self, t: f64) -> f64 {
        self.velocity(t) * self.wave_number / std::f64::consts::PI
    }

    /// Two-photon Rabi frequency `V0(t)/(2 hbar)` in units of `E_r/hbar`.
    pub fn rabi_frequency(&self, t: f64) -> f64 {
        self.depth(t) / 2.0
    }

    /// Samples `(t, V0, a_L, p_L, x_L, dnu)` on `count` uniform points over the pulse.
    pub fn sample(&self, count: usize) -> Vec<WaveformSample> {
        let count = count.max(2);
        let end = self.duration();
        (0..count)
            .map(|i| {
                let t = end * i as f64 / (count - 1) as f64;
                WaveformSample {
                    time: t,
                    depth: self.depth(t),
                    accel: self.accel(t),
                    momentum: self.momentum(t),
                    position: self.position(t),
                    frequency_difference: self.frequency_difference(t),
                }
            })
            .collect()
    }
}

/// One row of a sampled schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformSample {
    /// s
    pub time: f64,
    /// E_r
    pub depth: f64,
    /// m/s^2
    pub accel: f64,
    /// hbar k_L
    pub momentum: f64,
    /// m
    pub position: f64,
    /// Hz
    pub frequency_difference: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rb() -> SpeciesLattice {
        SpeciesLattice::rb87()
    }

    #[test]
    fn box_pulse_lasts_n_bloch_periods() {
        let cfg = rb();
        let s = PulseSchedule::build(&cfg, 1.0, 20.0, 393.5, 0.0, 0.0).unwrap();
        assert_eq!(s.accel_time, cfg.bloch_period(393.5).unwrap());
        let s = PulseSchedule::build(&cfg, 37.0, 20.0, 50.0, 1e-4, 1e-9).unwrap();
        assert_relative_eq!(s.accel_time, 37.0 * cfg.bloch_period(50.0).unwrap(), max_relative = 1e-6);
    }

    #[test]
    fn fig3_schedule_matches_symmetric_ramp_identity() {
        // A sigmoid and its mirror sum to one, so rise plus fall carry exactly
        // a * tau_ramp; the window is therefore N T_B + tau_ramp.
        let cfg = rb();
        let s = PulseSchedule::build(&cfg, 500.0, 20.0, 393.5, 1e-4, 1e-3).unwrap();
        let expected = 500.0 * cfg.bloch_period(393.5).unwrap() + 1e-3;
        assert_relative_eq!(s.accel_time, expected, max_relative = 1e-11);
        assert!(s.accel_time > 15.0e-3);
        let target = 1000.0 * cfg.recoil_velocity();
        assert_relative_eq!(s.velocity(s.duration()), target, max_relative = 1e-10);
        assert_relative_eq!(s.momentum(s.duration()), 1000.0, max_relative = 1e-10);
    }

    #[test]
    fn closed_form_velocity_matches_quadrature() {
        let cfg = rb();
        let s = PulseSchedule::build(&cfg, 20.0, 20.0, 300.0, 2e-4, 1e-4).unwrap();
        for &t in &[0.5e-4, 2.3e-4, 2.6e-4, 4.0e-4, s.accel_end() - 3e-5, s.duration()] {
            let mut q = 0.0;
            let start = s.accel_start();
            let mut lo = start;
            for b in s.boundaries().into_iter().filter(|&b| b > start) {
                let hi = b.min(t);
                if hi > lo {
                    q += adaptive_simpson(&|u| s.accel(u), lo, hi, 1e-18);
                }
                lo = b;
            }
            assert_relative_eq!(s.velocity(t), q, max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn position_is_integral_of_velocity() {
        let cfg = rb();
        let s = PulseSchedule::build(&cfg, 3.0, 10.0, 100.0, 0.0, 0.0).unwrap();
        let t = s.duration();
        // box pulse: x = a t^2 / 2
        assert_relative_eq!(s.position(t), 0.5 * 100.0 * t * t, max_relative = 1e-12);
    }

    #[test]
    fn infeasible_ramp_reports_minimal_n() {
        let cfg = rb();
        let period = cfg.bloch_period(393.5).unwrap();
        let err = PulseSchedule::build(&cfg, 10.0, 20.0, 393.5, 0.0, 1e-3).unwrap_err();
        match err {
            Error::Infeasible { minimal_n } => assert_eq!(minimal_n, (1e-3 / period).ceil() as u64),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn chirp_ends_at_2n_recoil_frequencies() {
        let cfg = rb();
        let s = PulseSchedule::build(&cfg, 500.0, 20.0, 393.5, 1e-4, 1e-3).unwrap();
        let k = cfg.wave_number();
        let expected = 2.0 * 500.0 * crate::physconfig::HBAR * k * k / (std::f64::consts::PI * cfg.atom_mass);
        assert_relative_eq!(s.frequency_difference(s.duration()), expected, max_relative = 1e-10);
        // box pulse: linear chirp with slope a k_L / pi
        let b = PulseSchedule::build(&cfg, 2.0, 20.0, 100.0, 0.0, 0.0).unwrap();
        let slope = (b.frequency_difference(1e-5) - b.frequency_difference(0.5e-5)) / 0.5e-5;
        assert_relative_eq!(slope, 100.0 * k / std::f64::consts::PI, max_relative = 1e-9);
        assert_eq!(b.rabi_frequency(1e-5), 10.0);
    }

    #[test]
    fn waveforms_are_continuous_at_boundaries() {
        let cfg = rb();
        let s = PulseSchedule::build(&cfg, 100.0, 20.0, 393.5, 2e-4, 1e-3).unwrap();
        for &b in &s.boundaries() {
            let eps = 1e-12;
            assert!((s.depth(b - eps) - s.depth(b + eps)).abs() < 1e-6 * s.depth_peak, "depth at {b}");
            assert!((s.accel(b - eps) - s.accel(b + eps)).abs() < 1e-6 * s.accel_peak, "accel at {b}");
        }
    }

    proptest! {
        #[test]
        fn accel_is_mirror_symmetric(
            n in 5.0f64..200.0, accel in 50.0f64..800.0, ramp_frac in 0.0f64..0.9, frac in 0.0f64..1.0,
        ) {
            let cfg = rb();
            let period = cfg.bloch_period(accel).unwrap();
            let s = PulseSchedule::build(&cfg, n, 20.0, accel, 1e-4, ramp_frac * n * period).unwrap();
            let d = frac * s.accel_time / 2.0;
            let (t0, t1) = (s.accel_start(), s.accel_end());
            let lhs = s.accel(t0 + d);
            let rhs = s.accel(t1 - d);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * accel);
            prop_assert!(s.depth(frac * s.duration()) >= 0.0);
            let closure = s.velocity(s.duration()) / (2.0 * n * cfg.recoil_velocity());
            prop_assert!((closure - 1.0).abs() < 1e-10);
        }
    }
}
