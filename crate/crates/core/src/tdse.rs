//! Split-step Fourier integration of the Schrodinger equation for one pulse.
//!
//! Units: `x` in `1/k_L`, `p` in `hbar k_L`, `t` in `hbar/E_r`, so the kinetic
//! energy is `p^2` and the lattice-frame Hamiltonian reads
//! `H = p^2 + (V0(t)/2) cos 2x + F(t) x`. The reduced frame trades the tilt for
//! the vector potential `A(t) = p_L(t)`: `H = (p - A)^2 + (V0(t)/2) cos 2x`.
//! Both frames share the grid and absorber; momenta reported by the
//! diagnostics are mechanical momenta, identical in the two frames.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::adiabatic::MomentumDistribution;
use crate::error::{Error, Result};
use crate::physconfig::SpeciesLattice;
use crate::pulses::PulseSchedule;

/// Lattice periods spanned by the default grid.
pub const DEFAULT_PERIODS: usize = 128;
/// Default time steps per Bloch period.
pub const STEPS_PER_PERIOD: f64 = 2048.0;
/// Step cap used when the schedule never tilts the lattice.
pub const STATIC_DT: f64 = 1e-3;
/// Transmission through the absorber the default strength is sized for.
const ABSORBER_LEAK: f64 = 1e-6;
/// Norm allowed outside the central half of the grid at initialisation.
const SPREAD_TOL: f64 = 1e-10;

const SNAPSHOT_MAGIC: &[u8; 8] = b"WFSNAP01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lattice,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Grid points, a power of two.
    pub points: usize,
    /// Grid span `L` in `1/k_L`.
    pub span: f64,
    /// Nominal time step in `hbar/E_r`; segments shorten it to fit exactly.
    pub dt: f64,
    /// Step for the untilted load and unload segments.
    pub hold_dt: f64,
    /// Fraction of the span covered by the absorber on each side.
    pub absorber_fraction: f64,
    /// Absorption rate scale; the per-step amplitude mask is `cos(pi s/2)^(strength dt)`.
    pub absorber_strength: f64,
    pub frame: Frame,
    /// Half-width of the diagnostic momentum bins in `hbar k_L`.
    pub bin_half_width: f64,
    /// Bins `j = -max_bin ..= max_bin` around `2j hbar k_L`.
    pub max_bin: usize,
    /// Time-series samples over the pulse.
    pub checkpoints: usize,
}

impl SimConfig {
    /// Grid and step sized for `schedule`: 128 periods, Nyquist momentum at
    /// least 1.3 times the largest momentum an escaping atom gains before the
    /// grid edge, `dt = min(T_B/2048, phase bound)`.
    pub fn for_schedule(cfg: &SpeciesLattice, schedule: &PulseSchedule) -> Result<Self> {
        Self::with_periods(cfg, schedule, DEFAULT_PERIODS)
    }

    pub fn with_periods(cfg: &SpeciesLattice, schedule: &PulseSchedule, periods: usize) -> Result<Self> {
        if periods < 8 {
            return Err(Error::SimConfig(format!("need at least 8 lattice periods, got {periods}")));
        }
        let span = periods as f64 * PI;
        let force = cfg.force(schedule.accel_peak).abs();
        let escape = (force * span / 2.0).sqrt();
        // Nyquist momentum equals the points per period (period pi, p_max = pi/dx).
        let per_period = ((1.3 * escape).ceil() as usize).max(32).next_power_of_two();
        let points = (periods * per_period).next_power_of_two();
        let span_exact = points as f64 / per_period as f64 * PI;
        let fraction = 0.1;
        let v_max = schedule.depth_peak / 2.0 + force * span_exact / 2.0;
        let phase_dt = if v_max > 0.0 { 0.99 * PI / (4.0 * v_max) } else { f64::INFINITY };
        let period_dt = if force > 0.0 { 2.0 / force / STEPS_PER_PERIOD } else { STATIC_DT };
        let dt = period_dt.min(phase_dt);
        let hold_dt = if schedule.depth_peak > 0.0 {
            STATIC_DT.min(0.99 * PI / (2.0 * schedule.depth_peak))
        } else {
            STATIC_DT
        }
        .max(dt);
        let p_nyq = per_period as f64;
        // Crossing time at the Nyquist speed 2 p_nyq; mean of -ln cos(pi s/2) over the layer is ln 2.
        let crossing = fraction * span_exact / (2.0 * p_nyq);
        let strength = (1.5 * (1.0 / ABSORBER_LEAK).ln() / (2.0 * 2f64.ln() * crossing)).max(25.0);
        let sim = SimConfig {
            points,
            span: span_exact,
            dt,
            hold_dt,
            absorber_fraction: fraction,
            absorber_strength: strength,
            frame: Frame::Lattice,
            bin_half_width: 1.0,
            max_bin: 2,
            checkpoints: 200,
        };
        sim.validate(cfg, schedule)?;
        Ok(sim)
    }

    pub fn dx(&self) -> f64 {
        self.span / self.points as f64
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.dx()
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        let dx = self.dx();
        (0..self.points).map(move |i| -self.span / 2.0 + i as f64 * dx)
    }

    /// Grid momenta in FFT order.
    pub fn momenta(&self) -> Vec<f64> {
        let dp = 2.0 * PI / self.span;
        let m = self.points as i64;
        (0..m).map(|k| if k < m / 2 { k } else { k - m } as f64 * dp).collect()
    }

    fn check_grid(&self) -> Result<()> {
        if self.points < 16 || !self.points.is_power_of_two() {
            return Err(Error::SimConfig(format!("points must be a power of two >= 16, got {}", self.points)));
        }
        if !(self.span > 0.0 && self.span.is_finite()) {
            return Err(Error::SimConfig(format!("span must be positive, got {}", self.span)));
        }
        if PI / self.dx() < 16.0 {
            return Err(Error::SimConfig(format!(
                "dx = {} resolves a lattice period with fewer than 16 points",
                self.dx()
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite() && self.hold_dt > 0.0 && self.hold_dt.is_finite()) {
            return Err(Error::SimConfig(format!("time steps must be positive, got {} and {}", self.dt, self.hold_dt)));
        }
        if !(0.0..0.5).contains(&self.absorber_fraction) || self.absorber_strength < 0.0 {
            return Err(Error::SimConfig("absorber fraction must lie in [0, 0.5), strength >= 0".into()));
        }
        if !(self.bin_half_width > 0.0 && self.bin_half_width <= 1.0) {
            return Err(Error::SimConfig(format!(
                "momentum bins of half-width {} overlap (spacing 2 hbar k_L)",
                self.bin_half_width
            )));
        }
        if (2 * self.max_bin) as f64 + self.bin_half_width > self.nyquist() {
            return Err(Error::SimConfig("outermost momentum bin exceeds the grid Nyquist momentum".into()));
        }
        Ok(())
    }

    /// Grid, bins and the single-step phase bound `|V_max dt| < pi/4` for `schedule`.
    pub fn validate(&self, cfg: &SpeciesLattice, schedule: &PulseSchedule) -> Result<()> {
        self.check_grid()?;
        let tilt = match self.frame {
            Frame::Lattice => cfg.force(schedule.accel_peak).abs() * self.span / 2.0,
            Frame::Reduced => 0.0,
        };
        let v_max = schedule.depth_peak / 2.0 + tilt;
        if schedule.depth_peak / 2.0 * self.hold_dt >= PI / 4.0 {
            return Err(Error::SimConfig(format!(
                "hold step {:.3e} exceeds the pi/4 phase bound at V0 = {}",
                self.hold_dt, schedule.depth_peak
            )));
        }
        if v_max * self.dt >= PI / 4.0 {
            return Err(Error::SimConfig(format!(
                "potential phase per step {:.3} exceeds pi/4 (V_max = {v_max:.3} E_r, dt = {:.3e})",
                v_max * self.dt,
                self.dt
            )));
        }
        Ok(())
    }
}

/// Wavefunction on the periodic grid `x_i = -L/2 + i dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefunctionGrid {
    pub span: f64,
    pub dx: f64,
    pub psi: Vec<Complex64>,
    /// Norm removed by the absorber so far.
    pub absorbed: f64,
    /// `hbar/E_r`
    pub time: f64,
}

impl WavefunctionGrid {
    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dx
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.psi.len()).map(move |i| -self.span / 2.0 + i as f64 * self.dx)
    }

    pub fn mean_position(&self) -> f64 {
        let n = self.norm();
        self.positions().zip(&self.psi).map(|(x, z)| x * z.norm_sqr()).sum::<f64>() * self.dx / n
    }

    pub fn position_width(&self) -> f64 {
        let n = self.norm();
        let mean = self.mean_position();
        let var = self.positions().zip(&self.psi).map(|(x, z)| (x - mean).powi(2) * z.norm_sqr()).sum::<f64>();
        (var * self.dx / n).sqrt()
    }

    /// Canonical momentum populations `(p_k, |psi(p_k)|^2 dp)` in FFT order.
    pub fn momentum_populations(&self) -> Vec<(f64, f64)> {
        let m = self.psi.len();
        let mut buf = self.psi.clone();
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        let dp = 2.0 * PI / self.span;
        let scale = self.dx / m as f64;
        buf.iter()
            .enumerate()
            .map(|(k, z)| {
                let k = k as i64;
                let p = if k < m as i64 / 2 { k } else { k - m as i64 } as f64 * dp;
                (p, z.norm_sqr() * scale)
            })
            .collect()
    }

    /// Binary dump: magic, point count, span, dx, time, then interleaved re/im (little endian).
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&(self.psi.len() as u64).to_le_bytes())?;
        for v in [self.span, self.dx, self.time] {
            out.write_all(&v.to_le_bytes())?;
        }
        for z in &self.psi {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Domain("not a wavefunction snapshot".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |input: &mut R| -> Result<[u8; 8]> {
            input.read_exact(&mut word)?;
            Ok(word)
        };
        let points = u64::from_le_bytes(next(&mut input)?) as usize;
        let span = f64::from_le_bytes(next(&mut input)?);
        let dx = f64::from_le_bytes(next(&mut input)?);
        let time = f64::from_le_bytes(next(&mut input)?);
        let mut psi = Vec::with_capacity(points);
        for _ in 0..points {
            let re = f64::from_le_bytes(next(&mut input)?);
            let im = f64::from_le_bytes(next(&mut input)?);
            psi.push(Complex64::new(re, im));
        }
        Ok(WavefunctionGrid { span, dx, psi, absorbed: 0.0, time })
    }
}

/// Synthesises `psi(x) = (2 pi)^(-1/2) int phi(p) e^{ipx} dp` on the grid of `sim`.
pub fn init_state(distribution: &MomentumDistribution, sim: &SimConfig) -> Result<WavefunctionGrid> {
    sim.check_grid()?;
    let m = sim.points;
    let dx = sim.dx();
    let dp = 2.0 * PI / sim.span;
    let x0 = -sim.span / 2.0;
    // psi_j = dp/sqrt(2 pi) sum_k phi_k e^{i p_k x0} e^{2 pi i jk/M}
    let mut buf: Vec<Complex64> = sim
        .momenta()
        .into_iter()
        .map(|p| Complex64::from_polar(distribution.amplitude(p) * dp / (2.0 * PI).sqrt(), p * x0))
        .collect();
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    let state = WavefunctionGrid { span: sim.span, dx, psi: buf, absorbed: 0.0, time: 0.0 };
    let outside: f64 = state
        .positions()
        .zip(&state.psi)
        .filter(|(x, _)| x.abs() >= sim.span / 8.0)
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        * dx;
    if outside > SPREAD_TOL {
        return Err(Error::GridTooSmall(format!(
            "{outside:.2e} of the initial norm lies beyond L/8 = {:.1}; widen the grid",
            sim.span / 8.0
        )));
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSample {
    /// s
    pub time: f64,
    pub norm: f64,
    pub absorbed: f64,
    /// Mean mechanical momentum of the remaining norm, `hbar k_L`.
    pub mean_momentum: f64,
    /// Populations of bins `j = -max_bin ..= max_bin`.
    pub bins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumBin {
    pub index: i64,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Absorbed norm plus norm still in flight beyond the outermost bin.
    pub tunneling: f64,
    pub absorbed: f64,
    pub unbinned: f64,
    /// Population of the `j = 0` bin.
    pub survival: f64,
    /// Non-adiabatic loss attributed to ladder `|j|`, entry `k` for ladder `k + 1`.
    pub ladders: Vec<f64>,
    pub bins: Vec<MomentumBin>,
    /// Sum of every entry, 1 up to integration error.
    pub total: f64,
}

impl LossReport {
    pub fn total_loss(&self) -> f64 {
        1.0 - self.survival
    }

    pub fn non_adiabatic(&self) -> f64 {
        self.ladders.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub state: WavefunctionGrid,
    pub series: Vec<TimeSample>,
}

/// One integration step: midpoint time and length, both in `hbar/E_r`.
#[derive(Debug, Clone, Copy)]
struct Step {
    mid: f64,
    dt: f64,
}

/// Steps aligned to the schedule's segment boundaries; segments outside the
/// acceleration window use the hold step.
fn step_plan(cfg: &SpeciesLattice, schedule: &PulseSchedule, sim: &SimConfig) -> Vec<(f64, f64, usize)> {
    let start = cfg.time_to_recoil(schedule.accel_start());
    let end = cfg.time_to_recoil(schedule.accel_end());
    let b: Vec<f64> = schedule.boundaries().into_iter().map(|t| cfg.time_to_recoil(t)).collect();
    b.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let untilted = w[1] <= start || w[0] >= end;
            let dt = if untilted { sim.hold_dt } else { sim.dt };
            let n = ((w[1] - w[0]) / dt).ceil().max(1.0) as usize;
            (w[0], (w[1] - w[0]) / n as f64, n)
        })
        .collect()
}

fn steps(plan: &[(f64, f64, usize)]) -> impl Iterator<Item = Step> + '_ {
    plan.iter()
        .flat_map(|&(t0, dt, n)| (0..n).map(move |i| Step { mid: t0 + (i as f64 + 0.5) * dt, dt }))
}

/// Shift of the lattice that keeps the tilted minima in place: `-asin(F/V0)/2`.
fn minimum_shift(force: f64, depth: f64) -> Result<f64> {
    if force == 0.0 {
        return Ok(0.0);
    }
    let r = force / depth;
    if !(r.abs() <= 1.0) {
        return Err(Error::Domain(format!(
            "lattice shift needs |F/V0| <= 1, got F = {force:.4}, V0 = {depth:.4}"
        )));
    }
    Ok(-r.asin() / 2.0)
}

struct Engine<'a> {
    cfg: &'a SpeciesLattice,
    schedule: &'a PulseSchedule,
    sim: &'a SimConfig,
    shift: bool,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    x: Vec<f64>,
    /// `cos 2x`, `sin 2x` over one lattice period when the grid holds whole periods, else the full grid.
    cos2x: Vec<f64>,
    sin2x: Vec<f64>,
    p: Vec<f64>,
    /// `(index, 1 - mask^2, mask)` for absorber points, keyed by the step it was built for.
    absorber: Vec<(usize, f64, f64)>,
    absorber_dt: f64,
    lattice_phase: Vec<Complex64>,
    lattice_key: [u64; 3],
    tilt_phase: Vec<Complex64>,
    tilt_key: [u64; 2],
    potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
    kinetic_key: u64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SpeciesLattice, schedule: &'a PulseSchedule, sim: &'a SimConfig, shift: bool) -> Self {
        let m = sim.points;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let x: Vec<f64> = sim.positions().collect();
        let per_period = m as f64 * PI / sim.span;
        let cell = if (per_period - per_period.round()).abs() < 1e-9 && m % (per_period.round() as usize) == 0 {
            per_period.round() as usize
        } else {
            m
        };
        let cos2x: Vec<f64> = x[..cell].iter().map(|x| (2.0 * x).cos()).collect();
        let sin2x: Vec<f64> = x[..cell].iter().map(|x| (2.0 * x).sin()).collect();
        let lattice_phase = vec![Complex64::default(); cell];
        Engine {
            cfg,
            schedule,
            sim,
            shift,
            fwd,
            inv,
            scratch: vec![Complex64::default(); scratch_len],
            x,
            cos2x,
            sin2x,
            p: sim.momenta(),
            absorber: Vec::new(),
            absorber_dt: f64::NAN,
            lattice_phase,
            lattice_key: [u64::MAX; 3],
            tilt_phase: vec![Complex64::new(1.0, 0.0); m],
            tilt_key: [0.0f64.to_bits(); 2],
            potential: vec![Complex64::default(); m],
            kinetic: vec![Complex64::default(); m],
            kinetic_key: u64::MAX,
        }
    }

    fn controls(&self, t: f64) -> (f64, f64, f64) {
        let ts = self.cfg.time_to_seconds(t);
        let depth = self.schedule.depth(ts);
        let force = self.cfg.force(self.schedule.accel(ts));
        let vector = match self.sim.frame {
            Frame::Lattice => 0.0,
            Frame::Reduced => self.schedule.momentum(ts),
        };
        (depth, force, vector)
    }

    fn absorber_for(&mut self, dt: f64) {
        if self.absorber_dt == dt {
            return;
        }
        let width = self.sim.absorber_fraction * self.sim.span;
        let half = self.sim.span / 2.0;
        let power = self.sim.absorber_strength * dt;
        self.absorber = if width > 0.0 && power > 0.0 {
            self.x
                .iter()
                .enumerate()
                .filter_map(|(i, x)| {
                    let s = (x.abs() - (half - width)) / width;
                    (s > 0.0).then(|| {
                        let m = (PI * s.min(1.0) / 2.0).cos().max(0.0).powf(power);
                        (i, 1.0 - m * m, m)
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        self.absorber_dt = dt;
    }

    /// Potential kick `exp(-i V dt)` as the product of a lattice factor, periodic
    /// over one cell, and a tilt factor `exp(-i F x dt)` from a two-level table.
    fn build_potential(&mut self, depth: f64, force: f64, dt: f64) -> Result<()> {
        let shift = if self.shift { minimum_shift(force, depth)? } else { 0.0 };
        let tilt = match self.sim.frame {
            Frame::Lattice => force,
            Frame::Reduced => 0.0,
        };
        let lattice_key = [depth.to_bits(), shift.to_bits(), dt.to_bits()];
        let tilt_key = [tilt.to_bits(), dt.to_bits()];
        let tilt_dt = if tilt == 0.0 { 0.0 } else { dt };
        let tilt_key = if tilt == 0.0 { [0.0f64.to_bits(); 2] } else { tilt_key };
        if lattice_key == self.lattice_key && tilt_key == self.tilt_key {
            return Ok(());
        }
        if lattice_key != self.lattice_key {
            let (s2, c2) = (2.0 * shift).sin_cos();
            let half = depth / 2.0;
            for ((v, c), s) in self.lattice_phase.iter_mut().zip(&self.cos2x).zip(&self.sin2x) {
                // cos(2x + 2 shift) = cos 2x cos 2s - sin 2x sin 2s
                *v = Complex64::from_polar(1.0, -half * (c * c2 - s * s2) * dt);
            }
            self.lattice_key = lattice_key;
        }
        if tilt_key != self.tilt_key {
            const BLOCK: usize = 64;
            let dx = self.sim.dx();
            let theta = -tilt * tilt_dt;
            let fine: Vec<Complex64> = (0..BLOCK).map(|b| Complex64::from_polar(1.0, theta * b as f64 * dx)).collect();
            for (a, block) in self.tilt_phase.chunks_mut(BLOCK).enumerate() {
                let coarse = Complex64::from_polar(1.0, theta * self.x[a * BLOCK]);
                for (v, f) in block.iter_mut().zip(&fine) {
                    *v = coarse * f;
                }
            }
            self.tilt_key = tilt_key;
        }
        let cell = self.lattice_phase.len();
        for (block, tilt) in self.potential.chunks_mut(cell).zip(self.tilt_phase.chunks(cell)) {
            for ((v, l), t) in block.iter_mut().zip(&self.lattice_phase).zip(tilt) {
                *v = l * t;
            }
        }
        Ok(())
    }

    /// `exp(-i sum_parts (p - A)^2 tau)` with the inverse FFT normalisation folded in.
    fn apply_kinetic(&mut self, psi: &mut [Complex64], parts: &[(f64, f64)]) {
        let m = psi.len();
        let inv_m = 1.0 / m as f64;
        self.fwd.process_with_scratch(psi, &mut self.scratch);
        let lattice = parts.iter().all(|(a, _)| *a == 0.0);
        if lattice {
            let tau: f64 = parts.iter().map(|(_, t)| t).sum();
            if tau.to_bits() != self.kinetic_key {
                for (k, p) in self.kinetic.iter_mut().zip(&self.p) {
                    *k = Complex64::from_polar(inv_m, -p * p * tau);
                }
                self.kinetic_key = tau.to_bits();
            }
            for (z, k) in psi.iter_mut().zip(&self.kinetic) {
                *z *= k;
            }
        } else {
            let nyq = self.sim.nyquist();
            for (z, p) in psi.iter_mut().zip(&self.p) {
                let phase: f64 = parts
                    .iter()
                    .map(|(a, tau)| {
                        let q = wrap_momentum(p - a, nyq);
                        q * q * tau
                    })
                    .sum();
                *z *= Complex64::from_polar(inv_m, -phase);
            }
        }
        self.inv.process_with_scratch(psi, &mut self.scratch);
    }

    fn potential_and_absorb(&mut self, state: &mut WavefunctionGrid, step: Step) -> Result<()> {
        let (depth, force, _) = self.controls(step.mid);
        self.build_potential(depth, force, step.dt)?;
        for (z, v) in state.psi.iter_mut().zip(&self.potential) {
            *z *= v;
        }
        self.absorber_for(step.dt);
        let mut removed = 0.0;
        for &(i, loss, m) in &self.absorber {
            let z = &mut state.psi[i];
            removed += z.norm_sqr() * loss;
            *z *= m;
        }
        state.absorbed += removed * state.dx;
        Ok(())
    }

    /// Runs a chunk of steps from a synchronised state back to a synchronised state.
    fn chunk(&mut self, state: &mut WavefunctionGrid, chunk: &[Step]) -> Result<()> {
        let mut psi = std::mem::take(&mut state.psi);
        let first = chunk[0];
        let a0 = self.controls(first.mid).2;
        self.apply_kinetic(&mut psi, &[(a0, first.dt / 2.0)]);
        state.psi = psi;
        for (i, &step) in chunk.iter().enumerate() {
            self.potential_and_absorb(state, step)?;
            let a = self.controls(step.mid).2;
            let mut parts = vec![(a, step.dt / 2.0)];
            if let Some(next) = chunk.get(i + 1) {
                parts.push((self.controls(next.mid).2, next.dt / 2.0));
            }
            let mut psi = std::mem::take(&mut state.psi);
            self.apply_kinetic(&mut psi, &parts);
            state.psi = psi;
            state.time = step.mid + step.dt / 2.0;
        }
        Ok(())
    }

    fn mechanical_offset(&self, t: f64) -> f64 {
        self.controls(t).2
    }

    fn sample(&self, state: &WavefunctionGrid) -> TimeSample {
        let offset = self.mechanical_offset(state.time);
        let pops = state.momentum_populations();
        let nyq = self.sim.nyquist();
        let norm: f64 = pops.iter().map(|(_, w)| w).sum();
        let mean = if norm > 0.0 {
            pops.iter().map(|(p, w)| wrap_momentum(p - offset, nyq) * w).sum::<f64>() / norm
        } else {
            0.0
        };
        let (bins, _) = bin_populations(&pops, offset, self.sim);
        TimeSample {
            time: self.cfg.time_to_seconds(state.time),
            norm,
            absorbed: state.absorbed,
            mean_momentum: mean,
            bins,
        }
    }

    fn run(&mut self, mut state: WavefunctionGrid) -> Result<Propagation> {
        if state.len() != self.sim.points || (state.dx - self.sim.dx()).abs() > 1e-12 * self.sim.dx() {
            return Err(Error::SimConfig("state grid does not match the simulation grid".into()));
        }
        self.sim.validate(self.cfg, self.schedule)?;
        let plan = step_plan(self.cfg, self.schedule, self.sim);
        let all: Vec<Step> = steps(&plan).collect();
        let per_chunk = (all.len() / self.sim.checkpoints.max(1)).max(1);
        let mut series = vec![self.sample(&state)];
        for chunk in all.chunks(per_chunk) {
            self.chunk(&mut state, chunk)?;
            series.push(self.sample(&state));
        }
        Ok(Propagation { state, series })
    }
}

fn wrap_momentum(q: f64, nyq: f64) -> f64 {
    (q + nyq).rem_euclid(2.0 * nyq) - nyq
}

/// Populations of bins `j = -max_bin ..= max_bin` (half-open `[2j - w, 2j + w)`) and the rest.
fn bin_populations(pops: &[(f64, f64)], offset: f64, sim: &SimConfig) -> (Vec<f64>, f64) {
    let jmax = sim.max_bin as i64;
    let w = sim.bin_half_width;
    let nyq = sim.nyquist();
    let mut bins = vec![0.0; (2 * jmax + 1) as usize];
    let mut rest = 0.0;
    for &(p, pop) in pops {
        let q = wrap_momentum(p - offset, nyq);
        let j = (q / 2.0).round() as i64;
        let d = q - 2.0 * j as f64;
        if j.abs() <= jmax && d >= -w && d < w {
            bins[(j + jmax) as usize] += pop;
        } else {
            rest += pop;
        }
    }
    (bins, rest)
}

/// Integrates `state` through `schedule` with Strang splitting (half kinetic,
/// potential at the step midpoint, half kinetic), the absorber mask applied
/// after each potential kick.
pub fn propagate(
    cfg: &SpeciesLattice,
    state: WavefunctionGrid,
    schedule: &PulseSchedule,
    sim: &SimConfig,
) -> Result<Propagation> {
    Engine::new(cfg, schedule, sim, false).run(state)
}

/// As [`propagate`] for a box pulse, with the lattice displaced by
/// `-asin(F/V0)/2` while the acceleration is on, so the tilted minima stay
/// where the untilted ones were.
pub fn lattice_shift_propagate(
    cfg: &SpeciesLattice,
    state: WavefunctionGrid,
    schedule: &PulseSchedule,
    sim: &SimConfig,
) -> Result<Propagation> {
    if schedule.tau_ramp != 0.0 {
        return Err(Error::SimConfig(format!(
            "lattice shift needs a box acceleration profile, got tau_ramp = {:e} s",
            schedule.tau_ramp
        )));
    }
    if sim.frame != Frame::Lattice {
        return Err(Error::SimConfig("lattice shift is implemented in the lattice frame only".into()));
    }
    minimum_shift(cfg.force(schedule.accel_peak), schedule.depth_peak)?;
    Engine::new(cfg, schedule, sim, true).run(state)
}

/// Loss decomposition of a state propagated through `schedule`.
pub fn diagnostics(
    cfg: &SpeciesLattice,
    state: &WavefunctionGrid,
    schedule: &PulseSchedule,
    sim: &SimConfig,
) -> Result<LossReport> {
    sim.check_grid()?;
    let end = schedule.duration();
    if schedule.tau_load <= 0.0 || schedule.depth(end) > 1e-6 * schedule.depth_peak.max(1.0) || schedule.accel(end) != 0.0
    {
        return Err(Error::SimConfig("diagnostics need a schedule that ends unloaded and unaccelerated".into()));
    }
    let offset = match sim.frame {
        Frame::Lattice => 0.0,
        Frame::Reduced => schedule.momentum(cfg.time_to_seconds(state.time)),
    };
    let pops = state.momentum_populations();
    let (bins, unbinned) = bin_populations(&pops, offset, sim);
    let jmax = sim.max_bin as i64;
    let survival = bins[jmax as usize];
    let ladders = (1..=jmax)
        .map(|j| bins[(jmax + j) as usize] + bins[(jmax - j) as usize])
        .collect::<Vec<_>>();
    let total = state.absorbed + unbinned + bins.iter().sum::<f64>();
    Ok(LossReport {
        tunneling: state.absorbed + unbinned,
        absorbed: state.absorbed,
        unbinned,
        survival,
        ladders,
        bins: bins.iter().enumerate().map(|(i, &population)| MomentumBin { index: i as i64 - jmax, population }).collect(),
        total,
    })
}
