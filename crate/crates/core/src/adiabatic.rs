//! Adiabatic Wannier-Stark model along a pulse schedule: loading amplitudes,
//! survival and phase, intensity-noise budgets, spontaneous emission, the
//! case-study calculators and the magic-depth search.
//!
//! Times at the API are in seconds, energies in `E_r`. Internally the path
//! integrals are evaluated as `int Gamma_0 dt / hbar` and `int E_00 dt / hbar`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::blochband::{bands_at_cutoff, certified_cutoff, edge_gap, lz_probability_for_tilt};
use crate::error::{invalid, Error, Result};
use crate::numerics::{gauss_legendre, golden_max, lerp_table, Pchip};
use crate::physconfig::{LaserSystem, SpeciesLattice, HBAR, SPEED_OF_LIGHT};
use crate::pulses::PulseSchedule;
use crate::wsspectrum::{band_averages, d_e00_d_depth, levels_with_averages, unfold_near, ws_levels, FloquetSettings};

/// Tail weight outside the Brillouin zone above which a distribution is rejected.
const SUPPORT_TOL: f64 = 1e-12;
/// Weight the `g_l` window may drop.
const WINDOW_TOL: f64 = 1e-8;

/// Gaussian momentum amplitude `phi(p)` confined to the first Brillouin zone.
///
/// `sigma` is the rms width of `|phi|^2` in `hbar k_L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumDistribution {
    sigma: f64,
    centre: f64,
    scale: f64,
}

impl MomentumDistribution {
    pub fn gaussian(sigma: f64, centre: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma_p", format!("must be > 0, got {sigma}")));
        }
        if !(centre.abs() < 1.0) {
            return Err(invalid("p_centre", format!("must lie inside the zone, got {centre}")));
        }
        let raw = |p: f64| (-(p - centre).powi(2) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).sqrt();
        let panels = ((8.0 / sigma).ceil() as usize).max(64);
        let inside = gauss_legendre(raw, -1.0, 1.0, panels);
        if 1.0 - inside > SUPPORT_TOL {
            return Err(invalid(
                "sigma_p",
                format!("distribution leaks {:.3e} of its weight outside the Brillouin zone", 1.0 - inside),
            ));
        }
        Ok(MomentumDistribution { sigma, centre, scale: inside.sqrt().recip() })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn centre(&self) -> f64 {
        self.centre
    }

    /// `phi(p)`, zero outside `(-1, 1)`.
    pub fn amplitude(&self, p: f64) -> f64 {
        if p.abs() >= 1.0 {
            return 0.0;
        }
        let s2 = self.sigma * self.sigma;
        self.scale * (2.0 * PI * s2).powf(-0.25) * (-(p - self.centre).powi(2) / (4.0 * s2)).exp()
    }
}

/// Site amplitudes `g_l` for `l = first_site, first_site + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingCoefficients {
    pub first_site: i64,
    pub amplitudes: Vec<Complex64>,
    /// Weight outside the retained window.
    pub truncated_weight: f64,
}

impl LoadingCoefficients {
    pub fn weight(&self) -> f64 {
        self.amplitudes.iter().map(|g| g.norm_sqr()).sum()
    }

    pub fn sites(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.amplitudes.iter().enumerate().map(|(i, g)| (self.first_site + i as i64, *g))
    }

    pub fn get(&self, site: i64) -> Complex64 {
        usize::try_from(site - self.first_site)
            .ok()
            .and_then(|i| self.amplitudes.get(i).copied())
            .unwrap_or_default()
    }
}

/// Loading amplitudes `g_l = (1/sqrt 2) int dp phi(p) exp(-i Theta(p)) exp(i pi p l)`
/// with `Theta(p) = int_0^tau_load E_0(V0(t), p) dt / hbar`.
///
/// The `1/sqrt 2` makes `sum |g_l|^2 = int |phi|^2` since the plane waves
/// `exp(i pi p l)` have norm 2 on the zone. The `p` integral uses a periodic
/// trapezoid grid, so the sum over a full period of `l` obeys discrete Parseval.
pub fn loading_coefficients(
    cfg: &SpeciesLattice,
    distribution: &MomentumDistribution,
    schedule: &PulseSchedule,
) -> Result<LoadingCoefficients> {
    let cut = certified_cutoff(schedule.depth_peak, 1)?;
    let rate = cfg.recoil_rate();
    let tau = schedule.tau_load;
    let theta = |p: f64| -> f64 {
        if tau == 0.0 {
            return 0.0;
        }
        let panels = 48;
        gauss_legendre(|t| bands_at_cutoff(schedule.depth(t), p, 1, cut)[0], 0.0, tau, panels)
            * rate
    };
    let mut m = 256usize;
    loop {
        let samples: Vec<Complex64> = (0..m)
            .into_par_iter()
            .map(|k| {
                let p = -1.0 + 2.0 * k as f64 / m as f64;
                let amp = distribution.amplitude(p);
                if amp == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::from_polar(amp, -theta(p))
                }
            })
            .collect();
        let mut buf = samples;
        FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
        let half = (m / 2) as i64;
        let scale = 2f64.sqrt() / m as f64;
        // site l sits at FFT bin l mod m, with the extra exp(-i pi l) from p_0 = -1
        let g: Vec<Complex64> = (-half..half)
            .map(|l| {
                let sign = if l.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                buf[l.rem_euclid(m as i64) as usize] * (scale * sign)
            })
            .collect();
        let outer: f64 = g
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as i64 - half).abs() >= 3 * half / 4)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        if outer > 1e-3 * WINDOW_TOL && m < 1 << 14 {
            m *= 2;
            continue;
        }
        let (mut lo, mut hi) = (0usize, g.len());
        let mut dropped = 0.0;
        loop {
            let left = g[lo].norm_sqr();
            let right = g[hi - 1].norm_sqr();
            let next = left.min(right);
            if hi - lo <= 1 || dropped + next >= WINDOW_TOL {
                break;
            }
            dropped += next;
            if left <= right {
                lo += 1;
            } else {
                hi -= 1;
            }
        }
        return Ok(LoadingCoefficients {
            first_site: lo as i64 - half,
            amplitudes: g[lo..hi].to_vec(),
            truncated_weight: dropped,
        });
    }
}

/// Chebyshev interpolant of `<E_0>(V)` on `[0, depth]` for the load and unload ramps.
#[derive(Debug, Clone)]
struct DepthCurve {
    hi: f64,
    coeffs: Vec<f64>,
}

impl DepthCurve {
    const NODES: usize = 64;

    fn new(depth: f64) -> Result<Self> {
        let n = Self::NODES;
        let nodes: Vec<f64> = (0..n).map(|k| (PI * (k as f64 + 0.5) / n as f64).cos()).collect();
        let values = nodes
            .par_iter()
            .map(|&x| crate::blochband::band_average(0.5 * depth * (x + 1.0), 0))
            .collect::<Result<Vec<f64>>>()?;
        let coeffs = (0..n)
            .map(|j| {
                let s: f64 = (0..n).map(|k| values[k] * (PI * j as f64 * (k as f64 + 0.5) / n as f64).cos()).sum();
                s * if j == 0 { 1.0 } else { 2.0 } / n as f64
            })
            .collect();
        Ok(DepthCurve { hi: depth, coeffs })
    }

    fn eval(&self, v: f64) -> f64 {
        if self.hi == 0.0 {
            return self.coeffs[0];
        }
        let x = (2.0 * v / self.hi - 1.0).clamp(-1.0, 1.0);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coeffs[0]
    }
}

/// Refinement controls for [`WsPathTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableOptions {
    /// Initial node spacing (m/s^2).
    pub step: f64,
    /// Intervals narrower than this are not split further (m/s^2).
    pub min_step: f64,
    /// Relative disagreement on `Gamma_0` that triggers a split.
    pub rel_tol: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions { step: 2.0, min_step: 0.01, rel_tol: 0.05 }
    }
}

/// `Gamma_0(a)` and `E_00(a)` at fixed depth, tabulated on an adaptively refined
/// acceleration grid. `Gamma_0` is interpolated monotonically in `ln Gamma`,
/// `E_00` linearly.
#[derive(Debug, Clone)]
pub struct WsPathTable {
    depth: f64,
    accel: Vec<f64>,
    linewidth: Vec<f64>,
    energy: Vec<f64>,
    log_gamma: Pchip,
    force_per_accel: f64,
    load_curve: DepthCurve,
    precision_floor: f64,
}

const LOG_TINY: f64 = 1e-30;

fn log_gamma(g: &[f64]) -> Vec<f64> {
    g.iter().map(|&x| x.max(LOG_TINY).ln()).collect()
}

impl WsPathTable {
    pub fn build(
        cfg: &SpeciesLattice,
        depth: f64,
        accel_max: f64,
        settings: &FloquetSettings,
        opts: &TableOptions,
    ) -> Result<Self> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(invalid("V0", format!("must be > 0, got {depth}")));
        }
        if !(accel_max > 0.0 && accel_max.is_finite()) {
            return Err(invalid("a_max", format!("must be > 0, got {accel_max}")));
        }
        if !(opts.step > 0.0 && opts.min_step > 0.0 && opts.rel_tol > 0.0) {
            return Err(invalid("table options", "step, min_step and rel_tol must be > 0"));
        }
        settings.validate()?;
        let avgs = band_averages(depth, settings.max_ladder)?;
        let eval = |a: f64| -> Result<(f64, f64)> {
            let s = levels_with_averages(&avgs, cfg, depth, a, settings)?;
            Ok((s.levels[0].linewidth, s.levels[0].energy))
        };

        let count = (accel_max / opts.step).ceil() as usize;
        let mut grid: Vec<f64> = (0..count).map(|k| k as f64 * accel_max / count as f64).collect();
        grid.push(accel_max);
        if settings.min_accel > 0.0 && settings.min_accel < accel_max {
            let i = grid.partition_point(|&a| a < settings.min_accel);
            if (grid[i] - settings.min_accel).abs() > 1e-9 {
                grid.insert(i, settings.min_accel);
            }
        }
        let values = grid.par_iter().map(|&a| eval(a)).collect::<Result<Vec<_>>>()?;
        let mut nodes: Vec<(f64, f64, f64)> = grid.iter().zip(values).map(|(&a, (g, e))| (a, g, e)).collect();

        let gamma_abs = 50.0 * settings.precision_floor;
        let mut dirty: Vec<bool> = vec![true; nodes.len() - 1];
        loop {
            let (ax, gx, ex): (Vec<f64>, Vec<f64>, Vec<f64>) = unzip3(&nodes);
            let interp = Pchip::new(ax.clone(), log_gamma(&gx))?;
            let candidates: Vec<usize> = (0..nodes.len() - 1)
                .filter(|&i| {
                    dirty[i] && nodes[i].0 >= settings.min_accel && nodes[i + 1].0 - nodes[i].0 > 2.0 * opts.min_step
                })
                .collect();
            if candidates.is_empty() {
                break;
            }
            let checks: Vec<Option<(f64, f64, f64)>> = candidates
                .par_iter()
                .map(|&i| {
                    let mid = 0.5 * (nodes[i].0 + nodes[i + 1].0);
                    eval(mid).ok().map(|(g, e)| (mid, g, e))
                })
                .collect();
            let mut insert = Vec::new();
            for (&i, check) in candidates.iter().zip(checks) {
                dirty[i] = false;
                let Some((mid, g, e)) = check else { continue };
                let g_int = interp.eval(mid).map(f64::exp).unwrap_or(0.0);
                let e_int = lerp_table(&ax, &ex, mid).unwrap_or(e);
                let tilt = PI * cfg.force(mid);
                let e = unfold_near(e, e_int, tilt);
                let g_bad = (g_int - g).abs() > opts.rel_tol * g.max(g_int) && g.max(g_int) > gamma_abs;
                let e_bad = (e_int - e).abs() > 2.5e-4 * cfg.force(mid);
                if g_bad || e_bad {
                    insert.push((i, (mid, g, e)));
                }
            }
            if insert.is_empty() {
                break;
            }
            // insert from the back so earlier indices stay valid
            for (i, node) in insert.into_iter().rev() {
                nodes.insert(i + 1, node);
                dirty[i] = true;
                dirty.insert(i + 1, true);
            }
        }

        for i in 1..nodes.len() {
            let tilt = PI * cfg.force(nodes[i].0);
            if tilt > 0.0 {
                nodes[i].2 = unfold_near(nodes[i].2, nodes[i - 1].2, tilt);
            }
        }
        let (accel, linewidth, energy) = unzip3(&nodes);
        let log_gamma = Pchip::new(accel.clone(), log_gamma(&linewidth))?;
        Ok(WsPathTable {
            depth,
            accel,
            linewidth,
            energy,
            log_gamma,
            force_per_accel: cfg.force(1.0),
            load_curve: DepthCurve::new(depth)?,
            precision_floor: settings.precision_floor,
        })
    }

    /// Linewidth resolution of the underlying spectra (E_r).
    pub fn precision_floor(&self) -> f64 {
        self.precision_floor
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn max_accel(&self) -> f64 {
        *self.accel.last().unwrap()
    }

    /// Tabulated nodes `(a_L, Gamma_0, E_00)`.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.accel.iter().zip(&self.linewidth).zip(&self.energy).map(|((a, g), e)| (*a, *g, *e))
    }

    fn extrapolation(&self, accel: f64) -> Error {
        Error::Extrapolation { v0: self.depth, force: accel * self.force_per_accel }
    }

    /// Interpolated `Gamma_0(a)` (E_r).
    pub fn linewidth(&self, accel: f64) -> Result<f64> {
        let g = self.log_gamma.eval(accel).ok_or_else(|| self.extrapolation(accel))?.exp();
        Ok(if g <= 2.0 * LOG_TINY { 0.0 } else { g })
    }

    /// Interpolated `E_00(a)` (E_r).
    pub fn energy(&self, accel: f64) -> Result<f64> {
        lerp_table(&self.accel, &self.energy, accel).ok_or_else(|| self.extrapolation(accel))
    }

    /// `<E_0>` at depth `v` on the load/unload ramps.
    pub fn band_energy(&self, v: f64) -> f64 {
        self.load_curve.eval(v)
    }

    fn check(&self, schedule: &PulseSchedule) -> Result<()> {
        if (schedule.depth_peak - self.depth).abs() > 1e-12 * self.depth {
            return Err(invalid(
                "V0_peak",
                format!("schedule depth {} differs from tabulated depth {}", schedule.depth_peak, self.depth),
            ));
        }
        if schedule.accel_peak > self.max_accel() * (1.0 + 1e-12) || schedule.accel_peak < 0.0 {
            return Err(self.extrapolation(schedule.accel_peak));
        }
        Ok(())
    }

    /// `(Gamma_0, E_00)` at time `t` of an already checked schedule.
    fn instant(&self, schedule: &PulseSchedule, t: f64) -> (f64, f64) {
        let a = schedule.accel(t);
        if a <= 0.0 {
            return (0.0, self.band_energy(schedule.depth(t)));
        }
        let a = a.min(self.max_accel());
        (self.linewidth(a).unwrap_or(0.0), self.energy(a).unwrap_or(f64::NAN))
    }
}

fn unzip3(nodes: &[(f64, f64, f64)]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(nodes.len());
    let mut b = Vec::with_capacity(nodes.len());
    let mut c = Vec::with_capacity(nodes.len());
    for &(x, y, z) in nodes {
        a.push(x);
        b.push(y);
        c.push(z);
    }
    (a, b, c)
}

/// `int Gamma_0 dt / hbar` and `int E_00 dt / hbar` over a time window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathIntegral {
    pub decay: f64,
    pub phase: f64,
}

impl std::ops::Add for PathIntegral {
    type Output = PathIntegral;
    fn add(self, o: PathIntegral) -> PathIntegral {
        PathIntegral { decay: self.decay + o.decay, phase: self.phase + o.phase }
    }
}

/// Times where the ramps pass table nodes, plus the schedule boundaries.
fn breakpoints(schedule: &PulseSchedule, table: &WsPathTable) -> Vec<f64> {
    let mut cuts = schedule.boundaries();
    let tr = schedule.tau_ramp;
    if tr > 0.0 {
        let w = schedule.shape_h * tr;
        let (ts, te) = (schedule.accel_start(), schedule.accel_end());
        for &a in &table.accel {
            if !(a > 0.0 && a < schedule.accel_peak) {
                continue;
            }
            let s = a / schedule.accel_peak;
            let logit = (s / (1.0 - s)).ln();
            let rise = ts + 0.5 * tr + w * logit;
            let fall = te - 0.5 * tr - w * logit;
            if rise > ts && rise < ts + tr {
                cuts.push(rise);
            }
            if fall > te - tr && fall < te {
                cuts.push(fall);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * x.abs().max(1e-300));
    cuts
}

fn gauss_pair<F: Fn(f64) -> (f64, f64)>(f: F, a: f64, b: f64, panels: usize) -> (f64, f64) {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    let (mut s0, mut s1) = (0.0, 0.0);
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            let (u, v) = f(c + 0.5 * h * x);
            s0 += w * u;
            s1 += w * v;
        }
    }
    (0.5 * h * s0, 0.5 * h * s1)
}

fn integrate_pieces(
    cfg: &SpeciesLattice,
    schedule: &PulseSchedule,
    table: &WsPathTable,
    cuts: &[f64],
    t0: f64,
    t1: f64,
) -> PathIntegral {
    let rate = cfg.recoil_rate();
    let mut total = PathIntegral::default();
    for w in cuts.windows(2) {
        let (a, b) = (w[0].max(t0), w[1].min(t1));
        if b <= a {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let panels = if schedule.accel(mid) <= 0.0 {
            // load/unload: smooth in V0(t) but the sigmoid is steep
            let frac = (b - a) / schedule.tau_load.max(f64::MIN_POSITIVE);
            ((64.0 * frac).ceil() as usize).max(2)
        } else {
            2
        };
        let (g, e) = gauss_pair(|t| table.instant(schedule, t), a, b, panels);
        total = total + PathIntegral { decay: g * rate, phase: e * rate };
    }
    total
}

/// Path integrals over `[t0, t1]` (seconds) of a schedule.
pub fn integrate_window(
    cfg: &SpeciesLattice,
    schedule: &PulseSchedule,
    table: &WsPathTable,
    t0: f64,
    t1: f64,
) -> Result<PathIntegral> {
    table.check(schedule)?;
    if !(t1 >= t0) {
        return Err(invalid("window", format!("end {t1} precedes start {t0}")));
    }
    let cuts = breakpoints(schedule, table);
    Ok(integrate_pieces(cfg, schedule, table, &cuts, t0, t1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSample {
    /// s
    pub time: f64,
    pub depth: f64,
    pub accel: f64,
    pub linewidth: f64,
    pub energy: f64,
    pub survival: f64,
    /// rad, unwrapped
    pub phase: f64,
}

#[derive(Debug, Clone)]
pub struct AdiabaticResult {
    pub survival: f64,
    pub loss: f64,
    /// Accumulated `int E_00 dt / hbar` (rad).
    pub phase: f64,
    pub decay: f64,
    pub trace: Vec<EvolutionSample>,
    pub loading: Option<LoadingCoefficients>,
}

/// Number of trace samples recorded by [`adiabatic_evolution`].
pub const TRACE_SAMPLES: usize = 401;

/// Survival `exp(-int Gamma_0 dt/hbar)` and phase `int E_00 dt/hbar` along the schedule.
pub fn adiabatic_evolution(
    cfg: &SpeciesLattice,
    schedule: &PulseSchedule,
    table: &WsPathTable,
    distribution: Option<&MomentumDistribution>,
) -> Result<AdiabaticResult> {
    table.check(schedule)?;
    let cuts = breakpoints(schedule, table);
    let end = schedule.duration();
    let times: Vec<f64> = (0..TRACE_SAMPLES).map(|i| end * i as f64 / (TRACE_SAMPLES - 1) as f64).collect();
    let mut acc = PathIntegral::default();
    let mut trace = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            acc = acc + integrate_pieces(cfg, schedule, table, &cuts, times[i - 1], t);
        }
        let (g, e) = table.instant(schedule, t);
        trace.push(EvolutionSample {
            time: t,
            depth: schedule.depth(t),
            accel: schedule.accel(t),
            linewidth: g,
            energy: e,
            survival: (-acc.decay).exp(),
            phase: acc.phase,
        });
    }
    let loading = distribution.map(|d| loading_coefficients(cfg, d, schedule)).transpose()?;
    Ok(AdiabaticResult {
        survival: (-acc.decay).exp(),
        loss: -(-acc.decay).exp_m1(),
        phase: acc.phase,
        decay: acc.decay,
        trace,
        loading,
    })
}

/// Tunneling loss `1 - P` of an `n`-oscillation pulse at the table's depth.
/// The load and unload ramps carry no tilt and are skipped.
pub fn pulse_loss(cfg: &SpeciesLattice, table: &WsPathTable, n: f64, accel: f64, tau_ramp: f64) -> Result<f64> {
    if n == 0.0 {
        return Ok(0.0);
    }
    let schedule = PulseSchedule::build(cfg, n, table.depth(), accel, 0.0, tau_ramp)?;
    let p = integrate_window(cfg, &schedule, table, schedule.accel_start(), schedule.accel_end())?;
    Ok(-(-p.decay).exp_m1())
}

/// Loss `1 - exp(-int Gamma_B dt/hbar)` predicted by the Landau-Zener rate over the
/// acceleration window of an `n`-oscillation pulse at constant depth.
pub fn lz_pulse_loss(cfg: &SpeciesLattice, depth: f64, n: f64, accel: f64, tau_ramp: f64) -> Result<f64> {
    if n == 0.0 {
        return Ok(0.0);
    }
    let schedule = PulseSchedule::build(cfg, n, depth, accel, 0.0, tau_ramp)?;
    let gap = edge_gap(depth)?;
    let rate = |t: f64| -> f64 {
        let a = schedule.accel(t);
        if a <= 0.0 {
            return 0.0;
        }
        let p = lz_probability_for_tilt(gap, cfg.site_tilt(a));
        -cfg.site_tilt(a) / (2.0 * PI) * (-p).ln_1p()
    };
    let (t0, t1) = (schedule.accel_start(), schedule.accel_end());
    let tr = schedule.tau_ramp;
    let plateau = rate(0.5 * (t0 + t1)) * (t1 - t0 - 2.0 * tr);
    let ramps = if tr > 0.0 {
        gauss_legendre(rate, t0, t0 + tr, 64) + gauss_legendre(rate, t1 - tr, t1, 64)
    } else {
        0.0
    };
    let decay = (plateau + ramps) * cfg.recoil_rate();
    if decay.is_infinite() {
        return Ok(1.0);
    }
    Ok(-(-decay).exp_m1())
}

/// Phase noise from relative depth fluctuations: `dphi = sensitivity * N * dV/V0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub delta_phi: f64,
    pub oscillations: f64,
    pub dv_over_v: f64,
    /// `2 pi |dE_00/dV0| V0 / (d m a_L)`.
    pub sensitivity: f64,
    /// `dE_00/dV0` (dimensionless).
    pub derivative: f64,
}

/// `(sensitivity, dE_00/dV0)` at one operating point.
pub fn depth_sensitivity(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    settings: &FloquetSettings,
) -> Result<(f64, f64)> {
    if !(accel > 0.0) {
        return Err(Error::Domain(format!("sensitivity needs a_L > 0, got {accel}")));
    }
    let derivative = d_e00_d_depth(cfg, depth, accel, None, settings)?;
    let tilt = cfg.site_tilt(accel);
    Ok((2.0 * PI * derivative.abs() * depth / tilt, derivative))
}

pub fn phase_uncertainty(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    n: f64,
    dv_over_v: f64,
    settings: &FloquetSettings,
) -> Result<NoiseBudget> {
    if !(n >= 0.0 && dv_over_v >= 0.0) {
        return Err(invalid("N, dV/V0", "must be >= 0"));
    }
    let (sensitivity, derivative) = depth_sensitivity(cfg, depth, accel, settings)?;
    Ok(NoiseBudget { delta_phi: sensitivity * n * dv_over_v, oscillations: n, dv_over_v, sensitivity, derivative })
}

/// Relative depth stability needed to keep the phase noise at `delta_phi`.
pub fn required_stability(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    n: f64,
    delta_phi: f64,
    settings: &FloquetSettings,
) -> Result<NoiseBudget> {
    if !(n > 0.0 && delta_phi >= 0.0) {
        return Err(invalid("N, dphi", "need N > 0 and dphi >= 0"));
    }
    let (sensitivity, derivative) = depth_sensitivity(cfg, depth, accel, settings)?;
    Ok(NoiseBudget { delta_phi, oscillations: n, dv_over_v: delta_phi / (sensitivity * n), sensitivity, derivative })
}

/// Two clouds separated by `z` in a Gaussian beam of waist `w0` whose axis tilts by `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorelGeometry {
    pub separation: f64,
    pub waist: f64,
}

impl MorelGeometry {
    pub fn new(separation: f64, waist: f64) -> Result<Self> {
        if !(separation > 0.0 && waist > 0.0) {
            return Err(invalid("z, w0", "must be > 0"));
        }
        Ok(MorelGeometry { separation, waist })
    }

    /// Geometry with `z/w0` chosen so that `dv_over_v` corresponds to `tilt`.
    pub fn calibrated(dv_over_v: f64, tilt: f64, waist: f64) -> Result<Self> {
        Self::new(waist * (2.0 * dv_over_v).sqrt() / tilt, waist)
    }

    pub fn ratio(&self) -> f64 {
        self.separation / self.waist
    }

    /// `dV/V0 = theta^2 z^2 / (2 w0^2)`.
    pub fn depth_fluctuation(&self, tilt: f64) -> f64 {
        0.5 * (tilt * self.ratio()).powi(2)
    }

    /// `theta = (w0/z) sqrt(2 dV/V0)`.
    pub fn tilt_bound(&self, dv_over_v: f64) -> f64 {
        (2.0 * dv_over_v).sqrt() / self.ratio()
    }
}

/// Lattice held against gravity in a cavity whose axis wobbles by `tilt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PandaCase {
    pub depth: f64,
    /// m/s^2
    pub accel: f64,
    /// s
    pub hold_time: f64,
    /// rad
    pub tilt: f64,
    pub z_over_w0: f64,
}

impl Default for PandaCase {
    fn default() -> Self {
        PandaCase { depth: 7.0, accel: 9.8, hold_time: 60.0, tilt: 300e-6, z_over_w0: PANDA_Z_OVER_W0 }
    }
}

/// Assumed cloud offset over cavity waist for the held-lattice case.
pub const PANDA_Z_OVER_W0: f64 = 2.2e-3;
/// Oscillation count reported for the one-minute hold.
pub const PANDA_OSCILLATIONS: f64 = 92435.0;

/// `dV/V0 = theta z/w0`, `N = hold/T_B`, then the noise budget at `(depth, g)`.
pub fn case_panda(cfg: &SpeciesLattice, case: &PandaCase, settings: &FloquetSettings) -> Result<NoiseBudget> {
    if !(case.tilt >= 0.0 && case.z_over_w0 > 0.0) {
        return Err(invalid("tilt, z/w0", "need tilt >= 0 and z/w0 > 0"));
    }
    let n = cfg.oscillation_count(case.accel, case.hold_time)?;
    phase_uncertainty(cfg, case.depth, case.accel, n, case.tilt * case.z_over_w0, settings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpontaneousEmission {
    /// Scattering rate (1/s).
    pub rate: f64,
    pub loss: f64,
}

/// Scattering in a blue-detuned lattice, harmonic estimate `<V> = sqrt(V0 E_r)/2`:
/// `hbar Gamma_sp = (2 w0^3 / 3 pi c^2) sqrt(V0^3 E_r) / (2 I0)`.
pub fn spontaneous_emission(
    cfg: &SpeciesLattice,
    laser: &LaserSystem,
    depth: f64,
    accel_time: f64,
) -> Result<SpontaneousEmission> {
    let intensity = laser.intensity();
    if !(intensity > 0.0 && intensity.is_finite()) {
        return Err(invalid("laser", format!("intensity must be > 0, got {intensity}")));
    }
    if !(depth >= 0.0 && accel_time >= 0.0) {
        return Err(invalid("V0, T", "must be >= 0"));
    }
    let w0 = cfg.resonance_frequency;
    let v0 = cfg.energy_to_joule(depth);
    let er = cfg.recoil_energy();
    let hbar_gamma = 2.0 * w0.powi(3) / (3.0 * PI * SPEED_OF_LIGHT.powi(2)) * (v0.powi(3) * er).sqrt() / (2.0 * intensity);
    let rate = hbar_gamma / HBAR;
    Ok(SpontaneousEmission { rate, loss: -(-rate * accel_time).exp_m1() })
}

/// `E_{ladder,0}(V0, a_L)`; the band average when `a_L = 0`.
pub fn ladder_energy(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    ladder: usize,
    settings: &FloquetSettings,
) -> Result<f64> {
    if accel == 0.0 {
        return crate::blochband::band_average(depth, ladder);
    }
    let s = FloquetSettings { max_ladder: settings.max_ladder.max(ladder), ..*settings };
    Ok(ws_levels(cfg, depth, accel, &s)?.levels[ladder].energy)
}

/// Depth in `[lo, hi]` maximizing `E_{ladder,0}`, by golden section to `0.01 E_r`.
pub fn magic_depth(
    cfg: &SpeciesLattice,
    ladder: usize,
    accel: f64,
    bracket: (f64, f64),
    settings: &FloquetSettings,
) -> Result<f64> {
    if ladder == 0 {
        return Err(invalid("ladder", "the ground ladder has no interior maximum"));
    }
    if !(accel >= 0.0) {
        return Err(invalid("a_L", format!("must be >= 0, got {accel}")));
    }
    // the tilted lattice must keep its minima: V0 > F
    let lo = bracket.0.max(1.05 * cfg.force(accel));
    let hi = bracket.1;
    if !(hi > lo) {
        return Err(Error::NoInteriorExtremum { lo, hi });
    }
    let best = golden_max(|v| ladder_energy(cfg, v, accel, ladder, settings), lo, hi, 0.01)?;
    let margin = 0.02 * (hi - lo);
    if best - lo < margin || hi - best < margin {
        return Err(Error::NoInteriorExtremum { lo, hi });
    }
    Ok(best)
}
