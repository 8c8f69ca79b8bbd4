//! Bloch bands of the untilted lattice, the Landau-Zener baseline and the
//! adiabatic Bloch phase.
//!
//! Energies are in `E_r` with the mean light shift `V0/2` removed, so the
//! plane-wave Hamiltonian at quasimomentum `kappa` (units of `k_L`) is
//! tridiagonal with diagonal `(2n + kappa)^2` and coupling `V0/4`.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::numerics::{gauss_legendre, tridiag_lowest_eigenvalues};
use crate::physconfig::SpeciesLattice;
use crate::pulses::PulseSchedule;

/// Default plane-wave cutoff: momenta `2n`, `|n| <= 32`.
pub const DEFAULT_TRUNCATION: usize = 32;
const TRUNCATION_CAP: usize = 1024;
const CONVERGENCE_TOL: f64 = 1e-10;
/// Gauss-Legendre panels on half the Brillouin zone.
const BZ_PANELS: usize = 64;

/// Folds a quasimomentum (units of `k_L`) into `[-1, 1)`.
pub fn fold_quasimomentum(kappa: f64) -> f64 {
    (kappa + 1.0).rem_euclid(2.0) - 1.0
}

/// Lowest `n_bands` band energies at fixed cutoff, no convergence check.
pub fn bands_at_cutoff(depth: f64, kappa: f64, n_bands: usize, n_trunc: usize) -> Vec<f64> {
    let kappa = fold_quasimomentum(kappa);
    let n = n_trunc as i64;
    let diag: Vec<f64> = (-n..=n).map(|j| (2.0 * j as f64 + kappa).powi(2)).collect();
    tridiag_lowest_eigenvalues(&diag, depth / 4.0, n_bands)
}

/// Lowest `n_bands` band energies at `kappa`, ascending, with the cutoff
/// doubled until the bands move by less than `1e-10 E_r`.
pub fn bloch_spectrum(depth: f64, kappa: f64, n_bands: usize, n_trunc: usize) -> Result<Vec<f64>> {
    if !(depth >= 0.0 && depth.is_finite()) {
        return Err(invalid("V0", format!("must be >= 0, got {depth}")));
    }
    if n_bands == 0 {
        return Err(invalid("n_bands", "need at least one band"));
    }
    if n_trunc < n_bands + 8 {
        return Err(invalid("n_trunc", format!("{n_trunc} < n_bands + 8 = {}", n_bands + 8)));
    }
    let mut cut = n_trunc;
    let mut current = bands_at_cutoff(depth, kappa, n_bands, cut);
    loop {
        let refined = bands_at_cutoff(depth, kappa, n_bands, 2 * cut);
        let drift = current.iter().zip(&refined).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift < CONVERGENCE_TOL {
            return Ok(refined);
        }
        cut *= 2;
        if cut >= TRUNCATION_CAP {
            return Err(Error::Convergence { what: "Bloch spectrum", residual: drift });
        }
        current = refined;
    }
}

/// Smallest cutoff `>= n_bands + 8` that is certified at the zone centre and edge.
pub(crate) fn certified_cutoff(depth: f64, n_bands: usize) -> Result<usize> {
    let mut cut = DEFAULT_TRUNCATION.max(n_bands + 8);
    loop {
        let drift = [0.0, 1.0]
            .iter()
            .map(|&k| {
                let a = bands_at_cutoff(depth, k, n_bands, cut);
                let b = bands_at_cutoff(depth, k, n_bands, 2 * cut);
                a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if drift < CONVERGENCE_TOL {
            return Ok(cut);
        }
        cut *= 2;
        if cut >= TRUNCATION_CAP {
            return Err(Error::Convergence { what: "Bloch spectrum", residual: drift });
        }
    }
}

/// Band-averaged energy of band `band` over the first Brillouin zone.
///
/// Uses parity to integrate over `[0, 1]` with composite Gauss-Legendre, which
/// stays exact for the folded free parabola where a periodic trapezoid rule
/// would only be second order.
pub fn band_average(depth: f64, band: usize) -> Result<f64> {
    let cut = certified_cutoff(depth, band + 1)?;
    Ok(gauss_legendre(|k| bands_at_cutoff(depth, k, band + 1, cut)[band], 0.0, 1.0, BZ_PANELS))
}

/// Gap between bands 0 and 1 at the zone edge.
pub fn edge_gap(depth: f64) -> Result<f64> {
    let e = bloch_spectrum(depth, 1.0, 2, DEFAULT_TRUNCATION)?;
    Ok(e[1] - e[0])
}

/// Band structure sampled on a uniform quasimomentum grid.
#[derive(Debug, Clone)]
pub struct BlochSpectrum {
    pub depth: f64,
    /// Quasimomenta in units of `k_L`, spanning `[-1, 1]`.
    pub kappa: Vec<f64>,
    /// `energies[alpha][i]` at `kappa[i]`.
    pub energies: Vec<Vec<f64>>,
    /// Band averages `<E_alpha>`.
    pub averages: Vec<f64>,
}

impl BlochSpectrum {
    pub fn compute(depth: f64, n_bands: usize, n_kappa: usize) -> Result<Self> {
        let n_kappa = n_kappa.max(2);
        let cut = certified_cutoff(depth, n_bands)?;
        let kappa: Vec<f64> = (0..n_kappa).map(|i| -1.0 + 2.0 * i as f64 / (n_kappa - 1) as f64).collect();
        let mut energies = vec![Vec::with_capacity(n_kappa); n_bands];
        for &k in &kappa {
            // the grid endpoint kappa = 1 folds to -1; both are equivalent
            for (band, e) in bands_at_cutoff(depth, k, n_bands, cut).into_iter().enumerate() {
                energies[band].push(e);
            }
        }
        let averages = (0..n_bands).map(|b| band_average(depth, b)).collect::<Result<Vec<_>>>()?;
        Ok(BlochSpectrum { depth, kappa, energies, averages })
    }
}

/// Landau-Zener probability for a gap `gap` (E_r) traversed with site tilt `tilt` = `d m a_L` (E_r).
pub fn lz_probability_for_tilt(gap: f64, tilt: f64) -> f64 {
    if tilt <= 0.0 {
        return if gap == 0.0 { 1.0 } else { 0.0 };
    }
    (-PI * PI * gap * gap / (8.0 * tilt)).exp()
}

pub fn landau_zener_probability(cfg: &SpeciesLattice, gap: f64, accel: f64) -> Result<f64> {
    if !(gap >= 0.0) {
        return Err(invalid("gap", format!("must be >= 0, got {gap}")));
    }
    if !(accel > 0.0) {
        return Err(Error::Domain(format!("Landau-Zener needs a_L > 0, got {accel}")));
    }
    Ok(lz_probability_for_tilt(gap, cfg.site_tilt(accel)))
}

/// Effective decay rate `-(d m a_L / 2 pi) ln(1 - P_LZ)` in `E_r`.
pub fn lz_effective_linewidth(cfg: &SpeciesLattice, gap: f64, accel: f64) -> Result<f64> {
    let p = landau_zener_probability(cfg, gap, accel)?;
    if p >= 1.0 {
        return Err(Error::InfiniteLinewidth);
    }
    Ok(-cfg.site_tilt(accel) / (2.0 * PI) * (-p).ln_1p())
}

/// Dynamical phase `int E_0(V0(t), kappa0 - p_L(t)) dt` (rad) of the lowest band along a schedule.
pub fn adiabatic_bloch_phase(cfg: &SpeciesLattice, schedule: &PulseSchedule, kappa0: f64) -> Result<f64> {
    let cut = certified_cutoff(schedule.depth_peak, 1)?;
    let rate = cfg.recoil_rate();
    let mut phase = 0.0;
    let bounds = schedule.boundaries();
    let period = cfg.bloch_period(schedule.accel_peak)?;
    for w in bounds.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        // enough panels to resolve every Bloch period within the segment
        let panels = ((t1 - t0) / period * 16.0).ceil().max(16.0) as usize;
        let integrand = |t: f64| {
            let kappa = kappa0 - schedule.momentum(t);
            bands_at_cutoff(schedule.depth(t), kappa, 1, cut)[0]
        };
        phase += gauss_legendre(integrand, t0, t1, panels) * rate;
    }
    Ok(phase)
}
