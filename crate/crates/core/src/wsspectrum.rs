//! Complex Wannier-Stark spectra from the one-period Floquet-Bloch operator.
//!
//! In recoil units with dimensionless force `F`, the reduced-frame generator
//! at `kappa = 0` couples momenta `2n` with diagonal `(2n - F t)^2` and
//! off-diagonal `V0/4`. One Bloch period `T_B = 2/F` later every momentum has
//! moved down by two units, so the Floquet operator is that product followed
//! by the shift `n -> n - 1`. The shift carries a factor `-1`, which moves the
//! position origin from a lattice maximum of `V0 cos^2` to a minimum and puts
//! the numeric ladders on the same footing as the band-average estimate.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blochband::band_average;
use crate::error::{invalid, Error, Result};
use crate::numerics::{hungarian, polyfit};
use crate::physconfig::SpeciesLattice;

/// Numerical settings of the Floquet-Bloch construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloquetSettings {
    /// Momentum cutoff: states `2n`, `|n| <= n_trunc`.
    pub n_trunc: usize,
    /// Time steps per Bloch period.
    pub steps: usize,
    /// Linewidths below this are treated as numerically zero (E_r).
    pub precision_floor: f64,
    /// Highest ladder index reported.
    pub max_ladder: usize,
    /// Below this acceleration (m/s^2) the approximate formula replaces diagonalization.
    pub min_accel: f64,
    pub propagator: Propagator,
}

/// How the product of short-time propagators is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Propagator {
    /// Fourth-order composition of kinetic/coupling splits with exactly
    /// integrated kinetic phases and a banded coupling exponential.
    Split4,
    /// Midpoint product with an exact dense exponential per step.
    Exact,
}

impl Default for FloquetSettings {
    fn default() -> Self {
        FloquetSettings {
            n_trunc: 16,
            steps: 512,
            precision_floor: 1e-12,
            max_ladder: 3,
            min_accel: 20.0,
            propagator: Propagator::Split4,
        }
    }
}

impl FloquetSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_trunc < 16 {
            return Err(invalid("n_trunc", format!("must be >= 16, got {}", self.n_trunc)));
        }
        if self.steps < 256 {
            return Err(invalid("steps", format!("must be >= 256, got {}", self.steps)));
        }
        if !(self.precision_floor > 0.0) {
            return Err(invalid("precision_floor", "must be positive"));
        }
        if 2 * self.max_ladder + 1 > 2 * self.n_trunc {
            return Err(invalid("max_ladder", "exceeds the number of basis states"));
        }
        Ok(())
    }

    pub fn doubled(&self) -> Self {
        FloquetSettings { n_trunc: 2 * self.n_trunc, steps: 2 * self.steps, ..*self }
    }
}

/// Exact phase `int_{t0}^{t1} (2n - F t)^2 dt`.
fn kinetic_phase(n: f64, force: f64, t0: f64, t1: f64) -> f64 {
    let g = |t: f64| -(2.0 * n - force * t).powi(3) / (3.0 * force);
    g(t1) - g(t0)
}

/// Dense exponential `exp(-i H h)` of a real symmetric matrix.
fn symmetric_expm(h: DMatrix<f64>, step: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(h);
    let q = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let mut qd = q.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let z = Complex64::from_polar(1.0, -l * step);
        for r in 0..qd.nrows() {
            qd[(r, j)] *= z;
        }
    }
    let mut u = qd * q.transpose();
    // Newton-Schulz polar steps remove the residual non-unitarity of the
    // eigendecomposition, which would otherwise accumulate coherently over
    // thousands of steps.
    let eye = DMatrix::<Complex64>::identity(u.nrows(), u.ncols());
    for _ in 0..2 {
        let gram = u.adjoint() * &u;
        u = &u * (eye.scale(3.0) - gram) * Complex64::new(0.5, 0.0);
    }
    u
}

fn coupling_matrix(dim: usize, coupling: f64) -> DMatrix<f64> {
    let mut c = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim - 1 {
        c[(i, i + 1)] = coupling;
        c[(i + 1, i)] = coupling;
    }
    c
}

/// Banded complex matrix stored row by row.
struct BandMatrix {
    dim: usize,
    half_width: usize,
    rows: Vec<Complex64>,
}

impl BandMatrix {
    fn from_dense(m: &DMatrix<Complex64>, drop_below: f64) -> Self {
        let dim = m.nrows();
        let mut half_width = 0;
        for r in 0..dim {
            for c in 0..dim {
                if m[(r, c)].norm() > drop_below {
                    half_width = half_width.max(r.abs_diff(c));
                }
            }
        }
        let w = 2 * half_width + 1;
        let mut rows = vec![Complex64::new(0.0, 0.0); dim * w];
        for r in 0..dim {
            let lo = r.saturating_sub(half_width);
            let hi = (r + half_width).min(dim - 1);
            for c in lo..=hi {
                rows[r * w + c + half_width - r] = m[(r, c)];
            }
        }
        BandMatrix { dim, half_width, rows }
    }

    /// `col <- B col` for one column, using `tmp` as scratch.
    fn apply(&self, col: &mut [Complex64], tmp: &mut [Complex64]) {
        let n = self.dim;
        let bw = self.half_width;
        let w = 2 * bw + 1;
        for r in 0..n {
            let lo = r.saturating_sub(bw);
            let hi = (r + bw).min(n - 1);
            let row = &self.rows[r * w + lo + bw - r..r * w + hi + bw - r + 1];
            let mut s = Complex64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(&col[lo..=hi]) {
                s += a * b;
            }
            tmp[r] = s;
        }
        col.copy_from_slice(&tmp[..n]);
    }
}

/// Floquet-Bloch operator for depth `depth` (E_r) and dimensionless force `force`.
pub fn floquet_matrix_for_force(depth: f64, force: f64, settings: &FloquetSettings) -> Result<DMatrix<Complex64>> {
    settings.validate()?;
    if !(force > 0.0 && force.is_finite()) {
        return Err(Error::Domain(format!("Floquet operator needs a positive force, got {force}")));
    }
    if !(depth >= 0.0 && depth.is_finite()) {
        return Err(invalid("V0", format!("must be >= 0, got {depth}")));
    }
    let product = match settings.propagator {
        Propagator::Split4 => split_product(depth, force, settings),
        Propagator::Exact => exact_product(depth, force, settings),
    };
    Ok(shift(&product))
}

/// Floquet-Bloch operator at acceleration `accel` (m/s^2).
pub fn floquet_bloch_matrix(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    settings: &FloquetSettings,
) -> Result<DMatrix<Complex64>> {
    if !(accel > 0.0) {
        return Err(Error::Domain(format!("Floquet operator needs a_L > 0, got {accel}")));
    }
    floquet_matrix_for_force(depth, cfg.force(accel), settings)
}

/// Applies the momentum shift `n -> n - 1` with the minimum-centred sign.
fn shift(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let dim = m.nrows();
    DMatrix::from_fn(dim, dim, |r, c| if r + 1 < dim { -m[(r + 1, c)] } else { Complex64::new(0.0, 0.0) })
}

fn split_product(depth: f64, force: f64, settings: &FloquetSettings) -> DMatrix<Complex64> {
    let nt = settings.n_trunc as i64;
    let dim = (2 * nt + 1) as usize;
    let dt = 2.0 / force / settings.steps as f64;
    let cbrt2 = 2f64.powf(1.0 / 3.0);
    let w_outer = 1.0 / (2.0 - cbrt2);
    let w_inner = -cbrt2 / (2.0 - cbrt2);
    let weights = [w_outer, w_inner, w_outer];
    let coupling = coupling_matrix(dim, depth / 4.0);
    let outer = BandMatrix::from_dense(&symmetric_expm(coupling.clone(), w_outer * dt), 1e-17);
    let inner = BandMatrix::from_dense(&symmetric_expm(coupling, w_inner * dt), 1e-17);
    let bands = [&outer, &inner, &outer];

    // The kinetic flows between coupling kicks merge into one diagonal phase;
    // the kick times are the same for every step up to a shift by dt.
    let mut kick_offsets = Vec::with_capacity(3);
    let mut t = 0.0;
    for w in weights {
        kick_offsets.push(t + w * dt / 2.0);
        t += w * dt;
    }
    let ns: Vec<f64> = (-nt..=nt).map(|n| n as f64).collect();
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        data[i * dim + i] = Complex64::new(1.0, 0.0);
    }
    let mut phases = vec![Complex64::new(0.0, 0.0); dim];
    let mut tmp = vec![Complex64::new(0.0, 0.0); dim];
    let mut last = 0.0;
    let apply_phase = |data: &mut [Complex64], phases: &mut [Complex64], t0: f64, t1: f64| {
        for (p, &n) in phases.iter_mut().zip(&ns) {
            *p = Complex64::from_polar(1.0, -kinetic_phase(n, force, t0, t1));
        }
        for col in data.chunks_mut(dim) {
            for (x, p) in col.iter_mut().zip(phases.iter()) {
                *x *= p;
            }
        }
    };
    for j in 0..settings.steps {
        let base = j as f64 * dt;
        for (k, band) in bands.iter().enumerate() {
            let kick = base + kick_offsets[k];
            apply_phase(&mut data, &mut phases, last, kick);
            last = kick;
            for col in data.chunks_mut(dim) {
                band.apply(col, &mut tmp);
            }
        }
    }
    apply_phase(&mut data, &mut phases, last, 2.0 / force);
    DMatrix::from_vec(dim, dim, data)
}

fn exact_product(depth: f64, force: f64, settings: &FloquetSettings) -> DMatrix<Complex64> {
    let nt = settings.n_trunc as i64;
    let dim = (2 * nt + 1) as usize;
    let dt = 2.0 / force / settings.steps as f64;
    let mut m = DMatrix::<Complex64>::identity(dim, dim);
    for j in 0..settings.steps {
        let tj = (j as f64 + 0.5) * dt;
        let mut h = coupling_matrix(dim, depth / 4.0);
        for i in 0..dim {
            h[(i, i)] = (2.0 * (i as i64 - nt) as f64 - force * tj).powi(2);
        }
        m = symmetric_expm(h, dt) * m;
    }
    m
}

/// One complex quasi-energy `E - i Gamma/2` with `E` folded into `[0, d m a_L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexLevel {
    pub energy: f64,
    pub linewidth: f64,
}

/// Linewidths in `[-GAMMA_CLAMP, 0)` are roundoff and clamp to zero.
pub const GAMMA_CLAMP: f64 = 1e-12;

/// Quasi-energies of a Floquet matrix at dimensionless force `force` (`T_B = 2/F`).
pub fn ws_eigensystem(matrix: &DMatrix<Complex64>, force: f64) -> Result<Vec<ComplexLevel>> {
    if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Domain("Floquet matrix has non-finite entries".into()));
    }
    let period = 2.0 / force;
    let tilt = PI * force;
    let eig = matrix
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| Error::Domain("complex Schur decomposition failed".into()))?;
    let mut out = Vec::with_capacity(eig.len());
    for lambda in eig.iter() {
        let modulus = lambda.norm();
        if modulus > 1.0 + 1e-10 {
            return Err(Error::ContractionViolation { modulus });
        }
        if modulus <= f64::MIN_POSITIVE {
            // direction removed by the truncated shift
            continue;
        }
        let mut gamma = -2.0 / period * modulus.ln();
        if gamma < 0.0 {
            if gamma < -GAMMA_CLAMP {
                return Err(Error::NegativeLinewidth { gamma });
            }
            gamma = 0.0;
        }
        let energy = (-lambda.arg() / period).rem_euclid(tilt);
        out.push(ComplexLevel { energy, linewidth: gamma });
    }
    Ok(out)
}

/// Tilt correction `(V0/2) sin^2(asin r) - (F/2) asin r` with `r = F/V0`.
pub fn tilt_correction(depth: f64, force: f64) -> Result<f64> {
    let r = force / depth;
    if !(r.abs() <= 1.0) {
        return Err(Error::Domain(format!(
            "lattice of depth {depth} E_r cannot hold against force {force} (ratio {r})"
        )));
    }
    let s = r.asin();
    Ok(0.5 * depth * s.sin().powi(2) - 0.5 * force * s)
}

/// Approximate real energy `<E_alpha> + E_dx + l d m a_L` (E_r).
pub fn approx_ws_energy(cfg: &SpeciesLattice, depth: f64, accel: f64, ladder: usize, site: i64) -> Result<f64> {
    let force = cfg.force(accel);
    Ok(band_average(depth, ladder)? + tilt_correction(depth, force)? + site as f64 * PI * force)
}

/// Signed distance of `x` to `y` on a circle of circumference `period`, in `[-period/2, period/2)`.
fn circular_offset(x: f64, y: f64, period: f64) -> f64 {
    (x - y + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// Representative of `folded` (mod `period`) nearest to `anchor`.
pub fn unfold_near(folded: f64, anchor: f64, period: f64) -> f64 {
    anchor + circular_offset(folded, anchor, period)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Approx,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::Approx => "approx",
        }
    }
}

/// How ladder indices were assigned at one acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SortRegime {
    Linewidth,
    EnergyMatch,
    Approximate,
}

/// One Wannier-Stark level of ladder `ladder` at site 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsLevel {
    pub ladder: usize,
    /// Site-0 energy `E_{alpha,0}` (E_r), a definite representative.
    pub energy: f64,
    pub linewidth: f64,
    /// `d m a_L` (E_r).
    pub tilt: f64,
}

impl WsLevel {
    /// `E_{alpha,l} = E_{alpha,0} + l d m a_L`.
    pub fn site_energy(&self, site: i64) -> f64 {
        self.energy + site as f64 * self.tilt
    }

    /// Energy folded into `[0, d m a_L)`.
    pub fn folded(&self) -> f64 {
        self.energy.rem_euclid(self.tilt)
    }
}

/// Ladders `0..=max_ladder` at one acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortedLadders {
    pub accel: f64,
    pub levels: Vec<WsLevel>,
    pub provenance: Provenance,
    pub regime: SortRegime,
}

/// Approximate site-0 targets for ladders `0..=max_ladder`, if the tilt
/// correction is defined.
fn approx_targets(band_avgs: &[f64], depth: f64, force: f64) -> Option<Vec<f64>> {
    let dx = tilt_correction(depth, force).ok()?;
    Some(band_avgs.iter().map(|b| b + dx).collect())
}

pub(crate) fn band_averages(depth: f64, max_ladder: usize) -> Result<Vec<f64>> {
    (0..=max_ladder).map(|a| band_average(depth, a)).collect()
}

/// Assigns ladder indices to raw quasi-energies.
pub fn sort_ladders(
    levels: &[ComplexLevel],
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    settings: &FloquetSettings,
) -> Result<SortedLadders> {
    let avgs = band_averages(depth, settings.max_ladder)?;
    sort_with_averages(levels, &avgs, cfg.force(accel), accel, depth, settings, false)
}

fn sort_with_averages(
    levels: &[ComplexLevel],
    avgs: &[f64],
    force: f64,
    accel: f64,
    depth: f64,
    settings: &FloquetSettings,
    force_energy_match: bool,
) -> Result<SortedLadders> {
    let count = settings.max_ladder + 1;
    let tilt = PI * force;
    let targets = approx_targets(avgs, depth, force);
    if levels.len() < count {
        return Err(Error::Domain(format!("only {} quasi-energies for {count} ladders", levels.len())));
    }
    let mut by_width: Vec<ComplexLevel> = levels.to_vec();
    by_width.sort_by(|a, b| a.linewidth.total_cmp(&b.linewidth).then(a.energy.total_cmp(&b.energy)));
    by_width.truncate(count);

    // clusters of linewidths that the floor cannot tell apart
    let sep = 10.0 * settings.precision_floor;
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    if force_energy_match {
        clusters.push((0, count));
    } else {
        let mut start = 0;
        for i in 1..count {
            if by_width[i].linewidth - by_width[i - 1].linewidth > sep {
                clusters.push((start, i));
                start = i;
            }
        }
        clusters.push((start, count));
    }

    let mut assigned: Vec<Option<ComplexLevel>> = vec![None; count];
    let mut regime = SortRegime::Linewidth;
    for &(lo, hi) in &clusters {
        if hi - lo == 1 {
            assigned[lo] = Some(by_width[lo]);
            continue;
        }
        regime = SortRegime::EnergyMatch;
        let targets = targets.as_ref().ok_or_else(|| {
            Error::Domain(format!("degenerate linewidths at F = {force} but no approximate targets"))
        })?;
        let n = hi - lo;
        let mut cost = vec![0.0; n * n];
        for (r, lvl) in by_width[lo..hi].iter().enumerate() {
            for c in 0..n {
                cost[r * n + c] = circular_offset(lvl.energy, targets[lo + c], tilt).abs();
            }
        }
        let assign = hungarian(&cost, n);
        // two candidates indistinguishably close to one target
        for c in 0..n {
            let mut d: Vec<f64> = (0..n).map(|r| cost[r * n + c]).collect();
            d.sort_by(f64::total_cmp);
            if n > 1 && d[1] - d[0] < 1e-9 {
                let first = by_width[lo..hi][(0..n).find(|&r| cost[r * n + c] == d[0]).unwrap()].energy;
                let second = by_width[lo..hi][(0..n).rfind(|&r| cost[r * n + c] == d[1]).unwrap()].energy;
                return Err(Error::AmbiguousAssignment { target: targets[lo + c], first, second });
            }
        }
        for (r, &c) in assign.iter().enumerate() {
            assigned[lo + c] = Some(by_width[lo + r]);
        }
    }
    let levels = assigned
        .into_iter()
        .enumerate()
        .map(|(ladder, lvl)| {
            let lvl = lvl.expect("every ladder assigned");
            let energy = match &targets {
                Some(t) => unfold_near(lvl.energy, t[ladder], tilt),
                None => lvl.energy,
            };
            WsLevel { ladder, energy, linewidth: lvl.linewidth, tilt }
        })
        .collect();
    Ok(SortedLadders { accel, levels, provenance: Provenance::Exact, regime })
}

fn approximate_ladders(avgs: &[f64], depth: f64, force: f64, accel: f64) -> Result<SortedLadders> {
    let tilt = PI * force;
    let dx = tilt_correction(depth, force)?;
    let levels =
        avgs.iter().enumerate().map(|(ladder, b)| WsLevel { ladder, energy: b + dx, linewidth: 0.0, tilt }).collect();
    Ok(SortedLadders { accel, levels, provenance: Provenance::Approx, regime: SortRegime::Approximate })
}

/// Sorted ladders at one acceleration, diagonalizing unless below `min_accel`.
pub fn ws_levels(cfg: &SpeciesLattice, depth: f64, accel: f64, settings: &FloquetSettings) -> Result<SortedLadders> {
    let avgs = band_averages(depth, settings.max_ladder)?;
    levels_with_averages(&avgs, cfg, depth, accel, settings)
}

pub(crate) fn levels_with_averages(
    avgs: &[f64],
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    settings: &FloquetSettings,
) -> Result<SortedLadders> {
    let force = cfg.force(accel);
    if accel < settings.min_accel {
        return approximate_ladders(avgs, depth, force, accel);
    }
    let m = floquet_matrix_for_force(depth, force, settings)?;
    let raw = ws_eigensystem(&m, force)?;
    sort_with_averages(&raw, avgs, force, accel, depth, settings, false)
}

/// A sorting conflict the continuity check could not resolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortAnomaly {
    pub index: usize,
    pub accel: f64,
    pub by_linewidth: Vec<WsLevel>,
    pub by_energy: Option<Vec<WsLevel>>,
}

/// Ladders swept over a strictly increasing acceleration grid at fixed depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsTrace {
    pub depth: f64,
    pub points: Vec<SortedLadders>,
    pub anomalies: Vec<SortAnomaly>,
}

impl WsTrace {
    pub fn accels(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accel).collect()
    }

    pub fn linewidths(&self, ladder: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.levels[ladder].linewidth).collect()
    }

    /// Site-0 energies, continuous along the grid.
    pub fn energies(&self, ladder: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.levels[ladder].energy).collect()
    }

    pub fn tilts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.levels[0].tilt).collect()
    }

    pub fn max_ladder(&self) -> usize {
        self.points.first().map_or(0, |p| p.levels.len() - 1)
    }
}

/// Sweeps the sorted ladders over `grid` (m/s^2), in parallel over grid points.
pub fn ws_sweep(
    cfg: &SpeciesLattice,
    depth: f64,
    grid: &[f64],
    max_ladder: usize,
    settings: &FloquetSettings,
) -> Result<WsTrace> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("grid", "must be non-empty and strictly increasing"));
    }
    let settings = FloquetSettings { max_ladder, ..*settings };
    settings.validate()?;
    let avgs = band_averages(depth, max_ladder)?;
    let raw: Vec<Result<(Vec<ComplexLevel>, SortedLadders)>> = grid
        .par_iter()
        .map(|&a| {
            let force = cfg.force(a);
            if a < settings.min_accel {
                return Ok((Vec::new(), approximate_ladders(&avgs, depth, force, a)?));
            }
            let m = floquet_matrix_for_force(depth, force, &settings)?;
            let raw = ws_eigensystem(&m, force)?;
            let sorted = sort_with_averages(&raw, &avgs, force, a, depth, &settings, false)?;
            Ok((raw, sorted))
        })
        .collect();
    let mut raws = Vec::with_capacity(grid.len());
    let mut points = Vec::with_capacity(grid.len());
    for r in raw {
        let (a, b) = r?;
        raws.push(a);
        points.push(b);
    }
    let mut anomalies = Vec::new();
    continuity_pass(&mut points, &raws, &avgs, depth, cfg, &settings, &mut anomalies);
    Ok(WsTrace { depth, points, anomalies })
}

/// Makes energies continuous along the grid and vetoes label jumps.
fn continuity_pass(
    points: &mut [SortedLadders],
    raws: &[Vec<ComplexLevel>],
    avgs: &[f64],
    depth: f64,
    cfg: &SpeciesLattice,
    settings: &FloquetSettings,
    anomalies: &mut Vec<SortAnomaly>,
) {
    let count = settings.max_ladder + 1;
    for i in 1..points.len() {
        let tilt = points[i].levels[0].tilt;
        let predict = |ladder: usize, pts: &[SortedLadders]| -> (f64, f64) {
            let e1 = pts[i - 1].levels[ladder].energy;
            if i >= 2 {
                let e0 = pts[i - 2].levels[ladder].energy;
                let step = e1 - e0;
                (e1 + step, step.abs())
            } else {
                (e1, 0.0)
            }
        };
        // re-anchor on the previous point rather than the approximate targets
        for ladder in 0..count {
            let (p, _) = predict(ladder, points);
            let lvl = &mut points[i].levels[ladder];
            lvl.energy = unfold_near(lvl.energy, p, tilt);
        }
        if points[i].provenance == Provenance::Approx || i < 2 {
            continue;
        }
        let bound = |step: f64| (5.0 * step).max(0.05 * tilt);
        // only ladders below the lattice maxima are localized; the rest are
        // truncation-dependent continuum states whose labels carry no meaning
        let bound_ladders: Vec<usize> = (0..count).filter(|&l| avgs[l] < depth / 2.0).collect();
        let violated = bound_ladders.iter().any(|&l| {
            let (p, step) = predict(l, points);
            (points[i].levels[l].energy - p).abs() > bound(step)
        });
        if !violated {
            continue;
        }
        let force = cfg.force(points[i].accel);
        let alt = sort_with_averages(&raws[i], avgs, force, points[i].accel, depth, settings, true).ok();
        let alt = alt.map(|mut s| {
            for ladder in 0..count {
                let (p, _) = predict(ladder, points);
                s.levels[ladder].energy = unfold_near(s.levels[ladder].energy, p, tilt);
            }
            s
        });
        let alt_ok = alt.as_ref().is_some_and(|s| {
            bound_ladders.iter().all(|&l| {
                let (p, step) = predict(l, points);
                (s.levels[l].energy - p).abs() <= bound(step)
            })
        });
        if alt_ok {
            points[i] = alt.unwrap();
        } else {
            anomalies.push(SortAnomaly {
                index: i,
                accel: points[i].accel,
                by_linewidth: points[i].levels.clone(),
                by_energy: alt.map(|s| s.levels),
            });
        }
    }
}

/// A `Gamma_0` peak paired with the level crossing that explains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub accel: f64,
    pub index: usize,
    pub linewidth: f64,
    pub baseline: f64,
    /// Partner ladder and site offset `(alpha', l')`.
    pub partner: Option<(usize, i64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub resonances: Vec<Resonance>,
    /// Peaks without a matching crossing.
    pub unmatched: Vec<Resonance>,
}

/// A zero of `E_{alpha',l'} - E_{0,0}` between grid points `index` and `index + 1`,
/// or a near-touching local minimum of its modulus at `index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub accel: f64,
    pub index: usize,
    pub partner: (usize, i64),
    pub avoided: bool,
}

/// Local maxima of `values` exceeding `ratio` times the higher adjacent valley and `floor`.
pub fn find_peaks(values: &[f64], ratio: f64, floor: f64) -> Vec<(usize, f64)> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        // plateau-aware local maximum
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                let mut l = i;
                while l > 0 && values[l - 1] <= values[l] {
                    l -= 1;
                }
                let mut r = j;
                while r + 1 < n && values[r + 1] <= values[r] {
                    r += 1;
                }
                let baseline = values[l].max(values[r]);
                let peak = values[i];
                if peak > ratio * baseline && peak > floor {
                    out.push(((i + j) / 2, baseline));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Crossings of `E_00` with ladders `1..=max_partner` at site offsets `|l'| <= max_site`.
pub fn find_crossings(trace: &WsTrace, max_partner: usize, max_site: i64) -> Vec<Crossing> {
    let accel = trace.accels();
    let tilts = trace.tilts();
    let e0 = trace.energies(0);
    let mut out = Vec::new();
    for partner in 1..=max_partner.min(trace.max_ladder()) {
        let ep = trace.energies(partner);
        for site in -max_site..=max_site {
            let d: Vec<f64> = (0..accel.len()).map(|i| ep[i] + site as f64 * tilts[i] - e0[i]).collect();
            for i in 0..d.len().saturating_sub(1) {
                if d[i] == 0.0 || d[i].signum() != d[i + 1].signum() {
                    let s = d[i] / (d[i] - d[i + 1]);
                    out.push(Crossing {
                        accel: accel[i] + s * (accel[i + 1] - accel[i]),
                        index: i,
                        partner: (partner, site),
                        avoided: false,
                    });
                }
            }
            // avoided crossings: |D| dips to a small local minimum without a sign change
            for i in 1..d.len().saturating_sub(1) {
                let (a, b, c) = (d[i - 1].abs(), d[i].abs(), d[i + 1].abs());
                let same_sign = d[i - 1].signum() == d[i].signum() && d[i].signum() == d[i + 1].signum();
                if same_sign && b < a && b <= c && b < 0.02 * tilts[i] {
                    out.push(Crossing { accel: accel[i], index: i, partner: (partner, site), avoided: true });
                }
            }
        }
    }
    out.sort_by(|a, b| a.accel.total_cmp(&b.accel));
    out
}

/// Detects `Gamma_0` resonances and pairs each with a real-energy crossing within one grid step.
pub fn find_tunneling_resonances(trace: &WsTrace, noise_floor: f64) -> ResonanceReport {
    let accel = trace.accels();
    let gamma = trace.linewidths(0);
    let crossings = find_crossings(trace, 2, 2);
    let mut report = ResonanceReport::default();
    for (idx, baseline) in find_peaks(&gamma, 3.0, noise_floor) {
        let step = if idx + 1 < accel.len() { accel[idx + 1] - accel[idx] } else { accel[idx] - accel[idx - 1] };
        let step = step.max(if idx > 0 { accel[idx] - accel[idx - 1] } else { 0.0 });
        let best = crossings
            .iter()
            .filter(|c| (c.accel - accel[idx]).abs() <= step * (1.0 + 1e-9))
            .min_by(|a, b| (a.accel - accel[idx]).abs().total_cmp(&(b.accel - accel[idx]).abs()));
        let res = Resonance {
            accel: accel[idx],
            index: idx,
            linewidth: gamma[idx],
            baseline,
            partner: best.map(|c| c.partner),
        };
        if res.partner.is_some() {
            report.resonances.push(res);
        } else {
            report.unmatched.push(res);
        }
    }
    report
}

/// Crossing morphology of the non-Hermitian two-level model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingType {
    /// Real parts avoid, linewidths cross (`|V| > gamma`).
    TypeI,
    /// Real parts cross, linewidths avoid (`|V| < gamma`).
    TypeII,
}

/// Parameters of the two-level model fitted to a crossing window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingFit {
    pub kind: CrossingType,
    /// Acceleration of the bare crossing (m/s^2).
    pub centre: f64,
    /// Slope of the bare detuning (E_r per m/s^2).
    pub slope: f64,
    pub gamma: f64,
    /// `V^2 - gamma^2` (E_r^2).
    pub discriminant: f64,
    pub residual: f64,
}

/// Classifies from complex level pairs `(E_a - i G_a/2, E_b - i G_b/2)` sampled at `accel`.
pub fn classify_pairs(accel: &[f64], first: &[Complex64], second: &[Complex64]) -> Result<CrossingFit> {
    if accel.len() < 7 || first.len() != accel.len() || second.len() != accel.len() {
        return Err(Error::Classification(format!("need >= 7 window points, got {}", accel.len())));
    }
    // delta^2 = ((E_a - E_b)/2)^2 = (eps - i gamma)^2 + V^2 with eps = s (a - a0)
    let d2: Vec<Complex64> = first.iter().zip(second).map(|(a, b)| ((a - b) * 0.5).powi(2)).collect();
    let re: Vec<f64> = d2.iter().map(|z| z.re).collect();
    let im: Vec<f64> = d2.iter().map(|z| z.im).collect();
    let (cr, rr) = polyfit(accel, &re, 2)?;
    let (ci, ri) = polyfit(accel, &im, 2)?;
    let residual = rr.hypot(ri);
    let s2 = cr[2];
    if !(s2 > 0.0) {
        return Err(Error::Classification(format!("no real detuning curvature (s^2 = {s2:e}, residual {residual:e})")));
    }
    let slope = s2.sqrt();
    let centre = -cr[1] / (2.0 * s2);
    let gamma = (ci[1] / (2.0 * slope)).abs();
    let discriminant = cr[0] - s2 * centre * centre;
    let scale = re.iter().chain(&im).map(|v| v.abs()).fold(0.0, f64::max);
    if discriminant.abs() <= residual || discriminant.abs() < 1e-12 * scale {
        return Err(Error::Classification(format!(
            "V^2 - gamma^2 = {discriminant:e} indistinguishable from fit residual {residual:e}"
        )));
    }
    let kind = if discriminant > 0.0 { CrossingType::TypeI } else { CrossingType::TypeII };
    Ok(CrossingFit { kind, centre, slope, gamma, discriminant, residual })
}

/// Classifies the crossing of `E_00` with ladder `partner.0` at site `partner.1` near `accel_star`.
pub fn classify_crossing(trace: &WsTrace, accel_star: f64, partner: (usize, i64)) -> Result<CrossingFit> {
    let accel = trace.accels();
    let n = accel.len();
    if partner.0 == 0 || partner.0 > trace.max_ladder() {
        return Err(Error::Classification(format!("invalid partner ladder {}", partner.0)));
    }
    let centre = accel.partition_point(|&a| a < accel_star).min(n.saturating_sub(1));
    let half = 4usize;
    let lo = centre.saturating_sub(half);
    let hi = (centre + half + 1).min(n);
    if hi - lo < 7 {
        return Err(Error::Classification(format!("window around {accel_star} has only {} points", hi - lo)));
    }
    let window = &trace.points[lo..hi];
    let first: Vec<Complex64> = window
        .iter()
        .map(|p| Complex64::new(p.levels[0].energy, -p.levels[0].linewidth / 2.0))
        .collect();
    let second: Vec<Complex64> = window
        .iter()
        .map(|p| {
            let l = &p.levels[partner.0];
            Complex64::new(l.site_energy(partner.1), -l.linewidth / 2.0)
        })
        .collect();
    classify_pairs(&accel[lo..hi], &first, &second)
}

/// Eigenvalues `-i gamma +- sqrt((eps - i gamma)^2 + V^2)` of the two-level model.
pub fn two_level_model(detuning: f64, gamma: f64, coupling: f64) -> (Complex64, Complex64) {
    let i = Complex64::i();
    let root = ((detuning - i * gamma).powi(2) + coupling * coupling).sqrt();
    (-i * gamma + root, -i * gamma - root)
}

/// Two-level eigenvalues along a detuning sweep, branches tracked by continuity.
pub fn two_level_sweep(detunings: &[f64], gamma: f64, coupling: f64) -> Vec<(Complex64, Complex64)> {
    let mut out: Vec<(Complex64, Complex64)> = Vec::with_capacity(detunings.len());
    for &e in detunings {
        let (p, m) = two_level_model(e, gamma, coupling);
        let next = match out.last() {
            Some(&(lp, lm)) if (p - lp).norm() + (m - lm).norm() > (p - lm).norm() + (m - lp).norm() => (m, p),
            _ => (p, m),
        };
        out.push(next);
    }
    out
}

/// `E_00` at one point, unfolded near the approximate estimate (or the raw value below the floor).
fn ground_energy(cfg: &SpeciesLattice, depth: f64, accel: f64, settings: &FloquetSettings) -> Result<f64> {
    let s = FloquetSettings { max_ladder: settings.max_ladder.min(1), ..*settings };
    Ok(ws_levels(cfg, depth, accel, &s)?.levels[0].energy)
}

/// `dE_00/dV0` by central differences with a Richardson consistency check.
pub fn d_e00_d_depth(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    step: Option<f64>,
    settings: &FloquetSettings,
) -> Result<f64> {
    let h = step.unwrap_or(1e-3 * depth);
    if !(h > 0.0) || depth - h <= 0.0 {
        return Err(Error::StepSize(format!("step {h} invalid at V0 = {depth}")));
    }
    let centre = ground_energy(cfg, depth, accel, settings)?;
    let tilt = cfg.site_tilt(accel);
    let at = |v: f64| -> Result<f64> {
        let e = ground_energy(cfg, v, accel, settings)?;
        Ok(unfold_near(e, centre, tilt))
    };
    let coarse = (at(depth + h)? - at(depth - h)?) / (2.0 * h);
    let fine = (at(depth + h / 2.0)? - at(depth - h / 2.0)?) / h;
    let scale = fine.abs().max(1e-6);
    if (coarse - fine).abs() > 0.01 * scale {
        return Err(Error::StepSize(format!("Richardson mismatch: {coarse} vs {fine}")));
    }
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Drift between two settings on the longest-lived levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub settings: FloquetSettings,
    pub energy_drift: f64,
    pub linewidth_drift: f64,
}

/// Doubles `n_trunc` and `steps` until the lowest `levels` quasi-energies move by
/// less than `1e-8 E_r` and their linewidths (above the floor) by less than 5%.
pub fn certify_settings(
    cfg: &SpeciesLattice,
    depth: f64,
    accel: f64,
    levels: usize,
    settings: &FloquetSettings,
) -> Result<ConvergenceReport> {
    let force = cfg.force(accel);
    let tilt = PI * force;
    let lowest = |s: &FloquetSettings| -> Result<Vec<ComplexLevel>> {
        let m = floquet_matrix_for_force(depth, force, s)?;
        let mut v = ws_eigensystem(&m, force)?;
        v.sort_by(|a, b| a.linewidth.total_cmp(&b.linewidth));
        v.truncate(levels);
        Ok(v)
    };
    let mut current = *settings;
    let mut coarse = lowest(&current)?;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for _ in 0..3 {
        let next = current.doubled();
        let fine = lowest(&next)?;
        let mut e_drift: f64 = 0.0;
        let mut g_drift: f64 = 0.0;
        for a in &coarse {
            let b = fine
                .iter()
                .min_by(|x, y| {
                    circular_offset(x.energy, a.energy, tilt).abs().total_cmp(&circular_offset(y.energy, a.energy, tilt).abs())
                })
                .unwrap();
            e_drift = e_drift.max(circular_offset(a.energy, b.energy, tilt).abs());
            if a.linewidth.max(b.linewidth) > 10.0 * settings.precision_floor {
                g_drift = g_drift.max((a.linewidth - b.linewidth).abs() / a.linewidth.max(b.linewidth));
            }
        }
        last = (e_drift, g_drift);
        if e_drift < 1e-8 && g_drift < 0.05 {
            return Ok(ConvergenceReport { settings: current, energy_drift: e_drift, linewidth_drift: g_drift });
        }
        current = next;
        coarse = fine;
    }
    Err(Error::Convergence { what: "Floquet spectrum", residual: last.0.max(last.1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rb() -> SpeciesLattice {
        SpeciesLattice::rb87()
    }

    fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
        m.clone().singular_values().iter().fold(0.0, |a: f64, &b| a.max(b))
    }

    #[test]
    fn free_operator_is_pure_translation() {
        let f = rb().force(300.0);
        let m = floquet_matrix_for_force(0.0, f, &FloquetSettings::default()).unwrap();
        let dim = m.nrows();
        for r in 0..dim {
            for c in 0..dim {
                if c == r + 1 {
                    assert!((m[(r, c)].norm() - 1.0).abs() < 1e-12);
                } else {
                    assert!(m[(r, c)].norm() < 1e-12);
                }
            }
        }
        assert!(spectral_norm(&m) <= 1.0 + 1e-12);
    }

    #[test]
    fn operator_is_a_contraction() {
        let cfg = rb();
        for &(v, a) in &[(5.0, 50.0), (20.0, 393.5), (60.0, 1000.0)] {
            let m = floquet_bloch_matrix(&cfg, v, a, &FloquetSettings::default()).unwrap();
            let n = spectral_norm(&m);
            assert!(n <= 1.0 + 1e-12, "({v}, {a}): {:e}", n - 1.0);
        }
    }

    #[test]
    fn split_route_matches_exact_exponentials() {
        let cfg = rb();
        let fast = ws_levels(&cfg, 20.0, 393.5, &FloquetSettings::default()).unwrap();
        let exact = FloquetSettings { propagator: Propagator::Exact, steps: 2048, ..Default::default() };
        let slow = ws_levels(&cfg, 20.0, 393.5, &exact).unwrap();
        for l in 0..2 {
            assert!((fast.levels[l].energy - slow.levels[l].energy).abs() < 1e-6);
            assert_relative_eq!(fast.levels[l].linewidth, slow.levels[l].linewidth, max_relative = 1e-3);
        }
    }

    #[test]
    fn eigensystem_definitions() {
        let f = 0.8;
        let one = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        let l = ws_eigensystem(&one, f).unwrap();
        assert_eq!(l[0].energy, 0.0);
        assert_eq!(l[0].linewidth, 0.0);
        let decay = DMatrix::from_element(1, 1, Complex64::new((-1.0f64).exp(), 0.0));
        let l = ws_eigensystem(&decay, f).unwrap();
        // Gamma = 2 / T_B with T_B = 2 / F
        assert_relative_eq!(l[0].linewidth, f, max_relative = 1e-14);
        let grow = DMatrix::from_element(1, 1, Complex64::new(1.1, 0.0));
        assert!(matches!(ws_eigensystem(&grow, f), Err(Error::ContractionViolation { .. })));
        let tiny = DMatrix::from_element(1, 1, Complex64::new(1.0 + 1e-13, 0.0));
        assert_eq!(ws_eigensystem(&tiny, f).unwrap()[0].linewidth, 0.0);
        let bad = DMatrix::from_element(1, 1, Complex64::new(1.0 + 5e-11, 0.0));
        assert!(matches!(ws_eigensystem(&bad, f), Err(Error::NegativeLinewidth { .. })));
        // quarter turn clockwise -> E = (pi/2)/T_B
        let rot = DMatrix::from_element(1, 1, Complex64::new(0.0, -1.0));
        assert_relative_eq!(ws_eigensystem(&rot, f).unwrap()[0].energy, PI / 2.0 * f / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn approximate_energy_limits() {
        let cfg = rb();
        let avg = band_average(20.0, 0).unwrap();
        let e = approx_ws_energy(&cfg, 20.0, 1e-6, 0, 0).unwrap();
        assert!((e - avg).abs() < 1e-6);
        let e0 = approx_ws_energy(&cfg, 20.0, 150.0, 1, 0).unwrap();
        let e1 = approx_ws_energy(&cfg, 20.0, 150.0, 1, 1).unwrap();
        assert_relative_eq!(e1 - e0, cfg.site_tilt(150.0), max_relative = 1e-12);
        assert!(approx_ws_energy(&cfg, 5.0, 1000.0, 0, 0).is_err());
    }

    #[test]
    fn approximate_energy_tracks_exact_ground_level() {
        let cfg = rb();
        let exact = ws_levels(&cfg, 20.0, 100.0, &FloquetSettings::default()).unwrap();
        let approx = approx_ws_energy(&cfg, 20.0, 100.0, 0, 0).unwrap();
        assert!((exact.levels[0].energy - approx).abs() < 0.05);
    }

    #[test]
    fn linewidth_regime_orders_by_gamma() {
        let cfg = rb();
        let s = FloquetSettings { max_ladder: 1, ..Default::default() };
        let raw = [ComplexLevel { energy: 1.0, linewidth: 1e-3 }, ComplexLevel { energy: 2.0, linewidth: 1e-6 }];
        let sorted = sort_ladders(&raw, &cfg, 20.0, 300.0, &s).unwrap();
        assert_eq!(sorted.regime, SortRegime::Linewidth);
        assert_eq!(sorted.levels[0].linewidth, 1e-6);
        assert_eq!(sorted.levels[1].linewidth, 1e-3);
    }

    #[test]
    fn degenerate_floor_falls_back_to_energy_matching() {
        let cfg = rb();
        let s = FloquetSettings::default();
        let sorted = ws_levels(&cfg, 40.0, 80.0, &s).unwrap();
        assert_eq!(sorted.regime, SortRegime::EnergyMatch);
        for l in 0..2 {
            let target = approx_ws_energy(&cfg, 40.0, 80.0, l, 0).unwrap();
            assert!((sorted.levels[l].energy - target).abs() < 0.1, "ladder {l}");
        }
    }

    #[test]
    fn low_acceleration_uses_approximate_levels() {
        let cfg = rb();
        let sorted = ws_levels(&cfg, 20.0, 1.0, &FloquetSettings::default()).unwrap();
        assert_eq!(sorted.provenance, Provenance::Approx);
        assert!(sorted.levels.iter().all(|l| l.linewidth == 0.0));
    }

    #[test]
    fn ladder_hierarchy_spans_decades() {
        let cfg = rb();
        let sorted = ws_levels(&cfg, 20.0, 300.0, &FloquetSettings::default()).unwrap();
        let g: Vec<f64> = sorted.levels.iter().map(|l| l.linewidth).collect();
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((g[2] / g[0]).log10() >= 4.0);
        let l = sorted.levels[0];
        assert_relative_eq!(l.site_energy(3) - l.site_energy(2), cfg.site_tilt(300.0), max_relative = 1e-12);
    }

    #[test]
    fn two_level_closed_forms() {
        let (p, m) = two_level_model(0.0, 0.0, 1.5);
        assert_relative_eq!(p.re, 1.5);
        assert_relative_eq!(m.re, -1.5);
        // decoupled: bare levels eps - 2 i gamma and -eps
        let (p, m) = two_level_model(0.7, 0.2, 0.0);
        let mut bare = [p, m];
        bare.sort_by(|a, b| b.re.total_cmp(&a.re));
        assert!((bare[0] - Complex64::new(0.7, -0.4)).norm() < 1e-14);
        assert!((bare[1] - Complex64::new(-0.7, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn two_level_gap_minimum() {
        let gamma = 0.1;
        let v = 2.0 * gamma;
        let eps: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.005).collect();
        let sweep = two_level_sweep(&eps, gamma, v);
        let gaps: Vec<f64> = sweep.iter().map(|(a, b)| (a.re - b.re).abs()).collect();
        let (i, g) = gaps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(eps[i], 0.0);
        assert_relative_eq!(*g, 2.0 * (v * v - gamma * gamma).sqrt(), max_relative = 1e-12);
    }

    fn synthetic(gamma: f64, v: f64) -> CrossingType {
        // bare detuning eps = 0.03 (a - 300)
        let accel: Vec<f64> = (0..9).map(|i| 296.0 + i as f64).collect();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for &a in &accel {
            let (p, m) = two_level_model(0.03 * (a - 300.0), gamma, v);
            first.push(p + Complex64::new(-5.0, -1e-5));
            second.push(m + Complex64::new(-5.0, -1e-5));
        }
        classify_pairs(&accel, &first, &second).unwrap().kind
    }

    #[test]
    fn classification_follows_coupling_versus_decay() {
        assert_eq!(synthetic(0.01, 0.03), CrossingType::TypeI);
        assert_eq!(synthetic(0.03, 0.01), CrossingType::TypeII);
        assert_eq!(synthetic(0.0, 0.02), CrossingType::TypeI);
        let short = [1.0, 2.0, 3.0];
        let z = [Complex64::new(0.0, 0.0); 3];
        assert!(classify_pairs(&short, &z, &z).is_err());
    }

    #[test]
    fn single_injected_peak_is_found() {
        let mut v: Vec<f64> = (0..200).map(|i| 1e-6 * (1.0 + i as f64 * 1e-3)).collect();
        v[120] = 5e-5;
        v[119] = 1e-5;
        let peaks = find_peaks(&v, 3.0, 1e-11);
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].0, 120);
        let flat: Vec<f64> = (0..50).map(|i| 1e-6 + 1e-9 * i as f64).collect();
        assert!(find_peaks(&flat, 3.0, 1e-11).is_empty());
    }

    #[test]
    fn depth_derivative_matches_harmonic_estimate() {
        let cfg = rb();
        let d = d_e00_d_depth(&cfg, 40.0, 100.0, None, &FloquetSettings::default()).unwrap();
        let harmonic = -0.5 + 0.5 / 40f64.sqrt();
        assert!((d - harmonic).abs() < 0.1 * harmonic.abs(), "{d} vs {harmonic}");
    }

    #[test]
    fn settings_are_validated() {
        let s = FloquetSettings { n_trunc: 8, ..Default::default() };
        assert!(floquet_matrix_for_force(10.0, 1.0, &s).is_err());
        let s = FloquetSettings { steps: 100, ..Default::default() };
        assert!(floquet_matrix_for_force(10.0, 1.0, &s).is_err());
        assert!(floquet_bloch_matrix(&rb(), 10.0, 0.0, &FloquetSettings::default()).is_err());
    }

    #[test]
    fn unfolding_picks_nearest_representative() {
        assert_relative_eq!(unfold_near(0.5, 10.2, 3.0), 9.5);
        assert_relative_eq!(unfold_near(2.9, -0.2, 3.0), -0.1, epsilon = 1e-12);
    }
}
