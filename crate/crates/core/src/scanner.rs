//! Parameter scans over `(V0, a_L, tau_ramp)`, the optimal-acceleration search
//! and golden-file regression.
//!
//! Rows are computed independently and merged in grid order, so the output
//! does not depend on the worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adiabatic::{
    depth_sensitivity, integrate_window, lz_pulse_loss, pulse_loss, spontaneous_emission, MomentumDistribution,
    TableOptions, WsPathTable,
};
use crate::error::{invalid, Error, Result};
use crate::numerics::golden_max;
use crate::physconfig::{LaserSystem, SpeciesLattice};
use crate::pulses::PulseSchedule;
use crate::tdse::{diagnostics, init_state, propagate, SimConfig};
use crate::wsspectrum::{find_peaks, FloquetSettings};

/// Peak ratio and absolute floor for `Gamma_0` resonances read off a path table.
const RESONANCE_RATIO: f64 = 3.0;
const RESONANCE_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Ws,
    Lz,
    Tdse,
    Spont,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRequest {
    /// `E_r`
    pub depths: Vec<f64>,
    /// m/s^2
    pub accels: Vec<f64>,
    /// s
    pub ramps: Vec<f64>,
    pub oscillations: f64,
    pub models: Vec<Model>,
    /// Rows (in output order) that also get a TDSE run.
    pub tdse_budget: usize,
    /// Load/unload duration of the TDSE schedules (s).
    pub tau_load: f64,
    /// Momentum width of the TDSE initial state (`hbar k_L`).
    pub sigma_p: f64,
    pub laser: Option<LaserSystem>,
}

fn strictly_increasing(name: &'static str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(name, "grid must be non-empty, finite and strictly increasing"));
    }
    Ok(())
}

impl ScanRequest {
    pub fn validate(&self) -> Result<()> {
        strictly_increasing("depths", &self.depths)?;
        strictly_increasing("accels", &self.accels)?;
        strictly_increasing("ramps", &self.ramps)?;
        if self.depths[0] <= 0.0 || self.accels[0] <= 0.0 || self.ramps[0] < 0.0 {
            return Err(invalid("grids", "depths and accelerations must be > 0, ramps >= 0"));
        }
        if !(self.oscillations > 0.0) {
            return Err(invalid("N", format!("must be > 0, got {}", self.oscillations)));
        }
        if self.models.is_empty() {
            return Err(invalid("models", "nothing to evaluate"));
        }
        if self.models.contains(&Model::Spont) && self.laser.is_none() {
            return Err(invalid("laser", "the spont model needs a laser system"));
        }
        Ok(())
    }

    fn wants(&self, m: Model) -> bool {
        self.models.contains(&m)
    }

    pub fn len(&self) -> usize {
        self.depths.len() * self.accels.len() * self.ramps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points in output order: depth-major, then acceleration, then ramp.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &v in &self.depths {
            for &a in &self.accels {
                for &r in &self.ramps {
                    out.push((v, a, r));
                }
            }
        }
        out
    }
}

/// One scan point. `None` marks a model that was not requested or failed;
/// failures are described in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub depth: f64,
    pub accel: f64,
    pub tau_ramp: f64,
    pub oscillations: f64,
    pub loss_ws: Option<f64>,
    pub loss_lz: Option<f64>,
    pub loss_tdse: Option<f64>,
    pub loss_spont: Option<f64>,
    /// `int E_00 dt/hbar` over the acceleration window (rad).
    pub phase: Option<f64>,
    pub sensitivity: Option<f64>,
    pub error: Option<String>,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "depth_er",
    "accel_ms2",
    "tau_ramp_s",
    "oscillations",
    "loss_ws",
    "loss_lz",
    "loss_tdse",
    "loss_spont",
    "phase_rad",
    "sensitivity",
    "error",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl ComparisonRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.depth.to_string(),
            self.accel.to_string(),
            self.tau_ramp.to_string(),
            self.oscillations.to_string(),
            cell(self.loss_ws),
            cell(self.loss_lz),
            cell(self.loss_tdse),
            cell(self.loss_spont),
            cell(self.phase),
            cell(self.sensitivity),
            self.error.clone().unwrap_or_default(),
        ]
    }

    /// Named numeric columns, for golden comparisons.
    pub fn values(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("loss_ws", self.loss_ws),
            ("loss_lz", self.loss_lz),
            ("loss_tdse", self.loss_tdse),
            ("loss_spont", self.loss_spont),
            ("phase_rad", self.phase),
            ("sensitivity", self.sensitivity),
        ]
    }
}

/// Numerical settings that a scan depends on besides the request.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScanSettings {
    pub floquet: FloquetSettings,
    pub table: TableOptions,
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

/// Hash of everything that determines a scan.
pub fn settings_hash(cfg: &SpeciesLattice, request: &ScanRequest, settings: &ScanSettings) -> Result<String> {
    digest(&(cfg, request, settings))
}

struct PointContext<'a> {
    cfg: &'a SpeciesLattice,
    request: &'a ScanRequest,
    settings: &'a ScanSettings,
    tables: &'a BTreeMap<u64, WsPathTable>,
}

impl PointContext<'_> {
    fn row(&self, (depth, accel, tau_ramp): (f64, f64, f64), with_tdse: bool) -> ComparisonRow {
        let n = self.request.oscillations;
        let mut errors = Vec::new();
        let mut keep = |tag: &str, r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(format!("{tag}: {e}"));
                None
            }
        };
        let cfg = self.cfg;
        let (mut loss_ws, mut phase, mut sensitivity) = (None, None, None);
        if self.request.wants(Model::Ws) {
            let table = &self.tables[&depth.to_bits()];
            loss_ws = keep("ws", pulse_loss(cfg, table, n, accel, tau_ramp));
            phase = keep(
                "phase",
                PulseSchedule::build(cfg, n, depth, accel, 0.0, tau_ramp).and_then(|s| {
                    integrate_window(cfg, &s, table, s.accel_start(), s.accel_end()).map(|p| p.phase)
                }),
            );
            sensitivity = keep("sensitivity", depth_sensitivity(cfg, depth, accel, &self.settings.floquet).map(|s| s.0));
        }
        let loss_lz = self.request.wants(Model::Lz).then(|| keep("lz", lz_pulse_loss(cfg, depth, n, accel, tau_ramp))).flatten();
        let loss_spont = match (self.request.wants(Model::Spont), &self.request.laser) {
            (true, Some(laser)) => keep(
                "spont",
                PulseSchedule::build(cfg, n, depth, accel, 0.0, tau_ramp)
                    .and_then(|s| spontaneous_emission(cfg, laser, depth, s.accel_time).map(|e| e.loss)),
            ),
            _ => None,
        };
        let loss_tdse = with_tdse.then(|| keep("tdse", self.tdse_loss(depth, accel, tau_ramp))).flatten();
        ComparisonRow {
            depth,
            accel,
            tau_ramp,
            oscillations: n,
            loss_ws,
            loss_lz,
            loss_tdse,
            loss_spont,
            phase,
            sensitivity,
            error: (!errors.is_empty()).then(|| errors.join("; ")),
        }
    }

    fn tdse_loss(&self, depth: f64, accel: f64, tau_ramp: f64) -> Result<f64> {
        let r = self.request;
        let schedule = PulseSchedule::build(self.cfg, r.oscillations, depth, accel, r.tau_load, tau_ramp)?;
        let sim = SimConfig::for_schedule(self.cfg, &schedule)?;
        let phi = MomentumDistribution::gaussian(r.sigma_p, 0.0)?;
        let state = init_state(&phi, &sim)?;
        let out = propagate(self.cfg, state, &schedule, &sim)?;
        Ok(diagnostics(self.cfg, &out.state, &schedule, &sim)?.total_loss())
    }
}

/// Evaluates every grid point of `request`; rows come back in grid order.
///
/// Points are split into `workers` contiguous blocks, one thread each.
pub fn run_scan(
    cfg: &SpeciesLattice,
    request: &ScanRequest,
    settings: &ScanSettings,
    workers: usize,
) -> Result<Vec<ComparisonRow>> {
    request.validate()?;
    let workers = workers.max(1);
    let mut tables = BTreeMap::new();
    if request.wants(Model::Ws) {
        let a_max = *request.accels.last().unwrap();
        for &v in &request.depths {
            tables.insert(v.to_bits(), WsPathTable::build(cfg, v, a_max, &settings.floquet, &settings.table)?);
        }
    }
    let ctx = PointContext { cfg, request, settings, tables: &tables };
    let points = request.points();
    let budget = if request.wants(Model::Tdse) { request.tdse_budget } else { 0 };
    let block = points.len().div_ceil(workers).max(1);
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .chunks(block)
            .enumerate()
            .map(|(b, chunk)| {
                let ctx = &ctx;
                scope.spawn(move || {
                    chunk
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| ctx.row(p, b * block + i < budget))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scan worker panicked")).collect::<Vec<_>>()
    });
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// JSON run summary written next to every CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub settings_hash: String,
    pub golden: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Minimum of a sampled curve found by a coarse grid and golden-section refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
}

fn coarse_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(hi > lo && step > 0.0) {
        return Err(invalid("bracket", format!("need lo < hi and step > 0, got [{lo}, {hi}] step {step}")));
    }
    let count = ((hi - lo) / step).round().max(2.0) as usize;
    Ok((0..=count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect())
}

fn refine<F: Fn(f64) -> Result<f64>>(f: &F, grid: &[f64], i: usize, xtol: f64) -> Result<Minimum> {
    let x = golden_max(|x| f(x).map(|v| -v), grid[i - 1], grid[i + 1], xtol)?;
    Ok(Minimum { x, value: f(x)? })
}

/// Global minimizer of `f` on `[lo, hi]`: grid at `step`, then golden section
/// between the neighbours of the best grid point. A minimizer on the bracket
/// edge is an error.
pub fn minimize_bracketed<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64, step: f64, xtol: f64) -> Result<Minimum> {
    let grid = coarse_grid(lo, hi, step)?;
    let values = grid.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let best = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    if best == 0 || best + 1 == grid.len() {
        return Err(Error::NoInteriorExtremum { lo, hi });
    }
    refine(&f, &grid, best, xtol)
}

/// Every interior local minimum of `f` on the grid, each refined.
pub fn local_minima<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64, step: f64, xtol: f64) -> Result<Vec<Minimum>> {
    let grid = coarse_grid(lo, hi, step)?;
    let values = grid.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    (1..grid.len() - 1)
        .filter(|&i| values[i] < values[i - 1] && values[i] <= values[i + 1])
        .map(|i| refine(&f, &grid, i, xtol))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub accel: f64,
    pub loss: f64,
    /// Nearest `Gamma_0` resonances below and above the optimum (m/s^2).
    pub lower_resonance: Option<f64>,
    pub upper_resonance: Option<f64>,
}

/// Accelerations of the `Gamma_0` peaks stored in a path table.
pub fn table_resonances(table: &WsPathTable) -> Vec<f64> {
    let (accel, gamma): (Vec<f64>, Vec<f64>) = table.nodes().map(|(a, g, _)| (a, g)).unzip();
    find_peaks(&gamma, RESONANCE_RATIO, RESONANCE_FLOOR).into_iter().map(|(i, _)| accel[i]).collect()
}

fn with_neighbours(m: Minimum, resonances: &[f64]) -> OptimumReport {
    OptimumReport {
        accel: m.x,
        loss: m.value,
        lower_resonance: resonances.iter().copied().filter(|&r| r < m.x).last(),
        upper_resonance: resonances.iter().copied().find(|&r| r > m.x),
    }
}

/// Smallest loss a table resolves for an `n`-oscillation pulse at `accel`:
/// ten linewidth floors integrated over the pulse.
fn loss_floor(cfg: &SpeciesLattice, table: &WsPathTable, n: f64, accel: f64, tau_ramp: f64) -> Result<f64> {
    let s = PulseSchedule::build(cfg, n, table.depth(), accel, 0.0, tau_ramp)?;
    Ok(10.0 * table.precision_floor() * cfg.recoil_rate() * s.duration())
}

/// Acceleration in `bracket` minimizing the tunneling loss of an `n`-oscillation pulse.
///
/// A minimum below the table's resolution is reported as unresolved.
pub fn find_optimum(
    cfg: &SpeciesLattice,
    table: &WsPathTable,
    n: f64,
    tau_ramp: f64,
    bracket: (f64, f64),
    step: f64,
) -> Result<OptimumReport> {
    if bracket.1 > table.max_accel() {
        return Err(Error::Extrapolation { v0: table.depth(), force: cfg.force(bracket.1) });
    }
    let m = minimize_bracketed(|a| pulse_loss(cfg, table, n, a, tau_ramp), bracket.0, bracket.1, step, 0.01)?;
    if m.value < loss_floor(cfg, table, n, m.x, tau_ramp)? {
        return Err(Error::Domain(format!(
            "loss minimum {:e} at {} m/s^2 lies below the linewidth resolution",
            m.value, m.x
        )));
    }
    Ok(with_neighbours(m, &table_resonances(table)))
}

/// Resolved local loss minima in `bracket`, each with its neighbouring resonances.
pub fn loss_minima(
    cfg: &SpeciesLattice,
    table: &WsPathTable,
    n: f64,
    tau_ramp: f64,
    bracket: (f64, f64),
    step: f64,
) -> Result<Vec<OptimumReport>> {
    let res = table_resonances(table);
    let mut out = Vec::new();
    for m in local_minima(|a| pulse_loss(cfg, table, n, a, tau_ramp), bracket.0, bracket.1, step, 0.01)? {
        if m.value >= loss_floor(cfg, table, n, m.x, tau_ramp)? {
            out.push(with_neighbours(m, &res));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub value: f64,
    /// Relative tolerance; values below `abs_floor` compare absolutely.
    pub rel_tol: f64,
    #[serde(default)]
    pub abs_floor: f64,
}

/// Stored reference numbers with the settings they were produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFile {
    pub settings_hash: String,
    pub parameters: serde_json::Value,
    pub entries: BTreeMap<String, GoldenEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenMismatch {
    pub key: String,
    pub expected: Option<f64>,
    pub actual: Option<f64>,
}

impl GoldenFile {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Keys whose values differ beyond tolerance, or that are missing on either side.
    pub fn compare(&self, actual: &BTreeMap<String, f64>) -> Vec<GoldenMismatch> {
        let mut out = Vec::new();
        for (key, e) in &self.entries {
            let a = actual.get(key).copied();
            let ok = a.is_some_and(|a| {
                let scale = e.value.abs().max(e.abs_floor);
                (a - e.value).abs() <= e.rel_tol * scale || (a.is_nan() && e.value.is_nan())
            });
            if !ok {
                out.push(GoldenMismatch { key: key.clone(), expected: Some(e.value), actual: a });
            }
        }
        for (key, &a) in actual {
            if !self.entries.contains_key(key) {
                out.push(GoldenMismatch { key: key.clone(), expected: None, actual: Some(a) });
            }
        }
        out
    }
}

/// Flattens scan rows into `"row{i}.{column}"` keys; missing values are skipped.
pub fn row_values(rows: &[ComparisonRow]) -> BTreeMap<String, f64> {
    rows.iter()
        .enumerate()
        .flat_map(|(i, r)| r.values().into_iter().filter_map(move |(k, v)| v.map(|v| (format!("row{i}.{k}"), v))))
        .collect()
}

/// Golden entries for scan rows with one relative tolerance per column.
pub fn golden_from_rows(rows: &[ComparisonRow], tolerances: &BTreeMap<&str, f64>) -> BTreeMap<String, GoldenEntry> {
    row_values(rows)
        .into_iter()
        .map(|(k, value)| {
            let column = k.split_once('.').map_or("", |(_, c)| c);
            let rel_tol = tolerances.get(column).copied().unwrap_or(1e-9);
            (k, GoldenEntry { value, rel_tol, abs_floor: 1e-14 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn request() -> ScanRequest {
        ScanRequest {
            depths: vec![10.0, 20.0],
            accels: vec![60.0, 100.0, 140.0],
            ramps: vec![1e-4],
            oscillations: 20.0,
            models: vec![Model::Lz, Model::Spont],
            tdse_budget: 0,
            tau_load: 1e-3,
            sigma_p: 0.1,
            laser: Some(LaserSystem::gebbe()),
        }
    }

    #[test]
    fn symmetric_curve_has_midpoint_minimum() {
        let m = minimize_bracketed(|x| Ok((x - 3.0).abs() + 1.0), 1.0, 5.0, 0.3, 1e-10).unwrap();
        assert_relative_eq!(m.x, 3.0, epsilon = 1e-10);
        // a flat bottom only resolves to sqrt(eps)
        let m = minimize_bracketed(|x| Ok((x - 3.0).powi(2) + 1.0), 1.0, 5.0, 0.5, 1e-9).unwrap();
        assert_relative_eq!(m.x, 3.0, epsilon = 3e-8);
        assert_relative_eq!(m.value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn edge_minimum_is_reported() {
        let r = minimize_bracketed(|x| Ok(x), 1.0, 5.0, 0.5, 1e-9);
        assert!(matches!(r, Err(Error::NoInteriorExtremum { .. })));
    }

    #[test]
    fn local_minima_of_a_double_well() {
        let f = |x: f64| Ok((x * x - 1.0).powi(2) + 0.1 * x);
        let mins = local_minima(f, -2.0, 2.0, 0.05, 1e-8).unwrap();
        assert_eq!(mins.len(), 2);
        assert!(mins[0].x < -0.9 && mins[1].x > 0.9);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let mut r = request();
        r.accels = vec![100.0, 60.0];
        assert!(r.validate().is_err());
        let mut r = request();
        r.laser = None;
        assert!(r.validate().is_err());
        let mut r = request();
        r.depths.clear();
        assert!(r.validate().is_err());
    }

    #[test]
    fn missing_models_stay_missing() {
        let cfg = SpeciesLattice::rb87();
        let rows = run_scan(&cfg, &request(), &ScanSettings::default(), 2).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.loss_ws.is_none() && r.loss_tdse.is_none() && r.phase.is_none());
            assert!(r.loss_lz.is_some() && r.loss_spont.is_some());
            assert!(r.error.is_none());
        }
        let mut csv = Vec::new();
        write_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("depth_er,accel_ms2,tau_ramp_s,oscillations,loss_ws"));
        assert_eq!(text.lines().nth(1).unwrap().split(',').nth(4), Some("NA"));
    }

    #[test]
    fn per_point_failures_are_recorded() {
        let cfg = SpeciesLattice::rb87();
        let mut r = request();
        // tau_ramp longer than the pulse: infeasible at every point
        r.ramps = vec![1.0];
        let rows = run_scan(&cfg, &r, &ScanSettings::default(), 1).unwrap();
        assert!(rows.iter().all(|row| row.error.as_deref().is_some_and(|e| e.contains("infeasible"))));
        assert!(rows.iter().all(|row| row.loss_lz.is_none()));
    }

    #[test]
    fn hash_tracks_settings() {
        let cfg = SpeciesLattice::rb87();
        let s = ScanSettings::default();
        let a = settings_hash(&cfg, &request(), &s).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, settings_hash(&cfg, &request(), &s).unwrap());
        let mut r = request();
        r.oscillations = 21.0;
        assert_ne!(a, settings_hash(&cfg, &r, &s).unwrap());
    }

    #[test]
    fn golden_comparison_flags_drift_and_gaps() {
        let mut entries = BTreeMap::new();
        entries.insert("a".to_string(), GoldenEntry { value: 1.0, rel_tol: 1e-6, abs_floor: 0.0 });
        entries.insert("b".to_string(), GoldenEntry { value: 0.0, rel_tol: 1e-6, abs_floor: 1e-3 });
        let g = GoldenFile { settings_hash: "x".into(), parameters: serde_json::Value::Null, entries };
        let mut actual = BTreeMap::from([("a".to_string(), 1.0 + 1e-7), ("b".to_string(), 5e-10)]);
        assert!(g.compare(&actual).is_empty());
        actual.insert("a".into(), 1.001);
        actual.insert("c".into(), 2.0);
        let keys: Vec<_> = g.compare(&actual).into_iter().map(|m| m.key).collect();
        assert_eq!(keys, ["a", "c"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn worker_count_does_not_change_rows(workers in 1usize..6) {
            let cfg = SpeciesLattice::rb87();
            let one = run_scan(&cfg, &request(), &ScanSettings::default(), 1).unwrap();
            let many = run_scan(&cfg, &request(), &ScanSettings::default(), workers).unwrap();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            write_csv(&one, &mut a).unwrap();
            write_csv(&many, &mut b).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
