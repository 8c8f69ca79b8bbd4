//! Scenario files: TOML with sections `[species]`, `[lattice]`, `[laser]`,
//! `[schedule]`, `[scan]` and `[tdse]`. Every physical key carries its unit
//! as a suffix (`_nm`, `_ms2`, `_er`, ...); unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adiabatic::{MomentumDistribution, PandaCase, PANDA_Z_OVER_W0};
use crate::error::{invalid, Error, Result};
use crate::physconfig::{LaserSystem, SpeciesLattice};
use crate::pulses::{PulseSchedule, DEFAULT_SHAPE_H};
use crate::scanner::{Model, ScanRequest};
use crate::tdse::{Frame, SimConfig, DEFAULT_PERIODS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeciesPreset {
    Rb87,
    Cs133,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaserPreset {
    Gebbe,
    Kim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub preset: SpeciesPreset,
    pub atom_mass_kg: Option<f64>,
    pub transition_wavelength_nm: Option<f64>,
    /// `Gamma / 2 pi`
    pub linewidth_mhz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub wavelength_nm: Option<f64>,
}

/// Beam parameters plus the geometry used by the noise case studies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserSection {
    pub preset: Option<LaserPreset>,
    pub power_w: Option<f64>,
    pub waist_mm: Option<f64>,
    /// Beam-axis tilt jitter.
    pub tilt_urad: Option<f64>,
    /// Cloud displacement over beam waist.
    pub z_over_w0: Option<f64>,
    pub hold_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub oscillations: f64,
    pub depth_er: f64,
    pub accel_ms2: f64,
    #[serde(default)]
    pub tau_load_ms: f64,
    #[serde(default)]
    pub tau_ramp_ms: f64,
    #[serde(default = "default_shape")]
    pub shape_h: f64,
}

fn default_shape() -> f64 {
    DEFAULT_SHAPE_H
}

/// An axis given either as explicit values or as `{ start, stop, step }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Axis {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            Axis::Values(ref v) => Ok(v.clone()),
            Axis::Range { start, stop, step } => {
                if !(step > 0.0 && stop >= start) {
                    return Err(invalid("axis", format!("bad range {start}..{stop} step {step}")));
                }
                let count = ((stop - start) / step + 1e-9).floor() as usize;
                Ok((0..=count).map(|k| start + k as f64 * step).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub depths_er: Axis,
    pub accels_ms2: Axis,
    pub ramps_ms: Axis,
    pub models: Vec<Model>,
    #[serde(default)]
    pub tdse_budget: usize,
    /// Search bracket for `optimize`.
    pub bracket_ms2: Option<[f64; 2]>,
    pub step_ms2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdseSection {
    pub periods: usize,
    pub sigma_p_hk: f64,
    pub centre_hk: f64,
    pub frame: Frame,
    pub lattice_shift: bool,
    pub points: Option<usize>,
    pub dt_us: Option<f64>,
    pub checkpoints: Option<usize>,
    pub snapshot: bool,
}

impl Default for TdseSection {
    fn default() -> Self {
        TdseSection {
            periods: DEFAULT_PERIODS,
            sigma_p_hk: 0.1,
            centre_hk: 0.0,
            frame: Frame::Lattice,
            lattice_shift: false,
            points: None,
            dt_us: None,
            checkpoints: None,
            snapshot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub species: SpeciesSection,
    #[serde(default)]
    pub lattice: LatticeSection,
    pub laser: Option<LaserSection>,
    pub schedule: ScheduleSection,
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub tdse: TdseSection,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Scenario(e.to_string()))?;
        sc.species()?;
        Ok(sc)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn species(&self) -> Result<SpeciesLattice> {
        let base = match self.species.preset {
            SpeciesPreset::Rb87 => SpeciesLattice::rb87(),
            SpeciesPreset::Cs133 => SpeciesLattice::cs133(),
        };
        let s = &self.species;
        let cfg = SpeciesLattice::from_wavelengths(
            s.atom_mass_kg.unwrap_or(base.atom_mass),
            self.lattice.wavelength_nm.map_or(base.lattice_wavelength, |nm| nm * 1e-9),
            s.transition_wavelength_nm.map_or(base.transition_wavelength, |nm| nm * 1e-9),
            s.linewidth_mhz.map_or(base.natural_linewidth, |f| 2.0 * PI * f * 1e6),
        );
        cfg.validate()?;
        Ok(cfg)
    }

    /// The beam, if `[laser]` names a preset or both power and waist.
    pub fn laser(&self) -> Result<Option<LaserSystem>> {
        let Some(l) = &self.laser else { return Ok(None) };
        let base = l.preset.map(|p| match p {
            LaserPreset::Gebbe => LaserSystem::gebbe(),
            LaserPreset::Kim => LaserSystem::kim(),
        });
        match (l.power_w.or(base.map(|b| b.power)), l.waist_mm.map(|w| w * 1e-3).or(base.map(|b| b.waist))) {
            (Some(p), Some(w)) => LaserSystem::new(p, w).map(Some),
            (None, None) => Ok(None),
            _ => Err(invalid("laser", "needs both power_w and waist_mm, or a preset")),
        }
    }

    pub fn pulse(&self, cfg: &SpeciesLattice) -> Result<PulseSchedule> {
        let s = &self.schedule;
        PulseSchedule::build_with_shape(
            cfg,
            s.oscillations,
            s.depth_er,
            s.accel_ms2,
            s.tau_load_ms * 1e-3,
            s.tau_ramp_ms * 1e-3,
            s.shape_h,
        )
    }

    pub fn scan_request(&self) -> Result<ScanRequest> {
        let scan = self.scan.as_ref().ok_or_else(|| invalid("scan", "scenario has no [scan] section"))?;
        let request = ScanRequest {
            depths: scan.depths_er.values()?,
            accels: scan.accels_ms2.values()?,
            ramps: scan.ramps_ms.values()?.into_iter().map(|ms| ms * 1e-3).collect(),
            oscillations: self.schedule.oscillations,
            models: scan.models.clone(),
            tdse_budget: scan.tdse_budget,
            tau_load: self.schedule.tau_load_ms * 1e-3,
            sigma_p: self.tdse.sigma_p_hk,
            laser: self.laser()?,
        };
        request.validate()?;
        Ok(request)
    }

    /// Grid for the TDSE run; explicit `points`/`dt_us` override the defaults.
    pub fn sim_config(&self, cfg: &SpeciesLattice, schedule: &PulseSchedule) -> Result<SimConfig> {
        let t = &self.tdse;
        let mut sim = SimConfig::with_periods(cfg, schedule, t.periods)?;
        sim.frame = t.frame;
        if let Some(points) = t.points {
            sim.points = points;
        }
        if let Some(dt) = t.dt_us {
            sim.dt = cfg.time_to_recoil(dt * 1e-6);
            sim.hold_dt = sim.hold_dt.max(sim.dt);
        }
        if let Some(c) = t.checkpoints {
            sim.checkpoints = c;
        }
        sim.validate(cfg, schedule)?;
        Ok(sim)
    }

    pub fn initial_distribution(&self) -> Result<MomentumDistribution> {
        MomentumDistribution::gaussian(self.tdse.sigma_p_hk, self.tdse.centre_hk)
    }

    /// Held-lattice case built from `[schedule]` depth/acceleration and `[laser]` geometry.
    pub fn panda_case(&self) -> PandaCase {
        let l = self.laser.clone().unwrap_or_default();
        let d = PandaCase::default();
        PandaCase {
            depth: self.schedule.depth_er,
            accel: self.schedule.accel_ms2,
            hold_time: l.hold_time_s.unwrap_or(d.hold_time),
            tilt: l.tilt_urad.map_or(d.tilt, |u| u * 1e-6),
            z_over_w0: l.z_over_w0.unwrap_or(PANDA_Z_OVER_W0),
        }
    }
}
