use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use blochlmt::adiabatic::{
    case_panda, integrate_window, lz_pulse_loss, magic_depth, phase_uncertainty, pulse_loss, required_stability,
    spontaneous_emission, MorelGeometry, TableOptions, WsPathTable,
};
use blochlmt::blochband::{edge_gap, lz_effective_linewidth, BlochSpectrum};
use blochlmt::scanner::{
    digest, find_optimum, loss_minima, row_values, run_scan, settings_hash, write_csv, GoldenEntry, GoldenFile,
    RunSummary, ScanSettings,
};
use blochlmt::scenario::Scenario;
use blochlmt::tdse::{diagnostics, init_state, lattice_shift_propagate, propagate};
use blochlmt::wsspectrum::{find_crossings, find_tunneling_resonances, ws_levels, ws_sweep, FloquetSettings};

/// Peak-to-valley noise floor for `Gamma_0` resonance detection (E_r).
const RESONANCE_FLOOR: f64 = 1e-11;

#[derive(Parser)]
#[command(name = "blochlmt", version, about = "Losses, phases and noise of Bloch-oscillation LMT pulses")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `[scan] tdse_budget`.
    #[arg(long, global = true)]
    tdse_budget: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bloch bands and band averages at the scenario depth.
    Bands {
        #[arg(long, default_value_t = 4)]
        bands: usize,
        #[arg(long, default_value_t = 513)]
        kappa: usize,
    },
    /// Wannier-Stark energies and linewidths over an acceleration sweep.
    Spectrum {
        #[command(flatten)]
        sweep: Sweep,
    },
    /// Level crossings and the Gamma_0 resonances they explain.
    Crossings {
        #[command(flatten)]
        sweep: Sweep,
    },
    /// Adiabatic and Landau-Zener losses of the scenario pulse.
    PulseLoss {
        /// Also write the sampled waveforms.
        #[arg(long)]
        waveforms: Option<usize>,
    },
    /// Wave-packet propagation of the scenario pulse.
    Tdse,
    /// Phase noise from depth fluctuations, or the stability a phase target needs.
    PhaseNoise {
        #[arg(long, conflicts_with = "phase_mrad")]
        dv_over_v: Option<f64>,
        #[arg(long)]
        phase_mrad: Option<f64>,
    },
    /// Spontaneous-emission loss of the scenario pulse.
    Spont,
    /// Depth maximizing an excited-ladder energy.
    MagicDepth {
        #[arg(long, default_value_t = 1)]
        ladder: usize,
        /// m/s^2; 0 uses Bloch band averages.
        #[arg(long, default_value_t = 0.0)]
        accel: f64,
        #[arg(long, num_args = 2, default_values_t = [1.0, 30.0])]
        bracket: Vec<f64>,
    },
    /// Noise case studies.
    Case {
        #[arg(value_enum)]
        which: CaseStudy,
        /// Phase target (rad).
        #[arg(long)]
        phase: Option<f64>,
    },
    /// Loss table over the `[scan]` grid.
    Scan {
        /// Compare against a golden file; mismatches fail the command.
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Write the results as a new golden file.
        #[arg(long)]
        bless: Option<PathBuf>,
    },
    /// Loss-minimizing acceleration for each scanned depth.
    Optimize,
}

#[derive(clap::Args)]
struct Sweep {
    #[arg(long)]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    #[arg(long, default_value_t = 3)]
    ladders: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseStudy {
    Morel,
    Panda,
    Canuel,
}

struct Run {
    dir: PathBuf,
    command: &'static str,
    started: Instant,
    golden: BTreeMap<String, f64>,
}

impl Run {
    fn new(dir: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Run { dir: dir.to_path_buf(), command, started: Instant::now(), golden: BTreeMap::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn csv(&self, name: &str, header: &[&str]) -> Result<csv::Writer<File>> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        Ok(w)
    }

    fn record(&mut self, key: &str, value: f64) {
        println!("{key} = {value}");
        self.golden.insert(key.to_string(), value);
    }

    fn finish(self, hash: String) -> Result<()> {
        let summary = RunSummary {
            command: self.command.to_string(),
            settings_hash: hash,
            golden: self.golden,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        summary.write(&self.dir.join(format!("{}_summary.json", self.command)))?;
        Ok(())
    }
}

fn row<I: IntoIterator<Item = f64>>(values: I) -> Vec<String> {
    values.into_iter().map(|v| v.to_string()).collect()
}

fn sweep_grid(sweep: &Sweep, sc: &Scenario) -> Result<Vec<f64>> {
    let from = sweep.from.unwrap_or(sc.schedule.accel_ms2 * 0.5);
    let to = sweep.to.unwrap_or(sc.schedule.accel_ms2 * 1.5);
    if !(to > from && sweep.step > 0.0) {
        bail!("need --from < --to and --step > 0");
    }
    let n = ((to - from) / sweep.step).round() as usize;
    Ok((0..=n).map(|k| from + k as f64 * sweep.step).collect())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let scenario_path = cli.scenario.as_deref().context("--scenario is required")?;
    let sc = Scenario::load(scenario_path).with_context(|| format!("loading {}", scenario_path.display()))?;
    let cfg = sc.species()?;
    let settings = FloquetSettings::default();
    let depth = sc.schedule.depth_er;
    let accel = sc.schedule.accel_ms2;
    let n = sc.schedule.oscillations;
    let tau_ramp = sc.schedule.tau_ramp_ms * 1e-3;

    match cli.command {
        Command::Bands { bands, kappa } => {
            let mut run = Run::new(&cli.out, "bands")?;
            let spec = BlochSpectrum::compute(depth, bands, kappa)?;
            let header: Vec<String> =
                std::iter::once("kappa".to_string()).chain((0..bands).map(|b| format!("band{b}_er"))).collect();
            let mut w = csv::Writer::from_path(run.path("bands.csv"))?;
            w.write_record(&header)?;
            for (i, k) in spec.kappa.iter().enumerate() {
                w.write_record(row(std::iter::once(*k).chain(spec.energies.iter().map(|e| e[i]))))?;
            }
            w.flush()?;
            for (b, avg) in spec.averages.iter().enumerate() {
                run.record(&format!("band_average_{b}"), *avg);
            }
            run.record("edge_gap", edge_gap(depth)?);
            run.finish(digest(&(&sc, bands, kappa))?)
        }
        Command::Spectrum { sweep } => {
            let mut run = Run::new(&cli.out, "spectrum")?;
            let grid = sweep_grid(&sweep, &sc)?;
            let trace = ws_sweep(&cfg, depth, &grid, sweep.ladders, &settings)?;
            let mut w = run.csv("spectrum.csv", &["accel_ms2", "ladder", "energy_er", "linewidth_er", "provenance"])?;
            for p in &trace.points {
                for l in &p.levels {
                    let mut r = row([p.accel, l.ladder as f64, l.energy, l.linewidth]);
                    r.push(p.provenance.as_str().to_string());
                    w.write_record(r)?;
                }
            }
            w.flush()?;
            run.record("points", grid.len() as f64);
            run.record("sort_anomalies", trace.anomalies.len() as f64);
            run.finish(digest(&(&sc, &grid, sweep.ladders, settings))?)
        }
        Command::Crossings { sweep } => {
            let mut run = Run::new(&cli.out, "crossings")?;
            let grid = sweep_grid(&sweep, &sc)?;
            let trace = ws_sweep(&cfg, depth, &grid, sweep.ladders.max(2), &settings)?;
            let mut w = run.csv("crossings.csv", &["accel_ms2", "partner_ladder", "partner_site", "avoided"])?;
            for c in find_crossings(&trace, 2, 2) {
                w.write_record(row([c.accel, c.partner.0 as f64, c.partner.1 as f64, c.avoided as u8 as f64]))?;
            }
            w.flush()?;
            let report = find_tunneling_resonances(&trace, RESONANCE_FLOOR);
            let mut w = run.csv(
                "resonances.csv",
                &["accel_ms2", "linewidth_er", "baseline_er", "partner_ladder", "partner_site"],
            )?;
            for r in report.resonances.iter().chain(&report.unmatched) {
                let (pl, ps) = r.partner.map_or(("NA".into(), "NA".into()), |(a, l)| (a.to_string(), l.to_string()));
                let mut rec = row([r.accel, r.linewidth, r.baseline]);
                rec.extend([pl, ps]);
                w.write_record(rec)?;
            }
            w.flush()?;
            for (i, r) in report.resonances.iter().enumerate() {
                run.record(&format!("resonance_{i}_accel"), r.accel);
            }
            run.record("unmatched_peaks", report.unmatched.len() as f64);
            run.finish(digest(&(&sc, &grid, sweep.ladders, settings))?)
        }
        Command::PulseLoss { waveforms } => {
            let mut run = Run::new(&cli.out, "pulse_loss")?;
            let schedule = sc.pulse(&cfg)?;
            let table = WsPathTable::build(&cfg, depth, accel, &settings, &TableOptions::default())?;
            let window = integrate_window(&cfg, &schedule, &table, schedule.accel_start(), schedule.accel_end())?;
            run.record("pulse_duration_s", schedule.duration());
            run.record("accel_time_s", schedule.accel_time);
            run.record("loss_ws", pulse_loss(&cfg, &table, n, accel, tau_ramp)?);
            run.record("loss_lz", lz_pulse_loss(&cfg, depth, n, accel, tau_ramp)?);
            run.record("phase_rad", window.phase);
            let gap = edge_gap(depth)?;
            let gamma0 = ws_levels(&cfg, depth, accel, &settings)?.levels[0].linewidth;
            run.record("gamma_ws_er", gamma0);
            run.record("gamma_lz_er", lz_effective_linewidth(&cfg, gap, accel)?);
            if let Some(count) = waveforms {
                let mut w = run.csv("waveforms.csv", &["t_s", "v0_er", "accel_ms2", "p_hk", "x_m", "dnu_hz"])?;
                for s in schedule.sample(count) {
                    w.write_record(row([s.time, s.depth, s.accel, s.momentum, s.position, s.frequency_difference]))?;
                }
                w.flush()?;
            }
            run.finish(digest(&(&sc, settings))?)
        }
        Command::Tdse => {
            let mut run = Run::new(&cli.out, "tdse")?;
            let schedule = sc.pulse(&cfg)?;
            let sim = sc.sim_config(&cfg, &schedule)?;
            let state = init_state(&sc.initial_distribution()?, &sim)?;
            let out = if sc.tdse.lattice_shift {
                lattice_shift_propagate(&cfg, state, &schedule, &sim)?
            } else {
                propagate(&cfg, state, &schedule, &sim)?
            };
            let jmax = sim.max_bin as i64;
            let header: Vec<String> = ["t_s", "norm", "absorbed", "mean_p_hk"]
                .into_iter()
                .map(String::from)
                .chain((-jmax..=jmax).map(|j| format!("bin_{j}")))
                .collect();
            let mut w = csv::Writer::from_path(run.path("tdse_series.csv"))?;
            w.write_record(&header)?;
            for s in &out.series {
                w.write_record(row([s.time, s.norm, s.absorbed, s.mean_momentum].into_iter().chain(s.bins.clone())))?;
            }
            w.flush()?;
            let report = diagnostics(&cfg, &out.state, &schedule, &sim)?;
            fs::write(run.path("loss_report.json"), serde_json::to_string_pretty(&report)?)?;
            if sc.tdse.snapshot {
                out.state.write_snapshot(BufWriter::new(File::create(run.path("final_state.bin"))?))?;
            }
            run.record("total_loss", report.total_loss());
            run.record("tunneling", report.tunneling);
            run.record("non_adiabatic", report.non_adiabatic());
            run.record("points", sim.points as f64);
            run.finish(digest(&(&sc, &sim))?)
        }
        Command::PhaseNoise { dv_over_v, phase_mrad } => {
            let mut run = Run::new(&cli.out, "phase_noise")?;
            let budget = match (dv_over_v, phase_mrad) {
                (Some(dv), _) => phase_uncertainty(&cfg, depth, accel, n, dv, &settings)?,
                (None, Some(mrad)) => required_stability(&cfg, depth, accel, n, mrad * 1e-3, &settings)?,
                (None, None) => bail!("give --dv-over-v or --phase-mrad"),
            };
            run.record("delta_phi_rad", budget.delta_phi);
            run.record("dv_over_v", budget.dv_over_v);
            run.record("sensitivity", budget.sensitivity);
            run.record("de00_dv0", budget.derivative);
            run.finish(digest(&(&sc, dv_over_v, phase_mrad, settings))?)
        }
        Command::Spont => {
            let mut run = Run::new(&cli.out, "spont")?;
            let laser = sc.laser()?.context("the scenario has no [laser] beam")?;
            let schedule = sc.pulse(&cfg)?;
            let spont = spontaneous_emission(&cfg, &laser, depth, schedule.accel_time)?;
            let table = WsPathTable::build(&cfg, depth, accel, &settings, &TableOptions::default())?;
            let tunneling = pulse_loss(&cfg, &table, n, accel, tau_ramp)?;
            run.record("scattering_rate_hz", spont.rate);
            run.record("loss_spont", spont.loss);
            run.record("loss_tunneling", tunneling);
            run.record("spont_over_tunneling", spont.loss / tunneling);
            run.finish(digest(&(&sc, settings))?)
        }
        Command::MagicDepth { ladder, accel, bracket } => {
            let mut run = Run::new(&cli.out, "magic_depth")?;
            let v = magic_depth(&cfg, ladder, accel, (bracket[0], bracket[1]), &settings)?;
            run.record("magic_depth_er", v);
            run.finish(digest(&(&sc, ladder, accel, &bracket, settings))?)
        }
        Command::Case { which, phase } => match which {
            CaseStudy::Morel => {
                let mut run = Run::new(&cli.out, "case_morel")?;
                let l = sc.laser.clone().unwrap_or_default();
                let ratio = l.z_over_w0.context("[laser] z_over_w0 is required")?;
                let geometry = MorelGeometry::new(ratio, 1.0)?;
                let target = phase.unwrap_or(1e-3);
                let budget = required_stability(&cfg, depth, accel, n, target, &settings)?;
                run.record("dv_over_v", budget.dv_over_v);
                run.record("tilt_bound_rad", geometry.tilt_bound(budget.dv_over_v));
                let tight = required_stability(&cfg, depth, accel, n, target / 10.0, &settings)?;
                run.record("tilt_bound_tenfold_rad", geometry.tilt_bound(tight.dv_over_v));
                run.finish(digest(&(&sc, target, settings))?)
            }
            CaseStudy::Panda => {
                let mut run = Run::new(&cli.out, "case_panda")?;
                let case = sc.panda_case();
                let budget = case_panda(&cfg, &case, &settings)?;
                run.record("oscillations", budget.oscillations);
                run.record("dv_over_v", budget.dv_over_v);
                run.record("delta_phi_rad", budget.delta_phi);
                run.finish(digest(&(&sc, settings))?)
            }
            CaseStudy::Canuel => {
                let mut run = Run::new(&cli.out, "case_canuel")?;
                let target = phase.unwrap_or(1e-6);
                let budget = required_stability(&cfg, depth, accel, n, target, &settings)?;
                run.record("dv_over_v", budget.dv_over_v);
                run.record("sensitivity", budget.sensitivity);
                run.finish(digest(&(&sc, target, settings))?)
            }
        },
        Command::Scan { golden, bless } => {
            let mut run = Run::new(&cli.out, "scan")?;
            let mut request = sc.scan_request()?;
            if let Some(b) = cli.tdse_budget {
                request.tdse_budget = b;
            }
            let scan_settings = ScanSettings::default();
            let hash = settings_hash(&cfg, &request, &scan_settings)?;
            let rows = run_scan(&cfg, &request, &scan_settings, workers)?;
            write_csv(&rows, BufWriter::new(File::create(run.path("scan.csv"))?))?;
            let values = row_values(&rows);
            run.golden = values.clone();
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} rows, {failed} with errors", rows.len());
            if let Some(path) = bless {
                let tolerances = BTreeMap::from([("loss_tdse", 1e-6), ("sensitivity", 1e-6)]);
                let entries: BTreeMap<String, GoldenEntry> = blochlmt::scanner::golden_from_rows(&rows, &tolerances);
                let file = GoldenFile {
                    settings_hash: hash.clone(),
                    parameters: serde_json::to_value(&request)?,
                    entries,
                };
                file.save(&path)?;
            }
            let mismatches = match golden {
                Some(path) => {
                    let file = GoldenFile::load(&path)?;
                    if file.settings_hash != hash {
                        eprintln!("warning: golden file was produced under different settings");
                    }
                    file.compare(&values)
                }
                None => Vec::new(),
            };
            run.finish(hash)?;
            if !mismatches.is_empty() {
                for m in &mismatches {
                    eprintln!("golden mismatch {}: expected {:?}, got {:?}", m.key, m.expected, m.actual);
                }
                bail!("{} golden mismatches", mismatches.len());
            }
            Ok(())
        }
        Command::Optimize => {
            let mut run = Run::new(&cli.out, "optimize")?;
            let scan = sc.scan.as_ref().context("optimize needs a [scan] section")?;
            let [lo, hi] = scan.bracket_ms2.context("[scan] bracket_ms2 is required")?;
            let step = scan.step_ms2.unwrap_or(1.0);
            let depths = scan.depths_er.values()?;
            let mut w = run.csv(
                "optimum.csv",
                &["depth_er", "kind", "accel_ms2", "loss", "lower_resonance_ms2", "upper_resonance_ms2"],
            )?;
            for &v in &depths {
                let table = WsPathTable::build(&cfg, v, hi, &settings, &TableOptions::default())?;
                let mut emit = |kind: &str, o: &blochlmt::scanner::OptimumReport| -> Result<()> {
                    let opt = |x: Option<f64>| x.map_or_else(|| "NA".to_string(), |x| x.to_string());
                    w.write_record([
                        v.to_string(),
                        kind.to_string(),
                        o.accel.to_string(),
                        o.loss.to_string(),
                        opt(o.lower_resonance),
                        opt(o.upper_resonance),
                    ])?;
                    Ok(())
                };
                match find_optimum(&cfg, &table, n, tau_ramp, (lo, hi), step) {
                    Ok(o) => {
                        emit("global", &o)?;
                        run.record(&format!("optimum_v{v}_accel"), o.accel);
                    }
                    Err(e) => eprintln!("V0 = {v}: {e}"),
                }
                for o in loss_minima(&cfg, &table, n, tau_ramp, (lo, hi), step)? {
                    emit("local", &o)?;
                }
            }
            w.flush()?;
            run.finish(digest(&(&sc, settings))?)
        }
    }
}
