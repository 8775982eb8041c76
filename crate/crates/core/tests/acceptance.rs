//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{noiseless, short_scenario, signal_only};
use skylink_core::ao::coupling_efficiency;
use skylink_core::geometry::{propagate_pass, OrbitConfig, StationConfig};
use skylink_core::link::{
    class_statistics, transmit_and_detect_with_ledger, DetectionRecord, DetectorModel, Eavesdropper, SlotSeries,
};
use skylink_core::mission::bench::{ao_bench, AoBenchConfig};
use skylink_core::mission::scenario::ScenarioConfig;
use skylink_core::mission::{run_mission, serialize_artifacts, RunArtifacts};
use skylink_core::oracles;
use skylink_core::pat::{step, EventKind, LinkEvent, LinkState, PatConfig, State};
use skylink_core::postprocessing::{
    binary_entropy, cascade_correct, decoy_bounds, secret_key_length, sift, DecoyBounds, KeyMaterial, KeyStage,
};
use skylink_core::seed;
use skylink_core::transmitter::{generate_range, ProtocolParams, PulseFrame};
use skylink_core::turbulence::{generate_phase_screen, kolmogorov_structure_function, structure_function};
use skylink_core::WavefrontScreen;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Mission runs shared between criteria.
struct Runs {
    default_a: RunArtifacts,
    default_b: RunArtifacts,
    default_secs: [Duration; 2],
    noisy: RunArtifacts,
}

impl Runs {
    fn all(&self) -> [&RunArtifacts; 3] {
        [&self.default_a, &self.default_b, &self.noisy]
    }
}

fn ac1_kolmogorov() -> Outcome {
    let t = Instant::now();
    let (d, pupil_px) = (0.8, 32.0);
    let pixel = d / pupil_px;
    let r0 = d / 10.0;
    let screens: Vec<WavefrontScreen> = (0..100)
        .map(|i| generate_phase_screen(256, pixel, r0, i).unwrap())
        .collect();
    let seps = [5usize, 8, 12, 16, 24, 32, 48, 64];
    let sf = structure_function(&screens, &seps);
    let ratios: Vec<f64> = seps
        .iter()
        .zip(&sf)
        .map(|(&s, &v)| v / kolmogorov_structure_function(s as f64 * pixel, r0))
        .collect();
    let worst = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 0.10 && secs < 60.0,
        format!("D(r)/6.88(r/r0)^5/3 over 5..64 px = {ratios:.3?}, worst {worst:.3}, {secs:.1} s"),
    )
}

fn ac2_ao_benefit() -> Outcome {
    let t = Instant::now();
    let r = ao_bench(&AoBenchConfig::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    check(
        r.benefit() >= 3.0 && secs < 120.0,
        format!(
            "open {:.4}, closed {:.4}, ratio {:.1}, {} steps, {secs:.1} s",
            r.open_loop_mean,
            r.closed_loop_mean,
            r.benefit(),
            r.open_loop.len()
        ),
    )
}

fn ac3_flat_coupling() -> Outcome {
    let flat = WavefrontScreen::flat(128, 0.8 / 128.0).with_pupil(0.8).unwrap();
    let (ratio, peak) = oracles::golden_max(|w| coupling_efficiency(&flat, w), 0.5, 1.5, 1e-6);
    let (o_ratio, o_peak) = oracles::golden_max(oracles::flat_pupil_coupling, 0.5, 1.5, 1e-10);
    check(
        (peak - 0.81).abs() <= 0.01 && (peak - o_peak).abs() <= 0.01 && (ratio - o_ratio).abs() < 0.02,
        format!("grid peak {peak:.4} at w/R {ratio:.4}; quadrature oracle {o_peak:.4} at {o_ratio:.4}"),
    )
}

/// Frames and click records, produced in chunks until `enough` says stop.
fn collect_clicks(
    params: &ProtocolParams,
    det: &DetectorModel,
    eve: Eavesdropper,
    seed: u64,
    enough: impl Fn(&[PulseFrame], &[DetectionRecord]) -> bool,
) -> (Vec<PulseFrame>, Vec<DetectionRecord>) {
    const CHUNK: usize = 500_000;
    let (mut frames, mut records) = (Vec::new(), Vec::new());
    let mut start = 0u64;
    while !enough(&frames, &records) {
        let block = generate_range(params, start, CHUNK, seed).unwrap();
        let eta = SlotSeries::constant(1.0, start, CHUNK as u64);
        let (recs, _) = transmit_and_detect_with_ledger(&block, &eta, &eta, det, eve, seed ^ 0x5a5a).unwrap();
        for r in recs.into_iter().filter(|r| r.outcome.is_click()) {
            frames.push(block[(r.slot - start) as usize]);
            records.push(r);
        }
        start += CHUNK as u64;
    }
    (frames, records)
}

fn ac4_bb84_statistics() -> Outcome {
    let p = signal_only();
    let target = 1_000_000;
    let (frames, records) = collect_clicks(&p, &noiseless(), Eavesdropper::None, 40, |_, r| r.len() >= target);
    let (a, b) = sift(&frames[..target], &records[..target]).map_err(|e| e.to_string())?;
    let fraction = a.len() as f64 / target as f64;
    let noiseless_errors = a.mismatches(&b);

    let eve = Eavesdropper::InterceptResend { resend_mu: 1.0 };
    let (frames, records) = collect_clicks(&p, &noiseless(), eve, 41, |_, r| r.len() >= 2 * target + 50_000);
    let (a, b) = sift(&frames, &records).map_err(|e| e.to_string())?;
    if a.len() < target {
        return Err(format!("only {} sifted bits under intercept-resend", a.len()));
    }
    let a = KeyMaterial::new(a.bits[..target].to_vec(), KeyStage::Sifted);
    let b = KeyMaterial::new(b.bits[..target].to_vec(), KeyStage::Sifted);
    let q = a.mismatches(&b) as f64 / target as f64;
    let exact = oracles::enumerate_bb84(true);
    let clean = oracles::enumerate_bb84(false);
    check(
        (fraction - clean.sift_fraction.to_f64()).abs() <= 0.002
            && (q - exact.qber.to_f64()).abs() <= 0.01
            && noiseless_errors == 0,
        format!(
            "sift fraction {fraction:.4} (oracle {:?}), intercept-resend qber {q:.4} (oracle {:?}), noiseless errors {noiseless_errors}",
            clean.sift_fraction, exact.qber
        ),
    )
}

fn ac5_reconciliation() -> Outcome {
    use rand::Rng;
    let t = Instant::now();
    let (n, q) = (10_000usize, 0.05);
    let mut residual_runs = 0;
    let mut leak = 0u64;
    for s in 0..100u64 {
        let mut rng = seed::stream_rng(seed::derive(5, "ac5", s));
        let alice: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let bob: Vec<u8> = alice.iter().map(|&x| x ^ u8::from(rng.random::<f64>() < q)).collect();
        let a = KeyMaterial::new(alice, KeyStage::Sifted);
        let b = KeyMaterial::new(bob, KeyStage::Sifted);
        match cascade_correct(&a, &b, q, 6, seed::derive(5, "cascade", s)) {
            Ok(out) => {
                residual_runs += usize::from(out.corrected.mismatches(&a) != 0);
                leak += out.leakage_bits;
            }
            Err(_) => residual_runs += 1,
        }
    }
    let mean = leak as f64 / 100.0;
    let bound = 1.35 * n as f64 * binary_entropy(q);
    let secs = t.elapsed().as_secs_f64();
    check(
        residual_runs == 0 && mean <= bound && secs < 60.0,
        format!("runs with residual errors {residual_runs}/100, mean leakage {mean:.0} <= {bound:.0} bits (f = {:.3}), {secs:.1} s",
            mean / (n as f64 * binary_entropy(q))),
    )
}

fn ac6_key_rate_threshold(runs: &Runs) -> Outcome {
    let root = oracles::bisect(|x| 1.0 - 2.0 * oracles::h2(x), 0.01, 0.3, 1e-12);
    let optimistic = DecoyBounds {
        y1_lower: 1.0,
        e1_upper: 0.0,
        ..DecoyBounds::default()
    };
    let direct_zero = (0..=380).all(|i| {
        let q = 0.12 + i as f64 * 1e-3;
        secret_key_length(10_000_000, q, 0, &optimistic, 1.0, 1.0, 0) == 0
    });
    let noisy = &runs.noisy.report;
    let default = &runs.default_a.report;
    check(
        (root - 0.110).abs() <= 0.001
            && direct_zero
            && noisy.qber >= 0.12
            && noisy.final_key_bits == 0
            && default.final_key_bits > 0,
        format!(
            "zero crossing {root:.5}; key 0 for q in [0.12, 0.5]: {direct_zero}; noisy scenario qber {:.4} -> {} bits; default qber {:.4} -> {} bits",
            noisy.qber, noisy.final_key_bits, default.qber, default.final_key_bits
        ),
    )
}

fn ac7_decoy_soundness() -> Outcome {
    let params = ProtocolParams::default();
    let n_sigma = ScenarioConfig::bundled_default().postprocessing.decoy_n_sigma;
    let mut failures = Vec::new();
    let mut informative = 0;
    for s in 0..100u64 {
        let eta = 0.005 * 1.05f64.powi(s as i32 % 60);
        let det = DetectorModel {
            error_prob: 0.005 + 0.0005 * (s % 40) as f64,
            dark_count_prob_per_slot: 1e-6 * (1 + s % 5) as f64,
            ..DetectorModel::default()
        };
        let run = common::simulate_link(&params, 400_000, eta, &det, Eavesdropper::None, seed::derive(7, "ac7", s));
        let stats = class_statistics(&run.frames, &run.records);
        let b = decoy_bounds(&stats, &params.intensity_levels, Some(n_sigma)).map_err(|e| e.to_string())?;
        let (y1, e1) = (run.ledger.yield_n(1), run.ledger.error_rate_n(1));
        informative += usize::from(b.y1_lower > 0.0);
        if !(b.y1_lower <= y1 && b.e1_upper >= e1) {
            failures.push(format!("run {s}: Y1 {:.3e} <= {y1:.3e}, e1 {:.4} >= {e1:.4}", b.y1_lower, b.e1_upper));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("100/100 runs sound ({informative} with a nonzero Y1 bound)")
        } else {
            failures.join("; ")
        },
    )
}

/// Depth-first walk of every event string up to `depth`; counts strings and
/// any that enter QKD_ACTIVE without CLOSED_LOOP_TRACKING earlier on the path.
fn enumerate_pat(state: LinkState, clt_seen: bool, depth: usize, cfg: &PatConfig, visited: &mut u64, bad: &mut u64) {
    if depth == 0 {
        return;
    }
    for kind in EventKind::ALL {
        *visited += 1;
        let t = state.entered_at_s + 20.0;
        let mut s = state;
        let mut seen = clt_seen;
        let mut pending = Some(LinkEvent { kind, t_s: t });
        while let Some(ev) = pending.take() {
            let (next, action) = step(s, ev, cfg).expect("monotone times");
            seen |= next.state == State::ClosedLoopTracking;
            if next.state == State::QkdActive && s.state != State::QkdActive && !seen {
                *bad += 1;
            }
            s = next;
            if action == Some(skylink_core::pat::Action::QkdGo) {
                pending = Some(LinkEvent { kind: EventKind::QkdGo, t_s: t });
            }
        }
        enumerate_pat(s, seen, depth - 1, cfg, visited, bad);
    }
}

fn ac8_pat() -> Outcome {
    log::set_max_level(log::LevelFilter::Off);
    let cfg = PatConfig::default();
    let (mut visited, mut bad) = (0u64, 0u64);
    enumerate_pat(LinkState::idle(), false, 8, &cfg, &mut visited, &mut bad);

    let pass = propagate_pass(&OrbitConfig::default(), &StationConfig::default(), 1.0).map_err(|e| e.to_string())?;
    let tl = skylink_core::pat::run_pass(pass.samples(), &[(100.0, 110.0)], &cfg, 1).map_err(|e| e.to_string())?;
    let active = tl.intervals(State::QkdActive);
    let reacquired = active.len() == 2 && active[1].0 >= 110.0 && tl.state_at(105.0) == State::Reacquiring;
    let oracle = oracles::interval_availability(&active, tl.start_s, tl.end_s);
    check(
        bad == 0 && reacquired && tl.availability == oracle,
        format!(
            "{visited} event strings, {bad} reach QKD_ACTIVE without tracking; active intervals {active:?}; availability {} vs oracle {oracle}",
            tl.availability
        ),
    )
}

fn ac9_determinism(runs: &Runs) -> Outcome {
    let (a, b) = (serialize_artifacts(&runs.default_a), serialize_artifacts(&runs.default_b));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|((n, _), _)| *n).collect();
    let r = &runs.default_a.report;
    let expected = r.final_key_bits as f64 / r.qkd_active_s * r.configured_qubit_rate_hz / r.slot_rate_hz;
    let slowest = runs.default_secs.iter().max().unwrap().as_secs_f64();
    check(
        a == b
            && runs.default_a.key.is_some()
            && slowest < 300.0
            && r.configured_qubit_rate_hz == 2.25e9
            && (r.projected_key_rate_bps - expected).abs() <= 1e-9 * expected,
        format!(
            "{} artifacts identical across runs (differing: {differing:?}); slowest run {slowest:.1} s; projected {:.1} bit/s at {:.3e} Hz from {:.0e} simulated slots/s",
            a.len(),
            r.projected_key_rate_bps,
            r.configured_qubit_rate_hz,
            r.slot_rate_hz
        ),
    )
}

fn ac10_output_invariant(runs: &Runs) -> Outcome {
    let max_mu = runs.all().iter().map(|r| r.max_quantum_mu).fold(0.0, f64::max);
    let mut cfg = short_scenario();
    cfg.output_stage.soa_gain = 2.5;
    let violation = match run_mission(&cfg) {
        Err(e) => e.is_protocol_violation(),
        Ok(_) => false,
    };
    check(
        max_mu <= 1.0 && violation,
        format!("largest quantum mean photon number {max_mu}; overdriven output stage rejected as protocol violation: {violation}"),
    )
}

fn mission_runs() -> Result<Runs, String> {
    let cfg = ScenarioConfig::bundled_default();
    let t = Instant::now();
    let default_a = run_mission(&cfg).map_err(|e| e.to_string())?;
    let first = t.elapsed();
    let t = Instant::now();
    let default_b = run_mission(&cfg).map_err(|e| e.to_string())?;
    let second = t.elapsed();
    let mut noisy_cfg = short_scenario();
    noisy_cfg.detector.error_prob = 0.13;
    let noisy = run_mission(&noisy_cfg).map_err(|e| e.to_string())?;
    Ok(Runs {
        default_a,
        default_b,
        default_secs: [first, second],
        noisy,
    })
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |id: &str, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{id} {tag} {name}: {detail}");
    };
    report("AC1", "Kolmogorov structure function", ac1_kolmogorov());
    report("AC2", "AO coupling benefit", ac2_ao_benefit());
    report("AC3", "flat-pupil coupling optimum", ac3_flat_coupling());
    report("AC4", "BB84 sifting and error statistics", ac4_bb84_statistics());
    report("AC5", "Cascade reconciliation", ac5_reconciliation());
    match mission_runs() {
        Ok(runs) => {
            report("AC6", "key-rate threshold", ac6_key_rate_threshold(&runs));
            report("AC7", "decoy bound soundness", ac7_decoy_soundness());
            report("AC8", "PAT state machine", ac8_pat());
            report("AC9", "end-to-end determinism", ac9_determinism(&runs));
            report("AC10", "single-photon output invariant", ac10_output_invariant(&runs));
        }
        Err(e) => {
            report("AC6", "key-rate threshold", Err(format!("mission run failed: {e}")));
            report("AC7", "decoy bound soundness", ac7_decoy_soundness());
            report("AC8", "PAT state machine", ac8_pat());
            report("AC9", "end-to-end determinism", Err(format!("mission run failed: {e}")));
            report("AC10", "single-photon output invariant", Err(format!("mission run failed: {e}")));
        }
    }
    println!("acceptance: {} failed, {:.1} s", failed, started.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
