mod common;

use common::{noiseless, signal_only, simulate_link};
use skylink_core::ao::{fit_modes, shwfs_measure, PupilGeometry, Reconstructor};
use skylink_core::geometry::{propagate_pass, OrbitConfig, StationConfig};
use skylink_core::link::{class_statistics, click_probability, DetectorModel, Eavesdropper, LEDGER_MAX_N};
use skylink_core::oracles;
use skylink_core::pat::{run_pass, PatConfig, State};
use skylink_core::postprocessing::{cascade_correct, decoy_bounds, estimate_qber, sift, KeyMaterial};
use skylink_core::transmitter::{detect_anomaly, generate_block, IntensityClass, ProtocolParams, Role};
use skylink_core::turbulence::generate_phase_screen;
use skylink_core::zernike::ZernikeBasis;
use skylink_core::WavefrontScreen;

#[test]
fn zernike_fit_residual_equals_orthonormal_projection_residual() {
    let screen = generate_phase_screen(64, 0.8 / 64.0, 0.08, 11).unwrap();
    let (n, px, d) = (screen.grid_n(), screen.pixel_m(), screen.pupil_diameter_m());
    let modes = 20;
    let basis = ZernikeBasis::for_screen(&screen, modes);
    let fit = fit_modes(&screen, &basis);
    let model = basis.synthesize(&fit.0);
    let mut resid: Vec<f64> = screen.phase().iter().zip(&model).map(|(p, m)| p - m).collect();
    let inside: Vec<usize> = (0..resid.len()).filter(|&i| screen.mask()[i]).collect();
    let mean = inside.iter().map(|&i| resid[i]).sum::<f64>() / inside.len() as f64;
    resid.iter_mut().for_each(|r| *r -= mean);
    let fit_ms = oracles::pupil_mean_square(&resid, n, px, d);

    let c = oracles::zernike_project(screen.phase(), n, px, d, modes + 1);
    let oracle_ms = oracles::pupil_mean_square(screen.phase(), n, px, d) - c.iter().map(|x| x * x).sum::<f64>();
    assert!((fit_ms - oracle_ms).abs() <= 1e-8 * oracle_ms.max(1.0), "{fit_ms} vs {oracle_ms}");
}

#[test]
fn reconstructor_recovers_low_order_modes() {
    let basis = ZernikeBasis::new(32, 0.8 / 32.0, 0.8, 9);
    let truth = [0.8, -0.5, 0.3, 0.2, -0.1, 0.0, 0.15, 0.0, 0.0];
    let screen = basis.screen(&truth);
    let rec = Reconstructor::new(PupilGeometry::of(&screen), 8, 9).unwrap();
    let slopes = shwfs_measure(&screen, 8, 0.0, 1).unwrap();
    let est = rec.reconstruct(&slopes).unwrap();
    for (k, (e, t)) in est.0.iter().zip(&truth).enumerate() {
        assert!((e - t).abs() < 0.05, "mode {}: {e} vs {t}", k + 2);
    }
    assert!(rec.condition_number() < 1e3);
}

#[test]
fn slope_noise_has_the_requested_rms() {
    let flat = WavefrontScreen::flat(64, 0.8 / 64.0).with_pupil(0.8).unwrap();
    let mut all = Vec::new();
    for seed in 0..20 {
        let m = shwfs_measure(&flat, 16, 0.1, seed).unwrap();
        for (i, &v) in m.validity_mask.iter().enumerate() {
            if v {
                all.push(m.x_slopes[i]);
                all.push(m.y_slopes[i]);
            }
        }
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let rms = (all.iter().map(|x| x * x).sum::<f64>() / all.len() as f64).sqrt();
    assert!(mean.abs() < 0.01, "{mean}");
    assert!((rms - 0.1).abs() < 0.005, "{rms}");
}

#[test]
fn transmitter_draws_match_the_configured_distributions() {
    let p = ProtocolParams::default();
    let frames = generate_block(&p, 400_000, 5).unwrap();
    let refs = frames.iter().filter(|f| f.role == Role::Reference).count();
    assert_eq!(refs, 400_000 / (p.reference_period as usize + 1));
    let q: Vec<_> = frames.iter().filter(|f| f.role == Role::Quantum).collect();
    let frac = |pred: &dyn Fn(&&&skylink_core::transmitter::PulseFrame) -> bool| {
        q.iter().filter(pred).count() as f64 / q.len() as f64
    };
    assert!((frac(&|f| f.basis == 1) - 0.5).abs() < 0.004);
    assert!((frac(&|f| f.bit == 1) - 0.5).abs() < 0.004);
    assert!((frac(&|f| f.intensity_class == IntensityClass::Signal) - 0.8).abs() < 0.004);
    assert!((frac(&|f| f.intensity_class == IntensityClass::Decoy) - 0.1).abs() < 0.003);
    assert!(q.iter().all(|f| f.mean_photon_number == p.intensity_levels.get(f.intensity_class)));
}

#[test]
fn anomaly_detector_flags_an_injected_excursion_only() {
    let trace: Vec<f64> = (0..400).map(|i| 0.5 + 0.001 * ((i * 7919 % 101) as f64 / 50.0 - 1.0)).collect();
    assert!(detect_anomaly(&trace, 8.0).unwrap().alarms.is_empty());
    let mut hit = trace.clone();
    hit[200] += 1.0;
    hit[201] += 1.0;
    let r = detect_anomaly(&hit, 8.0).unwrap();
    assert_eq!(r.regions, vec![(200, 201)]);
    assert_eq!(r.alarms.len(), 1);
    assert!(detect_anomaly(&trace[..5], 8.0).is_err());
}

#[test]
fn click_rates_follow_the_detector_model() {
    let det = DetectorModel::default();
    let eta = 0.05;
    let run = simulate_link(&ProtocolParams::default(), 1_000_000, eta, &det, Eavesdropper::None, 3);
    let stats = class_statistics(&run.frames, &run.records);
    for (class, mu) in [(0, 0.5), (1, 0.1), (2, 0.0)] {
        let s = &stats[class];
        let p = click_probability(mu, eta, &det);
        let sigma = (p * (1.0 - p) / s.sent as f64).sqrt();
        assert!((s.gain() - p).abs() < 5.0 * sigma + 1e-7, "class {class}: {} vs {p}", s.gain());
    }
}

#[test]
fn sifting_keeps_half_and_noiseless_links_agree() {
    let run = simulate_link(&signal_only(), 200_000, 0.5, &noiseless(), Eavesdropper::None, 8);
    let clicks = run.records.iter().filter(|r| r.outcome.is_click()).count();
    let (a, b) = sift(&run.frames, &run.records).unwrap();
    let frac = a.len() as f64 / clicks as f64;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");
    assert_eq!(a.mismatches(&b), 0);
}

#[test]
fn intercept_resend_gives_a_quarter_error_rate() {
    let eve = Eavesdropper::InterceptResend { resend_mu: 1.0 };
    let run = simulate_link(&signal_only(), 200_000, 1.0, &noiseless(), eve, 9);
    let (a, b) = sift(&run.frames, &run.records).unwrap();
    let q = a.mismatches(&b) as f64 / a.len() as f64;
    let oracle = oracles::enumerate_bb84(true).qber.to_f64();
    assert!((q - oracle).abs() < 0.01, "{q}");
}

#[test]
fn cascade_reconciles_and_sampling_is_unbiased() {
    let run = simulate_link(&signal_only(), 400_000, 0.5, &DetectorModel { error_prob: 0.03, ..noiseless() }, Eavesdropper::None, 4);
    let (a, b) = sift(&run.frames, &run.records).unwrap();
    let (q, a, b) = estimate_qber(&a, &b, 0.1, 2).unwrap();
    assert!((q - 0.03).abs() < 0.01, "{q}");
    for seed in 0..10 {
        let out = cascade_correct(&a, &b, q, 6, seed).unwrap();
        assert_eq!(out.corrected.mismatches(&a), 0);
        assert!(out.leakage_bits >= out.parity_bits);
    }
    let empty = KeyMaterial::new(Vec::new(), a.stage);
    assert!(cascade_correct(&empty, &b, 0.03, 6, 0).is_err());
}

#[test]
fn decoy_bounds_hold_against_the_photon_ledger() {
    let det = DetectorModel::default();
    let run = simulate_link(&ProtocolParams::default(), 2_000_000, 0.05, &det, Eavesdropper::None, 21);
    let stats = class_statistics(&run.frames, &run.records);
    let b = decoy_bounds(&stats, &ProtocolParams::default().intensity_levels, Some(3.0)).unwrap();
    assert!(b.y1_lower <= run.ledger.yield_n(1), "{} > {}", b.y1_lower, run.ledger.yield_n(1));
    assert!(b.e1_upper >= run.ledger.error_rate_n(1));
    let sent: u64 = run.ledger.sent.iter().flat_map(|c| c[..=LEDGER_MAX_N].iter()).sum();
    assert_eq!(sent, stats.iter().map(|s| s.sent).sum::<u64>());
}

#[test]
fn cloud_interruption_is_followed_by_reacquisition() {
    let pass = propagate_pass(&OrbitConfig::default(), &StationConfig::default(), 1.0).unwrap();
    let tl = run_pass(pass.samples(), &[(100.0, 110.0)], &PatConfig::default(), 1).unwrap();
    let active = tl.intervals(State::QkdActive);
    assert_eq!(active.len(), 2, "{:?}", tl.transitions);
    assert_eq!(active[0].1, 100.0);
    assert!(active[1].0 >= 110.0);
    assert_eq!(tl.state_at(105.0), State::Reacquiring);
    assert_eq!(tl.final_state(), State::PassComplete);
}

#[test]
fn four_beam_averaging_quarters_the_fading_variance() {
    use skylink_core::turbulence::scintillation_series;
    let one = scintillation_series(1e-3, 0.3, 1000.0, 200.0, 1, 12).unwrap();
    let four = scintillation_series(1e-3, 0.3, 1000.0, 200.0, 4, 12).unwrap();
    let ratio = four.normalized_variance() / one.normalized_variance();
    assert!((ratio - 0.25).abs() <= 0.25 * 0.15, "{ratio}");
    assert!((one.normalized_variance() - 0.3).abs() < 0.03);
}
