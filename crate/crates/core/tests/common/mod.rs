#![allow(dead_code)]

use std::path::PathBuf;

use serde_json::Value;
use skylink_core::mission::scenario::ScenarioConfig;

pub fn fixture(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let v: Value = serde_json::from_str(&text).expect("fixture json");
    v["values"].clone()
}

pub fn value(v: &Value, path: &[&str]) -> f64 {
    let mut cur = v;
    for p in path {
        cur = &cur[*p];
    }
    cur.as_f64().unwrap_or_else(|| panic!("missing fixture value {path:?}"))
}

/// High-elevation slice of the default pass with a slower AO loop, for
/// tests that need a full run in a few seconds.
pub fn short_scenario() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::bundled_default();
    cfg.station.elevation_mask_deg = 60.0;
    cfg.loop_cfg.rate_hz = 500.0;
    cfg.cloud_blockages = vec![(20.0, 24.0)];
    cfg
}

use skylink_core::link::{transmit_and_detect_with_ledger, DetectionRecord, DetectorModel, Eavesdropper, PhotonLedger, SlotSeries};
use skylink_core::transmitter::{generate_block, ProtocolParams, PulseFrame};

pub struct LinkRun {
    pub frames: Vec<PulseFrame>,
    pub records: Vec<DetectionRecord>,
    pub ledger: PhotonLedger,
}

/// `slots` frames through a constant-transmittance channel.
pub fn simulate_link(
    params: &ProtocolParams,
    slots: usize,
    eta: f64,
    det: &DetectorModel,
    eve: Eavesdropper,
    seed: u64,
) -> LinkRun {
    let frames = generate_block(params, slots, seed).unwrap();
    let eta_s = SlotSeries::constant(eta, 0, slots as u64);
    let one = SlotSeries::constant(1.0, 0, slots as u64);
    let (records, ledger) =
        transmit_and_detect_with_ledger(&frames, &eta_s, &one, det, eve, seed.wrapping_add(1)).unwrap();
    LinkRun {
        frames,
        records,
        ledger,
    }
}

/// Protocol with every quantum frame at the signal level and no reference frames.
pub fn signal_only() -> ProtocolParams {
    ProtocolParams {
        intensity_probabilities: [1.0, 0.0, 0.0],
        reference_period: 0,
        ..ProtocolParams::default()
    }
}

pub fn noiseless() -> DetectorModel {
    DetectorModel {
        efficiency: 1.0,
        dark_count_prob_per_slot: 0.0,
        error_prob: 0.0,
    }
}
