//! Classical post-processing session between Alice and Bob. Every public
//! message is authenticated by the sender, verified by the receiver and
//! logged with the number of key bits it discloses.

use crate::link::{ClassStats, DetectionRecord};
use crate::postprocessing::auth::SharedSecret;
use crate::postprocessing::cascade::cascade_correct;
use crate::postprocessing::decoy::{decoy_bounds, secret_key_length, DecoyBounds, BB84_QBER_THRESHOLD};
use crate::postprocessing::keystore::{Direction, TranscriptEntry};
use crate::postprocessing::privacy::toeplitz_pa;
use crate::postprocessing::sift::{estimate_qber, sample_positions, sift};
use crate::postprocessing::{pack_bits, KeyMaterial};
use crate::seed;
use crate::transmitter::{IntensityClass, IntensityLevels, PulseFrame};

use super::scenario::PostprocessingConfig;

pub struct SessionInput<'a> {
    /// Alice's frames for the slots Bob reported, in slot order.
    pub frames: &'a [PulseFrame],
    /// Bob's click records, in slot order.
    pub records: &'a [DetectionRecord],
    pub stats: &'a [ClassStats; 3],
    pub levels: &'a IntensityLevels,
    pub cfg: &'a PostprocessingConfig,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionOutcome {
    pub sifted_bits: u64,
    pub sample_bits: u64,
    pub qber: f64,
    pub corrected_bits: u64,
    /// Parities plus verification hash.
    pub leakage_bits: u64,
    pub bounds: Option<DecoyBounds>,
    pub final_key: Option<KeyMaterial>,
    pub abort: Option<String>,
    pub transcript: Vec<TranscriptEntry>,
}

struct Channel {
    alice: SharedSecret,
    bob: SharedSecret,
    transcript: Vec<TranscriptEntry>,
}

impl Channel {
    fn send(&mut self, direction: Direction, msg_type: &str, payload: &[u8], leakage: u64) -> Result<(), String> {
        let (tx, rx) = match direction {
            Direction::AliceToBob => (&mut self.alice, &mut self.bob),
            Direction::BobToAlice => (&mut self.bob, &mut self.alice),
        };
        let tag = tx.authenticate(payload).map_err(|e| e.to_string())?;
        if !rx.verify(payload, &tag).map_err(|e| e.to_string())? {
            return Err(format!("authentication of {msg_type} message failed"));
        }
        self.transcript.push(TranscriptEntry {
            direction,
            msg_type: msg_type.to_string(),
            payload_bytes: payload.len(),
            leakage_delta: leakage,
            tag,
        });
        Ok(())
    }
}

fn u64s(values: impl IntoIterator<Item = u64>) -> Vec<u8> {
    values.into_iter().flat_map(u64::to_le_bytes).collect()
}

/// Run sifting, QBER estimation, Cascade, decoy analysis and privacy
/// amplification. Any failure ends the session with `abort` set and no key.
pub fn run_session(input: &SessionInput) -> SessionOutcome {
    let secret = SharedSecret::from_seed(seed::derive(input.master_seed, "auth", 0), input.cfg.auth_secret_tags);
    let mut ch = Channel {
        alice: secret.clone(),
        bob: secret,
        transcript: Vec::new(),
    };
    let mut out = SessionOutcome::default();
    if let Err(reason) = session(input, &mut ch, &mut out) {
        out.abort = Some(reason);
        out.final_key = None;
    }
    out.transcript = ch.transcript;
    out
}

fn session(input: &SessionInput, ch: &mut Channel, out: &mut SessionOutcome) -> Result<(), String> {
    let cfg = input.cfg;
    let sigma = (cfg.decoy_n_sigma > 0.0).then_some(cfg.decoy_n_sigma);
    let bounds = decoy_bounds(input.stats, input.levels, sigma).map_err(|e| e.to_string());
    out.bounds = bounds.as_ref().ok().cloned();
    let mut detections = Vec::with_capacity(input.records.len() * 9);
    for r in input.records {
        detections.extend_from_slice(&r.slot.to_le_bytes());
        detections.push(r.bob_basis);
    }
    ch.send(Direction::BobToAlice, "detections", &detections, 0)?;

    let bases: Vec<u8> = input
        .frames
        .iter()
        .flat_map(|f| [f.basis, f.intensity_class.index() as u8])
        .collect();
    ch.send(Direction::AliceToBob, "bases_and_classes", &bases, 0)?;

    let decoy_bits: Vec<u8> = input
        .frames
        .iter()
        .zip(input.records)
        .filter(|(f, r)| f.intensity_class != IntensityClass::Signal && f.basis == r.bob_basis)
        .map(|(f, _)| f.bit)
        .collect();
    ch.send(Direction::AliceToBob, "decoy_reveal", &pack_bits(&decoy_bits), 0)?;

    let (alice, bob) = sift(input.frames, input.records).map_err(|e| e.to_string())?;
    out.sifted_bits = alice.len() as u64;

    let qber_seed = seed::derive(input.master_seed, "qber", 0);
    let sifted_alice = alice.bits.clone();
    let (qber, alice, bob) =
        estimate_qber(&alice, &bob, cfg.qber_sample_fraction, qber_seed).map_err(|e| e.to_string())?;
    let n = out.sifted_bits as usize;
    let k = (cfg.qber_sample_fraction * n as f64).round() as usize;
    let positions = sample_positions(n, k, qber_seed);
    out.sample_bits = k as u64;
    out.qber = qber;
    let mut sample = u64s(positions.iter().map(|&p| p as u64));
    sample.extend(pack_bits(&positions.iter().map(|&p| sifted_alice[p]).collect::<Vec<_>>()));
    ch.send(Direction::AliceToBob, "qber_sample", &sample, k as u64)?;
    let errors = (qber * k as f64).round() as u64;
    ch.send(Direction::BobToAlice, "qber_result", &errors.to_le_bytes(), 0)?;
    if qber >= BB84_QBER_THRESHOLD {
        return Err(format!(
            "estimated QBER {qber:.4} is at or above the BB84 threshold {BB84_QBER_THRESHOLD:.4}"
        ));
    }

    let cascade = cascade_correct(
        &alice,
        &bob,
        qber.max(cfg.cascade_qber_floor),
        cfg.cascade_passes,
        seed::derive(input.master_seed, "cascade", 0),
    )
    .map_err(|e| e.to_string());
    let cascade = match cascade {
        Ok(c) => c,
        Err(e) => {
            ch.send(Direction::AliceToBob, "reconciliation_abort", b"abort", 0)?;
            return Err(e);
        }
    };
    out.corrected_bits = cascade.corrected.len() as u64;
    out.leakage_bits = cascade.leakage_bits;
    let mut summary = u64s([cascade.passes as u64, cascade.parity_bits]);
    summary.extend(u64s(cascade.block_sizes.iter().map(|&b| b as u64)));
    ch.send(Direction::AliceToBob, "cascade_parities", &summary, cascade.parity_bits)?;
    ch.send(
        Direction::AliceToBob,
        "verification_hash",
        &(cascade.leakage_bits - cascade.parity_bits).to_le_bytes(),
        cascade.leakage_bits - cascade.parity_bits,
    )?;

    let bounds = bounds?;
    let signal = &input.stats[IntensityClass::Signal.index()];
    let len = secret_key_length(
        out.corrected_bits,
        qber,
        out.leakage_bits,
        &bounds,
        signal.gain(),
        input.levels.signal,
        cfg.pa_margin_bits,
    );
    if len == 0 {
        return Err("secret key length is zero".into());
    }

    let pa_seed = seed::derive(input.master_seed, "pa", 0);
    ch.send(Direction::AliceToBob, "privacy_amplification", &u64s([pa_seed, len]), 0)?;
    let ka = toeplitz_pa(&alice, pa_seed, len as usize).map_err(|e| e.to_string())?;
    let kb = toeplitz_pa(&cascade.corrected, pa_seed, len as usize).map_err(|e| e.to_string())?;
    if ka.bits != kb.bits {
        return Err("final keys differ after privacy amplification".into());
    }
    out.final_key = Some(ka);
    Ok(())
}
