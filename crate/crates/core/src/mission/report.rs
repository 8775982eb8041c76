//! Pass report: schema, self-consistency check, JSON and CSV emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::link::ClassStats;
use crate::postprocessing::{secret_key_length, DecoyBounds};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub sent: u64,
    pub clicks: u64,
    pub matched: u64,
    pub errors: u64,
    pub gain: f64,
    pub qber: f64,
}

impl From<&ClassStats> for ClassReport {
    fn from(s: &ClassStats) -> Self {
        Self {
            sent: s.sent,
            clicks: s.clicks,
            matched: s.matched,
            errors: s.errors,
            gain: s.gain(),
            qber: s.qber(),
        }
    }
}

impl ClassReport {
    pub fn stats(&self) -> ClassStats {
        ClassStats {
            sent: self.sent,
            clicks: self.clicks,
            matched: self.matched,
            errors: self.errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub seed: u64,
    pub pass_duration_s: f64,
    pub peak_elevation_deg: f64,
    pub qkd_active_s: f64,
    pub availability_fraction: f64,
    pub terminal_state: String,
    pub mean_coupling_eta: f64,
    pub mean_channel_eta: f64,
    pub ao_steps: u64,
    pub slot_rate_hz: f64,
    pub configured_qubit_rate_hz: f64,
    pub transmitted_slots: u64,
    pub quantum_slots: u64,
    pub detected_slots: u64,
    pub double_clicks: u64,
    pub signal: ClassReport,
    pub decoy: ClassReport,
    pub vacuum: ClassReport,
    pub signal_mu: f64,
    pub y0: f64,
    pub y1_lower: f64,
    pub e1_upper: f64,
    pub sifted_bits: u64,
    pub sample_bits: u64,
    pub qber: f64,
    pub corrected_bits: u64,
    /// Bits disclosed by reconciliation (parities and verification hash).
    pub leakage_bits: u64,
    pub pa_margin_bits: u64,
    pub final_key_bits: u64,
    /// Final key bits per second of QKD_ACTIVE time, rescaled from the
    /// simulated slot rate to the configured qubit rate.
    pub projected_key_rate_bps: f64,
    pub alarms: u64,
    pub abort_reason: Option<String>,
}

/// Column order of the CSV report.
pub const REPORT_CSV_COLUMNS: [&str; 33] = [
    "seed",
    "pass_duration_s",
    "peak_elevation_deg",
    "qkd_active_s",
    "availability_fraction",
    "terminal_state",
    "mean_coupling_eta",
    "mean_channel_eta",
    "ao_steps",
    "slot_rate_hz",
    "configured_qubit_rate_hz",
    "transmitted_slots",
    "quantum_slots",
    "detected_slots",
    "double_clicks",
    "signal_gain",
    "signal_qber",
    "decoy_gain",
    "decoy_qber",
    "vacuum_gain",
    "vacuum_qber",
    "y1_lower",
    "e1_upper",
    "sifted_bits",
    "sample_bits",
    "qber",
    "corrected_bits",
    "leakage_bits",
    "pa_margin_bits",
    "final_key_bits",
    "projected_key_rate_bps",
    "alarms",
    "abort_reason",
];

impl PassReport {
    fn bounds(&self) -> DecoyBounds {
        DecoyBounds {
            y0: self.y0,
            y1_lower: self.y1_lower,
            e1_upper: self.e1_upper,
            y1_lower_raw: self.y1_lower,
            e1_upper_raw: self.e1_upper,
            warnings: Vec::new(),
        }
    }

    /// Key length implied by the report's own fields.
    pub fn recomputed_key_length(&self) -> u64 {
        secret_key_length(
            self.corrected_bits,
            self.qber,
            self.leakage_bits,
            &self.bounds(),
            self.signal.gain,
            self.signal_mu,
            self.pa_margin_bits,
        )
    }

    /// Every violated internal invariant.
    pub fn consistency_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        match &self.abort_reason {
            None if self.final_key_bits != self.recomputed_key_length() => e.push(format!(
                "final_key_bits {} differs from recomputed {}",
                self.final_key_bits,
                self.recomputed_key_length()
            )),
            Some(_) if self.final_key_bits != 0 => e.push("aborted run reports a key".into()),
            _ => {}
        }
        let classes = [&self.signal, &self.decoy, &self.vacuum];
        if classes.iter().map(|c| c.sent).sum::<u64>() != self.quantum_slots {
            e.push("per-class sent counts do not add up to quantum_slots".into());
        }
        if classes.iter().map(|c| c.clicks).sum::<u64>() != self.detected_slots {
            e.push("per-class clicks do not add up to detected_slots".into());
        }
        if self.quantum_slots > self.transmitted_slots || self.detected_slots > self.quantum_slots {
            e.push("slot conservation violated".into());
        }
        if self.sifted_bits > self.signal.matched || self.sample_bits + self.corrected_bits > self.sifted_bits {
            e.push("sifted key exceeds detections".into());
        }
        if self.final_key_bits > 0 && self.final_key_bits + self.leakage_bits > self.corrected_bits {
            e.push("final key exceeds corrected bits minus disclosed bits".into());
        }
        if !(0.0..=1.0).contains(&self.availability_fraction) {
            e.push("availability outside [0, 1]".into());
        }
        e
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serialisable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn csv_values(&self) -> Vec<String> {
        let f = |x: f64| format!("{x}");
        vec![
            self.seed.to_string(),
            f(self.pass_duration_s),
            f(self.peak_elevation_deg),
            f(self.qkd_active_s),
            f(self.availability_fraction),
            self.terminal_state.clone(),
            f(self.mean_coupling_eta),
            f(self.mean_channel_eta),
            self.ao_steps.to_string(),
            f(self.slot_rate_hz),
            f(self.configured_qubit_rate_hz),
            self.transmitted_slots.to_string(),
            self.quantum_slots.to_string(),
            self.detected_slots.to_string(),
            self.double_clicks.to_string(),
            f(self.signal.gain),
            f(self.signal.qber),
            f(self.decoy.gain),
            f(self.decoy.qber),
            f(self.vacuum.gain),
            f(self.vacuum.qber),
            f(self.y1_lower),
            f(self.e1_upper),
            self.sifted_bits.to_string(),
            self.sample_bits.to_string(),
            f(self.qber),
            self.corrected_bits.to_string(),
            self.leakage_bits.to_string(),
            self.pa_margin_bits.to_string(),
            self.final_key_bits.to_string(),
            f(self.projected_key_rate_bps),
            self.alarms.to_string(),
            self.abort_reason.clone().unwrap_or_default().replace([',', '\n'], ";"),
        ]
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", REPORT_CSV_COLUMNS.join(","), self.csv_values().join(","))
    }

    pub fn write<W: Write>(&self, format: ReportFormat, mut out: W) -> std::io::Result<()> {
        match format {
            ReportFormat::Json => out.write_all(self.to_json().as_bytes()),
            ReportFormat::Csv => out.write_all(self.to_csv().as_bytes()),
        }
    }
}

pub fn emit_report(report: &PassReport, format: ReportFormat, path: &Path) -> Result<(), ReportError> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<PassReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    PassReport::from_json(&text).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })
}
