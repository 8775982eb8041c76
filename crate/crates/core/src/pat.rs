//! Pointing, acquisition and tracking: the link state machine and an
//! event-driven replay of a pass with cloud blockages.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PassSample;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum PatError {
    #[error("event {event:?} at {t_s} s precedes state entry at {entered_at_s} s")]
    Sequencing { event: EventKind, t_s: f64, entered_at_s: f64 },
    #[error("cloud blockages {0:?} and {1:?} overlap")]
    OverlappingBlockages((f64, f64), (f64, f64)),
    #[error("invalid blockage {0:?}: start must precede end")]
    Blockage((f64, f64)),
    #[error("invalid PAT configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum State {
    Idle,
    ProgramTrack,
    Acquiring,
    ClosedLoopTracking,
    QkdActive,
    Reacquiring,
    Lost,
    PassComplete,
}

impl State {
    pub const ALL: [State; 8] = [
        State::Idle,
        State::ProgramTrack,
        State::Acquiring,
        State::ClosedLoopTracking,
        State::QkdActive,
        State::Reacquiring,
        State::Lost,
        State::PassComplete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            State::Idle => "IDLE",
            State::ProgramTrack => "PROGRAM_TRACK",
            State::Acquiring => "ACQUIRING",
            State::ClosedLoopTracking => "CLOSED_LOOP_TRACKING",
            State::QkdActive => "QKD_ACTIVE",
            State::Reacquiring => "REACQUIRING",
            State::Lost => "LOST",
            State::PassComplete => "PASS_COMPLETE",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PassStart,
    UplinkBeaconDetected,
    DownlinkDetected,
    DownlinkLost,
    CloudStart,
    CloudEnd,
    Timeout,
    PassEnd,
    /// Raised by the machine itself once closed-loop tracking is established.
    QkdGo,
}

impl EventKind {
    pub const ALL: [EventKind; 9] = [
        EventKind::PassStart,
        EventKind::UplinkBeaconDetected,
        EventKind::DownlinkDetected,
        EventKind::DownlinkLost,
        EventKind::CloudStart,
        EventKind::CloudEnd,
        EventKind::Timeout,
        EventKind::PassEnd,
        EventKind::QkdGo,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub kind: EventKind,
    pub t_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub state: State,
    pub entered_at_s: f64,
}

impl LinkState {
    pub fn idle() -> Self {
        Self {
            state: State::Idle,
            entered_at_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    /// Feed `QkdGo` back into the machine at the same instant.
    QkdGo,
    /// The pair has no transition; the state is kept.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatConfig {
    /// Pass start to uplink beacon detection.
    pub acquisition_delay_s: f64,
    /// Extra time spent in the lead-and-follow fallback before detection.
    #[serde(default)]
    pub lead_follow_delay_s: f64,
    /// Beacon detection to downlink detection.
    pub downlink_delay_s: f64,
    /// Cloud end to downlink re-detection.
    pub reacquisition_delay_s: f64,
    pub reacquisition_timeout_s: f64,
    /// Each delay is lengthened by a uniform draw in `[0, delay_jitter_s)`.
    #[serde(default)]
    pub delay_jitter_s: f64,
}

impl Default for PatConfig {
    fn default() -> Self {
        Self {
            acquisition_delay_s: 5.0,
            lead_follow_delay_s: 0.0,
            downlink_delay_s: 1.0,
            reacquisition_delay_s: 2.0,
            reacquisition_timeout_s: 30.0,
            delay_jitter_s: 0.0,
        }
    }
}

impl PatConfig {
    pub fn zero_delays() -> Self {
        Self {
            acquisition_delay_s: 0.0,
            lead_follow_delay_s: 0.0,
            downlink_delay_s: 0.0,
            reacquisition_delay_s: 0.0,
            delay_jitter_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        for (name, v) in [
            ("acquisition_delay_s", self.acquisition_delay_s),
            ("lead_follow_delay_s", self.lead_follow_delay_s),
            ("downlink_delay_s", self.downlink_delay_s),
            ("reacquisition_delay_s", self.reacquisition_delay_s),
            ("delay_jitter_s", self.delay_jitter_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                e.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.reacquisition_timeout_s > 0.0) {
            e.push(format!(
                "reacquisition_timeout_s must be positive, got {}",
                self.reacquisition_timeout_s
            ));
        }
        e
    }
}

/// Transition function. Total over all (state, event) pairs: pairs without
/// a transition keep the state and report [`Action::Ignored`].
pub fn step(state: LinkState, event: LinkEvent, cfg: &PatConfig) -> Result<(LinkState, Option<Action>), PatError> {
    if !(event.t_s >= state.entered_at_s) {
        return Err(PatError::Sequencing {
            event: event.kind,
            t_s: event.t_s,
            entered_at_s: state.entered_at_s,
        });
    }
    use EventKind as E;
    use State as S;
    let timed_out = event.t_s - state.entered_at_s >= cfg.reacquisition_timeout_s;
    let next = match (state.state, event.kind) {
        (S::PassComplete, E::PassEnd) => None,
        (_, E::PassEnd) => Some(S::PassComplete),
        (S::Idle | S::PassComplete, E::PassStart) => Some(S::ProgramTrack),
        (S::ProgramTrack, E::UplinkBeaconDetected) => Some(S::Acquiring),
        (S::Acquiring | S::Reacquiring, E::DownlinkDetected) => Some(S::ClosedLoopTracking),
        (S::ClosedLoopTracking, E::QkdGo) => Some(S::QkdActive),
        (S::Acquiring | S::ClosedLoopTracking | S::QkdActive, E::CloudStart | E::DownlinkLost) => Some(S::Reacquiring),
        (S::Acquiring | S::Reacquiring, E::Timeout) if timed_out => Some(S::Lost),
        _ => None,
    };
    Ok(match next {
        Some(s) => {
            let action = (s == S::ClosedLoopTracking).then_some(Action::QkdGo);
            (
                LinkState {
                    state: s,
                    entered_at_s: event.t_s,
                },
                action,
            )
        }
        None => {
            log::warn!("PAT: {:?} ignored in {}", event.kind, state.state);
            (state, Some(Action::Ignored))
        }
    })
}

/// The state machine plus its append-only transition history.
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub cfg: PatConfig,
    pub state: LinkState,
    pub history: Vec<(f64, State)>,
}

impl Machine {
    pub fn new(cfg: PatConfig) -> Self {
        let state = LinkState::idle();
        Self {
            cfg,
            state,
            history: vec![(state.entered_at_s, state.state)],
        }
    }

    /// Apply an event and any `QkdGo` it triggers.
    pub fn handle(&mut self, event: LinkEvent) -> Result<State, PatError> {
        let mut pending = Some(event);
        while let Some(ev) = pending.take() {
            let before = self.state.state;
            let (next, action) = step(self.state, ev, &self.cfg)?;
            self.state = next;
            if next.state != before {
                self.history.push((next.entered_at_s, next.state));
            }
            if action == Some(Action::QkdGo) {
                pending = Some(LinkEvent {
                    kind: EventKind::QkdGo,
                    t_s: ev.t_s,
                });
            }
        }
        Ok(self.state.state)
    }
}

pub const TIMELINE_CSV_HEADER: &str = "t_s,state";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassTimeline {
    pub transitions: Vec<(f64, State)>,
    pub start_s: f64,
    pub end_s: f64,
    pub availability: f64,
}

impl PassTimeline {
    /// Intervals spent in `state`, in time order.
    pub fn intervals(&self, state: State) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (i, &(t, s)) in self.transitions.iter().enumerate() {
            if s == state {
                let end = self.transitions.get(i + 1).map_or(self.end_s, |&(t1, _)| t1);
                if end > t {
                    out.push((t, end));
                }
            }
        }
        out
    }

    pub fn time_in(&self, state: State) -> f64 {
        self.intervals(state).iter().map(|(a, b)| b - a).sum()
    }

    pub fn state_at(&self, t_s: f64) -> State {
        self.transitions
            .iter()
            .take_while(|(t, _)| *t <= t_s)
            .last()
            .map_or(State::Idle, |&(_, s)| s)
    }

    pub fn final_state(&self) -> State {
        self.transitions.last().map_or(State::Idle, |&(_, s)| s)
    }

    /// Last state before the pass ended.
    pub fn terminal_state(&self) -> State {
        self.transitions
            .iter()
            .rev()
            .find(|(_, s)| *s != State::PassComplete)
            .map_or(State::Idle, |&(_, s)| s)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TIMELINE_CSV_HEADER}")?;
        for (t, s) in &self.transitions {
            writeln!(out, "{t},{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scheduled {
    t: f64,
    seq: u64,
    kind: EventKind,
    epoch: u64,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t: f64, kind: EventKind, epoch: u64) {
        self.seq += 1;
        self.heap.push(Scheduled {
            t,
            seq: self.seq,
            kind,
            epoch,
        });
    }
}

/// Validated, sorted and clipped to `[start, end]`.
fn check_blockages(blockages: &[(f64, f64)], start: f64, end: f64) -> Result<Vec<(f64, f64)>, PatError> {
    let mut b: Vec<(f64, f64)> = blockages.to_vec();
    for &iv in &b {
        if !(iv.0 < iv.1) {
            return Err(PatError::Blockage(iv));
        }
    }
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    for w in b.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(PatError::OverlappingBlockages(w[0], w[1]));
        }
    }
    Ok(b.into_iter()
        .map(|(s, e)| (s.max(start), e.min(end)))
        .filter(|(s, e)| s < e)
        .collect())
}

/// Replay a pass: program track from the first visible sample, beacon and
/// downlink detection after the configured delays, cloud blockages forcing
/// re-acquisition, and the pass end at the last visible sample.
///
/// Availability is the time spent in `QKD_ACTIVE` over the visible time.
pub fn run_pass(
    samples: &[PassSample],
    cloud_blockages: &[(f64, f64)],
    cfg: &PatConfig,
    seed: u64,
) -> Result<PassTimeline, PatError> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(PatError::Config(errs.join("; ")));
    }
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Ok(PassTimeline {
            transitions: Vec::new(),
            start_s: 0.0,
            end_s: 0.0,
            availability: 0.0,
        });
    };
    let (start, end) = (first.t_s, last.t_s);
    let blockages = check_blockages(cloud_blockages, start, end)?;
    let mut rng = seed::stream_rng(seed);
    let delay = |base: f64, rng: &mut ChaCha8Rng| {
        if cfg.delay_jitter_s > 0.0 {
            base + rng.random::<f64>() * cfg.delay_jitter_s
        } else {
            base
        }
    };

    let mut q = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    // epoch 0 marks unconditional events
    q.push(start, EventKind::PassStart, 0);
    for &(s, e) in &blockages {
        q.push(s, EventKind::CloudStart, 0);
        q.push(e, EventKind::CloudEnd, 0);
    }
    q.push(end, EventKind::PassEnd, 0);

    let mut m = Machine::new(cfg.clone());
    m.state.entered_at_s = start;
    m.history.clear();
    let mut epoch = 1u64;
    let mut clouded = false;
    while let Some(ev) = q.heap.pop() {
        if ev.epoch != 0 && ev.epoch != epoch {
            continue;
        }
        match ev.kind {
            EventKind::CloudStart => clouded = true,
            EventKind::CloudEnd => clouded = false,
            _ => {}
        }
        let before = m.state.state;
        m.handle(LinkEvent { kind: ev.kind, t_s: ev.t })?;
        let now = m.state.state;
        if now == State::PassComplete {
            break;
        }
        let changed = now != before;
        if changed {
            epoch += 1;
            if matches!(now, State::Acquiring | State::Reacquiring) {
                q.push(ev.t + cfg.reacquisition_timeout_s, EventKind::Timeout, epoch);
            }
        }
        // schedule the next detection whenever the sky is clear
        if !clouded && (changed || ev.kind == EventKind::CloudEnd) {
            let next = match now {
                State::ProgramTrack => Some((
                    delay(cfg.acquisition_delay_s + cfg.lead_follow_delay_s, &mut rng),
                    EventKind::UplinkBeaconDetected,
                )),
                State::Acquiring if changed => Some((delay(cfg.downlink_delay_s, &mut rng), EventKind::DownlinkDetected)),
                State::Acquiring => Some((delay(cfg.reacquisition_delay_s, &mut rng), EventKind::DownlinkDetected)),
                State::Reacquiring => Some((delay(cfg.reacquisition_delay_s, &mut rng), EventKind::DownlinkDetected)),
                _ => None,
            };
            if let Some((d, kind)) = next {
                q.push(ev.t + d, kind, epoch);
            }
        }
    }
    let mut timeline = PassTimeline {
        transitions: m.history,
        start_s: start,
        end_s: end,
        availability: 0.0,
    };
    let visible = end - start;
    if visible > 0.0 {
        timeline.availability = timeline.time_in(State::QkdActive) / visible;
    }
    Ok(timeline)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: EventKind, t_s: f64) -> LinkEvent {
        LinkEvent { kind, t_s }
    }

    fn samples(duration: f64) -> Vec<PassSample> {
        (0..=(duration as usize))
            .map(|i| PassSample {
                t_s: i as f64,
                elevation_deg: 45.0,
                azimuth_deg: 0.0,
                slant_range_km: 700.0,
            })
            .collect()
    }

    #[test]
    fn nominal_sequence() {
        let mut m = Machine::new(PatConfig::default());
        assert_eq!(m.handle(ev(EventKind::PassStart, 0.0)).unwrap(), State::ProgramTrack);
        assert_eq!(m.handle(ev(EventKind::UplinkBeaconDetected, 1.0)).unwrap(), State::Acquiring);
        assert_eq!(m.handle(ev(EventKind::DownlinkDetected, 2.0)).unwrap(), State::QkdActive);
        let states: Vec<State> = m.history.iter().map(|&(_, s)| s).collect();
        assert_eq!(
            states,
            vec![State::Idle, State::ProgramTrack, State::Acquiring, State::ClosedLoopTracking, State::QkdActive]
        );
    }

    #[test]
    fn cloud_and_reacquisition() {
        let cfg = PatConfig::default();
        let s = LinkState { state: State::QkdActive, entered_at_s: 10.0 };
        let (s, _) = step(s, ev(EventKind::CloudStart, 11.0), &cfg).unwrap();
        assert_eq!(s.state, State::Reacquiring);
        let (s, a) = step(s, ev(EventKind::CloudEnd, 12.0), &cfg).unwrap();
        assert_eq!((s.state, a), (State::Reacquiring, Some(Action::Ignored)));
        let (s, a) = step(s, ev(EventKind::DownlinkDetected, 13.0), &cfg).unwrap();
        assert_eq!((s.state, a), (State::ClosedLoopTracking, Some(Action::QkdGo)));
        let (s, _) = step(s, ev(EventKind::QkdGo, 13.0), &cfg).unwrap();
        assert_eq!(s.state, State::QkdActive);
    }

    #[test]
    fn timeout_only_after_configured_max() {
        let cfg = PatConfig::default();
        let s = LinkState { state: State::Reacquiring, entered_at_s: 0.0 };
        assert_eq!(step(s, ev(EventKind::Timeout, 29.0), &cfg).unwrap().0.state, State::Reacquiring);
        let (lost, _) = step(s, ev(EventKind::Timeout, 30.0), &cfg).unwrap();
        assert_eq!(lost.state, State::Lost);
        assert_eq!(step(lost, ev(EventKind::PassEnd, 40.0), &cfg).unwrap().0.state, State::PassComplete);
    }

    #[test]
    fn sequencing_error() {
        let s = LinkState { state: State::Acquiring, entered_at_s: 5.0 };
        assert!(matches!(
            step(s, ev(EventKind::DownlinkDetected, 4.0), &PatConfig::default()),
            Err(PatError::Sequencing { .. })
        ));
    }

    #[test]
    fn pass_complete_absorbs() {
        let cfg = PatConfig::default();
        let s = LinkState { state: State::PassComplete, entered_at_s: 0.0 };
        for k in EventKind::ALL {
            let next = step(s, ev(k, 1.0), &cfg).unwrap().0.state;
            if k == EventKind::PassStart {
                assert_eq!(next, State::ProgramTrack);
            } else {
                assert_eq!(next, State::PassComplete);
            }
        }
    }

    #[test]
    fn clear_sky_zero_delays() {
        let t = run_pass(&samples(300.0), &[], &PatConfig::zero_delays(), 1).unwrap();
        assert_eq!(t.availability, 1.0);
        assert_eq!(t.final_state(), State::PassComplete);
    }

    #[test]
    fn blockage_removes_its_share() {
        let t = run_pass(&samples(100.0), &[(40.0, 60.0)], &PatConfig::zero_delays(), 1).unwrap();
        assert!((t.availability - 0.8).abs() < 1e-12);
    }

    #[test]
    fn long_blockage_loses_link() {
        let t = run_pass(&samples(100.0), &[(30.0, 80.0)], &PatConfig::zero_delays(), 1).unwrap();
        assert!((t.availability - 0.3).abs() < 1e-12);
        assert_eq!(t.terminal_state(), State::Lost);
        assert_eq!(t.state_at(70.0), State::Lost);
    }

    #[test]
    fn overlapping_blockages_rejected() {
        let err = run_pass(&samples(100.0), &[(10.0, 30.0), (20.0, 40.0)], &PatConfig::default(), 1);
        assert!(matches!(err, Err(PatError::OverlappingBlockages(..))));
    }

    #[test]
    fn delays_reduce_availability() {
        let cfg = PatConfig::default();
        let t = run_pass(&samples(300.0), &[(100.0, 110.0)], &cfg, 1).unwrap();
        // 6 s to first lock, 10 s cloud, 2 s reacquisition
        assert!((t.availability - (300.0 - 6.0 - 12.0) / 300.0).abs() < 1e-12);
    }

    #[test]
    fn timeline_csv() {
        let t = run_pass(&samples(10.0), &[], &PatConfig::zero_delays(), 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_s,state\n0,PROGRAM_TRACK\n"));
        assert!(text.ends_with("10,PASS_COMPLETE\n"));
    }
}
