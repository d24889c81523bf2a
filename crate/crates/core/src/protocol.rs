//! Two-device ranging session: a distance commitment (secure against
//! reduction, open to enlargement) followed by a verification exchange in
//! both directions using verification codes.
//!
//! The session alarms when the committed time of flight exceeds the
//! maximum range, when either detection reports an attack, or when the
//! verified time of flight differs from the committed one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary::{plan_attack, replay_frame, PowerPolicy, DEFAULT_REPLAY_DELAY_NS};
use crate::channel::{synthesize_timeline, LinkModel};
use crate::codec::{generate_code, CodeParams};
use crate::error::{invalid, Error, Result};
use crate::receiver::{backtrack_detect, AttackReason, DetectionOutcome, ReceiverConfig, Verdict};
use crate::{derive_seed, distance_m, tof_ns};

/// Commit-vs-verify tolerance: 10 cm of one-way distance.
pub const DEFAULT_PRECISION_NS: f64 = 0.33;
pub const DEFAULT_MAX_RANGE_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Committed,
    Verified,
    Alarmed(AttackReason),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Idle => f.write_str("Idle"),
            Self::Committed => f.write_str("Committed"),
            Self::Verified => f.write_str("Verified"),
            Self::Alarmed(reason) => write!(f, "Alarmed({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    pub t_commit_tof: Option<f64>,
    pub t_verify_tof: Option<f64>,
    pub t_max_tof: f64,
    pub precision_ns: f64,
    pub phase: Phase,
    trace: Vec<String>,
}

impl ProtocolState {
    pub fn new(max_range_m: f64, precision_ns: f64) -> Result<Self> {
        if !(max_range_m > 0.0) || !(precision_ns >= 0.0) {
            return Err(invalid("max range must be positive and precision non-negative"));
        }
        let mut s = Self {
            t_commit_tof: None,
            t_verify_tof: None,
            t_max_tof: tof_ns(max_range_m),
            precision_ns,
            phase: Phase::Idle,
            trace: Vec::new(),
        };
        s.log(format!("session idle t_max={:.3}ns precision={}ns", s.t_max_tof, precision_ns));
        Ok(s)
    }

    /// Line-oriented session log.
    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    fn log(&mut self, line: String) {
        self.trace.push(line);
    }

    fn transition(&mut self, to: Phase, detail: String) {
        self.log(format!("{} -> {} {detail}", self.phase, to));
        self.phase = to;
    }

    fn expect(&self, want: Phase, op: &str) -> Result<()> {
        if self.phase != want {
            return Err(Error::State(format!("{op} needs phase {want}, session is {}", self.phase)));
        }
        Ok(())
    }

    /// Records the committed time of flight: the true one over `link.d1_m`
    /// plus whatever one-way delay an adversary managed to add. Returns
    /// `t^c`; the session alarms with `RangeExceeded` beyond `t^max`.
    pub fn commitment_phase(&mut self, link: &LinkModel, adversary_delay_ns: f64) -> Result<f64> {
        self.expect(Phase::Idle, "commitment")?;
        link.validate()?;
        if !(adversary_delay_ns >= 0.0) {
            return Err(invalid("adversary delay must be non-negative"));
        }
        let t_c = tof_ns(link.d1_m) + adversary_delay_ns;
        self.t_commit_tof = Some(t_c);
        if t_c > self.t_max_tof {
            self.transition(Phase::Alarmed(AttackReason::RangeExceeded), format!("t_c={t_c:.3}ns > t_max"));
        } else {
            self.transition(Phase::Committed, format!("t_c={t_c:.3}ns"));
        }
        Ok(t_c)
    }

    /// Checks the detections of the verification exchange, one per
    /// direction, each timed from its own transmission. `t^v` is their
    /// mean. A direction without an accepted code cannot confirm `t^c` and
    /// counts as a mismatch.
    pub fn verification_phase(&mut self, detections: &[DetectionOutcome]) -> Result<Phase> {
        self.expect(Phase::Committed, "verification")?;
        if detections.is_empty() {
            return Err(invalid("verification needs at least one detection"));
        }
        let t_c = self.t_commit_tof.expect("committed sessions have t_c");
        let mut toas = Vec::with_capacity(detections.len());
        for (dir, d) in detections.iter().enumerate() {
            self.log(format!("direction {dir}: {}", d.to_csv_row()));
            match d.verdict {
                Verdict::AttackDetected { reason } => {
                    self.transition(Phase::Alarmed(reason), format!("direction {dir}"));
                    return Ok(self.phase);
                }
                Verdict::CodeAccepted { toa_ns } => toas.push(toa_ns),
                Verdict::NoCodeFound => {}
            }
        }
        if toas.len() < detections.len() {
            self.transition(Phase::Alarmed(AttackReason::ToFMismatch), "no code in some direction".into());
            return Ok(self.phase);
        }
        let t_v = toas.iter().sum::<f64>() / toas.len() as f64;
        self.t_verify_tof = Some(t_v);
        let detail = format!("t_c={t_c:.3}ns t_v={t_v:.3}ns");
        if (t_c - t_v).abs() <= self.precision_ns {
            self.transition(Phase::Verified, detail);
        } else {
            self.transition(Phase::Alarmed(AttackReason::ToFMismatch), detail);
        }
        Ok(self.phase)
    }
}

/// A relay attack on the challenge leg: the adversary replays the frame
/// `delay_ns` late at `gain_db`, optionally injecting `k` pulses on the
/// authentic copy. The round trip grows by `delay_ns`, the committed
/// one-way time of flight by half of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayAttack {
    pub delay_ns: f64,
    pub gain_db: f64,
    pub k: usize,
    pub power: PowerPolicy,
}

impl ReplayAttack {
    pub fn pure(delay_ns: f64, gain_db: f64) -> Self {
        Self { delay_ns, gain_db, k: 0, power: PowerPolicy::Constant(0.0) }
    }
}

impl Default for ReplayAttack {
    fn default() -> Self {
        Self::pure(DEFAULT_REPLAY_DELAY_NS, 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScenario {
    pub params: CodeParams,
    /// True geometry; `d2_m` is ignored, the receiver derives it from `t^c`.
    pub link: LinkModel,
    pub receiver: ReceiverConfig,
    pub max_range_m: f64,
    pub precision_ns: f64,
    pub attack: Option<ReplayAttack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub state: ProtocolState,
    pub detections: Vec<DetectionOutcome>,
}

/// Runs commitment and a two-direction verification over simulated
/// timelines. Deterministic in `seed`.
pub fn simulate_session(scenario: &SessionScenario, seed: u64) -> Result<SessionReport> {
    let SessionScenario { params, link, receiver, .. } = scenario;
    let mut state = ProtocolState::new(scenario.max_range_m, scenario.precision_ns)?;
    let one_way_delay = scenario.attack.as_ref().map_or(0.0, |a| a.delay_ns / 2.0);
    let t_c = state.commitment_phase(link, one_way_delay)?;
    if state.phase != Phase::Committed {
        return Ok(SessionReport { state, detections: Vec::new() });
    }

    let rx_link = LinkModel { d2_m: (distance_m(t_c) - link.d1_m).max(0.0), ..link.clone() };
    let toa = tof_ns(link.d1_m);
    let delay = scenario.attack.as_ref().map_or(0.0, |a| a.delay_ns);
    let lead = receiver.backtrack_window_ns + receiver.backtrack_step_ns;
    let tail = delay + params.tp_ns;

    let mut detections = Vec::with_capacity(2);
    for dir in 0..2u64 {
        let code = generate_code(*params, derive_seed(seed, &[dir, 1]))?;
        let attack = scenario.attack.as_ref().filter(|_| dir == 0);
        let plan = attack
            .map(|a| plan_attack(params, a.k, a.delay_ns, a.gain_db, &a.power, derive_seed(seed, &[dir, 2])))
            .transpose()?;
        let mut tl = synthesize_timeline(&code, link, plan.as_ref(), toa, lead, tail, derive_seed(seed, &[dir, 3]))?;
        if let Some(plan) = &plan {
            tl = replay_frame(&tl, plan)?;
        }
        let cfg = ReceiverConfig { rng_seed: derive_seed(seed, &[dir, 4]), ..receiver.clone() };
        detections.push(backtrack_detect(&tl, &code, &rx_link, &cfg)?);
    }
    state.verification_phase(&detections)?;
    Ok(SessionReport { state, detections })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(d1: f64) -> LinkModel {
        LinkModel { d1_m: d1, d2_m: 0.0, d3_m: 10.0, e_db: -8.0, p_sent: 1.0, p_adv_sent: 1.0, sigma_n2: 0.0, taps: vec![] }
    }

    fn scenario(attack: Option<ReplayAttack>) -> SessionScenario {
        let mut l = link(50.0);
        l.sigma_n2 = l.lambda_w2().unwrap() / 100.0;
        SessionScenario {
            params: CodeParams::new(64, 64, 1).unwrap(),
            link: l,
            receiver: ReceiverConfig { p_noise_threshold: 0.95, ..Default::default() },
            max_range_m: DEFAULT_MAX_RANGE_M,
            precision_ns: DEFAULT_PRECISION_NS,
            attack,
        }
    }

    #[test]
    fn commitment_times() {
        let mut s = ProtocolState::new(100.0, 0.33).unwrap();
        let t = s.commitment_phase(&link(10.0), 0.0).unwrap();
        assert!((t - 33.356).abs() < 1e-3);
        assert_eq!(s.phase, Phase::Committed);

        let mut s = ProtocolState::new(100.0, 0.33).unwrap();
        s.commitment_phase(&link(90.0), 100.0).unwrap();
        assert_eq!(s.phase, Phase::Alarmed(AttackReason::RangeExceeded));
        assert!(s.verification_phase(&[]).is_err());
        assert!(matches!(s.commitment_phase(&link(1.0), 0.0), Err(Error::State(_))));
        assert_eq!(s.phase, Phase::Alarmed(AttackReason::RangeExceeded));
    }

    #[test]
    fn out_of_order_is_state_error() {
        let mut s = ProtocolState::new(100.0, 0.33).unwrap();
        assert!(matches!(s.verification_phase(&[]), Err(Error::State(_))));
    }

    #[test]
    fn honest_session_verifies() {
        for seed in 0..10 {
            let r = simulate_session(&scenario(None), seed).unwrap();
            assert_eq!(r.state.phase, Phase::Verified, "{:?}", r.state.trace());
            assert_eq!(r.state.t_commit_tof, r.state.t_verify_tof);
        }
    }

    #[test]
    fn pure_replay_alarms() {
        for seed in 0..10 {
            let r = simulate_session(&scenario(Some(ReplayAttack::default())), seed).unwrap();
            assert_eq!(r.state.phase, Phase::Alarmed(AttackReason::ToFMismatch), "{:?}", r.state.trace());
            let t_c = r.state.t_commit_tof.unwrap();
            assert!((t_c - r.state.t_verify_tof.unwrap() - 100.0).abs() < 1e-6);
        }
    }

    #[test]
    fn energy_alarm_overrides_times() {
        let attack = ReplayAttack { k: 128, power: PowerPolicy::Constant(1.0), ..ReplayAttack::default() };
        let r = simulate_session(&scenario(Some(attack)), 4).unwrap();
        assert_eq!(r.state.phase, Phase::Alarmed(AttackReason::EnergyExceeded));
    }

    #[test]
    fn long_delay_exceeds_range() {
        let mut sc = scenario(Some(ReplayAttack::pure(400.0, 2.0)));
        sc.link.d1_m = 60.0;
        let r = simulate_session(&sc, 0).unwrap();
        assert_eq!(r.state.phase, Phase::Alarmed(AttackReason::RangeExceeded));
        assert!(r.detections.is_empty());
    }

    #[test]
    fn trace_records_transitions() {
        let r = simulate_session(&scenario(None), 1).unwrap();
        let t = r.state.trace();
        assert!(t[0].starts_with("session idle"));
        assert!(t.iter().any(|l| l.starts_with("Idle -> Committed")));
        assert!(t.last().unwrap().starts_with("Committed -> Verified"));
    }
}
