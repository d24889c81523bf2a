//! Attack planning: random-phase pulse injection aimed at annihilating the
//! authentic code, plus a delayed, amplified replay of the authentic frame.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{db_to_ratio, FrameSource, LinkModel, Peak, PulseEvent, Timeline};
use crate::codec::{CodeParams, VerificationCode};
use crate::error::{invalid, Error, Result};

/// Replay delay used throughout the validation runs.
pub const DEFAULT_REPLAY_DELAY_NS: f64 = 200.0;

const POSITION_STREAM: u64 = 0;
const PHASE_STREAM: u64 = 1;
const POWER_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub slot: usize,
    /// +1 or -1.
    pub phase: i8,
    /// Power of the pulse as received.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub k: usize,
    pub injections: Vec<Injection>,
    pub replay_delay_ns: f64,
    pub replay_gain_db: f64,
    pub seed: u64,
}

/// How the adversary sizes each injected pulse (received power).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PowerPolicy {
    Constant(f64),
    /// Per-pulse power drawn uniformly from `[low, high]`.
    Uniform { low: f64, high: f64 },
}

impl PowerPolicy {
    /// Constant power equal to the authentic pulses as received, the
    /// adversary's best choice for full cancellation.
    pub fn receiver_matched(link: &LinkModel) -> Result<Self> {
        Ok(Self::Constant(link.lambda_w2()?))
    }

    /// Constant power from the adversary's own transmitter and distance.
    pub fn from_transmitter(link: &LinkModel) -> Result<Self> {
        Ok(Self::Constant(link.lambda_adv2()?))
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant(p) if p >= 0.0 && p.is_finite() => Ok(()),
            Self::Uniform { low, high } if low >= 0.0 && high >= low && high.is_finite() => Ok(()),
            _ => Err(invalid(format!("bad power policy {self:?}"))),
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Self::Constant(p) => p,
            Self::Uniform { low, high } if high > low => rng.gen_range(low..=high),
            Self::Uniform { low, .. } => low,
        }
    }
}

impl AttackPlan {
    /// A plan with explicit injections, e.g. to reproduce a worked example.
    pub fn from_injections(injections: Vec<Injection>, replay_delay_ns: f64, replay_gain_db: f64, seed: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for inj in &injections {
            if !seen.insert(inj.slot) {
                return Err(invalid(format!("duplicate injection slot {}", inj.slot)));
            }
            if inj.phase != 1 && inj.phase != -1 {
                return Err(invalid(format!("injection phase must be +1 or -1, got {}", inj.phase)));
            }
            if !(inj.power >= 0.0 && inj.power.is_finite()) {
                return Err(invalid(format!("injection power must be non-negative, got {}", inj.power)));
            }
        }
        if !(replay_delay_ns > 0.0) || !replay_gain_db.is_finite() {
            return Err(invalid("replay delay must be positive and gain finite"));
        }
        Ok(Self { k: injections.len(), injections, replay_delay_ns, replay_gain_db, seed })
    }

    /// Amplitude multiplier of the replayed copy.
    pub fn replay_amplitude_gain(&self) -> f64 {
        db_to_ratio(self.replay_gain_db).sqrt()
    }

    /// CSV with columns `slot,phase,power`, ordered by slot.
    pub fn to_csv(&self) -> String {
        let mut rows = self.injections.clone();
        rows.sort_by_key(|i| i.slot);
        let mut out = String::from("slot,phase,power\n");
        for inj in rows {
            let _ = writeln!(out, "{},{},{}", inj.slot, inj.phase, inj.power);
        }
        out
    }
}

fn check_delay(params: &CodeParams, delay_ns: f64) -> Result<()> {
    if !(delay_ns > 0.0 && delay_ns < params.ts_ns) {
        return Err(invalid(format!(
            "replay delay {delay_ns} ns must lie in (0, {}) ns; longer delays show up as an RTT mismatch",
            params.ts_ns
        )));
    }
    Ok(())
}

/// Plans `k` injections at distinct, uniformly random slots with fair
/// random phases, plus a replay `delay_ns` late at `gain_db`.
pub fn plan_attack(
    params: &CodeParams,
    k: usize,
    delay_ns: f64,
    gain_db: f64,
    power_policy: &PowerPolicy,
    seed: u64,
) -> Result<AttackPlan> {
    params.validate()?;
    power_policy.validate()?;
    let n = params.n();
    if k > n {
        return Err(invalid(format!("k = {k} exceeds the {n}-slot code")));
    }
    check_delay(params, delay_ns)?;
    if !gain_db.is_finite() {
        return Err(invalid("replay gain must be finite"));
    }

    let mut pos_rng = ChaCha8Rng::seed_from_u64(seed);
    pos_rng.set_stream(POSITION_STREAM);
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed);
    phase_rng.set_stream(PHASE_STREAM);
    let mut power_rng = ChaCha8Rng::seed_from_u64(seed);
    power_rng.set_stream(POWER_STREAM);

    let injections = index::sample(&mut pos_rng, n, k)
        .into_iter()
        .map(|slot| Injection {
            slot,
            phase: if phase_rng.gen::<bool>() { 1 } else { -1 },
            power: power_policy.draw(&mut power_rng),
        })
        .collect();

    Ok(AttackPlan { k, injections, replay_delay_ns: delay_ns, replay_gain_db: gain_db, seed })
}

/// An adversary that watches the effect of each pulse it adds (it cannot
/// choose the phase outcome) and stops while the energy it has added
/// still leaves room for one worst-case amplification under
/// `energy_budget`. Each pulse goes to a fresh uniformly random slot.
///
/// Off by default in all harnesses; provided for experiments.
pub fn plan_adaptive_attack(
    code: &VerificationCode,
    energy_budget: f64,
    power: f64,
    delay_ns: f64,
    gain_db: f64,
    seed: u64,
) -> Result<AttackPlan> {
    check_delay(code.params(), delay_ns)?;
    if !(power > 0.0 && energy_budget.is_finite()) {
        return Err(invalid("adaptive attack needs positive power and a finite budget"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..code.n()).collect();
    let mut added = 0.0;
    let mut injections = Vec::new();
    for i in 0..order.len() {
        // Worst case for the next pulse is an amplification: 3x its power.
        if added + 3.0 * power > energy_budget {
            break;
        }
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
        let slot = order[i];
        let phase: i8 = if rng.gen::<bool>() { 1 } else { -1 };
        added += match code.slots()[slot] {
            0 => power,
            s if s == phase => 3.0 * power,
            _ => -power,
        };
        injections.push(Injection { slot, phase, power });
    }
    AttackPlan::from_injections(injections, delay_ns, gain_db, seed)
}

/// Returns a copy of `timeline` with the authentic frame replayed
/// `plan.replay_delay_ns` later at the plan's gain. The replay carries its
/// own preamble peak, which outshines the authentic one for gains above 0 dB.
pub fn replay_frame(timeline: &Timeline, plan: &AttackPlan) -> Result<Timeline> {
    let delay = plan.replay_delay_ns;
    if !(delay > 0.0 && delay < timeline.slot_spacing_ns()) {
        return Err(invalid(format!(
            "replay delay {delay} ns must lie in (0, {}) ns",
            timeline.slot_spacing_ns()
        )));
    }
    let gain = plan.replay_amplitude_gain();
    let mut out = timeline.clone();
    let copies: Vec<PulseEvent> = timeline
        .events()
        .iter()
        .filter(|e| e.source == FrameSource::Authentic)
        .map(|e| PulseEvent { time_ns: e.time_ns + delay, amplitude: e.amplitude * gain, source: FrameSource::Replay })
        .collect();
    for e in copies {
        out.push_event(e).map_err(|_| {
            Error::Structural(format!("recording too short for a replay delayed by {delay} ns"))
        })?;
    }
    let peaks: Vec<Peak> = timeline.peaks().iter().filter(|p| p.source == FrameSource::Authentic).copied().collect();
    for p in peaks {
        out.push_peak(Peak { time_ns: p.time_ns + delay, strength: p.strength * gain * gain, source: FrameSource::Replay });
    }
    Ok(out)
}

/// One-way distance added by delaying one leg of a two-way exchange.
pub fn enlargement_m(delay_ns: f64) -> f64 {
    delay_ns * crate::SPEED_OF_LIGHT_M_PER_NS / 2.0
}
