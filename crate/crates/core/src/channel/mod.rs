//! Path loss, link budgets and slot-level superposition.
//!
//! The receiver integrates energy over one window per slot, so a frame is
//! modelled as one real amplitude per slot: the sender's signed pulse, any
//! adversary pulse landing in the same window, and additive Gaussian noise.
//! Signs carry phase; a reciprocal-phase pulse of matched power cancels the
//! authentic one, an equal-phase pulse doubles its amplitude.

mod timeline;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand::rngs::SmallRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adversary::AttackPlan;
use crate::codec::VerificationCode;
use crate::error::{invalid, Error, Result};

pub use timeline::{synthesize_timeline, FrameSource, Peak, PulseEvent, Timeline};

/// Outdoor line-of-sight UWB path loss in dB at `d_m` meters:
/// `-46.3 - 20 log10(d) - log10(6.5 / 5)`.
pub fn path_loss_db(d_m: f64) -> Result<f64> {
    if !(d_m > 0.0) || !d_m.is_finite() {
        return Err(Error::Domain(format!("distance must be positive and finite, got {d_m}")));
    }
    Ok(-46.3 - 20.0 * d_m.log10() - (6.5f64 / 5.0).log10())
}

pub fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Per-pulse power seen at `d_m` after path loss and `extra_db` of further
/// degradation: `p_sent * 10^((f(d) + extra) / 10)`.
pub fn expected_rx_power(p_sent: f64, d_m: f64, extra_db: f64) -> Result<f64> {
    Ok(p_sent * db_to_ratio(path_loss_db(d_m)? + extra_db))
}

/// The adversary's room per pulse: the gap between what the receiver
/// expects at the enlarged distance and the weakest plausible authentic
/// signal. Returns `(R in dB, zeta = 10^(R/10))`.
pub fn adversary_room(d1_m: f64, d2_m: f64, e_db: f64) -> Result<(f64, f64)> {
    if d2_m < 0.0 {
        return Err(Error::Domain(format!("added distance must be non-negative, got {d2_m}")));
    }
    let r_db = path_loss_db(d1_m + d2_m)? - (path_loss_db(d1_m)? + e_db);
    Ok((r_db, db_to_ratio(r_db)))
}

/// A post-cursor multipath component. Taps fall inside the same
/// integration window as the direct pulse, so only their energy matters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_ns: f64,
    /// Amplitude relative to the direct path.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// True sender-receiver distance.
    pub d1_m: f64,
    /// Distance the adversary is trying to add. Zero for honest runs.
    pub d2_m: f64,
    /// Adversary-receiver distance.
    pub d3_m: f64,
    /// Degradation beyond path loss; never positive.
    pub e_db: f64,
    pub p_sent: f64,
    pub p_adv_sent: f64,
    /// Receiver noise variance.
    pub sigma_n2: f64,
    #[serde(default)]
    pub taps: Vec<Tap>,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("d1_m", self.d1_m), ("d3_m", self.d3_m)] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {d}")));
            }
        }
        if !(self.d2_m >= 0.0 && self.d2_m.is_finite()) {
            return Err(invalid(format!("d2_m must be non-negative, got {}", self.d2_m)));
        }
        if !(self.e_db <= 0.0) {
            return Err(invalid(format!("e_db must be <= 0, got {}", self.e_db)));
        }
        for (name, p) in [("p_sent", self.p_sent), ("p_adv_sent", self.p_adv_sent), ("sigma_n2", self.sigma_n2)] {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(invalid(format!("{name} must be non-negative, got {p}")));
            }
        }
        for tap in &self.taps {
            if !(tap.delay_ns > 0.0 && tap.gain.is_finite()) {
                return Err(invalid(format!("bad multipath tap {tap:?}")));
            }
        }
        Ok(())
    }

    /// The distance the receiver was told during commitment.
    pub fn committed_distance_m(&self) -> f64 {
        self.d1_m + self.d2_m
    }

    /// Best-case per-pulse power the receiver expects at the committed distance.
    pub fn lambda_b2(&self) -> Result<f64> {
        expected_rx_power(self.p_sent, self.committed_distance_m(), 0.0)
    }

    /// Per-pulse power actually received from the sender.
    pub fn lambda_w2(&self) -> Result<f64> {
        expected_rx_power(self.p_sent, self.d1_m, self.e_db)
    }

    /// Per-pulse power received from the adversary's transmitter.
    pub fn lambda_adv2(&self) -> Result<f64> {
        expected_rx_power(self.p_adv_sent, self.d3_m, self.e_db)
    }

    pub fn room(&self) -> Result<(f64, f64)> {
        adversary_room(self.d1_m, self.d2_m, self.e_db)
    }

    /// Energy multiplier contributed by multipath taps (1 with no taps).
    pub fn multipath_energy_factor(&self) -> f64 {
        1.0 + self.taps.iter().map(|t| t.gain * t.gain).sum::<f64>()
    }
}

/// Received per-slot amplitudes of one aligned frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSignal {
    pub amplitudes: Vec<f64>,
    pub noise_seed: u64,
}

impl SlotSignal {
    pub fn energies(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }

    /// CSV with columns `slot_index,amplitude,energy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slot_index,amplitude,energy\n");
        for (i, a) in self.amplitudes.iter().enumerate() {
            let _ = writeln!(out, "{i},{a},{}", a * a);
        }
        out
    }
}

/// Deterministic zero-mean, unit-variance noise sample for a keyed window.
pub(crate) fn unit_noise(seed: u64, key: u64) -> f64 {
    let mut rng = SmallRng::seed_from_u64(crate::mix64(seed) ^ key.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    StandardNormal.sample(&mut rng)
}

/// Adds sender pulses of received power `sender_power`, the plan's
/// injections and AWGN of variance `sigma_n2`. `energy_factor` scales the
/// combined pulse energy (multipath); noise is added after it.
pub fn superpose(
    code: &VerificationCode,
    sender_power: f64,
    attack: Option<&AttackPlan>,
    sigma_n2: f64,
    energy_factor: f64,
    noise_seed: u64,
) -> Result<SlotSignal> {
    let n = code.n();
    let a = sender_power.sqrt();
    let mut amplitudes: Vec<f64> = code.slots().iter().map(|&s| f64::from(s) * a).collect();
    if let Some(plan) = attack {
        for inj in &plan.injections {
            if inj.slot >= n {
                return Err(Error::Structural(format!("injection at slot {} outside a {n}-slot frame", inj.slot)));
            }
            amplitudes[inj.slot] += f64::from(inj.phase) * inj.power.sqrt();
        }
    }
    let scale = energy_factor.sqrt();
    let sigma = sigma_n2.sqrt();
    for (i, amp) in amplitudes.iter_mut().enumerate() {
        *amp *= scale;
        if sigma > 0.0 {
            *amp += sigma * unit_noise(noise_seed, i as u64);
        }
    }
    Ok(SlotSignal { amplitudes, noise_seed })
}

/// Received frame for `code` over `link`, optionally under `attack`.
pub fn synthesize_rx(
    code: &VerificationCode,
    link: &LinkModel,
    attack: Option<&AttackPlan>,
    noise_seed: u64,
) -> Result<SlotSignal> {
    link.validate()?;
    if let Some(plan) = attack {
        if plan.injections.len() != plan.k {
            return Err(Error::Structural("attack plan injection count disagrees with k".into()));
        }
    }
    superpose(
        code,
        link.lambda_w2()?,
        attack,
        link.sigma_n2,
        link.multipath_energy_factor(),
        noise_seed,
    )
}
