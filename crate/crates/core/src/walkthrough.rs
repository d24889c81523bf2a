//! The small worked example: an 18-slot code with five pulses, an
//! adversary injecting ten random-phase pulses, and the receiver's
//! threshold check, recomputed from the channel and receiver modules.
//!
//! Transmit powers are in watts and received powers in microwatts. The
//! received row is in pulse units, taking the sender's and the adversary's
//! received pulses as 1 uW each.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackPlan, Injection, DEFAULT_REPLAY_DELAY_NS};
use crate::channel::{expected_rx_power, path_loss_db, superpose, LinkModel};
use crate::codec::VerificationCode;
use crate::error::Result;
use crate::receiver::{attack_plausibility, compute_thresholds, slot_energies, Plausibility, Thresholds};

/// The example's code, after path loss, in pulse units.
pub const EXAMPLE_CODE_ROW: &str = "0,-1,0,0,0,-1,1,0,0,0,0,0,1,0,-1,0,0,0";

/// The example's injections as `(slot, phase)`, 0-based.
pub const EXAMPLE_INJECTIONS: [(usize, i8); 10] =
    [(0, 1), (1, 1), (4, -1), (6, 1), (7, -1), (8, 1), (11, -1), (12, 1), (16, -1), (17, -1)];

const UW_PER_W: f64 = 1e6;

/// Below this magnitude the adversary's room is reported as zero.
const ROOM_EPS_DB: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleInputs {
    pub d1_m: f64,
    pub d2_m: f64,
    pub d3_m: f64,
    pub e_db: f64,
    pub p_sent_w: f64,
    pub p_adv_sent_w: f64,
}

impl Default for ExampleInputs {
    fn default() -> Self {
        Self { d1_m: 4.0, d2_m: 4.5, d3_m: 6.0, e_db: -10.0, p_sent_w: 7.67, p_adv_sent_w: 15.77 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub inputs: ExampleInputs,
    pub alpha: usize,
    pub path_loss_committed_db: f64,
    pub lambda_b2_uw: f64,
    pub gamma_upper_uw: f64,
    pub lambda_w2_uw: f64,
    pub lambda_adv2_uw: f64,
    pub room_db: f64,
    pub zeta: f64,
    pub received: Vec<f64>,
    pub aggregate: f64,
    pub annihilated: usize,
    pub amplified: usize,
    pub added: usize,
    pub verdict: Plausibility,
}

pub fn example_code() -> VerificationCode {
    EXAMPLE_CODE_ROW.parse().expect("example row is a valid code")
}

pub fn example_plan() -> AttackPlan {
    let injections = EXAMPLE_INJECTIONS.iter().map(|&(slot, phase)| Injection { slot, phase, power: 1.0 }).collect();
    AttackPlan::from_injections(injections, DEFAULT_REPLAY_DELAY_NS, 0.0, 0).expect("example plan is valid")
}

pub fn run_example(inputs: &ExampleInputs) -> Result<ExampleReport> {
    let link = LinkModel {
        d1_m: inputs.d1_m,
        d2_m: inputs.d2_m,
        d3_m: inputs.d3_m,
        e_db: inputs.e_db,
        p_sent: inputs.p_sent_w,
        p_adv_sent: inputs.p_adv_sent_w,
        sigma_n2: 0.0,
        taps: Vec::new(),
    };
    let code = example_code();
    let t = compute_thresholds(&link, code.params(), link.committed_distance_m())?;
    // One pulse unit is 1 uW.
    let thresholds = Thresholds { gamma_lower: t.gamma_lower * UW_PER_W, gamma_upper: t.gamma_upper * UW_PER_W };
    let (room_db, zeta) = link.room()?;

    let plan = example_plan();
    let received = superpose(&code, 1.0, Some(&plan), 0.0, 1.0, 0)?.amplitudes;
    let energies = slot_energies(&crate::channel::SlotSignal { amplitudes: received.clone(), noise_seed: 0 });
    let (mut annihilated, mut amplified, mut added) = (0, 0, 0);
    for (&sent, &got) in code.slots().iter().zip(&received) {
        match (sent, got.abs()) {
            (0, e) if e > 0.0 => added += 1,
            (s, _) if s != 0 && got == 0.0 => annihilated += 1,
            (s, e) if s != 0 && e > 1.0 => amplified += 1,
            _ => {}
        }
    }

    Ok(ExampleReport {
        inputs: *inputs,
        alpha: code.bin_alpha().len(),
        path_loss_committed_db: path_loss_db(link.committed_distance_m())?,
        lambda_b2_uw: expected_rx_power(link.p_sent, link.committed_distance_m(), 0.0)? * UW_PER_W,
        gamma_upper_uw: thresholds.gamma_upper,
        lambda_w2_uw: link.lambda_w2()? * UW_PER_W,
        lambda_adv2_uw: link.lambda_adv2()? * UW_PER_W,
        room_db,
        zeta,
        aggregate: energies.iter().sum(),
        verdict: attack_plausibility(&energies, &thresholds),
        received,
        annihilated,
        amplified,
        added,
    })
}

fn row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:>3}")).collect::<Vec<_>>().join("")
}

impl fmt::Display for ExampleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = &self.inputs;
        writeln!(f, "D1 = {} m, D2 = {} m, D3 = {} m, E = {} dB", i.d1_m, i.d2_m, i.d3_m, i.e_db)?;
        writeln!(f, "sender power {} W, adversary power {} W, alpha = {}", i.p_sent_w, i.p_adv_sent_w, self.alpha)?;
        writeln!(f, "f(D1+D2) = {:.2} dB", self.path_loss_committed_db)?;
        writeln!(f, "lambda_b^2 = {:.3} uW (best expected at D1+D2)", self.lambda_b2_uw)?;
        writeln!(f, "Γ = alpha * lambda_b^2 = {:.3} uW", self.gamma_upper_uw)?;
        writeln!(f, "lambda_w^2 = {:.3} uW (received from the sender)", self.lambda_w2_uw)?;
        writeln!(f, "lambda'^2 = {:.3} uW (received from the adversary)", self.lambda_adv2_uw)?;
        if i.d2_m == 0.0 {
            writeln!(f, "no enlargement claimed: R = -E = {:.2} dB, ζ = 10^(-E/10) = {:.3}", self.room_db, self.zeta)?;
        } else if self.room_db.abs() < ROOM_EPS_DB {
            writeln!(f, "room ≈ 0 dB (R = {:.3} dB): the adversary has no room", self.room_db)?;
        } else if self.room_db < 0.0 {
            writeln!(f, "R = {:.2} dB: no room, the honest signal alone exceeds Γ", self.room_db)?;
        } else {
            writeln!(f, "R = {:.2} dB per pulse, ζ = {:.3}", self.room_db, self.zeta)?;
        }
        let sent: Vec<f64> = EXAMPLE_CODE_ROW.split(',').map(|s| s.parse().unwrap()).collect();
        writeln!(f, "sent          {}", row(&sent))?;
        writeln!(f, "received      {}", row(&self.received))?;
        writeln!(
            f,
            "injections: {} annihilated, {} amplified, {} added",
            self.annihilated, self.amplified, self.added
        )?;
        let agg = self.aggregate;
        let gamma = self.gamma_upper_uw;
        match self.verdict {
            Plausibility::EnergyExceeded => write!(f, "AttackDetected: aggregate {agg:.0} > Γ {gamma:.0}"),
            _ => write!(f, "Plausible: aggregate {agg:.0} <= Γ {gamma:.0}"),
        }
    }
}
