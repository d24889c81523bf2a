//! The receiver's detection pipeline.
//!
//! For every candidate frame position, starting at the strongest preamble
//! peak and stepping back one pulse width at a time:
//!
//! 1. sum the slot energies and compare against the noise floor `gamma`
//!    and the path-loss ceiling `Gamma` (attack plausibility);
//! 2. if plausible, run `upsilon` random hypothesis tests comparing an
//!    `r`-pulse aggregate from the expected-pulse slots with one from the
//!    expected-empty slots (robust code verification).
//!
//! Any candidate above `Gamma` is an attack. Otherwise the earliest
//! candidate that passes verification gives the time of arrival.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{expected_rx_power, LinkModel, SlotSignal, Timeline};
use crate::codec::{CodeParams, VerificationCode};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Repetitions of the random-sample test.
    pub upsilon: usize,
    /// A candidate is a code when its pass ratio strictly exceeds this.
    pub p_noise_threshold: f64,
    pub backtrack_step_ns: f64,
    pub backtrack_window_ns: f64,
    pub r: usize,
    pub rng_seed: u64,
    /// Accepted candidates closer than this are one and the same.
    pub precision_ns: f64,
    /// Replaces the computed noise floor when set.
    #[serde(default)]
    pub gamma_override: Option<f64>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            upsilon: 100,
            p_noise_threshold: 0.8,
            backtrack_step_ns: 2.0,
            backtrack_window_ns: 660.0,
            r: 1,
            rng_seed: 0,
            precision_ns: 0.67,
            gamma_override: None,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsilon == 0 {
            return Err(invalid("upsilon must be at least 1"));
        }
        if !(self.p_noise_threshold > 0.0 && self.p_noise_threshold < 1.0) {
            return Err(invalid(format!("P_noise cut must be in (0, 1), got {}", self.p_noise_threshold)));
        }
        if !(self.backtrack_step_ns > 0.0) || !(self.backtrack_window_ns >= 0.0) {
            return Err(invalid("backtracking step must be positive and window non-negative"));
        }
        if !(self.precision_ns >= 0.0) {
            return Err(invalid("ranging precision must be non-negative"));
        }
        if let Some(g) = self.gamma_override {
            if !(g >= 0.0) {
                return Err(invalid("gamma override must be non-negative"));
            }
        }
        Ok(())
    }

    /// Number of backward steps examined after the peak candidate.
    pub fn backtrack_steps(&self) -> usize {
        (self.backtrack_window_ns / self.backtrack_step_ns + 1e-9).floor() as usize
    }
}

/// Energy thresholds: `gamma_lower` is the noise floor, `gamma_upper` the
/// ceiling implied by the committed distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub gamma_lower: f64,
    pub gamma_upper: f64,
}

/// `Gamma = alpha (lambda_b + N)^2 + beta N^2` with `lambda_b^2` the
/// path-loss-only expectation at `d_committed_m` and `N` one noise standard
/// deviation; `gamma = (alpha + beta) sigma_N^2`.
pub fn compute_thresholds(link: &LinkModel, params: &CodeParams, d_committed_m: f64) -> Result<Thresholds> {
    link.validate()?;
    params.validate()?;
    let lambda_b = expected_rx_power(link.p_sent, d_committed_m, 0.0)?.sqrt();
    let noise = link.sigma_n2.sqrt();
    let (alpha, beta) = (params.alpha as f64, params.beta as f64);
    let upper = alpha * (lambda_b + noise).powi(2) + beta * noise * noise;
    let lower = (alpha + beta) * link.sigma_n2;
    if !(lower < upper) {
        return Err(invalid(format!("degenerate thresholds: gamma = {lower}, Gamma = {upper}")));
    }
    Ok(Thresholds { gamma_lower: lower, gamma_upper: upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plausibility {
    Noise,
    Plausible,
    EnergyExceeded,
}

/// Energy detection: squares each amplitude, discarding phase.
pub fn slot_energies(signal: &SlotSignal) -> Vec<f64> {
    signal.energies()
}

/// Aggregate energy at or below `gamma` is noise; strictly above `Gamma`
/// is an attack.
pub fn attack_plausibility(energies: &[f64], thresholds: &Thresholds) -> Plausibility {
    classify(energies.iter().sum(), thresholds)
}

pub(crate) fn classify(aggregate: f64, t: &Thresholds) -> Plausibility {
    if aggregate > t.gamma_upper {
        Plausibility::EnergyExceeded
    } else if aggregate <= t.gamma_lower {
        Plausibility::Noise
    } else {
        Plausibility::Plausible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub pass_ratio: f64,
    pub is_code: bool,
}

fn check_rcv_params(code: &VerificationCode, r: usize) -> Result<()> {
    let (a, b) = code.bins();
    if r == 0 || r > a.len() || r > b.len() {
        return Err(invalid(format!(
            "symbol length r = {r} needs 1 <= r <= min(alpha = {}, beta = {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Sum of `r` distinct entries of `values` picked uniformly at random.
fn sample_sum(values: &[f64], r: usize, rng: &mut impl Rng) -> f64 {
    match r {
        1 => values[rng.gen_range(0..values.len())],
        _ if r == values.len() => values.iter().sum(),
        _ => index::sample(rng, values.len(), r).into_iter().map(|i| values[i]).sum(),
    }
}

/// One hypothesis test: a random `r`-sample aggregate from `alpha_energies`
/// is at least the one from `beta_energies`.
pub fn sample_test(alpha_energies: &[f64], beta_energies: &[f64], r: usize, rng: &mut impl Rng) -> bool {
    sample_sum(alpha_energies, r, rng) >= sample_sum(beta_energies, r, rng)
}

/// Fraction of `upsilon` tests passed.
pub fn pass_ratio(alpha_energies: &[f64], beta_energies: &[f64], r: usize, upsilon: usize, rng: &mut impl Rng) -> f64 {
    let passes = (0..upsilon).filter(|_| sample_test(alpha_energies, beta_energies, r, rng)).count();
    passes as f64 / upsilon as f64
}

pub(crate) fn split_bins(energies: &[f64], code: &VerificationCode) -> (Vec<f64>, Vec<f64>) {
    let (a, b) = code.bins();
    (a.iter().map(|&i| energies[i]).collect(), b.iter().map(|&i| energies[i]).collect())
}

pub(crate) fn verify_with_rng(energies: &[f64], code: &VerificationCode, cfg: &ReceiverConfig, rng: &mut impl Rng) -> Verification {
    let (a, b) = split_bins(energies, code);
    let ratio = pass_ratio(&a, &b, cfg.r, cfg.upsilon, rng);
    Verification { pass_ratio: ratio, is_code: ratio > cfg.p_noise_threshold }
}

/// Robust code verification with the sampling stream seeded from `cfg.rng_seed`.
/// Ties between the two aggregates count as a pass.
pub fn robust_code_verification(energies: &[f64], code: &VerificationCode, cfg: &ReceiverConfig) -> Result<Verification> {
    cfg.validate()?;
    check_rcv_params(code, cfg.r)?;
    if energies.len() != code.n() {
        return Err(Error::Structural(format!("{} energies for a {}-slot code", energies.len(), code.n())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    Ok(verify_with_rng(energies, code, cfg, &mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackReason {
    EnergyExceeded,
    ToFMismatch,
    RangeExceeded,
}

impl fmt::Display for AttackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EnergyExceeded => "EnergyExceeded",
            Self::ToFMismatch => "ToFMismatch",
            Self::RangeExceeded => "RangeExceeded",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    NoCodeFound,
    CodeAccepted { toa_ns: f64 },
    AttackDetected { reason: AttackReason },
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NoCodeFound => "NoCodeFound",
            Self::CodeAccepted { .. } => "CodeAccepted",
            Self::AttackDetected { .. } => "AttackDetected",
        }
    }
}

/// A candidate that was not discarded as noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub toa_ns: f64,
    pub aggregate: f64,
    pub plausibility: Plausibility,
    pub pass_ratio: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub verdict: Verdict,
    pub thresholds: Thresholds,
    /// Non-noise candidates, in the order examined (latest first).
    pub candidates: Vec<Candidate>,
    pub candidates_examined: usize,
}

pub const OUTCOME_CSV_HEADER: &str = "verdict,toa_ns,aggregate_energy,pass_ratio,reason";

impl DetectionOutcome {
    /// The candidate that decided the verdict, if any.
    pub fn deciding_candidate(&self) -> Option<&Candidate> {
        match self.verdict {
            Verdict::NoCodeFound => None,
            Verdict::CodeAccepted { toa_ns } => self.candidates.iter().rev().find(|c| c.accepted && c.toa_ns == toa_ns),
            Verdict::AttackDetected { .. } => self.candidates.last(),
        }
    }

    /// Accepted candidates grouped by ranging precision: copies of one code
    /// found at neighbouring offsets count once.
    pub fn distinct_codes(&self, precision_ns: f64) -> usize {
        let mut count = 0;
        let mut last: Option<f64> = None;
        for c in self.candidates.iter().filter(|c| c.accepted) {
            if !last.is_some_and(|t| (t - c.toa_ns).abs() <= precision_ns) {
                count += 1;
            }
            last = Some(c.toa_ns);
        }
        count
    }

    /// One row under [`OUTCOME_CSV_HEADER`].
    pub fn to_csv_row(&self) -> String {
        let toa = match self.verdict {
            Verdict::CodeAccepted { toa_ns } => toa_ns.to_string(),
            _ => String::new(),
        };
        let reason = match self.verdict {
            Verdict::AttackDetected { reason } => reason.to_string(),
            _ => String::new(),
        };
        let (agg, ratio) = match self.deciding_candidate() {
            Some(c) => (c.aggregate.to_string(), c.pass_ratio.map(|p| p.to_string()).unwrap_or_default()),
            None => (String::new(), String::new()),
        };
        format!("{},{toa},{agg},{ratio},{reason}", self.verdict.name())
    }
}

/// Backtracking detection over a recorded timeline.
///
/// `Gamma` is derived from the committed distance `link.d1_m + link.d2_m`.
/// Starting at the strongest preamble peak, candidates are examined every
/// `backtrack_step_ns` back to `backtrack_window_ns` before it.
pub fn backtrack_detect(
    timeline: &Timeline,
    code: &VerificationCode,
    link: &LinkModel,
    cfg: &ReceiverConfig,
) -> Result<DetectionOutcome> {
    cfg.validate()?;
    check_rcv_params(code, cfg.r)?;
    let mut thresholds = compute_thresholds(link, code.params(), link.committed_distance_m())?;
    if let Some(g) = cfg.gamma_override {
        thresholds.gamma_lower = g;
    }

    let Some(peak) = timeline.highest_peak() else {
        return Ok(DetectionOutcome {
            verdict: Verdict::NoCodeFound,
            thresholds,
            candidates: Vec::new(),
            candidates_examined: 0,
        });
    };

    let steps = cfg.backtrack_steps();
    let earliest = peak.time_ns - steps as f64 * cfg.backtrack_step_ns;
    if !timeline.covers(earliest, peak.time_ns) {
        return Err(Error::Structural(format!(
            "recording starts at {} ns but backtracking needs {earliest} ns",
            timeline.start_ns()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut candidates = Vec::new();
    let mut earliest_accepted: Option<f64> = None;
    for j in 0..=steps {
        let start = peak.time_ns - j as f64 * cfg.backtrack_step_ns;
        let energies = slot_energies(&timeline.read_frame(start, code.n())?);
        let aggregate: f64 = energies.iter().sum();
        match classify(aggregate, &thresholds) {
            Plausibility::Noise => {}
            Plausibility::EnergyExceeded => {
                candidates.push(Candidate {
                    toa_ns: start,
                    aggregate,
                    plausibility: Plausibility::EnergyExceeded,
                    pass_ratio: None,
                    accepted: false,
                });
                return Ok(DetectionOutcome {
                    verdict: Verdict::AttackDetected { reason: AttackReason::EnergyExceeded },
                    thresholds,
                    candidates,
                    candidates_examined: j + 1,
                });
            }
            Plausibility::Plausible => {
                let v = verify_with_rng(&energies, code, cfg, &mut rng);
                if v.is_code {
                    earliest_accepted = Some(start);
                }
                candidates.push(Candidate {
                    toa_ns: start,
                    aggregate,
                    plausibility: Plausibility::Plausible,
                    pass_ratio: Some(v.pass_ratio),
                    accepted: v.is_code,
                });
            }
        }
    }

    let verdict = match earliest_accepted {
        Some(toa_ns) => Verdict::CodeAccepted { toa_ns },
        None => Verdict::NoCodeFound,
    };
    Ok(DetectionOutcome { verdict, thresholds, candidates, candidates_examined: steps + 1 })
}
