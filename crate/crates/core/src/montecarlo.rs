//! Seeded trial harness: estimates attack-success and false-positive
//! rates with Wilson intervals and compares them with [`crate::analytic`].
//!
//! Every trial draws its own seed from `(base_seed, k, trial_index)`, so a
//! grid point can be split across workers and merged by summation.

use std::io::Write;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{plan_attack, replay_frame, PowerPolicy, DEFAULT_REPLAY_DELAY_NS};
use crate::analytic;
use crate::channel::{superpose, synthesize_timeline, LinkModel};
use crate::codec::{generate_code, CodeParams};
use crate::error::{invalid, Error, Result};
use crate::receiver::{
    backtrack_detect, classify, compute_thresholds, sample_test, split_bins, verify_with_rng, Plausibility,
    ReceiverConfig, Verdict,
};
use crate::{derive_seed, tof_ns};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// What a trial counts as an adversary success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    /// Unity-power slot game, noiseless: one `r`-sample test where Bin_beta's
    /// aggregate strictly exceeds Bin_alpha's.
    RobustCheckEvasion,
    /// As above, and the frame's aggregate stays within `alpha * zeta`.
    GatedEvasion,
    /// Full pipeline over a recorded timeline: injections on the authentic
    /// frame, a delayed replay, backtracking detection. Success means the
    /// receiver accepts the replayed copy's time of arrival.
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub params: CodeParams,
    pub link: LinkModel,
    pub estimand: Estimand,
    pub ks: Vec<usize>,
    /// Adversary room for [`Estimand::GatedEvasion`].
    pub zeta: f64,
    pub replay_delay_ns: f64,
    pub replay_gain_db: f64,
    /// Injection power for [`Estimand::EndToEnd`]; the unity estimands
    /// always inject unit power.
    pub power: PowerPolicy,
    pub receiver: ReceiverConfig,
    pub trials: u64,
    pub base_seed: u64,
}

impl TrialConfig {
    /// A noiseless unity-power configuration for the slot-level estimands.
    pub fn unity(params: CodeParams, estimand: Estimand, ks: Vec<usize>, trials: u64, base_seed: u64) -> Self {
        let link = LinkModel {
            d1_m: 10.0,
            d2_m: 0.0,
            d3_m: 10.0,
            e_db: 0.0,
            p_sent: 1.0,
            p_adv_sent: 1.0,
            sigma_n2: 0.0,
            taps: Vec::new(),
        };
        Self {
            receiver: ReceiverConfig { r: params.r, ..ReceiverConfig::default() },
            params,
            link,
            estimand,
            ks,
            zeta: f64::INFINITY,
            replay_delay_ns: DEFAULT_REPLAY_DELAY_NS,
            replay_gain_db: 0.0,
            power: PowerPolicy::Constant(1.0),
            trials,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.link.validate()?;
        self.receiver.validate()?;
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        let n = self.params.n();
        if let Some(&k) = self.ks.iter().find(|&&k| k > n) {
            return Err(invalid(format!("k = {k} exceeds the {n}-slot code")));
        }
        if self.receiver.r != self.params.r {
            return Err(invalid("receiver r and code r disagree"));
        }
        if self.estimand == Estimand::GatedEvasion && !(self.zeta > 0.0) {
            return Err(invalid("gated evasion needs a positive zeta"));
        }
        Ok(())
    }

    /// The closed-form value this estimand should match at `k`, if any.
    pub fn analytic_p(&self, k: usize) -> Result<Option<f64>> {
        let CodeParams { alpha, beta, r, .. } = self.params;
        Ok(match self.estimand {
            Estimand::RobustCheckEvasion => Some(analytic::prob_evade_rcv(alpha, beta, r, k)?),
            Estimand::GatedEvasion => Some(analytic::prob_success(alpha, beta, r, self.zeta, k)?),
            Estimand::EndToEnd => None,
        })
    }
}

/// 95% Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub k: usize,
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytic_p: Option<f64>,
    /// `|p_hat - analytic_p|` exceeds four binomial standard errors.
    pub flagged: bool,
}

impl EstimateRow {
    pub fn new(k: usize, successes: u64, trials: u64, analytic_p: Option<f64>) -> Self {
        let p_hat = successes as f64 / trials as f64;
        let (ci_low, ci_high) = wilson_interval(successes, trials);
        let flagged = analytic_p.is_some_and(|a| {
            let se = (a * (1.0 - a) / trials as f64).sqrt();
            (p_hat - a).abs() > 4.0 * se + 1e-12
        });
        Self { k, trials, successes, p_hat, ci_low, ci_high, analytic_p, flagged }
    }

    /// Whether the analytic value lies inside the Wilson interval.
    pub fn covers_analytic(&self) -> Option<bool> {
        self.analytic_p.map(|a| a >= self.ci_low - 1e-15 && a <= self.ci_high + 1e-15)
    }
}

pub const ESTIMATE_CSV_HEADER: [&str; 7] = ["k", "trials", "successes", "p_hat", "ci_low", "ci_high", "analytic_p"];

pub fn write_estimates_csv(rows: &[EstimateRow], out: impl Write) -> Result<()> {
    let io = |e: csv::Error| Error::Structural(format!("writing CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.trials.to_string(),
            r.successes.to_string(),
            format!("{:e}", r.p_hat),
            format!("{:e}", r.ci_low),
            format!("{:e}", r.ci_high),
            r.analytic_p.map(|a| format!("{a:e}")).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Structural(format!("writing CSV: {e}")))
}

// Sub-streams of a trial seed.
const CODE: u64 = 1;
const ATTACK: u64 = 2;
const NOISE: u64 = 3;
const SAMPLER: u64 = 4;

fn unity_trial(cfg: &TrialConfig, k: usize, seed: u64) -> Result<bool> {
    let p = &cfg.params;
    let code = generate_code(*p, derive_seed(seed, &[CODE]))?;
    let plan = plan_attack(p, k, cfg.replay_delay_ns, 0.0, &PowerPolicy::Constant(1.0), derive_seed(seed, &[ATTACK]))?;
    let energies = superpose(&code, 1.0, Some(&plan), 0.0, 1.0, 0)?.energies();
    if cfg.estimand == Estimand::GatedEvasion {
        let budget = p.alpha as f64 * cfg.zeta;
        if energies.iter().sum::<f64>() > budget + 1e-9 * budget.max(1.0) {
            return Ok(false);
        }
    }
    let (a, b) = split_bins(&energies, &code);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SAMPLER]));
    // The adversary wins when Bin_beta strictly exceeds Bin_alpha.
    Ok(!sample_test(&a, &b, p.r, &mut rng))
}

fn end_to_end_trial(cfg: &TrialConfig, k: usize, seed: u64) -> Result<bool> {
    let code = generate_code(cfg.params, derive_seed(seed, &[CODE]))?;
    let plan = plan_attack(
        &cfg.params,
        k,
        cfg.replay_delay_ns,
        cfg.replay_gain_db,
        &cfg.power,
        derive_seed(seed, &[ATTACK]),
    )?;
    let toa = tof_ns(cfg.link.d1_m);
    let lead = cfg.receiver.backtrack_window_ns + cfg.receiver.backtrack_step_ns;
    let tail = cfg.replay_delay_ns + cfg.params.tp_ns;
    let tl = synthesize_timeline(&code, &cfg.link, Some(&plan), toa, lead, tail, derive_seed(seed, &[NOISE]))?;
    let tl = replay_frame(&tl, &plan)?;
    let rcv = ReceiverConfig { rng_seed: derive_seed(seed, &[SAMPLER]), ..cfg.receiver.clone() };
    let out = backtrack_detect(&tl, &code, &cfg.link, &rcv)?;
    Ok(match out.verdict {
        Verdict::CodeAccepted { toa_ns } => (toa_ns - (toa + cfg.replay_delay_ns)).abs() <= rcv.precision_ns,
        _ => false,
    })
}

fn trial(cfg: &TrialConfig, k: usize, index: u64) -> Result<bool> {
    let seed = derive_seed(cfg.base_seed, &[k as u64, index]);
    match cfg.estimand {
        Estimand::RobustCheckEvasion | Estimand::GatedEvasion => unity_trial(cfg, k, seed),
        Estimand::EndToEnd => end_to_end_trial(cfg, k, seed),
    }
}

/// Successes among trials `indices` at grid point `k`.
pub fn run_point(cfg: &TrialConfig, k: usize, indices: Range<u64>) -> Result<u64> {
    cfg.validate()?;
    indices
        .into_par_iter()
        .map(|t| trial(cfg, k, t).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// One row per `k` in `cfg.ks`, in grid order.
pub fn run_grid(cfg: &TrialConfig) -> Result<Vec<EstimateRow>> {
    cfg.validate()?;
    cfg.ks
        .iter()
        .map(|&k| {
            let successes = run_point(cfg, k, 0..cfg.trials)?;
            Ok(EstimateRow::new(k, successes, cfg.trials, cfg.analytic_p(k)?))
        })
        .collect()
}

/// Rate at which pure noise is accepted as a code. Each of `cfg.trials`
/// candidates is a fresh noise-only frame put through the plausibility
/// check and, when plausible, robust code verification.
pub fn false_positive_rate(cfg: &TrialConfig) -> Result<EstimateRow> {
    cfg.validate()?;
    if cfg.ks.iter().any(|&k| k != 0) {
        return Err(invalid("false-positive runs take no injections"));
    }
    let mut thresholds = compute_thresholds(&cfg.link, &cfg.params, cfg.link.committed_distance_m())?;
    if let Some(g) = cfg.receiver.gamma_override {
        thresholds.gamma_lower = g;
    }
    let accepted = (0..cfg.trials)
        .into_par_iter()
        .map(|i| -> Result<u64> {
            let seed = derive_seed(cfg.base_seed, &[u64::MAX, i]);
            let code = generate_code(cfg.params, derive_seed(seed, &[CODE]))?;
            let energies = superpose(&code, 0.0, None, cfg.link.sigma_n2, 1.0, derive_seed(seed, &[NOISE]))?.energies();
            if classify(energies.iter().sum(), &thresholds) != Plausibility::Plausible {
                return Ok(0);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SAMPLER]));
            Ok(u64::from(verify_with_rng(&energies, &code, &cfg.receiver, &mut rng).is_code))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(EstimateRow::new(0, accepted, cfg.trials, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unity(alpha: usize, beta: usize, r: usize, estimand: Estimand, ks: Vec<usize>, trials: u64) -> TrialConfig {
        TrialConfig::unity(CodeParams::new(alpha, beta, r).unwrap(), estimand, ks, trials, 7)
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.037).abs() < 0.001, "{hi}");
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        let (lo, hi) = wilson_interval(100, 100);
        assert!(hi == 1.0 && lo < 1.0);
    }

    #[test]
    fn row_flagging() {
        assert!(!EstimateRow::new(3, 50, 100, Some(0.5)).flagged);
        assert!(EstimateRow::new(3, 90, 100, Some(0.5)).flagged);
        assert!(EstimateRow::new(0, 1, 100, Some(0.0)).flagged);
        assert!(!EstimateRow::new(0, 1, 100, None).flagged);
        assert_eq!(EstimateRow::new(0, 0, 100, Some(0.0)).covers_analytic(), Some(true));
    }

    #[test]
    fn zero_injections_never_succeed() {
        for est in [Estimand::RobustCheckEvasion, Estimand::GatedEvasion] {
            let mut cfg = unity(10, 10, 2, est, vec![0], 2000);
            cfg.zeta = 2.0;
            assert_eq!(run_grid(&cfg).unwrap()[0].successes, 0);
        }
    }

    #[test]
    fn reproducible_and_splittable() {
        let cfg = unity(8, 12, 2, Estimand::RobustCheckEvasion, vec![10], 3000);
        let a = run_grid(&cfg).unwrap();
        assert_eq!(a, run_grid(&cfg).unwrap());
        let split = run_point(&cfg, 10, 0..1234).unwrap() + run_point(&cfg, 10, 1234..3000).unwrap();
        assert_eq!(split, a[0].successes);
        let other = TrialConfig { base_seed: 8, ..cfg };
        assert_ne!(run_grid(&other).unwrap()[0].successes, a[0].successes);
    }

    #[test]
    fn small_games_agree_with_closed_form() {
        let mut flagged = 0;
        let mut total = 0;
        for (a, b, r) in [(2, 2, 1), (4, 6, 2), (5, 5, 5), (6, 3, 3)] {
            let ks = (0..=a + b).collect();
            let mut cfg = unity(a, b, r, Estimand::GatedEvasion, ks, 20_000);
            cfg.zeta = 1.6;
            for est in [Estimand::RobustCheckEvasion, Estimand::GatedEvasion] {
                cfg.estimand = est;
                for row in run_grid(&cfg).unwrap() {
                    total += 1;
                    flagged += usize::from(row.flagged);
                }
            }
        }
        // 4 SE: expected flag rate ~6e-5 per point.
        assert_eq!(flagged, 0, "{flagged}/{total}");
    }

    #[test]
    fn false_positives_follow_gamma() {
        let params = CodeParams::new(8, 24, 1).unwrap();
        let mut cfg = TrialConfig::unity(params, Estimand::RobustCheckEvasion, vec![], 4000, 3);
        cfg.receiver.p_noise_threshold = 0.6;
        assert_eq!(false_positive_rate(&cfg).unwrap().successes, 0);
        cfg.link.sigma_n2 = 1.0;
        let base = false_positive_rate(&cfg).unwrap();
        cfg.receiver.gamma_override = Some(0.0);
        let open = false_positive_rate(&cfg).unwrap();
        assert!(open.successes > base.successes, "{} vs {}", open.successes, base.successes);
        cfg.ks = vec![1];
        assert!(false_positive_rate(&cfg).is_err());
    }

    #[test]
    fn clean_end_to_end_recovers_code() {
        let params = CodeParams::new(16, 16, 1).unwrap();
        let mut cfg = TrialConfig::unity(params, Estimand::EndToEnd, vec![0], 30, 11);
        cfg.link.e_db = -3.0;
        cfg.link.d2_m = crate::adversary::enlargement_m(200.0);
        cfg.link.sigma_n2 = cfg.link.lambda_w2().unwrap() / 100.0;
        cfg.replay_gain_db = 2.0;
        let rows = run_grid(&cfg).unwrap();
        assert_eq!(rows[0].successes, 0);
        assert_eq!(rows[0].analytic_p, None);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = unity(4, 4, 1, Estimand::RobustCheckEvasion, vec![9], 10);
        assert!(run_grid(&cfg).is_err());
        cfg.ks = vec![1];
        cfg.trials = 0;
        assert!(run_grid(&cfg).is_err());
        cfg.trials = 1;
        cfg.receiver.r = 2;
        assert!(run_grid(&cfg).is_err());
    }
}
