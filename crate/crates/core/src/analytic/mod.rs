//! Closed-form attack and false-positive probabilities under the
//! unity-power model: an untouched pulse carries energy 1, an annihilated
//! one 0, an amplified one 4, and an adversary pulse in an empty slot 1.
//!
//! Every formula is written once, generically over [`Weight`], and
//! evaluated either in `f64` through log-space binomials (the functions at
//! this level) or exactly in big rationals (the [`exact`] module).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

mod weight;

pub use weight::{big_choose, ln_choose};
use weight::Weight;

/// Parameters shared by the closed forms. `kappa` counts high-energy noise
/// intervals and is only read by [`prob_noise_pass`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticParams {
    pub alpha: usize,
    pub beta: usize,
    pub r: usize,
    pub k: usize,
    pub zeta: f64,
    pub kappa: usize,
}

impl AnalyticParams {
    pub fn validate(&self) -> Result<()> {
        check_sampling(self.alpha, self.beta, self.r)?;
        check_count("k", self.k, self.alpha + self.beta)?;
        check_count("kappa", self.kappa, self.alpha + self.beta)?;
        if !(self.zeta > 0.0) {
            return Err(invalid(format!("zeta must be positive, got {}", self.zeta)));
        }
        Ok(())
    }
}

fn check_sampling(alpha: usize, beta: usize, r: usize) -> Result<()> {
    if r == 0 || r > alpha || r > beta {
        return Err(invalid(format!("need 1 <= r <= min(alpha, beta); got alpha={alpha} beta={beta} r={r}")));
    }
    Ok(())
}

fn check_count(name: &str, v: usize, n: usize) -> Result<()> {
    if v > n {
        return Err(invalid(format!("{name} = {v} exceeds alpha + beta = {n}")));
    }
    Ok(())
}

fn check_zeta(zeta: f64) -> Result<()> {
    if !(zeta > 0.0) {
        return Err(invalid(format!("zeta must be positive, got {zeta}")));
    }
    Ok(())
}

fn i(v: usize) -> i64 {
    v as i64
}

/// `C(I, i) C(J, j) / C(I + J, i + j)`; zero outside the support.
pub fn hypergeom(big_i: usize, big_j: usize, i_: usize, j: usize) -> f64 {
    hyper(big_i, big_j, i_, j)
}

fn hyper<W: Weight>(big_i: usize, big_j: usize, i_: usize, j: usize) -> W {
    W::ratio(&[(i(big_i), i(i_)), (i(big_j), i(j))], &[(i(big_i + big_j), i(i_ + j))], 0)
}

/// `P(r-sample of Bin_beta holds >= m hit slots)` for every `m in 0..=r+1`,
/// given `hits` of the `beta` slots carry one unit.
fn beta_tails<W: Weight>(beta: usize, r: usize, hits: usize) -> Vec<W> {
    let terms: Vec<W> = (0..=r).map(|t| sample_hits::<W>(beta, r, hits, t)).collect();
    let mut tails = vec![W::zero(); r + 2];
    for m in (0..=r).rev() {
        tails[m] = tails[m + 1].add(&terms[m]);
    }
    tails
}

/// `P(r-sample of a bin of size `size` holds exactly `t` of its `hits` hit slots)`.
fn sample_hits<W: Weight>(size: usize, r: usize, hits: usize, t: usize) -> W {
    W::ratio(&[(i(hits), i(t)), (i(size) - i(hits), i(r) - i(t))], &[(i(size), i(r))], 0)
}

fn tail_at<W: Weight>(tails: &[W], m: usize) -> W {
    tails.get(m).cloned().unwrap_or_else(W::zero)
}

/// The adversary wins one test given `x` pulses in Bin_alpha of which `g`
/// annihilated: sum over `y1` annihilated and `y2` amplified picks of the
/// composition probability times the chance Bin_beta reaches
/// `m = r - y1 + 3 y2 + 1`.
fn inner<W: Weight>(alpha: usize, r: usize, x: usize, g: usize, tails: &[W]) -> W {
    let mut terms = Vec::new();
    for y1 in 0..=g.min(r) {
        for y2 in 0..=(x - g).min(r - y1) {
            let rest = r - y1 - y2;
            if rest > alpha - x {
                continue;
            }
            let comp = W::ratio(&[(i(g), i(y1)), (i(x - g), i(y2)), (i(alpha - x), i(rest))], &[(i(alpha), i(r))], 0);
            terms.push(comp.mul(&tail_at(tails, r - y1 + 3 * y2 + 1)));
        }
    }
    W::sum(terms)
}

/// Full-sample form (`r = alpha`): Bin_alpha's aggregate is fixed at
/// `4 (x - g) + (alpha - x)`.
fn inner_full<W: Weight>(alpha: usize, x: usize, g: usize, tails: &[W]) -> W {
    tail_at(tails, 4 * (x - g) + (alpha - x) + 1)
}

fn inner_auto<W: Weight>(alpha: usize, r: usize, x: usize, g: usize, tails: &[W]) -> W {
    if r == alpha {
        inner_full(alpha, x, g, tails)
    } else {
        inner(alpha, r, x, g, tails)
    }
}

fn x_range(alpha: usize, beta: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    k.saturating_sub(beta)..=k.min(alpha)
}

/// Binomial mixture over annihilation counts, restricted by `gate(g)`.
fn given_x<W: Weight>(alpha: usize, beta: usize, r: usize, k: usize, x: usize, gate: impl Fn(usize) -> bool) -> W {
    let tails = beta_tails::<W>(beta, r, k - x);
    let terms = (0..=x)
        .filter(|&g| gate(g))
        .map(|g| inner_auto(alpha, r, x, g, &tails).mul(&W::ratio(&[(i(x), i(g))], &[], x as u32)))
        .collect();
    W::sum(terms)
}

fn evade<W: Weight>(alpha: usize, beta: usize, r: usize, k: usize, gate: impl Fn(usize, usize) -> bool) -> W {
    let terms = x_range(alpha, beta, k)
        .map(|x| given_x::<W>(alpha, beta, r, k, x, |g| gate(x, g)).mul(&hyper(alpha, beta, x, k - x)))
        .collect();
    W::sum(terms)
}

/// `k + 2x - 4g <= alpha (zeta - 1)`: the aggregate stays at or below Gamma.
fn within_room(alpha: usize, zeta: f64, k: usize, x: usize, g: usize) -> bool {
    let excess = (k + 2 * x) as f64 - 4.0 * g as f64;
    let room = alpha as f64 * (zeta - 1.0);
    excess <= room + 1e-9 * room.abs().max(1.0)
}

fn noise_pass<W: Weight>(alpha: usize, beta: usize, r: usize, kappa: usize) -> W {
    let terms = x_range(alpha, beta, kappa)
        .map(|x| {
            let mut heads = Vec::with_capacity(r + 1);
            let mut acc = W::zero();
            for t in 0..=r {
                acc = acc.add(&sample_hits::<W>(beta, r, kappa - x, t));
                heads.push(acc.clone());
            }
            let p = W::sum((0..=r).map(|y| sample_hits::<W>(alpha, r, x, y).mul(&heads[y])).collect());
            p.mul(&hyper(alpha, beta, x, kappa - x))
        })
        .collect();
    W::sum(terms)
}

fn check_appendix(n: usize, alpha: usize, k: usize) -> Result<()> {
    if alpha > n || k > n {
        return Err(invalid(format!("need alpha <= n and k <= n; got n={n} alpha={alpha} k={k}")));
    }
    Ok(())
}

fn prob_delta<W: Weight>(n: usize, alpha: usize, k: usize, energy_delta: i64) -> W {
    let diff = i(k) - energy_delta;
    if diff < 0 || diff % 2 != 0 || energy_delta < -i(k) {
        return W::zero();
    }
    let b = (diff / 2) as usize;
    let terms = (b..=k)
        .map(|x1| {
            W::ratio(
                &[(i(x1), i(b)), (i(alpha), i(x1)), (i(n - alpha), i(k - x1))],
                &[(i(n), i(k))],
                x1 as u32,
            )
        })
        .collect();
    W::sum(terms)
}

fn within_threshold<W: Weight>(n: usize, alpha: usize, k: usize, gamma_factor: f64) -> W {
    let top = (alpha as f64 * (gamma_factor - 1.0) + 1e-9).floor();
    let top = if top >= k as f64 { i(k) } else { top as i64 };
    W::sum((-i(k)..=top).map(|d| prob_delta::<W>(n, alpha, k, d)).collect())
}

fn check_inner(alpha: usize, beta: usize, r: usize, k: usize, x: usize, g: usize) -> Result<()> {
    check_sampling(alpha, beta, r)?;
    check_count("k", k, alpha + beta)?;
    if g > x || x > k.min(alpha) || k - x > beta {
        return Err(invalid(format!("need g <= x <= min(k, alpha) and k - x <= beta; got k={k} x={x} g={g}")));
    }
    Ok(())
}

/// Probability that one sample test is won by the adversary given `x` of
/// its `k` pulses in Bin_alpha and `g` of those annihilated.
pub fn p_inner(alpha: usize, beta: usize, r: usize, k: usize, x: usize, g: usize) -> Result<f64> {
    check_inner(alpha, beta, r, k, x, g)?;
    Ok(inner(alpha, r, x, g, &beta_tails::<f64>(beta, r, k - x)))
}

/// [`p_inner`] at `r = alpha`, evaluated as a single tail probability.
pub fn p_inner_full_sample(alpha: usize, beta: usize, k: usize, x: usize, g: usize) -> Result<f64> {
    check_inner(alpha, beta, alpha, k, x, g)?;
    Ok(inner_full(alpha, x, g, &beta_tails::<f64>(beta, alpha, k - x)))
}

/// Adversary success given `x` pulses in Bin_alpha, averaged over annihilations.
pub fn p_given_x(alpha: usize, beta: usize, r: usize, k: usize, x: usize) -> Result<f64> {
    check_inner(alpha, beta, r, k, x, 0)?;
    Ok(given_x::<f64>(alpha, beta, r, k, x, |_| true))
}

/// `P(b_beta > b_alpha)` for one random-sample test after `k` injections.
pub fn prob_evade_rcv(alpha: usize, beta: usize, r: usize, k: usize) -> Result<f64> {
    check_sampling(alpha, beta, r)?;
    check_count("k", k, alpha + beta)?;
    Ok(evade::<f64>(alpha, beta, r, k, |_, _| true))
}

/// [`prob_evade_rcv`] restricted to injections that keep the aggregate
/// within the adversary's room `zeta`.
pub fn prob_success(alpha: usize, beta: usize, r: usize, zeta: f64, k: usize) -> Result<f64> {
    check_sampling(alpha, beta, r)?;
    check_count("k", k, alpha + beta)?;
    check_zeta(zeta)?;
    Ok(evade::<f64>(alpha, beta, r, k, |x, g| within_room(alpha, zeta, k, x, g)))
}

/// Probability that `kappa` high-energy noise intervals pass one sample
/// test (Bin_alpha's aggregate at least Bin_beta's).
pub fn prob_noise_pass(alpha: usize, beta: usize, r: usize, kappa: usize) -> Result<f64> {
    check_sampling(alpha, beta, r)?;
    check_count("kappa", kappa, alpha + beta)?;
    Ok(noise_pass::<f64>(alpha, beta, r, kappa))
}

/// Probability that `k` random-phase pulses over an `n`-slot code with
/// `alpha` pulses change the aggregate by `energy_delta`. Zero when
/// `k - energy_delta` is odd.
pub fn appendix_prob_delta(n: usize, alpha: usize, k: usize, energy_delta: i64) -> Result<f64> {
    check_appendix(n, alpha, k)?;
    check_delta(k, energy_delta)?;
    Ok(prob_delta::<f64>(n, alpha, k, energy_delta))
}

fn check_delta(k: usize, energy_delta: i64) -> Result<()> {
    if energy_delta.abs() > i(k) {
        return Err(invalid(format!("energy delta {energy_delta} outside [-{k}, {k}]")));
    }
    Ok(())
}

fn check_gamma_factor(gamma_factor: f64) -> Result<()> {
    if !(gamma_factor >= 1.0) {
        return Err(invalid(format!("gamma factor must be >= 1, got {gamma_factor}")));
    }
    Ok(())
}

/// Probability the aggregate grows by at most `alpha (gamma_factor - 1)`.
pub fn appendix_prob_within_threshold(n: usize, alpha: usize, k: usize, gamma_factor: f64) -> Result<f64> {
    check_appendix(n, alpha, k)?;
    check_gamma_factor(gamma_factor)?;
    Ok(within_threshold::<f64>(n, alpha, k, gamma_factor))
}

/// Exact big-rational evaluations of the same formulas.
pub mod exact {
    use num_rational::BigRational;

    use super::*;

    pub fn hypergeom(big_i: usize, big_j: usize, i_: usize, j: usize) -> BigRational {
        hyper(big_i, big_j, i_, j)
    }

    pub fn p_inner(alpha: usize, beta: usize, r: usize, k: usize, x: usize, g: usize) -> Result<BigRational> {
        check_inner(alpha, beta, r, k, x, g)?;
        Ok(inner(alpha, r, x, g, &beta_tails::<BigRational>(beta, r, k - x)))
    }

    pub fn p_inner_full_sample(alpha: usize, beta: usize, k: usize, x: usize, g: usize) -> Result<BigRational> {
        check_inner(alpha, beta, alpha, k, x, g)?;
        Ok(inner_full(alpha, x, g, &beta_tails::<BigRational>(beta, alpha, k - x)))
    }

    pub fn prob_evade_rcv(alpha: usize, beta: usize, r: usize, k: usize) -> Result<BigRational> {
        check_sampling(alpha, beta, r)?;
        check_count("k", k, alpha + beta)?;
        Ok(evade::<BigRational>(alpha, beta, r, k, |_, _| true))
    }

    pub fn prob_success(alpha: usize, beta: usize, r: usize, zeta: f64, k: usize) -> Result<BigRational> {
        check_sampling(alpha, beta, r)?;
        check_count("k", k, alpha + beta)?;
        check_zeta(zeta)?;
        Ok(evade::<BigRational>(alpha, beta, r, k, |x, g| within_room(alpha, zeta, k, x, g)))
    }

    pub fn prob_noise_pass(alpha: usize, beta: usize, r: usize, kappa: usize) -> Result<BigRational> {
        check_sampling(alpha, beta, r)?;
        check_count("kappa", kappa, alpha + beta)?;
        Ok(noise_pass::<BigRational>(alpha, beta, r, kappa))
    }

    pub fn appendix_prob_delta(n: usize, alpha: usize, k: usize, energy_delta: i64) -> Result<BigRational> {
        check_appendix(n, alpha, k)?;
        check_delta(k, energy_delta)?;
        Ok(prob_delta::<BigRational>(n, alpha, k, energy_delta))
    }

    pub fn appendix_prob_within_threshold(n: usize, alpha: usize, k: usize, gamma_factor: f64) -> Result<BigRational> {
        check_appendix(n, alpha, k)?;
        check_gamma_factor(gamma_factor)?;
        Ok(within_threshold::<BigRational>(n, alpha, k, gamma_factor))
    }
}

/// Which closed form a sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formula {
    /// [`prob_evade_rcv`] over `k`.
    Evade,
    /// [`prob_success`] over `k`.
    Success,
    /// [`prob_noise_pass`] at one `kappa`.
    Noise,
    /// [`appendix_prob_delta`] over `energy_delta`, with `n = alpha + beta`
    /// and `k` fixed.
    Delta,
    /// [`appendix_prob_within_threshold`] over `k`, with `n = alpha + beta`
    /// and the gamma factor carried in `zeta`.
    Within,
}

impl std::str::FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pevade" | "evade" => Ok(Self::Evade),
            "psa" | "success" => Ok(Self::Success),
            "pnoise" | "noise" => Ok(Self::Noise),
            "delta" => Ok(Self::Delta),
            "within" => Ok(Self::Within),
            other => Err(Error::Parse(format!("unknown formula `{other}` (pevade, psa, pnoise, delta, within)"))),
        }
    }
}

/// One point of a sweep. `k` holds the swept variable: injected pulses,
/// `kappa` for noise, or the energy delta for the appendix distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: usize,
    pub beta: usize,
    pub r: usize,
    pub zeta: Option<f64>,
    pub k: i64,
    pub p: f64,
}

pub const SWEEP_CSV_HEADER: [&str; 6] = ["alpha", "beta", "r", "zeta", "k", "p"];

/// Evaluates `formula` at each point of `grid`, in parallel, returning rows
/// in grid order. Fields of `base` not replaced by the grid variable are
/// held fixed; `zeta` is only reported for the formulas that read it.
pub fn sweep(formula: Formula, base: &AnalyticParams, grid: &[i64]) -> Result<Vec<SweepRow>> {
    let AnalyticParams { alpha, beta, r, k, zeta, .. } = *base;
    let as_count = |v: i64| usize::try_from(v).map_err(|_| invalid(format!("negative grid value {v}")));
    let reported_zeta = matches!(formula, Formula::Success | Formula::Within).then_some(zeta);
    grid.par_iter()
        .map(|&v| {
            let p = match formula {
                Formula::Evade => prob_evade_rcv(alpha, beta, r, as_count(v)?)?,
                Formula::Success => prob_success(alpha, beta, r, zeta, as_count(v)?)?,
                Formula::Noise => prob_noise_pass(alpha, beta, r, as_count(v)?)?,
                Formula::Delta => appendix_prob_delta(alpha + beta, alpha, k, v)?,
                Formula::Within => appendix_prob_within_threshold(alpha + beta, alpha, as_count(v)?, zeta)?,
            };
            Ok(SweepRow { alpha, beta, r, zeta: reported_zeta, k: v, p })
        })
        .collect()
}

/// Writes rows as CSV under [`SWEEP_CSV_HEADER`].
pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Structural(format!("writing CSV: {e}"));
    w.write_record(SWEEP_CSV_HEADER).map_err(io)?;
    for row in rows {
        w.write_record([
            row.alpha.to_string(),
            row.beta.to_string(),
            row.r.to_string(),
            row.zeta.map(|z| z.to_string()).unwrap_or_default(),
            row.k.to_string(),
            format!("{:e}", row.p),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Structural(format!("writing CSV: {e}")))?;
    Ok(())
}

/// The `(k, p)` point with the largest `p`; ties go to the smallest `k`.
pub fn argmax(rows: &[SweepRow]) -> Option<(i64, f64)> {
    rows.iter().fold(None, |best: Option<(i64, f64)>, row| match best {
        Some((_, p)) if p >= row.p => best,
        _ => Some((row.k, row.p)),
    })
}

#[cfg(test)]
mod tests {
    use num_rational::BigRational;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    use super::*;

    fn f(q: &BigRational) -> f64 {
        q.to_f64().unwrap()
    }

    fn params(alpha: usize, beta: usize, r: usize, zeta: f64) -> AnalyticParams {
        AnalyticParams { alpha, beta, r, k: 0, zeta, kappa: 0 }
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn hypergeom_values() {
        assert_eq!(hypergeom(1, 1, 1, 0), 0.5);
        assert!((hypergeom(2, 2, 1, 1) - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(hypergeom(2, 2, 3, 0), 0.0);
        for k in [0, 1, 17, 75, 149, 150] {
            let s: f64 = (0..=k.min(50)).map(|x| hypergeom(50, 100, x, k - x)).sum();
            assert!((s - 1.0).abs() < 1e-12, "k={k}: {s}");
        }
    }

    #[test]
    fn p_inner_edge_cases() {
        assert_eq!(p_inner(4, 4, 2, 0, 0, 0).unwrap(), 0.0);
        // alpha = beta = 2, r = 1, one pulse annihilating an alpha slot:
        // the adversary needs the empty alpha slot (1/2) and ... nothing in
        // Bin_beta was hit, so it can never win.
        assert_eq!(p_inner(2, 2, 1, 1, 1, 1).unwrap(), 0.0);
        // Two pulses, one annihilating, one in Bin_beta: win only when the
        // annihilated slot and the hit slot are both picked.
        assert!((p_inner(2, 2, 1, 2, 1, 1).unwrap() - 0.25).abs() < 1e-15);
        assert!(p_inner(2, 2, 3, 1, 1, 1).is_err());
        assert!(p_inner(2, 2, 1, 1, 0, 1).is_err());
        assert!(p_inner(2, 2, 1, 4, 1, 0).is_err());
    }

    #[test]
    fn full_sample_path_matches_double_sum() {
        let (a, b) = (3, 5);
        for k in 0..=a + b {
            for x in x_range(a, b, k) {
                for g in 0..=x {
                    let one = p_inner(a, b, a, k, x, g).unwrap();
                    let two = p_inner_full_sample(a, b, k, x, g).unwrap();
                    assert!((one - two).abs() < 1e-12, "k={k} x={x} g={g}");
                    assert_eq!(exact::p_inner(a, b, a, k, x, g).unwrap(), exact::p_inner_full_sample(a, b, k, x, g).unwrap());
                }
            }
        }
    }

    #[test]
    fn binomial_weights_sum_to_one() {
        for x in 0..=20usize {
            let s: f64 = (0..=x).map(|g| <f64 as Weight>::ratio(&[(x as i64, g as i64)], &[], x as u32)).sum();
            assert!((s - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn p_given_x_single_term_at_zero() {
        assert_eq!(p_given_x(5, 7, 2, 3, 0).unwrap(), p_inner(5, 7, 2, 3, 0, 0).unwrap());
    }

    #[test]
    fn evade_is_zero_without_injections() {
        for r in 1..=5 {
            assert_eq!(prob_evade_rcv(5, 9, r, 0).unwrap(), 0.0);
        }
    }

    #[test]
    fn robust_check_landmarks() {
        let peak = |r| {
            let ks: Vec<i64> = (0..=150).collect();
            argmax(&sweep(Formula::Evade, &params(50, 100, r, 0.0), &ks).unwrap()).unwrap()
        };
        let (k2, p2) = peak(2);
        assert!((p2 - 0.27).abs() < 0.02 && (k2 - 135).abs() <= 10, "r=2: {k2} {p2}");
        let (k8, p8) = peak(8);
        assert!((p8 - 0.0585).abs() < 0.006 && (k8 - 130).abs() <= 10, "r=8: {k8} {p8}");
    }

    #[test]
    fn gate_vanishes_for_huge_room() {
        for k in [0, 10, 40, 90, 150] {
            assert_eq!(prob_success(50, 100, 4, 1e9, k).unwrap(), prob_evade_rcv(50, 100, 4, k).unwrap());
        }
        assert!(prob_success(5, 5, 1, 0.0, 1).is_err());
    }

    #[test]
    fn noise_pass_tends_to_half() {
        let p = prob_noise_pass(80, 100, 80, 40).unwrap();
        assert!(p > 0.5 && p < 0.6, "{p}");
        let big = prob_noise_pass(1000, 100, 100, 550).unwrap();
        assert!((big - 0.5).abs() < 0.1, "{big}");
    }

    #[test]
    fn appendix_cases() {
        assert_eq!(appendix_prob_delta(10, 4, 0, 0).unwrap(), 1.0);
        // One pulse: annihilates an alpha pulse with probability (alpha/n)/2.
        let p = appendix_prob_delta(10, 4, 1, -1).unwrap();
        assert!((p - 0.2).abs() < 1e-15);
        assert_eq!(appendix_prob_delta(10, 4, 3, 0).unwrap(), 0.0);
        assert!(appendix_prob_delta(10, 4, 3, 5).is_err());
        assert!(appendix_prob_delta(10, 11, 3, 1).is_err());
        // Threshold below +1 excludes only delta = +1.
        let w = appendix_prob_within_threshold(10, 4, 1, 1.0).unwrap();
        assert!((w - 0.2).abs() < 1e-15);
        assert!((appendix_prob_within_threshold(10, 4, 1, 1.25).unwrap() - 1.0).abs() < 1e-12);
        assert!(appendix_prob_within_threshold(10, 4, 1, 0.5).is_err());
    }

    #[test]
    fn appendix_normalises() {
        let one: BigRational = num_traits::One::one();
        for n in 1..=20usize {
            for alpha in [0, 1, n / 3, n] {
                for k in 0..=n {
                    let total = (-(k as i64)..=k as i64)
                        .map(|d| exact::appendix_prob_delta(n, alpha, k, d).unwrap())
                        .fold(BigRational::from_integer(0.into()), |a, b| a + b);
                    assert_eq!(total, one, "n={n} alpha={alpha} k={k}");
                    if alpha > 0 {
                        let s = exact::appendix_prob_within_threshold(n, alpha, k, 1.0 + k as f64 / alpha as f64).unwrap();
                        assert_eq!(s, one, "n={n} alpha={alpha} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn sweep_csv_shape() {
        let rows = sweep(Formula::Success, &params(5, 5, 1, 2.0), &[0, 1, 2]).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "alpha,beta,r,zeta,k,p");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("5,5,1,2,0,"));
        assert!(sweep(Formula::Success, &params(5, 5, 1, 0.0), &[0]).is_err());
        assert!(sweep(Formula::Evade, &params(5, 5, 1, 0.0), &[-1]).is_err());
        let deltas = sweep(Formula::Delta, &AnalyticParams { k: 3, ..params(5, 5, 1, 1.0) }, &[-3, -2, -1, 0, 1, 2, 3]).unwrap();
        assert!((deltas.iter().map(|r| r.p).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(deltas[0].zeta, None);
        assert_eq!("psa".parse::<Formula>().unwrap(), Formula::Success);
        assert!("nope".parse::<Formula>().is_err());
    }

    fn small() -> impl Strategy<Value = (usize, usize, usize, usize)> {
        (1usize..=12, 1usize..=12).prop_flat_map(|(a, b)| (Just(a), Just(b), 1..=a.min(b), 0..=a + b))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn log_space_matches_exact((a, b, r, k) in small(), zeta in 1.0f64..4.0) {
            let e = prob_evade_rcv(a, b, r, k).unwrap();
            prop_assert!(rel_close(e, f(&exact::prob_evade_rcv(a, b, r, k).unwrap()), 1e-10));
            let s = prob_success(a, b, r, zeta, k).unwrap();
            prop_assert!(rel_close(s, f(&exact::prob_success(a, b, r, zeta, k).unwrap()), 1e-10));
            let n = prob_noise_pass(a, b, r, k).unwrap();
            prop_assert!(rel_close(n, f(&exact::prob_noise_pass(a, b, r, k).unwrap()), 1e-10));
        }

        #[test]
        fn probabilities_in_unit_interval((a, b, r, k) in small(), zeta in 0.5f64..30.0) {
            for p in [
                prob_evade_rcv(a, b, r, k).unwrap(),
                prob_success(a, b, r, zeta, k).unwrap(),
                prob_noise_pass(a, b, r, k).unwrap(),
            ] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
            }
        }

        #[test]
        fn gate_only_removes_mass((a, b, r, k) in small(), zeta in 0.5f64..30.0) {
            let e = exact::prob_evade_rcv(a, b, r, k).unwrap();
            let s = exact::prob_success(a, b, r, zeta, k).unwrap();
            prop_assert!(s <= e);
        }

        #[test]
        fn within_threshold_monotone(n in 1usize..=20, seed in 0usize..400, g1 in 1.0f64..3.0, dg in 0.0f64..2.0) {
            let alpha = seed % (n + 1);
            let k = (seed / 21) % (n + 1);
            let lo = appendix_prob_within_threshold(n, alpha, k, g1).unwrap();
            let hi = appendix_prob_within_threshold(n, alpha, k, g1 + dg).unwrap();
            prop_assert!(lo <= hi + 1e-12);
        }
    }
}
