//! Verification codes: `alpha` random-phase energy pulses spread over `n`
//! slots by a secret uniform permutation, the other `beta` slots empty.
//!
//! Slot indices are 0-based. A code printed with 1-based positions
//! `{2, 6, 7, 13, 15}` has `bin_alpha == [1, 5, 6, 12, 14]` here.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default inter-slot spacing: one pulse per microsecond.
pub const DEFAULT_TS_NS: f64 = 1000.0;
/// Default pulse width.
pub const DEFAULT_TP_NS: f64 = 2.0;

const PERMUTATION_STREAM: u64 = 0;
const PHASE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    pub alpha: usize,
    pub beta: usize,
    /// Symbol length: pulses aggregated per hypothesis-test sample.
    pub r: usize,
    pub ts_ns: f64,
    pub tp_ns: f64,
}

impl CodeParams {
    pub fn new(alpha: usize, beta: usize, r: usize) -> Result<Self> {
        Self::with_timing(alpha, beta, r, DEFAULT_TS_NS, DEFAULT_TP_NS)
    }

    pub fn with_timing(alpha: usize, beta: usize, r: usize, ts_ns: f64, tp_ns: f64) -> Result<Self> {
        let params = Self { alpha, beta, r, ts_ns, tp_ns };
        params.validate()?;
        Ok(params)
    }

    pub fn n(&self) -> usize {
        self.alpha + self.beta
    }

    /// `r` must lie in `1..=alpha`; an empty code (`alpha == 0`) carries `r == 0`.
    pub fn validate(&self) -> Result<()> {
        if self.n() == 0 {
            return Err(invalid("code must have at least one slot"));
        }
        if self.r > self.alpha {
            return Err(invalid(format!("r = {} exceeds alpha = {}", self.r, self.alpha)));
        }
        if self.alpha > 0 && self.r == 0 {
            return Err(invalid("r must be at least 1"));
        }
        if !(self.tp_ns > 0.0 && self.ts_ns.is_finite()) {
            return Err(invalid("pulse width must be positive"));
        }
        if self.ts_ns <= self.tp_ns {
            return Err(invalid(format!(
                "slot spacing {} ns must exceed pulse width {} ns",
                self.ts_ns, self.tp_ns
            )));
        }
        Ok(())
    }

    /// Whether the slot spacing leaves room for a full round trip at
    /// `max_range_m`, so a replay inside one slot cannot be mistaken for a
    /// legitimate echo.
    pub fn satisfies_spacing(&self, max_range_m: f64) -> bool {
        self.ts_ns > 2.0 * crate::tof_ns(max_range_m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationCode {
    params: CodeParams,
    slots: Vec<i8>,
    bin_alpha: Vec<usize>,
    bin_beta: Vec<usize>,
    seed: Option<u64>,
}

// f64 timing fields are validated finite, so equality is reflexive.
impl Eq for CodeParams {}

impl VerificationCode {
    /// Builds a code from an explicit slot row. `params.alpha` and
    /// `params.beta` must match the row's occupancy.
    pub fn from_slots(params: CodeParams, slots: Vec<i8>) -> Result<Self> {
        params.validate()?;
        if slots.len() != params.n() {
            return Err(Error::Structural(format!(
                "slot row has {} entries, params expect {}",
                slots.len(),
                params.n()
            )));
        }
        if let Some(bad) = slots.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(invalid(format!("slot value {bad} is not in {{-1, 0, 1}}")));
        }
        let (bin_alpha, bin_beta): (Vec<usize>, Vec<usize>) =
            (0..slots.len()).partition(|&i| slots[i] != 0);
        if bin_alpha.len() != params.alpha {
            return Err(invalid(format!(
                "row has {} pulses, params declare alpha = {}",
                bin_alpha.len(),
                params.alpha
            )));
        }
        Ok(Self { params, slots, bin_alpha, bin_beta, seed: None })
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    pub fn slots(&self) -> &[i8] {
        &self.slots
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Indices of energy slots, ascending.
    pub fn bin_alpha(&self) -> &[usize] {
        &self.bin_alpha
    }

    /// Indices of empty slots, ascending.
    pub fn bin_beta(&self) -> &[usize] {
        &self.bin_beta
    }

    pub fn bins(&self) -> (&[usize], &[usize]) {
        (&self.bin_alpha, &self.bin_beta)
    }
}

/// Draws a code deterministically from `seed`.
///
/// Positions are a uniform `alpha`-subset of `0..n`; phases are independent
/// fair signs. The two come from separate ChaCha20 streams of the same seed,
/// so fixing one leaves the other's distribution untouched.
pub fn generate_code(params: CodeParams, seed: u64) -> Result<VerificationCode> {
    params.validate()?;
    let n = params.n();

    let mut perm_rng = ChaCha20Rng::seed_from_u64(seed);
    perm_rng.set_stream(PERMUTATION_STREAM);
    let mut bin_alpha = index::sample(&mut perm_rng, n, params.alpha).into_vec();
    bin_alpha.sort_unstable();

    let mut phase_rng = ChaCha20Rng::seed_from_u64(seed);
    phase_rng.set_stream(PHASE_STREAM);

    let mut slots = vec![0i8; n];
    for &i in &bin_alpha {
        slots[i] = if phase_rng.gen::<bool>() { 1 } else { -1 };
    }
    let bin_beta = (0..n).filter(|i| slots[*i] == 0).collect();

    Ok(VerificationCode { params, slots, bin_alpha, bin_beta, seed: Some(seed) })
}

/// Returns `(bin_alpha, bin_beta)` as owned index sets.
pub fn bins(code: &VerificationCode) -> (Vec<usize>, Vec<usize>) {
    (code.bin_alpha.clone(), code.bin_beta.clone())
}

/// One-line form, e.g. `0,-1,0,0,0,-1,1`.
impl fmt::Display for VerificationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_row(f, &self.slots)
    }
}

pub(crate) fn write_row<T: fmt::Display>(f: &mut impl fmt::Write, row: &[T]) -> fmt::Result {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            f.write_char(',')?;
        }
        write!(f, "{v}")?;
    }
    Ok(())
}

/// Parses a slot row into a code with default timing and `r = min(1, alpha)`.
impl FromStr for VerificationCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let slots = parse_row(s)?;
        let alpha = slots.iter().filter(|v| **v != 0).count();
        let params = CodeParams::new(alpha, slots.len() - alpha, alpha.min(1))?;
        Self::from_slots(params, slots)
    }
}

pub(crate) fn parse_row(s: &str) -> Result<Vec<i8>> {
    let s = s.trim();
    if s.is_empty() {
        return Err(Error::Parse("empty slot row".into()));
    }
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            match tok {
                "" => Ok(0),
                _ => tok.parse::<i8>().map_err(|e| Error::Parse(format!("bad slot value {tok:?}: {e}"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    pub(crate) const FIGURE_ROW: &str = "0,-1,0,0,0,-1,1,0,0,0,0,0,1,0,-1,0,0,0";

    #[test]
    fn figure_code_bins() {
        let code: VerificationCode = FIGURE_ROW.parse().unwrap();
        assert_eq!(code.params().alpha, 5);
        assert_eq!(code.params().beta, 13);
        let one_based: Vec<usize> = code.bin_alpha().iter().map(|i| i + 1).collect();
        assert_eq!(one_based, vec![2, 6, 7, 13, 15]);
        assert_eq!(code.bin_beta().len(), 13);
        assert_eq!(code.to_string(), FIGURE_ROW);
    }

    #[test]
    fn some_seed_reproduces_figure_positions() {
        let params = CodeParams::new(5, 13, 5).unwrap();
        let code = generate_code(params, 35027).unwrap();
        assert_eq!(code.bin_alpha(), &[1, 5, 6, 12, 14]);
    }

    #[test]
    fn single_slot_code() {
        let params = CodeParams::new(1, 0, 1).unwrap();
        for seed in 0..16 {
            let code = generate_code(params, seed).unwrap();
            assert!(code.slots() == [1] || code.slots() == [-1]);
            assert_eq!(code.bin_alpha(), &[0]);
            assert!(code.bin_beta().is_empty());
        }
    }

    #[test]
    fn empty_code_bins() {
        let params = CodeParams::new(0, 6, 0).unwrap();
        let code = generate_code(params, 3).unwrap();
        let (a, b) = bins(&code);
        assert!(a.is_empty());
        assert_eq!(b, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(CodeParams::new(3, 3, 4).is_err());
        assert!(CodeParams::new(3, 3, 0).is_err());
        assert!(CodeParams::new(0, 0, 0).is_err());
        assert!(CodeParams::with_timing(3, 3, 1, 2.0, 2.0).is_err());
        assert!("0,2,0".parse::<VerificationCode>().is_err());
        assert!("".parse::<VerificationCode>().is_err());
    }

    #[test]
    fn spacing_rule() {
        let p = CodeParams::new(5, 5, 1).unwrap();
        // 100 m round trip is ~667 ns.
        assert!(p.satisfies_spacing(100.0));
        assert!(!p.satisfies_spacing(160.0));
    }

    #[test]
    fn permutation_and_phase_uniformity() {
        // n = 4, alpha = 2: the six position pairs should be equally likely
        // and the sign bits fair.
        let params = CodeParams::new(2, 2, 1).unwrap();
        let trials = 100_000u64;
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        let mut positive = 0u64;
        for seed in 0..trials {
            let code = generate_code(params, seed).unwrap();
            *counts.entry(code.bin_alpha().to_vec()).or_default() += 1;
            positive += code.slots().iter().filter(|s| **s == 1).count() as u64;
        }
        assert_eq!(counts.len(), 6);
        let expected = trials as f64 / 6.0;
        let mut chi2 = 0.0;
        for &c in counts.values() {
            let freq = c as f64 / trials as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.01, "freq {freq}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 5 degrees of freedom, 0.999 quantile.
        assert!(chi2 < 20.52, "chi2 {chi2}");

        let signs = 2.0 * trials as f64;
        let z = (positive as f64 - signs / 2.0) / (signs / 4.0).sqrt();
        assert!(z.abs() < 3.29, "sign bias z = {z}");
    }

    #[test]
    fn phases_independent_of_positions() {
        // Same seed, different alpha: the phase stream is shared, so the
        // sign sequence of the first pulses agrees.
        let a = generate_code(CodeParams::new(3, 5, 1).unwrap(), 77).unwrap();
        let b = generate_code(CodeParams::new(3, 9, 1).unwrap(), 77).unwrap();
        let signs = |c: &VerificationCode| c.bin_alpha().iter().map(|&i| c.slots()[i]).collect::<Vec<_>>();
        assert_eq!(signs(&a), signs(&b));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn exactly_alpha_pulses(alpha in 1usize..40, beta in 0usize..40, seed: u64) {
                let params = CodeParams::new(alpha, beta, 1).unwrap();
                let code = generate_code(params, seed).unwrap();
                prop_assert_eq!(code.slots().iter().filter(|s| **s != 0).count(), alpha);
                let mut all: Vec<usize> = code.bin_alpha().iter().chain(code.bin_beta()).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..alpha + beta).collect::<Vec<_>>());
                for &i in code.bin_alpha() {
                    prop_assert!(code.slots()[i] != 0);
                }
                prop_assert_eq!(&generate_code(params, seed).unwrap(), &code);
            }

            #[test]
            fn text_form_round_trips(alpha in 1usize..20, beta in 0usize..20, seed: u64) {
                let code = generate_code(CodeParams::new(alpha, beta, 1).unwrap(), seed).unwrap();
                let back: VerificationCode = code.to_string().parse().unwrap();
                prop_assert_eq!(back.slots(), code.slots());
            }
        }
    }
}
