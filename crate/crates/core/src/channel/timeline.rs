use serde::{Deserialize, Serialize};

use super::{unit_noise, LinkModel, SlotSignal};
use crate::adversary::AttackPlan;
use crate::codec::{CodeParams, VerificationCode};
use crate::error::{invalid, Error, Result};

/// Slack for comparing event times against window edges computed by
/// repeated float arithmetic.
const EDGE_EPS_NS: f64 = 1e-6;
/// Window start times are keyed for noise at this resolution.
const NOISE_KEY_PER_NS: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameSource {
    Authentic,
    Adversary,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEvent {
    pub time_ns: f64,
    pub amplitude: f64,
    pub source: FrameSource,
}

/// A preamble detection: where a frame copy starts and how strong it is.
/// Preamble acquisition itself is not modelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub time_ns: f64,
    pub strength: f64,
    pub source: FrameSource,
}

/// A recorded stretch of channel, sparse in pulses and with AWGN that is
/// a pure function of the window being read, so re-reading a window always
/// sees the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    start_ns: f64,
    end_ns: f64,
    slot_spacing_ns: f64,
    window_ns: f64,
    sigma_n: f64,
    noise_seed: u64,
    polarity: f64,
    events: Vec<PulseEvent>,
    peaks: Vec<Peak>,
}

impl Timeline {
    /// An empty recording of `[start_ns, end_ns)` with slot spacing and
    /// integration window taken from `params`.
    pub fn new(params: &CodeParams, start_ns: f64, end_ns: f64, sigma_n2: f64, noise_seed: u64) -> Result<Self> {
        params.validate()?;
        if !(end_ns > start_ns) {
            return Err(invalid(format!("empty recording [{start_ns}, {end_ns})")));
        }
        if !(sigma_n2 >= 0.0) {
            return Err(invalid("noise variance must be non-negative"));
        }
        Ok(Self {
            start_ns,
            end_ns,
            slot_spacing_ns: params.ts_ns,
            window_ns: params.tp_ns,
            sigma_n: sigma_n2.sqrt(),
            noise_seed,
            polarity: 1.0,
            events: Vec::new(),
            peaks: Vec::new(),
        })
    }

    pub fn start_ns(&self) -> f64 {
        self.start_ns
    }

    pub fn end_ns(&self) -> f64 {
        self.end_ns
    }

    pub fn slot_spacing_ns(&self) -> f64 {
        self.slot_spacing_ns
    }

    pub fn window_ns(&self) -> f64 {
        self.window_ns
    }

    pub fn events(&self) -> &[PulseEvent] {
        &self.events
    }

    pub fn peaks(&self) -> &[Peak] {
        &self.peaks
    }

    /// Whether `[from_ns, to_ns)` lies inside the recording.
    pub fn covers(&self, from_ns: f64, to_ns: f64) -> bool {
        from_ns >= self.start_ns - EDGE_EPS_NS && to_ns <= self.end_ns + EDGE_EPS_NS
    }

    fn frame_end(&self, start_ns: f64, n: usize) -> f64 {
        start_ns + (n.max(1) - 1) as f64 * self.slot_spacing_ns + self.window_ns
    }

    pub(crate) fn push_event(&mut self, event: PulseEvent) -> Result<()> {
        if !self.covers(event.time_ns, event.time_ns) {
            return Err(Error::Structural(format!(
                "pulse at {} ns outside recording [{}, {})",
                event.time_ns, self.start_ns, self.end_ns
            )));
        }
        self.events.push(event);
        Ok(())
    }

    pub(crate) fn push_peak(&mut self, peak: Peak) {
        self.peaks.push(peak);
    }

    /// Lays `code` down starting at `toa_ns`, each pulse with amplitude
    /// `amplitude` times its sign, and records a preamble peak for it.
    pub fn add_frame(&mut self, code: &VerificationCode, toa_ns: f64, amplitude: f64, source: FrameSource) -> Result<()> {
        if !self.covers(toa_ns, self.frame_end(toa_ns, code.n())) {
            return Err(Error::Structural(format!("frame at {toa_ns} ns does not fit the recording")));
        }
        for &i in code.bin_alpha() {
            self.push_event(PulseEvent {
                time_ns: toa_ns + i as f64 * self.slot_spacing_ns,
                amplitude: f64::from(code.slots()[i]) * amplitude,
                source,
            })?;
        }
        self.push_peak(Peak { time_ns: toa_ns, strength: amplitude * amplitude, source });
        Ok(())
    }

    /// Adds the plan's injections aligned to the frame that starts at `frame_toa_ns`.
    pub fn add_injections(&mut self, plan: &AttackPlan, frame_toa_ns: f64, energy_factor: f64) -> Result<()> {
        let scale = energy_factor.sqrt();
        for inj in &plan.injections {
            self.push_event(PulseEvent {
                time_ns: frame_toa_ns + inj.slot as f64 * self.slot_spacing_ns,
                amplitude: f64::from(inj.phase) * inj.power.sqrt() * scale,
                source: FrameSource::Adversary,
            })?;
        }
        Ok(())
    }

    /// The strongest preamble peak; ties go to the latest one.
    pub fn highest_peak(&self) -> Option<Peak> {
        self.peaks.iter().copied().reduce(|best, p| {
            if p.strength > best.strength || (p.strength == best.strength && p.time_ns > best.time_ns) {
                p
            } else {
                best
            }
        })
    }

    /// Same recording with every amplitude sign flipped, noise included.
    pub fn inverted(&self) -> Self {
        let mut out = self.clone();
        out.polarity = -out.polarity;
        out
    }

    /// Sum of squared event amplitudes, ignoring overlaps and noise.
    pub fn total_event_energy(&self) -> f64 {
        self.events.iter().map(|e| e.amplitude * e.amplitude).sum()
    }

    /// Integrated amplitude of the window starting at `start_ns`.
    pub fn window_amplitude(&self, start_ns: f64) -> f64 {
        let signal: f64 = self
            .events
            .iter()
            .filter(|e| {
                let off = e.time_ns - start_ns;
                off >= -EDGE_EPS_NS && off < self.window_ns - EDGE_EPS_NS
            })
            .map(|e| e.amplitude)
            .sum();
        self.polarity * (signal + self.noise_at(start_ns))
    }

    fn noise_at(&self, window_start_ns: f64) -> f64 {
        if self.sigma_n == 0.0 {
            return 0.0;
        }
        let key = (window_start_ns * NOISE_KEY_PER_NS).round() as i64 as u64;
        self.sigma_n * unit_noise(self.noise_seed, key)
    }

    /// Reads `n` slot windows of a candidate frame starting at `start_ns`.
    pub fn read_frame(&self, start_ns: f64, n: usize) -> Result<SlotSignal> {
        if !self.covers(start_ns, self.frame_end(start_ns, n)) {
            return Err(Error::Structural(format!(
                "candidate frame at {start_ns} ns runs outside the recording [{}, {})",
                self.start_ns, self.end_ns
            )));
        }
        let mut amplitudes = vec![0.0; n];
        for e in &self.events {
            let off = e.time_ns - start_ns;
            if off < -EDGE_EPS_NS {
                continue;
            }
            let slot = ((off + EDGE_EPS_NS) / self.slot_spacing_ns).floor() as usize;
            if slot >= n {
                continue;
            }
            let within = off - slot as f64 * self.slot_spacing_ns;
            if within >= -EDGE_EPS_NS && within < self.window_ns - EDGE_EPS_NS {
                amplitudes[slot] += e.amplitude;
            }
        }
        for (i, a) in amplitudes.iter_mut().enumerate() {
            *a = self.polarity * (*a + self.noise_at(start_ns + i as f64 * self.slot_spacing_ns));
        }
        Ok(SlotSignal { amplitudes, noise_seed: self.noise_seed })
    }
}

/// Records the sender's frame arriving at `toa_ns` over `link`, with the
/// plan's injections (if any) aligned to it. The recording spans
/// `[toa_ns - lead_ns, toa_ns + frame + tail_ns)`.
pub fn synthesize_timeline(
    code: &VerificationCode,
    link: &LinkModel,
    attack: Option<&AttackPlan>,
    toa_ns: f64,
    lead_ns: f64,
    tail_ns: f64,
    noise_seed: u64,
) -> Result<Timeline> {
    link.validate()?;
    let params = code.params();
    let end = toa_ns + code.n() as f64 * params.ts_ns + tail_ns;
    let mut tl = Timeline::new(params, toa_ns - lead_ns, end, link.sigma_n2, noise_seed)?;
    let factor = link.multipath_energy_factor();
    tl.add_frame(code, toa_ns, (link.lambda_w2()? * factor).sqrt(), FrameSource::Authentic)?;
    if let Some(plan) = attack {
        tl.add_injections(plan, toa_ns, factor)?;
    }
    Ok(tl)
}
