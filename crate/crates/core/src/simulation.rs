//! Monte-Carlo harness: draw channels, synthesize the shared observation,
//! separate every user, estimate paths and score the full-band
//! reconstruction.
//!
//! Trials use common random numbers: channels and the unit noise vector of a
//! trial depend only on the master seed and the trial index, so every pattern
//! and every SNR sees the same draws.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::receiver::{
    estimate_paths_psols, extrapolate_fullband, relative_error, DelayGate, Decoupler, EstimatorConfig,
};
use crate::waveform::{
    channel_response, make_zc_sequence, seeded_rng, synthesize_received, BandLayout, BandMode, ChannelParams,
    MultipathModel, PatternSet, PhaseDistortions, PilotSequence, UserChannel,
};

/// Fixed parts of an experiment.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub layout: BandLayout,
    /// One cyclically shifted sequence per code index `z`.
    pub codes: Vec<PilotSequence>,
    pub channel: MultipathModel,
    pub gate: DelayGate,
    pub estimator: EstimatorConfig,
    decoupler: Decoupler,
}

impl SimulationSetup {
    /// Codes use root `root` with shifts `z · N / codes`.
    pub fn new(
        layout: BandLayout,
        codes: usize,
        root: u64,
        channel: MultipathModel,
        gate: DelayGate,
        estimator: EstimatorConfig,
    ) -> Result<Self> {
        if codes == 0 {
            return Err(Error::InvalidArgument("at least one code per group is required".into()));
        }
        let n = layout.len();
        let codes = (0..codes).map(|z| make_zc_sequence(n, root, z * n / codes)).collect::<Result<Vec<_>>>()?;
        let decoupler = Decoupler::new(&layout)?;
        decoupler.gate_bins(gate)?;
        if channel.max_delay > gate.max_delay {
            return Err(Error::InvalidArgument("channel delays exceed the gate".into()));
        }
        estimator.validate()?;
        Ok(Self { layout, codes, channel, gate, estimator, decoupler })
    }

    pub fn decoupler(&self) -> &Decoupler {
        &self.decoupler
    }

    fn distortions(&self) -> Option<PhaseDistortions> {
        match self.layout.mode() {
            BandMode::Single => None,
            BandMode::Multi => Some(PhaseDistortions::none(self.layout.subbands().len())),
        }
    }

    /// Channels of trial `trial`, indexed `[g][z]`.
    pub fn draw_channels(&self, groups: usize, seed: u64, trial: u64) -> Vec<Vec<UserChannel>> {
        let mut rng = seeded_rng(seed, trial << 1);
        (0..groups).map(|_| (0..self.codes.len()).map(|_| self.channel.draw(&mut rng)).collect()).collect()
    }
}

fn noise_seed(seed: u64, trial: u64) -> u64 {
    seed ^ trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Noise std for an SNR in dB (`SNR = 1/σ²`); infinite SNR is noiseless.
pub fn noise_std(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 20.0)
    }
}

/// Per-trial scores averaged over users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    /// Full-band reconstruction error.
    pub nmse: f64,
    /// Error of the separated observation against the masked true channel.
    pub recovered: f64,
}

pub fn run_trial(setup: &SimulationSetup, patterns: &PatternSet, snr_db: f64, seed: u64, trial: u64) -> Result<TrialOutcome> {
    let users = setup.draw_channels(patterns.groups(), seed, trial);
    let distortions = setup.distortions();
    let params = ChannelParams { users, noise_std: noise_std(snr_db), distortions: distortions.clone() };
    params.validate(setup.gate.max_delay)?;
    let y = synthesize_received(&setup.layout, patterns, &setup.codes, &params, noise_seed(seed, trial))?;
    let (mut nmse, mut recovered, mut count) = (0.0, 0.0, 0usize);
    for (g, row) in params.users.iter().enumerate() {
        let column = patterns.column(g);
        for (z, user) in row.iter().enumerate() {
            let h = channel_response(&setup.layout, user, distortions.as_ref())?;
            let masked: Vec<Complex64> =
                h.iter().zip(column).map(|(v, &b)| if b { *v } else { Complex64::new(0.0, 0.0) }).collect();
            let obs = setup.decoupler.decouple(&y, column, &setup.codes[z], setup.gate)?;
            recovered += relative_error(&obs.recovered, &masked)?;
            let mut rng = seeded_rng(seed, (1 << 40) | (trial << 16) | (g * setup.codes.len() + z) as u64);
            let est = estimate_paths_psols(&setup.decoupler, &obs, column, &setup.estimator, &mut rng)?;
            nmse += relative_error(&extrapolate_fullband(&est, &setup.layout)?, &h)?;
            count += 1;
        }
    }
    Ok(TrialOutcome { nmse: nmse / count as f64, recovered: recovered / count as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    /// Mean full-band error over successful trials.
    pub nmse: f64,
    pub recovered: f64,
    pub trials: usize,
    /// Trials whose estimator failed; excluded from the means.
    pub failures: usize,
    pub per_trial: Vec<Option<TrialOutcome>>,
}

/// Runs `trials` independent trials in parallel.
pub fn monte_carlo_nmse(
    setup: &SimulationSetup,
    patterns: &PatternSet,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trial count must be positive".into()));
    }
    if patterns.rows() != setup.layout.len() {
        return Err(Error::DimensionMismatch("pattern rows differ from the layout".into()));
    }
    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|t| match run_trial(setup, patterns, snr_db, seed, t) {
            Ok(o) => Ok(Some(o)),
            Err(Error::Numerical(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<&TrialOutcome> = per_trial.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every trial failed".into()));
    }
    Ok(MonteCarloSummary {
        nmse: ok.iter().map(|o| o.nmse).sum::<f64>() / ok.len() as f64,
        recovered: ok.iter().map(|o| o.recovered).sum::<f64>() / ok.len() as f64,
        trials,
        failures: trials - ok.len(),
        per_trial,
    })
}

/// Separation error of every user for one trial, without estimation.
pub fn recovered_channel_nmse(
    setup: &SimulationSetup,
    patterns: &PatternSet,
    snr_db: f64,
    seed: u64,
    trial: u64,
) -> Result<f64> {
    let users = setup.draw_channels(patterns.groups(), seed, trial);
    let distortions = setup.distortions();
    let params = ChannelParams { users, noise_std: noise_std(snr_db), distortions: distortions.clone() };
    let y = synthesize_received(&setup.layout, patterns, &setup.codes, &params, noise_seed(seed, trial))?;
    let mut total = 0.0;
    let mut count = 0;
    for (g, row) in params.users.iter().enumerate() {
        let column = patterns.column(g);
        for (z, user) in row.iter().enumerate() {
            let h = channel_response(&setup.layout, user, distortions.as_ref())?;
            let masked: Vec<Complex64> =
                h.iter().zip(column).map(|(v, &b)| if b { *v } else { Complex64::new(0.0, 0.0) }).collect();
            let obs = setup.decoupler.decouple(&y, column, &setup.codes[z], setup.gate)?;
            total += relative_error(&obs.recovered, &masked)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Fraction of co-group interference energy that lands inside the victim's
/// gate before gating, averaged over every victim `(g, z)`.
pub fn gate_leakage(setup: &SimulationSetup, patterns: &PatternSet, seed: u64, trial: u64) -> Result<f64> {
    let users = setup.draw_channels(patterns.groups(), seed, trial);
    let keep = setup.decoupler.gate_bins(setup.gate)?;
    let zero = UserChannel { delays: vec![], gains: vec![] };
    let (mut total, mut count) = (0.0, 0usize);
    for g in 0..patterns.groups() {
        for z in 0..setup.codes.len() {
            let mut only: Vec<Vec<UserChannel>> = users.iter().map(|r| vec![zero.clone(); r.len()]).collect();
            for (zz, u) in users[g].iter().enumerate() {
                if zz != z {
                    only[g][zz] = u.clone();
                }
            }
            let params = ChannelParams { users: only, noise_std: 0.0, distortions: setup.distortions() };
            let y = synthesize_received(&setup.layout, patterns, &setup.codes, &params, 0)?;
            let obs = setup.decoupler.decouple(&y, patterns.column(g), &setup.codes[z], setup.gate)?;
            let all: f64 = obs.profile.iter().map(|v| v.norm_sqr()).sum();
            if all > 0.0 {
                total += obs.profile[..keep].iter().map(|v| v.norm_sqr()).sum::<f64>() / all;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no co-group interference to measure".into()));
    }
    Ok(total / count as f64)
}
