//! Receiver chain: code-domain user separation, delay/gain estimation and
//! full-band reconstruction.
//!
//! Separation of user `(g, z)`:
//! 1. `ỹ = w_g ∘ x_z* ∘ y`
//! 2. unitary inverse DFT to the delay domain; bin `m` is delay `m / (L f_s)`
//! 3. zero every bin beyond the gate, transform back and re-apply `w_g`.
//!
//! A single band uses its own `N`-point grid (`L = N`). Multiband layouts are
//! embedded into a zero-padded uniform grid at the finest subcarrier spacing
//! that spans all subbands.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{fill_delay_steering, BandLayout, BandMode, PilotSequence};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Uniform delay-domain grid covering a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayGrid {
    /// Grid length `L`.
    pub len: usize,
    pub spacing_hz: f64,
    /// Grid slot of every flattened subcarrier.
    pub slots: Vec<usize>,
}

impl DelayGrid {
    pub fn new(layout: &BandLayout) -> Self {
        let spacing_hz = layout.subbands().iter().map(|s| s.spacing_hz).fold(f64::INFINITY, f64::min);
        let lowest = layout.absolute_frequency(0);
        let mut slots = Vec::with_capacity(layout.len());
        for i in 0..layout.len() {
            // Subbands off the grid are snapped to the nearest slot; the offset
            // is a constant phase per subband and does not move delay images.
            let pos = (layout.absolute_frequency(i) - lowest) / spacing_hz;
            slots.push(pos.round() as usize);
        }
        let len = slots.last().map(|&s| s + 1).unwrap_or(0);
        Self { len, spacing_hz, slots }
    }

    /// Delay of one bin.
    pub fn bin_delay(&self) -> f64 {
        1.0 / (self.len as f64 * self.spacing_hz)
    }

    /// Largest delay the grid can represent without aliasing.
    pub fn unambiguous_delay(&self) -> f64 {
        1.0 / self.spacing_hz
    }
}

/// Keeps delay bins in `[0, max_delay]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayGate {
    pub max_delay: f64,
}

/// Separated observation of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledObservation {
    /// Recovered frequency-domain signal, zero off the pattern support.
    pub recovered: Vec<Complex64>,
    /// Delay profile before gating.
    pub profile: Vec<Complex64>,
    /// Delay profile after gating.
    pub gated: Vec<Complex64>,
    pub gate: DelayGate,
    pub bin_delay: f64,
}

/// Reusable FFT plans for one layout.
#[derive(Clone)]
pub struct Decoupler {
    layout: BandLayout,
    grid: DelayGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Decoupler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Decoupler").field("grid", &self.grid).finish()
    }
}

impl Decoupler {
    pub fn new(layout: &BandLayout) -> Result<Self> {
        let grid = DelayGrid::new(layout);
        let mut planner = FftPlanner::new();
        Ok(Self {
            layout: layout.clone(),
            forward: planner.plan_fft_forward(grid.len),
            inverse: planner.plan_fft_inverse(grid.len),
            grid,
        })
    }

    pub fn grid(&self) -> &DelayGrid {
        &self.grid
    }

    pub fn layout(&self) -> &BandLayout {
        &self.layout
    }

    /// Unitary inverse DFT of a flattened signal embedded in the grid.
    pub fn to_delay(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut buf = vec![ZERO; self.grid.len];
        for (v, &s) in x.iter().zip(&self.grid.slots) {
            buf[s] = *v;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (self.grid.len as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }

    /// Unitary forward DFT back to the flattened subcarriers.
    pub fn to_frequency(&self, d: &[Complex64]) -> Vec<Complex64> {
        let mut buf = d.to_vec();
        self.forward.process(&mut buf);
        let scale = 1.0 / (self.grid.len as f64).sqrt();
        self.grid.slots.iter().map(|&s| buf[s] * scale).collect()
    }

    /// Number of bins kept by `gate`.
    pub fn gate_bins(&self, gate: DelayGate) -> Result<usize> {
        if !(gate.max_delay >= 0.0) || gate.max_delay >= self.grid.unambiguous_delay() {
            return Err(Error::InvalidArgument(format!(
                "gate {:e} s must lie in [0, {:e}) s",
                gate.max_delay,
                self.grid.unambiguous_delay()
            )));
        }
        Ok((gate.max_delay / self.grid.bin_delay() + 1e-9).floor() as usize + 1)
    }

    pub fn decouple(
        &self,
        y: &[Complex64],
        column: &[bool],
        sequence: &PilotSequence,
        gate: DelayGate,
    ) -> Result<DecoupledObservation> {
        let n = self.layout.len();
        if y.len() != n || column.len() != n || sequence.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "signal {}, pattern {}, sequence {} for {n} subcarriers",
                y.len(),
                column.len(),
                sequence.len()
            )));
        }
        let keep = self.gate_bins(gate)?;
        let tilde: Vec<Complex64> = (0..n)
            .map(|i| if column[i] { sequence.values[i].conj() * y[i] } else { ZERO })
            .collect();
        let profile = self.to_delay(&tilde);
        let mut gated = profile.clone();
        let cut = keep.min(gated.len());
        gated[cut..].iter_mut().for_each(|v| *v = ZERO);
        let back = self.to_frequency(&gated);
        let recovered = (0..n).map(|i| if column[i] { back[i] } else { ZERO }).collect();
        Ok(DecoupledObservation { recovered, profile, gated, gate, bin_delay: self.grid.bin_delay() })
    }
}

/// One-shot separation; see [`Decoupler::decouple`].
pub fn decouple(
    layout: &BandLayout,
    y: &[Complex64],
    column: &[bool],
    sequence: &PilotSequence,
    gate: DelayGate,
) -> Result<DecoupledObservation> {
    Decoupler::new(layout)?.decouple(y, column, sequence, gate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of each dimension's search width.
    pub velocity_clamp: f64,
    /// Peaks weaker than this many dB below the strongest are ignored.
    pub threshold_db: f64,
    pub max_paths: usize,
    /// Half-width of the multiband search window around each initial delay,
    /// in units of `1 / (total frequency span)`.
    pub window_fringes: f64,
    /// Residual reduction (dB) an extra path must achieve to be kept.
    pub growth_db: f64,
    /// A grown model is dropped if its total path power exceeds this
    /// multiple of the observed power per pilot.
    pub max_gain_ratio: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            iterations: 200,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            velocity_clamp: 0.1,
            threshold_db: 13.0,
            max_paths: 4,
            window_fringes: 2.0,
            growth_db: 3.0,
            max_gain_ratio: 4.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.iterations == 0 || self.max_paths == 0 {
            return Err(Error::InvalidArgument("particles, iterations and max paths must be positive".into()));
        }
        if !(self.velocity_clamp > 0.0
            && self.threshold_db > 0.0
            && self.window_fringes > 0.0
            && self.growth_db > 0.0
            && self.max_gain_ratio > 0.0)
        {
            return Err(Error::InvalidArgument("clamp, threshold, window, growth and gain ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    /// Ascending.
    pub delays: Vec<f64>,
    pub gains: Vec<Complex64>,
    pub residual: f64,
    /// Set when the gain solve needed a ridge term.
    pub regularized: bool,
    /// Global-best residual after every swarm iteration.
    pub history: Vec<f64>,
}

/// Local maxima of `power` above `threshold` relative to the peak, at least
/// `spacing` bins apart, strongest first.
fn pick_peaks(power: &[f64], threshold: f64, spacing: usize, limit: usize) -> Vec<usize> {
    let top = power.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Vec::new();
    }
    let mut candidates: Vec<usize> = (0..power.len())
        .filter(|&m| {
            let left = if m == 0 { 0.0 } else { power[m - 1] };
            let right = power.get(m + 1).copied().unwrap_or(0.0);
            power[m] >= top * threshold && power[m] > left && power[m] >= right
        })
        .collect();
    candidates.sort_by(|&a, &b| power[b].total_cmp(&power[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    for m in candidates {
        if chosen.iter().all(|&c| c.abs_diff(m) >= spacing) {
            chosen.push(m);
            if chosen.len() == limit {
                break;
            }
        }
    }
    chosen
}

/// Initial delays from the gated profile.
///
/// Multiband peaks are found on the non-coherent sum of per-subband profiles,
/// at least one per-subband resolution cell apart, then moved to the
/// strongest matched-filter delay within half a cell. Strongest first.
pub fn initial_delays(
    decoupler: &Decoupler,
    obs: &DecoupledObservation,
    column: &[bool],
    config: &EstimatorConfig,
) -> Result<Vec<f64>> {
    let layout = decoupler.layout();
    let keep = decoupler.gate_bins(obs.gate)?;
    let threshold = 10f64.powf(-config.threshold_db / 10.0);
    let coherent: Vec<f64> = obs.gated[..keep].iter().map(|v| v.norm_sqr()).collect();
    let bins = match layout.mode() {
        BandMode::Single => pick_peaks(&coherent, threshold, 1, config.max_paths),
        BandMode::Multi => {
            let mut envelope = vec![0.0; keep];
            let mut cell = usize::MAX;
            for m in 0..layout.subbands().len() {
                let range = layout.band_range(m);
                if !column[range.clone()].iter().any(|&b| b) {
                    continue;
                }
                let part: Vec<Complex64> =
                    (0..layout.len()).map(|i| if range.contains(&i) { obs.recovered[i] } else { ZERO }).collect();
                let profile = decoupler.to_delay(&part);
                for (e, v) in envelope.iter_mut().zip(&profile) {
                    *e += v.norm_sqr();
                }
                cell = cell.min(decoupler.grid().len / layout.subbands()[m].count);
            }
            let cell = cell.max(1);
            let span = layout.absolute_frequency(layout.len() - 1) - layout.absolute_frequency(0);
            let step = 0.125 / span;
            let tmax = obs.gate.max_delay;
            let mut a = vec![ZERO; layout.len()];
            let delays: Vec<f64> = pick_peaks(&envelope, threshold, cell, config.max_paths)
                .into_iter()
                .map(|m| {
                    let lo = (m.saturating_sub(cell / 2) as f64 * obs.bin_delay).max(0.0);
                    let hi = ((m + cell / 2) as f64 * obs.bin_delay).min(tmax);
                    let mut best = (f64::NEG_INFINITY, m as f64 * obs.bin_delay);
                    let mut tau = lo;
                    while tau <= hi {
                        fill_delay_steering(layout, tau, &mut a);
                        let c: Complex64 =
                            column.iter().zip(&a).zip(&obs.recovered).filter(|((&b, _), _)| b).map(|((_, x), y)| x.conj() * y).sum();
                        if c.norm_sqr() > best.0 {
                            best = (c.norm_sqr(), tau);
                        }
                        tau += step;
                    }
                    best.1
                })
                .collect();
            return Ok(delays);
        }
    };
    Ok(bins.into_iter().map(|m| m as f64 * obs.bin_delay).collect())
}

/// Least-squares fit of gains for fixed delays on the pattern support.
struct GainSolver<'a> {
    layout: &'a BandLayout,
    pilots: Vec<usize>,
    target: Vec<Complex64>,
    energy: f64,
    scratch: Vec<Complex64>,
    columns: Vec<Vec<Complex64>>,
}

struct Fit {
    gains: Vec<Complex64>,
    residual: f64,
    regularized: bool,
}

/// Solves the Hermitian system `m x = b` in place by Cholesky; `None` if a
/// pivot falls below `floor` times its diagonal entry.
fn cholesky_solve(m: &mut [Complex64], b: &mut [Complex64], k: usize, floor: f64) -> Option<()> {
    for c in 0..k {
        let diag = m[c * k + c].re;
        let mut d = diag;
        for p in 0..c {
            d -= m[c * k + p].norm_sqr();
        }
        if !(d > floor * diag) {
            return None;
        }
        let d = d.sqrt();
        m[c * k + c] = Complex64::new(d, 0.0);
        for r in c + 1..k {
            let mut v = m[r * k + c];
            for p in 0..c {
                v -= m[r * k + p] * m[c * k + p].conj();
            }
            m[r * k + c] = v / d;
        }
    }
    for r in 0..k {
        let mut v = b[r];
        for p in 0..r {
            v -= m[r * k + p] * b[p];
        }
        b[r] = v / m[r * k + r].re;
    }
    for r in (0..k).rev() {
        let mut v = b[r];
        for p in r + 1..k {
            v -= m[p * k + r].conj() * b[p];
        }
        b[r] = v / m[r * k + r].re;
    }
    Some(())
}

impl<'a> GainSolver<'a> {
    fn new(layout: &'a BandLayout, column: &[bool], y: &[Complex64]) -> Self {
        let pilots: Vec<usize> = (0..column.len()).filter(|&i| column[i]).collect();
        let target: Vec<Complex64> = pilots.iter().map(|&i| y[i]).collect();
        let energy = target.iter().map(|v| v.norm_sqr()).sum();
        Self { layout, pilots, target, energy, scratch: vec![ZERO; layout.len()], columns: Vec::new() }
    }

    fn fill(&mut self, delays: &[f64]) {
        self.columns.resize(delays.len(), Vec::new());
        for (c, &tau) in delays.iter().enumerate() {
            fill_delay_steering(self.layout, tau, &mut self.scratch);
            let col = &mut self.columns[c];
            col.clear();
            col.extend(self.pilots.iter().map(|&i| self.scratch[i]));
        }
    }

    fn solve(&mut self, delays: &[f64]) -> Fit {
        let k = delays.len();
        self.fill(delays);
        let mut gram = vec![ZERO; k * k];
        let mut rhs = vec![ZERO; k];
        for a in 0..k {
            let ca = &self.columns[a];
            rhs[a] = ca.iter().zip(&self.target).map(|(x, y)| x.conj() * y).sum();
            for b in 0..=a {
                let v: Complex64 = ca.iter().zip(&self.columns[b]).map(|(x, y)| x.conj() * y).sum();
                gram[a * k + b] = v;
                gram[b * k + a] = v.conj();
            }
        }
        let mut gains = rhs.clone();
        let mut m = gram.clone();
        let mut regularized = false;
        if cholesky_solve(&mut m, &mut gains, k, 1e-8).is_none() {
            regularized = true;
            let ridge = 1e-6 * self.pilots.len() as f64;
            let mut m = gram;
            for d in 0..k {
                m[d * k + d] += ridge;
            }
            gains = rhs.clone();
            if cholesky_solve(&mut m, &mut gains, k, 0.0).is_none() {
                gains = vec![ZERO; k];
            }
        }
        let explained: f64 = rhs.iter().zip(&gains).map(|(b, g)| (b.conj() * g).re).sum();
        let residual = if regularized { self.direct_residual(&gains) } else { (self.energy - explained).max(0.0) };
        Fit { gains, residual, regularized }
    }

    fn residual_vector(&self, gains: &[Complex64]) -> Vec<Complex64> {
        let mut r = self.target.clone();
        for (col, g) in self.columns.iter().zip(gains) {
            for (v, a) in r.iter_mut().zip(col) {
                *v -= a * g;
            }
        }
        r
    }

    fn direct_residual(&self, gains: &[Complex64]) -> f64 {
        self.residual_vector(gains).iter().map(|v| v.norm_sqr()).sum()
    }

    /// Fit with the residual computed from the model rather than the normal
    /// equations.
    fn exact(&mut self, delays: &[f64]) -> Fit {
        let mut fit = self.solve(delays);
        fit.residual = self.direct_residual(&fit.gains);
        fit
    }
}

struct Swarm {
    delays: Vec<f64>,
    fit: Fit,
    history: Vec<f64>,
}

/// Particle swarm over delay vectors; the first particles start at `seeds`.
fn run_swarm(
    solver: &mut GainSolver<'_>,
    seeds: &[Vec<f64>],
    bounds: &[(f64, f64)],
    config: &EstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Swarm {
    let k = bounds.len();
    let vmax: Vec<f64> = bounds.iter().map(|(lo, hi)| config.velocity_clamp * (hi - lo)).collect();
    let np = config.particles;
    let mut pos: Vec<Vec<f64>> = (0..np)
        .map(|p| {
            if let Some(seed) = seeds.get(p) {
                seed.iter().zip(bounds).map(|(&t, &(lo, hi))| t.clamp(lo, hi)).collect()
            } else {
                bounds.iter().map(|&(lo, hi)| lo + rng.random::<f64>() * (hi - lo)).collect()
            }
        })
        .collect();
    let mut vel: Vec<Vec<f64>> =
        (0..np).map(|_| vmax.iter().map(|&v| v * (2.0 * rng.random::<f64>() - 1.0)).collect()).collect();
    let mut best_pos = pos.clone();
    let mut best_cost: Vec<f64> = pos.iter().map(|x| solver.solve(x).residual).collect();
    let mut g = (0..np).min_by(|&a, &b| best_cost[a].total_cmp(&best_cost[b])).unwrap_or(0);
    let mut history = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        for p in 0..np {
            for d in 0..k {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let v = config.inertia * vel[p][d]
                    + config.cognitive * r1 * (best_pos[p][d] - pos[p][d])
                    + config.social * r2 * (best_pos[g][d] - pos[p][d]);
                vel[p][d] = v.clamp(-vmax[d], vmax[d]);
                let (lo, hi) = bounds[d];
                let x = pos[p][d] + vel[p][d];
                if x < lo || x > hi {
                    vel[p][d] = 0.0;
                }
                pos[p][d] = x.clamp(lo, hi);
            }
            let cost = solver.solve(&pos[p]).residual;
            if cost < best_cost[p] {
                best_cost[p] = cost;
                best_pos[p].copy_from_slice(&pos[p]);
                if cost < best_cost[g] {
                    g = p;
                }
            }
        }
        history.push(best_cost[g]);
    }
    let delays = best_pos[g].clone();
    let fit = solver.exact(&delays);
    Swarm { delays, fit, history }
}

fn extend_running_min(history: &mut Vec<f64>, stage: &[f64]) {
    let mut floor = history.last().copied().unwrap_or(f64::INFINITY);
    for &c in stage {
        floor = floor.min(c);
        history.push(floor);
    }
}

/// Per-dimension bounds covering every seed: the gate for a single band, a
/// window of `half` around the seeds for multiband.
fn seed_bounds(seeds: &[Vec<f64>], half: Option<f64>, tmax: f64) -> Vec<(f64, f64)> {
    let k = seeds[0].len();
    (0..k)
        .map(|d| match half {
            None => (0.0, tmax),
            Some(h) => {
                let lo = seeds.iter().map(|s| s[d]).fold(f64::INFINITY, f64::min);
                let hi = seeds.iter().map(|s| s[d]).fold(f64::NEG_INFINITY, f64::max);
                ((lo - h).max(0.0), (hi + h).min(tmax))
            }
        })
        .collect()
}

/// Particle-swarm search over delays with closed-form gains.
///
/// Single-band searches cover `[0, gate]` in every dimension. Multiband
/// searches are confined to a window around the starting delays because the
/// cost has fringes at the inverse of the subband separation. Seeded
/// particles start at the initial delays.
///
/// The model order then grows one path at a time: a search with one more
/// path starts from the strongest residual bin and from splits of every
/// current path, and is kept if it lowers the residual by `growth_db` without
/// inflating the path power past `max_gain_ratio`.
pub fn estimate_paths_psols(
    decoupler: &Decoupler,
    obs: &DecoupledObservation,
    column: &[bool],
    config: &EstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PathEstimate> {
    config.validate()?;
    let layout = decoupler.layout();
    if column.len() != layout.len() || obs.recovered.len() != layout.len() {
        return Err(Error::DimensionMismatch("observation, pattern and layout differ in length".into()));
    }
    let start = initial_delays(decoupler, obs, column, config)?;
    if start.is_empty() {
        return Err(Error::Numerical("no delay peak above the detection threshold".into()));
    }
    let pilots = column.iter().filter(|&&b| b).count();
    if pilots < 2 * start.len() {
        return Err(Error::InvalidArgument(format!("{pilots} pilots cannot identify {} paths", start.len())));
    }
    let keep = decoupler.gate_bins(obs.gate)?;
    let tmax = obs.gate.max_delay;
    let (half, split) = match layout.mode() {
        BandMode::Single => (None, 0.5 * obs.bin_delay),
        BandMode::Multi => {
            let span = layout.absolute_frequency(layout.len() - 1) - layout.absolute_frequency(0);
            let widest = layout.subbands().iter().map(|s| s.count as f64 * s.spacing_hz).fold(0.0, f64::max);
            (Some(config.window_fringes / span), 0.25 / widest)
        }
    };
    let accept = 10f64.powf(-config.growth_db / 10.0);

    let mut solver = GainSolver::new(layout, column, &obs.recovered);
    let bounded = |fit: &Fit, energy: f64| {
        let power: f64 = fit.gains.iter().map(|g| g.norm_sqr()).sum();
        !fit.regularized && power * pilots as f64 <= config.max_gain_ratio * energy
    };
    let mut history = Vec::new();
    let mut k = start.len();
    let mut best = loop {
        let seeds = vec![start[..k].to_vec()];
        let swarm = run_swarm(&mut solver, &seeds, &seed_bounds(&seeds, half, tmax), config, rng);
        extend_running_min(&mut history, &swarm.history);
        if k == 1 || bounded(&swarm.fit, solver.energy) {
            break swarm;
        }
        k -= 1;
    };
    while best.delays.len() < config.max_paths
        && pilots >= 2 * (best.delays.len() + 1)
        && best.fit.residual > 1e-12 * solver.energy
    {
        let mut r = vec![ZERO; layout.len()];
        for (v, &i) in solver.residual_vector(&best.fit.gains).iter().zip(&solver.pilots) {
            r[i] = *v;
        }
        let profile = decoupler.to_delay(&r);
        let strongest = (0..keep).max_by(|&a, &b| profile[a].norm_sqr().total_cmp(&profile[b].norm_sqr())).unwrap_or(0);
        let mut seeds = Vec::new();
        let mut grown = best.delays.clone();
        grown.push(strongest as f64 * obs.bin_delay);
        seeds.push(grown);
        for j in 0..best.delays.len() {
            for frac in [1.0, 0.5] {
                let mut s = best.delays.clone();
                s[j] = (best.delays[j] - frac * split).max(0.0);
                s.push((best.delays[j] + frac * split).min(tmax));
                seeds.push(s);
            }
        }
        let solver_ref = &mut solver;
        let candidate = run_swarm(solver_ref, &seeds, &seed_bounds(&seeds, half, tmax), config, rng);
        extend_running_min(&mut history, &candidate.history);
        if candidate.fit.residual <= accept * best.fit.residual && bounded(&candidate.fit, solver.energy) {
            best = candidate;
        } else {
            break;
        }
    }

    let k = best.delays.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| best.delays[a].total_cmp(&best.delays[b]));
    Ok(PathEstimate {
        delays: order.iter().map(|&i| best.delays[i]).collect(),
        gains: order.iter().map(|&i| best.fit.gains[i]).collect(),
        residual: best.fit.residual,
        regularized: best.fit.regularized,
        history,
    })
}

/// `ĥ(i) = Σ_k α_k exp(-j2π f_i τ_k)` on every subcarrier of the layout.
pub fn extrapolate_fullband(estimate: &PathEstimate, layout: &BandLayout) -> Result<Vec<Complex64>> {
    if estimate.delays.len() != estimate.gains.len() {
        return Err(Error::DimensionMismatch("delays and gains differ in length".into()));
    }
    let mut h = vec![ZERO; layout.len()];
    let mut a = vec![ZERO; layout.len()];
    for (&tau, &alpha) in estimate.delays.iter().zip(&estimate.gains) {
        fill_delay_steering(layout, tau, &mut a);
        for (hi, ai) in h.iter_mut().zip(&a) {
            *hi += alpha * ai;
        }
    }
    Ok(h)
}

/// `‖ĥ − h‖² / ‖h‖²`.
pub fn relative_error(estimate: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch("estimate and truth differ in length".into()));
    }
    let energy: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("zero-energy truth channel".into()));
    }
    let err: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(err / energy)
}

/// Mean over trials of the per-trial mean relative error across users.
///
/// `trials[t]` holds `(estimate, truth)` for every user of trial `t`.
pub fn nmse(trials: &[Vec<(Vec<Complex64>, Vec<Complex64>)>]) -> Result<f64> {
    if trials.is_empty() || trials.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("need at least one trial with one user".into()));
    }
    let mut total = 0.0;
    for users in trials {
        let mut s = 0.0;
        for (est, truth) in users {
            s += relative_error(est, truth)?;
        }
        total += s / users.len() as f64;
    }
    Ok(total / trials.len() as f64)
}

/// Phase ramp `exp(-j2π f τ)` derivative helper used in tests and docs:
/// `∂ĥ(i)/∂τ_k = -j2π f_i α_k exp(-j2π f_i τ_k)`.
pub fn delay_derivative(layout: &BandLayout, estimate: &PathEstimate, path: usize) -> Vec<Complex64> {
    (0..layout.len())
        .map(|i| {
            let f = layout.steering_frequency(i);
            Complex64::new(0.0, -2.0 * PI * f)
                * estimate.gains[path]
                * Complex64::from_polar(1.0, -2.0 * PI * f * estimate.delays[path])
        })
        .collect()
}
