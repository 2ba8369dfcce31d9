//! Frequency grids, Zadoff-Chu pilots, pilot patterns and received-signal
//! synthesis.
//!
//! Everything stays in the frequency domain. A [`BandLayout`] flattens one or
//! more subbands into a single subcarrier axis; every vector in the crate
//! (patterns, sequences, channel responses, received signals) is indexed along
//! that axis.
//!
//! Single band: subcarrier `n = 0 .. N-1`, steering element `exp(-j2π n f_s τ)`.
//!
//! Multiband: subband `m` with odd count `N_m` has indices
//! `n = -(N_m-1)/2 ..= (N_m-1)/2`, absolute frequency `f_{m,n} = f_{c,m} + n f_{s,m}`
//! and steering element
//! `exp(-j2π f_{m,n} τ) · exp(-j2π n f_{s,m} δ_m) · exp(jφ_m)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator for stream `stream` of master seed `seed`.
///
/// Parallel work items draw from distinct streams so the scheduling order
/// never changes results.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subband {
    pub center_hz: f64,
    pub spacing_hz: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMode {
    Single,
    Multi,
}

/// The flattened subcarrier grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLayout {
    mode: BandMode,
    subbands: Vec<Subband>,
    offsets: Vec<usize>,
    index: Vec<i64>,
    band: Vec<usize>,
}

impl BandLayout {
    /// One contiguous band of `count` subcarriers, indexed `0..count`.
    pub fn single(center_hz: f64, spacing_hz: f64, count: usize) -> Result<Self> {
        check_subband(&Subband { center_hz, spacing_hz, count })?;
        if count < 2 {
            return Err(Error::InvalidLayout("need at least two subcarriers".into()));
        }
        let subband = Subband { center_hz, spacing_hz, count };
        Ok(Self {
            mode: BandMode::Single,
            subbands: vec![subband],
            offsets: vec![0, count],
            index: (0..count as i64).collect(),
            band: vec![0; count],
        })
    }

    /// Non-overlapping subbands with odd subcarrier counts.
    ///
    /// Subbands are reordered by ascending center frequency.
    pub fn multi(mut subbands: Vec<Subband>) -> Result<Self> {
        if subbands.is_empty() {
            return Err(Error::InvalidLayout("multiband layout needs at least one subband".into()));
        }
        for s in &subbands {
            check_subband(s)?;
            if s.count % 2 == 0 {
                return Err(Error::InvalidLayout(format!(
                    "multiband subcarrier counts must be odd, got {}",
                    s.count
                )));
            }
        }
        subbands.sort_by(|a, b| a.center_hz.total_cmp(&b.center_hz));
        for pair in subbands.windows(2) {
            let upper = pair[0].center_hz + half_width(&pair[0]) as f64 * pair[0].spacing_hz;
            let lower = pair[1].center_hz - half_width(&pair[1]) as f64 * pair[1].spacing_hz;
            if upper >= lower {
                return Err(Error::InvalidLayout(format!(
                    "subbands around {} Hz and {} Hz overlap",
                    pair[0].center_hz, pair[1].center_hz
                )));
            }
        }
        let mut offsets = vec![0];
        let mut index = Vec::new();
        let mut band = Vec::new();
        for (m, s) in subbands.iter().enumerate() {
            let h = half_width(s);
            index.extend(-h..=h);
            band.extend(std::iter::repeat_n(m, s.count));
            offsets.push(index.len());
        }
        Ok(Self { mode: BandMode::Multi, subbands, offsets, index, band })
    }

    pub fn mode(&self) -> BandMode {
        self.mode
    }

    pub fn subbands(&self) -> &[Subband] {
        &self.subbands
    }

    /// Total number of flattened subcarriers.
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Flattened positions belonging to subband `m`.
    pub fn band_range(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }

    /// Subband of flattened position `i`.
    pub fn band_of(&self, i: usize) -> usize {
        self.band[i]
    }

    /// Subcarrier index `n` of flattened position `i` within its subband.
    pub fn subcarrier_index(&self, i: usize) -> i64 {
        self.index[i]
    }

    pub fn spacing(&self, i: usize) -> f64 {
        self.subbands[self.band[i]].spacing_hz
    }

    /// Absolute frequency `f_{c,m} + n f_{s,m}`.
    pub fn absolute_frequency(&self, i: usize) -> f64 {
        let s = &self.subbands[self.band[i]];
        s.center_hz + self.index[i] as f64 * s.spacing_hz
    }

    /// Frequency that multiplies the delay in the steering vector:
    /// `n f_s` for a single band, `f_{m,n}` for a multiband layout.
    pub fn steering_frequency(&self, i: usize) -> f64 {
        match self.mode {
            BandMode::Single => self.index[i] as f64 * self.subbands[0].spacing_hz,
            BandMode::Multi => self.absolute_frequency(i),
        }
    }

    pub fn steering_frequencies(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.steering_frequency(i)).collect()
    }
}

fn half_width(s: &Subband) -> i64 {
    (s.count as i64 - 1) / 2
}

fn check_subband(s: &Subband) -> Result<()> {
    if !(s.spacing_hz.is_finite() && s.spacing_hz > 0.0) {
        return Err(Error::InvalidLayout(format!("bad subcarrier spacing {}", s.spacing_hz)));
    }
    if !s.center_hz.is_finite() {
        return Err(Error::InvalidLayout("non-finite center frequency".into()));
    }
    if s.count == 0 {
        return Err(Error::InvalidLayout("empty subband".into()));
    }
    Ok(())
}

/// Per-subband hardware distortions of a multiband receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDistortions {
    /// Random phase offset `φ_m` in radians; `φ_1` is pinned to zero.
    pub phase: Vec<f64>,
    /// Receiver timing offset `δ_m` in seconds.
    pub timing: Vec<f64>,
}

impl PhaseDistortions {
    pub fn none(subbands: usize) -> Self {
        Self { phase: vec![0.0; subbands], timing: vec![0.0; subbands] }
    }

    fn check(&self, layout: &BandLayout) -> Result<()> {
        let m = layout.subbands().len();
        if self.phase.len() != m || self.timing.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "distortions cover {}/{} subbands, layout has {m}",
                self.phase.len(),
                self.timing.len()
            )));
        }
        if self.phase[0] != 0.0 {
            return Err(Error::InvalidArgument("phase offset of the first subband must be 0".into()));
        }
        Ok(())
    }
}

/// Fill `out` with `exp(-j2π f_i τ)` for every flattened subcarrier.
///
/// Walks each subband with a phasor ladder and re-anchors every 32 steps, so
/// the cost is one complex multiply per subcarrier.
pub fn fill_delay_steering(layout: &BandLayout, tau: f64, out: &mut [Complex64]) {
    debug_assert_eq!(out.len(), layout.len());
    for m in 0..layout.subbands().len() {
        let range = layout.band_range(m);
        let spacing = layout.subbands()[m].spacing_hz;
        let step = Complex64::from_polar(1.0, -2.0 * PI * spacing * tau);
        let mut cur = Complex64::new(1.0, 0.0);
        for (k, i) in range.enumerate() {
            if k % 32 == 0 {
                cur = Complex64::from_polar(1.0, -2.0 * PI * layout.steering_frequency(i) * tau);
            }
            out[i] = cur;
            cur *= step;
        }
    }
}

/// `exp(-j2π f_i τ)` over the flattened grid, without distortions.
pub fn delay_steering(layout: &BandLayout, tau: f64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); layout.len()];
    fill_delay_steering(layout, tau, &mut out);
    out
}

/// Frequency-domain steering vector for delay `tau`.
///
/// `distortions` must be supplied exactly when the layout is multiband.
pub fn steering_vector(
    layout: &BandLayout,
    tau: f64,
    distortions: Option<&PhaseDistortions>,
) -> Result<Vec<Complex64>> {
    if !tau.is_finite() {
        return Err(Error::InvalidArgument("delay must be finite".into()));
    }
    let mut out = delay_steering(layout, tau);
    match (layout.mode(), distortions) {
        (BandMode::Single, None) => {}
        (BandMode::Multi, Some(d)) => {
            d.check(layout)?;
            apply_distortions(layout, d, &mut out);
        }
        (BandMode::Single, Some(_)) => {
            return Err(Error::InvalidArgument("single-band layouts take no distortions".into()))
        }
        (BandMode::Multi, None) => {
            return Err(Error::InvalidArgument("multiband layouts need distortions".into()))
        }
    }
    Ok(out)
}

fn apply_distortions(layout: &BandLayout, d: &PhaseDistortions, v: &mut [Complex64]) {
    for (i, x) in v.iter_mut().enumerate() {
        let m = layout.band_of(i);
        let n = layout.subcarrier_index(i) as f64;
        let theta = d.phase[m] - 2.0 * PI * n * layout.subbands()[m].spacing_hz * d.timing[m];
        *x *= Complex64::from_polar(1.0, theta);
    }
}

/// A constant-modulus pilot sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSequence {
    pub values: Vec<Complex64>,
    pub root: u64,
    /// Cyclic-shift index `k`; the applied shift is `γ = 2πk / len`.
    pub shift: usize,
}

impl PilotSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        2.0 * PI * self.shift as f64 / self.values.len() as f64
    }
}

/// Largest prime not exceeding `n` (`n >= 2`).
pub fn largest_prime_at_most(n: usize) -> usize {
    (2..=n).rev().find(|&p| is_prime(p)).unwrap_or(2)
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zadoff-Chu pilot of `length` symbols with root `root`, cyclically shifted
/// by `γ = 2π·shift/length`.
///
/// The base sequence has the largest prime length `N_zc <= length`,
/// `x_u(n) = exp(-jπ u n (n+1) / N_zc)`, and is cyclically extended to
/// `length`.
pub fn make_zc_sequence(length: usize, root: u64, shift: usize) -> Result<PilotSequence> {
    if length < 2 {
        return Err(Error::InvalidArgument("sequence length must be at least 2".into()));
    }
    if shift >= length {
        return Err(Error::InvalidArgument(format!("shift {shift} out of range for length {length}")));
    }
    let prime = largest_prime_at_most(length);
    if root == 0 || gcd(root, prime as u64) != 1 {
        return Err(Error::InvalidRoot { root, prime });
    }
    let p = prime as u64;
    let values = (0..length)
        .map(|n| {
            let m = (n % prime) as u64;
            // u·m·(m+1) mod 2p keeps the phase argument exact for large lengths.
            let q = ((root % (2 * p)) * ((m * (m + 1)) % (2 * p))) % (2 * p);
            let base = Complex64::from_polar(1.0, -PI * q as f64 / prime as f64);
            let ramp = 2.0 * PI * ((shift * n) % length) as f64 / length as f64;
            base * Complex64::from_polar(1.0, ramp)
        })
        .collect();
    Ok(PilotSequence { values, root, shift })
}

/// Binary multi-user pilot allocation: one column per user group.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternSet {
    rows: usize,
    columns: Vec<Vec<bool>>,
}

impl PatternSet {
    /// Build from columns, checking that no subcarrier is shared.
    pub fn from_columns(columns: Vec<Vec<bool>>) -> Result<Self> {
        let rows = columns.first().map(Vec::len).unwrap_or(0);
        if columns.is_empty() || rows == 0 {
            return Err(Error::InvalidPattern("pattern needs at least one group and one row".into()));
        }
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch("pattern columns differ in length".into()));
        }
        let p = Self { rows, columns };
        p.check_rows()?;
        Ok(p)
    }

    /// Build from per-group lists of occupied subcarriers.
    pub fn from_pilots(rows: usize, pilots: &[Vec<usize>]) -> Result<Self> {
        let mut columns = vec![vec![false; rows]; pilots.len()];
        for (g, list) in pilots.iter().enumerate() {
            for &i in list {
                if i >= rows {
                    return Err(Error::InvalidPattern(format!("pilot {i} outside {rows} subcarriers")));
                }
                columns[g][i] = true;
            }
        }
        Self::from_columns(columns)
    }

    pub(crate) fn from_columns_unchecked(columns: Vec<Vec<bool>>) -> Self {
        Self { rows: columns[0].len(), columns }
    }

    /// Each group takes an equal contiguous segment of the band, in order, and
    /// spreads its `budgets[g]` pilots evenly inside it.
    pub fn uniform(rows: usize, budgets: &[usize]) -> Result<Self> {
        check_budgets(rows, budgets)?;
        let groups = budgets.len();
        let segment = rows / groups;
        let columns = budgets
            .iter()
            .enumerate()
            .map(|(g, &p)| {
                if p > segment {
                    return Err(Error::InvalidArgument(format!(
                        "budget {p} exceeds the {segment}-subcarrier segment of group {g}"
                    )));
                }
                let mut col = vec![false; rows];
                for k in 0..p {
                    col[g * segment + k * segment / p] = true;
                }
                Ok(col)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(columns)
    }

    /// Uniform draw over non-overlapping masks with exactly `budgets[g]`
    /// pilots per group.
    pub fn random<R: Rng + ?Sized>(rows: usize, budgets: &[usize], rng: &mut R) -> Result<Self> {
        check_budgets(rows, budgets)?;
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(rng);
        let mut columns = vec![vec![false; rows]; budgets.len()];
        let mut it = order.into_iter();
        for (g, &p) in budgets.iter().enumerate() {
            for i in it.by_ref().take(p) {
                columns[g][i] = true;
            }
        }
        Ok(Self { rows, columns })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, g: usize) -> &[bool] {
        &self.columns[g]
    }

    pub fn columns(&self) -> &[Vec<bool>] {
        &self.columns
    }

    pub fn count(&self, g: usize) -> usize {
        self.columns[g].iter().filter(|&&b| b).count()
    }

    pub fn pilots(&self, g: usize) -> Vec<usize> {
        pilot_indices(&self.columns[g])
    }

    pub fn weights(&self, g: usize) -> Vec<f64> {
        self.columns[g].iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn check_rows(&self) -> Result<()> {
        for i in 0..self.rows {
            let used = self.columns.iter().filter(|c| c[i]).count();
            if used > 1 {
                return Err(Error::InvalidPattern(format!("subcarrier {i} is shared by {used} groups")));
            }
        }
        Ok(())
    }

    /// Checks the non-overlap constraint, non-empty groups and, if given, the
    /// exact per-group budgets.
    pub fn validate(&self, budgets: Option<&[usize]>) -> Result<()> {
        self.check_rows()?;
        for g in 0..self.groups() {
            if self.count(g) == 0 {
                return Err(Error::EmptyPattern { group: g });
            }
        }
        if let Some(b) = budgets {
            if b.len() != self.groups() {
                return Err(Error::DimensionMismatch("budget count differs from group count".into()));
            }
            for (g, &p) in b.iter().enumerate() {
                if self.count(g) != p {
                    return Err(Error::InvalidPattern(format!(
                        "group {g} holds {} pilots, budget is {p}",
                        self.count(g)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Packed bit representation, used as a cache key.
    pub fn key(&self) -> Vec<u64> {
        self.columns.iter().flat_map(|c| pack_bits(c)).collect()
    }
}

pub(crate) fn pack_bits(col: &[bool]) -> Vec<u64> {
    let mut out = vec![0u64; col.len().div_ceil(64)];
    for (i, &b) in col.iter().enumerate() {
        if b {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

pub fn pilot_indices(col: &[bool]) -> Vec<usize> {
    col.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
}

fn check_budgets(rows: usize, budgets: &[usize]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::InvalidArgument("at least one group is required".into()));
    }
    if budgets.contains(&0) {
        return Err(Error::InvalidArgument("every group needs a positive pilot budget".into()));
    }
    let total: usize = budgets.iter().sum();
    if total > rows {
        return Err(Error::InvalidArgument(format!("budgets sum to {total} > {rows} subcarriers")));
    }
    Ok(())
}

/// Multipath parameters of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserChannel {
    pub delays: Vec<f64>,
    pub gains: Vec<Complex64>,
}

/// Channels of every user `(g, z)` plus the shared noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Indexed `[g][z]`.
    pub users: Vec<Vec<UserChannel>>,
    pub noise_std: f64,
    /// Required for multiband layouts, absent otherwise.
    pub distortions: Option<PhaseDistortions>,
}

impl ChannelParams {
    /// Checks delays lie in `[0, max_delay]` and gains match delays.
    pub fn validate(&self, max_delay: f64) -> Result<()> {
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument("noise std must be non-negative".into()));
        }
        for user in self.users.iter().flatten() {
            if user.delays.len() != user.gains.len() {
                return Err(Error::DimensionMismatch("delays and gains differ in length".into()));
            }
            if user.delays.iter().any(|&t| !(0.0..=max_delay).contains(&t)) {
                return Err(Error::InvalidArgument(format!("path delay outside [0, {max_delay:e}] s")));
            }
        }
        Ok(())
    }
}

/// Channel frequency response `Σ_k α_k a(τ_k)` of one user.
pub fn channel_response(
    layout: &BandLayout,
    user: &UserChannel,
    distortions: Option<&PhaseDistortions>,
) -> Result<Vec<Complex64>> {
    if user.delays.len() != user.gains.len() {
        return Err(Error::DimensionMismatch("delays and gains differ in length".into()));
    }
    let mut h = vec![Complex64::new(0.0, 0.0); layout.len()];
    let mut a = vec![Complex64::new(0.0, 0.0); layout.len()];
    for (&tau, &alpha) in user.delays.iter().zip(&user.gains) {
        fill_delay_steering(layout, tau, &mut a);
        for (hi, ai) in h.iter_mut().zip(&a) {
            *hi += alpha * ai;
        }
    }
    match (layout.mode(), distortions) {
        (BandMode::Multi, Some(d)) => {
            d.check(layout)?;
            apply_distortions(layout, d, &mut h);
        }
        (BandMode::Multi, None) => {
            return Err(Error::InvalidArgument("multiband layouts need distortions".into()))
        }
        (BandMode::Single, Some(_)) => {
            return Err(Error::InvalidArgument("single-band layouts take no distortions".into()))
        }
        (BandMode::Single, None) => {}
    }
    Ok(h)
}

/// Received pilot observation `y = Σ_g Σ_z diag(w_g ∘ x_z) h_{g,z} + n`.
///
/// A single aggregate complex Gaussian noise term with per-element variance
/// `noise_std²` is drawn from `noise_seed`.
pub fn synthesize_received(
    layout: &BandLayout,
    patterns: &PatternSet,
    sequences: &[PilotSequence],
    channels: &ChannelParams,
    noise_seed: u64,
) -> Result<Vec<Complex64>> {
    let n = layout.len();
    if patterns.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "pattern has {} rows, layout has {n} subcarriers",
            patterns.rows()
        )));
    }
    if sequences.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("pilot sequence length differs from layout".into()));
    }
    if channels.users.len() != patterns.groups()
        || channels.users.iter().any(|row| row.len() != sequences.len())
    {
        return Err(Error::DimensionMismatch(format!(
            "channels must be indexed [{} groups][{} codes]",
            patterns.groups(),
            sequences.len()
        )));
    }
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for (g, row) in channels.users.iter().enumerate() {
        let w = patterns.column(g);
        for (user, x) in row.iter().zip(sequences) {
            let h = channel_response(layout, user, channels.distortions.as_ref())?;
            for i in 0..n {
                if w[i] {
                    y[i] += x.values[i] * h[i];
                }
            }
        }
    }
    if channels.noise_std > 0.0 {
        add_noise(&mut y, channels.noise_std, &mut seeded_rng(noise_seed, 0));
    }
    Ok(y)
}

/// Adds circular complex Gaussian noise of per-element variance `std²`.
pub fn add_noise<R: Rng + ?Sized>(y: &mut [Complex64], std: f64, rng: &mut R) {
    let s = std / 2f64.sqrt();
    for v in y.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * s, im * s);
    }
}

/// Parametric multipath generator: `paths` delays uniform on
/// `[0, max_delay]` with unit-variance circular Gaussian gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathModel {
    pub paths: usize,
    pub max_delay: f64,
}

impl MultipathModel {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> UserChannel {
        let s = 0.5f64.sqrt();
        let delays = (0..self.paths).map(|_| rng.random::<f64>() * self.max_delay).collect();
        let gains = (0..self.paths)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * s, im * s)
            })
            .collect();
        UserChannel { delays, gains }
    }
}
