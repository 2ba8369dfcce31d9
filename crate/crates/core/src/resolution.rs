//! Fisher information of the two-path model, the Cramér-Rao bound on the
//! delay separation, and the statistical resolution limit (SRL).
//!
//! The two-path observation on the pilot support is
//! `μ(f) = Σ_k α_k exp(-j2π f τ_k)` in complex Gaussian noise of variance
//! `σ²`. Parameters are ordered `[τ₁, τ₂, Re α₁, Re α₂, Im α₁, Im α₂]`.
//!
//! Multiband observations add per-subband phase offsets `φ_m` and timing
//! offsets `δ_m`. The lowest occupied subband of a pattern is its reference:
//! its center is taken as zero frequency and its phase is not a parameter.
//! Unoccupied subbands carry no phase parameter either. Parameters follow the
//! core six in the order `φ` (occupied non-reference subbands, ascending) then
//! `δ` (every subband). Each `δ_m` gets a Gaussian prior of std `σ_p`.
//!
//! The information matrix does not depend on the values of `φ` and `δ`:
//! both enter as a common unit-modulus factor per subband that cancels in
//! every entry.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{BandLayout, BandMode, PatternSet};

/// Default cap on the condition number of the normalized information matrix.
pub const CONDITION_CAP: f64 = 1e12;

/// Nominal two-path scenario used to score patterns offline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineModel {
    pub gains: [Complex64; 2],
    pub noise_std: f64,
    /// Prior std of each subband timing offset, seconds. Multiband only.
    pub prior_std: f64,
}

impl Default for OfflineModel {
    fn default() -> Self {
        Self {
            gains: [Complex64::new(1.0, 0.0); 2],
            noise_std: 0.1778,
            prior_std: 1e-9,
        }
    }
}

impl OfflineModel {
    fn check(&self) -> Result<()> {
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std must be positive, got {}", self.noise_std)));
        }
        if !(self.prior_std > 0.0) {
            return Err(Error::InvalidArgument(format!("prior std must be positive, got {}", self.prior_std)));
        }
        Ok(())
    }
}

/// Label of one row/column of an information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Param {
    Delay(usize),
    GainRe(usize),
    GainIm(usize),
    Phase(usize),
    Timing(usize),
}

pub trait FisherInformation {
    /// The full information matrix.
    fn matrix(&self) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimSingleBand {
    pub matrix: DMatrix<f64>,
}

impl FisherInformation for FimSingleBand {
    fn matrix(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Multiband information `J = J_obs + J_prior`.
#[derive(Debug, Clone, PartialEq)]
pub struct FimMultiband {
    pub observation: DMatrix<f64>,
    pub prior: DMatrix<f64>,
    pub params: Vec<Param>,
}

impl FisherInformation for FimMultiband {
    fn matrix(&self) -> DMatrix<f64> {
        &self.observation + &self.prior
    }
}

impl FisherInformation for DMatrix<f64> {
    fn matrix(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// Per-pilot quantities needed by the information sums.
#[derive(Debug, Clone)]
struct Support {
    /// Frequency multiplying the delay.
    freq: Vec<f64>,
    /// `n · f_s` of the subband, multiplying the timing offset.
    ramp: Vec<f64>,
    band: Vec<usize>,
    subbands: usize,
    /// Occupied non-reference subbands, ascending.
    phase_bands: Vec<usize>,
    multiband: bool,
}

impl Support {
    fn new(layout: &BandLayout, column: &[bool]) -> Result<Self> {
        if column.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "pattern has {} entries, layout has {}",
                column.len(),
                layout.len()
            )));
        }
        let pilots: Vec<usize> = (0..column.len()).filter(|&i| column[i]).collect();
        if pilots.is_empty() {
            return Err(Error::InvalidPattern("empty pilot support".into()));
        }
        let multiband = layout.mode() == BandMode::Multi;
        let subbands = layout.subbands().len();
        let mut occupied: Vec<usize> = pilots.iter().map(|&i| layout.band_of(i)).collect();
        occupied.dedup();
        let reference = occupied[0];
        let ref_center = layout.subbands()[reference].center_hz;
        let mut freq = Vec::with_capacity(pilots.len());
        let mut ramp = Vec::with_capacity(pilots.len());
        let mut band = Vec::with_capacity(pilots.len());
        for &i in &pilots {
            let m = layout.band_of(i);
            let s = layout.subbands()[m];
            let n = layout.subcarrier_index(i) as f64;
            ramp.push(n * s.spacing_hz);
            band.push(m);
            freq.push(if multiband { (s.center_hz - ref_center) + n * s.spacing_hz } else { n * s.spacing_hz });
        }
        Ok(Self { freq, ramp, band, subbands, phase_bands: occupied[1..].to_vec(), multiband })
    }

    fn params(&self) -> Vec<Param> {
        let mut p = vec![
            Param::Delay(0),
            Param::Delay(1),
            Param::GainRe(0),
            Param::GainRe(1),
            Param::GainIm(0),
            Param::GainIm(1),
        ];
        if self.multiband {
            p.extend(self.phase_bands.iter().map(|&m| Param::Phase(m)));
            p.extend((0..self.subbands).map(Param::Timing));
        }
        p
    }

    /// Observation information at delays `taus`.
    fn information(&self, model: &OfflineModel, taus: [f64; 2]) -> DMatrix<f64> {
        let params = self.params();
        let dim = params.len();
        let s2 = model.noise_std * model.noise_std;
        let alpha = model.gains;
        let nphi = if self.multiband { self.phase_bands.len() } else { 0 };
        let phase_slot = |m: usize| self.phase_bands.iter().position(|&b| b == m);
        let timing_at = 6 + nphi;

        // Raw sums, scaled at the end.
        let mut tt = [[0.0; 2]; 2];
        let mut t_ar = [[0.0; 2]; 2];
        let mut t_ai = [[0.0; 2]; 2];
        let mut aa = [[0.0; 2]; 2];
        let mut ar_ai = [[0.0; 2]; 2];
        let mut t_phi = vec![[0.0; 2]; nphi];
        let mut ar_phi = vec![[0.0; 2]; nphi];
        let mut ai_phi = vec![[0.0; 2]; nphi];
        let mut phi_phi = vec![0.0; nphi];
        let mut phi_delta = vec![0.0; nphi];
        let m_count = if self.multiband { self.subbands } else { 0 };
        let mut t_delta = vec![[0.0; 2]; m_count];
        let mut ar_delta = vec![[0.0; 2]; m_count];
        let mut ai_delta = vec![[0.0; 2]; m_count];
        let mut delta_delta = vec![0.0; m_count];

        let j = Complex64::new(0.0, 1.0);
        for k in 0..self.freq.len() {
            let f = self.freq[k];
            let v = [
                Complex64::from_polar(1.0, -2.0 * PI * f * taus[0]),
                Complex64::from_polar(1.0, -2.0 * PI * f * taus[1]),
            ];
            let u = [alpha[0] * v[0], alpha[1] * v[1]];
            for r in 0..2 {
                for s in 0..2 {
                    tt[r][s] += f * f * (u[r].conj() * u[s]).re;
                    t_ar[r][s] += (j * f * u[r].conj() * v[s]).re;
                    t_ai[r][s] += f * (u[r].conj() * v[s]).re;
                    aa[r][s] += (v[r].conj() * v[s]).re;
                    ar_ai[r][s] += (2.0 * PI * f * (taus[s] - taus[r])).sin();
                }
            }
            if !self.multiband {
                continue;
            }
            let m = self.band[k];
            let nfs = self.ramp[k];
            let b = u[0] + u[1];
            let b2 = b.norm_sqr();
            if let Some(p) = phase_slot(m) {
                for r in 0..2 {
                    t_phi[p][r] += f * (u[r].conj() * b).re;
                    ar_phi[p][r] += (j * v[r].conj() * b).re;
                    ai_phi[p][r] += (v[r].conj() * b).re;
                }
                phi_phi[p] += b2;
                phi_delta[p] += nfs * b2;
            }
            for r in 0..2 {
                t_delta[m][r] += nfs * f * (u[r].conj() * b).re;
                ar_delta[m][r] += (j * nfs * v[r].conj() * b).re;
                ai_delta[m][r] += nfs * (v[r].conj() * b).re;
            }
            delta_delta[m] += nfs * nfs * b2;
        }

        let mut out = DMatrix::zeros(dim, dim);
        let mut set = |a: usize, b: usize, v: f64| {
            out[(a, b)] = v;
            out[(b, a)] = v;
        };
        let (c8, c4, c2) = (8.0 * PI * PI / s2, 4.0 * PI / s2, 2.0 / s2);
        for r in 0..2 {
            for s in 0..2 {
                set(r, s, c8 * tt[r][s]);
                set(r, 2 + s, c4 * t_ar[r][s]);
                set(r, 4 + s, -c4 * t_ai[r][s]);
                set(2 + r, 2 + s, c2 * aa[r][s]);
                set(4 + r, 4 + s, c2 * aa[r][s]);
                set(2 + r, 4 + s, c2 * ar_ai[r][s]);
            }
        }
        for p in 0..nphi {
            let row = 6 + p;
            for r in 0..2 {
                set(r, row, -c4 * t_phi[p][r]);
                set(2 + r, row, c2 * ar_phi[p][r]);
                set(4 + r, row, c2 * ai_phi[p][r]);
            }
            set(row, row, c2 * phi_phi[p]);
            let m = self.phase_bands[p];
            set(row, timing_at + m, -c4 * phi_delta[p]);
        }
        for m in 0..m_count {
            let row = timing_at + m;
            for r in 0..2 {
                set(r, row, c8 * t_delta[m][r]);
                set(2 + r, row, -c4 * ar_delta[m][r]);
                set(4 + r, row, -c4 * ai_delta[m][r]);
            }
            set(row, row, c8 * delta_delta[m]);
        }
        out
    }

    fn prior(&self, model: &OfflineModel) -> DMatrix<f64> {
        let dim = self.params().len();
        let mut p = DMatrix::zeros(dim, dim);
        if self.multiband {
            let first = dim - self.subbands;
            for m in 0..self.subbands {
                p[(first + m, first + m)] = 1.0 / (model.prior_std * model.prior_std);
            }
        }
        p
    }

    fn total(&self, model: &OfflineModel, taus: [f64; 2]) -> DMatrix<f64> {
        self.information(model, taus) + self.prior(model)
    }
}

/// Single-band information at delays `taus` for pattern column `column`.
pub fn fim_single(layout: &BandLayout, column: &[bool], model: &OfflineModel, taus: [f64; 2]) -> Result<FimSingleBand> {
    if layout.mode() != BandMode::Single {
        return Err(Error::InvalidArgument("single-band information needs a single-band layout".into()));
    }
    model.check()?;
    let support = Support::new(layout, column)?;
    Ok(FimSingleBand { matrix: support.information(model, taus) })
}

/// Multiband information at delays `taus` for pattern column `column`.
pub fn fim_multiband(layout: &BandLayout, column: &[bool], model: &OfflineModel, taus: [f64; 2]) -> Result<FimMultiband> {
    if layout.mode() != BandMode::Multi {
        return Err(Error::InvalidArgument("multiband information needs a multiband layout".into()));
    }
    model.check()?;
    let support = Support::new(layout, column)?;
    Ok(FimMultiband {
        observation: support.information(model, taus),
        prior: support.prior(model),
        params: support.params(),
    })
}

/// Information matrix for either band mode, at separation `dtau` with the
/// first path at zero delay.
pub fn fim(layout: &BandLayout, column: &[bool], model: &OfflineModel, dtau: f64) -> Result<DMatrix<f64>> {
    model.check()?;
    Ok(Support::new(layout, column)?.total(model, [0.0, dtau]))
}

/// Inverse via the diagonally normalized matrix, rejecting near-singular
/// inputs.
fn normalized_cholesky(j: &DMatrix<f64>, cap: f64) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
    let n = j.nrows();
    if n < 2 || j.ncols() != n {
        return Err(Error::DimensionMismatch("information matrix must be square with at least two rows".into()));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite information matrix".into()));
    }
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = j[(i, i)];
        if !(d > 0.0) {
            return Err(Error::Unresolvable { condition: f64::INFINITY });
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let normalized = DMatrix::from_fn(n, n, |r, c| j[(r, c)] * scale[r] * scale[c]);
    let eig = normalized.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= cap) {
        return Err(Error::Unresolvable { condition });
    }
    let chol = normalized.cholesky().ok_or(Error::Unresolvable { condition })?;
    Ok((chol, scale))
}

/// `J⁻¹(1,1) + J⁻¹(2,2) − J⁻¹(1,2) − J⁻¹(2,1)` from the explicit inverse.
pub fn crb_delta_tau<F: FisherInformation + ?Sized>(fim: &F) -> Result<f64> {
    crb_delta_tau_capped(&fim.matrix(), CONDITION_CAP)
}

pub fn crb_delta_tau_capped(j: &DMatrix<f64>, cap: f64) -> Result<f64> {
    let (chol, scale) = normalized_cholesky(j, cap)?;
    let inv_n = chol.inverse();
    let inv = |r: usize, c: usize| inv_n[(r, c)] * scale[r] * scale[c];
    let crb = inv(0, 0) + inv(1, 1) - inv(0, 1) - inv(1, 0);
    if !(crb > 0.0) {
        return Err(Error::Numerical(format!("non-positive bound {crb:e}")));
    }
    Ok(crb)
}

/// `dᵀ J⁻¹ d` with `d = [-1, 1, 0, …]`, by a linear solve.
pub fn crb_delta_tau_quadratic<F: FisherInformation + ?Sized>(fim: &F) -> Result<f64> {
    let j = fim.matrix();
    let (chol, scale) = normalized_cholesky(&j, CONDITION_CAP)?;
    let mut d = DVector::zeros(j.nrows());
    d[0] = -1.0;
    d[1] = 1.0;
    let ds = d.component_mul(&scale);
    let x = chol.solve(&ds);
    let crb = ds.dot(&x);
    if !(crb > 0.0) {
        return Err(Error::Numerical(format!("non-positive bound {crb:e}")));
    }
    Ok(crb)
}

/// Grid and tolerance of the resolution-limit search, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrlSearch {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub tol: f64,
    pub condition_cap: f64,
}

impl Default for SrlSearch {
    fn default() -> Self {
        Self { lo: 0.05e-9, hi: 50e-9, step: 0.01e-9, tol: 1e-4 * 1e-9, condition_cap: CONDITION_CAP }
    }
}

impl SrlSearch {
    fn check(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.step > 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bad search grid lo={:e} hi={:e} step={:e} tol={:e}",
                self.lo, self.hi, self.step, self.tol
            )));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        (0..=count).map(|k| self.lo + k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrlResult {
    pub srl: f64,
    pub crb_at_srl: f64,
    pub roots_found: Vec<f64>,
    /// `(lo, hi, step)`.
    pub search_grid: (f64, f64, f64),
}

/// `Δτ − √CRB(Δτ)`, with unresolvable separations mapped to `-∞`.
fn gap<F>(crb: &F, dtau: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    match crb(dtau) {
        Ok(c) => Ok(dtau - c.sqrt()),
        Err(Error::Unresolvable { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

fn bisect<F>(crb: &F, mut lo: f64, mut hi: f64, lo_negative: bool, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (gap(crb, mid)? < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest separation equal to its own root-CRB.
///
/// `crb` maps a separation to the bound; an `Unresolvable` error counts as an
/// infinite bound. The grid is scanned in parallel and every sign change is
/// bisected to `search.tol`.
pub fn srl_search<F>(crb: F, search: &SrlSearch) -> Result<SrlResult>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    search.check()?;
    let grid = search.grid();
    let values = grid.par_iter().map(|&t| gap(&crb, t)).collect::<Result<Vec<f64>>>()?;
    let mut roots = Vec::new();
    for k in 1..grid.len() {
        let (a, b) = (values[k - 1], values[k]);
        if b == 0.0 {
            roots.push(grid[k]);
        } else if (a < 0.0) != (b < 0.0) && a != 0.0 {
            roots.push(bisect(&crb, grid[k - 1], grid[k], a < 0.0, search.tol)?);
        }
    }
    if values[0] == 0.0 {
        roots.insert(0, grid[0]);
    }
    let srl = *roots.first().ok_or(Error::NoSrlInRange { lo: search.lo, hi: search.hi })?;
    Ok(SrlResult {
        srl,
        crb_at_srl: crb(srl)?,
        roots_found: roots,
        search_grid: (search.lo, search.hi, search.step),
    })
}

/// Evaluates bounds and resolution limits of pattern columns on one layout.
#[derive(Debug, Clone)]
pub struct SrlEvaluator {
    pub layout: BandLayout,
    pub model: OfflineModel,
    pub search: SrlSearch,
}

impl SrlEvaluator {
    pub fn new(layout: BandLayout, model: OfflineModel, search: SrlSearch) -> Result<Self> {
        model.check()?;
        search.check()?;
        Ok(Self { layout, model, search })
    }

    fn support(&self, column: &[bool]) -> Result<Support> {
        Support::new(&self.layout, column)
    }

    fn crb_fn(&self, support: &Support) -> impl Fn(f64) -> Result<f64> + Sync + '_ {
        let support = support.clone();
        let (model, cap) = (self.model, self.search.condition_cap);
        move |dtau| crb_delta_tau_capped(&support.total(&model, [0.0, dtau]), cap)
    }

    pub fn crb(&self, column: &[bool], dtau: f64) -> Result<f64> {
        let s = self.support(column)?;
        crb_delta_tau_capped(&s.total(&self.model, [0.0, dtau]), self.search.condition_cap)
    }

    pub fn srl(&self, column: &[bool]) -> Result<SrlResult> {
        let s = self.support(column)?;
        srl_search(self.crb_fn(&s), &self.search)
    }

    /// Resolution limit if it lies at or below `ceiling`, found by a
    /// sequential scan with step `coarse` that stops at the first root.
    /// `None` means no root up to the ceiling.
    pub fn srl_within(&self, column: &[bool], ceiling: f64, coarse: f64) -> Result<Option<f64>> {
        if !(coarse > 0.0) {
            return Err(Error::InvalidArgument("coarse step must be positive".into()));
        }
        let s = self.support(column)?;
        let crb = self.crb_fn(&s);
        let mut prev_t = self.search.lo;
        let mut prev = gap(&crb, prev_t)?;
        if prev == 0.0 {
            return Ok(Some(prev_t));
        }
        let mut k = 1usize;
        loop {
            let t = self.search.lo + k as f64 * coarse;
            if t > ceiling + 1e-15 {
                return Ok(None);
            }
            let g = gap(&crb, t)?;
            if g == 0.0 {
                return Ok(Some(t));
            }
            if (prev < 0.0) != (g < 0.0) {
                return Ok(Some(bisect(&crb, prev_t, t, prev < 0.0, coarse * 1e-2)?));
            }
            (prev_t, prev) = (t, g);
            k += 1;
        }
    }

    /// Fine-grid resolution limit of every group.
    pub fn pattern_srl(&self, patterns: &PatternSet) -> Result<Vec<SrlResult>> {
        (0..patterns.groups()).map(|g| self.srl(patterns.column(g))).collect()
    }
}
