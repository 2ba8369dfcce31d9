//! Independent oracles shared by the integration targets. Each is written
//! from the signal model alone and never calls the library's closed forms.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use pilotforge::ambiguity::{isl, SidelobeRegion};
use pilotforge::resolution::{fim_multiband, fim_single, FisherInformation, OfflineModel};
use pilotforge::waveform::{seeded_rng, BandLayout, PatternSet, Subband};

pub const FS: f64 = 120e3;

/// Composite Simpson rule with `intervals` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    let h = (hi - lo) / intervals as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// `Σ_i w_i exp(-j2π f_i t)` evaluated directly.
pub fn chi(freqs: &[f64], w: &[f64], t: f64) -> Complex64 {
    freqs.iter().zip(w).map(|(&f, &wi)| wi * Complex64::from_polar(1.0, -2.0 * PI * f * t)).sum()
}

pub fn quadrature_isl(freqs: &[f64], w: &[f64], region: SidelobeRegion, intervals: usize) -> f64 {
    let power = |t: f64| chi(freqs, w, t).norm_sqr();
    let both = simpson(power, region.a, region.b, intervals) + simpson(power, -region.b, -region.a, intervals);
    let mass: f64 = w.iter().sum();
    both / (2.0 * (region.b - region.a) * mass * mass)
}

/// Relative errors of the closed form for 10 seeded random patterns at N = 64.
pub fn single_band_isl_errors() -> Vec<f64> {
    let n = 64;
    let layout = BandLayout::single(3.5e9, FS, n).unwrap();
    let region = SidelobeRegion::calibrated(32, FS).unwrap();
    let freqs: Vec<f64> = (0..n).map(|i| i as f64 * FS).collect();
    let mut errs = Vec::new();
    for seed in 0..10 {
        let p = PatternSet::random(n, &[16, 16], &mut seeded_rng(seed, 0)).unwrap();
        for g in 0..2 {
            let w = p.weights(g);
            let closed = isl(&layout, &w, region).unwrap().linear;
            let direct = quadrature_isl(&freqs, &w, region, 40_000);
            errs.push((closed - direct).abs() / direct);
        }
    }
    errs
}

/// Relative errors for a random two-subband pattern, 33 subcarriers each.
pub fn multiband_isl_errors() -> Vec<f64> {
    let bands = [(3.5e9, 33), (3.6e9, 33)];
    let layout = BandLayout::multi(
        bands.iter().map(|&(c, count)| Subband { center_hz: c, spacing_hz: FS, count }).collect(),
    )
    .unwrap();
    let mut freqs = Vec::new();
    for &(c, count) in &bands {
        let half = (count as i64 - 1) / 2;
        freqs.extend((-half..=half).map(|n| c - bands[0].0 + n as f64 * FS));
    }
    let region = SidelobeRegion::calibrated(33, FS).unwrap();
    let p = PatternSet::random(66, &[33, 33], &mut seeded_rng(4, 0)).unwrap();
    (0..2)
        .map(|g| {
            let w = p.weights(g);
            let closed = isl(&layout, &w, region).unwrap().linear;
            let direct = quadrature_isl(&freqs, &w, region, 400_000);
            (closed - direct).abs() / direct
        })
        .collect()
}

/// One observed pilot: delay frequency, subband ramp `n f_s`, subband.
pub struct Pilot {
    pub freq: f64,
    pub ramp: f64,
    pub band: usize,
}

/// Expected negative log-likelihood offset `E(θ') − E(θ)` and its Hessian at
/// `θ' = θ` by central differences.
pub struct Oracle {
    pub pilots: Vec<Pilot>,
    pub noise_var: f64,
    /// Parameter index of each band's phase, if it has one.
    pub phase_index: Vec<Option<usize>>,
    /// Parameter index of each band's timing offset, if modelled.
    pub timing_index: Vec<Option<usize>>,
    pub prior_var: f64,
}

impl Oracle {
    fn mean(&self, theta: &[f64]) -> Vec<Complex64> {
        self.pilots
            .iter()
            .map(|p| {
                let mut v = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    let gain = Complex64::new(theta[2 + k], theta[4 + k]);
                    v += gain * Complex64::from_polar(1.0, -2.0 * PI * p.freq * theta[k]);
                }
                let phase = self.phase_index[p.band].map_or(0.0, |i| theta[i]);
                let timing = self.timing_index[p.band].map_or(0.0, |i| theta[i]);
                v * Complex64::from_polar(1.0, phase - 2.0 * PI * p.ramp * timing)
            })
            .collect()
    }

    fn divergence(&self, truth: &[f64], theta: &[f64]) -> f64 {
        let (a, b) = (self.mean(truth), self.mean(theta));
        let fit: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / self.noise_var;
        let prior: f64 = self
            .timing_index
            .iter()
            .flatten()
            .map(|&i| (theta[i] - truth[i]).powi(2) / (2.0 * self.prior_var))
            .sum();
        fit + prior
    }

    pub fn hessian(&self, truth: &[f64], steps: &[f64]) -> DMatrix<f64> {
        let d = truth.len();
        let at = |di: &[(usize, f64)]| {
            let mut t = truth.to_vec();
            for &(i, s) in di {
                t[i] += s;
            }
            self.divergence(truth, &t)
        };
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            let hi = steps[i];
            h[(i, i)] = (at(&[(i, hi)]) + at(&[(i, -hi)]) - 2.0 * at(&[])) / (hi * hi);
            for j in 0..i {
                let hj = steps[j];
                let v = (at(&[(i, hi), (j, hj)]) - at(&[(i, hi), (j, -hj)]) - at(&[(i, -hi), (j, hj)])
                    + at(&[(i, -hi), (j, -hj)]))
                    / (4.0 * hi * hj);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }
}

/// Largest `|a − b| / sqrt(a_ii a_jj)` over all entries. Off-diagonal terms
/// can cancel to near zero, so each entry is scaled by its diagonal pair.
pub fn normalized_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let scale = (a[(i, i)] * a[(j, j)]).sqrt();
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / scale);
        }
    }
    worst
}

pub fn fim_model() -> OfflineModel {
    OfflineModel {
        gains: [Complex64::new(0.8, 0.3), Complex64::new(-0.2, 0.9)],
        noise_std: 0.1778,
        prior_std: 1e-9,
    }
}

/// Library and oracle matrices for a random 12-pilot pattern at N = 32.
pub fn single_band_fim_pair() -> (DMatrix<f64>, DMatrix<f64>) {
    let n = 32;
    let layout = BandLayout::single(3.5e9, FS, n).unwrap();
    let p = PatternSet::random(n, &[12], &mut seeded_rng(5, 0)).unwrap();
    let column = p.column(0);
    let m = fim_model();
    let taus = [40e-9, 95e-9];
    let j = fim_single(&layout, column, &m, taus).unwrap().matrix();

    let pilots: Vec<Pilot> = (0..n)
        .filter(|&i| column[i])
        .map(|i| Pilot { freq: i as f64 * FS, ramp: 0.0, band: 0 })
        .collect();
    let oracle = Oracle {
        pilots,
        noise_var: m.noise_std * m.noise_std,
        phase_index: vec![None],
        timing_index: vec![None],
        prior_var: 1.0,
    };
    let g = m.gains;
    let truth = [taus[0], taus[1], g[0].re, g[1].re, g[0].im, g[1].im];
    let ht = 1e-3 / (2.0 * PI * n as f64 * FS);
    let steps = [ht, ht, 1e-3, 1e-3, 1e-3, 1e-3];
    (j, oracle.hessian(&truth, &steps))
}

pub const MB_COUNT: usize = 17;
pub const MB_CENTERS: [f64; 2] = [3.5e9, 3.52e9];

pub fn multiband_fim_layout() -> BandLayout {
    BandLayout::multi(MB_CENTERS.iter().map(|&c| Subband { center_hz: c, spacing_hz: FS, count: MB_COUNT }).collect())
        .unwrap()
}

pub fn multiband_fim_pattern() -> PatternSet {
    PatternSet::from_pilots(2 * MB_COUNT, &[vec![1, 4, 6, 9, 13, 16, 18, 21, 25, 28, 30, 33]]).unwrap()
}

/// Library and oracle matrices for a two-subband pattern, 17 subcarriers each.
pub fn multiband_fim_pair() -> (DMatrix<f64>, DMatrix<f64>) {
    let layout = multiband_fim_layout();
    let p = multiband_fim_pattern();
    let column = p.column(0);
    let m = fim_model();
    let taus = [40e-9, 43e-9];
    let j = fim_multiband(&layout, column, &m, taus).unwrap().matrix();

    let half = (MB_COUNT as i64 - 1) / 2;
    let pilots: Vec<Pilot> = (0..2 * MB_COUNT)
        .filter(|&i| column[i])
        .map(|i| {
            let band = i / MB_COUNT;
            let n = (i % MB_COUNT) as i64 - half;
            Pilot { freq: MB_CENTERS[band] - MB_CENTERS[0] + n as f64 * FS, ramp: n as f64 * FS, band }
        })
        .collect();
    let oracle = Oracle {
        pilots,
        noise_var: m.noise_std * m.noise_std,
        phase_index: vec![None, Some(6)],
        timing_index: vec![Some(7), Some(8)],
        prior_var: m.prior_std * m.prior_std,
    };
    let g = m.gains;
    // Distortions away from zero: the information must not depend on them.
    let truth = [taus[0], taus[1], g[0].re, g[1].re, g[0].im, g[1].im, 0.7, 3e-9, -2e-9];
    let ht = 1e-3 / (2.0 * PI * (MB_CENTERS[1] - MB_CENTERS[0]));
    let hd = 1e-3 / (2.0 * PI * half as f64 * FS);
    let steps = [ht, ht, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, hd, hd];
    (j, oracle.hessian(&truth, &steps))
}
