//! Delay ambiguity function and integrated side-lobe level.
//!
//! For a pattern column `w` the ambiguity function is `χ(Δτ) = wᵀ a(Δτ)`. The
//! side-lobe level integrates `|χ|²` over the symmetric region
//! `[-b, -a] ∪ [a, b]` and normalizes by the region measure and the main-lobe
//! peak `(Σw)²`. The integral has the closed form `wᵀ G w` where
//! `G(i, j) = [sin(2πΔf b) − sin(2πΔf a)] / (πΔf)` and `Δf` is the frequency
//! difference of subcarriers `i` and `j`.
//!
//! No pilot sequence enters any of this: constant-modulus sequences cancel in
//! the correlation, and so do per-subband phase and timing offsets.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{BandLayout, BandMode};

/// Below this frequency difference (Hz) a kernel entry takes its limit value.
const COINCIDENT_HZ: f64 = 1e-3;

/// The symmetric delay region `[-b, -a] ∪ [a, b]`, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidelobeRegion {
    pub a: f64,
    pub b: f64,
}

impl SidelobeRegion {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > a) {
            return Err(Error::InvalidArgument(format!("side-lobe region needs 0 < a < b, got a={a:e}, b={b:e}")));
        }
        Ok(Self { a, b })
    }

    /// Default region: `a` is two main-lobe widths of the aggregate pilot
    /// bandwidth, `b` is half the unambiguous delay `1 / spacing`, so the
    /// region reaches every lag where another cyclic shift can land.
    pub fn calibrated(total_pilots: usize, spacing_hz: f64) -> Result<Self> {
        Self::new(2.0 / (total_pilots as f64 * spacing_hz), 0.5 / spacing_hz)
    }

    /// Total measure `2(b − a)`.
    pub fn measure(&self) -> f64 {
        2.0 * (self.b - self.a)
    }

    /// Kernel entry for frequency difference `df`.
    pub fn kernel(&self, df: f64) -> f64 {
        if df.abs() < COINCIDENT_HZ {
            return 2.0 * (self.b - self.a);
        }
        ((2.0 * PI * df * self.b).sin() - (2.0 * PI * df * self.a).sin()) / (PI * df)
    }
}

/// `χ(Δτ) = Σ_i w_i exp(-j2π f_i Δτ)` over the flattened grid.
pub fn ambiguity_function(layout: &BandLayout, w: &[f64], dtau: f64) -> Result<Complex64> {
    if w.len() != layout.len() {
        return Err(Error::DimensionMismatch(format!(
            "pattern has {} entries, layout has {}",
            w.len(),
            layout.len()
        )));
    }
    Ok(w.iter()
        .enumerate()
        .filter(|(_, &wi)| wi != 0.0)
        .map(|(i, &wi)| wi * Complex64::from_polar(1.0, -2.0 * PI * layout.steering_frequency(i) * dtau))
        .sum())
}

/// Integrated side-lobe kernel for one layout and region.
#[derive(Debug, Clone, PartialEq)]
pub struct IslMatrix {
    region: SidelobeRegion,
    size: usize,
    kind: Kernel,
}

#[derive(Debug, Clone, PartialEq)]
enum Kernel {
    /// First column of a symmetric Toeplitz matrix.
    Toeplitz(Vec<f64>),
    /// Row-major dense matrix.
    Dense(Vec<f64>),
}

impl IslMatrix {
    pub fn region(&self) -> SidelobeRegion {
        self.region
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_toeplitz(&self) -> bool {
        matches!(self.kind, Kernel::Toeplitz(_))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.kind {
            Kernel::Toeplitz(col) => col[i.abs_diff(j)],
            Kernel::Dense(m) => m[i * self.size + j],
        }
    }

    /// First column when the kernel is Toeplitz.
    pub fn first_column(&self) -> Option<&[f64]> {
        match &self.kind {
            Kernel::Toeplitz(col) => Some(col),
            Kernel::Dense(_) => None,
        }
    }

    /// `Σ_{i,j ∈ pilots} G(i, j)` for a binary pattern given by its support.
    pub fn quadratic_form(&self, pilots: &[usize]) -> f64 {
        match &self.kind {
            Kernel::Toeplitz(col) => {
                let mut total = col[0] * pilots.len() as f64;
                for (k, &i) in pilots.iter().enumerate() {
                    for &j in &pilots[k + 1..] {
                        total += 2.0 * col[i.abs_diff(j)];
                    }
                }
                total
            }
            Kernel::Dense(m) => {
                let mut total = 0.0;
                for &i in pilots {
                    let row = &m[i * self.size..(i + 1) * self.size];
                    total += pilots.iter().map(|&j| row[j]).sum::<f64>();
                }
                total
            }
        }
    }

    /// Side-lobe level of a binary pattern given by its support.
    pub fn isl_of_support(&self, pilots: &[usize]) -> Result<Isl> {
        if pilots.is_empty() {
            return Err(Error::InvalidPattern("all-zero pattern has no main lobe".into()));
        }
        if pilots.iter().any(|&i| i >= self.size) {
            return Err(Error::DimensionMismatch("pilot index outside the layout".into()));
        }
        let p = pilots.len() as f64;
        Ok(Isl::from_linear(self.quadratic_form(pilots) / (self.region.measure() * p * p)))
    }

    /// Side-lobe level of a real weight vector.
    pub fn isl(&self, w: &[f64]) -> Result<Isl> {
        if w.len() != self.size {
            return Err(Error::DimensionMismatch(format!("pattern has {} entries, kernel is {}", w.len(), self.size)));
        }
        let sum: f64 = w.iter().sum();
        if sum == 0.0 {
            return Err(Error::InvalidPattern("all-zero pattern has no main lobe".into()));
        }
        let mut q = 0.0;
        for (i, &wi) in w.iter().enumerate().filter(|(_, &v)| v != 0.0) {
            for (j, &wj) in w.iter().enumerate().filter(|(_, &v)| v != 0.0) {
                q += wi * wj * self.entry(i, j);
            }
        }
        Ok(Isl::from_linear(q / (self.region.measure() * sum * sum)))
    }
}

/// Side-lobe level in linear scale and dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Isl {
    pub linear: f64,
    pub db: f64,
}

impl Isl {
    pub fn from_linear(linear: f64) -> Self {
        Self { linear, db: 10.0 * linear.log10() }
    }
}

/// Builds the kernel: Toeplitz for a single band, dense for multiband.
pub fn isl_matrix(layout: &BandLayout, region: SidelobeRegion) -> IslMatrix {
    let n = layout.len();
    match layout.mode() {
        BandMode::Single => {
            let fs = layout.subbands()[0].spacing_hz;
            let col = (0..n).map(|k| region.kernel(k as f64 * fs)).collect();
            IslMatrix { region, size: n, kind: Kernel::Toeplitz(col) }
        }
        BandMode::Multi => {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = region.kernel(frequency_difference(layout, i, j));
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            IslMatrix { region, size: n, kind: Kernel::Dense(m) }
        }
    }
}

/// `f_i − f_j`, with center frequencies differenced first to keep precision.
pub(crate) fn frequency_difference(layout: &BandLayout, i: usize, j: usize) -> f64 {
    let (bi, bj) = (layout.subbands()[layout.band_of(i)], layout.subbands()[layout.band_of(j)]);
    let centers = match layout.mode() {
        BandMode::Single => 0.0,
        BandMode::Multi => bi.center_hz - bj.center_hz,
    };
    centers + layout.subcarrier_index(i) as f64 * bi.spacing_hz - layout.subcarrier_index(j) as f64 * bj.spacing_hz
}

/// One-shot side-lobe level of a pattern column.
pub fn isl(layout: &BandLayout, w: &[f64], region: SidelobeRegion) -> Result<Isl> {
    isl_matrix(layout, region).isl(w)
}
