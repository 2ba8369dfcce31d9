//! Experiment configuration: TOML with one section per concern.
//!
//! Every omitted field takes its default. Resolution fills in the values
//! that depend on other fields (budgets, side-lobe region), so the embedded
//! copy in each output is self-contained.

use pilotforge::ambiguity::SidelobeRegion;
use pilotforge::optimizer::EdaConfig;
use pilotforge::receiver::{DelayGate, EstimatorConfig};
use pilotforge::resolution::{OfflineModel, SrlSearch};
use pilotforge::waveform::{BandLayout, BandMode, MultipathModel, Subband};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

const NS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Where outputs go; not embedded in outputs.
    #[serde(skip_serializing)]
    pub output_dir: Option<String>,
    pub band: BandSection,
    pub users: UsersSection,
    pub region: RegionSection,
    pub offline: OfflineSection,
    pub ceilings: CeilingSection,
    pub eda: EdaSection,
    pub srl: SrlSection,
    pub channel: ChannelSection,
    pub receiver: ReceiverSection,
    pub simulation: SimulationSection,
    pub af: AfSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: None,
            band: BandSection::default(),
            users: UsersSection::default(),
            region: RegionSection::default(),
            offline: OfflineSection::default(),
            ceilings: CeilingSection::default(),
            eda: EdaSection::default(),
            srl: SrlSection::default(),
            channel: ChannelSection::default(),
            receiver: ReceiverSection::default(),
            simulation: SimulationSection::default(),
            af: AfSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSection {
    pub mode: BandMode,
    pub single: SingleBand,
    pub multi: MultiBand,
}

impl Default for BandSection {
    fn default() -> Self {
        Self { mode: BandMode::Single, single: SingleBand::default(), multi: MultiBand::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingleBand {
    pub center_hz: f64,
    pub spacing_hz: f64,
    pub subcarriers: usize,
}

impl Default for SingleBand {
    fn default() -> Self {
        Self { center_hz: 3.5e9, spacing_hz: 120e3, subcarriers: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiBand {
    pub spacing_hz: f64,
    pub centers_hz: Vec<f64>,
    /// Odd subcarrier count of each subband.
    pub subcarriers: Vec<usize>,
}

impl Default for MultiBand {
    fn default() -> Self {
        Self { spacing_hz: 120e3, centers_hz: vec![3.5e9, 3.9e9], subcarriers: vec![127, 127] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsersSection {
    pub groups: usize,
    /// Cyclic shifts sharing each group's pattern.
    pub codes: usize,
    /// Pilots per group; an even split of the band when omitted.
    pub budgets: Option<Vec<usize>>,
    pub root: u64,
}

impl Default for UsersSection {
    fn default() -> Self {
        Self { groups: 2, codes: 2, budgets: None, root: 1 }
    }
}

/// Side-lobe region in ns; omitted bounds take the calibrated default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSection {
    pub a_ns: Option<f64>,
    pub b_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSection {
    /// Gain of both nominal paths.
    pub gain: f64,
    pub noise_std: f64,
    pub prior_std_ns: f64,
}

impl Default for OfflineSection {
    fn default() -> Self {
        Self { gain: 1.0, noise_std: 0.1778, prior_std_ns: 1.0 }
    }
}

/// Resolution ceilings: explicit values, or `multiplier` times the mean limit
/// of `draws` random patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeilingSection {
    pub values_ns: Option<Vec<f64>>,
    pub multiplier: f64,
    pub draws: usize,
}

impl Default for CeilingSection {
    fn default() -> Self {
        Self { values_ns: None, multiplier: 1.05, draws: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdaSection {
    pub population: usize,
    pub elite: usize,
    pub iterations: usize,
    pub retry_cap: usize,
    pub screen_step_ns: f64,
}

impl Default for EdaSection {
    fn default() -> Self {
        Self { population: 400, elite: 200, iterations: 60, retry_cap: 1000, screen_step_ns: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrlSection {
    pub lo_ns: f64,
    pub hi_ns: f64,
    pub step_ns: f64,
    pub tol_ns: f64,
    pub condition_cap: f64,
}

impl Default for SrlSection {
    fn default() -> Self {
        let s = SrlSearch::default();
        Self { lo_ns: 0.05, hi_ns: 50.0, step_ns: 0.01, tol_ns: 1e-4, condition_cap: s.condition_cap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub paths: usize,
    pub max_delay_ns: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { paths: 2, max_delay_ns: 400.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSection {
    pub gate_ns: f64,
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub velocity_clamp: f64,
    pub threshold_db: f64,
    pub max_paths: usize,
    pub window_fringes: f64,
    pub growth_db: f64,
    pub max_gain_ratio: f64,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        let e = EstimatorConfig::default();
        Self {
            gate_ns: 400.0,
            particles: e.particles,
            iterations: e.iterations,
            inertia: e.inertia,
            cognitive: e.cognitive,
            social: e.social,
            velocity_clamp: e.velocity_clamp,
            threshold_db: e.threshold_db,
            max_paths: e.max_paths,
            window_fringes: e.window_fringes,
            growth_db: e.growth_db,
            max_gain_ratio: e.max_gain_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// `inf` runs noiseless.
    pub snr_db: Vec<f64>,
    pub trials: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { snr_db: vec![15.0], trials: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AfSection {
    pub lo_ns: f64,
    pub hi_ns: f64,
    pub step_ns: f64,
}

impl Default for AfSection {
    fn default() -> Self {
        Self { lo_ns: -1000.0, hi_ns: 1000.0, step_ns: 1.0 }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies overrides and fills every derived default.
    pub fn resolve(mut self, seed: Option<u64>, band: Option<BandMode>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(b) = band {
            self.band.mode = b;
        }
        let layout = self.layout()?;
        let g = self.users.groups;
        if g == 0 || self.users.codes == 0 {
            return Err(bad("users.groups and users.codes must be positive"));
        }
        let budgets = match &self.users.budgets {
            Some(b) => b.clone(),
            None => vec![layout.len() / g; g],
        };
        if budgets.len() != g {
            return Err(bad(format!("users.budgets has {} entries for {g} groups", budgets.len())));
        }
        if budgets.contains(&0) || budgets.iter().sum::<usize>() > layout.len() {
            return Err(bad("users.budgets must be positive and fit in the band"));
        }
        let total: usize = budgets.iter().sum();
        self.users.budgets = Some(budgets);
        let spacing = self.spacing();
        let default = SidelobeRegion::calibrated(total, spacing).map_err(|e| bad(e.to_string()))?;
        self.region.a_ns.get_or_insert(default.a / NS);
        self.region.b_ns.get_or_insert(default.b / NS);
        if let Some(v) = &self.ceilings.values_ns {
            if v.len() != g || v.iter().any(|&x| !(x > 0.0)) {
                return Err(bad("ceilings.values_ns needs one positive value per group"));
            }
        } else if !(self.ceilings.multiplier > 0.0) || self.ceilings.draws == 0 {
            return Err(bad("ceilings.multiplier and ceilings.draws must be positive"));
        }
        if self.simulation.trials == 0 {
            return Err(bad("simulation.trials must be positive"));
        }
        if self.simulation.snr_db.is_empty() || self.simulation.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(bad("simulation.snr_db needs finite values or inf"));
        }
        if !(self.af.step_ns > 0.0 && self.af.hi_ns >= self.af.lo_ns) {
            return Err(bad("af sweep needs step_ns > 0 and hi_ns >= lo_ns"));
        }
        self.region()?;
        self.model()?;
        self.search()?;
        self.estimator()?;
        Ok(self)
    }

    pub fn spacing(&self) -> f64 {
        match self.band.mode {
            BandMode::Single => self.band.single.spacing_hz,
            BandMode::Multi => self.band.multi.spacing_hz,
        }
    }

    pub fn layout(&self) -> Result<BandLayout, CliError> {
        let r = match self.band.mode {
            BandMode::Single => {
                let s = &self.band.single;
                BandLayout::single(s.center_hz, s.spacing_hz, s.subcarriers)
            }
            BandMode::Multi => {
                let m = &self.band.multi;
                if m.centers_hz.len() != m.subcarriers.len() {
                    return Err(bad("band.multi.centers_hz and band.multi.subcarriers differ in length"));
                }
                BandLayout::multi(
                    m.centers_hz
                        .iter()
                        .zip(&m.subcarriers)
                        .map(|(&c, &n)| Subband { center_hz: c, spacing_hz: m.spacing_hz, count: n })
                        .collect(),
                )
            }
        };
        r.map_err(|e| bad(e.to_string()))
    }

    pub fn budgets(&self) -> Vec<usize> {
        self.users.budgets.clone().unwrap_or_default()
    }

    pub fn region(&self) -> Result<SidelobeRegion, CliError> {
        let (a, b) = (self.region.a_ns.unwrap_or(f64::NAN), self.region.b_ns.unwrap_or(f64::NAN));
        SidelobeRegion::new(a * NS, b * NS).map_err(|e| bad(e.to_string()))
    }

    pub fn model(&self) -> Result<OfflineModel, CliError> {
        let o = &self.offline;
        if !(o.noise_std > 0.0 && o.prior_std_ns > 0.0 && o.gain.is_finite()) {
            return Err(bad("offline.noise_std and offline.prior_std_ns must be positive"));
        }
        Ok(OfflineModel {
            gains: [Complex64::new(o.gain, 0.0); 2],
            noise_std: o.noise_std,
            prior_std: o.prior_std_ns * NS,
        })
    }

    pub fn search(&self) -> Result<SrlSearch, CliError> {
        let s = &self.srl;
        if !(s.lo_ns > 0.0 && s.hi_ns > s.lo_ns && s.step_ns > 0.0 && s.tol_ns > 0.0 && s.condition_cap > 1.0) {
            return Err(bad("srl grid needs 0 < lo_ns < hi_ns, positive step_ns and tol_ns, condition_cap > 1"));
        }
        Ok(SrlSearch {
            lo: s.lo_ns * NS,
            hi: s.hi_ns * NS,
            step: s.step_ns * NS,
            tol: s.tol_ns * NS,
            condition_cap: s.condition_cap,
        })
    }

    /// EDA settings; ceilings must already be resolved.
    pub fn eda(&self) -> Result<EdaConfig, CliError> {
        let e = &self.eda;
        let ceilings = self.ceilings.values_ns.as_ref().ok_or_else(|| bad("ceilings are unresolved"))?;
        let c = EdaConfig {
            population: e.population,
            elite: e.elite,
            iterations: e.iterations,
            budgets: self.budgets(),
            ceilings: ceilings.iter().map(|&v| v * NS).collect(),
            screen_step: e.screen_step_ns * NS,
            retry_cap: e.retry_cap,
            seed: self.seed,
        };
        c.validate(self.layout()?.len()).map_err(|e| bad(e.to_string()))?;
        Ok(c)
    }

    pub fn estimator(&self) -> Result<EstimatorConfig, CliError> {
        let r = &self.receiver;
        let e = EstimatorConfig {
            particles: r.particles,
            iterations: r.iterations,
            inertia: r.inertia,
            cognitive: r.cognitive,
            social: r.social,
            velocity_clamp: r.velocity_clamp,
            threshold_db: r.threshold_db,
            max_paths: r.max_paths,
            window_fringes: r.window_fringes,
            growth_db: r.growth_db,
            max_gain_ratio: r.max_gain_ratio,
        };
        e.validate().map_err(|e| bad(e.to_string()))?;
        Ok(e)
    }

    pub fn gate(&self) -> DelayGate {
        DelayGate { max_delay: self.receiver.gate_ns * NS }
    }

    pub fn channel(&self) -> MultipathModel {
        MultipathModel { paths: self.channel.paths, max_delay: self.channel.max_delay_ns * NS }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap().resolve(None, None).unwrap();
        assert_eq!(c.budgets(), vec![128, 128]);
        assert_eq!(c.layout().unwrap().len(), 256);
        assert_eq!((c.eda.population, c.eda.elite, c.eda.iterations), (400, 200, 60));
        let r = c.region().unwrap();
        assert!((r.a - 2.0 / (256.0 * 120e3)).abs() < 1e-18);
    }

    #[test]
    fn multiband_override() {
        let c = ExperimentConfig::default().resolve(Some(9), Some(BandMode::Multi)).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.layout().unwrap().subbands().len(), 2);
        assert_eq!(c.budgets(), vec![127, 127]);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ExperimentConfig::from_toml("[eda]\npopulaton = 3\n").is_err());
    }

    #[test]
    fn zero_trials_rejected() {
        let c = ExperimentConfig::from_toml("[simulation]\ntrials = 0\n").unwrap();
        assert!(c.resolve(None, None).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default().resolve(None, None).unwrap();
        c.simulation.snr_db = vec![5.0, f64::INFINITY];
        c.ceilings.values_ns = Some(vec![2.976_123_456_789, 3.0]);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn guide_defaults_block_matches() {
        let guide = include_str!("../../../book/src/cli.md");
        let start = guide.find("```toml\n").unwrap() + "```toml\n".len();
        let end = start + guide[start..].find("```").unwrap();
        assert_eq!(ExperimentConfig::from_toml(&guide[start..end]).unwrap(), ExperimentConfig::default());
    }
}
