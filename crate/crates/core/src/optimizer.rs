//! Estimation-of-distribution search for multi-user pilot patterns.
//!
//! The objective is the worst-group side-lobe level. Feasible patterns give
//! every group exactly its pilot budget, share no subcarrier between groups,
//! and keep every group's resolution limit at or below its ceiling.
//!
//! Each iteration keeps the `T` best individuals, sets the per-cell Bernoulli
//! probabilities to their mean, samples `Q − 1` fresh individuals and carries
//! the best one over unchanged.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{isl_matrix, Isl, IslMatrix, SidelobeRegion};
use crate::error::{Error, Result};
use crate::resolution::{OfflineModel, SrlEvaluator, SrlSearch};
use crate::waveform::{pack_bits, seeded_rng, BandLayout, PatternSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaConfig {
    pub population: usize,
    pub elite: usize,
    pub iterations: usize,
    pub budgets: Vec<usize>,
    /// Per-group resolution ceilings in seconds; `f64::INFINITY` disables one.
    pub ceilings: Vec<f64>,
    /// Grid step of the in-loop resolution screen, seconds.
    pub screen_step: f64,
    /// Maximum rejected draws per sampled individual.
    pub retry_cap: usize,
    pub seed: u64,
}

impl EdaConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.population < 2 || self.elite == 0 || self.elite >= self.population {
            return Err(Error::InvalidArgument(format!(
                "need 0 < elite < population, got elite={} population={}",
                self.elite, self.population
            )));
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::InvalidArgument("every group needs a positive pilot budget".into()));
        }
        if self.budgets.iter().sum::<usize>() > rows {
            return Err(Error::InvalidArgument(format!("pilot budgets exceed {rows} subcarriers")));
        }
        if self.ceilings.len() != self.budgets.len() {
            return Err(Error::DimensionMismatch("one resolution ceiling per group is required".into()));
        }
        if self.ceilings.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::InvalidArgument("resolution ceilings must be positive".into()));
        }
        if !(self.screen_step > 0.0) || self.retry_cap == 0 {
            return Err(Error::InvalidArgument("screen step and retry cap must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to score a pattern on one layout.
#[derive(Debug, Clone)]
pub struct EdaProblem {
    pub layout: BandLayout,
    pub isl: IslMatrix,
    pub srl: SrlEvaluator,
}

impl EdaProblem {
    pub fn new(layout: BandLayout, region: SidelobeRegion, model: OfflineModel, search: SrlSearch) -> Result<Self> {
        let isl = isl_matrix(&layout, region);
        let srl = SrlEvaluator::new(layout.clone(), model, search)?;
        Ok(Self { layout, isl, srl })
    }
}

/// Worst-group side-lobe level in linear scale.
pub fn fitness(patterns: &PatternSet, isl: &IslMatrix) -> Result<f64> {
    group_isl(patterns, isl).map(|v| v.iter().map(|x| x.linear).fold(f64::NEG_INFINITY, f64::max))
}

pub fn group_isl(patterns: &PatternSet, isl: &IslMatrix) -> Result<Vec<Isl>> {
    if patterns.rows() != isl.size() {
        return Err(Error::DimensionMismatch("pattern and kernel sizes differ".into()));
    }
    (0..patterns.groups())
        .map(|g| {
            let pilots = patterns.pilots(g);
            if pilots.is_empty() {
                return Err(Error::EmptyPattern { group: g });
            }
            isl.isl_of_support(&pilots)
        })
        .collect()
}

/// Per-cell Bernoulli probabilities, one column per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    pub columns: Vec<Vec<f64>>,
}

impl ProbMatrix {
    /// `P_g / N` in every cell of column `g`.
    pub fn flat(rows: usize, budgets: &[usize]) -> Self {
        Self { columns: budgets.iter().map(|&p| vec![p as f64 / rows as f64; rows]).collect() }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map(Vec::len).unwrap_or(0)
    }

    pub fn groups(&self) -> usize {
        self.columns.len()
    }

    /// Largest distance of any entry from the nearer of 0 and 1.
    pub fn max_distance_from_binary(&self) -> f64 {
        self.columns.iter().flatten().map(|&p| p.min(1.0 - p)).fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        if self.columns.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Cellwise mean of the elite masks.
pub fn update_probabilities(elites: &[&PatternSet]) -> Result<ProbMatrix> {
    let first = elites.first().ok_or_else(|| Error::InvalidArgument("elite set is empty".into()))?;
    let (rows, groups) = (first.rows(), first.groups());
    if elites.iter().any(|e| e.rows() != rows || e.groups() != groups) {
        return Err(Error::DimensionMismatch("elite patterns differ in shape".into()));
    }
    let scale = 1.0 / elites.len() as f64;
    let mut columns = vec![vec![0.0; rows]; groups];
    for e in elites {
        for (g, col) in columns.iter_mut().enumerate() {
            for (c, &b) in col.iter_mut().zip(e.column(g)) {
                if b {
                    *c += 1.0;
                }
            }
        }
    }
    columns.iter_mut().flatten().for_each(|c| *c *= scale);
    Ok(ProbMatrix { columns })
}

/// One Bernoulli draw followed by structural repair: conflicts on a row go to
/// the group furthest below its budget, then each column is trimmed at its
/// least likely cells or filled at the most likely free rows.
pub fn draw_repaired<R: Rng + ?Sized>(prob: &ProbMatrix, budgets: &[usize], rng: &mut R) -> Result<PatternSet> {
    prob.check()?;
    let (rows, groups) = (prob.rows(), prob.groups());
    if budgets.len() != groups {
        return Err(Error::DimensionMismatch("one budget per probability column is required".into()));
    }
    if budgets.iter().sum::<usize>() > rows {
        return Err(Error::InvalidArgument(format!("pilot budgets exceed {rows} subcarriers")));
    }
    let mut cols: Vec<Vec<bool>> = prob
        .columns
        .iter()
        .map(|c| c.iter().map(|&p| rng.random::<f64>() < p).collect())
        .collect();
    let mut counts: Vec<usize> = cols.iter().map(|c| c.iter().filter(|&&b| b).count()).collect();

    for n in 0..rows {
        let claim: Vec<usize> = (0..groups).filter(|&g| cols[g][n]).collect();
        if claim.len() < 2 {
            continue;
        }
        let deficit = |g: usize| budgets[g] as i64 - counts[g] as i64;
        let mut keep = claim[0];
        for &g in &claim[1..] {
            if deficit(g) > deficit(keep) {
                keep = g;
            }
        }
        for &g in &claim {
            if g != keep {
                cols[g][n] = false;
                counts[g] -= 1;
            }
        }
    }

    let mut order: Vec<usize> = (0..rows).collect();
    for g in 0..groups {
        if counts[g] > budgets[g] {
            order.shuffle(rng);
            let mut held: Vec<usize> = order.iter().copied().filter(|&n| cols[g][n]).collect();
            held.sort_by(|&a, &b| prob.columns[g][a].total_cmp(&prob.columns[g][b]));
            for &n in &held[..counts[g] - budgets[g]] {
                cols[g][n] = false;
            }
            counts[g] = budgets[g];
        }
    }
    for g in 0..groups {
        if counts[g] < budgets[g] {
            order.shuffle(rng);
            let mut free: Vec<usize> = order.iter().copied().filter(|&n| !cols.iter().any(|c| c[n])).collect();
            free.sort_by(|&a, &b| prob.columns[g][b].total_cmp(&prob.columns[g][a]));
            for &n in &free[..budgets[g] - counts[g]] {
                cols[g][n] = true;
            }
            counts[g] = budgets[g];
        }
    }
    Ok(PatternSet::from_columns_unchecked(cols))
}

/// Memoized per-group resolution screen keyed by the column bitmask.
#[derive(Debug, Default)]
struct ScreenCache {
    map: Mutex<HashMap<(usize, Vec<u64>), bool>>,
}

impl ScreenCache {
    fn feasible(&self, problem: &EdaProblem, config: &EdaConfig, patterns: &PatternSet) -> Result<bool> {
        for g in 0..patterns.groups() {
            let ceiling = config.ceilings[g];
            if ceiling.is_infinite() {
                continue;
            }
            let key = (g, pack_bits(patterns.column(g)));
            let hit = self.map.lock().expect("cache poisoned").get(&key).copied();
            let ok = match hit {
                Some(v) => v,
                None => {
                    let v = problem.srl.srl_within(patterns.column(g), ceiling, config.screen_step)?.is_some();
                    self.map.lock().expect("cache poisoned").insert(key, v);
                    v
                }
            };
            if !ok {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub patterns: PatternSet,
    pub fitness: f64,
}

/// Draws until a structurally repaired individual also meets every
/// resolution ceiling.
pub fn sample_individual(
    prob: &ProbMatrix,
    problem: &EdaProblem,
    config: &EdaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PatternSet> {
    sample_with_cache(prob, problem, config, rng, &ScreenCache::default())
}

fn sample_with_cache(
    prob: &ProbMatrix,
    problem: &EdaProblem,
    config: &EdaConfig,
    rng: &mut ChaCha8Rng,
    cache: &ScreenCache,
) -> Result<PatternSet> {
    for _ in 0..config.retry_cap {
        let p = draw_repaired(prob, &config.budgets, rng)?;
        if cache.feasible(problem, config, &p)? {
            return Ok(p);
        }
    }
    Err(Error::SamplerExhausted { draws: config.retry_cap })
}

#[derive(Debug, Clone)]
pub struct EdaState {
    pub population: Vec<Individual>,
    pub prob: ProbMatrix,
    pub best: Individual,
    pub iteration: usize,
}

/// Stepwise driver; [`run_eda`] runs it to completion.
pub struct Eda<'a> {
    problem: &'a EdaProblem,
    config: EdaConfig,
    cache: ScreenCache,
    fitness_cache: Mutex<HashMap<Vec<u64>, f64>>,
    state: EdaState,
}

impl<'a> Eda<'a> {
    /// Validates the configuration and draws the initial population.
    pub fn new(problem: &'a EdaProblem, config: EdaConfig) -> Result<Self> {
        config.validate(problem.layout.len())?;
        let prob = ProbMatrix::flat(problem.layout.len(), &config.budgets);
        let mut eda = Self {
            problem,
            config,
            cache: ScreenCache::default(),
            fitness_cache: Mutex::new(HashMap::new()),
            state: EdaState {
                population: Vec::new(),
                prob,
                best: Individual { patterns: PatternSet::from_columns_unchecked(vec![vec![false]]), fitness: 0.0 },
                iteration: 0,
            },
        };
        let population = eda.sample_population(eda.config.population, 0)?;
        eda.install(population);
        Ok(eda)
    }

    pub fn state(&self) -> &EdaState {
        &self.state
    }

    pub fn config(&self) -> &EdaConfig {
        &self.config
    }

    fn score(&self, p: &PatternSet) -> Result<f64> {
        let key = p.key();
        if let Some(&f) = self.fitness_cache.lock().expect("cache poisoned").get(&key) {
            return Ok(f);
        }
        let f = fitness(p, &self.problem.isl)?;
        self.fitness_cache.lock().expect("cache poisoned").insert(key, f);
        Ok(f)
    }

    fn sample_population(&self, count: usize, round: u64) -> Result<Vec<Individual>> {
        (0..count as u64)
            .into_par_iter()
            .map(|q| {
                let mut rng = seeded_rng(self.config.seed, (round << 32) | q);
                let patterns = sample_with_cache(&self.state.prob, self.problem, &self.config, &mut rng, &self.cache)?;
                let fitness = self.score(&patterns)?;
                Ok(Individual { patterns, fitness })
            })
            .collect()
    }

    /// Sorts by fitness (stable, so ties keep sampling order) and records the best.
    fn install(&mut self, mut population: Vec<Individual>) {
        population.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        self.state.best = population[0].clone();
        self.state.population = population;
    }

    /// One iteration: elite mean, resample, carry over the best.
    pub fn step(&mut self) -> Result<()> {
        let elites: Vec<&PatternSet> =
            self.state.population[..self.config.elite].iter().map(|i| &i.patterns).collect();
        self.state.prob = update_probabilities(&elites)?;
        self.state.iteration += 1;
        let mut next = vec![self.state.best.clone()];
        next.extend(self.sample_population(self.config.population - 1, self.state.iteration as u64)?);
        self.install(next);
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EdaOutcome {
    pub best: PatternSet,
    pub best_fitness: f64,
    /// Best fitness after initialization and after every iteration.
    pub trace: Vec<f64>,
    pub prob: ProbMatrix,
    pub isl: Vec<Isl>,
    /// Fine-grid resolution limit of every group of the winner, seconds;
    /// `None` when no limit lies inside the search grid.
    pub srl: Vec<Option<f64>>,
}

pub fn run_eda(problem: &EdaProblem, config: &EdaConfig) -> Result<EdaOutcome> {
    let mut eda = Eda::new(problem, config.clone())?;
    let mut trace = vec![eda.state().best.fitness];
    for _ in 0..config.iterations {
        eda.step()?;
        trace.push(eda.state().best.fitness);
    }
    let best = eda.state.best.patterns.clone();
    let srl = (0..best.groups())
        .map(|g| match problem.srl.srl(best.column(g)) {
            Ok(r) => Ok(Some(r.srl)),
            Err(Error::NoSrlInRange { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EdaOutcome {
        isl: group_isl(&best, &problem.isl)?,
        best_fitness: eda.state.best.fitness,
        trace,
        prob: eda.state.prob.clone(),
        best,
        srl,
    })
}

/// Ceilings of `multiplier` times each group's mean resolution limit over
/// `draws` random patterns.
pub fn reference_srl_ceilings(
    problem: &EdaProblem,
    budgets: &[usize],
    draws: usize,
    multiplier: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if draws == 0 || !(multiplier > 0.0) {
        return Err(Error::InvalidArgument("need at least one draw and a positive multiplier".into()));
    }
    let per_draw = (0..draws as u64)
        .map(|d| {
            let p = PatternSet::random(problem.layout.len(), budgets, &mut seeded_rng(seed, d))?;
            problem.srl.pattern_srl(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..budgets.len())
        .map(|g| multiplier * per_draw.iter().map(|r| r[g].srl).sum::<f64>() / draws as f64)
        .collect())
}
