use std::path::Path;

use pilotforge::ambiguity::{ambiguity_function, isl, Isl};
use pilotforge::optimizer::{reference_srl_ceilings, run_eda, EdaProblem};
use pilotforge::resolution::SrlEvaluator;
use pilotforge::simulation::{monte_carlo_nmse, SimulationSetup};
use pilotforge::waveform::{seeded_rng, BandLayout, PatternSet};
use pilotforge::Error;
use serde::Serialize;

use crate::artifact::{
    read_pattern, write_csv, write_json, GroupReport, NamedPattern, PatternArtifact, Provenance, PATTERN_KIND,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;

const NS: f64 = 1e-9;
const CEILING_STREAM: u64 = 1;
const RANDOM_STREAM: u64 = 2;
const TRIAL_STREAM: u64 = 3;

/// Independent master seed for one consumer of randomness.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn uniform(cfg: &ExperimentConfig, rows: usize) -> Result<NamedPattern, CliError> {
    Ok(NamedPattern { name: "uniform".into(), patterns: PatternSet::uniform(rows, &cfg.budgets())? })
}

fn random(cfg: &ExperimentConfig, rows: usize) -> Result<NamedPattern, CliError> {
    let mut rng = seeded_rng(derive_seed(cfg.seed, RANDOM_STREAM), 0);
    Ok(NamedPattern { name: "random".into(), patterns: PatternSet::random(rows, &cfg.budgets(), &mut rng)? })
}

/// Pattern files, or the keywords `uniform` and `random` for the baselines.
fn load_patterns(cfg: &ExperimentConfig, layout: &BandLayout, specs: &[String]) -> Result<Vec<NamedPattern>, CliError> {
    let mut out: Vec<NamedPattern> = Vec::new();
    for s in specs {
        let mut p = match s.as_str() {
            "uniform" => uniform(cfg, layout.len())?,
            "random" => random(cfg, layout.len())?,
            path => read_pattern(Path::new(path))?,
        };
        if p.patterns.rows() != layout.len() {
            return Err(CliError::Config(format!(
                "pattern {} has {} rows, the band has {} subcarriers",
                p.name,
                p.patterns.rows(),
                layout.len()
            )));
        }
        let base = p.name.clone();
        let mut k = 1;
        while out.iter().any(|q| q.name == p.name) {
            k += 1;
            p.name = format!("{base}_{k}");
        }
        out.push(p);
    }
    Ok(out)
}

fn require_patterns(patterns: &[NamedPattern]) -> Result<(), CliError> {
    if patterns.is_empty() {
        return Err(CliError::Config("at least one --pattern is required".into()));
    }
    Ok(())
}

pub fn optimize(mut cfg: ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let layout = cfg.layout()?;
    let problem = EdaProblem::new(layout.clone(), cfg.region()?, cfg.model()?, cfg.search()?)?;
    if cfg.ceilings.values_ns.is_none() {
        let seed = derive_seed(cfg.seed, CEILING_STREAM);
        let c = reference_srl_ceilings(&problem, &cfg.budgets(), cfg.ceilings.draws, cfg.ceilings.multiplier, seed)?;
        cfg.ceilings.values_ns = Some(c.iter().map(|v| v / NS).collect());
    }
    let eda = cfg.eda()?;
    let outcome = run_eda(&problem, &eda)?;
    let provenance = Provenance::of(&cfg);
    let groups = (0..outcome.best.groups())
        .map(|g| GroupReport {
            pilots: outcome.best.pilots(g),
            isl_db: outcome.isl[g].db,
            isl_linear: outcome.isl[g].linear,
            srl_ns: outcome.srl[g].map(|s| s / NS),
            ceiling_ns: eda.ceilings[g] / NS,
        })
        .collect();
    let artifact = PatternArtifact {
        kind: PATTERN_KIND.into(),
        provenance: provenance.clone(),
        band: layout.mode(),
        rows: layout.len(),
        fitness_db: Isl::from_linear(outcome.best_fitness).db,
        groups,
    };
    write_json(out, "pattern.json", &artifact)?;
    let rows: Vec<String> = outcome
        .trace
        .iter()
        .enumerate()
        .map(|(i, &f)| format!("{i},{f},{}", Isl::from_linear(f).db))
        .collect();
    write_csv(out, "trace.csv", &provenance, "iteration,fitness_linear,fitness_db", &rows)
}

#[derive(Serialize)]
struct IslGroup {
    isl_db: f64,
    isl_linear: f64,
}

#[derive(Serialize)]
struct IslEntry {
    name: String,
    max_isl_db: f64,
    groups: Vec<IslGroup>,
}

#[derive(Serialize)]
struct IslReport {
    kind: &'static str,
    #[serde(flatten)]
    provenance: Provenance,
    region_ns: (f64, f64),
    patterns: Vec<IslEntry>,
}

pub fn isl_cmd(cfg: ExperimentConfig, out: &Path, specs: &[String]) -> Result<(), CliError> {
    let layout = cfg.layout()?;
    let region = cfg.region()?;
    let patterns = load_patterns(&cfg, &layout, specs)?;
    require_patterns(&patterns)?;
    let mut entries = Vec::new();
    for p in &patterns {
        let groups = (0..p.patterns.groups())
            .map(|g| isl(&layout, &p.patterns.weights(g), region).map(|v| IslGroup { isl_db: v.db, isl_linear: v.linear }))
            .collect::<Result<Vec<_>, Error>>()?;
        let max_isl_db = groups.iter().map(|g| g.isl_db).fold(f64::NEG_INFINITY, f64::max);
        entries.push(IslEntry { name: p.name.clone(), max_isl_db, groups });
    }
    let report = IslReport {
        kind: "isl",
        provenance: Provenance::of(&cfg),
        region_ns: (region.a / NS, region.b / NS),
        patterns: entries,
    };
    write_json(out, "isl.json", &report)
}

#[derive(Serialize)]
struct SrlGroup {
    /// `None` when no root lies inside the search grid.
    srl_ns: Option<f64>,
    crb_at_srl_ns2: Option<f64>,
    roots_ns: Vec<f64>,
}

#[derive(Serialize)]
struct SrlEntry {
    name: String,
    groups: Vec<SrlGroup>,
}

#[derive(Serialize)]
struct SrlReport {
    kind: &'static str,
    #[serde(flatten)]
    provenance: Provenance,
    grid_ns: (f64, f64, f64),
    patterns: Vec<SrlEntry>,
}

pub fn srl_cmd(cfg: ExperimentConfig, out: &Path, specs: &[String]) -> Result<(), CliError> {
    let layout = cfg.layout()?;
    let search = cfg.search()?;
    let eval = SrlEvaluator::new(layout.clone(), cfg.model()?, search)?;
    let patterns = load_patterns(&cfg, &layout, specs)?;
    require_patterns(&patterns)?;
    let mut entries = Vec::new();
    for p in &patterns {
        let mut groups = Vec::new();
        for g in 0..p.patterns.groups() {
            groups.push(match eval.srl(p.patterns.column(g)) {
                Ok(r) => SrlGroup {
                    srl_ns: Some(r.srl / NS),
                    crb_at_srl_ns2: Some(r.crb_at_srl / (NS * NS)),
                    roots_ns: r.roots_found.iter().map(|v| v / NS).collect(),
                },
                Err(Error::NoSrlInRange { .. }) => SrlGroup { srl_ns: None, crb_at_srl_ns2: None, roots_ns: vec![] },
                Err(e) => return Err(e.into()),
            });
        }
        entries.push(SrlEntry { name: p.name.clone(), groups });
    }
    let report = SrlReport {
        kind: "srl",
        provenance: Provenance::of(&cfg),
        grid_ns: (search.lo / NS, search.hi / NS, search.step / NS),
        patterns: entries,
    };
    write_json(out, "srl.json", &report)
}

/// Delay offsets of the sweep, ns.
fn sweep(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| lo + k as f64 * step).collect()
}

pub fn af_cmd(cfg: ExperimentConfig, out: &Path, specs: &[String]) -> Result<(), CliError> {
    let layout = cfg.layout()?;
    let patterns = load_patterns(&cfg, &layout, specs)?;
    require_patterns(&patterns)?;
    let mut header = String::from("dtau_ns");
    let mut weights = Vec::new();
    for p in &patterns {
        for g in 0..p.patterns.groups() {
            header.push_str(&format!(",{}_g{g}_db", p.name));
            weights.push(p.patterns.weights(g));
        }
    }
    let mut rows = Vec::new();
    for t in sweep(cfg.af.lo_ns, cfg.af.hi_ns, cfg.af.step_ns) {
        let mut row = format!("{t}");
        for w in &weights {
            let peak: f64 = w.iter().sum();
            let v = ambiguity_function(&layout, w, t * NS)?.norm() / peak;
            row.push_str(&format!(",{}", (20.0 * v.log10()).max(-300.0)));
        }
        rows.push(row);
    }
    write_csv(out, "af.csv", &Provenance::of(&cfg), &header, &rows)
}

pub fn simulate(cfg: ExperimentConfig, out: &Path, specs: &[String]) -> Result<(), CliError> {
    let layout = cfg.layout()?;
    let mut patterns = load_patterns(&cfg, &layout, specs)?;
    require_patterns(&patterns)?;
    for base in [uniform(&cfg, layout.len())?, random(&cfg, layout.len())?] {
        if !patterns.iter().any(|p| p.name == base.name) {
            patterns.push(base);
        }
    }
    let setup = SimulationSetup::new(
        layout,
        cfg.users.codes,
        cfg.users.root,
        cfg.channel(),
        cfg.gate(),
        cfg.estimator()?,
    )?;
    let seed = derive_seed(cfg.seed, TRIAL_STREAM);
    let mut rows = Vec::new();
    for &snr in &cfg.simulation.snr_db {
        for p in &patterns {
            let s = monte_carlo_nmse(&setup, &p.patterns, snr, cfg.simulation.trials, seed)?;
            if s.failures > 0 {
                eprintln!("{} at {snr} dB: {} of {} trials failed and were excluded", p.name, s.failures, s.trials);
            }
            rows.push(format!(
                "{snr},{},{},{},{},{},{}",
                p.name,
                s.nmse,
                10.0 * s.nmse.log10(),
                s.recovered,
                s.trials,
                s.failures
            ));
        }
    }
    write_csv(
        out,
        "nmse.csv",
        &Provenance::of(&cfg),
        "snr_db,scheme,nmse,nmse_db,recovered_nmse,trials,failures",
        &rows,
    )
}
