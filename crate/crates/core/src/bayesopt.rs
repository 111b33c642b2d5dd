//! Sequential Bayesian optimization over a normalized box [0, 1]^𝒟 with
//! nonlinear feasibility constraints, and its append-only run ledger.
//!
//! Every random draw in iteration `i` comes from a ChaCha stream keyed by
//! (seed, i), so a run depends only on its settings and the records already
//! in the ledger. This is what makes `resume` reproduce an unsplit run.

use std::io::{BufRead, Write};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gp::{FitOptions, GpError, GpModel};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("no feasible point found in {attempts} attempts")]
    Infeasible { attempts: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("ledger line {line}: {message}")]
    Ledger { line: usize, message: String },
    #[error("ledger digest mismatch: ledger has {ledger}, current setup is {current}")]
    DigestMismatch { ledger: String, current: String },
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A search domain expressed in normalized coordinates u ∈ [0, 1]^dim.
pub trait Space: Sync {
    fn dim(&self) -> usize;
    /// Whether `u` (already inside the unit box) satisfies the constraints.
    fn is_feasible(&self, u: &[f64]) -> bool;
    /// Draw a feasible point.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, BoError>;
    /// Replace `u` by a representative of its symmetry class. Only valid
    /// for symmetries the objective is invariant under.
    fn canonicalize(&self, _u: &mut [f64]) {}
    /// Canonical text description; hashed into the ledger header.
    fn describe(&self) -> String;
}

/// Unconstrained box, mapping u affinely onto [lo, hi] per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        BoxSpace { lower, upper }
    }

    pub fn decode(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, v)| self.lower[k] + v * (self.upper[k] - self.lower[k]))
            .collect()
    }
}

impl Space for BoxSpace {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn is_feasible(&self, _u: &[f64]) -> bool {
        true
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, BoError> {
        Ok((0..self.dim()).map(|_| rng.random::<f64>()).collect())
    }

    fn describe(&self) -> String {
        format!("box lower={:?} upper={:?}", self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Divergent,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub status: Status,
    /// Objective value; `None` unless status is `Ok`.
    pub value: Option<f64>,
    pub message: Option<String>,
    /// Objective-specific fields stored alongside the record.
    pub extra: serde_json::Value,
}

impl Evaluation {
    pub fn ok(value: f64) -> Self {
        Evaluation { status: Status::Ok, value: Some(value), message: None, extra: serde_json::Value::Null }
    }

    pub fn divergent(message: impl Into<String>) -> Self {
        Evaluation { status: Status::Divergent, value: None, message: Some(message.into()), extra: serde_json::Value::Null }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Evaluation { status: Status::Error, value: None, message: Some(message.into()), extra: serde_json::Value::Null }
    }
}

pub trait Objective: Sync {
    fn evaluate(&self, u: &[f64]) -> Evaluation;
    /// Value the surrogate is trained on for an `Ok` result.
    fn surrogate_target(&self, value: f64) -> f64 {
        value
    }
    /// Surrogate target assigned to divergent points.
    fn divergent_target(&self) -> f64;
    fn describe(&self) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoSettings {
    pub budget: usize,
    /// Defaults to max(2𝒟, 10). A budget below this makes the run pure
    /// random search.
    pub init_count: Option<usize>,
    pub kappa: f64,
    pub seed: u64,
    pub n_candidates: usize,
    pub n_polish: usize,
    pub fit_starts: usize,
    /// Evaluated as the first initial point instead of a random draw.
    pub start: Option<Vec<f64>>,
}

impl Default for BoSettings {
    fn default() -> Self {
        BoSettings {
            budget: 100,
            init_count: None,
            kappa: 2.0,
            seed: 0,
            n_candidates: 512,
            n_polish: 8,
            fit_starts: 3,
            start: None,
        }
    }
}

impl BoSettings {
    pub fn init_count_for(&self, dim: usize) -> usize {
        self.init_count.unwrap_or((2 * dim).max(10))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub space_digest: String,
    pub objective_digest: String,
    pub dim: usize,
    pub seed: u64,
    pub budget: usize,
    pub init_count: usize,
    pub kappa: f64,
    pub n_candidates: usize,
    pub n_polish: usize,
    pub fit_starts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Normalized parameter vector.
    pub u: Vec<f64>,
    pub status: Status,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub wall_s: f64,
    /// Seed of the run; with `iteration` this names the RNG stream used.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LedgerLine {
    Header(LedgerHeader),
    Eval(EvalRecord),
    Resume { extra_budget: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLedger {
    pub header: LedgerHeader,
    pub records: Vec<EvalRecord>,
    /// Budget after all resumes.
    pub budget: usize,
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
}

impl RunLedger {
    pub fn best(&self) -> Option<&EvalRecord> {
        self.records
            .iter()
            .filter(|r| r.status == Status::Ok)
            .min_by(|a, b| a.value.unwrap_or(f64::INFINITY).total_cmp(&b.value.unwrap_or(f64::INFINITY)))
    }

    /// Best `Ok` value after each evaluation (infinite until the first).
    pub fn best_trace(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                if r.status == Status::Ok {
                    best = best.min(r.value.unwrap_or(f64::INFINITY));
                }
                best
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", serde_json::to_string(&LedgerLine::Header(self.header.clone()))?)?;
        let mut budget = self.header.budget;
        let mut written = 0;
        for r in &self.records {
            if written == budget {
                let extra = self.budget - budget;
                writeln!(w, "{}", serde_json::to_string(&LedgerLine::Resume { extra_budget: extra })?)?;
                budget += extra;
            }
            writeln!(w, "{}", serde_json::to_string(&LedgerLine::Eval(r.clone()))?)?;
            written += 1;
        }
        if budget < self.budget {
            let extra = self.budget - budget;
            writeln!(w, "{}", serde_json::to_string(&LedgerLine::Resume { extra_budget: extra })?)?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, BoError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut budget = 0;
        for (k, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = k + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LedgerLine = serde_json::from_str(&line)
                .map_err(|e| BoError::Ledger { line: lineno, message: e.to_string() })?;
            match parsed {
                LedgerLine::Header(h) if header.is_none() => {
                    budget = h.budget;
                    header = Some(h);
                }
                LedgerLine::Header(_) => {
                    return Err(BoError::Ledger { line: lineno, message: "duplicate header".into() })
                }
                _ if header.is_none() => {
                    return Err(BoError::Ledger { line: lineno, message: "record before header".into() })
                }
                LedgerLine::Eval(rec) => {
                    if rec.iteration != records.len() {
                        return Err(BoError::Ledger {
                            line: lineno,
                            message: format!("expected iteration {}, found {}", records.len(), rec.iteration),
                        });
                    }
                    records.push(rec);
                }
                LedgerLine::Resume { extra_budget } => budget += extra_budget,
            }
        }
        let header = header.ok_or(BoError::Ledger { line: 0, message: "empty ledger".into() })?;
        Ok(RunLedger { header, records, budget })
    }
}

/// 𝒜 = μ − κσ, minimized.
pub fn acquisition(model: &GpModel, u: &[f64], kappa: f64) -> f64 {
    let (mu, sd) = model.predict(u);
    mu - kappa * sd
}

fn stream(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

const PERTURB_ATTEMPTS: usize = 20;
const PERTURB_SCALES: [f64; 3] = [0.01, 0.04, 0.15];
const POLISH_STEPS: [f64; 4] = [0.05, 0.01, 0.002, 0.0005];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalSettings {
    pub kappa: f64,
    pub n_candidates: usize,
    pub n_polish: usize,
}

/// Minimize the acquisition over the space: half the candidates are
/// uniform feasible draws, half are Gaussian perturbations of the best
/// training points; the best few are then polished coordinate-wise.
pub fn propose_next<S: Space + ?Sized>(
    model: &GpModel,
    space: &S,
    settings: &ProposalSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, BoError> {
    let dim = space.dim();
    let mut order: Vec<usize> = (0..model.len()).collect();
    order.sort_by(|&a, &b| model.targets()[a].total_cmp(&model.targets()[b]));
    let incumbents: Vec<&Vec<f64>> = order.iter().take(5).map(|&i| &model.inputs()[i]).collect();

    let n_local = if incumbents.is_empty() { 0 } else { settings.n_candidates / 2 };
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(settings.n_candidates);
    for _ in 0..settings.n_candidates - n_local {
        candidates.push(space.sample(rng)?);
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for k in 0..n_local {
        let base = incumbents[k % incumbents.len()];
        let scale = PERTURB_SCALES[(k / incumbents.len()) % PERTURB_SCALES.len()];
        for _ in 0..PERTURB_ATTEMPTS {
            let mut u: Vec<f64> = base
                .iter()
                .map(|v| (v + scale * normal.sample(rng)).clamp(0.0, 1.0))
                .collect();
            space.canonicalize(&mut u);
            if space.is_feasible(&u) {
                candidates.push(u);
                break;
            }
        }
    }

    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .map(|u| (acquisition(model, &u, settings.kappa), u))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.truncate(settings.n_polish.max(1));

    for (val, u) in scored.iter_mut() {
        for &h in &POLISH_STEPS {
            let mut improved = true;
            let mut sweeps = 0;
            while improved && sweeps < 4 {
                improved = false;
                sweeps += 1;
                for k in 0..dim {
                    for sign in [1.0, -1.0] {
                        let mut trial = u.clone();
                        trial[k] = (trial[k] + sign * h).clamp(0.0, 1.0);
                        if trial[k] == u[k] {
                            continue;
                        }
                        space.canonicalize(&mut trial);
                        if !space.is_feasible(&trial) {
                            continue;
                        }
                        let a = acquisition(model, &trial, settings.kappa);
                        if a < *val {
                            *val = a;
                            *u = trial;
                            improved = true;
                            break;
                        }
                    }
                }
            }
        }
    }
    let best = scored
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or(BoError::Infeasible { attempts: settings.n_candidates })?;
    Ok(best.1)
}

fn header_for<S: Space + ?Sized, O: Objective + ?Sized>(space: &S, objective: &O, s: &BoSettings) -> LedgerHeader {
    LedgerHeader {
        space_digest: digest(&space.describe()),
        objective_digest: digest(&objective.describe()),
        dim: space.dim(),
        seed: s.seed,
        budget: s.budget,
        init_count: s.init_count_for(space.dim()),
        kappa: s.kappa,
        n_candidates: s.n_candidates,
        n_polish: s.n_polish,
        fit_starts: s.fit_starts,
        start: s.start.clone(),
    }
}

fn evaluate_at<O: Objective + ?Sized>(objective: &O, u: Vec<f64>, iteration: usize, seed: u64) -> EvalRecord {
    let start = Instant::now();
    let e = objective.evaluate(&u);
    EvalRecord {
        iteration,
        u,
        status: e.status,
        value: e.value,
        message: e.message,
        wall_s: start.elapsed().as_secs_f64(),
        seed,
        extra: e.extra,
    }
}

fn training_set<O: Objective + ?Sized>(objective: &O, records: &[EvalRecord]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let cap = objective.divergent_target();
    for r in records {
        let y = match (r.status, r.value) {
            (Status::Ok, Some(v)) => objective.surrogate_target(v).min(cap),
            (Status::Divergent, _) => cap,
            _ => continue,
        };
        xs.push(r.u.clone());
        ys.push(y);
    }
    (xs, ys)
}

/// Evaluate until the ledger holds `ledger.budget` records, calling `sink`
/// on each new record as soon as it exists.
fn advance<S: Space + ?Sized, O: Objective + ?Sized>(
    ledger: &mut RunLedger,
    space: &S,
    objective: &O,
    sink: &mut dyn FnMut(&EvalRecord) -> std::io::Result<()>,
) -> Result<(), BoError> {
    let h = ledger.header.clone();
    // initial design; independent draws, evaluated concurrently
    if ledger.records.len() < h.init_count.min(ledger.budget) {
        let todo: Vec<usize> = (ledger.records.len()..h.init_count.min(ledger.budget)).collect();
        let points = todo
            .iter()
            .map(|&i| match (&h.start, i) {
                (Some(u), 0) => Ok(u.clone()),
                _ => space.sample(&mut stream(h.seed, i)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let new: Vec<EvalRecord> = todo
            .into_par_iter()
            .zip(points)
            .map(|(i, u)| evaluate_at(objective, u, i, h.seed))
            .collect();
        for r in new {
            sink(&r)?;
            ledger.records.push(r);
        }
    }
    let prop = ProposalSettings { kappa: h.kappa, n_candidates: h.n_candidates, n_polish: h.n_polish };
    while ledger.records.len() < ledger.budget {
        let i = ledger.records.len();
        let mut rng = stream(h.seed, i);
        let (xs, ys) = training_set(objective, &ledger.records);
        let u = if xs.len() < 2 {
            space.sample(&mut rng)?
        } else {
            let fit = FitOptions { seed: h.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15), starts: h.fit_starts, ..Default::default() };
            let model = GpModel::fit(xs, ys, &fit)?;
            propose_next(&model, space, &prop, &mut rng)?
        };
        let r = evaluate_at(objective, u, i, h.seed);
        sink(&r)?;
        ledger.records.push(r);
    }
    Ok(())
}

fn check_settings<S: Space + ?Sized>(s: &BoSettings, space: &S) -> Result<(), BoError> {
    let dim = space.dim();
    if let Some(u) = &s.start {
        if u.len() != dim || !u.iter().all(|v| (0.0..=1.0).contains(v)) || !space.is_feasible(u) {
            return Err(BoError::Settings("start point is outside the feasible region".into()));
        }
    }
    if dim == 0 {
        return Err(BoError::Settings("search space has no free parameters".into()));
    }
    if s.budget < 2 || s.init_count_for(dim) < 2 {
        return Err(BoError::Settings(format!("budget {} and init_count must be at least 2", s.budget)));
    }
    if !(s.kappa >= 0.0) {
        return Err(BoError::Settings(format!("kappa = {}", s.kappa)));
    }
    if s.n_candidates < 2 {
        return Err(BoError::Settings("n_candidates must be at least 2".into()));
    }
    Ok(())
}

/// Full run from scratch. Lines are streamed to `log` (JSONL) if given.
pub fn run<S: Space + ?Sized, O: Objective + ?Sized>(
    space: &S,
    objective: &O,
    settings: &BoSettings,
    mut log: Option<&mut dyn Write>,
) -> Result<RunLedger, BoError> {
    check_settings(settings, space)?;
    let header = header_for(space, objective, settings);
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", serde_json::to_string(&LedgerLine::Header(header.clone())).map_err(std::io::Error::from)?)?;
    }
    let mut ledger = RunLedger { budget: header.budget, header, records: Vec::new() };
    advance(&mut ledger, space, objective, &mut |r| write_record(&mut log, r))?;
    Ok(ledger)
}

fn write_record(log: &mut Option<&mut dyn Write>, r: &EvalRecord) -> std::io::Result<()> {
    if let Some(w) = log.as_mut() {
        writeln!(w, "{}", serde_json::to_string(&LedgerLine::Eval(r.clone()))?)?;
        w.flush()?;
    }
    Ok(())
}

/// Continue a ledger for `extra_budget` more evaluations. Refuses if the
/// space or objective differs from the one that produced the ledger.
pub fn resume<S: Space + ?Sized, O: Objective + ?Sized>(
    mut ledger: RunLedger,
    space: &S,
    objective: &O,
    extra_budget: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<RunLedger, BoError> {
    for (have, want) in [
        (&ledger.header.space_digest, digest(&space.describe())),
        (&ledger.header.objective_digest, digest(&objective.describe())),
    ] {
        if *have != want {
            return Err(BoError::DigestMismatch { ledger: have.clone(), current: want });
        }
    }
    if extra_budget == 0 && ledger.records.len() >= ledger.budget {
        return Ok(ledger);
    }
    if extra_budget > 0 {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&LedgerLine::Resume { extra_budget }).map_err(std::io::Error::from)?)?;
        }
    }
    ledger.budget += extra_budget;
    advance(&mut ledger, space, objective, &mut |r| write_record(&mut log, r))?;
    Ok(ledger)
}

/// Seed for restart `r` of a run seeded with `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed.wrapping_add((r as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Hyper;

    struct Bowl;

    impl Objective for Bowl {
        fn evaluate(&self, u: &[f64]) -> Evaluation {
            Evaluation::ok((u[0] - 0.3).powi(2) + 2.0 * (u[1] - 0.7).powi(2) + 1.0)
        }
        fn divergent_target(&self) -> f64 {
            1e3
        }
        fn describe(&self) -> String {
            "bowl".into()
        }
    }

    fn unit2() -> BoxSpace {
        BoxSpace::new(vec![0.0, 0.0], vec![1.0, 1.0])
    }

    #[test]
    fn acquisition_contract() {
        let m = GpModel::with_hyper(vec![vec![0.2], vec![0.8]], vec![1.0, 3.0], Hyper { gamma: 1.0, length: 0.2, noise: 0.0 }).unwrap();
        let (mu, _) = m.predict(&[0.5]);
        assert_eq!(acquisition(&m, &[0.5], 0.0), mu);
        assert!((acquisition(&m, &[0.2], 2.0) - 1.0).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for k in [0.0, 0.5, 1.0, 4.0] {
            let a = acquisition(&m, &[0.45], k);
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn single_point_proposal_explores() {
        let space = BoxSpace::new(vec![0.0], vec![1.0]);
        let m = GpModel::with_hyper(vec![vec![0.5]], vec![0.0], Hyper { gamma: 1.0, length: 0.1, noise: 0.0 }).unwrap();
        let s = ProposalSettings { kappa: 2.0, n_candidates: 64, n_polish: 4 };
        let a = propose_next(&m, &space, &s, &mut stream(3, 0)).unwrap();
        let b = propose_next(&m, &space, &s, &mut stream(3, 0)).unwrap();
        assert_eq!(a, b);
        assert!((a[0] - 0.5).abs() > 0.1);
    }

    #[test]
    fn bowl_converges() {
        let s = BoSettings { budget: 20, seed: 5, ..Default::default() };
        let ledger = run(&unit2(), &Bowl, &s, None).unwrap();
        assert_eq!(ledger.records.len(), 20);
        assert!(ledger.best().unwrap().value.unwrap() < 1.01);
        let tr = ledger.best_trace();
        assert!(tr.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn budget_equal_to_init_is_random_search() {
        let s = BoSettings { budget: 10, init_count: Some(10), seed: 1, ..Default::default() };
        let l = run(&unit2(), &Bowl, &s, None).unwrap();
        for (i, r) in l.records.iter().enumerate() {
            assert_eq!(r.u, unit2().sample(&mut stream(1, i)).unwrap());
        }
    }

    #[test]
    fn start_point_is_evaluated_first() {
        let s = BoSettings { budget: 12, seed: 4, start: Some(vec![0.3, 0.7]), ..Default::default() };
        let l = run(&unit2(), &Bowl, &s, None).unwrap();
        assert_eq!(l.records[0].u, [0.3, 0.7]);
        assert_eq!(l.records[1].u, unit2().sample(&mut stream(4, 1)).unwrap());
        assert_eq!(l.best().unwrap().value, Some(1.0));
        let bad = BoSettings { start: Some(vec![0.3]), ..s };
        assert!(matches!(run(&unit2(), &Bowl, &bad, None), Err(BoError::Settings(_))));
    }

    #[test]
    fn split_run_matches_unsplit() {
        let full = run(&unit2(), &Bowl, &BoSettings { budget: 16, seed: 9, ..Default::default() }, None).unwrap();
        for k in [4, 12] {
            let first = run(&unit2(), &Bowl, &BoSettings { budget: k, seed: 9, ..Default::default() }, None).unwrap();
            let mut buf = Vec::new();
            first.write_jsonl(&mut buf).unwrap();
            let back = RunLedger::read_jsonl(&buf[..]).unwrap();
            assert_eq!(back, first);
            let done = resume(back, &unit2(), &Bowl, 16 - k, None).unwrap();
            let us: Vec<_> = done.records.iter().map(|r| &r.u).collect();
            let them: Vec<_> = full.records.iter().map(|r| &r.u).collect();
            assert_eq!(us, them, "split at {k}");
        }
    }

    #[test]
    fn resume_zero_and_digest_checks() {
        let l = run(&unit2(), &Bowl, &BoSettings { budget: 12, seed: 2, ..Default::default() }, None).unwrap();
        let same = resume(l.clone(), &unit2(), &Bowl, 0, None).unwrap();
        assert_eq!(same, l);
        let other = BoxSpace::new(vec![0.0, 0.0], vec![1.0, 2.0]);
        assert!(matches!(resume(l, &other, &Bowl, 1, None), Err(BoError::DigestMismatch { .. })));
    }

    #[test]
    fn corrupted_line_is_named() {
        let l = run(&unit2(), &Bowl, &BoSettings { budget: 10, seed: 2, ..Default::default() }, None).unwrap();
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text = text.replacen("\"iteration\":3", "\"iteration\":oops", 1);
        match RunLedger::read_jsonl(text.as_bytes()) {
            Err(BoError::Ledger { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn streamed_log_equals_written_ledger() {
        let mut log = Vec::new();
        let l = run(&unit2(), &Bowl, &BoSettings { budget: 12, seed: 4, ..Default::default() }, Some(&mut log)).unwrap();
        let parsed = RunLedger::read_jsonl(&log[..]).unwrap();
        assert_eq!(parsed, l);
    }
}
