//! The five subcommands. Every CSV starts with a `#` line carrying the
//! command, config digest and benchmark time T; times appear in ps and in
//! units of T.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use walkdir::WalkDir;

use qnet_core::bayesopt::{self, BoError, RunLedger, Space};
use qnet_core::classical::{self, ClassicalError};
use qnet_core::dynamics::{self, DynamicsError, PopulationTrace};
use qnet_core::experiments::{
    self, config_digest, gamma_from_inverse, ExperimentError, NetworkSpace, TransferObjective,
};
use qnet_core::geometry::{effective_lambdas, ModeKind, NetworkConfig, PhononSpec};
use qnet_core::hamiltonian::{AssembledHamiltonian, HamiltonianError};
use qnet_core::hilbert::BasisError;

use crate::config::RunConfig;
use crate::CliError;

fn from_hamiltonian(e: HamiltonianError) -> CliError {
    match e {
        HamiltonianError::Basis(b @ BasisError::Capacity { .. }) => CliError::Capacity(b.to_string()),
        other => CliError::Validation(vec![other.to_string()]),
    }
}

fn from_bo(e: BoError) -> CliError {
    match e {
        BoError::Settings(_) | BoError::DigestMismatch { .. } | BoError::Ledger { .. } => {
            CliError::Validation(vec![e.to_string()])
        }
        BoError::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn from_experiment(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::Hamiltonian(h) => from_hamiltonian(h),
        ExperimentError::Dynamics(d) => CliError::Numerical(d.to_string()),
        ExperimentError::Optimizer(b) => from_bo(b),
        ExperimentError::Space(s) => CliError::Validation(vec![s]),
    }
}

fn from_classical(e: ClassicalError) -> CliError {
    match e {
        ClassicalError::Capacity { .. } => CliError::Capacity(e.to_string()),
        other => CliError::Validation(vec![other.to_string()]),
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn require_valid(net: &NetworkConfig) -> Result<(), CliError> {
    let v = net.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(v.iter().map(|x| x.to_string()).collect()))
    }
}

fn phonons_checked(cfg: &RunConfig) -> Result<PhononSpec, CliError> {
    let spec = cfg.phonon_spec();
    spec.check(cfg.network.n_sites).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
    Ok(spec)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    Ok(dir)
}

fn header_line(cfg: &RunConfig, t: f64) -> String {
    let mode = serde_json::to_value(cfg.mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    format!("# qnet {mode} config_digest={} T_ps={t:.12e}", cfg.digest())
}

fn lambdas(net: &NetworkConfig, spec: &PhononSpec) -> Value {
    let mut out = serde_json::Map::new();
    for (kind, key) in [(ModeKind::Holstein, "lambda_holstein"), (ModeKind::Peierls, "lambda_peierls")] {
        if spec.has(kind) {
            if let Ok(l) = effective_lambdas(net, spec, kind) {
                out.insert(key.into(), json!(l));
            }
        }
    }
    Value::Object(out)
}

fn merge(a: &mut Value, b: Value) {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
}

/// `summary.json` plus a `key: value` rendering in `summary.txt`.
fn write_summary(dir: &Path, summary: &Value) -> Result<(), CliError> {
    let jp = dir.join("summary.json");
    fs::write(&jp, serde_json::to_string_pretty(summary).expect("serializable") + "\n").map_err(io_at(&jp))?;
    let tp = dir.join("summary.txt");
    let mut text = String::new();
    if let Some(obj) = summary.as_object() {
        for (k, v) in obj {
            text.push_str(&format!("{k}: {v}\n"));
        }
    }
    fs::write(&tp, text).map_err(io_at(&tp))
}

fn write_trace(
    path: &Path,
    cfg: &RunConfig,
    net: &NetworkConfig,
    spec: &PhononSpec,
    gamma: f64,
) -> Result<(), CliError> {
    let t = net.benchmark_time();
    let h = AssembledHamiltonian::assemble(net, spec, gamma).map_err(from_hamiltonian)?;
    let psi0 = dynamics::initial_state(&h.basis);
    let steps = cfg.simulate.steps;
    let t_max = cfg.simulate.t_max_over_T * t;
    let times: Vec<f64> = (0..=steps).map(|k| t_max * k as f64 / steps as f64).collect();
    let trace = PopulationTrace::compute(&h, &psi0, &times, &cfg.dynamics_options())
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    writeln!(w, "{}", header_line(cfg, t))?;
    trace.write_csv(&mut w, t)?;
    w.flush()?;
    Ok(())
}

fn base_summary(cfg: &RunConfig, net: &NetworkConfig, gamma: f64) -> Value {
    let t = net.benchmark_time();
    json!({
        "mode": cfg.mode,
        "config_digest": cfg.digest(),
        "n_sites": net.n_sites,
        "phonon_kind": cfg.phonons.kind,
        "benchmark_time_ps": t,
        "gamma_per_ps": gamma,
        "inv_gamma_ps": if gamma > 0.0 { json!(1.0 / gamma) } else { Value::Null },
        "inv_gamma_over_T": if gamma > 0.0 { json!(1.0 / (gamma * t)) } else { Value::Null },
    })
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let net = cfg.network_config()?;
    require_valid(&net)?;
    let spec = phonons_checked(cfg)?;
    let t = net.benchmark_time();
    let gamma = cfg.gamma(t)?.unwrap_or(0.0);
    let dir = out_dir(cfg)?;
    write_trace(&dir.join("trace.csv"), cfg, &net, &spec, gamma)?;

    let mut summary = base_summary(cfg, &net, gamma);
    let tau = if gamma > 0.0 {
        let h = AssembledHamiltonian::assemble(&net, &spec, gamma).map_err(from_hamiltonian)?;
        let psi0 = dynamics::initial_state(&h.basis);
        match dynamics::transfer_time(&h, &psi0, &cfg.dynamics_options()) {
            Ok(tt) => json!({
                "status": "ok",
                "tau_ps": tt.ps,
                "tau_over_T": tt.ps / t,
                "method": format!("{:?}", tt.method).to_lowercase(),
                "reduced_dim": tt.reduced_dim,
            }),
            Err(e @ DynamicsError::DarkState { .. }) => json!({ "status": "divergent", "message": e.to_string() }),
            Err(e) => return Err(CliError::Numerical(e.to_string())),
        }
    } else {
        json!({ "status": "no sink", "tau_ps": null })
    };
    merge(&mut summary, tau);
    merge(&mut summary, lambdas(&net, &spec));
    merge(&mut summary, json!({ "linearity": net.linearity() }));
    write_summary(&dir, &summary)?;
    println!("{}", summary);
    Ok(())
}

fn network_space(cfg: &RunConfig) -> Result<NetworkSpace, CliError> {
    let net = cfg.network_config()?;
    if !cfg.optimizer.mask.positions() {
        require_valid(&net)?;
    }
    let spec = phonons_checked(cfg)?;
    let mut space = NetworkSpace::new(net, spec, cfg.optimizer.mask, cfg.free_freq_kind()).map_err(from_experiment)?;
    space.freq_range = (cfg.phonons.freq_min_per_ps, cfg.phonons.freq_max_per_ps);
    Ok(space)
}

fn bo_settings(cfg: &RunConfig, space: &NetworkSpace) -> Result<bayesopt::BoSettings, CliError> {
    let mut settings = cfg.bo_settings(space.dim());
    if cfg.optimizer.start_from_network {
        require_valid(&space.base)?;
        let mut u = space.encode(&space.base, &space.phonons);
        space.canonicalize(&mut u);
        settings.start = Some(u);
    }
    Ok(settings)
}

pub fn optimize(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    let space = network_space(cfg)?;
    if space.dim() == 0 {
        return Err(CliError::Validation(vec!["nothing to optimize: the search space has no free parameters".into()]));
    }
    let t = space.base.benchmark_time();
    let gamma = cfg
        .gamma(t)?
        .filter(|g| *g > 0.0)
        .ok_or_else(|| CliError::Validation(vec!["optimize needs a positive sink rate".into()]))?;
    let objective = TransferObjective { space, gamma, opts: cfg.dynamics_options() };
    let settings = bo_settings(cfg, &objective.space)?;
    let dir = out_dir(cfg)?;

    let mut ledgers = Vec::new();
    for r in 0..cfg.optimizer.restarts {
        let s = bayesopt::BoSettings {
            seed: if r == 0 { settings.seed } else { bayesopt::restart_seed(settings.seed, r) },
            ..settings.clone()
        };
        let path = dir.join(format!("ledger_r{r}.jsonl"));
        let ledger = if resume && path.exists() {
            let old = RunLedger::read_jsonl(BufReader::new(File::open(&path).map_err(io_at(&path))?)).map_err(from_bo)?;
            let extra = s.budget.saturating_sub(old.budget);
            let mut f = OpenOptions::new().append(true).open(&path).map_err(io_at(&path))?;
            bayesopt::resume(old, &objective.space, &objective, extra, Some(&mut f)).map_err(from_bo)?
        } else {
            let mut f = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
            let l = bayesopt::run(&objective.space, &objective, &s, Some(&mut f)).map_err(from_bo)?;
            f.flush()?;
            l
        };
        ledgers.push(ledger);
    }
    let outcome = experiments::summarize(&objective, ledgers);

    let rp = dir.join("restarts.csv");
    let mut w = BufWriter::new(File::create(&rp).map_err(io_at(&rp))?);
    writeln!(w, "{}", header_line(cfg, t))?;
    writeln!(w, "restart,seed,evaluations,best_tau_ps,best_tau_over_T")?;
    for (r, l) in outcome.ledgers.iter().enumerate() {
        let b = l.best().and_then(|x| x.value);
        let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.10e}"));
        writeln!(w, "{r},{},{},{},{}", l.header.seed, l.records.len(), fmt(b), fmt(b.map(|v| v / t)))?;
    }
    w.flush()?;

    let mut summary = base_summary(cfg, &objective.space.base, gamma);
    merge(
        &mut summary,
        json!({
            "mask": cfg.optimizer.mask,
            "dim": objective.space.dim(),
            "budget": settings.budget,
            "restarts": cfg.optimizer.restarts,
            "restart_best_tau_over_T": outcome.restart_bests().iter().map(|b| b.map(|v| v / t)).collect::<Vec<_>>(),
        }),
    );
    match &outcome.best {
        Some(best) => {
            let bp = dir.join("best.json");
            let doc = json!({
                "config": best.config,
                "phonons": best.phonons,
                "tau_ps": best.tau_ps,
                "tau_over_T": best.tau_ps / t,
                "restart": best.restart,
                "config_digest": config_digest(&best.config, &best.phonons),
            });
            fs::write(&bp, serde_json::to_string_pretty(&doc).expect("serializable") + "\n").map_err(io_at(&bp))?;
            write_trace(&dir.join("best_trace.csv"), cfg, &best.config, &best.phonons, gamma)?;
            merge(
                &mut summary,
                json!({
                    "status": "ok",
                    "tau_ps": best.tau_ps,
                    "tau_over_T": best.tau_ps / t,
                    "linearity": best.config.linearity(),
                    "best_config_digest": config_digest(&best.config, &best.phonons),
                }),
            );
            merge(&mut summary, lambdas(&best.config, &best.phonons));
        }
        None => merge(&mut summary, json!({ "status": "no finite evaluation" })),
    }
    write_summary(&dir, &summary)?;
    println!("{}", summary);
    Ok(())
}

pub fn gamma_scan(cfg: &RunConfig) -> Result<(), CliError> {
    let space = network_space(cfg)?;
    let t = space.base.benchmark_time();
    let grid = cfg.scan_grid();
    let settings = bo_settings(cfg, &space)?;
    let mut points = experiments::gamma_scan(&space, &grid, &settings, cfg.optimizer.restarts, &cfg.dynamics_options());
    if cfg.scan.cross_evaluate {
        points = experiments::cross_evaluate(&points, &cfg.dynamics_options());
    }
    let min = experiments::scan_minimum(&points);
    let dir = out_dir(cfg)?;

    let path = dir.join("gamma_scan.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    writeln!(w, "{}", header_line(cfg, t))?;
    let mut csv = csv::Writer::from_writer(&mut w);
    csv.write_record([
        "n_sites", "inv_gamma_over_T", "inv_gamma_ps", "gamma_per_ps", "tau_ps", "tau_over_T", "config_digest", "is_min", "status",
        "network_from_inv_gamma_over_T",
    ])
    .map_err(|e| CliError::Io(e.to_string()))?;
    for (k, p) in points.iter().enumerate() {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.10e}"));
        csv.write_record([
            space.n_sites().to_string(),
            format!("{:.10e}", p.inv_gamma_over_t),
            format!("{:.10e}", 1.0 / p.gamma),
            format!("{:.10e}", p.gamma),
            opt(p.tau_ps),
            opt(p.tau_over_t),
            p.config_digest.clone().unwrap_or_default(),
            u8::from(min == Some(k)).to_string(),
            p.status.clone(),
            opt(p.network_from_inv_gamma_over_t),
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    csv.flush()?;
    drop(csv);
    w.flush()?;

    let bp = dir.join("gamma_scan_best.jsonl");
    let mut bw = BufWriter::new(File::create(&bp).map_err(io_at(&bp))?);
    for p in &points {
        if let Some((c, s)) = &p.best {
            writeln!(bw, "{}", json!({ "inv_gamma_over_T": p.inv_gamma_over_t, "config": c, "phonons": s }))?;
        }
    }
    bw.flush()?;

    let mut summary = base_summary(cfg, &space.base, 0.0);
    let best = min.map(|k| &points[k]);
    merge(
        &mut summary,
        json!({
            "grid_points": grid.len(),
            "min_inv_gamma_over_T": best.map(|p| p.inv_gamma_over_t),
            "min_tau_over_T": best.and_then(|p| p.tau_over_t),
            "min_tau_ps": best.and_then(|p| p.tau_ps),
            "failed_points": points.iter().filter(|p| p.tau_ps.is_none()).count(),
        }),
    );
    write_summary(&dir, &summary)?;
    println!("{}", summary);
    Ok(())
}

/// Γ at the marked minimum of a `gamma_scan.csv`.
pub fn gamma_from_scan(path: &Path, benchmark_time: f64) -> Result<f64, CliError> {
    let file = File::open(path).map_err(io_at(path))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let bad = |m: String| CliError::Validation(vec![format!("{}: {m}", path.display())]);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let (ci, cm) = (col("inv_gamma_over_T")?, col("is_min")?);
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if &row[cm] == "1" {
            let x: f64 = row[ci].parse().map_err(|_| bad(format!("bad inv_gamma_over_T `{}`", &row[ci])))?;
            return Ok(gamma_from_inverse(x, benchmark_time));
        }
    }
    Err(bad("no row marked as minimum".into()))
}

pub fn classical(cfg: &RunConfig) -> Result<(), CliError> {
    let net = cfg.network_config()?;
    require_valid(&net)?;
    let count = classical::enumerate_paths(net.n_sites).map_err(from_classical)?.len();
    let paths = classical::fastest_k(&net, cfg.classical.k.min(count)).map_err(from_classical)?;
    let t = net.benchmark_time();
    let dir = out_dir(cfg)?;
    let path = dir.join("classical.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    writeln!(w, "{}", header_line(cfg, t))?;
    classical::write_csv(&mut w, &paths, t)?;
    w.flush()?;
    let mut summary = base_summary(cfg, &net, 0.0);
    merge(
        &mut summary,
        json!({
            "paths_total": count,
            "paths_written": paths.len(),
            "fastest_ps": paths.first().map(|p| p.total),
            "fastest_over_T": paths.first().map(|p| p.total / t),
        }),
    );
    write_summary(&dir, &summary)?;
    println!("{}", summary);
    Ok(())
}

const REPORT_DIR: &str = "report";

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let root = cfg.output.dir.clone();
    if !root.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", root.display())));
    }
    let mut scan_rows: Vec<Vec<String>> = Vec::new();
    let mut n_rows: Vec<Vec<String>> = Vec::new();
    let walker = WalkDir::new(&root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == REPORT_DIR));
    for entry in walker {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        let path = entry.path();
        let source = path
            .parent()
            .and_then(|p| p.strip_prefix(&root).ok())
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let source = if source.is_empty() { ".".to_string() } else { source };
        match entry.file_name().to_str() {
            Some("gamma_scan.csv") => {
                let corrupt = |m: String| CliError::Io(format!("{}: {m}", path.display()));
                let mut rdr = csv::ReaderBuilder::new()
                    .comment(Some(b'#'))
                    .from_path(path)
                    .map_err(|e| corrupt(e.to_string()))?;
                let headers = rdr.headers().map_err(|e| corrupt(e.to_string()))?.clone();
                let idx = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| corrupt(format!("missing column {name}")));
                let cols = [idx("n_sites")?, idx("inv_gamma_over_T")?, idx("inv_gamma_ps")?, idx("tau_ps")?, idx("tau_over_T")?, idx("is_min")?];
                for row in rdr.records() {
                    let row = row.map_err(|e| corrupt(e.to_string()))?;
                    let mut out = vec![source.clone()];
                    out.extend(cols.iter().map(|&c| row[c].to_string()));
                    scan_rows.push(out);
                }
            }
            Some("summary.json") => {
                let text = fs::read_to_string(path).map_err(io_at(path))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                let mode = v["mode"].as_str().unwrap_or_default();
                if mode == "optimize" || mode == "simulate" {
                    let s = |k: &str| match &v[k] {
                        Value::Null => String::new(),
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    n_rows.push(vec![
                        source.clone(),
                        mode.to_string(),
                        s("n_sites"),
                        s("phonon_kind"),
                        s("inv_gamma_over_T"),
                        s("tau_ps"),
                        s("tau_over_T"),
                    ]);
                }
            }
            _ => {}
        }
    }
    if scan_rows.is_empty() && n_rows.is_empty() {
        eprintln!("qnet: warning: no gamma_scan.csv or summary.json found under {}", root.display());
    }
    let rdir = root.join(REPORT_DIR);
    fs::create_dir_all(&rdir).map_err(io_at(&rdir))?;
    write_table(
        &rdir.join("tau_vs_inv_gamma.csv"),
        &["source", "n_sites", "inv_gamma_over_T", "inv_gamma_ps", "tau_ps", "tau_over_T", "is_min"],
        &scan_rows,
    )?;
    write_table(
        &rdir.join("tau_vs_n.csv"),
        &["source", "mode", "n_sites", "phonon_kind", "inv_gamma_over_T", "tau_ps", "tau_over_T"],
        &n_rows,
    )?;
    println!("{}", json!({ "scan_rows": scan_rows.len(), "summary_rows": n_rows.len(), "dir": rdir }));
    Ok(())
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
