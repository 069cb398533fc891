//! Subcommand implementations.

use crate::config::{ExperimentConfig, SweepParameter};
use crate::manifest::{Manifest, PointStatus};
use crate::table::{comment_value, parse_table, Cell, ParsedTable, Schema, Table};
use crate::CliError;
use lrxxz_core::dmrg::{fdmrg_ground_from, idmrg_ground, GroundStateResult};
use lrxxz_core::ed::{ed_ground, MAX_SITES};
use lrxxz_core::entanglement::{
    profile, profile_dense, totals, ConcurrenceProfile, ProfileSource, TotalsRecord,
};
use lrxxz_core::exec::map_ordered;
use lrxxz_core::fit::{
    estimate_critical_point, fit_exponential_decay, fit_kbi_fine_grained, fit_log_scaling, fit_piecewise_distribution,
    fit_power_law, proportionality_check, table_row, DerivativeScan, FitResult, LogScalingOptions, ScanSide,
};
use lrxxz_core::mpo::{ChainLength, ModelSpec, Mpo};
use lrxxz_core::mps::Mps;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENERGY_REL_TOL: f64 = 1e-8;
pub const CONCURRENCE_TOL: f64 = 1e-6;

const POINT_FILE: &str = "point.json";
const STATE_FILE: &str = "state.mps";

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub workers: usize,
    pub oracle_check: bool,
    pub resume: bool,
}

/// What a command wrote.
#[derive(Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Everything needed to resume or aggregate a finished point.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PointSummary {
    spec: ModelSpec,
    converged: bool,
    energy: f64,
    sweeps: usize,
    max_truncation_error: f64,
    totals: TotalsRecord,
    profile_values: Vec<f64>,
    noise_floor: f64,
    state_sha256: Option<String>,
}

struct PointOutput {
    value: Option<f64>,
    status: PointStatus,
    summary: Option<PointSummary>,
    oracle: Option<OracleOutcome>,
    files: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
struct OracleRow {
    quantity: String,
    dmrg: f64,
    ed: f64,
    tolerance: f64,
}

impl OracleRow {
    fn diff(&self) -> f64 {
        (self.dmrg - self.ed).abs()
    }

    fn pass(&self) -> bool {
        self.diff() <= self.tolerance
    }
}

#[derive(Clone, Debug)]
struct OracleOutcome {
    rows: Vec<OracleRow>,
    degenerate: bool,
}

fn echo(cfg: &ExperimentConfig, spec: &ModelSpec) -> Vec<String> {
    vec![
        format!("model={}", serde_json::to_string(spec).unwrap_or_default()),
        format!("dmrg={}", serde_json::to_string(&cfg.dmrg).unwrap_or_default()),
        format!("measure={}", serde_json::to_string(&cfg.measure).unwrap_or_default()),
    ]
}

fn profile_table(cfg: &ExperimentConfig, spec: &ModelSpec, p: &ConcurrenceProfile, converged: bool) -> Table {
    let mut t = Table::new(Schema::Profile);
    for line in echo(cfg, spec) {
        t.comment(line);
    }
    t.comment(format!("source={}", p.source.label()));
    t.comment(format!("discarded_per_side={}", p.n_discarded_boundary));
    t.comment(format!("threshold={:e}", p.threshold));
    t.comment(format!("noise_floor={:e}", p.noise_floor));
    t.comment(format!("converged={converged}"));
    let flagged: Vec<String> =
        p.distances.iter().zip(p.contaminated()).filter(|(_, c)| *c).map(|(d, _)| d.to_string()).collect();
    if !flagged.is_empty() {
        t.comment(format!("contaminated_distances={}", flagged.join(" ")));
    }
    for k in 0..p.values.len() {
        t.row(vec![p.distances[k].into(), p.values[k].into(), p.spread[k].into(), p.n_pairs[k].into()]);
    }
    t
}

fn totals_row(r: &TotalsRecord) -> Vec<Cell> {
    vec![r.n.into(), r.total_concurrence.into(), r.total_two_tangle.into(), r.xi.into(), r.c1.into()]
}

fn energy_table(gs: &GroundStateResult) -> Table {
    let mut t = Table::new(Schema::Energy);
    t.comment(format!("final_energy={}", crate::table::fmt_f64(gs.energy)));
    t.comment(format!("converged={}", gs.converged));
    if let Some(p) = gs.pinning {
        t.comment(format!("pinning_field={p:e}"));
    }
    if let Some(s) = gs.flip_sector {
        t.comment(format!("flip_sector={s}"));
    }
    for k in 0..gs.energy_history.len() {
        t.row(vec![
            (k + 1).into(),
            gs.energy_history[k].into(),
            gs.truncation_history.get(k).copied().unwrap_or(f64::NAN).into(),
            gs.entropy_history.get(k).copied().unwrap_or(f64::NAN).into(),
        ]);
    }
    t
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Run(format!("{}: {e}", path.display()))
}

fn solve(spec: &ModelSpec, cfg: &ExperimentConfig, warm: Option<&Mps>) -> Result<GroundStateResult, String> {
    match spec.length {
        ChainLength::Finite(_) => {
            let mpo = Mpo::build(spec).map_err(|e| e.to_string())?;
            fdmrg_ground_from(&mpo, &cfg.dmrg, warm).map_err(|e| e.to_string())
        }
        ChainLength::Infinite => idmrg_ground(spec, &cfg.dmrg).map_err(|e| e.to_string()),
    }
}

fn oracle_compare(spec: &ModelSpec, cfg: &ExperimentConfig, gs: &GroundStateResult, p: &ConcurrenceProfile) -> Result<OracleOutcome, String> {
    match spec.length {
        ChainLength::Finite(n) if n <= MAX_SITES => {}
        _ => return Err(format!("oracle needs a finite chain with at most {MAX_SITES} sites")),
    };
    let ed = ed_ground(spec).map_err(|e| e.to_string())?;
    let mut rows = vec![OracleRow {
        quantity: "energy".into(),
        dmrg: gs.energy,
        ed: ed.energy,
        tolerance: ENERGY_REL_TOL * ed.energy.abs().max(1e-300),
    }];
    if !ed.degenerate {
        let exact = profile_dense(&ed, &cfg.measure).map_err(|e| e.to_string())?;
        for k in 0..exact.values.len() {
            rows.push(OracleRow {
                quantity: format!("c_{}", exact.distances[k]),
                dmrg: p.values[k],
                ed: exact.values[k],
                tolerance: CONCURRENCE_TOL,
            });
        }
    }
    Ok(OracleOutcome { rows, degenerate: ed.degenerate })
}

fn run_point(
    run_dir: &Path,
    rel: &Path,
    value: Option<f64>,
    spec: &ModelSpec,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    inner_workers: usize,
) -> Result<PointOutput, CliError> {
    let dir = run_dir.join(rel);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let label = match value {
        Some(v) => format!("{}={v}", rel.display()),
        None => "ground".into(),
    };
    let mut status = PointStatus {
        label,
        converged: false,
        energy: None,
        sweeps: None,
        max_truncation_error: None,
        noise_floor: None,
        error: None,
        resumed: false,
    };
    let file_names: Vec<&str> = vec!["profile.csv", "totals.csv", "energy.csv"];

    if opts.resume && !opts.oracle_check {
        if let Some(prev) = load_summary(&dir) {
            if prev.converged && prev.spec == *spec && all_exist(&dir, &file_names) {
                status.converged = true;
                status.energy = Some(prev.energy);
                status.sweeps = Some(prev.sweeps);
                status.max_truncation_error = Some(prev.max_truncation_error);
                status.noise_floor = Some(prev.noise_floor);
                status.resumed = true;
                let mut files: Vec<PathBuf> = file_names.iter().map(|f| rel.join(f)).collect();
                files.push(rel.join(POINT_FILE));
                if dir.join(STATE_FILE).exists() {
                    files.push(rel.join(STATE_FILE));
                }
                return Ok(PointOutput { value, status, summary: Some(prev), oracle: None, files });
            }
        }
    }

    let warm = if opts.resume { load_checkpoint(run_dir, rel)? } else { None };
    let gs = match solve(spec, cfg, warm.as_ref()) {
        Ok(gs) => gs,
        Err(e) => {
            status.error = Some(e);
            return Ok(PointOutput { value, status, summary: None, oracle: None, files: Vec::new() });
        }
    };
    let p = match profile(&gs.state, &cfg.measure, inner_workers) {
        Ok(p) => p,
        Err(e) => {
            status.error = Some(e.to_string());
            return Ok(PointOutput { value, status, summary: None, oracle: None, files: Vec::new() });
        }
    };
    let n = match spec.length {
        ChainLength::Finite(n) => Some(n),
        ChainLength::Infinite => None,
    };
    let tot = totals(&p, n);

    let mut files = Vec::new();
    let write = |name: &str, t: &Table, files: &mut Vec<PathBuf>| -> Result<(), CliError> {
        t.write(&dir.join(name)).map_err(|e| io_err(&dir.join(name), e))?;
        files.push(rel.join(name));
        Ok(())
    };
    write("profile.csv", &profile_table(cfg, spec, &p, gs.converged), &mut files)?;
    let mut tt = Table::new(Schema::Totals);
    for line in echo(cfg, spec) {
        tt.comment(line);
    }
    tt.comment(format!("distance_count={}", tot.distance_count));
    tt.row(totals_row(&tot));
    write("totals.csv", &tt, &mut files)?;
    write("energy.csv", &energy_table(&gs), &mut files)?;

    let mut state_sha256 = None;
    if let Some(psi) = gs.finite_state() {
        let mut bytes = Vec::new();
        psi.write_to(&mut bytes).map_err(|e| CliError::Run(e.to_string()))?;
        std::fs::write(dir.join(STATE_FILE), &bytes).map_err(|e| io_err(&dir.join(STATE_FILE), e))?;
        state_sha256 = Some(crate::manifest::sha256_hex(&bytes));
        files.push(rel.join(STATE_FILE));
    }

    let oracle = if opts.oracle_check {
        match oracle_compare(spec, cfg, &gs, &p) {
            Ok(o) => Some(o),
            Err(e) => return Err(CliError::Usage(e)),
        }
    } else {
        None
    };

    let summary = PointSummary {
        spec: *spec,
        converged: gs.converged,
        energy: gs.energy,
        sweeps: gs.sweeps_used,
        max_truncation_error: gs.max_truncation_error,
        totals: tot,
        profile_values: p.values.clone(),
        noise_floor: p.noise_floor,
        state_sha256,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(dir.join(POINT_FILE), json).map_err(|e| io_err(&dir.join(POINT_FILE), e))?;
    files.push(rel.join(POINT_FILE));

    status.converged = gs.converged;
    status.energy = Some(gs.energy);
    status.sweeps = Some(gs.sweeps_used);
    status.max_truncation_error = Some(gs.max_truncation_error);
    status.noise_floor = Some(p.noise_floor);
    Ok(PointOutput { value, status, summary: Some(summary), oracle, files })
}

fn all_exist(dir: &Path, names: &[&str]) -> bool {
    names.iter().all(|n| dir.join(n).exists())
}

fn load_summary(dir: &Path) -> Option<PointSummary> {
    let text = std::fs::read_to_string(dir.join(POINT_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Previous state of a point, checked against the hash recorded with it.
fn load_checkpoint(run_dir: &Path, rel: &Path) -> Result<Option<Mps>, CliError> {
    let dir = run_dir.join(rel);
    let path = dir.join(STATE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let key: Vec<String> = rel.join(STATE_FILE).components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    let expected = load_summary(&dir)
        .and_then(|s| s.state_sha256)
        .or_else(|| Manifest::load(run_dir).ok()?.entry(&key.join("/")).map(|e| e.sha256.clone()));
    if let Some(expected) = expected {
        if crate::manifest::sha256_hex(&bytes) != expected {
            return Err(CliError::Run(format!("{}: checkpoint hash does not match the recorded one", path.display())));
        }
    }
    let psi = Mps::read_from(bytes.as_slice()).map_err(|e| io_err(&path, e))?;
    Ok(Some(psi))
}

fn prepare_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf, CliError> {
    let dir = cfg.run_dir();
    if opts.resume && !dir.exists() {
        return Err(CliError::Usage(format!("cannot resume: {} does not exist", dir.display())));
    }
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn oracle_table(outcomes: &[(String, &OracleOutcome)]) -> Table {
    let mut t = Table::new(Schema::Oracle);
    t.comment(format!("energy tolerance relative {ENERGY_REL_TOL:e}; concurrence tolerance {CONCURRENCE_TOL:e}"));
    for (label, o) in outcomes {
        if o.degenerate {
            t.comment(format!("{label}: exact ground state degenerate, concurrences not compared"));
        }
        for r in &o.rows {
            let q = if outcomes.len() > 1 { format!("{label}:{}", r.quantity) } else { r.quantity.clone() };
            t.row(vec![q.into(), r.dmrg.into(), r.ed.into(), r.diff().into(), r.tolerance.into(), r.pass().into()]);
        }
    }
    t
}

/// Runs every point of the config (one for a plain config) and writes the
/// per-point outputs, aggregates and the manifest.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions, command: &str) -> Result<RunReport, CliError> {
    let dir = prepare_dir(cfg, opts)?;
    let workers = crate::effective_workers(opts.workers);
    let config_json = serde_json::to_value(cfg).map_err(|e| CliError::Run(e.to_string()))?;
    let mut manifest = Manifest::new(command, config_json, workers);
    let points = cfg.points()?;
    let sweep = cfg.sweep.as_ref();

    let outputs: Vec<Result<PointOutput, CliError>> = if let Some(s) = sweep {
        let jobs: Vec<(usize, f64, ModelSpec)> =
            points.iter().enumerate().map(|(k, (v, spec))| (k, v.unwrap_or(f64::NAN), *spec)).collect();
        map_ordered(&jobs, workers, |(k, v, spec)| {
            let rel = PathBuf::from("points").join(format!("{k:04}"));
            run_point(&dir, &rel, Some(*v), spec, cfg, opts, 1)
        })
        .into_iter()
        .zip(s.values.iter())
        .map(|(r, v)| {
            r.map(|mut o| {
                o.status.label = format!("{}={v}", s.parameter.name());
                o
            })
        })
        .collect()
    } else {
        vec![run_point(&dir, Path::new(""), None, &points[0].1, cfg, opts, workers)]
    };
    let outputs: Vec<PointOutput> = outputs.into_iter().collect::<Result<_, _>>()?;

    let mut files: Vec<PathBuf> = Vec::new();
    for o in &outputs {
        files.extend(o.files.iter().cloned());
        manifest.points.push(o.status.clone());
    }

    if let Some(s) = sweep {
        write_sweep_aggregates(&dir, cfg, s.parameter, &outputs, &mut files, &mut manifest)?;
    }

    let oracle_outcomes: Vec<(String, &OracleOutcome)> =
        outputs.iter().filter_map(|o| o.oracle.as_ref().map(|r| (o.status.label.clone(), r))).collect();
    let mut oracle_failures = Vec::new();
    if opts.oracle_check {
        let t = oracle_table(&oracle_outcomes);
        t.write(&dir.join("oracle.csv")).map_err(|e| io_err(&dir.join("oracle.csv"), e))?;
        files.push(PathBuf::from("oracle.csv"));
        for (label, o) in &oracle_outcomes {
            for r in o.rows.iter().filter(|r| !r.pass()) {
                oracle_failures.push(format!("{label} {}: dmrg {} vs ed {} (diff {:e})", r.quantity, r.dmrg, r.ed, r.diff()));
            }
        }
    }

    if !lrxxz_core::exec::is_parallel() && workers > 1 {
        manifest.notes.push("built without the parallel feature; points ran sequentially".into());
    }
    if points.iter().any(|(_, s)| s.length == ChainLength::Infinite) {
        manifest.notes.push("infinite-chain states are not checkpointed".into());
    }
    manifest.finish(&dir, &files)?;

    let failed: Vec<String> = outputs
        .iter()
        .filter(|o| !o.status.converged)
        .map(|o| match &o.status.error {
            Some(e) => format!("{}: {e}", o.status.label),
            None => format!("{}: not converged", o.status.label),
        })
        .collect();
    if !oracle_failures.is_empty() {
        return Err(CliError::OracleMismatch(oracle_failures.join("; ")));
    }
    if !failed.is_empty() {
        return Err(CliError::Unconverged(failed.join("; ")));
    }
    Ok(RunReport { dir, manifest })
}

fn write_sweep_aggregates(
    dir: &Path,
    cfg: &ExperimentConfig,
    parameter: SweepParameter,
    outputs: &[PointOutput],
    files: &mut Vec<PathBuf>,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let mut totals_t = Table::new(Schema::Totals);
    let mut sweep_t = Table::new(Schema::Sweep);
    for t in [&mut totals_t, &mut sweep_t] {
        t.comment(format!("sweep_parameter={}", parameter.name()));
        t.comment(format!("dmrg={}", serde_json::to_string(&cfg.dmrg).unwrap_or_default()));
        t.comment(format!("measure={}", serde_json::to_string(&cfg.measure).unwrap_or_default()));
    }
    for o in outputs {
        let v = o.value.unwrap_or(f64::NAN);
        match &o.summary {
            Some(s) => {
                totals_t.row(totals_row(&s.totals));
                let mut row: Vec<Cell> = vec![v.into(), s.converged.into(), s.energy.into()];
                row.extend(totals_row(&s.totals));
                sweep_t.row(row);
                if !s.converged {
                    totals_t.comment(format!("unconverged {}={v}", parameter.name()));
                }
            }
            None => {
                totals_t.comment(format!("missing {}={v}", parameter.name()));
                sweep_t.row(vec![
                    v.into(),
                    false.into(),
                    f64::NAN.into(),
                    0usize.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    0usize.into(),
                    f64::NAN.into(),
                ]);
            }
        }
    }
    totals_t.write(&dir.join("totals.csv")).map_err(|e| io_err(&dir.join("totals.csv"), e))?;
    sweep_t.write(&dir.join("sweep.csv")).map_err(|e| io_err(&dir.join("sweep.csv"), e))?;
    files.push("totals.csv".into());
    files.push("sweep.csv".into());

    if parameter == SweepParameter::JXy {
        let complete: Option<Vec<&PointSummary>> = outputs.iter().map(|o| o.summary.as_ref()).collect();
        match complete {
            Some(sums) if sums.len() >= 3 => {
                let grid: Vec<f64> = outputs.iter().map(|o| o.value.unwrap_or(f64::NAN)).collect();
                let distances: Vec<usize> = (1..=sums[0].profile_values.len()).collect();
                let values: Vec<Vec<f64>> = sums.iter().map(|s| s.profile_values.clone()).collect();
                match DerivativeScan::from_values(grid, distances, values) {
                    Ok(scan) => {
                        let t = scan_table(&scan);
                        t.write(&dir.join("scan.csv")).map_err(|e| io_err(&dir.join("scan.csv"), e))?;
                        files.push("scan.csv".into());
                    }
                    Err(e) => manifest.notes.push(format!("scan.csv not written: {e}")),
                }
            }
            _ => manifest.notes.push("scan.csv not written: some sweep points failed".into()),
        }
    }
    Ok(())
}

/// Bound on the centred-difference bias, `h²/6 · max|C'''|`, from third differences.
fn bias_bound(scan: &DerivativeScan) -> f64 {
    let n = scan.coupling_values.len();
    let h = scan.step;
    let mut worst = 0.0f64;
    for i in 0..scan.distances.len() {
        for k in 0..n.saturating_sub(3) {
            let c = |j: usize| scan.c_d_values[j][i];
            let third = (c(k + 3) - 3.0 * c(k + 2) + 3.0 * c(k + 1) - c(k)) / h.powi(3);
            worst = worst.max(third.abs());
        }
    }
    h * h / 6.0 * worst
}

fn scan_table(scan: &DerivativeScan) -> Table {
    let mut t = Table::new(Schema::Scan);
    t.comment(format!("step={}", crate::table::fmt_f64(scan.step)));
    t.comment(format!("bias_bound={:e}", bias_bound(scan)));
    t.comment("one_sided=first and last coupling values");
    if let Ok(j) = estimate_critical_point(scan, scan.distances[0]) {
        t.comment(format!("j_star_estimate={}", crate::table::fmt_f64(j)));
    }
    for (k, &j) in scan.coupling_values.iter().enumerate() {
        for (i, &d) in scan.distances.iter().enumerate() {
            t.row(vec![j.into(), d.into(), scan.c_d_values[k][i].into(), scan.derivative[k][i].into()]);
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitName {
    ExpDecay,
    PowerLaw,
    LogScaling,
    KbiFine,
    Piecewise,
    Proportionality,
}

impl FitName {
    pub fn parse(s: &str) -> Option<FitName> {
        Some(match s {
            "exp_decay" => FitName::ExpDecay,
            "power_law" => FitName::PowerLaw,
            "log_scaling" => FitName::LogScaling,
            "kbi_fine" => FitName::KbiFine,
            "piecewise" => FitName::Piecewise,
            "proportionality" => FitName::Proportionality,
            _ => return None,
        })
    }

    fn input_schema(&self) -> Schema {
        match self {
            FitName::ExpDecay | FitName::PowerLaw => Schema::Profile,
            FitName::LogScaling => Schema::Scan,
            FitName::KbiFine | FitName::Piecewise | FitName::Proportionality => Schema::Totals,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitArgs {
    pub name: FitName,
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub j_star: Option<f64>,
    pub window_steps: f64,
    pub side: ScanSide,
    pub c1: Option<f64>,
}

fn read_inputs(args: &FitArgs) -> Result<Vec<(String, ParsedTable)>, CliError> {
    if args.inputs.is_empty() {
        return Err(CliError::Usage("fit needs at least one --input file".into()));
    }
    let want = args.name.input_schema();
    args.inputs
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let t = parse_table(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if t.schema != want {
                return Err(CliError::Usage(format!(
                    "{}: expected columns {:?}, found {:?}",
                    p.display(),
                    want.header(),
                    t.schema.header()
                )));
            }
            Ok((text, t))
        })
        .collect()
}

fn profile_from_table(text: &str, t: &ParsedTable) -> Result<ConcurrenceProfile, String> {
    let threshold = comment_value(text, "threshold").and_then(|v| v.parse().ok()).unwrap_or(1e-9);
    let mut p = ConcurrenceProfile::from_values(t.floats("c_d")?, threshold);
    p.distances = t.ints("d")?;
    p.spread = t.floats("spread")?;
    p.n_pairs = t.ints("n_pairs")?;
    p.noise_floor = comment_value(text, "noise_floor").and_then(|v| v.parse().ok()).unwrap_or(0.0);
    p.source = match comment_value(text, "source").as_deref() {
        Some("finite_interior") => ProfileSource::FiniteInterior,
        Some("finite_central") => ProfileSource::FiniteCentral,
        _ => ProfileSource::InfiniteBulk,
    };
    Ok(p)
}

fn records_from_tables(tables: &[(String, ParsedTable)]) -> Result<(Vec<TotalsRecord>, Vec<f64>), String> {
    let mut recs = Vec::new();
    let mut c1s = Vec::new();
    for (_, t) in tables {
        let n = t.ints("n")?;
        let c = t.floats("c_total")?;
        let tau = t.floats("tau_total")?;
        let xi = t.ints("xi")?;
        let c1 = t.floats("c1")?;
        for k in 0..n.len() {
            recs.push(TotalsRecord {
                n: n[k],
                total_concurrence: c[k],
                total_two_tangle: tau[k],
                xi: xi[k],
                c1: c1[k],
                distance_count: n[k],
            });
            c1s.push(c1[k]);
        }
    }
    Ok((recs, c1s))
}

fn scan_from_table(t: &ParsedTable) -> Result<DerivativeScan, String> {
    let js = t.floats("j_xy")?;
    let ds = t.ints("d")?;
    let cs = t.floats("c_d")?;
    let der = t.floats("dc_d_dj")?;
    let mut grid: Vec<f64> = Vec::new();
    let mut distances: Vec<usize> = Vec::new();
    for (&j, &d) in js.iter().zip(&ds) {
        if grid.last() != Some(&j) && !grid.contains(&j) {
            grid.push(j);
        }
        if !distances.contains(&d) {
            distances.push(d);
        }
    }
    let (n, m) = (grid.len(), distances.len());
    if n * m != js.len() {
        return Err("scan table is not a full grid of couplings by distances".into());
    }
    let mut c = vec![vec![0.0; m]; n];
    let mut dv = vec![vec![0.0; m]; n];
    for k in 0..js.len() {
        let a = grid.iter().position(|&g| g == js[k]).expect("collected above");
        let b = distances.iter().position(|&x| x == ds[k]).expect("collected above");
        c[a][b] = cs[k];
        dv[a][b] = der[k];
    }
    let mut scan = DerivativeScan::from_values(grid, distances, c).map_err(|e| e.to_string())?;
    scan.derivative = dv;
    Ok(scan)
}

/// Runs one fit over CSV inputs; returns the fit and its human-readable report.
pub fn fit(args: &FitArgs) -> Result<(FitResult, String), CliError> {
    let tables = read_inputs(args)?;
    let usage = |e: String| CliError::Usage(e);
    let run = |e: lrxxz_core::fit::FitError| CliError::Run(format!("fit failed: {e}"));
    let result = match args.name {
        FitName::ExpDecay => {
            let p = profile_from_table(&tables[0].0, &tables[0].1).map_err(usage)?;
            fit_exponential_decay(&p).map_err(run)?
        }
        FitName::PowerLaw => {
            let p = profile_from_table(&tables[0].0, &tables[0].1).map_err(usage)?;
            let c1 = args.c1.or_else(|| p.value_at(1)).ok_or_else(|| CliError::Usage("no C1 given or in profile".into()))?;
            fit_power_law(&p, c1).map_err(run)?
        }
        FitName::LogScaling => {
            let scan = scan_from_table(&tables[0].1).map_err(usage)?;
            let j_star = match args.j_star {
                Some(j) => j,
                None => estimate_critical_point(&scan, scan.distances[0]).map_err(run)?,
            };
            let opts = LogScalingOptions { window_steps: args.window_steps, side: args.side };
            fit_log_scaling(&scan, j_star, &opts).map_err(run)?
        }
        FitName::KbiFine => {
            let (recs, _) = records_from_tables(&tables).map_err(usage)?;
            fit_kbi_fine_grained(&recs).map_err(run)?
        }
        FitName::Piecewise => {
            let (recs, _) = records_from_tables(&tables).map_err(usage)?;
            fit_piecewise_distribution(&recs).map_err(run)?
        }
        FitName::Proportionality => {
            let (recs, c1) = records_from_tables(&tables).map_err(usage)?;
            proportionality_check(&recs, &c1).map_err(run)?
        }
    };
    let report = fit_report(&result);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        fits_table(&result).write(&out.join("fits.csv")).map_err(|e| io_err(out, e))?;
        std::fs::write(out.join("report.txt"), &report).map_err(|e| io_err(out, e))?;
    }
    Ok((result, report))
}

pub fn fits_table(f: &FitResult) -> Table {
    let mut t = Table::new(Schema::Fits);
    t.comment(format!("n_points={}", f.n_points));
    t.comment(format!("domain={} {}", crate::table::fmt_f64(f.domain.0), crate::table::fmt_f64(f.domain.1)));
    t.comment(format!("residual={}", crate::table::fmt_f64(f.residual)));
    for note in &f.notes {
        t.comment(note.clone());
    }
    for c in &f.coefficients {
        t.row(vec![f.model_name.as_str().into(), c.name.as_str().into(), c.value.into(), c.stderr.into(), f.r_squared.into()]);
    }
    t
}

pub fn fit_report(f: &FitResult) -> String {
    let mut s = format!("fit {}\n", f.model_name);
    s.push_str(&format!("  points     {}\n  domain     [{}, {}]\n", f.n_points, f.domain.0, f.domain.1));
    s.push_str(&format!("  r_squared  {:.10}\n  residual   {:.3e}\n", f.r_squared, f.residual));
    for c in &f.coefficients {
        s.push_str(&format!("  {:<10} {:>.8}  (± {:.2e})\n", c.name, c.value, c.stderr));
    }
    if f.model_name == "piecewise" {
        s.push_str(&format!("  table row  {}\n", table_row("a1/a2(N_c)  b1/b2", f)));
    }
    for n in &f.notes {
        s.push_str(&format!("  note: {n}\n"));
    }
    s
}

/// Checks CSV files against their schemas and run directories against their
/// manifests. Returns one line per checked file.
pub fn validate(paths: &[PathBuf]) -> Result<Vec<String>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("validate needs at least one path".into()));
    }
    let mut ok = Vec::new();
    let mut problems = Vec::new();
    for p in paths {
        if p.is_dir() {
            validate_dir(p, &mut ok, &mut problems);
        } else {
            match validate_csv(p) {
                Ok(line) => ok.push(line),
                Err(e) => problems.push(e),
            }
        }
    }
    if problems.is_empty() {
        Ok(ok)
    } else {
        Err(CliError::Invalid(problems.join("\n")))
    }
}

fn validate_csv(p: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let t = parse_table(&text).map_err(|e| format!("{}: {e}", p.display()))?;
    Ok(format!("{}: {:?}, {} rows", p.display(), t.schema, t.rows.len()))
}

fn collect_csv(dir: &Path, out: &mut Vec<PathBuf>) {
    if let Ok(entries) = std::fs::read_dir(dir) {
        let mut entries: Vec<_> = entries.flatten().map(|e| e.path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                collect_csv(&p, out);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push(p);
            }
        }
    }
}

fn validate_dir(dir: &Path, ok: &mut Vec<String>, problems: &mut Vec<String>) {
    let mut csvs = Vec::new();
    collect_csv(dir, &mut csvs);
    let manifest = if dir.join(crate::manifest::MANIFEST_FILE).exists() {
        match Manifest::load(dir) {
            Ok(m) => Some(m),
            Err(e) => {
                problems.push(e);
                None
            }
        }
    } else {
        None
    };
    if let Some(m) = &manifest {
        problems.extend(m.verify(dir).into_iter().map(|e| format!("{}: {e}", dir.display())));
        for c in &csvs {
            let rel = c.strip_prefix(dir).unwrap_or(c);
            let rel = rel.components().map(|x| x.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if m.entry(&rel).is_none() {
                problems.push(format!("{}: {rel} missing from manifest inventory", dir.display()));
            }
        }
        ok.push(format!("{}: manifest with {} files verified", dir.display(), m.files.len()));
    }
    for c in &csvs {
        match validate_csv(c) {
            Ok(line) => ok.push(line),
            Err(e) => problems.push(e),
        }
    }
}
