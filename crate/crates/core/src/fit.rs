//! Least-squares fits of entanglement profiles and totals.
//!
//! Every power-law or exponential form is linearised and fitted by ordinary
//! least squares, so results are deterministic and need no starting guess.

use crate::dmrg::{fdmrg_ground, idmrg_ground, DmrgConfig, DmrgError};
use crate::entanglement::{profile, ConcurrenceProfile, EntanglementError, ProfileOptions, TotalsRecord};
use crate::exec::map_ordered;
use crate::mpo::{ChainLength, Mpo, ModelSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points below this multiple of a profile's noise floor are left out of fits.
pub const NOISE_MULTIPLE: f64 = 10.0;
pub const GRID_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("invalid fit input: {0}")]
    Argument(String),
    #[error("inconclusive N_c: {0}")]
    InconclusiveNc(String),
    #[error("scan failed to converge at J_xy = {0:?}")]
    ScanUnconverged(Vec<f64>),
    #[error(transparent)]
    Dmrg(#[from] DmrgError),
    #[error(transparent)]
    Entanglement(#[from] EntanglementError),
}

/// Straight-line fit `y = intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub rms_residual: f64,
    pub n: usize,
}

fn r_squared(ss_res: f64, ss_tot: f64, scale: f64) -> f64 {
    let tiny = 1e-24 * scale.max(f64::MIN_POSITIVE);
    if ss_tot <= tiny {
        if ss_res <= tiny { 1.0 } else { 0.0 }
    } else {
        1.0 - ss_res / ss_tot
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit, FitError> {
    let n = x.len();
    if n != y.len() {
        return Err(FitError::Argument(format!("{} x values but {} y values", n, y.len())));
    }
    if n < 3 {
        return Err(FitError::Argument(format!("need at least 3 points for a line, got {n}")));
    }
    let nf = n as f64;
    let xm = x.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    let xscale = x.iter().map(|v| v * v).sum::<f64>();
    if sxx <= 1e-24 * xscale.max(f64::MIN_POSITIVE) {
        return Err(FitError::Degenerate("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let yscale = y.iter().map(|v| v * v).sum::<f64>();
    let sigma2 = ss_res / (nf - 2.0);
    Ok(LineFit {
        intercept,
        slope,
        intercept_stderr: (sigma2 * (1.0 / nf + xm * xm / sxx)).sqrt(),
        slope_stderr: (sigma2 / sxx).sqrt(),
        r_squared: r_squared(ss_res, ss_tot, yscale),
        rms_residual: (ss_res / nf).sqrt(),
        n,
    })
}

/// Fit through the origin `y = slope·x`.
pub fn proportional_fit(x: &[f64], y: &[f64]) -> Result<LineFit, FitError> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(FitError::Argument("need at least 2 paired points".into()));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate("all x values are zero".into()));
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let ym = y.iter().sum::<f64>() / n as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - ym).powi(2)).sum();
    let yscale = y.iter().map(|v| v * v).sum::<f64>();
    Ok(LineFit {
        intercept: 0.0,
        slope,
        intercept_stderr: 0.0,
        slope_stderr: (ss_res / (n as f64 - 1.0) / sxx).sqrt(),
        r_squared: r_squared(ss_res, ss_tot, yscale),
        rms_residual: (ss_res / n as f64).sqrt(),
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
    /// Standard error propagated to first order through the linearisation.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model_name: String,
    pub coefficients: Vec<Coefficient>,
    /// RMS residual in the linearised space.
    pub residual: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub domain: (f64, f64),
    pub notes: Vec<String>,
}

impl FitResult {
    fn new(model_name: &str, line: &LineFit, domain: (f64, f64)) -> Self {
        Self {
            model_name: model_name.into(),
            coefficients: Vec::new(),
            residual: line.rms_residual,
            r_squared: line.r_squared,
            n_points: line.n,
            domain,
            notes: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, value: f64, stderr: f64) {
        self.coefficients.push(Coefficient { name: name.into(), value, stderr });
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|c| c.name == name).map(|c| c.value)
    }
}

fn span(xs: &[f64]) -> (f64, f64) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// `(d, C_d)` pairs above the fit floor, sorted by `d`.
fn usable_points(p: &ConcurrenceProfile) -> (Vec<(f64, f64)>, usize, f64) {
    let floor = NOISE_MULTIPLE * p.noise_floor;
    let mut pts: Vec<(f64, f64)> = p
        .distances
        .iter()
        .zip(&p.values)
        .filter(|(_, &c)| c > floor && c > 0.0)
        .map(|(&d, &c)| (d as f64, c))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let excluded = p.values.len() - pts.len();
    (pts, excluded, floor)
}

/// `C_d = C1·exp(−d/ξ)` via a line through `(d, ln C_d)`.
pub fn fit_exponential_decay(p: &ConcurrenceProfile) -> Result<FitResult, FitError> {
    let (pts, excluded, floor) = usable_points(p);
    if pts.len() < 4 {
        return Err(FitError::Argument(format!("need 4 points above {floor:e}, got {}", pts.len())));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let line = linear_fit(&x, &y)?;
    if line.slope >= 0.0 {
        return Err(FitError::Degenerate(format!("no decay, slope {}", line.slope)));
    }
    let c1 = line.intercept.exp();
    let xi = -1.0 / line.slope;
    let mut r = FitResult::new("exp_decay", &line, span(&x));
    r.push("C1", c1, c1 * line.intercept_stderr);
    r.push("xi_fit", xi, line.slope_stderr / (line.slope * line.slope));
    r.notes.push(format!("excluded {excluded} points at or below {floor:e}"));
    Ok(r)
}

/// `C_d = p·C1·d^(−q)` via a line through `(ln d, ln C_d)`.
pub fn fit_power_law(p: &ConcurrenceProfile, c1: f64) -> Result<FitResult, FitError> {
    if c1 <= 0.0 || !c1.is_finite() {
        return Err(FitError::Argument(format!("C1 must be positive, got {c1}")));
    }
    let (pts, excluded, floor) = usable_points(p);
    if pts.len() < 4 {
        return Err(FitError::Argument(format!("need 4 points above {floor:e}, got {}", pts.len())));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let line = linear_fit(&x, &y)?;
    if line.slope >= 0.0 {
        return Err(FitError::Degenerate(format!("no decay, exponent {}", -line.slope)));
    }
    let p_coef = line.intercept.exp() / c1;
    let d: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut r = FitResult::new("power_law", &line, span(&d));
    r.push("p", p_coef, p_coef * line.intercept_stderr);
    r.push("q", -line.slope, line.slope_stderr);
    r.notes.push(format!("excluded {excluded} points at or below {floor:e}"));
    Ok(r)
}

/// `C^(∞) = a·(ξ·τ^(∞))^b` over a parameter sweep.
pub fn fit_kbi_fine_grained(records: &[TotalsRecord]) -> Result<FitResult, FitError> {
    if records.len() < 5 {
        return Err(FitError::Argument(format!("need 5 records, got {}", records.len())));
    }
    let mut pts: Vec<(f64, f64)> =
        records.iter().map(|r| (r.xi as f64 * r.total_two_tangle, r.total_concurrence)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pts.iter().any(|&(x, c)| x <= 0.0 || c <= 0.0) {
        return Err(FitError::Degenerate("non-positive ξτ or C in records".into()));
    }
    let (lo, hi) = span(&pts.iter().map(|p| p.0).collect::<Vec<_>>());
    if hi - lo <= 1e-6 {
        return Err(FitError::Degenerate(format!("ξτ spread {:e} too small", hi - lo)));
    }
    power_branch("kbi_fine", &pts, "a", "b")
}

fn power_branch(name: &str, pts: &[(f64, f64)], a: &str, b: &str) -> Result<FitResult, FitError> {
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let line = linear_fit(&x, &y)?;
    let mut r = FitResult::new(name, &line, span(&pts.iter().map(|p| p.0).collect::<Vec<_>>()));
    let amp = line.intercept.exp();
    r.push(a, amp, amp * line.intercept_stderr);
    r.push(b, line.slope, line.slope_stderr);
    Ok(r)
}

/// Two-branch law `C^(N) = a_i·(N·τ^(N))^(b_i)` split at the peak `N_c`.
pub fn fit_piecewise_distribution(records: &[TotalsRecord]) -> Result<FitResult, FitError> {
    let mut recs = records.to_vec();
    recs.sort_by(|a, b| a.n.cmp(&b.n));
    if recs.windows(2).any(|w| w[0].n == w[1].n) {
        return Err(FitError::Argument("duplicate chain lengths".into()));
    }
    if recs.is_empty() {
        return Err(FitError::Argument("no records".into()));
    }
    let peak = recs.iter().map(|r| r.total_concurrence).fold(f64::NEG_INFINITY, f64::max);
    let at_peak: Vec<usize> = (0..recs.len()).filter(|&k| recs[k].total_concurrence == peak).collect();
    let k_c = at_peak[0];
    let n_c = recs[k_c].n;
    if k_c == 0 || k_c == recs.len() - 1 {
        return Err(FitError::InconclusiveNc(format!("maximum at the edge of the N range (N = {n_c})")));
    }
    let (left, right) = recs.split_at(k_c + 1);
    if left.len() < 4 || right.len() < 4 {
        return Err(FitError::Argument(format!(
            "need 4 points on each side of N_c = {n_c}, got {} and {}",
            left.len(),
            right.len()
        )));
    }
    let pts = |rs: &[TotalsRecord]| -> Result<Vec<(f64, f64)>, FitError> {
        rs.iter()
            .map(|r| {
                let x = r.n as f64 * r.total_two_tangle;
                if x <= 0.0 || r.total_concurrence <= 0.0 {
                    Err(FitError::Degenerate(format!("non-positive totals at N = {}", r.n)))
                } else {
                    Ok((x, r.total_concurrence))
                }
            })
            .collect()
    };
    let lo = power_branch("piecewise", &pts(left)?, "a1", "b1")?;
    let hi = power_branch("piecewise", &pts(right)?, "a2", "b2")?;
    let mut r = FitResult {
        model_name: "piecewise".into(),
        coefficients: Vec::new(),
        residual: ((lo.residual.powi(2) * lo.n_points as f64 + hi.residual.powi(2) * hi.n_points as f64)
            / (lo.n_points + hi.n_points) as f64)
            .sqrt(),
        r_squared: lo.r_squared.min(hi.r_squared),
        n_points: lo.n_points + hi.n_points,
        domain: (recs[0].n as f64, recs[recs.len() - 1].n as f64),
        notes: vec![format!("branch r_squared {} / {}", lo.r_squared, hi.r_squared)],
    };
    r.coefficients.extend(lo.coefficients);
    r.coefficients.extend(hi.coefficients);
    r.push("n_c", n_c as f64, 0.0);
    if at_peak.len() > 1 {
        r.notes.push(format!("tied maxima at N = {:?}; kept the smallest", at_peak.iter().map(|&k| recs[k].n).collect::<Vec<_>>()));
    }
    Ok(r)
}

/// Formats a piecewise fit as `a1/a2(N_c)  b1/b2`.
pub fn table_row(label: &str, fit: &FitResult) -> String {
    let g = |n: &str| fit.coef(n).unwrap_or(f64::NAN);
    format!("{label}  {:.2}/{:.2}({})  {:.2}/{:.2}", g("a1"), g("a2"), g("n_c") as i64, g("b1"), g("b2"))
}

/// `τ^(N) = slope·C1` through the origin, plus interior extrema of `C1(N)`.
pub fn proportionality_check(records: &[TotalsRecord], c1_values: &[f64]) -> Result<FitResult, FitError> {
    if records.len() != c1_values.len() {
        return Err(FitError::Argument("records and C1 values differ in length".into()));
    }
    if records.len() < 3 {
        return Err(FitError::Argument(format!("need 3 points, got {}", records.len())));
    }
    let mut rows: Vec<(usize, f64, f64)> =
        records.iter().zip(c1_values).map(|(r, &c1)| (r.n, c1, r.total_two_tangle)).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if rows.iter().all(|r| r.1 == 0.0 && r.2 == 0.0) {
        return Err(FitError::Degenerate("all records are zero".into()));
    }
    let x: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let line = proportional_fit(&x, &y)?;
    let mut r = FitResult::new("proportionality", &line, span(&x));
    r.push("slope", line.slope, line.slope_stderr);
    for w in 1..rows.len().saturating_sub(1) {
        let (a, b, c) = (rows[w - 1].1, rows[w].1, rows[w + 1].1);
        if (b > a && b > c) || (b < a && b < c) {
            let kind = if b > a { "maximum" } else { "minimum" };
            r.notes.push(format!("C1 has an interior {kind} at N = {}", rows[w].0));
        }
    }
    Ok(r)
}

/// `C/(N·τ)` per record, the ratio behind the KBI-style scaling statements.
pub fn kbi_ratios(records: &[TotalsRecord], use_xi: bool) -> Vec<(usize, f64)> {
    records
        .iter()
        .map(|r| {
            let scale = if use_xi { r.xi as f64 } else { r.n as f64 };
            (r.n, r.total_concurrence / (scale * r.total_two_tangle))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeScan {
    pub coupling_values: Vec<f64>,
    pub distances: Vec<usize>,
    /// `c_d_values[k][i]` is `C_{distances[i]}` at `coupling_values[k]`.
    pub c_d_values: Vec<Vec<f64>>,
    pub derivative: Vec<Vec<f64>>,
    pub step: f64,
    /// Grid points whose derivative is one-sided.
    pub one_sided: Vec<bool>,
}

impl DerivativeScan {
    pub fn from_values(coupling_values: Vec<f64>, distances: Vec<usize>, c_d_values: Vec<Vec<f64>>) -> Result<Self, FitError> {
        let n = coupling_values.len();
        if n < 3 {
            return Err(FitError::Argument(format!("need 3 grid points, got {n}")));
        }
        if c_d_values.len() != n || c_d_values.iter().any(|row| row.len() != distances.len()) {
            return Err(FitError::Argument("value table does not match grid and distances".into()));
        }
        let step = check_grid(&coupling_values)?;
        let mut derivative = vec![vec![0.0; distances.len()]; n];
        for (k, row) in derivative.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let c = |k: usize| c_d_values[k][i];
                *v = if k == 0 {
                    (c(1) - c(0)) / step
                } else if k == n - 1 {
                    (c(n - 1) - c(n - 2)) / step
                } else {
                    (c(k + 1) - c(k - 1)) / (2.0 * step)
                };
            }
        }
        let one_sided = (0..n).map(|k| k == 0 || k == n - 1).collect();
        Ok(Self { coupling_values, distances, c_d_values, derivative, step, one_sided })
    }

    pub fn column(&self, d: usize) -> Option<Vec<f64>> {
        let i = self.distances.iter().position(|&x| x == d)?;
        Some(self.derivative.iter().map(|row| row[i]).collect())
    }
}

/// Uniform grid check; returns the step.
pub fn check_grid(grid: &[f64]) -> Result<f64, FitError> {
    if grid.len() < 2 {
        return Err(FitError::Argument("grid needs at least 2 points".into()));
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if step <= 0.0 {
        return Err(FitError::Argument("grid must be strictly increasing".into()));
    }
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - step).abs() > GRID_TOLERANCE {
            return Err(FitError::Argument(format!("non-uniform grid spacing near {}", w[0])));
        }
    }
    Ok(step)
}

/// `lo, lo + step, …, hi` with each point rounded to 12 decimals.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect()
}

/// One ground-state solve per coupling, then `C_d` at each requested distance.
pub fn derivative_scan(
    template: &ModelSpec,
    distances: &[usize],
    j_grid: &[f64],
    cfg: &DmrgConfig,
    opts: &ProfileOptions,
    workers: usize,
) -> Result<DerivativeScan, FitError> {
    check_grid(j_grid)?;
    if distances.is_empty() {
        return Err(FitError::Argument("no distances requested".into()));
    }
    let d_max = *distances.iter().max().unwrap_or(&1);
    let popts = ProfileOptions { d_max: d_max.max(opts.d_max), ..*opts };
    let runs = map_ordered(j_grid, workers, |&j| -> Result<(bool, Vec<f64>), FitError> {
        let spec = ModelSpec { j_xy: j, ..*template };
        let gs = match spec.length {
            ChainLength::Finite(_) => fdmrg_ground(&Mpo::build(&spec).map_err(DmrgError::from)?, cfg)?,
            ChainLength::Infinite => idmrg_ground(&spec, cfg)?,
        };
        let p = profile(&gs.state, &popts, 1)?;
        let row = distances.iter().map(|&d| p.value_at(d).unwrap_or(0.0)).collect();
        Ok((gs.converged, row))
    });
    let mut failed = Vec::new();
    let mut values = Vec::with_capacity(j_grid.len());
    for (j, run) in j_grid.iter().zip(runs) {
        let (converged, row) = run?;
        if !converged {
            failed.push(*j);
        }
        values.push(row);
    }
    if !failed.is_empty() {
        return Err(FitError::ScanUnconverged(failed));
    }
    DerivativeScan::from_values(j_grid.to_vec(), distances.to_vec(), values)
}

/// Grid maximum of `|∂C_d/∂J|` refined by a parabola through its neighbours.
pub fn estimate_critical_point(scan: &DerivativeScan, d: usize) -> Result<f64, FitError> {
    let col = scan.column(d).ok_or_else(|| FitError::Argument(format!("distance {d} not in scan")))?;
    let mags: Vec<f64> = col.iter().map(|v| v.abs()).collect();
    let n = mags.len();
    let mut best = 1;
    for k in 1..n - 1 {
        if mags[k] > mags[best] {
            best = k;
        }
    }
    if mags[best] == 0.0 {
        return Err(FitError::Degenerate(format!("C_{d} is flat over the whole grid")));
    }
    let (a, b, c) = (mags[best - 1], mags[best], mags[best + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Ok(scan.coupling_values[best] + shift * scan.step)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScanSide {
    /// Couplings below the critical point.
    #[default]
    Below,
    Above,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogScalingOptions {
    /// Half-width of the excluded window around `J*`, in grid steps.
    pub window_steps: f64,
    pub side: ScanSide,
}

impl Default for LogScalingOptions {
    fn default() -> Self {
        Self { window_steps: 2.0, side: ScanSide::Below }
    }
}

/// `∂C_d/∂J ≃ k_d ln|J − J*|` per distance, then `k_d = m·d + m′`.
pub fn fit_log_scaling(scan: &DerivativeScan, j_star: f64, opts: &LogScalingOptions) -> Result<FitResult, FitError> {
    if opts.window_steps < 2.0 {
        return Err(FitError::Argument(format!("exclusion window must be at least 2 steps, got {}", opts.window_steps)));
    }
    let half = opts.window_steps * scan.step;
    let keep: Vec<usize> = (0..scan.coupling_values.len())
        .filter(|&k| {
            let dj = scan.coupling_values[k] - j_star;
            let side_ok = match opts.side {
                ScanSide::Below => dj < 0.0,
                ScanSide::Above => dj > 0.0,
            };
            side_ok && dj.abs() > half + GRID_TOLERANCE && !scan.one_sided[k]
        })
        .collect();
    if keep.len() < 3 {
        return Err(FitError::Argument(format!("only {} grid points left after excluding the window", keep.len())));
    }
    if scan.distances.len() < 3 {
        return Err(FitError::Argument("need at least 3 distances for the k_d line".into()));
    }
    let x: Vec<f64> = keep.iter().map(|&k| (scan.coupling_values[k] - j_star).abs().ln()).collect();
    let mut order: Vec<usize> = (0..scan.distances.len()).collect();
    order.sort_by_key(|&i| scan.distances[i]);
    let mut ks = Vec::new();
    let mut r_min = 1.0f64;
    let mut coefs = Vec::new();
    for &i in &order {
        let y: Vec<f64> = keep.iter().map(|&k| scan.derivative[k][i]).collect();
        let line = linear_fit(&x, &y)?;
        r_min = r_min.min(line.r_squared);
        coefs.push(Coefficient { name: format!("k_{}", scan.distances[i]), value: line.slope, stderr: line.slope_stderr });
        ks.push(line.slope);
    }
    let ds: Vec<f64> = order.iter().map(|&i| scan.distances[i] as f64).collect();
    let line = linear_fit(&ds, &ks)?;
    let js: Vec<f64> = keep.iter().map(|&k| scan.coupling_values[k]).collect();
    let mut r = FitResult::new("log_scaling", &line, span(&js));
    r.coefficients = coefs;
    r.push("m", line.slope, line.slope_stderr);
    r.push("m_prime", line.intercept, line.intercept_stderr);
    r.notes.push(format!("J* = {j_star}, window ±{half}, {} grid points per distance", keep.len()));
    r.notes.push(format!("lowest per-distance r_squared {r_min}"));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(n: usize, c: f64, tau: f64, xi: usize) -> TotalsRecord {
        TotalsRecord { n, total_concurrence: c, total_two_tangle: tau, xi, c1: 0.0, distance_count: n }
    }

    /// Records with `C = a·x^b`, `x = scale·τ`, for given `C` values.
    fn from_law(ns: &[usize], cs: &[f64], a: f64, b: f64, use_xi: bool) -> Vec<TotalsRecord> {
        ns.iter()
            .zip(cs)
            .map(|(&n, &c)| {
                let x = (c / a).powf(1.0 / b);
                if use_xi {
                    record(n, c, x / 7.0, 7)
                } else {
                    record(n, c, x / n as f64, 0)
                }
            })
            .collect()
    }

    fn piecewise_records(a1: f64, b1: f64, a2: f64, b2: f64, n_c: usize) -> Vec<TotalsRecord> {
        let ns: Vec<usize> = (n_c.saturating_sub(40).max(4)..=n_c + 40).step_by(3).chain([n_c]).collect();
        let mut ns = ns;
        ns.sort();
        ns.dedup();
        ns.iter()
            .map(|&n| {
                let c = 2.0 - ((n as f64 - n_c as f64) / 30.0).powi(2);
                let (a, b) = if n <= n_c { (a1, b1) } else { (a2, b2) };
                from_law(&[n], &[c], a, b, false)[0]
            })
            .collect()
    }

    #[test]
    fn exact_exponential_recovery() {
        let p = ConcurrenceProfile::from_values((1..=20).map(|d| 0.3 * (-(d as f64) / 5.0).exp()).collect(), 1e-9);
        let f = fit_exponential_decay(&p).unwrap();
        assert!((f.coef("C1").unwrap() - 0.3).abs() < 1e-6);
        assert!((f.coef("xi_fit").unwrap() - 5.0).abs() < 1e-6);
        assert!(f.r_squared >= 1.0 - 1e-10);
    }

    #[test]
    fn exact_power_law_recovery() {
        let c1 = 0.05;
        let p = ConcurrenceProfile::from_values((1..=30).map(|d| 0.8 * c1 * (d as f64).powf(-1.2)).collect(), 1e-9);
        let f = fit_power_law(&p, c1).unwrap();
        assert!((f.coef("p").unwrap() - 0.8).abs() < 1e-6);
        assert!((f.coef("q").unwrap() - 1.2).abs() < 1e-6);
        assert!(f.r_squared >= 1.0 - 1e-10);
    }

    #[test]
    fn model_selection_prefers_power_law() {
        let p = ConcurrenceProfile::from_values((1..=30).map(|d| 0.1 * (d as f64).powf(-1.5)).collect(), 1e-9);
        let e = fit_exponential_decay(&p).unwrap();
        let q = fit_power_law(&p, 0.1).unwrap();
        assert!(q.r_squared > 1.0 - 1e-10);
        assert!(e.r_squared < q.r_squared - 0.05, "exp r2 {}", e.r_squared);
    }

    #[test]
    fn noise_floor_excludes_points() {
        let mut p = ConcurrenceProfile::from_values(vec![0.1, 0.05, 0.025, 0.0125, 1e-9, 2e-9, 0.0], 1e-9);
        p.noise_floor = 1e-8;
        let f = fit_exponential_decay(&p).unwrap();
        assert_eq!(f.n_points, 4);
        assert!((f.coef("xi_fit").unwrap() - 1.0 / 2f64.ln()).abs() < 1e-9);
        p.noise_floor = 2e-3;
        assert!(matches!(fit_exponential_decay(&p), Err(FitError::Argument(_))));
    }

    #[test]
    fn flat_profile_is_degenerate() {
        let p = ConcurrenceProfile::from_values(vec![0.1; 6], 1e-9);
        assert!(matches!(fit_exponential_decay(&p), Err(FitError::Degenerate(_))));
    }

    #[test]
    fn kbi_fine_grained_recovery() {
        let cs: Vec<f64> = (0..8).map(|k| 0.2 + 0.1 * k as f64).collect();
        let ns: Vec<usize> = (0..8).collect();
        let f = fit_kbi_fine_grained(&from_law(&ns, &cs, 0.9, 0.55, true)).unwrap();
        assert!((f.coef("a").unwrap() - 0.9).abs() < 1e-6);
        assert!((f.coef("b").unwrap() - 0.55).abs() < 1e-6);
        let f = fit_kbi_fine_grained(&from_law(&ns, &cs, 1.0, 1.0, true)).unwrap();
        assert!((f.coef("a").unwrap() - 1.0).abs() < 1e-10);
        assert!((f.coef("b").unwrap() - 1.0).abs() < 1e-10);
        let flat: Vec<TotalsRecord> = (0..6).map(|n| record(n, 0.5, 0.1, 3)).collect();
        assert!(matches!(fit_kbi_fine_grained(&flat), Err(FitError::Degenerate(_))));
    }

    #[test]
    fn piecewise_recovery_and_table_row() {
        let f = fit_piecewise_distribution(&piecewise_records(0.91, 0.49, 0.96, 0.57, 74)).unwrap();
        for (name, want) in [("a1", 0.91), ("b1", 0.49), ("a2", 0.96), ("b2", 0.57), ("n_c", 74.0)] {
            assert!((f.coef(name).unwrap() - want).abs() < 1e-4, "{name}");
        }
        assert_eq!(table_row("alpha=0.3, h_x=30", &f), "alpha=0.3, h_x=30  0.91/0.96(74)  0.49/0.57");
    }

    #[test]
    fn piecewise_needs_interior_peak() {
        let recs: Vec<TotalsRecord> = (0..10).map(|k| record(50 + 10 * k, 1.0 + k as f64, 0.01, 0)).collect();
        assert!(matches!(fit_piecewise_distribution(&recs), Err(FitError::InconclusiveNc(_))));
    }

    #[test]
    fn piecewise_tie_takes_smaller_n() {
        let mut recs = piecewise_records(0.9, 0.5, 0.95, 0.6, 60);
        let k = recs.iter().position(|r| r.n == 60).unwrap();
        let mut twin = recs[k + 1];
        twin.total_concurrence = recs[k].total_concurrence;
        recs[k + 1] = twin;
        let f = fit_piecewise_distribution(&recs).unwrap();
        assert_eq!(f.coef("n_c"), Some(60.0));
        assert!(f.notes.iter().any(|n| n.contains("tied")));
    }

    #[test]
    fn proportionality_examples() {
        let c1 = [0.02, 0.05, 0.03, 0.04, 0.01];
        let recs: Vec<TotalsRecord> = c1.iter().enumerate().map(|(k, &c)| record(20 + 10 * k, 0.0, 0.7 * c, 0)).collect();
        let f = proportionality_check(&recs, &c1).unwrap();
        assert!((f.coef("slope").unwrap() - 0.7).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-10);
        assert!(f.notes.iter().any(|n| n.contains("maximum at N = 30")));
        let zeros: Vec<TotalsRecord> = (0..4).map(|k| record(k, 0.0, 0.0, 0)).collect();
        assert!(matches!(proportionality_check(&zeros, &[0.0; 4]), Err(FitError::Degenerate(_))));
        assert!(matches!(proportionality_check(&recs[..2], &c1[..2]), Err(FitError::Argument(_))));
    }

    fn synthetic_scan(m: f64, mp: f64, j_star: f64) -> DerivativeScan {
        // Derivative exactly k_d·ln|J − J*| + c_d on the grid interior.
        let grid = uniform_grid(-1.3, -0.7, 0.01);
        let ds = vec![1, 2, 3, 4, 5];
        let h = 0.01;
        let deriv: Vec<Vec<f64>> = grid
            .iter()
            .map(|&j| ds.iter().map(|&d| (m * d as f64 + mp) * (j - j_star).abs().ln() + 0.1 * d as f64).collect())
            .collect();
        let n = grid.len();
        let one_sided = (0..n).map(|k| k == 0 || k == n - 1).collect();
        DerivativeScan {
            coupling_values: grid,
            distances: ds.clone(),
            c_d_values: vec![vec![0.0; ds.len()]; n],
            derivative: deriv,
            step: h,
            one_sided,
        }
    }

    #[test]
    fn log_scaling_recovery() {
        let scan = synthetic_scan(-0.3838, 1.3724, -1.0005);
        let f = fit_log_scaling(&scan, -1.0005, &LogScalingOptions::default()).unwrap();
        assert!((f.coef("m").unwrap() + 0.3838).abs() < 1e-6);
        assert!((f.coef("m_prime").unwrap() - 1.3724).abs() < 1e-6);
        let flat = synthetic_scan(0.0, 0.8, -1.0005);
        let f = fit_log_scaling(&flat, -1.0005, &LogScalingOptions::default()).unwrap();
        assert!(f.coef("m").unwrap().abs() < 1e-8);
        let narrow = LogScalingOptions { window_steps: 1.0, ..Default::default() };
        assert!(matches!(fit_log_scaling(&scan, -1.0005, &narrow), Err(FitError::Argument(_))));
        let wide = LogScalingOptions { window_steps: 60.0, ..Default::default() };
        assert!(matches!(fit_log_scaling(&scan, -1.0005, &wide), Err(FitError::Argument(_))));
    }

    #[test]
    fn zero_region_has_zero_derivative() {
        let grid = uniform_grid(-0.5, 0.5, 0.05);
        let vals = vec![vec![0.0; 3]; grid.len()];
        let scan = DerivativeScan::from_values(grid, vec![1, 2, 3], vals).unwrap();
        assert!(scan.derivative.iter().flatten().all(|&v| v == 0.0));
        assert!(scan.one_sided[0] && scan.one_sided[scan.one_sided.len() - 1]);
        assert!(matches!(estimate_critical_point(&scan, 1), Err(FitError::Degenerate(_))));
    }

    #[test]
    fn critical_point_refinement() {
        // |∂C/∂J| is a parabola peaked off-grid at −0.987.
        let grid = uniform_grid(-1.2, -0.8, 0.01);
        let peak = -0.987;
        let c: Vec<Vec<f64>> = grid.iter().map(|&j| vec![-((j - peak).powi(3)) / 3.0 + 5.0 * j]).collect();
        let scan = DerivativeScan::from_values(grid, vec![1], c).unwrap();
        let j = estimate_critical_point(&scan, 1).unwrap();
        assert!((j - peak).abs() < 1e-3, "{j}");
    }

    #[test]
    fn grid_validation() {
        assert!(check_grid(&[0.0, 0.1, 0.25]).is_err());
        assert!(check_grid(&[0.0, -0.1]).is_err());
        let g = uniform_grid(-1.3, -0.7, 0.01);
        assert_eq!(g.len(), 61);
        assert_eq!(g[30], -1.0);
        assert!((check_grid(&g).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn richardson_consistency() {
        // Centred differences of sin: error shrinks by ~4 when the step halves.
        let run = |h: f64| {
            let grid: Vec<f64> = (0..=8).map(|k| 0.3 + k as f64 * h).collect();
            let vals = grid.iter().map(|&j| vec![(2.0 * j).sin()]).collect();
            let s = DerivativeScan::from_values(grid.clone(), vec![1], vals).unwrap();
            (grid, s)
        };
        let (g1, s1) = run(0.02);
        let (g2, s2) = run(0.01);
        let (g3, s3) = run(0.005);
        let at = |g: &[f64], s: &DerivativeScan, x: f64| {
            let k = g.iter().position(|&v| (v - x).abs() < 1e-12).unwrap();
            s.derivative[k][0]
        };
        let x = 0.32;
        let e1 = (at(&g1, &s1, x) - at(&g2, &s2, x)).abs();
        let e2 = (at(&g2, &s2, x) - at(&g3, &s3, x)).abs();
        let c = e2 / (0.005f64).powi(2);
        assert!(e1 <= 2.0 * c * 0.01f64.powi(2), "{e1} vs {}", c * 1e-4);
        assert!((e1 / e2 - 4.0).abs() < 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fits_are_order_independent(seed in 0u64..1000, xi in 1.5f64..20.0, c1 in 0.01f64..0.5) {
            let vals: Vec<f64> = (1..=12).map(|d| c1 * (-(d as f64) / xi).exp() * (1.0 + 0.01 * ((d as u64 * 7 + seed) % 5) as f64)).collect();
            let p = ConcurrenceProfile::from_values(vals, 1e-12);
            let mut q = p.clone();
            let k = (seed as usize) % 12;
            q.distances.rotate_left(k);
            q.values.rotate_left(k);
            q.spread.rotate_left(k);
            q.n_pairs.rotate_left(k);
            let a = fit_exponential_decay(&p).unwrap();
            let b = fit_exponential_decay(&q).unwrap();
            prop_assert!((a.coef("xi_fit").unwrap() - b.coef("xi_fit").unwrap()).abs() < 1e-12);
            let pa = fit_power_law(&p, c1).unwrap();
            let pb = fit_power_law(&q, c1).unwrap();
            prop_assert!((pa.coef("q").unwrap() - pb.coef("q").unwrap()).abs() < 1e-12);
        }

        #[test]
        fn exact_models_are_recovered(a in 0.5f64..1.5, b in 0.3f64..0.9) {
            let cs: Vec<f64> = (0..6).map(|k| 0.1 + 0.15 * k as f64).collect();
            let ns: Vec<usize> = (0..6).collect();
            let mut recs = from_law(&ns, &cs, a, b, true);
            recs.reverse();
            let f = fit_kbi_fine_grained(&recs).unwrap();
            prop_assert!((f.coef("a").unwrap() - a).abs() < 1e-6);
            prop_assert!((f.coef("b").unwrap() - b).abs() < 1e-6);
            prop_assert!(f.r_squared >= 1.0 - 1e-10);
        }
    }
}
