//! Two-site DMRG for finite chains and unit-cell growth for infinite ones.

use crate::env::{boundary, extend_left, extend_right, two_site_entries, Env, TwoSiteEntry, TwoSiteOperator};
use crate::linalg::{lanczos_lowest, svd_truncate, vec_norm, LinalgError, C64, ONE};
use crate::mpo::{spin, ChainLength, InfiniteMpo, ModelError, ModelSpec, Mpo, MpoTensor};
use crate::mps::{InfiniteMps, Mps, MpsError};
use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative strength of the symmetry-breaking field used when `h_x = 0`.
pub const PINNING_STRENGTH: f64 = 1e-6;
const INITIAL_NOISE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum DmrgError {
    #[error("invalid DMRG configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error("local eigensolver failed in sweep {sweep} at sites ({site}, {}): {source}", site + 1)]
    LocalSolver {
        sweep: usize,
        site: usize,
        #[source]
        source: LinalgError,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmrgConfig {
    pub chi_max: usize,
    pub trunc_eps: f64,
    pub max_sweeps: usize,
    pub energy_rel_tol: f64,
    pub seed: u64,
    pub min_sweeps: usize,
    pub lanczos_tol: f64,
    pub lanczos_max_iter: usize,
    pub idmrg_max_steps: usize,
    pub idmrg_min_steps: usize,
}

impl Default for DmrgConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DmrgConfig {
    pub fn desk() -> Self {
        Self {
            chi_max: 128,
            trunc_eps: 1e-10,
            max_sweeps: 60,
            energy_rel_tol: 1e-10,
            seed: 1,
            min_sweeps: 2,
            lanczos_tol: 1e-10,
            lanczos_max_iter: 1000,
            idmrg_max_steps: 2000,
            idmrg_min_steps: 10,
        }
    }

    pub fn paper() -> Self {
        Self { chi_max: 500, max_sweeps: 200, ..Self::desk() }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn with_chi(mut self, chi: usize) -> Self {
        self.chi_max = chi;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), DmrgError> {
        let fail = |m: String| Err(DmrgError::Config(m));
        if self.chi_max < 2 {
            return fail(format!("chi_max must be >= 2, got {}", self.chi_max));
        }
        if !(self.trunc_eps >= 0.0) {
            return fail(format!("trunc_eps must be >= 0, got {}", self.trunc_eps));
        }
        if self.max_sweeps < 1 {
            return fail("max_sweeps must be >= 1".into());
        }
        if !(self.energy_rel_tol > 0.0) {
            return fail(format!("energy_rel_tol must be > 0, got {}", self.energy_rel_tol));
        }
        if !(self.lanczos_tol > 0.0) || self.lanczos_max_iter == 0 {
            return fail("lanczos_tol must be > 0 and lanczos_max_iter >= 1".into());
        }
        if self.idmrg_max_steps < 1 {
            return fail("idmrg_max_steps must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum GroundState {
    Finite(Mps),
    Infinite(InfiniteMps),
}

#[derive(Clone, Debug)]
pub struct GroundStateResult {
    pub state: GroundState,
    /// Total energy for finite chains, energy per site for infinite ones.
    pub energy: f64,
    /// Sweeps (finite) or growth steps (infinite).
    pub sweeps_used: usize,
    pub max_truncation_error: f64,
    pub converged: bool,
    pub energy_history: Vec<f64>,
    pub truncation_history: Vec<f64>,
    /// Von Neumann entropy at the central bond, per sweep; informational.
    pub entropy_history: Vec<f64>,
    /// Strength of the S_z field placed on site 0, if any.
    pub pinning: Option<f64>,
    /// Eigenvalue of `Π σx` the search was started in, if it was restricted.
    pub flip_sector: Option<i8>,
}

impl GroundStateResult {
    pub fn finite_state(&self) -> Option<&Mps> {
        match &self.state {
            GroundState::Finite(m) => Some(m),
            GroundState::Infinite(_) => None,
        }
    }

    pub fn infinite_state(&self) -> Option<&InfiniteMps> {
        match &self.state {
            GroundState::Infinite(m) => Some(m),
            GroundState::Finite(_) => None,
        }
    }
}

/// Pinning field strength for a zero-field model, `None` otherwise.
pub fn pinning_field(spec: &ModelSpec) -> Option<f64> {
    let scale = spec.j_xy.abs().max(spec.j_z.abs());
    (spec.h_x == 0.0 && scale > 0.0).then(|| PINNING_STRENGTH * scale)
}

fn relative_change(new: f64, old: f64) -> f64 {
    let scale = new.abs().max(1e-300);
    (new - old).abs() / scale
}

fn entropy(s: &[f64]) -> f64 {
    s.iter().filter(|&&x| x > 0.0).map(|&x| -(x * x) * (x * x).ln()).sum()
}

/// Splits a two-site block and renormalizes the kept singular values.
fn split(theta: &Array1<C64>, l: usize, r: usize, cfg: &DmrgConfig) -> Result<(Array2<C64>, Vec<f64>, Array2<C64>, f64), DmrgError> {
    let m = theta.view().into_shape_with_order((l * 2, 2 * r)).expect("flat block");
    let (u, mut s, vt, err) = svd_truncate(m, cfg.chi_max, cfg.trunc_eps)?;
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        s.iter_mut().for_each(|x| *x /= norm);
    }
    Ok((u, s, vt, err))
}

fn merge(a: &Array3<C64>, b: &Array3<C64>) -> Array1<C64> {
    let (l, d, k) = a.dim();
    let r = b.dim().2;
    let am = a.view().into_shape_with_order((l * d, k)).expect("standard layout");
    let bm = b.view().into_shape_with_order((k, 2 * r)).expect("standard layout");
    am.dot(&bm).into_shape_with_order(l * d * 2 * r).expect("contiguous")
}

fn scale_rows(m: &mut Array2<C64>, s: &[f64]) {
    for (mut row, &x) in m.rows_mut().into_iter().zip(s) {
        row.mapv_inplace(|z| z * x);
    }
}

fn scale_cols(m: &mut Array2<C64>, s: &[f64]) {
    for (mut col, &x) in m.columns_mut().into_iter().zip(s) {
        col.mapv_inplace(|z| z * x);
    }
}

const EARLY_LANCZOS_TOL: f64 = 1e-5;

struct LocalSolve {
    energy: f64,
    vector: Array1<C64>,
}

fn solve_local(
    left: &Env,
    right: &Env,
    entries: &[TwoSiteEntry],
    guess: &Array1<C64>,
    l: usize,
    r: usize,
    tol: f64,
    cfg: &DmrgConfig,
) -> Result<LocalSolve, LinalgError> {
    let op = TwoSiteOperator { left, right, entries, l, r };
    let mut start = guess.clone();
    if !(vec_norm(start.view()) > 0.0) {
        start.fill(ONE);
    }
    let out = lanczos_lowest(|v| op.apply(v), &start, tol, cfg.lanczos_max_iter)?;
    Ok(LocalSolve { energy: out.eigenvalue, vector: out.eigenvector })
}

/// Finite-chain ground state from a seeded random start.
pub fn fdmrg_ground(mpo: &Mpo, cfg: &DmrgConfig) -> Result<GroundStateResult, DmrgError> {
    fdmrg_ground_from(mpo, cfg, None)
}

/// Finite-chain ground state, optionally warm-started from `initial`.
///
/// Without a start state and without a pinning field the Hamiltonian commutes
/// with the global flip `Π σx`; the search then runs once in each flip sector
/// from the projected random start and keeps the lower energy. This avoids
/// settling into a symmetry-broken state when the two lowest levels are
/// nearly degenerate.
pub fn fdmrg_ground_from(mpo: &Mpo, cfg: &DmrgConfig, initial: Option<&Mps>) -> Result<GroundStateResult, DmrgError> {
    cfg.validate()?;
    let n = mpo.len();
    if n < 2 {
        return Err(DmrgError::Config("DMRG needs at least two sites".into()));
    }
    let pinning = pinning_field(mpo.spec());
    let work = match pinning {
        Some(p) => mpo.clone().with_local_term(0, &spin::SZ, -p),
        None => mpo.clone(),
    };
    if let Some(s) = initial {
        if s.len() != n {
            return Err(MpsError::LengthMismatch { state: s.len(), op: n }.into());
        }
        return sweep_from(mpo, &work, s.clone(), cfg, pinning, None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = Mps::random_product_plus_noise(n, INITIAL_NOISE, &mut rng)?;
    if pinning.is_some() {
        return sweep_from(mpo, &work, base, cfg, pinning, None);
    }
    let mut best: Option<GroundStateResult> = None;
    for sector in [1i8, -1] {
        let start = base.flip_projected(f64::from(sector))?;
        let res = match sweep_from(mpo, &work, start, cfg, pinning, Some(sector)) {
            Err(DmrgError::Mps(MpsError::ZeroNorm)) => continue,
            other => other?,
        };
        if best.as_ref().is_none_or(|b| res.energy < b.energy) {
            best = Some(res);
        }
    }
    best.ok_or(DmrgError::Mps(MpsError::ZeroNorm))
}

fn sweep_from(
    mpo: &Mpo,
    work: &Mpo,
    psi0: Mps,
    cfg: &DmrgConfig,
    pinning: Option<f64>,
    flip_sector: Option<i8>,
) -> Result<GroundStateResult, DmrgError> {
    let n = mpo.len();
    let mut t: Vec<Array3<C64>> = psi0.canonicalize(0)?.tensors().to_vec();
    let sites: &[MpoTensor] = work.sites();
    let pair_ops: Vec<Vec<TwoSiteEntry>> = (0..n - 1).map(|i| two_site_entries(&sites[i], &sites[i + 1])).collect();

    let mut right: Vec<Env> = vec![Vec::new(); n];
    right[n - 1] = boundary(sites[n - 1].right_dim, 0);
    for k in (1..n).rev() {
        right[k - 1] = extend_right(&right[k], &t[k], &sites[k]);
    }
    let mut left: Vec<Env> = vec![Vec::new(); n];
    left[0] = boundary(sites[0].left_dim, 0);

    let mut energy_history = Vec::new();
    let mut truncation_history = Vec::new();
    let mut entropy_history = Vec::new();
    let mut converged = false;
    let centre_bond = n / 2 - 1;

    // Local solves only need to beat the current sweep-to-sweep energy change;
    // the tolerance tightens to `lanczos_tol` as the sweeps settle.
    let mut tol = cfg.lanczos_tol.max(EARLY_LANCZOS_TOL);
    for sweep in 1..=cfg.max_sweeps {
        let mut sweep_trunc = 0.0f64;
        let mut sweep_energy = f64::NAN;
        let mut centre_entropy = 0.0;
        for i in 0..n - 1 {
            let (l, r) = (t[i].dim().0, t[i + 1].dim().2);
            let guess = merge(&t[i], &t[i + 1]);
            let sol = solve_local(&left[i], &right[i + 1], &pair_ops[i], &guess, l, r, tol, cfg)
                .map_err(|source| DmrgError::LocalSolver { sweep, site: i, source })?;
            let (u, s, mut vt, err) = split(&sol.vector, l, r, cfg)?;
            sweep_trunc = sweep_trunc.max(err);
            let k = s.len();
            scale_rows(&mut vt, &s);
            t[i] = u.into_shape_with_order((l, 2, k)).expect("contiguous");
            t[i + 1] = vt.into_shape_with_order((k, 2, r)).expect("contiguous");
            left[i + 1] = extend_left(&left[i], &t[i], &sites[i]);
            sweep_energy = sol.energy;
        }
        for i in (0..n - 1).rev() {
            let (l, r) = (t[i].dim().0, t[i + 1].dim().2);
            let guess = merge(&t[i], &t[i + 1]);
            let sol = solve_local(&left[i], &right[i + 1], &pair_ops[i], &guess, l, r, tol, cfg)
                .map_err(|source| DmrgError::LocalSolver { sweep, site: i, source })?;
            let (mut u, s, vt, err) = split(&sol.vector, l, r, cfg)?;
            sweep_trunc = sweep_trunc.max(err);
            if i == centre_bond {
                centre_entropy = entropy(&s);
            }
            let k = s.len();
            scale_cols(&mut u, &s);
            t[i] = u.into_shape_with_order((l, 2, k)).expect("contiguous");
            t[i + 1] = vt.into_shape_with_order((k, 2, r)).expect("contiguous");
            right[i] = extend_right(&right[i + 1], &t[i + 1], &sites[i + 1]);
            sweep_energy = sol.energy;
        }
        let previous = energy_history.last().copied();
        energy_history.push(sweep_energy);
        truncation_history.push(sweep_trunc);
        entropy_history.push(centre_entropy);
        if let Some(prev) = previous {
            let change = relative_change(sweep_energy, prev);
            if sweep >= cfg.min_sweeps && change <= cfg.energy_rel_tol && tol <= cfg.lanczos_tol {
                converged = true;
                break;
            }
            tol = (1e-2 * change).clamp(cfg.lanczos_tol, tol);
        }
    }

    let psi = Mps::new(t)?.canonicalize(0)?;
    let energy = psi.expectation(mpo)?;
    let max_truncation_error = truncation_history.iter().copied().fold(0.0, f64::max);
    Ok(GroundStateResult {
        state: GroundState::Finite(psi),
        energy,
        sweeps_used: energy_history.len(),
        max_truncation_error,
        converged,
        energy_history,
        truncation_history,
        entropy_history,
        pinning,
        flip_sector,
    })
}

/// Infinite-chain ground state by growing a two-site cell at the centre of
/// an ever longer chain, with the standard wavefunction prediction between
/// steps. Converges on the energy per site.
pub fn idmrg_ground(spec: &ModelSpec, cfg: &DmrgConfig) -> Result<GroundStateResult, DmrgError> {
    cfg.validate()?;
    if spec.length != ChainLength::Infinite {
        return Err(ModelError::Invalid("iDMRG needs an infinite chain".into()).into());
    }
    let impo = InfiniteMpo::build(spec)?;
    let w = impo.bulk();
    let entries = two_site_entries(w, w);
    let (start, done) = impo.boundary_channels();
    let mut left = boundary(w.left_dim, start);
    let mut right = boundary(w.right_dim, done);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut guess = crate::linalg::random_unit_vector(4, &mut rng);
    let mut lam_prev: Vec<f64> = vec![1.0];
    let mut cell: Option<(Array3<C64>, Vec<f64>, Array3<C64>)> = None;
    let mut total_prev = 0.0;
    let mut energy_history = Vec::new();
    let mut truncation_history = Vec::new();
    let mut entropy_history = Vec::new();
    let mut converged = false;

    for step in 1..=cfg.idmrg_max_steps {
        let l = left.iter().flatten().next().map_or(1, |m| m.ncols());
        let r = right.iter().flatten().next().map_or(1, |m| m.nrows());
        if let Some((a, lam, b)) = &cell {
            guess = predict(a, lam, b, &lam_prev);
        }
        let sol = solve_local(&left, &right, &entries, &guess, l, r, cfg.lanczos_tol, cfg)
            .map_err(|source| DmrgError::LocalSolver { sweep: step, site: 0, source })?;
        let (u, s, vt, err) = split(&sol.vector, l, r, cfg)?;
        let k = s.len();
        let a = u.into_shape_with_order((l, 2, k)).expect("contiguous");
        let b = vt.into_shape_with_order((k, 2, r)).expect("contiguous");
        left = extend_left(&left, &a, w);
        right = extend_right(&right, &b, w);

        let density = (sol.energy - total_prev) / 2.0;
        total_prev = sol.energy;
        let previous = energy_history.last().copied();
        energy_history.push(density);
        truncation_history.push(err);
        entropy_history.push(entropy(&s));
        if let Some((_, lam, _)) = cell.take() {
            lam_prev = lam;
        }
        cell = Some((a, s, b));
        if let Some(prev) = previous {
            if step >= cfg.idmrg_min_steps.max(2) && relative_change(density, prev) <= cfg.energy_rel_tol {
                converged = true;
                break;
            }
        }
    }

    let (a, lam, b) = cell.expect("at least one growth step");
    let state = unit_cell_state(a, &lam, b, &lam_prev)?;
    let energy = *energy_history.last().expect("at least one growth step");
    let max_truncation_error = truncation_history.iter().copied().fold(0.0, f64::max);
    Ok(GroundStateResult {
        state: GroundState::Infinite(state),
        energy,
        sweeps_used: energy_history.len(),
        max_truncation_error,
        converged,
        energy_history,
        truncation_history,
        entropy_history,
        pinning: None,
        flip_sector: None,
    })
}

fn inverse_weights(lam: &[f64]) -> Vec<f64> {
    let cut = lam.first().copied().unwrap_or(1.0) * 1e-12;
    lam.iter().map(|&x| if x > cut { 1.0 / x } else { 0.0 }).collect()
}

/// `Λ_n B Λ_{n−1}^{-1}`: the right-hand cell site moved into left gauge.
fn shifted_right_site(lam: &[f64], b: &Array3<C64>, lam_prev: &[f64]) -> Array3<C64> {
    let (k, d, r) = b.dim();
    let mut m = b.clone().into_shape_with_order((k, d * r)).expect("contiguous");
    scale_rows(&mut m, lam);
    let inv = inverse_weights(lam_prev);
    let mut m = m.into_shape_with_order((k * d, r)).expect("contiguous");
    scale_cols(&mut m, &inv);
    m.into_shape_with_order((k, d, r)).expect("contiguous")
}

/// Two-site guess `Λ_n B Λ_{n−1}^{-1} A Λ_n` for the next growth step.
fn predict(a: &Array3<C64>, lam: &[f64], b: &Array3<C64>, lam_prev: &[f64]) -> Array1<C64> {
    if b.dim().2 != lam_prev.len() || a.dim().0 != lam_prev.len() {
        let dim = lam.len() * 4 * lam.len();
        return Array1::from_elem(dim, ONE);
    }
    let left = shifted_right_site(lam, b, lam_prev);
    let (k, d, mid) = left.dim();
    let lm = left.into_shape_with_order((k * d, mid)).expect("contiguous");
    let am = a.view().into_shape_with_order((mid, d * k)).expect("standard layout");
    let mut theta = lm.dot(&am).into_shape_with_order((k * d * d, k)).expect("contiguous");
    scale_cols(&mut theta, lam);
    theta.into_shape_with_order(k * d * d * k).expect("contiguous")
}

fn unit_cell_state(a: Array3<C64>, lam: &[f64], b: Array3<C64>, lam_prev: &[f64]) -> Result<InfiniteMps, DmrgError> {
    let a_prime = if b.dim().2 == lam_prev.len() {
        shifted_right_site(lam, &b, lam_prev)
    } else {
        // Only one growth step was taken; the outer bonds are trivial.
        let mut m = b.clone();
        for (mut row, &x) in m.outer_iter_mut().zip(lam) {
            row.mapv_inplace(|z| z * x);
        }
        m
    };
    let d0 = a.dim().0;
    let right_guess = if lam_prev.len() == d0 {
        Array2::from_diag(&Array1::from_iter(lam_prev.iter().map(|x| C64::new(x * x, 0.0))))
    } else {
        Array2::eye(d0)
    };
    Ok(InfiniteMps::new(a, a_prime, Array2::eye(d0), right_guess)?)
}

/// Energy per site at `site` from two-site reduced states: the field term plus
/// half of every bond the site takes part in.
pub fn site_energy(psi: &Mps, spec: &ModelSpec, site: usize) -> Result<f64, DmrgError> {
    let n = psi.len();
    let ladder = psi.ladder()?;
    let pair = crate::ed::pair_block_matrix(spec.j_xy, spec.j_z);
    let mut e = spec.h_x * expect1(&ladder.single_site(site)?, &spin::SX);
    for other in 0..n {
        if other == site {
            continue;
        }
        let f = spec.coupling(site.abs_diff(other));
        if f == 0.0 {
            continue;
        }
        let (i, j) = (site.min(other), site.max(other));
        let rho = ladder.two_site(i, j)?;
        let v: C64 = rho.entries().t().iter().zip(pair.iter()).map(|(a, b)| a * b).sum();
        e += 0.5 * f * v.re;
    }
    Ok(e)
}

fn expect1(rho: &crate::mps::DensityMatrix, op: &crate::mpo::Op2) -> f64 {
    let m = rho.entries();
    let mut acc = C64::new(0.0, 0.0);
    for a in 0..2 {
        for b in 0..2 {
            acc += m[[b, a]] * op[a][b];
        }
    }
    acc.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ed::{ed_ground, energy_variance, hamiltonian_sparse};
    use crate::mpo::Decay;

    fn small_cfg() -> DmrgConfig {
        DmrgConfig { chi_max: 64, ..DmrgConfig::desk() }
    }

    #[test]
    fn config_validation() {
        assert!(DmrgConfig::desk().validate().is_ok());
        assert!(DmrgConfig { chi_max: 1, ..DmrgConfig::desk() }.validate().is_err());
        assert!(DmrgConfig { energy_rel_tol: 0.0, ..DmrgConfig::desk() }.validate().is_err());
        assert!(DmrgConfig { max_sweeps: 0, ..DmrgConfig::desk() }.validate().is_err());
        assert!(DmrgConfig { trunc_eps: -1.0, ..DmrgConfig::desk() }.validate().is_err());
        assert_eq!(DmrgConfig::paper().chi_max, 500);
        assert_eq!(DmrgConfig::paper().max_sweeps, 200);
    }

    #[test]
    fn field_only_chain() {
        for decay in [Decay::Exponential, Decay::PowerLaw, Decay::Uniform] {
            let spec = ModelSpec::finite(decay, 6, 1.0, 0.0, 0.0, 10.0);
            let res = fdmrg_ground(&Mpo::build(&spec).unwrap(), &small_cfg()).unwrap();
            assert!((res.energy + 30.0).abs() < 1e-9, "{decay:?}: {}", res.energy);
            assert!(res.converged);
            assert!(res.pinning.is_none());
            let psi = res.finite_state().unwrap();
            assert_eq!(psi.max_bond(), 1);
        }
    }

    #[test]
    fn matches_exact_diagonalization() {
        let cases = [
            ModelSpec::finite(Decay::Exponential, 8, 1.0, 1.0, 1.0, 1.0),
            ModelSpec::finite(Decay::PowerLaw, 10, 0.5, 1.0, 1.0, 1.0),
        ];
        for spec in cases {
            let res = fdmrg_ground(&Mpo::build(&spec).unwrap(), &small_cfg()).unwrap();
            let ed = ed_ground(&spec).unwrap();
            assert!(res.converged);
            assert!(relative_change(res.energy, ed.energy) < 1e-9, "{} vs {}", res.energy, ed.energy);
            let v = res.finite_state().unwrap().to_dense();
            let h = hamiltonian_sparse(&spec).unwrap();
            assert!(energy_variance(&h, &v) <= 1e-6 * ed.energy * ed.energy);
        }
    }

    #[test]
    fn energy_history_descends() {
        let spec = ModelSpec::finite(Decay::PowerLaw, 12, 0.8, 0.7, 1.0, 0.6);
        let cfg = DmrgConfig { chi_max: 8, ..small_cfg() };
        let res = fdmrg_ground(&Mpo::build(&spec).unwrap(), &cfg).unwrap();
        for w in res.energy_history.windows(2).zip(res.truncation_history.iter().skip(1)) {
            let ((prev, next), trunc) = ((w.0[0], w.0[1]), *w.1);
            assert!(next <= prev + 10.0 * trunc * next.abs() + 1e-12, "{prev} -> {next}");
        }
    }

    #[test]
    fn seed_independence() {
        let spec = ModelSpec::finite(Decay::Exponential, 10, 0.5, 0.8, 1.0, 0.7);
        let mpo = Mpo::build(&spec).unwrap();
        let a = fdmrg_ground(&mpo, &small_cfg().with_seed(1)).unwrap();
        let b = fdmrg_ground(&mpo, &small_cfg().with_seed(99)).unwrap();
        assert!((a.energy - b.energy).abs() <= 10.0 * 1e-10 * a.energy.abs());
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = ModelSpec::finite(Decay::PowerLaw, 8, 0.3, 1.0, 1.0, 0.5);
        let mpo = Mpo::build(&spec).unwrap();
        let a = fdmrg_ground(&mpo, &small_cfg()).unwrap();
        let b = fdmrg_ground(&mpo, &small_cfg()).unwrap();
        assert_eq!(a.energy.to_bits(), b.energy.to_bits());
        assert_eq!(a.finite_state().unwrap(), b.finite_state().unwrap());
    }

    #[test]
    fn zero_field_is_pinned_up() {
        let spec = ModelSpec::finite(Decay::Exponential, 8, 1.0, -0.8, 1.0, 0.0);
        let res = fdmrg_ground(&Mpo::build(&spec).unwrap(), &small_cfg()).unwrap();
        assert_eq!(res.pinning, Some(1e-6));
        let rho = res.finite_state().unwrap().single_site_rdm(4).unwrap();
        assert!((rho.entries()[[0, 0]].re - 1.0).abs() < 1e-8);
    }

    #[test]
    fn warm_start_reuses_state() {
        let spec = ModelSpec::finite(Decay::Exponential, 10, 1.0, 1.0, 1.0, 1.0);
        let mpo = Mpo::build(&spec).unwrap();
        let cold = fdmrg_ground(&mpo, &small_cfg()).unwrap();
        let warm = fdmrg_ground_from(&mpo, &small_cfg(), cold.finite_state()).unwrap();
        assert!(warm.sweeps_used <= 3);
        assert!(relative_change(warm.energy, cold.energy) < 1e-10);
        let short = Mps::all_up(4).unwrap();
        assert!(fdmrg_ground_from(&mpo, &small_cfg(), Some(&short)).is_err());
    }

    #[test]
    fn infinite_field_only() {
        let spec = ModelSpec::infinite(1.0, 0.0, 0.0, 4.0);
        let res = idmrg_ground(&spec, &small_cfg()).unwrap();
        assert!(res.converged);
        assert!((res.energy + 2.0).abs() < 1e-10);
    }

    #[test]
    fn infinite_rejects_power_law() {
        let mut spec = ModelSpec::infinite(1.0, 1.0, 1.0, 1.0);
        spec.decay = Decay::PowerLaw;
        assert!(idmrg_ground(&spec, &small_cfg()).is_err());
        let finite = ModelSpec::finite(Decay::Exponential, 8, 1.0, 1.0, 1.0, 1.0);
        assert!(idmrg_ground(&finite, &small_cfg()).is_err());
    }

    #[test]
    fn site_energies_sum_to_total() {
        let spec = ModelSpec::finite(Decay::PowerLaw, 8, 0.7, 0.9, 1.1, 0.4);
        let res = fdmrg_ground(&Mpo::build(&spec).unwrap(), &small_cfg()).unwrap();
        let psi = res.finite_state().unwrap();
        let total: f64 = (0..8).map(|k| site_energy(psi, &spec, k).unwrap()).sum();
        assert!((total - res.energy).abs() < 1e-9);
    }
}
