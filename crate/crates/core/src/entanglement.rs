//! Two-qubit entanglement measures and distance profiles over ground states.
//!
//! Concurrence uses the spin-flipped state `ρ̃ = (σy⊗σy) ρ* (σy⊗σy)` with the
//! complex conjugate taken entrywise in the S_z product basis.

use crate::dmrg::GroundState;
use crate::ed::{ed_rdm, DenseGroundState};
use crate::exec::map_ordered;
use crate::linalg::{eigh_hermitian, svd_truncate, LinalgError, C64};
use crate::mps::{DensityMatrix, InfiniteMps, Mps, MpsError, RdmLadder};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default precision below which a concurrence counts as zero when locating ξ.
pub const DEFAULT_THRESHOLD: f64 = 1e-9;
/// Relative spread across pairs above which a profile point is flagged.
pub const CONTAMINATION_RATIO: f64 = 1e-3;
pub const CKW_TOLERANCE: f64 = 1e-8;
pub const KBI_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EntanglementError {
    #[error("density matrix has eigenvalue {0:e}, below the validity floor")]
    NegativeEigenvalue(f64),
    #[error("expected a {expected}x{expected} density matrix, got {got}x{got}")]
    Dimension { expected: usize, got: usize },
    #[error("profile window: {0}")]
    Window(String),
    #[error(transparent)]
    Mps(#[from] MpsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Spectrum clipping: values above `-CLIP` are treated as zero, values below
/// `-INVALID` are rejected.
const CLIP: f64 = 1e-12;
const INVALID: f64 = 1e-8;

fn psd_sqrt(m: &Array2<C64>) -> Result<Array2<C64>, EntanglementError> {
    let (vals, vecs) = eigh_hermitian(m)?;
    let mut out = Array2::<C64>::zeros(m.dim());
    for (k, &v) in vals.iter().enumerate() {
        if v < -INVALID {
            return Err(EntanglementError::NegativeEigenvalue(v));
        }
        let root = if v > -CLIP { v.max(0.0).sqrt() } else { 0.0 };
        if root == 0.0 {
            continue;
        }
        let col = vecs.column(k);
        for a in 0..m.nrows() {
            for b in 0..m.ncols() {
                out[[a, b]] += col[a] * col[b].conj() * root;
            }
        }
    }
    Ok(out)
}

/// `(σy⊗σy) m* (σy⊗σy)`. In the (↑↑, ↑↓, ↓↑, ↓↓) basis σy⊗σy is the real
/// anti-diagonal matrix with signs (−1, +1, +1, −1).
fn spin_flip(m: &Array2<C64>) -> Array2<C64> {
    let sign = [-1.0, 1.0, 1.0, -1.0];
    Array2::from_shape_fn((4, 4), |(a, b)| m[[3 - a, 3 - b]].conj() * (sign[3 - a] * sign[3 - b]))
}

/// Square roots of the eigenvalues of `ρ ρ̃`, descending.
///
/// They are the singular values of `√ρ √ρ̃`, since `√ρ ρ̃ √ρ = (√ρ √ρ̃)(√ρ √ρ̃)†`.
pub fn wootters_roots(rho: &DensityMatrix) -> Result<[f64; 4], EntanglementError> {
    if rho.dim() != 4 {
        return Err(EntanglementError::Dimension { expected: 4, got: rho.dim() });
    }
    let sq = psd_sqrt(rho.entries())?;
    let sq_tilde = spin_flip(&sq);
    let b = sq.dot(&sq_tilde);
    let (_, s, _, _) = svd_truncate(b.view(), 4, 0.0)?;
    let mut roots = [0.0; 4];
    for (k, v) in s.iter().enumerate().take(4) {
        roots[k] = *v;
    }
    roots.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    Ok(roots)
}

/// Wootters concurrence of a two-qubit state, in `[0, 1]`.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64, EntanglementError> {
    let r = wootters_roots(rho)?;
    Ok((r[0] - r[1] - r[2] - r[3]).clamp(0.0, 1.0))
}

pub fn two_tangle(rho: &DensityMatrix) -> Result<f64, EntanglementError> {
    Ok(concurrence(rho)?.powi(2))
}

/// Linear entropy `2(1 − Tr ρ²)` of a single qubit.
pub fn one_tangle(rho: &DensityMatrix) -> Result<f64, EntanglementError> {
    if rho.dim() != 2 {
        return Err(EntanglementError::Dimension { expected: 2, got: rho.dim() });
    }
    Ok((2.0 * (1.0 - rho.purity())).clamp(0.0, 1.0))
}

/// How finite-chain pairs are chosen for each distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    /// Every retained pair at distance `d`, averaged.
    #[default]
    Interior,
    /// The single pair centred on the chain's midpoint.
    Central,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    FiniteInterior,
    FiniteCentral,
    InfiniteBulk,
}

impl ProfileSource {
    pub fn label(&self) -> &'static str {
        match self {
            ProfileSource::FiniteInterior => "finite_interior",
            ProfileSource::FiniteCentral => "finite_central",
            ProfileSource::InfiniteBulk => "infinite_bulk",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcurrenceProfile {
    pub distances: Vec<usize>,
    pub values: Vec<f64>,
    /// Max minus min over the pairs averaged at each distance.
    pub spread: Vec<f64>,
    pub n_pairs: Vec<usize>,
    pub source: ProfileSource,
    pub n_discarded_boundary: usize,
    pub threshold: f64,
    /// Largest pair-to-pair spread among points whose mean is below the
    /// threshold; a measured estimate of the numerical floor of `C_d`.
    pub noise_floor: f64,
}

impl ConcurrenceProfile {
    /// Builds a profile from given values, e.g. for synthetic data.
    pub fn from_values(values: Vec<f64>, threshold: f64) -> Self {
        let n = values.len();
        Self {
            distances: (1..=n).collect(),
            values,
            spread: vec![0.0; n],
            n_pairs: vec![1; n],
            source: ProfileSource::InfiniteBulk,
            n_discarded_boundary: 0,
            threshold,
            noise_floor: 0.0,
        }
    }

    /// Points whose pair spread exceeds the contamination ratio of the mean.
    pub fn contaminated(&self) -> Vec<bool> {
        self.values
            .iter()
            .zip(&self.spread)
            .map(|(&v, &s)| s > CONTAMINATION_RATIO * v.abs() && s > 0.0)
            .collect()
    }

    pub fn two_tangles(&self) -> Vec<f64> {
        self.values.iter().map(|c| c * c).collect()
    }

    pub fn value_at(&self, d: usize) -> Option<f64> {
        self.distances.iter().position(|&x| x == d).map(|k| self.values[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileOptions {
    pub d_max: usize,
    pub discard: usize,
    pub threshold: f64,
    pub pairs: PairPolicy,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { d_max: 20, discard: 0, threshold: DEFAULT_THRESHOLD, pairs: PairPolicy::Interior }
    }
}

/// `C_d` for `d = 1..=d_max` over a finite or infinite ground state.
pub fn profile(gs: &GroundState, opts: &ProfileOptions, workers: usize) -> Result<ConcurrenceProfile, EntanglementError> {
    match gs {
        GroundState::Finite(psi) => profile_finite(psi, opts, workers),
        GroundState::Infinite(psi) => profile_infinite(psi, opts),
    }
}

fn summarize(per_d: Vec<Vec<f64>>, threshold: f64) -> (Vec<f64>, Vec<f64>, Vec<usize>, f64) {
    let mut values = Vec::new();
    let mut spread = Vec::new();
    let mut counts = Vec::new();
    let mut floor = 0.0f64;
    for cs in per_d {
        let mean = cs.iter().sum::<f64>() / cs.len() as f64;
        let hi = cs.iter().copied().fold(f64::MIN, f64::max);
        let lo = cs.iter().copied().fold(f64::MAX, f64::min);
        let s = if cs.len() > 1 { hi - lo } else { 0.0 };
        if mean < threshold {
            floor = floor.max(s).max(hi.max(0.0));
        }
        values.push(mean);
        spread.push(s);
        counts.push(cs.len());
    }
    (values, spread, counts, floor)
}

pub fn profile_finite(psi: &Mps, opts: &ProfileOptions, workers: usize) -> Result<ConcurrenceProfile, EntanglementError> {
    let (first, last) = check_window(psi.len(), opts)?;
    let d_max = opts.d_max;
    let ladder = psi.ladder()?;
    let per_d: Vec<Vec<f64>> = match opts.pairs {
        PairPolicy::Interior => {
            let starts: Vec<usize> = (first..last).collect();
            let rows = map_ordered(&starts, workers, |&i| row_concurrences(&ladder, i, d_max.min(last - i)));
            let mut per_d = vec![Vec::new(); d_max];
            for row in rows {
                for (k, c) in row?.into_iter().enumerate() {
                    per_d[k].push(c);
                }
            }
            per_d
        }
        PairPolicy::Central => {
            let ds: Vec<usize> = (1..=d_max).collect();
            let cs = map_ordered(&ds, workers, |&d| {
                let i = (first + last - d) / 2;
                ladder.two_site(i, i + d).map_err(EntanglementError::from).and_then(|r| concurrence(&r))
            });
            cs.into_iter().map(|c| c.map(|c| vec![c])).collect::<Result<_, _>>()?
        }
    };
    Ok(assemble(per_d, opts, source_of(opts.pairs)))
}

/// Same window and pair policy as [`profile_finite`], for an exact ground state.
pub fn profile_dense(gs: &DenseGroundState, opts: &ProfileOptions) -> Result<ConcurrenceProfile, EntanglementError> {
    let n = gs.n;
    let (first, last) = check_window(n, opts)?;
    let pair = |i: usize, j: usize| -> Result<f64, EntanglementError> {
        let rho = ed_rdm(gs, i, j).map_err(|e| EntanglementError::Window(e.to_string()))?;
        concurrence(&rho)
    };
    let mut per_d = Vec::with_capacity(opts.d_max);
    for d in 1..=opts.d_max {
        let cs = match opts.pairs {
            PairPolicy::Interior => (first..=last - d).map(|i| pair(i, i + d)).collect::<Result<Vec<_>, _>>()?,
            PairPolicy::Central => {
                let i = (first + last - d) / 2;
                vec![pair(i, i + d)?]
            }
        };
        per_d.push(cs);
    }
    Ok(assemble(per_d, opts, source_of(opts.pairs)))
}

fn source_of(pairs: PairPolicy) -> ProfileSource {
    match pairs {
        PairPolicy::Interior => ProfileSource::FiniteInterior,
        PairPolicy::Central => ProfileSource::FiniteCentral,
    }
}

fn check_window(n: usize, opts: &ProfileOptions) -> Result<(usize, usize), EntanglementError> {
    let (d_max, discard) = (opts.d_max, opts.discard);
    if d_max == 0 {
        return Err(EntanglementError::Window("d_max must be at least 1".into()));
    }
    if 2 * discard + d_max + 1 > n {
        return Err(EntanglementError::Window(format!(
            "need 2*discard + d_max + 1 <= N, got 2*{discard} + {d_max} + 1 > {n}"
        )));
    }
    Ok((discard, n - 1 - discard))
}

fn assemble(per_d: Vec<Vec<f64>>, opts: &ProfileOptions, source: ProfileSource) -> ConcurrenceProfile {
    let (values, spread, n_pairs, noise_floor) = summarize(per_d, opts.threshold);
    ConcurrenceProfile {
        distances: (1..=values.len()).collect(),
        values,
        spread,
        n_pairs,
        source,
        n_discarded_boundary: if source == ProfileSource::InfiniteBulk { 0 } else { opts.discard },
        threshold: opts.threshold,
        noise_floor,
    }
}

fn row_concurrences(ladder: &RdmLadder, i: usize, d: usize) -> Result<Vec<f64>, EntanglementError> {
    ladder.row(i, d)?.iter().map(concurrence).collect()
}

/// Bulk profile of an infinite state, averaged over both cell sublattices.
pub fn profile_infinite(psi: &InfiniteMps, opts: &ProfileOptions) -> Result<ConcurrenceProfile, EntanglementError> {
    if opts.d_max == 0 {
        return Err(EntanglementError::Window("d_max must be at least 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..2)
        .map(|i| psi.row(i, opts.d_max)?.iter().map(concurrence).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, EntanglementError>>()?;
    let per_d = (0..opts.d_max).map(|k| vec![rows[0][k], rows[1][k]]).collect();
    Ok(assemble(per_d, opts, ProfileSource::InfiniteBulk))
}

/// Largest `d` with `C_d ≥ threshold`, or 0.
pub fn truncation_length(p: &ConcurrenceProfile) -> usize {
    p.distances
        .iter()
        .zip(&p.values)
        .filter(|(_, &c)| c >= p.threshold)
        .map(|(&d, _)| d)
        .max()
        .unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalsRecord {
    /// Chain length, or for infinite chains the number of distances summed.
    pub n: usize,
    pub total_concurrence: f64,
    pub total_two_tangle: f64,
    pub xi: usize,
    pub c1: f64,
    /// Number of distances that entered the sums.
    pub distance_count: usize,
}

/// Sums of `C_d` and `C_d²`; infinite profiles are summed up to ξ.
pub fn totals(p: &ConcurrenceProfile, n: Option<usize>) -> TotalsRecord {
    let xi = truncation_length(p);
    let cap = match p.source {
        ProfileSource::InfiniteBulk => xi,
        _ => usize::MAX,
    };
    let used: Vec<f64> = p.distances.iter().zip(&p.values).filter(|(&d, _)| d <= cap).map(|(_, &c)| c).collect();
    let total_concurrence = used.iter().sum::<f64>() + 0.0;
    let total_two_tangle = used.iter().map(|c| c * c).sum::<f64>() + 0.0;
    TotalsRecord {
        n: n.unwrap_or(used.len()),
        total_concurrence,
        total_two_tangle,
        xi,
        c1: p.value_at(1).unwrap_or(0.0),
        distance_count: used.len(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonogamyReport {
    /// `one_tangle(ρ_i) − Σ_j τ(ρ_ij)` per site.
    pub ckw_margins: Vec<f64>,
    /// Whether every pair is entangled, making the KBI bound applicable.
    pub fully_connected: bool,
    /// `2/N − max C_ij` when applicable.
    pub kbi_margin: Option<f64>,
    pub violations: Vec<String>,
}

impl MonogamyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn min_ckw_margin(&self) -> f64 {
        self.ckw_margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// CKW and KBI checks over every site and pair of a finite pure state.
pub fn monogamy_checks(psi: &Mps) -> Result<MonogamyReport, EntanglementError> {
    let n = psi.len();
    let ladder = psi.ladder()?;
    let c = pair_concurrences(psi)?;
    let mut violations = Vec::new();
    let mut ckw_margins = Vec::with_capacity(n);
    for i in 0..n {
        let tau1 = one_tangle(&ladder.single_site(i)?)?;
        let sum = (0..n).filter(|&j| j != i).fold(0.0, |acc, j| acc + c[[i, j]].powi(2));
        let margin = tau1 - sum;
        if margin < -CKW_TOLERANCE {
            violations.push(format!("CKW violated at site {i}: margin {margin:e}"));
        }
        ckw_margins.push(margin);
    }
    let fully_connected = (0..n).all(|i| (0..n).all(|j| i == j || c[[i, j]] > 0.0));
    let kbi_margin = fully_connected.then(|| {
        let max = c.iter().copied().fold(0.0, f64::max);
        2.0 / n as f64 - max
    });
    if let Some(m) = kbi_margin {
        if m < -KBI_TOLERANCE {
            violations.push(format!("KBI bound violated: margin {m:e}"));
        }
    }
    Ok(MonogamyReport { ckw_margins, fully_connected, kbi_margin, violations })
}

/// Concurrence matrix `C_ij` for all pairs of a finite state.
pub fn pair_concurrences(psi: &Mps) -> Result<Array2<f64>, EntanglementError> {
    let n = psi.len();
    let ladder = psi.ladder()?;
    let mut c = Array2::<f64>::zeros((n, n));
    for i in 0..n - 1 {
        for (k, rho) in ladder.row(i, n - 1 - i)?.iter().enumerate() {
            let v = concurrence(rho)?;
            c[[i, i + 1 + k]] = v;
            c[[i + 1 + k, i]] = v;
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{kron, random_unitary, random_unit_vector};
    use ndarray::{array, Array1};
    use ndarray_linalg::Eig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn bell() -> DensityMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        DensityMatrix::pure(&array![c(h), c(0.0), c(0.0), c(h)]).unwrap()
    }

    fn werner(p: f64) -> DensityMatrix {
        let phi = bell();
        let m = phi.entries().mapv(|z| z * p) + Array2::<C64>::eye(4).mapv(|z| z * ((1.0 - p) / 4.0));
        DensityMatrix::new(m).unwrap()
    }

    /// Independent route: eigenvalues of the non-Hermitian product ρρ̃.
    fn concurrence_via_eig(rho: &DensityMatrix) -> f64 {
        let yy = array![
            [c(0.0), c(0.0), c(0.0), c(-1.0)],
            [c(0.0), c(0.0), c(1.0), c(0.0)],
            [c(0.0), c(1.0), c(0.0), c(0.0)],
            [c(-1.0), c(0.0), c(0.0), c(0.0)]
        ];
        let r = rho.entries().dot(&yy.dot(&rho.entries().mapv(|z| z.conj())).dot(&yy));
        let (vals, _) = r.eig().unwrap();
        let mut roots: Vec<f64> = vals.iter().map(|z| z.re.max(0.0).sqrt()).collect();
        roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
        (roots[0] - roots[1] - roots[2] - roots[3]).max(0.0)
    }

    fn random_mixed(seed: u64, rank: usize) -> DensityMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Array2::<C64>::zeros((4, 4));
        for _ in 0..rank {
            let v = random_unit_vector(4, &mut rng);
            for a in 0..4 {
                for b in 0..4 {
                    m[[a, b]] += v[a] * v[b].conj();
                }
            }
        }
        DensityMatrix::from_hermitian_part(m.mapv(|z| z / rank as f64)).unwrap()
    }

    #[test]
    fn bell_and_product() {
        assert!((concurrence(&bell()).unwrap() - 1.0).abs() < 1e-12);
        assert!((two_tangle(&bell()).unwrap() - 1.0).abs() < 1e-12);
        let a = DensityMatrix::new(array![[c(0.7), C64::new(0.1, 0.2)], [C64::new(0.1, -0.2), c(0.3)]]).unwrap();
        let b = DensityMatrix::new(array![[c(0.4), c(0.0)], [c(0.0), c(0.6)]]).unwrap();
        let prod = DensityMatrix::product(&a, &b).unwrap();
        assert!(concurrence(&prod).unwrap() < 1e-12);
        assert!(two_tangle(&prod).unwrap() < 1e-20);
    }

    #[test]
    fn werner_family() {
        for p in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.8, 1.0] {
            let expected = ((3.0 * p - 1.0) / 2.0f64).max(0.0);
            let got = concurrence(&werner(p)).unwrap();
            assert!((got - expected).abs() < 1e-12, "p={p}: {got} vs {expected}");
        }
        assert!((two_tangle(&werner(0.5)).unwrap() - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn one_tangle_examples() {
        let pure = DensityMatrix::pure(&array![c(0.6), C64::new(0.0, 0.8)]).unwrap();
        assert!(one_tangle(&pure).unwrap().abs() < 1e-12);
        let mixed = DensityMatrix::new(Array2::<C64>::eye(2).mapv(|z| z * 0.5)).unwrap();
        assert!((one_tangle(&mixed).unwrap() - 1.0).abs() < 1e-12);
        let d = DensityMatrix::new(array![[c(0.75), c(0.0)], [c(0.0), c(0.25)]]).unwrap();
        assert!((one_tangle(&d).unwrap() - 0.75).abs() < 1e-12);
        assert!(one_tangle(&bell()).is_err());
        assert!(concurrence(&d).is_err());
    }

    #[test]
    fn agrees_with_non_hermitian_route() {
        for seed in 0..40 {
            let rho = random_mixed(seed, 1 + (seed as usize % 4));
            let a = concurrence(&rho).unwrap();
            let b = concurrence_via_eig(&rho);
            assert!((a - b).abs() < 1e-7, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn truncation_length_examples() {
        let zero = ConcurrenceProfile::from_values(vec![0.0; 10], 1e-9);
        assert_eq!(truncation_length(&zero), 0);
        let exp = ConcurrenceProfile::from_values((1..=40).map(|d| (-(d as f64)).exp()).collect(), 1e-9);
        assert_eq!(truncation_length(&exp), 20);
        let noisy = ConcurrenceProfile::from_values(vec![0.5, 0.0, 2e-9, 0.0], 1e-9);
        assert_eq!(truncation_length(&noisy), 3);
    }

    #[test]
    fn totals_examples() {
        let zero = ConcurrenceProfile::from_values(vec![0.0; 3], 1e-9);
        let t = totals(&zero, Some(4));
        assert_eq!((t.total_concurrence, t.total_two_tangle), (0.0, 0.0));
        let mut p = ConcurrenceProfile::from_values(vec![0.4, 0.2, 0.1], 1e-9);
        p.source = ProfileSource::FiniteInterior;
        let t = totals(&p, Some(4));
        assert!((t.total_concurrence - 0.7).abs() < 1e-15);
        assert!((t.total_two_tangle - 0.21).abs() < 1e-15);
        assert_eq!(t.xi, 3);
        assert_eq!(t.c1, 0.4);
    }

    #[test]
    fn infinite_totals_stop_at_xi() {
        let p = ConcurrenceProfile::from_values(vec![0.4, 0.2, 1e-12, 1e-13], 1e-9);
        let t = totals(&p, None);
        assert_eq!(t.distance_count, 2);
        assert_eq!(t.n, 2);
        assert!((t.total_concurrence - 0.6).abs() < 1e-15);
    }

    #[test]
    fn product_state_profile_is_zero() {
        let psi = Mps::all_up(10).unwrap();
        let opts = ProfileOptions { d_max: 5, discard: 2, ..Default::default() };
        let p = profile_finite(&psi, &opts, 1).unwrap();
        assert!(p.values.iter().all(|&c| c == 0.0));
        assert_eq!(p.n_pairs, vec![5, 4, 3, 2, 1]);
        let too_big = ProfileOptions { d_max: 6, discard: 2, ..Default::default() };
        assert!(matches!(profile_finite(&psi, &too_big, 1), Err(EntanglementError::Window(_))));
    }

    #[test]
    fn ghz_monogamy() {
        let report = monogamy_checks(&Mps::ghz(6).unwrap()).unwrap();
        assert!(report.passed());
        for m in &report.ckw_margins {
            assert!((m - 1.0).abs() < 1e-10);
        }
        assert!(!report.fully_connected);
        let prod = monogamy_checks(&Mps::all_up(5).unwrap()).unwrap();
        assert!(prod.ckw_margins.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn w_state_saturates_kbi() {
        // W state: every pair has concurrence 2/N.
        let n = 5;
        let mut v = Array1::<C64>::zeros(1 << n);
        for k in 0..n {
            v[1 << k] = c(1.0);
        }
        let psi = Mps::from_dense(&v.mapv(|z| z / (n as f64).sqrt()), n).unwrap();
        let report = monogamy_checks(&psi).unwrap();
        assert!(report.fully_connected);
        assert!(report.kbi_margin.unwrap().abs() < 1e-10);
        assert!(report.passed());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn local_unitary_invariance(seed in 0u64..10_000, rank in 1usize..=4) {
            let rho = random_mixed(seed, rank);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let u = kron(&random_unitary(2, &mut rng), &random_unitary(2, &mut rng));
            let rotated = DensityMatrix::from_hermitian_part(u.dot(rho.entries()).dot(&crate::linalg::dagger(&u))).unwrap();
            let a = concurrence(&rho).unwrap();
            let b = concurrence(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }

        #[test]
        fn swap_invariance(seed in 0u64..10_000, rank in 1usize..=4) {
            let rho = random_mixed(seed, rank);
            let perm = [0usize, 2, 1, 3];
            let swapped = Array2::from_shape_fn((4, 4), |(a, b)| rho.entries()[[perm[a], perm[b]]]);
            let swapped = DensityMatrix::new(swapped).unwrap();
            prop_assert!((concurrence(&rho).unwrap() - concurrence(&swapped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn pure_state_concurrence_matches_marginal(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_unit_vector(4, &mut rng);
            let rho = DensityMatrix::pure(&v).unwrap();
            let c2 = two_tangle(&rho).unwrap();
            prop_assert!((c2 - one_tangle(&rho.trace_second().unwrap()).unwrap()).abs() < 1e-10);
            prop_assert!((c2 - one_tangle(&rho.trace_first().unwrap()).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn concurrence_in_unit_interval(seed in 0u64..10_000, rank in 1usize..=4) {
            let c = concurrence(&random_mixed(seed, rank)).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}
