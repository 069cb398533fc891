//! Exact diagonalization for short chains.
//!
//! The Hamiltonian is assembled term by term: every pair `(i, j)` contributes
//! its 4×4 block embedded on the two sites, every site its field term. None of
//! the MPO machinery is involved, so the two constructions check each other.

use crate::linalg::{eigh_real, lanczos_lowest, random_unit_vector, vec_norm, C64, LinalgError, ZERO};
use crate::mpo::{spin, ChainLength, ModelSpec, Op2};
use crate::mps::{dense_single_site_rdm, dense_two_site_rdm, DensityMatrix, MpsError};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest chain the oracle accepts.
pub const MAX_SITES: usize = 14;
/// Chains up to this size are diagonalized densely.
pub const DENSE_SITES: usize = 8;
/// Gap below which the ground state is reported as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EdError {
    #[error("exact diagonalization is limited to {MAX_SITES} sites, got {0}")]
    TooLarge(usize),
    #[error("exact diagonalization needs a finite chain")]
    Infinite,
    #[error("invalid model: {0}")]
    Model(#[from] crate::mpo::ModelError),
    #[error("residual check failed: |Hv - Ev| = {residual:e}, bound {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Mps(#[from] MpsError),
}

/// Compressed-row sparse Hermitian matrix.
#[derive(Clone, Debug)]
pub struct SparseHamiltonian {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        let mut out = Array1::<C64>::zeros(self.dim);
        for (row, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.indptr[row]..self.indptr[row + 1] {
                acc += self.values[k] * v[self.indices[k]];
            }
            *o = acc;
        }
        out
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::<C64>::zeros((self.dim, self.dim));
        for row in 0..self.dim {
            for k in self.indptr[row]..self.indptr[row + 1] {
                m[[row, self.indices[k]]] += self.values[k];
            }
        }
        m
    }

    /// Upper bound on the spectral norm (largest absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .map(|row| (self.indptr[row]..self.indptr[row + 1]).map(|k| self.values[k].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn pair_block(j_xy: f64, j_z: f64, weight: f64) -> [[C64; 4]; 4] {
    let mut block = [[ZERO; 4]; 4];
    let terms: [(&Op2, f64); 3] = [(&spin::SX, j_xy), (&spin::SY, j_xy), (&spin::SZ, -j_z)];
    for (op, c) in terms {
        for a in 0..2 {
            for b in 0..2 {
                for cc in 0..2 {
                    for d in 0..2 {
                        block[a * 2 + cc][b * 2 + d] += op[a][b] * op[cc][d] * (c * weight);
                    }
                }
            }
        }
    }
    block
}

/// Unit-weight pair operator `J_xy(SxSx + SySy) − J_z SzSz` as a 4×4 matrix.
pub fn pair_block_matrix(j_xy: f64, j_z: f64) -> Array2<C64> {
    let b = pair_block(j_xy, j_z, 1.0);
    Array2::from_shape_fn((4, 4), |(i, j)| b[i][j])
}

/// Assembles the sparse Hamiltonian of a finite chain.
pub fn hamiltonian_sparse(spec: &ModelSpec) -> Result<SparseHamiltonian, EdError> {
    spec.validate()?;
    let n = match spec.length {
        ChainLength::Finite(n) => n,
        ChainLength::Infinite => return Err(EdError::Infinite),
    };
    if n > MAX_SITES {
        return Err(EdError::TooLarge(n));
    }
    let dim = 1usize << n;
    let shift = |site: usize| n - 1 - site;

    let mut pairs: Vec<(usize, usize, [[C64; 4]; 4])> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let f = spec.coupling(j - i);
            if f != 0.0 {
                pairs.push((i, j, pair_block(spec.j_xy, spec.j_z, f)));
            }
        }
    }
    let field = spin::scaled(&spin::SX, spec.h_x);

    let mut indptr = Vec::with_capacity(dim + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut row: Vec<(usize, C64)> = Vec::new();
    indptr.push(0);
    for x in 0..dim {
        row.clear();
        // Row x of H: entries <x|H|y>. Blocks are [out][in]; x is the output.
        for (i, j, block) in &pairs {
            let (si, sj) = (shift(*i), shift(*j));
            let out = (((x >> si) & 1) << 1) | ((x >> sj) & 1);
            let rest = x & !((1 << si) | (1 << sj));
            for (inp, &c) in block[out].iter().enumerate() {
                if c != ZERO {
                    let y = rest | ((inp >> 1) << si) | ((inp & 1) << sj);
                    row.push((y, c));
                }
            }
        }
        if spec.h_x != 0.0 {
            for site in 0..n {
                let s = shift(site);
                let out = (x >> s) & 1;
                for (inp, &c) in field[out].iter().enumerate() {
                    if c != ZERO {
                        row.push(((x & !(1 << s)) | (inp << s), c));
                    }
                }
            }
        }
        row.sort_by_key(|&(col, _)| col);
        let mut k = 0;
        while k < row.len() {
            let col = row[k].0;
            let mut acc = ZERO;
            while k < row.len() && row[k].0 == col {
                acc += row[k].1;
                k += 1;
            }
            if acc != ZERO {
                indices.push(col);
                values.push(acc);
            }
        }
        indptr.push(indices.len());
    }
    Ok(SparseHamiltonian { dim, indptr, indices, values })
}

/// Dense Hamiltonian, built by the same term loop.
pub fn hamiltonian_dense(spec: &ModelSpec) -> Result<Array2<C64>, EdError> {
    Ok(hamiltonian_sparse(spec)?.to_dense())
}

#[derive(Clone, Debug)]
pub struct DenseGroundState {
    pub n: usize,
    pub energy: f64,
    pub vector: Array1<C64>,
    pub gap: f64,
    pub degenerate: bool,
}

impl DenseGroundState {
    /// Wraps a given unit vector, e.g. a hand-built test state.
    pub fn from_vector(n: usize, vector: Array1<C64>, energy: f64) -> Result<Self, EdError> {
        if vector.len() != 1usize << n {
            return Err(MpsError::DenseLength { len: vector.len(), n }.into());
        }
        let nrm = vec_norm(vector.view());
        Ok(Self { n, energy, vector: vector / C64::new(nrm, 0.0), gap: f64::NAN, degenerate: false })
    }
}

/// Lowest eigenpair and gap of a finite chain with at most [`MAX_SITES`] sites.
pub fn ed_ground(spec: &ModelSpec) -> Result<DenseGroundState, EdError> {
    let h = hamiltonian_sparse(spec)?;
    let n = spec.n_sites().expect("finite, checked by hamiltonian_sparse");
    let hnorm = h.norm_bound().max(f64::MIN_POSITIVE);
    let (energy, vector, second) = if n <= DENSE_SITES {
        dense_lowest_two(&h)?
    } else {
        iterative_lowest_two(&h, hnorm)?
    };
    let residual = {
        let hv = h.apply(&vector);
        vec_norm((&hv - &vector.mapv(|z| z * energy)).view())
    };
    let bound = 1e-9 * hnorm;
    if residual > bound {
        return Err(EdError::Residual { residual, bound });
    }
    let gap = second - energy;
    Ok(DenseGroundState { n, energy, vector, gap, degenerate: gap < DEGENERACY_GAP })
}

fn dense_lowest_two(h: &SparseHamiltonian) -> Result<(f64, Array1<C64>, f64), EdError> {
    let dense = h.to_dense();
    let real_valued = dense.iter().all(|z| z.im == 0.0);
    if real_valued {
        let (vals, vecs) = eigh_real(&dense.mapv(|z| z.re))?;
        let v = vecs.column(0).mapv(|x| C64::new(x, 0.0));
        let second = if vals.len() > 1 { vals[1] } else { f64::INFINITY };
        Ok((vals[0], v, second))
    } else {
        let (vals, vecs) = crate::linalg::eigh_hermitian(&dense)?;
        let second = if vals.len() > 1 { vals[1] } else { f64::INFINITY };
        Ok((vals[0], vecs.column(0).to_owned(), second))
    }
}

fn iterative_lowest_two(h: &SparseHamiltonian, hnorm: f64) -> Result<(f64, Array1<C64>, f64), EdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ed0);
    let tol = 1e-12;
    let max_iter = 20_000;
    let v0 = random_unit_vector(h.dim(), &mut rng);
    let ground = lanczos_lowest(|v| h.apply(v), &v0, tol, max_iter)?;
    let g = ground.eigenvector.clone();
    // Lift the ground state out of the way and find the next level.
    let lift = C64::new(4.0 * hnorm + 1.0, 0.0);
    let deflated = |v: &Array1<C64>| {
        let mut out = h.apply(v);
        let ov: C64 = g.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
        out.scaled_add(lift * ov, &g);
        out
    };
    let v1 = random_unit_vector(h.dim(), &mut rng);
    let second = lanczos_lowest(deflated, &v1, tol, max_iter)?;
    Ok((ground.eigenvalue, ground.eigenvector, second.eigenvalue))
}

/// Exact two-site reduced state of the ground vector; site `i` is the first factor.
pub fn ed_rdm(gs: &DenseGroundState, i: usize, j: usize) -> Result<DensityMatrix, EdError> {
    Ok(dense_two_site_rdm(&gs.vector, gs.n, i, j)?)
}

pub fn ed_single_site_rdm(gs: &DenseGroundState, i: usize) -> Result<DensityMatrix, EdError> {
    Ok(dense_single_site_rdm(&gs.vector, gs.n, i)?)
}

/// `⟨v|H²|v⟩ − ⟨v|H|v⟩²` for a unit vector.
pub fn energy_variance(h: &SparseHamiltonian, v: &Array1<C64>) -> f64 {
    let hv = h.apply(v);
    let e: C64 = v.iter().zip(hv.iter()).map(|(a, b)| a.conj() * b).sum();
    let h2: f64 = hv.iter().map(|z| z.norm_sqr()).sum();
    h2 - e.re * e.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::kron;
    use crate::mpo::{Decay, Mpo};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn spec(decay: Decay, n: usize, alpha: f64, j_xy: f64, j_z: f64, h: f64) -> ModelSpec {
        ModelSpec::finite(decay, n, alpha, j_xy, j_z, h)
    }

    #[test]
    fn two_free_spins_in_a_field() {
        let gs = ed_ground(&spec(Decay::Exponential, 2, 1.0, 0.0, 0.0, 2.0)).unwrap();
        assert!((gs.energy + 2.0).abs() < 1e-12);
        let minus = ndarray::array![C64::new(FRAC_1_SQRT_2, 0.0), C64::new(-FRAC_1_SQRT_2, 0.0)];
        let expected = kron(&minus.clone().insert_axis(ndarray::Axis(1)), &minus.insert_axis(ndarray::Axis(1)));
        let expected = expected.column(0).to_owned();
        assert!(crate::mps::phase_distance(&gs.vector, &expected) < 1e-10);
        assert!(!gs.degenerate);
    }

    #[test]
    fn two_site_xxz_degenerate_pair() {
        let gs = ed_ground(&spec(Decay::Exponential, 2, 1.0, 1.0, 1.0, 0.0)).unwrap();
        assert!((gs.energy + 0.25).abs() < 1e-12);
        assert!(gs.degenerate);
    }

    #[test]
    fn hand_diagonalized_two_site_spectrum() {
        // Parallel spins sit at −J_z/4; the antiparallel block splits to J_z/4 ± J_xy/2.
        let (jxy, jz) = (0.7, -1.3);
        let h = hamiltonian_dense(&spec(Decay::Exponential, 2, 0.0, jxy, jz, 0.0)).unwrap();
        let (vals, _) = crate::linalg::eigh_hermitian(&h).unwrap();
        let mut expected = vec![-jz / 4.0, -jz / 4.0, jz / 4.0 + jxy / 2.0, jz / 4.0 - jxy / 2.0];
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in vals.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn product_ground_state_is_pure_on_pairs() {
        let gs = ed_ground(&spec(Decay::PowerLaw, 6, 1.0, 0.0, 0.0, 1.5)).unwrap();
        let rho = ed_rdm(&gs, 1, 4).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ghz_vector_rdm() {
        let n = 5;
        let mut v = Array1::<C64>::zeros(1 << n);
        v[0] = C64::new(1.0, 0.0);
        v[(1 << n) - 1] = C64::new(1.0, 0.0);
        let gs = DenseGroundState::from_vector(n, v, 0.0).unwrap();
        for (i, j) in [(0, 1), (0, 4), (2, 3)] {
            let rho = ed_rdm(&gs, i, j).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    let want = if a == b && (a == 0 || a == 3) { 0.5 } else { 0.0 };
                    assert!((rho.entries()[[a, b]].re - want).abs() < 1e-14);
                }
            }
        }
        assert!(ed_rdm(&gs, 3, 3).is_err());
        assert!(ed_rdm(&gs, 2, 5).is_err());
    }

    #[test]
    fn size_refusal() {
        assert!(matches!(ed_ground(&spec(Decay::Exponential, 15, 1.0, 1.0, 1.0, 1.0)), Err(EdError::TooLarge(15))));
        assert!(matches!(ed_ground(&ModelSpec::infinite(1.0, 1.0, 1.0, 1.0)), Err(EdError::Infinite)));
    }

    #[test]
    fn reflection_symmetry() {
        // Reversing the chain permutes basis states; the energy must not move.
        for decay in [Decay::Exponential, Decay::PowerLaw] {
            let s = spec(decay, 7, 0.6, 0.8, 1.1, 0.7);
            let h = hamiltonian_sparse(&s).unwrap();
            let gs = ed_ground(&s).unwrap();
            let n = 7;
            let reversed: Array1<C64> = (0..1usize << n)
                .map(|x| {
                    let r = (0..n).fold(0, |acc, k| acc | (((x >> k) & 1) << (n - 1 - k)));
                    gs.vector[r]
                })
                .collect();
            let e: C64 = reversed.iter().zip(h.apply(&reversed).iter()).map(|(a, b)| a.conj() * b).sum();
            assert!((e.re - gs.energy).abs() < 1e-10);
        }
    }

    #[test]
    fn steep_exponential_matches_nearest_neighbour() {
        let far = ed_ground(&spec(Decay::Exponential, 8, 40.0, 0.9, 1.0, 0.8)).unwrap();
        let nn = ed_ground(&spec(Decay::NearestNeighbor, 8, 0.0, 0.9, 1.0, 0.8)).unwrap();
        assert!((far.energy - nn.energy).abs() < 1e-9);
    }

    #[test]
    fn iterative_path_agrees_with_dense() {
        let s = spec(Decay::PowerLaw, 10, 0.3, 1.0, 1.0, 10.0);
        let gs = ed_ground(&s).unwrap();
        let h = hamiltonian_sparse(&s).unwrap();
        let (vals, _) = eigh_real(&h.to_dense().mapv(|z| z.re)).unwrap();
        assert!((gs.energy - vals[0]).abs() < 1e-9 * vals[0].abs());
        assert!((gs.gap - (vals[1] - vals[0])).abs() < 1e-7);
        assert!(energy_variance(&h, &gs.vector) < 1e-12 * vals[0].powi(2));
    }

    #[test]
    fn xxz_lanczos_matches_dense_eigensolver() {
        let s = spec(Decay::NearestNeighbor, 8, 0.0, 1.0, 0.5, 0.3);
        let h = hamiltonian_sparse(&s).unwrap();
        let (vals, _) = eigh_real(&h.to_dense().mapv(|z| z.re)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v0 = random_unit_vector(h.dim(), &mut rng);
        let out = lanczos_lowest(|v| h.apply(v), &v0, 1e-12, 5000).unwrap();
        assert!((out.eigenvalue - vals[0]).abs() < 1e-10);
    }

    #[test]
    fn oracle_agrees_with_mpo_contraction() {
        for decay in [Decay::Exponential, Decay::PowerLaw, Decay::Uniform, Decay::NearestNeighbor] {
            for n in 3..=7 {
                let s = spec(decay, n, 0.45, -0.8, 1.3, 0.6);
                let a = hamiltonian_dense(&s).unwrap();
                let b = Mpo::build(&s).unwrap().to_dense().unwrap();
                let diff = (&a - &b).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "{decay:?} n={n} diff {diff}");
            }
        }
    }

    #[test]
    fn sparse_matrix_is_hermitian() {
        let h = hamiltonian_dense(&spec(Decay::PowerLaw, 6, 0.8, 0.5, -0.4, 1.2)).unwrap();
        let diff = (&h - &crate::linalg::dagger(&h)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-15);
    }
}
