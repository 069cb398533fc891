//! Matrix product states for open chains of spin-½ sites.
//!
//! Site tensors are stored as `(left bond, physical, right bond)` with the
//! physical index in the S_z basis, ↑ = 0 and ↓ = 1. Dense vectors use site 0
//! as the most significant factor, so basis index `Σ_k s_k 2^{N−1−k}`.
//!
//! Reduced density matrices are computed on a [`RdmLadder`]: the state is
//! brought into left-canonical form once, the right environments of every
//! bond are cached, and each pair `(i, j)` then costs a transfer-matrix walk
//! from `i` to `j` only.

use crate::env::{self, closed_value};
use crate::linalg::{dagger, eigh_hermitian, qr_positive, svd_truncate, C64, LinalgError, ONE, ZERO};
use crate::mpo::Mpo;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("bond {bond} mismatch: left tensor has {left}, right tensor has {right}")]
    BondMismatch { bond: usize, left: usize, right: usize },
    #[error("boundary bond must have dimension 1, found {0}")]
    Boundary(usize),
    #[error("site tensor {site} has physical dimension {dim}, expected 2")]
    Physical { site: usize, dim: usize },
    #[error("empty chain")]
    Empty,
    #[error("invalid sites: {0}")]
    Sites(String),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("chain lengths differ: state has {state}, operator has {op}")]
    LengthMismatch { state: usize, op: usize },
    #[error("expectation value has imaginary part {0:e}; operator is not Hermitian")]
    NotHermitian(f64),
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),
    #[error("vector of length {len} is not a {n}-site state")]
    DenseLength { len: usize, n: usize },
    #[error("artifact format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Hermitian, unit-trace, positive semidefinite one- or two-qubit state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: Array2<C64>,
}

impl DensityMatrix {
    pub fn new(entries: Array2<C64>) -> Result<Self, MpsError> {
        let dim = entries.nrows();
        if !(dim == 2 || dim == 4) || entries.ncols() != dim {
            return Err(MpsError::InvalidDensity(format!("shape {:?}", entries.dim())));
        }
        let herm = entries.iter().zip(dagger(&entries).iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if herm > 1e-12 {
            return Err(MpsError::InvalidDensity(format!("not Hermitian (deviation {herm:e})")));
        }
        let trace: C64 = entries.diag().sum();
        if (trace - ONE).norm() > 1e-10 {
            return Err(MpsError::InvalidDensity(format!("trace {trace}")));
        }
        let (evals, _) = eigh_hermitian(&entries)?;
        if evals[0] < -1e-10 {
            return Err(MpsError::InvalidDensity(format!("negative eigenvalue {:e}", evals[0])));
        }
        Ok(Self { entries })
    }

    /// Symmetrizes `(m + m†)/2` before validating; for matrices that are
    /// Hermitian up to rounding.
    pub fn from_hermitian_part(m: Array2<C64>) -> Result<Self, MpsError> {
        let h = (&m + &dagger(&m)).mapv(|z| z * 0.5);
        Self::new(h)
    }

    pub fn pure(state: &Array1<C64>) -> Result<Self, MpsError> {
        let m = Array2::from_shape_fn((state.len(), state.len()), |(i, j)| state[i] * state[j].conj());
        Self::from_hermitian_part(m)
    }

    pub fn product(a: &DensityMatrix, b: &DensityMatrix) -> Result<Self, MpsError> {
        Self::from_hermitian_part(crate::linalg::kron(&a.entries, &b.entries))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn purity(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Marginal of the first qubit of a two-qubit state.
    pub fn trace_second(&self) -> Result<DensityMatrix, MpsError> {
        self.marginal(true)
    }

    /// Marginal of the second qubit of a two-qubit state.
    pub fn trace_first(&self) -> Result<DensityMatrix, MpsError> {
        self.marginal(false)
    }

    fn marginal(&self, keep_first: bool) -> Result<DensityMatrix, MpsError> {
        if self.dim() != 4 {
            return Err(MpsError::InvalidDensity("partial trace needs a two-qubit state".into()));
        }
        let e = &self.entries;
        let m = Array2::from_shape_fn((2, 2), |(a, b)| {
            (0..2)
                .map(|t| if keep_first { e[[a * 2 + t, b * 2 + t]] } else { e[[t * 2 + a, t * 2 + b]] })
                .sum()
        });
        Self::from_hermitian_part(m)
    }
}

/// Finite-chain MPS with optional canonical-center bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Mps {
    tensors: Vec<Array3<C64>>,
    center: Option<usize>,
}

impl Mps {
    /// Validates bond agreement and unit boundary bonds.
    pub fn new(tensors: Vec<Array3<C64>>) -> Result<Self, MpsError> {
        Self::check_structure(&tensors)?;
        let tensors = tensors.into_iter().map(|t| t.as_standard_layout().into_owned()).collect();
        Ok(Self { tensors, center: None })
    }

    fn check_structure(tensors: &[Array3<C64>]) -> Result<(), MpsError> {
        let n = tensors.len();
        if n == 0 {
            return Err(MpsError::Empty);
        }
        if tensors[0].dim().0 != 1 {
            return Err(MpsError::Boundary(tensors[0].dim().0));
        }
        if tensors[n - 1].dim().2 != 1 {
            return Err(MpsError::Boundary(tensors[n - 1].dim().2));
        }
        for (site, t) in tensors.iter().enumerate() {
            if t.dim().1 != 2 {
                return Err(MpsError::Physical { site, dim: t.dim().1 });
            }
        }
        for bond in 1..n {
            let (left, right) = (tensors[bond - 1].dim().2, tensors[bond].dim().0);
            if left != right {
                return Err(MpsError::BondMismatch { bond, left, right });
            }
        }
        Ok(())
    }

    /// Product state from one (unnormalized) spinor per site.
    pub fn product_state(spinors: &[[C64; 2]]) -> Result<Self, MpsError> {
        let tensors = spinors
            .iter()
            .map(|sp| Array3::from_shape_fn((1, 2, 1), |(_, s, _)| sp[s]))
            .collect();
        Self::new(tensors)
    }

    pub fn all_up(n: usize) -> Result<Self, MpsError> {
        Self::product_state(&vec![[ONE, ZERO]; n])
    }

    /// `(|↑…↑⟩ + |↓…↓⟩)/√2` with bond dimension 2.
    pub fn ghz(n: usize) -> Result<Self, MpsError> {
        if n < 2 {
            return Err(MpsError::Sites("GHZ state needs at least two sites".into()));
        }
        let amp = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let mut tensors = Vec::with_capacity(n);
        for k in 0..n {
            let (l, r) = (if k == 0 { 1 } else { 2 }, if k == n - 1 { 1 } else { 2 });
            let mut t = Array3::zeros((l, 2, r));
            for s in 0..2 {
                let (li, ri) = (if l == 1 { 0 } else { s }, if r == 1 { 0 } else { s });
                t[[li, s, ri]] = if k == 0 { amp } else { ONE };
            }
            tensors.push(t);
        }
        Self::new(tensors)
    }

    /// Random complex-Gaussian tensors with bond dimension capped at `bond`.
    pub fn random<R: Rng>(n: usize, bond: usize, rng: &mut R) -> Result<Self, MpsError> {
        let dims = capped_bonds(n, bond);
        let tensors = (0..n)
            .map(|k| {
                Array3::from_shape_fn((dims[k], 2, dims[k + 1]), |_| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    C64::new(re, im)
                })
            })
            .collect();
        Self::new(tensors)
    }

    /// Random product state plus `noise` times Gaussian entries at bond 2.
    pub fn random_product_plus_noise<R: Rng>(n: usize, noise: f64, rng: &mut R) -> Result<Self, MpsError> {
        let dims = capped_bonds(n, 2);
        let mut tensors = Vec::with_capacity(n);
        for k in 0..n {
            let mut g = |scale: f64| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re * scale, im * scale)
            };
            let mut t = Array3::from_shape_fn((dims[k], 2, dims[k + 1]), |_| ZERO);
            for v in t.iter_mut() {
                *v = g(noise);
            }
            for s in 0..2 {
                t[[0, s, 0]] += g(1.0);
            }
            tensors.push(t);
        }
        Self::new(tensors)
    }

    /// Exact MPS of a dense `2^N` state by successive SVDs.
    pub fn from_dense(vector: &Array1<C64>, n: usize) -> Result<Self, MpsError> {
        if n == 0 || vector.len() != 1usize << n {
            return Err(MpsError::DenseLength { len: vector.len(), n });
        }
        let mut tensors = Vec::with_capacity(n);
        let mut rest = vector.clone().into_shape_with_order((1, vector.len())).expect("contiguous");
        for _ in 0..n - 1 {
            let (l, cols) = rest.dim();
            let m = rest.into_shape_with_order((l * 2, cols / 2)).expect("contiguous");
            let (u, sv, vt, _) = svd_truncate(m.view(), usize::MAX, 1e-30)?;
            let k = sv.len();
            tensors.push(u.into_shape_with_order((l, 2, k)).expect("contiguous"));
            let mut svt = vt;
            for (row, &sval) in sv.iter().enumerate() {
                svt.row_mut(row).mapv_inplace(|z| z * sval);
            }
            rest = svt;
        }
        let l = rest.nrows();
        tensors.push(rest.into_shape_with_order((l, 2, 1)).expect("contiguous"));
        Ok(Self { tensors, center: Some(n - 1) })
    }

    /// `|ψ⟩ + sign · P|ψ⟩` with `P = Π_k σx_k`, as an MPS of twice the bond
    /// dimension. Not normalized.
    pub fn flip_projected(&self, sign: f64) -> Result<Mps, MpsError> {
        let n = self.len();
        if n < 2 {
            return Err(MpsError::Sites("flip projection needs at least two sites".into()));
        }
        let flipped: Vec<Array3<C64>> = self
            .tensors
            .iter()
            .map(|t| {
                let mut f = t.clone();
                f.slice_mut(s![.., 0, ..]).assign(&t.slice(s![.., 1, ..]));
                f.slice_mut(s![.., 1, ..]).assign(&t.slice(s![.., 0, ..]));
                f
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let (a, b) = (&self.tensors[k], &flipped[k]);
            let (la, _, ra) = a.dim();
            let (lb, _, rb) = b.dim();
            let t = if k == 0 {
                let mut t = Array3::zeros((1, 2, ra + rb));
                t.slice_mut(s![.., .., ..ra]).assign(a);
                t.slice_mut(s![.., .., ra..]).assign(&b.mapv(|z| z * sign));
                t
            } else if k == n - 1 {
                let mut t = Array3::zeros((la + lb, 2, 1));
                t.slice_mut(s![..la, .., ..]).assign(a);
                t.slice_mut(s![la.., .., ..]).assign(b);
                t
            } else {
                let mut t = Array3::zeros((la + lb, 2, ra + rb));
                t.slice_mut(s![..la, .., ..ra]).assign(a);
                t.slice_mut(s![la.., .., ra..]).assign(b);
                t
            };
            out.push(t);
        }
        Mps::new(out)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Array3<C64>] {
        &self.tensors
    }

    pub fn tensor(&self, k: usize) -> &Array3<C64> {
        &self.tensors[k]
    }

    pub fn canonical_center(&self) -> Option<usize> {
        self.center
    }

    /// All `N + 1` bond dimensions including the two unit boundaries.
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.tensors.iter().map(|t| t.dim().0).collect();
        dims.push(1);
        dims
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Dense amplitudes, for small chains only.
    pub fn to_dense(&self) -> Array1<C64> {
        let mut acc = Array2::from_elem((1, 1), ONE);
        for t in &self.tensors {
            let (l, d, r) = t.dim();
            let m = t.view().into_shape_with_order((l, d * r)).expect("standard layout");
            let prod = acc.dot(&m);
            let rows = prod.nrows();
            acc = prod.into_shape_with_order((rows * d, r)).expect("contiguous");
        }
        acc.into_shape_with_order(1usize << self.len()).expect("single column")
    }

    pub fn norm_squared(&self) -> f64 {
        let mut e = Array2::from_elem((1, 1), ONE);
        for t in &self.tensors {
            e = transfer(&e, t, t);
        }
        e[[0, 0]].re
    }

    pub fn overlap(&self, other: &Mps) -> Result<C64, MpsError> {
        if self.len() != other.len() {
            return Err(MpsError::LengthMismatch { state: self.len(), op: other.len() });
        }
        // e(bra, ket)
        let mut e = Array2::from_elem((1, 1), ONE);
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            e = transfer(&e, a, b);
        }
        Ok(e[[0, 0]])
    }

    /// Mixed-canonical form around `center` with unit norm.
    ///
    /// Sites left of `center` become left isometries and sites right of it
    /// right isometries; gauges are fixed so that an already canonical state
    /// comes back unchanged.
    pub fn canonicalize(&self, center: usize) -> Result<Mps, MpsError> {
        let n = self.len();
        if center >= n {
            return Err(MpsError::Sites(format!("center {center} outside chain of {n}")));
        }
        Self::check_structure(&self.tensors)?;
        let mut t = self.tensors.clone();
        for k in 0..center {
            let (l, d, r) = t[k].dim();
            let m = t[k].view().into_shape_with_order((l * d, r)).expect("standard layout").to_owned();
            let (q, rr) = qr_positive(&m)?;
            let kdim = q.ncols();
            t[k] = q.into_shape_with_order((l, d, kdim)).expect("contiguous");
            t[k + 1] = contract_left(&rr, &t[k + 1]);
        }
        for k in (center + 1..n).rev() {
            let (l, d, r) = t[k].dim();
            let m = t[k].view().into_shape_with_order((l, d * r)).expect("standard layout").to_owned();
            let (q, rr) = qr_positive(&dagger(&m))?;
            let kdim = q.ncols();
            t[k] = dagger(&q).into_shape_with_order((kdim, d, r)).expect("contiguous");
            t[k - 1] = contract_right(&t[k - 1], &dagger(&rr));
        }
        let norm = t[center].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(MpsError::ZeroNorm);
        }
        t[center].mapv_inplace(|z| z / norm);
        Ok(Mps { tensors: t, center: Some(center) })
    }

    /// Maximum deviation from the isometry conditions implied by the center.
    pub fn isometry_defect(&self) -> Option<f64> {
        let c = self.center?;
        let mut worst = 0.0f64;
        for (k, t) in self.tensors.iter().enumerate() {
            let (l, d, r) = t.dim();
            let g = if k < c {
                let m = t.view().into_shape_with_order((l * d, r)).unwrap().to_owned();
                dagger(&m).dot(&m)
            } else if k > c {
                let m = t.view().into_shape_with_order((l, d * r)).unwrap().to_owned();
                m.dot(&dagger(&m))
            } else {
                continue;
            };
            let dim = g.nrows();
            let dev = (&g - &Array2::<C64>::eye(dim)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            worst = worst.max(dev);
        }
        Some(worst)
    }

    pub fn ladder(&self) -> Result<RdmLadder, MpsError> {
        RdmLadder::new(self)
    }

    /// Reduced state of sites `i < j`; basis (↑↑, ↑↓, ↓↑, ↓↓) with `i` first.
    pub fn two_site_rdm(&self, i: usize, j: usize) -> Result<DensityMatrix, MpsError> {
        check_pair(i, j, self.len())?;
        self.ladder()?.two_site(i, j)
    }

    pub fn single_site_rdm(&self, i: usize) -> Result<DensityMatrix, MpsError> {
        if i >= self.len() {
            return Err(MpsError::Sites(format!("site {i} outside chain of {}", self.len())));
        }
        self.ladder()?.single_site(i)
    }

    /// `⟨Ψ|H|Ψ⟩` for a normalized state.
    pub fn expectation(&self, op: &Mpo) -> Result<f64, MpsError> {
        let z = self.expectation_complex(op)?;
        if z.im.abs() > 1e-8 {
            return Err(MpsError::NotHermitian(z.im));
        }
        Ok(z.re)
    }

    pub fn expectation_complex(&self, op: &Mpo) -> Result<C64, MpsError> {
        if op.len() != self.len() {
            return Err(MpsError::LengthMismatch { state: self.len(), op: op.len() });
        }
        let mut e = env::boundary(1, 0);
        for (t, w) in self.tensors.iter().zip(op.sites()) {
            e = env::extend_left(&e, t, w);
        }
        Ok(closed_value(&e))
    }

    /// Writes the binary checkpoint artifact (layout documented in
    /// `docs/mps-format.md`).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), MpsError> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u8(SCALAR_COMPLEX128)?;
        w.write_i64::<LittleEndian>(self.center.map_or(-1, |c| c as i64))?;
        for d in self.bond_dims() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for t in &self.tensors {
            for z in t.iter() {
                w.write_f64::<LittleEndian>(z.re)?;
                w.write_f64::<LittleEndian>(z.im)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Mps, MpsError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(MpsError::Format("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(MpsError::Format(format!("unsupported version {version}")));
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        if n == 0 || n > 1 << 20 {
            return Err(MpsError::Format(format!("implausible chain length {n}")));
        }
        let scalar = r.read_u8()?;
        if scalar != SCALAR_COMPLEX128 {
            return Err(MpsError::Format(format!("unknown scalar tag {scalar}")));
        }
        let center = r.read_i64::<LittleEndian>()?;
        let dims = (0..=n).map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let mut tensors = Vec::with_capacity(n);
        for k in 0..n {
            let (l, rr) = (dims[k], dims[k + 1]);
            let mut data = Vec::with_capacity(l * 2 * rr);
            for _ in 0..l * 2 * rr {
                let re = r.read_f64::<LittleEndian>()?;
                let im = r.read_f64::<LittleEndian>()?;
                data.push(C64::new(re, im));
            }
            tensors.push(Array3::from_shape_vec((l, 2, rr), data).expect("length computed from dims"));
        }
        Self::check_structure(&tensors)?;
        let center = match center {
            -1 => None,
            c if c >= 0 && (c as usize) < n => Some(c as usize),
            c => return Err(MpsError::Format(format!("center {c} out of range"))),
        };
        Ok(Mps { tensors, center })
    }
}

const MAGIC: &[u8; 8] = b"LRXXZMPS";
const FORMAT_VERSION: u32 = 1;
const SCALAR_COMPLEX128: u8 = 2;

fn capped_bonds(n: usize, bond: usize) -> Vec<usize> {
    (0..=n)
        .map(|k| {
            let from_left = 1usize.checked_shl(k.min(40) as u32).unwrap_or(usize::MAX);
            let from_right = 1usize.checked_shl((n - k).min(40) as u32).unwrap_or(usize::MAX);
            bond.min(from_left).min(from_right).max(1)
        })
        .collect()
}

fn check_pair(i: usize, j: usize, n: usize) -> Result<(), MpsError> {
    if i >= j || j >= n {
        return Err(MpsError::Sites(format!("need 0 <= i < j < {n}, got ({i}, {j})")));
    }
    Ok(())
}

/// `m · t` on the left bond.
pub(crate) fn contract_left(m: &Array2<C64>, t: &Array3<C64>) -> Array3<C64> {
    let (l, d, r) = t.dim();
    let tm = t.view().into_shape_with_order((l, d * r)).expect("standard layout");
    let out = m.dot(&tm);
    out.into_shape_with_order((m.nrows(), d, r)).expect("contiguous")
}

/// `t · m` on the right bond.
pub(crate) fn contract_right(t: &Array3<C64>, m: &Array2<C64>) -> Array3<C64> {
    let (l, d, r) = t.dim();
    let tm = t.view().into_shape_with_order((l * d, r)).expect("standard layout");
    let out = tm.dot(m);
    out.into_shape_with_order((l, d, m.ncols())).expect("contiguous")
}

/// One transfer step `e ← Σ_s A_sᵀ... ` with `e` indexed `(bra, ket)`.
pub(crate) fn transfer(e: &Array2<C64>, bra: &Array3<C64>, ket: &Array3<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((bra.dim().2, ket.dim().2));
    for s in 0..bra.dim().1 {
        let b = bra.slice(s![.., s, ..]);
        let k = ket.slice(s![.., s, ..]);
        let bd = b.t().mapv(|z| z.conj());
        out += &bd.dot(&e.dot(&k));
    }
    out
}

/// Source of site tensors and environments for transfer-matrix RDMs.
///
/// Environments are indexed `(ket, bra)`. A missing left environment means
/// identity (left-canonical tensors).
pub trait RdmSource {
    fn site_tensor(&self, site: usize) -> &Array3<C64>;
    fn left_env(&self, site: usize) -> Option<&Array2<C64>>;
    fn right_env(&self, site: usize) -> &Array2<C64>;
}

/// Left-canonical copy of a finite state plus cached right environments.
#[derive(Clone, Debug)]
pub struct RdmLadder {
    tensors: Vec<Array3<C64>>,
    right: Vec<Array2<C64>>,
}

impl RdmLadder {
    pub fn new(psi: &Mps) -> Result<Self, MpsError> {
        let n = psi.len();
        let canon = psi.canonicalize(n - 1)?;
        let tensors = canon.tensors;
        let mut right = vec![Array2::from_elem((1, 1), ONE); n];
        for k in (0..n - 1).rev() {
            let next = &tensors[k + 1];
            right[k] = right_step(&right[k + 1], next);
        }
        Ok(Self { tensors, right })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn two_site(&self, i: usize, j: usize) -> Result<DensityMatrix, MpsError> {
        check_pair(i, j, self.len())?;
        two_site_rdm_from(self, i, j)
    }

    pub fn single_site(&self, i: usize) -> Result<DensityMatrix, MpsError> {
        if i >= self.len() {
            return Err(MpsError::Sites(format!("site {i} outside chain of {}", self.len())));
        }
        single_site_rdm_from(self, i)
    }

    /// RDMs of `(i, i + 1), …, (i, i + d_max)`, reusing the transfer walk.
    pub fn row(&self, i: usize, d_max: usize) -> Result<Vec<DensityMatrix>, MpsError> {
        if i + d_max >= self.len() {
            return Err(MpsError::Sites(format!("row ({i}, +{d_max}) leaves chain of {}", self.len())));
        }
        rdm_row(self, i, d_max)
    }
}

impl RdmSource for RdmLadder {
    fn site_tensor(&self, site: usize) -> &Array3<C64> {
        &self.tensors[site]
    }

    fn left_env(&self, _site: usize) -> Option<&Array2<C64>> {
        None
    }

    fn right_env(&self, site: usize) -> &Array2<C64> {
        &self.right[site]
    }
}

/// `R_{k-1}(l, l') = Σ_s A_s R_k A_s†` with `R` indexed `(ket, bra)`.
pub(crate) fn right_step(r: &Array2<C64>, t: &Array3<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((t.dim().0, t.dim().0));
    for s in 0..t.dim().1 {
        let a = t.slice(s![.., s, ..]);
        out += &a.dot(r).dot(&a.t().mapv(|z| z.conj()));
    }
    out
}

/// `L_{k+1}(r, r') = Σ_s A_sᵀ L_k conj(A_s)` with `L` indexed `(ket, bra)`.
pub(crate) fn left_step(l: Option<&Array2<C64>>, t: &Array3<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((t.dim().2, t.dim().2));
    for s in 0..t.dim().1 {
        let a = t.slice(s![.., s, ..]);
        let ac = a.mapv(|z| z.conj());
        out += &match l {
            Some(l) => a.t().dot(&l.dot(&ac)),
            None => a.t().dot(&ac),
        };
    }
    out
}

/// Open-index blocks `X[s][s']` after site `i`, `(ket, bra)` on the right bond.
fn open_site<S: RdmSource + ?Sized>(src: &S, i: usize) -> [[Array2<C64>; 2]; 2] {
    let t = src.site_tensor(i);
    let l = src.left_env(i);
    let blk = |s: usize, sp: usize| {
        let a = t.slice(s![.., s, ..]);
        let b = t.slice(s![.., sp, ..]).mapv(|z| z.conj());
        match l {
            Some(l) => a.t().dot(&l.dot(&b)),
            None => a.t().dot(&b),
        }
    };
    [[blk(0, 0), blk(0, 1)], [blk(1, 0), blk(1, 1)]]
}

fn pass_through(x: &Array2<C64>, t: &Array3<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((t.dim().2, t.dim().2));
    for s in 0..2usize {
        let a = t.slice(s![.., s, ..]);
        let ac = a.mapv(|z| z.conj());
        let xa: Array2<C64> = x.dot(&ac);
        let term: Array2<C64> = a.t().dot(&xa);
        out += &term;
    }
    out
}

fn close_pair(x: &[[Array2<C64>; 2]; 2], t: &Array3<C64>, r: &Array2<C64>) -> Array2<C64> {
    let mut rho = Array2::<C64>::zeros((4, 4));
    // A_sj[b, c]; Y(c, c') = Σ A_sj(b,c) X(b,b') conj(A_sj')(b',c'); ρ += Σ Y∘R
    let a: Vec<_> = (0..2usize).map(|s| t.slice(s![.., s, ..]).to_owned()).collect();
    let ac: Vec<_> = a.iter().map(|m| m.mapv(|z| z.conj())).collect();
    for si in 0..2 {
        for sip in 0..2 {
            for sj in 0..2 {
                let xs: &Array2<C64> = &x[si][sip];
                let left: Array2<C64> = a[sj].t().dot(xs);
                for sjp in 0..2 {
                    let y = left.dot(&ac[sjp]);
                    let val: C64 = y.iter().zip(r.iter()).map(|(u, v)| u * v).sum();
                    rho[[si * 2 + sj, sip * 2 + sjp]] = val;
                }
            }
        }
    }
    rho
}

pub(crate) fn two_site_rdm_from<S: RdmSource + ?Sized>(src: &S, i: usize, j: usize) -> Result<DensityMatrix, MpsError> {
    let mut x = open_site(src, i);
    for k in i + 1..j {
        let t = src.site_tensor(k);
        x = x.map(|row| row.map(|m| pass_through(&m, t)));
    }
    let rho = close_pair(&x, src.site_tensor(j), src.right_env(j));
    unit_trace(rho)
}

pub(crate) fn single_site_rdm_from<S: RdmSource + ?Sized>(src: &S, i: usize) -> Result<DensityMatrix, MpsError> {
    let x = open_site(src, i);
    let r = src.right_env(i);
    let m = Array2::from_shape_fn((2, 2), |(s, sp)| x[s][sp].iter().zip(r.iter()).map(|(u, v)| u * v).sum());
    unit_trace(m)
}

/// Rescales to unit trace; long transfer walks drift by rounding and, for
/// infinite states, by the residual of the fixed points.
fn unit_trace(m: Array2<C64>) -> Result<DensityMatrix, MpsError> {
    let tr = m.diag().sum().re;
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(MpsError::InvalidDensity(format!("trace {tr}")));
    }
    DensityMatrix::from_hermitian_part(m.mapv(|z| z / tr))
}

pub(crate) fn rdm_row<S: RdmSource + ?Sized>(src: &S, i: usize, d_max: usize) -> Result<Vec<DensityMatrix>, MpsError> {
    let mut out = Vec::with_capacity(d_max);
    let mut x = open_site(src, i);
    for d in 1..=d_max {
        let j = i + d;
        let rho = close_pair(&x, src.site_tensor(j), src.right_env(j));
        out.push(unit_trace(rho)?);
        if d < d_max {
            let t = src.site_tensor(j);
            x = x.map(|row| row.map(|m| pass_through(&m, t)));
        }
    }
    Ok(out)
}

/// Translation-invariant state with a two-site unit cell `[A, A']`.
///
/// Bond 0 sits left of `A`, bond 1 between `A` and `A'`. Left and right
/// transfer-matrix fixed points are stored for both bonds and normalized so
/// that every reduced state has unit trace.
#[derive(Clone, Debug)]
pub struct InfiniteMps {
    cell: [Array3<C64>; 2],
    left: [Array2<C64>; 2],
    right: [Array2<C64>; 2],
    transfer_residual: f64,
}

impl InfiniteMps {
    /// Builds the state from two cell tensors and starting guesses for the
    /// bond-0 fixed points; the guesses are refined by power iteration.
    pub fn new(
        a: Array3<C64>,
        b: Array3<C64>,
        left_guess: Array2<C64>,
        right_guess: Array2<C64>,
    ) -> Result<Self, MpsError> {
        let (d0, d1) = (a.dim().0, a.dim().2);
        if b.dim().0 != d1 {
            return Err(MpsError::BondMismatch { bond: 1, left: d1, right: b.dim().0 });
        }
        if b.dim().2 != d0 {
            return Err(MpsError::BondMismatch { bond: 0, left: b.dim().2, right: d0 });
        }
        if a.dim().1 != 2 || b.dim().1 != 2 {
            return Err(MpsError::Physical { site: 0, dim: a.dim().1.max(b.dim().1) });
        }
        let mut a = a.as_standard_layout().into_owned();
        let mut b = b.as_standard_layout().into_owned();
        let cell_right = |r: &Array2<C64>, a: &Array3<C64>, b: &Array3<C64>| right_step(&right_step(r, b), a);
        let cell_left = |l: &Array2<C64>, a: &Array3<C64>, b: &Array3<C64>| left_step(Some(&left_step(Some(l), a)), b);

        let (r0, lambda, res_r) = power_fixed_point(right_guess, |r| cell_right(r, &a, &b))?;
        let (l0, _, res_l) = power_fixed_point(left_guess, |l| cell_left(l, &a, &b))?;
        let scale = lambda.powf(-0.25);
        a.mapv_inplace(|z| z * scale);
        b.mapv_inplace(|z| z * scale);
        let overlap: C64 = l0.iter().zip(r0.iter()).map(|(x, y)| x * y).sum();
        if !(overlap.norm() > 0.0) {
            return Err(MpsError::ZeroNorm);
        }
        let r0 = r0.mapv(|z| z / overlap);
        let l1 = left_step(Some(&l0), &a);
        let r1 = right_step(&r0, &b);
        Ok(Self { cell: [a, b], left: [l0, l1], right: [r0, r1], transfer_residual: res_r.max(res_l) })
    }

    pub fn cell(&self) -> &[Array3<C64>; 2] {
        &self.cell
    }

    pub fn bond_dims(&self) -> [usize; 2] {
        [self.cell[0].dim().0, self.cell[0].dim().2]
    }

    /// Relative change of the fixed points in the last power iteration.
    pub fn transfer_residual(&self) -> f64 {
        self.transfer_residual
    }

    pub fn two_site(&self, i: usize, j: usize) -> Result<DensityMatrix, MpsError> {
        if i >= j {
            return Err(MpsError::Sites(format!("need i < j, got ({i}, {j})")));
        }
        two_site_rdm_from(self, i, j)
    }

    pub fn single_site(&self, i: usize) -> Result<DensityMatrix, MpsError> {
        single_site_rdm_from(self, i)
    }

    pub fn row(&self, i: usize, d_max: usize) -> Result<Vec<DensityMatrix>, MpsError> {
        rdm_row(self, i, d_max)
    }

    /// Schmidt weights across bond `k % 2`.
    pub fn schmidt_weights(&self, k: usize) -> Result<Vec<f64>, MpsError> {
        let b = k % 2;
        // Spectrum of L^T R (both PSD) gives the squared Schmidt values.
        let m = self.left[b].t().dot(&self.right[b]);
        let herm = (&m + &dagger(&m)).mapv(|z| z * 0.5);
        let (vals, _) = eigh_hermitian(&herm)?;
        let mut w: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
        w.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
        Ok(w)
    }
}

impl RdmSource for InfiniteMps {
    fn site_tensor(&self, site: usize) -> &Array3<C64> {
        &self.cell[site % 2]
    }

    fn left_env(&self, site: usize) -> Option<&Array2<C64>> {
        Some(&self.left[site % 2])
    }

    fn right_env(&self, site: usize) -> &Array2<C64> {
        &self.right[(site + 1) % 2]
    }
}

const POWER_TOL: f64 = 1e-14;
const POWER_MAX_ITER: usize = 100_000;

/// Dominant fixed point of a positive map by power iteration.
/// Returns `(fixed point, eigenvalue, last relative change)`.
fn power_fixed_point<F>(guess: Array2<C64>, mut map: F) -> Result<(Array2<C64>, f64, f64), MpsError>
where
    F: FnMut(&Array2<C64>) -> Array2<C64>,
{
    let fro = |m: &Array2<C64>| m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let n0 = fro(&guess);
    if !(n0 > 0.0) {
        return Err(MpsError::ZeroNorm);
    }
    let mut x = guess.mapv(|z| z / n0);
    let mut lambda = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let y = map(&x);
        let tr_x: C64 = x.diag().sum();
        let tr_y: C64 = y.diag().sum();
        lambda = if tr_x.norm() > 1e-300 { (tr_y / tr_x).re } else { fro(&y) };
        let ny = fro(&y);
        if !(ny > 0.0) {
            return Err(MpsError::ZeroNorm);
        }
        let y = y.mapv(|z| z / ny);
        change = x.iter().zip(y.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        x = y;
        if change < POWER_TOL {
            break;
        }
    }
    // Fixed points of completely positive maps are Hermitian up to a phase.
    let tr: C64 = x.diag().sum();
    let phase = if tr.norm() > 0.0 { tr.conj() / tr.norm() } else { ONE };
    let x = x.mapv(|z| z * phase);
    let x = (&x + &dagger(&x)).mapv(|z| z * 0.5);
    Ok((x, lambda, change))
}

/// Reduced density matrix of sites `(i, j)` from a dense state vector.
pub fn dense_two_site_rdm(vector: &Array1<C64>, n: usize, i: usize, j: usize) -> Result<DensityMatrix, MpsError> {
    check_pair(i, j, n)?;
    if vector.len() != 1usize << n {
        return Err(MpsError::DenseLength { len: vector.len(), n });
    }
    let bit = |x: usize, site: usize| (x >> (n - 1 - site)) & 1;
    let mut rho = Array2::<C64>::zeros((4, 4));
    let mask = (1usize << (n - 1 - i)) | (1usize << (n - 1 - j));
    for x in 0..vector.len() {
        if x & mask != 0 {
            continue;
        }
        // x enumerates the environment configuration with both sites ↑.
        for a in 0..4 {
            let xa = x | ((a >> 1) << (n - 1 - i)) | ((a & 1) << (n - 1 - j));
            let va = vector[xa];
            if va == ZERO {
                continue;
            }
            for b in 0..4 {
                let xb = x | ((b >> 1) << (n - 1 - i)) | ((b & 1) << (n - 1 - j));
                rho[[a, b]] += va * vector[xb].conj();
            }
        }
    }
    let _ = bit;
    DensityMatrix::from_hermitian_part(rho)
}

pub fn dense_single_site_rdm(vector: &Array1<C64>, n: usize, i: usize) -> Result<DensityMatrix, MpsError> {
    if i >= n || vector.len() != 1usize << n {
        return Err(MpsError::Sites(format!("site {i} for {n}-site vector of length {}", vector.len())));
    }
    let shift = n - 1 - i;
    let mut rho = Array2::<C64>::zeros((2, 2));
    for x in 0..vector.len() {
        if (x >> shift) & 1 != 0 {
            continue;
        }
        for a in 0..2 {
            for b in 0..2 {
                rho[[a, b]] += vector[x | (a << shift)] * vector[x | (b << shift)].conj();
            }
        }
    }
    DensityMatrix::from_hermitian_part(rho)
}

/// Phase-insensitive distance `min_φ ‖a − e^{iφ} b‖` between two vectors.
pub fn phase_distance(a: &Array1<C64>, b: &Array1<C64>) -> f64 {
    let ov: C64 = a.iter().zip(b.iter()).map(|(x, y)| y.conj() * x).sum();
    let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
    a.iter().zip(b.iter()).map(|(x, y)| (x - y * phase).norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpo::{spin, Decay, ModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn assert_rho(rho: &DensityMatrix, expected: &[f64], tol: f64) {
        let d = rho.dim();
        for a in 0..d {
            for b in 0..d {
                let want = if a == b { expected[a] } else { 0.0 };
                assert!((rho.entries()[[a, b]] - C64::new(want, 0.0)).norm() < tol, "entry ({a},{b})");
            }
        }
    }

    #[test]
    fn structural_errors() {
        let a = Array3::<C64>::zeros((1, 2, 2));
        let b = Array3::<C64>::zeros((3, 2, 1));
        assert!(matches!(Mps::new(vec![a.clone(), b]), Err(MpsError::BondMismatch { bond: 1, left: 2, right: 3 })));
        assert!(matches!(Mps::new(vec![a]), Err(MpsError::Boundary(2))));
        assert!(matches!(Mps::new(vec![]), Err(MpsError::Empty)));
    }

    #[test]
    fn product_state_canonicalizes_trivially() {
        let psi = Mps::all_up(4).unwrap();
        let c = psi.canonicalize(2).unwrap();
        assert!((c.norm_squared() - 1.0).abs() < 1e-14);
        for (a, b) in psi.tensors().iter().zip(c.tensors()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x.norm() - y.norm()).abs() < 1e-14));
        }
    }

    #[test]
    fn canonicalize_preserves_the_state() {
        let psi = Mps::random(6, 2, &mut rng(3)).unwrap();
        let dense = psi.to_dense();
        let nrm = dense.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let reference = dense.mapv(|z| z / nrm);
        let c0 = psi.canonicalize(0).unwrap();
        let c5 = psi.canonicalize(5).unwrap();
        assert!(phase_distance(&c0.to_dense(), &reference) < 1e-10);
        assert!(phase_distance(&c5.to_dense(), &c0.to_dense()) < 1e-10);
        assert!(c0.isometry_defect().unwrap() < 1e-12);
        assert!(c5.isometry_defect().unwrap() < 1e-12);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let psi = Mps::random(7, 4, &mut rng(8)).unwrap();
        for center in [0, 3, 6] {
            let once = psi.canonicalize(center).unwrap();
            let twice = once.canonicalize(center).unwrap();
            for (a, b) in once.tensors().iter().zip(twice.tensors()) {
                assert_eq!(a.dim(), b.dim());
                assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
            }
        }
    }

    #[test]
    fn ghz_is_normalized_and_canonical() {
        let psi = Mps::ghz(5).unwrap();
        for c in 0..5 {
            let can = psi.canonicalize(c).unwrap();
            assert!((can.norm_squared() - 1.0).abs() < 1e-12);
            assert!(can.isometry_defect().unwrap() < 1e-12);
        }
    }

    #[test]
    fn product_and_ghz_rdms() {
        let up = Mps::all_up(6).unwrap();
        assert_rho(&up.two_site_rdm(2, 5).unwrap(), &[1.0, 0.0, 0.0, 0.0], 1e-14);
        assert_rho(&up.single_site_rdm(3).unwrap(), &[1.0, 0.0], 1e-14);
        let ghz = Mps::ghz(6).unwrap();
        assert_rho(&ghz.two_site_rdm(1, 4).unwrap(), &[0.5, 0.0, 0.0, 0.5], 1e-13);
        let ghz4 = Mps::ghz(4).unwrap();
        for i in 0..4 {
            assert_rho(&ghz4.single_site_rdm(i).unwrap(), &[0.5, 0.5], 1e-13);
        }
    }

    #[test]
    fn rdm_argument_errors() {
        let psi = Mps::all_up(4).unwrap();
        assert!(psi.two_site_rdm(2, 2).is_err());
        assert!(psi.two_site_rdm(3, 1).is_err());
        assert!(psi.two_site_rdm(1, 4).is_err());
        assert!(psi.single_site_rdm(4).is_err());
    }

    #[test]
    fn rdms_match_dense_partial_traces() {
        let psi = Mps::random(7, 3, &mut rng(21)).unwrap().canonicalize(3).unwrap();
        let v = psi.to_dense();
        let ladder = psi.ladder().unwrap();
        for i in 0..7 {
            let one = dense_single_site_rdm(&v, 7, i).unwrap();
            let d1 = (&one.entries().clone() - ladder.single_site(i).unwrap().entries()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(d1 < 1e-12);
            for j in i + 1..7 {
                let a = dense_two_site_rdm(&v, 7, i, j).unwrap();
                let b = ladder.two_site(i, j).unwrap();
                let diff = (a.entries() - b.entries()).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(diff < 1e-12, "pair ({i},{j}) diff {diff}");
            }
        }
    }

    #[test]
    fn partial_trace_consistency() {
        for n in 3..=8 {
            let psi = Mps::random(n, 4, &mut rng(n as u64)).unwrap();
            let ladder = psi.ladder().unwrap();
            for i in 0..n {
                let rho_i = ladder.single_site(i).unwrap();
                for j in i + 1..n {
                    let pair = ladder.two_site(i, j).unwrap();
                    let a = pair.trace_second().unwrap();
                    let b = pair.trace_first().unwrap();
                    let rho_j = ladder.single_site(j).unwrap();
                    assert!((a.entries() - rho_i.entries()).iter().all(|z| z.norm() < 1e-10));
                    assert!((b.entries() - rho_j.entries()).iter().all(|z| z.norm() < 1e-10));
                }
            }
        }
    }

    #[test]
    fn row_matches_pairwise() {
        let psi = Mps::random(8, 4, &mut rng(5)).unwrap();
        let ladder = psi.ladder().unwrap();
        let row = ladder.row(2, 5).unwrap();
        for (d, rho) in row.iter().enumerate() {
            let direct = ladder.two_site(2, 3 + d).unwrap();
            assert!((rho.entries() - direct.entries()).iter().all(|z| z.norm() < 1e-13));
        }
    }

    #[test]
    fn field_only_expectations() {
        let spec = ModelSpec::finite(Decay::Exponential, 2, 1.0, 0.0, 0.0, 2.0);
        let mpo = Mpo::build(&spec).unwrap();
        assert!(Mps::all_up(2).unwrap().expectation(&mpo).unwrap().abs() < 1e-15);
        let minus = [C64::new(FRAC_1_SQRT_2, 0.0), C64::new(-FRAC_1_SQRT_2, 0.0)];
        let psi = Mps::product_state(&[minus, minus]).unwrap();
        assert!((psi.expectation(&mpo).unwrap() + 2.0).abs() < 1e-14);
    }

    #[test]
    fn expectation_matches_dense() {
        let spec = ModelSpec::finite(Decay::PowerLaw, 6, 0.5, 0.7, 1.2, 0.9);
        let mpo = Mpo::build(&spec).unwrap();
        let psi = Mps::random(6, 3, &mut rng(2)).unwrap().canonicalize(0).unwrap();
        let v = psi.to_dense();
        let h = mpo.to_dense().unwrap();
        let dense: C64 = v.iter().zip(h.dot(&v).iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((psi.expectation(&mpo).unwrap() - dense.re).abs() < 1e-12);
    }

    #[test]
    fn non_hermitian_operator_is_flagged() {
        let spec = ModelSpec::finite(Decay::Exponential, 2, 1.0, 0.0, 0.0, 0.0);
        let mut sy_up = [[ZERO; 2]; 2];
        sy_up[0][1] = ONE;
        let mpo = Mpo::build(&spec).unwrap().with_local_term(0, &sy_up, 1.0).with_local_term(0, &spin::SY, 1.0);
        let plus = [C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, FRAC_1_SQRT_2)];
        let psi = Mps::product_state(&[plus, plus]).unwrap();
        assert!(matches!(psi.expectation(&mpo), Err(MpsError::NotHermitian(_))));
    }

    #[test]
    fn from_dense_round_trip() {
        let psi = Mps::random(5, 4, &mut rng(13)).unwrap().canonicalize(0).unwrap();
        let v = psi.to_dense();
        let back = Mps::from_dense(&v, 5).unwrap();
        assert!(phase_distance(&back.to_dense(), &v) < 1e-12);
    }

    #[test]
    fn artifact_round_trip_and_rejection() {
        let psi = Mps::random(5, 3, &mut rng(1)).unwrap().canonicalize(2).unwrap();
        let mut buf = Vec::new();
        psi.write_to(&mut buf).unwrap();
        let back = Mps::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, psi);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Mps::read_from(bad.as_slice()), Err(MpsError::Format(_))));
        assert!(Mps::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = Array2::from_diag(&ndarray::array![C64::new(0.7, 0.0), C64::new(0.7, 0.0)]);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = Array2::from_diag(&ndarray::array![C64::new(1.1, 0.0), C64::new(-0.1, 0.0)]);
        assert!(DensityMatrix::new(negative).is_err());
        let mut non_herm = Array2::<C64>::eye(2) * C64::new(0.5, 0.0);
        non_herm[[0, 1]] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(non_herm).is_err());
    }

    #[test]
    fn infinite_product_state_rdms() {
        let mut a = Array3::<C64>::zeros((1, 2, 1));
        a[[0, 0, 0]] = C64::new(0.6, 0.0);
        a[[0, 1, 0]] = C64::new(0.8, 0.0);
        let one = Array2::from_elem((1, 1), ONE);
        let psi = InfiniteMps::new(a.clone(), a, one.clone(), one).unwrap();
        let rho = psi.two_site(3, 7).unwrap();
        let p = [0.36f64, 0.64];
        for x in 0..4 {
            for y in 0..4 {
                let want = p[x >> 1].sqrt() * p[x & 1].sqrt() * p[y >> 1].sqrt() * p[y & 1].sqrt();
                assert!((rho.entries()[[x, y]].re - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn infinite_cell_matches_long_periodic_finite_chain() {
        // A generic injective cell: bulk RDMs of a long finite chain built from
        // it converge to the infinite-chain values.
        let mut r = rng(77);
        let g = |r: &mut ChaCha8Rng, l, rr| {
            Array3::from_shape_fn((l, 2, rr), |_| {
                let re: f64 = StandardNormal.sample(r);
                let im: f64 = StandardNormal.sample(r);
                C64::new(re, im)
            })
        };
        let a = g(&mut r, 3, 2);
        let b = g(&mut r, 2, 3);
        let inf = InfiniteMps::new(a.clone(), b.clone(), Array2::eye(3), Array2::eye(3)).unwrap();
        assert!(inf.transfer_residual() < 1e-12);
        let n = 200;
        let mut tensors = Vec::new();
        for k in 0..n {
            let t = if k % 2 == 0 { a.clone() } else { b.clone() };
            let t = if k == 0 { t.slice(s![0..1, .., ..]).to_owned() } else { t };
            let t = if k == n - 1 { t.slice(s![.., .., 0..1]).to_owned() } else { t };
            tensors.push(t);
        }
        let finite = Mps::new(tensors).unwrap().ladder().unwrap();
        for (i, j) in [(100, 101), (100, 103), (101, 106)] {
            let x = finite.two_site(i, j).unwrap();
            let y = inf.two_site(i, j).unwrap();
            let diff = (x.entries() - y.entries()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(diff < 1e-10, "pair ({i},{j}) diff {diff}");
        }
        let row = inf.row(1, 4).unwrap();
        let direct = inf.two_site(1, 5).unwrap();
        assert!((row[3].entries() - direct.entries()).iter().all(|z| z.norm() < 1e-13));
        let w = inf.schmidt_weights(0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }


    #[test]
    fn flip_projection_has_definite_parity() {
        let psi = Mps::random(6, 2, &mut rng(31)).unwrap();
        for sign in [1.0, -1.0] {
            let v = psi.flip_projected(sign).unwrap().to_dense();
            let full = (1usize << 6) - 1;
            for x in 0..v.len() {
                assert!((v[x ^ full] - v[x] * sign).norm() < 1e-12);
            }
        }
    }

}
