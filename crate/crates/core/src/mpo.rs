//! Matrix product operators for the long-range XXZ chain
//!
//! ```text
//! H = Σ_{i<j} f(r_ij) [J_xy (SxSx + SySy) − J_z SzSz] + h_x Σ_i Sx
//! ```
//!
//! Every MPO here is a finite-state machine over its bond index: channel 0
//! means "nothing placed yet", the last channel means "term complete", and
//! the channels in between carry a pending spin operator towards its partner.
//!
//! * exponential decay: three carrier channels damped by `e^{-α}` per hop,
//!   bond dimension 5 everywhere;
//! * power law: one carrier channel per (remaining distance, component), so
//!   the bond between sites `k` and `k+1` (1-indexed) has `2 + 3(N − k)`
//!   channels and every pair weight `r^{-α}` is placed explicitly;
//! * uniform: the power-law machine at `α = 0`;
//! * nearest neighbour: the exponential machine without carrier propagation.

use crate::linalg::{kron, C64};
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 2×2 single-site operator, indexed `[out][in]` in the (↑, ↓) basis.
pub type Op2 = [[C64; 2]; 2];

pub mod spin {
    //! Spin-½ operators `S = σ/2` in the S_z basis, ↑ first.
    use super::Op2;
    use crate::linalg::{C64, ZERO};

    const H: C64 = C64::new(0.5, 0.0);
    const MH: C64 = C64::new(-0.5, 0.0);
    const IH: C64 = C64::new(0.0, 0.5);
    const MIH: C64 = C64::new(0.0, -0.5);
    const O: C64 = C64::new(1.0, 0.0);

    pub const ID: Op2 = [[O, ZERO], [ZERO, O]];
    pub const SX: Op2 = [[ZERO, H], [H, ZERO]];
    pub const SY: Op2 = [[ZERO, MIH], [IH, ZERO]];
    pub const SZ: Op2 = [[H, ZERO], [ZERO, MH]];

    pub fn scaled(op: &Op2, c: f64) -> Op2 {
        let mut out = *op;
        for row in out.iter_mut() {
            for z in row.iter_mut() {
                *z *= c;
            }
        }
        out
    }

    pub fn to_array(op: &Op2) -> ndarray::Array2<C64> {
        ndarray::Array2::from_shape_fn((2, 2), |(i, j)| op[i][j])
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("wrong decay kind: expected {expected:?}, got {got:?}")]
    WrongDecay { expected: Decay, got: Decay },
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("dense contraction limited to N <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `f(r) = exp[−α(r − 1)]`
    Exponential,
    /// `f(r) = r^{−α}`
    PowerLaw,
    /// `f(r) = 1` for every pair
    Uniform,
    /// `f(1) = 1`, zero otherwise
    NearestNeighbor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainLength {
    Finite(usize),
    Infinite,
}

/// Full Hamiltonian description. The lattice constant is fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub decay: Decay,
    pub alpha: f64,
    pub j_xy: f64,
    pub j_z: f64,
    pub h_x: f64,
    pub length: ChainLength,
}

impl ModelSpec {
    pub fn finite(decay: Decay, n: usize, alpha: f64, j_xy: f64, j_z: f64, h_x: f64) -> Self {
        Self { decay, alpha, j_xy, j_z, h_x, length: ChainLength::Finite(n) }
    }

    pub fn infinite(alpha: f64, j_xy: f64, j_z: f64, h_x: f64) -> Self {
        Self { decay: Decay::Exponential, alpha, j_xy, j_z, h_x, length: ChainLength::Infinite }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("alpha", self.alpha), ("j_xy", self.j_xy), ("j_z", self.j_z), ("h_x", self.h_x)] {
            if !v.is_finite() {
                return Err(ModelError::Invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if matches!(self.decay, Decay::Exponential | Decay::PowerLaw) && self.alpha < 0.0 {
            return Err(ModelError::Invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        match self.length {
            ChainLength::Finite(n) if n < 2 => {
                Err(ModelError::Invalid(format!("chain length must be >= 2, got {n}")))
            }
            ChainLength::Infinite if self.decay != Decay::Exponential => Err(ModelError::Unsupported(format!(
                "infinite chains need exponential decay, got {:?}",
                self.decay
            ))),
            _ => Ok(()),
        }
    }

    pub fn n_sites(&self) -> Option<usize> {
        match self.length {
            ChainLength::Finite(n) => Some(n),
            ChainLength::Infinite => None,
        }
    }

    /// Pair weight `f(r)` for separation `r ≥ 1`.
    pub fn coupling(&self, r: usize) -> f64 {
        assert!(r >= 1, "pair separation must be positive");
        match self.decay {
            Decay::Exponential => (-self.alpha * (r as f64 - 1.0)).exp(),
            Decay::PowerLaw => (r as f64).powf(-self.alpha),
            Decay::Uniform => 1.0,
            Decay::NearestNeighbor => {
                if r == 1 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn with_length(mut self, n: usize) -> Self {
        self.length = ChainLength::Finite(n);
        self
    }
}

/// One nonzero block `W[left, :, :, right]` of an MPO site tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MpoEntry {
    pub left: usize,
    pub right: usize,
    pub op: Op2,
}

/// Block-sparse rank-4 MPO site tensor (left bond × out × in × right bond).
#[derive(Clone, Debug, PartialEq)]
pub struct MpoTensor {
    pub left_dim: usize,
    pub right_dim: usize,
    pub entries: Vec<MpoEntry>,
}

impl MpoTensor {
    pub fn new(left_dim: usize, right_dim: usize) -> Self {
        Self { left_dim, right_dim, entries: Vec::new() }
    }

    /// Adds `op` into block `(left, right)`, merging with an existing block.
    pub fn add(&mut self, left: usize, right: usize, op: Op2) {
        assert!(left < self.left_dim && right < self.right_dim, "MPO block out of range");
        if let Some(e) = self.entries.iter_mut().find(|e| e.left == left && e.right == right) {
            for a in 0..2 {
                for b in 0..2 {
                    e.op[a][b] += op[a][b];
                }
            }
        } else {
            self.entries.push(MpoEntry { left, right, op });
        }
    }

    /// Dense `(left, out, in, right)` tensor.
    pub fn to_array4(&self) -> Array4<C64> {
        let mut w = Array4::zeros((self.left_dim, 2, 2, self.right_dim));
        for e in &self.entries {
            for s in 0..2 {
                for t in 0..2 {
                    w[[e.left, s, t, e.right]] += e.op[s][t];
                }
            }
        }
        w
    }
}

/// Finite-chain MPO with boundary bonds of dimension 1.
#[derive(Clone, Debug)]
pub struct Mpo {
    spec: ModelSpec,
    sites: Vec<MpoTensor>,
}

impl Mpo {
    /// Dispatches on `spec.decay`.
    pub fn build(spec: &ModelSpec) -> Result<Self, ModelError> {
        match spec.decay {
            Decay::Exponential | Decay::NearestNeighbor => build_elri_mpo(spec),
            Decay::PowerLaw => build_plri_mpo(spec),
            Decay::Uniform => build_uniform_mpo(spec),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[MpoTensor] {
        &self.sites
    }

    pub fn site(&self, k: usize) -> &MpoTensor {
        &self.sites[k]
    }

    pub fn site_tensor(&self, k: usize) -> Array4<C64> {
        self.sites[k].to_array4()
    }

    /// Dimensions of the internal bonds, `N − 1` entries.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites[..self.sites.len() - 1].iter().map(|w| w.right_dim).collect()
    }

    /// Adds a one-site term `coeff · op` on `site`, riding on the
    /// start→done transition of that site.
    pub fn with_local_term(mut self, site: usize, op: &Op2, coeff: f64) -> Self {
        let w = &mut self.sites[site];
        let done = w.right_dim - 1;
        w.add(0, done, spin::scaled(op, coeff));
        self
    }

    /// Contracts the whole operator into a `2^N × 2^N` matrix. Site 0 is the
    /// most significant tensor factor.
    pub fn to_dense(&self) -> Result<Array2<C64>, ModelError> {
        const MAX: usize = 12;
        let n = self.sites.len();
        if n > MAX {
            return Err(ModelError::TooLarge { n, max: MAX });
        }
        // partial[b] = operator on the sites so far, ending in channel b.
        let mut partial: Vec<Option<Array2<C64>>> = vec![Some(Array2::eye(1))];
        for w in &self.sites {
            let mut next: Vec<Option<Array2<C64>>> = vec![None; w.right_dim];
            for e in &w.entries {
                if let Some(prev) = &partial[e.left] {
                    let term = kron(prev, &spin::to_array(&e.op));
                    match &mut next[e.right] {
                        Some(acc) => *acc += &term,
                        slot @ None => *slot = Some(term),
                    }
                }
            }
            partial = next;
        }
        let dim = 1usize << n;
        Ok(partial.pop().flatten().unwrap_or_else(|| Array2::zeros((dim, dim))))
    }
}

/// Carrier components: (operator emitted, operator closing the pair).
fn xxz_components(spec: &ModelSpec) -> [(Op2, Op2); 3] {
    [
        (spin::SX, spin::scaled(&spin::SX, spec.j_xy)),
        (spin::SY, spin::scaled(&spin::SY, spec.j_xy)),
        (spin::SZ, spin::scaled(&spin::SZ, -spec.j_z)),
    ]
}

/// 5×5 bulk tensor of the exponential machine: channels
/// `[start, x, y, z, done]`, carriers damped by `decay` per hop.
pub fn elri_bulk_tensor(spec: &ModelSpec, decay: f64) -> MpoTensor {
    let mut w = MpoTensor::new(5, 5);
    let comps = xxz_components(spec);
    w.add(0, 0, spin::ID);
    for (c, (emit, close)) in comps.iter().enumerate() {
        w.add(0, 1 + c, *emit);
        if decay != 0.0 {
            w.add(1 + c, 1 + c, spin::scaled(&spin::ID, decay));
        }
        w.add(1 + c, 4, *close);
    }
    if spec.h_x != 0.0 {
        w.add(0, 4, spin::scaled(&spin::SX, spec.h_x));
    }
    w.add(4, 4, spin::ID);
    w
}

/// Restricts a bulk tensor to its start row (left edge) or done column
/// (right edge).
fn edge_rows(bulk: &MpoTensor, left_edge: bool, right_edge: bool) -> MpoTensor {
    let done = bulk.right_dim - 1;
    let mut w = MpoTensor::new(if left_edge { 1 } else { bulk.left_dim }, if right_edge { 1 } else { bulk.right_dim });
    for e in &bulk.entries {
        if left_edge && e.left != 0 {
            continue;
        }
        if right_edge && e.right != done {
            continue;
        }
        let l = if left_edge { 0 } else { e.left };
        let r = if right_edge { 0 } else { e.right };
        w.add(l, r, e.op);
    }
    w
}

/// Exponential-decay MPO, bond dimension 5.
///
/// Also accepts `NearestNeighbor`, which is the same machine with the
/// carrier self-loops removed.
pub fn build_elri_mpo(spec: &ModelSpec) -> Result<Mpo, ModelError> {
    spec.validate()?;
    let decay = match spec.decay {
        Decay::Exponential => (-spec.alpha).exp(),
        Decay::NearestNeighbor => 0.0,
        other => return Err(ModelError::WrongDecay { expected: Decay::Exponential, got: other }),
    };
    let n = spec
        .n_sites()
        .ok_or_else(|| ModelError::Unsupported("finite MPO requested for an infinite chain".into()))?;
    let bulk = elri_bulk_tensor(spec, decay);
    let sites = (0..n).map(|k| edge_rows(&bulk, k == 0, k == n - 1)).collect();
    Ok(Mpo { spec: *spec, sites })
}

/// Power-law MPO with one explicit channel per pending pair distance.
pub fn build_plri_mpo(spec: &ModelSpec) -> Result<Mpo, ModelError> {
    if spec.decay != Decay::PowerLaw {
        return Err(ModelError::WrongDecay { expected: Decay::PowerLaw, got: spec.decay });
    }
    build_explicit(spec)
}

/// All-to-all equal couplings; identical to the power-law MPO at `α = 0`.
pub fn build_uniform_mpo(spec: &ModelSpec) -> Result<Mpo, ModelError> {
    if spec.decay != Decay::Uniform {
        return Err(ModelError::WrongDecay { expected: Decay::Uniform, got: spec.decay });
    }
    build_explicit(spec)
}

fn build_explicit(spec: &ModelSpec) -> Result<Mpo, ModelError> {
    spec.validate()?;
    let n = spec
        .n_sites()
        .ok_or_else(|| ModelError::Unsupported("power-law couplings need a finite chain (fDMRG)".into()))?;
    let comps = xxz_components(spec);
    // Bond b (1-indexed, between sites b and b+1) carries remaining
    // distances m = 1..=N−b; bond 0 and bond N are the trivial edges.
    let bond_dim = |b: usize| if b == 0 || b == n { 1 } else { 2 + 3 * (n - b) };
    let channel = |m: usize, c: usize| 1 + 3 * (m - 1) + c;

    let mut sites = Vec::with_capacity(n);
    for site in 1..=n {
        let (lb, rb) = (site - 1, site);
        let (ld, rd) = (bond_dim(lb), bond_dim(rb));
        let mut w = MpoTensor::new(ld, rd);
        let start_l = 0;
        let done_l = ld - 1;
        let start_r = 0;
        let done_r = rd - 1;
        let left_open = lb > 0;
        let right_open = rb < n;

        // start → start
        if right_open {
            w.add(start_l, start_r, spin::ID);
        }
        // emit towards site + m, m = 1..=N−site
        if right_open {
            for m in 1..=(n - site) {
                let weight = spec.coupling(m);
                for (c, (emit, _)) in comps.iter().enumerate() {
                    w.add(start_l, channel(m, c), spin::scaled(emit, weight));
                }
            }
        }
        // local field
        if spec.h_x != 0.0 {
            w.add(start_l, done_r, spin::scaled(&spin::SX, spec.h_x));
        }
        if left_open {
            // close pairs arriving with remaining distance 1
            for (c, (_, close)) in comps.iter().enumerate() {
                w.add(channel(1, c), done_r, *close);
            }
            // shift the rest one step closer
            if right_open {
                for m in 2..=(n - lb) {
                    for c in 0..3 {
                        w.add(channel(m, c), channel(m - 1, c), spin::ID);
                    }
                }
            }
            // done → done
            w.add(done_l, done_r, spin::ID);
        }
        sites.push(w);
    }
    Ok(Mpo { spec: *spec, sites })
}

/// Translation-invariant MPO for the infinite exponential-decay chain:
/// a two-site unit cell of the 5×5 bulk tensor plus boundary selectors.
#[derive(Clone, Debug)]
pub struct InfiniteMpo {
    spec: ModelSpec,
    bulk: MpoTensor,
}

impl InfiniteMpo {
    pub const UNIT_CELL: usize = 2;

    pub fn build(spec: &ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        if spec.decay != Decay::Exponential {
            return Err(ModelError::Unsupported(format!(
                "iDMRG needs the compact exponential MPO, got {:?}",
                spec.decay
            )));
        }
        if spec.length != ChainLength::Infinite {
            return Err(ModelError::Invalid("infinite MPO requested for a finite chain".into()));
        }
        Ok(Self { spec: *spec, bulk: elri_bulk_tensor(spec, (-spec.alpha).exp()) })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn bulk(&self) -> &MpoTensor {
        &self.bulk
    }

    pub fn bond_dim(&self) -> usize {
        self.bulk.right_dim
    }

    /// Left boundary channel (start) and right boundary channel (done).
    pub fn boundary_channels(&self) -> (usize, usize) {
        (0, self.bulk.right_dim - 1)
    }

    /// The unit cell's site tensors.
    pub fn unit_cell(&self) -> [&MpoTensor; 2] {
        [&self.bulk, &self.bulk]
    }
}
