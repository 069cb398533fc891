//! MPO environment contractions.
//!
//! An environment is one matrix per MPO channel, `None` where the channel is
//! identically zero. Left environments are indexed `(bra, ket)`, right
//! environments `(ket, bra)`; with that convention every contraction below is
//! a plain matrix product on a reshaped site tensor `(left, phys, right)`.

use crate::linalg::{C64, ONE, ZERO};
use crate::mpo::{MpoTensor, Op2};
use ndarray::{s, Array2, Array3, ArrayView2, Zip};

pub type Env = Vec<Option<Array2<C64>>>;

/// Boundary environment: a 1×1 identity on `channel`, `None` elsewhere.
pub(crate) fn boundary(width: usize, channel: usize) -> Env {
    let mut env: Env = vec![None; width];
    env[channel] = Some(Array2::from_elem((1, 1), ONE));
    env
}

fn as_left_matrix(t: &Array3<C64>) -> ArrayView2<'_, C64> {
    let (l, d, r) = t.dim();
    t.view().into_shape_with_order((l, d * r)).expect("site tensors are kept in standard layout")
}

fn as_right_matrix(t: &Array3<C64>) -> ArrayView2<'_, C64> {
    let (l, d, r) = t.dim();
    t.view().into_shape_with_order((l * d, r)).expect("site tensors are kept in standard layout")
}

/// `out[:, s'·r .. ] += Σ_s op[s'][s] · x[:, s·r ..]` on column blocks of width `r`.
fn apply_phys(out: &mut Array2<C64>, x: &Array2<C64>, op: &Op2, r: usize) {
    for (sp, row) in op.iter().enumerate() {
        for (sk, &c) in row.iter().enumerate() {
            if c == ZERO {
                continue;
            }
            let src = x.slice(s![.., sk * r..(sk + 1) * r]);
            let mut dst = out.slice_mut(s![.., sp * r..(sp + 1) * r]);
            Zip::from(&mut dst).and(&src).for_each(|o, &v| *o += c * v);
        }
    }
}

fn accumulate(slot: &mut Option<Array2<C64>>, shape: (usize, usize)) -> &mut Array2<C64> {
    slot.get_or_insert_with(|| Array2::zeros(shape))
}

/// Left environment one site further right.
pub(crate) fn extend_left(env: &Env, a: &Array3<C64>, w: &MpoTensor) -> Env {
    let (l, d, r) = a.dim();
    let a_l = as_left_matrix(a);
    let x: Vec<Option<Array2<C64>>> = env.iter().map(|e| e.as_ref().map(|m| m.dot(&a_l))).collect();
    let mut y: Env = vec![None; w.right_dim];
    for e in &w.entries {
        if let Some(xa) = &x[e.left] {
            let slot = accumulate(&mut y[e.right], (l, d * r));
            apply_phys(slot, xa, &e.op, r);
        }
    }
    let a_r = as_right_matrix(a);
    let a_r_dag = a_r.t().mapv(|z| z.conj());
    y.into_iter()
        .map(|yb| {
            yb.map(|m| {
                let m_r = m.into_shape_with_order((l * d, r)).expect("contiguous");
                a_r_dag.dot(&m_r)
            })
        })
        .collect()
}

/// Right environment one site further left.
pub(crate) fn extend_right(env: &Env, b: &Array3<C64>, w: &MpoTensor) -> Env {
    let (l, d, _) = b.dim();
    let b_r = as_right_matrix(b);
    let x: Vec<Option<Array2<C64>>> = env
        .iter()
        .map(|e| {
            e.as_ref().map(|m| {
                let prod = b_r.dot(m);
                let rr = prod.ncols();
                prod.into_shape_with_order((l, d * rr)).expect("contiguous")
            })
        })
        .collect();
    let mut y: Env = vec![None; w.left_dim];
    for e in &w.entries {
        if let Some(xb) = &x[e.right] {
            let rr = xb.ncols() / d;
            let slot = accumulate(&mut y[e.left], (l, d * rr));
            apply_phys(slot, xb, &e.op, rr);
        }
    }
    let b_l_dag = as_left_matrix(b).t().mapv(|z| z.conj());
    y.into_iter().map(|ya| ya.map(|m| m.dot(&b_l_dag))).collect()
}

/// Two-site block of an MPO: `op4[(s1' s2'), (s1 s2)]` between outer channels.
#[derive(Clone, Debug)]
pub(crate) struct TwoSiteEntry {
    pub left: usize,
    pub right: usize,
    pub op: [[C64; 4]; 4],
}

pub(crate) fn two_site_entries(w1: &MpoTensor, w2: &MpoTensor) -> Vec<TwoSiteEntry> {
    let mut out: Vec<TwoSiteEntry> = Vec::new();
    for e1 in &w1.entries {
        for e2 in w2.entries.iter().filter(|e| e.left == e1.right) {
            let mut op = [[ZERO; 4]; 4];
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        for d in 0..2 {
                            op[a * 2 + c][b * 2 + d] = e1.op[a][b] * e2.op[c][d];
                        }
                    }
                }
            }
            match out.iter_mut().find(|t| t.left == e1.left && t.right == e2.right) {
                Some(t) => {
                    for i in 0..4 {
                        for j in 0..4 {
                            t.op[i][j] += op[i][j];
                        }
                    }
                }
                None => out.push(TwoSiteEntry { left: e1.left, right: e2.right, op }),
            }
        }
    }
    out.retain(|t| t.op.iter().flatten().any(|z| *z != ZERO));
    out
}

/// Effective Hamiltonian on a two-site block `θ (l, 4, r)`.
pub(crate) struct TwoSiteOperator<'a> {
    pub left: &'a Env,
    pub right: &'a Env,
    pub entries: &'a [TwoSiteEntry],
    pub l: usize,
    pub r: usize,
}

impl TwoSiteOperator<'_> {
    pub fn apply(&self, theta: &ndarray::Array1<C64>) -> ndarray::Array1<C64> {
        let (l, r) = (self.l, self.r);
        let th = theta.view().into_shape_with_order((l, 4 * r)).expect("flat theta");
        let t1: Vec<Option<Array2<C64>>> = self.left.iter().map(|e| e.as_ref().map(|m| m.dot(&th))).collect();
        let mut t3: Env = vec![None; self.right.len()];
        for e in self.entries {
            let (Some(x), Some(_)) = (&t1[e.left], &self.right[e.right]) else { continue };
            let slot = accumulate(&mut t3[e.right], (l, 4 * r));
            for (sp, row) in e.op.iter().enumerate() {
                for (sk, &c) in row.iter().enumerate() {
                    if c == ZERO {
                        continue;
                    }
                    let src = x.slice(s![.., sk * r..(sk + 1) * r]);
                    let mut dst = slot.slice_mut(s![.., sp * r..(sp + 1) * r]);
                    Zip::from(&mut dst).and(&src).for_each(|o, &v| *o += c * v);
                }
            }
        }
        let mut out = Array2::<C64>::zeros((l * 4, r));
        for (t, renv) in t3.into_iter().zip(self.right.iter()) {
            if let (Some(t), Some(renv)) = (t, renv) {
                let t = t.into_shape_with_order((l * 4, r)).expect("contiguous");
                ndarray::linalg::general_mat_mul(ONE, &t, renv, ONE, &mut out);
            }
        }
        out.into_shape_with_order(l * 4 * r).expect("contiguous")
    }
}

/// Scalar left over once a left environment has absorbed the whole chain.
pub(crate) fn closed_value(env: &Env) -> C64 {
    env.iter().flatten().map(|m| m[[0, 0]]).sum()
}
