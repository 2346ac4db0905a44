//! Packed-batch forward pass with an activation tape, and its manual
//! backward pass. Episodes of a batch are concatenated row-wise so the dense
//! projections run as single matrix products; attention stays per episode.

use crate::error::{Error, Result};
use crate::model::forward::LN_EPS;
use crate::model::{Activation, Model, Weights};
use crate::numerics::{
    add_matmul_tn, gelu_tanh, gelu_tanh_grad, layer_norm_in_place, log_sum_exp, matmul, matmul_nt, softmax_in_place,
    Matrix, Scalar,
};
use crate::tasks::Supervised;

/// Episodes concatenated into one row-major stream.
#[derive(Debug, Clone)]
pub struct PackedBatch {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    soft: Vec<Option<Vec<f32>>>,
    /// `(first row, length)` per episode.
    segments: Vec<(usize, usize)>,
    /// `(row, target token)`.
    targets: Vec<(usize, u32)>,
}

impl PackedBatch {
    pub fn new(items: &[Supervised]) -> Self {
        let mut b = PackedBatch {
            tokens: Vec::new(),
            positions: Vec::new(),
            soft: Vec::new(),
            segments: Vec::new(),
            targets: Vec::new(),
        };
        for s in items {
            let start = b.tokens.len();
            let n = s.input.tokens.len();
            b.tokens.extend_from_slice(&s.input.tokens);
            b.positions.extend(0..n);
            let mut soft = vec![None; n];
            for seg in &s.input.soft {
                for (i, v) in seg.vectors.iter().enumerate() {
                    soft[seg.position + i] = Some(v.clone());
                }
            }
            b.soft.extend(soft);
            b.segments.push((start, n));
            b.targets.extend(s.targets.iter().map(|&(p, t)| (start + p, t)));
        }
        b
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn n_rows(&self) -> usize {
        self.tokens.len()
    }
}

struct Norm<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

struct LayerTape<T> {
    norm1: Norm<T>,
    h1: Matrix<T>,
    qkv: Matrix<T>,
    /// Attention probabilities per (segment, head), each `n x n` row-major.
    probs: Vec<Vec<T>>,
    z: Matrix<T>,
    norm2: Norm<T>,
    h2: Matrix<T>,
    u: Matrix<T>,
    a: Matrix<T>,
}

pub(crate) struct Tape<T> {
    layers: Vec<LayerTape<T>>,
    normf: Norm<T>,
    hf: Matrix<T>,
    /// Softmax of the target-row logits.
    probs: Matrix<T>,
    pub loss: T,
}

fn norm_rows<T: Scalar>(x: &Matrix<T>, g: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) -> Norm<T> {
    let eps = T::of(LN_EPS);
    let (n, d) = x.shape();
    let ones = vec![T::one(); d];
    let zeros = vec![T::zero(); d];
    let mut xhat = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let r = layer_norm_in_place(x.row(i), &ones, &zeros, eps, xhat.row_mut(i));
        rstd.push(r);
        let xr = xhat.row(i);
        for ((o, &xh), (&gg, &bb)) in out.row_mut(i).iter_mut().zip(xr).zip(g.as_slice().iter().zip(b.as_slice())) {
            *o = gg * xh + bb;
        }
    }
    Norm { xhat, rstd }
}

/// Accumulates gain/bias grads and returns the input gradient.
fn norm_backward<T: Scalar>(norm: &Norm<T>, g: &Matrix<T>, dy: &Matrix<T>, dg: &mut Matrix<T>, db: &mut Matrix<T>) -> Matrix<T> {
    let (n, d) = dy.shape();
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = norm.xhat.row(i);
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for k in 0..d {
            dg.as_mut_slice()[k] += dyr[k] * xh[k];
            db.as_mut_slice()[k] += dyr[k];
            dxhat[k] = dyr[k] * g.as_slice()[k];
            mean_dxhat += dxhat[k];
            mean_dxhat_xhat += dxhat[k] * xh[k];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = norm.rstd[i];
        for (k, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = r * (dxhat[k] - mean_dxhat - xh[k] * mean_dxhat_xhat);
        }
    }
    dx
}

pub(crate) fn forward_tape<T: Scalar>(model: &Model<T>, batch: &PackedBatch) -> Result<Tape<T>> {
    let cfg = model.config();
    let w = model.weights();
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let n_rows = batch.n_rows();
    let scale = T::one() / T::of(dh as f64).sqrt();
    if batch.targets.is_empty() {
        return Err(Error::Shape("batch has no supervised positions".into()));
    }
    if let Some(&(_, len)) = batch.segments.iter().find(|s| s.1 > cfg.max_context) {
        return Err(Error::ContextOverflow {
            required: len,
            available: cfg.max_context,
        });
    }

    let mut x = Matrix::<T>::zeros(n_rows, d);
    for i in 0..n_rows {
        let row = x.row_mut(i);
        match &batch.soft[i] {
            Some(v) => row.iter_mut().zip(v).for_each(|(r, &s)| *r = T::of(s as f64)),
            None => row.copy_from_slice(w.tok_emb.row(batch.tokens[i] as usize)),
        }
        for (r, &p) in row.iter_mut().zip(w.pos_emb.row(batch.positions[i])) {
            *r += p;
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lw in &w.layers {
        let mut h1 = Matrix::zeros(n_rows, d);
        let norm1 = norm_rows(&x, &lw.ln1_g, &lw.ln1_b, &mut h1);
        let mut qkv = matmul(&h1, &lw.w_qkv);
        qkv.add_row_vector(lw.b_qkv.as_slice());
        let mut z = Matrix::<T>::zeros(n_rows, d);
        let mut probs = Vec::with_capacity(batch.segments.len() * cfg.n_heads);
        for &(r0, n) in &batch.segments {
            for head in 0..cfg.n_heads {
                let lo = head * dh;
                let mut p = vec![T::zero(); n * n];
                for i in 0..n {
                    let q = &qkv.row(r0 + i)[lo..lo + dh];
                    let row = &mut p[i * n..i * n + i + 1];
                    for (j, s) in row.iter_mut().enumerate() {
                        let k = &qkv.row(r0 + j)[d + lo..d + lo + dh];
                        *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    }
                    softmax_in_place(row);
                    let zi = &mut z.row_mut(r0 + i)[lo..lo + dh];
                    for j in 0..=i {
                        let pij = p[i * n + j];
                        let v = &qkv.row(r0 + j)[2 * d + lo..2 * d + lo + dh];
                        for (o, &vv) in zi.iter_mut().zip(v) {
                            *o += pij * vv;
                        }
                    }
                }
                probs.push(p);
            }
        }
        let mut attn = matmul(&z, &lw.w_out);
        attn.add_row_vector(lw.b_out.as_slice());
        x.add_assign(&attn);

        let mut h2 = Matrix::zeros(n_rows, d);
        let norm2 = norm_rows(&x, &lw.ln2_g, &lw.ln2_b, &mut h2);
        let mut u = matmul(&h2, &lw.w_up);
        u.add_row_vector(lw.b_up.as_slice());
        let a = match cfg.activation {
            Activation::Relu => u.map(|v| v.max(T::zero())),
            Activation::GeluTanh => u.map(gelu_tanh),
        };
        let mut down = matmul(&a, &lw.w_down);
        down.add_row_vector(lw.b_down.as_slice());
        x.add_assign(&down);
        layers.push(LayerTape {
            norm1,
            h1,
            qkv,
            probs,
            z,
            norm2,
            h2,
            u,
            a,
        });
    }

    let n_t = batch.targets.len();
    let xt = Matrix::from_fn(n_t, d, |r, c| x.get(batch.targets[r].0, c));
    let mut hf = Matrix::zeros(n_t, d);
    let normf = norm_rows(&xt, &w.lnf_g, &w.lnf_b, &mut hf);
    let mut logits = matmul(&hf, &w.unembed);
    let mut loss = T::zero();
    for (r, &(_, t)) in batch.targets.iter().enumerate() {
        let row = logits.row_mut(r);
        loss += log_sum_exp(row) - row[t as usize];
        softmax_in_place(row);
    }
    loss /= T::of(n_t as f64);
    Ok(Tape {
        layers,
        normf,
        hf,
        probs: logits,
        loss,
    })
}

/// Mean next-token cross-entropy over the batch's supervised positions.
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &PackedBatch) -> Result<T> {
    Ok(forward_tape(model, batch)?.loss)
}

/// Gradient of [`batch_loss`] with respect to every weight tensor.
pub(crate) fn backward<T: Scalar>(model: &Model<T>, batch: &PackedBatch, tape: &Tape<T>) -> Weights<T> {
    let cfg = model.config();
    let w = model.weights();
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let n_rows = batch.n_rows();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut g = Weights::<T>::zeros(cfg);
    for t in g.tensors_mut() {
        t.fill(T::zero());
    }

    let n_t = batch.targets.len();
    let inv = T::one() / T::of(n_t as f64);
    let mut dlogits = tape.probs.clone();
    for (r, &(_, t)) in batch.targets.iter().enumerate() {
        let row = dlogits.row_mut(r);
        row[t as usize] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    add_matmul_tn(&mut g.unembed, &tape.hf, &dlogits);
    let dhf = matmul_nt(&dlogits, &w.unembed);
    let dxt = norm_backward(&tape.normf, &w.lnf_g, &dhf, &mut g.lnf_g, &mut g.lnf_b);
    let mut dx = Matrix::<T>::zeros(n_rows, d);
    for (r, &(row, _)) in batch.targets.iter().enumerate() {
        for (o, &v) in dx.row_mut(row).iter_mut().zip(dxt.row(r)) {
            *o += v;
        }
    }

    for (li, lt) in tape.layers.iter().enumerate().rev() {
        let lw = &w.layers[li];
        let lg = &mut g.layers[li];

        // MLP branch.
        dx.sum_rows_into(lg.b_down.as_mut_slice());
        add_matmul_tn(&mut lg.w_down, &lt.a, &dx);
        let mut du = matmul_nt(&dx, &lw.w_down);
        match cfg.activation {
            Activation::Relu => {
                for (v, &u) in du.as_mut_slice().iter_mut().zip(lt.u.as_slice()) {
                    if u <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Activation::GeluTanh => {
                for (v, &u) in du.as_mut_slice().iter_mut().zip(lt.u.as_slice()) {
                    *v *= gelu_tanh_grad(u);
                }
            }
        }
        du.sum_rows_into(lg.b_up.as_mut_slice());
        add_matmul_tn(&mut lg.w_up, &lt.h2, &du);
        let dh2 = matmul_nt(&du, &lw.w_up);
        dx.add_assign(&norm_backward(&lt.norm2, &lw.ln2_g, &dh2, &mut lg.ln2_g, &mut lg.ln2_b));

        // Attention branch.
        dx.sum_rows_into(lg.b_out.as_mut_slice());
        add_matmul_tn(&mut lg.w_out, &lt.z, &dx);
        let dz = matmul_nt(&dx, &lw.w_out);
        let mut dqkv = Matrix::<T>::zeros(n_rows, 3 * d);
        let mut dp = Vec::new();
        for (si, &(r0, n)) in batch.segments.iter().enumerate() {
            for head in 0..cfg.n_heads {
                let lo = head * dh;
                let p = &lt.probs[si * cfg.n_heads + head];
                for i in 0..n {
                    let dzi: Vec<T> = dz.row(r0 + i)[lo..lo + dh].to_vec();
                    dp.clear();
                    let mut dot = T::zero();
                    for j in 0..=i {
                        let v = &lt.qkv.row(r0 + j)[2 * d + lo..2 * d + lo + dh];
                        let dpij: T = dzi.iter().zip(v).map(|(&a, &b)| a * b).sum();
                        dot += dpij * p[i * n + j];
                        dp.push(dpij);
                        let pij = p[i * n + j];
                        let dv = &mut dqkv.row_mut(r0 + j)[2 * d + lo..2 * d + lo + dh];
                        for (o, &a) in dv.iter_mut().zip(&dzi) {
                            *o += pij * a;
                        }
                    }
                    let qi: Vec<T> = lt.qkv.row(r0 + i)[lo..lo + dh].to_vec();
                    let mut dqi = vec![T::zero(); dh];
                    for j in 0..=i {
                        let ds = p[i * n + j] * (dp[j] - dot) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj = &lt.qkv.row(r0 + j)[d + lo..d + lo + dh];
                        for (o, &k) in dqi.iter_mut().zip(kj) {
                            *o += ds * k;
                        }
                        let dk = &mut dqkv.row_mut(r0 + j)[d + lo..d + lo + dh];
                        for (o, &q) in dk.iter_mut().zip(&qi) {
                            *o += ds * q;
                        }
                    }
                    let dq = &mut dqkv.row_mut(r0 + i)[lo..lo + dh];
                    for (o, v) in dq.iter_mut().zip(dqi) {
                        *o += v;
                    }
                }
            }
        }
        dqkv.sum_rows_into(lg.b_qkv.as_mut_slice());
        add_matmul_tn(&mut lg.w_qkv, &lt.h1, &dqkv);
        let dh1 = matmul_nt(&dqkv, &lw.w_qkv);
        dx.add_assign(&norm_backward(&lt.norm1, &lw.ln1_g, &dh1, &mut lg.ln1_g, &mut lg.ln1_b));
    }

    for i in 0..n_rows {
        if batch.soft[i].is_none() {
            let t = batch.tokens[i] as usize;
            for (o, &v) in g.tok_emb.row_mut(t).iter_mut().zip(dx.row(i)) {
                *o += v;
            }
        }
        let p = batch.positions[i];
        for (o, &v) in g.pos_emb.row_mut(p).iter_mut().zip(dx.row(i)) {
            *o += v;
        }
    }
    g
}

/// Loss and gradient in one call.
pub fn loss_and_grad<T: Scalar>(model: &Model<T>, batch: &PackedBatch) -> Result<(T, Weights<T>)> {
    let tape = forward_tape(model, batch)?;
    let g = backward(model, batch, &tape);
    Ok((tape.loss, g))
}
