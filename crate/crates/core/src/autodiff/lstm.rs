//! Fused LSTM recurrence node with hand-written backpropagation through time.
//!
//! The input projection `x·W_ih + b` is an ordinary matmul on the tape; this
//! node only runs the recurrent part, so a whole sequence costs one node.
//! Gate order along the last axis is input, forget, cell, output.

use super::graph::{sigmoid_scalar, Graph, Op, Var};
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

pub(crate) struct LstmTape<T> {
    pub gates_x: Var,
    pub w_hh: Var,
    reverse: bool,
    batch: usize,
    steps: usize,
    hidden: usize,
    /// Post-nonlinearity gate activations `[B, T, 4H]`.
    acts: Vec<T>,
    /// Cell states `[B, T, H]`.
    cells: Vec<T>,
}

impl<T: Real> LstmTape<T> {
    fn order(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        (0..self.steps).map(move |s| {
            if self.reverse {
                let t = self.steps - 1 - s;
                (t, (s > 0).then_some(t + 1))
            } else {
                (s, s.checked_sub(1))
            }
        })
    }

    /// Returns `(d gates_x, d w_hh)` for output gradient `g`.
    pub(crate) fn backward(&self, h: &Tensor<T>, w_hh: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let (b_n, t_n, hd) = (self.batch, self.steps, self.hidden);
        let g4 = 4 * hd;
        let hv = h.data();
        let gd = g.data();
        let mut dgx = vec![T::zero(); b_n * t_n * g4];
        let mut dw = vec![T::zero(); hd * g4];
        let mut dh_next = vec![T::zero(); b_n * hd];
        let mut dc_next = vec![T::zero(); b_n * hd];
        let mut dz = vec![T::zero(); b_n * g4];
        let mut h_prev = vec![T::zero(); b_n * hd];
        let one = T::one();

        let order: Vec<_> = self.order().collect();
        for &(t, prev) in order.iter().rev() {
            for b in 0..b_n {
                let a = &self.acts[(b * t_n + t) * g4..(b * t_n + t + 1) * g4];
                let c = &self.cells[(b * t_n + t) * hd..(b * t_n + t + 1) * hd];
                for j in 0..hd {
                    let (i, f, gg, o) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j]);
                    let tc = c[j].tanh();
                    let dh = gd[(b * t_n + t) * hd + j] + dh_next[b * hd + j];
                    let dc = dh * o * (one - tc * tc) + dc_next[b * hd + j];
                    let c_prev = prev.map_or(T::zero(), |p| self.cells[(b * t_n + p) * hd + j]);
                    let z = &mut dz[b * g4..(b + 1) * g4];
                    z[j] = dc * gg * i * (one - i);
                    z[hd + j] = dc * c_prev * f * (one - f);
                    z[2 * hd + j] = dc * i * (one - gg * gg);
                    z[3 * hd + j] = dh * tc * o * (one - o);
                    dc_next[b * hd + j] = dc * f;
                }
                dgx[(b * t_n + t) * g4..(b * t_n + t + 1) * g4].copy_from_slice(&dz[b * g4..(b + 1) * g4]);
            }
            match prev {
                Some(p) => {
                    for b in 0..b_n {
                        h_prev[b * hd..(b + 1) * hd].copy_from_slice(&hv[(b * t_n + p) * hd..(b * t_n + p + 1) * hd]);
                    }
                    T::gemm(hd, b_n, g4, &h_prev, true, &dz, false, &mut dw, true);
                    T::gemm(b_n, g4, hd, &dz, false, w_hh.data(), true, &mut dh_next, false);
                }
                None => dh_next.iter_mut().for_each(|v| *v = T::zero()),
            }
        }
        (
            Tensor::new(vec![b_n, t_n, g4], dgx).expect("shape"),
            Tensor::new(vec![hd, g4], dw).expect("shape"),
        )
    }
}

impl<T: Real> Graph<T> {
    /// Runs an LSTM over precomputed input gates `[B, T, 4H]` with recurrent
    /// weights `[H, 4H]`, from zero initial state. Returns hidden states
    /// `[B, T, H]`; with `reverse` the sequence is consumed back to front.
    pub fn lstm_recurrence(&mut self, gates_x: Var, w_hh: Var, reverse: bool) -> Result<Var> {
        let gx = self.value(gates_x);
        let w = self.value(w_hh);
        if gx.rank() != 3 || w.rank() != 2 || w.shape()[1] != 4 * w.shape()[0] || gx.shape()[2] != w.shape()[1] {
            return Err(Error::invalid(format!(
                "lstm: gates {:?} with recurrent weights {:?}",
                gx.shape(),
                w.shape()
            )));
        }
        let (b_n, t_n, g4) = (gx.shape()[0], gx.shape()[1], gx.shape()[2]);
        let hd = g4 / 4;
        let mut tape = LstmTape {
            gates_x,
            w_hh,
            reverse,
            batch: b_n,
            steps: t_n,
            hidden: hd,
            acts: vec![T::zero(); b_n * t_n * g4],
            cells: vec![T::zero(); b_n * t_n * hd],
        };
        let mut h_out = vec![T::zero(); b_n * t_n * hd];
        let mut h_prev = vec![T::zero(); b_n * hd];
        let mut z = vec![T::zero(); b_n * g4];
        let gxd = gx.data();
        let order: Vec<_> = tape.order().collect();
        for (t, prev) in order {
            for b in 0..b_n {
                z[b * g4..(b + 1) * g4].copy_from_slice(&gxd[(b * t_n + t) * g4..(b * t_n + t + 1) * g4]);
            }
            if prev.is_some() {
                T::gemm(b_n, hd, g4, &h_prev, false, w.data(), false, &mut z, true);
            }
            for b in 0..b_n {
                let zb = &z[b * g4..(b + 1) * g4];
                let base = (b * t_n + t) * g4;
                for j in 0..hd {
                    let i = sigmoid_scalar(zb[j]);
                    let f = sigmoid_scalar(zb[hd + j]);
                    let gg = zb[2 * hd + j].tanh();
                    let o = sigmoid_scalar(zb[3 * hd + j]);
                    let c_prev = prev.map_or(T::zero(), |p| tape.cells[(b * t_n + p) * hd + j]);
                    let c = f * c_prev + i * gg;
                    let h = o * c.tanh();
                    tape.acts[base + j] = i;
                    tape.acts[base + hd + j] = f;
                    tape.acts[base + 2 * hd + j] = gg;
                    tape.acts[base + 3 * hd + j] = o;
                    tape.cells[(b * t_n + t) * hd + j] = c;
                    h_out[(b * t_n + t) * hd + j] = h;
                    h_prev[b * hd + j] = h;
                }
            }
        }
        let rg = self.requires_grad(gates_x) || self.requires_grad(w_hh);
        let value = Tensor::new(vec![b_n, t_n, hd], h_out)?;
        Ok(self.push(value, Op::Lstm(Box::new(tape)), rg))
    }
}
