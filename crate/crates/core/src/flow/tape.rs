//! Recording of the unmixing pass on an autodiff tape.
//!
//! Alongside the batch of outputs, the pass propagates input tangents so the
//! Jacobian columns of `x -> s` are available as tape nodes and can enter a
//! differentiable regularizer.

use nalgebra::DMatrix;

use super::coupling::{CouplingFlow, FlowMode, Mlp};
use crate::autodiff::{Gradients, Tape, Var};

struct MlpVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl MlpVars {
    fn record(tape: &mut Tape, net: &Mlp) -> Self {
        Self {
            w1: tape.leaf(net.w1.clone()),
            b1: tape.leaf(DMatrix::from_row_slice(1, net.b1.len(), net.b1.as_slice())),
            w2: tape.leaf(net.w2.clone()),
            b2: tape.leaf(DMatrix::from_row_slice(1, net.b2.len(), net.b2.as_slice())),
        }
    }

    fn push_gradient(&self, grads: &Gradients, out: &mut Vec<f64>) {
        for v in [self.w1, self.b1, self.w2, self.b2] {
            super::coupling::push_row_major(&grads.wrt(v), out);
        }
    }
}

/// Tape leaves for every flow parameter.
pub struct FlowVars {
    layers: Vec<(MlpVars, MlpVars)>,
}

/// Per-network activations reused by tangent propagation.
struct NetPass {
    out: Var,
    hidden_slope: Var,
}

fn net_forward(tape: &mut Tape, vars: &MlpVars, input: Var) -> NetPass {
    let pre = tape.matmul_t(input, vars.w1);
    let pre = tape.add_row(pre, vars.b1);
    let hidden = tape.tanh(pre);
    let sq = tape.square(hidden);
    let neg = tape.neg(sq);
    let hidden_slope = tape.add_scalar(neg, 1.0);
    let out = tape.matmul_t(hidden, vars.w2);
    let out = tape.add_row(out, vars.b2);
    NetPass { out, hidden_slope }
}

fn net_tangent(tape: &mut Tape, vars: &MlpVars, pass: &NetPass, d_input: Var) -> Var {
    let dpre = tape.matmul_t(d_input, vars.w1);
    let dh = tape.mul(dpre, pass.hidden_slope);
    tape.matmul_t(dh, vars.w2)
}

pub struct InversePass {
    /// `B x n` recovered sources.
    pub output: Var,
    /// `B x 1` values of `log|det J_inverse|`; `None` in volume-preserving mode.
    pub log_det: Option<Var>,
    /// For each input direction `j`, the `B x n` matrix whose row `b` is
    /// column `j` of the unmixing Jacobian at sample `b`.
    pub jacobian_columns: Vec<Var>,
}

impl FlowVars {
    pub fn record(tape: &mut Tape, flow: &CouplingFlow) -> Self {
        Self {
            layers: flow
                .layers()
                .iter()
                .map(|l| (MlpVars::record(tape, &l.scale_net), MlpVars::record(tape, &l.shift_net)))
                .collect(),
        }
    }

    /// Flat gradient in the order of [`CouplingFlow::params`].
    pub fn gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (scale, shift) in &self.layers {
            scale.push_gradient(grads, &mut out);
            shift.push_gradient(grads, &mut out);
        }
        out
    }

    /// Records `x -> f^{-1}(x)` for a `B x n` batch; with `with_jacobian`,
    /// also the `n` Jacobian columns.
    pub fn inverse(&self, tape: &mut Tape, flow: &CouplingFlow, x: Var, with_jacobian: bool) -> InversePass {
        let n = flow.dim();
        let batch = tape.value(x).nrows();
        let vp = flow.mode() == FlowMode::VolumePreserving;
        let mut tangents: Vec<Var> = if with_jacobian {
            (0..n)
                .map(|j| tape.leaf(DMatrix::from_fn(batch, n, |_, c| if c == j { 1.0 } else { 0.0 })))
                .collect()
        } else {
            Vec::new()
        };
        let mut state = x;
        let mut log_det: Option<Var> = None;

        for (layer, (scale_vars, shift_vars)) in flow.layers().iter().zip(&self.layers).rev() {
            let cond = &layer.conditioner;
            let trans = &layer.transformed;
            let yc = tape.select_cols(state, cond);
            let yt = tape.select_cols(state, trans);

            let sp = net_forward(tape, scale_vars, yc);
            let squashed = tape.tanh(sp.out);
            let mut scale = tape.scale(squashed, 0.5);
            if vp {
                scale = tape.vp_adjust(scale);
            }
            let tp = net_forward(tape, shift_vars, yc);

            let neg_scale = tape.neg(scale);
            let inv_e = tape.exp(neg_scale);
            let centered = tape.sub(yt, tp.out);
            let st = tape.mul(centered, inv_e);

            if !vp {
                let rs = tape.row_sum(scale);
                let contrib = tape.neg(rs);
                log_det = Some(match log_det {
                    None => contrib,
                    Some(acc) => tape.add(acc, contrib),
                });
            }

            if !tangents.is_empty() {
                let sq = tape.square(squashed);
                let negsq = tape.neg(sq);
                let squash_slope = tape.add_scalar(negsq, 1.0);
                for tangent in tangents.iter_mut() {
                    let dyc = tape.select_cols(*tangent, cond);
                    let dyt = tape.select_cols(*tangent, trans);
                    let draw = net_tangent(tape, scale_vars, &sp, dyc);
                    let dsq = tape.mul(draw, squash_slope);
                    let mut dscale = tape.scale(dsq, 0.5);
                    if vp {
                        dscale = tape.vp_adjust(dscale);
                    }
                    let dshift = net_tangent(tape, shift_vars, &tp, dyc);
                    let dcentered = tape.sub(dyt, dshift);
                    let first = tape.mul(dcentered, inv_e);
                    let second = tape.mul(st, dscale);
                    let dst = tape.sub(first, second);
                    *tangent = tape.assemble(&[(dyc, cond), (dst, trans)], n);
                }
            }

            state = tape.assemble(&[(yc, cond), (st, trans)], n);
        }

        InversePass {
            output: state,
            log_det,
            jacobian_columns: tangents,
        }
    }
}
