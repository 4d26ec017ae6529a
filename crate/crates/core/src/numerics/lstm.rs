//! LSTM cell and fused sequence ops.
//!
//! `lstm_cell` composes tape primitives and is the reference path;
//! `lstm_sequence` runs a whole unrolled pass as one tape node with a
//! hand-written backward (BPTT), which is what the model uses. The two
//! paths are cross-checked in tests and by finite differences.

use super::graph::{sigmoid_scalar, Graph, Var};
use super::rng::RngState;
use super::tensor::Tensor;
use super::NumericsError;

/// Weights for one LSTM direction: per-gate `[input+hidden, hidden]`
/// matrices and `[hidden]` biases.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: Tensor,
    pub b_input: Tensor,
    pub w_forget: Tensor,
    pub b_forget: Tensor,
    pub w_cell: Tensor,
    pub b_cell: Tensor,
    pub w_output: Tensor,
    pub b_output: Tensor,
}

impl LstmParams {
    /// Uniform init in `[-1/sqrt(hidden), 1/sqrt(hidden)]`, forget-gate
    /// bias at 1.0.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let k = input_dim + hidden_dim;
        let w = |rng: &mut RngState| Tensor::uniform(vec![k, hidden_dim], -bound, bound, rng);
        let w_input = w(rng);
        let w_forget = w(rng);
        let w_cell = w(rng);
        let w_output = w(rng);
        let mut forget_bias = Tensor::zeros(vec![hidden_dim]);
        forget_bias.values_mut().fill(1.0);
        forget_bias.requires_grad = true;
        let bias = || {
            let mut t = Tensor::zeros(vec![hidden_dim]);
            t.requires_grad = true;
            t
        };
        LstmParams {
            input_dim,
            hidden_dim,
            w_input,
            b_input: bias(),
            w_forget,
            b_forget: forget_bias,
            w_cell,
            b_cell: bias(),
            w_output,
            b_output: bias(),
        }
    }

    /// Named views in a fixed order, for parameter stores and optimizers.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_input", &self.w_input),
            ("b_input", &self.b_input),
            ("w_forget", &self.w_forget),
            ("b_forget", &self.b_forget),
            ("w_cell", &self.w_cell),
            ("b_cell", &self.b_cell),
            ("w_output", &self.w_output),
            ("b_output", &self.b_output),
        ]
    }

    pub fn bind(&self, g: &mut Graph) -> Result<LstmVars, NumericsError> {
        Ok(LstmVars {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_input: g.leaf(self.w_input.shape(), self.w_input.values())?,
            b_input: g.leaf(self.b_input.shape(), self.b_input.values())?,
            w_forget: g.leaf(self.w_forget.shape(), self.w_forget.values())?,
            b_forget: g.leaf(self.b_forget.shape(), self.b_forget.values())?,
            w_cell: g.leaf(self.w_cell.shape(), self.w_cell.values())?,
            b_cell: g.leaf(self.b_cell.shape(), self.b_cell.values())?,
            w_output: g.leaf(self.w_output.shape(), self.w_output.values())?,
            b_output: g.leaf(self.b_output.shape(), self.b_output.values())?,
        })
    }
}

/// Tape handles for one LSTM direction's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: Var,
    pub b_input: Var,
    pub w_forget: Var,
    pub b_forget: Var,
    pub w_cell: Var,
    pub b_cell: Var,
    pub w_output: Var,
    pub b_output: Var,
}

impl LstmVars {
    fn check_dims(&self, g: &Graph) -> Result<(), NumericsError> {
        let k = self.input_dim + self.hidden_dim;
        for (name, w, b) in [
            ("input", self.w_input, self.b_input),
            ("forget", self.w_forget, self.b_forget),
            ("cell", self.w_cell, self.b_cell),
            ("output", self.w_output, self.b_output),
        ] {
            if g.shape(w) != [k, self.hidden_dim] || g.shape(b) != [self.hidden_dim] {
                return Err(NumericsError::DimMismatch {
                    op: format!("lstm {name} gate"),
                    detail: format!(
                        "w {:?} b {:?}, want [{k}, {h}] and [{h}]",
                        g.shape(w),
                        g.shape(b),
                        h = self.hidden_dim
                    ),
                });
            }
        }
        Ok(())
    }
}

fn vec_affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
    let m = g.stack_rows(&[x])?;
    let y = g.linear(m, w, b)?;
    g.row(y, 0)
}

/// One LSTM step from tape primitives:
/// gates on `[x; h]`, then `c' = f⊙c + i⊙g̃`, `h' = o⊙tanh(c')`.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmVars,
) -> Result<(Var, Var), NumericsError> {
    p.check_dims(g)?;
    if g.shape(x) != [p.input_dim] || g.shape(h) != [p.hidden_dim] || g.shape(c) != [p.hidden_dim]
    {
        return Err(NumericsError::DimMismatch {
            op: "lstm_cell".into(),
            detail: format!(
                "x {:?} h {:?} c {:?}, want [{}] [{h}] [{h}]",
                g.shape(x),
                g.shape(h),
                g.shape(c),
                p.input_dim,
                h = p.hidden_dim
            ),
        });
    }
    let z = g.concat_vec(&[x, h])?;
    let pre_i = vec_affine(g, z, p.w_input, p.b_input)?;
    let i = g.sigmoid(pre_i)?;
    let pre_f = vec_affine(g, z, p.w_forget, p.b_forget)?;
    let f = g.sigmoid(pre_f)?;
    let pre_c = vec_affine(g, z, p.w_cell, p.b_cell)?;
    let cand = g.tanh(pre_c)?;
    let pre_o = vec_affine(g, z, p.w_output, p.b_output)?;
    let o = g.sigmoid(pre_o)?;
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next)?;
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs an LSTM over `seq [n, input]` from zero state, producing hidden
/// states `[n, hidden]`. Forward and BPTT backward are a single tape node.
pub fn lstm_sequence(g: &mut Graph, seq: Var, p: &LstmVars) -> Result<Var, NumericsError> {
    let outs = lstm_sequence_multi(g, &[seq], p)?;
    Ok(outs[0])
}

/// Runs the same LSTM over several equal-length sequences in one fused
/// tape node, so each gate weight row is streamed once per position for
/// the whole batch. The stream processor uses this across the five
/// answer hypotheses.
pub fn lstm_sequence_multi(
    g: &mut Graph,
    seqs: &[Var],
    p: &LstmVars,
) -> Result<Vec<Var>, NumericsError> {
    p.check_dims(g)?;
    if seqs.is_empty() {
        return Err(NumericsError::EmptyInput("lstm_sequence_multi".into()));
    }
    let first = g.shape(seqs[0]);
    if first.len() != 2 || first[1] != p.input_dim {
        return Err(NumericsError::DimMismatch {
            op: "lstm_sequence".into(),
            detail: format!("seq {first:?}, want [n, {}]", p.input_dim),
        });
    }
    let n = first[0];
    if n == 0 {
        return Err(NumericsError::EmptyInput("lstm_sequence".into()));
    }
    for s in seqs {
        if g.shape(*s) != [n, p.input_dim] {
            return Err(NumericsError::DimMismatch {
                op: "lstm_sequence_multi".into(),
                detail: format!("{:?} vs [{n}, {}]", g.shape(*s), p.input_dim),
            });
        }
    }
    let batch = seqs.len();
    let (input_dim, hid) = (p.input_dim, p.hidden_dim);
    let k = input_dim + hid;

    let gate_params = [
        (p.w_input, p.b_input),
        (p.w_forget, p.b_forget),
        (p.w_cell, p.b_cell),
        (p.w_output, p.b_output),
    ];

    // Caches are [b][t*hid + j] flat; outputs sequence-major [b*n + t, j].
    let mut gate_i = vec![0.0; batch * n * hid];
    let mut gate_f = vec![0.0; batch * n * hid];
    let mut cand = vec![0.0; batch * n * hid];
    let mut gate_o = vec![0.0; batch * n * hid];
    let mut cell = vec![0.0; batch * n * hid];
    let mut tanh_cell = vec![0.0; batch * n * hid];
    let mut out_values = vec![0.0; batch * n * hid];
    {
        let mut z = vec![0.0; batch * k];
        let mut pre = vec![0.0; 4 * batch * hid];
        for t in 0..n {
            for b in 0..batch {
                let seq_v = g.value(seqs[b]);
                let zb = &mut z[b * k..(b + 1) * k];
                zb[..input_dim].copy_from_slice(&seq_v[t * input_dim..(t + 1) * input_dim]);
                if t == 0 {
                    zb[input_dim..].fill(0.0);
                } else {
                    zb[input_dim..]
                        .copy_from_slice(&out_values[(b * n + t - 1) * hid..(b * n + t) * hid]);
                }
            }
            for (gi, (w, bias)) in gate_params.iter().enumerate() {
                let wv = g.value(*w);
                let bv = g.value(*bias);
                for b in 0..batch {
                    pre[(gi * batch + b) * hid..(gi * batch + b + 1) * hid].copy_from_slice(bv);
                }
                for row in 0..k {
                    let w_row = &wv[row * hid..(row + 1) * hid];
                    for b in 0..batch {
                        let zp = z[b * k + row];
                        if zp == 0.0 {
                            continue;
                        }
                        let dst = &mut pre[(gi * batch + b) * hid..(gi * batch + b + 1) * hid];
                        for j in 0..hid {
                            dst[j] += zp * w_row[j];
                        }
                    }
                }
            }
            for b in 0..batch {
                let idx = (b * n + t) * hid;
                for j in 0..hid {
                    let i_v = sigmoid_scalar(pre[(b) * hid + j]);
                    let f_v = sigmoid_scalar(pre[(batch + b) * hid + j]);
                    let c_v = pre[(2 * batch + b) * hid + j].tanh();
                    let o_v = sigmoid_scalar(pre[(3 * batch + b) * hid + j]);
                    let c_prev = if t == 0 { 0.0 } else { cell[idx - hid + j] };
                    let c_new = f_v * c_prev + i_v * c_v;
                    let tc = c_new.tanh();
                    gate_i[idx + j] = i_v;
                    gate_f[idx + j] = f_v;
                    cand[idx + j] = c_v;
                    gate_o[idx + j] = o_v;
                    cell[idx + j] = c_new;
                    tanh_cell[idx + j] = tc;
                    out_values[idx + j] = o_v * tc;
                }
            }
        }
    }

    let out_holder = g.len();
    let seq_ids: Vec<usize> = seqs.iter().map(|s| s.0).collect();
    let param_ids: Vec<usize> = gate_params
        .iter()
        .flat_map(|(w, b)| [w.0, b.0])
        .collect();

    let stacked = g.push_node(
        vec![batch * n, hid],
        out_values,
        Some(Box::new(move |graph, upstream, sink| {
            let h_out = graph.value(Var(out_holder));
            let w_vals: Vec<&[f64]> =
                (0..4).map(|gi| graph.value(Var(param_ids[gi * 2]))).collect();

            let mut d_seq = vec![0.0; batch * n * input_dim];
            let mut d_w = vec![vec![0.0; k * hid]; 4];
            let mut d_b = vec![vec![0.0; hid]; 4];
            let mut dh_rec = vec![0.0; batch * hid];
            let mut dc_rec = vec![0.0; batch * hid];
            let mut dpre = vec![0.0; 4 * batch * hid];
            let mut z = vec![0.0; batch * k];
            for t in (0..n).rev() {
                for b in 0..batch {
                    let idx = (b * n + t) * hid;
                    for j in 0..hid {
                        let dh = upstream[idx + j] + dh_rec[b * hid + j];
                        let o = gate_o[idx + j];
                        let tc = tanh_cell[idx + j];
                        dpre[(3 * batch + b) * hid + j] = dh * tc * o * (1.0 - o);
                        let dc = dh * o * (1.0 - tc * tc) + dc_rec[b * hid + j];
                        let i = gate_i[idx + j];
                        let f = gate_f[idx + j];
                        let cv = cand[idx + j];
                        let cp = if t == 0 { 0.0 } else { cell[idx - hid + j] };
                        dpre[(batch + b) * hid + j] = dc * cp * f * (1.0 - f);
                        dpre[b * hid + j] = dc * cv * i * (1.0 - i);
                        dpre[(2 * batch + b) * hid + j] = dc * i * (1.0 - cv * cv);
                        dc_rec[b * hid + j] = dc * f;
                    }
                    let seq_v = graph.value(Var(seq_ids[b]));
                    let zb = &mut z[b * k..(b + 1) * k];
                    zb[..input_dim].copy_from_slice(&seq_v[t * input_dim..(t + 1) * input_dim]);
                    if t == 0 {
                        zb[input_dim..].fill(0.0);
                    } else {
                        zb[input_dim..].copy_from_slice(&h_out[idx - hid..idx]);
                    }
                }
                dh_rec.fill(0.0);
                for gi in 0..4 {
                    let wv = w_vals[gi];
                    let dwg = &mut d_w[gi];
                    for row in 0..k {
                        let w_row = &wv[row * hid..(row + 1) * hid];
                        let dw_row = &mut dwg[row * hid..(row + 1) * hid];
                        for b in 0..batch {
                            let dp = &dpre[(gi * batch + b) * hid..(gi * batch + b + 1) * hid];
                            let mut s = 0.0;
                            for j in 0..hid {
                                s += dp[j] * w_row[j];
                            }
                            if row < input_dim {
                                d_seq[(b * n + t) * input_dim + row] += s;
                            } else {
                                dh_rec[b * hid + row - input_dim] += s;
                            }
                            let zp = z[b * k + row];
                            if zp != 0.0 {
                                for j in 0..hid {
                                    dw_row[j] += zp * dp[j];
                                }
                            }
                        }
                    }
                    for b in 0..batch {
                        let dp = &dpre[(gi * batch + b) * hid..(gi * batch + b + 1) * hid];
                        for j in 0..hid {
                            d_b[gi][j] += dp[j];
                        }
                    }
                }
            }
            for b in 0..batch {
                sink.add_slice(
                    seq_ids[b],
                    &d_seq[b * n * input_dim..(b + 1) * n * input_dim],
                );
            }
            for gi in 0..4 {
                sink.add_slice(param_ids[gi * 2], &d_w[gi]);
                sink.add_slice(param_ids[gi * 2 + 1], &d_b[gi]);
            }
        })),
    );

    let mut outs = Vec::with_capacity(batch);
    for b in 0..batch {
        outs.push(g.slice_rows(stacked, b * n, n)?);
    }
    Ok(outs)
}

/// Bidirectional encoding: position t is
/// `[forward hidden at t ; backward hidden at t]`, shape `[n, 2*hidden]`.
pub fn bilstm_encode(
    g: &mut Graph,
    seq: Var,
    fwd: &LstmVars,
    bwd: &LstmVars,
) -> Result<Var, NumericsError> {
    let s = g.shape(seq);
    if s.is_empty() || s[0] == 0 {
        return Err(NumericsError::EmptyInput("bilstm_encode".into()));
    }
    let forward = lstm_sequence(g, seq, fwd)?;
    let reversed = g.reverse_rows(seq)?;
    let backward_rev = lstm_sequence(g, reversed, bwd)?;
    let backward = g.reverse_rows(backward_rev)?;
    g.concat_cols(&[forward, backward])
}

/// Bidirectional encoding of several equal-length sequences through the
/// same weights, batched into two fused nodes.
pub fn bilstm_encode_multi(
    g: &mut Graph,
    seqs: &[Var],
    fwd: &LstmVars,
    bwd: &LstmVars,
) -> Result<Vec<Var>, NumericsError> {
    let forwards = lstm_sequence_multi(g, seqs, fwd)?;
    let mut reversed = Vec::with_capacity(seqs.len());
    for s in seqs {
        reversed.push(g.reverse_rows(*s)?);
    }
    let backwards_rev = lstm_sequence_multi(g, &reversed, bwd)?;
    let mut outs = Vec::with_capacity(seqs.len());
    for (f, br) in forwards.iter().zip(&backwards_rev) {
        let b = g.reverse_rows(*br)?;
        outs.push(g.concat_cols(&[*f, b])?);
    }
    Ok(outs)
}
