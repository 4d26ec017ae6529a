//! Bilinear-pooling fusion operators.
//!
//! MCB approximates the outer product of two vectors with count sketches
//! combined by circular convolution; MFB/MFH factorize the bilinear form
//! with low-rank projections, sum-pooling and an optional cascade. Both
//! finish with signed square root and L2 normalization.

use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NumericsError, RngState, Tensor, Var};

/// Fixed hash/sign maps for a count sketch. Constructed once from a seed
/// and identical across calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    #[serde(skip)]
    hash: Vec<usize>,
    #[serde(skip)]
    sign: Vec<f64>,
}

impl SketchParams {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        assert!(output_dim >= 1, "sketch output dim must be positive");
        let mut rng = RngState::new(seed);
        let hash = (0..input_dim)
            .map(|_| rng.below(output_dim as u64) as usize)
            .collect();
        let sign = (0..input_dim)
            .map(|_| if rng.flip(0.5) { 1.0 } else { -1.0 })
            .collect();
        SketchParams {
            input_dim,
            output_dim,
            seed,
            hash,
            sign,
        }
    }

    /// Rebuilds the maps after deserialization (they are seed-derived).
    pub fn rehydrate(&mut self) {
        *self = SketchParams::new(self.input_dim, self.output_dim, self.seed);
    }

    pub fn hash(&self) -> &[usize] {
        &self.hash
    }

    pub fn sign(&self) -> &[f64] {
        &self.sign
    }
}

/// Count-sketch projection `out[h(i)] += s(i)·x[i]`.
pub fn count_sketch(g: &mut Graph, x: Var, sp: &SketchParams) -> Result<Var, NumericsError> {
    if g.shape(x) != [sp.input_dim] {
        return Err(NumericsError::DimMismatch {
            op: "count_sketch".into(),
            detail: format!("x {:?}, sketch expects [{}]", g.shape(x), sp.input_dim),
        });
    }
    g.count_sketch(x, &sp.hash, &sp.sign, sp.output_dim)
}

/// Compact bilinear pooling: sketch both vectors, circular-convolve,
/// signed sqrt, L2 normalize. All-zero outputs stay all-zero.
pub fn mcb_pool(
    g: &mut Graph,
    x: Var,
    y: Var,
    sp_x: &SketchParams,
    sp_y: &SketchParams,
) -> Result<Var, NumericsError> {
    if sp_x.output_dim != sp_y.output_dim {
        return Err(NumericsError::DimMismatch {
            op: "mcb_pool".into(),
            detail: format!(
                "sketch output dims differ: {} vs {}",
                sp_x.output_dim, sp_y.output_dim
            ),
        });
    }
    let px = count_sketch(g, x, sp_x)?;
    let py = count_sketch(g, y, sp_y)?;
    let conv = g.circular_convolution(px, py)?;
    let ss = g.signed_sqrt(conv)?;
    g.l2_normalize(ss)
}

/// Low-rank factor matrices for a cascade of MFB blocks.
#[derive(Debug, Clone)]
pub struct MfhParams {
    pub dim_x: usize,
    pub dim_y: usize,
    /// Factor count `k`: each output unit pools `k` projected values.
    pub factor_k: usize,
    /// Per-block output dim `o`.
    pub output_dim: usize,
    pub dropout: f64,
    /// `(U, V)` per block: `[dim_x, k·o]` and `[dim_y, k·o]`.
    pub blocks: Vec<(Tensor, Tensor)>,
}

impl MfhParams {
    pub fn init(
        dim_x: usize,
        dim_y: usize,
        factor_k: usize,
        output_dim: usize,
        block_count: usize,
        dropout: f64,
        rng: &mut RngState,
    ) -> Self {
        assert!(block_count >= 1, "mfh needs at least one block");
        let width = factor_k * output_dim;
        let bx = 1.0 / (dim_x as f64).sqrt();
        let by = 1.0 / (dim_y as f64).sqrt();
        let blocks = (0..block_count)
            .map(|_| {
                (
                    Tensor::uniform(vec![dim_x, width], -bx, bx, rng),
                    Tensor::uniform(vec![dim_y, width], -by, by, rng),
                )
            })
            .collect();
        MfhParams {
            dim_x,
            dim_y,
            factor_k,
            output_dim,
            dropout,
            blocks,
        }
    }

    pub fn fused_dim(&self) -> usize {
        self.blocks.len() * self.output_dim
    }
}

fn vecmat(g: &mut Graph, x: Var, w: Var) -> Result<Var, NumericsError> {
    let m = g.stack_rows(&[x])?;
    let y = g.matmul(m, w)?;
    g.row(y, 0)
}

/// One factorized bilinear block:
/// `z = dropout(Uᵀx ⊙ Vᵀy)`, sum-pool windows of `k`, signed sqrt,
/// L2 normalize. Returns `(normalized output [o], pre-pool intermediate)`.
fn mfb_block_inner(
    g: &mut Graph,
    x: Var,
    y: Var,
    u: Var,
    v: Var,
    factor_k: usize,
    output_dim: usize,
    dropout: f64,
    rng: &mut RngState,
    training: bool,
    carry: Option<Var>,
) -> Result<(Var, Var), NumericsError> {
    let width = factor_k * output_dim;
    let (su, sv) = (g.shape(u).to_vec(), g.shape(v).to_vec());
    if su.len() != 2 || su[1] != width {
        return Err(NumericsError::InvalidConfig(format!(
            "mfb U has shape {su:?} but k·o = {width}"
        )));
    }
    if sv.len() != 2 || sv[1] != width {
        return Err(NumericsError::InvalidConfig(format!(
            "mfb V has shape {sv:?} but k·o = {width}"
        )));
    }
    let ux = vecmat(g, x, u)?;
    let vy = vecmat(g, y, v)?;
    let prod = g.mul(ux, vy)?;
    let mixed = match carry {
        Some(c) => g.mul(prod, c)?,
        None => prod,
    };
    let dropped = g.dropout(mixed, dropout, rng, training)?;
    let pooled = g.sum_pool_windows(dropped, factor_k)?;
    let ss = g.signed_sqrt(pooled)?;
    let out = g.l2_normalize(ss)?;
    Ok((out, dropped))
}

/// Single factorized bilinear pooling block.
pub fn mfb_block(
    g: &mut Graph,
    x: Var,
    y: Var,
    u: Var,
    v: Var,
    factor_k: usize,
    output_dim: usize,
    dropout: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<Var, NumericsError> {
    mfb_block_inner(
        g, x, y, u, v, factor_k, output_dim, dropout, rng, training, None,
    )
    .map(|(out, _)| out)
}

/// Cascaded MFB blocks: block t's pre-pooling intermediate multiplies
/// into block t+1's; the per-block outputs are concatenated.
pub fn mfh_pool(
    g: &mut Graph,
    x: Var,
    y: Var,
    block_vars: &[(Var, Var)],
    factor_k: usize,
    output_dim: usize,
    dropout: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<Var, NumericsError> {
    if block_vars.is_empty() {
        return Err(NumericsError::EmptyInput("mfh_pool".into()));
    }
    let mut outs = Vec::with_capacity(block_vars.len());
    let mut carry: Option<Var> = None;
    for (u, v) in block_vars {
        let (out, inter) = mfb_block_inner(
            g, x, y, *u, *v, factor_k, output_dim, dropout, rng, training, carry,
        )?;
        outs.push(out);
        carry = Some(inter);
    }
    g.concat_vec(&outs)
}
