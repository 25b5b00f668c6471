//! Dynamic spatial graph convolution: diffusion over the static forward and
//! backward transition matrices plus powers of the learned dynamic adjacency,
//! wrapped in an FFN block.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{
    adaptive_adjacency, attention_adjacency, fuse_dynamic_adjacency, DetectorGraph,
    DynamicAdjacencyParams,
};
use crate::layers::{ffn_block, glorot, FfnParams, ForwardCtx};
use crate::tensor::Tensor;

/// Per-order weight triplets and the dynamic-adjacency parameters.
///
/// Ablations are encoded as empty weight lists: "w/o SA" drops `w_fwd` and
/// `w_bwd`, "w/o DA" drops `w_dyn`. The dynamic-adjacency parameter block is
/// allocated either way so parameter naming stays stable across variants.
pub struct DsgcnParams {
    pub k_order: usize,
    pub w_fwd: Vec<Tensor>,
    pub w_bwd: Vec<Tensor>,
    pub w_dyn: Vec<Tensor>,
    pub adj: DynamicAdjacencyParams,
    pub ffn: FfnParams,
}

impl DsgcnParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut ChaCha8Rng,
        n_nodes: usize,
        c_in: usize,
        c_out: usize,
        k_order: usize,
        embed_dim: usize,
        input_len: usize,
        ffn_hidden: usize,
        with_static: bool,
        with_dynamic: bool,
    ) -> DsgcnParams {
        let stack = |rng: &mut ChaCha8Rng, on: bool| -> Vec<Tensor> {
            if on {
                (0..=k_order).map(|_| glorot(rng, c_in, c_out)).collect()
            } else {
                Vec::new()
            }
        };
        DsgcnParams {
            k_order,
            w_fwd: stack(rng, with_static),
            w_bwd: stack(rng, with_static),
            w_dyn: stack(rng, with_dynamic),
            adj: DynamicAdjacencyParams::init(rng, n_nodes, embed_dim, input_len * c_in, c_in),
            ffn: FfnParams::init(rng, c_out, ffn_hidden),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (stack, tag) in [(&self.w_fwd, "w_fwd"), (&self.w_bwd, "w_bwd"), (&self.w_dyn, "w_dyn")]
        {
            for (k, w) in stack.iter().enumerate() {
                out.push((format!("{prefix}.{tag}{k}"), w.clone()));
            }
        }
        out.extend(self.adj.named(&format!("{prefix}.adj")));
        out.extend(self.ffn.named(&format!("{prefix}.ffn")));
        out
    }
}

/// `Z = Σ_{k=0..K} P_f^k X W_k1 + P_b^k X W_k2 + A_dynamic^k X W_k3`.
///
/// Matrix powers act on the node axis independently per time step and are
/// applied iteratively (k-step propagation), never materialized. `x` is
/// `[N, P, C]` or `[B, N, P, C]`; `a_dynamic` may carry a matching batch axis.
pub fn dynamic_diffusion_conv(
    x: &Tensor,
    p_f: &Tensor,
    p_b: &Tensor,
    a_dynamic: Option<&Tensor>,
    params: &DsgcnParams,
) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 && shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "dynamic_diffusion_conv expects [N,P,C] or [B,N,P,C], got {:?}",
            shape
        )));
    }
    let r = shape.len();
    let (n, p, c) = (shape[r - 3], shape[r - 2], shape[r - 1]);
    let flat_shape: Vec<usize> = if r == 3 {
        vec![n, p * c]
    } else {
        vec![shape[0], n, p * c]
    };
    let flat = x.reshape(&flat_shape)?;

    let mut z: Option<Tensor> = None;
    let mut branches: Vec<(&Tensor, &Vec<Tensor>)> = Vec::new();
    if !params.w_fwd.is_empty() {
        branches.push((p_f, &params.w_fwd));
        branches.push((p_b, &params.w_bwd));
    }
    if let Some(a_dyn) = a_dynamic {
        if !params.w_dyn.is_empty() {
            branches.push((a_dyn, &params.w_dyn));
        }
    } else if !params.w_dyn.is_empty() {
        return Err(Error::State(
            "dynamic branch weights present but no A_dynamic supplied".into(),
        ));
    }
    if branches.is_empty() {
        return Err(Error::Config(
            "diffusion convolution has no active branches".into(),
        ));
    }
    for (mat, weights) in branches {
        let mut cur = flat.clone();
        for (order, w) in weights.iter().enumerate() {
            let xk = if order == 0 {
                x.clone()
            } else {
                cur = mat.matmul(&cur)?;
                cur.reshape(&shape)?
            };
            let term = xk.matmul(w)?;
            z = Some(match z {
                Some(acc) => acc.add(&term)?,
                None => term,
            });
        }
    }
    Ok(z.expect("at least one branch"))
}

/// Compute this layer's dynamic adjacency from its input.
pub fn layer_dynamic_adjacency(x: &Tensor, adj: &DynamicAdjacencyParams) -> Result<Tensor> {
    let a_att = attention_adjacency(x, adj)?;
    let a_adp = adaptive_adjacency(&adj.e1, &adj.e2)?;
    fuse_dynamic_adjacency(&a_att, &a_adp, &adj.w_att, &adj.w_adp)
}

/// Full DSGCN: recompute `A_dynamic` from the layer input, diffuse, and wrap
/// in the FFN residual block.
pub fn dsgcn_forward(
    x: &Tensor,
    graph: &DetectorGraph,
    params: &DsgcnParams,
    ctx: &mut ForwardCtx,
) -> Result<Tensor> {
    let a_dyn = if params.w_dyn.is_empty() {
        None
    } else {
        Some(layer_dynamic_adjacency(x, &params.adj)?)
    };
    let z = dynamic_diffusion_conv(x, &graph.p_f, &graph.p_b, a_dyn.as_ref(), params)?;
    ffn_block(&z, &params.ffn, ctx)
}
