//! Static transition matrices and the learned dynamic adjacency.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{embedding_init, glorot};
use crate::tensor::Tensor;

/// Detector graph: static adjacency plus derived forward/backward
/// row-stochastic transition matrices.
pub struct DetectorGraph {
    pub n_nodes: usize,
    pub adjacency: Vec<f64>,
    /// rowNormalize(A), held as a constant tensor.
    pub p_f: Tensor,
    /// rowNormalize(A^T)
    pub p_b: Tensor,
}

impl DetectorGraph {
    pub fn new(n_nodes: usize, adjacency: Vec<f64>) -> Result<DetectorGraph> {
        if adjacency.len() != n_nodes * n_nodes {
            return Err(Error::Dimension(format!(
                "adjacency has {} entries, expected {}x{}",
                adjacency.len(),
                n_nodes,
                n_nodes
            )));
        }
        let (p_f, p_b) = build_transitions(&adjacency, n_nodes)?;
        Ok(DetectorGraph {
            n_nodes,
            adjacency,
            p_f: Tensor::from_vec(&[n_nodes, n_nodes], p_f)?,
            p_b: Tensor::from_vec(&[n_nodes, n_nodes], p_b)?,
        })
    }
}

/// Row-normalize `A` and `A^T`. Rows that sum to zero (isolated nodes) stay
/// all-zero; no self-loop is injected.
pub fn build_transitions(adjacency: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if adjacency.len() != n * n {
        return Err(Error::Dimension(format!(
            "adjacency has {} entries, expected {n}x{n}",
            adjacency.len()
        )));
    }
    if let Some(v) = adjacency.iter().find(|v| **v < 0.0) {
        return Err(Error::Data(format!("negative adjacency entry {v}")));
    }
    let mut p_f = vec![0.0; n * n];
    let mut p_b = vec![0.0; n * n];
    for i in 0..n {
        let row_sum: f64 = adjacency[i * n..(i + 1) * n].iter().sum();
        if row_sum > 0.0 {
            for j in 0..n {
                p_f[i * n + j] = adjacency[i * n + j] / row_sum;
            }
        }
        let col_sum: f64 = (0..n).map(|j| adjacency[j * n + i]).sum();
        if col_sum > 0.0 {
            for j in 0..n {
                p_b[i * n + j] = adjacency[j * n + i] / col_sum;
            }
        }
    }
    Ok((p_f, p_b))
}

/// Parameters of the dynamic spatial structure: node embeddings for the
/// adaptive adjacency, element-wise fusion gates, and the query/key
/// projections of the attention adjacency.
pub struct DynamicAdjacencyParams {
    pub e1: Tensor,
    pub e2: Tensor,
    pub w_att: Tensor,
    pub w_adp: Tensor,
    /// Projections from the flattened per-node time-channel vector (P*C) to
    /// the d_k-dimensional query/key space.
    pub w_sq: Tensor,
    pub w_sk: Tensor,
    pub d_k: usize,
}

impl DynamicAdjacencyParams {
    pub fn init(
        rng: &mut ChaCha8Rng,
        n_nodes: usize,
        embed_dim: usize,
        flat_width: usize,
        d_k: usize,
    ) -> DynamicAdjacencyParams {
        DynamicAdjacencyParams {
            e1: embedding_init(rng, n_nodes, embed_dim),
            e2: embedding_init(rng, n_nodes, embed_dim),
            w_att: Tensor::param(&[n_nodes, n_nodes], vec![1.0; n_nodes * n_nodes]).unwrap(),
            w_adp: Tensor::param(&[n_nodes, n_nodes], vec![1.0; n_nodes * n_nodes]).unwrap(),
            w_sq: glorot(rng, flat_width, d_k),
            w_sk: glorot(rng, flat_width, d_k),
            d_k,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.e1"), self.e1.clone()),
            (format!("{prefix}.e2"), self.e2.clone()),
            (format!("{prefix}.w_att"), self.w_att.clone()),
            (format!("{prefix}.w_adp"), self.w_adp.clone()),
            (format!("{prefix}.w_sq"), self.w_sq.clone()),
            (format!("{prefix}.w_sk"), self.w_sk.clone()),
        ]
    }

    pub fn element_count(n_nodes: usize, embed_dim: usize, flat_width: usize, d_k: usize) -> usize {
        2 * n_nodes * embed_dim + 2 * n_nodes * n_nodes + 2 * flat_width * d_k
    }
}

/// `A_adp = rowSoftmax(E1 * E2^T)`: learned input-independent soft adjacency.
pub fn adaptive_adjacency(e1: &Tensor, e2: &Tensor) -> Result<Tensor> {
    if e1.shape() != e2.shape() {
        return Err(Error::Dimension(format!(
            "embedding shapes differ: {:?} vs {:?}",
            e1.shape(),
            e2.shape()
        )));
    }
    let scores = e1.matmul(&e2.transpose_last2()?)?;
    scores.softmax(scores.rank() - 1)
}

/// Input-dependent node-pair scores: each node's time-channel block is
/// flattened, projected to query/key space, and scored as `Q K^T / sqrt(d_k)`.
/// Accepts `[N, P, C]` or batched `[B, N, P, C]`; scores are unnormalized
/// (normalization happens in [`fuse_dynamic_adjacency`]).
pub fn attention_adjacency(x: &Tensor, params: &DynamicAdjacencyParams) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 && shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "attention_adjacency expects [N,P,C] or [B,N,P,C], got {:?}",
            shape
        )));
    }
    let (lead, n, p, c) = if shape.len() == 3 {
        (None, shape[0], shape[1], shape[2])
    } else {
        (Some(shape[0]), shape[1], shape[2], shape[3])
    };
    let flat_width = p * c;
    if params.w_sq.shape()[0] != flat_width {
        return Err(Error::Dimension(format!(
            "spatial projection expects flattened width {}, input provides {}",
            params.w_sq.shape()[0],
            flat_width
        )));
    }
    let flat = match lead {
        None => x.reshape(&[n, flat_width])?,
        Some(b) => x.reshape(&[b, n, flat_width])?,
    };
    let q = flat.matmul(&params.w_sq)?;
    let k = flat.matmul(&params.w_sk)?;
    let scale = 1.0 / (params.d_k as f64).sqrt();
    q.matmul(&k.transpose_last2()?)?.scale(scale)
}

/// `A_dynamic = rowSoftmax(W_att ⊙ A_att + W_adp ⊙ A_adp)`.
pub fn fuse_dynamic_adjacency(
    a_att: &Tensor,
    a_adp: &Tensor,
    w_att: &Tensor,
    w_adp: &Tensor,
) -> Result<Tensor> {
    let gated = w_att.mul(a_att)?.add(&w_adp.mul(a_adp)?)?;
    gated.softmax(gated.rank() - 1)
}
