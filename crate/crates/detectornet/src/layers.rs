//! Shared building blocks: forward-pass context (train/eval + dropout), the
//! FFN residual block used by both attention and graph-convolution modules,
//! and parameter initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state: mode and the dropout RNG. Eval mode never touches
/// the RNG, so eval calls are bit-deterministic.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> ForwardCtx<'a> {
    /// Inverted dropout: identity in eval mode.
    pub fn apply_dropout(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.mode == Mode::Eval || self.dropout <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.dropout;
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        x.mul(&Tensor::from_vec(&x.shape(), mask)?)
    }
}

/// Position-wise feed-forward block with residual and layer normalization:
/// `LayerNorm(ReLU(W2 ReLU(W1 x + b1) + b2) + x)`.
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
}

impl FfnParams {
    pub fn init(rng: &mut ChaCha8Rng, width: usize, hidden: usize) -> FfnParams {
        FfnParams {
            w1: glorot(rng, width, hidden),
            b1: Tensor::param(&[hidden], vec![0.0; hidden]).unwrap(),
            w2: glorot(rng, hidden, width),
            b2: Tensor::param(&[width], vec![0.0; width]).unwrap(),
            ln_gain: Tensor::param(&[width], vec![1.0; width]).unwrap(),
            ln_bias: Tensor::param(&[width], vec![0.0; width]).unwrap(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
            (format!("{prefix}.ln_gain"), self.ln_gain.clone()),
            (format!("{prefix}.ln_bias"), self.ln_bias.clone()),
        ]
    }

    pub fn element_count(width: usize, hidden: usize) -> usize {
        width * hidden + hidden + hidden * width + width + 2 * width
    }
}

pub fn ffn_block(x: &Tensor, ffn: &FfnParams, ctx: &mut ForwardCtx) -> Result<Tensor> {
    let h = x.matmul(&ffn.w1)?.add(&ffn.b1)?.relu()?;
    let h = ctx.apply_dropout(&h)?;
    let o = h.matmul(&ffn.w2)?.add(&ffn.b2)?.relu()?;
    o.add(x)?.layer_norm(&ffn.ln_gain, &ffn.ln_bias)
}

/// Query/key/value projection matrices for one attention head.
pub struct AttnTriplet {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl AttnTriplet {
    pub fn init(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize) -> AttnTriplet {
        AttnTriplet {
            w_q: glorot(rng, c_in, c_out),
            w_k: glorot(rng, c_in, c_out),
            w_v: glorot(rng, c_in, c_out),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w_q"), self.w_q.clone()),
            (format!("{prefix}.w_k"), self.w_k.clone()),
            (format!("{prefix}.w_v"), self.w_v.clone()),
        ]
    }
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-a..a))
        .collect();
    Tensor::param(&[fan_in, fan_out], data).unwrap()
}

/// Standard normal scaled by 0.1, used for node embeddings.
pub fn embedding_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * 0.1
        })
        .collect();
    Tensor::param(&[rows, cols], data).unwrap()
}
