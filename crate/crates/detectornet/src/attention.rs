//! Multi-view temporal attention: per-view self-attention over chronological
//! thirds of the input window, global attention over the whole window, fusion
//! with a residual projection, and an FFN block.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{ffn_block, glorot, AttnTriplet, FfnParams, ForwardCtx};
use crate::tensor::Tensor;

/// Chronological thirds of the input window. `long` holds the oldest steps,
/// `short` the most recent; concatenating long‖medium‖short restores the
/// original order.
pub struct ViewSplit {
    pub long: Tensor,
    pub medium: Tensor,
    pub short: Tensor,
    pub view_len: usize,
}

/// Per-view projection triplets, the global triplet, the residual projection
/// and fusion scalars, and the FFN block.
pub struct MtamParams {
    /// `[long, medium, short]`; absent under the "w/o MTA" ablation.
    pub views: Option<[AttnTriplet; 3]>,
    /// Absent under the "w/o GTA" ablation.
    pub global: Option<AttnTriplet>,
    pub w_res: Tensor,
    pub beta: Tensor,
    pub gamma: Tensor,
    pub ffn: FfnParams,
}

impl MtamParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut ChaCha8Rng,
        c_in: usize,
        c_out: usize,
        ffn_hidden: usize,
        with_views: bool,
        with_global: bool,
        learnable_fusion: bool,
    ) -> MtamParams {
        let views = with_views.then(|| {
            [
                AttnTriplet::init(rng, c_in, c_out),
                AttnTriplet::init(rng, c_in, c_out),
                AttnTriplet::init(rng, c_in, c_out),
            ]
        });
        let global = with_global.then(|| AttnTriplet::init(rng, c_in, c_out));
        let scalar_one = || {
            if learnable_fusion {
                Tensor::param(&[1], vec![1.0]).unwrap()
            } else {
                Tensor::scalar(1.0)
            }
        };
        MtamParams {
            views,
            global,
            w_res: glorot(rng, c_in, c_out),
            beta: scalar_one(),
            gamma: scalar_one(),
            ffn: FfnParams::init(rng, c_out, ffn_hidden),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        if let Some(views) = &self.views {
            for (triplet, tag) in views.iter().zip(["long", "medium", "short"]) {
                out.extend(triplet.named(&format!("{prefix}.{tag}")));
            }
        }
        if let Some(global) = &self.global {
            out.extend(global.named(&format!("{prefix}.global")));
        }
        out.push((format!("{prefix}.w_res"), self.w_res.clone()));
        if self.beta.requires_grad() {
            out.push((format!("{prefix}.beta"), self.beta.clone()));
            out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        }
        out.extend(self.ffn.named(&format!("{prefix}.ffn")));
        out
    }
}

/// Split the time axis (second-to-last axis is time) into equal thirds.
pub fn split_views(x: &Tensor) -> Result<ViewSplit> {
    let shape = x.shape();
    if shape.len() < 3 {
        return Err(Error::Dimension(format!(
            "split_views expects at least [N,P,C], got {:?}",
            shape
        )));
    }
    let time_axis = shape.len() - 2;
    let p = shape[time_axis];
    if p % 3 != 0 {
        return Err(Error::Config(format!(
            "input length P={p} must be a multiple of 3 for view splitting"
        )));
    }
    let m = p / 3;
    Ok(ViewSplit {
        long: x.slice(time_axis, 0, m)?,
        medium: x.slice(time_axis, m, m)?,
        short: x.slice(time_axis, 2 * m, m)?,
        view_len: m,
    })
}

/// Single-head scaled dot-product self-attention over the time axis of
/// `[..., T, C]`. Returns the weighted values and the row-stochastic
/// attention matrix `[..., T, T]`.
pub fn scaled_dot_attention(x: &Tensor, triplet: &AttnTriplet) -> Result<(Tensor, Tensor)> {
    let q = x.matmul(&triplet.w_q)?;
    let k = x.matmul(&triplet.w_k)?;
    let v = x.matmul(&triplet.w_v)?;
    let d_k = *q.shape().last().unwrap();
    let scores = q
        .matmul(&k.transpose_last2()?)?
        .scale(1.0 / (d_k as f64).sqrt())?;
    let attn = scores.softmax(scores.rank() - 1)?;
    Ok((attn.matmul(&v)?, attn))
}

/// Full MTAM forward:
/// `X_next = LayerNorm(ReLU(W2 ReLU(W1 X̃)) + X̃)` with
/// `X̃ = [M_long ‖ M_medium ‖ M_short] + β M_global + γ W_res X`.
pub fn mtam_forward(x: &Tensor, params: &MtamParams, ctx: &mut ForwardCtx) -> Result<Tensor> {
    let time_axis = x.rank() - 2;
    let residual = x.matmul(&params.w_res)?.mul(&params.gamma)?;
    let mut fused = residual;
    if let Some(views) = &params.views {
        let split = split_views(x)?;
        let (m_long, _) = scaled_dot_attention(&split.long, &views[0])?;
        let (m_medium, _) = scaled_dot_attention(&split.medium, &views[1])?;
        let (m_short, _) = scaled_dot_attention(&split.short, &views[2])?;
        let m_multi = Tensor::concat(&[m_long, m_medium, m_short], time_axis)?;
        let m_multi = ctx.apply_dropout(&m_multi)?;
        fused = fused.add(&m_multi)?;
    }
    if let Some(global) = &params.global {
        let (m_global, _) = scaled_dot_attention(x, global)?;
        let m_global = ctx.apply_dropout(&m_global)?;
        fused = fused.add(&m_global.mul(&params.beta)?)?;
    }
    ffn_block(&fused, &params.ffn, ctx)
}
