//! Model assembly: input projection, stacked MTAM + DSGCN layers, the
//! two-layer convolutional predictor, the masked-MAE loss, and ablation
//! wiring.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::attention::{mtam_forward, MtamParams};
use crate::error::{Error, Result};
use crate::gcn::{dsgcn_forward, DsgcnParams};
use crate::graph::{DetectorGraph, DynamicAdjacencyParams};
use crate::layers::{glorot, FfnParams, ForwardCtx, Mode};
use crate::optim::ParamStore;
use crate::tensor::Tensor;

/// Every hyperparameter of the model plus the four ablation flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    /// P: input window length.
    pub input_len: usize,
    /// Q: prediction horizon length.
    pub output_len: usize,
    /// D: input feature width (value + time-of-day by default).
    pub input_width: usize,
    /// C: hidden channel width, constant across layers.
    pub hidden_width: usize,
    /// L: number of stacked (MTAM, DSGCN) layers.
    pub n_layers: usize,
    /// K: diffusion order.
    pub diffusion_steps: usize,
    /// d_e: node embedding width of the adaptive adjacency.
    pub embed_dim: usize,
    pub dropout: f64,
    /// When true, the fusion scalars beta/gamma are trainable; otherwise
    /// they are fixed at 1.
    pub learnable_fusion: bool,
    pub without_mta: bool,
    pub without_gta: bool,
    pub without_da: bool,
    pub without_sa: bool,
    pub predictor_mid_width: usize,
    /// c_p: output feature width.
    pub output_width: usize,
    /// FFN hidden width = ffn_factor * hidden_width.
    pub ffn_factor: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_nodes: 1,
            input_len: 12,
            output_len: 12,
            input_width: 2,
            hidden_width: 32,
            n_layers: 2,
            diffusion_steps: 2,
            embed_dim: 10,
            dropout: 0.3,
            learnable_fusion: false,
            without_mta: false,
            without_gta: false,
            without_da: false,
            without_sa: false,
            predictor_mid_width: 64,
            output_width: 1,
            ffn_factor: 2,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_nodes", self.n_nodes),
            ("input_len", self.input_len),
            ("output_len", self.output_len),
            ("input_width", self.input_width),
            ("hidden_width", self.hidden_width),
            ("n_layers", self.n_layers),
            ("embed_dim", self.embed_dim),
            ("predictor_mid_width", self.predictor_mid_width),
            ("output_width", self.output_width),
            ("ffn_factor", self.ffn_factor),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.without_mta && self.without_gta {
            return Err(Error::Config(
                "without_mta and without_gta together remove the whole temporal path".into(),
            ));
        }
        if self.without_da && self.without_sa {
            return Err(Error::Config(
                "without_da and without_sa together remove the whole spatial path".into(),
            ));
        }
        if !self.without_mta && self.input_len % 3 != 0 {
            return Err(Error::Config(format!(
                "input_len {} must be a multiple of 3 for view splitting (or set without_mta)",
                self.input_len
            )));
        }
        if (self.hidden_width * self.input_len) % self.output_len != 0 {
            return Err(Error::Config(format!(
                "hidden_width * input_len = {} must be divisible by output_len {} for the predictor reshape",
                self.hidden_width * self.input_len,
                self.output_len
            )));
        }
        Ok(())
    }

    /// C_ST: channel width after the predictor reshape.
    pub fn predictor_in_width(&self) -> usize {
        self.hidden_width * self.input_len / self.output_len
    }
}

struct LayerParams {
    mtam: MtamParams,
    dsgcn: DsgcnParams,
}

/// The assembled DetectorNet model.
pub struct DetectorNet {
    config: ModelConfig,
    store: ParamStore,
    input_w: Tensor,
    input_b: Tensor,
    layers: Vec<LayerParams>,
    pred_w1: Tensor,
    pred_b1: Tensor,
    pred_w2: Tensor,
    pred_b2: Tensor,
    dropout_rng: ChaCha8Rng,
}

impl DetectorNet {
    /// Build a model with freshly initialized parameters. Ablation flags in
    /// the config decide which parameter groups exist at all.
    pub fn new(config: ModelConfig) -> Result<DetectorNet> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.hidden_width;
        let ffn_hidden = config.ffn_factor * c;

        let input_w = glorot(&mut rng, config.input_width, c);
        let input_b = Tensor::param(&[c], vec![0.0; c]).unwrap();

        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let mtam = MtamParams::init(
                &mut rng,
                c,
                c,
                ffn_hidden,
                !config.without_mta,
                !config.without_gta,
                config.learnable_fusion,
            );
            let dsgcn = DsgcnParams::init(
                &mut rng,
                config.n_nodes,
                c,
                c,
                config.diffusion_steps,
                config.embed_dim,
                config.input_len,
                ffn_hidden,
                !config.without_sa,
                !config.without_da,
            );
            layers.push(LayerParams { mtam, dsgcn });
        }

        let c_st = config.predictor_in_width();
        let pred_w1 = glorot(&mut rng, c_st, config.predictor_mid_width);
        let pred_b1 = Tensor::param(&[config.predictor_mid_width], vec![0.0; config.predictor_mid_width]).unwrap();
        let pred_w2 = glorot(&mut rng, config.predictor_mid_width, config.output_width);
        let pred_b2 = Tensor::param(&[config.output_width], vec![0.0; config.output_width]).unwrap();

        let mut store = ParamStore::new(config.seed);
        let register = |pairs: Vec<(String, Tensor)>, store: &mut ParamStore| -> Result<()> {
            for (name, t) in pairs {
                store.insert(&name, t)?;
            }
            Ok(())
        };
        register(
            vec![
                ("input.w".to_string(), input_w.clone()),
                ("input.b".to_string(), input_b.clone()),
            ],
            &mut store,
        )?;
        for (l, layer) in layers.iter().enumerate() {
            register(layer.mtam.named(&format!("layer{l}.mtam")), &mut store)?;
            register(layer.dsgcn.named(&format!("layer{l}.dsgcn")), &mut store)?;
        }
        register(
            vec![
                ("predictor.w1".to_string(), pred_w1.clone()),
                ("predictor.b1".to_string(), pred_b1.clone()),
                ("predictor.w2".to_string(), pred_w2.clone()),
                ("predictor.b2".to_string(), pred_b2.clone()),
            ],
            &mut store,
        )?;

        Ok(DetectorNet {
            dropout_rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
            config,
            store,
            input_w,
            input_b,
            layers,
            pred_w1,
            pred_b1,
            pred_w2,
            pred_b2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Full forward pass: `[B, N, P, D]` (or unbatched `[N, P, D]`) to
    /// `[B, N, Q, c_p]` (resp. `[N, Q, c_p]`).
    pub fn forward(&mut self, x: &Tensor, graph: &DetectorGraph, mode: Mode) -> Result<Tensor> {
        let shape = x.shape();
        let r = shape.len();
        if r != 3 && r != 4 {
            return Err(Error::Dimension(format!(
                "forward expects [N,P,D] or [B,N,P,D], got {:?}",
                shape
            )));
        }
        let cfg = &self.config;
        if shape[r - 3] != cfg.n_nodes || shape[r - 2] != cfg.input_len || shape[r - 1] != cfg.input_width {
            return Err(Error::Dimension(format!(
                "input {:?} does not match config [N={}, P={}, D={}]",
                shape, cfg.n_nodes, cfg.input_len, cfg.input_width
            )));
        }
        if graph.n_nodes != cfg.n_nodes {
            return Err(Error::Dimension(format!(
                "graph has {} nodes, config expects {}",
                graph.n_nodes, cfg.n_nodes
            )));
        }
        let mut ctx = ForwardCtx {
            mode,
            dropout: cfg.dropout,
            rng: &mut self.dropout_rng,
        };
        let mut h = input_projection(x, &self.input_w, &self.input_b)?;
        for (l, layer) in self.layers.iter().enumerate() {
            h = mtam_forward(&h, &layer.mtam, &mut ctx)
                .map_err(|e| attach_layer(e, l, "mtam"))?;
            h = dsgcn_forward(&h, graph, &layer.dsgcn, &mut ctx)
                .map_err(|e| attach_layer(e, l, "dsgcn"))?;
        }
        let out = predictor_head(
            &h,
            cfg.output_len,
            &self.pred_w1,
            &self.pred_b1,
            &self.pred_w2,
            &self.pred_b2,
        )?;
        if !out.is_finite() {
            return Err(Error::Numeric("forward produced non-finite output".into()));
        }
        Ok(out)
    }
}

fn attach_layer(e: Error, layer: usize, stage: &str) -> Error {
    match e {
        Error::Dimension(m) => Error::Dimension(format!("layer {layer} ({stage}): {m}")),
        Error::Config(m) => Error::Config(format!("layer {layer} ({stage}): {m}")),
        Error::Numeric(m) => Error::Numeric(format!("layer {layer} ({stage}): {m}")),
        other => other,
    }
}

/// Pointwise channel lift D -> C (a kernel-size-1 convolution).
pub fn input_projection(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().unwrap();
    if w.shape()[0] != d {
        return Err(Error::Dimension(format!(
            "input projection expects width {}, input has {}",
            w.shape()[0],
            d
        )));
    }
    x.matmul(w)?.add(b)
}

/// Reshape `[..., P, C]` to `[..., Q, C*P/Q]`, then two pointwise
/// convolutions with a ReLU between.
pub fn predictor_head(
    x: &Tensor,
    output_len: usize,
    w1: &Tensor,
    b1: &Tensor,
    w2: &Tensor,
    b2: &Tensor,
) -> Result<Tensor> {
    let shape = x.shape();
    let r = shape.len();
    let (p, c) = (shape[r - 2], shape[r - 1]);
    if (p * c) % output_len != 0 {
        return Err(Error::Config(format!(
            "predictor reshape needs P*C = {} divisible by Q = {}",
            p * c,
            output_len
        )));
    }
    let c_st = p * c / output_len;
    let mut new_shape: Vec<usize> = shape[..r - 2].to_vec();
    new_shape.push(output_len);
    new_shape.push(c_st);
    let reshaped = x.reshape(&new_shape)?;
    let mid = reshaped.matmul(w1)?.add(b1)?.relu()?;
    mid.matmul(w2)?.add(b2)
}

/// Mean absolute error over masked-in entries. Returns the scalar loss and a
/// flag warning that the mask selected nothing.
pub fn masked_mae_loss(pred: &Tensor, truth: &Tensor, mask: &Tensor) -> Result<(Tensor, bool)> {
    if pred.shape() != truth.shape() || pred.shape() != mask.shape() {
        return Err(Error::Dimension(format!(
            "masked_mae_loss shapes differ: pred {:?}, truth {:?}, mask {:?}",
            pred.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    let count = mask.with_data(|m| m.iter().filter(|v| **v != 0.0).count());
    if count == 0 {
        return Ok((Tensor::scalar(0.0), true));
    }
    let loss = pred
        .sub(truth)?
        .abs()?
        .mul(mask)?
        .sum_all()?
        .scale(1.0 / count as f64)?;
    Ok((loss, false))
}

/// Scalar parameter count implied by a config. The layout is:
/// input projection (D*C + C), then per layer the MTAM block
/// (view triplets 9C^2 unless w/o MTA, global triplet 3C^2 unless w/o GTA,
/// residual C^2, beta+gamma when learnable, FFN), the DSGCN block
/// (2(K+1)C^2 static unless w/o SA, (K+1)C^2 dynamic unless w/o DA, the
/// dynamic-adjacency block, FFN), and the predictor head.
pub fn expected_param_count(cfg: &ModelConfig) -> usize {
    let c = cfg.hidden_width;
    let h = cfg.ffn_factor * c;
    let ffn = FfnParams::element_count(c, h);
    let mut total = cfg.input_width * c + c;
    for _ in 0..cfg.n_layers {
        // MTAM
        if !cfg.without_mta {
            total += 9 * c * c;
        }
        if !cfg.without_gta {
            total += 3 * c * c;
        }
        total += c * c; // w_res
        if cfg.learnable_fusion {
            total += 2;
        }
        total += ffn;
        // DSGCN
        let per_order = c * c;
        if !cfg.without_sa {
            total += 2 * (cfg.diffusion_steps + 1) * per_order;
        }
        if !cfg.without_da {
            total += (cfg.diffusion_steps + 1) * per_order;
        }
        total += DynamicAdjacencyParams::element_count(
            cfg.n_nodes,
            cfg.embed_dim,
            cfg.input_len * c,
            c,
        );
        total += ffn;
    }
    let c_st = cfg.predictor_in_width();
    total += c_st * cfg.predictor_mid_width
        + cfg.predictor_mid_width
        + cfg.predictor_mid_width * cfg.output_width
        + cfg.output_width;
    total
}
