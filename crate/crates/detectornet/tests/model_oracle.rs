//! Full-forward oracle: a monolithic plain-loop reimplementation of the
//! whole network on a 3-node toy, checked against the modular forward pass.

use detectornet::graph::DetectorGraph;
use detectornet::layers::Mode;
use detectornet::model::{DetectorNet, ModelConfig};
use detectornet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// y[rows x cols_out] = x[rows x cols_in] * w + b (b optional).
fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, rows: usize, ci: usize, co: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * co];
    for r in 0..rows {
        for j in 0..co {
            let mut acc = b.map_or(0.0, |b| b[j]);
            for i in 0..ci {
                acc += x[r * ci + i] * w[i * co + j];
            }
            out[r * co + j] = acc;
        }
    }
    out
}

fn softmax_row(row: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// LayerNorm(ReLU(W2 ReLU(W1 x + b1) + b2) + x) per row of width c.
#[allow(clippy::too_many_arguments)]
fn ffn_block(
    x: &[f64],
    rows: usize,
    c: usize,
    hidden: usize,
    w1: &[f64],
    b1: &[f64],
    w2: &[f64],
    b2: &[f64],
    gain: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; rows * c];
    for r in 0..rows {
        let xin = &x[r * c..(r + 1) * c];
        let mut h = vec![0.0; hidden];
        for j in 0..hidden {
            let mut acc = b1[j];
            for i in 0..c {
                acc += xin[i] * w1[i * hidden + j];
            }
            h[j] = relu(acc);
        }
        let mut o = vec![0.0; c];
        for j in 0..c {
            let mut acc = b2[j];
            for i in 0..hidden {
                acc += h[i] * w2[i * c + j];
            }
            o[j] = relu(acc) + xin[j];
        }
        let mean = o.iter().sum::<f64>() / c as f64;
        let var = o.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let istd = 1.0 / (var + EPS).sqrt();
        for j in 0..c {
            out[r * c + j] = (o[j] - mean) * istd * gain[j] + bias[j];
        }
    }
    out
}

/// Scaled dot-product self-attention over one node's [t x c] block.
fn attention(x: &[f64], t: usize, c: usize, wq: &[f64], wk: &[f64], wv: &[f64]) -> Vec<f64> {
    let q = affine(x, wq, None, t, c, c);
    let k = affine(x, wk, None, t, c, c);
    let v = affine(x, wv, None, t, c, c);
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0; t * c];
    for i in 0..t {
        let mut row = vec![0.0; t];
        for j in 0..t {
            row[j] = (0..c).map(|d| q[i * c + d] * k[j * c + d]).sum::<f64>() * scale;
        }
        softmax_row(&mut row);
        for j in 0..t {
            for d in 0..c {
                out[i * c + d] += row[j] * v[j * c + d];
            }
        }
    }
    out
}

fn row_normalize(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let s: f64 = a[i * n..(i + 1) * n].iter().sum();
        if s > 0.0 {
            for j in 0..n {
                out[i * n + j] = a[i * n + j] / s;
            }
        }
    }
    out
}

/// node-axis propagation: out[i] = sum_j m[i][j] x[j] over [t x c] blocks.
fn propagate(m: &[f64], x: &[f64], n: usize, span: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * span];
    for i in 0..n {
        for j in 0..n {
            let coef = m[i * n + j];
            if coef != 0.0 {
                for s in 0..span {
                    out[i * span + s] += coef * x[j * span + s];
                }
            }
        }
    }
    out
}

#[test]
fn forward_matches_monolithic_straight_line_reimplementation() {
    let (n, p, q, d, c, k, de, mid) = (3usize, 3usize, 3usize, 2usize, 4usize, 2usize, 3usize, 4usize);
    let config = ModelConfig {
        n_nodes: n,
        input_len: p,
        output_len: q,
        input_width: d,
        hidden_width: c,
        n_layers: 1,
        diffusion_steps: k,
        embed_dim: de,
        predictor_mid_width: mid,
        seed: 99,
        ..ModelConfig::default()
    };
    let mut model = DetectorNet::new(config).unwrap();
    let adjacency = vec![
        0.0, 1.0, 2.0, //
        0.5, 0.0, 0.0, //
        1.0, 3.0, 0.0,
    ];
    let graph = DetectorGraph::new(n, adjacency.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let x: Vec<f64> = (0..n * p * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xt = Tensor::from_vec(&[n, p, d], x.clone()).unwrap();
    let got = model.forward(&xt, &graph, Mode::Eval).unwrap();
    assert_eq!(got.shape(), vec![n, q, 1]);

    let get = |name: &str| -> Vec<f64> {
        model
            .params()
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .to_vec()
    };

    // 1. input projection D -> C
    let h0 = {
        let w = get("input.w");
        let b = get("input.b");
        affine(&x, &w, Some(&b), n * p, d, c)
    };

    // 2. MTAM: per-view attention on chronological thirds (view length 1
    //    here), global attention over the full window, residual projection,
    //    then the FFN block
    let h1 = {
        let w_res = get("layer0.mtam.w_res");
        let mut fused = vec![0.0; n * p * c];
        for node in 0..n {
            let block = &h0[node * p * c..(node + 1) * p * c];
            let res = affine(block, &w_res, None, p, c, c);
            // views: long/medium/short are single time steps when P = 3, so
            // attention reduces to the value projection
            for (t, tag) in ["long", "medium", "short"].iter().enumerate() {
                let step = &block[t * c..(t + 1) * c];
                let m = attention(
                    step,
                    1,
                    c,
                    &get(&format!("layer0.mtam.{tag}.w_q")),
                    &get(&format!("layer0.mtam.{tag}.w_k")),
                    &get(&format!("layer0.mtam.{tag}.w_v")),
                );
                for j in 0..c {
                    fused[(node * p + t) * c + j] += m[j];
                }
            }
            let m_global = attention(
                block,
                p,
                c,
                &get("layer0.mtam.global.w_q"),
                &get("layer0.mtam.global.w_k"),
                &get("layer0.mtam.global.w_v"),
            );
            for t in 0..p {
                for j in 0..c {
                    fused[(node * p + t) * c + j] += m_global[t * c + j] + res[t * c + j];
                }
            }
        }
        ffn_block(
            &fused,
            n * p,
            c,
            2 * c,
            &get("layer0.mtam.ffn.w1"),
            &get("layer0.mtam.ffn.b1"),
            &get("layer0.mtam.ffn.w2"),
            &get("layer0.mtam.ffn.b2"),
            &get("layer0.mtam.ffn.ln_gain"),
            &get("layer0.mtam.ffn.ln_bias"),
        )
    };

    // 3. DSGCN: dynamic adjacency from h1, then the three-branch power sum,
    //    then the FFN block
    let h2 = {
        let flat = p * c;
        let w_sq = get("layer0.dsgcn.adj.w_sq");
        let w_sk = get("layer0.dsgcn.adj.w_sk");
        let e1 = get("layer0.dsgcn.adj.e1");
        let e2 = get("layer0.dsgcn.adj.e2");
        let w_att = get("layer0.dsgcn.adj.w_att");
        let w_adp = get("layer0.dsgcn.adj.w_adp");
        let qm = affine(&h1, &w_sq, None, n, flat, c);
        let km = affine(&h1, &w_sk, None, n, flat, c);
        // adaptive rows
        let mut a_adp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a_adp[i * n + j] = (0..de).map(|dd| e1[i * de + dd] * e2[j * de + dd]).sum();
            }
            softmax_row(&mut a_adp[i * n..(i + 1) * n]);
        }
        let mut a_dyn = vec![0.0; n * n];
        let scale = 1.0 / (c as f64).sqrt();
        for i in 0..n {
            for j in 0..n {
                let att: f64 =
                    (0..c).map(|dd| qm[i * c + dd] * km[j * c + dd]).sum::<f64>() * scale;
                a_dyn[i * n + j] = w_att[i * n + j] * att + w_adp[i * n + j] * a_adp[i * n + j];
            }
            softmax_row(&mut a_dyn[i * n..(i + 1) * n]);
        }
        let p_f = row_normalize(&adjacency, n);
        let transposed: Vec<f64> = (0..n * n)
            .map(|idx| adjacency[(idx % n) * n + idx / n])
            .collect();
        let p_b = row_normalize(&transposed, n);
        let mut z = vec![0.0; n * p * c];
        for (mat, tag) in [(&p_f, "w_fwd"), (&p_b, "w_bwd"), (&a_dyn, "w_dyn")] {
            let mut cur = h1.clone();
            for order in 0..=k {
                if order > 0 {
                    cur = propagate(mat, &cur, n, p * c);
                }
                let w = get(&format!("layer0.dsgcn.{tag}{order}"));
                let term = affine(&cur, &w, None, n * p, c, c);
                for i in 0..z.len() {
                    z[i] += term[i];
                }
            }
        }
        ffn_block(
            &z,
            n * p,
            c,
            2 * c,
            &get("layer0.dsgcn.ffn.w1"),
            &get("layer0.dsgcn.ffn.b1"),
            &get("layer0.dsgcn.ffn.w2"),
            &get("layer0.dsgcn.ffn.b2"),
            &get("layer0.dsgcn.ffn.ln_gain"),
            &get("layer0.dsgcn.ffn.ln_bias"),
        )
    };

    // 4. predictor head: P == Q so the reshape is the identity regroup
    let expect = {
        let w1 = get("predictor.w1");
        let b1 = get("predictor.b1");
        let w2 = get("predictor.w2");
        let b2 = get("predictor.b2");
        let hid: Vec<f64> = affine(&h2, &w1, Some(&b1), n * q, c, mid)
            .into_iter()
            .map(relu)
            .collect();
        affine(&hid, &w2, Some(&b2), n * q, mid, 1)
    };

    let got = got.to_vec();
    assert_eq!(got.len(), expect.len());
    for (i, (g, e)) in got.iter().zip(&expect).enumerate() {
        assert!(
            (g - e).abs() <= 1e-9,
            "index {i}: modular {g} vs straight-line {e}"
        );
    }
}
