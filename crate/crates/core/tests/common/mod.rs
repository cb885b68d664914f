//! Shared helpers for integration tests: scalar-loop reference
//! implementations, random parameter sets and finite differences.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use vit_hgr::segment::{PatchLayout, WindowTensor};
use vit_hgr::tensor::{Tape, Tensor, Var};
use vit_hgr::vit::{Activation, BoundLinear, EncoderParams, Linear, VitConfig, VitParams};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(rng, n, std)).unwrap()
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    (0..rows).map(|_| normal_vec(rng, cols, std)).collect()
}

pub fn to_mat(t: &Tensor) -> Mat {
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Micro transformer used by the gradient and oracle tests.
pub fn micro_config(num_patches: usize, patch_dim: usize, embed_dim: usize, heads: usize, mlp: usize, classes: usize) -> VitConfig {
    VitConfig {
        embed_dim,
        mlp_size: mlp,
        depth: 1,
        num_heads: heads,
        patch_side: 1,
        patch_layout: PatchLayout::TimeByChannels,
        num_classes: classes,
        num_patches,
        patch_dim,
        activation: Activation::Gelu,
        head_norm: true,
        qkv_bias: true,
        layer_norm_eps: 1e-6,
    }
}

/// Parameters with every entry drawn from N(0, std), so no weight is
/// trivially zero or one.
pub fn random_params(config: &VitConfig, seed: u64, std: f64) -> VitParams {
    let mut params = VitParams::init(config, seed).unwrap();
    let mut r = rng(seed ^ 0xA5A5_5A5A);
    for t in params.tensors_mut() {
        let values = normal_vec(&mut r, t.len(), std);
        t.data_mut().copy_from_slice(&values);
    }
    params
}

pub fn random_linear(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, std: f64) -> Linear {
    Linear {
        weight: random_tensor(rng, &[fan_in, fan_out], std),
        bias: Some(random_tensor(rng, &[fan_out], std)),
    }
}

pub fn bind_linear(tape: &mut Tape, l: &Linear) -> BoundLinear {
    BoundLinear {
        weight: tape.param(l.weight.clone()),
        bias: l.bias.as_ref().map(|b| tape.param(b.clone())),
    }
}

// ----- scalar-loop reference implementations -----

pub fn oracle_linear(x: &Mat, l: &Linear) -> Mat {
    let (fan_in, fan_out) = (l.weight.shape()[0], l.weight.shape()[1]);
    let w = l.weight.data();
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), fan_in);
            (0..fan_out)
                .map(|j| {
                    let mut s = l.bias.as_ref().map_or(0.0, |b| b.data()[j]);
                    for i in 0..fan_in {
                        s += row[i] * w[i * fan_out + j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn oracle_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn oracle_layer_norm(x: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| gain[j] * (v - mu) / (var + eps).sqrt() + bias[j])
                .collect()
        })
        .collect()
}

pub fn oracle_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `softmax(q·kᵀ/√d)·v` row by row.
pub fn oracle_attend(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
                .collect();
            let a = oracle_softmax(&scores);
            (0..v[0].len())
                .map(|c| a.iter().zip(v).map(|(w, vj)| w * vj[c]).sum())
                .collect()
        })
        .collect()
}

pub fn oracle_self_attention(z: &Mat, q: &Linear, k: &Linear, v: &Linear) -> Mat {
    oracle_attend(&oracle_linear(z, q), &oracle_linear(z, k), &oracle_linear(z, v))
}

fn columns(m: &Mat, start: usize, len: usize) -> Mat {
    m.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn oracle_msa(z: &Mat, layer: &EncoderParams, heads: usize) -> Mat {
    let q = oracle_linear(z, &layer.query);
    let k = oracle_linear(z, &layer.key);
    let v = oracle_linear(z, &layer.value);
    let dh = q[0].len() / heads;
    let mut joined: Mat = vec![Vec::new(); z.len()];
    for h in 0..heads {
        let out = oracle_attend(&columns(&q, h * dh, dh), &columns(&k, h * dh, dh), &columns(&v, h * dh, dh));
        for (row, part) in joined.iter_mut().zip(out) {
            row.extend(part);
        }
    }
    oracle_linear(&joined, &layer.msa_out)
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn oracle_encoder(z: &Mat, layer: &EncoderParams, config: &VitConfig) -> Mat {
    let eps = config.layer_norm_eps;
    let n1 = oracle_layer_norm(z, layer.ln1.gain.data(), layer.ln1.bias.data(), eps);
    let mid = add(&oracle_msa(&n1, layer, config.num_heads), z);
    let n2 = oracle_layer_norm(&mid, layer.ln2.gain.data(), layer.ln2.bias.data(), eps);
    let hidden: Mat = oracle_linear(&n2, &layer.mlp_in)
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|x| match config.activation {
                    Activation::Gelu => oracle_gelu(x),
                    Activation::Relu => x.max(0.0),
                })
                .collect()
        })
        .collect();
    add(&oracle_linear(&hidden, &layer.mlp_out), &mid)
}

pub fn oracle_embed(patches: &Mat, params: &VitParams) -> Mat {
    let mut z = vec![params.class_token.data().to_vec()];
    z.extend(oracle_linear(patches, &params.patch_projection));
    add(&z, &to_mat(&params.positional_embedding))
}

pub fn oracle_logits(patches: &Mat, params: &VitParams) -> Vec<f64> {
    let config = params.config();
    let mut z = oracle_embed(patches, params);
    for layer in &params.layers {
        z = oracle_encoder(&z, layer, config);
    }
    let mut cls = vec![z[0].clone()];
    if let Some(n) = &params.head_norm {
        cls = oracle_layer_norm(&cls, n.gain.data(), n.bias.data(), config.layer_norm_eps);
    }
    oracle_linear(&cls, &params.head).remove(0)
}

pub fn oracle_cross_entropy(logits: &[f64], label: usize) -> f64 {
    -oracle_softmax(logits)[label].ln()
}

// ----- library evaluations as plain matrices -----

pub fn embed_rows(params: &VitParams, patches: &Mat) -> Mat {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(from_mat(patches));
    let z = vit_hgr::vit::embed(&mut tape, x, &bound).unwrap();
    to_mat(tape.value(z))
}

pub fn encoder_rows(params: &VitParams, z: &Mat) -> Mat {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let zv = tape.constant(from_mat(z));
    let out = vit_hgr::vit::encoder_layer(&mut tape, zv, &bound.layers[0], params.config()).unwrap();
    to_mat(tape.value(out))
}

pub fn logits(params: &VitParams, patches: &Mat) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(from_mat(patches));
    let out = vit_hgr::vit::forward(&mut tape, x, &bound, params.config()).unwrap();
    tape.value(out).data().to_vec()
}

pub fn sa_rows(z: &Mat, q: &Linear, k: &Linear, v: &Linear) -> Mat {
    let mut tape = Tape::new();
    let (qb, kb, vb) = (bind_linear(&mut tape, q), bind_linear(&mut tape, k), bind_linear(&mut tape, v));
    let zv = tape.constant(from_mat(z));
    let out = vit_hgr::vit::self_attention(&mut tape, zv, &qb, &kb, &vb).unwrap();
    to_mat(tape.value(out))
}

pub fn msa_rows(params: &VitParams, z: &Mat) -> Mat {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let zv = tape.constant(from_mat(z));
    let out = vit_hgr::vit::multi_head_attention(&mut tape, zv, &bound.layers[0], params.config().num_heads).unwrap();
    to_mat(tape.value(out))
}

// ----- finite differences -----

/// Relative-or-absolute agreement: `|a − n| <= abs + rel·max(|a|, |n|)`.
pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    (analytic - numeric).abs() <= abs + rel * analytic.abs().max(numeric.abs())
}

/// Cross-entropy of the full model on one patch matrix.
pub fn model_loss(params: &VitParams, patches: &Tensor, label: usize) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(patches.clone());
    let logits = vit_hgr::vit::forward(&mut tape, x, &bound, params.config()).unwrap();
    let loss = tape.cross_entropy(logits, label).unwrap();
    tape.value(loss).data()[0]
}

/// Analytic gradient of [`model_loss`], one block per parameter tensor.
pub fn model_gradients(params: &VitParams, patches: &Tensor, label: usize) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(patches.clone());
    let logits = vit_hgr::vit::forward(&mut tape, x, &bound, params.config()).unwrap();
    let loss = tape.cross_entropy(logits, label).unwrap();
    tape.backward(loss).unwrap();
    bound.gradients(&tape)
}

/// Central differences of [`model_loss`] for every parameter scalar.
pub fn model_numeric_gradients(params: &VitParams, patches: &Tensor, label: usize, h: f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = params.entries().iter().map(|e| e.1.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (i, &n) in sizes.iter().enumerate() {
        let mut block = Vec::with_capacity(n);
        for j in 0..n {
            let mut plus = params.clone();
            plus.tensors_mut()[i].data_mut()[j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[i].data_mut()[j] -= h;
            block.push((model_loss(&plus, patches, label) - model_loss(&minus, patches, label)) / (2.0 * h));
        }
        out.push(block);
    }
    out
}

/// Checks a tape op's backward rule. The op output is contracted with fixed
/// random weights to a scalar, and every input entry is perturbed.
pub fn check_op_gradient(
    inputs: &[Tensor],
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> Result<(), String> {
    let eval = |vals: &[Tensor], grad: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.shape(out).to_vec();
        let n: usize = shape.iter().product();
        let mut r = rng(seed);
        let w = tape.constant(Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap());
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).data()[0];
        if !grad {
            return (value, Vec::new());
        }
        tape.backward(loss).unwrap();
        let grads = vars
            .iter()
            .map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec))
            .collect();
        (value, grads)
    };
    let (_, analytic) = eval(inputs, true);
    let h = 1e-4;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * h);
            if !close(analytic[i][j], numeric, 1e-4, 1e-6) {
                return Err(format!(
                    "input {i} entry {j}: analytic {} vs numeric {numeric}",
                    analytic[i][j]
                ));
            }
        }
    }
    Ok(())
}

/// Labelled window filled with `f(t, row, col)`.
pub fn window_from(
    shape: (usize, usize, usize),
    labels: (u32, u32, u32),
    f: impl Fn(usize, usize, usize) -> f64,
) -> WindowTensor {
    let (t, rows, cols) = shape;
    let mut data = Vec::with_capacity(t * rows * cols);
    for i in 0..t {
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(i, r, c));
            }
        }
    }
    WindowTensor::new(data, t, rows, cols, labels.0, labels.1, labels.2).unwrap()
}
