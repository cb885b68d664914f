use super::{Activation, BoundEncoder, BoundLinear, BoundNorm, BoundVit, VitConfig, VitParams};
use crate::error::{Error, Result};
use crate::segment::WindowTensor;
use crate::tensor::{Tape, Tensor, Var};

/// `x·W + b` on the tape.
pub fn linear(tape: &mut Tape, x: Var, l: &BoundLinear) -> Result<Var> {
    let y = tape.matmul(x, l.weight)?;
    match l.bias {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

fn norm(tape: &mut Tape, x: Var, n: &BoundNorm, eps: f64) -> Result<Var> {
    tape.layer_norm(x, n.gain, n.bias, eps)
}

/// `Z₀ = [x_cls; x₁E; …; x_NE] + E_pos` for a `(N × patch_dim)` patch matrix.
pub fn embed(tape: &mut Tape, patches: Var, p: &BoundVit) -> Result<Var> {
    let projected = linear(tape, patches, &p.patch_projection)?;
    let d = tape.shape(p.class_token)[0];
    let cls = tape.reshape(p.class_token, &[1, d])?;
    let z = tape.concat(&[cls, projected], 0)?;
    if tape.shape(z) != tape.shape(p.positional_embedding) {
        return Err(Error::Shape(format!(
            "embedded sequence {:?} does not match positional table {:?}",
            tape.shape(z),
            tape.shape(p.positional_embedding)
        )));
    }
    tape.add(z, p.positional_embedding)
}

/// `softmax(QKᵀ/√d_h)·V` for one head.
pub fn scaled_dot_product_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let shape = tape.shape(q);
    let dh = shape[shape.len() - 1];
    let rank = shape.len();
    let q = tape.scale(q, 1.0 / (dh as f64).sqrt());
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let weights = tape.softmax(scores, rank - 1)?;
    tape.matmul(weights, v)
}

/// Single head: project `z` with per-head (D × d_h) maps, then attend.
pub fn self_attention(
    tape: &mut Tape,
    z: Var,
    query: &BoundLinear,
    key: &BoundLinear,
    value: &BoundLinear,
) -> Result<Var> {
    let q = linear(tape, z, query)?;
    let k = linear(tape, z, key)?;
    let v = linear(tape, z, value)?;
    scaled_dot_product_attention(tape, q, k, v)
}

/// `[SA₁; …; SA_H]·W_MSA`, head `h` owning feature columns `h·d_h..(h+1)·d_h`.
pub fn multi_head_attention(
    tape: &mut Tape,
    z: Var,
    layer: &BoundEncoder,
    num_heads: usize,
) -> Result<Var> {
    let q = linear(tape, z, &layer.query)?;
    let k = linear(tape, z, &layer.key)?;
    let v = linear(tape, z, &layer.value)?;
    let d = tape.shape(q)[1];
    if num_heads == 0 || !d.is_multiple_of(num_heads) {
        return Err(Error::Config(format!(
            "embed dim {d} not divisible by {num_heads} heads"
        )));
    }
    let dh = d / num_heads;
    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = tape.slice(q, 1, h * dh, dh)?;
        let kh = tape.slice(k, 1, h * dh, dh)?;
        let vh = tape.slice(v, 1, h * dh, dh)?;
        heads.push(scaled_dot_product_attention(tape, qh, kh, vh)?);
    }
    let joined = tape.concat(&heads, 1)?;
    linear(tape, joined, &layer.msa_out)
}

/// Pre-norm encoder block: `Z' = MSA(LN(Z)) + Z`, `Z_out = MLP(LN(Z')) + Z'`.
pub fn encoder_layer(
    tape: &mut Tape,
    z: Var,
    layer: &BoundEncoder,
    config: &VitConfig,
) -> Result<Var> {
    let eps = config.layer_norm_eps;
    let normed = norm(tape, z, &layer.ln1, eps)?;
    let attended = multi_head_attention(tape, normed, layer, config.num_heads)?;
    let z_mid = tape.add(attended, z)?;
    let normed = norm(tape, z_mid, &layer.ln2, eps)?;
    let hidden = linear(tape, normed, &layer.mlp_in)?;
    let hidden = match config.activation {
        Activation::Gelu => tape.gelu(hidden),
        Activation::Relu => tape.relu(hidden),
    };
    let out = linear(tape, hidden, &layer.mlp_out)?;
    tape.add(out, z_mid)
}

/// Logits (shape `[num_classes]`) for a `(N × patch_dim)` patch matrix.
pub fn forward(tape: &mut Tape, patches: Var, p: &BoundVit, config: &VitConfig) -> Result<Var> {
    let expected = [config.num_patches, config.patch_dim];
    if tape.shape(patches) != expected {
        return Err(Error::Shape(format!(
            "patch matrix {:?}, model expects {expected:?}",
            tape.shape(patches)
        )));
    }
    let mut z = embed(tape, patches, p)?;
    for layer in &p.layers {
        z = encoder_layer(tape, z, layer, config)?;
    }
    let mut cls = tape.slice(z, 0, 0, 1)?;
    if let Some(n) = &p.head_norm {
        cls = norm(tape, cls, n, config.layer_norm_eps)?;
    }
    let logits = linear(tape, cls, &p.head)?;
    tape.reshape(logits, &[config.num_classes])
}

/// Patchifies a window and runs [`forward`].
pub fn forward_window(
    tape: &mut Tape,
    window: &WindowTensor,
    p: &BoundVit,
    config: &VitConfig,
) -> Result<Var> {
    config.check_window(window.shape())?;
    let seq = config.geometry().patchify(window)?;
    let shape = vec![seq.num_patches(), seq.patch_dim()];
    let patches = tape.constant(Tensor::new(shape, seq.into_data())?);
    forward(tape, patches, p, config)
}

/// Inference-only logits for one window.
pub fn classify(window: &WindowTensor, params: &VitParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let logits = forward_window(&mut tape, window, &bound, params.config())?;
    Ok(tape.value(logits).data().to_vec())
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(window: &WindowTensor, params: &VitParams) -> Result<usize> {
    classify(window, params).map(|l| argmax(&l))
}
