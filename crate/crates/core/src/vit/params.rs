use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::VitConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;

/// Affine map `x·W + b` with `W` stored `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub ln1: NormParams,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub msa_out: Linear,
    pub ln2: NormParams,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

/// Full parameter set of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct VitParams {
    config: VitConfig,
    pub patch_projection: Linear,
    pub class_token: Tensor,
    pub positional_embedding: Tensor,
    pub layers: Vec<EncoderParams>,
    pub head_norm: Option<NormParams>,
    pub head: Linear,
}

/// Name, shape and weight-decay eligibility of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub decay: bool,
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, INIT_STD).expect("valid std"),
        }
    }

    /// Normal(0, σ) resampled until it falls inside ±2σ.
    fn truncated(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| loop {
            let v = self.normal.sample(&mut self.rng);
            if v.abs() <= 2.0 * INIT_STD {
                break v;
            }
        })
    }

    fn normal(&mut self, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| self.normal.sample(&mut self.rng))
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        Linear {
            weight: self.truncated(&[fan_in, fan_out]),
            bias: bias.then(|| Tensor::zeros(&[fan_out])),
        }
    }

    fn norm(dim: usize) -> NormParams {
        NormParams {
            gain: Tensor::ones(&[dim]),
            bias: Tensor::zeros(&[dim]),
        }
    }
}

impl VitParams {
    /// Seeded initialization: truncated normal (σ = 0.02) weights and class
    /// token, normal positional table, zero biases, unit norm gains.
    pub fn init(config: &VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut init = Init::new(seed);
        let patch_projection = init.linear(config.patch_dim, d, true);
        let class_token = init.truncated(&[d]);
        let positional_embedding = init.normal(&[config.num_patches + 1, d]);
        let layers = (0..config.depth)
            .map(|_| EncoderParams {
                ln1: Init::norm(d),
                query: init.linear(d, d, config.qkv_bias),
                key: init.linear(d, d, config.qkv_bias),
                value: init.linear(d, d, config.qkv_bias),
                msa_out: init.linear(d, d, true),
                ln2: Init::norm(d),
                mlp_in: init.linear(d, config.mlp_size, true),
                mlp_out: init.linear(config.mlp_size, d, true),
            })
            .collect();
        let head_norm = config.head_norm.then(|| Init::norm(d));
        let head = init.linear(d, config.num_classes, true);
        Ok(Self {
            config: config.clone(),
            patch_projection,
            class_token,
            positional_embedding,
            layers,
            head_norm,
            head,
        })
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    /// Every parameter tensor in declaration order, with its name and whether
    /// weight decay applies (weight matrices only).
    pub fn entries(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = Vec::new();
        push_linear(&mut out, "patch_projection", &self.patch_projection);
        out.push(("class_token".into(), &self.class_token, false));
        out.push(("positional_embedding".into(), &self.positional_embedding, false));
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            push_norm(&mut out, &format!("{p}.ln1"), &layer.ln1);
            push_linear(&mut out, &format!("{p}.query"), &layer.query);
            push_linear(&mut out, &format!("{p}.key"), &layer.key);
            push_linear(&mut out, &format!("{p}.value"), &layer.value);
            push_linear(&mut out, &format!("{p}.msa_out"), &layer.msa_out);
            push_norm(&mut out, &format!("{p}.ln2"), &layer.ln2);
            push_linear(&mut out, &format!("{p}.mlp_in"), &layer.mlp_in);
            push_linear(&mut out, &format!("{p}.mlp_out"), &layer.mlp_out);
        }
        if let Some(norm) = &self.head_norm {
            push_norm(&mut out, "head_norm", norm);
        }
        push_linear(&mut out, "head", &self.head);
        out
    }

    /// Mutable tensors in the same order as [`VitParams::entries`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        fn lin<'a>(out: &mut Vec<&'a mut Tensor>, l: &'a mut Linear) {
            out.push(&mut l.weight);
            if let Some(b) = &mut l.bias {
                out.push(b);
            }
        }
        fn norm<'a>(out: &mut Vec<&'a mut Tensor>, n: &'a mut NormParams) {
            out.push(&mut n.gain);
            out.push(&mut n.bias);
        }
        lin(&mut out, &mut self.patch_projection);
        out.push(&mut self.class_token);
        out.push(&mut self.positional_embedding);
        for layer in &mut self.layers {
            norm(&mut out, &mut layer.ln1);
            lin(&mut out, &mut layer.query);
            lin(&mut out, &mut layer.key);
            lin(&mut out, &mut layer.value);
            lin(&mut out, &mut layer.msa_out);
            norm(&mut out, &mut layer.ln2);
            lin(&mut out, &mut layer.mlp_in);
            lin(&mut out, &mut layer.mlp_out);
        }
        if let Some(n) = &mut self.head_norm {
            norm(&mut out, n);
        }
        lin(&mut out, &mut self.head);
        out
    }

    pub fn infos(&self) -> Vec<ParamInfo> {
        self.entries()
            .into_iter()
            .map(|(name, t, decay)| ParamInfo {
                name,
                shape: t.shape().to_vec(),
                decay,
            })
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Replaces all values from flat blocks in declaration order.
    pub fn load_flat(&mut self, blocks: &[Vec<f64>]) -> Result<()> {
        let mut tensors = self.tensors_mut();
        if tensors.len() != blocks.len() {
            return Err(Error::Shape(format!(
                "{} parameter blocks for {} tensors",
                blocks.len(),
                tensors.len()
            )));
        }
        for (t, b) in tensors.iter_mut().zip(blocks) {
            if t.len() != b.len() {
                return Err(Error::Shape(format!(
                    "parameter block of {} values for a tensor of {}",
                    b.len(),
                    t.len()
                )));
            }
            t.data_mut().copy_from_slice(b);
        }
        Ok(())
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundVit {
        let mut order = Vec::new();
        let mut leaf = |t: &Tensor| {
            let v = tape.leaf(t.clone(), trainable);
            order.push(v);
            v
        };
        let lin = |l: &Linear, leaf: &mut dyn FnMut(&Tensor) -> Var| BoundLinear {
            weight: leaf(&l.weight),
            bias: l.bias.as_ref().map(&mut *leaf),
        };
        let norm = |n: &NormParams, leaf: &mut dyn FnMut(&Tensor) -> Var| BoundNorm {
            gain: leaf(&n.gain),
            bias: leaf(&n.bias),
        };
        let patch_projection = lin(&self.patch_projection, &mut leaf);
        let class_token = leaf(&self.class_token);
        let positional_embedding = leaf(&self.positional_embedding);
        let layers = self
            .layers
            .iter()
            .map(|l| BoundEncoder {
                ln1: norm(&l.ln1, &mut leaf),
                query: lin(&l.query, &mut leaf),
                key: lin(&l.key, &mut leaf),
                value: lin(&l.value, &mut leaf),
                msa_out: lin(&l.msa_out, &mut leaf),
                ln2: norm(&l.ln2, &mut leaf),
                mlp_in: lin(&l.mlp_in, &mut leaf),
                mlp_out: lin(&l.mlp_out, &mut leaf),
            })
            .collect();
        let head_norm = self.head_norm.as_ref().map(|n| norm(n, &mut leaf));
        let head = lin(&self.head, &mut leaf);
        BoundVit {
            patch_projection,
            class_token,
            positional_embedding,
            layers,
            head_norm,
            head,
            order,
        }
    }
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor, bool)>, name: &str, l: &'a Linear) {
    out.push((format!("{name}.weight"), &l.weight, true));
    if let Some(b) = &l.bias {
        out.push((format!("{name}.bias"), b, false));
    }
}

fn push_norm<'a>(out: &mut Vec<(String, &'a Tensor, bool)>, name: &str, n: &'a NormParams) {
    out.push((format!("{name}.gain"), &n.gain, false));
    out.push((format!("{name}.bias"), &n.bias, false));
}

#[derive(Clone, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct BoundNorm {
    pub gain: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    pub ln1: BoundNorm,
    pub query: BoundLinear,
    pub key: BoundLinear,
    pub value: BoundLinear,
    pub msa_out: BoundLinear,
    pub ln2: BoundNorm,
    pub mlp_in: BoundLinear,
    pub mlp_out: BoundLinear,
}

/// Tape handles for a [`VitParams`]; `order` follows declaration order.
#[derive(Clone, Debug)]
pub struct BoundVit {
    pub patch_projection: BoundLinear,
    pub class_token: Var,
    pub positional_embedding: Var,
    pub layers: Vec<BoundEncoder>,
    pub head_norm: Option<BoundNorm>,
    pub head: BoundLinear,
    pub order: Vec<Var>,
}

impl BoundVit {
    /// Gradients of every parameter in declaration order (zeros where the
    /// loss did not reach).
    pub fn gradients(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.order
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
            })
            .collect()
    }
}
