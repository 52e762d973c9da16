use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::convert::Infallible;

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::sinusoidal_positions;
use super::{PosMode, ViTConfig, ViTError};
use crate::real::Real;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Per-block weights, generic over what is stored per slot (tensors,
/// graph handles, optimizer moments).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<P> {
    pub ln1_gain: P,
    pub ln1_bias: P,
    pub w_q: P,
    pub w_k: P,
    pub w_v: P,
    pub w_o: P,
    pub ln2_gain: P,
    pub ln2_bias: P,
    pub mlp_w1: P,
    pub mlp_b1: P,
    pub mlp_w2: P,
    pub mlp_b2: P,
}

/// All model weights in a fixed canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTWeights<P> {
    /// Patch projection `E`, `P²C × D`.
    pub patch_embed: P,
    /// `1 × D`.
    pub class_token: P,
    /// `(N+1) × D`; row 0 belongs to the class token.
    pub pos: P,
    pub blocks: Vec<BlockWeights<P>>,
    pub final_ln_gain: P,
    pub final_ln_bias: P,
    /// `D × n_classes`.
    pub head_weight: P,
    pub head_bias: P,
}

pub type ViTParams<T> = ViTWeights<Tensor<T>>;

impl<P> BlockWeights<P> {
    fn slots(&self) -> [(&'static str, &P); 12] {
        [
            ("ln1.gain", &self.ln1_gain),
            ("ln1.bias", &self.ln1_bias),
            ("attn.w_q", &self.w_q),
            ("attn.w_k", &self.w_k),
            ("attn.w_v", &self.w_v),
            ("attn.w_o", &self.w_o),
            ("ln2.gain", &self.ln2_gain),
            ("ln2.bias", &self.ln2_bias),
            ("mlp.w1", &self.mlp_w1),
            ("mlp.b1", &self.mlp_b1),
            ("mlp.w2", &self.mlp_w2),
            ("mlp.b2", &self.mlp_b2),
        ]
    }

    fn slots_mut(&mut self) -> [(&'static str, &mut P); 12] {
        [
            ("ln1.gain", &mut self.ln1_gain),
            ("ln1.bias", &mut self.ln1_bias),
            ("attn.w_q", &mut self.w_q),
            ("attn.w_k", &mut self.w_k),
            ("attn.w_v", &mut self.w_v),
            ("attn.w_o", &mut self.w_o),
            ("ln2.gain", &mut self.ln2_gain),
            ("ln2.bias", &mut self.ln2_bias),
            ("mlp.w1", &mut self.mlp_w1),
            ("mlp.b1", &mut self.mlp_b1),
            ("mlp.w2", &mut self.mlp_w2),
            ("mlp.b2", &mut self.mlp_b2),
        ]
    }
}

impl<P> ViTWeights<P> {
    /// `(name, slot)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = vec![
            (String::from("patch_embed"), &self.patch_embed),
            (String::from("class_token"), &self.class_token),
            (String::from("pos"), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(
                b.slots()
                    .into_iter()
                    .map(|(n, p)| (format!("blocks.{i}.{n}"), p)),
            );
        }
        out.extend([
            (String::from("final_ln.gain"), &self.final_ln_gain),
            (String::from("final_ln.bias"), &self.final_ln_bias),
            (String::from("head.weight"), &self.head_weight),
            (String::from("head.bias"), &self.head_bias),
        ]);
        out
    }

    /// Mutable slots in the same order as [`named`](Self::named).
    pub fn named_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out = vec![
            (String::from("patch_embed"), &mut self.patch_embed),
            (String::from("class_token"), &mut self.class_token),
            (String::from("pos"), &mut self.pos),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(
                b.slots_mut()
                    .into_iter()
                    .map(|(n, p)| (format!("blocks.{i}.{n}"), p)),
            );
        }
        out.extend([
            (String::from("final_ln.gain"), &mut self.final_ln_gain),
            (String::from("final_ln.bias"), &mut self.final_ln_bias),
            (String::from("head.weight"), &mut self.head_weight),
            (String::from("head.bias"), &mut self.head_bias),
        ]);
        out
    }

    /// Builds a same-shaped structure by visiting slots in canonical order.
    pub fn try_map<Q, E>(
        &self,
        mut f: impl FnMut(&str, &P) -> Result<Q, E>,
    ) -> Result<ViTWeights<Q>, E> {
        let mut block_out = Vec::with_capacity(self.blocks.len());
        let patch_embed = f("patch_embed", &self.patch_embed)?;
        let class_token = f("class_token", &self.class_token)?;
        let pos = f("pos", &self.pos)?;
        for (i, b) in self.blocks.iter().enumerate() {
            let mut g = |n: &str, p: &P| f(&format!("blocks.{i}.{n}"), p);
            block_out.push(BlockWeights {
                ln1_gain: g("ln1.gain", &b.ln1_gain)?,
                ln1_bias: g("ln1.bias", &b.ln1_bias)?,
                w_q: g("attn.w_q", &b.w_q)?,
                w_k: g("attn.w_k", &b.w_k)?,
                w_v: g("attn.w_v", &b.w_v)?,
                w_o: g("attn.w_o", &b.w_o)?,
                ln2_gain: g("ln2.gain", &b.ln2_gain)?,
                ln2_bias: g("ln2.bias", &b.ln2_bias)?,
                mlp_w1: g("mlp.w1", &b.mlp_w1)?,
                mlp_b1: g("mlp.b1", &b.mlp_b1)?,
                mlp_w2: g("mlp.w2", &b.mlp_w2)?,
                mlp_b2: g("mlp.b2", &b.mlp_b2)?,
            });
        }
        Ok(ViTWeights {
            patch_embed,
            class_token,
            pos,
            blocks: block_out,
            final_ln_gain: f("final_ln.gain", &self.final_ln_gain)?,
            final_ln_bias: f("final_ln.bias", &self.final_ln_bias)?,
            head_weight: f("head.weight", &self.head_weight)?,
            head_bias: f("head.bias", &self.head_bias)?,
        })
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&str, &P) -> Q) -> ViTWeights<Q> {
        match self.try_map(|n, p| Ok::<_, Infallible>(f(n, p))) {
            Ok(w) => w,
            Err(never) => match never {},
        }
    }
}

/// Expected shape of every slot for `config`, in canonical order.
pub fn param_shapes(config: &ViTConfig) -> ViTWeights<Vec<usize>> {
    let (d, h) = (config.dim, config.hidden());
    let block = BlockWeights {
        ln1_gain: vec![d],
        ln1_bias: vec![d],
        w_q: vec![d, d],
        w_k: vec![d, d],
        w_v: vec![d, d],
        w_o: vec![d, d],
        ln2_gain: vec![d],
        ln2_bias: vec![d],
        mlp_w1: vec![d, h],
        mlp_b1: vec![h],
        mlp_w2: vec![h, d],
        mlp_b2: vec![d],
    };
    ViTWeights {
        patch_embed: vec![config.patch_dim(), d],
        class_token: vec![1, d],
        pos: vec![config.tokens(), d],
        blocks: vec![block; config.blocks],
        final_ln_gain: vec![d],
        final_ln_bias: vec![d],
        head_weight: vec![d, config.n_classes],
        head_bias: vec![config.n_classes],
    }
}

/// Whether the slot receives gradient updates under `config`.
pub fn is_trainable(name: &str, config: &ViTConfig) -> bool {
    name != "pos" || config.pos_mode == PosMode::Learned
}

const INIT_STD: f64 = 0.02;

fn truncated_normal<T: Real, R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::from_f64(z * INIT_STD);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape from config")
}

impl<T: Real> ViTWeights<Tensor<T>> {
    /// Truncated normal (σ = 0.02, cut at 2σ) for projections and a learned
    /// positional table; zeros for biases and the class token; ones for
    /// LayerNorm gains; the sin/cos table in sinusoidal mode.
    pub fn init(config: &ViTConfig, seed: u64) -> Result<Self, ViTError> {
        config.validate()?;
        let shapes = param_shapes(config);
        let mut rng = stream_rng(seed, Stream::Init, 0, 0);
        let sinusoid = match config.pos_mode {
            PosMode::Sinusoidal => Some(sinusoidal_positions::<T>(config.tokens(), config.dim)?),
            PosMode::Learned => None,
        };
        Ok(shapes.map(|name, shape| {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            match (name, leaf) {
                ("pos", _) => match &sinusoid {
                    Some(table) => table.clone(),
                    None => truncated_normal(&mut rng, shape),
                },
                ("class_token", _) => Tensor::zeros(shape.clone()),
                (_, "gain") => Tensor::full(shape.clone(), T::one()),
                (_, "bias" | "b1" | "b2") => Tensor::zeros(shape.clone()),
                _ => truncated_normal(&mut rng, shape),
            }
        }))
    }

    /// Checks every slot against the shape table of `config`.
    pub fn check_shapes(&self, config: &ViTConfig) -> Result<(), ViTError> {
        let expected = param_shapes(config);
        if expected.blocks.len() != self.blocks.len() {
            return Err(ViTError::ParamShape {
                name: String::from("blocks"),
                expected: vec![expected.blocks.len()],
                got: vec![self.blocks.len()],
            });
        }
        for ((name, t), (_, shape)) in self.named().into_iter().zip(expected.named()) {
            if t.shape() != shape.as_slice() {
                return Err(ViTError::ParamShape {
                    name,
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Reassembles parameters from `(name, tensor)` pairs in any order.
    pub fn from_named(
        config: &ViTConfig,
        mut tensors: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, ViTError> {
        let shapes = param_shapes(config);
        let out = shapes.try_map(|name, shape| {
            let pos = tensors.iter().position(|(n, _)| n == name).ok_or_else(|| {
                ViTError::ParamShape {
                    name: String::from(name),
                    expected: shape.clone(),
                    got: Vec::new(),
                }
            })?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(ViTError::ParamShape {
                    name: String::from(name),
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
            Ok(t)
        })?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ViTConfig {
        ViTConfig {
            height: 8,
            width: 8,
            channels: 1,
            patch: 4,
            dim: 8,
            heads: 2,
            blocks: 2,
            mlp_ratio: 2,
            n_classes: 3,
            ..ViTConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let c = small();
        let a = ViTParams::<f64>::init(&c, 5).unwrap();
        let b = ViTParams::<f64>::init(&c, 5).unwrap();
        let other = ViTParams::<f64>::init(&c, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.patch_embed, other.patch_embed);
        a.check_shapes(&c).unwrap();
        assert!(a.class_token.data().iter().all(|&v| v == 0.0));
        assert!(a.blocks[1].ln2_gain.data().iter().all(|&v| v == 1.0));
        assert!(a.head_bias.data().iter().all(|&v| v == 0.0));
        assert!(a.blocks[0]
            .w_q
            .data()
            .iter()
            .all(|&v| v.abs() <= 0.04 && v != 0.0));
        let names: Vec<String> = a.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 3 + 12 * 2 + 4);
        assert_eq!(names[3], "blocks.0.ln1.gain");
        assert_eq!(names.last().unwrap(), "head.bias");
    }

    #[test]
    fn from_named_roundtrip_and_errors() {
        let c = small();
        let p = ViTParams::<f64>::init(&c, 1).unwrap();
        let mut pairs: Vec<(String, Tensor<f64>)> =
            p.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        pairs.reverse();
        assert_eq!(ViTParams::from_named(&c, pairs.clone()).unwrap(), p);
        pairs.pop();
        assert!(ViTParams::from_named(&c, pairs).is_err());
    }

    #[test]
    fn pos_trainable_only_when_learned() {
        let mut c = small();
        assert!(!is_trainable("pos", &c));
        assert!(is_trainable("patch_embed", &c));
        c.pos_mode = PosMode::Learned;
        assert!(is_trainable("pos", &c));
    }
}
