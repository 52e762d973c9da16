use alloc::vec;
use alloc::vec::Vec;

use super::params::{is_trainable, BlockWeights, ViTParams, ViTWeights};
use super::{ViTConfig, ViTError};
use crate::image::Image;
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

pub type BoundParams = ViTWeights<Var>;
pub type BoundBlock = BlockWeights<Var>;

/// Splits an image into `N = HW/P²` rows of `P²C` values. Patches are
/// ordered row-major over the patch grid; each row flattens its patch
/// row-major over `(y, x, channel)`.
pub fn patchify<T: Real>(img: &Image, patch: usize) -> Result<Tensor<T>, ViTError> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(ViTError::Indivisible {
            height: h,
            width: w,
            patch,
        });
    }
    let (gh, gw) = (h / patch, w / patch);
    let row_len = patch * patch * c;
    let px = img.pixels();
    let mut data = Vec::with_capacity(gh * gw * row_len);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..patch {
                let start = ((gy * patch + py) * w + gx * patch) * c;
                data.extend(px[start..start + patch * c].iter().map(|&v| T::from_f64(v)));
            }
        }
    }
    Ok(Tensor::new([gh * gw, row_len], data)?)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(
    patches: &Tensor<T>,
    height: usize,
    width: usize,
    channels: usize,
    patch: usize,
) -> Result<Image, ViTError> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(ViTError::Indivisible {
            height,
            width,
            patch,
        });
    }
    let (gh, gw) = (height / patch, width / patch);
    let row_len = patch * patch * channels;
    let expected = [gh * gw, row_len];
    if patches.shape() != expected {
        return Err(ViTError::Tensor(
            crate::tensor::TensorError::ShapeMismatch {
                op: "unpatchify",
                lhs: patches.shape().to_vec(),
                rhs: expected.to_vec(),
            },
        ));
    }
    let mut px = vec![0.0; height * width * channels];
    let src = patches.data();
    for gy in 0..gh {
        for gx in 0..gw {
            let row = &src[(gy * gw + gx) * row_len..(gy * gw + gx + 1) * row_len];
            for py in 0..patch {
                let start = ((gy * patch + py) * width + gx * patch) * channels;
                for (dst, &v) in px[start..start + patch * channels]
                    .iter_mut()
                    .zip(&row[py * patch * channels..(py + 1) * patch * channels])
                {
                    *dst = v.as_f64();
                }
            }
        }
    }
    Image::new(height, width, channels, px)
        .map_err(|_| ViTError::Config("patch values outside [0, 1]"))
}

/// `rows × dim` table with `p[i][j] = sin(i / 10000^(j/D))` for even `j` and
/// `cos(i / 10000^((j-1)/D))` for odd `j`.
pub fn sinusoidal_positions<T: Real>(rows: usize, dim: usize) -> Result<Tensor<T>, ViTError> {
    if !dim.is_multiple_of(2) {
        return Err(ViTError::OddWidth(dim));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for i in 0..rows {
        for j in 0..dim {
            let exponent = (j - j % 2) as f64 / dim as f64;
            let angle = i as f64 / libm::pow(10_000.0, exponent);
            let v = if j % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
            data.push(T::from_f64(v));
        }
    }
    Ok(Tensor::new([rows, dim], data)?)
}

/// Registers parameters as graph leaves. Trainable slots receive gradients;
/// the sinusoidal table is a constant.
pub fn bind<T: Real>(g: &mut Graph<T>, params: &ViTParams<T>, config: &ViTConfig) -> BoundParams {
    params.map(|name, t| g.leaf(t.clone(), is_trainable(name, config)))
}

/// Registers parameters as constants, for inference.
pub fn bind_frozen<T: Real>(g: &mut Graph<T>, params: &ViTParams<T>) -> BoundParams {
    params.map(|_, t| g.constant(t.clone()))
}

/// Stacks the patch matrices of a batch into `[B, N, P²C]`.
pub fn patch_batch<T: Real>(images: &[&Image], config: &ViTConfig) -> Result<Tensor<T>, ViTError> {
    if images.is_empty() {
        return Err(ViTError::EmptyBatch);
    }
    let mut data = Vec::with_capacity(images.len() * config.n_patches() * config.patch_dim());
    for img in images {
        config.check_image(img)?;
        data.extend(patchify::<T>(img, config.patch)?.into_data());
    }
    Ok(Tensor::new(
        [images.len(), config.n_patches(), config.patch_dim()],
        data,
    )?)
}

/// `z₀ = [x_class; x_p¹E; …; x_pᴺE] + pos` for a `[B, N, P²C]` batch.
pub fn embed<T: Real>(g: &mut Graph<T>, patches: Var, p: &BoundParams) -> Result<Var, ViTError> {
    let batch = g.shape(patches)[0];
    let dim = g.shape(p.class_token)[1];
    let projected = g.matmul(patches, p.patch_embed)?;
    let cls = g.reshape(p.class_token, &[1, 1, dim])?;
    let cls = if batch == 1 {
        cls
    } else {
        g.concat(&vec![cls; batch], 0)?
    };
    let tokens = g.concat(&[cls, projected], 1)?;
    Ok(g.add(tokens, p.pos)?)
}

/// Multi-head self-attention over `[B, T, D]`. Each head attends with
/// `softmax(QKᵀ/√d_k)` over its `d_k` slice; head outputs are concatenated
/// and projected by `W_O`. Returns the output and the `[B, heads, T, T]`
/// attention weights.
pub fn msa<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    block: &BoundBlock,
    heads: usize,
) -> Result<(Var, Var), ViTError> {
    let shape = g.shape(x).to_vec();
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(ViTError::Heads { dim: d, heads });
    }
    let dk = d / heads;
    let split = |g: &mut Graph<T>, w: Var| -> Result<Var, ViTError> {
        let proj = g.matmul(x, w)?;
        let r = g.reshape(proj, &[b, t, heads, dk])?;
        Ok(g.swap_axes(r, 1, 2)?)
    };
    let q = split(g, block.w_q)?;
    let k = split(g, block.w_k)?;
    let v = split(g, block.w_v)?;
    let kt = g.swap_axes(k, 2, 3)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::one() / T::from_f64(dk as f64).sqrt());
    let attn = g.softmax(scores, 3)?;
    let z = g.matmul(attn, v)?;
    let z = g.swap_axes(z, 1, 2)?;
    let z = g.reshape(z, &[b, t, d])?;
    Ok((g.matmul(z, block.w_o)?, attn))
}

/// Pre-norm encoder block:
/// `z' = MSA(LN(z)) + z`, then `z_out = MLP(LN(z')) + z'` with
/// `MLP(u) = GELU(u·W₁ + b₁)·W₂ + b₂`.
pub fn encoder_block<T: Real>(
    g: &mut Graph<T>,
    z: Var,
    block: &BoundBlock,
    config: &ViTConfig,
) -> Result<(Var, Var), ViTError> {
    let eps = T::from_f64(config.ln_eps);
    let n1 = g.layer_norm(z, block.ln1_gain, block.ln1_bias, eps)?;
    let (attn_out, attn) = msa(g, n1, block, config.heads)?;
    let z_mid = g.add(attn_out, z)?;
    let n2 = g.layer_norm(z_mid, block.ln2_gain, block.ln2_bias, eps)?;
    let h = g.matmul(n2, block.mlp_w1)?;
    let h = g.add(h, block.mlp_b1)?;
    let h = g.gelu(h);
    let h = g.matmul(h, block.mlp_w2)?;
    let h = g.add(h, block.mlp_b2)?;
    Ok((g.add(h, z_mid)?, attn))
}

pub struct ForwardOutput {
    /// `[B, n_classes]`.
    pub logits: Var,
    /// Per block, `[B, heads, N+1, N+1]` attention weights.
    pub attention: Vec<Var>,
    /// Per block output token sequence `[B, N+1, D]`.
    pub block_outputs: Vec<Var>,
}

/// Full model on a `[B, N, P²C]` patch batch: embed, encoder stack, final
/// LayerNorm of the class-token row, linear head.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    patches: Var,
    p: &BoundParams,
    config: &ViTConfig,
) -> Result<ForwardOutput, ViTError> {
    let mut z = embed(g, patches, p)?;
    let mut attention = Vec::with_capacity(p.blocks.len());
    let mut block_outputs = Vec::with_capacity(p.blocks.len());
    for block in &p.blocks {
        let (next, attn) = encoder_block(g, z, block, config)?;
        z = next;
        attention.push(attn);
        block_outputs.push(z);
    }
    let b = g.shape(z)[0];
    let cls = g.slice(z, 1, 0, 1)?;
    let cls = g.reshape(cls, &[b, config.dim])?;
    let y = g.layer_norm(
        cls,
        p.final_ln_gain,
        p.final_ln_bias,
        T::from_f64(config.ln_eps),
    )?;
    let logits = g.matmul(y, p.head_weight)?;
    let logits = g.add(logits, p.head_bias)?;
    Ok(ForwardOutput {
        logits,
        attention,
        block_outputs,
    })
}

/// Class probabilities for each image, batched in chunks of `batch_size`.
pub fn predict_proba<T: Real>(
    params: &ViTParams<T>,
    config: &ViTConfig,
    images: &[&Image],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, ViTError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let bound = bind_frozen(&mut g, params);
        let patches = g.constant(patch_batch(chunk, config)?);
        let fwd = forward(&mut g, patches, &bound, config)?;
        let probs = g.softmax(fwd.logits, 1)?;
        let data = g.value(probs).data();
        out.extend(
            data.chunks(config.n_classes)
                .map(|row| row.iter().map(|v| v.as_f64()).collect()),
        );
    }
    Ok(out)
}
