//! The reconstruction network: PointNet-style patch/positional embeddings
//! feeding an asymmetric pre-norm transformer encoder-decoder with a shared
//! learnable mask token and a linear prediction head. Forward and backward
//! passes are written out explicitly over flat f64 buffers.

mod checkpoint;
mod gradcheck;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, write_loss_csv};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tensor::Tensor;
pub use train::{train, Adam, TrainConfig, TrainState};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::patch::{MaskSpec, PatchSet};
use crate::seed;
use tensor::{
    gelu_backward, gelu_forward, layernorm_backward, layernorm_forward, linear_backward,
    linear_forward, softmax_backward_rows, softmax_rows,
};

/// Architecture and patching hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Patch size (points per patch).
    pub k: usize,
    /// Default number of patch centers.
    pub n_centers: usize,
    /// Training mask ratio.
    pub mask_ratio: f64,
    /// Hidden width of the two-layer point/position MLPs.
    pub embed_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            enc_layers: 3,
            dec_layers: 3,
            heads: 4,
            mlp_ratio: 4,
            k: 64,
            n_centers: 256,
            mask_ratio: 0.4,
            embed_hidden: 128,
        }
    }
}

impl ModelConfig {
    /// Small configuration for gradient checking.
    pub fn tiny() -> Self {
        Self {
            d: 16,
            enc_layers: 1,
            dec_layers: 1,
            heads: 4,
            mlp_ratio: 4,
            k: 8,
            n_centers: 8,
            mask_ratio: 0.4,
            embed_hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d = {} not divisible by heads = {}",
                self.d, self.heads
            )));
        }
        for (name, v) in [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("mlp_ratio", self.mlp_ratio),
            ("k", self.k),
            ("n_centers", self.n_centers),
            ("embed_hidden", self.embed_hidden),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidRatio(self.mask_ratio));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn zeros(din: usize, dout: usize) -> Self {
        Self {
            w: Tensor::zeros(din, dout),
            b: Tensor::zeros(1, dout),
        }
    }
}

/// Two-layer MLP (din -> hidden -> dout) with GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    fn zeros(din: usize, hidden: usize, dout: usize) -> Self {
        Self {
            l1: Linear::zeros(din, hidden),
            l2: Linear::zeros(hidden, dout),
        }
    }
}

/// Pre-norm transformer block parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl Block {
    fn zeros(d: usize, ratio: usize) -> Self {
        Self {
            ln1_g: Tensor::zeros(1, d),
            ln1_b: Tensor::zeros(1, d),
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
            ln2_g: Tensor::zeros(1, d),
            ln2_b: Tensor::zeros(1, d),
            ff1: Linear::zeros(d, ratio * d),
            ff2: Linear::zeros(ratio * d, d),
        }
    }
}

/// All learnable parameters. `Grads` and optimizer moments reuse this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub patch_embed: Mlp2,
    pub pos_embed: Mlp2,
    pub encoder: Vec<Block>,
    pub enc_norm_g: Tensor,
    pub enc_norm_b: Tensor,
    pub decoder: Vec<Block>,
    pub dec_norm_g: Tensor,
    pub dec_norm_b: Tensor,
    pub mask_token: Tensor,
    pub head: Linear,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d;
        Self {
            config: *config,
            patch_embed: Mlp2::zeros(3, config.embed_hidden, d),
            pos_embed: Mlp2::zeros(3, config.embed_hidden, d),
            encoder: (0..config.enc_layers).map(|_| Block::zeros(d, config.mlp_ratio)).collect(),
            enc_norm_g: Tensor::zeros(1, d),
            enc_norm_b: Tensor::zeros(1, d),
            decoder: (0..config.dec_layers).map(|_| Block::zeros(d, config.mlp_ratio)).collect(),
            dec_norm_g: Tensor::zeros(1, d),
            dec_norm_b: Tensor::zeros(1, d),
            mask_token: Tensor::zeros(1, d),
            head: Linear::zeros(d, config.k * 3),
        }
    }

    /// Stable (name, tensor) listing; the order defines checkpoint layout
    /// and optimizer slot pairing.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        let mlp = |name: &str, m: &'_ Mlp2, out: &mut Vec<(String, &'_ Tensor)>| {
            out.push((format!("{name}.l1.w"), &m.l1.w));
            out.push((format!("{name}.l1.b"), &m.l1.b));
            out.push((format!("{name}.l2.w"), &m.l2.w));
            out.push((format!("{name}.l2.b"), &m.l2.b));
        };
        mlp("patch_embed", &self.patch_embed, &mut out);
        mlp("pos_embed", &self.pos_embed, &mut out);
        for (section, blocks) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, b) in blocks.iter().enumerate() {
                out.push((format!("{section}.{i}.ln1.g"), &b.ln1_g));
                out.push((format!("{section}.{i}.ln1.b"), &b.ln1_b));
                for (n, l) in [("q", &b.q), ("k", &b.k), ("v", &b.v), ("o", &b.o)] {
                    out.push((format!("{section}.{i}.{n}.w"), &l.w));
                    out.push((format!("{section}.{i}.{n}.b"), &l.b));
                }
                out.push((format!("{section}.{i}.ln2.g"), &b.ln2_g));
                out.push((format!("{section}.{i}.ln2.b"), &b.ln2_b));
                out.push((format!("{section}.{i}.ff1.w"), &b.ff1.w));
                out.push((format!("{section}.{i}.ff1.b"), &b.ff1.b));
                out.push((format!("{section}.{i}.ff2.w"), &b.ff2.w));
                out.push((format!("{section}.{i}.ff2.b"), &b.ff2.b));
            }
        }
        out.push(("enc_norm.g".into(), &self.enc_norm_g));
        out.push(("enc_norm.b".into(), &self.enc_norm_b));
        out.push(("dec_norm.g".into(), &self.dec_norm_g));
        out.push(("dec_norm.b".into(), &self.dec_norm_b));
        out.push(("mask_token".into(), &self.mask_token));
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        let mlp = |name: &str, m: &'_ mut Mlp2, out: &mut Vec<(String, &'_ mut Tensor)>| {
            out.push((format!("{name}.l1.w"), &mut m.l1.w));
            out.push((format!("{name}.l1.b"), &mut m.l1.b));
            out.push((format!("{name}.l2.w"), &mut m.l2.w));
            out.push((format!("{name}.l2.b"), &mut m.l2.b));
        };
        mlp("patch_embed", &mut self.patch_embed, &mut out);
        mlp("pos_embed", &mut self.pos_embed, &mut out);
        for (section, blocks) in [("enc", &mut self.encoder), ("dec", &mut self.decoder)] {
            for (i, b) in blocks.iter_mut().enumerate() {
                out.push((format!("{section}.{i}.ln1.g"), &mut b.ln1_g));
                out.push((format!("{section}.{i}.ln1.b"), &mut b.ln1_b));
                for (n, l) in [
                    ("q", &mut b.q),
                    ("k", &mut b.k),
                    ("v", &mut b.v),
                    ("o", &mut b.o),
                ] {
                    out.push((format!("{section}.{i}.{n}.w"), &mut l.w));
                    out.push((format!("{section}.{i}.{n}.b"), &mut l.b));
                }
                out.push((format!("{section}.{i}.ln2.g"), &mut b.ln2_g));
                out.push((format!("{section}.{i}.ln2.b"), &mut b.ln2_b));
                out.push((format!("{section}.{i}.ff1.w"), &mut b.ff1.w));
                out.push((format!("{section}.{i}.ff1.b"), &mut b.ff1.b));
                out.push((format!("{section}.{i}.ff2.w"), &mut b.ff2.w));
                out.push((format!("{section}.{i}.ff2.b"), &mut b.ff2.b));
            }
        }
        out.push(("enc_norm.g".into(), &mut self.enc_norm_g));
        out.push(("enc_norm.b".into(), &mut self.enc_norm_b));
        out.push(("dec_norm.g".into(), &mut self.dec_norm_g));
        out.push(("dec_norm.b".into(), &mut self.dec_norm_b));
        out.push(("mask_token".into(), &mut self.mask_token));
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// True once any tensor deviates from all-zeros (zeros() is the
    /// "uninitialized" sentinel used by checkpoint loading).
    pub fn is_initialized(&self) -> bool {
        self.tensors().iter().any(|(_, t)| t.data.iter().any(|&v| v != 0.0))
    }

    /// Rounds every parameter through f32, matching checkpoint precision so
    /// in-memory and reloaded models behave identically.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Truncated-normal (std 0.02, clipped at 2 std) weights, zero biases,
/// unit norm scales; deterministic in the seed.
pub fn init_params(config: &ModelConfig, seed_value: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = seed::rng(seed_value, "init", &[]);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let mut trunc = move |rng: &mut ChaCha8Rng| loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 0.04 {
            return x;
        }
    };
    let mut params = ModelParams::zeros(config);
    for (name, t) in params.tensors_mut() {
        if name.ends_with(".w") || name == "mask_token" {
            for v in t.data.iter_mut() {
                *v = trunc(&mut rng);
            }
        } else if name.ends_with("ln1.g") || name.ends_with("ln2.g") || name.ends_with("norm.g") {
            t.fill(1.0);
        }
        // biases and norm offsets stay zero
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct MlpCache {
    n: usize,
    x: Vec<f64>,
    h_pre: Vec<f64>,
    h_act: Vec<f64>,
    out: Vec<f64>,
}

fn mlp_forward(m: &Mlp2, x: Vec<f64>, n: usize) -> MlpCache {
    let hidden = m.l1.w.cols;
    let dout = m.l2.w.cols;
    let mut h_pre = vec![0.0; n * hidden];
    linear_forward(&x, n, &m.l1.w, &m.l1.b, &mut h_pre);
    let mut h_act = vec![0.0; n * hidden];
    gelu_forward(&h_pre, &mut h_act);
    let mut out = vec![0.0; n * dout];
    linear_forward(&h_act, n, &m.l2.w, &m.l2.b, &mut out);
    MlpCache {
        n,
        x,
        h_pre,
        h_act,
        out,
    }
}

fn mlp_backward(m: &Mlp2, g: &mut Mlp2, cache: &MlpCache, dout: &[f64]) -> Vec<f64> {
    let n = cache.n;
    let hidden = m.l1.w.cols;
    let mut dh_act = vec![0.0; n * hidden];
    linear_backward(&cache.h_act, n, &m.l2.w, dout, &mut dh_act, &mut g.l2.w, &mut g.l2.b);
    let mut dh_pre = vec![0.0; n * hidden];
    gelu_backward(&cache.h_pre, &dh_act, &mut dh_pre);
    let mut dx = vec![0.0; n * m.l1.w.rows];
    linear_backward(&cache.x, n, &m.l1.w, &dh_pre, &mut dx, &mut g.l1.w, &mut g.l1.b);
    dx
}

struct BlockCache {
    t: usize,
    x_in: Vec<f64>,
    ln1_out: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>, // heads x t x t
    ctx: Vec<f64>,
    x_mid: Vec<f64>,
    ln2_out: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    out: Vec<f64>,
}

fn block_forward(p: &Block, cfg: &ModelConfig, x_in: Vec<f64>, t: usize) -> BlockCache {
    let d = cfg.d;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut ln1_out = vec![0.0; t * d];
    let mut ln1_mean = vec![0.0; t];
    let mut ln1_rstd = vec![0.0; t];
    layernorm_forward(&x_in, t, d, &p.ln1_g, &p.ln1_b, &mut ln1_out, &mut ln1_mean, &mut ln1_rstd);

    let mut q = vec![0.0; t * d];
    let mut k = vec![0.0; t * d];
    let mut v = vec![0.0; t * d];
    linear_forward(&ln1_out, t, &p.q.w, &p.q.b, &mut q);
    linear_forward(&ln1_out, t, &p.k.w, &p.k.b, &mut k);
    linear_forward(&ln1_out, t, &p.v.w, &p.v.b, &mut v);

    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        let ph = &mut probs[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            let qi = &q[i * d + off..i * d + off + dh];
            for j in 0..t {
                let kj = &k[j * d + off..j * d + off + dh];
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += qi[c] * kj[c];
                }
                ph[i * t + j] = dot * scale;
            }
        }
        softmax_rows(ph, t, t);
        for i in 0..t {
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                let w = ph[i * t + j];
                let vj = &v[j * d + off..j * d + off + dh];
                for c in 0..dh {
                    ci[c] += w * vj[c];
                }
            }
        }
    }

    let mut attn_out = vec![0.0; t * d];
    linear_forward(&ctx, t, &p.o.w, &p.o.b, &mut attn_out);
    let mut x_mid = x_in.clone();
    for (m, a) in x_mid.iter_mut().zip(&attn_out) {
        *m += a;
    }

    let mut ln2_out = vec![0.0; t * d];
    let mut ln2_mean = vec![0.0; t];
    let mut ln2_rstd = vec![0.0; t];
    layernorm_forward(&x_mid, t, d, &p.ln2_g, &p.ln2_b, &mut ln2_out, &mut ln2_mean, &mut ln2_rstd);

    let dff = cfg.mlp_ratio * d;
    let mut ff_pre = vec![0.0; t * dff];
    linear_forward(&ln2_out, t, &p.ff1.w, &p.ff1.b, &mut ff_pre);
    let mut ff_act = vec![0.0; t * dff];
    gelu_forward(&ff_pre, &mut ff_act);
    let mut ff_out = vec![0.0; t * d];
    linear_forward(&ff_act, t, &p.ff2.w, &p.ff2.b, &mut ff_out);

    let mut out = x_mid.clone();
    for (o, f) in out.iter_mut().zip(&ff_out) {
        *o += f;
    }

    BlockCache {
        t,
        x_in,
        ln1_out,
        ln1_mean,
        ln1_rstd,
        q,
        k,
        v,
        probs,
        ctx,
        x_mid,
        ln2_out,
        ln2_mean,
        ln2_rstd,
        ff_pre,
        ff_act,
        out,
    }
}

fn block_backward(p: &Block, g: &mut Block, cfg: &ModelConfig, cache: &BlockCache, dout: &[f64]) -> Vec<f64> {
    let d = cfg.d;
    let t = cache.t;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dff = cfg.mlp_ratio * d;

    // out = x_mid + ff2(gelu(ff1(ln2(x_mid))))
    let mut d_ff_act = vec![0.0; t * dff];
    linear_backward(&cache.ff_act, t, &p.ff2.w, dout, &mut d_ff_act, &mut g.ff2.w, &mut g.ff2.b);
    let mut d_ff_pre = vec![0.0; t * dff];
    gelu_backward(&cache.ff_pre, &d_ff_act, &mut d_ff_pre);
    let mut d_ln2_out = vec![0.0; t * d];
    linear_backward(&cache.ln2_out, t, &p.ff1.w, &d_ff_pre, &mut d_ln2_out, &mut g.ff1.w, &mut g.ff1.b);

    let mut d_x_mid = dout.to_vec();
    layernorm_backward(
        &cache.x_mid,
        t,
        d,
        &p.ln2_g,
        &cache.ln2_mean,
        &cache.ln2_rstd,
        &d_ln2_out,
        &mut d_x_mid,
        &mut g.ln2_g,
        &mut g.ln2_b,
    );

    // x_mid = x_in + o(ctx)
    let mut d_ctx = vec![0.0; t * d];
    linear_backward(&cache.ctx, t, &p.o.w, &d_x_mid, &mut d_ctx, &mut g.o.w, &mut g.o.b);

    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t * t];
    let mut ds = vec![0.0; t * t];
    for h in 0..heads {
        let off = h * dh;
        let ph = &cache.probs[h * t * t..(h + 1) * t * t];
        // dp[i][j] = d_ctx_h[i] . v_h[j];  dv_h[j] += sum_i p[i][j] d_ctx_h[i]
        for i in 0..t {
            let dci = &d_ctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                let vj = &cache.v[j * d + off..j * d + off + dh];
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += dci[c] * vj[c];
                }
                dp[i * t + j] = dot;
            }
        }
        for j in 0..t {
            let dvj_base = j * d + off;
            for i in 0..t {
                let w = ph[i * t + j];
                if w == 0.0 {
                    continue;
                }
                let dci = &d_ctx[i * d + off..i * d + off + dh];
                let dvj = &mut dv[dvj_base..dvj_base + dh];
                for c in 0..dh {
                    dvj[c] += w * dci[c];
                }
            }
        }
        softmax_backward_rows(ph, &dp, t, t, &mut ds);
        // scores[i][j] = scale * q_h[i] . k_h[j]
        for i in 0..t {
            let dqi_base = i * d + off;
            for j in 0..t {
                let s = ds[i * t + j] * scale;
                if s == 0.0 {
                    continue;
                }
                let kj = &cache.k[j * d + off..j * d + off + dh];
                let dqi = &mut dq[dqi_base..dqi_base + dh];
                for c in 0..dh {
                    dqi[c] += s * kj[c];
                }
            }
        }
        for j in 0..t {
            let dkj_base = j * d + off;
            for i in 0..t {
                let s = ds[i * t + j] * scale;
                if s == 0.0 {
                    continue;
                }
                let qi = &cache.q[i * d + off..i * d + off + dh];
                let dkj = &mut dk[dkj_base..dkj_base + dh];
                for c in 0..dh {
                    dkj[c] += s * qi[c];
                }
            }
        }
    }

    let mut d_ln1_out = vec![0.0; t * d];
    let mut tmp = vec![0.0; t * d];
    linear_backward(&cache.ln1_out, t, &p.q.w, &dq, &mut tmp, &mut g.q.w, &mut g.q.b);
    for (a, b) in d_ln1_out.iter_mut().zip(&tmp) {
        *a += b;
    }
    linear_backward(&cache.ln1_out, t, &p.k.w, &dk, &mut tmp, &mut g.k.w, &mut g.k.b);
    for (a, b) in d_ln1_out.iter_mut().zip(&tmp) {
        *a += b;
    }
    linear_backward(&cache.ln1_out, t, &p.v.w, &dv, &mut tmp, &mut g.v.w, &mut g.v.b);
    for (a, b) in d_ln1_out.iter_mut().zip(&tmp) {
        *a += b;
    }

    let mut d_x_in = d_x_mid;
    layernorm_backward(
        &cache.x_in,
        t,
        d,
        &p.ln1_g,
        &cache.ln1_mean,
        &cache.ln1_rstd,
        &d_ln1_out,
        &mut d_x_in,
        &mut g.ln1_g,
        &mut g.ln1_b,
    );
    d_x_in
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    visible: Vec<usize>,
    masked: Vec<usize>,
    embed_mlp: MlpCache,
    pool_argmax: Vec<usize>,
    pos_mlp: MlpCache,
    enc_in: Vec<f64>,
    enc_blocks: Vec<BlockCache>,
    enc_norm_out: Vec<f64>,
    enc_norm_mean: Vec<f64>,
    enc_norm_rstd: Vec<f64>,
    dec_in: Vec<f64>,
    dec_blocks: Vec<BlockCache>,
    dec_norm_out: Vec<f64>,
    dec_norm_mean: Vec<f64>,
    dec_norm_rstd: Vec<f64>,
    head_in: Vec<f64>,
}

/// Reconstruction output: predicted center-relative patches for the masked
/// positions plus the per-block decoder feature taps (all positions).
pub struct ForwardOutput {
    /// Masked patch indices, in ascending patch order.
    pub masked_patches: Vec<usize>,
    /// Predicted local coordinates, one entry per masked patch.
    pub predictions: Vec<Vec<Vec3>>,
    /// Decoder taps after blocks 1..=3 (fewer if the decoder is shallower);
    /// each is n_c x d, row-major.
    pub features: Vec<Vec<f64>>,
}

/// Patch tokens for the visible patches (max-pooled point MLP, n_v x d) and
/// positional embeddings for every center (n_c x d), both row-major.
pub fn embed_patches(
    params: &ModelParams,
    patches: &PatchSet,
    mask: &MaskSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = embed_forward(params, patches, mask)?;
    Ok((e.tokens, e.pos_mlp.out))
}

struct EmbedCache {
    point_mlp: MlpCache,
    tokens: Vec<f64>,
    argmax: Vec<usize>,
    visible: Vec<usize>,
    pos_mlp: MlpCache,
}

/// Point MLP + max pool over the visible patches, and the positional MLP
/// over all centers.
fn embed_forward(params: &ModelParams, patches: &PatchSet, mask: &MaskSpec) -> Result<EmbedCache> {
    let cfg = &params.config;
    if patches.k != cfg.k {
        return Err(Error::ShapeMismatch(format!(
            "patch size {} != model k {}",
            patches.k, cfg.k
        )));
    }
    if mask.masked.len() != patches.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask over {} patches, patch set has {}",
            mask.masked.len(),
            patches.len()
        )));
    }
    let visible = mask.visible_indices();
    if visible.is_empty() {
        return Err(Error::ShapeMismatch("no visible patches".into()));
    }
    let d = cfg.d;
    let k = cfg.k;
    let n_v = visible.len();

    // Flatten visible patch points into (n_v * k, 3).
    let mut pts = vec![0.0; n_v * k * 3];
    for (vi, &pi) in visible.iter().enumerate() {
        for (j, p) in patches.local_coords[pi].iter().enumerate() {
            let base = (vi * k + j) * 3;
            pts[base] = p.x;
            pts[base + 1] = p.y;
            pts[base + 2] = p.z;
        }
    }
    let point_mlp = mlp_forward(&params.patch_embed, pts, n_v * k);

    // Coordinate-wise max over each patch's k points.
    let mut tokens = vec![0.0; n_v * d];
    let mut argmax = vec![0usize; n_v * d];
    for vi in 0..n_v {
        for c in 0..d {
            let mut best = f64::NEG_INFINITY;
            let mut best_j = 0;
            for j in 0..k {
                let v = point_mlp.out[(vi * k + j) * d + c];
                if v > best {
                    best = v;
                    best_j = j;
                }
            }
            tokens[vi * d + c] = best;
            argmax[vi * d + c] = best_j;
        }
    }

    // Positional embedding for all centers.
    let n_c = patches.len();
    let mut centers = vec![0.0; n_c * 3];
    for (i, c) in patches.centers.iter().enumerate() {
        centers[i * 3] = c.x;
        centers[i * 3 + 1] = c.y;
        centers[i * 3 + 2] = c.z;
    }
    let pos_mlp = mlp_forward(&params.pos_embed, centers, n_c);

    Ok(EmbedCache {
        point_mlp,
        tokens,
        argmax,
        visible,
        pos_mlp,
    })
}

/// Full forward pass. Encoder sees only visible tokens (+ their positions);
/// the decoder sees the full sequence with the shared mask token standing in
/// at masked positions.
pub fn forward_cached(
    params: &ModelParams,
    patches: &PatchSet,
    mask: &MaskSpec,
) -> Result<(ForwardOutput, ForwardCache)> {
    let cfg = &params.config;
    cfg.validate()?;
    let EmbedCache {
        point_mlp,
        tokens,
        argmax,
        visible,
        pos_mlp,
    } = embed_forward(params, patches, mask)?;
    let d = cfg.d;
    let n_c = patches.len();
    let n_v = visible.len();
    let masked = mask.masked_indices();
    let n_m = masked.len();

    // Encoder input: token + position, visible only.
    let mut enc_in = vec![0.0; n_v * d];
    for (vi, &pi) in visible.iter().enumerate() {
        for c in 0..d {
            enc_in[vi * d + c] = tokens[vi * d + c] + pos_mlp.out[pi * d + c];
        }
    }
    let mut enc_blocks = Vec::with_capacity(cfg.enc_layers);
    let mut x = enc_in.clone();
    for b in &params.encoder {
        let cache = block_forward(b, cfg, x, n_v);
        x = cache.out.clone();
        enc_blocks.push(cache);
    }
    let mut enc_norm_out = vec![0.0; n_v * d];
    let mut enc_norm_mean = vec![0.0; n_v];
    let mut enc_norm_rstd = vec![0.0; n_v];
    layernorm_forward(
        &x,
        n_v,
        d,
        &params.enc_norm_g,
        &params.enc_norm_b,
        &mut enc_norm_out,
        &mut enc_norm_mean,
        &mut enc_norm_rstd,
    );

    // Decoder input: encoded tokens at visible slots, mask token + position
    // at masked slots.
    let mut dec_in = vec![0.0; n_c * d];
    for (vi, &pi) in visible.iter().enumerate() {
        dec_in[pi * d..(pi + 1) * d].copy_from_slice(&enc_norm_out[vi * d..(vi + 1) * d]);
    }
    for &pi in &masked {
        for c in 0..d {
            dec_in[pi * d + c] = params.mask_token.data[c] + pos_mlp.out[pi * d + c];
        }
    }
    let mut dec_blocks = Vec::with_capacity(cfg.dec_layers);
    let mut features = Vec::new();
    let mut x = dec_in.clone();
    for (li, b) in params.decoder.iter().enumerate() {
        let cache = block_forward(b, cfg, x, n_c);
        x = cache.out.clone();
        if li < 3 {
            features.push(cache.out.clone());
        }
        dec_blocks.push(cache);
    }
    let mut dec_norm_out = vec![0.0; n_c * d];
    let mut dec_norm_mean = vec![0.0; n_c];
    let mut dec_norm_rstd = vec![0.0; n_c];
    layernorm_forward(
        &x,
        n_c,
        d,
        &params.dec_norm_g,
        &params.dec_norm_b,
        &mut dec_norm_out,
        &mut dec_norm_mean,
        &mut dec_norm_rstd,
    );

    // Prediction head on the masked rows only.
    let mut head_in = vec![0.0; n_m * d];
    for (mi, &pi) in masked.iter().enumerate() {
        head_in[mi * d..(mi + 1) * d].copy_from_slice(&dec_norm_out[pi * d..(pi + 1) * d]);
    }
    let kx3 = cfg.k * 3;
    let mut offsets = vec![0.0; n_m * kx3];
    linear_forward(&head_in, n_m, &params.head.w, &params.head.b, &mut offsets);

    let predictions: Vec<Vec<Vec3>> = (0..n_m)
        .map(|mi| {
            (0..cfg.k)
                .map(|j| {
                    let base = mi * kx3 + j * 3;
                    Vec3::new(offsets[base], offsets[base + 1], offsets[base + 2])
                })
                .collect()
        })
        .collect();

    Ok((
        ForwardOutput {
            masked_patches: masked.clone(),
            predictions,
            features,
        },
        ForwardCache {
            visible,
            masked,
            embed_mlp: point_mlp,
            pool_argmax: argmax,
            pos_mlp,
            enc_in,
            enc_blocks,
            enc_norm_out,
            enc_norm_mean,
            enc_norm_rstd,
            dec_in,
            dec_blocks,
            dec_norm_out,
            dec_norm_mean,
            dec_norm_rstd,
            head_in,
        },
    ))
}

/// Forward pass without retaining activations.
pub fn forward(params: &ModelParams, patches: &PatchSet, mask: &MaskSpec) -> Result<ForwardOutput> {
    forward_cached(params, patches, mask).map(|(out, _)| out)
}

/// Backpropagates d(loss)/d(offsets) through the whole network.
/// `d_offsets` is n_m x (k*3), rows in the order of `masked_patches`.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_offsets: &[f64],
) -> ModelParams {
    let cfg = &params.config;
    let d = cfg.d;
    let n_v = cache.visible.len();
    let n_m = cache.masked.len();
    let n_c = cache.pos_mlp.n;
    let mut g = ModelParams::zeros(cfg);

    // Head.
    let mut d_head_in = vec![0.0; n_m * d];
    linear_backward(
        &cache.head_in,
        n_m,
        &params.head.w,
        d_offsets,
        &mut d_head_in,
        &mut g.head.w,
        &mut g.head.b,
    );

    // Scatter masked-row grads into the decoder-norm output grid.
    let mut d_dec_norm_out = vec![0.0; n_c * d];
    for (mi, &pi) in cache.masked.iter().enumerate() {
        d_dec_norm_out[pi * d..(pi + 1) * d].copy_from_slice(&d_head_in[mi * d..(mi + 1) * d]);
    }

    let dec_last = cache
        .dec_blocks
        .last()
        .map(|b| b.out.as_slice())
        .unwrap_or(&cache.dec_in);
    let mut d_x = vec![0.0; n_c * d];
    layernorm_backward(
        dec_last,
        n_c,
        d,
        &params.dec_norm_g,
        &cache.dec_norm_mean,
        &cache.dec_norm_rstd,
        &d_dec_norm_out,
        &mut d_x,
        &mut g.dec_norm_g,
        &mut g.dec_norm_b,
    );
    for bi in (0..params.decoder.len()).rev() {
        d_x = block_backward(
            &params.decoder[bi],
            &mut g.decoder[bi],
            cfg,
            &cache.dec_blocks[bi],
            &d_x,
        );
    }

    // Split decoder-input gradient between encoder output, mask token, and
    // positional embedding.
    let mut d_enc_norm_out = vec![0.0; n_v * d];
    let mut d_pos = vec![0.0; n_c * d];
    for (vi, &pi) in cache.visible.iter().enumerate() {
        d_enc_norm_out[vi * d..(vi + 1) * d].copy_from_slice(&d_x[pi * d..(pi + 1) * d]);
    }
    for &pi in &cache.masked {
        for c in 0..d {
            g.mask_token.data[c] += d_x[pi * d + c];
            d_pos[pi * d + c] += d_x[pi * d + c];
        }
    }

    let enc_last = cache
        .enc_blocks
        .last()
        .map(|b| b.out.as_slice())
        .unwrap_or(&cache.enc_in);
    let mut d_x = vec![0.0; n_v * d];
    layernorm_backward(
        enc_last,
        n_v,
        d,
        &params.enc_norm_g,
        &cache.enc_norm_mean,
        &cache.enc_norm_rstd,
        &d_enc_norm_out,
        &mut d_x,
        &mut g.enc_norm_g,
        &mut g.enc_norm_b,
    );
    for bi in (0..params.encoder.len()).rev() {
        d_x = block_backward(
            &params.encoder[bi],
            &mut g.encoder[bi],
            cfg,
            &cache.enc_blocks[bi],
            &d_x,
        );
    }

    // Encoder input = token + pos(visible).
    for (vi, &pi) in cache.visible.iter().enumerate() {
        for c in 0..d {
            d_pos[pi * d + c] += d_x[vi * d + c];
        }
    }

    // Max-pool routes token grads to the argmax point of each patch.
    let k = cfg.k;
    let mut d_points_out = vec![0.0; cache.embed_mlp.n * d];
    for vi in 0..n_v {
        for c in 0..d {
            let j = cache.pool_argmax[vi * d + c];
            d_points_out[(vi * k + j) * d + c] += d_x[vi * d + c];
        }
    }
    mlp_backward(&params.patch_embed, &mut g.patch_embed, &cache.embed_mlp, &d_points_out);
    mlp_backward(&params.pos_embed, &mut g.pos_embed, &cache.pos_mlp, &d_pos);

    g
}

// ---------------------------------------------------------------------------
// Reconstruction loss
// ---------------------------------------------------------------------------

/// Mean symmetric squared-l2 Chamfer distance over patch pairs, in
/// center-relative coordinates.
pub fn patch_loss(predicted: &[Vec<Vec3>], target: &[Vec<Vec3>]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::CountMismatch {
            left: predicted.len(),
            right: target.len(),
        });
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(target) {
        total += crate::geom::chamfer_l2(p, t)?;
    }
    Ok(total / predicted.len() as f64)
}

/// Loss plus its gradient with respect to the predicted points, flattened to
/// n_m x (k*3) to match the head layout. Nearest-neighbor ties resolve to the
/// lowest index.
pub fn patch_loss_grad(predicted: &[Vec<Vec3>], target: &[Vec<Vec3>]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != target.len() {
        return Err(Error::CountMismatch {
            left: predicted.len(),
            right: target.len(),
        });
    }
    let n_m = predicted.len();
    if n_m == 0 {
        return Ok((0.0, Vec::new()));
    }
    let k3 = predicted.first().map(|p| p.len() * 3).unwrap_or(0);
    let mut grad = vec![0.0; n_m * k3];
    let mut total = 0.0;
    for (pi, (pred, gt)) in predicted.iter().zip(target).enumerate() {
        if pred.is_empty() || gt.is_empty() {
            return Err(Error::EmptySet);
        }
        let np = pred.len() as f64;
        let ng = gt.len() as f64;
        let mut loss = 0.0;
        let grow = &mut grad[pi * k3..(pi + 1) * k3];
        // Forward direction: every predicted point to its nearest target.
        for (a_i, a) in pred.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_b = 0;
            for (b_i, b) in gt.iter().enumerate() {
                let d2 = (a - b).norm_squared();
                if d2 < best {
                    best = d2;
                    best_b = b_i;
                }
            }
            loss += best / np;
            let diff = (a - gt[best_b]) * (2.0 / np);
            grow[a_i * 3] += diff.x;
            grow[a_i * 3 + 1] += diff.y;
            grow[a_i * 3 + 2] += diff.z;
        }
        // Reverse direction: every target point to its nearest prediction.
        for b in gt.iter() {
            let mut best = f64::INFINITY;
            let mut best_a = 0;
            for (a_i, a) in pred.iter().enumerate() {
                let d2 = (a - b).norm_squared();
                if d2 < best {
                    best = d2;
                    best_a = a_i;
                }
            }
            loss += best / ng;
            let diff = (pred[best_a] - b) * (2.0 / ng);
            grow[best_a * 3] += diff.x;
            grow[best_a * 3 + 1] += diff.y;
            grow[best_a * 3 + 2] += diff.z;
        }
        total += loss;
    }
    let inv = 1.0 / n_m as f64;
    for v in grad.iter_mut() {
        *v *= inv;
    }
    Ok((total * inv, grad))
}

/// One training evaluation: forward, Chamfer loss against the masked
/// patches' true local coordinates, full backward.
pub fn loss_and_grads(
    params: &ModelParams,
    patches: &PatchSet,
    mask: &MaskSpec,
) -> Result<(f64, ModelParams)> {
    let (out, cache) = forward_cached(params, patches, mask)?;
    let targets: Vec<Vec<Vec3>> = out
        .masked_patches
        .iter()
        .map(|&pi| patches.local_coords[pi].clone())
        .collect();
    let (loss, d_offsets) = patch_loss_grad(&out.predictions, &targets)?;
    let grads = backward(params, &cache, &d_offsets);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::fps;
    use crate::patch::{make_patches, random_mask};
    use crate::synth::{icosphere, sample_surface};

    fn fixture(n_centers: usize, k: usize) -> PatchSet {
        let mesh = icosphere(1.0, 3);
        let cloud = sample_surface(&mesh, 2000, &mut seed::rng(11, "model-test", &[])).unwrap();
        let centers = fps(&cloud, n_centers).unwrap();
        make_patches(&cloud, &centers, k).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = ModelConfig::tiny();
        let a = init_params(&cfg, 5).unwrap();
        let b = init_params(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.is_initialized());
    }

    #[test]
    fn init_rejects_indivisible_heads() {
        let cfg = ModelConfig {
            d: 63,
            ..ModelConfig::default()
        };
        assert!(init_params(&cfg, 0).is_err());
    }

    #[test]
    fn forward_shapes_match_the_mask() {
        let cfg = ModelConfig {
            d: 32,
            enc_layers: 2,
            dec_layers: 3,
            heads: 4,
            mlp_ratio: 2,
            k: 16,
            n_centers: 40,
            mask_ratio: 0.4,
            embed_hidden: 32,
        };
        let params = init_params(&cfg, 1).unwrap();
        let patches = fixture(40, 16);
        let mask = random_mask(40, 0.4, 2).unwrap();
        let out = forward(&params, &patches, &mask).unwrap();
        assert_eq!(out.predictions.len(), 16); // floor(0.4 * 40)
        assert!(out.predictions.iter().all(|p| p.len() == 16));
        assert_eq!(out.features.len(), 3);
        assert!(out.features.iter().all(|f| f.len() == 40 * 32));
    }

    #[test]
    fn zero_head_predicts_patch_centers() {
        let cfg = ModelConfig::tiny();
        let mut params = init_params(&cfg, 3).unwrap();
        params.head.w.fill(0.0);
        params.head.b.fill(0.0);
        let patches = fixture(8, 8);
        let mask = random_mask(8, 0.4, 7).unwrap();
        let out = forward(&params, &patches, &mask).unwrap();
        for patch in &out.predictions {
            for p in patch {
                assert_eq!(*p, Vec3::zeros()); // zero offsets = the center itself
            }
        }
    }

    #[test]
    fn no_mask_is_allowed_and_predicts_nothing() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        let patches = fixture(8, 8);
        let mask = MaskSpec::none(8);
        let out = forward(&params, &patches, &mask).unwrap();
        assert!(out.predictions.is_empty());
        assert_eq!(out.features.len(), 1); // tiny config has one decoder block
        assert_eq!(out.features[0].len(), 8 * cfg.d);
    }

    #[test]
    fn token_embedding_is_point_order_invariant() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        let mut patches = fixture(8, 8);
        let mask = MaskSpec::none(8);
        let (tokens_a, pos_a) = embed_patches(&params, &patches, &mask).unwrap();
        for p in patches.local_coords.iter_mut() {
            p.reverse();
        }
        let (tokens_b, pos_b) = embed_patches(&params, &patches, &mask).unwrap();
        assert_eq!(tokens_a, tokens_b);
        assert_eq!(pos_a, pos_b);
    }

    #[test]
    fn tokens_are_translation_invariant_but_positions_move() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        let patches = fixture(8, 8);
        let mask = MaskSpec::none(8);
        let (tokens_a, pos_a) = embed_patches(&params, &patches, &mask).unwrap();
        let mut shifted = patches.clone();
        for c in shifted.centers.iter_mut() {
            *c += Vec3::new(5.0, -2.0, 1.0);
        }
        let (tokens_b, pos_b) = embed_patches(&params, &shifted, &mask).unwrap();
        assert_eq!(tokens_a, tokens_b);
        assert_ne!(pos_a, pos_b);
    }

    #[test]
    fn patch_loss_zero_iff_equal() {
        let patches = fixture(8, 8);
        let gt: Vec<Vec<Vec3>> = patches.local_coords.clone();
        assert_eq!(patch_loss(&gt, &gt).unwrap(), 0.0);
        let mut off = gt.clone();
        off[0][0] += Vec3::new(0.05, 0.0, 0.0);
        assert!(patch_loss(&off, &gt).unwrap() > 0.0);
    }

    #[test]
    fn patch_loss_matches_collapsed_prediction_oracle() {
        // A single patch predicted as the centroid of the target.
        let target = vec![vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ]];
        let centroid = Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0);
        let pred = vec![vec![centroid; 3]];
        let loss = patch_loss(&pred, &target).unwrap();
        let expect = crate::geom::chamfer_l2(&pred[0], &target[0]).unwrap();
        assert!((loss - expect).abs() < 1e-15);
    }

    #[test]
    fn doubling_offsets_increases_loss() {
        let target = vec![vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.2, 0.0)]];
        let pred1 = vec![vec![Vec3::new(0.15, 0.0, 0.0), Vec3::new(0.0, 0.3, 0.0)]];
        let pred2 = vec![vec![Vec3::new(0.2, 0.0, 0.0), Vec3::new(0.0, 0.4, 0.0)]];
        let l1 = patch_loss(&pred1, &target).unwrap();
        let l2 = patch_loss(&pred2, &target).unwrap();
        assert!(l2 > l1);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        let patches = fixture(8, 8);
        let mask = random_mask(8, 0.4, 1).unwrap();
        let a = forward(&params, &patches, &mask).unwrap();
        let b = forward(&params, &patches, &mask).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn permuting_patch_order_permutes_outputs() {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 3).unwrap();
        let patches = fixture(8, 8);
        let mask = MaskSpec::none(8);
        let out = forward(&params, &patches, &mask).unwrap();
        // Reverse the patch order wholesale.
        let perm: Vec<usize> = (0..8).rev().collect();
        let permuted = PatchSet {
            centers: perm.iter().map(|&i| patches.centers[i]).collect(),
            neighbor_idx: perm.iter().map(|&i| patches.neighbor_idx[i].clone()).collect(),
            local_coords: perm.iter().map(|&i| patches.local_coords[i].clone()).collect(),
            k: patches.k,
        };
        let out_p = forward(&params, &permuted, &mask).unwrap();
        let d = cfg.d;
        for (new_i, &old_i) in perm.iter().enumerate() {
            for c in 0..d {
                let a = out.features[0][old_i * d + c];
                let b = out_p.features[0][new_i * d + c];
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
