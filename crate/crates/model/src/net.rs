//! Network definition.

use ldct_nn::layers::{
    Conv1dLayer, Linear, MlpStack, MultiHeadAttention, ResidualStack2d, UNet,
};
use ldct_nn::params::{ParamStore, Session};
use ldct_nn::tape::Var;
use ldct_nn::tensor::Scalar;

use crate::config::ModelConfig;
use crate::error::Result;

const POS_EMBED: &str = "encoder.pos";

/// Layer handles; parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct DenoiseModel {
    pub config: ModelConfig,
    head: MlpStack,
    enc_qkv: Vec<Linear>,
    enc_attn: Vec<MultiHeadAttention>,
    enc_mlp: Vec<MlpStack>,
    tail: MlpStack,
    tail_refine: ResidualStack2d,
    noise_embed: Vec<Conv1dLayer>,
    view_to_image: Linear,
    recon_refine: ResidualStack2d,
    unet: UNet,
}

/// All intermediate products of one forward pass.
pub struct ForwardPass {
    /// Denoised sinogram, shape (P, D).
    pub s_hat: Var,
    /// Estimated image-domain noise, shape (1, W, W).
    pub i_noise: Var,
    /// Final denoised image, shape (1, W, W).
    pub i_hat: Var,
}

impl DenoiseModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let dp = config.embed_dim;
        let (p, d) = (config.num_views, config.num_detectors);

        let mut head_dims = vec![d];
        head_dims.extend(std::iter::repeat(dp).take(config.head_layers));
        let head = MlpStack::new("head", &head_dims);

        let mut enc_qkv = Vec::new();
        let mut enc_attn = Vec::new();
        let mut enc_mlp = Vec::new();
        for l in 0..config.encoder_layers {
            enc_qkv.push(Linear::new(format!("encoder.{l}.qkv"), dp, dp));
            enc_attn.push(MultiHeadAttention::new(
                format!("encoder.{l}.attn"),
                dp,
                config.attention_heads,
            )?);
            enc_mlp.push(MlpStack::new(
                &format!("encoder.{l}.mlp"),
                &[dp, config.mlp_hidden_dim(), dp],
            ));
        }

        // n blocks back to detector width: D' -> ... -> D' -> D
        let mut tail_dims = vec![dp; config.head_layers];
        tail_dims.push(d);
        let tail = MlpStack::new("tail", &tail_dims);
        let tail_refine =
            ResidualStack2d::new("tail.refine", config.tail_blocks, config.refine_channels);

        let c = config.noise_channels;
        let noise_embed = vec![
            Conv1dLayer::new("recon.embed.0", 1, c, 3),
            Conv1dLayer::new("recon.embed.1", c, c, 3),
        ];
        let w = config.image_size;
        let view_to_image = Linear::new("recon.map", p * c * d, w * w);
        let recon_refine =
            ResidualStack2d::new("recon.refine", config.recon_blocks, config.refine_channels);
        let unet = UNet::new("unet", config.unet_depth, config.unet_channels)?;

        Ok(DenoiseModel {
            config,
            head,
            enc_qkv,
            enc_attn,
            enc_mlp,
            tail,
            tail_refine,
            noise_embed,
            view_to_image,
            recon_refine,
            unet,
        })
    }

    /// Fresh parameter store: uniform `+-sqrt(1/fan_in)` weights, zero
    /// biases, learnable positional embeddings (one per view), and
    /// zero-initialized refinement/output convolutions.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        self.head.init(&mut store, seed)?;
        store.init_uniform(
            POS_EMBED,
            vec![self.config.num_views, self.config.embed_dim],
            self.config.embed_dim,
            seed,
        )?;
        for ((qkv, attn), mlp) in self.enc_qkv.iter().zip(&self.enc_attn).zip(&self.enc_mlp) {
            qkv.init(&mut store, seed)?;
            attn.init(&mut store, seed)?;
            mlp.init(&mut store, seed)?;
        }
        self.tail.init(&mut store, seed)?;
        self.tail_refine.init(&mut store, seed)?;
        for conv in &self.noise_embed {
            conv.init(&mut store, seed)?;
        }
        self.view_to_image.init(&mut store, seed)?;
        self.recon_refine.init(&mut store, seed)?;
        self.unet.init(&mut store, seed)?;
        Ok(store)
    }

    /// Head: each view row embedded `D -> D'` by shared (linear, ReLU)
    /// blocks. Input shape (P, D), output (P, D').
    pub fn st_head<T: Scalar>(&self, s: &Session<T>, s_ld: Var) -> Result<Var> {
        Ok(self.head.forward_relu(s, s_ld)?)
    }

    /// Encoder: add positional embeddings, then per layer
    /// `A = QKV(Z); Z' = MSA(A) + Z; Z = MLP(Z') + Z'`.
    pub fn st_encoder<T: Scalar>(&self, s: &Session<T>, h: Var) -> Result<Var> {
        let pos = s.param(POS_EMBED)?;
        let mut z = s.tape.add(h, pos)?;
        for ((qkv, attn), mlp) in self.enc_qkv.iter().zip(&self.enc_attn).zip(&self.enc_mlp) {
            let src = if self.config.pre_norm {
                s.tape.layer_norm_rows(z, 1e-5)?
            } else {
                z
            };
            let a = qkv.forward(s, src)?;
            let z1 = s.tape.add(attn.forward(s, a)?, z)?;
            let m = mlp.forward_relu(s, z1)?;
            z = s.tape.add(m, z1)?;
        }
        Ok(z)
    }

    /// Tail: skip-add the head features, map back `D' -> D`, then 2D
    /// residual refinement. Output shape (P, D).
    pub fn st_tail<T: Scalar>(&self, s: &Session<T>, z: Var, h: Var) -> Result<Var> {
        let (p, d) = (self.config.num_views, self.config.num_detectors);
        let skip = s.tape.add(z, h)?;
        let s_mid = self.tail.forward_relu(s, skip)?;
        let as_img = s.tape.reshape(s_mid, vec![1, p, d])?;
        let refined = self.tail_refine.forward(s, as_img)?;
        Ok(s.tape.reshape(refined, vec![p, d])?)
    }

    /// Full sinogram branch.
    pub fn denoise_sinogram<T: Scalar>(&self, s: &Session<T>, s_ld: Var) -> Result<Var> {
        let h = self.st_head(s, s_ld)?;
        let z = self.st_encoder(s, h)?;
        self.st_tail(s, z, h)
    }

    /// Transfer the sinogram residual into an image-domain noise estimate:
    /// shared per-view conv1d embedding, flatten, one learned linear map
    /// to W x W, then residual refinement. Output (1, W, W).
    pub fn noise_to_image<T: Scalar>(&self, s: &Session<T>, s_ld: Var, s_hat: Var) -> Result<Var> {
        let cfg = &self.config;
        let (p, d, w, c) = (cfg.num_views, cfg.num_detectors, cfg.image_size, cfg.noise_channels);
        let residual = s.tape.sub(s_ld, s_hat)?;
        let mut e = s.tape.reshape(residual, vec![p, 1, d])?;
        for conv in &self.noise_embed {
            e = s.tape.relu(conv.forward(s, e)?);
        }
        let flat = s.tape.reshape(e, vec![1, p * c * d])?;
        let img = self.view_to_image.forward(s, flat)?;
        let img = s.tape.reshape(img, vec![1, w, w])?;
        Ok(self.recon_refine.forward(s, img)?)
    }

    /// Coarse image (low-dose minus estimated noise) refined by the U-Net.
    pub fn refine_image<T: Scalar>(&self, s: &Session<T>, i_ld: Var, i_noise: Var) -> Result<Var> {
        let coarse = s.tape.sub(i_ld, i_noise)?;
        Ok(self.unet.forward(s, coarse)?)
    }

    /// Full two-domain forward pass. `s_ld`: (P, D); `i_ld`: (1, W, W).
    pub fn forward<T: Scalar>(&self, s: &Session<T>, s_ld: Var, i_ld: Var) -> Result<ForwardPass> {
        let s_hat = self.denoise_sinogram(s, s_ld)?;
        let i_noise = self.noise_to_image(s, s_ld, s_hat)?;
        let i_hat = self.refine_image(s, i_ld, i_noise)?;
        Ok(ForwardPass {
            s_hat,
            i_noise,
            i_hat,
        })
    }
}
