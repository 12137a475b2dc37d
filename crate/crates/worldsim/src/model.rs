//! Semantic conditioner, VAE codec and conditional denoiser.

use imagecore::Image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{sinusoidal, DiffusionSchedule};
use crate::error::{Result, SimError};
use crate::params::ParamStore;
use crate::tape::{Graph, NodeId, Tensor};
use crate::tokenizer::{tokenize, Prompt, Segment, Vocab};

/// Spatial downsampling of the VAE (two stride-2 convolutions).
pub const VAE_STRIDE: usize = 4;
/// Total image-to-bottleneck downsampling; image sides must be multiples of it.
pub const IMAGE_MULTIPLE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_channels: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub patch: usize,
    /// Distinct learned segment embeddings for images in one prompt.
    pub max_images: usize,
    pub latent_channels: usize,
    pub vae_widths: [usize; 2],
    pub unet_widths: [usize; 2],
    pub groups: usize,
    pub time_dim: usize,
    pub kl_weight: f64,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub vocab: Vocab,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_channels: 3,
            d_model: 64,
            heads: 4,
            blocks: 2,
            mlp_hidden: 128,
            patch: 4,
            max_images: 4,
            latent_channels: 4,
            vae_widths: [16, 32],
            unet_widths: [32, 64],
            groups: 8,
            time_dim: 64,
            kl_weight: 1e-3,
            diffusion_steps: crate::diffusion::DEFAULT_T,
            beta_start: crate::diffusion::BETA_START,
            beta_end: crate::diffusion::BETA_END,
            vocab: Vocab::from_templates(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.image_channels != 3 {
            return bad("images are modelled as RGB (image_channels = 3)");
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.unet_widths[1] % self.heads != 0 {
            return bad("bottleneck width must be a multiple of heads");
        }
        if self.groups == 0 || self.unet_widths.iter().any(|w| w % self.groups != 0) {
            return bad("U-Net widths must be multiples of groups");
        }
        if self.patch == 0 || self.latent_channels == 0 || self.time_dim % 2 != 0 {
            return bad("patch, latent_channels must be positive and time_dim even");
        }
        if !(self.kl_weight >= 0.0) {
            return bad("kl_weight must be >= 0");
        }
        if self.vocab.is_empty() {
            return bad("empty vocabulary");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

/// The latent state: semantic sequence `[L, d_model]` and structural grid `[z, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub semantic: Tensor,
    pub structural: Tensor,
}

/// One position of the conditioning sequence, for inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqItem {
    Token(usize),
    Patch { image: usize, index: usize },
}

/// CHW tensor of an image, promoted to RGB.
pub fn image_tensor(img: &Image) -> Tensor {
    let rgb = img.to_rgb();
    let (w, h) = rgb.dims();
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in rgb.data().chunks(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px[c] as f64;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Image from a CHW tensor, clamped to [0,1].
pub fn tensor_image(t: &Tensor) -> Image {
    let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
    let mut data = vec![0.0f32; c * w * h];
    for ci in 0..c {
        for i in 0..w * h {
            data[i * c + ci] = t.data[ci * w * h + i] as f32;
        }
    }
    Image::from_vec_clamped(w, h, c, data)
}

fn patches(img: &Tensor, p: usize) -> Tensor {
    let (c, h, w) = (img.shape[0], img.shape[1], img.shape[2]);
    let (ph, pw) = (h / p, w / p);
    let dim = c * p * p;
    let mut data = Vec::with_capacity(ph * pw * dim);
    for py in 0..ph {
        for px in 0..pw {
            for ci in 0..c {
                for y in 0..p {
                    for x in 0..p {
                        data.push(img.data[(ci * h + py * p + y) * w + px * p + x]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![ph * pw, dim], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Model { config, params })
    }

    fn check_image(&self, img: &Image, multiple: usize) -> Result<()> {
        let (w, h) = img.dims();
        if w == 0 || h == 0 || w % multiple != 0 || h % multiple != 0 {
            return Err(SimError::Shape(format!("{w}x{h} image: sides must be positive multiples of {multiple}")));
        }
        Ok(())
    }

    /// The conditioning sequence in order: text tokens and image patches.
    pub fn assemble_sequence(&self, prompt: &Prompt, images: &[Image]) -> Result<Vec<SeqItem>> {
        prompt.validate(images.len())?;
        let mut items = Vec::new();
        for seg in &prompt.segments {
            match seg {
                Segment::Text(t) => {
                    items.extend(tokenize(t, &self.config.vocab)?.into_iter().map(SeqItem::Token));
                }
                Segment::Image(i) => {
                    self.check_image(&images[*i], self.config.patch)?;
                    let (w, h) = images[*i].dims();
                    let n = (w / self.config.patch) * (h / self.config.patch);
                    items.extend((0..n).map(|index| SeqItem::Patch { image: *i, index }));
                }
            }
        }
        Ok(items)
    }

    /// c_sem: embedded tokens and patches, positions, then pre-norm transformer blocks.
    pub fn encode_semantic_graph(&self, g: &mut Graph, prompt: &Prompt, images: &[Image]) -> Result<NodeId> {
        prompt.validate(images.len())?;
        let p = &self.params;
        let cfg = &self.config;
        let d = cfg.d_model;
        let mut parts = Vec::new();
        let mut image_slot = 0;
        for seg in &prompt.segments {
            let (emb, slot) = match seg {
                Segment::Text(t) => {
                    let ids = tokenize(t, &cfg.vocab)?;
                    let table = g.param(p, "sem.tok_emb");
                    (g.gather(table, &ids), 0)
                }
                Segment::Image(i) => {
                    self.check_image(&images[*i], cfg.patch)?;
                    let x = g.constant(patches(&image_tensor(&images[*i]), cfg.patch));
                    let (w, b) = (g.param(p, "sem.patch.w"), g.param(p, "sem.patch.b"));
                    image_slot += 1;
                    (g.linear(x, w, Some(b)), image_slot.min(cfg.max_images))
                }
            };
            let n = g.shape(emb)[0];
            let table = g.param(p, "sem.seg_emb");
            let seg_rows = g.gather(table, &vec![slot; n]);
            parts.push(g.add(emb, seg_rows));
        }
        let x = g.concat(&parts);
        let l = g.shape(x)[0];
        let mut pos = Vec::with_capacity(l * d);
        for i in 0..l {
            pos.extend(sinusoidal(i as f64, d));
        }
        let pos = g.constant(Tensor::new(vec![l, d], pos));
        let mut x = g.add(x, pos);
        for b in 0..cfg.blocks {
            let pre = format!("sem.block{b}");
            let h = self.layer_norm(g, x, &format!("{pre}.ln1"));
            let a = self.mha(g, h, h, &format!("{pre}.attn"));
            x = g.add(x, a);
            let h = self.layer_norm(g, x, &format!("{pre}.ln2"));
            let h = self.lin(g, h, &format!("{pre}.mlp1"));
            let h = g.silu(h);
            let h = self.lin(g, h, &format!("{pre}.mlp2"));
            x = g.add(x, h);
        }
        Ok(self.layer_norm(g, x, "sem.ln_f"))
    }

    fn lin(&self, g: &mut Graph, x: NodeId, name: &str) -> NodeId {
        let w = g.param(&self.params, &format!("{name}.w"));
        let b = g.param(&self.params, &format!("{name}.b"));
        g.linear(x, w, Some(b))
    }

    fn layer_norm(&self, g: &mut Graph, x: NodeId, name: &str) -> NodeId {
        let gm = g.param(&self.params, &format!("{name}.g"));
        let bt = g.param(&self.params, &format!("{name}.b"));
        g.layer_norm(x, gm, bt)
    }

    fn group_norm(&self, g: &mut Graph, x: NodeId, name: &str) -> NodeId {
        let gm = g.param(&self.params, &format!("{name}.g"));
        let bt = g.param(&self.params, &format!("{name}.b"));
        g.group_norm(x, gm, bt, self.config.groups)
    }

    fn conv(&self, g: &mut Graph, x: NodeId, name: &str, stride: usize) -> NodeId {
        let w = g.param(&self.params, &format!("{name}.w"));
        let b = g.param(&self.params, &format!("{name}.b"));
        let k = self.params.get(&format!("{name}.w")).expect("conv weight").shape[2];
        g.conv2d(x, w, b, stride, k / 2)
    }

    /// Multi-head attention from `xq` to `xkv`, with output projection.
    fn mha(&self, g: &mut Graph, xq: NodeId, xkv: NodeId, name: &str) -> NodeId {
        let q = self.lin(g, xq, &format!("{name}.q"));
        let k = self.lin(g, xkv, &format!("{name}.k"));
        let v = self.lin(g, xkv, &format!("{name}.v"));
        let a = g.attention(q, k, v, self.config.heads);
        self.lin(g, a, &format!("{name}.o"))
    }

    /// Returns `(mu, logvar)`, each `[z, H/4, W/4]`.
    pub fn vae_encode_graph(&self, g: &mut Graph, x: NodeId) -> (NodeId, NodeId) {
        let mut h = self.conv(g, x, "vae.enc1", 2);
        h = g.silu(h);
        h = self.conv(g, h, "vae.enc2", 2);
        h = g.silu(h);
        h = self.conv(g, h, "vae.enc3", 1);
        h = g.silu(h);
        let out = self.conv(g, h, "vae.enc_out", 1);
        let z = self.config.latent_channels;
        (g.slice(out, 0, z), g.slice(out, z, z))
    }

    pub fn vae_decode_graph(&self, g: &mut Graph, z: NodeId) -> NodeId {
        let mut h = self.conv(g, z, "vae.dec1", 1);
        h = g.silu(h);
        h = self.conv(g, h, "vae.dec2", 1);
        h = g.silu(h);
        h = g.upsample2(h);
        h = self.conv(g, h, "vae.dec3", 1);
        h = g.silu(h);
        h = g.upsample2(h);
        h = self.conv(g, h, "vae.dec4", 1);
        h = g.silu(h);
        let o = self.conv(g, h, "vae.dec_out", 1);
        g.sigmoid(o)
    }

    /// `z = mu + exp(logvar / 2) * xi`.
    pub fn reparameterize(&self, g: &mut Graph, mu: NodeId, logvar: NodeId, xi: Tensor) -> NodeId {
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let xi = g.constant(xi);
        let noise = g.mul(sigma, xi);
        g.add(mu, noise)
    }

    /// Mean over latent cells of `KL(N(mu, sigma) || N(0, 1))`.
    pub fn kl_graph(&self, g: &mut Graph, mu: NodeId, logvar: NodeId) -> NodeId {
        let mu2 = g.mul(mu, mu);
        let var = g.exp(logvar);
        let s = g.add(mu2, var);
        let s = g.sub(s, logvar);
        let m = g.mean(s);
        let one = g.constant(Tensor::scalar(1.0));
        let m = g.sub(m, one);
        g.scale(m, 0.5)
    }

    fn res_block(&self, g: &mut Graph, x: NodeId, temb: NodeId, name: &str) -> NodeId {
        let h = self.group_norm(g, x, &format!("{name}.gn1"));
        let h = g.silu(h);
        let h = self.conv(g, h, &format!("{name}.conv1"), 1);
        let t = g.silu(temb);
        let t = self.lin(g, t, &format!("{name}.temb"));
        let h = g.add_channel(h, t);
        let h = self.group_norm(g, h, &format!("{name}.gn2"));
        let h = g.silu(h);
        let h = self.conv(g, h, &format!("{name}.conv2"), 1);
        g.add(x, h)
    }

    fn time_embedding(&self, g: &mut Graph, t: usize) -> NodeId {
        let e = g.constant(Tensor::new(vec![1, self.config.time_dim], sinusoidal(t as f64, self.config.time_dim)));
        let h = self.lin(g, e, "den.time1");
        let h = g.silu(h);
        self.lin(g, h, "den.time2")
    }

    /// Predicted noise for `z_t`; `z_struc` is channel-concatenated and `c_sem`
    /// enters through cross-attention at the bottleneck.
    pub fn denoiser_graph(&self, g: &mut Graph, z_t: NodeId, t: usize, c_sem: NodeId, z_struc: NodeId) -> Result<NodeId> {
        let zs = g.shape(z_t).to_vec();
        if zs.len() != 3 || zs[0] != self.config.latent_channels {
            return Err(SimError::Shape(format!("latent {zs:?} needs {} channels", self.config.latent_channels)));
        }
        if g.shape(z_struc) != zs.as_slice() {
            return Err(SimError::Shape(format!("z_struc {:?} vs z_t {zs:?}", g.shape(z_struc))));
        }
        if zs[1] % 2 != 0 || zs[2] % 2 != 0 || zs[1] == 0 || zs[2] == 0 {
            return Err(SimError::Shape(format!("latent grid {}x{} must have even sides", zs[2], zs[1])));
        }
        if !(1..=self.config.diffusion_steps).contains(&t) {
            return Err(SimError::Input(format!("timestep {t} outside 1..={}", self.config.diffusion_steps)));
        }
        let cs = g.shape(c_sem);
        if cs.len() != 2 || cs[1] != self.config.d_model {
            return Err(SimError::Shape(format!("c_sem {cs:?} must be [L, {}]", self.config.d_model)));
        }
        let w1 = self.config.unet_widths[1];
        let temb = self.time_embedding(g, t);
        let x = g.concat(&[z_t, z_struc]);
        let h0 = self.conv(g, x, "den.in", 1);
        let h1 = self.res_block(g, h0, temb, "den.r1");
        let d = self.conv(g, h1, "den.down", 2);
        let mut m = self.res_block(g, d, temb, "den.r2");
        let (bh, bw) = (zs[1] / 2, zs[2] / 2);
        let tokens = g.transpose(m);
        let n = self.layer_norm(g, tokens, "den.xattn.ln");
        let a = self.mha(g, n, c_sem, "den.xattn");
        let tokens = g.add(tokens, a);
        let back = g.transpose(tokens);
        m = g.reshape(back, vec![w1, bh, bw]);
        m = self.res_block(g, m, temb, "den.r3");
        let u = g.upsample2(m);
        let u = self.conv(g, u, "den.up", 1);
        let cat = g.concat(&[u, h1]);
        let h = self.conv(g, cat, "den.merge", 1);
        let h = self.res_block(g, h, temb, "den.r4");
        let h = self.group_norm(g, h, "den.out_gn");
        let h = g.silu(h);
        let out = self.conv(g, h, "den.out", 1);
        debug_assert_eq!(g.shape(out)[0], self.config.latent_channels);
        Ok(out)
    }

    pub fn semantic(&self, prompt: &Prompt, images: &[Image]) -> Result<Tensor> {
        let mut g = Graph::inference();
        let c = self.encode_semantic_graph(&mut g, prompt, images)?;
        Ok(g.value(c).clone())
    }

    /// `(z, mu, sigma)`; without a seed `z = mu`.
    pub fn vae_encode(&self, img: &Image, seed: Option<u64>) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_image(img, VAE_STRIDE)?;
        let mut g = Graph::inference();
        let x = g.constant(image_tensor(img));
        let (mu, lv) = self.vae_encode_graph(&mut g, x);
        let mu_t = g.value(mu).clone();
        let sigma = Tensor::new(mu_t.shape.clone(), g.value(lv).data.iter().map(|l| (0.5 * l).exp()).collect());
        let z = match seed {
            None => mu_t.clone(),
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let data = mu_t
                    .data
                    .iter()
                    .zip(&sigma.data)
                    .map(|(m, sd)| m + sd * { let n: f64 = StandardNormal.sample(&mut rng); n })
                    .collect::<Vec<f64>>();
                Tensor::new(mu_t.shape.clone(), data)
            }
        };
        Ok((z, mu_t, sigma))
    }

    pub fn vae_decode(&self, z: &Tensor) -> Result<Image> {
        if z.shape.len() != 3 || z.shape[0] != self.config.latent_channels {
            return Err(SimError::Shape(format!("latent {:?} needs {} channels", z.shape, self.config.latent_channels)));
        }
        let mut g = Graph::inference();
        let zn = g.constant(z.clone());
        let out = self.vae_decode_graph(&mut g, zn);
        Ok(tensor_image(g.value(out)))
    }

    pub fn denoise_predict(&self, z_t: &Tensor, t: usize, c_sem: &Tensor, z_struc: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let (a, b, c) = (g.constant(z_t.clone()), g.constant(c_sem.clone()), g.constant(z_struc.clone()));
        let out = self.denoiser_graph(&mut g, a, t, b, c)?;
        Ok(g.value(out).clone())
    }

    pub fn latent_state(&self, prompt: &Prompt, images: &[Image]) -> Result<LatentState> {
        prompt.validate(images.len())?;
        let structural_img = &images[prompt.structural];
        self.check_image(structural_img, IMAGE_MULTIPLE)?;
        let semantic = self.semantic(prompt, images)?;
        let (structural, _, _) = self.vae_encode(structural_img, None)?;
        Ok(LatentState { semantic, structural })
    }

    /// Ancestral sampling over `steps` respaced timesteps, then decoding.
    pub fn sample(&self, prompt: &Prompt, images: &[Image], steps: usize, seed: u64) -> Result<Image> {
        let schedule = self.config.schedule()?;
        self.sample_with(prompt, images, &schedule, steps, seed)
    }

    pub fn sample_with(
        &self,
        prompt: &Prompt,
        images: &[Image],
        schedule: &DiffusionSchedule,
        steps: usize,
        seed: u64,
    ) -> Result<Image> {
        let state = self.latent_state(prompt, images)?;
        let chain = schedule.respaced(steps)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = state.structural.shape.clone();
        let n: usize = shape.iter().product();
        let mut normal = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let mut z = normal();
        for st in chain {
            let eps = self.denoise_predict(&Tensor::new(shape.clone(), z.clone()), st.t, &state.semantic, &state.structural)?;
            let sigma = st.sigma2().sqrt();
            let xi = normal();
            z = z
                .iter()
                .zip(&eps.data)
                .zip(&xi)
                .map(|((zv, e), x)| st.mean(*zv, *e) + sigma * x)
                .collect();
        }
        self.vae_decode(&Tensor::new(shape, z))
    }
}

fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let d = cfg.d_model;
    let conv = |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, o: usize, c: usize, k: usize, gain: f64| {
        p.init_normal(&format!("{name}.w"), vec![o, c, k, k], c * k * k, gain, rng);
        p.init_const(&format!("{name}.b"), vec![o], 0.0);
    };
    let lin = |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize, gain: f64| {
        p.init_normal(&format!("{name}.w"), vec![i, o], i, gain, rng);
        p.init_const(&format!("{name}.b"), vec![o], 0.0);
    };
    let norm = |p: &mut ParamStore, name: &str, c: usize| {
        p.init_const(&format!("{name}.g"), vec![c], 1.0);
        p.init_const(&format!("{name}.b"), vec![c], 0.0);
    };
    const SILU_GAIN: f64 = 1.6;

    p.init_normal("sem.tok_emb", vec![cfg.vocab.len(), d], 1, 0.5, &mut rng);
    lin(&mut p, &mut rng, "sem.patch", cfg.image_channels * cfg.patch * cfg.patch, d, 1.0);
    p.init_normal("sem.seg_emb", vec![cfg.max_images + 1, d], 1, 0.5, &mut rng);
    for b in 0..cfg.blocks {
        let pre = format!("sem.block{b}");
        norm(&mut p, &format!("{pre}.ln1"), d);
        for part in ["q", "k", "v", "o"] {
            lin(&mut p, &mut rng, &format!("{pre}.attn.{part}"), d, d, 1.0);
        }
        norm(&mut p, &format!("{pre}.ln2"), d);
        lin(&mut p, &mut rng, &format!("{pre}.mlp1"), d, cfg.mlp_hidden, SILU_GAIN);
        lin(&mut p, &mut rng, &format!("{pre}.mlp2"), cfg.mlp_hidden, d, 0.5);
    }
    norm(&mut p, "sem.ln_f", d);

    let [v0, v1] = cfg.vae_widths;
    let z = cfg.latent_channels;
    let c = cfg.image_channels;
    conv(&mut p, &mut rng, "vae.enc1", v0, c, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.enc2", v1, v0, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.enc3", v1, v1, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.enc_out", 2 * z, v1, 1, 1.0);
    conv(&mut p, &mut rng, "vae.dec1", v1, z, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.dec2", v1, v1, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.dec3", v0, v1, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.dec4", v0, v0, 3, SILU_GAIN);
    conv(&mut p, &mut rng, "vae.dec_out", c, v0, 3, 1.0);

    let [u0, u1] = cfg.unet_widths;
    let td = cfg.time_dim;
    lin(&mut p, &mut rng, "den.time1", td, td, SILU_GAIN);
    lin(&mut p, &mut rng, "den.time2", td, td, 1.0);
    conv(&mut p, &mut rng, "den.in", u0, 2 * z, 3, 1.0);
    let res = |p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, ch: usize| {
        norm(p, &format!("{name}.gn1"), ch);
        conv(p, rng, &format!("{name}.conv1"), ch, ch, 3, SILU_GAIN);
        lin(p, rng, &format!("{name}.temb"), td, ch, 1.0);
        norm(p, &format!("{name}.gn2"), ch);
        conv(p, rng, &format!("{name}.conv2"), ch, ch, 3, 0.5);
    };
    res(&mut p, &mut rng, "den.r1", u0);
    conv(&mut p, &mut rng, "den.down", u1, u0, 3, 1.0);
    res(&mut p, &mut rng, "den.r2", u1);
    norm(&mut p, "den.xattn.ln", u1);
    lin(&mut p, &mut rng, "den.xattn.q", u1, u1, 1.0);
    lin(&mut p, &mut rng, "den.xattn.k", d, u1, 1.0);
    lin(&mut p, &mut rng, "den.xattn.v", d, u1, 1.0);
    lin(&mut p, &mut rng, "den.xattn.o", u1, u1, 1.0);
    res(&mut p, &mut rng, "den.r3", u1);
    conv(&mut p, &mut rng, "den.up", u0, u1, 3, 1.0);
    conv(&mut p, &mut rng, "den.merge", u0, 2 * u0, 3, 1.0);
    res(&mut p, &mut rng, "den.r4", u0);
    norm(&mut p, "den.out_gn", u0);
    conv(&mut p, &mut rng, "den.out", z, u0, 3, 0.5);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::new(ModelConfig::default(), 3).unwrap()
    }

    fn noise_image(w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * w * 3).map(|_| rand::Rng::gen::<f32>(&mut rng)).collect();
        Image::from_vec(w, w, 3, data).unwrap()
    }

    fn l2(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn latent_grid_and_decode_shape() {
        let m = model();
        let img = noise_image(32, 1);
        let (z, mu, _) = m.vae_encode(&img, None).unwrap();
        assert_eq!(z.shape, vec![4, 8, 8]);
        assert_eq!(z, mu);
        assert_eq!(m.vae_encode(&img, Some(5)).unwrap().0, m.vae_encode(&img, Some(5)).unwrap().0);
        let out = m.vae_decode(&z).unwrap();
        assert_eq!(out.dims(), (32, 32));
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(m.vae_encode(&noise_image(30, 1), None).is_err());
    }

    #[test]
    fn kl_of_standard_normal_is_zero() {
        let m = model();
        let mut g = Graph::inference();
        let mu = g.constant(Tensor::zeros(vec![4, 2, 2]));
        let lv = g.constant(Tensor::zeros(vec![4, 2, 2]));
        let kl = m.kl_graph(&mut g, mu, lv);
        assert_eq!(g.value(kl).data[0], 0.0);
    }

    #[test]
    fn denoiser_is_sensitive_to_both_conditions() {
        let m = model();
        let img = noise_image(32, 2);
        let state = m.latent_state(&Prompt::new("segment the optic disc", 1), &[img]).unwrap();
        let z_t = m.vae_encode(&noise_image(32, 9), None).unwrap().0;
        let base = m.denoise_predict(&z_t, 100, &state.semantic, &state.structural).unwrap();
        assert_eq!(base.shape, z_t.shape);
        let mut c = state.semantic.clone();
        c.data[0] += 0.5;
        assert!(l2(&m.denoise_predict(&z_t, 100, &c, &state.structural).unwrap(), &base) > 0.0);
        let mut s = state.structural.clone();
        s.data[5] += 0.5;
        assert!(l2(&m.denoise_predict(&z_t, 100, &state.semantic, &s).unwrap(), &base) > 0.0);
        assert!(m.denoise_predict(&z_t, 0, &state.semantic, &state.structural).is_err());
        let wrong = Tensor::zeros(vec![4, 4, 4]);
        assert!(m.denoise_predict(&wrong, 1, &state.semantic, &state.structural).is_err());
    }

    #[test]
    fn semantic_sequence_contracts() {
        let m = model();
        let (a, b) = (noise_image(16, 3), noise_image(16, 4));
        let p = Prompt::new("enhance the image", 2);
        let c = m.semantic(&p, &[a.clone(), b.clone()]).unwrap();
        let k = m.assemble_sequence(&p, &[a.clone(), b.clone()]).unwrap().len();
        assert_eq!(c.shape, vec![k, m.config.d_model]);
        assert_eq!(c, m.semantic(&p, &[a.clone(), b.clone()]).unwrap());
        assert_ne!(c, m.semantic(&p, &[b.clone(), a.clone()]).unwrap());
        let empty = Prompt { segments: Vec::new(), structural: 0, delta_t: None };
        assert!(m.semantic(&empty, &[a]).is_err());
        assert!(m.sample(&Prompt::new("enhance the image", 0), &[], 2, 0).is_err());
    }

    #[test]
    fn exemplar_sequence_order_and_structural_source() {
        let m = model();
        let imgs = [noise_image(16, 5), noise_image(16, 6), noise_image(16, 7)];
        let p = Prompt::exemplar("segment the optic disc");
        let seq = m.assemble_sequence(&p, &imgs).unwrap();
        let order: Vec<usize> = seq
            .iter()
            .filter_map(|s| match s {
                SeqItem::Patch { image, index: 0 } => Some(*image),
                _ => None,
            })
            .collect();
        assert_eq!(order, vec![0, 1, 2]);
        let patches_per_image = 16 / m.config.patch * (16 / m.config.patch);
        assert_eq!(seq.iter().filter(|s| matches!(s, SeqItem::Patch { .. })).count(), 3 * patches_per_image);
        let state = m.latent_state(&p, &imgs).unwrap();
        assert_eq!(state.structural, m.vae_encode(&imgs[2], None).unwrap().0);
        let other = [noise_image(16, 8), noise_image(16, 9), imgs[2].clone()];
        assert_eq!(m.latent_state(&p, &other).unwrap().structural, state.structural);
    }

    #[test]
    fn sampling_is_deterministic_and_zero_steps_decodes_noise() {
        let m = model();
        let img = noise_image(16, 10);
        let p = Prompt::new("enhance the image", 1);
        let a = m.sample(&p, &[img.clone()], 3, 42).unwrap();
        assert_eq!(a, m.sample(&p, &[img.clone()], 3, 42).unwrap());
        assert_ne!(a, m.sample(&p, &[img.clone()], 3, 43).unwrap());
        let zero = m.sample(&p, &[img], 0, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise: Vec<f64> = (0..4 * 4 * 4).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(zero, m.vae_decode(&Tensor::new(vec![4, 4, 4], noise)).unwrap());
    }
}
