use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rffsb_nn::layers::{Conv1d, ConvTranspose1d, Ctx, Dense};
use rffsb_nn::ops::{self, conv_out_len};
use rffsb_nn::{checkpoint, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub channels: usize,
    pub input_len: usize,
    /// Encoder stage widths; the decoder mirrors them.
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub latent: usize,
    /// Decoder output is added to the input frame.
    pub residual: bool,
    /// Scale applied to the initial weights of the latent heads and the output stage.
    pub head_init_scale: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            channels: 2,
            input_len: 5120,
            widths: vec![16, 32, 64],
            kernel: 5,
            stride: 2,
            latent: 128,
            residual: true,
            head_init_scale: 0.05,
        }
    }
}

impl VaeConfig {
    fn padding(&self) -> usize {
        self.kernel / 2
    }

    /// Encoder length after every stage, input first.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        let mut v = vec![self.input_len];
        for _ in &self.widths {
            let l = *v.last().expect("non-empty");
            let next = conv_out_len(l, self.kernel, self.stride, self.padding())
                .ok_or_else(|| CoreError::config("vae input too short for its depth"))?;
            v.push(next);
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.latent == 0 || self.stride == 0 || self.kernel.is_multiple_of(2) {
            return Err(CoreError::config("vae needs stages, a latent, a stride and an odd kernel"));
        }
        let lens = self.lengths()?;
        for w in lens.windows(2) {
            if w[0] != w[1] * self.stride {
                return Err(CoreError::config(format!(
                    "vae input_len {} is not divisible by stride^{}",
                    self.input_len,
                    self.widths.len()
                )));
            }
        }
        Ok(())
    }
}

/// Convolutional VAE over `[2, N]` baseband frames.
#[derive(Debug, Clone)]
pub struct Vae<T: Real = f32> {
    pub config: VaeConfig,
    pub store: ParamStore<T>,
    encoder: Vec<Conv1d>,
    mu: Dense,
    logvar: Dense,
    expand: Dense,
    decoder: Vec<ConvTranspose1d>,
    bottleneck: (usize, usize),
}

pub struct VaeOutput<'g, T: Real> {
    pub recon: Var<'g, T>,
    pub mu: Var<'g, T>,
    pub logvar: Var<'g, T>,
}

impl<T: Real> Vae<T> {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (k, s, p) = (config.kernel, config.stride, config.padding());
        let mut encoder = Vec::new();
        let mut cin = config.channels;
        for (i, &w) in config.widths.iter().enumerate() {
            encoder.push(Conv1d::new(&mut store, &format!("enc{i}"), cin, w, k, s, p, &mut rng));
            cin = w;
        }
        let lens = config.lengths()?;
        let bottleneck = (cin, *lens.last().expect("non-empty"));
        let flat = bottleneck.0 * bottleneck.1;
        let mu = Dense::new(&mut store, "mu", flat, config.latent, &mut rng);
        let logvar = Dense::new(&mut store, "logvar", flat, config.latent, &mut rng);
        let expand = Dense::new(&mut store, "expand", config.latent, flat, &mut rng);
        let mut decoder = Vec::new();
        let outs: Vec<usize> = config.widths.iter().rev().skip(1).copied().chain([config.channels]).collect();
        for (i, &w) in outs.iter().enumerate() {
            decoder.push(ConvTranspose1d::new(&mut store, &format!("dec{i}"), cin, w, k, s, p, s - 1, &mut rng));
            cin = w;
        }
        // Start near the identity: small latent heads keep the initial KL and
        // the perturbation of the skip frame small.
        let scale = T::of(config.head_init_scale);
        for id in [mu.weight, logvar.weight, decoder.last().expect("non-empty").weight] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= scale);
        }
        Ok(Vae {
            config,
            store,
            encoder,
            mu,
            logvar,
            expand,
            decoder,
            bottleneck,
        })
    }

    fn check_input(&self, x: Var<'_, T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.channels || s[2] != self.config.input_len {
            return Err(CoreError::config(format!(
                "vae expects [batch, {}, {}], got {s:?}",
                self.config.channels, self.config.input_len
            )));
        }
        Ok(())
    }

    /// `(mu, logvar)`, each `[B, latent]`.
    pub fn encode<'g>(&self, ctx: &Ctx<'g, '_, T>, x: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
        self.check_input(x)?;
        let mut h = x;
        for c in &self.encoder {
            h = c.forward(ctx, h)?.relu();
        }
        let h = h.flatten()?;
        Ok((self.mu.forward(ctx, h)?, self.logvar.forward(ctx, h)?))
    }

    /// Reparameterized latents, one per row of `eps`. A single-row posterior
    /// is shared by all rows.
    pub fn sample<'g>(&self, mu: Var<'g, T>, logvar: Var<'g, T>, eps: &Tensor<T>) -> Result<Var<'g, T>> {
        let rows = eps.shape()[0];
        let (mu, logvar) = if mu.shape()[0] == 1 && rows > 1 {
            (ops::concat(&vec![mu; rows], 0)?, ops::concat(&vec![logvar; rows], 0)?)
        } else {
            (mu, logvar)
        };
        Ok(ops::gaussian_sample(mu, logvar, eps)?)
    }

    /// Frames `[B, channels, input_len]` from latents `[B, latent]`. With a
    /// residual model `skip` (one frame or one per row) is added to the output.
    pub fn decode<'g>(&self, ctx: &Ctx<'g, '_, T>, z: Var<'g, T>, skip: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let rows = z.shape()[0];
        let (c, l) = self.bottleneck;
        let mut h = self.expand.forward(ctx, z)?.relu().reshape(&[rows, c, l])?;
        let last = self.decoder.len() - 1;
        for (i, d) in self.decoder.iter().enumerate() {
            h = d.forward(ctx, h)?;
            if i != last {
                h = h.relu();
            }
        }
        match (self.config.residual, skip) {
            (true, Some(x)) => {
                let x = if x.shape()[0] == 1 && rows > 1 {
                    ops::concat(&vec![x; rows], 0)?
                } else {
                    x
                };
                Ok(h.add(x)?)
            }
            (true, None) => Err(CoreError::config("residual vae needs the input frame to decode")),
            (false, _) => Ok(h),
        }
    }

    /// Encode, sample with `eps` (`[rows, latent]`) and decode.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_, T>, x: Var<'g, T>, eps: &Tensor<T>) -> Result<VaeOutput<'g, T>> {
        let (mu, logvar) = self.encode(ctx, x)?;
        let z = self.sample(mu, logvar, eps)?;
        let recon = self.decode(ctx, z, Some(x))?;
        Ok(VaeOutput { recon, mu, logvar })
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({"arch": "conv_vae", "config": self.config})
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(checkpoint::to_bytes(&self.store, &self.meta())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, _) = checkpoint::read_manifest(bytes)?;
        let config: VaeConfig = serde_json::from_value(manifest.meta["config"].clone())
            .map_err(|e| CoreError::Dataset(format!("vae checkpoint config: {e}")))?;
        let mut model = Vae::new(config, 0)?;
        checkpoint::load_into(&mut model.store, bytes)?;
        Ok(model)
    }

    pub fn cast<U: Real>(&self) -> Vae<U> {
        Vae {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            mu: self.mu.clone(),
            logvar: self.logvar.clone(),
            expand: self.expand.clone(),
            decoder: self.decoder.clone(),
            bottleneck: self.bottleneck,
        }
    }

    pub fn logvar_layer(&self) -> &Dense {
        &self.logvar
    }

    pub fn encoder_layers(&self) -> &[Conv1d] {
        &self.encoder
    }
}
