use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rffsb_nn::layers::{BatchNorm1d, Conv1d, Ctx, Dense};
use rffsb_nn::ops::{self, conv_out_len};
use rffsb_nn::{checkpoint, Graph, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::BnUpdates;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub input_len: usize,
    pub n_classes: usize,
    /// Channel width of each residual stage; stages after the first halve the length.
    pub widths: Vec<usize>,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub batch_norm: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            in_channels: 1,
            input_len: 512,
            n_classes: 10,
            widths: vec![16, 32, 64],
            stem_kernel: 7,
            stem_stride: 1,
            batch_norm: true,
        }
    }
}

impl ClassifierConfig {
    /// Variant that reads `[2, N]` raw I/Q through a strided stem.
    pub fn raw_iq(input_len: usize, n_classes: usize) -> Self {
        ClassifierConfig {
            in_channels: 2,
            input_len,
            n_classes,
            stem_kernel: 17,
            stem_stride: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(CoreError::config("classifier.widths must be non-empty and positive"));
        }
        if self.n_classes == 0 || self.in_channels == 0 {
            return Err(CoreError::config("classifier needs at least one class and channel"));
        }
        if self.stem_kernel.is_multiple_of(2) {
            return Err(CoreError::config("classifier.stem_kernel must be odd"));
        }
        let mut len = conv_out_len(self.input_len, self.stem_kernel, self.stem_stride, self.stem_kernel / 2);
        for _ in 1..self.widths.len() {
            len = len.and_then(|l| conv_out_len(l, 3, 2, 1));
        }
        if len.is_none() {
            return Err(CoreError::config("classifier input too short for its depth"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv1d,
    bn1: Option<BatchNorm1d>,
    conv2: Conv1d,
    bn2: Option<BatchNorm1d>,
    proj: Option<(Conv1d, Option<BatchNorm1d>)>,
}

/// Residual 1-D CNN over CLPS vectors (or raw I/Q in the ablation).
#[derive(Debug, Clone)]
pub struct Classifier<T: Real = f32> {
    pub config: ClassifierConfig,
    pub store: ParamStore<T>,
    stem: Conv1d,
    stem_bn: Option<BatchNorm1d>,
    blocks: Vec<Block>,
    head: Dense,
}

fn norm<'g, T: Real>(
    bn: &Option<BatchNorm1d>,
    ctx: &Ctx<'g, '_, T>,
    x: Var<'g, T>,
    upd: &mut BnUpdates<T>,
) -> Result<Var<'g, T>> {
    match bn {
        Some(bn) => {
            let (y, stats) = bn.forward(ctx, x)?;
            upd.push(bn, stats);
            Ok(y)
        }
        None => Ok(x),
    }
}

impl<T: Real> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bn = |store: &mut ParamStore<T>, name: &str, c: usize| {
            config.batch_norm.then(|| BatchNorm1d::new(store, name, c))
        };
        let w0 = config.widths[0];
        let k = config.stem_kernel;
        let stem = Conv1d::new(&mut store, "stem", config.in_channels, w0, k, config.stem_stride, k / 2, &mut rng);
        let stem_bn = bn(&mut store, "stem.bn", w0);
        let mut blocks = Vec::new();
        let mut cin = w0;
        for (b, &w) in config.widths.iter().enumerate() {
            let stride = if b == 0 { 1 } else { 2 };
            let p = format!("block{b}");
            let conv1 = Conv1d::new(&mut store, &format!("{p}.conv1"), cin, w, 3, stride, 1, &mut rng);
            let bn1 = bn(&mut store, &format!("{p}.bn1"), w);
            let conv2 = Conv1d::new(&mut store, &format!("{p}.conv2"), w, w, 3, 1, 1, &mut rng);
            let bn2 = bn(&mut store, &format!("{p}.bn2"), w);
            let proj = (stride != 1 || cin != w).then(|| {
                let c = Conv1d::new(&mut store, &format!("{p}.proj"), cin, w, 1, stride, 0, &mut rng);
                (c, bn(&mut store, &format!("{p}.proj.bn"), w))
            });
            blocks.push(Block {
                conv1,
                bn1,
                conv2,
                bn2,
                proj,
            });
            cin = w;
        }
        let head = Dense::new(&mut store, "head", cin, config.n_classes, &mut rng);
        Ok(Classifier {
            config,
            store,
            stem,
            stem_bn,
            blocks,
            head,
        })
    }

    /// Logits `[B, n_classes]` for input `[B, in_channels, input_len]`.
    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_, T>, x: Var<'g, T>, upd: &mut BnUpdates<T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        let want = [self.config.in_channels, self.config.input_len];
        if s.len() != 3 || s[1..] != want {
            return Err(CoreError::config(format!(
                "classifier expects [batch, {}, {}], got {s:?}",
                want[0], want[1]
            )));
        }
        let mut h = norm(&self.stem_bn, ctx, self.stem.forward(ctx, x)?, upd)?.relu();
        for b in &self.blocks {
            let y = norm(&b.bn1, ctx, b.conv1.forward(ctx, h)?, upd)?.relu();
            let y = norm(&b.bn2, ctx, b.conv2.forward(ctx, y)?, upd)?;
            let skip = match &b.proj {
                Some((c, bn)) => norm(bn, ctx, c.forward(ctx, h)?, upd)?,
                None => h,
            };
            h = y.add(skip)?.relu();
        }
        Ok(self.head.forward(ctx, h.global_avg_pool()?)?)
    }

    /// Inference logits for a batch of flattened inputs.
    pub fn logits(&self, inputs: &[&[T]]) -> Result<Tensor<T>> {
        let per = self.config.in_channels * self.config.input_len;
        let mut data = Vec::with_capacity(inputs.len() * per);
        for x in inputs {
            if x.len() != per {
                return Err(CoreError::Nn(rffsb_nn::NnError::Shape {
                    op: "classify",
                    axis: "features",
                    expected: per,
                    got: x.len(),
                }));
            }
            data.extend_from_slice(x);
        }
        let g = Graph::new();
        let ctx = Ctx::inference(&g, &self.store);
        let x = g.constant(Tensor::new(&[inputs.len(), self.config.in_channels, self.config.input_len], data)?);
        let y = self.forward(&ctx, x, &mut BnUpdates::new())?;
        Ok((*y.value()).clone())
    }

    /// Argmax label and softmax probabilities of each input.
    pub fn classify_batch(&self, inputs: &[&[T]]) -> Result<Vec<(usize, Vec<f64>)>> {
        if inputs.is_empty() {
            return Ok(vec![]);
        }
        let logits = self.logits(inputs)?;
        Ok(ops::softmax(&logits)
            .into_iter()
            .map(|row| {
                let p: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                let label = p
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0;
                (label, p)
            })
            .collect())
    }

    pub fn classify(&self, input: &[T]) -> Result<(usize, Vec<f64>)> {
        Ok(self.classify_batch(&[input])?.remove(0))
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({"arch": "resnet1d_classifier", "config": self.config})
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(checkpoint::to_bytes(&self.store, &self.meta())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, _) = checkpoint::read_manifest(bytes)?;
        let config: ClassifierConfig = serde_json::from_value(manifest.meta["config"].clone())
            .map_err(|e| CoreError::Dataset(format!("classifier checkpoint config: {e}")))?;
        let mut model = Classifier::new(config, 0)?;
        checkpoint::load_into(&mut model.store, bytes)?;
        Ok(model)
    }

    /// Same architecture and weights in another precision.
    pub fn cast<U: Real>(&self) -> Classifier<U> {
        Classifier {
            config: self.config.clone(),
            store: self.store.cast(),
            stem: self.stem.clone(),
            stem_bn: self.stem_bn.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }
}
