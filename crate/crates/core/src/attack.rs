//! The collusion-driven attack: legitimate dataset and classifier, then one
//! VAE per target trained against the colluder's differentiable
//! impairment, channel, feature and classifier chain.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rffsb_nn::layers::Ctx;
use rffsb_nn::{ops, Adam, AdamConfig, Graph, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::channel::{builtin_profiles, propagate, realize, ChannelProfile, DEFAULT_PROFILE};
use crate::dataset::{label_of, Dataset, DatasetSpec, Samples};
use crate::error::{CoreError, Result};
use crate::eval::{self, Confusion};
use crate::features::{Extractor, FeatureKind};
use crate::models::{total_loss, BnUpdates, Classifier, ClassifierConfig, LossWeights, Vae, VaeConfig};
use crate::seed::{derive_seed, pair_index, rng_for, Stream};
use crate::signal::{apply_impairment, impair_var, make_preamble, sample_device_fleet, DeviceProfile, FrameSpec, IqFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            cosine: true,
        }
    }
}

impl TrainConfig {
    fn lr_at(&self, epoch: usize) -> f64 {
        if self.cosine && self.epochs > 1 {
            self.lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / self.epochs as f64).cos())
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Latent draws (each with its own channel realization) per step.
    pub batch_size: usize,
    pub lr: f64,
    /// Colluder-observed target features the CLPS loss samples from.
    pub template_bank: usize,
    /// Held-out colluder transmissions scored after every epoch.
    pub eval_frames: usize,
    /// Epochs without a better colluder ASR before stopping.
    pub patience: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epochs: 50,
            steps_per_epoch: 20,
            batch_size: 8,
            lr: 1e-4,
            template_bank: 64,
            eval_frames: 100,
            patience: 10,
        }
    }
}

/// Everything that defines one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub master_seed: u64,
    pub fleet_seed: u64,
    pub n_legit: usize,
    /// Channel of the training data and of the colluder path.
    pub train_profile: String,
    /// Channel of the receiver path during evaluation.
    pub test_profile: String,
    pub train_frames: usize,
    pub test_frames: usize,
    pub feature: FeatureKind,
    pub feature_len: usize,
    /// Number of targets drawn from the fleet when `targets` is empty.
    pub n_targets: usize,
    pub targets: Vec<u32>,
    /// Spoofed transmissions scored at the receiver per target.
    pub spoof_frames: usize,
    pub frame: FrameSpec,
    pub classifier: ClassifierConfig,
    pub classifier_train: TrainConfig,
    pub vae: VaeConfig,
    pub attack: AttackConfig,
    pub loss: LossWeights,
    pub profiles: BTreeMap<String, ChannelProfile>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            master_seed: 20240501,
            fleet_seed: 7,
            n_legit: 10,
            train_profile: DEFAULT_PROFILE.into(),
            test_profile: DEFAULT_PROFILE.into(),
            train_frames: 5000,
            test_frames: 500,
            feature: FeatureKind::Clps,
            feature_len: 512,
            n_targets: 3,
            targets: vec![],
            spoof_frames: 500,
            frame: FrameSpec::default(),
            classifier: ClassifierConfig::default(),
            classifier_train: TrainConfig::default(),
            vae: VaeConfig::default(),
            attack: AttackConfig::default(),
            loss: LossWeights::default(),
            profiles: builtin_profiles(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if self.n_legit == 0 {
            return Err(CoreError::config("n_legit must be >= 1"));
        }
        if self.train_frames == 0 {
            return Err(CoreError::config("train_frames must be >= 1"));
        }
        for (name, p) in &self.profiles {
            p.validate().map_err(|e| CoreError::config(format!("profile `{name}`: {e}")))?;
        }
        self.profile(&self.train_profile)?;
        self.profile(&self.test_profile)?;
        self.loss.validate()?;
        if self.vae.input_len != self.frame.samples_per_frame || self.vae.channels != 2 {
            return Err(CoreError::config(format!(
                "vae must read [2, {}] frames",
                self.frame.samples_per_frame
            )));
        }
        self.vae.validate()?;
        self.classifier_config()?.validate()?;
        for t in &self.targets {
            if *t as usize >= self.n_legit {
                return Err(CoreError::config(format!("target {t} is not a legitimate device")));
            }
        }
        for (what, v) in [
            ("classifier_train.batch_size", self.classifier_train.batch_size),
            ("attack.batch_size", self.attack.batch_size),
            ("attack.template_bank", self.attack.template_bank),
        ] {
            if v == 0 {
                return Err(CoreError::config(format!("{what} must be >= 1")));
            }
        }
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Result<&ChannelProfile> {
        self.profiles.get(name).ok_or_else(|| {
            CoreError::config(format!(
                "unknown channel profile `{name}` (known: {})",
                self.profiles.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn extractor(&self) -> Result<Extractor> {
        Extractor::new(self.feature, self.frame.samples_per_frame, self.feature_len)
    }

    /// Classifier shape for this scenario's features and fleet.
    pub fn classifier_config(&self) -> Result<ClassifierConfig> {
        let (c, l) = self.extractor()?.shape();
        let mut cfg = match self.feature {
            FeatureKind::Clps => self.classifier.clone(),
            FeatureKind::RawIq => ClassifierConfig {
                widths: self.classifier.widths.clone(),
                batch_norm: self.classifier.batch_norm,
                ..ClassifierConfig::raw_iq(l, self.n_legit)
            },
        };
        cfg.in_channels = c;
        cfg.input_len = l;
        cfg.n_classes = self.n_legit;
        Ok(cfg)
    }

    /// Legitimate devices followed by the attacker.
    pub fn fleet(&self) -> Result<Vec<DeviceProfile>> {
        sample_device_fleet(self.n_legit, self.fleet_seed)
    }

    pub fn attacker(&self) -> Result<DeviceProfile> {
        Ok(*self.fleet()?.last().expect("fleet includes the attacker"))
    }

    /// Explicit targets, or `n_targets` distinct devices drawn from the seed.
    pub fn resolved_targets(&self) -> Vec<u32> {
        if !self.targets.is_empty() {
            return self.targets.clone();
        }
        let mut ids: Vec<u32> = (0..self.n_legit as u32).collect();
        ids.shuffle(&mut rng_for(self.master_seed, Stream::Targets, 0));
        let mut t: Vec<u32> = ids.into_iter().take(self.n_targets.min(self.n_legit)).collect();
        t.sort_unstable();
        t
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let mut fleet = self.fleet()?;
        fleet.truncate(self.n_legit);
        Ok(DatasetSpec {
            master_seed: self.master_seed,
            fleet,
            profile: self.profile(&self.train_profile)?.clone(),
            frame: self.frame,
            train_per_device: self.train_frames,
            test_per_device: self.test_frames,
            feature: self.feature,
            feature_len: self.feature_len,
            stream: Stream::LegitToReceiver,
        })
    }
}

pub fn build_dataset(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    crate::dataset::generate(&cfg.dataset_spec()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub struct TrainedClassifier {
    pub model: Classifier,
    pub log: Vec<EpochLog>,
    /// Confusion matrix on the test split (empty when there is none).
    pub confusion: Confusion,
}

fn batch_tensor(samples: &Samples, rows: &[usize], shape: (usize, usize)) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(rows.len() * samples.feature_dim);
    for &r in rows {
        data.extend_from_slice(samples.feature(r));
    }
    Ok(Tensor::new(&[rows.len(), shape.0, shape.1], data)?)
}

pub fn train_classifier(data: &Dataset, ccfg: &ClassifierConfig, tcfg: &TrainConfig, master_seed: u64) -> Result<TrainedClassifier> {
    let n_classes = data.n_classes();
    if ccfg.n_classes != n_classes || ccfg.in_channels * ccfg.input_len != data.train.feature_dim {
        return Err(CoreError::config(format!(
            "classifier [{}x{}, {} classes] does not fit dataset rows of {} with {} classes",
            ccfg.in_channels, ccfg.input_len, ccfg.n_classes, data.train.feature_dim, n_classes
        )));
    }
    let mut model = Classifier::<f32>::new(ccfg.clone(), derive_seed(master_seed, Stream::ClassifierInit, 0))?;
    let mut opt = Adam::new(&model.store, AdamConfig { lr: tcfg.lr, ..Default::default() });
    let shape = (ccfg.in_channels, ccfg.input_len);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..tcfg.epochs {
        let lr = tcfg.lr_at(epoch);
        opt.config.lr = lr;
        order.shuffle(&mut rng_for(master_seed, Stream::ClassifierShuffle, epoch as u64));
        let (mut total, mut hits) = (0.0, 0usize);
        for (bi, rows) in order.chunks(tcfg.batch_size).enumerate() {
            let labels: Vec<usize> = rows.iter().map(|&r| data.train.labels[r] as usize).collect();
            let g = Graph::new();
            let ctx = Ctx::new(&g, &model.store);
            let mut upd = BnUpdates::new();
            let logits = model.forward(&ctx, g.constant(batch_tensor(&data.train, rows, shape)?), &mut upd)?;
            let loss = ops::softmax_cross_entropy(logits, &labels)?;
            let lv = loss.item() as f64;
            if !lv.is_finite() {
                return Err(CoreError::Diverged(format!(
                    "classifier loss is {lv} at epoch {epoch}, batch {bi} (lr {lr:.2e})"
                )));
            }
            total += lv * rows.len() as f64;
            for (row, &l) in ops::softmax(&logits.value()).iter().zip(&labels) {
                if argmax(row) == l {
                    hits += 1;
                }
            }
            let grads = g.backward(loss)?;
            model.store.zero_grad();
            model.store.accumulate(&grads);
            opt.step(&mut model.store)?;
            upd.apply(&mut model.store);
        }
        let n = data.train.len() as f64;
        let test_accuracy = (!data.test.is_empty())
            .then(|| eval::confusion(&model, &data.test, n_classes).map(|c| c.accuracy()))
            .transpose()?;
        let entry = EpochLog {
            epoch,
            lr,
            loss: total / n,
            train_accuracy: hits as f64 / n,
            test_accuracy,
        };
        log::info!(
            "classifier epoch {epoch}: loss {:.4}, train acc {:.3}, test acc {}",
            entry.loss,
            entry.train_accuracy,
            test_accuracy.map_or("-".into(), |a| format!("{a:.3}"))
        );
        log.push(entry);
    }
    let confusion = if data.test.is_empty() {
        Confusion::new(n_classes)
    } else {
        eval::confusion(&model, &data.test, n_classes)?
    };
    Ok(TrainedClassifier { model, log, confusion })
}

pub(crate) fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Mean unweighted `[recon, kl, clps, cls]` terms over the epoch.
    pub terms: [f64; 4],
    pub colluder_asr: f64,
}

/// A trained VAE for one target plus what it was trained against.
#[derive(Clone)]
pub struct AttackOutcome {
    pub target: u32,
    pub vae: Vae,
    /// Colluder-observed target features, one row per template.
    pub templates: Vec<Vec<f32>>,
    /// Colluder ASR of the untrained VAE.
    pub baseline_asr: f64,
    pub best_asr: f64,
    /// 0 means the untrained VAE was never beaten.
    pub best_epoch: usize,
    pub curve: Vec<AttackEpoch>,
    pub warning: Option<String>,
}

/// Index groups inside the per-target streams.
const GROUP_TRAIN: u64 = 0;
const GROUP_EVAL: u64 = 1;

fn group(target: u32, g: u64) -> u64 {
    (target as u64) << 1 | g
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
    Tensor::new(&[rows, cols], data).expect("shape matches")
}

/// Target frames as the colluder observes them, featurized.
pub fn target_templates(cfg: &ScenarioConfig, target: &DeviceProfile, ext: &Extractor) -> Result<Vec<Vec<f32>>> {
    let profile = cfg.profile(&cfg.train_profile)?;
    let tx = apply_impairment(&make_preamble(&cfg.frame)?, target);
    let rows = rffsb_nn::par::map_range(cfg.attack.template_bank, |m| {
        let mut rng = rng_for(cfg.master_seed, Stream::TargetToColluder, pair_index(target.device_id as u64, m as u64));
        let h = realize(profile, &cfg.frame, &mut rng);
        ext.extract(&propagate(&tx, &h, profile, &cfg.frame))
    });
    rows.into_iter()
        .map(|r| r.map(|v| v.into_iter().map(|x| x as f32).collect()))
        .collect()
}

/// Attacker transmissions (after its own hardware) for the given latent draws.
pub fn generate_tx(vae: &Vae, preamble: &IqFrame, attacker: &DeviceProfile, eps: &Tensor<f32>) -> Result<Vec<IqFrame>> {
    let n = vae.config.input_len;
    let g = Graph::new();
    let ctx = Ctx::inference(&g, &vae.store);
    let x = g.constant(preamble.to_tensor::<f32>().reshaped(&[1, 2, n])?);
    let recon = vae.forward(&ctx, x, eps)?.recon.value();
    let rows = eps.shape()[0];
    Ok((0..rows)
        .map(|r| {
            let f = IqFrame::from_rails(&recon.data()[r * 2 * n..(r + 1) * 2 * n]);
            apply_impairment(&f, attacker)
        })
        .collect())
}

/// Latent draws for spoofed transmission `k..k + rows` of a stream seed.
fn spoof_eps(seed: u64, start: usize, rows: usize, latent: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(rows * latent);
    for k in start..start + rows {
        let mut rng = rng_for(seed, Stream::VaeNoise, k as u64);
        data.extend((0..latent).map(|_| rng.sample::<f64, _>(StandardNormal) as f32));
    }
    Tensor::new(&[rows, latent], data).expect("shape matches")
}

/// `n` spoofed transmissions before the channel. Deterministic in `seed`.
pub fn spoof_tx(vae: &Vae, preamble: &IqFrame, attacker: &DeviceProfile, n: usize, seed: u64) -> Result<Vec<IqFrame>> {
    const CHUNK: usize = 16;
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        let rows = CHUNK.min(n - k);
        out.extend(generate_tx(vae, preamble, attacker, &spoof_eps(seed, k, rows, vae.config.latent))?);
        k += rows;
    }
    Ok(out)
}

/// Passes transmissions through independent realizations of `stream` and
/// extracts features. Frame `k` uses realization index `k`.
pub fn receive(
    tx: &[IqFrame],
    profile: &ChannelProfile,
    spec: &FrameSpec,
    seed: u64,
    stream: Stream,
    ext: &Extractor,
) -> Result<Vec<(IqFrame, Vec<f64>)>> {
    rffsb_nn::par::map_range(tx.len(), |k| {
        let mut rng = rng_for(seed, stream, k as u64);
        let h = realize(profile, spec, &mut rng);
        let rx = propagate(&tx[k], &h, profile, spec);
        ext.extract(&rx).map(|f| (rx, f))
    })
    .into_iter()
    .collect()
}

/// Spoofed frames as seen by the legitimate receiver, with their features.
#[allow(clippy::too_many_arguments)]
pub fn spoof(
    vae: &Vae,
    attacker: &DeviceProfile,
    receiver: &ChannelProfile,
    spec: &FrameSpec,
    n_frames: usize,
    seed: u64,
    ext: &Extractor,
) -> Result<Vec<(IqFrame, Vec<f64>)>> {
    let tx = spoof_tx(vae, &make_preamble(spec)?, attacker, n_frames, seed)?;
    receive(&tx, receiver, spec, seed, Stream::AttackerToReceiver, ext)
}

/// Seed of target `t`'s spoofing streams.
pub fn spoof_seed(master: u64, target: u32) -> u64 {
    derive_seed(master, Stream::Targets, 1 + target as u64)
}

struct ColluderEval {
    preamble: IqFrame,
    eps: Tensor<f32>,
    seeds: Vec<u64>,
}

fn colluder_asr(
    vae: &Vae,
    cls: &Classifier,
    cfg: &ScenarioConfig,
    attacker: &DeviceProfile,
    label: usize,
    ev: &ColluderEval,
    ext: &Extractor,
) -> Result<f64> {
    if ev.seeds.is_empty() {
        return Ok(0.0);
    }
    let profile = cfg.profile(&cfg.train_profile)?;
    let mut hits = 0;
    for (c, seeds) in ev.seeds.chunks(16).enumerate() {
        let rows = seeds.len();
        let eps = Tensor::from_slice(
            &[rows, vae.config.latent],
            &ev.eps.data()[c * 16 * vae.config.latent..(c * 16 + rows) * vae.config.latent],
        )?;
        let tx = generate_tx(vae, &ev.preamble, attacker, &eps)?;
        let feats: Vec<Vec<f32>> = rffsb_nn::par::map_range(rows, |k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds[k]);
            let h = realize(profile, &cfg.frame, &mut rng);
            ext.extract(&propagate(&tx[k], &h, profile, &cfg.frame))
                .map(|f| f.into_iter().map(|v| v as f32).collect())
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let refs: Vec<&[f32]> = feats.iter().map(|f| f.as_slice()).collect();
        hits += cls.classify_batch(&refs)?.iter().filter(|(l, _)| *l == label).count();
    }
    Ok(hits as f64 / ev.seeds.len() as f64)
}

/// Trains the VAE that impersonates `target`, keeping the weights with the
/// best held-out colluder ASR.
pub fn train_attack(classifier: &Classifier, cfg: &ScenarioConfig, target: u32) -> Result<AttackOutcome> {
    cfg.validate()?;
    let fleet = cfg.fleet()?;
    let label = label_of(&fleet[..cfg.n_legit], target)
        .ok_or_else(|| CoreError::config(format!("target {target} is not a legitimate device")))?;
    let attacker = *fleet.last().expect("fleet includes the attacker");
    let ext = cfg.extractor()?;
    let (fc, fl) = ext.shape();
    if classifier.config.in_channels != fc || classifier.config.input_len != fl {
        return Err(CoreError::config("classifier input does not match the scenario feature"));
    }
    let profile = cfg.profile(&cfg.train_profile)?.clone();
    let templates = target_templates(cfg, &fleet[label], &ext)?;
    let acfg = &cfg.attack;
    let n = cfg.frame.samples_per_frame;
    let latent = cfg.vae.latent;

    let mut vae = Vae::<f32>::new(cfg.vae.clone(), derive_seed(cfg.master_seed, Stream::VaeInit, target as u64))?;
    let mut opt = Adam::new(&vae.store, AdamConfig { lr: acfg.lr, ..Default::default() });
    let x0 = make_preamble(&cfg.frame)?.to_tensor::<f32>().reshaped(&[1, 2, n])?;
    let x0_rows = |rows: usize| -> Result<Tensor<f32>> {
        let d: Vec<f32> = (0..rows).flat_map(|_| x0.data().iter().copied()).collect();
        Ok(Tensor::new(&[rows, 2, n], d)?)
    };

    let mut eval_rng = rng_for(cfg.master_seed, Stream::VaeNoise, pair_index(group(target, GROUP_EVAL), 0));
    let ev = ColluderEval {
        preamble: make_preamble(&cfg.frame)?,
        eps: normal_tensor(&mut eval_rng, acfg.eval_frames, latent),
        seeds: (0..acfg.eval_frames)
            .map(|k| derive_seed(cfg.master_seed, Stream::AttackerToColluder, pair_index(group(target, GROUP_EVAL), k as u64)))
            .collect(),
    };
    let baseline_asr = colluder_asr(&vae, classifier, cfg, &attacker, label, &ev, &ext)?;
    log::info!("attack on {target}: untrained colluder ASR {baseline_asr:.3}");
    let mut best: (f64, usize, ParamStore<f32>) = (baseline_asr, 0, vae.store.clone());
    let mut curve = Vec::new();
    let mut warning = None;
    let mut since_best = 0;
    let b = acfg.batch_size;
    for epoch in 1..=acfg.epochs {
        let (mut loss_sum, mut terms) = (0.0, [0.0; 4]);
        for s in 0..acfg.steps_per_epoch {
            let step = ((epoch - 1) * acfg.steps_per_epoch + s) as u64;
            let mut rng = rng_for(cfg.master_seed, Stream::VaeNoise, pair_index(group(target, GROUP_TRAIN), step));
            let eps = normal_tensor(&mut rng, b, latent);
            let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..templates.len())).collect();
            let reals: Vec<_> = (0..b)
                .map(|j| {
                    let idx = pair_index(group(target, GROUP_TRAIN), step * b as u64 + j as u64);
                    realize(&profile, &cfg.frame, &mut rng_for(cfg.master_seed, Stream::AttackerToColluder, idx))
                })
                .collect();
            let tmpl: Vec<f32> = picks.iter().flat_map(|&p| templates[p].iter().copied()).collect();

            let g = Graph::new();
            let ctx = Ctx::new(&g, &vae.store);
            let x = g.constant(x0.clone());
            let out = vae.forward(&ctx, x, &eps)?;
            let tx = impair_var(out.recon, &attacker)?;
            let rx = crate::channel::propagate_var(tx, &reals, &profile, &cfg.frame)?;
            let feat = ext.extract_var(rx)?;
            let cctx = Ctx::inference(&g, &classifier.store);
            let logits = classifier.forward(&cctx, feat, &mut BnUpdates::new())?;
            let lt = total_loss(
                out.recon,
                g.constant(x0_rows(b)?),
                out.mu,
                out.logvar,
                feat.reshape(&[b, fc * fl])?,
                g.constant(Tensor::new(&[b, fc * fl], tmpl)?),
                logits,
                &vec![label; b],
                &cfg.loss,
            )?;
            let v = lt.values();
            if !v[4].is_finite() {
                return Err(CoreError::Diverged(format!(
                    "attack loss on target {target} is {} at epoch {epoch}, step {s}",
                    v[4]
                )));
            }
            loss_sum += v[4];
            for k in 0..4 {
                terms[k] += v[k];
            }
            let grads = g.backward(lt.total)?;
            vae.store.zero_grad();
            vae.store.accumulate(&grads);
            opt.step(&mut vae.store)?;
        }
        let steps = acfg.steps_per_epoch.max(1) as f64;
        let asr = colluder_asr(&vae, classifier, cfg, &attacker, label, &ev, &ext)?;
        log::info!(
            "attack on {target}, epoch {epoch}: loss {:.4} (recon {:.4}, kl {:.3}, clps {:.4}, cls {:.4}), colluder ASR {asr:.3}",
            loss_sum / steps,
            terms[0] / steps,
            terms[1] / steps,
            terms[2] / steps,
            terms[3] / steps
        );
        curve.push(AttackEpoch {
            epoch,
            loss: loss_sum / steps,
            terms: terms.map(|t| t / steps),
            colluder_asr: asr,
        });
        if asr > best.0 {
            best = (asr, epoch, vae.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= acfg.patience {
                let msg = format!(
                    "target {target}: no colluder ASR improvement for {} epochs; keeping epoch {} ({:.3})",
                    acfg.patience, best.1, best.0
                );
                log::warn!("{msg}");
                warning = Some(msg);
                break;
            }
        }
        if best.0 >= 1.0 {
            break;
        }
    }
    if best.1 == 0 && warning.is_none() {
        warning = Some(format!("target {target}: training never beat the untrained VAE"));
    }
    vae.store = best.2;
    Ok(AttackOutcome {
        target,
        vae,
        templates,
        baseline_asr,
        best_asr: best.0,
        best_epoch: best.1,
        curve,
        warning,
    })
}

/// Trained classifier and per-target attacks for one training channel.
pub struct AttackArtifacts {
    pub train_profile: String,
    pub classifier: TrainedClassifier,
    pub attacks: BTreeMap<u32, AttackOutcome>,
}

/// Dataset, classifier and every target's VAE for `cfg`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(Dataset, AttackArtifacts)> {
    let data = build_dataset(cfg)?;
    let classifier = train_classifier(&data, &cfg.classifier_config()?, &cfg.classifier_train, cfg.master_seed)?;
    let mut attacks = BTreeMap::new();
    for t in cfg.resolved_targets() {
        attacks.insert(t, train_attack(&classifier.model, cfg, t)?);
    }
    Ok((
        data,
        AttackArtifacts {
            train_profile: cfg.train_profile.clone(),
            classifier,
            attacks,
        },
    ))
}
