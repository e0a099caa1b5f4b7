//! Metrics, sweeps and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{receive, spoof_seed, spoof_tx, AttackArtifacts, AttackOutcome, ScenarioConfig};
use crate::channel::ChannelProfile;
use crate::dataset::Samples;
use crate::error::{CoreError, Result};
use crate::models::Classifier;
use crate::seed::Stream;
use crate::signal::{apply_impairment, make_preamble, IqFrame};

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(n: usize) -> Self {
        Confusion {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        hits as f64 / self.total().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let n = self.counts.len();
        let mut s = String::from("true\\pred");
        for j in 0..n {
            let _ = write!(s, ",{j}");
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{i}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Labels predicted for each feature row, with the same inference path used
/// for legitimate and spoofed traffic.
pub fn predict(classifier: &Classifier, rows: &[&[f32]]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(128) {
        out.extend(classifier.classify_batch(chunk)?.into_iter().map(|(l, _)| l));
    }
    Ok(out)
}

pub fn confusion(classifier: &Classifier, samples: &Samples, n_classes: usize) -> Result<Confusion> {
    let rows: Vec<&[f32]> = (0..samples.len()).map(|r| samples.feature(r)).collect();
    let mut c = Confusion::new(n_classes);
    for (pred, &truth) in predict(classifier, &rows)?.into_iter().zip(&samples.labels) {
        c.counts[truth as usize][pred] += 1;
    }
    Ok(c)
}

/// Fraction of spoofed features classified as the target, with a 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsrCell {
    pub hits: usize,
    pub n: usize,
    pub asr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AsrCell {
    pub fn from_counts(hits: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::UndefinedMetric("ASR of an empty spoofed set"));
        }
        let (lo, hi) = wilson(hits, n);
        Ok(AsrCell {
            hits,
            n,
            asr: hits as f64 / n as f64,
            ci_low: lo,
            ci_high: hi,
        })
    }
}

/// 95% Wilson score interval of a binomial proportion.
pub fn wilson(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub fn asr(classifier: &Classifier, spoofed: &[&[f32]], target_label: usize) -> Result<AsrCell> {
    if spoofed.is_empty() {
        return Err(CoreError::UndefinedMetric("ASR of an empty spoofed set"));
    }
    let hits = predict(classifier, spoofed)?.into_iter().filter(|&l| l == target_label).count();
    AsrCell::from_counts(hits, spoofed.len())
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Spoofed transmissions of every target, generated once and reused for
/// every receiver channel.
pub struct SpoofBank {
    pub target: u32,
    pub label: usize,
    pub seed: u64,
    pub tx: Vec<IqFrame>,
}

pub fn spoof_banks(art: &AttackArtifacts, cfg: &ScenarioConfig) -> Result<Vec<SpoofBank>> {
    let attacker = cfg.attacker()?;
    let preamble = make_preamble(&cfg.frame)?;
    let fleet = cfg.fleet()?;
    art.attacks
        .values()
        .map(|a| {
            let seed = spoof_seed(cfg.master_seed, a.target);
            Ok(SpoofBank {
                target: a.target,
                label: crate::dataset::label_of(&fleet[..cfg.n_legit], a.target)
                    .ok_or_else(|| CoreError::config(format!("target {} not in fleet", a.target)))?,
                seed,
                tx: spoof_tx(&a.vae, &preamble, &attacker, cfg.spoof_frames, seed)?,
            })
        })
        .collect()
}

/// Receiver-side ASR of one bank under `profile`.
pub fn receiver_asr(classifier: &Classifier, bank: &SpoofBank, profile: &ChannelProfile, cfg: &ScenarioConfig) -> Result<AsrCell> {
    let ext = cfg.extractor()?;
    let rx = receive(&bank.tx, profile, &cfg.frame, bank.seed, Stream::AttackerToReceiver, &ext)?;
    let feats: Vec<Vec<f32>> = rx.into_iter().map(|(_, f)| f.into_iter().map(|v| v as f32).collect()).collect();
    let refs: Vec<&[f32]> = feats.iter().map(|f| f.as_slice()).collect();
    asr(classifier, &refs, bank.label)
}

/// Mean over targets plus the per-target cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAsr {
    pub mean_asr: f64,
    pub per_target: BTreeMap<u32, AsrCell>,
}

pub fn mean_asr(classifier: &Classifier, banks: &[SpoofBank], profile: &ChannelProfile, cfg: &ScenarioConfig) -> Result<MeanAsr> {
    let mut per_target = BTreeMap::new();
    for b in banks {
        per_target.insert(b.target, receiver_asr(classifier, b, profile, cfg)?);
    }
    let mean_asr = per_target.values().map(|c| c.asr).sum::<f64>() / per_target.len().max(1) as f64;
    Ok(MeanAsr { mean_asr, per_target })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub train_profile: String,
    pub test_profile: String,
    /// `None` when no artifacts were trained on `train_profile`.
    pub result: Option<MeanAsr>,
}

/// Mean ASR for every (train, test) pair; missing artifacts are listed as absent.
pub fn cross_channel_matrix(
    artifacts: &BTreeMap<String, (AttackArtifacts, Vec<SpoofBank>)>,
    train_profiles: &[String],
    test_profiles: &[String],
    cfg: &ScenarioConfig,
) -> Result<Vec<CrossCell>> {
    let mut out = Vec::new();
    for tr in train_profiles {
        for te in test_profiles {
            let profile = cfg.profile(te)?;
            let result = match artifacts.get(tr) {
                Some((art, banks)) => Some(mean_asr(&art.classifier.model, banks, profile, cfg)?),
                None => {
                    log::warn!("no attack artifacts for training channel `{tr}`");
                    None
                }
            };
            out.push(CrossCell {
                train_profile: tr.clone(),
                test_profile: te.clone(),
                result,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub result: MeanAsr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub profile: String,
    pub points: Vec<SweepPoint>,
    /// Spearman rho of ASR against the swept value.
    pub spearman: Option<f64>,
}

fn sweep(
    classifier: &Classifier,
    banks: &[SpoofBank],
    profiles: &[String],
    values: &[f64],
    cfg: &ScenarioConfig,
    vary: impl Fn(&ChannelProfile, f64) -> ChannelProfile,
) -> Result<Vec<SweepSeries>> {
    let mut out = Vec::new();
    for name in profiles {
        let base = cfg.profile(name)?;
        let mut points = Vec::new();
        for &v in values {
            points.push(SweepPoint {
                value: v,
                result: mean_asr(classifier, banks, &vary(base, v), cfg)?,
            });
        }
        let xs: Vec<f64> = points.iter().map(|p| p.value).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.result.mean_asr).collect();
        out.push(SweepSeries {
            profile: name.clone(),
            spearman: spearman(&xs, &ys),
            points,
        });
    }
    Ok(out)
}

/// Sweep that retrains the classifier and every attack at each point, with
/// the varied profile on both the training and the receiver side.
pub fn retrained_sweep(
    cfg: &ScenarioConfig,
    profiles: &[String],
    values: &[f64],
    axis: &str,
    vary: impl Fn(&ChannelProfile, f64) -> ChannelProfile,
) -> Result<Vec<SweepSeries>> {
    let mut out = Vec::new();
    for name in profiles {
        let mut points = Vec::new();
        for &v in values {
            let mut c = cfg.clone();
            let p = ChannelProfile {
                name: format!("{name}@{axis}={}", fmt_f(v)),
                ..vary(cfg.profile(name)?, v)
            };
            c.train_profile = p.name.clone();
            c.test_profile = p.name.clone();
            c.profiles.insert(p.name.clone(), p);
            let (_, art) = crate::attack::run_scenario(&c)?;
            let (report, _) = evaluate(&art, &c)?;
            let result = report
                .matched_asr
                .ok_or(CoreError::UndefinedMetric("retrained sweep point without spoofed frames"))?;
            points.push(SweepPoint { value: v, result });
        }
        let xs: Vec<f64> = points.iter().map(|p| p.value).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.result.mean_asr).collect();
        out.push(SweepSeries {
            profile: name.clone(),
            spearman: spearman(&xs, &ys),
            points,
        });
    }
    Ok(out)
}

/// ASR against receiver Eb/N0 for each profile.
pub fn sweep_ebn0(classifier: &Classifier, banks: &[SpoofBank], profiles: &[String], ebn0_db: &[f64], cfg: &ScenarioConfig) -> Result<Vec<SweepSeries>> {
    sweep(classifier, banks, profiles, ebn0_db, cfg, |p, v| p.with_ebn0(v))
}

/// ASR against the receiver channel's Rician K for each profile.
pub fn sweep_kfactor(classifier: &Classifier, banks: &[SpoofBank], profiles: &[String], k: &[f64], cfg: &ScenarioConfig) -> Result<Vec<SweepSeries>> {
    sweep(classifier, banks, profiles, k, cfg, |p, v| p.with_k(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: u32,
    pub colluder_baseline_asr: f64,
    pub colluder_best_asr: f64,
    pub best_epoch: usize,
    pub warning: Option<String>,
    /// Mean L2 distance of spoofed receiver features to the target's templates,
    /// and of the attacker's own unspoofed features.
    pub template_distance: Option<(f64, f64)>,
}

/// Full evaluation output. Wall-clock timings are kept out so identical runs
/// produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tool_version: String,
    pub scenario: serde_json::Value,
    pub channel_convention: BTreeMap<String, String>,
    pub classifier_accuracy: Option<f64>,
    pub confusion: Option<Confusion>,
    pub matched_asr: Option<MeanAsr>,
    pub targets: Vec<TargetSummary>,
    pub cross_channel: Vec<CrossCell>,
    pub sweep_ebn0: Vec<SweepSeries>,
    pub sweep_k: Vec<SweepSeries>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl EvalReport {
    pub fn new(scenario: &ScenarioConfig) -> Self {
        EvalReport {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            scenario: serde_json::to_value(scenario).expect("scenario serializes"),
            channel_convention: channel_convention(),
            classifier_accuracy: None,
            confusion: None,
            matched_asr: None,
            targets: vec![],
            cross_channel: vec![],
            sweep_ebn0: vec![],
            sweep_k: vec![],
            extra: BTreeMap::new(),
        }
    }
}

pub fn channel_convention() -> BTreeMap<String, String> {
    [
        ("colluder_path", "train_profile; fresh realization per training step"),
        ("receiver_path", "test_profile, or the swept profile; independent realizations"),
        ("legitimate_data", "train_profile, legitimate-to-receiver stream"),
        ("sweeps", "reuse trained artifacts; only the receiver path varies"),
        ("ebn0_to_snr", "snr_db = ebn0_db + 10 log10(bit_rate / sample_rate)"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Mean L2 distance of received features to the centroid of the target's
/// templates: `(spoofed, attacker's own preamble)`, both over the first
/// `max_frames` frames of the bank.
pub fn template_distance(
    attack: &AttackOutcome,
    bank: &SpoofBank,
    receiver: &ChannelProfile,
    cfg: &ScenarioConfig,
    max_frames: usize,
) -> Result<(f64, f64)> {
    let n = bank.tx.len().min(max_frames);
    if n == 0 || attack.templates.is_empty() {
        return Err(CoreError::UndefinedMetric("template distance without frames or templates"));
    }
    let dim = attack.templates[0].len();
    let mut centroid = vec![0.0; dim];
    for t in &attack.templates {
        for (c, v) in centroid.iter_mut().zip(t) {
            *c += *v as f64 / attack.templates.len() as f64;
        }
    }
    let ext = cfg.extractor()?;
    let own = apply_impairment(&make_preamble(&cfg.frame)?, &cfg.attacker()?);
    let own_tx = vec![own; n];
    let mean_dist = |tx: &[IqFrame]| -> Result<f64> {
        let rx = receive(tx, receiver, &cfg.frame, bank.seed, Stream::AttackerToReceiver, &ext)?;
        Ok(rx
            .iter()
            .map(|(_, f)| f.iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64)
    };
    Ok((mean_dist(&bank.tx[..n])?, mean_dist(&own_tx)?))
}

/// Legitimate accuracy, receiver-side ASR under `test_profile` and per-target
/// summaries. Returns the spoof banks for reuse by sweeps.
pub fn evaluate(art: &AttackArtifacts, cfg: &ScenarioConfig) -> Result<(EvalReport, Vec<SpoofBank>)> {
    let mut report = EvalReport::new(cfg);
    let conf = &art.classifier.confusion;
    if conf.total() > 0 {
        report.classifier_accuracy = Some(conf.accuracy());
        report.confusion = Some(conf.clone());
    }
    let banks = if cfg.spoof_frames > 0 { spoof_banks(art, cfg)? } else { vec![] };
    let receiver = cfg.profile(&cfg.test_profile)?;
    if !banks.is_empty() {
        report.matched_asr = Some(mean_asr(&art.classifier.model, &banks, receiver, cfg)?);
    }
    for a in art.attacks.values() {
        let template_distance = banks
            .iter()
            .find(|b| b.target == a.target)
            .map(|b| template_distance(a, b, receiver, cfg, 64))
            .transpose()?;
        report.targets.push(TargetSummary {
            target: a.target,
            colluder_baseline_asr: a.baseline_asr,
            colluder_best_asr: a.best_asr,
            best_epoch: a.best_epoch,
            warning: a.warning.clone(),
            template_distance,
        });
    }
    Ok((report, banks))
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn sweep_csv(axis: &str, series: &[SweepSeries]) -> String {
    let mut s = format!("profile,{axis},mean_asr,target,asr,ci_low,ci_high\n");
    for ser in series {
        for p in &ser.points {
            for (t, c) in &p.result.per_target {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{t},{:.6},{:.6},{:.6}",
                    ser.profile,
                    fmt_f(p.value),
                    p.result.mean_asr,
                    c.asr,
                    c.ci_low,
                    c.ci_high
                );
            }
        }
    }
    s
}

/// One gnuplot data block per series, separated by two blank lines.
fn sweep_dat(axis: &str, series: &[SweepSeries]) -> String {
    let mut s = String::new();
    for ser in series {
        let _ = writeln!(s, "# {} ({axis} mean_asr)", ser.profile);
        for p in &ser.points {
            let _ = writeln!(s, "{} {:.6}", fmt_f(p.value), p.result.mean_asr);
        }
        s.push_str("\n\n");
    }
    s
}

fn put(dir: &Path, name: &str, body: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| CoreError::io(&p, e))
}

/// Writes `report.json`, the CSV tables and gnuplot data into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    put(dir, "report.json", &json)?;

    let mut cross = String::from("train_profile,test_profile,mean_asr\n");
    for c in &report.cross_channel {
        let v = c.result.as_ref().map_or("NA".into(), |r| format!("{:.6}", r.mean_asr));
        let _ = writeln!(cross, "{},{},{v}", c.train_profile, c.test_profile);
    }
    put(dir, "asr_cross.csv", cross.as_bytes())?;
    put(dir, "sweep_ebn0.csv", sweep_csv("ebn0_db", &report.sweep_ebn0).as_bytes())?;
    put(dir, "sweep_k.csv", sweep_csv("k_factor", &report.sweep_k).as_bytes())?;
    let conf = report.confusion.as_ref().map(|c| c.to_csv()).unwrap_or_default();
    put(dir, "confusion.csv", conf.as_bytes())?;
    put(dir, "sweep_ebn0.dat", sweep_dat("ebn0_db", &report.sweep_ebn0).as_bytes())?;
    put(dir, "sweep_k.dat", sweep_dat("k_factor", &report.sweep_k).as_bytes())?;
    let mut cm = String::new();
    if let Some(c) = &report.confusion {
        for (i, row) in c.counts.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(cm, "{i} {j} {v}");
            }
            cm.push('\n');
        }
    }
    put(dir, "confusion.dat", cm.as_bytes())
}
