//! On-disk layout of a run directory.
//!
//! ```text
//! <out>/dataset/              dataset store
//! <out>/classifier.rfnn       classifier checkpoint
//! <out>/classifier.json       per-epoch log and test confusion matrix
//! <out>/attack/target_<t>.rfnn, target_<t>.json
//! ```
//! Templates are not stored; they are regenerated from the scenario seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{target_templates, AttackArtifacts, AttackEpoch, AttackOutcome, EpochLog, ScenarioConfig, TrainedClassifier};
use crate::dataset::label_of;
use crate::error::{CoreError, Result};
use crate::eval::Confusion;
use crate::models::{Classifier, Vae};

pub fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

fn attack_dir(out: &Path) -> PathBuf {
    out.join("attack")
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CoreError::io(path, e))
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializes");
    b.push(b'\n');
    b
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| CoreError::Dataset(format!("{}: {e}", path.display())))
}

#[derive(Serialize, Deserialize)]
struct ClassifierLog {
    log: Vec<EpochLog>,
    confusion: Confusion,
}

pub fn save_classifier(out: &Path, c: &TrainedClassifier) -> Result<()> {
    write(&out.join("classifier.rfnn"), &c.model.to_bytes()?)?;
    write(
        &out.join("classifier.json"),
        &json(&ClassifierLog {
            log: c.log.clone(),
            confusion: c.confusion.clone(),
        }),
    )
}

pub fn load_classifier(out: &Path) -> Result<TrainedClassifier> {
    let model = Classifier::from_bytes(&read(&out.join("classifier.rfnn"))?)?;
    let l: ClassifierLog = parse(&out.join("classifier.json"))?;
    Ok(TrainedClassifier {
        model,
        log: l.log,
        confusion: l.confusion,
    })
}

#[derive(Serialize, Deserialize)]
struct AttackLog {
    target: u32,
    baseline_asr: f64,
    best_asr: f64,
    best_epoch: usize,
    curve: Vec<AttackEpoch>,
    warning: Option<String>,
}

pub fn save_attack(out: &Path, a: &AttackOutcome) -> Result<()> {
    let dir = attack_dir(out);
    write(&dir.join(format!("target_{}.rfnn", a.target)), &a.vae.to_bytes()?)?;
    write(
        &dir.join(format!("target_{}.json", a.target)),
        &json(&AttackLog {
            target: a.target,
            baseline_asr: a.baseline_asr,
            best_asr: a.best_asr,
            best_epoch: a.best_epoch,
            curve: a.curve.clone(),
            warning: a.warning.clone(),
        }),
    )
}

pub fn load_attack(out: &Path, cfg: &ScenarioConfig, target: u32) -> Result<AttackOutcome> {
    let dir = attack_dir(out);
    let vae = Vae::from_bytes(&read(&dir.join(format!("target_{target}.rfnn")))?)?;
    let l: AttackLog = parse(&dir.join(format!("target_{target}.json")))?;
    let fleet = cfg.fleet()?;
    let label = label_of(&fleet[..cfg.n_legit], target)
        .ok_or_else(|| CoreError::config(format!("target {target} is not a legitimate device")))?;
    let templates = target_templates(cfg, &fleet[label], &cfg.extractor()?)?;
    Ok(AttackOutcome {
        target,
        vae,
        templates,
        baseline_asr: l.baseline_asr,
        best_asr: l.best_asr,
        best_epoch: l.best_epoch,
        curve: l.curve,
        warning: l.warning,
    })
}

pub fn save_artifacts(out: &Path, art: &AttackArtifacts) -> Result<()> {
    save_classifier(out, &art.classifier)?;
    art.attacks.values().try_for_each(|a| save_attack(out, a))
}

/// Classifier plus the attacks on every resolved target that has a checkpoint.
pub fn load_artifacts(out: &Path, cfg: &ScenarioConfig) -> Result<AttackArtifacts> {
    let classifier = load_classifier(out)?;
    let mut attacks = BTreeMap::new();
    for t in cfg.resolved_targets() {
        if attack_dir(out).join(format!("target_{t}.rfnn")).exists() {
            attacks.insert(t, load_attack(out, cfg, t)?);
        } else {
            log::warn!("no attack checkpoint for target {t} in {}", out.display());
        }
    }
    Ok(AttackArtifacts {
        train_profile: cfg.train_profile.clone(),
        classifier,
        attacks,
    })
}
