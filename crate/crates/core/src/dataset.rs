//! Simulated receiver datasets and their on-disk store.
//!
//! A store is a directory holding `manifest.json` and three little-endian
//! blobs: `frames.f32` (per frame `i0 q0 i1 q1 ...`), `features.f32` (one
//! row per frame) and `labels.u16`. Train rows come first, then test rows.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{propagate, realize, ChannelProfile};
use crate::error::{CoreError, Result};
use crate::features::{Extractor, FeatureKind};
use crate::seed::{pair_index, rng_for, Stream};
use crate::signal::{apply_impairment, make_preamble, DeviceProfile, FrameSpec};

pub const STORE_VERSION: u32 = 1;

/// Everything that determines the content of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub master_seed: u64,
    pub fleet: Vec<DeviceProfile>,
    pub profile: ChannelProfile,
    pub frame: FrameSpec,
    pub train_per_device: usize,
    pub test_per_device: usize,
    pub feature: FeatureKind,
    pub feature_len: usize,
    /// Seed stream of the propagation path the frames are observed on.
    pub stream: Stream,
}

/// Rows of one split, features stored as `f32` like the on-disk blobs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub frames: Vec<f32>,
    pub features: Vec<f32>,
    pub labels: Vec<u16>,
    pub frame_len: usize,
    pub feature_dim: usize,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.feature_dim..(row + 1) * self.feature_dim]
    }

    /// Received frame `row` as separate I and Q rails.
    pub fn frame(&self, row: usize) -> crate::signal::IqFrame {
        let s = &self.frames[row * 2 * self.frame_len..(row + 1) * 2 * self.frame_len];
        crate::signal::IqFrame {
            i: s.iter().step_by(2).map(|&v| v as f64).collect(),
            q: s.iter().skip(1).step_by(2).map(|&v| v as f64).collect(),
        }
    }

    pub fn counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for &l in &self.labels {
            if (l as usize) < n_classes {
                c[l as usize] += 1;
            }
        }
        c
    }

    /// Recomputes every feature row from the stored frames.
    pub fn refeaturize(&self, ext: &Extractor) -> Result<Samples> {
        let rows = rffsb_nn::par::map_range(self.len(), |r| ext.extract(&self.frame(r)));
        let mut features = Vec::with_capacity(self.len() * ext.dim());
        for row in rows {
            features.extend(row?.into_iter().map(|v| v as f32));
        }
        Ok(Samples {
            frames: self.frames.clone(),
            features,
            labels: self.labels.clone(),
            frame_len: self.frame_len,
            feature_dim: ext.dim(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub train: Samples,
    pub test: Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    spec: DatasetSpec,
    train_rows: usize,
    test_rows: usize,
    frame_len: usize,
    feature_dim: usize,
    sha256: Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Blobs {
    frames: String,
    features: String,
    labels: String,
}

/// Frame index `f` of device `d`: training frames use `0..train`, test frames
/// `train..train + test`, so the two splits never share a channel draw.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.frame.validate()?;
    spec.profile.validate()?;
    if spec.fleet.is_empty() {
        return Err(CoreError::config("dataset needs at least one device"));
    }
    if spec.train_per_device == 0 {
        return Err(CoreError::config("train_per_device must be >= 1"));
    }
    let ext = Extractor::new(spec.feature, spec.frame.samples_per_frame, spec.feature_len)?;
    let preamble = make_preamble(&spec.frame)?;
    let tx: Vec<_> = spec.fleet.iter().map(|d| apply_impairment(&preamble, d)).collect();
    let build = |start: usize, count: usize| -> Result<Samples> {
        let n_dev = spec.fleet.len();
        let rows = rffsb_nn::par::map_range(n_dev * count, |r| {
            let (d, f) = (r / count, start + r % count);
            let dev = &spec.fleet[d];
            let mut rng = rng_for(spec.master_seed, spec.stream, pair_index(dev.device_id as u64, f as u64));
            let h = realize(&spec.profile, &spec.frame, &mut rng);
            let rx = propagate(&tx[d], &h, &spec.profile, &spec.frame);
            ext.extract(&rx).map(|feat| (rx, feat))
        });
        let n = spec.frame.samples_per_frame;
        let mut s = Samples {
            frame_len: n,
            feature_dim: ext.dim(),
            ..Default::default()
        };
        s.frames.reserve(rows.len() * 2 * n);
        for (r, row) in rows.into_iter().enumerate() {
            let (rx, feat) = row?;
            for t in 0..n {
                s.frames.push(rx.i[t] as f32);
                s.frames.push(rx.q[t] as f32);
            }
            s.features.extend(feat.into_iter().map(|v| v as f32));
            s.labels.push((r / count) as u16);
        }
        Ok(s)
    };
    let train = build(0, spec.train_per_device)?;
    let test = if spec.test_per_device == 0 {
        Samples {
            frame_len: train.frame_len,
            feature_dim: train.feature_dim,
            ..Default::default()
        }
    } else {
        build(spec.train_per_device, spec.test_per_device)?
    };
    log::info!(
        "dataset: {} train / {} test rows on `{}`",
        train.len(),
        test.len(),
        spec.profile.name
    );
    Ok(Dataset {
        spec: spec.clone(),
        train,
        test,
    })
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn u16_bytes(v: &[u16]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CoreError::io(path, e))
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.spec.fleet.len()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let cat = |a: &[f32], b: &[f32]| a.iter().chain(b).copied().collect::<Vec<f32>>();
        let frames = f32_bytes(&cat(&self.train.frames, &self.test.frames));
        let features = f32_bytes(&cat(&self.train.features, &self.test.features));
        let labels: Vec<u16> = self.train.labels.iter().chain(&self.test.labels).copied().collect();
        let labels = u16_bytes(&labels);
        let manifest = Manifest {
            version: STORE_VERSION,
            spec: self.spec.clone(),
            train_rows: self.train.len(),
            test_rows: self.test.len(),
            frame_len: self.train.frame_len,
            feature_dim: self.train.feature_dim,
            sha256: Blobs {
                frames: sha(&frames),
                features: sha(&features),
                labels: sha(&labels),
            },
        };
        write(&dir.join("frames.f32"), &frames)?;
        write(&dir.join("features.f32"), &features)?;
        write(&dir.join("labels.u16"), &labels)?;
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write(&dir.join("manifest.json"), &json)
    }

    /// Loads a store and verifies every blob against its recorded digest.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let mpath = dir.join("manifest.json");
        let m: Manifest = serde_json::from_slice(&read(&mpath)?)
            .map_err(|e| CoreError::Dataset(format!("{}: {e}", mpath.display())))?;
        if m.version != STORE_VERSION {
            return Err(CoreError::Dataset(format!("unsupported store version {}", m.version)));
        }
        let blob = |name: &str, digest: &str| -> Result<Vec<u8>> {
            let p = dir.join(name);
            let b = read(&p)?;
            if sha(&b) != digest {
                return Err(CoreError::Dataset(format!("{}: checksum mismatch", p.display())));
            }
            Ok(b)
        };
        let frames = blob("frames.f32", &m.sha256.frames)?;
        let features = blob("features.f32", &m.sha256.features)?;
        let labels = blob("labels.u16", &m.sha256.labels)?;
        let rows = m.train_rows + m.test_rows;
        if frames.len() != rows * 2 * m.frame_len * 4 || features.len() != rows * m.feature_dim * 4 || labels.len() != rows * 2 {
            return Err(CoreError::Dataset(format!("{}: blob sizes disagree with manifest", dir.display())));
        }
        let f32s = |b: &[u8]| -> Vec<f32> { b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect() };
        let frames = f32s(&frames);
        let features = f32s(&features);
        let labels: Vec<u16> = labels.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let split = |lo: usize, hi: usize| Samples {
            frames: frames[lo * 2 * m.frame_len..hi * 2 * m.frame_len].to_vec(),
            features: features[lo * m.feature_dim..hi * m.feature_dim].to_vec(),
            labels: labels[lo..hi].to_vec(),
            frame_len: m.frame_len,
            feature_dim: m.feature_dim,
        };
        Ok(Dataset {
            train: split(0, m.train_rows),
            test: split(m.train_rows, rows),
            spec: m.spec,
        })
    }
}

/// Class label of a device: its position in the fleet.
pub fn label_of(fleet: &[DeviceProfile], device_id: u32) -> Option<usize> {
    fleet.iter().position(|d| d.device_id == device_id)
}
