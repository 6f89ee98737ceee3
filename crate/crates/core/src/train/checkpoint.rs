//! Self-contained checkpoint file.
//!
//! Layout: 8-byte magic, u32 LE format version, u64 LE header length, a JSON
//! header (configs, group table, metric log), then all parameter groups as
//! little-endian f64 in table order. Floats never pass through decimal text,
//! so `load(save(c))` is bit-identical.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detcore::params::{Flat, Reader};
use crate::detcore::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::rotself::RotHead;
use crate::train::config::TrainConfig;

const MAGIC: &[u8; 8] = b"OSDACKPT";
const VERSION: u32 = 1;

pub const GROUP_THETA_F: &str = "theta_f";
pub const GROUP_THETA_D: &str = "theta_d";
pub const GROUP_THETA_R: &str = "theta_r";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub l_d: f64,
    pub l_r: f64,
    pub map: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct GroupInfo {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    epoch: usize,
    rot_trained: bool,
    train_config: TrainConfig,
    det_config: DetectorConfig,
    groups: Vec<GroupInfo>,
    metric_log: Vec<MetricRow>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub seed: u64,
    pub epoch: usize,
    pub rot_trained: bool,
    pub train_config: TrainConfig,
    pub det_config: DetectorConfig,
    pub groups: Vec<(String, Vec<f64>)>,
    pub metric_log: Vec<MetricRow>,
}

impl Checkpoint {
    pub fn from_model(
        det: &Detector,
        rot: &RotHead,
        train_config: &TrainConfig,
        epoch: usize,
        rot_trained: bool,
        metric_log: Vec<MetricRow>,
    ) -> Checkpoint {
        let mut theta_r = Vec::new();
        rot.write_flat(&mut theta_r);
        Checkpoint {
            seed: train_config.seed,
            epoch,
            rot_trained,
            train_config: train_config.clone(),
            det_config: det.cfg.clone(),
            groups: vec![
                (GROUP_THETA_F.to_string(), det.theta_f()),
                (GROUP_THETA_D.to_string(), det.theta_d()),
                (GROUP_THETA_R.to_string(), theta_r),
            ],
            metric_log,
        }
    }

    pub fn group(&self, name: &str) -> Result<&[f64]> {
        self.groups
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingInput(format!("checkpoint is missing parameter group '{name}'")))
    }

    /// Rebuild the detector and rotation head exactly as trained.
    pub fn build_model(&self) -> Result<(Detector, RotHead)> {
        let mut det = Detector::new(self.det_config.clone(), &mut substream(self.seed, &["init"]))?;
        let tf = self.group(GROUP_THETA_F)?;
        let td = self.group(GROUP_THETA_D)?;
        let tr = self.group(GROUP_THETA_R)?;
        if tf.len() != det.theta_f_len() || td.len() != det.theta_d_len() {
            return Err(Error::Config(format!(
                "checkpoint group sizes ({}, {}) do not match detector ({}, {})",
                tf.len(),
                td.len(),
                det.theta_f_len(),
                det.theta_d_len()
            )));
        }
        det.set_theta_f(tf);
        det.set_theta_d(td);
        let mut rot = RotHead::new(self.det_config.pooled_len());
        if tr.len() != rot.flat_len() {
            return Err(Error::Config(format!(
                "checkpoint theta_r length {} does not match head ({})",
                tr.len(),
                rot.flat_len()
            )));
        }
        rot.read_flat(&mut Reader::new(tr));
        Ok((det, rot))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            seed: self.seed,
            epoch: self.epoch,
            rot_trained: self.rot_trained,
            train_config: self.train_config.clone(),
            det_config: self.det_config.clone(),
            groups: self
                .groups
                .iter()
                .map(|(n, v)| GroupInfo { name: n.clone(), len: v.len() })
                .collect(),
            metric_log: self.metric_log.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(
            MAGIC.len() + 12 + header_bytes.len() + 8 * self.groups.iter().map(|(_, v)| v.len()).sum::<usize>(),
        );
        buf.write_all(MAGIC)?;
        buf.write_all(&VERSION.to_le_bytes())?;
        buf.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        buf.write_all(&header_bytes)?;
        for (_, values) in &self.groups {
            for v in values {
                buf.write_all(&v.to_le_bytes())?;
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(Error::MissingInput(format!("checkpoint not found: {}", path.display())));
        }
        let bytes = std::fs::read(path)?;
        let corrupt = |what: &str| Error::Config(format!("{}: {what}", path.display()));
        if bytes.len() < MAGIC.len() + 12 {
            return Err(corrupt("file too short for a checkpoint"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic, not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload_at = 20 + header_len;
        if bytes.len() < payload_at {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&bytes[20..payload_at]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        let total: usize = header.groups.iter().map(|g| g.len).sum();
        if bytes.len() != payload_at + 8 * total {
            return Err(corrupt(&format!(
                "payload length {} does not match group table ({} floats)",
                bytes.len() - payload_at,
                total
            )));
        }
        let mut at = payload_at;
        let mut groups = Vec::with_capacity(header.groups.len());
        for g in &header.groups {
            let mut values = Vec::with_capacity(g.len);
            for _ in 0..g.len {
                values.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
                at += 8;
            }
            groups.push((g.name.clone(), values));
        }
        Ok(Checkpoint {
            seed: header.seed,
            epoch: header.epoch,
            rot_trained: header.rot_trained,
            train_config: header.train_config,
            det_config: header.det_config,
            groups,
            metric_log: header.metric_log,
        })
    }

    /// Metric log as CSV with columns (epoch, split, L_d, L_r, mAP).
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,split,L_d,L_r,mAP\n");
        for row in &self.metric_log {
            let map = row.map.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{},{}\n", row.epoch, row.split, row.l_d, row.l_r, map));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mini_cfg() -> DetectorConfig {
        DetectorConfig {
            image_size: 24,
            channels: vec![4, 6],
            block_strides: vec![1, 2],
            gn_groups: 2,
            anchor_scales: vec![6.0, 10.0],
            anchor_ratios: vec![1.0],
            roi_pool: 3,
            roi_fc: 8,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = TrainConfig { seed: 41, ..TrainConfig::default() };
        let det = Detector::new(mini_cfg(), &mut substream(41, &["init"])).unwrap();
        let rot = RotHead::new(mini_cfg().pooled_len());
        let mut ckpt = Checkpoint::from_model(&det, &rot, &cfg, 3, true, vec![
            MetricRow { epoch: 0, split: "train".to_string(), l_d: 1.25, l_r: 1.375, map: None },
            MetricRow { epoch: 1, split: "train".to_string(), l_d: 0.5, l_r: 0.75, map: Some(0.625) },
        ]);
        // Awkward floats must survive exactly, including signed zero and subnormals.
        let mut rng = substream(5, &["round-trip"]);
        for (_, v) in ckpt.groups.iter_mut() {
            for x in v.iter_mut().take(16) {
                *x = (rng.gen::<f64>() - 0.5) * 1e-300;
            }
            if v.len() > 2 {
                v[0] = -0.0;
                v[1] = 1.0 / 3.0;
            }
        }
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.seed, 41);
        assert_eq!(back.epoch, 3);
        assert!(back.rot_trained);
        assert_eq!(back.train_config, ckpt.train_config);
        assert_eq!(back.metric_log, ckpt.metric_log);
        assert_eq!(back.groups.len(), 3);
        for ((an, av), (bn, bv)) in ckpt.groups.iter().zip(back.groups.iter()) {
            assert_eq!(an, bn);
            assert_eq!(av.len(), bv.len());
            for (a, b) in av.iter().zip(bv.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn build_model_restores_the_exact_parameters() {
        let cfg = TrainConfig { seed: 13, ..TrainConfig::default() };
        let mut det = Detector::new(mini_cfg(), &mut substream(13, &["init"])).unwrap();
        let mut tf = det.theta_f();
        tf[7] = 0.123456;
        det.set_theta_f(&tf);
        let mut rot = RotHead::new(mini_cfg().pooled_len());
        let mut tr = vec![0.0; rot.flat_len()];
        tr[3] = -2.5;
        rot.read_flat(&mut Reader::new(&tr));
        let ckpt = Checkpoint::from_model(&det, &rot, &cfg, 1, true, Vec::new());
        let (det2, rot2) = ckpt.build_model().unwrap();
        assert_eq!(det.theta_f(), det2.theta_f());
        assert_eq!(det.theta_d(), det2.theta_d());
        let mut tr2 = Vec::new();
        rot2.write_flat(&mut tr2);
        assert_eq!(tr, tr2);
    }

    #[test]
    fn missing_group_is_named_and_missing_file_reports_input() {
        let cfg = TrainConfig::default();
        let det = Detector::new(mini_cfg(), &mut substream(7, &["init"])).unwrap();
        let rot = RotHead::new(mini_cfg().pooled_len());
        let mut ckpt = Checkpoint::from_model(&det, &rot, &cfg, 0, false, Vec::new());
        ckpt.groups.retain(|(n, _)| n != "theta_r");
        match ckpt.group("theta_r") {
            Err(Error::MissingInput(msg)) => assert!(msg.contains("theta_r"), "{msg}"),
            other => panic!("expected missing-input error, got {other:?}"),
        }
        match Checkpoint::load(Path::new("/nonexistent/never.ckpt")) {
            Err(Error::MissingInput(_)) => {}
            other => panic!("expected missing-input error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"OSDAWRNG\x01\x00\x00\x00").unwrap();
        assert!(Checkpoint::load(&path).is_err());

        let cfg = TrainConfig::default();
        let det = Detector::new(mini_cfg(), &mut substream(7, &["init"])).unwrap();
        let rot = RotHead::new(mini_cfg().pooled_len());
        let ckpt = Checkpoint::from_model(&det, &rot, &cfg, 0, false, Vec::new());
        ckpt.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn metrics_csv_has_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let cfg = TrainConfig::default();
        let det = Detector::new(mini_cfg(), &mut substream(7, &["init"])).unwrap();
        let rot = RotHead::new(mini_cfg().pooled_len());
        let ckpt = Checkpoint::from_model(&det, &rot, &cfg, 2, true, vec![
            MetricRow { epoch: 0, split: "train".to_string(), l_d: 2.0, l_r: 1.5, map: Some(0.25) },
            MetricRow { epoch: 1, split: "train".to_string(), l_d: 1.0, l_r: 1.25, map: None },
        ]);
        ckpt.write_metrics_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,split,L_d,L_r,mAP");
        assert_eq!(lines[1], "0,train,2,1.5,0.25");
        assert_eq!(lines[2], "1,train,1,1.25,");
        assert_eq!(lines.len(), 3);
    }
}
