//! Run configuration: one TOML file drives the whole pipeline. A single root
//! seed derives all stage seeds through named substreams, so reruns of one
//! stage never perturb another.

use crate::datagen::{BenchmarkConfig, DomainSpec, TextureKind, TraceKind};
use crate::detector::TrainConfig;
use crate::error::{Error, Result};
use crate::ffdev::Stage1Config;
use crate::mining::{MiningConfig, Strategy};
use crate::daft::DaftConfig;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictConfig {
    /// 0 selects the default min(64, N/4) for N hard-fake features.
    pub num_atoms: usize,
    pub lambda_l1: f64,
    pub calib_lo_pct: f64,
    pub calib_hi_pct: f64,
}

impl Default for DictConfig {
    fn default() -> Self {
        DictConfig { num_atoms: 0, lambda_l1: 0.1, calib_lo_pct: 0.05, calib_hi_pct: 0.95 }
    }
}

impl DictConfig {
    pub fn atoms_for(&self, n_features: usize) -> usize {
        if self.num_atoms > 0 {
            self.num_atoms
        } else {
            (n_features / 4).clamp(1, 64)
        }
    }
}

/// Mining volumes; zero means the 10%-of-class-population default.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiningSection {
    pub k_hard_fake: usize,
    pub k_easy_real: usize,
    pub strategy: Strategy,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection { k_hard_fake: 0, k_easy_real: 0, strategy: Strategy::HfEr }
    }
}

impl MiningSection {
    pub fn resolve(&self, n_fake: usize, n_real: usize) -> MiningConfig {
        MiningConfig {
            k_hard_fake: if self.k_hard_fake > 0 { self.k_hard_fake } else { (n_fake / 10).max(1) },
            k_easy_real: if self.k_easy_real > 0 { self.k_easy_real } else { (n_real / 10).max(1) },
            strategy: self.strategy,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub feature_dim: usize,
    pub benchmark: BenchmarkConfig,
    pub train: TrainConfig,
    pub stage1: Stage1Config,
    pub mining: MiningSection,
    pub dict: DictConfig,
    pub daft: DaftConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out_dir: PathBuf::from("artifacts"),
            feature_dim: 32,
            benchmark: default_benchmark(),
            train: TrainConfig { epochs: 60, learning_rate: 1e-3, augment: false, ..Default::default() },
            stage1: Stage1Config { epochs: 60, batch_size: 16, learning_rate: 1e-3, ..Default::default() },
            // wide easy-real coverage: the developer must learn to preserve
            // reals of every domain, not just the domains with the most
            // confident reals
            mining: MiningSection { k_easy_real: 160, ..Default::default() },
            dict: DictConfig::default(),
            daft: DaftConfig { epochs: 10, ..Default::default() },
        }
    }
}

/// The shipped benchmark: four in-domain textures with per-domain trace
/// kinds and amplitudes, plus one holdout domain carrying a trace kind the
/// training domains never see.
pub fn default_benchmark() -> BenchmarkConfig {
    BenchmarkConfig {
        domains: vec![
            DomainSpec {
                domain_id: 0,
                texture_kind: TextureKind::Gradient,
                color_mean: [0.25, 0.45, 0.70],
                color_jitter: 0.03,
                trace_amplitude: 0.18,
                trace_kind: TraceKind::BlendedEllipse,
            },
            DomainSpec {
                domain_id: 1,
                texture_kind: TextureKind::Checker,
                color_mean: [0.70, 0.30, 0.30],
                color_jitter: 0.03,
                trace_amplitude: 0.07,
                trace_kind: TraceKind::RipplePatch,
            },
            DomainSpec {
                domain_id: 2,
                texture_kind: TextureKind::Gradient,
                color_mean: [0.35, 0.65, 0.35],
                color_jitter: 0.03,
                trace_amplitude: 0.18,
                trace_kind: TraceKind::BlendedEllipse,
            },
            DomainSpec {
                domain_id: 3,
                texture_kind: TextureKind::BlobField,
                color_mean: [0.75, 0.70, 0.35],
                color_jitter: 0.03,
                trace_amplitude: 0.06,
                trace_kind: TraceKind::RipplePatch,
            },
            DomainSpec {
                domain_id: 4,
                texture_kind: TextureKind::Speckle,
                color_mean: [0.50, 0.35, 0.60],
                color_jitter: 0.03,
                trace_amplitude: 0.08,
                trace_kind: TraceKind::ChannelOffsetPatch,
            },
        ],
        images_per_domain_per_class: 200,
        image_size: 32,
        seed: 0, // overwritten by the derived stage seed
        holdout_domain_ids: vec![4],
        test_amplitude_scale: 0.6,
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!(
            "failed to parse {}: {e}",
            path.display()
        )))?;
        cfg.apply_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Derive every stage seed from the root seed. Seeds are kept in i64
    /// range so the config file can hold them.
    pub fn apply_seed(&mut self, root: u64) {
        self.seed = root;
        let derive = |name: &str| rng::stream(root, name).gen::<u64>() >> 1;
        self.benchmark.seed = derive("synth");
        self.train.seed = derive("pretrain");
        self.stage1.seed = derive("stage1");
    }

    pub fn dict_seed(&self) -> u64 {
        rng::stream(self.seed, "fitdict").gen::<u64>() >> 1
    }

    /// Collect every violation at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for check in [
            self.benchmark.validate(),
            self.train.validate(),
            self.stage1.validate(),
        ] {
            if let Err(Error::Config(msg)) = check {
                problems.push(msg);
            }
        }
        if self.feature_dim == 0 {
            problems.push("feature_dim must be >= 1".into());
        }
        if self.daft.lr_scale <= 0.0 {
            problems.push("daft.lr_scale must be > 0".into());
        }
        if self.daft.epochs == 0 {
            problems.push("daft.epochs must be >= 1".into());
        }
        if self.dict.lambda_l1 < 0.0 {
            problems.push("dict.lambda_l1 must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dict.calib_lo_pct)
            || !(self.dict.calib_lo_pct..=1.0).contains(&self.dict.calib_hi_pct)
        {
            problems.push("dict calibration percentiles must satisfy 0 <= lo < hi <= 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// SHA-256 of the canonical JSON form; embedded in every artifact.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::nn::params::hex_string(&Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(7);
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_derivation_is_stable_and_stagewise() {
        let mut a = RunConfig::default();
        a.apply_seed(7);
        let mut b = RunConfig::default();
        b.apply_seed(7);
        assert_eq!(a.benchmark.seed, b.benchmark.seed);
        assert_eq!(a.train.seed, b.train.seed);
        let mut c = RunConfig::default();
        c.apply_seed(8);
        assert_ne!(a.benchmark.seed, c.benchmark.seed);
        // stage seeds differ from each other
        assert_ne!(a.benchmark.seed, a.train.seed);
        assert_ne!(a.train.seed, a.stage1.seed);
    }

    #[test]
    fn toml_roundtrip_and_hash_stability() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.toml");
        cfg.save(&p).unwrap();
        let back = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.content_hash(), back.content_hash());
    }

    #[test]
    fn validation_enumerates_multiple_violations() {
        let mut cfg = RunConfig::default();
        cfg.apply_seed(7);
        cfg.feature_dim = 0;
        cfg.benchmark.image_size = 4;
        cfg.daft.lr_scale = -1.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("feature_dim"));
        assert!(err.contains("image_size"));
        assert!(err.contains("lr_scale"));
    }

    #[test]
    fn mining_defaults_scale_with_population() {
        let m = MiningSection::default();
        let r = m.resolve(420, 380);
        assert_eq!(r.k_hard_fake, 42);
        assert_eq!(r.k_easy_real, 38);
    }
}
