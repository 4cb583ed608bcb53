//! Stage 2: dose-adaptive fine-tuning of the detector on developed images,
//! with the generator and dictionary frozen, plus the three-step inference
//! pipeline (dose from reconstruction error, develop, predict).

use crate::data::SampleSet;
use crate::detector::{bce_loss_dlogit, BinaryDetector, Detector, TrainConfig};
use crate::dosedict::{adaptive_dose, load_dict, reconstruction_error, save_dict, DoseDictModel};
use crate::error::{Error, Result};
use crate::ffdev::{apply_developer, DevGen};
use crate::img::Image;
use crate::nn::Adam;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseMode {
    /// Every sample developed at the base dose.
    Fixed,
    /// Per-sample dose from the dictionary reconstruction error.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub detector: Detector,
    pub generator: DevGen,
    pub dict: DoseDictModel,
    /// Pretrained copy used for dose features; never fine-tuned.
    pub frozen_extractor: Detector,
    pub base_dose: f64,
    pub dose_mode: DoseMode,
}

#[derive(Debug, Clone)]
pub struct InferResult {
    pub confidence: f64,
    pub dose_used: f64,
    pub developed_image: Image,
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        let ex_hash = self.frozen_extractor.params.content_hash();
        if self.dict.extractor_hash != ex_hash {
            return Err(Error::ChainMismatch(format!(
                "dictionary was fitted on extractor {} but the pipeline carries {}",
                self.dict.extractor_hash, ex_hash
            )));
        }
        if self.dict.feature_dim() != self.frozen_extractor.feature_dim {
            return Err(Error::Shape(format!(
                "dictionary feature dim {} vs extractor {}",
                self.dict.feature_dim(),
                self.frozen_extractor.feature_dim
            )));
        }
        Ok(())
    }

    pub fn dose_for(&self, image: &Image) -> Result<f64> {
        match self.dose_mode {
            DoseMode::Fixed => Ok(self.base_dose),
            DoseMode::Adaptive => {
                let (_, feat) = self.frozen_extractor.predict(image);
                let e = reconstruction_error(&self.dict, Array1::from(feat).view())?;
                Ok(adaptive_dose(&self.dict, e, self.base_dose))
            }
        }
    }

    /// The three inference steps: adaptive dose, develop, predict.
    pub fn infer(&self, image: &Image) -> Result<InferResult> {
        let dose_used = self.dose_for(image)?;
        let delta = self.generator.developer(image);
        let developed_image = apply_developer(image, &delta, dose_used)?;
        let (confidence, _) = self.detector.predict(&developed_image);
        Ok(InferResult { confidence, dose_used, developed_image })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaftConfig {
    /// Stage-2 learning rate as a fraction of the pretraining rate.
    pub lr_scale: f64,
    pub epochs: usize,
    pub dose_mode: DoseMode,
    /// Also update the generator during stage 2 (the parallel ablation
    /// variant); the sequential default keeps it frozen.
    pub update_generator: bool,
}

impl Default for DaftConfig {
    fn default() -> Self {
        DaftConfig { lr_scale: 0.1, epochs: 5, dose_mode: DoseMode::Adaptive, update_generator: false }
    }
}

/// Fine-tune the pipeline's detector on developed training images. The
/// generator and dictionary stay byte-identical unless `update_generator`.
pub fn finetune(
    mut pipe: Pipeline,
    train: &SampleSet,
    base_train: &TrainConfig,
    cfg: &DaftConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<Pipeline> {
    pipe.validate()?;
    if train.is_empty() {
        return Err(Error::Config("stage-2 training set is empty".into()));
    }
    pipe.dose_mode = cfg.dose_mode;
    let gen_hash = pipe.generator.params.content_hash();
    let lr = base_train.learning_rate * cfg.lr_scale;
    let mut det_opt = Adam::new(lr, pipe.detector.params.len());
    let mut gen_opt = Adam::new(lr, pipe.generator.params.len());
    // doses depend only on frozen artifacts: compute once
    let doses: Vec<f64> = train
        .samples
        .iter()
        .map(|s| pipe.dose_for(&s.image))
        .collect::<Result<_>>()?;
    let mut first = None;
    let mut last = 0.0;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for batch in
            crate::data::epoch_batches(train.len(), base_train.batch_size, base_train.seed, epoch as u64)
        {
            let mut det_grads = pipe.detector.params.zeros_like();
            let mut gen_grads = pipe.generator.params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in &batch {
                let s = &train.samples[i];
                let gcache = pipe.generator.forward(&s.image);
                let delta = &gcache.developer_output().clone();
                let developed = apply_developer(&s.image, delta, doses[i])?;
                let dcache = pipe.detector.forward(&developed);
                let (l, dlogit) = bce_loss_dlogit(dcache.logit, s.label);
                loss += l * scale;
                let d_dev = pipe.detector.backward(&dcache, dlogit * scale, &mut det_grads);
                if cfg.update_generator && doses[i] > 0.0 {
                    let mut mask = &s.image + &(delta * doses[i]);
                    mask.mapv_inplace(|u| if u > 0.0 && u < 1.0 { 1.0 } else { 0.0 });
                    let ddelta = d_dev * mask * doses[i];
                    pipe.generator.backward(&gcache, &ddelta, &mut gen_grads);
                }
            }
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("NaN/inf stage-2 loss at epoch {epoch}")));
            }
            det_opt.step(&mut pipe.detector.params, &det_grads);
            if cfg.update_generator {
                gen_opt.step(&mut pipe.generator.params, &gen_grads);
            }
            epoch_loss += loss;
            n_batches += 1;
        }
        let mean = epoch_loss / n_batches as f64;
        log(epoch, mean);
        if first.is_none() {
            first = Some(mean);
        }
        last = mean;
    }
    if cfg.epochs > 1 && last >= first.unwrap() {
        return Err(Error::Numeric(format!(
            "stage-2 loss did not decrease ({} -> {last})",
            first.unwrap()
        )));
    }
    if !cfg.update_generator {
        debug_assert_eq!(pipe.generator.params.content_hash(), gen_hash);
    }
    Ok(pipe)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::nn::params::hex_string(&Sha256::digest(&bytes)))
}

const BUNDLE_FILES: [&str; 4] = ["detector.ckpt", "generator.ckpt", "dict.bin", "extractor.ckpt"];

/// Persist the pipeline as a directory bundle with a hash manifest.
pub fn save_bundle(pipe: &Pipeline, dir: &Path, meta: BTreeMap<String, String>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    pipe.detector.save(&dir.join("detector.ckpt"), meta.clone())?;
    pipe.generator.save(&dir.join("generator.ckpt"), meta.clone())?;
    save_dict(&pipe.dict, &dir.join("dict.bin"))?;
    pipe.frozen_extractor.save(&dir.join("extractor.ckpt"), meta.clone())?;
    let mut manifest = String::from("devdet-bundle v1\n");
    manifest.push_str(&format!("base_dose = {:e}\n", pipe.base_dose));
    manifest.push_str(&format!(
        "dose_mode = {}\n",
        match pipe.dose_mode {
            DoseMode::Fixed => "fixed",
            DoseMode::Adaptive => "adaptive",
        }
    ));
    for (k, v) in &meta {
        manifest.push_str(&format!("meta {k} = {v}\n"));
    }
    for f in BUNDLE_FILES {
        manifest.push_str(&format!("hash {f} = {}\n", sha256_file(&dir.join(f))?));
    }
    std::fs::write(dir.join("bundle.txt"), manifest).map_err(|e| Error::io(dir, e))
}

/// Load a bundle, verifying every file hash and the extractor/dictionary
/// pairing.
pub fn load_bundle(dir: &Path) -> Result<Pipeline> {
    let mpath = dir.join("bundle.txt");
    if !mpath.exists() {
        return Err(Error::MissingArtifact {
            artifact: mpath.display().to_string(),
            producer: "daft".into(),
        });
    }
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let bad = |m: String| Error::Format { path: mpath.clone(), message: m };
    let mut lines = text.lines();
    if lines.next() != Some("devdet-bundle v1") {
        return Err(bad("bad magic".into()));
    }
    let mut base_dose = None;
    let mut dose_mode = DoseMode::Adaptive;
    for line in lines {
        if let Some(v) = line.strip_prefix("base_dose = ") {
            base_dose = Some(v.parse::<f64>().map_err(|_| bad("bad base_dose".into()))?);
        } else if let Some(v) = line.strip_prefix("dose_mode = ") {
            dose_mode = match v {
                "fixed" => DoseMode::Fixed,
                "adaptive" => DoseMode::Adaptive,
                other => return Err(bad(format!("bad dose_mode {other}"))),
            };
        } else if let Some(rest) = line.strip_prefix("hash ") {
            let (f, expect) = rest.split_once(" = ").ok_or_else(|| bad("bad hash line".into()))?;
            let actual = sha256_file(&dir.join(f))?;
            if actual != expect {
                return Err(Error::ChainMismatch(format!(
                    "bundle file {f} hash {actual} does not match recorded {expect}"
                )));
            }
        }
    }
    let (detector, _) = Detector::load(&dir.join("detector.ckpt"))?;
    let (generator, _) = DevGen::load(&dir.join("generator.ckpt"))?;
    let dict = load_dict(&dir.join("dict.bin"))?;
    let (frozen_extractor, _) = Detector::load(&dir.join("extractor.ckpt"))?;
    let pipe = Pipeline {
        detector,
        generator,
        dict,
        frozen_extractor,
        base_dose: base_dose.ok_or_else(|| bad("missing base_dose".into()))?,
        dose_mode,
    };
    pipe.validate()?;
    Ok(pipe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::dosedict;
    use ndarray::{Array2, Array3};
    use rand::Rng;

    fn rand_image(size: usize, seed: u64) -> Image {
        let mut r = crate::rng::stream(seed, "daft-test");
        Array3::from_shape_fn((3, size, size), |_| r.gen_range(0.05..0.95))
    }

    fn toy_pipeline(seed: u64) -> Pipeline {
        let extractor = Detector::new(4, seed);
        let feats: Vec<Image> = (0..12).map(|i| rand_image(16, 500 + seed * 100 + i)).collect();
        let z = {
            let cols: Vec<Vec<f64>> = feats.iter().map(|im| extractor.predict(im).1).collect();
            let mut z = Array2::zeros((4, cols.len()));
            for (i, c) in cols.iter().enumerate() {
                for (j, v) in c.iter().enumerate() {
                    z[[j, i]] = *v;
                }
            }
            z
        };
        let (mut dict, _) =
            dosedict::fit(&z, 2, 0.1, seed, &extractor.params.content_hash()).unwrap();
        dosedict::calibrate(&mut dict, &z, 0.05, 0.95).unwrap();
        Pipeline {
            detector: extractor.clone(),
            generator: DevGen::new(seed + 1),
            dict,
            frozen_extractor: extractor,
            base_dose: 0.25,
            dose_mode: DoseMode::Adaptive,
        }
    }

    #[test]
    fn infer_composes_module_calls() {
        let pipe = toy_pipeline(1);
        let img = rand_image(16, 900);
        let r = pipe.infer(&img).unwrap();
        // recompose from module-level pieces
        let (_, feat) = pipe.frozen_extractor.predict(&img);
        let e = reconstruction_error(&pipe.dict, Array1::from(feat).view()).unwrap();
        let dose = adaptive_dose(&pipe.dict, e, pipe.base_dose);
        let delta = pipe.generator.developer(&img);
        let developed = apply_developer(&img, &delta, dose).unwrap();
        let conf = pipe.detector.predict(&developed).0;
        assert!((r.confidence - conf).abs() < 1e-10);
        assert!((r.dose_used - dose).abs() < 1e-15);
    }

    #[test]
    fn infer_deterministic() {
        let pipe = toy_pipeline(2);
        let img = rand_image(16, 901);
        let a = pipe.infer(&img).unwrap();
        let b = pipe.infer(&img).unwrap();
        assert_eq!(a.confidence, b.confidence);
        assert_eq!(a.dose_used, b.dose_used);
        assert_eq!(a.developed_image, b.developed_image);
    }

    #[test]
    fn high_error_input_gets_zero_dose_and_raw_confidence() {
        let mut pipe = toy_pipeline(3);
        // force hi below any achievable error
        pipe.dict.calib_lo = 0.0;
        pipe.dict.calib_hi = 1e-12;
        let img = rand_image(16, 902);
        let r = pipe.infer(&img).unwrap();
        assert_eq!(r.dose_used, 0.0);
        assert_eq!(r.confidence, pipe.detector.predict(&img).0);
        assert_eq!(r.developed_image, img);
    }

    #[test]
    fn zero_base_dose_inference_equals_detector() {
        let mut pipe = toy_pipeline(4);
        pipe.base_dose = 0.0;
        for i in 0..5 {
            let img = rand_image(16, 910 + i);
            let r = pipe.infer(&img).unwrap();
            assert_eq!(r.confidence, pipe.detector.predict(&img).0);
        }
    }

    #[test]
    fn finetune_freezes_generator_and_reduces_loss() {
        let pipe = toy_pipeline(5);
        let gen_hash = pipe.generator.params.content_hash();
        let dict_before = pipe.dict.dictionary.clone();
        let samples: Vec<Sample> = (0..8)
            .map(|i| Sample {
                image: rand_image(16, 950 + i),
                label: (i % 2) as u8,
                domain_id: 0,
                sample_id: format!("s{i}"),
            })
            .collect();
        let set = SampleSet { samples, name: "train".into() };
        let base = TrainConfig { learning_rate: 1e-2, batch_size: 4, seed: 3, ..Default::default() };
        let cfg = DaftConfig { epochs: 6, ..Default::default() };
        let mut losses = Vec::new();
        let pipe = finetune(pipe, &set, &base, &cfg, |_, l| losses.push(l)).unwrap();
        assert_eq!(pipe.generator.params.content_hash(), gen_hash);
        assert_eq!(pipe.dict.dictionary, dict_before);
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn bundle_roundtrip_and_tamper_detection() {
        let pipe = toy_pipeline(6);
        let dir = tempfile::tempdir().unwrap();
        let bdir = dir.path().join("bundle");
        save_bundle(&pipe, &bdir, Default::default()).unwrap();
        let back = load_bundle(&bdir).unwrap();
        let img = rand_image(16, 960);
        assert_eq!(pipe.infer(&img).unwrap().confidence, back.infer(&img).unwrap().confidence);
        // tamper with the dictionary file
        let dpath = bdir.join("dict.bin");
        let mut bytes = std::fs::read(&dpath).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0xff;
        std::fs::write(&dpath, bytes).unwrap();
        assert!(matches!(load_bundle(&bdir), Err(Error::ChainMismatch(_))));
    }

    #[test]
    fn missing_bundle_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_bundle(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }
}
