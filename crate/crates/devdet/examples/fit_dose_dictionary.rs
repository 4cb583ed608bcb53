//! Fit the sparse dictionary on hard-fake features, calibrate the dose map,
//! and show how the adaptive dose separates hard fakes (low reconstruction
//! error, high dose) from the rest of the training set.
//!
//!     cargo run --release --example fit_dose_dictionary -- [OUT_DIR]

use devdet::cli::Runner;
use devdet::config::RunConfig;
use devdet::detector::BinaryDetector;
use devdet::dosedict::{adaptive_dose, reconstruction_error};
use ndarray::Array1;

fn main() -> devdet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "artifacts".into());
    let mut cfg = RunConfig::default();
    cfg.apply_seed(cfg.seed);
    let runner = Runner::new(cfg, &out);
    for step in ["synth", "pretrain", "mine"] {
        match step {
            "synth" if !runner.manifest_path().exists() => {
                runner.cmd_synth()?;
            }
            "pretrain" if !runner.detector_path().exists() => {
                runner.cmd_pretrain()?;
            }
            "mine" if !runner.scores_path().exists() => {
                runner.cmd_mine()?;
            }
            _ => {}
        }
    }
    let model = runner.cmd_fitdict()?;
    println!(
        "dictionary: {} atoms / {}-d features, calibration anchors [{:.4}, {:.4}]",
        model.num_atoms(),
        model.feature_dim(),
        model.calib_lo,
        model.calib_hi
    );

    let (det, _) = devdet::detector::Detector::load(&runner.detector_path())?;
    let set = devdet::data::load_manifest(&runner.manifest_path())?;
    let manifest = devdet::datagen::Manifest::load(&runner.manifest_path())?;
    let train = set.split("train", &manifest, devdet::datagen::Split::Train);
    let eps = runner.cfg.stage1.dose_epsilon;
    let mut by_label = [(0.0, 0usize), (0.0, 0usize)];
    for s in &train.samples {
        let (_, feat) = det.predict(&s.image);
        let e = reconstruction_error(&model, Array1::from(feat).view())?;
        let dose = adaptive_dose(&model, e, eps);
        by_label[s.label as usize].0 += dose;
        by_label[s.label as usize].1 += 1;
    }
    println!("mean adaptive dose: reals {:.4}, fakes {:.4} (base {eps})",
        by_label[0].0 / by_label[0].1 as f64,
        by_label[1].0 / by_label[1].1 as f64);
    Ok(())
}
