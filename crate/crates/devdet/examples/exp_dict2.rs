use devdet::config::RunConfig;
use devdet::data;
use devdet::datagen::{Manifest, Split};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use devdet::mining::{self, MiningConfig, Strategy};
use ndarray::{Array1, Array2};
use std::collections::HashSet;

fn pct(v: &mut Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() as f64 - 1.0) * p) as usize]
}

fn main() -> devdet::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "/tmp/full4".into()));
    let mut cfg = RunConfig::default();
    cfg.apply_seed(7);
    let (det, _) = Detector::load(&out.join("detector_base.ckpt"))?;
    let manifest = Manifest::load(&out.join("bench/manifest.txt"))?;
    let all = data::load_samples(&manifest, &out.join("bench"))?;
    let wanted: HashSet<String> = manifest.records.iter().filter(|r| r.split != Split::Test).map(|r| r.sample_id()).collect();
    let pool = all.filter("train+val", |s| wanted.contains(&s.sample_id));
    let rows = mining::load_score_table(&out.join("scores_train.tsv"))?;
    let mc = MiningConfig { k_hard_fake: 64, k_easy_real: 640, strategy: Strategy::HfEr };
    let (hf, _) = mining::mine_scores(&rows, &pool, &mc)?;
    let d = det.feature_dim;
    let feat = |set: &data::SampleSet| {
        let mut z = Array2::zeros((d, set.len()));
        for (j, s) in set.samples.iter().enumerate() {
            let (_, f) = det.predict(&s.image);
            for (i, v) in f.iter().enumerate() { z[[i, j]] = *v; }
        }
        z
    };
    let z_hf = feat(&hf);
    let z_pool = feat(&pool);
    let test = all.split("test", &manifest, Split::Test);
    for (atoms, lambda) in [(2usize, 0.1f64), (4, 0.1), (4, 0.3), (8, 0.1), (8, 0.3), (16, 0.3), (16, 0.6)] {
        let (mut m, _) = dosedict::fit(&z_hf, atoms, lambda, cfg.dict_seed(), "x")?;
        dosedict::calibrate(&mut m, &z_pool, 0.05, 0.95)?;
        println!("\natoms={atoms} lambda={lambda} calib=[{:.4},{:.4}]", m.calib_lo, m.calib_hi);
        for dm in 0..5u32 {
            for label in [0u8, 1] {
                let mut errs: Vec<f64> = test.samples.iter()
                    .filter(|s| s.domain_id == dm && s.label == label)
                    .map(|s| {
                        let (_, f) = det.predict(&s.image);
                        dosedict::reconstruction_error(&m, Array1::from_vec(f).view()).unwrap()
                    }).collect();
                if errs.is_empty() { continue; }
                let (a, b, c) = (pct(&mut errs.clone(), 0.1), pct(&mut errs.clone(), 0.5), pct(&mut errs, 0.9));
                println!("  d{dm}-{label}: err p10/p50/p90 {a:.4}/{b:.4}/{c:.4} dose {:.3}/{:.3}/{:.3}",
                    dosedict::adaptive_dose(&m, a, 0.25), dosedict::adaptive_dose(&m, b, 0.25), dosedict::adaptive_dose(&m, c, 0.25));
            }
        }
    }
    Ok(())
}
