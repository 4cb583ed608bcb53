use devdet::config::RunConfig;
use devdet::daft::{self, DaftConfig, DoseMode, Pipeline};
use devdet::data;
use devdet::datagen::{Manifest, Split};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use devdet::ffdev::{self, DevGen};
use devdet::mining::{self, MiningConfig, Strategy};
use devdet::rng;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashSet;

fn main() -> devdet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/full4"));
    let gen_path = args.get(2).map(String::as_str).unwrap_or("/tmp/gen_er640_e40.ckpt");

    let mut cfg = RunConfig::default();
    cfg.apply_seed(7);
    let (det, _) = Detector::load(&out.join("detector_base.ckpt"))?;
    let (gen, _) = DevGen::load(std::path::Path::new(gen_path))?;
    let manifest = Manifest::load(&out.join("bench/manifest.txt"))?;
    let all = data::load_samples(&manifest, &out.join("bench"))?;
    let wanted: HashSet<String> = manifest
        .records
        .iter()
        .filter(|r| r.split != Split::Test)
        .map(|r| r.sample_id())
        .collect();
    let pool = all.filter("train+val", |s| wanted.contains(&s.sample_id));
    let rows = mining::load_score_table(&out.join("scores_train.tsv"))?;
    let mc = MiningConfig { k_hard_fake: 64, k_easy_real: 640, strategy: Strategy::HfEr };
    let (hf, _) = mining::mine_scores(&rows, &pool, &mc)?;
    let d = det.feature_dim;
    let feat = |set: &data::SampleSet| {
        let mut z = Array2::zeros((d, set.len()));
        for (j, s) in set.samples.iter().enumerate() {
            let (_, f) = det.predict(&s.image);
            for (i, v) in f.iter().enumerate() {
                z[[i, j]] = *v;
            }
        }
        z
    };
    let z_hf = feat(&hf);
    let (mut dict, _) = dosedict::fit(&z_hf, 16, 0.1, cfg.dict_seed(), &det.params.content_hash())?;
    let z_pool = feat(&pool);
    dosedict::calibrate(&mut dict, &z_pool, 0.05, 0.95)?;
    println!("dict calib [{:.4},{:.4}]", dict.calib_lo, dict.calib_hi);

    let mk_pipe = |mode: DoseMode| Pipeline {
        detector: det.clone(),
        generator: gen.clone(),
        dict: dict.clone(),
        frozen_extractor: det.clone(),
        base_dose: 0.25,
        dose_mode: mode,
    };
    let daft_cfg = DaftConfig { epochs: 10, ..Default::default() };
    let adaptive = daft::finetune(mk_pipe(DoseMode::Adaptive), &pool, &cfg.train, &daft_cfg, |_, _| {})?;
    let fx_cfg = DaftConfig { epochs: 10, dose_mode: DoseMode::Fixed, ..Default::default() };
    let fixed = daft::finetune(mk_pipe(DoseMode::Fixed), &pool, &cfg.train, &fx_cfg, |_, _| {})?;
    println!("finetunes done");

    let test_reals = all.filter("test-reals-in", |s| {
        s.label == 0
            && s.domain_id != 4
            && manifest
                .records
                .iter()
                .any(|r| r.sample_id() == s.sample_id && r.split == Split::Test)
    });
    println!("{} in-domain test reals", test_reals.len());

    for (kind, levels) in [
        ("gauss", vec![0.0, 0.03, 0.06, 0.10, 0.15]),
        ("lowfreq", vec![0.05, 0.10, 0.20]),
    ] {
        for &lvl in &levels {
            let mut per: std::collections::BTreeMap<u32, [usize; 4]> = Default::default();
            let mut errs = Vec::new();
            let mut scores = Vec::new();
            let mut doses = Vec::new();
            for (si, s) in test_reals.samples.iter().enumerate() {
                let mut srng = rng::stream_indexed(7, "real-drift", &[s.domain_id as u64, si as u64]);
                let mut img = s.image.clone();
                match kind {
                    "gauss" => img.mapv_inplace(|v| {
                        let g: f64 = StandardNormal.sample(&mut srng);
                        (v + g * lvl).clamp(0.0, 1.0)
                    }),
                    _ => {
                        let (_, h, w) = img.dim();
                        let fy: f64 = srng.gen_range(0.5..1.5);
                        let fx: f64 = srng.gen_range(0.5..1.5);
                        for c in 0..3 {
                            for y in 0..h {
                                for x in 0..w {
                                    let v = (std::f64::consts::TAU
                                        * (fy * y as f64 / h as f64 + fx * x as f64 / w as f64))
                                        .sin();
                                    img[[c, y, x]] = (img[[c, y, x]] + lvl * v).clamp(0.0, 1.0);
                                }
                            }
                        }
                    }
                }
                let (sc, f) = det.predict(&img);
                scores.push(sc);
                let e = dosedict::reconstruction_error(&dict, ndarray::Array1::from_vec(f).view())?;
                errs.push(e);
                doses.push(dosedict::adaptive_dose(&dict, e, 0.25));
                let entry = per.entry(s.domain_id).or_default();
                entry[0] += (sc < 0.5) as usize;
                let dev = ffdev::apply_developer(&img, &gen.developer(&img), 0.25)?;
                entry[1] += (det.predict(&dev).0 < 0.5) as usize;
                entry[2] += (fixed.infer(&img)?.confidence < 0.5) as usize;
                entry[3] += (adaptive.infer(&img)?.confidence < 0.5) as usize;
            }
            let pct = |v: &mut Vec<f64>, p: f64| {
                v.sort_by(f64::total_cmp);
                v[((v.len() as f64 - 1.0) * p) as usize]
            };
            println!(
                "{kind} {lvl:.2}: err p50/p90 {:.3}/{:.3} dose p50/p10 {:.3}/{:.3} score p90/p99 {:.4}/{:.4}",
                pct(&mut errs.clone(), 0.5),
                pct(&mut errs, 0.9),
                pct(&mut doses.clone(), 0.5),
                pct(&mut doses, 0.1),
                pct(&mut scores.clone(), 0.9),
                pct(&mut scores, 0.99),
            );
            for (dm, e) in &per {
                println!(
                    "  d{dm} reals/40: base {} ffdev {} fixed {} adaptive {}",
                    e[0], e[1], e[2], e[3]
                );
            }
        }
    }
    Ok(())
}
