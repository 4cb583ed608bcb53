use devdet::config::RunConfig;
use devdet::daft::{self, DaftConfig, DoseMode, Pipeline};
use devdet::data;
use devdet::datagen::{Manifest, Split};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use devdet::ffdev::{self, DevGen};
use devdet::mining::{self, MiningConfig, Strategy};
use ndarray::Array2;
use std::collections::HashSet;

fn main() -> devdet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/run6"));
    let k_er: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(640);
    let s1_epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(30);
    let daft_epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10);

    let mut cfg = RunConfig::default();
    cfg.apply_seed(7);
    let (det, _) = Detector::load(&out.join("detector_base.ckpt"))?;
    let manifest = Manifest::load(&out.join("bench/manifest.txt"))?;
    let all = data::load_samples(&manifest, &out.join("bench"))?;
    let wanted: HashSet<String> = manifest
        .records
        .iter()
        .filter(|r| r.split != Split::Test)
        .map(|r| r.sample_id())
        .collect();
    let pool = all.filter("train+val", |s| wanted.contains(&s.sample_id));
    println!("pool {} samples", pool.len());
    let rows = mining::load_score_table(&out.join("scores_train.tsv"))?;
    let mc = MiningConfig { k_hard_fake: 64, k_easy_real: k_er, strategy: Strategy::HfEr };
    let (hf, er) = mining::mine_scores(&rows, &pool, &mc)?;
    println!("hf {} er {}", hf.len(), er.len());

    let gen_path = out.join(format!("gen_er{k_er}_e{s1_epochs}.ckpt"));
    let gen = if gen_path.exists() {
        DevGen::load(&gen_path)?.0
    } else {
        let mut s1 = cfg.stage1.clone();
        s1.epochs = s1_epochs;
        let mut joined = hf.clone();
        joined.samples.extend(er.samples.iter().cloned());
        joined.name = "s1".into();
        let t = std::time::Instant::now();
        let g = ffdev::train_stage1(DevGen::new(s1.seed), &det, &joined, &s1, |e, l, _| {
            if e % 10 == 0 { println!("epoch {e} loss {l:.5}"); }
        })?;
        println!("stage1 wall {:?}", t.elapsed());
        g.save(&gen_path, Default::default())?;
        g
    };

    let mut kept = 0;
    for s in &er.samples {
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        if det.predict(&dev).0 < 0.5 { kept += 1; }
    }
    let mut rise = 0.0;
    for s in &hf.samples {
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        rise += det.predict(&dev).0 - det.predict(&s.image).0;
    }
    println!("ER preserved {}/{} = {:.4}   HF mean rise {:.4}", kept, er.len(), kept as f64 / er.len() as f64, rise / hf.len() as f64);

    // dictionary
    let d = det.feature_dim;
    let feat = |set: &data::SampleSet| {
        let mut z = Array2::zeros((d, set.len()));
        for (j, s) in set.samples.iter().enumerate() {
            let (_, f) = det.predict(&s.image);
            for (i, v) in f.iter().enumerate() { z[[i, j]] = *v; }
        }
        z
    };
    let t = std::time::Instant::now();
    let (mut dict, _) = dosedict::fit(&feat(&hf), 16, 0.1, cfg.dict_seed(), &det.params.content_hash())?;
    dosedict::calibrate(&mut dict, &feat(&pool), 0.05, 0.95)?;
    println!("dict wall {:?} calib [{:.4},{:.4}]", t.elapsed(), dict.calib_lo, dict.calib_hi);

    // per-domain test dose stats
    let test = all.filter("test", |s| !wanted.contains(&s.sample_id));
    for dm in 0..6u32 {
        for cls in [0u8, 1u8] {
            let mut errs = Vec::new();
            let mut doses = Vec::new();
            for s in test.samples.iter().filter(|s| s.domain_id == dm && s.label == cls) {
                let (_, f) = det.predict(&s.image);
                let e = dosedict::reconstruction_error(&dict, ndarray::Array1::from_vec(f).view())?;
                errs.push(e);
                doses.push(dosedict::adaptive_dose(&dict, e, 0.25));
            }
            if errs.is_empty() { continue; }
            let pct = |v: &mut Vec<f64>, p: f64| { v.sort_by(f64::total_cmp); v[((v.len() as f64 - 1.0) * p) as usize] };
            println!("d{dm} {} err p10/p50/p90 {:.4}/{:.4}/{:.4} dose p10/p50/p90 {:.3}/{:.3}/{:.3}",
                if cls == 0 { "real" } else { "fake" },
                pct(&mut errs.clone(), 0.1), pct(&mut errs.clone(), 0.5), pct(&mut errs, 0.9),
                pct(&mut doses.clone(), 0.1), pct(&mut doses.clone(), 0.5), pct(&mut doses, 0.9));
        }
    }

    let mk_pipe = |mode: DoseMode| Pipeline {
        detector: det.clone(),
        generator: gen.clone(),
        dict: dict.clone(),
        frozen_extractor: det.clone(),
        base_dose: 0.25,
        dose_mode: mode,
    };
    let mut dc = DaftConfig { epochs: daft_epochs, ..Default::default() };
    let t = std::time::Instant::now();
    let adaptive = daft::finetune(mk_pipe(DoseMode::Adaptive), &pool, &cfg.train, &dc, |_, _| {})?;
    println!("adaptive daft wall {:?}", t.elapsed());
    dc.dose_mode = DoseMode::Fixed;
    let fixed = daft::finetune(mk_pipe(DoseMode::Fixed), &pool, &cfg.train, &dc, |_, _| {})?;

    // per-domain test accuracy for base / ffdev_only / fixed / adaptive
    let mut per: std::collections::BTreeMap<u32, [[usize; 2]; 4]> = Default::default();
    let mut n_per: std::collections::BTreeMap<u32, [usize; 2]> = Default::default();
    for s in &test.samples {
        let want = s.label == 1;
        let cls = s.label as usize;
        n_per.entry(s.domain_id).or_default()[cls] += 1;
        let e = per.entry(s.domain_id).or_default();
        e[0][cls] += ((det.predict(&s.image).0 >= 0.5) == want) as usize;
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        e[1][cls] += ((det.predict(&dev).0 >= 0.5) == want) as usize;
        e[2][cls] += ((fixed.infer(&s.image)?.confidence >= 0.5) == want) as usize;
        e[3][cls] += ((adaptive.infer(&s.image)?.confidence >= 0.5) == want) as usize;
    }
    let mut m = [0.0; 4]; // in-domain m_acc
    let mut hold = [0.0; 4];
    let mut n_in = 0.0;
    for (dm, e) in &per {
        let n = n_per[dm];
        let row: Vec<String> = (0..4).map(|i| format!("r{:>2}/f{:>2}", e[i][0], e[i][1])).collect();
        println!("d{dm} (n {}r/{}f): base {} ffdev {} fixed {} adaptive {}", n[0], n[1], row[0], row[1], row[2], row[3]);
        let acc = |i: usize| (e[i][0] as f64 / n[0] as f64 + e[i][1] as f64 / n[1] as f64) / 2.0;
        if *dm == 5 {
            for i in 0..4 { hold[i] = acc(i); }
        } else {
            for i in 0..4 { m[i] += acc(i); }
            n_in += 1.0;
        }
    }
    println!("in m_acc: base {:.4} ffdev_only {:.4} fixed {:.4} adaptive {:.4}",
        m[0] / n_in, m[1] / n_in, m[2] / n_in, m[3] / n_in);
    println!("holdout acc: base {:.4} ffdev_only {:.4} fixed {:.4} adaptive {:.4}",
        hold[0], hold[1], hold[2], hold[3]);
    Ok(())
}
