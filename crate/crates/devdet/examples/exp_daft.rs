use devdet::config::RunConfig;
use devdet::daft::{self, DaftConfig, DoseMode, Pipeline};
use devdet::data;
use devdet::datagen::{self, DomainSpec, Manifest, Split, TextureKind, TraceKind};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use devdet::ffdev::{self, DevGen};
use devdet::mining::{self, MiningConfig, Strategy};
use devdet::rng;
use ndarray::Array2;
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

    // dictionary: production settings
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
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10);
    let lr_scale: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let mut daft_cfg = DaftConfig { epochs, lr_scale, ..Default::default() };
    let t = std::time::Instant::now();
    let adaptive = daft::finetune(mk_pipe(DoseMode::Adaptive), &pool, &cfg.train, &daft_cfg, |_, _| {})?;
    println!("adaptive daft wall {:?}", t.elapsed());
    daft_cfg.dose_mode = DoseMode::Fixed;
    let t = std::time::Instant::now();
    let fixed = daft::finetune(mk_pipe(DoseMode::Fixed), &pool, &cfg.train, &daft_cfg, |_, _| {})?;
    println!("fixed daft wall {:?}", t.elapsed());

    // in-domain test m_acc for base / ffdev_only / fixed / adaptive
    let test_in = all.filter("test-in", |s| {
        s.domain_id != 4
            && manifest
                .records
                .iter()
                .any(|r| r.sample_id() == s.sample_id && r.split == Split::Test)
    });
    // per domain: [variant][class] correct counts, classes have 40 samples each
    let mut per: std::collections::BTreeMap<u32, [[usize; 2]; 4]> = Default::default();
    for s in &test_in.samples {
        let want = s.label == 1;
        let cls = s.label as usize;
        let e = per.entry(s.domain_id).or_default();
        e[0][cls] += ((det.predict(&s.image).0 >= 0.5) == want) as usize;
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        e[1][cls] += ((det.predict(&dev).0 >= 0.5) == want) as usize;
        e[2][cls] += ((fixed.infer(&s.image)?.confidence >= 0.5) == want) as usize;
        e[3][cls] += ((adaptive.infer(&s.image)?.confidence >= 0.5) == want) as usize;
    }
    let mut m = [0.0; 4];
    for (dm, e) in &per {
        let row: Vec<String> = (0..4)
            .map(|i| format!("r{:>2}/f{:>2}", e[i][0], e[i][1]))
            .collect();
        println!("d{dm}: base {} ffdev {} fixed {} adaptive {}", row[0], row[1], row[2], row[3]);
        for i in 0..4 {
            m[i] += (e[i][0] + e[i][1]) as f64 / 80.0 / per.len() as f64;
        }
    }
    println!(
        "in m_acc: base {:.4} ffdev_only {:.4} fixed {:.4} adaptive {:.4}",
        m[0], m[1], m[2], m[3]
    );

    // holdout candidates through all four variants
    for (name, color) in [("grad-d2+0.12", [0.32, 0.58, 0.45])] {
        for amp in [0.10, 0.12] {
            let sp = DomainSpec {
                domain_id: 4,
                texture_kind: TextureKind::Gradient,
                color_mean: color,
                color_jitter: 0.03,
                trace_amplitude: amp,
                trace_kind: TraceKind::ChannelOffsetPatch,
            };
            let mut srng = rng::stream(991, name);
            let n_per = 60;
            // [variant][class] correct counts; variants: base, ffdev, fixed, adaptive
            let mut c = [[0usize; 2]; 4];
            let mut dose_sum = 0.0;
            for _ in 0..n_per {
                let real = datagen::render_base(&sp, 32, &mut srng);
                let fake = datagen::inject_trace(&real, &sp, &mut srng);
                for (img, label) in [(&real, 0usize), (&fake, 1)] {
                    let want = label == 1;
                    c[0][label] += ((det.predict(img).0 >= 0.5) == want) as usize;
                    let dev = ffdev::apply_developer(img, &gen.developer(img), 0.25)?;
                    c[1][label] += ((det.predict(&dev).0 >= 0.5) == want) as usize;
                    c[2][label] += ((fixed.infer(img)?.confidence >= 0.5) == want) as usize;
                    let r = adaptive.infer(img)?;
                    c[3][label] += ((r.confidence >= 0.5) == want) as usize;
                    dose_sum += r.dose_used;
                }
            }
            let acc = |i: usize| (c[i][0] + c[i][1]) as f64 / (2.0 * n_per as f64);
            println!(
                "{name} a={amp:.2}: base {:.3} (r{:.2}/f{:.2}) ffdev {:.3} fixed {:.3} adaptive {:.3} meandose {:.3}",
                acc(0),
                c[0][0] as f64 / n_per as f64,
                c[0][1] as f64 / n_per as f64,
                acc(1),
                acc(2),
                acc(3),
                dose_sum / (2.0 * n_per as f64)
            );
        }
    }
    Ok(())
}
