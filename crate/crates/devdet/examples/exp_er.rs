use devdet::config::RunConfig;
use devdet::data;
use devdet::datagen::{self, DomainSpec, Manifest, Split, TextureKind, TraceKind};
use devdet::detector::{BinaryDetector, Detector};
use devdet::ffdev::{self, DevGen};
use devdet::mining::{self, MiningConfig, Strategy};
use devdet::rng;
use std::collections::HashSet;

fn main() -> devdet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/full4"));
    let k_er: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(640);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(40);
    let gen_path = std::path::PathBuf::from(format!("/tmp/gen_er{k_er}_e{epochs}.ckpt"));

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
    let rows = mining::load_score_table(&out.join("scores_train.tsv"))?;
    let mc = MiningConfig { k_hard_fake: 64, k_easy_real: k_er, strategy: Strategy::HfEr };
    let (hf, er) = mining::mine_scores(&rows, &pool, &mc)?;
    println!("hf {} er {}", hf.len(), er.len());

    let gen = if gen_path.exists() {
        DevGen::load(&gen_path)?.0
    } else {
        let mut s1 = cfg.stage1.clone();
        s1.epochs = epochs;
        let t = std::time::Instant::now();
        let mut joined = hf.clone();
        joined.samples.extend(er.samples.iter().cloned());
        joined.name = "s1".into();
        let g = ffdev::train_stage1(DevGen::new(s1.seed), &det, &joined, &s1, |e, l, _| {
            if e % 10 == 0 {
                println!("epoch {e} loss {l:.5}");
            }
        })?;
        println!("stage1 wall {:?}", t.elapsed());
        g.save(&gen_path, Default::default())?;
        g
    };

    // ER preservation + HF rise through the base detector
    let mut kept = 0;
    for s in &er.samples {
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        if det.predict(&dev).0 < 0.5 {
            kept += 1;
        }
    }
    let mut rise = 0.0;
    for s in &hf.samples {
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        rise += det.predict(&dev).0 - det.predict(&s.image).0;
    }
    println!(
        "ER preserved {}/{} = {:.4}   HF mean rise {:.4}",
        kept,
        er.len(),
        kept as f64 / er.len() as f64,
        rise / hf.len() as f64
    );

    // in-domain test: base vs ffdev-only accuracy per domain
    let test_in = all.filter("test-in", |s| {
        s.domain_id != 4
            && manifest
                .records
                .iter()
                .any(|r| r.sample_id() == s.sample_id && r.split == Split::Test)
    });
    let mut acc: std::collections::BTreeMap<u32, [f64; 4]> = Default::default();
    for s in &test_in.samples {
        let base_ok = (det.predict(&s.image).0 >= 0.5) == (s.label == 1);
        let dev = ffdev::apply_developer(&s.image, &gen.developer(&s.image), 0.25)?;
        let dev_ok = (det.predict(&dev).0 >= 0.5) == (s.label == 1);
        let e = acc.entry(s.domain_id).or_default();
        e[0] += base_ok as u8 as f64;
        e[1] += dev_ok as u8 as f64;
        e[2] += 1.0;
        if s.label == 0 {
            e[3] += dev_ok as u8 as f64;
        }
    }
    let (mut mb, mut md) = (0.0, 0.0);
    for (d, e) in &acc {
        println!(
            "d{d}: base acc {:.4} ffdev acc {:.4} (dev real-correct {:.0}/40)",
            e[0] / e[2],
            e[1] / e[2],
            e[3]
        );
        mb += e[0] / e[2] / acc.len() as f64;
        md += e[1] / e[2] / acc.len() as f64;
    }
    println!("in-domain m_acc base {mb:.4} ffdev_only {md:.4}");

    // holdout candidates: gradient colors stepping away from d2, two amps
    println!("\nholdout sweep (trace amp already deployment-scaled):");
    for (name, color) in [
        ("grad-d2+0.05", [0.33, 0.62, 0.39]),
        ("grad-d2+0.09", [0.33, 0.60, 0.42]),
        ("grad-d2+0.14", [0.32, 0.57, 0.47]),
        ("grad-d2+0.20", [0.30, 0.55, 0.52]),
        ("grad-d2+0.28", [0.29, 0.50, 0.58]),
    ] {
        for amp in [0.06, 0.10, 0.14] {
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
            let mut c = [0usize; 4];
            for _ in 0..n_per {
                let real = datagen::render_base(&sp, 32, &mut srng);
                let fake = datagen::inject_trace(&real, &sp, &mut srng);
                for (img, label) in [(&real, 0u8), (&fake, 1u8)] {
                    let s = det.predict(img).0;
                    let ok = (s >= 0.5) == (label == 1);
                    let dev = ffdev::apply_developer(img, &gen.developer(img), 0.25)?;
                    let okd = (det.predict(&dev).0 >= 0.5) == (label == 1);
                    if label == 0 {
                        c[0] += ok as usize;
                        c[2] += okd as usize;
                    } else {
                        c[1] += ok as usize;
                        c[3] += okd as usize;
                    }
                }
            }
            let f = |x: usize| x as f64 / n_per as f64;
            println!(
                "{name} a={amp}: base r={:.3} f={:.3} acc={:.3} | ffdev r={:.3} f={:.3} acc={:.3}",
                f(c[0]),
                f(c[1]),
                (f(c[0]) + f(c[1])) / 2.0,
                f(c[2]),
                f(c[3]),
                (f(c[2]) + f(c[3])) / 2.0
            );
        }
    }
    Ok(())
}
