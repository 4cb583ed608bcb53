use devdet::config::RunConfig;
use devdet::data;
use devdet::datagen::{self, DomainSpec, Split, TextureKind, TraceKind};
use devdet::detector::{BinaryDetector, Detector};
use devdet::metrics::{self, ScoredSample};
use devdet::mining;
use std::collections::HashSet;

fn main() -> devdet::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = std::path::PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/run6"));
    let wave_amp: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.20);

    let mut cfg = RunConfig::default();
    cfg.benchmark.domains.push(DomainSpec {
        domain_id: 5,
        texture_kind: TextureKind::Gradient,
        color_mean: [0.32, 0.58, 0.45],
        color_jitter: 0.03,
        trace_amplitude: 0.167,
        trace_kind: TraceKind::ChannelOffsetPatch,
    });
    cfg.benchmark.holdout_domain_ids = vec![5];
    // d4 becomes the in-domain per-image-random texture family
    cfg.benchmark.domains[4] = DomainSpec {
        domain_id: 4,
        texture_kind: TextureKind::WaveMix,
        color_mean: [0.50, 0.35, 0.60],
        color_jitter: 0.03,
        trace_amplitude: wave_amp,
        trace_kind: TraceKind::BlendedEllipse,
    };
    cfg.apply_seed(7);

    let bench = out.join("bench");
    let manifest = if bench.join("manifest.txt").exists() {
        datagen::Manifest::load(&bench.join("manifest.txt"))?
    } else {
        std::fs::create_dir_all(&bench).ok();
        datagen::generate_benchmark(&cfg.benchmark, &bench)?
    };
    let all = data::load_samples(&manifest, &bench)?;
    let det_path = out.join("detector_base.ckpt");
    let det = if det_path.exists() {
        Detector::load(&det_path)?.0
    } else {
        let train = all.split("train", &manifest, Split::Train);
        let t = std::time::Instant::now();
        let det = detector::pretrain_wrap(cfg, &train)?;
        println!("pretrain wall {:?}", t.elapsed());
        det.save(&det_path, Default::default())?;
        det
    };

    let test = all.split("test", &manifest, Split::Test);
    let mut m_acc = 0.0;
    let mut mean_auc = 0.0;
    let mut n_in = 0.0;
    for dm in 0..6u32 {
        let scored: Vec<ScoredSample> = test
            .samples
            .iter()
            .filter(|s| s.domain_id == dm)
            .map(|s| ScoredSample { score: det.predict(&s.image).0, label: s.label, domain_id: dm })
            .collect();
        if scored.is_empty() { continue; }
        let auc = metrics::auc(&scored)?;
        let (f, r) = metrics::acc_split(&scored, 0.5);
        let (f, r) = (f.unwrap(), r.unwrap());
        println!("d{dm}: auc {auc:.4} f {f:.3} r {r:.3} acc {:.3} (n={})", (f + r) / 2.0, scored.len());
        if dm != 5 {
            m_acc += (f + r) / 2.0;
            mean_auc += auc;
            n_in += 1.0;
        }
    }
    println!("in-domain m_acc {:.4} mean_auc {:.4} gap {:.4}", m_acc / n_in, mean_auc / n_in, mean_auc / n_in - m_acc / n_in);

    // ER composition at various k over the train+val pool
    let wanted: HashSet<String> = manifest.records.iter().filter(|r| r.split != Split::Test).map(|r| r.sample_id()).collect();
    let pool = all.filter("train+val", |s| wanted.contains(&s.sample_id));
    let rows = mining::score_table(&det, &pool);
    mining::save_score_table(&rows, &out.join("scores_train.tsv"))?;
    let mut reals: Vec<(f64, u32)> = Vec::new();
    let mut fakes: Vec<(f64, u32)> = Vec::new();
    for r in &rows {
        if r.label == 0 { reals.push((r.confidence, r.domain_id)); } else { fakes.push((r.confidence, r.domain_id)); }
    }
    reals.sort_by(|a, b| a.0.total_cmp(&b.0));
    fakes.sort_by(|a, b| a.0.total_cmp(&b.0));
    for k in [320usize, 480, 560, 640, 800] {
        let mut c = [0usize; 6];
        for &(_, dm) in reals.iter().take(k) { c[dm as usize] += 1; }
        println!("ER k={k}: {:?}", c);
    }
    let mut c = [0usize; 6];
    for &(_, dm) in fakes.iter().take(80) { c[dm as usize] += 1; }
    println!("HF k=80: {:?}  (lowest fake scores p0/p10 {:.4}/{:.4})", c, fakes[0].0, fakes[fakes.len()/10].0);
    Ok(())
}

mod detector {
    use devdet::data::SampleSet;
    use devdet::detector::{pretrain, Detector};
    pub fn pretrain_wrap(cfg: devdet::config::RunConfig, train: &SampleSet) -> devdet::Result<Detector> {
        let det = Detector::new(cfg.feature_dim, cfg.train.seed);
        pretrain(det, train, &cfg.train, |e, l| {
            if e % 20 == 0 { println!("epoch {e} loss {l:.5}"); }
        })
    }
}
