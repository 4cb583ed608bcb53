use devdet::data;
use devdet::datagen::{self, DomainSpec, Manifest, Split, TextureKind, TraceKind};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use devdet::mining::{self, MiningConfig, Strategy};
use devdet::rng;
use ndarray::{Array1, Array2};
use std::collections::HashSet;

fn pct(v: &mut Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() as f64 - 1.0) * p) as usize]
}

fn main() -> devdet::Result<()> {
    let out = std::path::PathBuf::from(
        std::env::args().nth(1).unwrap_or_else(|| "/tmp/full4".into()),
    );
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
    let mc = MiningConfig { k_hard_fake: 64, k_easy_real: 160, strategy: Strategy::HfEr };
    let (hf, _) = mining::mine_scores(&rows, &pool, &mc)?;
    let d = det.feature_dim;
    let mut z = Array2::zeros((d, hf.len()));
    for (j, s) in hf.samples.iter().enumerate() {
        let (_, feat) = det.predict(&s.image);
        for (i, v) in feat.iter().enumerate() {
            z[[i, j]] = *v;
        }
    }
    // feature groups to compare
    let test = all.split("test", &manifest, Split::Test);
    let mut groups: Vec<(String, Vec<Array1<f64>>)> = Vec::new();
    let mut push = |name: &str, feats: Vec<Array1<f64>>| groups.push((name.into(), feats));
    for (name, dom, label) in [
        ("in-reals", None, 0u8),
        ("in-fakes", None, 1),
        ("hold-reals", Some(4u32), 0),
        ("hold-fakes", Some(4), 1),
    ] {
        let feats = test
            .samples
            .iter()
            .filter(|s| {
                s.label == label
                    && match dom {
                        Some(dm) => s.domain_id == dm,
                        None => s.domain_id != 4,
                    }
            })
            .map(|s| Array1::from_vec(det.predict(&s.image).1))
            .collect();
        push(name, feats);
    }
    // near-manifold holdout candidate (gradient, color off d2)
    let sp = DomainSpec {
        domain_id: 4,
        texture_kind: TextureKind::Gradient,
        color_mean: [0.32, 0.57, 0.47],
        color_jitter: 0.03,
        trace_amplitude: 0.08,
        trace_kind: TraceKind::ChannelOffsetPatch,
    };
    let mut srng = rng::stream(991, "dictprobe");
    let mut nr = Vec::new();
    let mut nf = Vec::new();
    for _ in 0..60 {
        let real = datagen::render_base(&sp, 32, &mut srng);
        let fake = datagen::inject_trace(&real, &sp, &mut srng);
        nr.push(Array1::from_vec(det.predict(&real).1));
        nf.push(Array1::from_vec(det.predict(&fake).1));
    }
    push("near-hold-reals", nr);
    push("near-hold-fakes", nf);

    for (atoms, lambda) in [(16usize, 0.1f64), (32, 0.02), (32, 0.01), (48, 0.01), (32, 0.005), (64, 0.01)] {
        let (mut model, _) = dosedict::fit(&z, atoms, lambda, 417, "probe")?;
        // calibrate on pool features
        let mut zp = Array2::zeros((d, pool.len()));
        for (j, s) in pool.samples.iter().enumerate() {
            let (_, feat) = det.predict(&s.image);
            for (i, v) in feat.iter().enumerate() {
                zp[[i, j]] = *v;
            }
        }
        dosedict::calibrate(&mut model, &zp, 0.05, 0.95)?;
        println!(
            "\natoms={atoms} lambda={lambda} calib=[{:.4},{:.4}]",
            model.calib_lo, model.calib_hi
        );
        for (name, feats) in &groups {
            let mut errs: Vec<f64> = feats
                .iter()
                .map(|f| dosedict::reconstruction_error(&model, f.view()).unwrap())
                .collect();
            let (p10, p50, p90) = (pct(&mut errs, 0.1), pct(&mut errs, 0.5), pct(&mut errs, 0.9));
            println!(
                "  {name:<16} p10={p10:.4} p50={p50:.4} p90={p90:.4}  dose(p10/p50/p90)={:.3}/{:.3}/{:.3}",
                dosedict::adaptive_dose(&model, p10, 0.25),
                dosedict::adaptive_dose(&model, p50, 0.25),
                dosedict::adaptive_dose(&model, p90, 0.25)
            );
        }
    }
    Ok(())
}
