use devdet::datagen::{self, DomainSpec, TextureKind, TraceKind};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use devdet::ffdev::{self, DevGen};
use devdet::rng;
use ndarray::Array1;
use rand::Rng;

fn main() -> devdet::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "/tmp/full4".into()));
    let (det, _) = Detector::load(&out.join("detector_base.ckpt"))?;
    let (gen, _) = DevGen::load(&out.join("generator.ckpt"))?;
    let dict = dosedict::load_dict(&out.join("dict.bin"))?;
    let n_per = 60usize;
    let candidates: Vec<(&str, DomainSpec)> = vec![
        ("stripes-d0col", spec(4, TextureKind::Stripes, [0.25, 0.45, 0.70], 0.10)),
        ("stripes-d1col", spec(4, TextureKind::Stripes, [0.70, 0.30, 0.30], 0.10)),
        ("stripes-d2col", spec(4, TextureKind::Stripes, [0.35, 0.65, 0.35], 0.10)),
        ("stripes-d3col", spec(4, TextureKind::Stripes, [0.75, 0.70, 0.35], 0.10)),
        ("grad-mid02", spec(4, TextureKind::Gradient, [0.30, 0.55, 0.52], 0.10)),
        ("grad-near-d0", spec(4, TextureKind::Gradient, [0.27, 0.48, 0.62], 0.10)),
        ("grad-near-d2", spec(4, TextureKind::Gradient, [0.33, 0.60, 0.42], 0.10)),
        ("checker-near-d1", spec(4, TextureKind::Checker, [0.60, 0.32, 0.40], 0.10)),
        ("blob-near-d3", spec(4, TextureKind::BlobField, [0.65, 0.62, 0.42], 0.10)),
        ("blob-d3col", spec(4, TextureKind::BlobField, [0.75, 0.70, 0.35], 0.10)),
    ];
    println!("{:<22} {:>6} {:>6} {:>6} {:>6}  {:>8} {:>8}  calib [{:.3},{:.3}]",
        "candidate", "rR", "rF", "devR", "devF", "errR", "errF", dict.calib_lo, dict.calib_hi);
    for (name, sp) in &candidates {
        let mut srng = rng::stream(991, name);
        let mut acc = [0usize; 4]; // base real-correct, base fake-correct, dev real-correct, dev fake-correct
        let mut errs = (Vec::new(), Vec::new());
        for _ in 0..n_per {
            let real = datagen::render_base(sp, 32, &mut srng);
            let fake = datagen::inject_trace(&real, sp, &mut srng);
            for (img, label) in [(&real, 0u8), (&fake, 1u8)] {
                let (s, feat) = det.predict(img);
                let correct = (s >= 0.5) == (label == 1);
                if label == 0 { acc[0] += correct as usize } else { acc[1] += correct as usize }
                let delta = gen.developer(img);
                let dev = ffdev::apply_developer(img, &delta, 0.25)?;
                let (sd, _) = det.predict(&dev);
                let c2 = (sd >= 0.5) == (label == 1);
                if label == 0 { acc[2] += c2 as usize } else { acc[3] += c2 as usize }
                let e = dosedict::reconstruction_error(&dict, Array1::from_vec(feat).view())?;
                if label == 0 { errs.0.push(e) } else { errs.1.push(e) }
            }
        }
        let med = |v: &mut Vec<f64>| { v.sort_by(f64::total_cmp); v[v.len() / 2] };
        println!("{:<22} {:>6.3} {:>6.3} {:>6.3} {:>6.3}  {:>8.3} {:>8.3}",
            name,
            acc[0] as f64 / n_per as f64, acc[1] as f64 / n_per as f64,
            acc[2] as f64 / n_per as f64, acc[3] as f64 / n_per as f64,
            med(&mut errs.0), med(&mut errs.1));
    }
    Ok(())
}

fn spec(id: u32, texture_kind: TextureKind, color_mean: [f64; 3], trace_amplitude: f64) -> DomainSpec {
    DomainSpec {
        domain_id: id,
        texture_kind,
        color_mean,
        color_jitter: 0.03,
        trace_amplitude,
        trace_kind: TraceKind::ChannelOffsetPatch,
    }
}
