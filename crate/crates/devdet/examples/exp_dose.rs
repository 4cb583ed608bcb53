use devdet::data;
use devdet::datagen::{Manifest, Split};
use devdet::detector::{BinaryDetector, Detector};
use devdet::dosedict;
use ndarray::Array1;

fn main() -> devdet::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "/tmp/full3".into()));
    let (det, _) = Detector::load(&out.join("detector_base.ckpt"))?;
    let dict = dosedict::load_dict(&out.join("dict.bin"))?;
    println!("atoms {} lambda {} feat_scale {:.4} calib [{:.5},{:.5}]", dict.num_atoms(), dict.lambda_l1, dict.feat_scale, dict.calib_lo, dict.calib_hi);
    let manifest = Manifest::load(&out.join("bench/manifest.txt"))?;
    let all = data::load_samples(&manifest, &out.join("bench"))?;
    let test = all.split("test", &manifest, Split::Test);
    let mut stats: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for s in &test.samples {
        let (_, feat) = det.predict(&s.image);
        let z = Array1::from_vec(feat.clone());
        let e = dosedict::reconstruction_error(&dict, z.view())?;
        stats.entry(format!("d{}-{}", s.domain_id, s.label)).or_default().push(e);
    }
    for (k, mut v) in stats {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        println!(
            "{k}: n={n} p10={:.5} p50={:.5} p90={:.5} dose(p50)={:.3}",
            v[n / 10],
            v[n / 2],
            v[9 * n / 10],
            dosedict::adaptive_dose(&dict, v[n / 2], 0.25)
        );
    }
    Ok(())
}
