use devdet::config::RunConfig;
use devdet::data::{self, epoch_batches};
use devdet::datagen::{Manifest, Split};
use devdet::detector::{batch_loss_grad, BinaryDetector, Detector};
use devdet::img::Image;
use devdet::metrics::{summarize, ScoredSample};
use devdet::nn::Adam;

fn main() -> devdet::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "/tmp/run1".into()));
    let lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let every: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut cfg = RunConfig::default();
    cfg.apply_seed(7);
    let manifest = Manifest::load(&out.join("bench/manifest.txt"))?;
    let all = data::load_samples(&manifest, &out.join("bench"))?;
    let train = all.split("train", &manifest, Split::Train);
    let test = all.split("test", &manifest, Split::Test);
    let holdout = cfg.benchmark.holdout_domain_ids.clone();

    let mut det = Detector::new(cfg.feature_dim, cfg.train.seed);
    let mut opt = Adam::new(lr, det.params.len());
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for batch in epoch_batches(train.len(), 32, cfg.train.seed, epoch as u64) {
            let refs: Vec<(&Image, u8)> =
                batch.iter().map(|&i| (&train.samples[i].image, train.samples[i].label)).collect();
            let (loss, grads) = batch_loss_grad(&det, &refs);
            opt.step(&mut det.params, &grads);
            epoch_loss += loss;
            n_batches += 1;
        }
        if (epoch + 1) % every == 0 || epoch + 1 == epochs {
            let scored: Vec<ScoredSample> = test
                .samples
                .iter()
                .filter(|s| !holdout.contains(&s.domain_id))
                .map(|s| ScoredSample { score: det.predict(&s.image).0, label: s.label, domain_id: s.domain_id })
                .collect();
            let rep = summarize(&scored, 0.5)?;
            print!("ep {:3} loss {:.4} | ", epoch, epoch_loss / n_batches as f64);
            for (d, m) in &rep.per_domain {
                print!("d{d}: auc {:.3} f {:.2} r {:.2} | ", m.auc, m.f_acc, m.r_acc);
            }
            println!(
                "m_acc {:.3} mean_auc {:.3} gap {:+.3}",
                rep.m_acc,
                rep.mean_domain_auc(),
                rep.mean_domain_auc() - rep.m_acc
            );
        }
    }
    Ok(())
}
