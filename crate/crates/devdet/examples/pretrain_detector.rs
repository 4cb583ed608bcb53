//! Pretrain the base detector on a freshly generated benchmark and report
//! the per-domain / pooled split that motivates the rest of the pipeline:
//! per-domain ranking is nearly perfect while a single pooled threshold
//! fails.
//!
//!     cargo run --release --example pretrain_detector -- [OUT_DIR]

use devdet::cli::Runner;
use devdet::config::RunConfig;
use devdet::detector::BinaryDetector;
use devdet::metrics::{summarize, ScoredSample};

fn main() -> devdet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "artifacts".into());
    let mut cfg = RunConfig::default();
    cfg.apply_seed(cfg.seed);
    let runner = Runner::new(cfg, &out);
    runner.cmd_synth()?;
    let det = runner.cmd_pretrain()?;

    let set = devdet::data::load_manifest(&runner.manifest_path())?;
    let manifest = devdet::datagen::Manifest::load(&runner.manifest_path())?;
    let test = set.split("test", &manifest, devdet::datagen::Split::Test);
    let holdout = &runner.cfg.benchmark.holdout_domain_ids;
    let scored: Vec<ScoredSample> = test
        .samples
        .iter()
        .filter(|s| !holdout.contains(&s.domain_id))
        .map(|s| ScoredSample { score: det.predict(&s.image).0, label: s.label, domain_id: s.domain_id })
        .collect();
    let report = summarize(&scored, 0.5)?;
    for (dom, m) in &report.per_domain {
        println!("domain {dom}: auc {:.4}  f_acc {:.4}  r_acc {:.4}", m.auc, m.f_acc, m.r_acc);
    }
    println!("pooled s_auc {:.4}   m_acc {:.4}", report.s_auc, report.m_acc);
    Ok(())
}
