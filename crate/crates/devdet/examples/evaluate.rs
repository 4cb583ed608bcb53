//! Evaluate the base detector against the full pipeline on the in-domain
//! and holdout test splits. Requires the artifacts of the earlier stages;
//! runs any that are missing.
//!
//!     cargo run --release --example evaluate -- [OUT_DIR]

use devdet::cli::Runner;
use devdet::config::RunConfig;
use devdet::metrics::MetricsReport;

fn show(tag: &str, r: &MetricsReport) {
    println!("{tag}:");
    for (dom, m) in &r.per_domain {
        println!("  domain {dom}: auc {:.4}  f_acc {:.4}  r_acc {:.4}", m.auc, m.f_acc, m.r_acc);
    }
    println!("  s_auc {:.4}   m_acc {:.4}", r.s_auc, r.m_acc);
}

fn main() -> devdet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "artifacts".into());
    let mut cfg = RunConfig::default();
    cfg.apply_seed(cfg.seed);
    let runner = Runner::new(cfg, &out);
    if !runner.bundle_dir().join("bundle.txt").exists() {
        runner.run_all()?;
    }
    let eval = runner.cmd_eval()?;
    show("base detector, in-domain", &eval.base_in);
    show("pipeline, in-domain", &eval.pipe_in);
    if let (Some(b), Some(p)) = (&eval.base_holdout, &eval.pipe_holdout) {
        println!("holdout: base acc {:.4}, pipeline acc {:.4}", b.m_acc, p.m_acc);
    }
    println!("reports and score CSVs in {}", runner.reports_dir().display());
    Ok(())
}
