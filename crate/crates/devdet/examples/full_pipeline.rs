//! Run the whole pipeline end to end with the shipped default config:
//! synthesize the benchmark, pretrain, mine, train the developer, fit the
//! dose dictionary, fine-tune, evaluate.
//!
//!     cargo run --release --example full_pipeline -- [OUT_DIR] [SEED]

use devdet::cli::Runner;
use devdet::config::RunConfig;

fn main() -> devdet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "artifacts".into());
    let mut cfg = RunConfig::default();
    let seed = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(cfg.seed);
    cfg.apply_seed(seed);
    let runner = Runner::new(cfg, &out);
    let eval = runner.run_all()?;
    println!(
        "base:     m_acc {:.4}  s_auc {:.4}  mean per-domain auc {:.4}",
        eval.base_in.m_acc,
        eval.base_in.s_auc,
        eval.base_in.mean_domain_auc()
    );
    println!(
        "pipeline: m_acc {:.4}  s_auc {:.4}  mean per-domain auc {:.4}",
        eval.pipe_in.m_acc,
        eval.pipe_in.s_auc,
        eval.pipe_in.mean_domain_auc()
    );
    if let (Some(b), Some(p)) = (&eval.base_holdout, &eval.pipe_holdout) {
        println!("holdout:  base acc {:.4}  pipeline acc {:.4}", b.m_acc, p.m_acc);
    }
    Ok(())
}
