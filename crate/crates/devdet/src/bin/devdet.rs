use clap::{Parser, Subcommand};
use devdet::cli::Runner;
use devdet::config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "devdet", about = "Developing pipeline for fake-image detection", version)]
struct Args {
    /// TOML run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override; all stage seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "artifacts")]
    out: PathBuf,
    /// Override stage-1 generator epochs.
    #[arg(long, global = true)]
    stage_epochs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multi-domain benchmark.
    Synth,
    /// Train the base detector on the in-domain training split.
    Pretrain,
    /// Score the training split and cache the confidence table.
    Mine,
    /// Train the developer generator on mined hard fakes + easy reals.
    Stage1,
    /// Fit the dose dictionary on hard-fake features and calibrate it.
    Fitdict,
    /// Dose-adaptive fine-tuning; writes the inference bundle.
    Daft,
    /// Evaluate base detector and pipeline on in-domain + holdout tests.
    Eval,
    /// Variant grid (base / developer-only / fixed / adaptive / parallel)
    /// and selection-strategy grid.
    Ablate,
    /// The whole sequence: synth through eval.
    RunAll,
}

fn run(args: &Args) -> devdet::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_seed(c.seed);
            c
        }
    };
    if let Some(seed) = args.seed {
        cfg.apply_seed(seed);
    }
    if let Some(e) = args.stage_epochs {
        cfg.stage1.epochs = e;
    }
    cfg.validate()?;
    let runner = Runner::new(cfg, &args.out);
    match args.command {
        Command::Synth => {
            let m = runner.cmd_synth()?;
            println!(
                "benchmark: {} images, dominance factor {:.2}",
                m.records.len(),
                m.stats.dominance_factor
            );
        }
        Command::Pretrain => {
            runner.cmd_pretrain()?;
            println!("detector written to {}", runner.detector_path().display());
        }
        Command::Mine => {
            let rows = runner.cmd_mine()?;
            println!("scored {} training samples", rows.len());
        }
        Command::Stage1 => {
            runner.cmd_stage1()?;
            println!("generator written to {}", runner.generator_path().display());
        }
        Command::Fitdict => {
            let model = runner.cmd_fitdict()?;
            println!(
                "dictionary: {} atoms over {}-d features",
                model.num_atoms(),
                model.feature_dim()
            );
        }
        Command::Daft => {
            runner.cmd_daft()?;
            println!("bundle written to {}", runner.bundle_dir().display());
        }
        Command::Eval => print_eval(&runner.cmd_eval()?),
        Command::Ablate => {
            let rep = runner.cmd_ablate()?;
            for v in &rep.variants {
                println!(
                    "{:28} m_acc_in={:.4} s_auc_in={:.4} holdout_acc={}",
                    v.name,
                    v.m_acc_in,
                    v.s_auc_in,
                    v.holdout_acc.map_or("-".into(), |a| format!("{a:.4}"))
                );
            }
        }
        Command::RunAll => print_eval(&runner.run_all()?),
    }
    Ok(())
}

fn print_eval(out: &devdet::cli::EvalOutput) {
    println!(
        "base:     m_acc={:.4} s_auc={:.4} mean_domain_auc={:.4}",
        out.base_in.m_acc,
        out.base_in.s_auc,
        out.base_in.mean_domain_auc()
    );
    println!(
        "pipeline: m_acc={:.4} s_auc={:.4} mean_domain_auc={:.4}",
        out.pipe_in.m_acc,
        out.pipe_in.s_auc,
        out.pipe_in.mean_domain_auc()
    );
    if let (Some(b), Some(p)) = (&out.base_holdout, &out.pipe_holdout) {
        println!("holdout:  base_acc={:.4} pipeline_acc={:.4}", b.m_acc, p.m_acc);
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
