//! Score the training split with the pretrained detector and select the
//! hard-fake / easy-real sets that stage 1 trains on.
//!
//! Expects `generate_benchmark` + `pretrain_detector` artifacts, or run
//! with a fresh OUT_DIR and it will produce them.
//!
//!     cargo run --release --example mine_samples -- [OUT_DIR]

use devdet::cli::Runner;
use devdet::config::RunConfig;
use devdet::mining;

fn main() -> devdet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "artifacts".into());
    let mut cfg = RunConfig::default();
    cfg.apply_seed(cfg.seed);
    let runner = Runner::new(cfg, &out);
    if !runner.manifest_path().exists() {
        runner.cmd_synth()?;
    }
    if !runner.detector_path().exists() {
        runner.cmd_pretrain()?;
    }
    let rows = runner.cmd_mine()?;
    println!("scored {} training samples -> {}", rows.len(), runner.scores_path().display());

    let set = devdet::data::load_manifest(&runner.manifest_path())?;
    let manifest = devdet::datagen::Manifest::load(&runner.manifest_path())?;
    let train = set.split("train", &manifest, devdet::datagen::Split::Train);
    let n_fake = train.samples.iter().filter(|s| s.label == 1).count();
    let mc = mining::MiningConfig::default_for(n_fake, train.len() - n_fake);
    let (hf, er) = mining::mine_scores(&rows, &train, &mc)?;
    let mean = |s: &devdet::data::SampleSet, rows: &[mining::ScoreRow]| -> f64 {
        let ids: std::collections::HashSet<_> = s.samples.iter().map(|x| x.sample_id.clone()).collect();
        let v: Vec<f64> = rows.iter().filter(|r| ids.contains(&r.sample_id)).map(|r| r.confidence).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("hard fakes: {} samples, mean confidence {:.3}", hf.len(), mean(&hf, &rows));
    println!("easy reals: {} samples, mean confidence {:.3}", er.len(), mean(&er, &rows));
    Ok(())
}
