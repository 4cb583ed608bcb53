//! Train the stage-1 developer generator against the frozen detector and
//! show its effect: hard-fake confidence rises, easy reals stay real.
//!
//!     cargo run --release --example train_developer -- [OUT_DIR]

use devdet::cli::Runner;
use devdet::config::RunConfig;
use devdet::detector::BinaryDetector;
use devdet::ffdev::apply_developer;
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
    if !runner.scores_path().exists() {
        runner.cmd_mine()?;
    }
    let gen = runner.cmd_stage1()?;

    // effect on the mined sets, raw vs developed at the training dose
    let set = devdet::data::load_manifest(&runner.manifest_path())?;
    let manifest = devdet::datagen::Manifest::load(&runner.manifest_path())?;
    let train = set.split("train", &manifest, devdet::datagen::Split::Train);
    let (det, _) = devdet::detector::Detector::load(&runner.detector_path())?;
    let rows = mining::load_score_table(&runner.scores_path())?;
    let n_fake = train.samples.iter().filter(|s| s.label == 1).count();
    let mc = mining::MiningConfig::default_for(n_fake, train.len() - n_fake);
    let (hf, er) = mining::mine_scores(&rows, &train, &mc)?;
    let eps = runner.cfg.stage1.dose_epsilon;
    for (name, s) in [("hard fakes", &hf), ("easy reals", &er)] {
        let mut raw = 0.0;
        let mut dev = 0.0;
        let mut kept_real = 0usize;
        for x in &s.samples {
            raw += det.predict(&x.image).0;
            let developed = apply_developer(&x.image, &gen.developer(&x.image), eps)?;
            let c = det.predict(&developed).0;
            dev += c;
            if c < 0.5 {
                kept_real += 1;
            }
        }
        let n = s.len() as f64;
        println!(
            "{name}: mean confidence {:.3} -> {:.3} ({} of {} below threshold after)",
            raw / n,
            dev / n,
            kept_real,
            s.len()
        );
    }
    Ok(())
}
