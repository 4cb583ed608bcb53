//! Pipeline orchestration: each command consumes the previous command's
//! artifacts from the output directory and appends a run-log entry
//! (command, config hash, seed, wall time). `run_all` chains every stage.

use crate::config::RunConfig;
use crate::daft::{self, DaftConfig, DoseMode, Pipeline};
use crate::data::{self, SampleSet};
use crate::datagen::{self, Manifest, Split};
use crate::detector::{self, BinaryDetector, Detector};
use crate::dosedict::{self, DoseDictModel};
use crate::error::{Error, Result};
use crate::ffdev::{self, apply_developer, DevGen};
use crate::img::{self, Image};
use crate::metrics::{self, MetricsReport, ScoredSample};
use crate::mining::{self, ScoreRow};
use ndarray::Array2;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct Runner {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub base_in: MetricsReport,
    pub pipe_in: MetricsReport,
    pub base_holdout: Option<MetricsReport>,
    pub pipe_holdout: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct VariantRow {
    pub name: String,
    pub m_acc_in: f64,
    pub s_auc_in: f64,
    pub holdout_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StrategyRow {
    pub strategy: String,
    pub n_total: usize,
    pub n_fake: usize,
    pub n_real: usize,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub variants: Vec<VariantRow>,
    pub strategies: Vec<StrategyRow>,
}

pub const THRESHOLD: f64 = 0.5;

impl Runner {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Runner {
        Runner { cfg, out: out.into() }
    }

    pub fn bench_dir(&self) -> PathBuf {
        self.out.join("bench")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.bench_dir().join("manifest.txt")
    }
    pub fn detector_path(&self) -> PathBuf {
        self.out.join("detector_base.ckpt")
    }
    pub fn scores_path(&self) -> PathBuf {
        self.out.join("scores_train.tsv")
    }
    pub fn generator_path(&self) -> PathBuf {
        self.out.join("generator.ckpt")
    }
    pub fn dict_path(&self) -> PathBuf {
        self.out.join("dict.bin")
    }
    pub fn bundle_dir(&self) -> PathBuf {
        self.out.join("bundle")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    fn log(&self, command: &str, seed: u64, start: Instant) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let line = format!(
            "command={command} config_hash={} seed={seed} wall_ms={}\n",
            self.cfg.content_hash(),
            start.elapsed().as_millis()
        );
        let path = self.out.join("run_log.txt");
        let prev = std::fs::read_to_string(&path).unwrap_or_default();
        std::fs::write(&path, prev + &line).map_err(|e| Error::io(&path, e))
    }

    fn meta(&self, stage: &str) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("config_hash".into(), self.cfg.content_hash());
        m.insert("stage".into(), stage.into());
        m
    }

    fn check_chain(&self, meta: &BTreeMap<String, String>, artifact: &str) -> Result<()> {
        match meta.get("config_hash") {
            Some(h) if *h == self.cfg.content_hash() => Ok(()),
            Some(h) => Err(Error::ChainMismatch(format!(
                "{artifact} was produced under config {h} but the current config hashes to {}",
                self.cfg.content_hash()
            ))),
            None => Err(Error::ChainMismatch(format!(
                "{artifact} carries no config hash"
            ))),
        }
    }

    fn require(&self, path: &Path, producer: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                artifact: path.display().to_string(),
                producer: producer.into(),
            })
        }
    }

    fn load_bench(&self) -> Result<(Manifest, SampleSet)> {
        self.require(&self.manifest_path(), "synth")?;
        let manifest = Manifest::load(&self.manifest_path())?;
        let set = data::load_samples(&manifest, &self.bench_dir())?;
        Ok((manifest, set))
    }

    fn is_holdout(&self, domain_id: u32) -> bool {
        self.cfg.benchmark.holdout_domain_ids.contains(&domain_id)
    }

    fn train_set(&self, manifest: &Manifest, all: &SampleSet) -> SampleSet {
        all.split("train", manifest, Split::Train)
    }

    /// Mining, stage 1, dictionary fitting and fine-tuning all draw from the
    /// train and val splits together: val fakes carry deployment-strength
    /// traces the detector has not memorized, which is where the genuinely
    /// hard fakes live.
    fn dev_pool(&self, manifest: &Manifest, all: &SampleSet) -> SampleSet {
        let wanted: std::collections::HashSet<String> = manifest
            .records
            .iter()
            .filter(|r| r.split != Split::Test)
            .map(|r| r.sample_id())
            .collect();
        all.filter("train+val", |s| wanted.contains(&s.sample_id))
    }

    fn test_in(&self, manifest: &Manifest, all: &SampleSet) -> SampleSet {
        all.split("test", manifest, Split::Test)
            .filter("test-in-domain", |s| !self.is_holdout(s.domain_id))
    }

    fn test_holdout(&self, manifest: &Manifest, all: &SampleSet) -> SampleSet {
        all.split("test", manifest, Split::Test)
            .filter("test-holdout", |s| self.is_holdout(s.domain_id))
    }

    fn load_detector(&self) -> Result<Detector> {
        self.require(&self.detector_path(), "pretrain")?;
        let (det, meta) = Detector::load(&self.detector_path())?;
        self.check_chain(&meta, "detector_base.ckpt")?;
        Ok(det)
    }

    fn load_scores(&self) -> Result<Vec<ScoreRow>> {
        self.require(&self.scores_path(), "mine")?;
        mining::load_score_table(&self.scores_path())
    }

    fn load_generator(&self) -> Result<DevGen> {
        self.require(&self.generator_path(), "stage1")?;
        let (gen, meta) = DevGen::load(&self.generator_path())?;
        self.check_chain(&meta, "generator.ckpt")?;
        Ok(gen)
    }

    fn load_dict(&self, extractor: &Detector) -> Result<DoseDictModel> {
        self.require(&self.dict_path(), "fitdict")?;
        let dict = dosedict::load_dict(&self.dict_path())?;
        // the dictionary chains through the extractor it was fitted on
        if dict.extractor_hash != extractor.params.content_hash() {
            return Err(Error::ChainMismatch(format!(
                "dict.bin was fitted on extractor {} but detector_base.ckpt hashes to {}",
                dict.extractor_hash,
                extractor.params.content_hash()
            )));
        }
        Ok(dict)
    }

    pub fn cmd_synth(&self) -> Result<Manifest> {
        let t = Instant::now();
        self.cfg.validate()?;
        let manifest = datagen::generate_benchmark(&self.cfg.benchmark, &self.bench_dir())?;
        self.cfg.save(&self.out.join("config.toml"))?;
        self.log("synth", self.cfg.benchmark.seed, t)?;
        Ok(manifest)
    }

    pub fn cmd_pretrain(&self) -> Result<Detector> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let train = self.train_set(&manifest, &all);
        let det = Detector::new(self.cfg.feature_dim, self.cfg.train.seed);
        let det = detector::pretrain(det, &train, &self.cfg.train, |_, _| {})?;
        det.save(&self.detector_path(), self.meta("pretrain"))?;
        self.log("pretrain", self.cfg.train.seed, t)?;
        Ok(det)
    }

    pub fn cmd_mine(&self) -> Result<Vec<ScoreRow>> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let pool = self.dev_pool(&manifest, &all);
        let det = self.load_detector()?;
        let rows = mining::score_table(&det, &pool);
        mining::save_score_table(&rows, &self.scores_path())?;
        self.log("mine", self.cfg.seed, t)?;
        Ok(rows)
    }

    fn mining_config(&self, train: &SampleSet) -> crate::mining::MiningConfig {
        let n_fake = train.samples.iter().filter(|s| s.label == 1).count();
        let n_real = train.len() - n_fake;
        self.cfg.mining.resolve(n_fake, n_real)
    }

    pub fn cmd_stage1(&self) -> Result<DevGen> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let pool = self.dev_pool(&manifest, &all);
        let det = self.load_detector()?;
        let rows = self.load_scores()?;
        let mc = self.mining_config(&pool);
        let s1 = mining::mine_variant_scores(&rows, &pool, &mc)?;
        let gen = DevGen::new(self.cfg.stage1.seed);
        let gen = ffdev::train_stage1(gen, &det, &s1, &self.cfg.stage1, |_, _, _| {})?;
        gen.save(&self.generator_path(), self.meta("stage1"))?;
        self.log("stage1", self.cfg.stage1.seed, t)?;
        Ok(gen)
    }

    fn feature_matrix(extractor: &Detector, set: &SampleSet) -> Array2<f64> {
        let d = extractor.feature_dim;
        let mut z = Array2::zeros((d, set.len()));
        for (j, s) in set.samples.iter().enumerate() {
            let (_, feat) = extractor.predict(&s.image);
            for (i, v) in feat.iter().enumerate() {
                z[[i, j]] = *v;
            }
        }
        z
    }

    pub fn cmd_fitdict(&self) -> Result<DoseDictModel> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let pool = self.dev_pool(&manifest, &all);
        let det = self.load_detector()?;
        let rows = self.load_scores()?;
        let mc = self.mining_config(&pool);
        let (hf, _) = mining::mine_scores(&rows, &pool, &mc)?;
        let z_hf = Self::feature_matrix(&det, &hf);
        let atoms = self.cfg.dict.atoms_for(hf.len());
        let (mut model, _fit) = dosedict::fit(
            &z_hf,
            atoms,
            self.cfg.dict.lambda_l1,
            self.cfg.dict_seed(),
            &det.params.content_hash(),
        )?;
        let z_all = Self::feature_matrix(&det, &pool);
        dosedict::calibrate(
            &mut model,
            &z_all,
            self.cfg.dict.calib_lo_pct,
            self.cfg.dict.calib_hi_pct,
        )?;
        dosedict::save_dict(&model, &self.dict_path())?;
        self.log("fitdict", self.cfg.dict_seed(), t)?;
        Ok(model)
    }

    fn assemble_pipeline(&self) -> Result<Pipeline> {
        let base = self.load_detector()?;
        let gen = self.load_generator()?;
        let dict = self.load_dict(&base)?;
        Ok(Pipeline {
            detector: base.clone(),
            generator: gen,
            dict,
            frozen_extractor: base,
            base_dose: self.cfg.stage1.dose_epsilon,
            dose_mode: self.cfg.daft.dose_mode,
        })
    }

    pub fn cmd_daft(&self) -> Result<Pipeline> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let pool = self.dev_pool(&manifest, &all);
        let pipe = self.assemble_pipeline()?;
        let pipe = daft::finetune(pipe, &pool, &self.cfg.train, &self.cfg.daft, |_, _| {})?;
        daft::save_bundle(&pipe, &self.bundle_dir(), self.meta("daft"))?;
        self.log("daft", self.cfg.seed, t)?;
        Ok(pipe)
    }

    fn score_with<F>(set: &SampleSet, mut score: F) -> Result<Vec<(ScoredSample, f64)>>
    where
        F: FnMut(&Image) -> Result<(f64, f64)>,
    {
        set.samples
            .iter()
            .map(|s| {
                let (sc, dose) = score(&s.image)?;
                Ok((
                    ScoredSample { score: sc, label: s.label, domain_id: s.domain_id },
                    dose,
                ))
            })
            .collect()
    }

    fn write_scores_csv(
        &self,
        set: &SampleSet,
        scored: &[(ScoredSample, f64)],
        path: &Path,
    ) -> Result<()> {
        let mut text = String::from("sample_id,domain_id,label,score,dose\n");
        for (s, (row, dose)) in set.samples.iter().zip(scored) {
            writeln!(
                text,
                "{},{},{},{:.9},{:.9}",
                s.sample_id, row.domain_id, row.label, row.score, dose
            )
            .unwrap();
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn eval_side(
        &self,
        tag: &str,
        set: &SampleSet,
        scored: Vec<(ScoredSample, f64)>,
    ) -> Result<MetricsReport> {
        let dir = self.reports_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.write_scores_csv(set, &scored, &dir.join(format!("scores_{tag}.csv")))?;
        let rows: Vec<ScoredSample> = scored.iter().map(|(r, _)| *r).collect();
        score_histogram_png(&rows, &dir.join(format!("hist_{tag}.png")))?;
        let report = metrics::summarize(&rows, THRESHOLD)?;
        report.save(&dir.join(format!("report_{tag}.txt")))?;
        Ok(report)
    }

    pub fn cmd_eval(&self) -> Result<EvalOutput> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let base = self.load_detector()?;
        self.require(&self.bundle_dir().join("bundle.txt"), "daft")?;
        let pipe = daft::load_bundle(&self.bundle_dir())?;
        let test_in = self.test_in(&manifest, &all);
        let test_out = self.test_holdout(&manifest, &all);

        let base_score = |x: &Image| -> Result<(f64, f64)> { Ok((base.predict(x).0, 0.0)) };
        let pipe_score = |x: &Image| -> Result<(f64, f64)> {
            let r = pipe.infer(x)?;
            Ok((r.confidence, r.dose_used))
        };

        let base_in = self.eval_side("base_in", &test_in, Self::score_with(&test_in, base_score)?)?;
        let pipe_in = self.eval_side("pipe_in", &test_in, Self::score_with(&test_in, pipe_score)?)?;
        let (base_holdout, pipe_holdout) = if test_out.is_empty() {
            (None, None)
        } else {
            (
                Some(self.eval_side(
                    "base_holdout",
                    &test_out,
                    Self::score_with(&test_out, base_score)?,
                )?),
                Some(self.eval_side(
                    "pipe_holdout",
                    &test_out,
                    Self::score_with(&test_out, pipe_score)?,
                )?),
            )
        };
        self.log("eval", self.cfg.seed, t)?;
        Ok(EvalOutput { base_in, pipe_in, base_holdout, pipe_holdout })
    }

    /// Mean of F-ACC and R-ACC over the whole (single-class-safe) report.
    fn pooled_acc(report: &MetricsReport) -> f64 {
        report.m_acc
    }

    /// The variant grid plus the selection-strategy grid.
    pub fn cmd_ablate(&self) -> Result<AblationReport> {
        let t = Instant::now();
        let (manifest, all) = self.load_bench()?;
        let train = self.dev_pool(&manifest, &all);
        let test_in = self.test_in(&manifest, &all);
        let test_out = self.test_holdout(&manifest, &all);
        let base = self.load_detector()?;
        let gen = self.load_generator()?;
        let dict = self.load_dict(&base)?;
        let eps = self.cfg.stage1.dose_epsilon;

        let mut variants = Vec::new();
        let mut eval_variant = |name: &str,
                                det: &Detector,
                                developed: bool,
                                pipe: Option<&Pipeline>|
         -> Result<()> {
            let score = |x: &Image| -> Result<(f64, f64)> {
                if let Some(p) = pipe {
                    let r = p.infer(x)?;
                    Ok((r.confidence, r.dose_used))
                } else if developed {
                    let delta = gen.developer(x);
                    let dev = apply_developer(x, &delta, eps)?;
                    Ok((det.predict(&dev).0, eps))
                } else {
                    Ok((det.predict(x).0, 0.0))
                }
            };
            let tag = format!("ablate_{name}");
            let rep_in = self.eval_side(&format!("{tag}_in"), &test_in, Self::score_with(&test_in, score)?)?;
            let holdout_acc = if test_out.is_empty() {
                None
            } else {
                let rep = self.eval_side(
                    &format!("{tag}_holdout"),
                    &test_out,
                    Self::score_with(&test_out, score)?,
                )?;
                Some(Self::pooled_acc(&rep))
            };
            variants.push(VariantRow {
                name: name.into(),
                m_acc_in: rep_in.m_acc,
                s_auc_in: rep_in.s_auc,
                holdout_acc,
            });
            Ok(())
        };

        eval_variant("base", &base, false, None)?;
        eval_variant("ffdev_only", &base, true, None)?;

        let finetuned = |mode: DoseMode, parallel: bool| -> Result<Pipeline> {
            let cfg = DaftConfig {
                dose_mode: mode,
                update_generator: parallel,
                ..self.cfg.daft.clone()
            };
            let mut pipe = self.assemble_pipeline()?;
            pipe.dose_mode = mode;
            daft::finetune(pipe, &train, &self.cfg.train, &cfg, |_, _| {})
        };
        let fixed = finetuned(DoseMode::Fixed, false)?;
        eval_variant("ffdev_fixed", &fixed.detector, false, Some(&fixed))?;
        let adaptive = finetuned(DoseMode::Adaptive, false)?;
        eval_variant("ffdev_adaptive", &adaptive.detector, false, Some(&adaptive))?;
        let parallel = finetuned(DoseMode::Adaptive, true)?;
        eval_variant("ffdev_adaptive_parallel", &parallel.detector, false, Some(&parallel))?;
        let _ = dict;

        let rows = self.load_scores()?;
        let mc = self.mining_config(&train);
        let mut strategies = Vec::new();
        for strat in [
            crate::mining::Strategy::HfEr,
            crate::mining::Strategy::HfOnly,
            crate::mining::Strategy::HfHr,
            crate::mining::Strategy::All,
        ] {
            let mcv = crate::mining::MiningConfig { strategy: strat, ..mc.clone() };
            let s1 = mining::mine_variant_scores(&rows, &train, &mcv)?;
            let n_fake = s1.samples.iter().filter(|s| s.label == 1).count();
            strategies.push(StrategyRow {
                strategy: format!("{strat:?}"),
                n_total: s1.len(),
                n_fake,
                n_real: s1.len() - n_fake,
            });
        }

        let mut text = String::from("variant\tm_acc_in\ts_auc_in\tholdout_acc\n");
        for v in &variants {
            writeln!(
                text,
                "{}\t{:.9}\t{:.9}\t{}",
                v.name,
                v.m_acc_in,
                v.s_auc_in,
                v.holdout_acc.map_or("-".into(), |a| format!("{a:.9}"))
            )
            .unwrap();
        }
        text.push_str("strategy\tn_total\tn_fake\tn_real\n");
        for s in &strategies {
            writeln!(text, "{}\t{}\t{}\t{}", s.strategy, s.n_total, s.n_fake, s.n_real).unwrap();
        }
        let dir = self.reports_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("ablation.txt");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.log("ablate", self.cfg.seed, t)?;
        Ok(AblationReport { variants, strategies })
    }

    /// The full Algorithm-1 sequence, artifact-for-artifact identical to
    /// running the commands one by one.
    pub fn run_all(&self) -> Result<EvalOutput> {
        self.cmd_synth()?;
        self.cmd_pretrain()?;
        self.cmd_mine()?;
        self.cmd_stage1()?;
        self.cmd_fitdict()?;
        self.cmd_daft()?;
        self.cmd_eval()
    }
}

/// 64-bin score histogram, reals in blue, fakes in red, rendered to PNG.
pub fn score_histogram_png(rows: &[ScoredSample], path: &Path) -> Result<()> {
    const BINS: usize = 64;
    const H: usize = 128;
    let mut counts = [[0usize; BINS]; 2];
    for r in rows {
        let b = ((r.score * BINS as f64) as usize).min(BINS - 1);
        counts[r.label as usize][b] += 1;
    }
    let peak = counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let mut im: Image = ndarray::Array3::from_elem((3, H, BINS * 4), 1.0);
    for (label, row) in counts.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            let h = (c * (H - 2) + peak - 1) / peak;
            for y in 0..h {
                for dx in 0..2 {
                    let x = b * 4 + label * 2 + dx;
                    let py = H - 1 - y;
                    // real: blue channel kept; fake: red channel kept
                    let keep = if label == 0 { 2 } else { 0 };
                    for ch in 0..3 {
                        im[[ch, py, x]] = if ch == keep { 0.9 } else { 0.1 };
                    }
                }
            }
        }
    }
    img::save_png(&im, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tiny_runner(dir: &Path) -> Runner {
        let mut cfg = RunConfig::default();
        cfg.benchmark = crate::datagen::tests::mini_config(12, 0);
        cfg.apply_seed(11);
        cfg.feature_dim = 8;
        cfg.train.epochs = 1;
        cfg.stage1.epochs = 1;
        cfg.daft.epochs = 1;
        Runner::new(cfg, dir)
    }

    #[test]
    fn missing_artifacts_name_their_producer() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny_runner(dir.path());
        match r.cmd_pretrain() {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "synth"),
            other => panic!("expected missing artifact, got {other:?}"),
        }
        r.cmd_synth().unwrap();
        match r.cmd_mine() {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "pretrain"),
            other => panic!("expected missing artifact, got {other:?}"),
        }
    }

    #[test]
    fn chain_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny_runner(dir.path());
        r.cmd_synth().unwrap();
        r.cmd_pretrain().unwrap();
        let mut other = tiny_runner(dir.path());
        other.cfg.apply_seed(999);
        match other.load_detector() {
            Err(Error::ChainMismatch(_)) => {}
            other => panic!("expected chain mismatch, got {other:?}"),
        }
    }

    #[test]
    fn full_tiny_sequence_and_rerun_eval_identical() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny_runner(dir.path());
        let out = r.run_all().unwrap();
        assert!(out.base_in.s_auc.is_finite());
        let again = r.cmd_eval().unwrap();
        assert_eq!(out.base_in, again.base_in);
        assert_eq!(out.pipe_in, again.pipe_in);
        let log = std::fs::read_to_string(dir.path().join("run_log.txt")).unwrap();
        for cmd in ["synth", "pretrain", "mine", "stage1", "fitdict", "daft", "eval"] {
            assert!(log.contains(&format!("command={cmd} ")), "missing log entry for {cmd}");
        }
    }

    #[test]
    fn ablation_strategy_all_equals_training_set() {
        let dir = tempfile::tempdir().unwrap();
        let r = tiny_runner(dir.path());
        r.run_all().unwrap();
        let rep = r.cmd_ablate().unwrap();
        let (manifest, all) = r.load_bench().unwrap();
        let pool = r.dev_pool(&manifest, &all);
        let all_row = rep.strategies.iter().find(|s| s.strategy == "All").unwrap();
        assert_eq!(all_row.n_total, pool.len());
    }
}
