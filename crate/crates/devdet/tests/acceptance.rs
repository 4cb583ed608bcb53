//! End-to-end acceptance suite. One pass/fail line is printed per criterion
//! (run with `--nocapture` to see them on success); the test fails if any
//! criterion fails.

use std::time::Instant;

use devdet::cli::Runner;
use devdet::config::RunConfig;
use devdet::daft;
use devdet::data;
use devdet::datagen::{Manifest, Split};
use devdet::detector::{self, BinaryDetector, Detector};
use devdet::dosedict;
use devdet::ffdev::{self, DevGen, Stage1Config};
use devdet::img::Image;
use devdet::metrics::{self, ScoredSample};
use devdet::mining;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;

struct Criteria {
    failures: Vec<String>,
}

impl Criteria {
    fn check(&mut self, n: u32, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {n:2} {verdict}: {detail}");
        if !ok {
            self.failures.push(format!("criterion {n}: {detail}"));
        }
    }
}

fn rand_image(n: usize, rng: &mut impl Rng) -> Image {
    Array3::from_shape_fn((3, n, n), |_| rng.gen::<f64>())
}

/// Criterion 1: metric implementations against brute-force oracles.
fn criterion_1(c: &mut Criteria) {
    let t = Instant::now();
    let mut rng = devdet::rng::stream(417, "acceptance-metrics");
    let mut max_auc_err: f64 = 0.0;
    let mut acc_exact = true;
    for _ in 0..200 {
        let n = rng.gen_range(2..=500);
        // coarse score grid forces plenty of ties
        let scored: Vec<ScoredSample> = (0..n)
            .map(|i| ScoredSample {
                score: rng.gen_range(0..=20) as f64 / 20.0,
                label: if i < n / 2 + 1 { 1 } else { 0 },
                domain_id: 0,
            })
            .collect();
        if scored.iter().all(|s| s.label == 1) || scored.iter().all(|s| s.label == 0) {
            continue;
        }
        let fast = metrics::auc(&scored).unwrap();
        let slow = metrics::auc_pairwise_oracle(&scored);
        max_auc_err = max_auc_err.max((fast - slow).abs());

        let tau = rng.gen_range(0.2..0.8);
        let (f_acc, r_acc) = metrics::acc_split(&scored, tau);
        let n_fake = scored.iter().filter(|s| s.label == 1).count();
        let n_real = scored.len() - n_fake;
        let f_hit = scored.iter().filter(|s| s.label == 1 && s.score >= tau).count();
        let r_hit = scored.iter().filter(|s| s.label == 0 && s.score < tau).count();
        acc_exact &= f_acc == Some(f_hit as f64 / n_fake as f64);
        acc_exact &= r_acc == Some(r_hit as f64 / n_real as f64);
    }
    let secs = t.elapsed().as_secs_f64();
    c.check(
        1,
        max_auc_err <= 1e-12 && acc_exact && secs < 10.0,
        format!("rank-AUC vs pairwise oracle max err {max_auc_err:.2e} (<=1e-12), acc_split exact: {acc_exact}, {secs:.1}s (<10s)"),
    );
}

/// Criterion 6: dictionary objective, atom norms and sparse-code oracles.
fn criterion_6(c: &mut Criteria) {
    let mut rng = devdet::rng::stream(417, "acceptance-dict");

    // fit on random features: objective non-increasing, atoms inside the ball
    let z = Array2::from_shape_fn((16, 60), |_| rng.gen::<f64>() - 0.5);
    let (model, report) = dosedict::fit(&z, 8, 0.1, 99, "oracle-test").unwrap();
    let mut monotone = true;
    for w in report.objective_trace.windows(2) {
        if w[1] > w[0] + 1e-9 {
            monotone = false;
        }
    }
    let mut norms_ok = true;
    for k in 0..model.num_atoms() {
        let norm: f64 = model.dictionary.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 + 1e-12 {
            norms_ok = false;
        }
    }

    // orthonormal closed form: soft-threshold of the correlations
    let mut ortho_ok = true;
    for _ in 0..20 {
        let dim = 6;
        // Gram-Schmidt on random vectors
        let mut cols: Vec<Array1<f64>> = Vec::new();
        while cols.len() < 4 {
            let mut v = Array1::from_shape_fn(dim, |_| rng.gen::<f64>() - 0.5);
            for u in &cols {
                let dot = v.dot(u);
                v = v - u.mapv(|x| x * dot);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-6 {
                cols.push(v.mapv(|x| x / norm));
            }
        }
        let mut d = Array2::zeros((dim, cols.len()));
        for (k, u) in cols.iter().enumerate() {
            d.column_mut(k).assign(u);
        }
        let zv = Array1::from_shape_fn(dim, |_| rng.gen::<f64>() - 0.5);
        let lambda = 0.05;
        let code = dosedict::sparse_code(&d, zv.view(), lambda).unwrap();
        for k in 0..cols.len() {
            let expect = dosedict::soft_threshold(d.column(k).dot(&zv), lambda);
            if (code.alpha[k] - expect).abs() > 1e-6 {
                ortho_ok = false;
            }
        }
    }

    // coordinate-descent oracle on 100 random 5-dim, 8-atom instances
    let mut cd_max_err: f64 = 0.0;
    for _ in 0..100 {
        let mut d = Array2::from_shape_fn((5, 8), |_| rng.gen::<f64>() - 0.5);
        dosedict::project_columns(&mut d);
        let zv = Array1::from_shape_fn(5, |_| rng.gen::<f64>() - 0.5);
        let code = dosedict::sparse_code(&d, zv.view(), 0.1).unwrap();
        let oracle = dosedict::coordinate_descent_oracle(&d, zv.view(), 0.1, 20_000);
        for k in 0..8 {
            cd_max_err = cd_max_err.max((code.alpha[k] - oracle[k]).abs());
        }
    }

    c.check(
        6,
        monotone && norms_ok && ortho_ok && cd_max_err <= 1e-6,
        format!("objective monotone: {monotone}, atom norms <= 1: {norms_ok}, orthonormal closed form: {ortho_ok}, CD oracle max err {cd_max_err:.2e} (<=1e-6)"),
    );
}

/// Criterion 7: analytic gradients against central finite differences.
fn criterion_7(c: &mut Criteria) {
    let mut rng = devdet::rng::stream(417, "acceptance-grad");
    let det = Detector::new(6, 11);
    let images: Vec<Image> = (0..4).map(|_| rand_image(16, &mut rng)).collect();
    let batch: Vec<(&Image, u8)> =
        images.iter().enumerate().map(|(i, im)| (im, (i % 2) as u8)).collect();
    let det_err = detector::gradient_check(&det, &batch, 1e-5, 37);

    let gen = DevGen::new(13);
    let img = rand_image(16, &mut rng);
    let cfg = Stage1Config::default();
    let gen_err = ffdev::stage1_gradient_check(&gen, &det, &img, 1, &cfg, 1e-5, 53).unwrap();

    c.check(
        7,
        det_err < 1e-4 && gen_err < 1e-4,
        format!("detector FD max rel err {det_err:.2e}, generator combined-loss FD max rel err {gen_err:.2e} (<1e-4)"),
    );
}

fn total_wall_ms(log: &str) -> u64 {
    log.lines()
        .filter_map(|l| l.split("wall_ms=").nth(1))
        .filter_map(|v| v.trim().parse::<u64>().ok())
        .sum()
}

fn stage_wall_ms(log: &str, stage: &str) -> u64 {
    log.lines()
        .filter(|l| l.contains(&format!("command={stage} ")))
        .filter_map(|l| l.split("wall_ms=").nth(1))
        .filter_map(|v| v.trim().parse::<u64>().ok())
        .sum()
}

#[test]
fn acceptance() {
    let mut c = Criteria { failures: Vec::new() };

    criterion_1(&mut c);
    criterion_6(&mut c);
    criterion_7(&mut c);

    // full pipeline on the shipped benchmark
    let mut cfg = RunConfig::default();
    cfg.apply_seed(cfg.seed);
    let dir_a = tempfile::tempdir().unwrap();
    let runner = Runner::new(cfg.clone(), dir_a.path());
    let eval = runner.run_all().unwrap();
    let log = std::fs::read_to_string(dir_a.path().join("run_log.txt")).unwrap();

    // criterion 2: threshold collapse on the pretrained detector
    let base = &eval.base_in;
    let min_auc = base.per_domain.values().map(|m| m.auc).fold(f64::INFINITY, f64::min);
    let mean_auc = base.mean_domain_auc();
    let pretrain_ms = stage_wall_ms(&log, "pretrain");
    c.check(
        2,
        min_auc >= 0.95 && base.m_acc <= mean_auc - 0.10 && pretrain_ms <= 600_000,
        format!(
            "min per-domain AUC {min_auc:.3} (>=0.95), M-ACC {:.3} vs mean AUC {mean_auc:.3} (gap {:.3} >= 0.10), pretrain {:.0}s (<=600s)",
            base.m_acc,
            mean_auc - base.m_acc,
            pretrain_ms as f64 / 1000.0
        ),
    );

    // criterion 3: pipeline enhancement within the time budget
    let pipe = &eval.pipe_in;
    let total_ms = total_wall_ms(&log);
    c.check(
        3,
        pipe.m_acc >= base.m_acc + 0.05 && pipe.s_auc >= base.s_auc - 0.01 && total_ms <= 1_500_000,
        format!(
            "M-ACC {:.3} vs base {:.3} (+{:.3} >= 0.05), S-AUC {:.3} vs base {:.3} (drop {:.3} <= 0.01), pipeline {:.0}s (<=1500s)",
            pipe.m_acc,
            base.m_acc,
            pipe.m_acc - base.m_acc,
            pipe.s_auc,
            base.s_auc,
            base.s_auc - pipe.s_auc,
            total_ms as f64 / 1000.0
        ),
    );

    // criterion 4: the unseen-trace domain is left essentially untouched
    let base_h = eval.base_holdout.as_ref().unwrap();
    let pipe_h = eval.pipe_holdout.as_ref().unwrap();
    let delta = (pipe_h.m_acc - base_h.m_acc).abs();
    c.check(
        4,
        delta <= 0.03,
        format!("holdout ACC base {:.3} vs pipeline {:.3} (|delta| {delta:.3} <= 0.03)", base_h.m_acc, pipe_h.m_acc),
    );

    // criterion 5: ablation ordering
    let ablation = runner.cmd_ablate().unwrap();
    let get = |name: &str| ablation.variants.iter().find(|v| v.name == name).unwrap();
    let base_v = get("base");
    let ffdev_only = get("ffdev_only");
    let fixed = get("ffdev_fixed");
    let adaptive = get("ffdev_adaptive");
    let ordering = ffdev_only.m_acc_in >= base_v.m_acc_in + 0.01
        && adaptive.m_acc_in >= fixed.m_acc_in + 0.01;
    let ffdev_holdout = ffdev_only.holdout_acc.unwrap();
    let holdout_lowest = ablation
        .variants
        .iter()
        .filter(|v| v.name != "ffdev_only")
        .all(|v| v.holdout_acc.unwrap() >= ffdev_holdout + 0.01);
    c.check(
        5,
        ordering && holdout_lowest,
        format!(
            "in-domain M-ACC base {:.3} < ffdev_only {:.3}, fixed {:.3} < adaptive {:.3} (margins >= 0.01): {ordering}; ffdev_only holdout {:.3} lowest: {holdout_lowest}",
            base_v.m_acc_in, ffdev_only.m_acc_in, fixed.m_acc_in, adaptive.m_acc_in, ffdev_holdout
        ),
    );

    // criterion 8: dose 0 leaves the detector untouched, bit for bit
    let bundle = daft::load_bundle(&dir_a.path().join("bundle")).unwrap();
    let manifest = Manifest::load(&dir_a.path().join("bench/manifest.txt")).unwrap();
    let all = data::load_samples(&manifest, &dir_a.path().join("bench")).unwrap();
    let test = all.split("test", &manifest, Split::Test);
    let mut zero = bundle.clone();
    zero.base_dose = 0.0;
    let mut identical = true;
    for s in test.samples.iter().take(24) {
        let via_pipe = zero.infer(&s.image).unwrap().confidence;
        let direct = zero.detector.predict(&s.image).0;
        if via_pipe.to_bits() != direct.to_bits() {
            identical = false;
        }
    }
    c.check(8, identical, "dose 0 end-to-end confidences bit-identical to the detector".into());

    // criterion 9: developer preserves easy reals and lifts hard fakes
    let (det, _) = Detector::load(&dir_a.path().join("detector_base.ckpt")).unwrap();
    let (gen, _) = DevGen::load(&dir_a.path().join("generator.ckpt")).unwrap();
    let rows = mining::load_score_table(&dir_a.path().join("scores_train.tsv")).unwrap();
    let pool_ids: std::collections::HashSet<String> = manifest
        .records
        .iter()
        .filter(|r| r.split != Split::Test)
        .map(|r| r.sample_id())
        .collect();
    let pool = all.filter("train+val", |s| pool_ids.contains(&s.sample_id));
    let n_fake = pool.samples.iter().filter(|s| s.label == 1).count();
    let mc = cfg.mining.resolve(n_fake, pool.len() - n_fake);
    let (hf, er) = mining::mine_scores(&rows, &pool, &mc).unwrap();
    let eps = cfg.stage1.dose_epsilon;
    let develop = |x: &Image| -> f64 {
        let delta = gen.developer(x);
        let dev = ffdev::apply_developer(x, &delta, eps).unwrap();
        det.predict(&dev).0
    };
    let er_kept = er.samples.iter().filter(|s| develop(&s.image) < 0.5).count();
    let er_frac = er_kept as f64 / er.len() as f64;
    let hf_rise = hf
        .samples
        .iter()
        .map(|s| develop(&s.image) - det.predict(&s.image).0)
        .sum::<f64>()
        / hf.len() as f64;
    c.check(
        9,
        er_frac >= 0.95 && hf_rise >= 0.10,
        format!("S_ER still real after developing: {er_frac:.3} (>=0.95), mean S_HF confidence rise {hf_rise:.3} (>=0.10)"),
    );

    // criterion 10: bytewise reproducibility of a second identically-seeded run
    let dir_b = tempfile::tempdir().unwrap();
    let runner_b = Runner::new(cfg.clone(), dir_b.path());
    runner_b.run_all().unwrap();
    let mut reproducible = true;
    let mut compared = 0;
    for entry in std::fs::read_dir(dir_a.path().join("reports")).unwrap() {
        let name = entry.unwrap().file_name();
        let name_str = name.to_string_lossy();
        if !name_str.starts_with("report_") {
            continue;
        }
        let a = std::fs::read(dir_a.path().join("reports").join(&name)).unwrap();
        let b = std::fs::read(dir_b.path().join("reports").join(&name)).unwrap();
        compared += 1;
        if a != b {
            reproducible = false;
        }
    }
    c.check(
        10,
        reproducible && compared >= 4,
        format!("{compared} metrics reports byte-identical across two runs: {reproducible}"),
    );

    assert!(c.failures.is_empty(), "failed criteria:\n{}", c.failures.join("\n"));
}
