//! Sparse dictionary over hard-fake features. Inference-time reconstruction
//! error measures how much an input resembles the hard fakes the dictionary
//! was fitted to; the adaptive dose maps low error to a high developer dose.

use crate::error::{Error, Result};
use crate::rng;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct DoseDictModel {
    /// d x K, columns are atoms with l2 norm <= 1.
    pub dictionary: Array2<f64>,
    pub lambda_l1: f64,
    /// Feature pre-scale: features are multiplied by this before coding
    /// (fitted so the training features have unit mean norm).
    pub feat_scale: f64,
    /// Calibration percentile errors for the dose map; lo < hi.
    pub calib_lo: f64,
    pub calib_hi: f64,
    /// Content hash of the checkpoint of the feature extractor used to fit.
    pub extractor_hash: String,
}

impl DoseDictModel {
    pub fn feature_dim(&self) -> usize {
        self.dictionary.nrows()
    }
    pub fn num_atoms(&self) -> usize {
        self.dictionary.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct SparseCode {
    pub alpha: Array1<f64>,
    pub objective_value: f64,
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn lasso_objective(d: &Array2<f64>, z: ArrayView1<f64>, alpha: &Array1<f64>, lambda: f64) -> f64 {
    let r = &z.to_owned() - &d.dot(alpha);
    0.5 * r.dot(&r) + lambda * alpha.iter().map(|a| a.abs()).sum::<f64>()
}

/// Largest eigenvalue of D^T D by power iteration (deterministic start).
fn lipschitz(d: &Array2<f64>) -> f64 {
    let k = d.ncols();
    if k == 0 {
        return 1.0;
    }
    let gram = d.t().dot(d);
    let mut v = Array1::from_elem(k, 1.0 / (k as f64).sqrt());
    let mut lam = 1.0;
    for _ in 0..100 {
        let w = gram.dot(&v);
        let n = w.dot(&w).sqrt();
        if n < 1e-300 {
            return 1.0;
        }
        let next = w / n;
        let new_lam = next.dot(&gram.dot(&next));
        if (new_lam - lam).abs() < 1e-12 * new_lam.abs().max(1.0) {
            lam = new_lam;
            break;
        }
        lam = new_lam;
        v = next;
    }
    lam.max(1e-12)
}

const ISTA_TOL: f64 = 1e-10;
const ISTA_MAX_ITERS: usize = 50_000;

/// min_a 0.5 ||z - D a||^2 + lambda ||a||_1 by fixed-step iterative
/// soft-thresholding from a = 0.
pub fn sparse_code(d: &Array2<f64>, z: ArrayView1<f64>, lambda: f64) -> Result<SparseCode> {
    if z.iter().any(|v| !v.is_finite()) || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite input to sparse_code".into()));
    }
    if d.nrows() != z.len() {
        return Err(Error::Shape(format!(
            "dictionary rows {} vs feature length {}",
            d.nrows(),
            z.len()
        )));
    }
    let step = 1.0 / lipschitz(d);
    let mut alpha: Array1<f64> = Array1::zeros(d.ncols());
    for _ in 0..ISTA_MAX_ITERS {
        let r = &z.to_owned() - &d.dot(&alpha);
        let grad = -d.t().dot(&r);
        let mut next = Array1::zeros(d.ncols());
        for k in 0..d.ncols() {
            next[k] = soft_threshold(alpha[k] - step * grad[k], step * lambda);
        }
        let max_change = next
            .iter()
            .zip(alpha.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        alpha = next;
        if max_change < ISTA_TOL {
            break;
        }
    }
    let obj = lasso_objective(d, z, &alpha, lambda);
    debug_assert!(obj <= lasso_objective(d, z, &Array1::zeros(d.ncols()), lambda) + 1e-12);
    Ok(SparseCode { alpha, objective_value: obj })
}

/// Solve the K x K SPD system (G + jitter I) X = B by Cholesky.
fn cholesky_solve(g: &Array2<f64>, b: &Array2<f64>, jitter: f64) -> Result<Array2<f64>> {
    let k = g.nrows();
    let mut l = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let mut s = g[[i, j]] + if i == j { jitter } else { 0.0 };
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric("Cholesky failed on gram matrix".into()));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    // solve L Y = B, then L^T X = Y, column by column
    let cols = b.ncols();
    let mut x = b.clone();
    for c in 0..cols {
        for i in 0..k {
            let mut s = x[[i, c]];
            for p in 0..i {
                s -= l[[i, p]] * x[[p, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
        for i in (0..k).rev() {
            let mut s = x[[i, c]];
            for p in i + 1..k {
                s -= l[[p, i]] * x[[p, c]];
            }
            x[[i, c]] = s / l[[i, i]];
        }
    }
    Ok(x)
}

const RIDGE_JITTER: f64 = 1e-10;

/// One block-coordinate pass over atoms: each column is set to the exact
/// minimizer of ||Z - D A||_F^2 over that column subject to ||d_k|| <= 1
/// (the unconstrained optimum projected onto the unit ball, exact because
/// the objective is spherically symmetric around it). Columns whose code
/// row is zero are left unchanged, so the objective never increases.
/// Returns (D, warned) where `warned` flags an all-zero code matrix.
pub fn update_dictionary(z: &Array2<f64>, a: &Array2<f64>, prev: &Array2<f64>) -> Result<(Array2<f64>, bool)> {
    if a.iter().all(|v| *v == 0.0) {
        return Ok((prev.clone(), true));
    }
    if z.ncols() != a.ncols() {
        return Err(Error::Shape(format!("Z has {} columns, A has {}", z.ncols(), a.ncols())));
    }
    let mut d = prev.clone();
    let mut resid = z - &d.dot(a);
    for k in 0..d.ncols() {
        let ak = a.row(k).to_owned();
        let s = ak.dot(&ak);
        if s == 0.0 {
            continue;
        }
        let dk_old = d.column(k).to_owned();
        // minimizer of the column subproblem: (E + d_k a_k) a_k^T / ||a_k||^2
        let mut dk = (resid.dot(&ak) + &dk_old * s) / s;
        let n = dk.dot(&dk).sqrt();
        if n > 1.0 {
            dk.mapv_inplace(|v| v / n);
        }
        let diff = &dk_old - &dk;
        for (j, &aj) in ak.iter().enumerate() {
            if aj != 0.0 {
                let mut col = resid.column_mut(j);
                col += &(&diff * aj);
            }
        }
        d.column_mut(k).assign(&dk);
    }
    Ok((d, false))
}

/// Rescale any column with norm > 1 to unit norm.
pub fn project_columns(d: &mut Array2<f64>) {
    for mut col in d.axis_iter_mut(Axis(1)) {
        let n = col.dot(&col).sqrt();
        if n > 1.0 {
            col.mapv_inplace(|v| v / n);
        }
    }
}

/// Pre-projection least squares, exposed for the recovery oracle tests.
pub fn least_squares_dictionary(z: &Array2<f64>, a: &Array2<f64>) -> Result<Array2<f64>> {
    let aat = a.dot(&a.t());
    let zat = z.dot(&a.t());
    let xt = cholesky_solve(&aat, &zat.t().to_owned(), RIDGE_JITTER)?;
    Ok(xt.t().to_owned())
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub objective_trace: Vec<f64>,
    pub rounds: usize,
    pub warned_underdetermined: bool,
    pub warned_zero_codes: bool,
}

const FIT_REL_TOL: f64 = 1e-6;
const FIT_MAX_ROUNDS: usize = 100;
const FIT_SLACK: f64 = 1e-9;

/// Alternating minimization of the dictionary objective over hard-fake
/// feature columns `z_raw` (d x N). Features are rescaled to unit mean norm;
/// the scale is stored in the model. Calibration percentiles are left unset
/// (calibrate afterwards with `calibrate`).
pub fn fit(
    z_raw: &Array2<f64>,
    num_atoms: usize,
    lambda_l1: f64,
    seed: u64,
    extractor_hash: &str,
) -> Result<(DoseDictModel, FitReport)> {
    let (dim, n) = z_raw.dim();
    if n == 0 || num_atoms == 0 {
        return Err(Error::Config("need at least one feature and one atom".into()));
    }
    let warned_underdetermined = n < num_atoms;
    let mean_norm = z_raw
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .sum::<f64>()
        / n as f64;
    let feat_scale = if mean_norm > 0.0 { 1.0 / mean_norm } else { 1.0 };
    let z = z_raw * feat_scale;
    // init atoms from random data columns, projected
    let mut r = rng::stream(seed, "dosedict-init");
    let mut d = Array2::zeros((dim, num_atoms));
    for k in 0..num_atoms {
        let src = r.gen_range(0..n);
        for i in 0..dim {
            // tiny jitter keeps duplicate-column inits from degenerating
            d[[i, k]] = z[[i, src]] + 1e-6 * r.gen_range(-1.0..1.0);
        }
    }
    project_columns(&mut d);

    let mut objective_trace: Vec<f64> = Vec::new();
    let mut warned_zero_codes = false;
    let mut a = Array2::zeros((num_atoms, n));
    for round in 0..FIT_MAX_ROUNDS {
        let mut obj = 0.0;
        for i in 0..n {
            let code = sparse_code(&d, z.column(i), lambda_l1)?;
            obj += code.objective_value;
            a.column_mut(i).assign(&code.alpha);
        }
        if let Some(&prev) = objective_trace.last() {
            if obj > prev + FIT_SLACK {
                return Err(Error::Numeric(format!(
                    "dictionary objective increased at round {round}: {prev} -> {obj}"
                )));
            }
            if (prev - obj).abs() <= FIT_REL_TOL * prev.abs().max(1e-12) {
                objective_trace.push(obj);
                break;
            }
        }
        objective_trace.push(obj);
        let (next_d, warned) = update_dictionary(&z, &a, &d)?;
        warned_zero_codes |= warned;
        d = next_d;
    }
    let rounds = objective_trace.len();
    let model = DoseDictModel {
        dictionary: d,
        lambda_l1,
        feat_scale,
        calib_lo: 0.0,
        calib_hi: 1.0,
        extractor_hash: extractor_hash.to_string(),
    };
    Ok((model, FitReport { objective_trace, rounds, warned_underdetermined, warned_zero_codes }))
}

/// e(z) = || z - D a*(z) ||_2 on the rescaled feature.
pub fn reconstruction_error(model: &DoseDictModel, z: ArrayView1<f64>) -> Result<f64> {
    let zs = z.to_owned() * model.feat_scale;
    let code = sparse_code(&model.dictionary, zs.view(), model.lambda_l1)?;
    let r = &zs - &model.dictionary.dot(&code.alpha);
    Ok(r.dot(&r).sqrt())
}

/// Percentile with linear interpolation on the sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Anchor the dose map at percentile reconstruction errors of the
/// calibration features (the full training set); defaults are the 5th and
/// 95th percentiles.
pub fn calibrate(
    model: &mut DoseDictModel,
    calib_features: &Array2<f64>,
    lo_pct: f64,
    hi_pct: f64,
) -> Result<()> {
    let n = calib_features.ncols();
    if n == 0 {
        return Err(Error::Config("calibration set is empty".into()));
    }
    if !(0.0..1.0).contains(&lo_pct) || !(lo_pct..=1.0).contains(&hi_pct) {
        return Err(Error::Config(format!(
            "calibration percentiles ({lo_pct}, {hi_pct}) must satisfy 0 <= lo < hi <= 1"
        )));
    }
    let mut errs: Vec<f64> = (0..n)
        .map(|i| reconstruction_error(model, calib_features.column(i)))
        .collect::<Result<_>>()?;
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = percentile(&errs, lo_pct);
    let hi = percentile(&errs, hi_pct);
    if !(lo < hi) {
        return Err(Error::Numeric(format!(
            "degenerate calibration percentiles: lo {lo} >= hi {hi}"
        )));
    }
    model.calib_lo = lo;
    model.calib_hi = hi;
    Ok(())
}

/// Adaptive dose: base_dose * clip((hi - e)/(hi - lo), 0, 1). Monotone
/// non-increasing in the error, range [0, base_dose].
pub fn adaptive_dose(model: &DoseDictModel, error: f64, base_dose: f64) -> f64 {
    let t = (model.calib_hi - error) / (model.calib_hi - model.calib_lo);
    base_dose * t.clamp(0.0, 1.0)
}

const DICT_MAGIC: &str = "devdet-dosedict v1";

/// Header (d, K, lambda, feat_scale, calib_lo/hi, extractor hash) followed
/// by column-major little-endian f64 for D.
pub fn save_dict(model: &DoseDictModel, path: &Path) -> Result<()> {
    let mut header = String::from(DICT_MAGIC);
    header.push('\n');
    header.push_str(&format!("d = {}\n", model.feature_dim()));
    header.push_str(&format!("K = {}\n", model.num_atoms()));
    header.push_str(&format!("lambda = {:e}\n", model.lambda_l1));
    header.push_str(&format!("feat_scale = {:e}\n", model.feat_scale));
    header.push_str(&format!("calib_lo = {:e}\n", model.calib_lo));
    header.push_str(&format!("calib_hi = {:e}\n", model.calib_hi));
    header.push_str(&format!("extractor_hash = {}\n", model.extractor_hash));
    header.push_str("end_header\n");
    let mut bytes = header.into_bytes();
    for col in model.dictionary.axis_iter(Axis(1)) {
        for v in col {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dict(path: &Path) -> Result<DoseDictModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_string() };
    let tag = b"end_header\n";
    let hend = bytes
        .windows(tag.len())
        .position(|w| w == tag)
        .ok_or_else(|| bad("missing end_header"))?
        + tag.len();
    let header = std::str::from_utf8(&bytes[..hend]).map_err(|_| bad("header not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some(DICT_MAGIC) {
        return Err(bad("bad magic"));
    }
    let mut kv = std::collections::HashMap::new();
    for line in lines {
        if line == "end_header" {
            break;
        }
        let (k, v) = line.split_once(" = ").ok_or_else(|| bad("malformed header line"))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(&format!("missing {k}")));
    let d: usize = get("d")?.parse().map_err(|_| bad("bad d"))?;
    let k: usize = get("K")?.parse().map_err(|_| bad("bad K"))?;
    let lambda_l1: f64 = get("lambda")?.parse().map_err(|_| bad("bad lambda"))?;
    let feat_scale: f64 = get("feat_scale")?.parse().map_err(|_| bad("bad feat_scale"))?;
    let calib_lo: f64 = get("calib_lo")?.parse().map_err(|_| bad("bad calib_lo"))?;
    let calib_hi: f64 = get("calib_hi")?.parse().map_err(|_| bad("bad calib_hi"))?;
    let extractor_hash = get("extractor_hash")?.clone();
    let body = &bytes[hend..];
    if body.len() != d * k * 8 {
        return Err(bad("dictionary payload size mismatch"));
    }
    let mut dict = Array2::zeros((d, k));
    for col in 0..k {
        for row in 0..d {
            let off = (col * d + row) * 8;
            dict[[row, col]] = f64::from_le_bytes(body[off..off + 8].try_into().unwrap());
        }
    }
    if !(calib_lo < calib_hi) {
        return Err(bad("calib_lo must be < calib_hi"));
    }
    Ok(DoseDictModel { dictionary: dict, lambda_l1, feat_scale, calib_lo, calib_hi, extractor_hash })
}

/// Coordinate-descent LASSO solver to convergence. Independent oracle for
/// `sparse_code`; kept out of the inference path.
pub fn coordinate_descent_oracle(d: &Array2<f64>, z: ArrayView1<f64>, lambda: f64, iters: usize) -> Array1<f64> {
    let k = d.ncols();
    let mut alpha = Array1::<f64>::zeros(k);
    let col_sq: Vec<f64> = (0..k).map(|j| d.column(j).dot(&d.column(j))).collect();
    for _ in 0..iters {
        for j in 0..k {
            if col_sq[j] == 0.0 {
                continue;
            }
            let mut r = z.to_owned() - d.dot(&alpha);
            r = r + &(d.column(j).to_owned() * alpha[j]);
            let rho = d.column(j).dot(&r);
            alpha[j] = soft_threshold(rho, lambda) / col_sq[j];
        }
    }
    alpha
}
