//! Hard-fake / easy-real selection against a frozen pretrained detector.
//! Both sets take the k samples whose confidence is closest to 0 within
//! their class: the most real-looking fakes and the most confidently real
//! reals. Ties break by sample_id.

use crate::data::{Sample, SampleSet};
use crate::detector::BinaryDetector;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Hard fakes plus easy reals (the default pipeline).
    HfEr,
    /// Hard fakes only.
    HfOnly,
    /// Hard fakes plus hard reals (reals with highest confidence).
    HfHr,
    /// The full training set.
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiningConfig {
    pub k_hard_fake: usize,
    pub k_easy_real: usize,
    pub strategy: Strategy,
}

impl MiningConfig {
    /// Desk-scale default: 10% of each class population.
    pub fn default_for(n_fake: usize, n_real: usize) -> MiningConfig {
        MiningConfig {
            k_hard_fake: (n_fake / 10).max(1),
            k_easy_real: (n_real / 10).max(1),
            strategy: Strategy::HfEr,
        }
    }
}

/// One row of the cached score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub confidence: f64,
    pub label: u8,
    pub domain_id: u32,
}

/// Run inference over a set and cache (sample_id, confidence, label, domain).
pub fn score_table(model: &impl BinaryDetector, set: &SampleSet) -> Vec<ScoreRow> {
    set.samples
        .iter()
        .map(|s| ScoreRow {
            sample_id: s.sample_id.clone(),
            confidence: model.predict(&s.image).0,
            label: s.label,
            domain_id: s.domain_id,
        })
        .collect()
}

pub fn save_score_table(rows: &[ScoreRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.9}\t{}\t{}\n",
            r.sample_id, r.confidence, r.label, r.domain_id
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_score_table(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Format { path: path.to_path_buf(), message: m };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields: {l}")));
            }
            Ok(ScoreRow {
                sample_id: f[0].to_string(),
                confidence: f[1].parse().map_err(|_| bad(format!("bad confidence: {l}")))?,
                label: f[2].parse().map_err(|_| bad(format!("bad label: {l}")))?,
                domain_id: f[3].parse().map_err(|_| bad(format!("bad domain: {l}")))?,
            })
        })
        .collect()
}

/// Lowest-confidence k of one class; ties broken by sample_id.
fn select_low(rows: &[ScoreRow], label: u8, k: usize) -> Result<Vec<String>> {
    let mut class: Vec<&ScoreRow> = rows.iter().filter(|r| r.label == label).collect();
    if k < 1 || k > class.len() {
        return Err(Error::Config(format!(
            "k = {k} out of range for class {label} with population {}",
            class.len()
        )));
    }
    class.sort_by(|a, b| {
        a.confidence
            .partial_cmp(&b.confidence)
            .unwrap()
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    Ok(class[..k].iter().map(|r| r.sample_id.clone()).collect())
}

fn select_high(rows: &[ScoreRow], label: u8, k: usize) -> Result<Vec<String>> {
    let mut class: Vec<&ScoreRow> = rows.iter().filter(|r| r.label == label).collect();
    if k < 1 || k > class.len() {
        return Err(Error::Config(format!(
            "k = {k} out of range for class {label} with population {}",
            class.len()
        )));
    }
    class.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    Ok(class[..k].iter().map(|r| r.sample_id.clone()).collect())
}

fn subset(train: &SampleSet, ids: &[String], name: &str) -> SampleSet {
    let by_id: std::collections::HashMap<&str, &Sample> =
        train.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    SampleSet {
        samples: ids.iter().map(|id| by_id[id.as_str()].clone()).collect(),
        name: name.to_string(),
    }
}

/// Select (S_HF, S_ER) from cached scores.
pub fn mine_scores(
    rows: &[ScoreRow],
    train: &SampleSet,
    config: &MiningConfig,
) -> Result<(SampleSet, SampleSet)> {
    let hf = select_low(rows, 1, config.k_hard_fake)?;
    let er = select_low(rows, 0, config.k_easy_real)?;
    Ok((subset(train, &hf, "S_HF"), subset(train, &er, "S_ER")))
}

/// Select (S_HF, S_ER) by running the model over the training set.
pub fn mine(
    model: &impl BinaryDetector,
    train: &SampleSet,
    config: &MiningConfig,
) -> Result<(SampleSet, SampleSet)> {
    mine_scores(&score_table(model, train), train, config)
}

/// The supplement's strategy grid. Returns the stage-1 training set.
pub fn mine_variant_scores(
    rows: &[ScoreRow],
    train: &SampleSet,
    config: &MiningConfig,
) -> Result<SampleSet> {
    match config.strategy {
        Strategy::HfEr => {
            let (hf, er) = mine_scores(rows, train, config)?;
            let mut samples = hf.samples;
            samples.extend(er.samples);
            Ok(SampleSet { samples, name: "S_1".into() })
        }
        Strategy::HfOnly => {
            let hf = select_low(rows, 1, config.k_hard_fake)?;
            Ok(subset(train, &hf, "S_HF"))
        }
        Strategy::HfHr => {
            let hf = select_low(rows, 1, config.k_hard_fake)?;
            let hr = select_high(rows, 0, config.k_easy_real)?;
            let mut ids = hf;
            ids.extend(hr);
            Ok(subset(train, &ids, "S_HF+S_HR"))
        }
        Strategy::All => Ok(SampleSet { samples: train.samples.clone(), name: train.name.clone() }),
    }
}

pub fn mine_variant(
    model: &impl BinaryDetector,
    train: &SampleSet,
    config: &MiningConfig,
) -> Result<SampleSet> {
    mine_variant_scores(&score_table(model, train), train, config)
}
