//! Evaluation protocol: per-domain AUC, pooled S-AUC, F-ACC / R-ACC / M-ACC
//! at a fixed threshold.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    /// 1 = fake, 0 = real.
    pub label: u8,
    pub domain_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainMetrics {
    pub auc: f64,
    pub f_acc: f64,
    pub r_acc: f64,
    pub n_fake: usize,
    pub n_real: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub per_domain: BTreeMap<u32, DomainMetrics>,
    pub s_auc: f64,
    pub m_acc: f64,
    pub threshold: f64,
}

/// AUC via rank statistics (Mann-Whitney U with midranks for ties).
/// Equals the pairwise formula (1/|P||N|) sum [I(s_i > s_j) + 1/2 I(s_i = s_j)].
pub fn auc(scored: &[ScoredSample]) -> Result<f64> {
    let n_pos = scored.iter().filter(|s| s.label == 1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes (got {n_pos} fake, {n_neg} real)"
        )));
    }
    if scored.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| scored[a].score.partial_cmp(&scored[b].score).unwrap());
    // midrank sum over positives
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scored[idx[j + 1]].score == scored[idx[i]].score {
            j += 1;
        }
        // ranks i+1 ..= j+1 share midrank
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if scored[k].label == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// (F-ACC, R-ACC) at threshold tau; score >= tau classifies as fake.
/// An absent class yields `None` for its accuracy.
pub fn acc_split(scored: &[ScoredSample], threshold: f64) -> (Option<f64>, Option<f64>) {
    let (mut nf, mut cf, mut nr, mut cr) = (0usize, 0usize, 0usize, 0usize);
    for s in scored {
        if s.label == 1 {
            nf += 1;
            if s.score >= threshold {
                cf += 1;
            }
        } else {
            nr += 1;
            if s.score < threshold {
                cr += 1;
            }
        }
    }
    let f = (nf > 0).then(|| cf as f64 / nf as f64);
    let r = (nr > 0).then(|| cr as f64 / nr as f64);
    (f, r)
}

/// Pooled S-AUC plus per-domain AUC/ACC and the mean-over-domains M-ACC.
pub fn summarize(scored: &[ScoredSample], threshold: f64) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(Error::UndefinedMetric("empty score set".into()));
    }
    let s_auc = auc(scored)?;
    let mut per_domain = BTreeMap::new();
    let mut domains: Vec<u32> = scored.iter().map(|s| s.domain_id).collect();
    domains.sort_unstable();
    domains.dedup();
    let mut acc_sum = 0.0;
    for d in &domains {
        let dom: Vec<ScoredSample> = scored.iter().copied().filter(|s| s.domain_id == *d).collect();
        let dauc = auc(&dom)?;
        let (f, r) = acc_split(&dom, threshold);
        let (f, r) = (
            f.ok_or_else(|| Error::UndefinedMetric(format!("domain {d} has no fakes")))?,
            r.ok_or_else(|| Error::UndefinedMetric(format!("domain {d} has no reals")))?,
        );
        acc_sum += (f + r) / 2.0;
        per_domain.insert(
            *d,
            DomainMetrics {
                auc: dauc,
                f_acc: f,
                r_acc: r,
                n_fake: dom.iter().filter(|s| s.label == 1).count(),
                n_real: dom.iter().filter(|s| s.label == 0).count(),
            },
        );
    }
    Ok(MetricsReport {
        per_domain,
        s_auc,
        m_acc: acc_sum / domains.len() as f64,
        threshold,
    })
}

impl MetricsReport {
    /// Stable-key-order text form; parse back with `from_text`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("devdet-metrics v1\n");
        let _ = writeln!(out, "threshold = {:.9}", self.threshold);
        let _ = writeln!(out, "s_auc = {:.9}", self.s_auc);
        let _ = writeln!(out, "m_acc = {:.9}", self.m_acc);
        for (d, m) in &self.per_domain {
            let _ = writeln!(
                out,
                "domain {} auc = {:.9} f_acc = {:.9} r_acc = {:.9} n_fake = {} n_real = {}",
                d, m.auc, m.f_acc, m.r_acc, m.n_fake, m.n_real
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn from_text(text: &str, path: &Path) -> Result<MetricsReport> {
        let bad = |m: &str| Error::Format { path: path.to_path_buf(), message: m.to_string() };
        let mut lines = text.lines();
        if lines.next() != Some("devdet-metrics v1") {
            return Err(bad("bad magic"));
        }
        let mut threshold = None;
        let mut s_auc = None;
        let mut m_acc = None;
        let mut per_domain = BTreeMap::new();
        for line in lines {
            if let Some(v) = line.strip_prefix("threshold = ") {
                threshold = Some(v.parse().map_err(|_| bad("bad threshold"))?);
            } else if let Some(v) = line.strip_prefix("s_auc = ") {
                s_auc = Some(v.parse().map_err(|_| bad("bad s_auc"))?);
            } else if let Some(v) = line.strip_prefix("m_acc = ") {
                m_acc = Some(v.parse().map_err(|_| bad("bad m_acc"))?);
            } else if let Some(rest) = line.strip_prefix("domain ") {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.len() != 16 {
                    return Err(bad("malformed domain line"));
                }
                let d: u32 = toks[0].parse().map_err(|_| bad("bad domain id"))?;
                let get = |i: usize| -> Result<f64> {
                    toks[i].parse().map_err(|_| bad("bad domain metric"))
                };
                per_domain.insert(
                    d,
                    DomainMetrics {
                        auc: get(3)?,
                        f_acc: get(6)?,
                        r_acc: get(9)?,
                        n_fake: toks[12].parse().map_err(|_| bad("bad count"))?,
                        n_real: toks[15].parse().map_err(|_| bad("bad count"))?,
                    },
                );
            } else if !line.trim().is_empty() {
                return Err(bad(&format!("unexpected line: {line}")));
            }
        }
        Ok(MetricsReport {
            per_domain,
            s_auc: s_auc.ok_or_else(|| bad("missing s_auc"))?,
            m_acc: m_acc.ok_or_else(|| bad("missing m_acc"))?,
            threshold: threshold.ok_or_else(|| bad("missing threshold"))?,
        })
    }

    pub fn load(path: &Path) -> Result<MetricsReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn mean_domain_auc(&self) -> f64 {
        self.per_domain.values().map(|m| m.auc).sum::<f64>() / self.per_domain.len() as f64
    }
}

/// O(|P||N|) pairwise AUC. Test oracle; kept here so the acceptance suite and
/// unit tests share one definition, never used by `auc` itself.
pub fn auc_pairwise_oracle(scored: &[ScoredSample]) -> f64 {
    let pos: Vec<f64> = scored.iter().filter(|s| s.label == 1).map(|s| s.score).collect();
    let neg: Vec<f64> = scored.iter().filter(|s| s.label == 0).map(|s| s.score).collect();
    let mut acc = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                acc += 1.0;
            } else if p == n {
                acc += 0.5;
            }
        }
    }
    acc / (pos.len() as f64 * neg.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn s(score: f64, label: u8, domain_id: u32) -> ScoredSample {
        ScoredSample { score, label, domain_id }
    }

    #[test]
    fn separated_scores_give_auc_one() {
        let data = vec![s(0.9, 1, 0), s(0.9, 1, 0), s(0.8, 0, 0), s(0.8, 0, 0)];
        assert_eq!(auc(&data).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let data = vec![s(0.4, 1, 0), s(0.4, 0, 0), s(0.4, 1, 0), s(0.4, 0, 0)];
        assert_eq!(auc(&data).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        let data = vec![s(0.4, 1, 0)];
        assert!(matches!(auc(&data), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rank_auc_matches_pairwise_oracle() {
        let mut rng = crate::rng::stream(11, "auc-oracle");
        for case in 0..200 {
            let n = rng.gen_range(2..=500);
            let mut data = Vec::with_capacity(n);
            let mut have = [false, false];
            for i in 0..n {
                let label = if i < 2 { i as u8 } else { rng.gen_range(0..2) as u8 };
                have[label as usize] = true;
                // quantized scores inject ties
                let score = (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0;
                data.push(s(score, label, 0));
            }
            assert!(have[0] && have[1]);
            let fast = auc(&data).unwrap();
            let slow = auc_pairwise_oracle(&data);
            assert!((fast - slow).abs() < 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn acc_split_matches_counting_oracle() {
        let mut rng = crate::rng::stream(13, "acc-oracle");
        for _ in 0..50 {
            let n = rng.gen_range(1..200);
            let data: Vec<ScoredSample> = (0..n)
                .map(|_| s((rng.gen_range(0.0..1.0f64) * 10.0).round() / 10.0, rng.gen_range(0..2) as u8, 0))
                .collect();
            let tau = 0.5;
            let (f, r) = acc_split(&data, tau);
            // direct counting
            let fakes: Vec<&ScoredSample> = data.iter().filter(|x| x.label == 1).collect();
            let reals: Vec<&ScoredSample> = data.iter().filter(|x| x.label == 0).collect();
            match f {
                Some(v) => {
                    let c = fakes.iter().filter(|x| x.score >= tau).count();
                    assert_eq!(v, c as f64 / fakes.len() as f64);
                }
                None => assert!(fakes.is_empty()),
            }
            match r {
                Some(v) => {
                    let c = reals.iter().filter(|x| x.score < tau).count();
                    assert_eq!(v, c as f64 / reals.len() as f64);
                }
                None => assert!(reals.is_empty()),
            }
        }
    }

    #[test]
    fn boundary_score_counts_as_fake() {
        let data = vec![s(0.5, 1, 0), s(0.5, 0, 0)];
        let (f, r) = acc_split(&data, 0.5);
        assert_eq!(f, Some(1.0));
        assert_eq!(r, Some(0.0));
    }

    #[test]
    fn fixed_threshold_random_guess_case() {
        // fakes 0.9, reals 0.8: perfect ranking, useless threshold
        let data = vec![s(0.9, 1, 0), s(0.9, 1, 0), s(0.8, 0, 0), s(0.8, 0, 0)];
        let r = summarize(&data, 0.5).unwrap();
        assert_eq!(r.s_auc, 1.0);
        assert_eq!(r.m_acc, 0.5);
    }

    #[test]
    fn single_domain_s_auc_equals_domain_auc() {
        let data = vec![s(0.7, 1, 3), s(0.2, 0, 3), s(0.6, 1, 3), s(0.4, 0, 3)];
        let r = summarize(&data, 0.5).unwrap();
        assert_eq!(r.s_auc, r.per_domain[&3].auc);
    }

    #[test]
    fn interleaved_domains_break_pooled_auc() {
        // each domain internally separated, ranges interleave across domains
        let data = vec![s(0.30, 1, 0), s(0.20, 0, 0), s(0.80, 1, 1), s(0.70, 0, 1)];
        let r = summarize(&data, 0.5).unwrap();
        assert_eq!(r.per_domain[&0].auc, 1.0);
        assert_eq!(r.per_domain[&1].auc, 1.0);
        assert_eq!(r.s_auc, auc_pairwise_oracle(&data));
        assert!(r.s_auc < 1.0);
    }

    #[test]
    fn report_text_roundtrip() {
        let data = vec![s(0.30, 1, 0), s(0.20, 0, 0), s(0.80, 1, 1), s(0.70, 0, 1)];
        let r = summarize(&data, 0.5).unwrap();
        let text = r.to_text();
        let back = MetricsReport::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = crate::rng::stream(17, "auc-mono");
        let data: Vec<ScoredSample> =
            (0..60).map(|i| s(rng.gen_range(0.0..1.0), (i % 2) as u8, 0)).collect();
        let a = auc(&data).unwrap();
        let mapped: Vec<ScoredSample> = data
            .iter()
            .map(|x| s(1.0 / (1.0 + (-5.0 * (x.score - 0.3)).exp()), x.label, 0))
            .collect();
        let b = auc(&mapped).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
