//! Evaluation: coverage-aware classification metrics, justification-quality
//! aggregation, listwise judge rankings with Borda counts, and Friedman +
//! Nemenyi significance tests.
//!
//! All percentages render at two decimals; internal arithmetic stays on
//! unrounded fractions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::ingest::strip_code_fences;
use crate::pipeline::Verdict;
use crate::provider::{ChatRequest, Provider, ProviderError, RequestTag};

pub use crate::util::percent;

/// Ground truth for a claim. Never abstains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthLabel {
    #[serde(rename = "G")]
    Greenwashing,
    #[serde(rename = "NG")]
    NotGreenwashing,
}

impl TruthLabel {
    pub fn matches(&self, verdict: Verdict) -> bool {
        matches!(
            (self, verdict),
            (TruthLabel::Greenwashing, Verdict::Greenwashing)
                | (TruthLabel::NotGreenwashing, Verdict::NotGreenwashing)
        )
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("ranking records do not cover a consistent pipeline set")]
    InconsistentPipelineSet,
    #[error("malformed rank matrix: {0}")]
    MalformedMatrix(String),
    #[error("no studentized-range constant embedded for k = {0} (supported: 2..=10)")]
    UnsupportedK(usize),
    #[error("no studentized-range table embedded for alpha = {0} (supported: 0.05)")]
    UnsupportedAlpha(f64),
    #[error("unparseable ranking: {0}")]
    UnparseableRanking(String),
    #[error("score out of range: {0} (must be 1..=5)")]
    ScoreOutOfRange(u8),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Accuracy / coverage / overall accuracy over a result set.
///
/// Accuracy and coverage are conditional on non-abstained claims; overall
/// accuracy folds abstentions back in and always equals accuracy × coverage
/// on the unrounded values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub coverage: f64,
    pub overall_accuracy: f64,
    pub n_abstains: usize,
    pub n_total: usize,
    /// Set when every claim was abstained; accuracy is then defined as 0.
    pub all_abstained: bool,
}

impl MetricsReport {
    pub fn render_row(&self) -> String {
        format!(
            "accuracy {} coverage {} overall {} abstains {}/{}",
            percent(self.accuracy),
            percent(self.coverage),
            percent(self.overall_accuracy),
            self.n_abstains,
            self.n_total
        )
    }
}

/// Computes the metrics over (verdict, ground truth) pairs.
pub fn compute_metrics(results: &[(Verdict, TruthLabel)]) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n_total = results.len();
    let n_abstains = results
        .iter()
        .filter(|(v, _)| *v == Verdict::Abstain)
        .count();
    let covered = n_total - n_abstains;
    let correct = results
        .iter()
        .filter(|(v, label)| *v != Verdict::Abstain && label.matches(*v))
        .count();
    let all_abstained = covered == 0;
    let accuracy = if all_abstained {
        0.0
    } else {
        correct as f64 / covered as f64
    };
    let coverage = covered as f64 / n_total as f64;
    Ok(MetricsReport {
        accuracy,
        coverage,
        overall_accuracy: accuracy * coverage,
        n_abstains,
        n_total,
        all_abstained,
    })
}

/// Convenience for reproducing reference tables: metrics from counts alone.
pub fn metrics_from_counts(
    n_total: usize,
    n_abstains: usize,
    n_correct: usize,
) -> Result<MetricsReport, EvalError> {
    if n_total == 0 || n_abstains > n_total || n_correct > n_total - n_abstains {
        return Err(EvalError::EmptyInput);
    }
    let covered = n_total - n_abstains;
    let mut results = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let verdict = if i < n_abstains {
            Verdict::Abstain
        } else if i < n_abstains + n_correct {
            Verdict::Greenwashing
        } else {
            Verdict::NotGreenwashing
        };
        results.push((verdict, TruthLabel::Greenwashing));
    }
    debug_assert_eq!(covered, n_total - n_abstains);
    compute_metrics(&results)
}

/// A 5-point Likert score across the five justification-quality criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IloraScore {
    pub informativeness: u8,
    pub logicality: u8,
    pub objectivity: u8,
    pub readability: u8,
    pub accuracy: u8,
}

impl IloraScore {
    pub fn new(i: u8, l: u8, o: u8, r: u8, a: u8) -> Result<IloraScore, EvalError> {
        for v in [i, l, o, r, a] {
            if !(1..=5).contains(&v) {
                return Err(EvalError::ScoreOutOfRange(v));
            }
        }
        Ok(IloraScore {
            informativeness: i,
            logicality: l,
            objectivity: o,
            readability: r,
            accuracy: a,
        })
    }

    fn as_array(&self) -> [u8; 5] {
        [
            self.informativeness,
            self.logicality,
            self.objectivity,
            self.readability,
            self.accuracy,
        ]
    }
}

pub const ILORA_CRITERIA: [&str; 5] = [
    "informativeness",
    "logicality",
    "objectivity",
    "readability",
    "accuracy",
];

/// Per-criterion means over a score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IloraMeans {
    pub informativeness: f64,
    pub logicality: f64,
    pub objectivity: f64,
    pub readability: f64,
    pub accuracy: f64,
    pub n: usize,
}

impl IloraMeans {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.informativeness,
            self.logicality,
            self.objectivity,
            self.readability,
            self.accuracy,
        ]
    }

    /// Radar-ready CSV: `criterion,mean` rows, means at two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("criterion,mean\n");
        for (name, value) in ILORA_CRITERIA.iter().zip(self.as_array()) {
            out.push_str(&format!("{name},{value:.2}\n"));
        }
        out
    }
}

/// Arithmetic mean per criterion.
pub fn ilora_aggregate(scores: &[IloraScore]) -> Result<IloraMeans, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sums = [0.0_f64; 5];
    for score in scores {
        for (sum, v) in sums.iter_mut().zip(score.as_array()) {
            *sum += v as f64;
        }
    }
    let n = scores.len() as f64;
    Ok(IloraMeans {
        informativeness: sums[0] / n,
        logicality: sums[1] / n,
        objectivity: sums[2] / n,
        readability: sums[3] / n,
        accuracy: sums[4] / n,
        n: scores.len(),
    })
}

/// One claim's listwise ranking: pipeline -> position, a bijection onto
/// 1..=k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub claim_id: String,
    pub positions: BTreeMap<String, u8>,
}

impl RankingRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        let k = self.positions.len();
        let mut seen = vec![false; k];
        for &pos in self.positions.values() {
            let idx = pos as usize;
            if idx == 0 || idx > k || seen[idx - 1] {
                return Err(EvalError::UnparseableRanking(format!(
                    "positions of claim {} are not a permutation of 1..={k}",
                    self.claim_id
                )));
            }
            seen[idx - 1] = true;
        }
        Ok(())
    }
}

/// Borda count: 3 points for first place, 2 for second, 1 for third
/// (generally `k - position + 1`). All records must rank the same pipelines.
pub fn borda_scores(records: &[RankingRecord]) -> Result<BTreeMap<String, u64>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let reference: Vec<&String> = records[0].positions.keys().collect();
    let k = reference.len() as u64;
    let mut scores: BTreeMap<String, u64> = BTreeMap::new();
    for record in records {
        record.validate()?;
        let names: Vec<&String> = record.positions.keys().collect();
        if names != reference {
            return Err(EvalError::InconsistentPipelineSet);
        }
        for (name, &position) in &record.positions {
            *scores.entry(name.clone()).or_insert(0) += k + 1 - position as u64;
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FriedmanResult {
    pub chi_square: f64,
    pub p_value: f64,
    /// Mean rank per method, in column order.
    pub mean_ranks: Vec<f64>,
}

/// Friedman test over an N×k matrix of strict ranks (each row a permutation
/// of 1..=k; ties are rejected).
///
/// χ²_F = 12N / (k(k+1)) · [Σ_j R̄_j² − k(k+1)²/4], with the p-value from the
/// chi-square distribution with k−1 degrees of freedom.
pub fn friedman_test(rank_matrix: &[Vec<u32>]) -> Result<FriedmanResult, EvalError> {
    let n = rank_matrix.len();
    if n < 2 {
        return Err(EvalError::MalformedMatrix(
            "need at least N = 2 subjects".into(),
        ));
    }
    let k = rank_matrix[0].len();
    if k < 2 {
        return Err(EvalError::MalformedMatrix(
            "need at least k = 2 methods".into(),
        ));
    }
    let mut rank_sums = vec![0u64; k];
    for (i, row) in rank_matrix.iter().enumerate() {
        if row.len() != k {
            return Err(EvalError::MalformedMatrix(format!(
                "row {i} has {} entries, expected {k}",
                row.len()
            )));
        }
        let mut seen = vec![false; k];
        for (&rank, sum) in row.iter().zip(rank_sums.iter_mut()) {
            let idx = rank as usize;
            if idx == 0 || idx > k || seen[idx - 1] {
                return Err(EvalError::MalformedMatrix(format!(
                    "row {i} is not a permutation of 1..={k}"
                )));
            }
            seen[idx - 1] = true;
            *sum += rank as u64;
        }
    }
    let nf = n as f64;
    let kf = k as f64;
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|&s| s as f64 / nf).collect();
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let chi_square = 12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0);
    let dist = ChiSquared::new(kf - 1.0).expect("valid dof");
    let p_value = 1.0 - dist.cdf(chi_square.max(0.0));
    Ok(FriedmanResult {
        chi_square,
        p_value,
        mean_ranks,
    })
}

/// Two-tailed Nemenyi studentized-range constants at α = 0.05 for k = 2..=10
/// (infinite degrees of freedom, divided by √2), as tabulated in Demšar,
/// "Statistical Comparisons of Classifiers over Multiple Data Sets", JMLR 7
/// (2006), Table 5(a).
const Q_ALPHA_005: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseSignificance {
    pub gap: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NemenyiResult {
    pub critical_difference: f64,
    pub q_alpha: f64,
    /// Keyed "a vs b" with a < b lexicographically.
    pub pairwise: BTreeMap<String, PairwiseSignificance>,
}

/// Nemenyi post-hoc test: CD = q_α · √(k(k+1)/(6N)); a pair differs
/// significantly iff its mean-rank gap exceeds CD. k is taken from the
/// mean-rank map.
pub fn nemenyi(
    mean_ranks: &BTreeMap<String, f64>,
    n: usize,
    alpha: f64,
) -> Result<NemenyiResult, EvalError> {
    if (alpha - 0.05).abs() > 1e-12 {
        return Err(EvalError::UnsupportedAlpha(alpha));
    }
    let k = mean_ranks.len();
    if !(2..=10).contains(&k) {
        return Err(EvalError::UnsupportedK(k));
    }
    if n < 2 {
        return Err(EvalError::MalformedMatrix("need N >= 2".into()));
    }
    let q_alpha = Q_ALPHA_005[k - 2];
    let critical_difference = q_alpha * (k as f64 * (k as f64 + 1.0) / (6.0 * n as f64)).sqrt();
    Ok(NemenyiResult {
        critical_difference,
        q_alpha,
        pairwise: pairwise_significance(mean_ranks, critical_difference),
    })
}

/// Pairwise |mean-rank| gaps judged against a given critical difference.
pub fn pairwise_significance(
    mean_ranks: &BTreeMap<String, f64>,
    critical_difference: f64,
) -> BTreeMap<String, PairwiseSignificance> {
    let names: Vec<&String> = mean_ranks.keys().collect();
    let mut out = BTreeMap::new();
    for (i, a) in names.iter().enumerate() {
        for b in names.iter().skip(i + 1) {
            let gap = (mean_ranks[*a] - mean_ranks[*b]).abs();
            out.insert(
                format!("{a} vs {b}"),
                PairwiseSignificance {
                    gap,
                    significant: gap > critical_difference,
                },
            );
        }
    }
    out
}

const JUDGE_3WAY_SYSTEM: &str = "You rank three candidate justifications for the same \
sustainability claim by informativeness, logicality, objectivity, readability, and accuracy. \
Produce a strict ranking, no ties. Answer in exactly this format:\n1: <name>\n2: <name>\n3: <name>";

/// Listwise judging: the provider ranks all three justifications at once.
/// The response must be a strict 1st/2nd/3rd ordering of the given pipeline
/// names; anything else is an `UnparseableRanking`.
pub fn three_way_judge(
    claim_id: &str,
    claim_text: &str,
    justifications: &BTreeMap<String, String>,
    provider: &dyn Provider,
) -> Result<RankingRecord, EvalError> {
    if justifications.len() != 3 {
        return Err(EvalError::UnparseableRanking(format!(
            "expected exactly 3 justifications, got {}",
            justifications.len()
        )));
    }
    let mut user = format!("Claim: {claim_text}\n\n");
    for (name, justification) in justifications {
        let text = if justification.is_empty() {
            "(abstained; no justification)"
        } else {
            justification.as_str()
        };
        user.push_str(&format!("Candidate {name}:\n{text}\n\n"));
    }
    let request = ChatRequest::new(RequestTag::Judge, JUDGE_3WAY_SYSTEM, user);
    let response = provider.complete(&request)?;
    parse_ranking(claim_id, &response.text, justifications)
}

fn parse_ranking(
    claim_id: &str,
    text: &str,
    justifications: &BTreeMap<String, String>,
) -> Result<RankingRecord, EvalError> {
    let mut positions: BTreeMap<String, u8> = BTreeMap::new();
    for line in text.lines() {
        let trimmed = line.trim();
        let Some((place, name)) = trimmed.split_once(':') else {
            continue;
        };
        let Ok(place) = place.trim().parse::<u8>() else {
            continue;
        };
        if !(1..=3).contains(&place) {
            continue;
        }
        let name = name.trim();
        let Some(canonical) = justifications.keys().find(|k| k.as_str() == name) else {
            return Err(EvalError::UnparseableRanking(format!(
                "unknown pipeline {name:?} in ranking"
            )));
        };
        if positions.insert(canonical.clone(), place).is_some() {
            return Err(EvalError::UnparseableRanking(format!(
                "pipeline {canonical} listed twice"
            )));
        }
    }
    let record = RankingRecord {
        claim_id: claim_id.to_string(),
        positions,
    };
    if record.positions.len() != 3 {
        return Err(EvalError::UnparseableRanking(
            "ranking does not cover all three pipelines".into(),
        ));
    }
    record.validate()?;
    Ok(record)
}

const ILORA_SYSTEM: &str = "Score the justification below on a 1-5 Likert scale for each \
criterion. Answer in exactly this format:\nINFORMATIVENESS: <1-5>\nLOGICALITY: <1-5>\n\
OBJECTIVITY: <1-5>\nREADABILITY: <1-5>\nACCURACY: <1-5>";

/// Absolute (single-answer) grading of one justification on the five-point
/// five-criterion scale.
pub fn score_justification_ilora(
    claim_text: &str,
    justification: &str,
    provider: &dyn Provider,
) -> Result<IloraScore, EvalError> {
    let user = format!("Claim: {claim_text}\n\nJustification:\n{justification}");
    let request = ChatRequest::new(RequestTag::Ilora, ILORA_SYSTEM, user);
    let response = provider.complete(&request)?;
    let text = strip_code_fences(&response.text).to_ascii_uppercase();
    let mut values = [0u8; 5];
    for (slot, key) in values.iter_mut().zip([
        "INFORMATIVENESS:",
        "LOGICALITY:",
        "OBJECTIVITY:",
        "READABILITY:",
        "ACCURACY:",
    ]) {
        let found = text.lines().find_map(|line| {
            line.trim()
                .strip_prefix(key)
                .and_then(|rest| rest.trim().parse::<u8>().ok())
        });
        match found {
            Some(v) => *slot = v,
            None => {
                return Err(EvalError::UnparseableRanking(format!(
                    "missing {key} line in score response"
                )))
            }
        }
    }
    IloraScore::new(values[0], values[1], values[2], values[3], values[4])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockProvider;

    #[test]
    fn metrics_reference_row() {
        // 51 claims, 36 abstains, 14 of the remaining 15 correct.
        let report = metrics_from_counts(51, 36, 14).unwrap();
        assert_eq!(percent(report.accuracy), "93.33%");
        assert_eq!(percent(report.coverage), "29.41%");
        assert_eq!(percent(report.overall_accuracy), "27.45%");
        assert_eq!(report.n_abstains, 36);
    }

    #[test]
    fn metrics_all_correct_no_abstain() {
        let results = vec![(Verdict::Greenwashing, TruthLabel::Greenwashing); 7];
        let report = compute_metrics(&results).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.coverage, 1.0);
        assert_eq!(report.overall_accuracy, 1.0);
    }

    #[test]
    fn metrics_coverage_620_459() {
        let report = metrics_from_counts(620, 459, 100).unwrap();
        assert_eq!(percent(report.coverage), "25.97%");
    }

    #[test]
    fn metrics_all_abstain_flagged() {
        let results = vec![(Verdict::Abstain, TruthLabel::Greenwashing); 3];
        let report = compute_metrics(&results).unwrap();
        assert!(report.all_abstained);
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.overall_accuracy, 0.0);
    }

    #[test]
    fn metrics_empty_input() {
        assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn ilora_single_and_symmetric() {
        let s = IloraScore::new(3, 3, 3, 3, 3).unwrap();
        let means = ilora_aggregate(&[s]).unwrap();
        assert_eq!(means.as_array(), [3.0; 5]);
        let lo = IloraScore::new(1, 1, 1, 1, 1).unwrap();
        let hi = IloraScore::new(5, 5, 5, 5, 5).unwrap();
        let means = ilora_aggregate(&[lo, hi]).unwrap();
        assert_eq!(means.as_array(), [3.0; 5]);
    }

    #[test]
    fn ilora_mixed_fixture_hand_checked() {
        let scores = vec![
            IloraScore::new(4, 5, 3, 4, 5).unwrap(),
            IloraScore::new(2, 3, 4, 5, 4).unwrap(),
            IloraScore::new(5, 4, 4, 4, 3).unwrap(),
            IloraScore::new(3, 2, 5, 3, 4).unwrap(),
        ];
        let means = ilora_aggregate(&scores).unwrap();
        // Hand-computed: (4+2+5+3)/4 etc.
        assert_eq!(means.informativeness, 3.5);
        assert_eq!(means.logicality, 3.5);
        assert_eq!(means.objectivity, 4.0);
        assert_eq!(means.readability, 4.0);
        assert_eq!(means.accuracy, 4.0);
        let csv = means.to_csv();
        assert!(csv.starts_with("criterion,mean\n"));
        assert!(csv.contains("informativeness,3.50"));
    }

    #[test]
    fn ilora_score_range_validated() {
        assert!(matches!(
            IloraScore::new(0, 3, 3, 3, 3),
            Err(EvalError::ScoreOutOfRange(0))
        ));
        assert!(matches!(
            IloraScore::new(3, 3, 6, 3, 3),
            Err(EvalError::ScoreOutOfRange(6))
        ));
    }

    fn record(id: &str, a: u8, b: u8, c: u8) -> RankingRecord {
        RankingRecord {
            claim_id: id.into(),
            positions: BTreeMap::from([
                ("A".to_string(), a),
                ("B".to_string(), b),
                ("C".to_string(), c),
            ]),
        }
    }

    #[test]
    fn borda_single_record() {
        let scores = borda_scores(&[record("c1", 1, 2, 3)]).unwrap();
        assert_eq!(scores["A"], 3);
        assert_eq!(scores["B"], 2);
        assert_eq!(scores["C"], 1);
    }

    #[test]
    fn borda_total_points_identity_and_permutation_invariance() {
        let records = vec![
            record("c1", 1, 2, 3),
            record("c2", 3, 1, 2),
            record("c3", 2, 3, 1),
            record("c4", 1, 3, 2),
        ];
        let scores = borda_scores(&records).unwrap();
        let total: u64 = scores.values().sum();
        assert_eq!(total, 6 * records.len() as u64);
        let mut shuffled = records.clone();
        shuffled.reverse();
        assert_eq!(borda_scores(&shuffled).unwrap(), scores);
    }

    #[test]
    fn borda_inconsistent_pipeline_set() {
        let mut other = record("c2", 1, 2, 3);
        other.positions.remove("C");
        other.positions.insert("D".into(), 3);
        let err = borda_scores(&[record("c1", 1, 2, 3), other]).unwrap_err();
        assert!(matches!(err, EvalError::InconsistentPipelineSet));
    }

    #[test]
    fn borda_rejects_non_permutation() {
        let bad = record("c1", 1, 1, 3);
        assert!(borda_scores(&[bad]).is_err());
    }

    #[test]
    fn friedman_identical_rows_max_statistic() {
        // All ten subjects rank (1, 2, 3): chi2 = 12*10/12 * (14 - 12) = 20.
        let matrix = vec![vec![1, 2, 3]; 10];
        let result = friedman_test(&matrix).unwrap();
        assert!((result.chi_square - 20.0).abs() < 1e-12);
        assert!(result.p_value < 0.0001);
    }

    #[test]
    fn friedman_uniform_permutations_is_zero() {
        let matrix = vec![
            vec![1, 2, 3],
            vec![1, 3, 2],
            vec![2, 1, 3],
            vec![2, 3, 1],
            vec![3, 1, 2],
            vec![3, 2, 1],
        ];
        let result = friedman_test(&matrix).unwrap();
        assert!(result.chi_square.abs() < 1e-12);
        assert!((result.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn friedman_four_by_three_direct_formula() {
        let matrix = vec![
            vec![1, 2, 3],
            vec![2, 1, 3],
            vec![1, 3, 2],
            vec![1, 2, 3],
        ];
        let result = friedman_test(&matrix).unwrap();
        // Independent evaluation from rank sums: 12/(N k (k+1)) ΣRj² − 3N(k+1).
        let rank_sums = [5.0_f64, 8.0, 11.0];
        let n = 4.0;
        let expected = 12.0 / (n * 3.0 * 4.0) * rank_sums.iter().map(|r| r * r).sum::<f64>()
            - 3.0 * n * 4.0;
        assert!((result.chi_square - expected).abs() < 1e-9);
    }

    #[test]
    fn friedman_rejects_ties_and_small_n() {
        assert!(friedman_test(&[vec![1, 1, 3], vec![1, 2, 3]]).is_err());
        assert!(friedman_test(&[vec![1, 2, 3]]).is_err());
        assert!(friedman_test(&[vec![1, 2], vec![2, 1], vec![1, 3]]).is_err());
    }

    #[test]
    fn friedman_invariant_under_method_relabeling() {
        let matrix = vec![vec![1, 2, 3], vec![2, 1, 3], vec![1, 2, 3]];
        let relabeled: Vec<Vec<u32>> = matrix.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        let a = friedman_test(&matrix).unwrap();
        let b = friedman_test(&relabeled).unwrap();
        assert!((a.chi_square - b.chi_square).abs() < 1e-12);
    }

    fn mean_ranks(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn nemenyi_closed_form_cd() {
        let ranks = mean_ranks(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        let result = nemenyi(&ranks, 100, 0.05).unwrap();
        let expected = 2.343 * (12.0_f64 / 600.0).sqrt();
        assert!((result.critical_difference - expected).abs() < 1e-6);
    }

    #[test]
    fn nemenyi_identical_mean_ranks_not_significant() {
        let ranks = mean_ranks(&[("a", 2.0), ("b", 2.0), ("c", 2.0)]);
        let result = nemenyi(&ranks, 50, 0.05).unwrap();
        assert!(result.pairwise.values().all(|p| !p.significant));
    }

    #[test]
    fn nemenyi_reference_gaps_all_significant_vs_given_cd() {
        // Mean-rank gaps 0.982 / 1.638 / 0.656 against CD = 0.064.
        let ranks = mean_ranks(&[("baseline", 2.638), ("kgrag", 1.982), ("rag", 1.0)]);
        let pairwise = pairwise_significance(&ranks, 0.064);
        assert_eq!(pairwise.len(), 3);
        assert!(pairwise.values().all(|p| p.significant));
        let gaps: Vec<f64> = pairwise.values().map(|p| (p.gap * 1000.0).round() / 1000.0).collect();
        let mut sorted = gaps.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![0.656, 0.982, 1.638]);
    }

    #[test]
    fn nemenyi_cd_decreases_in_n_and_translation_invariant() {
        let ranks = mean_ranks(&[("a", 1.1), ("b", 2.2), ("c", 2.7)]);
        let small = nemenyi(&ranks, 10, 0.05).unwrap();
        let large = nemenyi(&ranks, 1000, 0.05).unwrap();
        assert!(large.critical_difference < small.critical_difference);
        let shifted = mean_ranks(&[("a", 2.1), ("b", 3.2), ("c", 3.7)]);
        let a = nemenyi(&ranks, 100, 0.05).unwrap();
        let b = nemenyi(&shifted, 100, 0.05).unwrap();
        for (key, pair) in &a.pairwise {
            assert!((pair.gap - b.pairwise[key].gap).abs() < 1e-12);
        }
    }

    #[test]
    fn nemenyi_unsupported_k_and_alpha() {
        let ranks = mean_ranks(&[("a", 1.0)]);
        assert!(matches!(
            nemenyi(&ranks, 100, 0.05),
            Err(EvalError::UnsupportedK(1))
        ));
        let ranks = mean_ranks(&[("a", 1.0), ("b", 2.0)]);
        assert!(matches!(
            nemenyi(&ranks, 100, 0.01),
            Err(EvalError::UnsupportedAlpha(_))
        ));
    }

    fn three(a: &str, b: &str, c: &str) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("baseline".to_string(), a.to_string()),
            ("kgrag".to_string(), b.to_string()),
            ("rag".to_string(), c.to_string()),
        ])
    }

    #[test]
    fn judge_parses_strict_ranking() {
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Judge, "1: rag\n2: kgrag\n3: baseline");
        let record =
            three_way_judge("c1", "claim", &three("jb", "jk", "jr"), &mock).unwrap();
        assert_eq!(record.positions["rag"], 1);
        assert_eq!(record.positions["kgrag"], 2);
        assert_eq!(record.positions["baseline"], 3);
    }

    #[test]
    fn judge_duplicate_listing_is_unparseable() {
        let mut mock = MockProvider::new();
        mock.push_queue(RequestTag::Judge, "1: rag\n2: rag\n3: baseline");
        let err = three_way_judge("c1", "claim", &three("a", "b", "c"), &mock).unwrap_err();
        assert!(matches!(err, EvalError::UnparseableRanking(_)));
    }

    #[test]
    fn judge_fixture_tally_matches_hand_count() {
        let mut mock = MockProvider::new();
        for response in [
            "1: rag\n2: kgrag\n3: baseline",
            "1: rag\n2: baseline\n3: kgrag",
            "1: kgrag\n2: rag\n3: baseline",
            "1: rag\n2: kgrag\n3: baseline",
            "1: baseline\n2: rag\n3: kgrag",
        ] {
            mock.push_queue(RequestTag::Judge, response);
        }
        let mut records = Vec::new();
        for i in 0..5 {
            records.push(
                three_way_judge(&format!("c{i}"), "claim", &three("x", "y", "z"), &mock).unwrap(),
            );
        }
        assert_eq!(records.len(), 5);
        let scores = borda_scores(&records).unwrap();
        // Hand count: rag firsts 3, seconds 2 -> 13; kgrag 1st 1, 2nd 2, 3rd 2 -> 9;
        // baseline 1st 1, 2nd 1, 3rd 3 -> 8.
        assert_eq!(scores["rag"], 13);
        assert_eq!(scores["kgrag"], 9);
        assert_eq!(scores["baseline"], 8);
    }

    #[test]
    fn ilora_scoring_parses_lines() {
        let mut mock = MockProvider::new();
        mock.push_queue(
            RequestTag::Ilora,
            "INFORMATIVENESS: 4\nLOGICALITY: 5\nOBJECTIVITY: 3\nREADABILITY: 4\nACCURACY: 5",
        );
        let score = score_justification_ilora("claim", "justification", &mock).unwrap();
        assert_eq!(score, IloraScore::new(4, 5, 3, 4, 5).unwrap());
    }

    mod properties_suite {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn metrics_identity_holds(
                verdicts in proptest::collection::vec(0u8..3, 1..200),
            ) {
                let results: Vec<(Verdict, TruthLabel)> = verdicts
                    .iter()
                    .map(|v| {
                        let verdict = match v {
                            0 => Verdict::Greenwashing,
                            1 => Verdict::NotGreenwashing,
                            _ => Verdict::Abstain,
                        };
                        (verdict, TruthLabel::Greenwashing)
                    })
                    .collect();
                let report = compute_metrics(&results).unwrap();
                prop_assert!((report.overall_accuracy - report.accuracy * report.coverage).abs() < 1e-15);
                prop_assert!((0.0..=1.0).contains(&report.coverage));
                prop_assert_eq!(
                    report.n_abstains + (report.coverage * report.n_total as f64).round() as usize,
                    report.n_total
                );
            }

            #[test]
            fn friedman_zero_iff_equal_mean_ranks(
                rows in proptest::collection::vec(0usize..6, 2..40),
            ) {
                // Each row picks one of the six permutations of (1, 2, 3).
                const PERMS: [[u32; 3]; 6] = [
                    [1, 2, 3], [1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1],
                ];
                let matrix: Vec<Vec<u32>> = rows.iter().map(|&i| PERMS[i].to_vec()).collect();
                let result = friedman_test(&matrix).unwrap();
                let all_equal = result
                    .mean_ranks
                    .iter()
                    .all(|r| (r - result.mean_ranks[0]).abs() < 1e-12);
                if all_equal {
                    prop_assert!(result.chi_square.abs() < 1e-9);
                } else {
                    prop_assert!(result.chi_square > 1e-9);
                }
            }
        }
    }
}
