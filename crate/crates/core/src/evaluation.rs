//! Classification metrics over audit results and comparison tables.
//!
//! Vulnerable (`Y`) is the positive class. A ratio whose denominator is
//! zero is reported as [`Score::Undefined`], never as 0 or 1.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{ContractSample, GroundTruth, VulnType};
use crate::label::Label;
use crate::pipeline::AuditResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("result for unknown contract id `{0}`")]
    UnknownId(String),
    #[error("{path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("{path}: field `{field}` value {value} is outside [0, 1]")]
    OutOfRange {
        path: String,
        field: String,
        value: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    fn record(&mut self, predicted: Label, truth: GroundTruth) {
        match (predicted, truth) {
            (Label::Y, GroundTruth::Vulnerable) => self.tp += 1,
            (Label::N, GroundTruth::Safe) => self.tn += 1,
            (Label::Y, GroundTruth::Safe) => self.fp += 1,
            (Label::N, GroundTruth::Vulnerable) => self.fn_ += 1,
        }
    }
}

/// A metric value, or `undefined` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Defined(f64),
    Undefined,
}

impl Score {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Score::Undefined
        } else {
            Score::Defined(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Score::Defined(v) => Some(v),
            Score::Undefined => None,
        }
    }

    /// Percentage with one decimal, e.g. `62.5%`; `n/a` when undefined.
    pub fn percent(self) -> String {
        match self {
            Score::Defined(v) => format!("{:.1}%", v * 100.0),
            Score::Undefined => "n/a".to_string(),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Defined(v) => s.serialize_f64(*v),
            Score::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Score::Defined(v)),
            Raw::Str(s) if s == "undefined" => Ok(Score::Undefined),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid score `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Score,
    pub recall: Score,
    pub precision: Score,
    pub f1: Score,
}

pub fn compute_metrics(m: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = m.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let accuracy = Score::ratio(m.tp + m.tn, total);
    let recall = Score::ratio(m.tp, m.tp + m.fn_);
    let precision = Score::ratio(m.tp, m.tp + m.fp);
    let f1 = match (precision, recall) {
        (Score::Defined(p), Score::Defined(r)) if p + r > 0.0 => {
            Score::Defined(2.0 * p * r / (p + r))
        }
        _ => Score::Undefined,
    };
    Ok(Metrics {
        accuracy,
        recall,
        precision,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub matrix: ConfusionMatrix,
    /// Failed audits left out of the matrix.
    pub failed_excluded: usize,
}

pub fn truth_map(samples: &[ContractSample]) -> HashMap<String, (GroundTruth, VulnType)> {
    samples
        .iter()
        .map(|s| (s.id.clone(), (s.label, s.vuln_type)))
        .collect()
}

/// Tallies ok results against ground truth; failed results are counted
/// separately.
pub fn confusion(
    results: &[AuditResult],
    truth: &HashMap<String, (GroundTruth, VulnType)>,
) -> Result<ConfusionSummary, EvalError> {
    let mut summary = ConfusionSummary {
        matrix: ConfusionMatrix::default(),
        failed_excluded: 0,
    };
    for r in results {
        let Some(predicted) = r.final_label.filter(|_| r.is_ok()) else {
            summary.failed_excluded += 1;
            continue;
        };
        let (label, _) = truth
            .get(&r.contract_id)
            .ok_or_else(|| EvalError::UnknownId(r.contract_id.clone()))?;
        summary.matrix.record(predicted, *label);
    }
    if summary.failed_excluded > 0 {
        tracing::warn!(failed = summary.failed_excluded, "failed audits excluded from metrics");
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeRecall {
    pub detected: u64,
    pub total: u64,
    pub recall: f64,
}

/// Recall per vulnerability type over ok results. Safe contracts and types
/// with no samples are omitted.
pub fn per_type_breakdown(
    results: &[AuditResult],
    truth: &HashMap<String, (GroundTruth, VulnType)>,
) -> BTreeMap<VulnType, TypeRecall> {
    let mut counts: BTreeMap<VulnType, (u64, u64)> = BTreeMap::new();
    for r in results.iter().filter(|r| r.is_ok()) {
        let Some(&(GroundTruth::Vulnerable, vt)) = truth.get(&r.contract_id) else {
            continue;
        };
        let entry = counts.entry(vt).or_default();
        entry.1 += 1;
        if r.final_label == Some(Label::Y) {
            entry.0 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(vt, (detected, total))| {
            (
                vt,
                TypeRecall {
                    detected,
                    total,
                    recall: detected as f64 / total as f64,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractOutcome {
    pub contract_id: String,
    pub predicted: Option<Label>,
    pub truth: GroundTruth,
    pub vuln_type: VulnType,
    /// `tp`, `tn`, `fp`, `fn` or `failed`.
    pub outcome: String,
}

pub fn outcomes(
    results: &[AuditResult],
    truth: &HashMap<String, (GroundTruth, VulnType)>,
) -> Result<Vec<ContractOutcome>, EvalError> {
    results
        .iter()
        .map(|r| {
            let &(label, vuln_type) = truth
                .get(&r.contract_id)
                .ok_or_else(|| EvalError::UnknownId(r.contract_id.clone()))?;
            let predicted = r.final_label.filter(|_| r.is_ok());
            let outcome = match (predicted, label) {
                (None, _) => "failed",
                (Some(Label::Y), GroundTruth::Vulnerable) => "tp",
                (Some(Label::N), GroundTruth::Safe) => "tn",
                (Some(Label::Y), GroundTruth::Safe) => "fp",
                (Some(Label::N), GroundTruth::Vulnerable) => "fn",
            };
            Ok(ContractOutcome {
                contract_id: r.contract_id.clone(),
                predicted,
                truth: label,
                vuln_type,
                outcome: outcome.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Computed,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method_name: String,
    pub metrics: Metrics,
    pub provenance: Provenance,
    /// File the metrics were read from, for ingested reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_excluded: Option<usize>,
}

impl MethodReport {
    pub fn computed(method_name: impl Into<String>, summary: &ConfusionSummary) -> Result<Self, EvalError> {
        Ok(Self {
            method_name: method_name.into(),
            metrics: compute_metrics(&summary.matrix)?,
            provenance: Provenance::Computed,
            source: None,
            confusion: Some(summary.matrix),
            failed_excluded: Some(summary.failed_excluded),
        })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::SchemaError {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn parse_fraction(path: &str, field: &str, v: &serde_json::Value) -> Result<Score, EvalError> {
    let schema = |message: String| EvalError::SchemaError {
        path: path.to_string(),
        message,
    };
    let out_of_range = || EvalError::OutOfRange {
        path: path.to_string(),
        field: field.to_string(),
        value: v.to_string(),
    };
    let fraction = match v {
        serde_json::Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| schema(format!("field `{field}` is not a finite number")))?,
        serde_json::Value::String(s) if s.trim() == "undefined" => return Ok(Score::Undefined),
        serde_json::Value::String(s) => {
            let s = s.trim();
            let (digits, scale) = match s.strip_suffix('%') {
                Some(d) => (d.trim(), 100.0),
                None => (s, 1.0),
            };
            let parsed: f64 = digits
                .parse()
                .map_err(|_| schema(format!("field `{field}` has unreadable value `{s}`")))?;
            parsed / scale
        }
        _ => return Err(schema(format!("field `{field}` must be a number or percent string"))),
    };
    if !(0.0..=1.0).contains(&fraction) {
        return Err(out_of_range());
    }
    Ok(Score::Defined(fraction))
}

/// Parses a baseline file: `{method_name, accuracy, recall, precision, f1}`
/// with fractions in `[0, 1]` or percent strings such as `"21.7%"`.
pub fn parse_baseline(text: &str, path: &str) -> Result<MethodReport, EvalError> {
    let schema = |message: String| EvalError::SchemaError {
        path: path.to_string(),
        message,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema("expected a JSON object".into()))?;
    let method_name = obj
        .get("method_name")
        .and_then(|v| v.as_str())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| schema("missing string field `method_name`".into()))?
        .to_string();
    let field = |name: &str| -> Result<Score, EvalError> {
        let v = obj
            .get(name)
            .ok_or_else(|| schema(format!("missing field `{name}`")))?;
        parse_fraction(path, name, v)
    };
    Ok(MethodReport {
        method_name,
        metrics: Metrics {
            accuracy: field("accuracy")?,
            recall: field("recall")?,
            precision: field("precision")?,
            f1: field("f1")?,
        },
        provenance: Provenance::Ingested,
        source: Some(path.to_string()),
        confusion: None,
        failed_excluded: None,
    })
}

pub fn ingest_baseline(path: &Path) -> Result<MethodReport, EvalError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: display.clone(),
        source,
    })?;
    parse_baseline(&text, &display)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method_name: String,
    pub accuracy: Score,
    pub recall: Score,
    pub precision: Score,
    pub f1: Score,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

const COMPARISON_HEADER: [&str; 6] = ["Method", "Accuracy", "Recall", "Precision", "F1 Score", "Source"];

impl Comparison {
    /// Rows in the order given.
    pub fn new(reports: &[MethodReport]) -> Self {
        Self {
            rows: reports
                .iter()
                .map(|r| ComparisonRow {
                    method_name: r.method_name.clone(),
                    accuracy: r.metrics.accuracy,
                    recall: r.metrics.recall,
                    precision: r.metrics.precision,
                    f1: r.metrics.f1,
                    provenance: r.provenance,
                    source: r.source.clone(),
                })
                .collect(),
        }
    }

    /// Markdown table; computed rows are marked `computed` in the last
    /// column, ingested rows name their file.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("| {} |", COMPARISON_HEADER.join(" | ")),
            format!("|{}", "---|".repeat(COMPARISON_HEADER.len())),
        ];
        for r in &self.rows {
            let source = match (r.provenance, &r.source) {
                (Provenance::Computed, _) => "computed".to_string(),
                (Provenance::Ingested, Some(p)) => format!("ingested: {p}"),
                (Provenance::Ingested, None) => "ingested".to_string(),
            };
            lines.push(format!(
                "| {} | {} | {} | {} | {} | {} |",
                r.method_name,
                r.accuracy.percent(),
                r.recall.percent(),
                r.precision.percent(),
                r.f1.percent(),
                source
            ));
        }
        lines.join("\n") + "\n"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serialization is infallible") + "\n"
    }
}

pub fn render_comparison(reports: &[MethodReport]) -> Comparison {
    Comparison::new(reports)
}

/// A row read back from [`Comparison::to_text`]: method name and the four
/// fractions (`None` for `n/a`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub method_name: String,
    pub values: [Option<f64>; 4],
    pub computed: bool,
}

/// Reads a rendered comparison table back into fractions.
pub fn parse_comparison_text(text: &str) -> Result<Vec<ParsedRow>, String> {
    let mut rows = Vec::new();
    for line in text.lines().skip(2).filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line
            .trim()
            .trim_matches('|')
            .split('|')
            .map(str::trim)
            .collect();
        if cells.len() != COMPARISON_HEADER.len() {
            return Err(format!("expected {} cells in `{line}`", COMPARISON_HEADER.len()));
        }
        let mut values = [None; 4];
        for (slot, cell) in values.iter_mut().zip(&cells[1..5]) {
            *slot = match *cell {
                "n/a" => None,
                c => Some(
                    c.strip_suffix('%')
                        .ok_or_else(|| format!("cell `{c}` is not a percentage"))?
                        .parse::<f64>()
                        .map_err(|e| e.to_string())?
                        / 100.0,
                ),
            };
        }
        rows.push(ParsedRow {
            method_name: cells[0].to_string(),
            values,
            computed: cells[5] == "computed",
        });
    }
    Ok(rows)
}

/// Metric-by-column table, e.g. training vs testing.
pub fn render_metrics_table(columns: &[(&str, &Metrics)]) -> String {
    let mut header = vec!["Metric"];
    header.extend(columns.iter().map(|(name, _)| *name));
    let mut lines = vec![
        format!("| {} |", header.join(" | ")),
        format!("|{}", "---|".repeat(header.len())),
    ];
    type Getter = fn(&Metrics) -> Score;
    let rows: [(&str, Getter); 4] = [
        ("Accuracy", |m| m.accuracy),
        ("Recall", |m| m.recall),
        ("Precision", |m| m.precision),
        ("F1 Score", |m| m.f1),
    ];
    for (name, get) in rows {
        let cells: Vec<String> = columns.iter().map(|(_, m)| get(m).percent()).collect();
        lines.push(format!("| {} | {} |", name, cells.join(" | ")));
    }
    lines.join("\n") + "\n"
}

/// Written by `evaluate`; also readable as a plain [`MethodReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub report: MethodReport,
    pub per_type_recall: BTreeMap<VulnType, TypeRecall>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::AuditStatus;

    fn result(id: &str, label: Option<Label>) -> AuditResult {
        AuditResult {
            contract_id: id.into(),
            status: if label.is_some() { AuditStatus::Ok } else { AuditStatus::Failed },
            final_label: label,
            detector: None,
            reasoning: None,
            verification: None,
            retrieved: vec![],
            failure: None,
            error: label.is_none().then(|| "boom".to_string()),
            elapsed_ms: 0,
        }
    }

    fn truth(entries: &[(&str, VulnType)]) -> HashMap<String, (GroundTruth, VulnType)> {
        entries
            .iter()
            .map(|(id, vt)| {
                let label = if *vt == VulnType::None { GroundTruth::Safe } else { GroundTruth::Vulnerable };
                (id.to_string(), (label, *vt))
            })
            .collect()
    }

    fn close(s: Score, expected: f64) -> bool {
        matches!(s, Score::Defined(v) if (v - expected).abs() < 1e-9)
    }

    #[test]
    fn counts() {
        let t = truth(&[("a", VulnType::Reentrancy), ("b", VulnType::LogicError), ("c", VulnType::None)]);
        let rs = vec![result("a", Some(Label::Y)), result("b", Some(Label::Y)), result("c", Some(Label::N))];
        assert_eq!(confusion(&rs, &t).unwrap().matrix, ConfusionMatrix::new(2, 1, 0, 0));

        let rs = vec![result("c", Some(Label::Y))];
        assert_eq!(confusion(&rs, &t).unwrap().matrix.fp, 1);

        let rs = vec![result("zzz", Some(Label::Y))];
        assert!(matches!(confusion(&rs, &t), Err(EvalError::UnknownId(id)) if id == "zzz"));
    }

    #[test]
    fn failed_results_are_excluded() {
        let t = truth(&[("a", VulnType::Reentrancy)]);
        let rs = vec![result("a", Some(Label::Y)), result("gone", None)];
        let s = confusion(&rs, &t).unwrap();
        assert_eq!(s.matrix.total(), 1);
        assert_eq!(s.failed_excluded, 1);
    }

    #[test]
    fn degenerate_denominators() {
        let m = compute_metrics(&ConfusionMatrix::new(0, 5, 0, 0)).unwrap();
        assert_eq!(m.recall, Score::Undefined);
        assert_eq!(m.precision, Score::Undefined);
        assert_eq!(m.f1, Score::Undefined);
        assert!(close(m.accuracy, 1.0));

        // precision and recall both 0: harmonic mean undefined
        let m = compute_metrics(&ConfusionMatrix::new(0, 0, 3, 2)).unwrap();
        assert!(close(m.precision, 0.0) && close(m.recall, 0.0));
        assert_eq!(m.f1, Score::Undefined);

        assert!(matches!(
            compute_metrics(&ConfusionMatrix::default()),
            Err(EvalError::EmptyMatrix)
        ));
    }

    #[test]
    fn score_serialization() {
        let m = compute_metrics(&ConfusionMatrix::new(0, 5, 0, 0)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"accuracy":1.0,"recall":"undefined","precision":"undefined","f1":"undefined"}"#);
        assert_eq!(serde_json::from_str::<Metrics>(&json).unwrap(), m);
    }

    #[test]
    fn per_type_tally() {
        // hand count: reentrancy 2/2, access_control 1/2, logic_error 0/1; safe ignored
        let t = truth(&[
            ("r1", VulnType::Reentrancy),
            ("r2", VulnType::Reentrancy),
            ("a1", VulnType::AccessControl),
            ("a2", VulnType::AccessControl),
            ("l1", VulnType::LogicError),
            ("s1", VulnType::None),
        ]);
        let rs = vec![
            result("r1", Some(Label::Y)),
            result("r2", Some(Label::Y)),
            result("a1", Some(Label::Y)),
            result("a2", Some(Label::N)),
            result("l1", Some(Label::N)),
            result("s1", Some(Label::Y)),
        ];
        let b = per_type_breakdown(&rs, &t);
        assert_eq!(b.len(), 3);
        assert_eq!(b[&VulnType::Reentrancy], TypeRecall { detected: 2, total: 2, recall: 1.0 });
        assert_eq!(b[&VulnType::AccessControl].recall, 0.5);
        assert_eq!(b[&VulnType::LogicError].recall, 0.0);
        assert!(!b.contains_key(&VulnType::None));
    }

    #[test]
    fn absent_type_is_not_reported() {
        let t = truth(&[("r1", VulnType::Reentrancy)]);
        let b = per_type_breakdown(&[result("r1", Some(Label::Y))], &t);
        assert_eq!(b.keys().collect::<Vec<_>>(), vec![&VulnType::Reentrancy]);
    }

    #[test]
    fn baseline_parsing() {
        let r = parse_baseline(
            r#"{"method_name":"Mythril","accuracy":"21.7%","recall":"34.8%","precision":"20.0%","f1":"25.4%"}"#,
            "mythril.json",
        )
        .unwrap();
        assert!(close(r.metrics.accuracy, 0.217));
        assert_eq!(r.provenance, Provenance::Ingested);
        assert_eq!(r.source.as_deref(), Some("mythril.json"));

        let r = parse_baseline(
            r#"{"method_name":"X","accuracy":0.5,"recall":1,"precision":"0.25","f1":"undefined"}"#,
            "x.json",
        )
        .unwrap();
        assert!(close(r.metrics.precision, 0.25));
        assert_eq!(r.metrics.f1, Score::Undefined);
    }

    #[test]
    fn baseline_errors() {
        let over = r#"{"method_name":"X","accuracy":"170%","recall":0.1,"precision":0.1,"f1":0.1}"#;
        assert!(matches!(parse_baseline(over, "x"), Err(EvalError::OutOfRange { field, .. }) if field == "accuracy"));
        let over = r#"{"method_name":"X","accuracy":0.1,"recall":1.5,"precision":0.1,"f1":0.1}"#;
        assert!(matches!(parse_baseline(over, "x"), Err(EvalError::OutOfRange { .. })));
        let missing = r#"{"method_name":"X","accuracy":0.1,"recall":0.1,"precision":0.1}"#;
        assert!(matches!(parse_baseline(missing, "x"), Err(EvalError::SchemaError { .. })));
        let junk = r#"{"method_name":"X","accuracy":"lots","recall":0.1,"precision":0.1,"f1":0.1}"#;
        assert!(matches!(parse_baseline(junk, "x"), Err(EvalError::SchemaError { .. })));
        assert!(matches!(parse_baseline("[]", "x"), Err(EvalError::SchemaError { .. })));
    }

    #[test]
    fn single_row_table() {
        let summary = ConfusionSummary { matrix: ConfusionMatrix::new(1, 1, 0, 0), failed_excluded: 0 };
        let report = MethodReport::computed("Only", &summary).unwrap();
        let text = render_comparison(&[report]).to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.ends_with("| Only | 100.0% | 100.0% | 100.0% | 100.0% | computed |\n"));
    }

    /// Searches every matrix with the given size and positive count for the
    /// ones whose metrics round to the reported one-decimal percentages.
    fn matrices_matching(total: u64, positives: u64, want: [f64; 4]) -> Vec<ConfusionMatrix> {
        let mut out = Vec::new();
        for tp in 0..=positives {
            for fp in 0..=(total - positives) {
                let m = ConfusionMatrix::new(tp, total - positives - fp, fp, positives - tp);
                let got = compute_metrics(&m).unwrap();
                let pct = [got.accuracy, got.recall, got.precision, got.f1]
                    .map(|s| s.value().map(|v| (v * 1000.0).round() / 10.0));
                if pct.iter().zip(want).all(|(g, w)| *g == Some(w)) {
                    out.push(m);
                }
            }
        }
        out
    }

    #[test]
    fn reported_rates_force_unique_counts() {
        assert_eq!(
            matrices_matching(60, 30, [70.0, 100.0, 62.5, 76.9]),
            vec![ConfusionMatrix::new(30, 12, 18, 0)]
        );
        assert_eq!(
            matrices_matching(240, 120, [98.3, 100.0, 96.8, 98.4]),
            vec![ConfusionMatrix::new(120, 116, 4, 0)]
        );
    }

    proptest::proptest! {
        #[test]
        fn metric_identities(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            let m = ConfusionMatrix::new(tp, tn, fp, fn_);
            proptest::prop_assume!(m.total() > 0);
            let got = compute_metrics(&m).unwrap();
            for s in [got.accuracy, got.recall, got.precision, got.f1] {
                if let Score::Defined(v) = s {
                    proptest::prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let acc = got.accuracy.value().unwrap();
            proptest::prop_assert_eq!((acc * m.total() as f64).round() as u64, tp + tn);
            if let (Some(p), Some(r), Some(f)) = (got.precision.value(), got.recall.value(), got.f1.value()) {
                proptest::prop_assert!((f - 2.0 * p * r / (p + r)).abs() < 1e-9);
            }
        }

        #[test]
        fn confusion_conserves_counts(labels in proptest::collection::vec((proptest::bool::ANY, proptest::bool::ANY, proptest::bool::ANY), 0..40)) {
            let mut truth = HashMap::new();
            let mut results = Vec::new();
            let mut ok = 0;
            for (i, (vulnerable, says_y, failed)) in labels.iter().enumerate() {
                let id = format!("c{i}");
                let vt = if *vulnerable { VulnType::Reentrancy } else { VulnType::None };
                let gt = if *vulnerable { GroundTruth::Vulnerable } else { GroundTruth::Safe };
                truth.insert(id.clone(), (gt, vt));
                let label = (!failed).then_some(if *says_y { Label::Y } else { Label::N });
                ok += usize::from(!failed);
                results.push(result(&id, label));
            }
            let s = confusion(&results, &truth).unwrap();
            proptest::prop_assert_eq!(s.matrix.total() as usize, ok);
            proptest::prop_assert_eq!(s.failed_excluded, labels.len() - ok);
        }
    }

    #[test]
    fn text_and_json_agree() {
        let reports = vec![
            parse_baseline(r#"{"method_name":"A","accuracy":"21.7%","recall":"34.8%","precision":"20.0%","f1":"25.4%"}"#, "a.json").unwrap(),
            parse_baseline(r#"{"method_name":"B","accuracy":0.5,"recall":"undefined","precision":0.3333,"f1":"undefined"}"#, "b.json").unwrap(),
            MethodReport::computed("C", &ConfusionSummary { matrix: ConfusionMatrix::new(30, 12, 18, 0), failed_excluded: 2 }).unwrap(),
        ];
        let cmp = render_comparison(&reports);
        let from_json: Comparison = serde_json::from_str(&cmp.to_json()).unwrap();
        assert_eq!(from_json, cmp);
        let parsed = parse_comparison_text(&cmp.to_text()).unwrap();
        assert_eq!(parsed.len(), 3);
        for (text_row, json_row) in parsed.iter().zip(&from_json.rows) {
            assert_eq!(text_row.method_name, json_row.method_name);
            assert_eq!(text_row.computed, json_row.provenance == Provenance::Computed);
            let json_vals = [json_row.accuracy, json_row.recall, json_row.precision, json_row.f1];
            for (t, j) in text_row.values.iter().zip(json_vals) {
                match (t, j.value()) {
                    (None, None) => {}
                    // text is rounded to 0.1 percentage points
                    (Some(t), Some(j)) => assert!((t - j).abs() <= 0.0005 + 1e-12, "{t} vs {j}"),
                    other => panic!("definedness differs: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn metrics_table_columns() {
        let train = compute_metrics(&ConfusionMatrix::new(120, 116, 4, 0)).unwrap();
        let test = compute_metrics(&ConfusionMatrix::new(30, 12, 18, 0)).unwrap();
        let table = render_metrics_table(&[("Training Data", &train), ("Testing Data", &test)]);
        assert!(table.contains("| Accuracy | 98.3% | 70.0% |"));
        assert!(table.contains("| F1 Score | 98.4% | 76.9% |"));
    }
}
