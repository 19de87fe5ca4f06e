//! Published LIMA and DukeMTMC-reID results, shipped as CSV and kept as raw
//! text so that loading and writing back is the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, Scope};

pub const REGISTRY_CSV: &str = include_str!("registry.csv");
const ABSENT: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub table: String,
    pub row: u32,
    pub method: String,
    pub metric: String,
    /// Value exactly as printed, `-` when the source table leaves it blank.
    pub value: String,
}

impl RegistryEntry {
    pub fn number(&self) -> Option<f64> {
        if self.value == ABSENT {
            None
        } else {
            self.value.parse().ok()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultsRegistry {
    entries: Vec<RegistryEntry>,
}

/// All metrics of one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryRow {
    pub table: String,
    pub row: u32,
    pub method: String,
    pub metrics: Vec<(String, Option<f64>)>,
}

impl RegistryRow {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|(m, _)| m == metric).and_then(|(_, v)| *v)
    }
}

impl ResultsRegistry {
    pub fn embedded() -> Self {
        Self::from_csv(REGISTRY_CSV).expect("shipped registry parses")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Registry(e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != ["table", "row", "method", "metric", "value"] {
            return Err(Error::Registry("header must be table,row,method,metric,value".into()));
        }
        let mut entries = Vec::new();
        for (i, rec) in reader.deserialize().enumerate() {
            let e: RegistryEntry = rec.map_err(|e| Error::Registry(format!("line {}: {e}", i + 2)))?;
            if e.value != ABSENT && e.value.parse::<f64>().is_err() {
                return Err(Error::Registry(format!("line {}: value {:?} is not a number", i + 2, e.value)));
            }
            entries.push(e);
        }
        Ok(ResultsRegistry { entries })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Looks up keys such as `"LIMA row 6"` or `"Duke row 4"`.
    pub fn lookup(&self, key: &str) -> Result<RegistryRow> {
        let parts: Vec<&str> = key.split_whitespace().collect();
        let (table, row) = match parts.as_slice() {
            [t, r, n] if r.eq_ignore_ascii_case("row") => (
                *t,
                n.parse::<u32>()
                    .map_err(|_| Error::Registry(format!("bad row number in {key:?}")))?,
            ),
            _ => return Err(Error::Registry(format!("key {key:?} is not of the form '<table> row <n>'"))),
        };
        let hits: Vec<&RegistryEntry> = self
            .entries
            .iter()
            .filter(|e| e.table.eq_ignore_ascii_case(table) && e.row == row)
            .collect();
        let first = hits
            .first()
            .ok_or_else(|| Error::Registry(format!("no registry row {key:?}")))?;
        Ok(RegistryRow {
            table: first.table.clone(),
            row,
            method: first.method.clone(),
            metrics: hits.iter().map(|e| (e.metric.clone(), e.number())).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    /// Percent, as in the published tables.
    pub computed: Option<f64>,
    pub stored: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub key: String,
    pub method: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        let mut s = format!("{} ({})\nmetric      computed    stored     delta\n", self.key, self.method);
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>9} {:>9} {:>9}\n",
                r.metric,
                fmt(r.computed),
                fmt(r.stored),
                fmt(r.delta)
            );
        }
        s
    }
}

fn computed_metric(report: &EvalReport, metric: &str) -> Option<f64> {
    let v = match metric {
        "all_prec1" | "prec1" => report.prec(Scope::All, 1),
        "pid_prec1" => report.prec(Scope::Pid, 1),
        "prec5" => report.prec(Scope::All, 5),
        "all_map" | "map" => report.map_all,
        "pid_map" => report.map_pid,
        "cmc1_sq" => report.retrieval.as_ref().and_then(|r| r.cmc.first().copied()),
        "map_sq" => report.retrieval.as_ref().map(|r| r.map),
        _ => None,
    };
    v.map(|x| 100.0 * x)
}

/// Side-by-side computed and published values. Desk-scale numbers are not
/// expected to match; the deltas are context only.
pub fn compare_to_registry(registry: &ResultsRegistry, report: &EvalReport, key: &str) -> Result<Comparison> {
    let row = registry.lookup(key)?;
    let rows = row
        .metrics
        .iter()
        .map(|(metric, stored)| {
            let computed = computed_metric(report, metric);
            ComparisonRow {
                metric: metric.clone(),
                computed,
                stored: *stored,
                delta: computed.zip(*stored).map(|(c, s)| c - s),
            }
        })
        .collect();
    Ok(Comparison {
        key: key.to_string(),
        method: row.method,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        assert_eq!(ResultsRegistry::embedded().to_csv(), REGISTRY_CSV);
    }

    #[test]
    fn lookups() {
        let r = ResultsRegistry::embedded();
        assert_eq!(r.lookup("LIMA row 1").unwrap().get("all_prec1"), Some(89.1));
        assert_eq!(r.lookup("LIMA row 1").unwrap().get("pid_map"), None);
        let six = r.lookup("LIMA row 6").unwrap();
        assert_eq!(
            ["all_prec1", "pid_prec1", "all_map", "pid_map"].map(|m| six.get(m).unwrap()),
            [92.58, 94.57, 91.14, 97.02]
        );
        assert_eq!(r.lookup("Duke row 5").unwrap().get("prec1"), Some(88.84));
        assert!(r.lookup("Duke row 9").is_err());
        assert!(r.lookup("Duke 5").is_err());
    }

    #[test]
    fn non_numeric_values_are_rejected() {
        let bad = "table,row,method,metric,value\nLIMA,1,x,all_prec1,abc\n";
        assert!(ResultsRegistry::from_csv(bad).is_err());
    }
}
