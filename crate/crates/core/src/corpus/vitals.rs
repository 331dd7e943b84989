use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{parse_timestamp, RejectedRow, VitalItem, VitalsRecord};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["patient_id", "chart_time", "item", "value"];

/// Validated vitals grouped by patient, each group in ascending chart time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VitalsCorpus {
    pub by_patient: BTreeMap<String, Vec<VitalsRecord>>,
    pub rejected: Vec<RejectedRow>,
}

impl VitalsCorpus {
    pub fn from_records(records: impl IntoIterator<Item = VitalsRecord>) -> Self {
        let mut by_patient: BTreeMap<String, Vec<VitalsRecord>> = BTreeMap::new();
        for rec in records {
            by_patient.entry(rec.patient_id.clone()).or_default().push(rec);
        }
        for group in by_patient.values_mut() {
            group.sort_by(|a, b| {
                (a.chart_time, a.item)
                    .cmp(&(b.chart_time, b.item))
                    .then(a.value.total_cmp(&b.value))
            });
        }
        Self {
            by_patient,
            rejected: Vec::new(),
        }
    }

    pub fn n_records(&self) -> usize {
        self.by_patient.values().map(Vec::len).sum()
    }
}

fn parse_row(record: &csv::StringRecord) -> Result<VitalsRecord, String> {
    if record.len() != 4 {
        return Err(format!("expected 4 fields, found {}", record.len()));
    }
    let item: VitalItem = record[2].trim().parse()?;
    let value: f64 = record[3]
        .trim()
        .parse()
        .map_err(|_| format!("invalid value {:?}", &record[3]))?;
    let rec = VitalsRecord {
        patient_id: record[0].trim().to_string(),
        chart_time: parse_timestamp(&record[1])?,
        item,
        value,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn parse_vitals<R: Read>(reader: R, source_name: &str) -> Result<VitalsCorpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != HEADER {
        return Err(Error::Parse {
            source_name: source_name.to_string(),
            line: 1,
            reason: format!("expected header {}, found {}", HEADER.join(","), names.join(",")),
        });
    }
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let parsed = row
            .map_err(|e| format!("malformed row: {e}"))
            .and_then(|r| parse_row(&r));
        match parsed {
            Ok(rec) => records.push(rec),
            Err(reason) => {
                log::warn!("{source_name}:{line}: {reason}");
                rejected.push(RejectedRow {
                    source: source_name.to_string(),
                    line,
                    reason,
                });
            }
        }
    }
    let mut corpus = VitalsCorpus::from_records(records);
    corpus.rejected = rejected;
    Ok(corpus)
}

pub fn load_vitals(path: &Path) -> Result<VitalsCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_vitals(file, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_and_rejects_rows() {
        let input = "patient_id,chart_time,item,value\n\
                     p1,2101-01-01T08:00:00Z,temp_c,37.0\n\
                     p1,2101-01-01T09:00:00Z,temp_c,99.1\n\
                     p1,2101-01-01T09:00:00Z,spo2,97\n";
        let corpus = parse_vitals(input.as_bytes(), "vitals.csv").unwrap();
        assert_eq!(corpus.n_records(), 1);
        assert_eq!(corpus.rejected.len(), 2);
        assert!(corpus.rejected[0].reason.starts_with("out of range"));
        assert_eq!(corpus.rejected[0].line, 3);
        assert!(corpus.rejected[1].reason.contains("unknown item"));
    }

    #[test]
    fn groups_by_patient() {
        let mut input = String::from("patient_id,chart_time,item,value\n");
        for pid in ["p2", "p1"] {
            for (item, v) in [("heart_rate", 80.0), ("resp_rate", 16.0), ("wbc", 9.0)] {
                input.push_str(&format!("{pid},2101-01-01T08:00:00Z,{item},{v}\n"));
            }
        }
        let corpus = parse_vitals(input.as_bytes(), "vitals.csv").unwrap();
        let sizes: Vec<usize> = corpus.by_patient.values().map(Vec::len).collect();
        assert_eq!(sizes, [3, 3]);
    }

    #[test]
    fn wrong_header_is_an_error() {
        let input = "pid,time,item,value\n";
        assert!(parse_vitals(input.as_bytes(), "vitals.csv").is_err());
    }

    proptest! {
        #[test]
        fn accepted_rows_satisfy_range(
            rows in proptest::collection::vec((0usize..6, -50.0f64..400.0), 1..40)
        ) {
            let mut input = String::from("patient_id,chart_time,item,value\n");
            for (item, v) in &rows {
                input.push_str(&format!(
                    "p,2101-01-01T08:00:00Z,{},{v}\n",
                    VitalItem::ALL[*item].as_str()
                ));
            }
            let corpus = parse_vitals(input.as_bytes(), "vitals.csv").unwrap();
            prop_assert_eq!(corpus.n_records() + corpus.rejected.len(), rows.len());
            for rec in corpus.by_patient.values().flatten() {
                let (lo, hi) = rec.item.plausible_range();
                prop_assert!(rec.value >= lo && rec.value <= hi);
            }
        }
    }
}
