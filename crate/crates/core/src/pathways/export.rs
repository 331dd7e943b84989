use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EdgeAnnotation, Stage2Distribution, TransitionMatrix, TransitionOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeColor {
    Black,
    Red,
    Violet,
    Turquoise,
}

impl EdgeColor {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeColor::Black => "black",
            EdgeColor::Red => "red",
            EdgeColor::Violet => "violet",
            EdgeColor::Turquoise => "turquoise",
        }
    }
}

/// `[0.5, 1]` black, `[0.3, 0.5)` red, `[0.1, 0.3)` violet, below 0.1 turquoise.
pub fn edge_color(p: f64) -> EdgeColor {
    if p >= 0.5 {
        EdgeColor::Black
    } else if p >= 0.3 {
        EdgeColor::Red
    } else if p >= 0.1 {
        EdgeColor::Violet
    } else {
        EdgeColor::Turquoise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    Dot,
    Json,
}

impl FromStr for NetworkFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(NetworkFormat::Dot),
            "json" => Ok(NetworkFormat::Json),
            _ => Err(Error::UnsupportedFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub stage: u32,
    pub state: String,
}

impl NetworkNode {
    fn new(stage: u32, state: &str) -> Self {
        Self { id: format!("stage{stage}:{state}"), stage, state: state.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub source: String,
    pub target: String,
    /// Rounded to 4 decimals.
    pub probability: f64,
    pub count: u64,
    pub color: EdgeColor,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub treated: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub emerging: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub subgroup: usize,
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

fn round4(p: f64) -> f64 {
    (p * 1e4).round() / 1e4
}

fn shift_label(cui: &str, fraction: f64) -> String {
    format!("{cui} ({:.0}%)", fraction * 100.0)
}

/// One document per subgroup, in subgroup order. Nodes are the row sources
/// and every observed target.
pub fn network_documents(
    matrices: &[TransitionMatrix],
    annotations: &[EdgeAnnotation],
) -> Vec<NetworkDocument> {
    let subgroups: BTreeSet<usize> = matrices.iter().map(|m| m.subgroup).collect();
    subgroups
        .into_iter()
        .map(|g| {
            let mut nodes = BTreeSet::new();
            let mut edges = Vec::new();
            for m in matrices.iter().filter(|m| m.subgroup == g) {
                for row in &m.rows {
                    let source = NetworkNode::new(m.stage - 1, row.from.as_str());
                    for (&to, &p) in &row.probabilities {
                        let target = NetworkNode::new(m.stage, to.as_str());
                        let ann = annotations.iter().find(|a| {
                            a.subgroup == g && a.stage == m.stage && a.from == row.from && a.to == to
                        });
                        let labels = |pick: fn(&EdgeAnnotation) -> &Vec<super::ConditionShift>| {
                            ann.map(|a| pick(a).iter().map(|c| shift_label(&c.cui, c.fraction)).collect())
                                .unwrap_or_default()
                        };
                        edges.push(NetworkEdge {
                            source: source.id.clone(),
                            target: target.id.clone(),
                            probability: round4(p),
                            count: row.counts.get(&to).copied().unwrap_or(0),
                            color: edge_color(p),
                            treated: labels(|a| &a.annotation.treated),
                            emerging: labels(|a| &a.annotation.emerging),
                        });
                        nodes.insert(target);
                    }
                    if row.total > 0 || m.stage == 2 {
                        nodes.insert(source);
                    }
                }
            }
            NetworkDocument { subgroup: g, nodes: nodes.into_iter().collect(), edges }
        })
        .collect()
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn to_dot(docs: &[NetworkDocument], min_support: u64) -> String {
    let mut out = String::new();
    for doc in docs {
        let _ = writeln!(out, "digraph subgroup_{} {{", doc.subgroup);
        out.push_str("  rankdir=LR;\n  node [shape=box];\n");
        for n in &doc.nodes {
            let _ = writeln!(out, "  \"{}\" [label=\"{}\"];", dot_escape(&n.id), dot_escape(&n.id));
        }
        for e in doc.edges.iter().filter(|e| e.count >= min_support) {
            let mut label = format!("{:.4}", e.probability);
            if !e.treated.is_empty() {
                let _ = write!(label, "\\ntreated: {}", dot_escape(&e.treated.join(", ")));
            }
            if !e.emerging.is_empty() {
                let _ = write!(label, "\\nemerging: {}", dot_escape(&e.emerging.join(", ")));
            }
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\", color={}, probability={:.4}];",
                dot_escape(&e.source),
                dot_escape(&e.target),
                label,
                e.color.as_str(),
                e.probability
            );
        }
        out.push_str("}\n");
    }
    out
}

/// Renders the networks. `min_support` drops low-count edges from DOT only;
/// JSON keeps every edge.
pub fn export_network(
    matrices: &[TransitionMatrix],
    annotations: &[EdgeAnnotation],
    format: &str,
    min_support: u64,
) -> Result<String> {
    let format: NetworkFormat = format.parse()?;
    let docs = network_documents(matrices, annotations);
    match format {
        NetworkFormat::Dot => Ok(to_dot(&docs, min_support)),
        NetworkFormat::Json => {
            let mut s = serde_json::to_string_pretty(&docs)?;
            s.push('\n');
            Ok(s)
        }
    }
}

/// Rows are subgroups, columns the known outcomes. Empty subgroups keep
/// blank cells.
pub fn write_stage2_heatmap_csv<W: Write>(rows: &[Stage2Distribution], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["subgroup".to_string(), "n".to_string()];
    header.extend(TransitionOutcome::KNOWN.iter().map(|o| o.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.subgroup.to_string(), r.n_patients.to_string()];
        for o in TransitionOutcome::KNOWN {
            rec.push(if r.probabilities.is_empty() {
                String::new()
            } else {
                format!("{:.4}", r.probabilities.get(&o).copied().unwrap_or(0.0))
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("stage2_heatmap.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathways::{estimate_transitions, FromState, OutcomeSequence, TransitionOutcome::*};
    use std::collections::BTreeMap;

    #[test]
    fn bucket_boundaries() {
        let cases = [
            (0.0999, EdgeColor::Turquoise),
            (0.1, EdgeColor::Violet),
            (0.2999, EdgeColor::Violet),
            (0.3, EdgeColor::Red),
            (0.4999, EdgeColor::Red),
            (0.5, EdgeColor::Black),
            (1.0, EdgeColor::Black),
            (0.0, EdgeColor::Turquoise),
        ];
        for (p, c) in cases {
            assert_eq!(edge_color(p), c, "p = {p}");
        }
    }

    fn matrices() -> Vec<TransitionMatrix> {
        let seqs = vec![
            OutcomeSequence { patient_id: "a".into(), outcomes: vec![Improve, Discharge] },
            OutcomeSequence { patient_id: "b".into(), outcomes: vec![Improve, Decease] },
            OutcomeSequence { patient_id: "c".into(), outcomes: vec![Deteriorate, Decease] },
        ];
        let groups: BTreeMap<String, usize> = ["a", "b", "c"].iter().map(|s| (s.to_string(), 0)).collect();
        estimate_transitions(&seqs, &groups)
    }

    #[test]
    fn dot_has_labelled_nodes_and_colored_edges() {
        let dot = export_network(&matrices(), &[], "dot", 1).unwrap();
        assert!(dot.starts_with("digraph subgroup_0 {"));
        assert!(dot.contains("\"stage1:Start\" -> \"stage2:Improve\" [label=\"0.6667\", color=black"));
        assert!(dot.contains("\"stage1:Start\" -> \"stage2:Deteriorate\" [label=\"0.3333\", color=red"));
        assert!(dot.contains("\"stage2:Improve\" -> \"stage3:Discharge\" [label=\"0.5000\", color=black"));
        // Support filter hides single-patient edges in DOT.
        let dot2 = export_network(&matrices(), &[], "dot", 2).unwrap();
        assert!(dot2.contains("stage2:Improve\" [label"));
        assert!(!dot2.contains("-> \"stage3:Discharge\""));
    }

    #[test]
    fn json_mirrors_edges() {
        let json = export_network(&matrices(), &[], "json", 5).unwrap();
        let docs: Vec<NetworkDocument> = serde_json::from_str(&json).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].edges.len(), 5);
        let e = docs[0].edges.iter().find(|e| e.target == "stage2:Improve").unwrap();
        assert_eq!(e.probability, 0.6667);
        assert_eq!(e.color, EdgeColor::Black);
    }

    #[test]
    fn empty_matrix_has_nodes_only() {
        let m = TransitionMatrix {
            subgroup: 2,
            stage: 2,
            rows: vec![crate::pathways::TransitionRow {
                from: FromState::Start,
                total: 0,
                unknown: 3,
                counts: BTreeMap::new(),
                probabilities: BTreeMap::new(),
            }],
        };
        let docs = network_documents(&[m], &[]);
        assert_eq!(docs[0].nodes.len(), 1);
        assert!(docs[0].edges.is_empty());
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!(matches!(
            export_network(&matrices(), &[], "svg", 1),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn heatmap_rows() {
        let rows = vec![
            Stage2Distribution {
                subgroup: 0,
                n_patients: 2,
                probabilities: BTreeMap::from([(Improve, 0.5), (Deteriorate, 0.5)]),
            },
            Stage2Distribution { subgroup: 1, n_patients: 0, probabilities: BTreeMap::new() },
        ];
        let mut buf = Vec::new();
        write_stage2_heatmap_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "subgroup,n,Discharge,Improve,Persistent,Deteriorate,Decease\n\
             0,2,0.0000,0.5000,0.0000,0.5000,0.0000\n\
             1,0,,,,,\n"
        );
    }

    #[test]
    fn buckets_are_total_over_unit_interval() {
        for i in 0..=10_000 {
            let p = i as f64 / 10_000.0;
            let c = edge_color(p);
            let expected = if p >= 0.5 {
                EdgeColor::Black
            } else if p >= 0.3 {
                EdgeColor::Red
            } else if p >= 0.1 {
                EdgeColor::Violet
            } else {
                EdgeColor::Turquoise
            };
            assert_eq!(c, expected);
        }
    }
}
