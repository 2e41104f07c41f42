//! JSON Lines interchange format for labeled triplets, shared by the
//! simulator, the annotation service export and the fusion pipeline:
//!
//! ```text
//! {"i":12,"j":3,"k":40,"w":-1,"annotator":"a17","source":"human"}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::triplet::{fuse, Label, LabeledTriplet, LabeledTripletSet, Source, TripletQuery};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub w: Label,
    pub annotator: String,
    pub source: Source,
}

impl From<&LabeledTriplet> for LabelRecord {
    fn from(l: &LabeledTriplet) -> Self {
        Self {
            i: l.query.i,
            j: l.query.j,
            k: l.query.k,
            w: l.label,
            annotator: l.annotator.clone(),
            source: l.source,
        }
    }
}

impl LabelRecord {
    pub fn into_labeled(self) -> Result<LabeledTriplet> {
        LabeledTriplet::from_answer(self.i, self.j, self.k, self.w, self.annotator, self.source)
    }
}

pub fn write_jsonl<W: Write>(mut out: W, labels: impl IntoIterator<Item = impl std::borrow::Borrow<LabeledTriplet>>) -> Result<()> {
    for l in labels {
        serde_json::to_writer(&mut out, &LabelRecord::from(l.borrow()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_string(labels: &LabeledTripletSet) -> String {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, labels).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Parses every line, normalizing mirrored `(i, k, j)` answers to canonical form.
/// Blank lines are skipped; errors carry the 1-based line number.
pub fn read_jsonl<R: BufRead>(input: R, origin: &Path) -> Result<Vec<LabeledTriplet>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let format_err = |message: String| Error::Format {
            path: origin.to_path_buf(),
            row: idx + 1,
            message,
        };
        let record: LabelRecord = serde_json::from_str(&line).map_err(|e| format_err(e.to_string()))?;
        out.push(record.into_labeled().map_err(|e| format_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledTriplet>> {
    let path = path.as_ref();
    read_jsonl(BufReader::new(fs::File::open(path)?), path)
}

/// Groups labels by annotator and fuses the groups, so overlapping queries
/// are reported as fusion conflicts naming both annotators.
pub fn fuse_labels(n: usize, labels: Vec<LabeledTriplet>) -> Result<LabeledTripletSet> {
    let mut groups: Vec<(String, LabeledTripletSet)> = Vec::new();
    let mut fused_order = LabeledTripletSet::new(n);
    for l in &labels {
        let pos = match groups.iter().position(|(a, _)| *a == l.annotator) {
            Some(p) => p,
            None => {
                groups.push((l.annotator.clone(), LabeledTripletSet::new(n)));
                groups.len() - 1
            }
        };
        groups[pos].1.push(l.clone())?;
    }
    // Validate disjointness across annotators, then keep file order.
    fuse(groups.iter().map(|(_, s)| s))?;
    for l in labels {
        fused_order.push(l)?;
    }
    Ok(fused_order)
}

/// A query that appears more than once in a label file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub query: TripletQuery,
    /// Annotators in file order, one entry per occurrence.
    pub annotators: Vec<String>,
}

/// Every query labeled more than once, in order of first appearance.
pub fn find_overlaps(labels: &[LabeledTriplet]) -> Vec<Overlap> {
    let mut seen: Vec<Overlap> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for l in labels {
        let pos = *index.entry(l.query).or_insert_with(|| {
            seen.push(Overlap {
                query: l.query,
                annotators: Vec::new(),
            });
            seen.len() - 1
        });
        seen[pos].annotators.push(l.annotator.clone());
    }
    seen.retain(|o| o.annotators.len() > 1);
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mirror_normalization() {
        let text = r#"{"i":1,"j":2,"k":3,"w":-1,"annotator":"a","source":"simulated"}
{"i":2,"j":4,"k":1,"w":-1,"annotator":"b","source":"human"}

"#;
        let labels = read_jsonl(text.as_bytes(), Path::new("x.jsonl")).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[1].query, TripletQuery { i: 2, j: 1, k: 4 });
        assert_eq!(labels[1].label, Label::CloserToK);
        let set = fuse_labels(4, labels).unwrap();
        let out = to_jsonl_string(&set);
        assert!(out.starts_with(r#"{"i":1,"j":2,"k":3,"w":-1,"annotator":"a","source":"simulated"}"#));
        let again = read_jsonl(out.as_bytes(), Path::new("y")).unwrap();
        assert_eq!(again, set.labels());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"i\":1,\"j\":2,\"k\":3,\"w\":-1,\"annotator\":\"a\",\"source\":\"human\"}\n{\"i\":1,\"j\":2}\n";
        match read_jsonl(text.as_bytes(), Path::new("x")) {
            Err(Error::Format { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let bad_w = r#"{"i":1,"j":2,"k":3,"w":0,"annotator":"a","source":"human"}"#;
        assert!(matches!(read_jsonl(bad_w.as_bytes(), Path::new("x")), Err(Error::Format { row: 1, .. })));
        let bad_idx = r#"{"i":1,"j":1,"k":3,"w":1,"annotator":"a","source":"human"}"#;
        assert!(matches!(read_jsonl(bad_idx.as_bytes(), Path::new("x")), Err(Error::Format { row: 1, .. })));
    }

    #[test]
    fn cross_annotator_duplicate_is_a_conflict() {
        let text = r#"{"i":1,"j":2,"k":3,"w":-1,"annotator":"a","source":"human"}
{"i":1,"j":3,"k":2,"w":1,"annotator":"b","source":"human"}"#;
        let labels = read_jsonl(text.as_bytes(), Path::new("x")).unwrap();
        match fuse_labels(3, labels) {
            Err(Error::FusionConflict { query, first, second }) => {
                assert_eq!(query, TripletQuery { i: 1, j: 2, k: 3 });
                assert_eq!((first.as_str(), second.as_str()), ("a", "b"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlaps_list_every_repeat() {
        let text = r#"{"i":1,"j":2,"k":3,"w":-1,"annotator":"a","source":"simulated"}
{"i":1,"j":2,"k":4,"w":1,"annotator":"a","source":"simulated"}
{"i":1,"j":3,"k":2,"w":1,"annotator":"b","source":"simulated"}
{"i":1,"j":2,"k":4,"w":1,"annotator":"c","source":"simulated"}
{"i":1,"j":2,"k":3,"w":-1,"annotator":"c","source":"simulated"}
"#;
        let labels = read_jsonl(text.as_bytes(), Path::new("x.jsonl")).unwrap();
        let overlaps = find_overlaps(&labels);
        assert_eq!(overlaps.len(), 2);
        assert_eq!(overlaps[0].query, TripletQuery::new(1, 2, 3).unwrap());
        assert_eq!(overlaps[0].annotators, ["a", "b", "c"]);
        assert_eq!(overlaps[1].annotators, ["a", "c"]);
        assert!(find_overlaps(&labels[..2]).is_empty());
    }
}
