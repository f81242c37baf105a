//! Per-frame annotation parsing, sentinel filtering and split summaries.
//!
//! Annotation files hold one frame per line in file order: `v,a` for
//! valence-arousal, a single integer for expressions and twelve
//! comma-separated integers for action units. A header line is recognised
//! by a non-numeric first token. Frame indices are 1-based data-line
//! numbers, matching `00001.png`-style frame naming.
//!
//! Invalid frames are the ones carrying the dataset's sentinels (`-5` for
//! VA, `-1` for expression and AU) or any value outside the valid domain.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::task::{Task, NUM_AUS, NUM_EXPRESSIONS};
use crate::{Error, Result};

pub const VA_SENTINEL: f64 = -5.0;
pub const LABEL_SENTINEL: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaPair {
    pub valence: f64,
    pub arousal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpressionId(pub i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuVector(pub [i32; NUM_AUS]);

/// Label carried by one frame; the variant fixes the task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Va { valence: f64, arousal: f64 },
    Expr { label: ExpressionId },
    Au { aus: AuVector },
}

impl Payload {
    pub fn task(&self) -> Task {
        match self {
            Payload::Va { .. } => Task::Va,
            Payload::Expr { .. } => Task::Expr,
            Payload::Au { .. } => Task::Au,
        }
    }

    pub fn va(&self) -> Option<VaPair> {
        match *self {
            Payload::Va { valence, arousal } => Some(VaPair { valence, arousal }),
            _ => None,
        }
    }

    pub fn expr(&self) -> Option<ExpressionId> {
        match *self {
            Payload::Expr { label } => Some(label),
            _ => None,
        }
    }

    pub fn aus(&self) -> Option<AuVector> {
        match *self {
            Payload::Au { aus } => Some(aus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub video_id: String,
    pub frame_index: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

/// Validity rules applied by [`filter_invalid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Inclusive valid range for both valence and arousal.
    pub va_range: (f64, f64),
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { va_range: (-1.0, 1.0) }
    }
}

impl CurationConfig {
    pub fn is_valid(&self, payload: &Payload) -> bool {
        match *payload {
            Payload::Va { valence, arousal } => {
                let (lo, hi) = self.va_range;
                [valence, arousal]
                    .iter()
                    .all(|&v| v != VA_SENTINEL && v.is_finite() && v >= lo && v <= hi)
            }
            Payload::Expr { label } => (0..NUM_EXPRESSIONS as i32).contains(&label.0),
            Payload::Au { aus } => aus.0.iter().all(|&a| a == 0 || a == 1),
        }
    }
}

fn is_numeric(token: &str) -> bool {
    token.trim().parse::<f64>().is_ok()
}

/// Parse one annotation file. No validity filtering is applied.
pub fn parse_annotation_file(content: &str, task: Task, video_id: &str) -> Result<Vec<FrameAnnotation>> {
    let content = content.strip_prefix('\u{feff}').unwrap_or(content);
    let mut records = Vec::new();
    let mut frame = 0u64;
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if i == 0 {
            let first = line.split(',').next().unwrap_or("");
            if !is_numeric(first) && !first.trim().is_empty() {
                continue;
            }
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = task.annotation_fields();
        if fields.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let bad = |tok: &str| Error::Parse {
            line: line_no,
            reason: format!("non-numeric token {tok:?}"),
        };
        let payload = match task {
            Task::Va => {
                let v: f64 = fields[0].parse().map_err(|_| bad(fields[0]))?;
                let a: f64 = fields[1].parse().map_err(|_| bad(fields[1]))?;
                Payload::Va { valence: v, arousal: a }
            }
            Task::Expr => Payload::Expr {
                label: ExpressionId(parse_int(fields[0]).ok_or_else(|| bad(fields[0]))?),
            },
            Task::Au => {
                let mut aus = [0i32; NUM_AUS];
                for (slot, tok) in aus.iter_mut().zip(&fields) {
                    *slot = parse_int(tok).ok_or_else(|| bad(tok))?;
                }
                Payload::Au { aus: AuVector(aus) }
            }
        };
        frame += 1;
        records.push(FrameAnnotation {
            video_id: video_id.to_string(),
            frame_index: frame,
            payload,
        });
    }
    Ok(records)
}

/// Integers, also accepting float spellings of integers such as `1.0`.
fn parse_int(tok: &str) -> Option<i32> {
    if let Ok(v) = tok.parse::<i32>() {
        return Some(v);
    }
    let f: f64 = tok.parse().ok()?;
    (libm::trunc(f) == f && f.abs() < i32::MAX as f64).then_some(f as i32)
}

impl Task {
    /// Comma-separated field count of one annotation line.
    pub fn annotation_fields(self) -> usize {
        match self {
            Task::Va => 2,
            Task::Expr => 1,
            Task::Au => NUM_AUS,
        }
    }
}

/// Reject repeated `(video_id, frame_index)` keys.
pub fn check_unique_keys(records: &[FrameAnnotation]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.video_id.as_str(), r.frame_index)) {
            return Err(Error::DuplicateFrame {
                video_id: r.video_id.clone(),
                frame_index: r.frame_index,
            });
        }
    }
    Ok(())
}

/// Valid frames of one task and split, in source order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedIndex {
    pub task: Task,
    pub records: Vec<FrameAnnotation>,
    pub dropped_count: usize,
}

impl CuratedIndex {
    pub fn total(&self) -> usize {
        self.records.len() + self.dropped_count
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped per video, each group sorted by frame index. Videos
    /// appear in first-seen order.
    pub fn videos(&self) -> Vec<(String, Vec<&FrameAnnotation>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&FrameAnnotation>> = BTreeMap::new();
        for r in &self.records {
            let g = groups.entry(r.video_id.as_str()).or_default();
            if g.is_empty() {
                order.push(r.video_id.clone());
            }
            g.push(r);
        }
        order
            .into_iter()
            .map(|v| {
                let mut g = groups.remove(v.as_str()).unwrap_or_default();
                g.sort_by_key(|r| r.frame_index);
                (v, g)
            })
            .collect()
    }
}

/// Keep exactly the records whose payload is valid for `task`.
pub fn filter_invalid(records: &[FrameAnnotation], task: Task, config: &CurationConfig) -> CuratedIndex {
    let kept: Vec<FrameAnnotation> = records
        .iter()
        .filter(|r| r.payload.task() == task && config.is_valid(&r.payload))
        .cloned()
        .collect();
    CuratedIndex {
        task,
        dropped_count: records.len() - kept.len(),
        records: kept,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: String,
    pub frames: usize,
    pub curated: usize,
}

/// Per-split frame counts before and after filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub task: Task,
    pub rows: Vec<SplitRow>,
}

fn split_rank(split: &str) -> (u8, String) {
    let rank = match split.to_ascii_lowercase().as_str() {
        "train" | "training" | "train_set" => 0,
        "val" | "valid" | "validation" | "validation_set" => 1,
        "test" | "test_set" => 2,
        _ => 3,
    };
    (rank, split.to_string())
}

fn split_label(split: &str) -> String {
    match split_rank(split).0 {
        0 => "Training".to_string(),
        1 => "Validation".to_string(),
        2 => "Test".to_string(),
        _ => split.to_string(),
    }
}

pub fn summarize(indices: &BTreeMap<String, CuratedIndex>) -> Result<CurationSummary> {
    let task = indices
        .values()
        .next()
        .map(|i| i.task)
        .ok_or_else(|| Error::Contract("summary needs at least one split".to_string()))?;
    let mut rows: Vec<SplitRow> = indices
        .iter()
        .map(|(split, idx)| SplitRow {
            split: split.clone(),
            frames: idx.total(),
            curated: idx.len(),
        })
        .collect();
    rows.sort_by_key(|r| split_rank(&r.split));
    Ok(CurationSummary { task, rows })
}

impl CurationSummary {
    /// Combine two summaries of the same task, adding counts of shared splits.
    pub fn merge(mut self, other: &CurationSummary) -> Result<CurationSummary> {
        if self.task != other.task {
            return Err(Error::Contract(format!("cannot merge {} with {}", self.task, other.task)));
        }
        for row in &other.rows {
            match self.rows.iter_mut().find(|r| r.split == row.split) {
                Some(r) => {
                    r.frames += row.frames;
                    r.curated += row.curated;
                }
                None => self.rows.push(row.clone()),
            }
        }
        self.rows.sort_by_key(|r| split_rank(&r.split));
        Ok(self)
    }

    /// Two-column text table: frames before and after filtering.
    pub fn render(&self) -> String {
        let title = match self.task {
            Task::Va => "VA estimation",
            Task::Expr => "EXPR recognition",
            Task::Au => "AU detection",
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<20}{:>14}{:>18}", title, "Frames", "Curated frames");
        let _ = writeln!(out, "{}", "-".repeat(52));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<20}{:>14}{:>18}",
                split_label(&r.split),
                group_thousands(r.frames),
                group_thousands(r.curated)
            );
        }
        out
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg() -> CurationConfig {
        CurationConfig::default()
    }

    #[test]
    fn parses_va_with_header() {
        let r = parse_annotation_file("valence,arousal\n0.5,-0.3\n-5,-5\n", Task::Va, "v1").unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].payload, Payload::Va { valence: 0.5, arousal: -0.3 });
        assert_eq!(r[1].payload, Payload::Va { valence: -5.0, arousal: -5.0 });
        assert_eq!((r[0].frame_index, r[1].frame_index), (1, 2));
    }

    #[test]
    fn parses_expr_with_header_and_crlf() {
        let r = parse_annotation_file(
            "Neutral,Anger,Disgust,Fear,Happiness,Sadness,Surprise,Other\r\n3\r\n-1\r\n",
            Task::Expr,
            "v",
        )
        .unwrap();
        let labels: Vec<i32> = r.iter().map(|x| x.payload.expr().unwrap().0).collect();
        assert_eq!(labels, vec![3, -1]);
    }

    #[test]
    fn short_au_line_is_an_error_at_that_line() {
        let content = "AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25,AU26\n\
                       0,0,0,0,0,0,0,0,0,0,0,0\n\
                       0,0,0,0,0,0,0,0,0,0,0\n";
        match parse_annotation_file(content, Task::Au, "v") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_is_reported() {
        let err = parse_annotation_file("0.1,0.2\n0.3,abc\n", Task::Va, "v").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_annotation_file("", Task::Au, "v").unwrap().is_empty());
        assert!(parse_annotation_file("valence,arousal\n", Task::Va, "v").unwrap().is_empty());
    }

    #[test]
    fn filter_drops_va_sentinel() {
        let r = parse_annotation_file("0.5,-0.3\n-5,-5\n", Task::Va, "v").unwrap();
        let idx = filter_invalid(&r, Task::Va, &cfg());
        assert_eq!((idx.len(), idx.dropped_count), (1, 1));
    }

    #[test]
    fn single_sentinel_component_drops_va_frame() {
        let r = parse_annotation_file("0.5,-5\n-5,0.1\n0.2,0.2\n", Task::Va, "v").unwrap();
        let idx = filter_invalid(&r, Task::Va, &cfg());
        assert_eq!((idx.len(), idx.dropped_count), (1, 2));
    }

    #[test]
    fn any_negative_au_drops_the_frame() {
        let r = parse_annotation_file(
            "0,1,1,1,1,1,1,1,1,1,1,1\n0,-1,0,0,0,0,0,0,0,0,0,0\n",
            Task::Au,
            "v",
        )
        .unwrap();
        let idx = filter_invalid(&r, Task::Au, &cfg());
        assert_eq!((idx.len(), idx.dropped_count), (1, 1));
    }

    #[test]
    fn expression_out_of_domain_is_dropped() {
        let r = parse_annotation_file("0\n7\n8\n-1\n", Task::Expr, "v").unwrap();
        let idx = filter_invalid(&r, Task::Expr, &cfg());
        assert_eq!((idx.len(), idx.dropped_count), (2, 2));
    }

    #[test]
    fn unit_range_config_drops_negative_valence() {
        let r = parse_annotation_file("0.5,0.5\n-0.5,0.5\n", Task::Va, "v").unwrap();
        let idx = filter_invalid(&r, Task::Va, &CurationConfig { va_range: (0.0, 1.0) });
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let mut r = parse_annotation_file("1\n2\n", Task::Expr, "v").unwrap();
        r[1].frame_index = 1;
        assert!(matches!(check_unique_keys(&r), Err(Error::DuplicateFrame { .. })));
    }

    #[test]
    fn summary_rows_and_render() {
        let r = parse_annotation_file("0\n1\n-1\n2\n", Task::Expr, "v").unwrap();
        let mut map = BTreeMap::new();
        map.insert("val".to_string(), filter_invalid(&r, Task::Expr, &cfg()));
        map.insert("train".to_string(), filter_invalid(&[], Task::Expr, &cfg()));
        let s = summarize(&map).unwrap();
        assert_eq!(s.rows[0].split, "train");
        assert_eq!((s.rows[0].frames, s.rows[0].curated), (0, 0));
        assert_eq!((s.rows[1].frames, s.rows[1].curated), (4, 3));
        let text = s.render();
        assert!(text.contains("Training"));
        assert!(text.contains("Curated frames"));
        assert!(summarize(&BTreeMap::new()).is_err());
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(group_thousands(1679854), "1,679,854");
        assert_eq!(group_thousands(999), "999");
    }
}
