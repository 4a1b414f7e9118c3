//! Level-labeled sentence corpora: loading, validation, statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levels::{parse_level, ProficiencyLevel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    pub level: ProficiencyLevel,
    pub language: String,
    pub source_corpus: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("tsv") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

/// Metadata applied to TSV rows, which carry only id, text and level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub language: String,
    pub source_corpus: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            language: "en".into(),
            source_corpus: "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineErrorKind {
    Parse(String),
    UnknownLevel(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub kind: LineErrorKind,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LineErrorKind::Parse(reason) => write!(f, "line {}: parse error: {reason}", self.line),
            LineErrorKind::UnknownLevel(level) => {
                write!(f, "line {}: unknown level {level:?}", self.line)
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {} malformed line(s); first: {}", errors.len(), errors[0])]
    Lines { path: PathBuf, errors: Vec<LineError> },
}

/// Loads one split. Blank lines are skipped; every malformed line is
/// collected and reported together.
pub fn load_split(
    path: &Path,
    format: CorpusFormat,
    options: &LoadOptions,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_split(&raw, format, options).map_err(|errors| CorpusError::Lines {
        path: path.to_path_buf(),
        errors,
    })
}

pub fn parse_split(
    raw: &str,
    format: CorpusFormat,
    options: &LoadOptions,
) -> Result<Vec<LabeledSentence>, Vec<LineError>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            CorpusFormat::Jsonl => parse_jsonl_line(line),
            CorpusFormat::Tsv => parse_tsv_line(line, options),
        };
        match parsed {
            Ok(s) => {
                if s.text.trim().is_empty() {
                    errors.push(LineError {
                        line: line_no,
                        kind: LineErrorKind::Parse("empty text".into()),
                    });
                } else if !seen.insert(s.id.clone()) {
                    errors.push(LineError {
                        line: line_no,
                        kind: LineErrorKind::Parse(format!("duplicate id {:?}", s.id)),
                    });
                } else {
                    out.push(s);
                }
            }
            Err(kind) => errors.push(LineError { line: line_no, kind }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn parse_jsonl_line(line: &str) -> Result<LabeledSentence, LineErrorKind> {
    #[derive(Deserialize)]
    struct Raw {
        id: String,
        text: String,
        level: String,
        language: String,
        source_corpus: String,
    }
    let raw: Raw = serde_json::from_str(line).map_err(|e| LineErrorKind::Parse(e.to_string()))?;
    let level = parse_level(&raw.level).map_err(|_| LineErrorKind::UnknownLevel(raw.level))?;
    Ok(LabeledSentence {
        id: raw.id,
        text: raw.text,
        level,
        language: raw.language,
        source_corpus: raw.source_corpus,
    })
}

fn parse_tsv_line(line: &str, options: &LoadOptions) -> Result<LabeledSentence, LineErrorKind> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 3 {
        return Err(LineErrorKind::Parse(format!(
            "expected 3 tab-separated columns (id, text, level), found {}",
            cols.len()
        )));
    }
    let level = parse_level(cols[2]).map_err(|_| LineErrorKind::UnknownLevel(cols[2].into()))?;
    Ok(LabeledSentence {
        id: cols[0].to_string(),
        text: cols[1].to_string(),
        level,
        language: options.language.clone(),
        source_corpus: options.source_corpus.clone(),
    })
}

pub fn write_jsonl<W: Write>(mut w: W, split: &[LabeledSentence]) -> io::Result<()> {
    for s in split {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_split(path: &Path, split: &[LabeledSentence]) -> io::Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, split)?;
    fs::write(path, buf)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

impl CorpusSplit {
    /// Warnings for test sentences below B2, which cannot serve as
    /// simplification sources.
    pub fn test_level_warnings(&self) -> Vec<String> {
        self.test
            .iter()
            .filter(|s| s.level < ProficiencyLevel::B2)
            .map(|s| format!("test sentence {:?} has level {} (below B2)", s.id, s.level))
            .collect()
    }
}

/// Per-level counts; all six levels are always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub counts: BTreeMap<ProficiencyLevel, usize>,
    pub total: usize,
}

impl LevelCounts {
    pub fn get(&self, level: ProficiencyLevel) -> usize {
        self.counts.get(&level).copied().unwrap_or(0)
    }
}

pub fn split_stats(split: &[LabeledSentence]) -> LevelCounts {
    let mut counts: BTreeMap<ProficiencyLevel, usize> = ProficiencyLevel::ALL.iter().map(|l| (*l, 0)).collect();
    for s in split {
        *counts.entry(s.level).or_default() += 1;
    }
    LevelCounts {
        counts,
        total: split.len(),
    }
}

pub fn filter_by_level(split: &[LabeledSentence], level: ProficiencyLevel) -> Vec<LabeledSentence> {
    split.iter().filter(|s| s.level == level).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProficiencyLevel::*;

    fn sentence(id: &str, level: ProficiencyLevel) -> LabeledSentence {
        LabeledSentence {
            id: id.into(),
            text: format!("sentence {id}"),
            level,
            language: "en".into(),
            source_corpus: "demo".into(),
        }
    }

    #[test]
    fn jsonl_line() {
        let raw = r#"{"id":"s1","text":"That's a good question.","level":"A1","language":"en","source_corpus":"demo"}"#;
        let got = parse_split(raw, CorpusFormat::Jsonl, &LoadOptions::default()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].level, A1);
        assert_eq!(got[0].text, "That's a good question.");
    }

    #[test]
    fn tsv_line_takes_metadata_from_options() {
        let opts = LoadOptions {
            language: "en".into(),
            source_corpus: "readme".into(),
        };
        let got = parse_split("s2\tHow was your first day in college?\tA1", CorpusFormat::Tsv, &opts).unwrap();
        assert_eq!(got[0].level, A1);
        assert_eq!(got[0].text, "How was your first day in college?");
        assert_eq!(got[0].source_corpus, "readme");
    }

    #[test]
    fn bad_level_is_reported_with_line() {
        let raw = "s1\tok\tA1\n\ns3\tbad\tZ9\n";
        let errs = parse_split(raw, CorpusFormat::Tsv, &LoadOptions::default()).unwrap_err();
        assert_eq!(
            errs,
            vec![LineError {
                line: 3,
                kind: LineErrorKind::UnknownLevel("Z9".into())
            }]
        );
    }

    #[test]
    fn malformed_and_duplicate_lines() {
        let raw = "{not json}\n{\"id\":\"a\",\"text\":\"x\",\"level\":\"B1\",\"language\":\"en\",\"source_corpus\":\"d\"}\n{\"id\":\"a\",\"text\":\"y\",\"level\":\"B1\",\"language\":\"en\",\"source_corpus\":\"d\"}\n{\"id\":\"b\",\"text\":\"  \",\"level\":\"B1\",\"language\":\"en\",\"source_corpus\":\"d\"}";
        let errs = parse_split(raw, CorpusFormat::Jsonl, &LoadOptions::default()).unwrap_err();
        let lines: Vec<usize> = errs.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![1, 3, 4]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_split(
            Path::new("/nonexistent/split.jsonl"),
            CorpusFormat::Jsonl,
            &LoadOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/split.jsonl"));
    }

    #[test]
    fn stats_and_filter() {
        let split = vec![sentence("1", B2), sentence("2", A1), sentence("3", B2)];
        let stats = split_stats(&split);
        assert_eq!(stats.get(B2), 2);
        assert_eq!(stats.get(C2), 0);
        assert_eq!(stats.total, 3);
        let b2 = filter_by_level(&split, B2);
        assert_eq!(b2.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["1", "3"]);
        assert!(filter_by_level(&split, C1).is_empty());

        let empty = split_stats(&[]);
        assert_eq!(empty.total, 0);
        assert!(empty.counts.values().all(|c| *c == 0));
        assert_eq!(empty.counts.len(), 6);
    }

    #[test]
    fn test_split_warning() {
        let split = CorpusSplit {
            test: vec![sentence("x", C1), sentence("y", A1)],
            ..Default::default()
        };
        let w = split.test_level_warnings();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("\"y\""));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(CorpusFormat::from_path(Path::new("a/b.TSV")), CorpusFormat::Tsv);
        assert_eq!(CorpusFormat::from_path(Path::new("a/b.jsonl")), CorpusFormat::Jsonl);
    }
}
