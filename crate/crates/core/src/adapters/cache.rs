use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::scm::HypothesisKind;

/// Append-only JSON-lines file. A line that fails to parse makes the whole
/// log unusable (`IncompleteCache`); nothing is ever rewritten in place.
#[derive(Debug)]
pub struct JsonlLog<T> {
    path: Option<PathBuf>,
    file: Option<File>,
    records: Vec<T>,
    _marker: PhantomData<T>,
}

impl<T: Serialize + DeserializeOwned> JsonlLog<T> {
    pub fn in_memory() -> Self {
        JsonlLog {
            path: None,
            file: None,
            records: Vec::new(),
            _marker: PhantomData,
        }
    }

    /// Opens (creating if needed) and fully parses the log at `path`.
    pub fn open(path: &Path) -> Result<Self, AdapterError> {
        let io = |source| AdapterError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let records = read_jsonl(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        Ok(JsonlLog {
            path: Some(path.to_path_buf()),
            file: Some(file),
            records,
            _marker: PhantomData,
        })
    }

    pub fn records(&self) -> &[T] {
        &self.records
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, record: T) -> Result<(), AdapterError> {
        if let Some(f) = self.file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|source| AdapterError::Io {
                    path: self
                        .path
                        .as_ref()
                        .map(|p| p.display().to_string())
                        .unwrap_or_default(),
                    source,
                })?;
        }
        self.records.push(record);
        Ok(())
    }
}

/// Reads every line of a JSONL file; a missing file reads as empty.
pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AdapterError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(AdapterError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| AdapterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| AdapterError::IncompleteCache {
            message: format!("{}:{}: {e}", path.display(), i + 1),
            missing: Vec::new(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ScoreLine {
    pub model_id: String,
    pub case_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct NliLine {
    pub case_id: String,
    pub kind: HypothesisKind,
    pub logits: [f64; 3],
}

/// Classifier scores (`scores.jsonl`) and NLI logits (`nli.jsonl`).
///
/// Keys are `(model_id, case_id)` and `(case_id, kind)`; the first record for a
/// key wins and re-inserting it is a no-op.
#[derive(Debug)]
pub struct ScoreCache {
    scores: JsonlLog<ScoreLine>,
    nli: JsonlLog<NliLine>,
    score_index: HashMap<(String, String), f64>,
    nli_index: HashMap<(String, HypothesisKind), [f64; 3]>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        ScoreCache {
            scores: JsonlLog::in_memory(),
            nli: JsonlLog::in_memory(),
            score_index: HashMap::new(),
            nli_index: HashMap::new(),
        }
    }

    pub fn open(dir: &Path) -> Result<Self, AdapterError> {
        let scores = JsonlLog::<ScoreLine>::open(&dir.join("scores.jsonl"))?;
        let nli = JsonlLog::<NliLine>::open(&dir.join("nli.jsonl"))?;
        let mut score_index = HashMap::new();
        for r in scores.records() {
            score_index
                .entry((r.model_id.clone(), r.case_id.clone()))
                .or_insert(r.score);
        }
        let mut nli_index = HashMap::new();
        for r in nli.records() {
            nli_index
                .entry((r.case_id.clone(), r.kind))
                .or_insert(r.logits);
        }
        Ok(ScoreCache {
            scores,
            nli,
            score_index,
            nli_index,
        })
    }

    pub fn score(&self, model_id: &str, case_id: &str) -> Option<f64> {
        self.score_index
            .get(&(model_id.to_string(), case_id.to_string()))
            .copied()
    }

    pub fn insert_score(&mut self, model_id: &str, case_id: &str, score: f64) -> Result<(), AdapterError> {
        let key = (model_id.to_string(), case_id.to_string());
        if self.score_index.contains_key(&key) {
            return Ok(());
        }
        self.scores.append(ScoreLine {
            model_id: key.0.clone(),
            case_id: key.1.clone(),
            score,
        })?;
        self.score_index.insert(key, score);
        Ok(())
    }

    pub fn logits(&self, case_id: &str, kind: HypothesisKind) -> Option<[f64; 3]> {
        self.nli_index.get(&(case_id.to_string(), kind)).copied()
    }

    pub fn insert_logits(
        &mut self,
        case_id: &str,
        kind: HypothesisKind,
        logits: [f64; 3],
    ) -> Result<(), AdapterError> {
        let key = (case_id.to_string(), kind);
        if self.nli_index.contains_key(&key) {
            return Ok(());
        }
        self.nli.append(NliLine {
            case_id: key.0.clone(),
            kind,
            logits,
        })?;
        self.nli_index.insert(key, logits);
        Ok(())
    }

    pub fn score_count(&self) -> usize {
        self.score_index.len()
    }

    pub fn nli_count(&self) -> usize {
        self.nli_index.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reinsert_is_noop_and_readback_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut c = ScoreCache::open(dir.path()).unwrap();
            c.insert_score("m", "1", 0.1 + 0.2).unwrap();
            c.insert_score("m", "1", 0.9).unwrap();
            c.insert_score("m", "2", 1.0).unwrap();
            c.insert_logits("1", HypothesisKind::WarmthPos, [2.0, -1.0, 0.5])
                .unwrap();
            assert_eq!(c.score("m", "1"), Some(0.1 + 0.2));
        }
        let before = fs::read(dir.path().join("scores.jsonl")).unwrap();
        let c = ScoreCache::open(dir.path()).unwrap();
        assert_eq!(c.score_count(), 2);
        assert_eq!(c.score("m", "1"), Some(0.1 + 0.2));
        assert_eq!(c.logits("1", HypothesisKind::WarmthPos), Some([2.0, -1.0, 0.5]));

        let rewritten: String = c
            .scores
            .records()
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        assert_eq!(rewritten.as_bytes(), &before[..]);
        let nli = fs::read_to_string(dir.path().join("nli.jsonl")).unwrap();
        assert_eq!(
            nli,
            "{\"case_id\":\"1\",\"kind\":\"warmth_pos\",\"logits\":[2.0,-1.0,0.5]}\n"
        );
    }

    #[test]
    fn corrupt_line_is_incomplete_cache() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("scores.jsonl"),
            "{\"model_id\":\"m\",\"case_id\":\"1\",\"score\":0.5}\n{\"model_id\":\"m\",\"ca",
        )
        .unwrap();
        match ScoreCache::open(dir.path()) {
            Err(AdapterError::IncompleteCache { message, .. }) => {
                assert!(message.contains("scores.jsonl:2"), "{message}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
