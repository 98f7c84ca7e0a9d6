//! JSON-lines dataset records for design-policy training.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::codec::{format_instruction, serialize_design};
use super::types::{CandidateTextSet, Design};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignExample {
    pub product_id: usize,
    pub candidates: CandidateTextSet,
    pub design: Design,
}

impl DesignExample {
    pub fn validate(&self) -> Result<()> {
        self.design.validate(Some(self.candidates.len()))
    }

    /// `(instruction ids, design ids)` for teacher forcing.
    pub fn token_ids(&self) -> Result<(Vec<u32>, Vec<u32>)> {
        Ok((format_instruction(&self.candidates)?.ids(), serialize_design(&self.design)?.ids()))
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_schema() {
        let line = r#"{"product_id":3,"candidates":["SALE","HOT"],"design":{"background":[1,2],"selected":[1],"layout":[["product",0.0,0.0,0.5,0.5],["text",0.0,0.6,1.0,0.8]]}}"#;
        let ex: DesignExample = serde_json::from_str(line).unwrap();
        ex.validate().unwrap();
        assert_eq!(ex.design.selected, vec![1]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&path, &[ex.clone(), ex.clone()]).unwrap();
        let back: Vec<DesignExample> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![ex.clone(), ex]);
    }
}
