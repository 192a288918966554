use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Split};
use crate::error::{Error, Result};

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadRecord {
    pub thread_id: String,
    pub question: String,
    pub candidates: Vec<CandidateRecord>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub answer_id: String,
    pub text: String,
    pub relevant: bool,
}

/// Parses newline-delimited thread records; blank lines are skipped.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<ThreadRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = File::open(path)?;
    let corpus = Corpus::from_records(parse_jsonl(BufReader::new(file))?)?;
    corpus.validate()?;
    Ok(corpus)
}

pub fn write_jsonl(corpus: &Corpus, mut out: impl Write) -> Result<()> {
    for rec in corpus.to_records() {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(corpus, BufWriter::new(File::create(path)?))
}
