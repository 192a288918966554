use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{CandidateRecord, Corpus, Split, ThreadRecord};
use crate::error::{Error, Result};

const RELEVANT_LABEL: &str = "Good";

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Subject,
    Body,
    Comment,
}

fn attr(e: &BytesStart<'_>, name: &str) -> Result<Option<String>> {
    match e.try_get_attribute(name) {
        Ok(Some(a)) => a
            .unescape_value()
            .map(|v| Some(v.into_owned()))
            .map_err(|err| Error::Import(err.to_string())),
        Ok(None) => Ok(None),
        Err(err) => Err(Error::Import(err.to_string())),
    }
}

struct Pending {
    subject: String,
    body: String,
    comments: Vec<CandidateRecord>,
}

/// Reads SemEval Task 3 subtask C XML: one thread per original question whose
/// candidates are the comments of all its related threads. Only the "Good"
/// relevance-to-original label counts as relevant.
pub fn parse_semeval_xml(input: impl BufRead, split: Split) -> Result<Corpus> {
    let mut reader = Reader::from_reader(input);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();

    let mut order: Vec<String> = Vec::new();
    let mut questions: HashMap<String, Pending> = HashMap::new();
    let mut current: Option<String> = None;
    let mut field: Option<Field> = None;
    let mut text = String::new();
    let mut fresh = false;

    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| Error::Import(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let empty = matches!(event, Event::Empty(_));
                match e.name().as_ref() {
                    b"OrgQuestion" => {
                        let id = attr(e, "ORGQ_ID")?
                            .ok_or_else(|| Error::Import("OrgQuestion without ORGQ_ID".into()))?;
                        fresh = !questions.contains_key(&id);
                        if fresh {
                            order.push(id.clone());
                            questions.insert(
                                id.clone(),
                                Pending {
                                    subject: String::new(),
                                    body: String::new(),
                                    comments: Vec::new(),
                                },
                            );
                        }
                        current = Some(id);
                    }
                    b"OrgQSubject" if fresh && !empty => field = Some(Field::Subject),
                    b"OrgQBody" if fresh && !empty => field = Some(Field::Body),
                    b"RelComment" => {
                        let id = attr(e, "RELC_ID")?
                            .ok_or_else(|| Error::Import("RelComment without RELC_ID".into()))?;
                        let label = attr(e, "RELC_RELEVANCE2ORGQ")?.ok_or_else(|| {
                            Error::Import(format!("comment `{id}` lacks RELC_RELEVANCE2ORGQ"))
                        })?;
                        let q = current
                            .as_ref()
                            .and_then(|c| questions.get_mut(c))
                            .ok_or_else(|| Error::Import(format!("comment `{id}` outside an OrgQuestion")))?;
                        q.comments.push(CandidateRecord {
                            answer_id: id,
                            text: String::new(),
                            relevant: label == RELEVANT_LABEL,
                        });
                    }
                    b"RelCText" if !empty => field = Some(Field::Comment),
                    _ => {}
                }
                text.clear();
            }
            Event::Text(t) => {
                if field.is_some() {
                    text.push_str(&t.unescape().map_err(|e| Error::Import(e.to_string()))?);
                }
            }
            Event::CData(t) => {
                if field.is_some() {
                    text.push_str(&String::from_utf8_lossy(&t.into_inner()));
                }
            }
            Event::End(_) => {
                if let (Some(f), Some(q)) = (field.take(), current.as_ref().and_then(|c| questions.get_mut(c))) {
                    let slot = match f {
                        Field::Subject => &mut q.subject,
                        Field::Body => &mut q.body,
                        Field::Comment => match q.comments.last_mut() {
                            Some(c) => &mut c.text,
                            None => continue,
                        },
                    };
                    slot.push_str(&text);
                }
                text.clear();
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    let records = order
        .into_iter()
        .map(|id| {
            let q = questions.remove(&id).expect("recorded question");
            ThreadRecord {
                thread_id: id,
                question: format!("{} {}", q.subject, q.body).trim().to_string(),
                candidates: q.comments,
                split,
            }
        })
        .collect();
    Corpus::from_records(records)
}

pub fn import_semeval_xml(path: impl AsRef<Path>, split: Split) -> Result<Corpus> {
    let corpus = parse_semeval_xml(BufReader::new(File::open(path)?), split)?;
    corpus.validate()?;
    Ok(corpus)
}
