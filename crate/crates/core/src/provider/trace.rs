//! Replay of logit pairs dumped offline from a real model.
//!
//! JSON Lines, UTF-8. Line 1 is the header
//! `{"format":"cdkit-trace","version":1,"vocab_size":N,"vocab":[...]}`; every
//! following non-blank line is one step `{"deep":[N reals],"shallow":[N reals]}`.
//! The logits were conditioned on one specific token path, so a trace can only
//! be consumed front to back.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::LogitVector;
use crate::provider::{PairedLogitProvider, ProviderCapability};
use crate::vocab::{DecodeContext, Vocabulary};

pub const TRACE_FORMAT: &str = "cdkit-trace";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    vocab_size: usize,
    vocab: Vocabulary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub deep: Vec<f64>,
    pub shallow: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub vocab: Vocabulary,
    pub steps: Vec<TraceStep>,
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceReplayProvider> {
    let file = std::fs::File::open(path)?;
    parse_trace(BufReader::new(file)).map(TraceReplayProvider::new)
}

/// Parses and fully validates a trace.
pub fn parse_trace(reader: impl BufRead) -> Result<TraceFile> {
    let mut header: Option<Header> = None;
    let mut steps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line)
                    .map_err(|e| Error::format(lineno, format!("bad trace header: {e}")))?;
                if h.format != TRACE_FORMAT || h.version != 1 {
                    return Err(Error::format(
                        lineno,
                        format!("unsupported trace format {:?} version {}", h.format, h.version),
                    ));
                }
                if h.vocab_size != h.vocab.len() {
                    return Err(Error::format(
                        lineno,
                        format!("vocab_size {} but {} vocab entries", h.vocab_size, h.vocab.len()),
                    ));
                }
                header = Some(h);
            }
            Some(h) => {
                let step: TraceStep = serde_json::from_str(&line)
                    .map_err(|e| Error::format(lineno, format!("malformed step: {e}")))?;
                for (name, v) in [("deep", &step.deep), ("shallow", &step.shallow)] {
                    if v.len() != h.vocab_size {
                        return Err(Error::format(
                            lineno,
                            format!("{name} has {} values, vocabulary size is {}", v.len(), h.vocab_size),
                        ));
                    }
                    if let Some(j) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::format(lineno, format!("{name}[{j}] is not finite")));
                    }
                }
                steps.push(step);
            }
        }
    }
    let header = header.ok_or(Error::EmptyTrace)?;
    if steps.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(TraceFile {
        vocab: header.vocab,
        steps,
    })
}

pub fn write_trace(trace: &TraceFile, mut out: impl Write) -> Result<()> {
    let header = Header {
        format: TRACE_FORMAT.into(),
        version: 1,
        vocab_size: trace.vocab.len(),
        vocab: trace.vocab.clone(),
    };
    let to_io = |e: serde_json::Error| Error::Io(e.into());
    serde_json::to_writer(&mut out, &header).map_err(to_io)?;
    out.write_all(b"\n")?;
    for step in &trace.steps {
        serde_json::to_writer(&mut out, step).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Linear cursor over a [`TraceFile`].
#[derive(Clone, Debug)]
pub struct TraceReplayProvider {
    trace: TraceFile,
    cursor: usize,
}

impl TraceReplayProvider {
    pub fn new(trace: TraceFile) -> Self {
        Self { trace, cursor: 0 }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.trace.vocab
    }

    pub fn steps_served(&self) -> usize {
        self.cursor
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }
}

impl PairedLogitProvider for TraceReplayProvider {
    fn capability(&self) -> ProviderCapability {
        ProviderCapability {
            branching: false,
            bounded_steps: Some(self.trace.steps.len()),
        }
    }

    fn vocab_size(&self) -> usize {
        self.trace.vocab.len()
    }

    fn next_logits(&mut self, prefix: &DecodeContext) -> Result<(LogitVector, LogitVector)> {
        if prefix.generated.len() != self.cursor {
            return Err(Error::Capability(format!(
                "trace replay is linear: expected a prefix of {} generated tokens, got {}",
                self.cursor,
                prefix.generated.len()
            )));
        }
        let step = self.trace.steps.get(self.cursor).ok_or(Error::TraceUnderrun {
            steps: self.trace.steps.len(),
        })?;
        let pair = (
            LogitVector::deep(step.deep.clone())?,
            LogitVector::shallow(step.shallow.clone())?,
        );
        self.cursor += 1;
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenId;

    const HEADER: &str = r#"{"format":"cdkit-trace","version":1,"vocab_size":3,"vocab":["a","b","c"]}"#;

    fn parse(s: &str) -> Result<TraceFile> {
        parse_trace(s.as_bytes())
    }

    #[test]
    fn two_step_file() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"deep":[1,2,3],"shallow":[0,0,0]}"#, r#"{"deep":[1.5,-2,3e-3],"shallow":[0,0.25,0]}"#
        );
        let p = TraceReplayProvider::new(parse(&text).unwrap());
        assert_eq!(p.capability().bounded_steps, Some(2));
        assert!(!p.capability().branching);
    }

    #[test]
    fn wrong_length_names_the_line() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"deep":[1,2,3],"shallow":[0,0,0]}"#, r#"{"deep":[1,2],"shallow":[0,0,0]}"#
        );
        match parse(&text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse("").unwrap_err().to_string(), "trace has no steps");
        assert_eq!(parse(HEADER).unwrap_err().to_string(), "trace has no steps");
    }

    #[test]
    fn malformed_and_mismatched_headers() {
        assert!(matches!(parse("not json"), Err(Error::Format { line: 1, .. })));
        let bad = r#"{"format":"cdkit-trace","version":1,"vocab_size":4,"vocab":["a","b","c"]}"#;
        assert!(matches!(parse(bad), Err(Error::Format { line: 1, .. })));
        let text = format!("{HEADER}\n{{\"deep\":[1,2,3]}}\n");
        assert!(matches!(parse(&text), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn linear_consumption_and_underrun() {
        let step = r#"{"deep":[1,2,3],"shallow":[0,0,0]}"#;
        let text = format!("{HEADER}\n{step}\n{step}\n{step}\n");
        let mut p = TraceReplayProvider::new(parse(&text).unwrap());
        let mut ctx = DecodeContext::default();
        for _ in 0..3 {
            p.next_logits(&ctx).unwrap();
            ctx.generated.push(TokenId(0));
        }
        assert!(matches!(p.next_logits(&ctx), Err(Error::TraceUnderrun { steps: 3 })));

        p.rewind();
        let branched = DecodeContext {
            prompt: vec![],
            generated: vec![TokenId(1)],
        };
        assert!(matches!(p.next_logits(&branched), Err(Error::Capability(_))));
    }

    #[test]
    fn write_then_parse() {
        let trace = TraceFile {
            vocab: Vocabulary::new(["x", "y"]).unwrap(),
            steps: vec![TraceStep {
                deep: vec![0.1 + 0.2, -1e-300],
                shallow: vec![std::f64::consts::PI, 7.0],
            }],
        };
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        assert_eq!(parse_trace(buf.as_slice()).unwrap(), trace);
    }
}
