//! Line-delimited JSON run logs: one header line, then one line per
//! iteration, each flushed as soon as it is written.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::IterationRecord;

pub const LOG_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("run log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: {source}")]
    Open { path: String, source: io::Error },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    Framing { line: usize, msg: String },
    #[error("iteration {got} written after iteration {last}")]
    OutOfOrder { last: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: String,
    pub seed: u64,
    /// The fully resolved run configuration.
    pub config: serde_json::Value,
    /// Seed round (iteration 0).
    pub initial: IterationRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Iteration(IterationRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: LogHeader,
    pub records: Vec<IterationRecord>,
}

pub struct RunLogWriter<W: Write> {
    out: W,
    last: usize,
}

impl RunLogWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, RunLogError> {
        let file = File::create(path).map_err(|source| RunLogError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(BufWriter::new(file), header)
    }
}

impl<W: Write> RunLogWriter<W> {
    pub fn new(out: W, header: &LogHeader) -> Result<Self, RunLogError> {
        let mut w = Self {
            out,
            last: header.initial.iteration,
        };
        w.write_line(&Line::Header(header.clone()))?;
        Ok(w)
    }

    pub fn write_iteration(&mut self, record: &IterationRecord) -> Result<(), RunLogError> {
        if record.iteration <= self.last {
            return Err(RunLogError::OutOfOrder {
                last: self.last,
                got: record.iteration,
            });
        }
        self.write_line(&Line::Iteration(record.clone()))?;
        self.last = record.iteration;
        Ok(())
    }

    fn write_line(&mut self, line: &Line) -> Result<(), RunLogError> {
        serde_json::to_writer(&mut self.out, line).map_err(io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl RunLog {
    pub fn load(path: &Path) -> Result<Self, RunLogError> {
        let file = File::open(path).map_err(|source| RunLogError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(BufReader::new(file))
    }

    /// Parses a log. A final line cut off mid-write (no trailing newline and
    /// not valid JSON) is ignored; any other malformed line is an error.
    pub fn read(mut reader: impl BufRead) -> Result<Self, RunLogError> {
        let mut header: Option<LogHeader> = None;
        let mut records: Vec<IterationRecord> = Vec::new();
        let mut buf = String::new();
        let mut n = 0;
        loop {
            buf.clear();
            if reader.read_line(&mut buf)? == 0 {
                break;
            }
            n += 1;
            let complete = buf.ends_with('\n');
            let text = buf.trim_end();
            if text.is_empty() && complete {
                continue;
            }
            let line: Line = match serde_json::from_str(text) {
                Ok(l) => l,
                Err(_) if !complete => {
                    log::warn!("ignoring truncated final line {n} of run log");
                    break;
                }
                Err(source) => return Err(RunLogError::Parse { line: n, source }),
            };
            match (line, &header) {
                (Line::Header(h), None) => header = Some(h),
                (Line::Header(_), Some(_)) => {
                    return Err(RunLogError::Framing {
                        line: n,
                        msg: "second header".into(),
                    })
                }
                (Line::Iteration(_), None) => {
                    return Err(RunLogError::Framing {
                        line: n,
                        msg: "iteration before header".into(),
                    })
                }
                (Line::Iteration(r), Some(h)) => {
                    let last = records.last().map_or(h.initial.iteration, |p| p.iteration);
                    if r.iteration <= last {
                        return Err(RunLogError::Framing {
                            line: n,
                            msg: format!("iteration {} follows {last}", r.iteration),
                        });
                    }
                    records.push(r);
                }
            }
        }
        let header = header.ok_or(RunLogError::Framing {
            line: n,
            msg: "no header".into(),
        })?;
        Ok(Self { header, records })
    }

    /// Seed round followed by every iteration.
    pub fn all_records(&self) -> impl Iterator<Item = &IterationRecord> {
        std::iter::once(&self.header.initial).chain(&self.records)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::optimizer::CandidateRecord;

    pub(crate) fn record(iteration: usize, best: f64, so_far: f64) -> IterationRecord {
        IterationRecord {
            iteration,
            meta_prompt_hash: format!("{iteration:016x}"),
            candidates: vec![CandidateRecord {
                text: format!("p{iteration}"),
                fitness: best,
                duplicate: false,
            }],
            dropped: vec![],
            best_candidate: Some(best),
            best_so_far: so_far,
            ensemble_fitness: Some(so_far),
            guidance: None,
        }
    }

    pub(crate) fn header(initial: IterationRecord) -> LogHeader {
        LogHeader {
            version: LOG_VERSION.into(),
            seed: 3,
            config: serde_json::json!({"alpha": 1.0}),
            initial,
        }
    }

    fn write_log(records: &[IterationRecord]) -> Vec<u8> {
        let mut w = RunLogWriter::new(Vec::new(), &header(record(0, 0.2, 0.2))).unwrap();
        for r in records {
            w.write_iteration(r).unwrap();
        }
        w.into_inner()
    }

    #[test]
    fn round_trip() {
        let recs = vec![record(1, 0.5, 0.5), record(2, 0.4, 0.5)];
        let bytes = write_log(&recs);
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 3);
        let log = RunLog::read(&bytes[..]).unwrap();
        assert_eq!(log.records, recs);
        assert_eq!(log.header, header(record(0, 0.2, 0.2)));
        let curve: Vec<f64> = log.all_records().map(|r| r.best_so_far).collect();
        assert_eq!(curve, [0.2, 0.5, 0.5]);
    }

    #[test]
    fn truncated_final_line_ignored() {
        let mut bytes = write_log(&[record(1, 0.5, 0.5)]);
        let full = bytes.clone();
        let tail = serde_json::to_vec(&Line::Iteration(record(2, 0.6, 0.6))).unwrap();
        bytes.extend_from_slice(&tail[..tail.len() / 2]);
        let log = RunLog::read(&bytes[..]).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log, RunLog::read(&full[..]).unwrap());

        // a complete final record without its newline still counts
        let mut bytes = full.clone();
        bytes.extend_from_slice(&tail);
        assert_eq!(RunLog::read(&bytes[..]).unwrap().records.len(), 2);
    }

    #[test]
    fn malformed_interior_line_rejected() {
        let mut bytes = write_log(&[]);
        bytes.extend_from_slice(b"{not json\n");
        assert!(matches!(
            RunLog::read(&bytes[..]),
            Err(RunLogError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            RunLog::read(&b""[..]),
            Err(RunLogError::Framing { .. })
        ));
    }

    #[test]
    fn iterations_strictly_increase() {
        let mut w = RunLogWriter::new(Vec::new(), &header(record(0, 0.2, 0.2))).unwrap();
        w.write_iteration(&record(1, 0.3, 0.3)).unwrap();
        assert!(matches!(
            w.write_iteration(&record(1, 0.3, 0.3)),
            Err(RunLogError::OutOfOrder { last: 1, got: 1 })
        ));
        let mut bytes = write_log(&[record(1, 0.5, 0.5)]);
        bytes
            .extend_from_slice(&serde_json::to_vec(&Line::Iteration(record(1, 0.5, 0.5))).unwrap());
        bytes.push(b'\n');
        assert!(matches!(
            RunLog::read(&bytes[..]),
            Err(RunLogError::Framing { .. })
        ));
    }
}
