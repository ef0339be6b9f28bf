use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{SparseTokenDist, TokenLogProb};
use crate::error::{Error, Result};
use crate::teach::TokenRecord;

pub const FORMAT_VERSION: u32 = 1;

/// First line of every dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format_version: u32,
    pub vocab_size: u32,
    /// Support size the producer used when truncating distributions.
    pub k: usize,
    pub producer: String,
    /// Whether teacher logprobs were scored on the student's top-K as well
    /// as on the teacher's own.
    pub has_teacher_on_student_support: bool,
}

impl DumpHeader {
    pub fn new(vocab_size: u32, k: usize, producer: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            vocab_size,
            k,
            producer: producer.to_string(),
            has_teacher_on_student_support: true,
        }
    }
}

/// Rounds to 12 significant decimal digits.
pub(crate) fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// A distribution as written on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct WireDist {
    pub ids: Vec<u32>,
    pub logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_mass: Option<f64>,
}

impl WireDist {
    pub fn from_dist(d: &SparseTokenDist, round: bool) -> Self {
        let r = |x: f64| if round { round_sig(x) } else { x };
        Self {
            ids: d.entries().iter().map(|e| e.token).collect(),
            logprobs: d.entries().iter().map(|e| r(e.logprob)).collect(),
            tail_mass: d.tail_mass().map(r),
        }
    }

    pub fn into_dist(self, vocab_size: u32) -> Result<SparseTokenDist> {
        if self.ids.len() != self.logprobs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} ids but {} logprobs",
                self.ids.len(),
                self.logprobs.len()
            )));
        }
        let entries = self
            .ids
            .into_iter()
            .zip(self.logprobs)
            .map(|(token, logprob)| TokenLogProb { token, logprob })
            .collect();
        SparseTokenDist::new(entries, self.tail_mass, vocab_size)
    }
}

fn default_valid() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WireRecord {
    prompt_id: String,
    context_id: String,
    position: u32,
    #[serde(default)]
    batch: u64,
    sampled_token: u32,
    #[serde(default = "default_valid")]
    valid: bool,
    student: WireDist,
    teacher: WireDist,
}

/// Writes a header line followed by one JSON object per record. Logprobs and
/// tail masses are rounded to 12 significant digits.
pub fn write_dump<'a, W, I>(writer: W, header: &DumpHeader, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TokenRecord>,
{
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        let wire = WireRecord {
            prompt_id: r.prompt_id.clone(),
            context_id: r.context_id.clone(),
            position: r.position,
            batch: r.batch,
            sampled_token: r.sampled_token,
            valid: r.valid,
            student: WireDist::from_dist(&r.student, true),
            teacher: WireDist::from_dist(&r.teacher, true),
        };
        serde_json::to_writer(&mut w, &wire)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dump_file<'a, I>(path: impl AsRef<Path>, header: &DumpHeader, records: I) -> Result<()>
where
    I: IntoIterator<Item = &'a TokenRecord>,
{
    write_dump(File::create(path)?, header, records)
}

/// Streaming dump reader. Yields one validated record per body line.
///
/// Duplicate `(context_id, position)` pairs are detected through a set of
/// 64-bit fingerprints, the only state that grows with the file.
pub struct DumpReader<R: BufRead> {
    lines: Lines<R>,
    line: usize,
    header: DumpHeader,
    seen: HashSet<u64>,
}

impl<R: BufRead> DumpReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| Error::Validation {
            line: 1,
            message: "missing header line".into(),
        })??;
        let header: DumpHeader = serde_json::from_str(&first).map_err(|e| Error::Validation {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Validation {
                line: 1,
                message: format!(
                    "unsupported format version {} (expected {FORMAT_VERSION})",
                    header.format_version
                ),
            });
        }
        if header.k == 0 || header.vocab_size == 0 {
            return Err(Error::Validation {
                line: 1,
                message: "header K and vocab_size must be positive".into(),
            });
        }
        Ok(Self {
            lines,
            line: 1,
            header,
            seen: HashSet::new(),
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    fn parse(&mut self, text: &str) -> Result<TokenRecord> {
        let line = self.line;
        let invalid = |message: String| Error::Validation { line, message };
        let w: WireRecord = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let vocab = self.header.vocab_size;
        let student = w.student.into_dist(vocab).map_err(|e| invalid(format!("student: {e}")))?;
        let teacher = w.teacher.into_dist(vocab).map_err(|e| invalid(format!("teacher: {e}")))?;
        if w.sampled_token >= vocab {
            return Err(invalid(format!("sampled token {} outside vocabulary", w.sampled_token)));
        }
        let mut h = DefaultHasher::new();
        (&w.prompt_id, &w.context_id, w.position).hash(&mut h);
        if !self.seen.insert(h.finish()) {
            return Err(invalid(format!(
                "duplicate position {} in context `{}`",
                w.position, w.context_id
            )));
        }
        Ok(TokenRecord {
            prompt_id: w.prompt_id,
            context_id: w.context_id,
            position: w.position,
            batch: w.batch,
            sampled_token: w.sampled_token,
            student,
            teacher,
            valid: w.valid,
        })
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<TokenRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<DumpReader<BufReader<File>>> {
    DumpReader::new(BufReader::new(File::open(path)?))
}

/// Reads a whole dump into memory, stopping at the first bad line.
pub fn read_dump_all(path: impl AsRef<Path>) -> Result<(DumpHeader, Vec<TokenRecord>)> {
    let reader = read_dump(path)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pos: u32) -> TokenRecord {
        let d = SparseTokenDist::from_probs(&[(0, 0.6), (2, 0.3)], Some(0.1), 4).unwrap();
        TokenRecord {
            prompt_id: "p".into(),
            context_id: "c".into(),
            position: pos,
            batch: 0,
            sampled_token: 2,
            student: d.clone(),
            teacher: d,
            valid: true,
        }
    }

    fn dump(records: &[TokenRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dump(&mut buf, &DumpHeader::new(4, 2, "test"), records).unwrap();
        buf
    }

    #[test]
    fn empty_body_is_fine() {
        let buf = dump(&[]);
        let r = DumpReader::new(&buf[..]).unwrap();
        assert_eq!(r.count(), 0);
    }

    #[test]
    fn round_trip() {
        let recs = vec![rec(0), rec(1)];
        let buf = dump(&recs);
        let back: Vec<_> = DumpReader::new(&buf[..]).unwrap().map(Result::unwrap).collect();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].position, 1);
        let lp = back[0].student.logprob(0).unwrap();
        assert!((lp - 0.6f64.ln()).abs() < 1e-11);
        // A second pass is bit-identical.
        assert_eq!(dump(&back), buf);
    }

    #[test]
    fn bad_mass_names_the_line() {
        let mut buf = dump(&[rec(0)]);
        buf.extend_from_slice(
            br#"{"prompt_id":"p","context_id":"c","position":1,"sampled_token":0,"student":{"ids":[0,1],"logprobs":[-0.1,-0.5],"tail_mass":0.0},"teacher":{"ids":[0],"logprobs":[0.0],"tail_mass":0.0}}"#,
        );
        let results: Vec<_> = DumpReader::new(&buf[..]).unwrap().collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(Error::Validation { line, .. }) => assert_eq!(*line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicates_and_versions_are_rejected() {
        let buf = dump(&[rec(0), rec(0)]);
        let results: Vec<_> = DumpReader::new(&buf[..]).unwrap().collect();
        assert!(matches!(results[1], Err(Error::Validation { line: 3, .. })));

        let mut h = DumpHeader::new(4, 2, "x");
        h.format_version = 2;
        let mut buf = serde_json::to_vec(&h).unwrap();
        buf.push(b'\n');
        assert!(DumpReader::new(&buf[..]).is_err());
    }
}
