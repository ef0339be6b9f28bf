use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::dump::round_sig;
use crate::error::{Error, Result};
use crate::teach::{NormalizedStats, SelectionMask, SelectorKind, TokenRecord, TokenStats};

/// Leading columns of every score table, in order. One `s_<selector>` column
/// per [`SelectorKind::SCORED`] entry follows, then one `keep_<selector>`
/// column per mask.
pub const BASE_COLUMNS: [&str; 13] = [
    "prompt_id",
    "context_id",
    "position",
    "valid",
    "H",
    "D",
    "C",
    "C_hat",
    "D_tilde",
    "C_tilde",
    "H_tilde",
    "D_learn",
    "D_incomp",
];

/// Decimal with 12 significant digits; exponent form outside [1e-4, 1e15).
pub fn format_real(x: f64) -> String {
    let r = round_sig(x);
    let a = r.abs();
    if r == 0.0 {
        "0".to_string()
    } else if !(1e-4..1e15).contains(&a) {
        format!("{r:e}")
    } else {
        r.to_string()
    }
}

pub fn score_header(mask_names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend(SelectorKind::SCORED.iter().map(|k| format!("s_{k}")));
    h.extend(mask_names.iter().map(|m| format!("keep_{m}")));
    h
}

fn bit(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes one row per token. `masks` add `keep_<selector>` columns.
pub fn write_scores<W: Write>(
    writer: W,
    records: &[TokenRecord],
    stats: &[TokenStats],
    norm: &[NormalizedStats],
    masks: &[SelectionMask],
) -> Result<()> {
    let n = records.len();
    let check = |what, found| {
        if found == n {
            Ok(())
        } else {
            Err(Error::Misaligned {
                what,
                expected: n,
                found,
            })
        }
    };
    check("stats", stats.len())?;
    check("normalized stats", norm.len())?;
    for m in masks {
        check("mask", m.keep.len())?;
    }
    let names: Vec<String> = masks.iter().map(|m| m.selector.to_string()).collect();
    let mut w = WriterBuilder::new().from_writer(writer);
    w.write_record(score_header(&names))?;
    let mut row: Vec<String> = Vec::new();
    for i in 0..n {
        let (r, s, z) = (&records[i], &stats[i], &norm[i]);
        row.clear();
        row.push(r.prompt_id.clone());
        row.push(r.context_id.clone());
        row.push(r.position.to_string());
        row.push(bit(r.valid).to_string());
        for x in [
            s.h_student, s.d, s.c, s.c_hat, z.d_tilde, z.c_tilde, z.h_tilde, z.d_learn, z.d_incomp,
        ] {
            row.push(format_real(x));
        }
        for k in SelectorKind::SCORED {
            row.push(format_real(k.plain_score(z).unwrap_or(0.0)));
        }
        for m in masks {
            row.push(bit(m.keep[i]).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores_file(
    path: impl AsRef<Path>,
    records: &[TokenRecord],
    stats: &[TokenStats],
    norm: &[NormalizedStats],
    masks: &[SelectionMask],
) -> Result<()> {
    write_scores(File::create(path)?, records, stats, norm, masks)
}

/// One parsed score-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub prompt_id: String,
    pub context_id: String,
    pub position: u32,
    pub valid: bool,
    pub h: f64,
    pub d: f64,
    pub c: f64,
    pub c_hat: f64,
    pub norm: NormalizedStats,
    /// One bit per mask column, in header order.
    pub keep: Vec<bool>,
}

/// A score table read back from CSV. The raw records are retained so new
/// mask columns can be appended without reformatting existing values.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub header: Vec<String>,
    pub mask_names: Vec<String>,
    pub rows: Vec<ScoreRow>,
    raw: Vec<StringRecord>,
}

impl ScoreTable {
    pub fn normalized(&self) -> Vec<NormalizedStats> {
        self.rows.iter().map(|r| r.norm).collect()
    }

    pub fn valid(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.valid).collect()
    }

    /// Writes the table unchanged plus a `keep_<name>` column.
    pub fn write_with_mask<W: Write>(&self, writer: W, name: &str, keep: &[bool]) -> Result<()> {
        if keep.len() != self.rows.len() {
            return Err(Error::Misaligned {
                what: "mask",
                expected: self.rows.len(),
                found: keep.len(),
            });
        }
        let col = format!("keep_{name}");
        if self.header.contains(&col) {
            return Err(Error::Format(format!("column `{col}` already present")));
        }
        let mut w = WriterBuilder::new().from_writer(writer);
        let mut header = self.header.clone();
        header.push(col);
        w.write_record(&header)?;
        for (rec, &k) in self.raw.iter().zip(keep) {
            let mut out = rec.clone();
            out.push_field(bit(k));
            w.write_record(&out)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a score table. Rows are rejected with their line number when a
/// field is missing or malformed.
pub fn read_scores<R: Read>(reader: R) -> Result<ScoreTable> {
    let mut rdr = ReaderBuilder::new().from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let idx: Vec<usize> = BASE_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mask_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("keep_").map(|m| (i, m.to_string())))
        .collect();

    let mut rows = Vec::new();
    let mut raw = Vec::new();
    for result in rdr.records() {
        let rec = result?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Validation { line, message };
        let field = |j: usize| rec.get(idx[j]).unwrap_or("");
        let real = |j: usize| -> Result<f64> {
            field(j)
                .parse::<f64>()
                .map_err(|_| bad(format!("column `{}`: `{}` is not a number", BASE_COLUMNS[j], field(j))))
        };
        let flag = |s: &str, name: &str| match s {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(bad(format!("column `{name}`: `{other}` is not a bit"))),
        };
        let position = field(2)
            .parse::<u32>()
            .map_err(|_| bad(format!("bad position `{}`", field(2))))?;
        let keep = mask_cols
            .iter()
            .map(|(i, m)| flag(rec.get(*i).unwrap_or(""), m))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ScoreRow {
            prompt_id: field(0).to_string(),
            context_id: field(1).to_string(),
            position,
            valid: flag(field(3), "valid")?,
            h: real(4)?,
            d: real(5)?,
            c: real(6)?,
            c_hat: real(7)?,
            norm: NormalizedStats::from_normalized(real(8)?, real(9)?, real(10)?),
            keep,
        });
        raw.push(rec);
    }
    Ok(ScoreTable {
        header,
        mask_names: mask_cols.into_iter().map(|(_, m)| m).collect(),
        rows,
        raw,
    })
}

pub fn read_scores_file(path: impl AsRef<Path>) -> Result<ScoreTable> {
    read_scores(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::SparseTokenDist;
    use crate::teach::{compute_stats_batch, normalize_batch, select, NormalizationConfig};

    fn records(n: usize) -> Vec<TokenRecord> {
        (0..n)
            .map(|i| {
                let a = 0.2 + 0.6 * (i as f64 / n as f64);
                let s = SparseTokenDist::from_probs(&[(0, a), (1, 1.0 - a)], Some(0.0), 3).unwrap();
                let t = SparseTokenDist::from_probs(&[(1, 0.5), (2, 0.5)], Some(0.0), 3).unwrap();
                TokenRecord {
                    prompt_id: format!("p{}", i / 10),
                    context_id: format!("c{}", i / 10),
                    position: (i % 10) as u32,
                    batch: 0,
                    sampled_token: 0,
                    student: s,
                    teacher: t,
                    valid: true,
                }
            })
            .collect()
    }

    fn table(n: usize, masks: bool) -> (Vec<TokenStats>, Vec<NormalizedStats>, Vec<u8>) {
        let recs = records(n);
        let stats = compute_stats_batch(&recs, 2).unwrap();
        let norm = normalize_batch(&stats, &NormalizationConfig::default());
        let valid = vec![true; n];
        let m: Vec<SelectionMask> = if masks {
            vec![select(&vec![0.0; n], &valid, 1.0, SelectorKind::Full, 0).unwrap()]
        } else {
            Vec::new()
        };
        let mut buf = Vec::new();
        write_scores(&mut buf, &recs, &stats, &norm, &m).unwrap();
        (stats, norm, buf)
    }

    #[test]
    fn no_masks_means_no_keep_columns() {
        let (_, _, buf) = table(3, false);
        let t = read_scores(&buf[..]).unwrap();
        assert!(t.mask_names.is_empty());
        assert_eq!(t.header.len(), BASE_COLUMNS.len() + SelectorKind::SCORED.len());
    }

    #[test]
    fn single_full_row() {
        let (_, _, buf) = table(1, true);
        let t = read_scores(&buf[..]).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].keep, vec![true]);
    }

    #[test]
    fn values_survive_to_1e9() {
        let (stats, norm, buf) = table(1000, false);
        let t = read_scores(&buf[..]).unwrap();
        for ((r, s), z) in t.rows.iter().zip(&stats).zip(&norm) {
            assert!((r.d - s.d).abs() <= 1e-9 * s.d.abs().max(1.0));
            assert!((r.c - s.c).abs() <= 1e-9);
            assert!((r.norm.d_learn - z.d_learn).abs() <= 1e-9);
        }
    }

    #[test]
    fn misaligned_inputs_are_refused() {
        let recs = records(2);
        let stats = compute_stats_batch(&recs, 2).unwrap();
        let norm = normalize_batch(&stats[..1], &NormalizationConfig::default());
        let err = write_scores(Vec::new(), &recs, &stats, &norm, &[]).unwrap_err();
        assert!(matches!(err, Error::Misaligned { .. }));
    }

    #[test]
    fn formatting() {
        assert_eq!(format_real(0.0), "0");
        assert_eq!(format_real(0.5), "0.5");
        assert_eq!(format_real(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_real(2.5e-7), "2.5e-7");
    }
}
