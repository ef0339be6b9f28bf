use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dump::{WireDist, FORMAT_VERSION};
use crate::diag::{BankContext, ContextBank, ContextLabel, RunMeta};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct WireContext {
    prompt_id: String,
    context_id: String,
    position: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<u64>,
    teacher: WireDist,
}

#[derive(Serialize, Deserialize)]
struct WireBank {
    format_version: u32,
    vocab_size: u32,
    contexts: Vec<WireContext>,
    checkpoints: BTreeMap<String, Vec<WireDist>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<ContextLabel>>,
    #[serde(default)]
    runs: BTreeMap<String, RunMeta>,
}

fn to_wire(bank: &ContextBank) -> WireBank {
    let vocab_size = bank.contexts().first().map_or(0, |c| c.teacher.vocab_size());
    WireBank {
        format_version: FORMAT_VERSION,
        vocab_size,
        contexts: bank
            .contexts()
            .iter()
            .map(|c| WireContext {
                prompt_id: c.prompt_id.clone(),
                context_id: c.context_id.clone(),
                position: c.position,
                state: c.state,
                teacher: WireDist::from_dist(&c.teacher, false),
            })
            .collect(),
        checkpoints: bank
            .checkpoints()
            .iter()
            .map(|(id, snap)| {
                (id.clone(), snap.iter().map(|d| WireDist::from_dist(d, false)).collect())
            })
            .collect(),
        labels: bank.labels().map(<[_]>::to_vec),
        runs: bank.runs().clone(),
    }
}

fn from_wire(w: WireBank) -> Result<ContextBank> {
    if w.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported bank format version {}",
            w.format_version
        )));
    }
    let v = w.vocab_size;
    let contexts = w
        .contexts
        .into_iter()
        .map(|c| {
            Ok(BankContext {
                prompt_id: c.prompt_id,
                context_id: c.context_id,
                position: c.position,
                state: c.state,
                teacher: c.teacher.into_dist(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bank = ContextBank::new(contexts);
    for (id, snap) in w.checkpoints {
        let dists = snap
            .into_iter()
            .map(|d| d.into_dist(v))
            .collect::<Result<Vec<_>>>()?;
        bank.add_checkpoint(&id, dists)
            .map_err(|e| Error::Format(format!("checkpoint `{id}`: {e}")))?;
    }
    if let Some(labels) = w.labels {
        bank.set_labels(labels)?;
    }
    for (after, meta) in w.runs {
        bank.add_run(&after, meta)?;
    }
    bank.validate()?;
    Ok(bank)
}

/// Checks that `new` only adds to `old`: same contexts and teachers, same
/// labels, and every existing checkpoint unchanged.
fn check_append_only(old: &ContextBank, new: &ContextBank) -> Result<()> {
    if old.contexts() != new.contexts() {
        return Err(Error::FrozenBank(
            "contexts or teacher distributions differ from the frozen bank".into(),
        ));
    }
    if old.labels().is_some() && old.labels() != new.labels() {
        return Err(Error::FrozenBank("labels differ from the frozen bank".into()));
    }
    for (id, snap) in old.checkpoints() {
        match new.checkpoints().get(id) {
            Some(s) if s == snap => {}
            Some(_) => return Err(Error::FrozenBank(format!("checkpoint `{id}` was modified"))),
            None => return Err(Error::FrozenBank(format!("checkpoint `{id}` was dropped"))),
        }
    }
    Ok(())
}

/// Writes `bank` to `path`. If `path` already holds a bank, the new snapshot
/// may only add checkpoints and runs. The file is replaced atomically.
pub fn snapshot_bank(bank: &ContextBank, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    bank.validate()?;
    if path.exists() {
        let old = load_bank(path)?;
        check_append_only(&old, bank)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        serde_json::to_writer(&mut w, &to_wire(bank))?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<ContextBank> {
    let wire: WireBank = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    from_wire(wire)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::bank_gains;
    use crate::dist::SparseTokenDist;

    fn bank(n: usize) -> ContextBank {
        let d = |a: f64| SparseTokenDist::from_probs(&[(0, a), (1, 1.0 - a)], Some(0.0), 3).unwrap();
        let contexts = (0..n)
            .map(|i| BankContext {
                prompt_id: format!("p{}", i / 3),
                context_id: format!("c{}", i / 3),
                position: (i % 3) as u32,
                state: None,
                teacher: d(0.1 + 0.8 * i as f64 / n as f64),
            })
            .collect();
        let mut b = ContextBank::new(contexts);
        b.add_checkpoint("init", (0..n).map(|i| d(0.3 + 0.01 * (i % 7) as f64)).collect())
            .unwrap();
        b.add_checkpoint("after", (0..n).map(|i| d(0.2 + 0.7 * i as f64 / n as f64)).collect())
            .unwrap();
        b
    }

    #[test]
    fn round_trip_preserves_gains() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let b = bank(300);
        snapshot_bank(&b, &path).unwrap();
        let back = load_bank(&path).unwrap();
        assert_eq!(back, b);
        let g0 = bank_gains(&b, "init", "after").unwrap();
        let g1 = bank_gains(&back, "init", "after").unwrap();
        for (x, y) in g0.iter().zip(&g1) {
            assert!((x.g_fix - y.g_fix).abs() <= 1e-12);
        }
    }

    #[test]
    fn frozen_contents_cannot_change() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let b = bank(6);
        snapshot_bank(&b, &path).unwrap();

        let mut grown = b.clone();
        let extra = b.checkpoint("after").unwrap().to_vec();
        grown.add_checkpoint("later", extra).unwrap();
        snapshot_bank(&grown, &path).unwrap();

        // Dropping a checkpoint or swapping the teacher is refused.
        assert!(matches!(snapshot_bank(&b, &path), Err(Error::FrozenBank(_))));
        let other = bank(7);
        assert!(matches!(snapshot_bank(&other, &path), Err(Error::FrozenBank(_))));
        assert_eq!(load_bank(&path).unwrap(), grown);
    }
}
