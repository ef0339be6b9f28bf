//! Writes a logprob dump, streams it back, scores it to CSV, and snapshots a
//! context bank, all under a temporary directory.
//!
//! ```text
//! cargo run --release --example dump_roundtrip
//! ```

use teachable::diag::{BankContext, ContextBank, INITIAL_CHECKPOINT};
use teachable::io::{load_bank, read_dump, read_scores_file, snapshot_bank, write_dump_file, write_scores_file, DumpHeader};
use teachable::teach::{compute_stats_batch, normalize_batch, NormalizationConfig};
use teachable::toy::{simulate_records, SimulationConfig};

fn main() -> teachable::Result<()> {
    let dir = std::env::temp_dir().join("teachable_dump_roundtrip");
    std::fs::create_dir_all(&dir)?;

    let cfg = SimulationConfig::default();
    let design = cfg.design(5)?;
    let (teacher, _) = design.build()?;
    let records = simulate_records(&design.base, &teacher, 100, 32, 5, Some(8))?;

    let dump = dir.join("rollouts.jsonl");
    write_dump_file(&dump, &DumpHeader::new(cfg.vocab as u32, 8, "toy"), &records)?;
    let reader = read_dump(&dump)?;
    println!("header: {:?}", reader.header());
    let mut n = 0;
    for r in reader {
        r?;
        n += 1;
    }
    println!("streamed {n} records from {}", dump.display());

    let stats = compute_stats_batch(&records, 4)?;
    let norm = normalize_batch(&stats, &NormalizationConfig::default());
    let scores = dir.join("scores.csv");
    write_scores_file(&scores, &records, &stats, &norm, &[])?;
    let table = read_scores_file(&scores)?;
    let worst = table
        .rows
        .iter()
        .zip(&stats)
        .map(|(row, s)| (row.d - s.d).abs())
        .fold(0.0, f64::max);
    println!("{} score columns, max |D| round-trip error {worst:.1e}", table.header.len());

    let contexts: Vec<BankContext> = records
        .iter()
        .map(|r| BankContext {
            prompt_id: r.prompt_id.clone(),
            context_id: r.context_id.clone(),
            position: r.position,
            state: None,
            teacher: r.teacher.clone(),
        })
        .collect();
    let mut bank = ContextBank::new(contexts);
    bank.add_checkpoint(INITIAL_CHECKPOINT, records.iter().map(|r| r.student.clone()).collect())?;
    let path = dir.join("bank.json");
    let _ = std::fs::remove_file(&path);
    snapshot_bank(&bank, &path)?;
    let back = load_bank(&path)?;
    println!("bank with {} contexts reloaded intact: {}", back.len(), back == bank);

    // A frozen bank refuses a different teacher.
    let mut other = ContextBank::new(vec![bank.contexts()[0].clone()]);
    other.add_checkpoint(INITIAL_CHECKPOINT, vec![records[0].student.clone()])?;
    match snapshot_bank(&other, &path) {
        Err(e) => println!("overwrite refused: {e}"),
        Ok(()) => println!("unexpected: overwrite accepted"),
    }
    Ok(())
}
