//! Simulates trials of the published configuration and writes them in both
//! record formats.
//!
//! `cargo run --example simulate_trials -- [N_TRIALS]`

use std::io::Cursor;

use belltest::records::{RecordFormat, RecordReader, RecordWriter};
use belltest::simulator::{simulate_run, ExperimentConfig, TrialRecord};

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1_000_000);
    let config = ExperimentConfig::published(n, 2024);
    let records: Vec<TrialRecord> = simulate_run(&config)
        .expect("valid config")
        .collect::<Result<_, _>>()
        .expect("sources do not run dry");

    let mut plus = [[0u64; 2]; 16];
    for r in &records {
        for slot in 1..=config.n_slots {
            plus[slot - 1][0] += r.outcomes_a.is_plus(slot) as u64;
            plus[slot - 1][1] += r.outcomes_b.is_plus(slot) as u64;
        }
    }
    println!("{n} trials, {} slots", config.n_slots);
    println!("slot  singles_A  singles_B");
    for (i, [a, b]) in plus.iter().take(config.n_slots).enumerate() {
        println!("{:>4} {a:>10} {b:>10}", i + 1);
    }

    for format in [RecordFormat::Binary, RecordFormat::Text] {
        let mut w = RecordWriter::new(Vec::new(), format);
        for r in records.iter().take(1000) {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let back: Vec<TrialRecord> = RecordReader::new(Cursor::new(&bytes), format)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(back, records[..back.len()]);
        println!("{format:?}: {} bytes for {} records", bytes.len(), back.len());
    }
}
