//! Simulate a scaled run, fix the stopping rule, and test it.
//!
//! `cargo run --release --example end_to_end -- [SEED]`

use belltest::hypothesis::{accumulate_until_stop, ch_pvalue, StoppingRule};
use belltest::simulator::{simulate_run, ExperimentConfig, SlotWindow};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = ExperimentConfig::published(20_000_000, seed);
    let rule = StoppingRule::new(250).unwrap();
    let window = SlotWindow::single(6, config.n_slots).unwrap();

    let records = simulate_run(&config).unwrap().map(|r| r.unwrap());
    let acc = accumulate_until_stop(records, rule, window);
    let report = ch_pvalue(&acc.counts, &rule, 0.0).unwrap();
    print!("{}", report.to_key_value());
    println!(
        "success ratio {:.4}",
        acc.counts.n_pp_ab as f64 / acc.counts.events().max(1) as f64
    );
}
