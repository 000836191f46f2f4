//! Optimal state and angles for the published detector parameters, and the
//! critical efficiency below which no violation is possible.
//!
//! `cargo run --release --example design_optimizer`

use belltest::design::{critical_efficiency, optimize_design, DesignProblem, Objective};

fn main() {
    let published = DesignProblem::published();
    let s = optimize_design(&published).unwrap();
    print!("{}", s.to_key_value());

    let ch = optimize_design(&published.with_objective(Objective::MaxChValue)).unwrap();
    println!("largest B instead: theta={:.2} B/p_pair={:.4e}", ch.theta_deg, ch.ch_value);

    for (name, problem) in [("ideal", DesignProblem::ideal()), ("published", published)] {
        println!("critical efficiency ({name}): {:.4}", critical_efficiency(&problem).unwrap());
    }
}
