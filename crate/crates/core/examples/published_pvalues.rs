//! p-values for the published counts, with and without excess
//! predictability.
//!
//! `cargo run --example published_pvalues`

use belltest::hypothesis::{ch_pvalue, CategoryCounts, StoppingRule};

fn main() {
    let rows = [(1, 1257, 2376), (3, 3800, 7211), (5, 6378, 12127), (7, 8820, 16979)];
    println!("width  k      n_stop  p(eps=0)    p(eps=3e-3)  sigma");
    for (width, k, n) in rows {
        let counts = CategoryCounts {
            n_pp_ab: k,
            n_p0_ab_prime: n - k,
            ..Default::default()
        };
        let rule = StoppingRule::new(n).unwrap();
        let p0 = ch_pvalue(&counts, &rule, 0.0).unwrap();
        let p3 = ch_pvalue(&counts, &rule, 3e-3).unwrap();
        println!(
            "{width:>5}  {k:<5}  {n:<6}  {:<10.3e}  {:<11.3e}  {:.2}",
            p0.p_value, p3.p_value, p0.sigma_equivalent
        );
    }
}
