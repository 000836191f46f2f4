//! Locality margins and boundary regions for the calibrated layout.
//!
//! `cargo run --example spacetime_audit`

use belltest::spacetime::{
    boundary_regions, locality_margins, slot_margins, ExperimentGeometry, Site, TrialChronology, WEAK_BOUNDARY_M,
};

fn main() {
    let g = ExperimentGeometry::calibrated();
    let ch = TrialChronology::calibrated();
    println!("|SA|={:.1} m |SB|={:.1} m |AB|={:.1} m", g.distance(Site::S, Site::A), g.distance(Site::S, Site::B), g.distance(Site::A, Site::B));

    println!("width  min_margin_ns  limiting   boundary_m");
    for w in [1, 3, 5, 7, 9] {
        let m = locality_margins(&g, &ch, w).unwrap();
        let d = boundary_regions(&g, &ch, w, 1.0).unwrap().min_distance();
        let weak = if d < WEAK_BOUNDARY_M { " (weak)" } else { "" };
        println!("{w:>5}  {:>13.2}  {:<9}  {d:.2}{weak}", m.minimum, m.limiting.to_string());
    }

    println!("per-slot minimum margins:");
    for (i, m) in slot_margins(&g, &ch, 15, 6).unwrap().iter().enumerate() {
        println!("  slot {:>2}: {:>7.2} ns  separated={}", i + 1, m.minimum, m.all_positive());
    }
}
