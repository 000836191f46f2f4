//! Outcome probabilities, the CH value and noise calibration for the
//! published state and angles.
//!
//! `cargo run --example quantum_model`

use belltest::quantum::{
    calibrate_noise, ch_terms, coincidence_visibility, slot_outcome_distribution, DetectionParams,
    EntangledStateModel, MeasurementSettings, VisibilityBasis,
};

fn main() {
    let noise = calibrate_noise(0.999, 0.996, &EntangledStateModel::maximally_entangled())
        .expect("feasible visibilities");
    println!(
        "noise fitted to V_HV=0.999, V_DA=0.996: dephasing={:.5} extinction={:.0}",
        noise.dephasing, noise.extinction
    );
    let state = EntangledStateModel::published_optimum().with_noise(noise.dephasing, noise.extinction);
    println!(
        "state: c1={:.4} c2={:.4} theta={:.2} deg, V_HV={:.4} V_DA={:.4}",
        state.c1,
        state.c2,
        state.mixing_angle_deg(),
        coincidence_visibility(&state, VisibilityBasis::HV),
        coincidence_visibility(&state, VisibilityBasis::DA)
    );

    let settings = MeasurementSettings::published_optimum();
    let det = DetectionParams::published();
    for (pa, pb) in [(false, false), (false, true), (true, false), (true, true)] {
        let d = slot_outcome_distribution(&state, settings.alice(pa), settings.bob(pb), &det);
        println!(
            "{}{}: P(++)={:.3e} P(+0)={:.3e} P(0+)={:.3e}",
            if pa { "a'" } else { "a " },
            if pb { "b'" } else { "b " },
            d.p_pp,
            d.p_p0,
            d.p_0p
        );
    }
    let t = ch_terms(&state, &settings, &det);
    println!(
        "B = {:.3e} per slot ({:.4} p_pair), success fraction {:.4}",
        t.value(),
        t.value() / det.p_pair,
        t.success_fraction()
    );
}
