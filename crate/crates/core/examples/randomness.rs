//! Setting-source bias: the piling-up lemma for XOR-ed sources, the
//! resulting predictability bound, and the cumulative-XOR transform.
//!
//! `cargo run --example randomness`

use belltest::randomness::{
    estimate_bias, piling_up_bias, predictability_from_bias, xor_accumulate, xor_deaccumulate, BitSource,
};

fn main() {
    let single = 1.08e-4;
    println!("single source bias {single:e}");
    for k in 1..=3 {
        println!("  XOR of {k}: bias {:e}", piling_up_bias(&vec![single; k]));
    }
    let bound = predictability_from_bias(single).unwrap();
    println!("excess predictability epsilon = {:e} (guess probability {:.6})", bound.epsilon, bound.guess_probability());

    let mut source = BitSource::bernoulli(0.01, 7, false);
    let bits: Vec<bool> = (0..1_000_000).map(|_| source.next_bit().unwrap()).collect();
    let est = estimate_bias(&bits).unwrap();
    println!("estimated bias of a 0.01-biased source: {:.5} +- {:.5}", est.bias, est.std_error);

    let acc: Vec<bool> = xor_accumulate(bits.iter().copied()).collect();
    assert_eq!(xor_deaccumulate(&acc), bits);
    println!("cumulative XOR round trip ok; bias after accumulation {:.5}", estimate_bias(&acc).unwrap().bias);
}
