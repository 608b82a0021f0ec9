//! Runs the numerical self-checks and one that is meant to fail: the Jacobian
//! check with the rate gains' sign flipped in the linearization.

use lolnmpc::selftest::Selftest;

fn main() {
    for check in Selftest::default().run() {
        println!("{check}");
    }
    let corrupted = Selftest { jacobian_gain_sign: -1.0, ..Selftest::default() };
    println!("corrupted gains: {}", corrupted.jacobian());
}
