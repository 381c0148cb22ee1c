//! Verify the hand-written gradients against central finite differences on
//! seeded tiny instances.
//!
//! ```sh
//! cargo run --example gradient_check
//! ```

use auctionq::experiment::run::cmd_gradcheck;

fn main() {
    let (report, pass) = cmd_gradcheck(10, 7, None).unwrap();
    for (block, err) in &report {
        println!("{block}: worst relative error {err:.3e}");
    }
    assert!(pass, "gradients disagree with finite differences");
    println!("all parameter blocks match finite differences within 1e-4");
}
