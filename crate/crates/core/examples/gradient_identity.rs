//! The instantaneous current of the constrained dynamics is a discrete
//! gradient: `W = h - tau h` for a local function `h`.
//!
//! For m = 2 the function is `h(eta) = eta(0)eta(1) + eta(0)eta(-1) - eta(-1)eta(1)`;
//! for m = 3 it is found by solving the linear system over all windows.
//!
//! ```text
//! cargo run --example gradient_identity
//! ```

use kclg::rates::{find_gradient_decomposition, local_h, window_current, Order, RateModel};
use num_traits::Zero;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("m = 2, window -1..2");
    for w in 0..16u32 {
        let eta = |i: isize| ((w >> (i + 1)) & 1) as u8;
        let current = window_current(Order::Two, eta);
        let (h0, h1) = (local_h(eta), local_h(|i| eta(i + 1)));
        println!("  {:04b}  W = {current:+}  h - tau h = {:+}", w.reverse_bits() >> 28, h0 - h1);
    }

    for m in [Order::Two, Order::Three] {
        let dec = find_gradient_decomposition(&RateModel::porous(m))?.normalized();
        println!("m = {}: h reads sites {}..{}", m.value(), dec.lo, dec.lo + dec.len as isize - 1);
        for (packed, value) in dec.table.iter().enumerate().filter(|(_, v)| !v.is_zero()) {
            let bits: String = (0..dec.len).map(|i| if (packed >> i) & 1 == 1 { '1' } else { '0' }).collect();
            println!("  h({bits}) = {value}");
        }
    }
    Ok(())
}
