//! Lower bounds on the number of close pairs of particles in a box, checked
//! over every configuration of a given size.
//!
//! ```text
//! cargo run --release --example couple_bounds [side]
//! ```

use kclg::ergodic::couple_bounds_mask;

fn main() {
    let side: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    assert!((1..=24).contains(&side), "side must be between 1 and 24");
    println!("{:>3} {:>10} {:>10} {:>10}", "k", "min pairs", "bound", "min j=3");
    for k in 0..=side {
        let (mut min_pairs, mut min_within) = (u32::MAX, u32::MAX);
        let mut bound = 0.0;
        let mut holds = true;
        for mask in (0u64..1 << side).filter(|m| m.count_ones() as usize == k) {
            let r = couple_bounds_mask(mask, side, 3);
            min_pairs = min_pairs.min(r.close_pairs);
            min_within = min_within.min(r.within[1].pairs);
            bound = r.close_bound;
            holds &= r.close_bound_holds && r.within.iter().all(|w| w.holds);
        }
        println!("{k:>3} {min_pairs:>10} {bound:>10.3} {min_within:>10}{}", if holds { "" } else { "  violated" });
    }
}
