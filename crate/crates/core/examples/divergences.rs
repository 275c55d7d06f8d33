//! Divergences between class distributions and the similarity each metric induces.
//!
//! cargo run --example divergences

use tabattr::attribution::{jsd_nat, kl_nat, l1, similarity, Metric};
use tabattr::verbalizer::ClassDistribution;

fn main() -> tabattr::Result<()> {
    let full = ClassDistribution::new(vec![0.9, 0.1])?;
    println!("{:>12} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8}", "coalition", "jsd", "kl", "l1", "s_jsd", "s_kl", "s_l1");
    for q in [0.9, 0.7, 0.5, 0.2, 0.0] {
        let part = ClassDistribution::new(vec![q, 1.0 - q])?;
        println!(
            "{:>12} {:>10.6} {:>10.6} {:>10.6} {:>8.4} {:>8.4} {:>8.4}",
            format!("({q:.1}, {:.1})", 1.0 - q),
            jsd_nat(&full, &part)?,
            kl_nat(&full, &part)?,
            l1(&full, &part)?,
            similarity(Metric::Jsd, &full, &part)?,
            similarity(Metric::Kl, &full, &part)?,
            similarity(Metric::L1, &full, &part)?,
        );
    }
    Ok(())
}
