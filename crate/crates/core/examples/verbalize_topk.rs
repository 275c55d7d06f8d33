//! Aggregate a top-k token distribution into class probabilities.
//!
//! cargo run --example verbalize_topk

use tabattr::backend::{TokenLogprob, TopKDistribution};
use tabattr::verbalizer::{class_distribution, VerbalizerMap};

fn topk(pairs: &[(&str, f64)]) -> tabattr::Result<TopKDistribution> {
    let entries = pairs
        .iter()
        .map(|(token, p)| TokenLogprob { token: token.to_string(), logprob: p.ln() })
        .collect();
    TopKDistribution::new(entries, 10)
}

fn main() -> tabattr::Result<()> {
    let vmap = VerbalizerMap::yes_no();
    let cases = [
        vec![(" yes", 0.6), ("Yes", 0.2), (" no", 0.1), ("maybe", 0.05)],
        vec![("NO", 0.7), (" yes", 0.1)],
        vec![("maybe", 0.5), ("unsure", 0.3)],
    ];
    for pairs in &cases {
        let (dist, degenerate) = class_distribution(&topk(pairs)?, &vmap)?;
        println!("{pairs:?}\n  -> {:?} degenerate={degenerate}", dist.probs());
    }
    Ok(())
}
