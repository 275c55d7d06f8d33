//! Attribute one instance against a synthetic logistic oracle under every metric.
//!
//! cargo run --example attribute_synthetic

use tabattr::attribution::{compute_attributions, Metric, SamplingConfig};
use tabattr::backend::{SyntheticOracle, SyntheticOracleSpec};
use tabattr::tabular::PromptTemplate;

fn main() -> tabattr::Result<()> {
    let weights = [("income_band", 2.5), ("tenure", 1.2), ("region", 0.4), ("age", -0.8), ("channel", 0.05)];
    let spec = SyntheticOracleSpec::binary(weights.map(|(k, w)| (k.to_string(), w)), -0.5);
    let oracle = SyntheticOracle::new(spec)?;
    let instance = oracle.generate_instances(1, 7).remove(0);
    let template = PromptTemplate::default();

    for metric in Metric::ALL {
        let config = SamplingConfig { metric, ..Default::default() };
        let r = compute_attributions(&instance, &oracle, &template, &oracle.verbalizer(), &config)?;
        println!("{metric}: {} coalitions, full distribution {:?}", r.coalition_count, r.full_dist.probs());
        for key in r.ranked_keys() {
            let j = instance.position(&key).expect("key from this instance");
            println!("  {key:<12} phi={:.4} raw={:+.5}", r.phi[&key], r.raw_phi[j]);
        }
    }
    Ok(())
}
