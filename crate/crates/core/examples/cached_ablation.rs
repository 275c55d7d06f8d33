//! Metric ablation over one fixed instance selection, served from the cache on rerun.
//!
//! cargo run --example cached_ablation

use std::sync::Arc;

use tabattr::attribution::{compute_attributions, Metric, SamplingConfig};
use tabattr::backend::{Counting, SyntheticOracle, SyntheticOracleSpec};
use tabattr::cache::{config_fingerprint, load_or_compute, CacheLayout};
use tabattr::tabular::PromptTemplate;
use tabattr::Error;

fn main() -> tabattr::Result<()> {
    let spec = SyntheticOracleSpec::binary([("a", 1.5), ("b", 0.7), ("c", -0.4), ("d", 0.1)].map(|(k, w)| (k.to_string(), w)), 0.0);
    let oracle = Arc::new(Counting::new(SyntheticOracle::new(spec.clone())?));
    let instances = oracle.inner().generate_instances(10, 2);
    let template = PromptTemplate::default();
    let vmap = oracle.inner().verbalizer();
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let layout = CacheLayout::new(dir.path());
    let selection = [1, 4, 8];

    for pass in ["cold", "warm"] {
        let before = oracle.calls();
        for metric in Metric::ALL {
            let config = SamplingConfig { metric, ..Default::default() };
            let fp = config_fingerprint(&config, &template, &vmap, &serde_json::to_value(&spec)?);
            let outcome = load_or_compute(&layout, &selection, metric, &fp, None, |i| {
                compute_attributions(&instances[i], &oracle, &template, &vmap, &config)
            })?;
            println!("{pass} {metric}: {} results, {} computed", outcome.results.len(), outcome.computed);
        }
        println!("{pass} pass backend calls: {}", oracle.calls() - before);
    }

    match load_or_compute(&layout, &[0, 2], Metric::Jsd, "", None, |_| unreachable!()) {
        Err(e @ Error::IndexSetMismatch { .. }) => println!("rejected: {e}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
