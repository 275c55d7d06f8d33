//! Aggregate per-instance scores into a global ranking and correlate it with a reference order.
//!
//! cargo run --example rank_compare

use tabattr::attribution::{compute_attributions, SamplingConfig};
use tabattr::backend::{SyntheticOracle, SyntheticOracleSpec};
use tabattr::rank::{global_ranking, spearman_orders, spearman_rho};
use tabattr::tabular::PromptTemplate;

fn main() -> tabattr::Result<()> {
    let weights = [("w1", 2.0), ("w2", 1.4), ("w3", 0.9), ("w4", 0.5), ("w5", 0.2)];
    let truth: Vec<String> = weights.iter().map(|(k, _)| k.to_string()).collect();
    let oracle = SyntheticOracle::new(SyntheticOracleSpec::binary(weights.map(|(k, w)| (k.to_string(), w)), -2.0))?;
    let template = PromptTemplate::default();
    let results = oracle
        .generate_instances(15, 1)
        .iter()
        .map(|inst| compute_attributions(inst, &oracle, &template, &oracle.verbalizer(), &SamplingConfig::default()))
        .collect::<tabattr::Result<Vec<_>>>()?;

    let global = global_ranking(&results)?;
    for f in &global.features {
        println!("{:<4} {:.4}", f.key, f.mean_score);
    }
    println!("rho vs planted order = {:.4}", spearman_orders(&global.keys(), &truth)?);
    let mut reversed = truth.clone();
    reversed.reverse();
    println!("rho vs reversed order = {:.4}", spearman_orders(&global.keys(), &reversed)?);

    let tied = vec![("x".to_string(), 2.0), ("y".to_string(), 2.0), ("z".to_string(), 1.0)];
    let other = vec![("x".to_string(), 3.0), ("y".to_string(), 2.0), ("z".to_string(), 1.0)];
    println!("rho with a tie = {:.6}", spearman_rho(&tied, &other)?);
    Ok(())
}
