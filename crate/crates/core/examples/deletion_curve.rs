//! Deletion curves for attribution rankings versus random orderings.
//!
//! cargo run --example deletion_curve

use tabattr::attribution::{compute_attributions, SamplingConfig};
use tabattr::backend::{SyntheticOracle, SyntheticOracleSpec};
use tabattr::faithfulness::{curve_auc, random_order, run_deletion, RankingOrder, RankingSource};
use tabattr::tabular::PromptTemplate;

fn main() -> tabattr::Result<()> {
    let weights = [("a", 2.4), ("b", 1.8), ("c", 1.2), ("d", 0.9), ("e", 0.6), ("f", 0.3)];
    let bias = -weights.iter().map(|(_, w)| w).sum::<f64>() / 2.0;
    let oracle = SyntheticOracle::new(SyntheticOracleSpec::binary(weights.map(|(k, w)| (k.to_string(), w)), bias))?;
    let instances = oracle.generate_instances(20, 3);
    let template = PromptTemplate::default();
    let vmap = oracle.verbalizer();

    let mut rankings = Vec::new();
    for inst in &instances {
        let r = compute_attributions(inst, &oracle, &template, &vmap, &SamplingConfig::default())?;
        rankings.push(RankingOrder {
            instance_index: inst.index,
            source: RankingSource::Jsd,
            keys: r.ranked_keys(),
            seed: None,
        });
        rankings.push(random_order(inst, 11));
    }
    let report = run_deletion(&instances, &rankings, &oracle, &template, &vmap, 10, 10)?;
    for curve in &report.curves {
        let points: Vec<String> = curve
            .fraction_removed
            .iter()
            .zip(&curve.mean_prob)
            .map(|(x, y)| format!("{x:.2}:{y:.3}"))
            .collect();
        println!("{:<7} auc={:.4}  {}", curve.source.as_str(), curve_auc(curve)?, points.join(" "));
    }
    report.write_csv(std::io::stdout())?;
    Ok(())
}
