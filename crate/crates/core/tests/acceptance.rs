//! Acceptance suite: one check per criterion, each printed as a PASS/FAIL line.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown:
//! `cargo test --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::LN_2;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use tabattr::attribution::{
    compute_attributions, extra_count, jsd_nat, kl_nat, l1, similarity, Metric,
    SamplingConfig, KL_EPSILON,
};
use tabattr::backend::{
    Counting, SyntheticOracle, SyntheticOracleSpec, TokenLogprob, TopKDistribution,
};
use tabattr::cache::CacheLayout;
use tabattr::cli::{attribute, select_indices, CommonArgs, Context, RunConfig};
use tabattr::faithfulness::{curve_auc, random_order, run_deletion, RankingOrder, RankingSource};
use tabattr::rank::spearman_orders;
use tabattr::tabular::{
    build_prompt, normalize_key, normalize_value, parse_feature_string, ColumnKind, FeatureField,
    PromptTemplate, TabularInstance, DEFAULT_INPUT_MARKER, DEFAULT_RESPONSE_MARKER,
};
use tabattr::verbalizer::{class_distribution, ClassDistribution, VerbalizerMap};
use tabattr::Error;

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("brute-force equivalence", brute_force_equivalence),
        ("divergence correctness", divergence_correctness),
        ("worked example", worked_example),
        ("extra coalition count", extra_coalition_count),
        ("planted importance recovery", planted_importance),
        ("deletion curve ordering", deletion_ordering),
        ("verbalizer aggregation", verbalizer_aggregation),
        ("spearman", spearman),
        ("same-indices discipline", same_indices),
        ("prompt integrity", prompt_integrity),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {:>2}. {name}: {detail} ({secs:.2}s)", n + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {:>2}. {name}: {why} ({secs:.2}s)", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_oracle(rng: &mut ChaCha8Rng, m: usize) -> SyntheticOracle {
    let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
    common::oracle(&weights, rng.gen_range(-1.5..1.5))
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Exhaustive with/without scores computed straight from the oracle's logit.
fn exhaustive_raw_phi(weights: &[f64], bias: f64, metric: Metric) -> Vec<f64> {
    let m = weights.len();
    let prob = |mask: u64| {
        let z = bias + (0..m).filter(|j| mask >> j & 1 == 1).map(|j| weights[j]).sum::<f64>();
        let y = 1.0 / (1.0 + (-z).exp());
        [y, 1.0 - y]
    };
    let full = prob((1u64 << m) - 1);
    let sim = |q: [f64; 2]| match metric {
        Metric::Jsd => {
            let mix = [(full[0] + q[0]) / 2.0, (full[1] + q[1]) / 2.0];
            let d = entropy(&mix) - (entropy(&full) + entropy(&q)) / 2.0;
            1.0 - (d.max(0.0) / LN_2).min(1.0)
        }
        Metric::Kl => {
            let z = 1.0 + 2.0 * KL_EPSILON;
            let cross: f64 = (0..2)
                .filter(|&i| full[i] > 0.0)
                .map(|i| full[i] * ((q[i] + KL_EPSILON) / z).ln())
                .sum();
            1.0 - ((-entropy(&full) - cross).max(0.0) / LN_2).min(1.0)
        }
        Metric::L1 => 1.0 - ((full[0] - q[0]).abs() + (full[1] - q[1]).abs()) / 2.0,
    };
    let sims: Vec<(u64, f64)> = (1..1u64 << m).map(|mask| (mask, sim(prob(mask)))).collect();
    (0..m)
        .map(|j| {
            let (with, without): (Vec<_>, Vec<_>) = sims.iter().partition(|(mask, _)| mask >> j & 1 == 1);
            let mean = |v: &[&(u64, f64)]| v.iter().map(|(_, s)| s).sum::<f64>() / v.len() as f64;
            mean(&with) - mean(&without)
        })
        .collect()
}

fn brute_force_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let template = PromptTemplate::default();
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for m in 2..=8usize {
        for _ in 0..16 {
            let oracle = random_oracle(&mut rng, m);
            let inst = oracle.generate_instances(1, rng.gen()).remove(0);
            let weights: Vec<f64> = inst.keys().map(|k| oracle.spec().weights[k]).collect();
            for metric in Metric::ALL {
                let config = SamplingConfig {
                    ratio: 1.0,
                    max_coalitions: 1 << m,
                    seed: rng.gen(),
                    metric,
                    top_k: 10,
                };
                let r = compute_attributions(&inst, &oracle, &template, &oracle.verbalizer(), &config)
                    .map_err(|e| e.to_string())?;
                ensure!(r.coalition_count == (1 << m) - 1, "M={m}: {} coalitions", r.coalition_count);
                let expected = exhaustive_raw_phi(&weights, oracle.spec().bias, metric);
                for (a, b) in r.raw_phi.iter().zip(&expected) {
                    worst = worst.max((a - b).abs());
                }
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-12, "max |raw_phi - exhaustive| = {worst:e}");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{cases} cases over M=2..8, max error {worst:.1e}"))
}

#[derive(Deserialize)]
struct ReferenceCase {
    p: Vec<f64>,
    q: Vec<f64>,
    jsd: f64,
    kl: f64,
    l1: f64,
}

#[derive(Deserialize)]
struct Reference {
    cases: Vec<ReferenceCase>,
}

fn divergence_correctness() -> Outcome {
    let reference: Reference =
        serde_json::from_str(include_str!("data/divergence_reference.json")).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for c in &reference.cases {
        let p = ClassDistribution::new(c.p.clone()).map_err(|e| e.to_string())?;
        let q = ClassDistribution::new(c.q.clone()).map_err(|e| e.to_string())?;
        let (j, k, d) = (jsd_nat(&p, &q).unwrap(), kl_nat(&p, &q).unwrap(), l1(&p, &q).unwrap());
        worst = worst.max((j - c.jsd).abs()).max((k - c.kl).abs()).max((d - c.l1).abs());
        ensure!(j <= LN_2 + 1e-12, "jsd {j} exceeds ln 2 for {:?} {:?}", c.p, c.q);
        for metric in Metric::ALL {
            for (a, b) in [(&p, &q), (&q, &p)] {
                let s = similarity(metric, a, b).unwrap();
                ensure!((0.0..=1.0).contains(&s), "{metric} similarity {s}");
            }
        }
    }
    ensure!(reference.cases.len() >= 1000, "only {} reference cases", reference.cases.len());
    ensure!(worst <= 1e-10, "max deviation from reference {worst:e}");
    Ok(format!("{} reference pairs, max deviation {worst:.1e}", reference.cases.len()))
}

fn worked_example() -> Outcome {
    // P(yes) = 0.9 when f0 is present, 0.5 otherwise
    let oracle = common::oracle(&[9f64.ln(), 0.0], 0.0);
    let inst = oracle.generate_instances(1, 0).remove(0);
    let config = SamplingConfig { ratio: 1.0, ..Default::default() };
    let r = compute_attributions(&inst, &oracle, &PromptTemplate::default(), &oracle.verbalizer(), &config)
        .map_err(|e| e.to_string())?;
    ensure!(r.coalition_count == 3, "{} coalitions", r.coalition_count);
    let phi = r.phi_values();
    ensure!((r.raw_phi[0] - 0.146792).abs() <= 1e-5, "raw_phi[0] = {}", r.raw_phi[0]);
    ensure!((r.raw_phi[1] + 0.073396).abs() <= 1e-5, "raw_phi[1] = {}", r.raw_phi[1]);
    ensure!((phi[0] - 1.0).abs() <= 1e-9 && phi[1].abs() <= 1e-9, "phi = {phi:?}");
    Ok(format!("raw_phi = ({:.6}, {:.6}), phi = ({}, {})", r.raw_phi[0], r.raw_phi[1], phi[0], phi[1]))
}

fn extra_coalition_count() -> Outcome {
    let a = extra_count(14, 0.4, 800);
    let b = extra_count(13, 0.4, 800);
    ensure!(a == 786 && b == 787, "got {a} and {b}");
    Ok(format!("M=14 -> {a}, M=13 -> {b}"))
}

/// The oracle depends on the dominant feature; the other nine carry weights of at most 0.1.
fn planted_importance() -> Outcome {
    let template = PromptTemplate::default();
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dominant = rng.gen_range(0..10);
        let weights: Vec<f64> = (0..10)
            .map(|j| if j == dominant { 4.0 } else { rng.gen_range(-0.1..0.1) })
            .collect();
        let oracle = common::oracle(&weights, -2.0);
        let inst = oracle.generate_instances(1, seed).remove(0);
        let want = format!("f{dominant}");
        for metric in Metric::ALL {
            let config = SamplingConfig { seed, metric, ..Default::default() };
            let r = compute_attributions(&inst, &oracle, &template, &oracle.verbalizer(), &config)
                .map_err(|e| e.to_string())?;
            total += 1;
            if r.ranked_keys()[0] == want {
                hits += 1;
            }
        }
    }
    ensure!(hits == total, "{hits}/{total} runs recovered the dominant feature");
    Ok(format!("{hits}/{total} (100 seeds x 3 metrics)"))
}

fn deletion_ordering() -> Outcome {
    const TRIALS: u64 = 20;
    const RANDOM_SEEDS: u64 = 20;
    let template = PromptTemplate::default();
    let mut wins = 0;
    let mut worst_step0: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let mut weights: Vec<f64> = (1..=8).map(|i| 0.3 * i as f64).collect();
        for w in &mut weights {
            *w += rng.gen_range(-0.1..0.1);
        }
        weights.sort_by(|a, b| a.total_cmp(b));
        weights.dedup();
        ensure!(weights.len() == 8, "weights not distinct");
        let perm = rand::seq::index::sample(&mut rng, 8, 8).into_vec();
        let weights: Vec<f64> = perm.iter().map(|&i| weights[i]).collect();
        let bias = -weights.iter().sum::<f64>() / 2.0;
        let oracle = common::oracle(&weights, bias);
        let vmap = oracle.verbalizer();
        let instances = oracle.generate_instances(30, trial);
        let config = SamplingConfig { seed: trial, ..Default::default() };
        let mut jsd_orders = Vec::new();
        for inst in &instances {
            let r = compute_attributions(inst, &oracle, &template, &vmap, &config).map_err(|e| e.to_string())?;
            jsd_orders.push(RankingOrder {
                instance_index: inst.index,
                source: RankingSource::Jsd,
                keys: r.ranked_keys(),
                seed: None,
            });
        }
        let mut jsd_auc = None;
        let mut random_aucs = Vec::new();
        for s in 0..RANDOM_SEEDS {
            let mut rankings = jsd_orders.clone();
            rankings.extend(instances.iter().map(|i| random_order(i, s)));
            let report = run_deletion(&instances, &rankings, &oracle, &template, &vmap, 10, 10)
                .map_err(|e| e.to_string())?;
            let jc = report.curve(RankingSource::Jsd).ok_or("missing jsd curve")?;
            let rc = report.curve(RankingSource::Random).ok_or("missing random curve")?;
            worst_step0 = worst_step0.max((jc.mean_prob[0] - rc.mean_prob[0]).abs());
            jsd_auc.get_or_insert(curve_auc(jc).map_err(|e| e.to_string())?);
            random_aucs.push(curve_auc(rc).map_err(|e| e.to_string())?);
        }
        let mean_random = random_aucs.iter().sum::<f64>() / random_aucs.len() as f64;
        if jsd_auc.unwrap() < mean_random {
            wins += 1;
        }
    }
    ensure!(worst_step0 <= 1e-12, "step-0 values differ by {worst_step0:e}");
    let rate = wins as f64 / TRIALS as f64;
    ensure!(rate >= 0.95, "jsd beat random in {wins}/{TRIALS} trials");
    Ok(format!("jsd AUC below mean random AUC in {wins}/{TRIALS} trials, step-0 spread {worst_step0:.1e}"))
}

fn topk(pairs: &[(&str, f64)]) -> TopKDistribution {
    let mut entries: Vec<TokenLogprob> = pairs
        .iter()
        .map(|(t, p)| TokenLogprob { token: t.to_string(), logprob: p.ln() })
        .collect();
    entries.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    TopKDistribution::new(entries, 10).unwrap()
}

fn verbalizer_aggregation() -> Outcome {
    let vmap = VerbalizerMap::yes_no();
    let (d, degenerate) = class_distribution(&topk(&[(" yes", 0.6), ("Yes", 0.2), (" no", 0.1), ("maybe", 0.05)]), &vmap)
        .map_err(|e| e.to_string())?;
    let p = d.probs();
    ensure!(!degenerate, "flagged as degenerate");
    ensure!((p[0] - 8.0 / 9.0).abs() <= 1e-12 && (p[1] - 1.0 / 9.0).abs() <= 1e-12, "got {p:?}");
    let (u, flag) = class_distribution(&topk(&[("maybe", 0.5), ("perhaps", 0.3)]), &vmap).map_err(|e| e.to_string())?;
    ensure!(flag && u.probs() == [0.5, 0.5], "zero mass gave {:?}, flag {flag}", u.probs());
    Ok(format!("({:.15}, {:.15}); zero mass -> uniform + flag", p[0], p[1]))
}

fn spearman() -> Outcome {
    let keys: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let mut rev = keys.clone();
    rev.reverse();
    let swap: Vec<String> = ["a", "c", "b", "d"].iter().map(|s| s.to_string()).collect();
    let same = spearman_orders(&keys, &keys).map_err(|e| e.to_string())?;
    let opposite = spearman_orders(&keys, &rev).map_err(|e| e.to_string())?;
    let swapped = spearman_orders(&keys, &swap).map_err(|e| e.to_string())?;
    // 1 - 6 sum(d^2) / (n (n^2 - 1)) with d^2 = (0, 1, 1, 0)
    let textbook = 1.0 - 6.0 * 2.0 / (4.0 * 15.0);
    ensure!(same == 1.0, "identical -> {same}");
    ensure!(opposite == -1.0, "reversed -> {opposite}");
    ensure!((swapped - textbook).abs() <= 1e-12 && (swapped - 0.8).abs() <= 1e-12, "swap -> {swapped}");
    Ok(format!("identical {same}, reversed {opposite}, swap {swapped}"))
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn same_indices() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticOracleSpec::binary(
        [("education", 2.0), ("age", 1.1), ("occupation", 0.7), ("sex", 0.2), ("race", -0.4)]
            .map(|(k, w)| (k.to_string(), w)),
        -0.5,
    );
    let instances = SyntheticOracle::new(spec.clone()).unwrap().generate_instances(12, 4);
    let context = |counting: &Arc<Counting<SyntheticOracle>>| Context {
        instances: instances.clone(),
        template: PromptTemplate::default(),
        vmap: VerbalizerMap::yes_no(),
        backend: Box::new(counting.clone()),
        identity: serde_json::to_value(&spec).unwrap(),
    };
    let args = CommonArgs { out: Some(dir.path().to_path_buf()), ..Default::default() };
    let cfg = RunConfig::resolve(&args).map_err(|e| e.to_string())?;
    let layout = CacheLayout::new(dir.path());
    let run_all = |indices: &[usize]| -> Result<usize, Error> {
        let counting = Arc::new(Counting::new(SyntheticOracle::new(spec.clone()).unwrap()));
        let ctx = context(&counting);
        attribute(&ctx, &cfg, Metric::Jsd, indices, None)?;
        // the ablation takes its indices from the recorded selection
        let (ablation, _) = select_indices(&cfg, &layout, ctx.instances.len())?;
        for metric in [Metric::Kl, Metric::L1] {
            attribute(&ctx, &cfg, metric, &ablation, None)?;
        }
        Ok(counting.calls())
    };

    let cold = run_all(&[3, 7, 9]).map_err(|e| e.to_string())?;
    for metric in Metric::ALL {
        let cache = layout.read_cache(metric).map_err(|e| e.to_string())?.ok_or("cache missing")?;
        let got: BTreeSet<usize> = cache.entries.keys().copied().collect();
        ensure!(cache.selected_test_indices == [3, 7, 9], "{metric} selection {:?}", cache.selected_test_indices);
        ensure!(got == BTreeSet::from([3, 7, 9]), "{metric} entries {got:?}");
    }
    let first = snapshot(dir.path());
    let warm = run_all(&[3, 7, 9]).map_err(|e| e.to_string())?;
    ensure!(cold > 0 && warm == 0, "cold {cold} calls, warm {warm} calls");
    ensure!(snapshot(dir.path()) == first, "warm rerun changed output bytes");

    let counting = Arc::new(Counting::new(SyntheticOracle::new(spec.clone()).unwrap()));
    match attribute(&context(&counting), &cfg, Metric::Kl, &[1, 2], None) {
        Err(Error::IndexSetMismatch { .. }) => {}
        other => return Err(format!("divergent indices accepted: {:?}", other.map(|r| r.0.len()))),
    }
    ensure!(counting.calls() == 0, "divergent request reached the backend");
    Ok(format!("ablations share {{3,7,9}}; {{1,2}} rejected; warm rerun 0 calls of {cold}, bytes identical"))
}

const ADULT_COLUMNS: [(&str, ColumnKind); 14] = [
    ("age", ColumnKind::Numeric),
    ("workclass", ColumnKind::Categorical),
    ("fnlwgt", ColumnKind::Numeric),
    ("education", ColumnKind::Categorical),
    ("education-num", ColumnKind::Numeric),
    ("marital-status", ColumnKind::Categorical),
    ("occupation", ColumnKind::Categorical),
    ("relationship", ColumnKind::Categorical),
    ("race", ColumnKind::Categorical),
    ("sex", ColumnKind::Categorical),
    ("capital-gain", ColumnKind::Numeric),
    ("capital-loss", ColumnKind::Numeric),
    ("hours-per-week", ColumnKind::Numeric),
    ("native-country", ColumnKind::Categorical),
];

const CATEGORIES: [&str; 12] = [
    "Private", " Self-emp-not-inc", "Married-civ-spouse", "Never  married", "Prof-specialty",
    "Craft repair ", "Husband", "Asian-Pac-Islander", "Female", "United-States", "?", "Some-college",
];

fn adult_instance(rng: &mut ChaCha8Rng, index: usize) -> TabularInstance {
    let fields = ADULT_COLUMNS
        .iter()
        .map(|&(name, kind)| {
            let raw = match kind {
                ColumnKind::Numeric => format!("{:.2}", rng.gen_range(0.0..100_000.0)),
                _ => CATEGORIES[rng.gen_range(0..CATEGORIES.len())].to_string(),
            };
            let value = normalize_value(&raw, kind, name).unwrap();
            FeatureField::new(normalize_key(name), value).unwrap()
        })
        .collect();
    TabularInstance::new(index, fields, None).unwrap()
}

fn prompt_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let template = PromptTemplate::default();
    for case in 0..1000 {
        let inst = adult_instance(&mut rng, case);
        let mask: u64 = rng.gen_range(1..1u64 << inst.len());
        let kept = inst.select(|i| mask >> i & 1 == 1);
        let prompt = build_prompt(&template, &kept).map_err(|e| e.to_string())?;
        for marker in [DEFAULT_INPUT_MARKER, DEFAULT_RESPONSE_MARKER] {
            ensure!(prompt.matches(marker).count() == 1, "case {case}: `{marker}` count");
        }
        ensure!(!prompt.contains("  "), "case {case}: double space");
        let block = template.extract_features(&prompt).ok_or(format!("case {case}: no input block"))?;
        let parsed = parse_feature_string(block).map_err(|e| e.to_string())?;
        let expected: Vec<(String, String)> = kept.iter().map(|f| (f.key.clone(), f.value.clone())).collect();
        ensure!(parsed == expected, "case {case}: round trip {parsed:?} != {expected:?}");
        let present: BTreeSet<&str> = block.split(' ').filter_map(|t| t.split_once(':').map(|(k, _)| k)).collect();
        for (i, f) in inst.fields().iter().enumerate() {
            let kept_field = mask >> i & 1 == 1;
            ensure!(present.contains(f.key.as_str()) == kept_field, "case {case}: key `{}` presence", f.key);
        }
    }
    Ok("1000 random coalitions over 14 Adult fields".into())
}
