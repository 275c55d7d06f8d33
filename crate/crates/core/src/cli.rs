//! Command-line orchestration.
//!
//! The `tabattr` binary parses [`Cli`] and calls [`run`]. Settings resolve as
//! command-line flags, then the TOML config file, then built-in defaults. Each
//! command writes a run manifest with the effective configuration to the
//! output directory, so a run can be repeated from its manifest and seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{compute_attributions, Coalition, Metric, SamplingConfig};
use crate::backend::{
    BackendDescriptor, LogprobBackend, SyntheticOracle, SyntheticOracleSpec,
};
use crate::cache::{self, CacheLayout};
use crate::error::{Error, Result};
use crate::faithfulness::{
    curve_auc, load_external_ranking, random_order, run_deletion, DeletionReport,
    ExternalRanking, RankingOrder, RankingSource, DEFAULT_MAX_REMOVALS,
};
use crate::fsutil;
use crate::rank::{global_ranking, spearman_orders, GlobalRanking};
use crate::tabular::{
    build_prompt, load_dataset, PromptTemplate, Schema, TabularInstance, DEFAULT_INPUT_MARKER,
    DEFAULT_RESPONSE_MARKER,
};
use crate::verbalizer::VerbalizerMap;

/// Environment variable overriding the HTTP endpoint.
pub const ENDPOINT_ENV: &str = "TABATTR_ENDPOINT";
pub const DEFAULT_INSTANCE_COUNT: usize = 50;
pub const DEFAULT_SELECTION_SEED: u64 = 0;

#[derive(Debug, Parser)]
#[command(name = "tabattr", version, about = "Sampled-coalition attribution for LLM tabular classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute the selected instances and cache the results per metric.
    Attribute,
    /// Deletion curves for cached attributions and baseline orderings.
    DeletionCurve(DeletionArgs),
    /// Spearman correlation between the cached global ranking and an external one.
    Compare(CompareArgs),
    /// End-to-end run against a synthetic logistic oracle (no network).
    SynthDemo(SynthArgs),
    /// Print the prompt for one instance, optionally for a coalition of its fields.
    Serialize(SerializeArgs),
}

#[derive(Debug, Default, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Template file containing `{features}` once.
    #[arg(long, global = true)]
    pub template: Option<PathBuf>,
    /// Instruction text for the default template layout.
    #[arg(long, global = true)]
    pub instruction: Option<String>,
    #[arg(long, global = true)]
    pub verbalizer: Option<PathBuf>,
    /// `http(s)://...`, `replay:<path>` or `synthetic:<path>`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// HTTP endpoint; overrides the endpoint of an http backend.
    #[arg(long, global = true, env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    /// Persist live HTTP responses to this replay file.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[arg(long, global = true)]
    pub metric: Option<Metric>,
    #[arg(long, global = true)]
    pub ratio: Option<f64>,
    #[arg(long, global = true)]
    pub max_coalitions: Option<usize>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of instances to sample when no index list is given.
    #[arg(long, global = true)]
    pub instances: Option<usize>,
    /// Explicit comma-separated instance indices.
    #[arg(long, global = true, value_delimiter = ',')]
    pub indices: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub selection_seed: Option<u64>,
    #[arg(long, global = true)]
    pub max_removals: Option<usize>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DeletionArgs {
    /// Ranking sources: jsd, kl, l1, external, random.
    #[arg(long, value_delimiter = ',', default_value = "jsd,random")]
    pub sources: Vec<RankingSource>,
    /// External ranking JSON (`{global: [...]}` or `{per_instance: {...}}`).
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Seed for the random-order baseline; defaults to the sampling seed.
    #[arg(long)]
    pub random_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub external: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Oracle spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SerializeArgs {
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Comma-separated field positions to keep; all fields when omitted.
    #[arg(long, value_delimiter = ',')]
    pub coalition: Option<Vec<usize>>,
}

/// Values accepted in the TOML config file.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub instruction: Option<String>,
    pub verbalizer: Option<PathBuf>,
    pub backend: Option<String>,
    pub endpoint: Option<String>,
    pub record: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub ratio: Option<f64>,
    pub max_coalitions: Option<usize>,
    pub top_k: Option<usize>,
    pub seed: Option<u64>,
    pub instances: Option<usize>,
    pub indices: Option<Vec<usize>>,
    pub selection_seed: Option<u64>,
    pub max_removals: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Effective configuration after merging flags, file and defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub instruction: Option<String>,
    pub verbalizer: Option<PathBuf>,
    pub backend: Option<BackendDescriptor>,
    pub sampling: SamplingConfig,
    pub instances: usize,
    pub indices: Option<Vec<usize>>,
    pub selection_seed: u64,
    pub max_removals: usize,
    pub workers: Option<usize>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        macro_rules! pick {
            ($field:ident) => {
                args.$field.clone().or(file.$field.clone())
            };
        }
        let defaults = SamplingConfig::default();
        let sampling = SamplingConfig {
            ratio: pick!(ratio).unwrap_or(defaults.ratio),
            max_coalitions: pick!(max_coalitions).unwrap_or(defaults.max_coalitions),
            seed: pick!(seed).unwrap_or(defaults.seed),
            metric: pick!(metric).unwrap_or(defaults.metric),
            top_k: pick!(top_k).unwrap_or(defaults.top_k),
        };
        sampling.validate()?;

        let mut backend = pick!(backend).map(|b| BackendDescriptor::parse(&b)).transpose()?;
        if let Some(url) = pick!(endpoint) {
            match &mut backend {
                Some(BackendDescriptor::Http { endpoint, .. }) => *endpoint = url,
                None => backend = Some(BackendDescriptor::parse(&url)?),
                Some(_) => {}
            }
        }
        if let Some(path) = pick!(record) {
            match &mut backend {
                Some(BackendDescriptor::Http { record, .. }) => *record = Some(path),
                _ => return Err(Error::Config("--record requires an http backend".into())),
            }
        }

        let instances = pick!(instances).unwrap_or(DEFAULT_INSTANCE_COUNT);
        if instances == 0 {
            return Err(Error::Config("--instances must be at least 1".into()));
        }
        let indices = pick!(indices);
        if matches!(&indices, Some(v) if v.is_empty()) {
            return Err(Error::Config("--indices must list at least one index".into()));
        }
        let max_removals = pick!(max_removals).unwrap_or(DEFAULT_MAX_REMOVALS);
        if max_removals == 0 {
            return Err(Error::Config("--max-removals must be at least 1".into()));
        }
        Ok(Self {
            dataset: pick!(dataset),
            schema: pick!(schema),
            template: pick!(template),
            instruction: pick!(instruction),
            verbalizer: pick!(verbalizer),
            backend,
            sampling,
            instances,
            indices,
            selection_seed: pick!(selection_seed).unwrap_or(DEFAULT_SELECTION_SEED),
            max_removals,
            workers: pick!(workers),
            out: pick!(out).unwrap_or_else(|| PathBuf::from("tabattr-out")),
        })
    }

    fn require<'a, T>(value: &'a Option<T>, what: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing required setting `{what}`")))
    }

    fn check_exists(path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!("{} does not exist", path.display())))
        }
    }

    pub fn load_template(&self) -> Result<PromptTemplate> {
        match (&self.template, &self.instruction) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give either --template or --instruction, not both".into(),
            )),
            (Some(path), None) => {
                PromptTemplate::from_file(path, DEFAULT_INPUT_MARKER, DEFAULT_RESPONSE_MARKER)
            }
            (None, Some(text)) => PromptTemplate::with_instruction(text),
            (None, None) => Ok(PromptTemplate::default()),
        }
    }
}

/// Everything needed to query and score instances.
pub struct Context {
    pub instances: Vec<TabularInstance>,
    pub template: PromptTemplate,
    pub vmap: VerbalizerMap,
    pub backend: Box<dyn LogprobBackend>,
    /// Folded into cache fingerprints.
    pub identity: serde_json::Value,
}

impl Context {
    /// Loads the dataset, template, verbalizer and backend named in `cfg`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let dataset = RunConfig::require(&cfg.dataset, "dataset")?;
        let schema_path = RunConfig::require(&cfg.schema, "schema")?;
        let vpath = RunConfig::require(&cfg.verbalizer, "verbalizer")?;
        let backend = RunConfig::require(&cfg.backend, "backend")?;
        for p in [dataset, schema_path, vpath]
            .into_iter()
            .chain(cfg.template.as_ref())
        {
            RunConfig::check_exists(p)?;
        }
        let identity = match backend {
            BackendDescriptor::Synthetic { spec } => {
                RunConfig::check_exists(spec)?;
                serde_json::to_value(SyntheticOracleSpec::from_json_file(spec)?)?
            }
            BackendDescriptor::Replay { path } => {
                RunConfig::check_exists(path)?;
                serde_json::Value::Null
            }
            BackendDescriptor::Http { .. } => serde_json::Value::Null,
        };
        let schema = Schema::from_json_file(schema_path)?;
        Ok(Self {
            instances: load_dataset(dataset, &schema)?,
            template: cfg.load_template()?,
            vmap: VerbalizerMap::from_json_file(vpath)?,
            backend: backend.open()?,
            identity,
        })
    }

    pub fn instance(&self, index: usize) -> Result<&TabularInstance> {
        self.instances.get(index).ok_or_else(|| {
            Error::Config(format!(
                "instance index {index} is out of range (dataset has {} rows)",
                self.instances.len()
            ))
        })
    }

    pub fn feature_keys(&self) -> Vec<String> {
        self.instances
            .first()
            .map(|i| i.keys().map(str::to_string).collect())
            .unwrap_or_default()
    }
}

/// What a command did; `failures > 0` maps to a nonzero exit status.
#[derive(Debug, Default)]
pub struct CommandReport {
    pub summary: String,
    pub failures: usize,
}

/// Indices from the config, the existing manifest, or a seeded sample.
pub fn select_indices(cfg: &RunConfig, layout: &CacheLayout, n_rows: usize) -> Result<(Vec<usize>, Option<u64>)> {
    if let Some(explicit) = &cfg.indices {
        return Ok((explicit.clone(), None));
    }
    if let Some(manifest) = layout.read_manifest()? {
        return Ok((manifest.selected_test_indices, manifest.seed));
    }
    Ok((sample_indices(n_rows, cfg.instances, cfg.selection_seed), Some(cfg.selection_seed)))
}

/// Uniform sample of `count` row indices (all rows if fewer), sorted.
pub fn sample_indices(n_rows: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(count);
    all.sort_unstable();
    all
}

fn write_manifest(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<()> {
    let doc = serde_json::json!({
        "command": command,
        "effective_config": cfg,
        "details": extra,
    });
    fsutil::write_json_atomic(&cfg.out.join(format!("run_manifest_{command}.json")), &doc)
}

/// Attributes `indices` under `metric`, going through the metric's cache.
pub fn attribute(
    ctx: &Context,
    cfg: &RunConfig,
    metric: Metric,
    indices: &[usize],
    selection_seed: Option<u64>,
) -> Result<(Vec<crate::attribution::AttributionResult>, CommandReport)> {
    let layout = CacheLayout::new(&cfg.out);
    let sampling = SamplingConfig {
        metric,
        ..cfg.sampling.clone()
    };
    for &i in indices {
        ctx.instance(i)?;
    }
    let fingerprint = cache::config_fingerprint(&sampling, &ctx.template, &ctx.vmap, &ctx.identity);
    let outcome = cache::load_or_compute(&layout, indices, metric, &fingerprint, selection_seed, |i| {
        compute_attributions(ctx.instance(i)?, &ctx.backend, &ctx.template, &ctx.vmap, &sampling)
    })?;

    let results_dir = cfg.out.join("results").join(metric.as_str());
    for r in &outcome.results {
        fsutil::write_json_atomic(
            &results_dir.join(format!("instance_{}.json", r.instance_index)),
            &r.summary(),
        )?;
    }

    let mut s = String::new();
    let _ = writeln!(
        s,
        "metric {metric}: {} results, {} failures",
        outcome.results.len(),
        outcome.failures.len()
    );
    let _ = writeln!(s, "{:>8}  {:<40}  flags", "instance", "top features");
    for r in &outcome.results {
        let top: Vec<String> = r
            .ranked_keys()
            .into_iter()
            .take(3)
            .map(|k| format!("{k}={:.3}", r.phi[&k]))
            .collect();
        let f = &r.degeneracy_flags;
        let flags = if f.any() {
            format!(
                "full={} coalitions={} uniform={}",
                f.full_distribution, f.degenerate_coalitions, f.uniform_phi
            )
        } else {
            "-".to_string()
        };
        let _ = writeln!(s, "{:>8}  {:<40}  {flags}", r.instance_index, top.join(" "));
    }
    for f in &outcome.failures {
        let _ = writeln!(s, "instance {} failed: {}", f.index, f.error);
    }
    if !outcome.results.is_empty() {
        let g = global_ranking(&outcome.results)?;
        fsutil::write_json_atomic(&cfg.out.join(format!("global_ranking_{metric}.json")), &g)?;
        let _ = writeln!(s, "global ranking ({metric}):");
        for (pos, f) in g.features.iter().enumerate() {
            let _ = writeln!(s, "  {:>2}. {:<24} {:.4}", pos + 1, f.key, f.mean_score);
        }
    }
    fsutil::write_atomic(&cfg.out.join(format!("summary_{metric}.txt")), s.as_bytes())?;
    log::info!(
        "{metric}: {} computed, {} served from cache",
        outcome.computed,
        outcome.results.len() - outcome.computed
    );
    let failures = outcome.failures.len();
    Ok((outcome.results, CommandReport { summary: s, failures }))
}

pub fn cmd_attribute(cfg: &RunConfig) -> Result<CommandReport> {
    let ctx = Context::from_config(cfg)?;
    let layout = CacheLayout::new(&cfg.out);
    let (indices, seed) = select_indices(cfg, &layout, ctx.instances.len())?;
    let (_, report) = attribute(&ctx, cfg, cfg.sampling.metric, &indices, seed)?;
    write_manifest(cfg, "attribute", serde_json::json!({ "indices": indices }))?;
    Ok(report)
}

fn cached_results(cfg: &RunConfig, metric: Metric) -> Result<Vec<crate::attribution::AttributionResult>> {
    let layout = CacheLayout::new(&cfg.out);
    let cache = layout.read_cache(metric)?.ok_or_else(|| {
        Error::Config(format!(
            "no cached {metric} attributions in {}; run `tabattr attribute --metric {metric}` first",
            cfg.out.display()
        ))
    })?;
    Ok(cache.results())
}

/// Builds rankings for each source and runs the deletion protocol.
pub fn deletion(
    ctx: &Context,
    cfg: &RunConfig,
    sources: &[RankingSource],
    external: Option<&ExternalRanking>,
    random_seed: u64,
) -> Result<(DeletionReport, CommandReport)> {
    if sources.is_empty() {
        return Err(Error::Config("no ranking sources requested".into()));
    }
    let layout = CacheLayout::new(&cfg.out);
    let (indices, _) = select_indices(cfg, &layout, ctx.instances.len())?;
    let instances: Vec<TabularInstance> = indices
        .iter()
        .map(|&i| ctx.instance(i).cloned())
        .collect::<Result<_>>()?;

    let mut rankings: Vec<RankingOrder> = Vec::new();
    for &source in sources {
        match source {
            RankingSource::Jsd | RankingSource::Kl | RankingSource::L1 => {
                let metric = source.metric().expect("metric source");
                let results = cached_results(cfg, metric)?;
                for inst in &instances {
                    let r = results
                        .iter()
                        .find(|r| r.instance_index == inst.index)
                        .ok_or_else(|| {
                            Error::Config(format!(
                                "{metric} cache has no result for instance {}; rerun `tabattr attribute --metric {metric}`",
                                inst.index
                            ))
                        })?;
                    rankings.push(RankingOrder {
                        instance_index: inst.index,
                        source,
                        keys: r.ranked_keys(),
                        seed: None,
                    });
                }
            }
            RankingSource::External => {
                let ext = external.ok_or_else(|| {
                    Error::Config("source `external` needs --external <ranking.json>".into())
                })?;
                rankings.extend(ext.orders_for(&instances)?);
            }
            RankingSource::Random => {
                rankings.extend(instances.iter().map(|i| random_order(i, random_seed)));
            }
        }
    }

    let report = run_deletion(
        &instances,
        &rankings,
        &ctx.backend,
        &ctx.template,
        &ctx.vmap,
        cfg.sampling.top_k,
        cfg.max_removals,
    )?;

    let mut csv_bytes = Vec::new();
    report.write_csv(&mut csv_bytes)?;
    fsutil::write_atomic(&cfg.out.join("deletion_curves.csv"), &csv_bytes)?;
    fsutil::write_json_atomic(&cfg.out.join("deletion_curves.json"), &report)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "deletion curves over {} instances (mean M = {:.2}, {} dropped, {} tied predictions)",
        report.curves.first().map_or(0, |c| c.instance_count),
        report.mean_feature_count,
        report.dropped.len(),
        report.predicted_ties
    );
    let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>6}", "source", "auc", "step0", "last", "steps");
    for c in &report.curves {
        let auc = curve_auc(c).map_or("n/a".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8.4} {:>8.4} {:>6}",
            c.source.as_str(),
            auc,
            c.mean_prob.first().copied().unwrap_or(f64::NAN),
            c.mean_prob.last().copied().unwrap_or(f64::NAN),
            c.mean_prob.len().saturating_sub(1)
        );
    }
    for d in &report.dropped {
        let _ = writeln!(s, "instance {} dropped: {}", d.instance_index, d.reason);
    }
    fsutil::write_atomic(&cfg.out.join("summary_deletion.txt"), s.as_bytes())?;
    let failures = report.dropped.len();
    Ok((report, CommandReport { summary: s, failures }))
}

pub fn cmd_deletion_curve(cfg: &RunConfig, args: &DeletionArgs) -> Result<CommandReport> {
    let ctx = Context::from_config(cfg)?;
    let external = args
        .external
        .as_deref()
        .map(|p| load_external_ranking(p, &ctx.feature_keys()))
        .transpose()?;
    let seed = args.random_seed.unwrap_or(cfg.sampling.seed);
    let (_, report) = deletion(&ctx, cfg, &args.sources, external.as_ref(), seed)?;
    write_manifest(
        cfg,
        "deletion-curve",
        serde_json::json!({ "sources": args.sources, "external": args.external, "random_seed": seed }),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub metric: Metric,
    pub rho: f64,
    pub global_ranking: GlobalRanking,
    pub external: Vec<String>,
}

/// Spearman correlation between a global ranking and an external global order.
pub fn compare(
    cfg: &RunConfig,
    results: &[crate::attribution::AttributionResult],
    external: &ExternalRanking,
) -> Result<(CompareReport, CommandReport)> {
    let g = global_ranking(results)?;
    let ext = external
        .global()
        .ok_or_else(|| Error::Config("compare needs a global external ranking".into()))?;
    let rho = spearman_orders(&g.keys(), ext)?;
    let report = CompareReport {
        metric: g.metric,
        rho,
        global_ranking: g,
        external: ext.to_vec(),
    };
    fsutil::write_json_atomic(&cfg.out.join(format!("compare_{}.json", report.metric)), &report)?;
    let summary = format!(
        "spearman rho ({} global ranking over {} instances vs external) = {rho:.6}\n",
        report.metric, report.global_ranking.instance_count
    );
    Ok((report, CommandReport { summary, failures: 0 }))
}

pub fn cmd_compare(cfg: &RunConfig, args: &CompareArgs) -> Result<CommandReport> {
    let results = cached_results(cfg, cfg.sampling.metric)?;
    let keys: Vec<String> = results
        .first()
        .map(|r| r.feature_keys().map(str::to_string).collect())
        .unwrap_or_default();
    let external = load_external_ranking(&args.external, &keys)?;
    let (_, report) = compare(cfg, &results, &external)?;
    write_manifest(cfg, "compare", serde_json::json!({ "external": args.external }))?;
    Ok(report)
}

/// Full pipeline on a synthetic oracle: attribution under every metric,
/// deletion curves for all five sources, and rank comparison against the
/// oracle's true weight order.
pub fn cmd_synth_demo(cfg: &RunConfig, args: &SynthArgs) -> Result<CommandReport> {
    let spec = SyntheticOracleSpec::from_json_file(&args.spec)?;
    let oracle = SyntheticOracle::new(spec.clone())?;
    let instances = oracle.generate_instances(spec.instances, cfg.sampling.seed);
    let ctx = Context {
        vmap: oracle.verbalizer(),
        template: cfg.load_template()?,
        identity: serde_json::to_value(&spec)?,
        backend: Box::new(oracle),
        instances,
    };
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;

    let mut true_order: Vec<(&String, f64)> = spec.weights.iter().map(|(k, w)| (k, *w)).collect();
    true_order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let truth = ExternalRanking::Global(true_order.iter().map(|(k, _)| (*k).clone()).collect());
    fsutil::write_json_atomic(&cfg.out.join("true_ranking.json"), &truth)?;

    let mut cfg = cfg.clone();
    if cfg.indices.is_none() {
        cfg.indices = Some((0..ctx.instances.len()).collect());
    }
    let indices = cfg.indices.clone().expect("set above");

    let mut summary = String::new();
    let mut failures = 0;
    let mut jsd_results = Vec::new();
    for metric in Metric::ALL {
        let (results, rep) = attribute(&ctx, &cfg, metric, &indices, None)?;
        summary.push_str(&rep.summary);
        failures += rep.failures;
        if metric == Metric::Jsd {
            jsd_results = results;
        }
    }
    let sources = [
        RankingSource::Jsd,
        RankingSource::Kl,
        RankingSource::L1,
        RankingSource::External,
        RankingSource::Random,
    ];
    let (_, rep) = deletion(&ctx, &cfg, &sources, Some(&truth), cfg.sampling.seed)?;
    summary.push_str(&rep.summary);
    failures += rep.failures;
    if !jsd_results.is_empty() {
        let (_, rep) = compare(&cfg, &jsd_results, &truth)?;
        summary.push_str(&rep.summary);
    }
    fsutil::write_atomic(&cfg.out.join("summary_demo.txt"), summary.as_bytes())?;
    write_manifest(
        &cfg,
        "synth-demo",
        serde_json::json!({ "spec": args.spec, "oracle": spec }),
    )?;
    Ok(CommandReport { summary, failures })
}

pub fn cmd_serialize(cfg: &RunConfig, args: &SerializeArgs) -> Result<CommandReport> {
    let dataset = RunConfig::require(&cfg.dataset, "dataset")?;
    let schema = Schema::from_json_file(RunConfig::require(&cfg.schema, "schema")?)?;
    let instances = load_dataset(dataset, &schema)?;
    let inst = instances
        .get(args.index)
        .ok_or_else(|| Error::Config(format!("instance index {} is out of range", args.index)))?;
    let template = cfg.load_template()?;
    let prompt = match &args.coalition {
        Some(members) => {
            let c = Coalition::from_members(members.iter().copied())?;
            if !c.fits(inst.len()) {
                return Err(Error::Config(format!(
                    "coalition {c:?} exceeds the instance's {} fields",
                    inst.len()
                )));
            }
            build_prompt(&template, &inst.select(|i| c.contains(i)))?
        }
        None => build_prompt(&template, inst.fields())?,
    };
    Ok(CommandReport {
        summary: prompt,
        failures: 0,
    })
}

/// Configures the global worker pool.
pub fn init_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    }
    Ok(())
}

/// Resolves configuration and runs one command.
pub fn run(cli: &Cli) -> Result<CommandReport> {
    let cfg = RunConfig::resolve(&cli.common)?;
    init_workers(cfg.workers)?;
    if !matches!(cli.command, Command::Serialize(_)) {
        fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    }
    match &cli.command {
        Command::Attribute => cmd_attribute(&cfg),
        Command::DeletionCurve(a) => cmd_deletion_curve(&cfg, a),
        Command::Compare(a) => cmd_compare(&cfg, a),
        Command::SynthDemo(a) => cmd_synth_demo(&cfg, a),
        Command::Serialize(a) => cmd_serialize(&cfg, a),
    }
}
