use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fedsplit::embedding_io::write_embeddings_file;
use fedsplit::metrics::{self, Pairing, ReportOptions, WithinPairing};
use fedsplit::partitioner::{
    self, Catalog, CopyMethod, InputRecord, Manifest, PartitionParams, Strategy,
};
use fedsplit::projection::{self, Method, ProjectOptions};
use fedsplit::synth::{self, SynthSpec};
use serde_json::{json, Value};

use crate::inputs::{
    ensure_dir, load_embeddings, usage, write_file, CliError, CliResult, LoadedEmbeddings,
};
use crate::{MetricsArgs, PairingArg, PartitionArgs, ProjectArgs, SynthArgs};

pub const EMBEDDINGS_FILE: &str = "embeddings.cemb";
pub const DATASET_DIR: &str = "dataset";
pub const PROJECTION_CSV: &str = "projection.csv";
pub const PROJECTION_JSON: &str = "projection.json";

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn require_empty(dir: &Path) -> CliResult<()> {
    if let Ok(mut entries) = std::fs::read_dir(dir) {
        if entries.next().is_some() {
            return Err(fedsplit::Error::OutputNotEmpty(dir.to_path_buf()).into());
        }
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<Value> {
    let spec = SynthSpec {
        num_classes: args.classes,
        dim: args.dim,
        num_latent_clusters: args.clusters,
        within_cluster_stddev: args.stddev,
        between_cluster_separation: args.separation,
        seed: args.seed,
        images_per_class: args.images_per_class,
    };
    spec.validate()?;
    require_empty(&args.output)?;
    let set = synth::synth_class_embeddings(&spec)?;
    ensure_dir(&args.output)?;
    let emb_path = args.output.join(EMBEDDINGS_FILE);
    write_embeddings_file(&set, &emb_path)?;
    log::info!(
        "wrote {} class embeddings (dim {}) to {}",
        set.len(),
        set.dim(),
        emb_path.display()
    );
    let mut summary = json!({
        "command": "synth",
        "spec": spec,
        "embeddings": path_string(&emb_path),
        "classes": set.len(),
        "dim": set.dim(),
    });
    if !args.embeddings_only {
        let root = args.output.join(DATASET_DIR);
        let listing = synth::synth_image_dataset(&spec, &root)?;
        log::info!(
            "wrote {} placeholder images under {}",
            listing.len(),
            root.display()
        );
        summary["dataset"] = json!(path_string(&root));
        summary["images"] = json!(listing.len());
    }
    Ok(summary)
}

fn params_from_flags(args: &PartitionArgs) -> CliResult<PartitionParams> {
    let Some(strategy) = args.strategy else {
        return usage("--strategy is required (or use --from-manifest)");
    };
    let (Some(n), Some(s)) = (args.num_subsets, args.classes_per_subset) else {
        return usage("--num-subsets and --classes-per-subset are required");
    };
    let Some(seed) = args.seed else {
        return usage("--seed is required: partitioning is randomized and has no implicit seed");
    };
    let mut params = PartitionParams::random(n, s, seed);
    params.strategy = strategy;
    params.clusters = args.clusters;
    params.top_k = args.top_k;
    if strategy == Strategy::Diverse && params.clusters.is_none() {
        params.clusters = Some(s);
    }
    params.images_per_class = args.images_per_class;
    if let Some(m) = args.copy_method {
        params.copy_method = m;
    } else {
        params.copy_method = CopyMethod::Copy;
    }
    if let Some(r) = args.retry_limit {
        params.retry_limit = r;
    }
    params.normalize_embeddings = args.normalize_embeddings;
    Ok(params)
}

fn reject_with_manifest(args: &PartitionArgs) -> CliResult<()> {
    let given = [
        ("--strategy", args.strategy.is_some()),
        ("--num-subsets", args.num_subsets.is_some()),
        ("--classes-per-subset", args.classes_per_subset.is_some()),
        ("--images-per-class", args.images_per_class.is_some()),
        ("--clusters", args.clusters.is_some()),
        ("--top-k", args.top_k.is_some()),
        ("--copy-method", args.copy_method.is_some()),
        ("--retry-limit", args.retry_limit.is_some()),
        ("--normalize-embeddings", args.normalize_embeddings),
        ("--seed", args.seed.is_some()),
    ];
    let clash: Vec<&str> = given.iter().filter(|g| g.1).map(|g| g.0).collect();
    if !clash.is_empty() {
        return usage(format!(
            "--from-manifest reuses the recorded parameters; drop {}",
            clash.join(", ")
        ));
    }
    Ok(())
}

struct PartitionInputs {
    params: PartitionParams,
    dataset: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    max_images_per_class: usize,
    recorded_digest: Option<String>,
}

fn resolve_partition(args: &PartitionArgs) -> CliResult<PartitionInputs> {
    match &args.from_manifest {
        None => Ok(PartitionInputs {
            params: params_from_flags(args)?,
            dataset: args.dataset.clone(),
            embeddings: args.embedding.embeddings.clone(),
            max_images_per_class: args.embedding.max_images_per_class,
            recorded_digest: None,
        }),
        Some(path) => {
            reject_with_manifest(args)?;
            let m = Manifest::read(path)?;
            let inputs = &m.provenance.inputs;
            Ok(PartitionInputs {
                dataset: args
                    .dataset
                    .clone()
                    .or_else(|| inputs.dataset.as_ref().map(PathBuf::from)),
                embeddings: args
                    .embedding
                    .embeddings
                    .clone()
                    .or_else(|| inputs.embeddings.as_ref().map(PathBuf::from)),
                max_images_per_class: inputs
                    .max_images_per_class
                    .unwrap_or(args.embedding.max_images_per_class),
                recorded_digest: m.embedding_digest.clone(),
                params: m.params,
            })
        }
    }
}

pub fn partition(args: &PartitionArgs) -> CliResult<Value> {
    let resolved = resolve_partition(args)?;
    let params = &resolved.params;
    params.validate()?;
    if params.strategy != Strategy::Random && resolved.embeddings.is_none() {
        return usage(format!(
            "embeddings required for the {} strategy: pass --embeddings",
            params.strategy
        ));
    }
    if params.copy_method == CopyMethod::Move && !args.allow_destructive {
        return usage(
            "--copy-method move relocates source images; pass --allow-destructive to confirm",
        );
    }
    if params.copy_method != CopyMethod::ManifestOnly && resolved.dataset.is_none() {
        return usage("--dataset is required unless --copy-method manifest-only");
    }

    let loaded: Option<LoadedEmbeddings> = resolved
        .embeddings
        .as_deref()
        .map(|p| {
            load_embeddings(
                p,
                args.embedding.listing.as_deref(),
                resolved.max_images_per_class,
            )
        })
        .transpose()?;
    if let (Some(rec), Some(l)) = (&resolved.recorded_digest, &loaded) {
        if *rec != l.digest {
            return Err(CliError::Core(fedsplit::Error::Manifest(format!(
                "{} does not match the recorded embedding digest {rec}",
                l.path.display()
            ))));
        }
    }

    let catalog = match (&resolved.dataset, &loaded) {
        (Some(root), _) => Catalog::scan(root)?,
        (None, Some(l)) => match &l.listing {
            Some(records) => Catalog::from_listing(records),
            None => Catalog::from_class_names(l.classes.names().iter().cloned()),
        },
        (None, None) => return usage("no class universe: pass --dataset or --embeddings"),
    };
    log::info!(
        "{} strategy: {} subsets x {} classes from {} classes",
        params.strategy,
        params.num_subsets,
        params.classes_per_subset,
        catalog.num_classes()
    );
    if params.images_per_class.is_some()
        && resolved.dataset.is_none()
        && loaded.as_ref().is_none_or(|l| l.listing.is_none())
    {
        return usage(
            "--images-per-class needs --dataset or a per-image listing to draw images from",
        );
    }

    let mut plan = partitioner::generate(&catalog, loaded.as_ref().map(|l| &l.classes), params)?;
    plan.embedding_digest = loaded.as_ref().map(|l| l.digest.clone());
    plan.provenance.inputs = InputRecord {
        dataset: resolved.dataset.as_deref().map(path_string),
        embeddings: resolved.embeddings.as_deref().map(path_string),
        max_images_per_class: loaded
            .as_ref()
            .and_then(|l| l.listing.as_ref())
            .map(|_| resolved.max_images_per_class),
    };
    if args.record_timestamp {
        plan.provenance.timestamp =
            Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    let dataset_root = resolved
        .dataset
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    let summary =
        partitioner::materialize(&plan, &dataset_root, &args.output, args.allow_destructive)?;
    log::info!(
        "placed {} files; manifest at {}",
        summary.files_placed,
        summary.manifest_path.display()
    );
    Ok(json!({
        "command": "partition",
        "manifest": path_string(&summary.manifest_path),
        "strategy": params.strategy,
        "subsets": plan.subsets.len(),
        "files_placed": summary.files_placed,
        "params": params,
    }))
}

pub fn metrics(args: &MetricsArgs) -> CliResult<Value> {
    let plan = Manifest::read(&args.manifest)?.into_plan()?;
    let loaded = args
        .embedding
        .embeddings
        .as_deref()
        .map(|p| {
            load_embeddings(
                p,
                args.embedding.listing.as_deref(),
                args.embedding.max_images_per_class,
            )
        })
        .transpose()?;
    match &loaded {
        None => log::warn!(
            "no --embeddings given: skipping diversity, intra-subset variance and coverage"
        ),
        Some(l) => {
            if plan
                .embedding_digest
                .as_ref()
                .is_some_and(|d| *d != l.digest)
            {
                log::warn!(
                    "{} differs from the embeddings the plan was built from",
                    l.path.display()
                );
            }
        }
    }
    let compare = args
        .compare
        .as_deref()
        .map(|p| Manifest::read(p).and_then(Manifest::into_plan))
        .transpose()?;
    let needs_seed =
        (compare.is_some() && args.pairing == PairingArg::Sampled) || args.within_samples.is_some();
    let seed = match (args.seed, needs_seed) {
        (Some(s), _) => s,
        (None, false) => metrics::DEFAULT_JACCARD_SEED,
        (None, true) => return usage("--seed is required for sampled Jaccard pairings"),
    };
    let options = ReportOptions {
        within_pairing: match args.within_samples {
            Some(n) => WithinPairing::Sampled {
                sample_size: n,
                seed,
            },
            None => WithinPairing::AllPairs,
        },
        cross_pairing: match args.pairing {
            PairingArg::Index => Pairing::IndexMatched,
            PairingArg::Sampled => Pairing::AllPairsSampled {
                sample_size: args.samples,
                seed,
            },
        },
    };
    let report = metrics::compute_report(
        &plan,
        loaded.as_ref().map(|l| &l.classes),
        compare.as_ref(),
        &options,
    )?;
    if let Err(msg) = report.check_bounds() {
        return Err(CliError::Core(fedsplit::Error::Degenerate(format!(
            "metric out of range: {msg}"
        ))));
    }
    if report.redundancy.is_none() {
        log::warn!("plan has a single subset: pairwise metrics are not applicable");
    }
    ensure_dir(&args.output)?;
    metrics::write_report(&report, &args.output)?;
    if args.redundancy_pairs {
        let path = args.output.join(metrics::REDUNDANCY_PAIRS_FILE);
        let file = File::create(&path).map_err(|e| fedsplit::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        metrics::write_redundancy_pairs(&plan, BufWriter::new(file))
            .map_err(|e| fedsplit::Error::Io { path, source: e })?;
    }
    let summary: BTreeMap<&str, Option<f64>> = metrics::summary_rows(&report).into_iter().collect();
    Ok(json!({
        "command": "metrics",
        "output": path_string(&args.output),
        "options": {
            "within_pairing": options.within_pairing,
            "cross_pairing": compare.as_ref().map(|_| options.cross_pairing),
            "embeddings": args.embedding.embeddings.as_deref().map(path_string),
        },
        "summary": summary,
    }))
}

fn labels_for(args: &ProjectArgs, names: &[String]) -> CliResult<Vec<String>> {
    let Some(path) = &args.manifest else {
        return Ok(vec![String::new(); names.len()]);
    };
    let plan = Manifest::read(path)?.into_plan()?;
    if let Some(id) = args.subset {
        let Some(subset) = plan.subsets.get(id) else {
            return usage(format!(
                "--subset {id} out of range: the plan has {} subsets",
                plan.subsets.len()
            ));
        };
        return Ok(names
            .iter()
            .map(|n| {
                if subset.classes.binary_search(n).is_ok() {
                    format!("subset_{id}")
                } else {
                    "other".into()
                }
            })
            .collect());
    }
    let assignment = plan
        .provenance
        .clustering
        .map(|c| c.assignment)
        .unwrap_or_default();
    Ok(names
        .iter()
        .map(|n| assignment.get(n).map(|c| c.to_string()).unwrap_or_default())
        .collect())
}

pub fn project(args: &ProjectArgs) -> CliResult<Value> {
    let Some(path) = &args.embedding.embeddings else {
        return usage("--embeddings is required");
    };
    let seed = match (args.method, args.seed) {
        (Method::Tsne, None) => return usage("--seed is required for t-SNE"),
        (_, s) => s.unwrap_or(0),
    };
    let loaded = load_embeddings(
        path,
        args.embedding.listing.as_deref(),
        args.embedding.max_images_per_class,
    )?;
    let labels = labels_for(args, loaded.classes.names())?;
    let options = ProjectOptions {
        method: args.method,
        pca_dims: args.pca_dims,
        perplexity: args.perplexity,
        iterations: args.iterations,
        learning_rate: args.learning_rate,
        early_exaggeration: args.early_exaggeration,
        seed,
    };
    if args.method == Method::Tsne {
        log::info!(
            "t-SNE on {} points, perplexity {}",
            loaded.classes.len(),
            projection::resolve_perplexity(options.perplexity, loaded.classes.len())
        );
    }
    let proj = projection::project(&loaded.classes, &labels, &options)?;
    ensure_dir(&args.output)?;
    let csv_path = args.output.join(PROJECTION_CSV);
    let mut csv = Vec::new();
    proj.write_csv(&mut csv).expect("in-memory write");
    write_file(&csv_path, csv)?;
    let json_path = args.output.join(PROJECTION_JSON);
    write_file(&json_path, proj.diagnostics_json())?;
    Ok(json!({
        "command": "project",
        "csv": path_string(&csv_path),
        "diagnostics": path_string(&json_path),
        "method": proj.method,
        "points": proj.points.len(),
        "embedding_digest": loaded.digest,
    }))
}
