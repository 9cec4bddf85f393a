//! Command implementations behind the `orbitax` binary: attach-to-seed
//! splitting, training, radius-gated ranking, evaluation, and geometric
//! diagnostics. Every command is deterministic given its seed; the
//! `--deterministic` flag additionally pins single-threaded execution
//! (the default and only mode of this implementation).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use orbitax_core::checkpoint::Checkpoint;
use orbitax_core::config::RunConfig;
use orbitax_core::data;
use orbitax_core::diagnostics::{angle_histograms, concentration_check, uniform_sphere_sample};
use orbitax_core::error::CoreError;
use orbitax_core::inference::{rank_candidates, RankedList};
use orbitax_core::metrics::{evaluate, mean_wu_palmer};
use orbitax_core::taxonomy::{compute_radii, split_leaves, Taxonomy};
use orbitax_core::train::{encode_taxonomy, run_training, Trainer};
use rand_chacha::rand_core::SeedableRng;

/// Process exit codes: 0 success, 1 usage error, 2 data error,
/// 3 numerical divergence.
pub fn exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Diverged => 3,
        CoreError::BadConfig(_) | CoreError::InvalidParameter(_) => 1,
        _ => 2,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "orbitax",
    about = "Hierarchy-aware concept embeddings on the unit hypersphere",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Run configuration file (TOML); flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Force single-threaded execution with fixed reduction order.
    /// This implementation is always single-threaded; the flag pins the
    /// guarantee for scripts.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Withhold leaves as test queries and emit the seed taxonomy.
    Split(SplitArgs),
    /// Train embeddings and write a checkpoint plus a loss log.
    Train(TrainArgs),
    /// Rank candidate parents for held-out queries.
    Rank(RankArgs),
    /// Score predictions against gold parents.
    Evaluate(EvaluateArgs),
    /// Concentration checks and angular histograms.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Full taxonomy edges (child<TAB>parent).
    #[arg(long)]
    pub edges: PathBuf,
    /// Fraction of leaves withheld as queries.
    #[arg(long)]
    pub test_frac: Option<f64>,
    /// Fraction of surviving seed edges to drop (robustness runs).
    #[arg(long = "drop-edges")]
    pub drop_edges: Option<f64>,
    /// Output directory for seed_edges.tsv and queries.tsv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Seed taxonomy edges.
    #[arg(long)]
    pub edges: PathBuf,
    /// Feature rows for every seed node.
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Per-epoch loss log output path.
    #[arg(long, default_value = "loss_log.tsv")]
    pub loss_log: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Disable the transport-field regularizer.
    #[arg(long)]
    pub no_svgd: bool,
    /// Disable the distributional containment loss.
    #[arg(long)]
    pub no_vmf: bool,
    /// Disable the geodesic triplet loss.
    #[arg(long)]
    pub no_geom: bool,
    /// Interaction kernel: vmf | rbf | imq.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Pin every concentration to a constant.
    #[arg(long)]
    pub constant_kappa: Option<f64>,
    /// Tie the vMF mean direction to the embedding itself.
    #[arg(long)]
    pub identity_mu: bool,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed taxonomy edges.
    #[arg(long)]
    pub edges: PathBuf,
    /// Features covering seed nodes and queries.
    #[arg(long)]
    pub features: PathBuf,
    /// Query file (query_id<TAB>golds); gold columns are ignored here.
    #[arg(long)]
    pub queries: PathBuf,
    /// Predictions output path.
    #[arg(long, default_value = "predictions.tsv")]
    pub out: PathBuf,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Radius gate: on | off.
    #[arg(long)]
    pub gate: Option<String>,
    /// Gate curvature.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold query file (query_id<TAB>golds).
    #[arg(long)]
    pub queries: PathBuf,
    /// Seed taxonomy edges, used for Wu&P similarity.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Report output path.
    #[arg(long, default_value = "report.txt")]
    pub out: PathBuf,
    /// Cutoffs for hit@k / recall@k.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Diagnose trained embeddings from this checkpoint (needs --edges and
    /// --features); without it, uniform sphere samples are used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Dimension for uniform sampling mode.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Sample count for uniform sampling mode.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Polar-cap half-width for the concentration check.
    #[arg(long, default_value_t = 0.2)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 60)]
    pub bins: usize,
    /// Histogram CSV output path.
    #[arg(long, default_value = "angles.csv")]
    pub out_csv: PathBuf,
    /// Summary output path.
    #[arg(long, default_value = "diagnosis.txt")]
    pub out_summary: PathBuf,
}

type Result<T> = std::result::Result<T, CoreError>;

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.training.seed = seed;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn run_split(args: &SplitArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(f) = args.test_frac {
        cfg.training.test_frac = f;
    }
    if let Some(f) = args.drop_edges {
        cfg.training.drop_edge_frac = f;
    }
    let edges = data::load_edges(&args.edges)?;
    let t = Taxonomy::from_edges(&edges, None)?;
    let (seed_tax, queries) = split_leaves(
        &t,
        cfg.training.test_frac,
        cfg.training.seed,
        cfg.training.drop_edge_frac,
    )?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CoreError::Io {
        path: args.out_dir.display().to_string(),
        source: e,
    })?;
    data::write_edges(&args.out_dir.join("seed_edges.tsv"), &seed_tax.edge_records())?;
    data::write_queries(&args.out_dir.join("queries.tsv"), &queries)?;
    println!(
        "split: {} seed nodes, {} seed edges, {} queries",
        seed_tax.len(),
        seed_tax.edge_records().len(),
        queries.len()
    );
    Ok(())
}

/// Applies train-command ablation flags onto the configuration.
fn apply_train_overrides(cfg: &mut RunConfig, args: &TrainArgs) {
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    if args.no_svgd {
        cfg.loss.svgd = false;
    }
    if args.no_vmf {
        cfg.loss.vmf = false;
    }
    if args.no_geom {
        cfg.loss.geom = false;
    }
    if let Some(k) = &args.kernel {
        cfg.loss.kernel = k.clone();
    }
    if let Some(v) = args.constant_kappa {
        cfg.model.constant_kappa = Some(v);
    }
    if args.identity_mu {
        cfg.model.identity_mu = true;
    }
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_train_overrides(&mut cfg, args);
    cfg.validate()?;
    let edges = data::load_edges(&args.edges)?;
    let t = Taxonomy::from_edges(&edges, None)?;
    let features = data::load_features(&args.features)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let mut trainer = Trainer::new(&cfg, &mut rng)?;

    let result = run_training(&cfg, &t, &features, &mut trainer);
    // On divergence the trainer still holds the last good parameters:
    // checkpoint them before surfacing the error.
    let mut ck = Checkpoint::new(trainer.params.clone(), &cfg);
    ck.optimizer = Some(trainer.opt.clone());
    ck.save(&args.out)?;
    let log = result?;

    let mut log_text = String::from("epoch\tgeom\tprob\tsvgd\ttotal\n");
    for (i, bd) in log.iter().enumerate() {
        log_text.push_str(&format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\n",
            i + 1,
            bd.geom,
            bd.prob,
            bd.svgd,
            bd.total
        ));
    }
    write_text(&args.loss_log, &log_text)?;
    if let Some(last) = log.last() {
        println!(
            "train: {} epochs, final loss {:.6} (geom {:.6} prob {:.6} svgd {:.6})",
            log.len(),
            last.total,
            last.geom,
            last.prob,
            last.svgd
        );
    } else {
        println!("train: 0 epochs, checkpoint equals initialization");
    }
    Ok(())
}

/// Ranks every query in `queries` against the seed taxonomy.
pub fn rank_queries(
    ck: &Checkpoint,
    cfg: &RunConfig,
    t: &Taxonomy,
    features: &BTreeMap<String, Vec<f64>>,
    query_ids: &[String],
    k: usize,
) -> Result<Vec<RankedList>> {
    let radii = compute_radii(t);
    let embeddings = encode_taxonomy(&ck.params, t, features)?;
    let gate = cfg.gate_config()?;
    let mut out = Vec::with_capacity(query_ids.len());
    for q in query_ids {
        let feat = features
            .get(q)
            .ok_or_else(|| CoreError::MissingFeatures(q.clone()))?;
        let zq = orbitax_core::encoder::encode(&ck.params, feat)?;
        out.push(rank_candidates(q, &zq, t, &radii, &embeddings, &gate, k)?);
    }
    Ok(out)
}

pub fn run_rank(args: &RankArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(k) = args.top_k {
        cfg.gate.top_k = k;
    }
    if let Some(g) = args.gamma {
        cfg.gate.gamma = g;
    }
    if let Some(mode) = &args.gate {
        cfg.gate.enabled = match mode.as_str() {
            "on" => true,
            "off" => false,
            other => {
                return Err(CoreError::BadConfig(format!(
                    "--gate must be on|off, got {other}"
                )))
            }
        };
    }
    cfg.validate()?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let edges = data::load_edges(&args.edges)?;
    let t = Taxonomy::from_edges(&edges, None)?;
    let features = data::load_features(&args.features)?;
    let queries = data::load_queries(&args.queries)?;
    let ids: Vec<String> = queries.into_iter().map(|q| q.id).collect();
    let lists = rank_queries(&ck, &cfg, &t, &features, &ids, cfg.gate.top_k)?;
    data::write_predictions(&args.out, &lists)?;
    println!("rank: {} queries, top-{}", lists.len(), cfg.gate.top_k);
    Ok(())
}

/// Renders the evaluation report; `wu_palmer` is None when no taxonomy was
/// supplied or nothing was measurable.
pub fn render_report(
    report: &orbitax_core::metrics::EvalReport,
    wu_palmer: Option<f64>,
) -> String {
    let mut s = String::from("# ranking evaluation\n");
    s.push_str(&format!("queries\t{}\n", report.query_count));
    for &k in &report.k_values {
        s.push_str(&format!("hit@{k}\t{:.4}\t{:.2}\n", report.hit_at[&k], 100.0 * report.hit_at[&k]));
    }
    for &k in &report.k_values {
        s.push_str(&format!(
            "recall@{k}\t{:.4}\t{:.2}\n",
            report.recall_at[&k],
            100.0 * report.recall_at[&k]
        ));
    }
    s.push_str(&format!("mean_rank\t{:.4}\n", report.mean_rank));
    s.push_str(&format!("mrr\t{:.4}\t{:.2}\n", report.mrr, report.mrr_scaled));
    match wu_palmer {
        Some(w) => s.push_str(&format!("wu_palmer\t{w:.4}\n")),
        None => s.push_str("wu_palmer\tn/a\n"),
    }
    s
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(CoreError::InvalidParameter(
            "k cutoffs must be positive".into(),
        ));
    }
    let predictions = data::load_predictions(&args.predictions)?;
    let queries = data::load_queries(&args.queries)?;
    let gold: BTreeMap<String, Vec<String>> = queries
        .into_iter()
        .map(|q| (q.id, q.gold_parents))
        .collect();
    let mut report = evaluate(&predictions, &gold, &args.k)?;
    let wp = match &args.edges {
        Some(p) => {
            let t = Taxonomy::from_edges(&data::load_edges(p)?, None)?;
            mean_wu_palmer(&t, &predictions, &gold)
        }
        None => None,
    };
    report.wu_palmer = wp;
    let text = render_report(&report, wp);
    write_text(&args.out, &text)?;
    print!("{text}");
    Ok(())
}

pub fn run_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let embeddings = match &args.checkpoint {
        Some(ckpt) => {
            let (Some(edges), Some(features)) = (&args.edges, &args.features) else {
                return Err(CoreError::InvalidParameter(
                    "--checkpoint mode needs --edges and --features".into(),
                ));
            };
            let ck = Checkpoint::load(ckpt)?;
            let t = Taxonomy::from_edges(&data::load_edges(edges)?, None)?;
            let f = data::load_features(features)?;
            encode_taxonomy(&ck.params, &t, &f)?
        }
        None => uniform_sphere_sample(args.dim, args.samples, cfg.training.seed)?,
    };
    let d = embeddings[0].dim();
    let hist = angle_histograms(&embeddings, args.bins)?;
    let (empirical, bound, pass) =
        concentration_check(d, args.epsilon, args.samples.max(1000), cfg.training.seed)?;
    let mut summary = hist.summary();
    summary.push_str(&format!(
        "concentration_epsilon: {}\nconcentration_empirical: {empirical:.6}\n\
         concentration_bound: {bound:.6}\nconcentration_pass: {pass}\n",
        args.epsilon
    ));
    write_text(&args.out_csv, &hist.to_csv())?;
    write_text(&args.out_summary, &summary)?;
    print!("{summary}");
    Ok(())
}

/// Dispatches a parsed command; returns a process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Split(a) => run_split(a),
        Command::Train(a) => run_train(a),
        Command::Rank(a) => run_rank(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
