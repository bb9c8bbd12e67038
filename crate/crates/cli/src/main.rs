//! `mtfh`: train, encode, query, evaluate and benchmark cross-modal hash models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mtfh::affinity::AffinityKind;
use mtfh::codes::{CodeMatrix, PACKED_MAGIC};
use mtfh::dataset::{load_modality, read_labels, split, synth_multimodal, write_modality, ModalityData};
use mtfh::encoder::{encode, translate, Translation};
use mtfh::eval::{random_baseline, report, ApNorm, RelevanceJudge};
use mtfh::hashfn::AnchorScheme;
use mtfh::model;
use mtfh::optimizer::{OptimizerConfig, Scheme};
use mtfh::pipeline::{bench, bench_csv, train_model, RunConfig};
use mtfh::retrieval::{query_codes, rank_all, CodeIndex, Direction, Hit, RankedResult};
use mtfh::{Error, Modality};

#[derive(Parser)]
#[command(name = "mtfh", version, about = "Cross-modal hashing by matrix tri-factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-modality dataset.
    Synth(SynthArgs),
    /// Learn codes and hash functions, then save a model file.
    Train(TrainArgs),
    /// Hash the rows of a feature file.
    Encode(EncodeArgs),
    /// Rank a code database for every query row.
    Query(QueryArgs),
    /// Score a ranking file against labels.
    Eval(EvalArgs),
    /// Compare optimization schemes over repeated seeds.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    d1: usize,
    #[arg(long, default_value_t = 30)]
    d2: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for x_features.csv, x_labels.csv, y_features.csv, y_labels.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    features_x: PathBuf,
    #[arg(long)]
    features_y: PathBuf,
    #[arg(long)]
    labels_x: PathBuf,
    #[arg(long)]
    labels_y: PathBuf,
}

impl DataArgs {
    fn load(&self) -> Result<(ModalityData, ModalityData)> {
        Ok((
            load_modality(&self.features_x, &self.labels_x)?,
            load_modality(&self.features_y, &self.labels_y)?,
        ))
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 16)]
    q1: usize,
    #[arg(long, default_value_t = 16)]
    q2: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Ensemble passes per block update (odd).
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Anchor points per modality.
    #[arg(long, default_value_t = 500)]
    anchors: usize,
    /// Anchor selection: rnd or km.
    #[arg(long, default_value = "rnd")]
    scheme: AnchorScheme,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    /// Label affinity: inner or rbf.
    #[arg(long, default_value = "inner")]
    affinity: AffinityKind,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn config(&self, optimizer: Scheme) -> RunConfig {
        RunConfig {
            optimizer: OptimizerConfig {
                q1: self.q1,
                q2: self.q2,
                alpha: self.alpha,
                beta: self.beta,
                lambda: self.lambda,
                rounds: self.rounds,
                max_iter: self.max_iter,
                tol: self.tol,
                seed: self.seed,
                scheme: optimizer,
            },
            anchors: self.anchors,
            anchor_scheme: self.scheme,
            eta: self.eta,
            affinity: self.affinity,
            sigma: self.sigma,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Optimization scheme: ercd or dcc.
    #[arg(long, default_value = "ercd")]
    optimizer: Scheme,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the objective after every iteration.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// x or y.
    #[arg(long)]
    modality: Modality,
    #[arg(long)]
    out: PathBuf,
    /// Write packed bits instead of CSV.
    #[arg(long)]
    packed: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query features of the direction's query modality.
    #[arg(long)]
    features: PathBuf,
    /// Database codes (CSV or packed) of the direction's database modality.
    #[arg(long)]
    database: PathBuf,
    /// One id per database row; defaults to the row number.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    direction: Direction,
    #[arg(long)]
    topk: Option<usize>,
    /// Compare in the query modality's code space by translating the
    /// database instead of the queries.
    #[arg(long)]
    query_space: bool,
    /// Ranked CSV to write; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ranked CSV with header query,rank,db_id,distance.
    #[arg(long)]
    ranking: PathBuf,
    #[arg(long)]
    query_labels: PathBuf,
    #[arg(long)]
    db_labels: PathBuf,
    /// Database ids, one per row of the database labels.
    #[arg(long)]
    ids: Option<PathBuf>,
    /// Cutoffs for mAP@K.
    #[arg(long, value_delimiter = ',')]
    map_at: Vec<usize>,
    /// Cutoffs for precision@K and recall@K.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    ks: Vec<usize>,
    /// Normalize truncated AP by relevant items in the database rather than the window.
    #[arg(long)]
    database_norm: bool,
    /// Output directory for metrics.csv, pr_curve.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "dcc,ercd")]
    optimizers: Vec<Scheme>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Fraction of samples held out as queries.
    #[arg(long, default_value_t = 0.1)]
    query_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// CSV report; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Encode(a) => encode_cmd(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(2, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MTFH_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("MTFH_THREADS={v:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let (x, y) = synth_multimodal(a.n_per_class, a.classes, a.d1, a.d2, a.separation, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_modality(&x, a.out.join("x_features.csv"), a.out.join("x_labels.csv"))?;
    write_modality(&y, a.out.join("y_features.csv"), a.out.join("y_labels.csv"))?;
    println!("wrote {} samples per modality to {}", x.n(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (x, y) = a.data.load()?;
    let cfg = a.model.config(a.optimizer);
    log::info!("training on {} x {} samples", x.n(), y.n());
    let out = train_model(&x, &y, &cfg)?;
    model::save(&out.model, &a.out)?;
    if let Some(path) = &a.trace {
        let mut csv = String::from("iteration,objective\n");
        let _ = writeln!(csv, "0,{}", out.state.initial_objective);
        for (i, v) in out.state.objective_trace.iter().enumerate() {
            let _ = writeln!(csv, "{},{v}", i + 1);
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "final objective {} after {} iterations",
        out.model.meta.final_objective, out.model.meta.iterations
    );
    Ok(())
}

fn encode_cmd(a: EncodeArgs) -> Result<()> {
    let m = model::load(&a.model)?;
    let features = mtfh::dataset::read_matrix_csv(&a.features)?;
    let codes = encode(&features, &m, a.modality)?;
    if a.packed {
        codes.write_packed(&a.out)?;
    } else {
        codes.write_csv(&a.out)?;
    }
    println!("encoded {} rows into {} bits", codes.rows(), codes.bits());
    Ok(())
}

fn read_codes(path: &Path, width: usize) -> Result<CodeMatrix> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let codes = if bytes.starts_with(PACKED_MAGIC) {
        CodeMatrix::read_packed(path)?
    } else {
        CodeMatrix::read_csv(path)?
    };
    if codes.rows() == 0 {
        return Ok(CodeMatrix::empty(width));
    }
    Ok(codes)
}

fn read_ids(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::Parse { path: path.into(), message: format!("row {i}: bad id {l:?}") }.into())
        })
        .collect()
}

fn query(a: QueryArgs) -> Result<()> {
    let m = model::load(&a.model)?;
    let features = mtfh::dataset::read_matrix_csv(&a.features)?;
    let db_mod = a.direction.database_modality();
    let mut db = read_codes(&a.database, m.bits(db_mod))?;
    let q = if a.query_space && a.direction.is_cross_modal() {
        db = match a.direction {
            Direction::I2T => translate(&db, &m, Translation::YToQ1)?,
            _ => translate(&db, &m, Translation::XToQ2)?,
        };
        encode(&features, &m, a.direction.query_modality())?
    } else {
        query_codes(&features, &m, a.direction)?
    };
    let index = match &a.ids {
        Some(p) => CodeIndex::with_ids(&db, read_ids(p)?)?,
        None => CodeIndex::new(&db),
    };
    let rankings = rank_all(&q, &index, a.topk)?;
    let mut csv = String::from("query,rank,db_id,distance\n");
    for (qi, r) in rankings.iter().enumerate() {
        for (k, h) in r.hits.iter().enumerate() {
            let _ = writeln!(csv, "{qi},{},{},{}", k + 1, h.id, h.distance);
        }
    }
    match &a.out {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn read_ranking(path: &Path, queries: usize) -> Result<Vec<RankedResult>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |msg: String| Error::Parse { path: path.into(), message: msg };
    match lines.next() {
        Some(h) if h.trim() == "query,rank,db_id,distance" => {}
        Some(h) => return Err(bad(format!("unexpected header {h:?}")).into()),
        None => return Err(bad("empty ranking file".into()).into()),
    }
    let mut by_query: BTreeMap<usize, Vec<(usize, Hit)>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (f.len() == 4)
            .then(|| Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?, f[3].parse().ok()?)))
            .flatten();
        let Some((q, rank, id, distance)) = parsed else {
            return Err(bad(format!("row {}: expected query,rank,db_id,distance", i + 1)).into());
        };
        if q >= queries {
            return Err(bad(format!("row {}: query {q} has no label row", i + 1)).into());
        }
        by_query.entry(q).or_default().push((rank, Hit { id, distance }));
    }
    if by_query.is_empty() {
        return Err(bad("ranking file has no rows".into()).into());
    }
    let mut out = vec![RankedResult::default(); queries];
    for (q, mut hits) in by_query {
        hits.sort_by_key(|(rank, _)| *rank);
        out[q].hits = hits.into_iter().map(|(_, h)| h).collect();
    }
    Ok(out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let ql = read_labels(&a.query_labels)?;
    let dl = read_labels(&a.db_labels)?;
    let rankings = read_ranking(&a.ranking, ql.rows())?;
    let mut judge = RelevanceJudge::new(ql, dl)?;
    if let Some(p) = &a.ids {
        judge = judge.with_ids(&read_ids(p)?)?;
    }
    let norm = if a.database_norm { ApNorm::Database } else { ApNorm::Window };
    let r = report(&rankings, &judge, &a.map_at, &a.ks, norm)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut csv = String::from("metric,k,value\n");
    let _ = writeln!(csv, "map,,{}", r.map);
    for (k, v) in &r.map_at {
        let _ = writeln!(csv, "map,{k},{v}");
    }
    for (k, v) in &r.precision_at {
        let _ = writeln!(csv, "precision,{k},{v}");
    }
    for (k, v) in &r.recall_at {
        let _ = writeln!(csv, "recall,{k},{v}");
    }
    fs::write(a.out.join("metrics.csv"), csv).context("writing metrics.csv")?;

    let mut pr = String::from("rank,recall,precision\n");
    for (i, (rc, pc)) in r.pr_curve.iter().enumerate() {
        let _ = writeln!(pr, "{},{rc},{pc}", i + 1);
    }
    fs::write(a.out.join("pr_curve.csv"), pr).context("writing pr_curve.csv")?;

    let summary = serde_json::json!({
        "norm": norm,
        "baseline_map": random_baseline(&judge),
        "metrics": r,
    });
    fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?).context("writing summary.json")?;
    println!("mAP {:.4} over {} evaluable of {} queries", r.map, r.evaluable_queries, r.queries);
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    if a.optimizers.is_empty() {
        bail!("no optimization schemes given");
    }
    let (x, y) = a.data.load()?;
    let data = split(&x, &y, a.query_fraction, a.split_seed)?;
    let rows = bench(&data, &a.model.config(Scheme::Ercd), &a.optimizers, a.trials)?;
    let csv = bench_csv(&rows);
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
