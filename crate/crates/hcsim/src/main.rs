//! Command line front end. Three subcommands: `analyze` solves the share
//! program and prints bounds for a query and statistics, `simulate` runs
//! an algorithm on concrete or generated data and verifies it against
//! the oracle, `gen` writes a generated relation as TSV.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use hcsim::bounds::{self, Units};
use hcsim::error::{Error, Result};
use hcsim::harness::{
    gen_matching_relation, gen_uniform_relation, gen_zipf_relation, read_tsv_relation,
    report_to_csv, run_experiment, write_tsv_relation, Algorithm, ExperimentConfig,
    RelationSource, ValueDictionary,
};
use hcsim::packing::{enumerate_packing_vertices, max_packing_value, weighting_to_json};
use hcsim::query::{parse, Query};
use hcsim::ratio::{rat_to_f64, rat_to_string};
use hcsim::shares::{lp_vs_closed_form, solve_share_dual_lp, solve_share_lp, space_exponent};
use hcsim::stats::{compute_simple_stats, Instance, Relation};

#[derive(Parser)]
#[command(
    name = "hcsim",
    version,
    about = "Share optimization, load bounds and one-round shuffle simulation \
             for full conjunctive queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal shares, load formulas and lower bounds for a query.
    Analyze(AnalyzeArgs),
    /// Run an algorithm over seeds and verify against the oracle.
    Simulate(SimulateArgs),
    /// Generate a relation and write it as TSV.
    Gen(GenArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Query, inline or a path to a file holding it.
    #[arg(long)]
    query: String,
    /// Relation data as NAME=PATH (TSV); enables the skew-aware bound.
    #[arg(long = "rel")]
    rels: Vec<String>,
    /// Relation cardinality as NAME=COUNT, when no data file exists.
    #[arg(long = "m")]
    sizes: Vec<String>,
    /// Domain size; required with --m, overrides inference with --rel.
    #[arg(long)]
    n: Option<u64>,
    /// Number of servers.
    #[arg(long)]
    p: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Query, inline or a path to a file holding it.
    #[arg(long)]
    query: String,
    /// NAME=SPEC where SPEC is a TSV path or gen:uniform,m=.. /
    /// gen:matching,m=.. / gen:zipf,m=..,s=..
    #[arg(long = "rel")]
    rels: Vec<String>,
    /// Domain size; required when any relation is generated.
    #[arg(long)]
    n: Option<u64>,
    /// Number of servers.
    #[arg(long)]
    p: u64,
    /// Comma-separated seed list.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// hc-optimal, hc-equal, hash-join, skew-join or bin-combination.
    #[arg(long, default_value = "hc-optimal")]
    algo: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json (full report) or csv (per-seed loads only).
    #[arg(long, default_value = "json")]
    format: String,
    /// Measure loads only: skip output materialization and verification.
    #[arg(long)]
    loads_only: bool,
}

#[derive(Args)]
struct GenArgs {
    /// uniform, matching or zipf.
    #[arg(long)]
    dist: String,
    /// Domain size.
    #[arg(long)]
    n: u64,
    /// Number of distinct tuples.
    #[arg(long)]
    m: u64,
    /// Tuple width.
    #[arg(long, default_value_t = 2)]
    arity: usize,
    /// Zipf exponent (zipf only).
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Inline query text, or the content of the file it names.
fn load_query(spec: &str) -> Result<String> {
    let path = Path::new(spec);
    if path.is_file() {
        std::fs::read_to_string(path)
            .map(|s| s.trim().to_string())
            .map_err(|e| Error::io(spec.to_string(), e))
    } else {
        Ok(spec.to_string())
    }
}

fn split_kv(spec: &str) -> Result<(&str, &str)> {
    spec.split_once('=').ok_or_else(|| {
        Error::InvalidArgument(format!("expected NAME=VALUE, got {spec:?}"))
    })
}

fn emit(value: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, value).map_err(|e| Error::io(path.display().to_string(), e))
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            // A closed pipe (e.g. piping into head) is not an error.
            match writeln!(stdout, "{value}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => other.map_err(|e| Error::io("<stdout>", e)),
            }
        }
    }
}

/// Per-atom cardinalities from --rel files or --m pairs, plus the
/// instance itself when files were given.
fn analyze_inputs(
    q: &Query,
    args: &AnalyzeArgs,
) -> Result<(u64, Vec<u64>, Option<Instance>)> {
    if !args.rels.is_empty() && !args.sizes.is_empty() {
        return Err(Error::InvalidArgument(
            "give either --rel data files or --m cardinalities, not both".into(),
        ));
    }
    if !args.rels.is_empty() {
        let mut dict = ValueDictionary::default();
        let mut rels: Vec<Relation> = Vec::new();
        for spec in &args.rels {
            let (name, path) = split_kv(spec)?;
            let path = Path::new(path);
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let numeric = text
                .lines()
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .flat_map(|l| l.split('\t'))
                .all(|f| f.trim().parse::<u64>().map(|v| v >= 1).unwrap_or(false));
            drop(text);
            rels.push(read_tsv_relation(path, name, numeric, &mut dict)?);
        }
        let n = args.n.unwrap_or_else(|| {
            rels.iter().map(Relation::max_value).max().unwrap_or(2).max(2)
        });
        let inst = Instance::new(q, n, rels)?;
        let stats = compute_simple_stats(q, &inst)?;
        Ok((n, stats.m.clone(), Some(inst)))
    } else {
        let n = args.n.ok_or_else(|| {
            Error::InvalidArgument("--m cardinalities need an explicit --n".into())
        })?;
        let mut m = vec![None; q.num_atoms()];
        for spec in &args.sizes {
            let (name, count) = split_kv(spec)?;
            let j = q.atom_index(name)?;
            m[j] = Some(count.parse::<u64>().map_err(|_| {
                Error::InvalidArgument(format!("bad cardinality {count:?} for {name}"))
            })?);
        }
        let m = m
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                v.ok_or_else(|| Error::UnknownRelation(q.atoms[j].relation.clone()))
            })
            .collect::<Result<Vec<u64>>>()?;
        Ok((n, m, None))
    }
}

fn analyze(args: &AnalyzeArgs) -> Result<Value> {
    let text = load_query(&args.query)?;
    let q = parse(&text)?;
    let (n, m, inst) = analyze_inputs(&q, args)?;
    let log_n = (n as f64).log2();
    let bits: Vec<f64> = q
        .atoms
        .iter()
        .zip(&m)
        .map(|(atom, &mj)| mj as f64 * atom.arity() as f64 * log_n)
        .collect();

    let vertices = enumerate_packing_vertices(&q)?;
    let assignment = solve_share_lp(&q, &bits, args.p)?;
    let (dual_value, dual_f, dual_cap) = solve_share_dual_lp(&q, &bits, args.p)?;
    let (lp_load, vertex_load) = lp_vs_closed_form(&q, &bits, args.p)?;
    let (epsilon, broadcast) = space_exponent(&q, &bits, args.p)?;
    let simple = bounds::l_lower_simple_report(&q, &bits, args.p, Units::Bits)?;
    let m_f64: Vec<f64> = m.iter().map(|&v| v as f64).collect();
    let simple_tuples = bounds::l_lower_simple_report(&q, &m_f64, args.p, Units::Tuples)?;

    let mut report = serde_json::Map::new();
    report.insert("query".into(), json!(text));
    report.insert("p".into(), json!(args.p));
    report.insert("n".into(), json!(n));
    report.insert(
        "statistics".into(),
        json!(q
            .atoms
            .iter()
            .enumerate()
            .map(|(j, atom)| json!({
                "name": atom.relation,
                "m": m[j],
                "bits": bits[j],
            }))
            .collect::<Vec<Value>>()),
    );
    report.insert(
        "packing_vertices".into(),
        Value::Array(vertices.iter().map(|u| weighting_to_json(u)).collect()),
    );
    if let Ok(tau) = max_packing_value(&q) {
        report.insert("max_packing_value".into(), json!(rat_to_string(&tau)));
    }
    report.insert("share_lp".into(), assignment.to_json(&q));
    report.insert(
        "share_lp_lambda".into(),
        json!(rat_to_string(&assignment.lambda)),
    );
    report.insert("optimal_load_bits".into(), json!(assignment.load_bits()));
    report.insert(
        "dual".into(),
        json!({
            "value": rat_to_string(&dual_value),
            "f": dual_f.iter().map(rat_to_string).collect::<Vec<String>>(),
            "f_cap": rat_to_string(&dual_cap),
            "matches_primal": rat_to_f64(&dual_value) == rat_to_f64(&assignment.lambda),
        }),
    );
    report.insert(
        "lp_vs_vertex".into(),
        json!({ "lp_bits": lp_load, "vertex_bits": vertex_load }),
    );
    report.insert(
        "space_exponent".into(),
        json!({ "epsilon": epsilon, "broadcast": broadcast }),
    );
    report.insert("l_lower_simple".into(), simple.to_json(&q));
    report.insert("l_lower_simple_tuples".into(), simple_tuples.to_json(&q));
    if let Some(inst) = &inst {
        let skew_bits = bounds::l_lower_skew(&q, inst, args.p, Units::Bits)?;
        let skew_tuples = bounds::l_lower_skew(&q, inst, args.p, Units::Tuples)?;
        report.insert("l_lower_skew".into(), skew_bits.to_json(&q));
        report.insert("l_lower_skew_tuples".into(), skew_tuples.to_json(&q));
    }
    Ok(Value::Object(report))
}

fn simulate(args: &SimulateArgs) -> Result<Value> {
    let seeds = args
        .seeds
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidArgument(format!("bad seed {s:?}")))
        })
        .collect::<Result<Vec<u64>>>()?;
    let relations = args
        .rels
        .iter()
        .map(|spec| {
            let (name, source) = split_kv(spec)?;
            Ok((name.to_string(), RelationSource::parse(source)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = ExperimentConfig {
        query: load_query(&args.query)?,
        relations,
        n: args.n,
        p: args.p,
        seeds,
        algorithm: Algorithm::parse(&args.algo)?,
        loads_only: args.loads_only,
    };
    run_experiment(&cfg)
}

fn gen(args: &GenArgs) -> Result<()> {
    let rel = match args.dist.as_str() {
        "uniform" => gen_uniform_relation("R", args.n, args.arity, args.m, args.seed)?,
        "matching" => gen_matching_relation("R", args.n, args.m, args.arity, args.seed)?,
        "zipf" => gen_zipf_relation("R", args.n, args.m, args.arity, args.s, args.seed)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown distribution {other:?} (expected uniform, matching or zipf)"
            )))
        }
    };
    write_tsv_relation(&rel, &args.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => {
            let report = analyze(&args)?;
            emit(&serde_json::to_string_pretty(&report)?, args.out.as_ref())
        }
        Command::Simulate(args) => {
            let report = simulate(&args)?;
            let rendered = match args.format.as_str() {
                "json" => serde_json::to_string_pretty(&report)?,
                "csv" => report_to_csv(&report),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown format {other:?} (expected json or csv)"
                    )))
                }
            };
            emit(&rendered, args.out.as_ref())
        }
        Command::Gen(args) => gen(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
