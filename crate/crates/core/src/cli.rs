//! `semgraph` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 infeasible instance.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::codec::{self, OmissionProfile};
use crate::cost_model::{dbm_to_watts, params_from_table, SystemParams};
use crate::generator::{self, GeneratorConfig};
use crate::kg;
use crate::optimizer::{self, Mode, OptimizeError};
use crate::prob_graph;
use crate::sweep::{self, Axis, Method, ProfileSource, SweepSpec};

#[derive(Parser, Debug)]
#[command(
    name = "semgraph",
    version,
    about = "Probability-graph semantic compression and energy optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic sample corpus (JSON lines).
    Gen(GenArgs),
    /// Build a probability-graph knowledge base from a corpus.
    BuildKb {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress a knowledge graph against a knowledge base.
    Compress {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
        rounds: u32,
    },
    /// Restore a knowledge graph from a compressed message.
    Decompress {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure per-stage omission ratios of a corpus.
    Profile {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
        rounds: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one power/omission instance and print the solution as JSON.
    Optimize(OptimizeArgs),
    /// Run a parameter sweep and write CSV.
    Sweep {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_parser = sweep::PRESETS)]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SEMGRAPH_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    num_samples: u32,
    #[arg(long, default_value_t = 400)]
    num_pairs: u32,
    #[arg(long, default_value_t = 4)]
    relations_per_pair: u32,
    #[arg(long, default_value_t = 0.5)]
    skew: f64,
    #[arg(long, default_value_t = 100)]
    triples_per_sample: u32,
    #[arg(long, default_value_t = 0.0)]
    coherence: f64,
    /// Tune skew and coherence until the measured `q1,q2` is within 0.05.
    #[arg(long, value_parser = parse_ratios)]
    calibrate: Option<Ratios>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Strict,
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Jccpg,
    Simplified,
    Traditional,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    /// TOML parameter file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated omission ratios, e.g. `0.5,0.5`.
    #[arg(long, value_parser = parse_ratios, conflicts_with = "profile")]
    q: Option<Ratios>,
    /// Profile JSON written by `profile`.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Strict)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Jccpg)]
    method: MethodArg,
}

#[derive(Clone, Debug, PartialEq)]
struct Ratios(Vec<f64>);

fn parse_ratios(s: &str) -> Result<Ratios, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Ratios)
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<OptimizeError>() {
                Some(OptimizeError::Infeasible) => 2,
                _ => 1,
            }
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => {
            let mut cfg = GeneratorConfig {
                num_samples: a.num_samples,
                num_pairs: a.num_pairs,
                relations_per_pair: a.relations_per_pair,
                skew: a.skew,
                triples_per_sample: a.triples_per_sample,
                seed: a.seed,
                coherence: a.coherence,
            };
            if let Some(Ratios(target)) = a.calibrate {
                let [q1, q2] = target[..] else {
                    bail!("--calibrate takes exactly two ratios");
                };
                let (tuned, q) = generator::calibrate(&cfg, [q1, q2], 0.05)?;
                eprintln!(
                    "calibrated skew={} coherence={} q={:?}",
                    tuned.skew,
                    tuned.coherence,
                    q.ratios()
                );
                cfg = tuned;
            }
            let ds = generator::generate_corpus(&cfg)?;
            let mut out = Vec::new();
            kg::write_dataset(&ds, &mut out)?;
            write_file(&a.out, &out)?;
        }
        Command::BuildKb { corpus, out } => {
            let ds = read_dataset(&corpus)?;
            let pg = prob_graph::build_probability_graph(&ds);
            write_file(&out, &prob_graph::save_snapshot(&pg)?)?;
        }
        Command::Compress {
            kb,
            input,
            out,
            rounds,
        } => {
            let mut pg = read_kb(&kb)?;
            let g = kg::parse_graph(&read_file(&input)?, &mut pg.vocab)?;
            let msg = codec::compress(&g, &pg, rounds);
            write_file(&out, &codec::write_message(&msg, &pg.vocab)?)?;
        }
        Command::Decompress { kb, input, out } => {
            let mut pg = read_kb(&kb)?;
            let msg = codec::read_message(&read_file(&input)?, &mut pg.vocab)?;
            let g = codec::decompress(&msg, &pg)?;
            write_file(&out, &kg::serialize_graph(&g, &pg.vocab)?)?;
        }
        Command::Profile {
            kb,
            corpus,
            rounds,
            out,
        } => {
            let pg = read_kb(&kb)?;
            let file =
                fs::File::open(&corpus).with_context(|| format!("reading {}", corpus.display()))?;
            let ds = kg::parse_dataset_with(BufReader::new(file), pg.vocab.clone())?;
            let q = codec::measure_omission_profile(&ds, &pg, rounds)?;
            let mut json = serde_json::to_vec(&q)?;
            json.push(b'\n');
            match out {
                Some(path) => write_file(&path, &json)?,
                None => io::stdout().write_all(&json)?,
            }
        }
        Command::Optimize(a) => return optimize(a),
        Command::Sweep { spec, preset, out } => {
            let spec = match (spec, preset) {
                (Some(path), _) => load_sweep_spec(&path)?,
                (None, Some(name)) => {
                    sweep::preset(&name).ok_or_else(|| anyhow!("unknown preset {name}"))?
                }
                (None, None) => bail!("one of --spec or --preset is required"),
            };
            let rows = sweep::run_sweep(&spec)?;
            let mut csv = Vec::new();
            sweep::write_csv(&rows, &mut csv)?;
            match out {
                Some(path) => write_file(&path, &csv)?,
                None => io::stdout().write_all(&csv)?,
            }
        }
    }
    Ok(0)
}

fn optimize(a: OptimizeArgs) -> Result<i32> {
    let (params, config_q) = match &a.config {
        Some(path) => {
            load_params(&fs::read_to_string(path).with_context(|| path.display().to_string())?)?
        }
        None => (SystemParams::default(), None),
    };
    let q = if let Some(Ratios(r)) = a.q {
        Some(OmissionProfile::new(r)?)
    } else if let Some(path) = &a.profile {
        Some(
            serde_json::from_slice::<OmissionProfile>(&read_file(path)?)
                .map_err(anyhow::Error::from)
                .and_then(|p| Ok(OmissionProfile::new(p.ratios().to_vec())?))?,
        )
    } else {
        config_q
    };
    let mode = match a.mode {
        ModeArg::Strict => Mode::Strict,
        ModeArg::PaperLiteral => Mode::PaperLiteral,
    };
    let need_q = || {
        q.clone().ok_or_else(|| {
            anyhow!("omission ratios required: use --q, --profile or q_ratios in the config")
        })
    };
    let solution = match a.method {
        MethodArg::Jccpg => optimizer::optimize(&params, &need_q()?, mode)?,
        MethodArg::Simplified => optimizer::baseline_simplified(&params, &need_q()?, mode)?,
        MethodArg::Traditional => optimizer::baseline_traditional(&params)?,
    };
    println!("{}", serde_json::to_string_pretty(&solution)?);
    Ok(if solution.feasible { 0 } else { 2 })
}

/// Parses a TOML parameter table, accepting `max_power_dbm` in place of
/// `max_power_w`.
pub fn params_table(mut table: toml::Table) -> Result<(SystemParams, Option<OmissionProfile>)> {
    if let Some(v) = table.remove("max_power_dbm") {
        if table.contains_key("max_power_w") {
            bail!("give max_power_w or max_power_dbm, not both");
        }
        let dbm = as_f64(&v).ok_or_else(|| anyhow!("max_power_dbm must be a number"))?;
        table.insert("max_power_w".into(), toml::Value::Float(dbm_to_watts(dbm)));
    }
    Ok(params_from_table(table)?)
}

fn load_params(text: &str) -> Result<(SystemParams, Option<OmissionProfile>)> {
    params_table(text.parse::<toml::Table>()?)
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(f) => Some(*f),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Sweep spec file:
///
/// ```toml
/// axis = "bandwidth_hz"
/// values = [2e6, 4e6]
/// methods = ["jccpg", "traditional"]
/// q_ratios = [0.5, 0.5]        # or: corpus = "corpus.jsonl"
/// [params]
/// max_power_dbm = 30
/// ```
///
/// A relative `corpus` path is resolved against the spec file's directory.
pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let mut table: toml::Table = text.parse()?;
    let axis: Axis = table
        .remove("axis")
        .ok_or_else(|| anyhow!("sweep spec needs `axis`"))?
        .try_into()?;
    let values = table
        .remove("values")
        .and_then(|v| v.as_array().cloned())
        .ok_or_else(|| anyhow!("sweep spec needs a `values` array"))?
        .iter()
        .map(|v| as_f64(v).ok_or_else(|| anyhow!("axis values must be numbers")))
        .collect::<Result<Vec<_>>>()?;
    let methods: Vec<Method> = match table.remove("methods") {
        Some(v) => v.try_into()?,
        None => vec![Method::Jccpg, Method::Simplified, Method::Traditional],
    };
    let (params, _) = match table.remove("params") {
        Some(toml::Value::Table(t)) => params_table(t)?,
        Some(_) => bail!("`params` must be a table"),
        None => (SystemParams::default(), None),
    };
    let q = table.remove("q_ratios");
    let corpus = table.remove("corpus");
    let profile = match (q, corpus) {
        (Some(q), None) => ProfileSource::Ratios(OmissionProfile::new(
            q.as_array()
                .ok_or_else(|| anyhow!("q_ratios must be an array"))?
                .iter()
                .map(|v| as_f64(v).ok_or_else(|| anyhow!("q_ratios must be numbers")))
                .collect::<Result<_>>()?,
        )?),
        (None, Some(toml::Value::String(c))) => {
            let dir = path.parent().unwrap_or(Path::new("."));
            ProfileSource::Corpus(dir.join(c))
        }
        (None, None) => ProfileSource::Ratios(OmissionProfile::new(vec![0.5, 0.5])?),
        _ => bail!("give either q_ratios or a corpus path, not both"),
    };
    if let Some(k) = table.keys().next() {
        bail!("unknown sweep spec key `{k}`");
    }
    Ok(SweepSpec {
        axis,
        values,
        methods,
        params,
        profile,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<kg::SampleDataset> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(kg::parse_dataset(BufReader::new(file))?)
}

fn read_kb(path: &Path) -> Result<prob_graph::ProbabilityGraph> {
    Ok(prob_graph::load_snapshot(&read_file(path)?)?)
}
