//! `kgcal` command-line front end.

mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use clap::parser::ValueSource;

use config::{RunConfig, UsageError, KEYS};

const GLOBAL: &[&str] = &["seed", "threads", "deterministic", "log_every"];

/// Subcommands with their one-line description and accepted keys.
const SUBCOMMANDS: &[(&str, &str, &[&str])] = &[
    ("ingest", "Read TSV triple files into a graph snapshot", &["triples", "no_reciprocals", "out"]),
    (
        "train-lp",
        "Train the ComplEx link predictor",
        &["kg", "out", "dim", "steps", "learning_rate", "batch_size", "n3_weight", "init_std", "loss", "normalization"],
    ),
    (
        "sample-queries",
        "Sample labeled queries of the benchmark types",
        &["kg", "out", "types", "per_type", "max_answers", "target", "attempts"],
    ),
    (
        "train-adapter",
        "Train the score calibration adapter on query answers",
        &[
            "kg",
            "lp",
            "queries",
            "out",
            "out_lp",
            "types",
            "steps",
            "learning_rate",
            "batch_size",
            "loss",
            "condition",
            "psi_layers",
            "psi_hidden",
            "monotone",
            "unfreeze_lp",
            "tnorm",
            "negation",
        ],
    ),
    (
        "answer",
        "Answer one query with beam search",
        &["kg", "lp", "adapter", "query", "tnorm", "negation", "beam_k", "topn", "explain", "out"],
    ),
    (
        "eval",
        "Filtered MRR on hard answers, per query type",
        &["kg", "lp", "adapter", "queries", "types", "tnorm", "negation", "beam_k", "out"],
    ),
    (
        "report",
        "Adapter size, score diagnostic and evaluation summary",
        &["lp", "adapter", "eval", "dim", "condition", "psi_layers", "psi_hidden", "monotone", "diag_atoms", "out"],
    ),
];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut cmd = Command::new("kgcal")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Calibrated complex query answering over incomplete knowledge graphs")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about, keys) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Config file (key = value lines) or a run manifest to replay"),
        );
        for k in keys.iter().chain(GLOBAL) {
            let spec = config::spec(k).expect("declared key");
            let mut arg = Arg::new(spec.name).long(flag_name(spec.name)).help(spec.help);
            arg = if spec.switch {
                arg.action(ArgAction::SetTrue)
            } else if spec.multi {
                arg.num_args(1..).action(ArgAction::Append)
            } else {
                arg.value_name(flag_name(spec.name).to_uppercase())
            };
            sub = sub.arg(arg);
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Values given explicitly on the command line, keyed by config name.
fn cli_layer(m: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for spec in KEYS {
        if m.try_contains_id(spec.name).ok() != Some(true) || m.value_source(spec.name) != Some(ValueSource::CommandLine) {
            continue;
        }
        let v = if spec.switch {
            m.get_flag(spec.name).to_string()
        } else {
            m.get_many::<String>(spec.name).map(|vs| vs.cloned().collect::<Vec<_>>().join(",")).unwrap_or_default()
        };
        out.insert(spec.name.to_owned(), v);
    }
    out
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match dispatch(name, sub) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                eprintln!("\nFor more information, try 'kgcal {name} --help'.");
                2
            } else {
                1
            }
        }
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(c.downcast_ref::<kgcal_core::Error>(), Some(kgcal_core::Error::Config(_)))
    })
}

fn dispatch(name: &str, m: &ArgMatches) -> anyhow::Result<()> {
    let file = match m.get_one::<String>("config") {
        Some(p) => config::read_file(&PathBuf::from(p))?,
        None => BTreeMap::new(),
    };
    let env = config::read_env(std::env::vars())?;
    let mut cfg = RunConfig::layered([file, env, cli_layer(m)]);
    let deterministic = cfg.flag("deterministic")?;
    let threads: usize = cfg.get("threads", if deterministic { 1 } else { 0 })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| commands::run(name, &mut cfg))
}
