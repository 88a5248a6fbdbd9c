//! Layered run configuration: command-line flags over `KGCAL_*` environment
//! variables over a `key = value` file (or the `config` object of a run
//! manifest).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Error attributable to the invocation rather than the run; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const ENV_PREFIX: &str = "KGCAL_";

/// A recognized key, its flag help, and whether it is a boolean switch.
pub struct KeySpec {
    pub name: &'static str,
    pub help: &'static str,
    pub switch: bool,
    pub multi: bool,
}

const fn key(name: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, help, switch: false, multi: false }
}

const fn switch(name: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, help, switch: true, multi: false }
}

pub const KEYS: &[KeySpec] = &[
    key("seed", "Master seed; every component forks a labeled stream from it"),
    key("threads", "Worker threads for training and evaluation"),
    switch("deterministic", "Fixed reduction order; defaults threads to 1"),
    key("log_every", "Print a progress line every N training steps"),
    KeySpec {
        name: "triples",
        help: "Triple files as PATH:SPLIT with SPLIT in train, valid, test",
        switch: false,
        multi: true,
    },
    switch("no_reciprocals", "Do not add reciprocal relations"),
    key("kg", "Knowledge graph snapshot"),
    key("lp", "Link predictor checkpoint"),
    key("adapter", "Adapter checkpoint"),
    key("queries", "Query file (JSON lines)"),
    key("query", "Query file or inline query text"),
    key("eval", "Evaluation report (JSON) to summarize"),
    key("out", "Output path"),
    key("out_lp", "Output path for fine-tuned embeddings with --unfreeze-lp"),
    key("dim", "Embedding rank (complex dimensions)"),
    key("steps", "Optimizer steps"),
    key("learning_rate", "AdaGrad learning rate"),
    key("batch_size", "Examples per step"),
    key("n3_weight", "N3 regularization weight"),
    key("init_std", "Standard deviation of the initial embeddings"),
    key("loss", "Loss: 1vsall or bce"),
    key("normalization", "Score normalization: sigmoid or minmax"),
    key("types", "Comma-separated query types"),
    key("per_type", "Queries to sample per type"),
    key("max_answers", "Reject queries with more answers than this"),
    key("target", "Sample for train or eval"),
    key("attempts", "Sampling attempts per emitted query"),
    key("condition", "Adapter conditioning: global, pred, subjpred or full"),
    key("psi_layers", "Adapter depth: 1 or 2"),
    key("psi_hidden", "Hidden width of a 2-layer adapter"),
    switch("monotone", "Keep the adapter gain positive"),
    switch("unfreeze_lp", "Also fine-tune the link predictor"),
    key("tnorm", "T-norm: min, prod or luk"),
    key("negation", "Negation: std or cos"),
    key("beam_k", "Beam width"),
    key("topn", "Answers to print"),
    switch("explain", "Print the beam trace"),
    key("diag_atoms", "Atoms sampled for the score diagnostic"),
];

pub fn spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Parses a flat config file or, for JSON input, the `config` object of a
/// run manifest.
pub fn read_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text = fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let map = if text.trim_start().starts_with('{') {
        from_manifest(&text).map_err(|m| UsageError(format!("{}: {m}", path.display())))?
    } else {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
            map.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        map
    };
    for k in map.keys() {
        if spec(k).is_none() {
            return Err(UsageError(format!("{}: unknown key `{k}`", path.display())));
        }
    }
    Ok(map)
}

fn from_manifest(text: &str) -> Result<BTreeMap<String, String>, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = v.get("config").and_then(|c| c.as_object()).ok_or("manifest has no `config` object")?;
    obj.iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k.clone(), s.clone())),
            other => Err(format!("config value for `{k}` is not a string: {other}")),
        })
        .collect()
}

/// Reads every `KGCAL_*` variable. Unknown names are rejected.
pub fn read_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<BTreeMap<String, String>, UsageError> {
    let mut map = BTreeMap::new();
    for (k, v) in vars {
        let Some(rest) = k.strip_prefix(ENV_PREFIX) else { continue };
        let name = rest.to_ascii_lowercase();
        if spec(&name).is_none() {
            return Err(UsageError(format!("unknown environment variable `{k}`")));
        }
        map.insert(name, v);
    }
    Ok(map)
}

/// Merged view of all sources. Every value read through it is echoed.
#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    echo: BTreeMap<String, String>,
}

impl RunConfig {
    /// Later layers win.
    pub fn layered(layers: [BTreeMap<String, String>; 3]) -> Self {
        let mut values = BTreeMap::new();
        for layer in layers {
            values.extend(layer);
        }
        Self { values, echo: BTreeMap::new() }
    }

    fn parse<T: FromStr>(&mut self, name: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        debug_assert!(spec(name).is_some(), "undeclared key {name}");
        let Some(raw) = self.values.get(name) else { return Ok(None) };
        let v = raw.parse().map_err(|e| UsageError(format!("invalid value `{raw}` for `{name}`: {e}")))?;
        self.echo.insert(name.to_owned(), raw.clone());
        Ok(Some(v))
    }

    pub fn opt<T: FromStr>(&mut self, name: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        self.parse(name)
    }

    pub fn get<T: FromStr + fmt::Display>(&mut self, name: &str, default: T) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        match self.parse(name)? {
            Some(v) => Ok(v),
            None => {
                self.echo.insert(name.to_owned(), default.to_string());
                Ok(default)
            }
        }
    }

    pub fn req<T: FromStr>(&mut self, name: &str) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        self.parse(name)?.ok_or_else(|| UsageError(format!("missing required `--{}`", name.replace('_', "-"))))
    }

    pub fn flag(&mut self, name: &str) -> Result<bool, UsageError> {
        self.get(name, false)
    }

    pub fn list(&mut self, name: &str) -> Vec<String> {
        match self.values.get(name) {
            Some(raw) => {
                self.echo.insert(name.to_owned(), raw.clone());
                raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
            }
            None => Vec::new(),
        }
    }

    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }
}
