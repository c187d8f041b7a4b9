//! Config-driven runner for the `dmfg` toolkit.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{ChildConfig, Command, RunConfig};
pub use error::{CliError, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub command: Option<Command>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Hex SHA-256 of the child's canonical JSON.
pub fn config_hash(child: &ChildConfig) -> Result<String> {
    let bytes = serde_json::to_vec(child)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write(path, s.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        context: format!("creating {}", dir.display()),
        source,
    })
}

struct ChildResult {
    hash: String,
    dir: PathBuf,
    exit: i32,
    verdict: Value,
}

fn run_one(child: &ChildConfig, dir: &Path) -> Result<ChildResult> {
    let hash = config_hash(child)?;
    create_dir(dir)?;
    let start = Instant::now();
    let outcome = commands::run_child(child);
    let wall = start.elapsed().as_secs_f64();
    let (exit, verdict, mut artifacts) = match outcome {
        Ok(out) => {
            let (exit, verdict) = match out.pass {
                Some(true) => (EXIT_PASS, json!("pass")),
                Some(false) => (EXIT_FAIL, json!("fail")),
                None => (EXIT_PASS, Value::Null),
            };
            let report = json!({
                "command": child.command.name(),
                "config_hash": hash,
                "seed": child.seed,
                "model": child.model,
                "verdict": verdict,
                "result": out.report,
            });
            write_json(&dir.join("report.json"), &report)?;
            let mut names = vec!["report.json".to_string()];
            for (name, body) in &out.csv {
                write(&dir.join(name), body.as_bytes())?;
                names.push(name.clone());
            }
            (exit, verdict, names)
        }
        Err(e) => {
            let report = json!({
                "command": child.command.name(),
                "config_hash": hash,
                "seed": child.seed,
                "model": child.model,
                "error": e.to_string(),
            });
            write_json(&dir.join("report.json"), &report)?;
            eprintln!("error: {e}");
            (EXIT_ERROR, json!("error"), vec!["report.json".to_string()])
        }
    };
    artifacts.push("manifest.json".into());
    let manifest = json!({
        "config_hash": hash,
        "command": child.command.name(),
        "seed": child.seed,
        "config": child,
        "versions": { "dmfg": dmfg::VERSION, "cli": env!("CARGO_PKG_VERSION") },
        "wall_time_s": wall,
        "verdict": verdict,
        "exit_code": exit,
        "artifacts": artifacts,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(ChildResult {
        hash,
        dir: dir.to_path_buf(),
        exit,
        verdict,
    })
}

fn combine(codes: impl IntoIterator<Item = i32>) -> i32 {
    codes.into_iter().fold(EXIT_PASS, |acc, c| match (acc, c) {
        (EXIT_ERROR, _) | (_, EXIT_ERROR) => EXIT_ERROR,
        (EXIT_FAIL, _) | (_, EXIT_FAIL) => EXIT_FAIL,
        _ => EXIT_PASS,
    })
}

/// Read, validate and execute a config. Returns the process exit code;
/// `Err` only for problems before any child ran (unreadable or invalid
/// config, unwritable output).
pub fn run(inv: &Invocation) -> Result<i32> {
    let text = std::fs::read_to_string(&inv.config).map_err(|source| CliError::Io {
        context: format!("reading {}", inv.config.display()),
        source,
    })?;
    let cfg = RunConfig::parse(&text)?;
    // the command line wins over the config
    let command = inv.command.or(cfg.command).ok_or(CliError::MissingCommand)?;
    let out = inv
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let children = cfg.children(command, inv.seed);
    if children.len() == 1 {
        return Ok(run_one(&children[0], &out)?.exit);
    }
    create_dir(&out)?;
    let start = Instant::now();
    let results: Vec<ChildResult> = children
        .par_iter()
        .map(|child| {
            let hash = config_hash(child)?;
            run_one(child, &out.join(&hash[..16]))
        })
        .collect::<Result<_>>()?;
    let exit = combine(results.iter().map(|r| r.exit));
    let listing: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "config_hash": r.hash,
                "dir": r.dir.file_name().map(|s| s.to_string_lossy().into_owned()),
                "verdict": r.verdict,
                "exit_code": r.exit,
            })
        })
        .collect();
    write_json(
        &out.join("report.json"),
        &json!({ "command": command.name(), "children": listing, "exit_code": exit }),
    )?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "command": command.name(),
            "children": results.len(),
            "versions": { "dmfg": dmfg::VERSION, "cli": env!("CARGO_PKG_VERSION") },
            "wall_time_s": start.elapsed().as_secs_f64(),
            "exit_code": exit,
        }),
    )?;
    Ok(exit)
}
