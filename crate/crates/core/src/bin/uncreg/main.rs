mod args;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use args::Cli;
use uncreg::config::{ConfigFile, RunConfig};

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            // keep the message body but fold it onto one line
            let body: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            let line = body.join(" ");
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<uncreg::Error>())
                .map_or("cli", |e| e.code());
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{code}]: {msg}");
            ExitCode::FAILURE
        }
    }
}

enum Failure {
    Usage(clap::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn run(argv: Vec<OsString>) -> Result<(), Failure> {
    let argv = inject_config(argv)?;
    let matches = Cli::command().try_get_matches_from(&argv).map_err(Failure::Usage)?;
    let cli = Cli::from_arg_matches(&matches).map_err(Failure::Usage)?;
    eprint!("{}", echo(&matches, cli.threads).echo());

    match cli.threads {
        Some(0) => Err(anyhow::anyhow!("--threads must be >= 1").into()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building thread pool")?;
            Ok(pool.install(|| commands::run(cli.command))?)
        }
        None => Ok(commands::run(cli.command)?),
    }
}

/// Resolved values of every flag of the selected subcommand.
fn echo(matches: &ArgMatches, threads: Option<usize>) -> RunConfig {
    let mut path = Vec::new();
    let mut m = matches;
    let mut cmd = Cli::command();
    while let Some((name, sub)) = m.subcommand() {
        path.push(name.to_string());
        cmd = cmd.find_subcommand(name).expect("parsed subcommand").clone();
        m = sub;
    }
    let mut rc = RunConfig::new(&path.join(" "));
    rc.set("threads", threads.map_or("default".to_string(), |t| t.to_string()));
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(id, "help" | "version" | "config" | "threads") {
            continue;
        }
        let value = m
            .get_raw(id)
            .map(|vals| {
                vals.map(|v| v.to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_else(|| "unset".into());
        rc.set(arg.get_long().unwrap_or(id), value);
    }
    rc
}

fn option_value(argv: &[OsString], name: &str) -> Option<OsString> {
    let long = format!("--{name}");
    let prefix = format!("--{name}=");
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == long {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix(&prefix) {
            return Some(v.into());
        }
    }
    None
}

/// Appends `--key value` for every config entry whose flag is not given on
/// the command line.
fn inject_config(mut argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = option_value(&argv, "config").map(PathBuf::from) else {
        return Ok(argv);
    };
    let mut cmd = Cli::command();
    let mut skip_next = false;
    for a in argv.iter().skip(1) {
        let s = a.to_string_lossy();
        if skip_next {
            skip_next = false;
            continue;
        }
        if s == "--threads" || s == "--config" {
            skip_next = true;
            continue;
        }
        if s.starts_with('-') {
            continue;
        }
        match cmd.find_subcommand(s.as_ref()) {
            Some(sub) => cmd = sub.clone(),
            None => break,
        }
    }
    if cmd.has_subcommands() {
        bail!("--config needs a complete subcommand");
    }
    let allowed: Vec<String> = cmd
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|l| !matches!(l.as_str(), "help" | "version" | "config" | "threads"))
        .collect();
    let allowed_ref: Vec<&str> = allowed.iter().map(String::as_str).collect();
    let config = ConfigFile::load(&path, &allowed_ref)?;
    let given = |key: &str| {
        let long = format!("--{key}");
        argv.iter().any(|a| {
            let s = a.to_string_lossy();
            s == long || s.starts_with(&format!("{long}="))
        })
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in config.entries() {
        if given(key) {
            continue;
        }
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key))
            .expect("key validated against the flag list");
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}").into());
            extra.push(value.into());
        } else {
            match value {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                other => bail!("config key {key}: expected true or false, got {other:?}"),
            }
        }
    }
    argv.extend(extra);
    Ok(argv)
}
