//! Command-line front end for the `earlylin` experiments.
//!
//! Every subcommand reads a flat JSON configuration (`--config`), applies
//! `--key value` overrides on top of it, runs, and writes `manifest.json`,
//! one CSV per run and `summary.csv` into the output directory. The exit code
//! is 0 when every configured check passes, 1 when a check fails or the run
//! errors, and 2 for configuration problems.

pub mod commands;
pub mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Arg, ArgAction, Command};
use serde_json::{Map, Value};

pub use config::{validate_config, ConfigError, Subcommand, Validated};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Parsed command line.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub subcommand: Subcommand,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    /// 0 = quiet, 1 = normal, 2 = verbose.
    pub verbosity: u8,
    /// `--key value` pairs, keys normalized to snake_case.
    pub overrides: Map<String, Value>,
}

#[derive(Debug)]
enum Parsed {
    Run(CliConfig),
    /// Help text to print before exiting successfully.
    Help(String),
}

/// The command-line grammar. Each subcommand accepts one `--key` flag per
/// configuration key (underscores written as dashes).
pub fn command() -> Command {
    let mut cmd = Command::new("earlylin")
        .about("Early-time linear models of two-layer networks: experiments and kernels")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .after_help(
            "Any configuration key can be set as --key value. Values are read as JSON when \
             possible; a,b,c becomes a list. Flags override the --config file.",
        );
    for sub in Subcommand::ALL {
        let mut c = Command::new(sub.name())
            .about(sub.about())
            .allow_negative_numbers(true)
            .arg(
                Arg::new("config")
                    .long("config")
                    .value_name("FILE")
                    .help("JSON configuration file"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_name("DIR")
                    .help("output directory [default: runs/<subcommand>]"),
            )
            .arg(
                Arg::new("seed")
                    .long("seed")
                    .value_name("N")
                    .value_parser(clap::value_parser!(u64))
                    .help("override the configured seed"),
            )
            .arg(
                Arg::new("verbose")
                    .short('v')
                    .long("verbose")
                    .action(ArgAction::SetTrue)
                    .help("progress on stderr"),
            )
            .arg(
                Arg::new("quiet")
                    .short('q')
                    .long("quiet")
                    .action(ArgAction::SetTrue)
                    .conflicts_with("verbose")
                    .help("no warnings or check lines"),
            );
        if sub == Subcommand::Moments {
            c = c.arg(
                Arg::new("act_positional")
                    .value_name("ACT")
                    .help("activation (same as --act)"),
            );
        }
        if let Value::Object(defaults) = config::defaults(sub) {
            for (key, default) in defaults {
                if key == "seed" {
                    continue;
                }
                let flag = key.replace('_', "-");
                c = c.arg(
                    Arg::new(key.clone())
                        .long(flag)
                        .value_name("VALUE")
                        .num_args(0..=1)
                        .default_missing_value("true")
                        .help(format!("[default: {default}]")),
                );
            }
        }
        cmd = cmd.subcommand(c);
    }
    cmd
}

/// Reads a flag value: JSON if it parses, a list if it contains commas,
/// otherwise a string.
pub fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| parse_value(p.trim())).collect());
    }
    Value::String(raw.to_string())
}

fn parse_args(argv: &[String]) -> Result<Parsed, String> {
    let full = std::iter::once("earlylin".to_string()).chain(argv.iter().cloned());
    let matches = match command().try_get_matches_from(full) {
        Ok(m) => m,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    Ok(Parsed::Help(e.render().to_string()))
                }
                _ => Err(e.render().to_string()),
            }
        }
    };
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let subcommand: Subcommand = name.parse()?;
    let mut overrides = Map::new();
    if let Value::Object(defaults) = config::defaults(subcommand) {
        for key in defaults.keys().filter(|k| k.as_str() != "seed") {
            if let Some(raw) = sub.get_one::<String>(key) {
                overrides.insert(key.clone(), parse_value(raw));
            }
        }
    }
    if let Some(act) = sub.try_get_one::<String>("act_positional").ok().flatten() {
        if overrides.contains_key("act") {
            return Err("give the activation either positionally or with --act, not both".into());
        }
        overrides.insert("act".into(), Value::String(act.clone()));
    }
    Ok(Parsed::Run(CliConfig {
        subcommand,
        config_path: sub.get_one::<String>("config").map(PathBuf::from),
        out_dir: sub
            .get_one::<String>("out")
            .map_or_else(|| PathBuf::from("runs").join(name), PathBuf::from),
        seed: sub.get_one::<u64>("seed").copied(),
        verbosity: if sub.get_flag("quiet") {
            0
        } else if sub.get_flag("verbose") {
            2
        } else {
            1
        },
        overrides,
    }))
}

/// Runs with `argv` (without the program name), printing to stdout/stderr.
pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`run`], writing to the given streams.
pub fn run_to(argv: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match parse_args(argv) {
        Ok(Parsed::Run(cli)) => cli,
        Ok(Parsed::Help(text)) => {
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
        Err(msg) => {
            let _ = write!(err, "{msg}");
            return EXIT_CONFIG;
        }
    };
    let given = match &cli.config_path {
        None => Value::Object(Map::new()),
        Some(path) => match fs::read_to_string(path) {
            Err(e) => {
                let _ = writeln!(err, "error: cannot read config {}: {e}", path.display());
                return EXIT_CONFIG;
            }
            Ok(text) => match serde_json::from_str::<Value>(&text) {
                Ok(v) => v,
                Err(e) => {
                    let _ = writeln!(
                        err,
                        "error: config {} is not valid JSON: {e}",
                        path.display()
                    );
                    return EXIT_CONFIG;
                }
            },
        },
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        if config::defaults(cli.subcommand).get("seed").is_some() {
            overrides.insert("seed".into(), Value::from(seed));
        } else {
            let _ = writeln!(
                err,
                "warning: '{}' does not use a seed; --seed ignored",
                cli.subcommand
            );
        }
    }
    let mut merged = given.clone();
    if let Value::Object(map) = &mut merged {
        map.extend(overrides.clone());
    }
    let validated = match validate_config(&merged, cli.subcommand) {
        Ok(v) => v,
        Err(errors) => {
            for e in errors {
                let _ = writeln!(err, "error: {e}");
            }
            return EXIT_CONFIG;
        }
    };
    if cli.verbosity > 0 {
        for w in &validated.warnings {
            let _ = writeln!(err, "warning: {w}");
        }
    }
    if let Err(e) = fs::create_dir_all(&cli.out_dir) {
        let _ = writeln!(err, "error: cannot create {}: {e}", cli.out_dir.display());
        return EXIT_FAILED;
    }
    let ctx = commands::Context {
        out_dir: cli.out_dir.clone(),
        verbosity: cli.verbosity,
    };
    match commands::execute(
        &validated,
        &given,
        &Value::Object(overrides),
        &ctx,
        out,
        err,
    ) {
        Ok(manifest) => {
            if cli.verbosity > 0 {
                for a in &manifest.assertions {
                    let _ = writeln!(
                        err,
                        "{} {}: {}",
                        if a.passed { "ok  " } else { "FAIL" },
                        a.name,
                        a.detail
                    );
                }
            }
            if manifest.all_passed() {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                earlylin::Error::Config(_)
                | earlylin::Error::OddWidth(_)
                | earlylin::Error::Covariance(_)
                | earlylin::Error::QuadratureOrder(_)
                | earlylin::Error::FilterTooLarge { .. } => EXIT_CONFIG,
                _ => EXIT_FAILED,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn flag_values() {
        assert_eq!(parse_value("3"), Value::from(3));
        assert_eq!(parse_value("erf"), Value::from("erf"));
        assert_eq!(parse_value("10,30,50"), serde_json::json!([10, 30, 50]));
        assert_eq!(parse_value("null"), Value::Null);
        assert_eq!(parse_value("[1.5,0.5]"), serde_json::json!([1.5, 0.5]));
    }

    #[test]
    fn parses_flags_and_positionals() {
        let Parsed::Run(c) = parse_args(&args("moments relu --order 64 -q")).unwrap() else {
            panic!()
        };
        assert_eq!(c.subcommand, Subcommand::Moments);
        assert_eq!(c.overrides["act"], Value::from("relu"));
        assert_eq!(c.overrides["order"], Value::from(64));
        assert_eq!(c.verbosity, 0);
        assert_eq!(c.out_dir, PathBuf::from("runs/moments"));
        let Parsed::Run(c) = parse_args(&args("agreement --n-test=100 --seed 7 --out x")).unwrap()
        else {
            panic!()
        };
        assert_eq!(c.overrides["n_test"], Value::from(100));
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn rejects_bad_command_lines() {
        assert!(parse_args(&args("agreement --width 3")).is_err());
        assert!(parse_args(&args("agreement -x")).is_err());
        assert!(parse_args(&args("train")).is_err());
        assert!(parse_args(&args("agreement stray")).is_err());
        assert!(parse_args(&args("agreement --seed -1")).is_err());
        assert!(parse_args(&args("agreement --config")).is_err());
        assert!(parse_args(&args("moments erf --act relu")).is_err());
        assert!(matches!(
            parse_args(&args("agreement --help")),
            Ok(Parsed::Help(_))
        ));
    }

    #[test]
    fn grammar_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn bare_flag_is_true() {
        let Parsed::Run(c) = parse_args(&args("cnn-ntk --write-kernel --q 8")).unwrap() else {
            panic!()
        };
        assert_eq!(c.overrides["write_kernel"], Value::Bool(true));
        assert_eq!(c.overrides["q"], Value::from(8));
    }
}
