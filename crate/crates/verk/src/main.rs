//! Thin command-line front end over the verk library.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use verk::cli::{
    cmd_advantages, cmd_maze_gen, cmd_oracle_check, cmd_report, cmd_train, CliError, EXIT_FAILURE,
    EXIT_OK,
};
use verk::config::{parse_estimator, parse_norm};
use verk::estimators::{EstimatorKind, NormMode};

const USAGE: &str = "\
verk - multi-attempt RL laboratory

USAGE:
  verk train --config PATH --out DIR
  verk oracle-check
  verk advantages --mode tl|nal|cal --norm loo|meanstd|meanonly [--strict]
      (reads rollout-log JSON lines on stdin, writes advantage records on stdout)
  verk maze-gen --size N --train COUNT --test COUNT --seed SEED --out DIR
  verk report CSV... [--out PATH]

Exit codes: 0 success, 1 validation/assertion failure, 2 I/O, 3 enumeration ceiling.
";

struct Args {
    positional: Vec<String>,
    flags: Vec<(String, Option<String>)>,
}

impl Args {
    fn parse(raw: &[String]) -> Self {
        let mut positional = Vec::new();
        let mut flags = Vec::new();
        let mut i = 0;
        while i < raw.len() {
            if let Some(name) = raw[i].strip_prefix("--") {
                if name == "strict" {
                    flags.push((name.to_string(), None));
                    i += 1;
                } else {
                    let value = raw.get(i + 1).cloned();
                    flags.push((name.to_string(), value));
                    i += 2;
                }
            } else {
                positional.push(raw[i].clone());
                i += 1;
            }
        }
        Self { positional, flags }
    }

    fn flag(&self, name: &str) -> Option<&str> {
        self.flags
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }

    fn has(&self, name: &str) -> bool {
        self.flags.iter().any(|(n, _)| n == name)
    }

    fn require(&self, name: &str) -> Result<&str, CliError> {
        self.flag(name)
            .ok_or_else(|| CliError::Usage(format!("missing --{name}")))
    }
}

fn run() -> Result<(), CliError> {
    let raw: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = raw.first() else {
        return Err(CliError::Usage("no subcommand".into()));
    };
    let args = Args::parse(&raw[1..]);
    match command.as_str() {
        "train" => {
            let config = PathBuf::from(args.require("config")?);
            let out = PathBuf::from(args.require("out")?);
            cmd_train(&config, &out)
        }
        "oracle-check" => cmd_oracle_check(&mut std::io::stdout()),
        "advantages" => {
            let kind = parse_arg(args.require("mode")?, parse_estimator, "mode")?;
            if kind == EstimatorKind::AlExact {
                return Err(CliError::Usage(
                    "advantages supports tl, nal and cal only".into(),
                ));
            }
            let norm_kind = parse_arg(args.require("norm")?, parse_norm, "norm")?;
            let norm = NormMode {
                kind: norm_kind,
                std_floor: 1e-6,
            };
            let stdin = std::io::stdin();
            let mut input = BufReader::new(stdin.lock());
            cmd_advantages(
                kind,
                &norm,
                &mut input,
                &mut std::io::stdout(),
                &mut std::io::stderr(),
                args.has("strict"),
            )
        }
        "maze-gen" => {
            let size: usize = parse_num(args.require("size")?, "size")?;
            let train: usize = parse_num(args.flag("train").unwrap_or("10000"), "train")?;
            let test: usize = parse_num(args.flag("test").unwrap_or("1000"), "test")?;
            let seed: u64 = parse_num(args.flag("seed").unwrap_or("0"), "seed")?;
            let out = PathBuf::from(args.require("out")?);
            cmd_maze_gen(size, train, test, seed, &out)
        }
        "report" => {
            let paths: Vec<PathBuf> = args.positional.iter().map(PathBuf::from).collect();
            let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
            let out = args.flag("out").map(PathBuf::from);
            let table = cmd_report(&refs, out.as_deref())?;
            print!("{table}");
            Ok(())
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown subcommand {other:?}"))),
    }
}

fn parse_arg<T>(
    value: &str,
    parser: impl Fn(&str) -> Option<T>,
    name: &str,
) -> Result<T, CliError> {
    parser(value).ok_or_else(|| CliError::Usage(format!("bad --{name} value {value:?}")))
}

fn parse_num<T: std::str::FromStr>(value: &str, name: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| CliError::Usage(format!("bad --{name} value {value:?}")))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            if matches!(e, CliError::Usage(_)) {
                let _ = write!(std::io::stderr(), "{USAGE}");
            }
            let code = e.exit_code();
            ExitCode::from(if (0..=255).contains(&code) {
                code as u8
            } else {
                EXIT_FAILURE as u8
            })
        }
    }
}
