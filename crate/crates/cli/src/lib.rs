//! The `oobn` command line: `check`, `flatten`, `query`, `repl`, `replay`
//! and `serve`.

pub mod server;

use std::io::{BufRead, Write};

use clap::{Parser, Subcommand};
use oobn::dsl::parse_model;
use oobn::flatten::build_flat_bn;
use oobn::model::{compile, instantiate, Model};
use oobn::session::{parse_log, EngineKind, LogEntry, RefineKind, RefinementOp, Session, SessionOptions};
use oobn::{Error, ErrorCode};

/// Exit status for a successful run.
pub const EXIT_OK: u8 = 0;
/// Exit status when the model or an operation on it is rejected.
pub const EXIT_MODEL: u8 = 1;
/// Exit status for malformed command lines and unreadable files.
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "oobn", version, about = "Object-oriented Bayesian networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse, resolve, validate and unroll a model; print the object tree.
    Check { file: String },
    /// Print the flat Bayesian network.
    Flatten {
        file: String,
        #[arg(long, default_value = "bn-json")]
        format: String,
    },
    /// Posterior over the targets given the evidence.
    Query {
        file: String,
        /// Evidence as PATH=VALUE; repeatable.
        #[arg(short = 'e', long = "evidence")]
        evidence: Vec<String>,
        /// Target attribute path; repeatable (the answer is their joint).
        #[arg(short = 'q', long = "query", required = true)]
        targets: Vec<String>,
        #[arg(long, default_value = "msbn")]
        engine: String,
        /// Also print the cost report as JSON.
        #[arg(long)]
        stats: bool,
        /// Disable class-level caching.
        #[arg(long)]
        no_cache: bool,
        /// Print the posterior as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Interactive session over a model.
    Repl {
        file: String,
        #[arg(long, default_value = "msbn")]
        engine: String,
    },
    /// Re-run a JSON-lines session log against a model.
    Replay { file: String, log: String },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn read(path: &str) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::new(ErrorCode::Io, format!("{path}: {e}")))
}

fn load(path: &str) -> Result<Model, Error> {
    compile(&parse_model(&read(path)?)?)
}

fn report(e: &Error, file: &str, err: &mut dyn Write) -> u8 {
    for d in e.diagnostics() {
        writeln!(err, "{}", d.render(file)).ok();
    }
    match e.code() {
        ErrorCode::Usage | ErrorCode::Io => EXIT_USAGE,
        _ => EXIT_MODEL,
    }
}

fn split_eq(s: &str) -> Result<(String, String), Error> {
    match s.split_once('=') {
        Some((p, v)) if !p.is_empty() => Ok((p.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::new(ErrorCode::Usage, format!("expected PATH=VALUE, got `{s}`"))),
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// status.
pub fn run(args: &[String], input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                write!(out, "{text}").ok();
            } else {
                write!(err, "{text}").ok();
            }
            return code;
        }
    };
    let file = match &cli.cmd {
        Cmd::Check { file } | Cmd::Flatten { file, .. } | Cmd::Query { file, .. } | Cmd::Repl { file, .. } | Cmd::Replay { file, .. } => {
            file.clone()
        }
        Cmd::Serve { .. } => String::from("-"),
    };
    match dispatch(cli.cmd, input, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e, &file, err),
    }
}

fn dispatch(cmd: Cmd, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::new(ErrorCode::Io, e.to_string());
    match cmd {
        Cmd::Check { file } => {
            let m = load(&file)?;
            let gm = instantiate(&m)?;
            build_flat_bn(&m, &gm)?;
            write!(out, "{}", gm.render_tree()).map_err(io)?;
        }
        Cmd::Flatten { file, format } => {
            if format != "bn-json" {
                return Err(Error::new(ErrorCode::Usage, format!("unknown format `{format}` (expected bn-json)")));
            }
            let m = load(&file)?;
            let bn = build_flat_bn(&m, &instantiate(&m)?)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&bn.to_json()).unwrap()).map_err(io)?;
        }
        Cmd::Query { file, evidence, targets, engine, stats, no_cache, json } => {
            let engine: EngineKind = engine.parse()?;
            let ev = evidence.iter().map(|s| split_eq(s)).collect::<Result<Vec<_>, _>>()?;
            let mut s = Session::new(load(&file)?, SessionOptions { engine, caching: !no_cache })?;
            let post = s.query(&targets, &ev)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&post.to_json()).unwrap()).map_err(io)?;
            } else {
                write!(out, "{}", post.render()).map_err(io)?;
            }
            if stats {
                writeln!(out, "{}", serde_json::to_string_pretty(&post.stats).unwrap()).map_err(io)?;
            }
        }
        Cmd::Repl { file, engine } => {
            let engine: EngineKind = engine.parse()?;
            let mut s = Session::new(load(&file)?, SessionOptions { engine, caching: true })?;
            repl(&mut s, input, out, err).map_err(io)?;
        }
        Cmd::Replay { file, log } => {
            let entries = parse_log(&read(&log)?)?;
            let (opts, rest) = match entries.first() {
                Some(LogEntry::Load { engine, caching, .. }) => {
                    (SessionOptions { engine: *engine, caching: *caching }, &entries[1..])
                }
                _ => (SessionOptions::default(), &entries[..]),
            };
            let mut s = Session::new(load(&file)?, opts)?;
            for e in rest {
                if let Some(p) = s.apply_entry(e)? {
                    write!(out, "{}", p.render()).map_err(io)?;
                }
            }
        }
        Cmd::Serve { port } => {
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
                writeln!(err, "listening on http://{}", listener.local_addr()?).ok();
                axum::serve(listener, server::router(server::AppState::default())).await
            })
            .map_err(io)?;
        }
    }
    Ok(())
}

const HELP: &str = "\
commands:
  query PATH...            posterior (joint) of the targets
  evidence PATH=VALUE      assert evidence
  retract PATH             retract evidence
  iconize PATH             replace an object's class by its iconized form
  deiconize PATH           restore an iconized object's class
  substitute PATH CLASS    replace an object's class
  classes PATH             classes that may replace the one at PATH
  stats                    cost report of the last operation
  tree                     object tree
  log                      session log as JSON lines
  help, quit
";

/// Line-oriented session loop.
pub fn repl(s: &mut Session, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> std::io::Result<()> {
    let mut line = String::new();
    loop {
        write!(out, "oobn> ")?;
        out.flush()?;
        line.clear();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(());
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let Some((&cmd, rest)) = words.split_first() else { continue };
        let refine = |kind, rest: &[&str], class: Option<String>| -> Result<RefinementOp, Error> {
            match rest {
                [p, ..] => Ok(RefinementOp { kind, path: p.to_string(), class }),
                _ => Err(Error::new(ErrorCode::Usage, "missing PATH")),
            }
        };
        let res: Result<String, Error> = match cmd {
            "quit" | "exit" => return Ok(()),
            "help" => Ok(HELP.to_string()),
            "query" | "q" => {
                let targets: Vec<String> = rest.iter().map(|t| t.to_string()).collect();
                s.query(&targets, &[]).map(|p| p.render())
            }
            "evidence" | "e" => match rest.first().map(|x| split_eq(x)) {
                Some(Ok((p, v))) => s.assert_evidence(&p, &v).map(|_| String::new()),
                Some(Err(e)) => Err(e),
                None => Err(Error::new(ErrorCode::Usage, "missing PATH=VALUE")),
            },
            "retract" => match rest.first() {
                Some(p) => s.retract_evidence(p).map(|_| String::new()),
                None => Err(Error::new(ErrorCode::Usage, "missing PATH")),
            },
            "iconize" | "deiconize" | "substitute" => {
                let kind: RefineKind = cmd.parse().unwrap();
                let class = rest.get(1).map(|c| c.to_string());
                refine(kind, rest, class)
                    .and_then(|op| s.apply_refinement(&op))
                    .map(|l| serde_json::to_string_pretty(&l).unwrap() + "\n")
            }
            "classes" => match rest.first() {
                Some(p) => s.compatible_classes(p).map(|c| c.join("\n") + "\n"),
                None => Err(Error::new(ErrorCode::Usage, "missing PATH")),
            },
            "stats" => Ok(serde_json::to_string_pretty(s.stats()).unwrap() + "\n"),
            "tree" => Ok(s.ground().render_tree()),
            "log" => Ok(s.log_jsonl()),
            other => Err(Error::new(ErrorCode::Usage, format!("unknown command `{other}` (try `help`)"))),
        };
        match res {
            Ok(text) => write!(out, "{text}")?,
            Err(e) => {
                for d in e.diagnostics() {
                    writeln!(err, "{}: {}", d.code, d.message)?;
                }
            }
        }
    }
}
