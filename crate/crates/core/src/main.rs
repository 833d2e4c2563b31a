use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use stochrecon::experiments::{run, Check, ExperimentConfig};
use stochrecon::Error;

#[derive(Parser)]
#[command(name = "stochrecon", version, about = "Run reconstruction, sewing and SPDE experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `out/<config stem>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    config: &'a ExperimentConfig,
    started_unix: u64,
    wall_seconds: f64,
    threads: usize,
    status: &'a str,
    error: Option<String>,
    checks: &'a [Check],
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<FileEntry>) -> std::io::Result<()> {
    fs::write(dir.join(name), bytes)?;
    files.push(FileEntry { name: name.into(), sha256: sha256_hex(bytes) });
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 2,
        Error::Diverged(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let Command::Run { config, seed, out, threads, quiet } = Cli::parse().command;
    let text = match fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    let dir = out.unwrap_or_else(|| PathBuf::from("out").join(stem));
    if let Err(e) = fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return ExitCode::from(2);
    }

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let result = run(&cfg);
    let wall = clock.elapsed().as_secs_f64();

    let mut files = Vec::new();
    let (status, error, checks, code) = match &result {
        Ok(outcome) => {
            let io = (|| -> stochrecon::Result<()> {
                for (name, csv) in &outcome.tables {
                    write_file(&dir, name, csv.as_bytes(), &mut files)?;
                }
                write_file(&dir, "checks.csv", outcome.checks_csv().as_bytes(), &mut files)?;
                for (name, field) in &outcome.fields {
                    field.write(&dir.join(name))?;
                    for ext in ["bin", "json"] {
                        let file = format!("{name}.{ext}");
                        let bytes = fs::read(dir.join(&file))?;
                        files.push(FileEntry { name: file, sha256: sha256_hex(&bytes) });
                    }
                }
                Ok(())
            })();
            match io {
                Err(e) => ("error", Some(e.to_string()), &outcome.checks[..], 4),
                Ok(()) if outcome.passed() => ("passed", None, &outcome.checks[..], 0),
                Ok(()) => ("failed", None, &outcome.checks[..], 1),
            }
        }
        Err(e) => {
            let _ = write_file(&dir, "error.txt", format!("{e}\n").as_bytes(), &mut files);
            ("error", Some(e.to_string()), &[][..], exit_code(e))
        }
    };
    if !quiet {
        for c in checks {
            println!("{} {} = {:e} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.condition);
        }
        if let Some(e) = &error {
            eprintln!("error: {e}");
        }
        println!("{status} in {wall:.2} s, artifacts in {}", dir.display());
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(toml::to_string(&cfg).unwrap_or_default().as_bytes()),
        config: &cfg,
        started_unix: started,
        wall_seconds: wall,
        threads: rayon::current_num_threads(),
        status,
        error,
        checks,
        files,
    };
    match serde_json::to_string_pretty(&manifest) {
        Ok(json) => {
            if let Err(e) = fs::write(dir.join("manifest.json"), json) {
                eprintln!("error: cannot write manifest: {e}");
                return ExitCode::from(4);
            }
        }
        Err(e) => {
            eprintln!("error: manifest: {e}");
            return ExitCode::from(4);
        }
    }
    ExitCode::from(code)
}
