//! Command-line front end and HTTP preview service for `labelsynth`.

pub mod cli;
pub mod commands;
pub mod exit;
pub mod server;

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use clap::Parser;

use cli::{Cli, Command, ServeArgs};

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn serve(args: &ServeArgs) -> labelsynth::Result<i32> {
    let cfg = commands::load_config(args.config.as_deref())?;
    cfg.validate()?;
    let mut paths: Vec<PathBuf> = args.labels.clone();
    let dir = args.roster.clone().or_else(|| std::env::var_os(server::ROSTER_ENV).map(PathBuf::from));
    if let Some(dir) = dir {
        paths.extend(server::scan_roster(&dir)?);
    }
    if paths.is_empty() {
        return Err(labelsynth::ConfigError::single(
            "labels",
            format!("no label maps given; pass --labels or --roster (or set {})", server::ROSTER_ENV),
        )
        .into());
    }
    let roster = commands::load_roster(&paths, server::roster_id)?;
    let mut ids: Vec<&str> = roster.iter().map(|e| e.id.as_str()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(labelsynth::ConfigError::single("labels", format!("two label maps share the id `{}`", w[0])).into());
    }
    let port = match args.port {
        Some(p) => p,
        None => match std::env::var(server::PORT_ENV) {
            Ok(v) => v.parse().map_err(|_| {
                labelsynth::ConfigError::single("port", format!("{} is not a port number: `{v}`", server::PORT_ENV))
            })?,
            Err(_) => server::DEFAULT_PORT,
        },
    };
    let host: IpAddr = args
        .host
        .parse()
        .map_err(|_| labelsynth::ConfigError::single("host", format!("not an IP address: `{}`", args.host)))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(server::serve(
        server::AppState::new(roster, cfg),
        SocketAddr::new(host, port),
    ))?;
    Ok(exit::OK)
}

/// Parse `args` (program name first), run the command and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::IO } else { exit::OK };
        }
    };
    init_logging(cli.verbose);
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Stream(a) => commands::stream(a),
        Command::Serve(a) => serve(a),
        Command::NoiseDemo(a) => commands::noise_demo(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit::code_for(&e)
        }
    }
}
