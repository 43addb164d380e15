//! Command-line front end for the `wt5` toolkit. The binary is a thin
//! wrapper around [`run`]; the rating service lives in [`server`].

pub mod args;
pub mod commands;
pub mod error;
pub mod run_dir;
pub mod server;

use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;

use args::{Command, ServeArgs};
use error::{CliError, Result};

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Mix(a) => commands::mix(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Decode(a) => commands::decode(a),
        Command::Score(a) => commands::score(a),
        Command::Serve(a) => serve(a),
    }
}

fn serve(args: &ServeArgs) -> Result<()> {
    let state = server::AppState::open(&args.data_dir).map_err(CliError::Data)?;
    if let (Some(path), Some(seed)) = (&args.items, args.seed) {
        let items = commands::read_rating_items(path)?;
        let id = state
            .create_session(items, seed)
            .map_err(|e| CliError::in_file(path, e))?;
        eprintln!("created session {id}");
    }
    let addr: SocketAddr = (args.host.as_str(), args.port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| CliError::usage(format!("cannot resolve {}:{}", args.host, args.port)))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::internal)?;
    runtime
        .block_on(server::serve(Arc::new(state), args.ui_dir.clone(), addr))
        .map_err(CliError::internal)
}
