use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use conceptlearn_service::router;
use conceptlearn_service::state::AppState;

/// Serves interactive concept-learning sessions over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory holding datasets and session logs; restored at startup.
    #[arg(long, default_value = "service-state")]
    state_dir: PathBuf,
}

async fn shutdown() {
    let _ = tokio::signal::ctrl_c().await;
    log::info!("shutting down");
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let dir = args.state_dir.clone();
    let state = tokio::task::spawn_blocking(move || AppState::open(&dir))
        .await?
        .with_context(|| format!("restoring state from {}", args.state_dir.display()))?;
    let listener = tokio::net::TcpListener::bind(args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown())
        .await?;
    Ok(())
}
