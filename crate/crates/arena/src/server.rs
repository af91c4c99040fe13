//! Long-running service: HTTP listener plus a background tick loop.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use arena_core::config::{ClockConfig, ServerConfig};
use arena_core::{Clock, ClockMode, Platform, Runtime, SystemClock, VirtualClock};
use chrono::Utc;
use tokio::net::TcpListener;
use tokio::time::MissedTickBehavior;
use tracing::{debug, error, info};

use crate::http::{router, AppState};

/// Wall clock, or an accelerated virtual clock that resumes from the latest
/// instant already recorded in the data directory.
pub fn build_clock(config: &ServerConfig, base_dir: &Path) -> anyhow::Result<Arc<dyn Clock>> {
    match config.clock {
        ClockConfig::Realtime => Ok(Arc::new(SystemClock)),
        ClockConfig::Accelerated { factor, start } => {
            anyhow::ensure!(factor.is_finite() && factor > 0.0, "clock factor must be positive, got {factor}");
            let resume = Platform::last_activity(base_dir.join(&config.data_dir))?;
            let start = start.unwrap_or_else(Utc::now).max(resume.unwrap_or(chrono::DateTime::<Utc>::MIN_UTC));
            Ok(Arc::new(VirtualClock::new(start, ClockMode::Accelerated(factor))))
        }
    }
}

/// Runs until Ctrl-C.
pub async fn serve(config: ServerConfig, base_dir: PathBuf) -> anyhow::Result<()> {
    let clock = build_clock(&config, &base_dir)?;
    let boot = config.clone();
    let runtime = tokio::task::spawn_blocking(move || Runtime::from_server_config(&boot, clock, &base_dir))
        .await?
        .context("starting platform")?;
    info!(
        models = runtime.platform.models().len(),
        baselines = runtime.agents.len(),
        now = %runtime.platform.now(),
        "platform ready"
    );
    let state = AppState::new(runtime);

    let period = config
        .tick
        .delta()
        .to_std()
        .ok()
        .filter(|d| !d.is_zero())
        .context("tick interval must be positive")?;
    let shared = state.shared();
    let ticker = tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            interval.tick().await;
            let rt = shared.clone();
            match tokio::task::spawn_blocking(move || rt.lock().step()).await {
                Ok(Ok(report)) => debug!(?report, "tick"),
                Ok(Err(e)) => error!("tick failed: {e}"),
                Err(e) => error!("tick panicked: {e}"),
            }
        }
    });

    let listener = TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    ticker.abort();
    info!("shut down");
    Ok(())
}
