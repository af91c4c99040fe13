//! A platform together with its in-process baseline agents.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;
use tracing::info;

use crate::baselines::{agent::BASELINE_ARCHITECTURE, run_agents, BaselineAgent, BaselineConfig};
use crate::clock::Clock;
use crate::config::{build_ingestion, ConfigError, ServerConfig};
use crate::gateway::{GatewayError, Registration};
use crate::orchestrator::ScheduleConfig;
use crate::platform::{Platform, PlatformError, TickReport};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("ingestion: {0}")]
    Ingestion(String),
}

pub struct Runtime {
    pub platform: Platform,
    pub agents: Vec<BaselineAgent>,
}

impl Runtime {
    pub fn new(platform: Platform) -> Self {
        Self {
            platform,
            agents: Vec::new(),
        }
    }

    /// Opens (or replays) the server's data directory, backfills history and
    /// attaches the configured baselines.
    pub fn from_server_config(config: &ServerConfig, clock: Arc<dyn Clock>, base_dir: &Path) -> Result<Self, RuntimeError> {
        let now = clock.now();
        let day = crate::domain::Frequency::days(1);
        let epoch = day.floor(now - config.backfill_span()) - chrono::TimeDelta::days(1);
        let ingestion = build_ingestion(&config.providers, epoch, config.seed, base_dir)?;
        let schedule = ScheduleConfig {
            buckets: config.buckets.clone(),
        };
        let platform = Platform::open(
            base_dir.join(&config.data_dir),
            config.platform.clone(),
            schedule,
            ingestion,
            clock,
        )?;
        let mut runtime = Self::new(platform);
        if config.backfill.is_some() {
            let report = runtime.backfill(config.backfill_span())?;
            info!(inserted = report.inserted, "backfilled history");
        }
        runtime.add_baselines(&config.baselines)?;
        Ok(runtime)
    }

    pub fn backfill(&mut self, span: chrono::TimeDelta) -> Result<crate::ingestion::IngestReport, RuntimeError> {
        self.platform
            .backfill(span)
            .map_err(|e| RuntimeError::Ingestion(e.to_string()))
    }

    /// Registers each baseline, or re-attaches to an earlier registration
    /// with the same name.
    pub fn add_baselines(&mut self, configs: &[BaselineConfig]) -> Result<(), RuntimeError> {
        for cfg in configs {
            let existing = self
                .platform
                .models()
                .into_iter()
                .find(|m| m.declared_name_version == cfg.name && m.architecture_class == BASELINE_ARCHITECTURE);
            let agent = match existing {
                Some(card) => {
                    let api_key = self.platform.derive_api_key(&card.model_id);
                    BaselineAgent::resume(cfg.clone(), Registration { card, api_key })
                }
                None => BaselineAgent::register(&mut self.platform, cfg.clone())?,
            };
            self.agents.push(agent);
        }
        Ok(())
    }

    /// One platform tick with the agents acting after orchestration.
    pub fn step(&mut self) -> Result<TickReport, PlatformError> {
        let agents = &mut self.agents;
        self.platform.tick_with(|p| {
            run_agents(p, agents);
        })
    }
}
