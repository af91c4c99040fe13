pub mod agent;
pub mod forecast;

pub use agent::{run_agents, AgentTickReport, BaselineAgent, BaselineConfig, BaselineModel};
pub use forecast::{BaselineKind, ForecastError};
