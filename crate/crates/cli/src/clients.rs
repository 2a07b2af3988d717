//! Construction of model clients and embedders from configuration.

use std::sync::Arc;

use forge_core::embed::{Embedder, EmbeddingCache, HashEmbedder, RemoteEmbedder};
use forge_core::gateway::{BackendConfig, GatewayError, InFlightLimiter, LlmClient};

use crate::config::EmbedderConfig;
use crate::CliError;

/// Sampling temperature for generative roles when a backend leaves it unset.
pub const GENERATIVE_TEMPERATURE: f64 = 0.7;
/// Temperature for judges, voters and evaluated assistants.
pub const GREEDY_TEMPERATURE: f64 = 0.0;

/// Builds the client for a role. The live factory reads transcripts or talks HTTP; tests and
/// the demo setup substitute recording backends.
pub trait ClientFactory: Sync {
    fn client(&self, role: &str, cfg: &BackendConfig, default_temperature: f64) -> Result<LlmClient, GatewayError>;
}

pub struct LiveFactory {
    limiter: Arc<InFlightLimiter>,
}

impl LiveFactory {
    pub fn new(max_in_flight: usize) -> Self {
        Self { limiter: Arc::new(InFlightLimiter::new(max_in_flight)) }
    }
}

impl ClientFactory for LiveFactory {
    fn client(&self, _role: &str, cfg: &BackendConfig, default_temperature: f64) -> Result<LlmClient, GatewayError> {
        LlmClient::from_config(cfg, default_temperature, self.limiter.clone())
    }
}

pub fn build_client(
    factory: &dyn ClientFactory,
    role: &str,
    cfg: &BackendConfig,
    default_temperature: f64,
) -> Result<LlmClient, CliError> {
    factory
        .client(role, cfg, default_temperature)
        .map_err(|e| CliError::Setup(format!("backend `{role}`: {e}")))
}

pub fn build_embedder(cfg: &EmbedderConfig) -> Result<Arc<dyn Embedder>, CliError> {
    Ok(match cfg {
        EmbedderConfig::Hash { dim } => Arc::new(HashEmbedder::new(*dim)),
        EmbedderConfig::Remote { backend, dim } => {
            let remote = RemoteEmbedder::new(backend, *dim).map_err(|e| CliError::Setup(format!("embedder: {e}")))?;
            Arc::new(EmbeddingCache::new(remote))
        }
    })
}
