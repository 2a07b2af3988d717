//! Synthesis, validation, export and evaluation of tool-calling dialogues that have to
//! disambiguate between similar tools before calling one.

pub mod args;
pub mod catalogue;
pub mod dialogue;
pub mod embed;
pub mod eval;
pub mod fixtures;
pub mod gateway;
pub mod metrics;
pub mod pool;
pub mod prompts;
pub mod retrieval;
pub mod scenario;
pub mod seeds;
pub mod sft;
pub mod text;
pub mod validate;

pub use args::ArgMap;
pub use catalogue::{Catalogue, ParamSpec, ParamType, Tool};
pub use dialogue::{AssistantTurn, DialogueTrace, Message, Termination, ToolCall};
pub use gateway::{BackendConfig, ChatMessage, LlmClient};
pub use metrics::{MetricReport, Reference};
pub use scenario::Scenario;
pub use validate::ValidationReport;
