//! A small transport-management catalogue and scripted agents that reproduce a reference
//! three-turn dialogue offline. Used by tests, benches and the CLI's demo setup.

use serde_json::json;

use std::sync::Arc;

use crate::args::ArgMap;
use crate::catalogue::{Catalogue, ParamSpec, ParamType, Tool};
use crate::dialogue::{DialogueTrace, EngineConfig, EngineError, LiveRetriever, Synthesizer};
use crate::embed::{Embedder, HashEmbedder};
use crate::gateway::{CompletionRequest, FnBackend, LlmClient, Role};
use crate::retrieval::ToolIndex;
use crate::scenario::{PersonaStore, Scenario, ScenarioSampler};

pub const REFERENCE_SEED: u64 = 2024;

pub const SEED_TOOL: &str = "fn_1126_cloud_transport_management";
pub const PERSONA: &str = "A logistics operations manager seeking advice on mitigating transport risks";
pub const GOAL: &str = "Track actions during transport activities.";

pub const USER_TURNS: [&str; 3] = [
    "I'm trying to improve how we handle different aspects of our transport processes. Could you assist me with finding the right approach or tool to manage and monitor our logistics tasks effectively?",
    "I'm looking for a way to monitor and review all the actions taken during our transport activities. What options are available for keeping an eye on these processes?",
    "Certainly. The Node ID is 437292, and the Transport Request ID is 957841. Let me know if there's anything else you need.",
];

pub const ASSISTANT_TURNS: [&str; 3] = [
    "<think>Several logistics tools fit; I need to know which aspect matters.</think> Could you please specify what aspect of logistics you are trying to manage? Are you focusing on tracking logistics orders, managing warehouse resources, or monitoring transport records?",
    "<think>The action log tool fits. It needs a node and a request identifier.</think> To assist you in monitoring and reviewing all actions taken during your transport activities, our designated tool can be very helpful. Before proceeding, could you please provide the Node ID and the Transport Request ID? These two pieces of information are necessary to retrieve the relevant logs and facilitate monitoring and troubleshooting efficiently.",
    r#"<think>Both identifiers are known.</think> [{"name": "fn_1126_cloud_transport_management", "args": {"nodeId": 437292, "transportRequestId": 957841}}]"#,
];

pub const SELECT_TURN: &str = "<think>The user wants to review transport actions, which is the action log tool.</think> <select>fn_1126_cloud_transport_management</select>";

pub const PASS_VERDICT: &str = r#"{"verdict": "pass", "reason": "consistent"}"#;

pub fn gold_args() -> ArgMap {
    json!({"nodeId": 437292, "transportRequestId": 957841})
        .as_object()
        .cloned()
        .expect("object literal")
}

fn int(desc: &str) -> ParamSpec {
    ParamSpec::new(ParamType::Integer, desc, true)
}

fn string(desc: &str, required: bool) -> ParamSpec {
    ParamSpec::new(ParamType::String, desc, required)
}

pub fn seed_tool() -> Tool {
    Tool::new(
        SEED_TOOL,
        "Monitor the actions recorded for a transport request on a transport node in cloud transport management, for logistics monitoring and troubleshooting.",
    )
    .with_param("nodeId", int("Identifier of the transport node"))
    .with_param("transportRequestId", int("Identifier of the transport request"))
}

/// Seed tool, six logistics neighbours and three unrelated tools.
pub fn transport_catalogue() -> Catalogue {
    Catalogue::from_tools(vec![
        seed_tool(),
        Tool::new("fn_2001_logistics_order_tracking", "Track logistics orders and their delivery status across transport carriers.")
            .with_param("orderId", string("Logistics order number", true)),
        Tool::new("fn_2002_warehouse_resource_management", "Manage warehouse resources such as storage bins, staff and handling equipment for logistics.")
            .with_param("warehouseId", string("Warehouse code", true))
            .with_param("resourceType", string("Kind of resource", false)),
        Tool::new("fn_2003_transport_record_monitoring", "Monitor transport records and freight documents for logistics compliance.")
            .with_param("recordId", int("Transport record number")),
        Tool::new("fn_2004_freight_carrier_booking", "Book a freight carrier for a transport of goods between two locations.")
            .with_param("origin", string("Pickup location", true))
            .with_param("destination", string("Delivery location", true)),
        Tool::new("fn_2005_transport_request_import", "Import a transport request into a target transport node.")
            .with_param("transportRequestId", int("Identifier of the transport request"))
            .with_param("targetNode", string("Target node name", true)),
        Tool::new("fn_2006_shipment_delay_report", "Report shipment delays and risks for transport activities in logistics."),
        Tool::new("fn_3001_employee_onboarding", "Start the onboarding workflow for a newly hired employee.")
            .with_param("employeeId", string("Personnel number", true)),
        Tool::new("fn_3002_invoice_posting", "Post a supplier invoice to accounts payable.")
            .with_param("invoiceNumber", string("Invoice number", true))
            .with_param("amount", ParamSpec::new(ParamType::Number, "Gross amount", true)),
        Tool::new("fn_3003_payroll_run", "Execute the monthly payroll run for a company code."),
    ])
    .expect("fixture catalogue is valid")
}

fn count(req: &CompletionRequest, role: Role) -> usize {
    req.messages.iter().filter(|m| m.role == role).count()
}

fn system(req: &CompletionRequest) -> &str {
    req.messages
        .first()
        .filter(|m| m.role == Role::System)
        .map_or("", |m| m.content.as_str())
}

/// User-proxy replaying the reference utterances. Its own past utterances arrive as
/// assistant-role messages, so their count indexes the next line.
pub fn user_backend() -> FnBackend {
    FnBackend::single(|req| {
        let i = count(req, Role::Assistant).min(USER_TURNS.len() - 1);
        USER_TURNS[i].to_string()
    })
}

/// Assistant that disambiguates in one question, commits with a selection marker, then asks
/// for both identifiers and calls the tool.
pub fn assistant_backend() -> FnBackend {
    FnBackend::single(|req| {
        let users = count(req, Role::User);
        if system(req).contains("<select>") {
            if users <= 1 { ASSISTANT_TURNS[0] } else { SELECT_TURN }.to_string()
        } else if users <= 2 {
            ASSISTANT_TURNS[1].to_string()
        } else {
            ASSISTANT_TURNS[2].to_string()
        }
    })
}

/// Assistant that commits to a distractor during selection.
pub fn wrong_tool_assistant_backend() -> FnBackend {
    FnBackend::single(|req| {
        if count(req, Role::User) <= 1 {
            ASSISTANT_TURNS[0].to_string()
        } else {
            "<think>Transport records.</think> <select>fn_2003_transport_record_monitoring</select>".to_string()
        }
    })
}

pub fn goal_backend() -> FnBackend {
    FnBackend::single(|_| GOAL.to_string())
}

pub fn slot_backend() -> FnBackend {
    FnBackend::single(|_| r#"{"nodeId": 437292, "transportRequestId": 957841}"#.to_string())
}

pub fn judge_backend() -> FnBackend {
    FnBackend::single(|_| PASS_VERDICT.to_string())
}

/// Scenario for the seed tool built with the scripted goal and slot backends.
pub fn reference_scenario(cat: &Catalogue, seed_tool: &str, rng_seed: u64) -> Scenario {
    let emb: Arc<dyn Embedder> = Arc::new(HashEmbedder::default());
    let index = ToolIndex::build(cat, emb.as_ref()).expect("hash embedder cannot fail");
    let store = PersonaStore::new(vec![PERSONA.into()], emb).expect("one persona");
    let goal = LlmClient::new("goal", Arc::new(goal_backend()));
    let slots = LlmClient::new("slots", Arc::new(slot_backend()));
    ScenarioSampler {
        catalogue: cat,
        index: &index,
        personas: &store,
        goal_client: &goal,
        slot_client: &slots,
        k: 5,
        persona_k: 10,
    }
    .build(seed_tool, rng_seed)
    .expect("scripted scenario")
}

/// Synthesize a dialogue with the given scripted agents and the hash embedder.
pub fn synthesize_with(
    cat: &Catalogue,
    scn: &Scenario,
    user: FnBackend,
    assistant: FnBackend,
) -> Result<DialogueTrace, EngineError> {
    let emb = HashEmbedder::default();
    let index = ToolIndex::build(cat, &emb).expect("hash embedder cannot fail");
    let user = LlmClient::new("user", Arc::new(user));
    let assistant = LlmClient::new("assistant", Arc::new(assistant));
    Synthesizer {
        catalogue: cat,
        retriever: LiveRetriever { index: &index, embedder: &emb },
        user: &user,
        assistant: &assistant,
        config: EngineConfig::default(),
    }
    .synthesize(scn)
}

/// The reference scenario and its three-turn dialogue.
pub fn reference_dialogue() -> (Catalogue, Scenario, DialogueTrace) {
    let cat = transport_catalogue();
    let scn = reference_scenario(&cat, SEED_TOOL, REFERENCE_SEED);
    let trace = synthesize_with(&cat, &scn, user_backend(), assistant_backend()).expect("reference synthesis");
    (cat, scn, trace)
}

/// Assistant under evaluation: answers the n-th user turn with the n-th reference turn.
pub fn eval_assistant_backend() -> FnBackend {
    FnBackend::single(|req| {
        let i = count(req, Role::User).clamp(1, ASSISTANT_TURNS.len()) - 1;
        ASSISTANT_TURNS[i].to_string()
    })
}

/// Voting generator: the reference utterance plus two padded variants.
pub fn voting_generator_backend() -> FnBackend {
    FnBackend::new(|req, n| {
        let base = USER_TURNS[count(req, Role::Assistant).min(USER_TURNS.len() - 1)];
        let variants = [base.to_string(), format!("{base} Thanks."), format!("{base} Thanks a lot.")];
        Ok((0..n).map(|i| variants[i % variants.len()].clone()).collect())
    })
}

/// Voter that prefers the unpadded candidate, wherever it is listed.
pub fn voter_backend() -> FnBackend {
    FnBackend::single(|req| {
        let prompt = req.messages.last().map_or("", |m| m.content.as_str());
        let listed = prompt.lines().filter_map(|l| {
            let (num, text) = l.split_once(". ")?;
            num.parse::<usize>().ok().map(|q| (q, text))
        });
        listed
            .filter(|(_, text)| !text.ends_with("Thanks.") && !text.ends_with("Thanks a lot."))
            .map(|(q, _)| q.to_string())
            .next_back()
            .unwrap_or_else(|| "1".into())
    })
}

pub fn convrel_backend() -> FnBackend {
    FnBackend::single(|_| r#"{"grade": 3}"#.to_string())
}
