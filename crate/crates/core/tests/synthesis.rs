use std::sync::{Arc, Mutex};

use forge_core::catalogue::{Catalogue, Tool};
use forge_core::dialogue::{
    check_stopping, AssistantTurn, DialogueTrace, EngineConfig, EngineError, LiveRetriever, Message,
    RejectionKind, StopDecision, Synthesizer, Termination, ToolCall,
};
use forge_core::embed::{Embedder, HashEmbedder};
use forge_core::fixtures;
use forge_core::gateway::{ChatBackend, CompletionRequest, FnBackend, GatewayError, LlmClient, Role};
use forge_core::retrieval::ToolIndex;
use forge_core::scenario::{PersonaStore, Scenario, ScenarioSampler};
use forge_core::validate::{self, Judges, Verdict};
use serde_json::json;

struct Setup {
    cat: Catalogue,
    index: ToolIndex,
    emb: Arc<dyn Embedder>,
}

impl Setup {
    fn new(cat: Catalogue) -> Self {
        let emb: Arc<dyn Embedder> = Arc::new(HashEmbedder::default());
        let index = ToolIndex::build(&cat, emb.as_ref()).unwrap();
        Self { cat, index, emb }
    }

    fn scenario(&self, seed_tool: &str) -> Scenario {
        let store = PersonaStore::new(vec![fixtures::PERSONA.into()], self.emb.clone()).unwrap();
        let goal = LlmClient::new("goal", Arc::new(fixtures::goal_backend()));
        let slots = LlmClient::new("slots", Arc::new(fixtures::slot_backend()));
        ScenarioSampler {
            catalogue: &self.cat,
            index: &self.index,
            personas: &store,
            goal_client: &goal,
            slot_client: &slots,
            k: 5,
            persona_k: 10,
        }
        .build(seed_tool, 2024)
        .unwrap()
    }

    fn run(&self, scn: &Scenario, user: impl ChatBackend + 'static, asst: impl ChatBackend + 'static, config: EngineConfig) -> Result<DialogueTrace, EngineError> {
        let user = LlmClient::new("user", Arc::new(user)).with_temperature(0.7);
        let asst = LlmClient::new("asst", Arc::new(asst));
        Synthesizer {
            catalogue: &self.cat,
            retriever: LiveRetriever { index: &self.index, embedder: self.emb.as_ref() },
            user: &user,
            assistant: &asst,
            config,
        }
        .synthesize(scn)
    }
}

/// Wraps a backend and keeps every request it sees.
struct Spy {
    inner: FnBackend,
    seen: Arc<Mutex<Vec<CompletionRequest>>>,
}

impl ChatBackend for Spy {
    fn complete(&self, model_id: &str, req: &CompletionRequest) -> Result<String, GatewayError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.complete(model_id, req)
    }
}

#[test]
fn reference_dialogue_is_reproduced() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    assert_eq!(scn.pool.len(), 6);
    assert_eq!(serde_json::Value::Object(scn.gold_args.clone()), json!({"nodeId": 437292, "transportRequestId": 957841}));

    let trace = s.run(&scn, fixtures::user_backend(), fixtures::assistant_backend(), EngineConfig::default()).unwrap();
    assert_eq!(trace.terminated_by, Termination::ToolCall);
    assert_eq!(trace.assistant_count(), 3);
    assert_eq!(trace.user_count(), 3);
    assert_eq!(trace.phase_boundary, 2);
    let users: Vec<&str> = trace.user_turns().collect();
    assert_eq!(users, fixtures::USER_TURNS.to_vec());
    let last = trace.last_assistant().unwrap();
    assert_eq!(last.calls(), &[ToolCall::new(fixtures::SEED_TOOL, fixtures::gold_args())]);
    // The selection marker message was dropped.
    assert!(trace.assistant_turns().all(|a| !a.content.contains("<select>")));
    assert!(trace.candidates.contains(&fixtures::SEED_TOOL.to_string()));

    let again = s.run(&scn, fixtures::user_backend(), fixtures::assistant_backend(), EngineConfig::default()).unwrap();
    assert_eq!(trace, again);
}

#[test]
fn agent_contexts_follow_the_history_views() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let user_seen = Arc::new(Mutex::new(Vec::new()));
    let asst_seen = Arc::new(Mutex::new(Vec::new()));
    let trace = s
        .run(
            &scn,
            Spy { inner: fixtures::user_backend(), seen: user_seen.clone() },
            Spy { inner: fixtures::assistant_backend(), seen: asst_seen.clone() },
            EngineConfig::default(),
        )
        .unwrap();

    // Assistant: the last request (final call) sees [SYS, u1, a1, u2, a2, u3] with thoughts.
    let asst = asst_seen.lock().unwrap();
    let final_req = asst.last().unwrap();
    let expected: Vec<String> = trace.messages[..5]
        .iter()
        .map(|m| match m {
            Message::User { content } => content.clone(),
            Message::Assistant(a) => a.render(),
        })
        .collect();
    let got: Vec<String> = final_req.messages[1..].iter().map(|m| m.content.clone()).collect();
    assert_eq!(got, expected);
    assert!(final_req.messages[2].content.starts_with("<think>"));

    // User-proxy never sees a thought, and only sees values after selection.
    let user = user_seen.lock().unwrap();
    for req in user.iter() {
        for m in &req.messages[1..] {
            assert!(!m.content.contains("<think>"));
        }
    }
    assert!(!user[0].messages[0].content.contains("437292"));
    assert!(user.last().unwrap().messages[0].content.contains("437292"));
    assert_eq!(user.last().unwrap().messages.iter().filter(|m| m.role == Role::Assistant).count(), 2);
}

#[test]
fn wrong_selection_rejects() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let err = s.run(&scn, fixtures::user_backend(), fixtures::wrong_tool_assistant_backend(), EngineConfig::default()).unwrap_err();
    let r = err.rejection().expect("rejection");
    assert_eq!(r.kind, RejectionKind::WrongTool);
    assert_eq!(r.partial.len(), 4);
}

#[test]
fn retriever_miss_exhausts_attempts() {
    let s = Setup::new(fixtures::transport_catalogue());
    let mut scn = s.scenario(fixtures::SEED_TOOL);
    // A single-slot pool can only hold the best match for the opening, which is not the seed here.
    scn.pool = vec![fixtures::SEED_TOOL.into()];
    let calls = Arc::new(Mutex::new(0usize));
    let c = calls.clone();
    let user = FnBackend::single(move |_| {
        *c.lock().unwrap() += 1;
        "I need to book a freight carrier between two locations".into()
    });
    let err = s.run(&scn, user, fixtures::assistant_backend(), EngineConfig::default()).unwrap_err();
    assert_eq!(err.rejection().unwrap().kind, RejectionKind::RetrieverMiss);
    assert_eq!(*calls.lock().unwrap(), 5);
}

#[test]
fn never_calling_assistant_hits_the_cap() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let asst = FnBackend::single(|req| {
        if req.messages[0].content.contains("<select>") && req.messages.len() > 2 {
            fixtures::SELECT_TURN.into()
        } else {
            "<think>Need more.</think> Anything else?".into()
        }
    });
    let cfg = EngineConfig { max_turns: 6, regen_attempts: 5 };
    let trace = s.run(&scn, fixtures::user_backend(), asst, cfg).unwrap();
    assert_eq!(trace.terminated_by, Termination::TurnCap);
    assert_eq!(trace.assistant_count(), 6);
    assert!(trace.alternates());
}

#[test]
fn param_free_tool_calls_immediately() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario("fn_2006_shipment_delay_report");
    assert!(scn.gold_args.is_empty());
    let asst = FnBackend::single(|req| {
        if req.messages[0].content.contains("<select>") {
            "<think>Delay reporting.</think> <select>fn_2006_shipment_delay_report</select>".into()
        } else {
            r#"<think>No parameters.</think> [{"name": "fn_2006_shipment_delay_report", "args": {}}]"#.into()
        }
    });
    let user = FnBackend::single(|_| "Our shipments keep getting delayed, I need to report on transport risks".into());
    let trace = s.run(&scn, user, asst, EngineConfig::default()).unwrap();
    assert_eq!(trace.assistant_count(), 1);
    assert_eq!(trace.phase_boundary, 1);
    assert_eq!(trace.last_assistant().unwrap().calls()[0].args.len(), 0);
}

#[test]
fn stopping_uses_canonical_equality() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let turn = |args: serde_json::Value| AssistantTurn::call("t", vec![ToolCall::new(fixtures::SEED_TOOL, args.as_object().unwrap().clone())]);
    assert_eq!(check_stopping(&turn(json!({"nodeId": 437292, "transportRequestId": 957841})), &scn, 1, 12), StopDecision::Success);
    assert_eq!(check_stopping(&turn(json!({"nodeId": "437292", "transportRequestId": 957841})), &scn, 1, 12), StopDecision::Success);
    assert_eq!(check_stopping(&turn(json!({"nodeId": 437292, "transportRequestId": 957841, "region": "EU"})), &scn, 1, 12), StopDecision::Continue);
    assert_eq!(check_stopping(&AssistantTurn::reply("t", "hi"), &scn, 12, 12), StopDecision::CapPending);
}

fn judges(critique: FnBackend) -> Judges {
    Judges {
        relevancy: LlmClient::new("rel", Arc::new(fixtures::judge_backend())),
        critique: LlmClient::new("cri", Arc::new(critique)),
    }
}

#[test]
fn cascade_accepts_reference_and_short_circuits_in_order() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let trace = s.run(&scn, fixtures::user_backend(), fixtures::assistant_backend(), EngineConfig::default()).unwrap();
    let j = judges(fixtures::judge_backend());

    let ok = validate::run_cascade(&trace, &scn, &s.cat, Some(&j)).unwrap();
    assert_eq!(ok.verdict, Verdict::Accept);
    assert_eq!(ok.executed(), vec!["format", "toolcall", "toolargs", "relevancy", "critique"]);

    let mut bad_format = trace.clone();
    bad_format.messages.insert(1, Message::user("again"));
    let r = validate::run_cascade(&bad_format, &scn, &s.cat, Some(&j)).unwrap();
    assert_eq!(r.executed(), vec!["format"]);
    assert!(r.failures[0].reason.starts_with("alternation"));

    let mut no_thought = trace.clone();
    if let Message::Assistant(a) = &mut no_thought.messages[1] {
        a.thought.clear();
    }
    let r = validate::run_cascade(&no_thought, &scn, &s.cat, Some(&j)).unwrap();
    assert!(r.failures[0].reason.starts_with("thought"));

    let mut args_bad = trace.clone();
    if let Some(Message::Assistant(a)) = args_bad.messages.last_mut() {
        a.tool_calls.as_mut().unwrap()[0].args.remove("transportRequestId");
    }
    let r = validate::run_cascade(&args_bad, &scn, &s.cat, Some(&j)).unwrap();
    assert_eq!(r.executed(), vec!["format", "toolcall", "toolargs"]);
    assert_eq!(r.failures.len(), 1);

    let critic = FnBackend::single(|_| r#"{"verdict": "fail", "reason": "user revealed all slots unprompted"}"#.into());
    let r = validate::run_cascade(&trace, &scn, &s.cat, Some(&judges(critic))).unwrap();
    assert_eq!(r.verdict, Verdict::Reject);
    assert_eq!(r.failures[0].validator, "critique");
}

#[test]
fn judge_timeout_is_requeued_once() {
    let s = Setup::new(fixtures::transport_catalogue());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let trace = s.run(&scn, fixtures::user_backend(), fixtures::assistant_backend(), EngineConfig::default()).unwrap();

    let flaky_calls = Arc::new(Mutex::new(0usize));
    let c = flaky_calls.clone();
    let flaky = FnBackend::new(move |_, n| {
        let mut k = c.lock().unwrap();
        *k += 1;
        if *k == 1 {
            Err(GatewayError::Timeout("stub latency".into()))
        } else {
            Ok(vec![fixtures::PASS_VERDICT.to_string(); n])
        }
    });
    let r = validate::run_cascade(&trace, &scn, &s.cat, Some(&judges(flaky))).unwrap();
    assert!(r.accepted());
    assert_eq!(*flaky_calls.lock().unwrap(), 2);

    let dead = FnBackend::new(|_, _| Err(GatewayError::Timeout("stub latency".into())));
    let err = validate::run_cascade(&trace, &scn, &s.cat, Some(&judges(dead))).unwrap_err();
    assert!(matches!(err, validate::ValidationError::Infrastructure { validator: "critique", .. }));
}

#[test]
fn toolcall_validator_cases() {
    let s = Setup::new(Catalogue::from_tools(vec![fixtures::seed_tool(), Tool::new("other", "x")]).unwrap());
    let scn = s.scenario(fixtures::SEED_TOOL);
    let base = |calls: Option<Vec<ToolCall>>, term| DialogueTrace {
        id: "d".into(),
        scenario_id: scn.id.clone(),
        candidates: scn.pool.clone(),
        messages: vec![
            Message::user("hi"),
            Message::Assistant(match calls {
                Some(c) => AssistantTurn::call("t", c),
                None => AssistantTurn::reply("t", "hello"),
            }),
        ],
        phase_boundary: 1,
        terminated_by: term,
    };
    let gold = ToolCall::new(fixtures::SEED_TOOL, fixtures::gold_args());
    assert!(validate::validate_toolcall(&base(Some(vec![gold.clone()]), Termination::ToolCall), &scn).is_ok());
    assert!(validate::validate_toolcall(&base(Some(vec![ToolCall::new("other", Default::default())]), Termination::ToolCall), &scn).is_err());
    assert!(validate::validate_toolcall(&base(None, Termination::TurnCap), &scn).is_err());
    let mut extra = fixtures::gold_args();
    extra.insert("region".into(), json!("EU"));
    let r = validate::validate_toolargs(&base(Some(vec![ToolCall::new(fixtures::SEED_TOOL, extra)]), Termination::ToolCall), &scn);
    assert!(r.unwrap_err().contains("superfluous"));
}
