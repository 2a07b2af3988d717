use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use forge_core::catalogue::{Catalogue, Tool};
use forge_core::dialogue::{AssistantTurn, DialogueTrace, Message, Termination, ToolCall};
use forge_core::embed::{Embedder, HashEmbedder};
use forge_core::fixtures;
use forge_core::metrics::{self, Reference};
use forge_core::retrieval::ToolIndex;
use forge_core::sft;
use forge_core::validate;
use serde_json::json;

const WORDS: [&str; 12] = [
    "order", "invoice", "transport", "warehouse", "payroll", "ledger", "freight", "carrier", "stock", "supplier",
    "budget", "ticket",
];

fn catalogue(size: usize) -> Catalogue {
    let tools = (0..size)
        .map(|i| {
            let desc: Vec<&str> = (0..8).map(|j| WORDS[(i * 7 + j * 3) % WORDS.len()]).collect();
            Tool::new(format!("tool_{i:05}"), desc.join(" "))
        })
        .collect();
    Catalogue::from_tools(tools).unwrap()
}

fn dialogue(i: usize, turns: usize) -> DialogueTrace {
    let mut messages = Vec::new();
    for t in 0..turns {
        messages.push(Message::user(format!("could you check the freight ledger for order {i} please")));
        let turn = if t + 1 == turns {
            let args = json!({"a": i % 3, "b": "x"}).as_object().unwrap().clone();
            AssistantTurn::call("commit", vec![ToolCall::new(if i.is_multiple_of(4) { "near" } else { "gold" }, args)])
        } else {
            AssistantTurn::reply("ask", format!("which carrier handles order {i} and for which week"))
        };
        messages.push(Message::Assistant(turn));
    }
    DialogueTrace {
        id: format!("d{i}"),
        scenario_id: format!("s{i}"),
        candidates: vec![],
        messages,
        phase_boundary: 1,
        terminated_by: Termination::ToolCall,
    }
}

fn retrieval(c: &mut Criterion) {
    let emb = HashEmbedder::default();
    let mut group = c.benchmark_group("retrieval");
    for size in [100, 1_000, 5_000] {
        let cat = catalogue(size);
        let index = ToolIndex::build(&cat, &emb).unwrap();
        let query = emb.embed("track the freight order for the carrier").unwrap();
        group.bench_with_input(BenchmarkId::new("search_k5", size), &size, |b, _| {
            b.iter(|| index.search(black_box(&query), 5, None))
        });
        group.bench_with_input(BenchmarkId::new("distractors_k5", size), &size, |b, _| {
            b.iter(|| index.nearest_distractors(black_box("tool_00000"), 5).unwrap())
        });
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let gold = Reference { gold_tool: "gold".into(), gold_args: json!({"a": 1, "b": "x"}).as_object().unwrap().clone() };
    let corpus: Vec<(DialogueTrace, Reference)> = (0..1_000).map(|i| (dialogue(i, 4), gold.clone())).collect();
    c.bench_function("metrics/score_1000", |b| b.iter(|| metrics::score(black_box(&corpus), None).unwrap()));
    let traces: Vec<DialogueTrace> = corpus.into_iter().map(|(d, _)| d).collect();
    c.bench_function("metrics/lexical_1000", |b| b.iter(|| metrics::lexical_metrics(black_box(&traces))));
}

fn slicing(c: &mut Criterion) {
    let d = dialogue(1, 12);
    c.bench_function("sft/slice_12_turns", |b| b.iter(|| sft::slice_dialogue(black_box(&d), "system prompt")));
}

fn cascade(c: &mut Criterion) {
    let (cat, scn, d) = fixtures::reference_dialogue();
    c.bench_function("validate/functional_cascade", |b| {
        b.iter(|| validate::run_cascade(black_box(&d), &scn, &cat, None).unwrap())
    });
}

criterion_group!(benches, retrieval, scoring, slicing, cascade);
criterion_main!(benches);
