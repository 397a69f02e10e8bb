//! Criterion benchmarks: wire codec, Monte-Carlo deployment, the exact
//! chain oracle and the flow-matching gradient.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use serde_json::{json, Map, Value};

use lifecycle_core::fixtures::{vanity_plan, vanity_pool, vanity_scenario};
use lifecycle_core::fmpolicy::{
    fm_loss_and_grad, sample_chunk, standard_normal_chunk, ActionChunk, FlowItem, VelocityField,
};
use lifecycle_core::harness::{markov_success, ChainParams, SubtaskChain};
use lifecycle_core::toolbus::{decode_request, encode_request};
use lifecycle_core::util::episode_rng;
use lifecycle_core::{deploy, DeployConfig, HumanConfig, ToolRequest};

fn codec(c: &mut Criterion) {
    let mut args = Map::new();
    args.insert("policy_id".into(), json!("lotion_fwd"));
    args.insert(
        "instruction".into(),
        Value::String("pick up the lotion and place it on the tray".into()),
    );
    let req = ToolRequest::call(42, "start_policy", args);
    let line = encode_request(&req);
    c.bench_function("codec/encode_request", |b| {
        b.iter(|| encode_request(black_box(&req)))
    });
    c.bench_function("codec/decode_request", |b| {
        b.iter(|| decode_request(black_box(&line)).unwrap())
    });
}

fn deployment(c: &mut Criterion) {
    let scenario = Arc::new(vanity_scenario());
    let pool = vanity_pool();
    let plan = vanity_plan();
    let cfg = DeployConfig {
        episodes: 100,
        seed: 7,
        human: HumanConfig::single_retry(),
        iteration: Some(5),
    };
    let mut g = c.benchmark_group("deploy");
    g.sample_size(20);
    g.bench_function("vanity_100_episodes", |b| {
        b.iter(|| deploy(&scenario, &pool, &plan, black_box(&cfg)).unwrap())
    });
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let sub = SubtaskChain {
        success_prob: 0.6,
        nondegrading_fraction: 0.7,
        recovery_success: Some(0.5),
        max_attempts: 3,
        human_retry: true,
    };
    let params = ChainParams {
        subtasks: vec![sub; 8],
    };
    c.bench_function("oracle/markov_success_8", |b| {
        b.iter(|| markov_success(black_box(&params)).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let h = 8;
    let mut rng = episode_rng(1, 0);
    let field = VelocityField::new(&[2 * h + 1 + 8, 64, 64, 2 * h], &mut rng).unwrap();
    let batch: Vec<FlowItem> = (0..16)
        .map(|i| FlowItem {
            cond: vec![0.1 * i as f64; 8],
            action: ActionChunk::zeros(h),
            eps: standard_normal_chunk(h, &mut rng),
            tau: i as f64 / 16.0,
        })
        .collect();
    c.bench_function("flow/loss_and_grad_batch16", |b| {
        b.iter(|| fm_loss_and_grad(black_box(&field), &batch).unwrap())
    });
    let cond = vec![0.3; 8];
    c.bench_function("flow/sample_chunk_3_steps", |b| {
        b.iter(|| sample_chunk(&field, black_box(&cond), h, 3, &mut rng).unwrap())
    });
}

criterion_group!(benches, codec, deployment, oracle, flow);
criterion_main!(benches);
