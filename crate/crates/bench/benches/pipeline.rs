use std::hint::black_box;

use cft_bench::cities;
use cft_core::backend::OracleBackend;
use cft_core::curriculum::{self, CurriculumConfig};
use cft_core::eval::{self, ScoringOptions};
use cft_core::phrasing::{self, TaskKind};
use cft_core::pipeline::generate_corpora;
use cft_core::tokenizer::TokenizerSpec;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn render(c: &mut Criterion) {
    let f = cities(200, 1);
    c.bench_function("render_decision_templates", |b| {
        b.iter(|| phrasing::render_decision_templates(black_box(&f.train_pairs), &f.domain, &f.registry, 1, None).unwrap())
    });
}

fn tokens(c: &mut Criterion) {
    let f = cities(200, 1);
    let examples = phrasing::render_factual_comparisons(&f.train_pairs, &f.domain, &f.registry, 1).unwrap();
    let bpe = TokenizerSpec::default().load().unwrap();
    c.bench_function("bpe_count_comparisons", |b| {
        b.iter_batched(|| examples.clone(), |mut ex| bpe.annotate(&mut ex), BatchSize::LargeInput)
    });
}

fn assemble(c: &mut Criterion) {
    let f = cities(200, 1);
    let corpora = generate_corpora(&f.domain, &f.registry, &f.train_pairs, &TokenizerSpec::default(), 1).unwrap();
    let config = CurriculumConfig::new(true, true, true, true, 1);
    c.bench_function("assemble_full_curriculum", |b| b.iter(|| curriculum::assemble(black_box(&config), &corpora).unwrap()));
}

fn oracle_suite(c: &mut Criterion) {
    let f = cities(200, 1);
    let suite = eval::generate_test_suite(&f.split, &f.domain, &f.registry, TaskKind::DecisionTemplate, 50, 1).unwrap();
    let backend = OracleBackend::new(f.domain.clone(), f.registry.clone()).unwrap();
    let options = ScoringOptions { workers: 1, ..Default::default() };
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("score_dt_suite_1600", |b| b.iter(|| eval::evaluate(&backend, black_box(&suite), &options)));
    group.finish();
}

criterion_group!(benches, render, tokens, assemble, oracle_suite);
criterion_main!(benches);
