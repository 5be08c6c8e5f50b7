use std::collections::HashMap;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use steerprompt_core::backends::surrogate::{
    surrogate_embed, SurrogateGenerator, SurrogateScorer, SurrogateWorld,
};
use steerprompt_core::fitness::{fitness_dual, likelihoods};
use steerprompt_core::ndarray::{Array1, Array2};
use steerprompt_core::steering::{apply_offset, OffsetSite};
use steerprompt_core::{
    demo, EvalMode, FewShotTask, Generator, HistoryBuffer, ImageRef, LabeledExample,
    MetaPromptTemplate, Optimizer, PromptCandidate,
};

fn embedding(c: &mut Criterion) {
    c.bench_function("surrogate_embed/dim16", |b| {
        b.iter(|| surrogate_embed(black_box("photograph"), 16))
    });
}

fn scoring(c: &mut Criterion) {
    let sims: Vec<f64> = (0..1000)
        .map(|i| ((i * 37) % 200) as f64 / 100.0 - 1.0)
        .collect();
    c.bench_function("likelihoods/1000_classes", |b| {
        b.iter(|| likelihoods(black_box(&sims), 0.01).unwrap())
    });

    let world = Arc::new(SurrogateWorld::default());
    let classes: Vec<String> = (0..10).map(|c| format!("class{c}")).collect();
    let mut images = HashMap::new();
    let mut examples = Vec::new();
    for i in 0..100 {
        let image = ImageRef::new(format!("img{i}"));
        let label = i % classes.len();
        let v = world
            .mean_embedding(&format!("photo {}", classes[label]))
            .unwrap();
        images.insert(image.clone(), v.to_vec());
        examples.push(LabeledExample {
            image,
            label,
            choices: None,
        });
    }
    let task =
        FewShotTask::new(classes, examples, "bench", "bench", EvalMode::DualEncoder).unwrap();
    let scorer = SurrogateScorer::new(world, images);
    c.bench_function("fitness_dual/10_classes_100_examples", |b| {
        b.iter(|| fitness_dual(black_box("a photo of a {}"), &task, &scorer, 0.01).unwrap())
    });
}

fn steering(c: &mut Criterion) {
    let hidden = Array2::from_shape_fn((64, 4096), |(r, c)| ((r * 31 + c) % 97) as f64 / 97.0);
    let g = Array1::from_elem(4096, 0.01);
    c.bench_function("apply_offset/last_row_64x4096", |b| {
        b.iter(|| apply_offset(black_box(&hidden), &g, OffsetSite::LastRow).unwrap())
    });
    c.bench_function("apply_offset/all_rows_64x4096", |b| {
        b.iter(|| apply_offset(black_box(&hidden), &g, OffsetSite::AllRows).unwrap())
    });

    let world = Arc::new(SurrogateWorld::default());
    let generator = SurrogateGenerator::new(world, demo::GENERATOR_TEMPERATURE);
    c.bench_function("surrogate_generate/50_tokens", |b| {
        b.iter(|| {
            generator
                .generate(black_box("a photo of a"), None, 50, 7)
                .unwrap()
        })
    });
}

fn history(c: &mut Criterion) {
    let mut history = HistoryBuffer::new();
    history
        .add_scored((0..1000).map(|i| {
            PromptCandidate::scored(
                format!("prompt {i}"),
                ((i * 7919) % 1000) as f64 / 1000.0,
                i / 10,
            )
        }))
        .unwrap();
    c.bench_function("top_bottom/1000_entries", |b| {
        b.iter(|| black_box(&history).top_bottom(5).unwrap())
    });
    c.bench_function("best_pair/1000_entries", |b| {
        b.iter(|| black_box(&history).best_pair().unwrap())
    });
}

fn optimizer(c: &mut Criterion) {
    let world = Arc::new(SurrogateWorld::default());
    c.bench_function("optimizer_step/surrogate_demo", |b| {
        b.iter_batched(
            || {
                Optimizer::initialize(
                    demo::config(1.0, 3),
                    demo::task(),
                    MetaPromptTemplate::default(),
                    &demo::seed_prompts(),
                    demo::backends(world.clone()),
                )
                .unwrap()
                .0
            },
            |mut opt| opt.step().unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, embedding, scoring, steering, history, optimizer);
criterion_main!(benches);
