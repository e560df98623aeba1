use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use deduct_bench::{item, synthetic_codebook};
use deduct_core::{build_prompt, PromptSpec, PromptStyle};

fn bench_render(c: &mut Criterion) {
    let item = item();
    for &codes in &[2usize, 8] {
        let book = synthetic_codebook(codes);
        for (style, shots) in [
            (PromptStyle::CodebookCentered, 0),
            (PromptStyle::CodebookCentered, 5),
            (PromptStyle::ExampleCentered, 5),
        ] {
            let spec = PromptSpec::new(style, shots);
            let name = format!("render {} shots={shots} codes={codes}", style.token());
            c.bench_function(&name, |bencher| {
                bencher.iter(|| black_box(build_prompt(&book, &spec, &item).unwrap()))
            });
        }
    }
}

criterion_group!(benches, bench_render);
criterion_main!(benches);
