use criterion::{black_box, criterion_group, criterion_main, Criterion};

use relplace_bench::filled;
use relplace_core::diffcore::Tape;

fn conv(c: &mut Criterion) {
    let x = filled(&[4, 16, 32, 32], 1);
    let k = filled(&[32, 16, 3, 3], 2);
    let b = filled(&[32], 3);
    c.bench_function("conv2d 4x16x32x32 -> 32, 3x3", |bench| {
        bench.iter(|| {
            let mut tape = Tape::<f32>::new();
            let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
            black_box(tape.conv2d(xv, kv, bv, 1, 1).unwrap())
        })
    });
    c.bench_function("conv2d forward + backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::<f32>::new();
            let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
            let y = tape.conv2d(xv, kv, bv, 1, 1).unwrap();
            let s = tape.sum(y);
            black_box(tape.backward(s).unwrap())
        })
    });
}

criterion_group!(benches, conv);
criterion_main!(benches);
