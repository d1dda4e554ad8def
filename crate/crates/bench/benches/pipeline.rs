use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigforge_bench::{asset_dir, character};
use rigforge_core::autodiff::{Tape, Tensor};
use rigforge_core::connectivity::Skeleton;
use rigforge_core::joints::{mean_shift_step, mean_shift_step_dense};
use rigforge_core::mesh::Vec3;
use rigforge_core::metrics::{hungarian, tree_edit_distance};
use rigforge_core::rig::{Models, RigOptions};

fn mean_shift(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 400;
    let q = Tensor::new(n, 3, (0..3 * n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
    let a = Tensor::column(&(0..n).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
    let log_h = Tensor::scalar(0.05f64.ln());
    for (name, dense) in [("mean_shift_step/fused/400", false), ("mean_shift_step/dense/400", true)] {
        c.bench_function(name, |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let q = tape.leaf("q", q.clone()).unwrap();
                let a = tape.constant(a.clone()).unwrap();
                let h = tape.leaf("log_h", log_h.clone()).unwrap();
                let out = if dense { mean_shift_step_dense(&mut tape, q, a, h) } else { mean_shift_step(&mut tape, q, a, h) }.unwrap();
                let loss = tape.sum(out).unwrap();
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
}

fn pipeline(c: &mut Criterion) {
    let models = Models::load(&asset_dir().join("ckpt")).unwrap();
    let (mesh, _) = character("quadruped");
    c.bench_function("prepare/quadruped", |b| b.iter(|| black_box(models.prepare(&mesh).unwrap())));
    let prepared = models.prepare(&mesh).unwrap();
    for h in [0.02, 0.05] {
        let options = RigOptions { bandwidth: Some(h), symmetry: true };
        c.bench_function(&format!("skeleton/quadruped/h={h}"), |b| {
            b.iter(|| black_box(models.skeleton(&prepared, &options).unwrap()))
        });
    }
    let skeleton = models.skeleton(&prepared, &RigOptions::default()).unwrap();
    c.bench_function("skin_weights/quadruped", |b| b.iter(|| black_box(models.skin_weights(&prepared, &skeleton).unwrap())));
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cost: Vec<Vec<f64>> = (0..64).map(|_| (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    c.bench_function("hungarian/64x64", |b| b.iter(|| black_box(hungarian(&cost))));

    let (mesh, rig) = character("spider");
    let reference = rig.skeleton().unwrap();
    let mut jitter = ChaCha8Rng::seed_from_u64(3);
    let moved = reference.joints().iter().map(|p| p + Vec3::new(jitter.gen_range(-0.02..0.02), 0.0, 0.0)).collect();
    let pred = Skeleton::new(moved, reference.parents().to_vec(), reference.root()).unwrap();
    c.bench_function("tree_edit_distance/spider", |b| b.iter(|| black_box(tree_edit_distance(&pred, &reference, &mesh))));
}

criterion_group!(benches, mean_shift, pipeline, metrics);
criterion_main!(benches);
