use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use fogsplat_core::fog::FogParams;
use fogsplat_core::losses::{reconstruction_loss, ssim_with_grad};
use fogsplat_core::priors::{dcp_loss, MattingLaplacian, PriorMaps, DEFAULT_LAMBDA_SMOOTH, DEFAULT_OMEGA, DEFAULT_PATCH};
use fogsplat_core::raster::{render_pass, RenderGrads, RenderOptions};
use fogsplat_core::toy::{toy_scene, ToyConfig};

fn benches(c: &mut Criterion) {
    let toy = toy_scene(&ToyConfig::default()).expect("toy scene");
    let cam = &toy.cameras[0];
    let fog = FogParams::with_light(0.5, [0.8; 3], false);
    let opts = RenderOptions::default();

    c.bench_function("render_forward_128", |b| {
        b.iter(|| render_pass(black_box(&toy.cloud), cam, Some(&fog), true, &opts).unwrap())
    });

    let pass = render_pass(&toy.cloud, cam, Some(&fog), true, &opts).unwrap();
    let out = pass.output();
    let (_, g_color) = reconstruction_loss(&out.color, &toy.foggy[0], 0.2).unwrap();
    let grads = RenderGrads {
        color: Some(g_color),
        transmission: Some(out.transmission.map(|t| t - 0.5)),
        ..RenderGrads::default()
    };
    c.bench_function("render_backward_128", |b| {
        b.iter(|| pass.backward(black_box(&toy.cloud), &grads).unwrap())
    });

    c.bench_function("ssim_with_grad_128", |b| {
        b.iter(|| ssim_with_grad(black_box(&out.color), &toy.clear[0]).unwrap())
    });

    c.bench_function("prior_maps_128", |b| {
        b.iter(|| PriorMaps::estimate(black_box(&toy.foggy[0]), DEFAULT_PATCH, DEFAULT_OMEGA).unwrap())
    });

    let maps = PriorMaps::estimate(&toy.foggy[0], DEFAULT_PATCH, DEFAULT_OMEGA).unwrap();
    let lap = MattingLaplacian::new(&toy.foggy[0]).unwrap();
    c.bench_function("dcp_loss_128", |b| {
        b.iter(|| dcp_loss(black_box(&out.transmission), &maps.t_dcp, &lap, DEFAULT_LAMBDA_SMOOTH, false).unwrap())
    });
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(20);
    targets = benches
}
criterion_main!(pipeline);
