//! Calibration run for the desk-scale overfit configuration.
use ldct_core::dataset::{generate_sample, DatasetSpec};
use ldct_core::noise::DoseConfig;
use ldct_core::phantom::Complexity;
use ldct_core::{fbp, FanGeometry, FilterKind};
use ldct_model::config::{ModelConfig, TrainConfig};
use ldct_model::net::DenoiseModel;
use ldct_model::train::{denoise_pair, train};

fn main() {
    let t0 = std::time::Instant::now();
    let geom = FanGeometry::parallel(36, 33).unwrap();
    let spec = DatasetSpec {
        count: 4,
        geometry: geom.clone(),
        width: 64,
        dose: DoseConfig::new(0.1, 7),
        seed: 7,
        complexity: Complexity::Medium,
    };
    let samples: Vec<_> = (0..4).map(|k| generate_sample(&spec, k).unwrap()).collect();
    println!("dataset generated in {:?}", t0.elapsed());

    // baseline: noisy FBP vs clean raster
    let mut base = ldct_core::metrics::MetricReport::default();
    for (k, s) in samples.iter().enumerate() {
        base.push(
            format!("{k}"),
            ldct_core::metrics::sample_metrics(&s.i_ld.data, &s.i_nd.data, 64, 64).unwrap(),
        );
    }
    println!("baseline FBP psnr {:.3}", base.mean().unwrap().psnr);

    let model_cfg = ModelConfig::desk_scale();
    let model = DenoiseModel::new(model_cfg).unwrap();
    let epochs: u32 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let lr: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let bs: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(1);
    let cfg = TrainConfig {
        epochs,
        batch_size: bs,
        lr,
        lr_decay: 0.7,
        lr_period: 50,
        seed: 1,
        ..TrainConfig::default()
    };
    let t1 = std::time::Instant::now();
    let out = train::<f32>(&model, &geom, &samples, &[], &cfg).unwrap();
    let dt = t1.elapsed();
    println!(
        "epochs {epochs} lr {lr} bs {bs}: init loss {:.4e} final {:.4e} ratio {:.3} wall {:?} ({:?}/epoch)",
        out.initial_loss,
        out.final_loss,
        out.final_loss / out.initial_loss,
        dt,
        dt / epochs
    );
    // model image PSNR on training set
    let mut rep = ldct_core::metrics::MetricReport::default();
    for (k, s) in samples.iter().enumerate() {
        let (_, i_hat, _) = denoise_pair(&model, &out.params, &s.s_ld, &s.i_ld).unwrap();
        rep.push(
            format!("{k}"),
            ldct_core::metrics::sample_metrics(&i_hat.data, &s.i_nd.data, 64, 64).unwrap(),
        );
    }
    println!("model image psnr {:.3} (baseline {:.3})", rep.mean().unwrap().psnr, base.mean().unwrap().psnr);
    let tail = out.log.lines().rev().take(3).collect::<Vec<_>>();
    println!("last rows:\n{}", tail.join("\n"));
    // keep fbp referenced
    let _ = fbp(&samples[0].s_nd, FilterKind::Ramp, 64).unwrap();
}
