//! Variant calibration: smaller noise embedding.
use ldct_core::dataset::{generate_sample, DatasetSpec};
use ldct_core::noise::DoseConfig;
use ldct_core::phantom::Complexity;
use ldct_core::FanGeometry;
use ldct_model::config::{ModelConfig, TrainConfig};
use ldct_model::net::DenoiseModel;
use ldct_model::train::{denoise_pair, train};

fn main() {
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
    let mut base = ldct_core::metrics::MetricReport::default();
    for (k, s) in samples.iter().enumerate() {
        base.push(
            format!("{k}"),
            ldct_core::metrics::sample_metrics(&s.i_ld.data, &s.i_nd.data, 64, 64).unwrap(),
        );
    }
    let mut model_cfg = ModelConfig::desk_scale();
    model_cfg.noise_channels = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(2);
    let model = DenoiseModel::new(model_cfg).unwrap();
    let epochs: u32 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let lr: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let bs: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(2);
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
        "c={} epochs {epochs} lr {lr} bs {bs}: ratio {:.3} wall {:?} ({:?}/epoch)",
        model.config.noise_channels,
        out.final_loss / out.initial_loss,
        dt,
        dt / epochs
    );
    let mut rep = ldct_core::metrics::MetricReport::default();
    for (k, s) in samples.iter().enumerate() {
        let (_, i_hat, _) = denoise_pair(&model, &out.params, &s.s_ld, &s.i_ld).unwrap();
        rep.push(
            format!("{k}"),
            ldct_core::metrics::sample_metrics(&i_hat.data, &s.i_nd.data, 64, 64).unwrap(),
        );
    }
    println!(
        "model img psnr {:.3} baseline {:.3}; last: {}",
        rep.mean().unwrap().psnr,
        base.mean().unwrap().psnr,
        out.log.lines().last().unwrap()
    );
}
