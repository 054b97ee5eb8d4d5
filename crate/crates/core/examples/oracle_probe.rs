//! One-off measurement run used to pin test thresholds.
use ldct_core::*;

fn psnr_pair(a: &[f64], b: &[f64]) -> f64 {
    ldct_core::metrics::psnr_normalized(a, b).unwrap()
}

fn main() {
    let w = 128usize;
    // disk analytic -> fbp
    let disk = Phantom {
        ellipses: vec![Ellipse {
            center: [0.0, 0.0],
            semi_axes: [0.6, 0.6],
            rotation: 0.0,
            density: 1.0,
        }],
    };
    let truth = rasterize(&disk, w).unwrap();
    for (name, geom) in [
        ("parallel", FanGeometry::parallel(360, 129).unwrap()),
        ("fan", FanGeometry::exact_fan(360, 129, 1, 2.0).unwrap()),
    ] {
        let ana = analytic_sinogram(&disk, &geom).unwrap();
        let rec = fbp(&ana, FilterKind::Ramp, w).unwrap();
        println!("disk analytic->fbp {name}: {:.3}", psnr_pair(&rec.data, &truth.data));
        let num = forward_project(&truth, &geom).unwrap();
        let rec2 = fbp(&num, FilterKind::Ramp, w).unwrap();
        println!("disk project->fbp {name}: {:.3}", psnr_pair(&rec2.data, &truth.data));
    }
    // shepp-logan round trip
    let sl = make_phantom(0, Complexity::Medium);
    let slimg = rasterize(&sl, w).unwrap();
    for (name, geom) in [
        ("parallel", FanGeometry::parallel(360, 129).unwrap()),
        ("fan", FanGeometry::exact_fan(360, 129, 1, 2.0).unwrap()),
    ] {
        let num = forward_project(&slimg, &geom).unwrap();
        for kind in [FilterKind::Ramp, FilterKind::HannRamp] {
            let rec = fbp(&num, kind, w).unwrap();
            println!(
                "shepp-logan project->fbp {name} {kind:?}: {:.3}",
                psnr_pair(&rec.data, &slimg.data)
            );
        }
        let ana = analytic_sinogram(&sl, &geom).unwrap();
        let rec = fbp(&ana, FilterKind::Ramp, w).unwrap();
        println!("shepp-logan analytic->fbp {name}: {:.3}", psnr_pair(&rec.data, &slimg.data));
    }
    // round-trip monotonicity in views
    for p in [90usize, 180, 360] {
        let geom = FanGeometry::parallel(p, 129).unwrap();
        let num = forward_project(&slimg, &geom).unwrap();
        let rec = fbp(&num, FilterKind::Ramp, w).unwrap();
        println!("sl round-trip parallel P={p}: {:.3}", psnr_pair(&rec.data, &slimg.data));
    }
    // projector deviation bands (parallel + fan)
    let img = rasterize(&disk, w).unwrap();
    let ps = img.pixel_size;
    for (name, geom) in [
        ("parallel", FanGeometry::parallel(360, 129).unwrap()),
        ("fan", FanGeometry::exact_fan(360, 129, 1, 2.0).unwrap()),
    ] {
        let num = forward_project(&img, &geom).unwrap();
        let exact = analytic_sinogram(&disk, &geom).unwrap();
        for band in [4.0, 6.0, 8.0, 10.0] {
            let mut max_core = 0.0f64;
            let mut max_edge = 0.0f64;
            for i in 0..geom.num_views {
                for col in 0..geom.num_detectors {
                    let s = match geom.mode {
                        ScanMode::Parallel => geom.signed_index(col) as f64 * geom.detector_spacing,
                        ScanMode::Fan => {
                            geom.source_radius
                                * (geom.signed_index(col) as f64 * geom.detector_spacing).sin()
                        }
                    };
                    let dev = (num.at(i, col) - exact.at(i, col)).abs();
                    if (s.abs() - 0.6).abs() >= band * ps {
                        max_core = max_core.max(dev);
                    } else {
                        max_edge = max_edge.max(dev);
                    }
                }
            }
            println!("{name} band {band}: core {max_core:.5} ({:.2} ps) edge {max_edge:.5}", max_core / ps);
        }
    }
}
