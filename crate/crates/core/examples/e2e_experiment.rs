//! Scratch harness for sizing the end-to-end training fixture.
use std::time::Instant;

use sarbbr::dataset::{build_dataset, DatasetParams, Split};
use sarbbr::formats::Prediction;
use sarbbr::height::{height_from_boxes, metrics};
use sarbbr::model::{predict, train, ModelConfig, TrainConfig};
use sarbbr::simulate::{render, ReflectivityProfile};
use sarbbr::synthetic::{fit_sensor_and_dims, random_city, CityParams};

fn env_f64(k: &str, d: f64) -> f64 {
    std::env::var(k).ok().map(|v| v.parse().unwrap()).unwrap_or(d)
}
fn env_usize(k: &str, d: usize) -> usize {
    std::env::var(k).ok().map(|v| v.parse().unwrap()).unwrap_or(d)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let count: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(500);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10);
    let spacing = env_f64("SP", 1.0);
    let spacing_az = env_f64("SPAZ", spacing);
    let convs = env_usize("CONVS", 2);
    let head = env_usize("HEAD", 40);
    let channels: Vec<usize> = std::env::var("CH")
        .unwrap_or_else(|_| "6,10,14,20".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();

    let t0 = Instant::now();
    let city = random_city(&CityParams {
        count,
        height_range: (3.0, 40.0),
        side_range: (14.0, 30.0),
        pitch: (90.0 * spacing, 70.0 * spacing_az),
        per_row: 23,
        seed,
    });
    let (sensor, dims) = fit_sensor_and_dims(&city, 36.08, spacing, spacing_az, 16.0).unwrap();
    eprintln!("scene {}x{} = {:.1} Mpx", dims.rows, dims.cols, dims.len() as f64 / 1e6);
    let profile = match std::env::var("PROFILE").as_deref() {
        Ok("contrast") => ReflectivityProfile {
            ground: 0.08,
            roof: 0.30,
            layover: 0.80,
            double_bounce: 1.60,
            shadow: 0.02,
        },
        _ => ReflectivityProfile::default(),
    };
    let scene = render(&city, &sensor, &profile, Some(seed.wrapping_mul(1000) + 17), dims).unwrap();
    eprintln!("render: {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let params = DatasetParams {
        patch_size: 128,
        stride: 70,
        split_fraction: 0.8,
        guard_px: 16.0,
        histogram_bins: 256,
    };
    let built = build_dataset(&scene, &city, &params).unwrap();
    let n_train = built.samples.iter().filter(|s| s.split == Split::Train).count();
    let n_test = built.samples.iter().filter(|s| s.split == Split::Test).count();
    eprintln!(
        "dataset: {} train / {} test samples, {} uncovered, {} guard-excluded ({:.1}s)",
        n_train, n_test, built.uncovered.len(), built.excluded_by_guard.len(),
        t1.elapsed().as_secs_f64()
    );

    let t2 = Instant::now();
    let model_cfg = ModelConfig {
        stage_channels: channels,
        head_channels: head,
        convs_per_stage: convs,
        roi_size: 7,
        roi_samples: 2,
        input_size: 128,
    };
    let train_cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let (model, log) = train(&built.samples, &model_cfg, &train_cfg).unwrap();
    for e in &log {
        eprintln!("  epoch {:3}  loss {:.5}  lr {:.6}", e.epoch, e.mean_loss, e.lr);
    }
    eprintln!("train: {:.1}s", t2.elapsed().as_secs_f64());

    // Split height statistics.
    let h_of = |split: Split| -> (f64, usize) {
        let mut ids = std::collections::BTreeSet::new();
        let mut sum = 0.0;
        for s in built.samples.iter().filter(|s| s.split == split) {
            if ids.insert(s.building_id.clone()) {
                sum += s.true_height;
            }
        }
        (sum / ids.len() as f64, ids.len())
    };
    let (h_train, n_train_b) = h_of(Split::Train);
    let (h_test, n_test_b) = h_of(Split::Test);
    eprintln!("mean height: train {h_train:.2} m ({n_train_b} buildings), test {h_test:.2} m ({n_test_b})");

    // Train-region heights through the same path (first sample per building).
    {
        let mut seen = std::collections::BTreeSet::new();
        let mut eval: Vec<_> = built
            .samples
            .iter()
            .filter(|s| s.split == Split::Train && seen.insert(s.building_id.clone()))
            .cloned()
            .collect();
        for s in &mut eval {
            s.split = Split::Test;
        }
        let preds_tr = predict(&model, &eval, Split::Test).unwrap();
        let results: Vec<_> = eval
            .iter()
            .map(|s| {
                let fb = s.footprint_box.translated(s.patch_origin.1 as f64, s.patch_origin.0 as f64);
                let p = preds_tr.iter().find(|(id, _)| id == &s.building_id).unwrap();
                let mut r = height_from_boxes(&s.building_id, &p.1, &fb, &sensor);
                r.true_height = Some(s.true_height);
                r
            })
            .collect();
        let m = metrics(&results).unwrap();
        eprintln!("train-region heights: he_mean {:.3} m, he_std {:.3} m, mae {:.3}", m.he_mean_m, m.he_std_m, m.mae_m);
    }

    let preds = predict(&model, &built.samples, Split::Test).unwrap();
    let heights: Vec<f64> = city.iter().map(|b| b.height).collect();
    let id_to_h: std::collections::BTreeMap<&str, f64> =
        city.iter().map(|b| b.id.as_str()).zip(heights).collect();
    let fb_by_id: std::collections::BTreeMap<String, sarbbr::bbox::BBox> = built
        .samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .map(|s| {
            let fb = s
                .footprint_box
                .translated(s.patch_origin.1 as f64, s.patch_origin.0 as f64);
            (s.building_id.clone(), fb)
        })
        .collect();
    let results: Vec<_> = preds
        .iter()
        .map(|(id, bx)| {
            let mut r = height_from_boxes(id, bx, &fb_by_id[id], &sensor);
            r.true_height = Some(id_to_h[id.as_str()]);
            r
        })
        .collect();
    let m = metrics(&results).unwrap();
    println!(
        "seed {seed}: he_mean {:.3} m, he_std {:.3} m, mae {:.3} m, n {}, clamped {} | total {:.1}s",
        m.he_mean_m, m.he_std_m, m.mae_m, m.n, m.clamped_count,
        t0.elapsed().as_secs_f64()
    );
    let _ = Prediction { building_id: String::new(), bbox: preds[0].1 };
}
