//! Scratch harness for sizing the overfit fixture.
use std::time::Instant;

use sarbbr::dataset::{build_dataset, DatasetParams, Split};
use sarbbr::height::{height_from_boxes, metrics};
use sarbbr::model::{predict, train, ModelConfig, TrainConfig};
use sarbbr::simulate::{render, ReflectivityProfile};
use sarbbr::synthetic::{fit_sensor_and_dims, random_city, CityParams};

fn env_usize(k: &str, d: usize) -> usize {
    std::env::var(k).ok().map(|v| v.parse().unwrap()).unwrap_or(d)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
    let speckle: bool = args.get(3).map(|s| s == "speckle").unwrap_or(true);
    let patience = env_usize("PATIENCE", 25);
    let head = env_usize("HEAD", 40);
    let channels: Vec<usize> = std::env::var("CH")
        .unwrap_or_else(|_| "6,10,14,20".into())
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();

    let t0 = Instant::now();
    let city = random_city(&CityParams {
        count: 52,
        height_range: (3.0, 40.0),
        side_range: (14.0, 30.0),
        pitch: (90.0, 70.0),
        per_row: 7,
        seed,
    });
    let (sensor, dims) = fit_sensor_and_dims(&city, 36.08, 1.0, 1.0, 16.0).unwrap();
    let scene = render(
        &city,
        &sensor,
        &ReflectivityProfile::default(),
        if speckle { Some(seed ^ 0xf00) } else { None },
        dims,
    )
    .unwrap();
    let params = DatasetParams {
        patch_size: 128,
        stride: 70,
        split_fraction: 0.8,
        guard_px: 16.0,
        histogram_bins: 256,
    };
    let built = build_dataset(&scene, &city, &params).unwrap();
    // Keep exactly 32 train samples, one per building id (distinct buildings).
    let mut seen = std::collections::BTreeSet::new();
    let mut samples: Vec<_> = built
        .samples
        .iter()
        .filter(|s| s.split == Split::Train && seen.insert(s.building_id.clone()))
        .take(32)
        .cloned()
        .collect();
    for s in &mut samples {
        s.split = Split::Train;
    }
    eprintln!("{} overfit samples, scene {}x{}", samples.len(), dims.rows, dims.cols);

    let model_cfg = ModelConfig {
        stage_channels: channels,
        head_channels: head,
        convs_per_stage: 2,
        roi_size: 7,
        roi_samples: 2,
        input_size: 128,
    };
    let train_cfg = TrainConfig {
        epochs,
        batch_size: 4,
        lr: 0.001,
        plateau_patience: patience,
        seed,
        ..TrainConfig::default()
    };
    let (model, log) = train(&samples, &model_cfg, &train_cfg).unwrap();
    for e in log.iter().step_by(20).chain(log.last()) {
        eprintln!("  epoch {:3}  loss {:.5}", e.epoch, e.mean_loss);
    }
    // Heights on the training buildings themselves.
    let mut eval = samples.clone();
    for s in &mut eval {
        s.split = Split::Test;
    }
    let preds = predict(&model, &eval, Split::Test).unwrap();
    let results: Vec<_> = eval
        .iter()
        .map(|s| {
            let fb = s
                .footprint_box
                .translated(s.patch_origin.1 as f64, s.patch_origin.0 as f64);
            let pred = preds.iter().find(|(id, _)| id == &s.building_id).unwrap();
            let mut r = height_from_boxes(&s.building_id, &pred.1, &fb, &sensor);
            r.true_height = Some(s.true_height);
            r
        })
        .collect();
    let m = metrics(&results).unwrap();
    println!(
        "seed {seed} epochs {epochs} speckle {speckle}: final loss {:.5}, mae {:.3} m (gate {:.3}), he_std {:.3} | {:.1}s",
        log.last().unwrap().mean_loss,
        m.mae_m,
        2.0 * sensor.spacing_rg / sensor.cos_theta(),
        m.he_std_m,
        t0.elapsed().as_secs_f64()
    );
}
