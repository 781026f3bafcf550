use vsgat::data::synthetic::{generate_synthetic, SyntheticParams};
use vsgat::data::Dataset;
use vsgat::train::{fit, TrainConfig};

fn smoothed(xs: &[f64]) -> Vec<f64> {
    xs.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect()
}

#[test]
fn validation_map_trends_upward() {
    let dir = tempfile::tempdir().unwrap();
    let p = SyntheticParams {
        n_scenes: 80,
        embedding_dim: 16,
        ..SyntheticParams::default()
    };
    generate_synthetic(12, &p, dir.path()).unwrap();
    let data = Dataset::open(dir.path()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 40,
        eval_every: 4,
        hidden: 32,
        readout_hidden: 32,
        ..TrainConfig::default()
    };
    let out = fit(&cfg, &data, None, |_| {}).unwrap();
    let maps: Vec<f64> = out.log.rows.iter().filter_map(|r| r.val.map(|v| v.1)).collect();
    assert_eq!(maps.len(), 10);
    let s = smoothed(&maps);
    assert!(s.last().unwrap() >= s.first().unwrap(), "{maps:?}");
    assert!(out.log.rows.last().unwrap().train_loss < out.log.rows[0].train_loss);
    assert!(out.best_epoch.is_some());
}
