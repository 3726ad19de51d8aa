use actret::dataset::{synthesize, Split, SynthConfig};
use actret::embedding::classify;
use actret::experiment::{evaluate_model, run_pipeline, DataBundle, ExperimentConfig};
use actret::training::{activity_frames, Checkpoint, TrainConfig};

fn bundle() -> DataBundle {
    let ds = synthesize(&SynthConfig::default()).unwrap();
    DataBundle::from_synthetic(ds, true).unwrap()
}

// One 2k-iteration desk run backs all three smoke checks.
#[test]
fn desk_run_fits_training_set_and_round_trips() {
    let data = bundle();
    let cfg = ExperimentConfig::default();
    let out = run_pipeline(&data, &cfg).unwrap();
    let model = &out.outcome.model;

    let mut right = 0;
    let mut total = 0;
    for v in data.manifest.videos.iter().filter(|v| v.split == Split::Train) {
        let frames = activity_frames(v, data.store.get(&v.id).unwrap(), None).unwrap();
        let p = classify(&model.embed(&frames).unwrap(), &model.classifier).unwrap();
        let pred = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        right += (Some(pred) == v.class.class()) as usize;
        total += 1;
    }
    let acc = right as f64 / total as f64;
    assert!(acc > 0.95, "training accuracy {acc:.4}");

    // 200-iteration block means of the total loss never rise by more than two
    // standard errors; batch sampling noise alone moves them by about one.
    let totals: Vec<f64> = out.outcome.curve.iter().map(|b| b.total).collect();
    let blocks: Vec<(f64, f64)> = totals
        .chunks(200)
        .map(|c| {
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, var / n)
        })
        .collect();
    for w in blocks.windows(2) {
        let tol = 2.0 * (w[0].1 + w[1].1).sqrt();
        assert!(w[1].0 <= w[0].0 + tol, "{blocks:?}");
    }
    assert!(blocks.last().unwrap().0 < 0.2 * blocks[0].0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vsck");
    out.checkpoint.save(&path).unwrap();
    let (restored, _) = Checkpoint::load(&path).unwrap().restore().unwrap();
    let echo = serde_json::to_value(&cfg).unwrap();
    let again = evaluate_model(&restored, &data, &cfg.eval, cfg.train.seed, echo).unwrap();
    assert_eq!(again.report.to_json(), out.evaluation.report.to_json());
    assert_eq!(again.ranked_csv(), out.evaluation.ranked_csv());
}

#[test]
fn desk_preset_matches_documented_defaults() {
    let t = TrainConfig::desk();
    assert_eq!(
        (t.lambda_v, t.lambda_s, t.alpha, t.tau, t.batch_size),
        (1.0, 1.0, 0.9, 0.1, 16)
    );
}
