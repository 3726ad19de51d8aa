//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//!
//! Runs without the libtest harness so the lines reach stdout uncaptured.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use actret::dataset::{synthesize, ClassInfo, Manifest, SynthConfig, Tier, VideoRecord};
use actret::evaluation::{harmonic, mean_ap, score_run, QueryRecord, Relevance, RetrievalRun};
use actret::experiment::{
    evaluate_model, run_pipeline, shot_sweep, DataBundle, ExperimentConfig, PipelineOutput, Variant,
};
use actret::numerics::{grad_check, rng::indexed_rng, Tensor};
use actret::retrieval::{
    build_index, generate_proposals, has_hit, proposal_count, search, segment_clips, ClipRule, GalleryItem, GalleryKind,
};
use actret::semantic::SemanticBank;
use actret::training::{total_loss, LossWeights, Model, ModelConfig, TrainConfig};
use actret::visual::VisualBank;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn within(t: Instant, limit: Duration, r: Outcome) -> Outcome {
    let el = t.elapsed();
    match r {
        Ok(m) if el < limit => Ok(format!("{m}; {:.2}s < {}s", el.as_secs_f64(), limit.as_secs())),
        Ok(m) => Err(format!(
            "{m}; but took {:.2}s (limit {}s)",
            el.as_secs_f64(),
            limit.as_secs()
        )),
        Err(m) => Err(format!("{m}; {:.2}s", el.as_secs_f64())),
    }
}

fn c1() -> Outcome {
    let t = Instant::now();
    let cases = [
        (25.76, 16.28, 19.95),
        (32.42, 19.26, 24.16),
        (9.18, 13.02, 10.76),
        (8.44, 7.03, 7.67),
    ];
    let mut got = Vec::new();
    for (b, n, want) in cases {
        let h = harmonic(b, n).map_err(|e| e.to_string())?;
        if (h - want).abs() > 0.01 {
            return Err(format!("harmonic({b}, {n}) = {h:.4}, expected {want}"));
        }
        got.push(format!("{h:.2}"));
    }
    within(
        t,
        Duration::from_secs(1),
        Ok(format!("harmonic values {}", got.join(", "))),
    )
}

fn c2() -> Outcome {
    let t = Instant::now();
    let (k, c, w, d) = (4, 8, 16, 6);
    let cfg = ModelConfig {
        input_dim: d,
        embed_dim: c,
        head_hidden: vec![10],
        ga_dim: c / 2,
        semantic_hidden: vec![12, 10],
        semantic_dim: Some(w),
        num_classes: k,
    };
    let mut m = Model::<f64>::new(&cfg, 11, 1.2).map_err(|e| e.to_string())?;
    let mut rng = indexed_rng(5, "acceptance/c2", 0);
    // A populated bank so the visual term is active.
    let mut bank = VisualBank::<f64>::new(k, c, 0.9).unwrap();
    for y in 0..k {
        let z: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
        bank.update(y, &z).unwrap();
    }
    let sem = SemanticBank {
        names: (0..k).map(|y| format!("c{y}")).collect(),
        rows: Tensor::matrix(k, w, (0..k * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
    };
    let frames: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..d * (2 + i)).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = [0usize, 1, 2, 1];
    let weights = LossWeights {
        lambda_v: 1.0,
        lambda_s: 1.0,
        tau: 0.1,
    };
    let report = grad_check(&mut m, 1e-6, |m: &mut Model<f64>| {
        let batch: Vec<(&[f64], usize)> = frames.iter().map(Vec::as_slice).zip(labels).collect();
        let b = total_loss(m, &batch, &bank, Some(&sem), weights, 0)?;
        if b.visual == 0.0 || b.semantic == 0.0 {
            return Err(actret::Error::Parameter("an alignment term is inactive".into()));
        }
        Ok(b.total)
    })
    .map_err(|e| e.to_string())?;
    let worst = report
        .per_parameter
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap_or_default();
    within(
        t,
        Duration::from_secs(10),
        check(
            report.per_parameter.iter().all(|p| p.1 < 1e-4),
            format!(
                "{} tensors, max rel error {:.2e} ({})",
                report.per_parameter.len(),
                worst.1,
                worst.0
            ),
            format!("max rel error {:.2e} at {} ({:?})", worst.1, worst.0, report.worst),
        ),
    )
}

fn manifest(k: usize) -> Manifest {
    Manifest {
        version: 1,
        classes: (0..k)
            .map(|c| ClassInfo {
                id: c,
                name: format!("c{c}"),
                tier: if c % 2 == 0 { Tier::Base } else { Tier::Novel },
                parent: None,
                grandparent: None,
            })
            .collect(),
        videos: vec![],
    }
}

fn brute_ap(q: &[f32], q_class: usize, gallery: &[(Vec<f32>, Option<usize>)], skip: Option<usize>) -> Option<f64> {
    let unit = |v: &[f32]| {
        let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|&x| x as f64 / n).collect::<Vec<f64>>()
    };
    let qu = unit(q);
    let mut scored: Vec<(f64, bool)> = gallery
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, (v, l))| {
            let g = unit(v);
            let d = qu.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            (d, *l == Some(q_class))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = scored.iter().filter(|s| s.1).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (r, s) in scored.iter().enumerate() {
        if s.1 {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

fn c3() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut scored_queries = 0;
    for run in 0..100u64 {
        let mut rng = indexed_rng(3, "acceptance/c3", run);
        let k = rng.random_range(2..=5);
        let n = rng.random_range(2..=30);
        let dim = rng.random_range(2..=16);
        let nq = rng.random_range(1..=10);
        let gallery: Vec<(Vec<f32>, Option<usize>)> = (0..n)
            .map(|_| {
                let v = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                let l = if rng.random_bool(0.1) {
                    None
                } else {
                    Some(rng.random_range(0..k))
                };
                (v, l)
            })
            .collect();
        let items: Vec<GalleryItem> = gallery
            .iter()
            .enumerate()
            .map(|(i, (_, l))| GalleryItem::video(&format!("g{i:02}"), *l, [0.0, 1.0]))
            .collect();
        let rows: Vec<Vec<f32>> = gallery.iter().map(|g| g.0.clone()).collect();
        let index = build_index(items, &rows, GalleryKind::Video).map_err(|e| e.to_string())?;
        let m = manifest(k);
        let mut lists = Vec::new();
        let mut records = Vec::new();
        let mut expected = Vec::new();
        for qi in 0..nq {
            // Some queries are gallery members and must not retrieve themselves.
            let (id, v, class, skip) = if qi < n && rng.random_bool(0.5) && gallery[qi].1.is_some() {
                (
                    format!("g{qi:02}"),
                    gallery[qi].0.clone(),
                    gallery[qi].1.unwrap(),
                    Some(qi),
                )
            } else {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                (format!("q{qi}"), v, rng.random_range(0..k), None)
            };
            lists.push(search(&index, &id, &v, None).map_err(|e| e.to_string())?);
            records.push(QueryRecord {
                id,
                class,
                tier: m.classes[class].tier,
                duration_s: 1.0,
            });
            if let Some(ap) = brute_ap(&v, class, &gallery, skip) {
                expected.push(ap);
            }
        }
        let rr = RetrievalRun::from_lists(&index, &lists, records).map_err(|e| e.to_string())?;
        let scored = score_run(&rr, &m, Relevance::Class).map_err(|e| e.to_string())?;
        let engine = mean_ap(&scored.aps).overall;
        let brute = (!expected.is_empty()).then(|| expected.iter().sum::<f64>() / expected.len() as f64);
        scored_queries += expected.len();
        match (engine, brute) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            (a, b) => return Err(format!("run {run}: engine mAP {a:?} vs brute force {b:?}")),
        }
    }
    within(
        t,
        Duration::from_secs(30),
        check(
            worst < 1e-9,
            format!("100 runs, {scored_queries} scored queries, max |ΔmAP| {worst:.1e}"),
            format!("max |ΔmAP| {worst:.3e}"),
        ),
    )
}

fn c4() -> Outcome {
    let t = Instant::now();
    let mut ties = 0usize;
    for g in 0..1000u64 {
        let mut rng = indexed_rng(4, "acceptance/c4", g);
        let n = rng.random_range(1..=200);
        let c = rng.random_range(1..=64);
        // Small integer grids and repeated rows force exact distance ties.
        let distinct = rng.random_range(1..=n);
        let pool: Vec<Vec<f32>> = (0..distinct)
            .map(|_| loop {
                let v: Vec<f32> = (0..c).map(|_| rng.random_range(-2i32..=2) as f32).collect();
                if v.iter().any(|&x| x != 0.0) {
                    break v;
                }
            })
            .collect();
        let rows: Vec<Vec<f32>> = (0..n).map(|_| pool[rng.random_range(0..distinct)].clone()).collect();
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let items: Vec<GalleryItem> = ids
            .iter()
            .map(|i| GalleryItem::video(&format!("v{i:03}"), None, [0.0, 1.0]))
            .collect();
        let index = build_index(items, &rows, GalleryKind::Video).map_err(|e| e.to_string())?;
        let q = pool[rng.random_range(0..distinct)].clone();
        let k = if rng.random_bool(0.5) {
            None
        } else {
            Some(rng.random_range(0..=n))
        };
        let got = search(&index, "query", &q, k).map_err(|e| e.to_string())?;

        let qn = actret::numerics::l2_normalize(&q).unwrap();
        let mut brute: Vec<(f64, &str)> = (0..n)
            .map(|i| {
                let d = index
                    .row(i)
                    .iter()
                    .zip(&qn)
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (d, index.items[i].id.as_str())
            })
            .collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        brute.truncate(k.unwrap_or(n));
        ties += brute.windows(2).filter(|w| w[0].0 == w[1].0).count();
        let got_ids: Vec<(f64, &str)> = got
            .hits
            .iter()
            .map(|h| (h.distance, index.items[h.index].id.as_str()))
            .collect();
        if got_ids != brute {
            return Err(format!("gallery {g} (N={n}, C={c}, k={k:?}) ranks differ"));
        }
    }
    within(
        t,
        Duration::from_secs(60),
        Ok(format!(
            "1000 galleries identical to brute-force sort, {ties} tied neighbours broken by id"
        )),
    )
}

fn c5() -> Outcome {
    let t = Instant::now();
    let mut rng = indexed_rng(5, "acceptance/c5", 0);
    let (k, c) = (50, 32);
    let mut bank = VisualBank::<f32>::new(k, c, 0.7).unwrap();
    let mut touched = vec![false; k];
    let mut worst_norm = 0.0f64;
    for _ in 0..10_000 {
        // Classes >= 40 are never updated.
        let y = rng.random_range(0..40);
        let z: Vec<f32> = (0..c).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        bank.update(y, &z).map_err(|e| e.to_string())?;
        touched[y] = true;
        let n = bank.row(y).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        worst_norm = worst_norm.max((n - 1.0).abs());
    }
    for (y, &hit) in touched.iter().enumerate() {
        let n = bank.row(y).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if hit {
            worst_norm = worst_norm.max((n - 1.0).abs());
        } else if bank.row(y).iter().any(|&v| v != 0.0) {
            return Err(format!("untouched row {y} is not zero"));
        }
    }
    // alpha = 1 replaces the row with z/|z|.
    let mut one = VisualBank::<f32>::new(3, c, 1.0).unwrap();
    let mut worst_alpha1 = 0.0f64;
    for _ in 0..1000 {
        let y = rng.random_range(0..3);
        let z: Vec<f32> = (0..c).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        one.update(y, &z).unwrap();
        let zn = z.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        for (a, b) in one.row(y).iter().zip(&z) {
            worst_alpha1 = worst_alpha1.max((*a as f64 - *b as f64 / zn).abs());
        }
    }
    // A unit row is a fixed point of an update along itself.
    let mut worst_fixed = 0.0f64;
    for y in 0..40 {
        let before = bank.row(y).to_vec();
        let scale = rng.random_range(0.1f32..10.0);
        let z: Vec<f32> = before.iter().map(|v| v * scale).collect();
        bank.update(y, &z).unwrap();
        for (a, b) in bank.row(y).iter().zip(&before) {
            worst_fixed = worst_fixed.max((a - b).abs() as f64);
        }
    }
    within(
        t,
        Duration::from_secs(10),
        check(
            worst_norm <= 1e-5 && worst_alpha1 <= 1e-6 && worst_fixed <= 1e-6,
            format!(
                "10000 updates: max |‖V‖−1| {worst_norm:.1e}, 10 untouched rows zero, alpha=1 error {worst_alpha1:.1e}, fixed-point drift {worst_fixed:.1e}"
            ),
            format!("norm {worst_norm:.2e}, alpha=1 {worst_alpha1:.2e}, fixed point {worst_fixed:.2e}"),
        ),
    )
}

fn tiou_ref(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    inter / (a[1].max(b[1]) - a[0].min(b[0]))
}

fn c6() -> Outcome {
    let t = Instant::now();
    for n in 0..=40usize {
        for m in 0..=40usize {
            let formula: usize = (1..=m.min(n)).map(|l| n - l + 1).sum();
            let mut all = Vec::new();
            for s in 0..n {
                for e in s..n {
                    if e - s < m {
                        all.push((s, e));
                    }
                }
            }
            let mut got = generate_proposals(n, m);
            if proposal_count(n, m) != formula || got.len() != formula || all.len() != formula {
                return Err(format!("count mismatch at n={n}, M={m}"));
            }
            got.sort_unstable();
            if got != all {
                return Err(format!("proposal set differs from enumeration at n={n}, M={m}"));
            }
        }
    }
    let ds = synthesize(&SynthConfig {
        n_base: 5,
        n_novel: 5,
        dim: 8,
        train_per_base: 2,
        train_per_novel: 2,
        test_per_class: 1,
        distractors: 0,
        duration_s: [20.0, 120.0],
        activity_fraction: [0.1, 0.6],
        semantic_dim: 0,
        seed: 6,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let videos: Vec<&VideoRecord> = ds.manifest.videos.iter().take(10).collect();
    let mut hits = 0;
    let mut checked = 0;
    for v in &videos {
        for len in [4.0, 6.0, 8.0] {
            let n = segment_clips(v, len, ClipRule::Contained)
                .map_err(|e| e.to_string())?
                .len();
            let n_ref = ((v.duration_s + 1e-9) / len).floor() as usize;
            if n != n_ref {
                return Err(format!("{}: {n} clips of {len}s, expected {n_ref}", v.id));
            }
            for m in [1, 2, 4, 8, 26] {
                let mut want = false;
                for s in 0..n {
                    for e in s..n.min(s + m) {
                        want |= tiou_ref([s as f64 * len, (e + 1) as f64 * len], v.activity) > 0.5;
                    }
                }
                let got = has_hit(v, len, m, 0.5).map_err(|e| e.to_string())?;
                if got != want {
                    return Err(format!("{} L={len} M={m}: hit {got}, brute force {want}", v.id));
                }
                hits += got as usize;
                checked += 1;
            }
        }
    }
    within(
        t,
        Duration::from_secs(10),
        Ok(format!(
            "counts and sets match for n,M <= 40; tIoU hits agree on {} videos ({hits}/{checked} settings hit)",
            videos.len()
        )),
    )
}

/// Trained runs shared by criteria 7 to 10.
struct Bench {
    data: Vec<DataBundle>,
    runs: HashMap<(Variant, u64), PipelineOutput>,
    elapsed: Duration,
}

fn benchmark_config(seed: u64, v: Variant) -> ExperimentConfig {
    ExperimentConfig {
        train: v.apply(&TrainConfig {
            seed,
            ..TrainConfig::desk()
        }),
        ..Default::default()
    }
}

fn bench() -> Result<Bench, String> {
    let t = Instant::now();
    let mut data = Vec::new();
    let mut runs = HashMap::new();
    for seed in SEEDS {
        let ds = synthesize(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let d = DataBundle::from_synthetic(ds, true).map_err(|e| e.to_string())?;
        for v in [Variant::Full, Variant::BaselineVisual, Variant::Baseline] {
            let out = run_pipeline(&d, &benchmark_config(seed, v)).map_err(|e| e.to_string())?;
            runs.insert((v, seed), out);
        }
        data.push(d);
    }
    Ok(Bench {
        data,
        runs,
        elapsed: t.elapsed(),
    })
}

fn h(out: &PipelineOutput) -> f64 {
    out.evaluation.report.harmonic.unwrap_or(0.0)
}

fn c7(b: &Bench) -> Outcome {
    let mean = |v: Variant| SEEDS.iter().map(|&s| h(&b.runs[&(v, s)])).sum::<f64>() / SEEDS.len() as f64;
    let (full, vis, base) = (
        mean(Variant::Full),
        mean(Variant::BaselineVisual),
        mean(Variant::Baseline),
    );
    let per_seed: Vec<String> = SEEDS
        .iter()
        .map(|&s| {
            format!(
                "s{s} {:.2}/{:.2}/{:.2}",
                h(&b.runs[&(Variant::Full, s)]),
                h(&b.runs[&(Variant::BaselineVisual, s)]),
                h(&b.runs[&(Variant::Baseline, s)])
            )
        })
        .collect();
    let msg = format!(
        "mean H full {full:.2} > +visual {vis:.2} > baseline {base:.2}, gap {:+.2} ({})",
        full - base,
        per_seed.join(", ")
    );
    let ok = full > vis && vis > base && full - base >= 2.0;
    let r = if ok { Ok(msg) } else { Err(msg) };
    let limit = Duration::from_secs(600);
    match r {
        Ok(m) if b.elapsed < limit => Ok(format!("{m}; 9 runs in {:.0}s < 600s", b.elapsed.as_secs_f64())),
        Ok(m) => Err(format!("{m}; but 9 runs took {:.0}s", b.elapsed.as_secs_f64())),
        Err(m) => Err(m),
    }
}

fn c8(b: &Bench) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for s in SEEDS {
        let vis = b.runs[&(Variant::BaselineVisual, s)]
            .scatteredness()
            .map_err(|e| e.to_string())?;
        let ema = b.runs[&(Variant::Baseline, s)]
            .scatteredness()
            .map_err(|e| e.to_string())?;
        ok &= vis > ema;
        parts.push(format!("s{s} {vis:.4} vs {ema:.4}"));
    }
    check(
        ok,
        format!(
            "visual-alignment bank more scattered than EMA-only on every seed ({})",
            parts.join(", ")
        ),
        format!("scatteredness visual vs EMA-only: {}", parts.join(", ")),
    )
}

fn artifacts(out: &PipelineOutput) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    out.write(dir.path()).map_err(|e| e.to_string())?;
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .map_err(|e| e.to_string())?
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn c9(b: &Bench) -> Outcome {
    let first = &b.runs[&(Variant::Full, 0)];
    let second = run_pipeline(&b.data[0], &benchmark_config(0, Variant::Full)).map_err(|e| e.to_string())?;
    let (a, c) = (artifacts(first)?, artifacts(&second)?);
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    for want in ["checkpoint.vsck", "ranked.csv", "report.json"] {
        if !names.contains(&want) {
            return Err(format!("{want} was not written"));
        }
    }
    if a.len() != c.len() {
        return Err("the two runs wrote different file sets".into());
    }
    for (x, y) in a.iter().zip(&c) {
        if x != y {
            return Err(format!("{} differs between runs", x.0));
        }
    }
    Ok(format!("two seed-0 runs wrote byte-identical {}", names.join(", ")))
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn c10(b: &Bench) -> Outcome {
    let steps = [1usize, 2, 3, 4, 5];
    let mut shots = vec![0.0; steps.len()];
    let mut queries = vec![0.0; steps.len()];
    for (si, &seed) in SEEDS.iter().enumerate() {
        let cfg = benchmark_config(seed, Variant::Full);
        let data = &b.data[si];
        for (i, (_, r)) in shot_sweep(data, &cfg, &steps)
            .map_err(|e| e.to_string())?
            .iter()
            .enumerate()
        {
            shots[i] += r.harmonic.unwrap_or(0.0) / SEEDS.len() as f64;
        }
        let model = &b.runs[&(Variant::Full, seed)].outcome.model;
        for (i, &q) in steps.iter().enumerate() {
            let mut ec = cfg.eval.clone();
            ec.queries_per_retrieval = q;
            let ev = evaluate_model(model, data, &ec, seed, serde_json::Value::Null).map_err(|e| e.to_string())?;
            queries[i] += ev.report.harmonic.unwrap_or(0.0) / SEEDS.len() as f64;
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
    let msg = format!(
        "mean H by shots 1-5: {}; by queries 1-5: {}",
        fmt(&shots),
        fmt(&queries)
    );
    check(non_decreasing(&shots) && non_decreasing(&queries), msg.clone(), msg)
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, r: Outcome| match r {
        Ok(m) => println!("criterion {n:>2}: PASS  {m}"),
        Err(m) => {
            failed += 1;
            println!("criterion {n:>2}: FAIL  {m}");
        }
    };
    report(1, c1());
    report(2, c2());
    report(3, c3());
    report(4, c4());
    report(5, c5());
    report(6, c6());
    match bench() {
        Ok(b) => {
            report(7, c7(&b));
            report(8, c8(&b));
            report(9, c9(&b));
            report(10, c10(&b));
        }
        Err(e) => {
            for n in 7..=10 {
                report(n, Err(format!("benchmark runs failed: {e}")));
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
