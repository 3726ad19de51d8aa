use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use actret::dataset::{generate_synthetic, load_manifest, Manifest};
use actret::evaluation::{
    confusion_matrix, duration_analysis, map_curve, map_curve_csv, proposal_recall_sweep, recall_csv, score_run,
    taxonomy_map, MetricsReport, QueryRecord, Relevance, RetrievalRun,
};
use actret::experiment::{
    build_gallery, retrieve_all, run_pipeline, train_model, DataBundle, EvalConfig, ExperimentConfig, Variant,
    ARTIFACT_CHECKPOINT, ARTIFACT_GALLERY, ARTIFACT_LOSS, ARTIFACT_RANKED, ARTIFACT_REPORT,
};
use actret::retrieval::{ranked_lists_csv, GalleryIndex};
use actret::training::{loss_curve_csv, Checkpoint};

use crate::config::{run_dir, FileConfig};
use crate::{
    parse_variant, CliError, CommonArgs, DataArgs, EvalArgs, EvalCmd, IndexCmd, RetrieveCmd, SweepCmd, SweepKind,
    SynthArgs, TrainArgs, TrainCmd,
};

type Result<T> = std::result::Result<T, CliError>;

fn require_file(p: &Path, what: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} does not exist", p.display())))
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
    Ok(p)
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Paths and experiment settings after layering flags over the config file.
struct Resolved {
    manifest: PathBuf,
    features: Option<PathBuf>,
    semantic: Option<PathBuf>,
    out: PathBuf,
    exp: ExperimentConfig,
}

fn resolve(common: &CommonArgs, data: &DataArgs, train: &TrainArgs, eval: &EvalArgs) -> Result<Resolved> {
    let file = FileConfig::load(common.config.as_deref())?;
    let manifest = data
        .manifest
        .clone()
        .or_else(|| file.manifest.clone())
        .ok_or_else(|| CliError::Validation("--manifest is required".into()))?;
    require_file(&manifest, "manifest")?;
    let features = data.features.clone().or_else(|| file.features.clone());
    if let Some(f) = &features {
        if !f.is_dir() {
            return Err(CliError::Validation(format!(
                "feature directory {} does not exist",
                f.display()
            )));
        }
    }
    let semantic = data.semantic_bank.clone().or_else(|| file.semantic_bank.clone());
    if let Some(s) = &semantic {
        require_file(s, "semantic bank")?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| file.out.clone())
        .ok_or_else(|| CliError::Validation("--out is required".into()))?;

    let mut t = file.train(train.preset.as_deref())?;
    if let Some(v) = train.seed {
        t.seed = v;
    }
    if let Some(v) = train.objective {
        t.objective = v.into();
    }
    if let Some(v) = train.tau {
        t.tau = v;
    }
    if let Some(v) = train.lambda_v {
        t.lambda_v = v;
    }
    if let Some(v) = train.lambda_s {
        t.lambda_s = v;
    }
    if let Some(v) = train.alpha {
        t.alpha = v;
    }
    if let Some(v) = train.iterations {
        t.iterations = v;
    }
    let mut e = file.eval()?;
    apply_eval(&mut e, eval);
    let exp = ExperimentConfig {
        train: t,
        eval: e,
        shots: train.shots.or(file.shots),
    };
    exp.validate()?;
    Ok(Resolved {
        manifest,
        features,
        semantic,
        out,
        exp,
    })
}

fn apply_eval(e: &mut EvalConfig, a: &EvalArgs) {
    if let Some(m) = a.mode {
        e.mode = m.into();
    }
    if let Some(l) = a.clip_len {
        e.clip_len_s = l as f64;
    }
    if let Some(m) = a.max_moment {
        e.max_moment = m;
    }
    if let Some(q) = a.queries_per_retrieval {
        e.queries_per_retrieval = q as usize;
    }
}

fn load_data(r: &Resolved, with_semantic: bool) -> Result<DataBundle> {
    let sem = if with_semantic { r.semantic.as_deref() } else { None };
    Ok(DataBundle::load(
        &r.manifest,
        r.features.as_deref(),
        sem,
        r.exp.train.normalize_semantic,
    )?)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let mut cfg = file.synth()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = a
        .common
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Validation("--out is required".into()))?;
    let (_, paths) = generate_synthetic(&cfg, &out)?;
    println!("{}", paths.manifest.display());
    Ok(())
}

pub fn train(a: TrainCmd) -> Result<()> {
    let r = resolve(&a.common, &a.data, &a.train, &EvalArgs::default())?;
    let data = load_data(&r, true)?;
    let outcome = train_model(&data, &r.exp)?;
    let dir = run_dir(&r.out, &r.exp, &r.manifest, "train")?;
    make_dir(&dir)?;
    Checkpoint::from_outcome(&outcome).save(dir.join(ARTIFACT_CHECKPOINT))?;
    write(&dir, ARTIFACT_LOSS, &loss_curve_csv(&outcome.curve))?;
    write(
        &dir,
        "config.json",
        &(serde_json::to_string_pretty(&r.exp).expect("config serializes") + "\n"),
    )?;
    println!("{}", dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

pub fn index(a: IndexCmd) -> Result<()> {
    let r = resolve(&a.common, &a.data, &TrainArgs::default(), &a.eval)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let (model, _) = ck.restore()?;
    let data = load_data(&r, false)?;
    let idx = build_gallery(&model, &data, &r.exp.eval)?;
    make_dir(&r.out)?;
    let p = r.out.join(ARTIFACT_GALLERY);
    idx.save(&p)?;
    println!("{}", p.display());
    Ok(())
}

pub fn retrieve(a: RetrieveCmd) -> Result<()> {
    let train = TrainArgs {
        seed: a.seed,
        ..TrainArgs::default()
    };
    let r = resolve(&a.common, &a.data, &train, &a.eval)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    require_file(&a.gallery, "gallery")?;
    let index = GalleryIndex::load(&a.gallery)?;
    let (model, _) = ck.restore()?;
    let data = load_data(&r, false)?;
    let mut ec = r.exp.eval.clone();
    ec.mode = index.kind;
    let (lists, records) = retrieve_all(&model, &data, &index, &ec, r.exp.train.seed)?;
    let classes: HashMap<&str, usize> = records.iter().map(|q| (q.id.as_str(), q.class)).collect();
    let csv = ranked_lists_csv(&index, &lists, |l, it| {
        it.label.is_some() && it.label == classes.get(l.query_id.as_str()).copied()
    });
    make_dir(&r.out)?;
    println!("{}", write(&r.out, ARTIFACT_RANKED, &csv)?.display());
    Ok(())
}

/// Rebuilds ranked label lists from `ranked.csv`, one per query in file order.
fn read_ranked(path: &Path, index: &GalleryIndex, manifest: &Manifest) -> Result<RetrievalRun> {
    let bad = |m: String| CliError::Validation(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let want = ["query_id", "rank", "gallery_id", "distance", "relevant"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(bad(format!("expected header {}", want.join(","))));
    }
    let item_at: HashMap<&str, usize> = index
        .items
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id.as_str(), i))
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, Option<usize>)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let rank: usize = rec[1].parse().map_err(|_| bad(format!("bad rank '{}'", &rec[1])))?;
        let &i = item_at
            .get(&rec[2])
            .ok_or_else(|| bad(format!("gallery id {} is not in the gallery", &rec[2])))?;
        let q = rec[0].to_string();
        if !rows.contains_key(&q) {
            order.push(q.clone());
        }
        rows.entry(q).or_default().push((rank, index.items[i].label));
    }
    let vids = manifest.video_index();
    let mut queries = Vec::with_capacity(order.len());
    let mut ranked = Vec::with_capacity(order.len());
    for q in order {
        let &v = vids
            .get(q.as_str())
            .ok_or_else(|| bad(format!("query {q} is not a manifest video")))?;
        queries.push(QueryRecord::from_video(manifest, &manifest.videos[v])?);
        let mut r = rows.remove(&q).unwrap();
        r.sort_by_key(|x| x.0);
        if r.iter().enumerate().any(|(k, x)| x.0 != k + 1) {
            return Err(bad(format!("ranks of query {q} are not 1..n")));
        }
        ranked.push(r.into_iter().map(|x| x.1).collect());
    }
    Ok(RetrievalRun::new(queries, ranked)?)
}

pub fn eval(a: EvalCmd) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let manifest_path = a
        .manifest
        .or(file.manifest)
        .ok_or_else(|| CliError::Validation("--manifest is required".into()))?;
    let out = a
        .common
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Validation("--out is required".into()))?;
    require_file(&manifest_path, "manifest")?;
    require_file(&a.gallery, "gallery")?;
    require_file(&a.ranked, "ranked list file")?;
    let manifest = load_manifest(&manifest_path)?;
    let index = GalleryIndex::load(&a.gallery)?;
    let run = read_ranked(&a.ranked, &index, &manifest)?;
    let echo = serde_json::json!({ "mode": index.kind, "gallery_items": index.len() });
    let scored = score_run(&run, &manifest, Relevance::Class)?;
    let report = MetricsReport::from_scored(&scored, &manifest, echo);
    make_dir(&out)?;
    write(&out, ARTIFACT_REPORT, &report.to_json())?;
    write(&out, "per_query.csv", &report.per_query_csv())?;
    write(&out, "per_class.csv", &report.per_class_csv())?;
    write(&out, "map_curve.csv", &map_curve_csv(&map_curve(&run, &manifest)?))?;
    let cm = confusion_matrix(&run, a.top_k, manifest.num_classes(), None)?;
    write(&out, "confusion.csv", &cm.to_csv())?;
    let mut d = String::from("lo,hi,queries,map\n");
    for b in duration_analysis(&scored.aps, &a.duration_edges)? {
        let _ = writeln!(d, "{},{},{},{:.2}", b.lo, b.hi, b.queries, b.map * 100.0);
    }
    write(&out, "durations.csv", &d)?;
    if manifest.has_taxonomy() {
        let tax = serde_json::json!({
            "level1_map": (taxonomy_map(&run, &manifest, 1)? * 1e4).round() / 100.0,
            "level2_map": (taxonomy_map(&run, &manifest, 2)? * 1e4).round() / 100.0,
        });
        write(
            &out,
            "taxonomy.json",
            &(serde_json::to_string_pretty(&tax).unwrap() + "\n"),
        )?;
    }
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    println!(
        "mAP base {} novel {} overall {} harmonic {}",
        fmt(report.map_base),
        fmt(report.map_novel),
        fmt(report.map_overall),
        fmt(report.harmonic)
    );
    Ok(())
}

struct Cell {
    value: String,
    seed: u64,
    report: MetricsReport,
}

fn summary_csv(kind: &str, cells: &[Cell]) -> String {
    let mut s = String::from("kind,value,seed,map_base,map_novel,map_overall,harmonic\n");
    let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.2}"));
    for c in cells {
        let r = &c.report;
        let _ = writeln!(
            s,
            "{kind},{},{},{},{},{},{}",
            c.value,
            c.seed,
            f(r.map_base),
            f(r.map_novel),
            f(r.map_overall),
            f(r.harmonic)
        );
    }
    // Seed means per value, in first-seen order.
    let mut values: Vec<&str> = Vec::new();
    for c in cells {
        if !values.contains(&c.value.as_str()) {
            values.push(&c.value);
        }
    }
    for v in values {
        let group: Vec<&MetricsReport> = cells.iter().filter(|c| c.value == v).map(|c| &c.report).collect();
        let m = |g: fn(&MetricsReport) -> Option<f64>| {
            let xs: Vec<f64> = group.iter().filter_map(|r| g(r)).collect();
            (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
        };
        let _ = writeln!(
            s,
            "{kind},{v},mean,{},{},{},{}",
            f(m(|r| r.map_base)),
            f(m(|r| r.map_novel)),
            f(m(|r| r.map_overall)),
            f(m(|r| r.harmonic))
        );
    }
    s
}

fn parse_usizes(values: &[String], what: &str) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| CliError::Validation(format!("{what} value '{v}' is not a non-negative integer")))
        })
        .collect()
}

pub fn sweep(a: SweepCmd) -> Result<()> {
    let r = resolve(&a.common, &a.data, &a.train, &a.eval)?;
    let kind = format!("{:?}", a.kind).to_lowercase();
    let dir = run_dir(
        &r.out,
        &r.exp,
        &r.manifest,
        &format!("sweep-{kind}-{:?}-{:?}", a.values, a.seeds),
    )?;
    // Sweeps span seeds, so only the hash prefix of the run name is kept.
    let name = dir.file_name().unwrap().to_string_lossy().into_owned();
    let hash = name.split('-').next().unwrap_or_default();
    let dir = dir.with_file_name(format!("{hash}-sweep-{kind}"));
    make_dir(&dir)?;

    if a.kind == SweepKind::Recall {
        let manifest = load_manifest(&r.manifest)?;
        let ms = if a.values.is_empty() {
            (1..=26).collect()
        } else {
            parse_usizes(&a.values, "max moment")?
        };
        let videos: Vec<_> = manifest.videos.iter().collect();
        let cells = proposal_recall_sweep(&videos, &[4.0, 6.0, 8.0], &ms, r.exp.eval.tiou_threshold)?;
        println!("{}", write(&dir, "recall.csv", &recall_csv(&cells))?.display());
        return Ok(());
    }

    let data = load_data(&r, true)?;
    let k = data.manifest.num_classes();
    let values: Vec<String> = if a.values.is_empty() {
        match a.kind {
            SweepKind::Shots | SweepKind::Queries => (1..=5).map(|v| v.to_string()).collect(),
            SweepKind::Splits => [k / 2, (k * 3) / 5, (k * 2) / 5]
                .iter()
                .map(|v| v.to_string())
                .collect(),
            SweepKind::Variants => [
                "full",
                "baseline_visual",
                "baseline_semantic",
                "baseline",
                "triplet",
                "margin",
            ]
            .iter()
            .map(|v| v.to_string())
            .collect(),
            SweepKind::Recall => unreachable!(),
        }
    } else {
        a.values.clone()
    };
    let mut cells = Vec::new();
    for &seed in &a.seeds {
        let mut base = r.exp.clone();
        base.train.seed = seed;
        match a.kind {
            SweepKind::Queries => {
                let qs = parse_usizes(&values, "queries")?;
                let outcome = train_model(&data, &base)?;
                for q in qs {
                    let mut c = base.clone();
                    c.eval.queries_per_retrieval = q;
                    c.eval.validate()?;
                    let echo = serde_json::to_value(&c).expect("config serializes");
                    let ev = actret::experiment::evaluate_model(&outcome.model, &data, &c.eval, seed, echo)?;
                    cells.push(Cell {
                        value: q.to_string(),
                        seed,
                        report: ev.report,
                    });
                }
            }
            SweepKind::Shots | SweepKind::Splits | SweepKind::Variants => {
                for v in &values {
                    let mut c = base.clone();
                    let mut d = None;
                    match a.kind {
                        SweepKind::Shots => c.shots = Some(parse_usizes(std::slice::from_ref(v), "shots")?[0]),
                        SweepKind::Splits => {
                            let nb = parse_usizes(std::slice::from_ref(v), "base-class count")?[0];
                            let (b, _) = actret::dataset::split_classes(k, nb, seed)?;
                            d = Some(data.with_base_classes(&b)?);
                            c.shots = Some(c.shots.unwrap_or(5));
                        }
                        _ => {
                            let variant: Variant = parse_variant(v)?;
                            c.train = variant.apply(&c.train);
                        }
                    }
                    let out = run_pipeline(d.as_ref().unwrap_or(&data), &c)?;
                    let cell_dir = dir.join(format!("{v}-seed{seed}"));
                    make_dir(&cell_dir)?;
                    write(&cell_dir, ARTIFACT_REPORT, &out.evaluation.report.to_json())?;
                    write(&cell_dir, ARTIFACT_LOSS, &loss_curve_csv(&out.outcome.curve))?;
                    cells.push(Cell {
                        value: v.clone(),
                        seed,
                        report: out.evaluation.report,
                    });
                }
            }
            SweepKind::Recall => unreachable!(),
        }
    }
    println!("{}", write(&dir, "summary.csv", &summary_csv(&kind, &cells))?.display());
    Ok(())
}
