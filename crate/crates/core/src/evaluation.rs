//! Average precision, base/novel/harmonic mAP reports and the diagnostic analyses
//! built on ranked lists (taxonomy levels, confusion counts, duration buckets,
//! per-class gains, proposal recall, mAP@k).
//!
//! Every AP uses the full ranked gallery. Internal values stay unrounded; the
//! exported report is in percent with two decimals.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Tier, VideoRecord};
use crate::error::{Error, Result};
use crate::retrieval::{has_hit, GalleryIndex, RankedList};

/// AP of one ranked relevance list: the mean over relevant items of precision at
/// their rank, divided by `n_relevant_total` (relevant items missing from the
/// list contribute zero).
pub fn average_precision(relevance: &[bool], n_relevant_total: usize) -> Result<f64> {
    if n_relevant_total == 0 {
        return Err(Error::Parameter("AP needs at least one relevant item".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits > n_relevant_total {
        return Err(Error::Parameter(format!(
            "{hits} relevant items ranked but only {n_relevant_total} exist"
        )));
    }
    Ok(sum / n_relevant_total as f64)
}

/// AP restricted to the first `k` ranks, still normalized by every relevant item.
///
/// Non-decreasing in `k` and equal to [`average_precision`] once `k` covers the list.
pub fn average_precision_at(relevance: &[bool], n_relevant_total: usize, k: usize) -> Result<f64> {
    average_precision(&relevance[..k.min(relevance.len())], n_relevant_total)
}

/// `2bn / (b + n)`; both inputs must be positive.
pub fn harmonic(b: f64, n: f64) -> Result<f64> {
    if !(b > 0.0 && n > 0.0) || !b.is_finite() || !n.is_finite() {
        return Err(Error::Parameter(format!(
            "harmonic mean needs positive inputs, got ({b}, {n})"
        )));
    }
    Ok(2.0 * b * n / (b + n))
}

/// Harmonic mean that reports 0 when either side is 0.
fn harmonic_or_zero(b: f64, n: f64) -> f64 {
    if b > 0.0 && n > 0.0 {
        2.0 * b * n / (b + n)
    } else {
        0.0
    }
}

/// Query metadata needed to score its ranked list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub class: usize,
    pub tier: Tier,
    pub duration_s: f64,
}

impl QueryRecord {
    /// Metadata of a labelled manifest video; duration is the activity length.
    pub fn from_video(manifest: &Manifest, video: &VideoRecord) -> Result<Self> {
        let class = video
            .class
            .class()
            .ok_or_else(|| Error::Validation(format!("distractor {} cannot be a query", video.id)))?;
        Ok(Self {
            id: video.id.clone(),
            class,
            tier: manifest.tier(class),
            duration_s: video.activity_len(),
        })
    }
}

/// Ranked gallery labels per query; the unit every metric consumes.
///
/// Lists must rank the whole (self-excluded) gallery, so the number of relevant
/// items is counted from the list itself.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRun {
    pub queries: Vec<QueryRecord>,
    /// Label of each ranked item (`None` never counts as relevant).
    pub ranked: Vec<Vec<Option<usize>>>,
}

impl RetrievalRun {
    pub fn new(queries: Vec<QueryRecord>, ranked: Vec<Vec<Option<usize>>>) -> Result<Self> {
        if queries.len() != ranked.len() {
            return Err(Error::dim(format!(
                "{} queries with {} ranked lists",
                queries.len(),
                ranked.len()
            )));
        }
        Ok(Self { queries, ranked })
    }

    /// Pairs ranked lists with their queries by position, checking ids agree.
    pub fn from_lists(index: &GalleryIndex, lists: &[RankedList], queries: Vec<QueryRecord>) -> Result<Self> {
        if lists.len() != queries.len() {
            return Err(Error::dim(format!(
                "{} queries with {} ranked lists",
                queries.len(),
                lists.len()
            )));
        }
        let mut ranked = Vec::with_capacity(lists.len());
        for (l, q) in lists.iter().zip(&queries) {
            if l.query_id != q.id {
                return Err(Error::Validation(format!(
                    "ranked list for {} paired with query {}",
                    l.query_id, q.id
                )));
            }
            ranked.push(l.hits.iter().map(|h| index.items[h.index].label).collect());
        }
        Self::new(queries, ranked)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Which gallery items count as relevant to a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relevance {
    Class,
    /// Same parent (taxonomy level 2).
    Parent,
    /// Same grandparent (taxonomy level 1).
    Grandparent,
}

/// AP of one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryAp {
    pub query_id: String,
    pub class: usize,
    pub tier: Tier,
    pub duration_s: f64,
    /// In `[0, 1]`.
    pub ap: f64,
}

/// Per-query APs plus the queries skipped for lack of any relevant item.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRun {
    pub aps: Vec<QueryAp>,
    pub skipped: Vec<String>,
}

fn group_map(manifest: &Manifest, rel: Relevance) -> Result<Vec<usize>> {
    match rel {
        Relevance::Class => Ok((0..manifest.num_classes()).collect()),
        _ if !manifest.has_taxonomy() => Err(Error::Config(
            "taxonomy evaluation needs parent and grandparent on every class".into(),
        )),
        Relevance::Parent => Ok(manifest.classes.iter().map(|c| c.parent.unwrap()).collect()),
        Relevance::Grandparent => Ok(manifest.classes.iter().map(|c| c.grandparent.unwrap()).collect()),
    }
}

fn relevance_flags(run: &RetrievalRun, q: usize, groups: &[usize]) -> Vec<bool> {
    let g = groups[run.queries[q].class];
    run.ranked[q]
        .iter()
        .map(|l| l.is_some_and(|c| groups[c] == g))
        .collect()
}

/// Scores every query under the given relevance rule.
pub fn score_run(run: &RetrievalRun, manifest: &Manifest, rel: Relevance) -> Result<ScoredRun> {
    let groups = group_map(manifest, rel)?;
    let mut aps = Vec::with_capacity(run.len());
    let mut skipped = Vec::new();
    for (i, q) in run.queries.iter().enumerate() {
        let flags = relevance_flags(run, i, &groups);
        let n = flags.iter().filter(|&&f| f).count();
        if n == 0 {
            skipped.push(q.id.clone());
            continue;
        }
        aps.push(QueryAp {
            query_id: q.id.clone(),
            class: q.class,
            tier: q.tier,
            duration_s: q.duration_s,
            ap: average_precision(&flags, n)?,
        });
    }
    Ok(ScoredRun { aps, skipped })
}

/// Query-mean AP per tier and overall; a tier without queries is `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TierMaps {
    pub base: Option<f64>,
    pub novel: Option<f64>,
    pub overall: Option<f64>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean of per-query APs within each tier (query-mean, not class-mean).
pub fn mean_ap(aps: &[QueryAp]) -> TierMaps {
    TierMaps {
        base: mean(aps.iter().filter(|a| a.tier == Tier::Base).map(|a| a.ap)),
        novel: mean(aps.iter().filter(|a| a.tier == Tier::Novel).map(|a| a.ap)),
        overall: mean(aps.iter().map(|a| a.ap)),
    }
}

/// Mean over classes of each class's mean query AP.
pub fn class_mean_ap(aps: &[QueryAp]) -> TierMaps {
    let per = per_class(aps);
    TierMaps {
        base: mean(per.iter().filter(|c| c.tier == Tier::Base).map(|c| c.ap)),
        novel: mean(per.iter().filter(|c| c.tier == Tier::Novel).map(|c| c.ap)),
        overall: mean(per.iter().map(|c| c.ap)),
    }
}

/// Mean query AP of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: usize,
    pub tier: Tier,
    pub queries: usize,
    pub ap: f64,
}

fn per_class(aps: &[QueryAp]) -> Vec<ClassAp> {
    let mut acc: BTreeMap<usize, (Tier, usize, f64)> = BTreeMap::new();
    for a in aps {
        let e = acc.entry(a.class).or_insert((a.tier, 0, 0.0));
        e.1 += 1;
        e.2 += a.ap;
    }
    acc.into_iter()
        .map(|(class, (tier, queries, s))| ClassAp {
            class,
            tier,
            queries,
            ap: s / queries as f64,
        })
        .collect()
}

/// Query-mean mAP (fraction) with relevance widened to a taxonomy level.
///
/// Level 2 groups by parent, level 1 by grandparent.
pub fn taxonomy_map(run: &RetrievalRun, manifest: &Manifest, level: u8) -> Result<f64> {
    let rel = match level {
        1 => Relevance::Grandparent,
        2 => Relevance::Parent,
        other => return Err(Error::Parameter(format!("taxonomy level must be 1 or 2, got {other}"))),
    };
    let scored = score_run(run, manifest, rel)?;
    mean_ap(&scored.aps)
        .overall
        .ok_or_else(|| Error::Parameter("no query has a relevant item".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportClass {
    pub class: usize,
    pub name: String,
    pub tier: Tier,
    pub queries: usize,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportQuery {
    pub query_id: String,
    pub class: usize,
    pub ap: f64,
}

/// Retrieval summary. All values are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map_base: Option<f64>,
    pub map_novel: Option<f64>,
    pub map_overall: Option<f64>,
    /// Harmonic mean of base and novel mAP (0 if either is 0).
    pub harmonic: Option<f64>,
    pub class_mean: TierMaps,
    pub queries: usize,
    pub skipped_queries: Vec<String>,
    pub per_class_ap: Vec<ReportClass>,
    pub per_query_ap: Vec<ReportQuery>,
    pub config: serde_json::Value,
}

fn pct(x: Option<f64>) -> Option<f64> {
    x.map(|v| v * 100.0)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl MetricsReport {
    pub fn from_scored(scored: &ScoredRun, manifest: &Manifest, config: serde_json::Value) -> Self {
        let m = mean_ap(&scored.aps);
        let cm = class_mean_ap(&scored.aps);
        let (map_base, map_novel) = (pct(m.base), pct(m.novel));
        let harmonic = map_base.zip(map_novel).map(|(b, n)| harmonic_or_zero(b, n));
        Self {
            map_base,
            map_novel,
            map_overall: pct(m.overall),
            harmonic,
            class_mean: TierMaps {
                base: pct(cm.base),
                novel: pct(cm.novel),
                overall: pct(cm.overall),
            },
            queries: scored.aps.len(),
            skipped_queries: scored.skipped.clone(),
            per_class_ap: per_class(&scored.aps)
                .into_iter()
                .map(|c| ReportClass {
                    class: c.class,
                    name: manifest.classes[c.class].name.clone(),
                    tier: c.tier,
                    queries: c.queries,
                    ap: c.ap * 100.0,
                })
                .collect(),
            per_query_ap: scored
                .aps
                .iter()
                .map(|a| ReportQuery {
                    query_id: a.query_id.clone(),
                    class: a.class,
                    ap: a.ap * 100.0,
                })
                .collect(),
            config,
        }
    }

    /// Scores `run` with class relevance and builds the report.
    pub fn evaluate(run: &RetrievalRun, manifest: &Manifest, config: serde_json::Value) -> Result<Self> {
        let scored = score_run(run, manifest, Relevance::Class)?;
        Ok(Self::from_scored(&scored, manifest, config))
    }

    /// Copy with every number rounded to two decimals.
    pub fn rounded(&self) -> Self {
        let r = |x: Option<f64>| x.map(round2);
        let mut out = self.clone();
        out.map_base = r(self.map_base);
        out.map_novel = r(self.map_novel);
        out.map_overall = r(self.map_overall);
        out.harmonic = r(self.harmonic);
        out.class_mean = TierMaps {
            base: r(self.class_mean.base),
            novel: r(self.class_mean.novel),
            overall: r(self.class_mean.overall),
        };
        out.per_class_ap.iter_mut().for_each(|c| c.ap = round2(c.ap));
        out.per_query_ap.iter_mut().for_each(|q| q.ap = round2(q.ap));
        out
    }

    /// Pretty JSON of the rounded report.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.rounded()).expect("report serializes");
        s.push('\n');
        s
    }

    /// `query_id,class,ap` rows, AP in percent.
    pub fn per_query_csv(&self) -> String {
        let mut s = String::from("query_id,class,ap\n");
        for q in &self.per_query_ap {
            let _ = writeln!(s, "{},{},{:.2}", q.query_id, q.class, q.ap);
        }
        s
    }

    /// `class,name,tier,queries,ap` rows, AP in percent.
    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,name,tier,queries,ap\n");
        for c in &self.per_class_ap {
            let _ = writeln!(s, "{},{},{},{},{:.2}", c.class, c.name, c.tier, c.queries, c.ap);
        }
        s
    }
}

/// Class-by-class counts of gallery items seen in each query's top `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<usize>,
    /// `counts[i][j]`: items of `classes[j]` in the top-k of queries of `classes[i]`.
    pub counts: Vec<Vec<u64>>,
}

/// Confusion counts over the top `k` of every query whose class is in `subset`
/// (all classes when `None`). Unlabelled items are ignored.
pub fn confusion_matrix(
    run: &RetrievalRun,
    k: usize,
    num_classes: usize,
    subset: Option<&[usize]>,
) -> Result<ConfusionMatrix> {
    if k < 1 {
        return Err(Error::Parameter("confusion matrix needs k ≥ 1".into()));
    }
    let classes: Vec<usize> = subset.map_or_else(|| (0..num_classes).collect(), <[usize]>::to_vec);
    if classes.iter().any(|&c| c >= num_classes) {
        return Err(Error::Parameter("class subset out of range".into()));
    }
    let pos: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (q, list) in run.queries.iter().zip(&run.ranked) {
        let Some(&gi) = pos.get(&q.class) else { continue };
        for lbl in list.iter().take(k).flatten() {
            if let Some(&pj) = pos.get(lbl) {
                counts[gi][pj] += 1;
            }
        }
    }
    Ok(ConfusionMatrix { classes, counts })
}

impl ConfusionMatrix {
    /// Rows scaled to sum to 1 (all-zero rows stay zero).
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Header of class ids, one row per ground-truth class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gt");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let _ = write!(s, "{c}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Queries whose duration falls in `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationBucket {
    pub lo: f64,
    pub hi: f64,
    pub queries: usize,
    /// Mean AP, fraction.
    pub map: f64,
}

/// Mean AP per duration bucket. The edges (ascending) split the line into
/// `(-∞, e₀), [e₀, e₁), …, [eₙ, ∞)`; empty buckets are omitted.
pub fn duration_analysis(aps: &[QueryAp], edges: &[f64]) -> Result<Vec<DurationBucket>> {
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::Parameter(
            "bucket edges must be finite and strictly ascending".into(),
        ));
    }
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend_from_slice(edges);
    bounds.push(f64::INFINITY);
    Ok(bounds
        .windows(2)
        .filter_map(|w| {
            let inside: Vec<f64> = aps
                .iter()
                .filter(|a| a.duration_s >= w[0] && a.duration_s < w[1])
                .map(|a| a.ap)
                .collect();
            mean(inside.iter().copied()).map(|map| DurationBucket {
                lo: w[0],
                hi: w[1],
                queries: inside.len(),
                map,
            })
        })
        .collect())
}

/// Mean-AP difference of one class between two runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGain {
    pub class: usize,
    pub tier: Tier,
    pub queries: usize,
    /// `AP_a − AP_b`, fraction.
    pub delta: f64,
}

/// Per-class gain of run `a` over run `b`, sorted by descending delta (ties by class).
pub fn per_class_gain(a: &[QueryAp], b: &[QueryAp]) -> Result<Vec<ClassGain>> {
    let key = |v: &[QueryAp]| {
        let mut ids: Vec<(String, usize)> = v.iter().map(|q| (q.query_id.clone(), q.class)).collect();
        ids.sort_unstable();
        ids
    };
    if key(a) != key(b) {
        return Err(Error::Parameter("runs were scored on different query sets".into()));
    }
    let (ca, cb) = (per_class(a), per_class(b));
    let mut out: Vec<ClassGain> = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| ClassGain {
            class: x.class,
            tier: x.tier,
            queries: x.queries,
            delta: x.ap - y.ap,
        })
        .collect();
    out.sort_by(|x, y| y.delta.total_cmp(&x.delta).then(x.class.cmp(&y.class)));
    Ok(out)
}

/// The `n` largest and `n` smallest gains within one tier.
pub fn gain_extremes(gains: &[ClassGain], tier: Tier, n: usize) -> (Vec<ClassGain>, Vec<ClassGain>) {
    let t: Vec<ClassGain> = gains.iter().filter(|g| g.tier == tier).cloned().collect();
    let top = t.iter().take(n).cloned().collect();
    let bottom = t.iter().rev().take(n).cloned().collect();
    (top, bottom)
}

/// Recall of one `(clip length, max proposal length)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallCell {
    pub clip_len_s: f64,
    pub max_len: usize,
    pub videos: usize,
    pub hits: usize,
    pub recall: f64,
}

/// Fraction of labelled videos with at least one proposal at `tIoU > threshold`.
pub fn proposal_recall_sweep(
    videos: &[&VideoRecord],
    clip_lens: &[f64],
    max_lens: &[usize],
    threshold: f64,
) -> Result<Vec<RecallCell>> {
    let labelled: Vec<&VideoRecord> = videos.iter().copied().filter(|v| !v.class.is_distractor()).collect();
    if labelled.is_empty() {
        return Err(Error::Parameter("no labelled videos for the recall sweep".into()));
    }
    let mut out = Vec::with_capacity(clip_lens.len() * max_lens.len());
    for &l in clip_lens {
        for &m in max_lens {
            let mut hits = 0;
            for v in &labelled {
                hits += has_hit(v, l, m, threshold)? as usize;
            }
            out.push(RecallCell {
                clip_len_s: l,
                max_len: m,
                videos: labelled.len(),
                hits,
                recall: hits as f64 / labelled.len() as f64,
            });
        }
    }
    Ok(out)
}

/// CSV `clip_len_s,max_len,videos,hits,recall`.
pub fn recall_csv(cells: &[RecallCell]) -> String {
    let mut s = String::from("clip_len_s,max_len,videos,hits,recall\n");
    for c in cells {
        let _ = writeln!(s, "{},{},{},{},{}", c.clip_len_s, c.max_len, c.videos, c.hits, c.recall);
    }
    s
}

/// mAP@k (fraction) for `k = 1..=longest list`, class relevance.
///
/// Entry `k − 1` averages [`average_precision_at`] over the scored queries, so the
/// last entry equals the full mAP.
pub fn map_curve(run: &RetrievalRun, manifest: &Manifest) -> Result<Vec<f64>> {
    let groups = group_map(manifest, Relevance::Class)?;
    let flags: Vec<(Vec<bool>, usize)> = (0..run.len())
        .map(|i| {
            let f = relevance_flags(run, i, &groups);
            let n = f.iter().filter(|&&x| x).count();
            (f, n)
        })
        .filter(|(_, n)| *n > 0)
        .collect();
    let longest = flags.iter().map(|(f, _)| f.len()).max().unwrap_or(0);
    let mut curve = vec![0.0; longest];
    for (f, n) in &flags {
        // Running precision sum, extended past the list end with the final AP.
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (k, slot) in curve.iter_mut().enumerate() {
            if k < f.len() && f[k] {
                hits += 1;
                sum += hits as f64 / (k + 1) as f64;
            }
            *slot += sum / *n as f64;
        }
    }
    if !flags.is_empty() {
        let inv = 1.0 / flags.len() as f64;
        curve.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(curve)
}

/// CSV `k,map` with mAP in percent.
pub fn map_curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("k,map\n");
    for (k, v) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{}", k + 1, v * 100.0);
    }
    s
}
