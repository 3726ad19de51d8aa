//! Exact nearest-neighbour search over L2-normalized embeddings.
//!
//! Rankings sort by Euclidean distance and break ties by ascending gallery id, so
//! every ranked list (and every mAP computed from it) is deterministic. A query
//! never retrieves items cut from its own video.

mod temporal;

pub use temporal::{
    generate_proposals, has_hit, proposal_count, segment_clips, tiou, Clip, ClipRange, ClipRule, TemporalProposal,
};

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_file, write_file, Reader};
use crate::numerics::ops::l2_normalize;
use crate::numerics::{Tensor, NORM_EPS};

pub const GALLERY_MAGIC: &[u8; 4] = b"VSGI";

/// Granularity of gallery items.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GalleryKind {
    #[default]
    Video,
    Clip,
    Moment,
}

impl fmt::Display for GalleryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GalleryKind::Video => "video",
            GalleryKind::Clip => "clip",
            GalleryKind::Moment => "moment",
        })
    }
}

impl FromStr for GalleryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video" => Ok(GalleryKind::Video),
            "clip" => Ok(GalleryKind::Clip),
            "moment" => Ok(GalleryKind::Moment),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected video, clip or moment)"
            ))),
        }
    }
}

impl GalleryKind {
    fn code(self) -> u32 {
        match self {
            GalleryKind::Video => 0,
            GalleryKind::Clip => 1,
            GalleryKind::Moment => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        [GalleryKind::Video, GalleryKind::Clip, GalleryKind::Moment]
            .into_iter()
            .find(|k| k.code() == c)
    }
}

/// Bookkeeping for one gallery row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub id: String,
    /// Source video; queries never retrieve items of their own video.
    pub video_id: String,
    /// Class this item counts as relevant for; `None` for distractors, negative
    /// clips and proposals that miss the activity.
    pub label: Option<usize>,
    pub start_s: f64,
    pub end_s: f64,
}

impl GalleryItem {
    /// A whole-video item.
    pub fn video(id: &str, label: Option<usize>, interval: [f64; 2]) -> Self {
        Self {
            id: id.to_string(),
            video_id: id.to_string(),
            label,
            start_s: interval[0],
            end_s: interval[1],
        }
    }
}

/// Immutable `N × C` matrix of unit rows plus item metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryIndex {
    pub kind: GalleryKind,
    pub items: Vec<GalleryItem>,
    rows: Tensor<f32>,
    /// Position of each item when ids are sorted ascending.
    id_rank: Vec<u32>,
}

/// Normalizes every embedding and checks ids are unique.
pub fn build_index(items: Vec<GalleryItem>, embeddings: &[Vec<f32>], kind: GalleryKind) -> Result<GalleryIndex> {
    if items.is_empty() || items.len() != embeddings.len() {
        return Err(Error::dim(format!(
            "{} items with {} embeddings",
            items.len(),
            embeddings.len()
        )));
    }
    let c = embeddings[0].len();
    let mut seen = HashSet::with_capacity(items.len());
    let mut data = Vec::with_capacity(items.len() * c);
    for (item, e) in items.iter().zip(embeddings) {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::Validation(format!("duplicate gallery id {}", item.id)));
        }
        if e.len() != c {
            return Err(Error::dim(format!(
                "embedding of {} has width {}, expected {c}",
                item.id,
                e.len()
            )));
        }
        data.extend(
            l2_normalize(e).map_err(|_| Error::Degenerate(format!("gallery item {} has a zero embedding", item.id)))?,
        );
    }
    let rows = Tensor::from_parts(vec![items.len(), c], data);
    Ok(GalleryIndex::assemble(kind, items, rows))
}

impl GalleryIndex {
    fn assemble(kind: GalleryKind, items: Vec<GalleryItem>, rows: Tensor<f32>) -> Self {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| items[a].id.cmp(&items[b].id));
        let mut id_rank = vec![0u32; items.len()];
        for (r, &i) in order.iter().enumerate() {
            id_rank[i] = r as u32;
        }
        Self {
            kind,
            items,
            rows,
            id_rank,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.rows.row(i)
    }

    /// Items that a query from `video_ids` may retrieve.
    pub fn available(&self, video_ids: &[&str]) -> usize {
        self.items
            .iter()
            .filter(|it| !video_ids.contains(&it.video_id.as_str()))
            .count()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(GALLERY_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for it in &self.items {
            for s in [&it.id, &it.video_id] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            let label = it.label.map_or(u32::MAX, |l| l as u32);
            out.extend_from_slice(&label.to_le_bytes());
            out.extend_from_slice(&it.start_s.to_le_bytes());
            out.extend_from_slice(&it.end_s.to_le_bytes());
        }
        for v in self.rows.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { path, bytes, pos: 0 };
        r.magic(GALLERY_MAGIC)?;
        r.version()?;
        let code = r.u32("kind")?;
        let kind = GalleryKind::from_code(code).ok_or_else(|| r.err(format!("unknown gallery kind {code}")))?;
        let n = r.u32("N")? as usize;
        let c = r.u32("C")? as usize;
        if n == 0 || c == 0 {
            return Err(r.err("empty gallery"));
        }
        let mut items = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.string("item id")?;
            let video_id = r.string("video id")?;
            let label = r.u32("label")?;
            let start_s = f64::from_le_bytes(r.take(8, "start")?.try_into().unwrap());
            let end_s = f64::from_le_bytes(r.take(8, "end")?.try_into().unwrap());
            items.push(GalleryItem {
                id,
                video_id,
                label: (label != u32::MAX).then_some(label as usize),
                start_s,
                end_s,
            });
        }
        let data = r.f32_block(n * c, "embeddings")?;
        r.finish()?;
        Ok(Self::assemble(kind, items, Tensor::from_parts(vec![n, c], data)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&read_file(path)?, path)
    }
}

/// One retrieved item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Row of the gallery.
    pub index: usize,
    pub distance: f64,
}

/// Gallery items ordered by distance to a query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Euclidean distance accumulated in `f64`, in index order.
#[inline]
pub fn unit_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn rank(index: &GalleryIndex, query_id: &str, q: &[f32], exclude: &[&str], k: Option<usize>) -> Result<RankedList> {
    if q.len() != index.dim() {
        return Err(Error::dim(format!(
            "query width {} vs gallery width {}",
            q.len(),
            index.dim()
        )));
    }
    let mut hits: Vec<Hit> = index
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| !exclude.contains(&it.video_id.as_str()) && !exclude.contains(&it.id.as_str()))
        .map(|(i, _)| Hit {
            index: i,
            distance: unit_distance(q, index.row(i)),
        })
        .collect();
    let k = k.unwrap_or(hits.len());
    if k > hits.len() {
        return Err(Error::Parameter(format!(
            "asked for {k} results but only {} gallery items are available",
            hits.len()
        )));
    }
    let cmp = |a: &Hit, b: &Hit| {
        a.distance
            .total_cmp(&b.distance)
            .then(index.id_rank[a.index].cmp(&index.id_rank[b.index]))
    };
    if k < hits.len() {
        if k > 0 {
            hits.select_nth_unstable_by(k - 1, cmp);
        }
        hits.truncate(k);
    }
    hits.sort_unstable_by(cmp);
    Ok(RankedList {
        query_id: query_id.to_string(),
        hits,
    })
}

/// Exact `k`-nearest search (`None` ranks the whole gallery).
///
/// Items whose id or source video equals `query_id` are excluded.
pub fn search(index: &GalleryIndex, query_id: &str, z: &[f32], k: Option<usize>) -> Result<RankedList> {
    let q = l2_normalize(z).map_err(|_| Error::Degenerate(format!("query {query_id} has a zero embedding")))?;
    rank(index, query_id, &q, &[query_id], k)
}

/// Searches with the normalized mean of several query embeddings.
///
/// Every query id is excluded from the results; the list is reported under the
/// first id.
pub fn multi_query(index: &GalleryIndex, query_ids: &[&str], zs: &[Vec<f32>], k: Option<usize>) -> Result<RankedList> {
    if zs.is_empty() || query_ids.len() != zs.len() {
        return Err(Error::Parameter(
            "multi-query needs one id per embedding and at least one".into(),
        ));
    }
    let c = zs[0].len();
    let mut mean = vec![0.0f64; c];
    for (id, z) in query_ids.iter().zip(zs) {
        if z.len() != c {
            return Err(Error::dim("query embeddings differ in width"));
        }
        let u = l2_normalize(z).map_err(|_| Error::Degenerate(format!("query {id} has a zero embedding")))?;
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v as f64;
        }
    }
    let inv = 1.0 / zs.len() as f64;
    let mean: Vec<f64> = mean.into_iter().map(|v| v * inv).collect();
    let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > NORM_EPS.sqrt()) {
        return Err(Error::Degenerate("query embeddings cancel out".into()));
    }
    let q: Vec<f32> = mean.iter().map(|v| (v / n) as f32).collect();
    rank(index, query_ids[0], &q, query_ids, k)
}

/// Alias of [`search`] for proposal galleries.
pub fn moment_search(index: &GalleryIndex, query_id: &str, z: &[f32], k: Option<usize>) -> Result<RankedList> {
    search(index, query_id, z, k)
}

/// CSV rows `query_id,rank,gallery_id,distance,relevant` (rank starts at 1).
pub fn ranked_lists_csv<F>(index: &GalleryIndex, lists: &[RankedList], mut relevant: F) -> String
where
    F: FnMut(&RankedList, &GalleryItem) -> bool,
{
    let mut s = String::from("query_id,rank,gallery_id,distance,relevant\n");
    for list in lists {
        for (r, h) in list.hits.iter().enumerate() {
            let item = &index.items[h.index];
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                list.query_id,
                r + 1,
                item.id,
                h.distance,
                relevant(list, item) as u8
            );
        }
    }
    s
}
