use rand::seq::SliceRandom;

use super::{Manifest, Split, Tier};
use crate::error::{Error, Result};
use crate::numerics::rng::{indexed_rng, stream_rng};

/// Deterministic partition of `0..k` into `n_base` base ids and `k − n_base` novel ids.
///
/// Both lists come back sorted.
pub fn split_classes(k: usize, n_base: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_base == 0 || n_base >= k {
        return Err(Error::Parameter(format!("n_base must be in 1..{k}, got {n_base}")));
    }
    let mut ids: Vec<usize> = (0..k).collect();
    ids.shuffle(&mut stream_rng(seed, "dataset/split-classes"));
    let mut base = ids[..n_base].to_vec();
    let mut novel = ids[n_base..].to_vec();
    base.sort_unstable();
    novel.sort_unstable();
    Ok((base, novel))
}

/// Training subset: every base-class training video plus `shots` per novel class.
///
/// Returns indices into `manifest.videos`, ascending. Each novel class draws from its
/// own seeded permutation, so the subset for `shots = s` contains the one for
/// `s − 1`.
pub fn sample_novel_train(manifest: &Manifest, shots: usize, seed: u64) -> Result<Vec<usize>> {
    if shots == 0 {
        return Err(Error::Sampling("shots must be at least 1".into()));
    }
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); manifest.num_classes()];
    for i in manifest.split_indices(Split::Train) {
        if let Some(c) = manifest.videos[i].class.class() {
            per_class[c].push(i);
        }
    }
    let mut picked = Vec::new();
    for (c, vids) in per_class.iter_mut().enumerate() {
        match manifest.tier(c) {
            Tier::Base => picked.extend_from_slice(vids),
            Tier::Novel => {
                if vids.len() < shots {
                    return Err(Error::Sampling(format!(
                        "novel class {c} ({}) has {} training videos, {shots} requested",
                        manifest.classes[c].name,
                        vids.len()
                    )));
                }
                vids.shuffle(&mut indexed_rng(seed, "dataset/novel-shots", c as u64));
                picked.extend_from_slice(&vids[..shots]);
            }
        }
    }
    picked.sort_unstable();
    debug_assert!(picked.iter().all(|&i| !manifest.videos[i].class.is_distractor()));
    Ok(picked)
}
