//! Per-pixel fusion of overlapping patch-level blur-size decisions.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sim::BlurSizeMap;

/// Fuses patch votes into a per-pixel size map by majority vote.
///
/// Each `(row, col, scale)` vote covers the `patch`×`patch` window anchored
/// at (row, col). Ties go to the smaller scale. Pixels covered by no vote
/// inherit the value of the nearest voted pixel (breadth-first, row-major
/// tie order); if there are no votes at all, the map is filled with
/// `fallback_scale`.
pub fn fuse_patch_votes(
    h: usize,
    w: usize,
    patch: usize,
    votes: &[(usize, usize, usize)],
    fallback_scale: usize,
) -> Result<BlurSizeMap> {
    if fallback_scale == 0 || fallback_scale % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "fallback scale must be odd, got {fallback_scale}"
        )));
    }
    let max_scale = votes
        .iter()
        .map(|&(_, _, s)| s)
        .chain([fallback_scale])
        .max()
        .unwrap();
    if votes.iter().any(|&(_, _, s)| s == 0 || s % 2 == 0) {
        return Err(Error::InvalidArgument("votes must carry odd scales".into()));
    }
    let classes = (max_scale + 1) / 2;
    let mut counts = vec![0u32; h * w * classes];
    for &(r0, c0, s) in votes {
        if r0 + patch > h || c0 + patch > w {
            return Err(Error::InvalidArgument(format!(
                "vote at ({r0}, {c0}) exceeds image bounds {h}x{w}"
            )));
        }
        let class = (s - 1) / 2;
        for r in r0..r0 + patch {
            let base = (r * w) * classes + class;
            for c in c0..c0 + patch {
                counts[base + c * classes] += 1;
            }
        }
    }

    let mut sizes = vec![0u8; h * w];
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            let base = (r * w + c) * classes;
            let cell = &counts[base..base + classes];
            let total: u32 = cell.iter().sum();
            if total > 0 {
                // first max wins, so ties resolve toward the smaller scale
                let mut best = 0usize;
                for (k, &n) in cell.iter().enumerate() {
                    if n > cell[best] {
                        best = k;
                    }
                }
                sizes[r * w + c] = (2 * best + 1) as u8;
                queue.push_back((r, c));
            }
        }
    }

    if queue.is_empty() {
        return BlurSizeMap::new(h, w, vec![fallback_scale as u8; h * w]);
    }

    // flood unvoted pixels from their nearest decided neighbors
    while let Some((r, c)) = queue.pop_front() {
        let v = sizes[r * w + c];
        let mut push = |rr: usize, cc: usize, queue: &mut VecDeque<(usize, usize)>| {
            if sizes[rr * w + cc] == 0 {
                sizes[rr * w + cc] = v;
                queue.push_back((rr, cc));
            }
        };
        if r > 0 {
            push(r - 1, c, &mut queue);
        }
        if r + 1 < h {
            push(r + 1, c, &mut queue);
        }
        if c > 0 {
            push(r, c - 1, &mut queue);
        }
        if c + 1 < w {
            push(r, c + 1, &mut queue);
        }
    }
    BlurSizeMap::new(h, w, sizes)
}
