//! Tree keys, refinement, and 2:1 face balancing.

use std::collections::{BTreeSet, HashSet};

use crate::expr::Env;
use crate::geometry::{ElementClass, Geometry};
use crate::problem::ProblemSpec;

use super::MeshError;

/// Deepest level the lattice arithmetic supports.
pub const MAX_DEPTH: u32 = 30;

/// A tree cell: `anchor` counts cells of size `2^-level` from the domain
/// minimum corner along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TreeKey {
    pub level: u32,
    pub anchor: [u32; 3],
}

impl TreeKey {
    pub const ROOT: TreeKey = TreeKey {
        level: 0,
        anchor: [0; 3],
    };

    pub fn new(level: u32, anchor: [u32; 3]) -> Self {
        TreeKey { level, anchor }
    }

    pub fn children(self, dim: usize) -> impl Iterator<Item = TreeKey> {
        (0..1u32 << dim).map(move |c| TreeKey {
            level: self.level + 1,
            anchor: std::array::from_fn(|k| if k < dim { 2 * self.anchor[k] + (c >> k & 1) } else { 0 }),
        })
    }

    pub fn parent(self) -> TreeKey {
        TreeKey {
            level: self.level - 1,
            anchor: self.anchor.map(|a| a / 2),
        }
    }

    /// Ancestor at `level` (or `self` when `level == self.level`).
    pub fn ancestor(self, level: u32) -> TreeKey {
        let shift = self.level - level;
        TreeKey {
            level,
            anchor: self.anchor.map(|a| a >> shift),
        }
    }

    /// Same-level neighbor across the face on `axis`, or `None` at the box.
    pub fn face_neighbor(self, axis: usize, positive: bool) -> Option<TreeKey> {
        let mut anchor = self.anchor;
        if positive {
            if anchor[axis] + 1 >= 1 << self.level {
                return None;
            }
            anchor[axis] += 1;
        } else {
            anchor[axis] = anchor[axis].checked_sub(1)?;
        }
        Some(TreeKey { level: self.level, anchor })
    }

    /// Anchor scaled to the finest lattice.
    pub fn lattice_anchor(self) -> [u64; 3] {
        self.anchor.map(|a| (a as u64) << (MAX_DEPTH - self.level))
    }

    /// Cell size on the finest lattice.
    pub fn lattice_size(self) -> u64 {
        1 << (MAX_DEPTH - self.level)
    }

    /// Interleaved-bit order key of the finest-lattice anchor.
    pub fn morton(self) -> u128 {
        let a = self.lattice_anchor();
        let mut m: u128 = 0;
        for bit in (0..MAX_DEPTH).rev() {
            for k in (0..3).rev() {
                m = (m << 1) | ((a[k] >> bit) & 1) as u128;
            }
        }
        m
    }

    /// Physical bounds inside the domain box.
    pub fn bounds(self, min: [f64; 3], max: [f64; 3], dim: usize) -> ([f64; 3], [f64; 3]) {
        let n = (1u64 << self.level) as f64;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..dim {
            let h = (max[k] - min[k]) / n;
            lo[k] = min[k] + self.anchor[k] as f64 * h;
            hi[k] = min[k] + (self.anchor[k] + 1) as f64 * h;
        }
        (lo, hi)
    }

    /// Does a face of the cell lie on the domain wall `wall` (axis*2 + side)?
    pub fn touches_wall(self, wall: usize) -> bool {
        let axis = wall / 2;
        if wall % 2 == 0 {
            self.anchor[axis] == 0
        } else {
            self.anchor[axis] + 1 == 1 << self.level
        }
    }
}

/// Sort keys in Morton order, coarser first on ties.
pub fn morton_sort(keys: &mut [TreeKey]) {
    keys.sort_by_key(|k| (k.morton(), k.level));
}

struct Refiner<'a> {
    spec: &'a ProblemSpec,
    geoms: &'a [Geometry],
    constants: std::collections::BTreeMap<String, f64>,
}

impl Refiner<'_> {
    fn wants_split(&self, key: TreeKey) -> Result<bool, MeshError> {
        let s = self.spec;
        let dim = s.dimension;
        if key.level < s.base_refine_level {
            return Ok(true);
        }
        let (lo, hi) = key.bounds(s.domain_min, s.domain_max, dim);
        for g in self.geoms {
            if key.level < g.refine_level && g.classify_element(lo, hi, dim) == ElementClass::Intercepted {
                return Ok(true);
            }
        }
        if let Some(wall_level) = s.wall_refine_level {
            if key.level < wall_level {
                let flagged = |w: usize| s.refine_walls.is_empty() || s.refine_walls[w];
                if (0..2 * dim).any(|w| flagged(w) && key.touches_wall(w)) {
                    return Ok(true);
                }
            }
        }
        if let Some(pred) = &s.refine_where {
            let c: [f64; 3] = std::array::from_fn(|k| 0.5 * (lo[k] + hi[k]));
            let env = Env::at(c, 0.0).with_constants(&self.constants).with_level(key.level);
            if pred.eval_bool(&env).map_err(MeshError::Refinement)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Refine from the root until no criterion applies. Leaves come back in
/// Morton order.
pub fn build_tree(spec: &ProblemSpec, geoms: &[Geometry]) -> Result<Vec<TreeKey>, MeshError> {
    let refiner = Refiner {
        spec,
        geoms,
        constants: spec.constants(),
    };
    let mut leaves = Vec::new();
    let mut stack = vec![TreeKey::ROOT];
    while let Some(key) = stack.pop() {
        if refiner.wants_split(key)? {
            if key.level >= MAX_DEPTH {
                return Err(MeshError::DepthExceeded(MAX_DEPTH));
            }
            stack.extend(key.children(spec.dimension));
        } else {
            leaves.push(key);
        }
    }
    morton_sort(&mut leaves);
    Ok(leaves)
}

/// Leaf containing the same-level cell `probe`, searching coarser levels.
pub fn find_covering(leaves: &HashSet<TreeKey>, probe: TreeKey) -> Option<TreeKey> {
    (0..=probe.level).rev().map(|l| probe.ancestor(l)).find(|k| leaves.contains(k))
}

/// Split leaves until face neighbors differ by at most one level.
pub fn balance_2to1(leaves: Vec<TreeKey>, dim: usize) -> Result<Vec<TreeKey>, MeshError> {
    let mut set: HashSet<TreeKey> = leaves.iter().copied().collect();
    let max_level = leaves.iter().map(|k| k.level).max().unwrap_or(0);
    let mut by_level: Vec<BTreeSet<TreeKey>> = vec![BTreeSet::new(); max_level as usize + 1];
    for k in &leaves {
        by_level[k.level as usize].insert(*k);
    }
    for level in (2..=max_level).rev() {
        let current: Vec<TreeKey> = by_level[level as usize].iter().copied().collect();
        for key in current {
            if !set.contains(&key) {
                continue;
            }
            for axis in 0..dim {
                for positive in [false, true] {
                    let Some(probe) = key.face_neighbor(axis, positive) else { continue };
                    // Split the covering leaf until its level reaches level - 1.
                    while let Some(cover) = find_covering(&set, probe) {
                        if cover.level + 1 >= level {
                            break;
                        }
                        set.remove(&cover);
                        by_level[cover.level as usize].remove(&cover);
                        for child in cover.children(dim) {
                            set.insert(child);
                            by_level[child.level as usize].insert(child);
                        }
                    }
                }
            }
        }
    }
    let mut out: Vec<TreeKey> = set.into_iter().collect();
    morton_sort(&mut out);
    Ok(out)
}

/// Largest level difference across any face (a scan over every leaf face).
pub fn max_face_level_jump(leaves: &[TreeKey], dim: usize) -> u32 {
    let set: HashSet<TreeKey> = leaves.iter().copied().collect();
    let mut worst = 0;
    for key in leaves {
        for axis in 0..dim {
            for positive in [false, true] {
                if let Some(probe) = key.face_neighbor(axis, positive) {
                    if let Some(cover) = find_covering(&set, probe) {
                        worst = worst.max(key.level - cover.level);
                    }
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn key_arithmetic() {
        let k = TreeKey::new(2, [1, 3, 0]);
        assert_eq!(k.children(2).count(), 4);
        assert!(k.children(2).all(|c| c.parent() == k));
        assert_eq!(k.face_neighbor(1, true), None);
        assert_eq!(k.face_neighbor(0, false), Some(TreeKey::new(2, [0, 3, 0])));
        assert!(k.touches_wall(3) && !k.touches_wall(2));
        let (lo, hi) = k.bounds([0.0; 3], [1.0, 2.0, 1.0], 2);
        assert_eq!((lo[1], hi[1]), (1.5, 2.0));
    }

    #[test]
    fn morton_interleaves() {
        let mut keys: Vec<TreeKey> = TreeKey::ROOT.children(2).flat_map(|c| c.children(2)).collect();
        keys.reverse();
        morton_sort(&mut keys);
        let order: Vec<[u32; 3]> = keys.iter().take(4).map(|k| k.anchor).collect();
        assert_eq!(order, vec![[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]);
    }

    /// Deep chain next to a coarse leaf.
    #[test]
    fn ripple_inserts_intermediate_levels() {
        let dim = 2;
        let mut leaves: Vec<TreeKey> = TreeKey::ROOT.children(dim).flat_map(|c| c.children(dim)).collect();
        // Refine the leaf at anchor (1,1) level 2 down to level 5 at its corner.
        let mut target = TreeKey::new(2, [1, 1, 0]);
        leaves.retain(|k| *k != target);
        for _ in 0..3 {
            let kids: Vec<TreeKey> = target.children(dim).collect();
            leaves.extend(kids.iter().skip(1));
            target = kids[0];
        }
        leaves.push(target);
        assert_eq!(max_face_level_jump(&leaves, dim), 3);
        let balanced = balance_2to1(leaves.clone(), dim).unwrap();
        assert!(max_face_level_jump(&balanced, dim) <= 1);
        let area: f64 = balanced.iter().map(|k| 0.25f64.powi(k.level as i32)).sum();
        assert!((area - 1.0).abs() < 1e-15);
        assert_eq!(balance_2to1(balanced.clone(), dim).unwrap(), balanced);
    }

    #[test]
    fn random_seeds_balance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for dim in [2usize, 3] {
            let mut leaves = vec![TreeKey::ROOT];
            for _ in 0..40 {
                let i = rng.gen_range(0..leaves.len());
                if leaves[i].level < 7 {
                    let k = leaves.swap_remove(i);
                    leaves.extend(k.children(dim));
                }
            }
            let balanced = balance_2to1(leaves, dim).unwrap();
            assert!(max_face_level_jump(&balanced, dim) <= 1);
            let vol: f64 = balanced.iter().map(|k| 0.5f64.powi((k.level as usize * dim) as i32)).sum();
            assert!((vol - 1.0).abs() < 1e-12);
        }
    }
}
