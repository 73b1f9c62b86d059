use std::collections::{BTreeSet, HashMap};

use super::tree::{TreeKey, MAX_DEPTH};
use super::MeshError;

/// Linear combination of independent unknowns.
pub type Weights = Vec<(u32, f64)>;

#[derive(Debug, Clone)]
pub struct NodeTable {
    pub coords: Vec<[f64; 3]>,
    /// Position on the finest lattice.
    pub lattice: Vec<[u64; 3]>,
    /// Independent unknown index, `None` for hanging nodes.
    pub dof: Vec<Option<u32>>,
    /// Every node's value in terms of independent unknowns; a single unit
    /// weight for independent nodes.
    pub expansion: Vec<Weights>,
    pub ndof: usize,
}

impl NodeTable {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn hanging_count(&self) -> usize {
        self.dof.iter().filter(|d| d.is_none()).count()
    }

    /// Nodal values for every node from independent values.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.expansion
            .iter()
            .map(|w| w.iter().map(|&(d, c)| c * free[d as usize]).sum())
            .collect()
    }

    /// Independent values sampled from a function of node coordinates.
    pub fn sample_free(&self, mut f: impl FnMut([f64; 3]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.ndof];
        for (i, d) in self.dof.iter().enumerate() {
            if let Some(d) = d {
                out[*d as usize] = f(self.coords[i]);
            }
        }
        out
    }
}

fn corner_lattice(key: TreeKey, c: usize, dim: usize) -> [u64; 3] {
    let a = key.lattice_anchor();
    let s = key.lattice_size();
    std::array::from_fn(|k| if k < dim { a[k] + if c >> k & 1 == 1 { s } else { 0 } } else { 0 })
}

/// Number corner nodes by first appearance and derive hanging constraints
/// from the coarsest kept element each hanging node lies on.
pub(super) fn enumerate(
    elements: &[TreeKey],
    dim: usize,
    min: [f64; 3],
    max: [f64; 3],
) -> Result<(Vec<[u32; 8]>, NodeTable), MeshError> {
    let ncorner = 1usize << dim;
    let mut ids: HashMap<[u64; 3], u32> = HashMap::new();
    let mut lattice: Vec<[u64; 3]> = Vec::new();
    let mut element_nodes = Vec::with_capacity(elements.len());
    for key in elements {
        let mut en = [u32::MAX; 8];
        for (c, slot) in en.iter_mut().enumerate().take(ncorner) {
            let q = corner_lattice(*key, c, dim);
            *slot = *ids.entry(q).or_insert_with(|| {
                lattice.push(q);
                lattice.len() as u32 - 1
            });
        }
        element_nodes.push(en);
    }

    let kept: HashMap<TreeKey, usize> = elements.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let levels: BTreeSet<u32> = elements.iter().map(|k| k.level).collect();
    let full = 1u64 << MAX_DEPTH;

    // For each node, the coarsest kept element having it as a non-corner
    // boundary point, with the interpolation weights of its corners.
    let mut masters: Vec<Option<Vec<(u32, f64)>>> = vec![None; lattice.len()];
    for (n, q) in lattice.iter().enumerate() {
        'levels: for &level in &levels {
            let s = 1u64 << (MAX_DEPTH - level);
            if (0..dim).all(|k| q[k] % s == 0) {
                // A corner at this level is a corner of every such cell.
                continue;
            }
            let mut cand: Vec<Vec<u64>> = Vec::with_capacity(dim);
            for &qk in q.iter().take(dim) {
                let mut c = Vec::with_capacity(2);
                if qk < full {
                    c.push(qk / s);
                }
                if qk % s == 0 && qk > 0 {
                    c.push(qk / s - 1);
                }
                cand.push(c);
            }
            let combos: usize = cand.iter().map(Vec::len).product();
            for idx in 0..combos {
                let mut rem = idx;
                let mut anchor = [0u32; 3];
                for k in 0..dim {
                    anchor[k] = cand[k][rem % cand[k].len()] as u32;
                    rem /= cand[k].len();
                }
                let key = TreeKey::new(level, anchor);
                let Some(&e) = kept.get(&key) else { continue };
                let a = key.lattice_anchor();
                let t: Vec<f64> = (0..dim).map(|k| (q[k] - a[k]) as f64 / s as f64).collect();
                let w: Vec<(u32, f64)> = (0..ncorner)
                    .map(|c| {
                        let wc: f64 = (0..dim).map(|k| if c >> k & 1 == 1 { t[k] } else { 1.0 - t[k] }).product();
                        (element_nodes[e][c], wc)
                    })
                    .filter(|(_, w)| *w != 0.0)
                    .collect();
                masters[n] = Some(w);
                break 'levels;
            }
        }
    }

    let mut dof = vec![None; lattice.len()];
    let mut ndof = 0u32;
    for (n, m) in masters.iter().enumerate() {
        if m.is_none() {
            dof[n] = Some(ndof);
            ndof += 1;
        }
    }

    let mut expansion: Vec<Option<Weights>> = vec![None; lattice.len()];
    for n in 0..lattice.len() {
        resolve(n, &masters, &dof, &mut expansion, 0)?;
    }
    let expansion = expansion.into_iter().map(|e| e.expect("resolved")).collect();

    let coords = lattice
        .iter()
        .map(|q| std::array::from_fn(|k| if k < dim { min[k] + (max[k] - min[k]) * (q[k] as f64 / full as f64) } else { 0.0 }))
        .collect();
    Ok((
        element_nodes,
        NodeTable {
            coords,
            lattice,
            dof,
            expansion,
            ndof: ndof as usize,
        },
    ))
}

fn resolve(
    n: usize,
    masters: &[Option<Vec<(u32, f64)>>],
    dof: &[Option<u32>],
    out: &mut Vec<Option<Weights>>,
    depth: usize,
) -> Result<(), MeshError> {
    if out[n].is_some() {
        return Ok(());
    }
    if depth > 64 {
        return Err(MeshError::HangingCycle(n));
    }
    let w = match (&masters[n], dof[n]) {
        (_, Some(d)) => vec![(d, 1.0)],
        (Some(ms), None) => {
            let mut acc: std::collections::BTreeMap<u32, f64> = Default::default();
            for &(m, wm) in ms {
                resolve(m as usize, masters, dof, out, depth + 1)?;
                for &(d, wd) in out[m as usize].as_ref().expect("just resolved") {
                    *acc.entry(d).or_insert(0.0) += wm * wd;
                }
            }
            acc.into_iter().collect()
        }
        (None, None) => unreachable!("independent nodes have a dof"),
    };
    out[n] = Some(w);
    Ok(())
}
