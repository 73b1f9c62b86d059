//! Axis-aligned bounding-box hierarchy over indexed primitives.

use super::vec3::V3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub lo: V3,
    pub hi: V3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn of_points(points: &[V3]) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(*p);
        }
        b
    }

    pub fn grow(&mut self, p: V3) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    pub fn merge(&mut self, o: &Aabb) {
        self.grow(o.lo);
        self.grow(o.hi);
    }

    pub fn center(&self) -> V3 {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        ]
    }

    pub fn diagonal(&self) -> f64 {
        super::vec3::norm(super::vec3::sub(self.hi, self.lo))
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn dist2(&self, p: V3) -> f64 {
        (0..3)
            .map(|k| {
                let d = (self.lo[k] - p[k]).max(0.0).max(p[k] - self.hi[k]);
                d * d
            })
            .sum()
    }

    /// Slab test for the ray `origin + t*dir`, `t >= 0`.
    pub fn hit_by_ray(&self, origin: V3, inv_dir: V3) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if inv_dir[k].is_infinite() {
                // Ray parallel to this slab.
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return false;
                }
                continue;
            }
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        t0 <= t1
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `first..first+count` into `order`. Interior: `count == 0`,
    /// children at `first` and `first + 1`.
    first: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1),
            order: (0..boxes.len() as u32).collect(),
        };
        let centers: Vec<V3> = boxes.iter().map(Aabb::center).collect();
        bvh.nodes.push(Node {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        bvh.split(0, 0, boxes.len(), boxes, &centers);
        bvh
    }

    fn split(&mut self, node: usize, start: usize, end: usize, boxes: &[Aabb], centers: &[V3]) {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            bounds.merge(&boxes[i as usize]);
            cbounds.grow(centers[i as usize]);
        }
        self.nodes[node].bounds = bounds;
        let extent = super::vec3::sub(cbounds.hi, cbounds.lo);
        let axis = (0..3).fold(0, |best, k| if extent[k] > extent[best] { k } else { best });
        if end - start <= LEAF_SIZE || extent[axis] <= 0.0 {
            self.nodes[node].first = start as u32;
            self.nodes[node].count = (end - start) as u32;
            return;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a as usize][axis].total_cmp(&centers[b as usize][axis])
        });
        let left = self.nodes.len();
        for _ in 0..2 {
            self.nodes.push(Node {
                bounds: Aabb::empty(),
                first: 0,
                count: 0,
            });
        }
        self.nodes[node].first = left as u32;
        self.split(left, start, mid, boxes, centers);
        self.split(left + 1, mid, end, boxes, centers);
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Primitive minimizing `prim_dist2(i)`, searched best-first with box
    /// pruning. Returns `(index, squared distance)`.
    pub fn nearest(&self, p: V3, prim_dist2: impl Fn(u32) -> f64) -> Option<(u32, f64)> {
        if self.order.is_empty() {
            return None;
        }
        let mut best: Option<(u32, f64)> = None;
        let mut stack = vec![(0usize, self.nodes[0].bounds.dist2(p))];
        while let Some((ni, bd)) = stack.pop() {
            if best.is_some_and(|(_, d)| bd > d) {
                continue;
            }
            let n = &self.nodes[ni];
            if n.count > 0 {
                for &i in &self.order[n.first as usize..(n.first + n.count) as usize] {
                    let d = prim_dist2(i);
                    if best.map_or(true, |(bi, bd)| d < bd || (d == bd && i < bi)) {
                        best = Some((i, d));
                    }
                }
            } else {
                let a = n.first as usize;
                let da = self.nodes[a].bounds.dist2(p);
                let db = self.nodes[a + 1].bounds.dist2(p);
                // Push the farther child first so the nearer one pops next.
                if da <= db {
                    stack.push((a + 1, db));
                    stack.push((a, da));
                } else {
                    stack.push((a, da));
                    stack.push((a + 1, db));
                }
            }
        }
        best
    }

    /// Call `f` for every primitive whose box the ray may hit.
    pub fn visit_ray(&self, origin: V3, dir: V3, mut f: impl FnMut(u32)) {
        if self.order.is_empty() {
            return;
        }
        let inv = [1.0 / dir[0], 1.0 / dir[1], 1.0 / dir[2]];
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let n = &self.nodes[ni];
            if !n.bounds.hit_by_ray(origin, inv) {
                continue;
            }
            if n.count > 0 {
                for &i in &self.order[n.first as usize..(n.first + n.count) as usize] {
                    f(i);
                }
            } else {
                stack.push(n.first as usize);
                stack.push(n.first as usize + 1);
            }
        }
    }
}
