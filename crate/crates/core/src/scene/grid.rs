use crate::geometry::Vec3;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Uniform voxel grid over a static point set for neighbor queries.
///
/// Query results are ordered by (distance, index) so they never depend on
/// bucket layout.
#[derive(Debug, Clone)]
pub struct PointGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PointGrid {
    /// `target_per_cell` sets the cell size from the bounding-box volume.
    pub fn new(points: &[Vec3], target_per_cell: usize) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if points.is_empty() {
            lo = Vec3::zeros();
            hi = Vec3::zeros();
        }
        let ext = (hi - lo).map(|v| v.max(1e-9));
        let n = points.len().max(1) as f64;
        let cells_wanted = (n / target_per_cell.max(1) as f64).max(1.0);
        // largest of the volume-, area- and length-based sizes, so flat and
        // linear clouds do not explode the cell count
        let vol = ext.x * ext.y * ext.z;
        let area = (ext.x * ext.y).max(ext.x * ext.z).max(ext.y * ext.z);
        let cell = (vol / cells_wanted)
            .cbrt()
            .max((area / cells_wanted).sqrt())
            .max(ext.max() / cells_wanted)
            .max(1e-6);
        let dims = [
            ((ext.x / cell).floor() as usize + 1),
            ((ext.y / cell).floor() as usize + 1),
            ((ext.z / cell).floor() as usize + 1),
        ];
        let mut grid = PointGrid {
            origin: lo,
            cell,
            dims,
            cell_start: Vec::new(),
            entries: Vec::new(),
        };
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let keys: Vec<usize> = points.iter().map(|p| grid.key(&grid.coord(p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0usize; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i;
            fill[k] += 1;
        }
        grid.cell_start = counts;
        grid.entries = entries;
        grid
    }

    fn coord(&self, p: &Vec3) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let v = ((p[a] - self.origin[a]) / self.cell).floor();
            c[a] = if v <= 0.0 {
                0
            } else {
                (v as usize).min(self.dims[a] - 1)
            };
        }
        c
    }

    fn signed_coord(&self, p: &Vec3) -> [i64; 3] {
        let mut c = [0i64; 3];
        for a in 0..3 {
            c[a] = ((p[a] - self.origin[a]) / self.cell).floor() as i64;
        }
        c
    }

    fn key(&self, c: &[usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_points(&self, c: [i64; 3]) -> &[usize] {
        for a in 0..3 {
            if c[a] < 0 || c[a] as usize >= self.dims[a] {
                return &[];
            }
        }
        let k = self.key(&[c[0] as usize, c[1] as usize, c[2] as usize]);
        &self.entries[self.cell_start[k]..self.cell_start[k + 1]]
    }

    /// The `k` nearest points to `q` as `(index, squared distance)`, closest first.
    pub fn knn(&self, points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(points.len());
        if k == 0 {
            return Vec::new();
        }
        let center = self.signed_coord(q);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let max_ring = self.dims.iter().copied().max().unwrap_or(1) as i64
            + center.iter().map(|c| c.abs()).max().unwrap_or(0);
        let mut ring = 0i64;
        loop {
            self.visit_ring(center, ring, |idx| {
                let d = (points[idx] - q).norm_squared();
                if heap.len() < k {
                    heap.push(Candidate(d, idx));
                } else if let Some(top) = heap.peek() {
                    if Candidate(d, idx) < *top {
                        heap.pop();
                        heap.push(Candidate(d, idx));
                    }
                }
            });
            if heap.len() == k {
                let worst = heap.peek().map(|c| c.0).unwrap_or(0.0);
                // every unvisited point is at least `ring * cell` away
                let reach = ring as f64 * self.cell;
                if reach * reach >= worst {
                    break;
                }
            }
            if ring > max_ring {
                break;
            }
            ring += 1;
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.1, c.0)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn visit_ring(&self, c: [i64; 3], ring: i64, mut f: impl FnMut(usize)) {
        for dz in -ring..=ring {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    for &i in self.cell_points([c[0] + dx, c[1] + dy, c[2] + dz]) {
                        f(i);
                    }
                }
            }
        }
    }

    /// Indices of all points within `radius` of `q`, ascending.
    pub fn within(&self, points: &[Vec3], q: &Vec3, radius: f64) -> Vec<usize> {
        let lo = self.signed_coord(&(q - Vec3::repeat(radius)));
        let hi = self.signed_coord(&(q + Vec3::repeat(radius)));
        let r2 = radius * radius;
        let mut out = Vec::new();
        for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                    for &i in self.cell_points([x, y, z]) {
                        if (points[i] - q).norm_squared() <= r2 {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Whether any point lies within `radius` of `q`.
    pub fn any_within(&self, points: &[Vec3], q: &Vec3, radius: f64) -> bool {
        let lo = self.signed_coord(&(q - Vec3::repeat(radius)));
        let hi = self.signed_coord(&(q + Vec3::repeat(radius)));
        let r2 = radius * radius;
        for z in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
            for y in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                for x in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                    if self
                        .cell_points([x, y, z])
                        .iter()
                        .any(|&i| (points[i] - q).norm_squared() <= r2)
                    {
                        return true;
                    }
                }
            }
        }
        false
    }
}
