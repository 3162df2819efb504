use super::TetMesh;

/// Result of a point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocateResult {
    Inside { tet: usize, weights: [f64; 4] },
    Outside,
}

const BARY_TOL: f64 = 1e-12;

/// Uniform spatial hash over tet bounding boxes with a brute-force check per
/// candidate. Desk-scale meshes are small, so cell counts stay modest.
pub struct PointLocator<'a> {
    mesh: &'a TetMesh,
    lo: [f64; 3],
    inv_cell: [f64; 3],
    dims: [usize; 3],
    cells: Vec<Vec<u32>>,
    /// Inverse of the edge matrix per tet, row-major 3x3, for barycentric
    /// evaluation without re-factorizing.
    inv_edge: Vec<[f64; 9]>,
}

fn invert3(m: [f64; 9]) -> Option<[f64; 9]> {
    let det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6]);
    if det == 0.0 {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * inv_det,
        (m[2] * m[7] - m[1] * m[8]) * inv_det,
        (m[1] * m[5] - m[2] * m[4]) * inv_det,
        (m[5] * m[6] - m[3] * m[8]) * inv_det,
        (m[0] * m[8] - m[2] * m[6]) * inv_det,
        (m[2] * m[3] - m[0] * m[5]) * inv_det,
        (m[3] * m[7] - m[4] * m[6]) * inv_det,
        (m[1] * m[6] - m[0] * m[7]) * inv_det,
        (m[0] * m[4] - m[1] * m[3]) * inv_det,
    ])
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a TetMesh) -> Self {
        let (lo, hi) = mesh.bbox();
        // Aim for roughly one tet per cell.
        let n_cells = (mesh.tets.len() as f64).cbrt().ceil().max(1.0) as usize;
        let dims = [n_cells, n_cells, n_cells];
        let mut inv_cell = [0.0; 3];
        for k in 0..3 {
            let span = (hi[k] - lo[k]).max(1e-12);
            inv_cell[k] = dims[k] as f64 / span;
        }
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let clamp_idx = |v: f64, k: usize| -> usize {
            let i = ((v - lo[k]) * inv_cell[k]).floor() as isize;
            i.clamp(0, dims[k] as isize - 1) as usize
        };
        let mut inv_edge = Vec::with_capacity(mesh.tets.len());
        for (t, tet) in mesh.tets.iter().enumerate() {
            let p: Vec<[f64; 3]> = tet.iter().map(|&i| mesh.nodes[i as usize]).collect();
            let mut tlo = [f64::INFINITY; 3];
            let mut thi = [f64::NEG_INFINITY; 3];
            for v in &p {
                for k in 0..3 {
                    tlo[k] = tlo[k].min(v[k]);
                    thi[k] = thi[k].max(v[k]);
                }
            }
            let (i0, i1) = (
                [clamp_idx(tlo[0], 0), clamp_idx(tlo[1], 1), clamp_idx(tlo[2], 2)],
                [clamp_idx(thi[0], 0), clamp_idx(thi[1], 1), clamp_idx(thi[2], 2)],
            );
            for ix in i0[0]..=i1[0] {
                for iy in i0[1]..=i1[1] {
                    for iz in i0[2]..=i1[2] {
                        cells[(ix * dims[1] + iy) * dims[2] + iz].push(t as u32);
                    }
                }
            }
            let m = [
                p[1][0] - p[0][0],
                p[2][0] - p[0][0],
                p[3][0] - p[0][0],
                p[1][1] - p[0][1],
                p[2][1] - p[0][1],
                p[3][1] - p[0][1],
                p[1][2] - p[0][2],
                p[2][2] - p[0][2],
                p[3][2] - p[0][2],
            ];
            inv_edge.push(invert3(m).expect("positive-volume tet is invertible"));
        }
        PointLocator {
            mesh,
            lo,
            inv_cell,
            dims,
            cells,
            inv_edge,
        }
    }

    /// Barycentric weights of `q` with respect to tet `t` (may be negative).
    pub fn barycentric(&self, t: usize, q: [f64; 3]) -> [f64; 4] {
        let p0 = self.mesh.nodes[self.mesh.tets[t][0] as usize];
        let d = [q[0] - p0[0], q[1] - p0[1], q[2] - p0[2]];
        let m = &self.inv_edge[t];
        let w1 = m[0] * d[0] + m[1] * d[1] + m[2] * d[2];
        let w2 = m[3] * d[0] + m[4] * d[1] + m[5] * d[2];
        let w3 = m[6] * d[0] + m[7] * d[1] + m[8] * d[2];
        [1.0 - w1 - w2 - w3, w1, w2, w3]
    }

    pub fn locate(&self, q: [f64; 3]) -> LocateResult {
        if !q.iter().all(|v| v.is_finite()) {
            return LocateResult::Outside;
        }
        let mut idx = [0usize; 3];
        let mut outside_grid = false;
        for k in 0..3 {
            let i = ((q[k] - self.lo[k]) * self.inv_cell[k]).floor() as isize;
            if i < -1 || i > self.dims[k] as isize {
                outside_grid = true;
                break;
            }
            idx[k] = i.clamp(0, self.dims[k] as isize - 1) as usize;
        }
        if !outside_grid {
            let cell = &self.cells[(idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]];
            if let Some(r) = self.best_in(cell.iter().map(|&t| t as usize), q) {
                return r;
            }
        }
        // Brute-force fallback covers points on cell boundaries or degenerate
        // hash placement.
        self.best_in(0..self.mesh.tets.len(), q)
            .unwrap_or(LocateResult::Outside)
    }

    fn best_in(
        &self,
        tets: impl Iterator<Item = usize>,
        q: [f64; 3],
    ) -> Option<LocateResult> {
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for t in tets {
            let w = self.barycentric(t, q);
            let min_w = w.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_w >= -BARY_TOL {
                match &best {
                    Some((_, _, bw)) if *bw >= min_w => {}
                    _ => best = Some((t, w, min_w)),
                }
            }
        }
        best.map(|(tet, weights, _)| LocateResult::Inside { tet, weights })
    }
}
