use std::collections::BTreeMap;

use super::{extract_edges, tet_volume, BeamParams, MeshResolution};
use crate::{Error, Result};

/// A 2D triangle of the cross-section, indices into the 2D node table.
type Tri2 = [u32; 3];

/// Parameter-independent mesh topology plus the block-grid coordinates needed
/// to place nodes for any admissible parameter set.
///
/// Node ids are `layer * n2d + node2d` for layers `0..=n_len`, so the clamped
/// face is always the first `n2d` ids.
#[derive(Debug, Clone)]
pub struct MeshTemplate {
    pub res: MeshResolution,
    /// Fine-grid coordinates (kx, ky) of each 2D node.
    grid2d: Vec<(u32, u32)>,
    pub tets: Vec<[u32; 4]>,
    pub edges: Vec<[u32; 2]>,
    pub fixed_nodes: Vec<u32>,
    pub load_faces: Vec<[u32; 3]>,
    pub template_hash: u64,
}

/// An instantiated mesh: template topology with physical coordinates.
#[derive(Debug, Clone)]
pub struct TetMesh {
    pub nodes: Vec<[f64; 3]>,
    pub tets: Vec<[u32; 4]>,
    pub edges: Vec<[u32; 2]>,
    pub fixed_nodes: Vec<u32>,
    pub load_faces: Vec<[u32; 3]>,
    pub template_hash: u64,
}

impl TetMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tets[t];
        tet_volume(
            self.nodes[a as usize],
            self.nodes[b as usize],
            self.nodes[c as usize],
            self.nodes[d as usize],
        )
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for n in &self.nodes {
            for k in 0..3 {
                lo[k] = lo[k].min(n[k]);
                hi[k] = hi[k].max(n[k]);
            }
        }
        (lo, hi)
    }
}

/// FNV-1a over a byte stream; good enough as a topology fingerprint.
pub(crate) fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-axis block subdivision counts derived from the resolution level.
///
/// All five blocks per axis share the level; chamfer boxes must share one
/// count in both axes so their diagonal cells line up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockSubdivision {
    /// X blocks: outer flange, chamfer, web, chamfer, outer flange.
    pub sx: [usize; 5],
    /// Y blocks: flange, chamfer, web height, chamfer, flange.
    pub sy: [usize; 5],
}

impl BlockSubdivision {
    pub fn from_level(n: usize) -> Self {
        BlockSubdivision {
            sx: [n; 5],
            sy: [n; 5],
        }
    }

    fn cum(s: &[usize; 5]) -> [usize; 6] {
        let mut c = [0usize; 6];
        for i in 0..5 {
            c[i + 1] = c[i] + s[i];
        }
        c
    }

    pub fn cum_x(&self) -> [usize; 6] {
        Self::cum(&self.sx)
    }

    pub fn cum_y(&self) -> [usize; 6] {
        Self::cum(&self.sy)
    }
}

fn block_of(k: usize, cum: &[usize; 6]) -> usize {
    (0..5).find(|&b| k < cum[b + 1]).unwrap_or(4)
}

/// Material test for a fine-grid subcell (p, q) of the cross-section.
enum Cell {
    Empty,
    Quad,
    /// Triangle given by three fine-grid corners of the subcell, CCW.
    Tri([(u32, u32); 3]),
}

fn classify_cell(p: usize, q: usize, sub: &BlockSubdivision) -> Cell {
    let (cx, cy) = (sub.cum_x(), sub.cum_y());
    let (bi, bj) = (block_of(p, &cx), block_of(q, &cy));
    // Chamfer boxes are n x n in fine cells by construction.
    let n = sub.sx[1];
    let (px, qy) = (p as u32, q as u32);
    match (bi, bj) {
        // Flange rows: full width.
        (_, 0) | (_, 4) => Cell::Quad,
        // Web column.
        (2, 1..=3) => Cell::Quad,
        // Lower-left chamfer: material where local x >= local y.
        (1, 1) => {
            let (lp, lq) = (p - cx[1], q - cy[1]);
            if lp >= lq + 1 {
                Cell::Quad
            } else if lp == lq {
                Cell::Tri([(px, qy), (px + 1, qy), (px + 1, qy + 1)])
            } else {
                Cell::Empty
            }
        }
        // Lower-right chamfer: material where lx + ly <= n.
        (3, 1) => {
            let (lp, lq) = (p - cx[3], q - cy[1]);
            if lp + lq + 2 <= n {
                Cell::Quad
            } else if lp + lq + 1 == n {
                Cell::Tri([(px, qy), (px + 1, qy), (px, qy + 1)])
            } else {
                Cell::Empty
            }
        }
        // Upper-left chamfer: material where lx + ly >= n.
        (1, 3) => {
            let (lp, lq) = (p - cx[1], q - cy[3]);
            if lp + lq >= n {
                Cell::Quad
            } else if lp + lq + 1 == n {
                Cell::Tri([(px + 1, qy), (px + 1, qy + 1), (px, qy + 1)])
            } else {
                Cell::Empty
            }
        }
        // Upper-right chamfer: material where local y >= local x.
        (3, 3) => {
            let (lp, lq) = (p - cx[3], q - cy[3]);
            if lq >= lp + 1 {
                Cell::Quad
            } else if lp == lq {
                Cell::Tri([(px, qy), (px + 1, qy + 1), (px, qy + 1)])
            } else {
                Cell::Empty
            }
        }
        _ => Cell::Empty,
    }
}

/// Build the parameter-independent template.
pub fn build_template(res: MeshResolution) -> MeshTemplate {
    let sub = BlockSubdivision::from_level(res.n_cross);
    let fine_x = sub.cum_x()[5];
    let fine_y = sub.cum_y()[5];

    // Enumerate 2D triangles in fine-grid coordinates, then intern nodes.
    let mut node_ids: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut grid_tris: Vec<[(u32, u32); 3]> = Vec::new();
    for q in 0..fine_y {
        for p in 0..fine_x {
            match classify_cell(p, q, &sub) {
                Cell::Empty => {}
                Cell::Quad => {
                    let (px, qy) = (p as u32, q as u32);
                    let (a, b, c, d) =
                        ((px, qy), (px + 1, qy), (px + 1, qy + 1), (px, qy + 1));
                    // Split along the main diagonal a-c; CCW triangles.
                    grid_tris.push([a, b, c]);
                    grid_tris.push([a, c, d]);
                }
                Cell::Tri(t) => grid_tris.push(t),
            }
        }
    }
    for t in &grid_tris {
        for &corner in t {
            let next = node_ids.len() as u32;
            node_ids.entry(corner).or_insert(next);
        }
    }
    let n2d = node_ids.len();
    let mut grid2d = vec![(0u32, 0u32); n2d];
    for (&coord, &id) in &node_ids {
        grid2d[id as usize] = coord;
    }
    let tris: Vec<Tri2> = grid_tris
        .iter()
        .map(|t| [node_ids[&t[0]], node_ids[&t[1]], node_ids[&t[2]]])
        .collect();

    // Extrude each triangle into n_len prisms and split each prism into
    // three tets with quad-face diagonals through the smallest global node
    // id; shared faces then agree between neighbouring prisms.
    let n2d_u = n2d as u32;
    let mut tets: Vec<[u32; 4]> = Vec::with_capacity(tris.len() * res.n_len * 3);
    for layer in 0..res.n_len as u32 {
        let lo = layer * n2d_u;
        let hi = (layer + 1) * n2d_u;
        for t in &tris {
            // Rotate so the smallest bottom id is first; bottom ids are
            // always smaller than top ids.
            let mut v = [t[0], t[1], t[2]];
            let min_pos = (0..3).min_by_key(|&i| v[i]).unwrap();
            v.rotate_left(min_pos);
            let [a, b, c] = v;
            let (a0, b0, c0) = (lo + a, lo + b, lo + c);
            let (a1, b1, c1) = (hi + a, hi + b, hi + c);
            if b0 < c0 {
                // Diagonals a0-a1+?, face (b,c): diagonal through b0.
                tets.push([a0, b0, c0, c1]);
                tets.push([a0, b0, c1, b1]);
                tets.push([a0, b1, c1, a1]);
            } else {
                tets.push([a0, b0, c0, b1]);
                tets.push([a0, b1, c0, c1]);
                tets.push([a0, b1, c1, a1]);
            }
        }
    }

    // Orient every tet positively in grid space; the per-axis monotone
    // physical map preserves the sign for all admissible parameters.
    let ref_coord = |id: u32| -> [f64; 3] {
        let (layer, n2) = (id / n2d_u, id % n2d_u);
        let (kx, ky) = grid2d[n2 as usize];
        [kx as f64, ky as f64, layer as f64]
    };
    for t in &mut tets {
        let v = tet_volume(ref_coord(t[0]), ref_coord(t[1]), ref_coord(t[2]), ref_coord(t[3]));
        assert!(v != 0.0, "degenerate template tet");
        if v < 0.0 {
            t.swap(2, 3);
        }
    }

    let edges = extract_edges(&tets);
    let fixed_nodes: Vec<u32> = (0..n2d_u).collect();
    let top = res.n_len as u32 * n2d_u;
    let load_faces: Vec<[u32; 3]> = tris
        .iter()
        .map(|t| [top + t[0], top + t[1], top + t[2]])
        .collect();

    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend((n2d as u64).to_le_bytes());
    bytes.extend((res.n_len as u64).to_le_bytes());
    for t in &tets {
        for &v in t {
            bytes.extend(v.to_le_bytes());
        }
    }
    let template_hash = fnv1a(bytes);

    MeshTemplate {
        res,
        grid2d,
        tets,
        edges,
        fixed_nodes,
        load_faces,
        template_hash,
    }
}

/// Monotone piecewise-linear map from fine-grid index to physical coordinate.
fn pw_linear(k: u32, cum: &[usize; 6], breaks: &[f64; 6]) -> f64 {
    let k = (k as usize).min(cum[5]);
    let block = block_of(k.min(cum[5] - 1), cum);
    let frac = (k - cum[block]) as f64 / (cum[block + 1] - cum[block]) as f64;
    breaks[block] + frac * (breaks[block + 1] - breaks[block])
}

impl MeshTemplate {
    pub fn n_nodes(&self) -> usize {
        self.grid2d.len() * (self.res.n_len + 1)
    }

    pub fn n_nodes_2d(&self) -> usize {
        self.grid2d.len()
    }

    /// Physical node coordinates for the given parameters.
    pub fn node_positions(&self, p: &BeamParams) -> Vec<[f64; 3]> {
        let sub = BlockSubdivision::from_level(self.res.n_cross);
        let (cx, cy) = (sub.cum_x(), sub.cum_y());
        let r = p.fillet_radius;
        let (b, d, tf) = (p.flange_width, p.depth, p.flange_thickness);
        let xw0 = (b - p.web_thickness) / 2.0;
        let xw1 = (b + p.web_thickness) / 2.0;
        let xb = [0.0, xw0 - r, xw0, xw1, xw1 + r, b];
        let yb = [0.0, tf, tf + r, d - tf - r, d - tf, d];

        let xy: Vec<[f64; 2]> = self
            .grid2d
            .iter()
            .map(|&(kx, ky)| [pw_linear(kx, &cx, &xb), pw_linear(ky, &cy, &yb)])
            .collect();

        let mut nodes = Vec::with_capacity(self.n_nodes());
        for layer in 0..=self.res.n_len {
            let z = p.length * layer as f64 / self.res.n_len as f64;
            for c in &xy {
                nodes.push([c[0], c[1], z]);
            }
        }
        nodes
    }

    /// Instantiate the mesh for `p`, checking element orientation.
    pub fn instantiate(&self, p: &BeamParams) -> Result<TetMesh> {
        p.validate()?;
        let nodes = self.node_positions(p);
        let mesh = TetMesh {
            nodes,
            tets: self.tets.clone(),
            edges: self.edges.clone(),
            fixed_nodes: self.fixed_nodes.clone(),
            load_faces: self.load_faces.clone(),
            template_hash: self.template_hash,
        };
        for t in 0..mesh.tets.len() {
            let v = mesh.tet_volume(t);
            if v <= 0.0 {
                return Err(Error::InvertedElement { tet: t, volume: v });
            }
        }
        Ok(mesh)
    }
}

/// Analytic cross-section area of the chamfered I profile.
pub fn section_area(p: &BeamParams) -> f64 {
    2.0 * p.flange_width * p.flange_thickness
        + (p.depth - 2.0 * p.flange_thickness) * p.web_thickness
        + 2.0 * p.fillet_radius * p.fillet_radius
}
