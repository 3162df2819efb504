use super::{element_stiffness, MaterialModel};
use crate::geometry::TetMesh;
use crate::Result;

/// Symmetric sparse matrix in CSR form (both triangles stored).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &mut Vec<(u32, u32, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(u32, u32)> = None;
        for &(r, c, v) in triplets.iter() {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] as usize == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }

    /// Maximum relative asymmetry, for invariants tests.
    pub fn asymmetry(&self) -> f64 {
        use std::collections::HashMap;
        let mut map: HashMap<(u32, u32), f64> = HashMap::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                map.insert((i as u32, self.col_idx[k]), self.values[k]);
            }
        }
        let scale = self
            .values
            .iter()
            .cloned()
            .fold(0.0f64, |a, b| a.max(b.abs()))
            .max(1e-300);
        let mut worst = 0.0f64;
        for (&(r, c), &v) in &map {
            let vt = map.get(&(c, r)).copied().unwrap_or(0.0);
            worst = worst.max((v - vt).abs() / scale);
        }
        worst
    }
}

/// Assembled global system. `K` in MPa*mm, `f` in N, dof ids are `3*node+c`.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub k: CsrMatrix,
    pub f: Vec<f64>,
    pub constrained_dofs: Vec<u32>,
}

/// Assemble the global stiffness (no loads, no constraints).
pub fn assemble(mesh: &TetMesh, mat: &MaterialModel) -> Result<SparseSystem> {
    let n_dof = 3 * mesh.n_nodes();
    let mut triplets: Vec<(u32, u32, f64)> = Vec::with_capacity(mesh.tets.len() * 144);
    for tet in &mesh.tets {
        let coords = [
            mesh.nodes[tet[0] as usize],
            mesh.nodes[tet[1] as usize],
            mesh.nodes[tet[2] as usize],
            mesh.nodes[tet[3] as usize],
        ];
        let ke = element_stiffness(&coords, mat)?;
        for a in 0..4 {
            for i in 0..3 {
                let gi = 3 * tet[a] + i as u32;
                for b in 0..4 {
                    for j in 0..3 {
                        let gj = 3 * tet[b] + j as u32;
                        let v = ke[3 * a + i][3 * b + j];
                        if v != 0.0 {
                            triplets.push((gi, gj, v));
                        }
                    }
                }
            }
        }
    }
    let k = CsrMatrix::from_triplets(n_dof, &mut triplets);
    Ok(SparseSystem {
        k,
        f: vec![0.0; n_dof],
        constrained_dofs: Vec::new(),
    })
}

/// Apply homogeneous Dirichlet constraints on the given dofs by zeroing the
/// corresponding rows and columns and placing a unit diagonal. Keeps the
/// matrix symmetric; constrained load entries are zeroed too.
pub fn apply_dirichlet_dofs(sys: &mut SparseSystem, dofs: &[u32]) {
    let mut constrained = vec![false; sys.k.n];
    for &d in dofs {
        constrained[d as usize] = true;
    }
    for i in 0..sys.k.n {
        let row_c = constrained[i];
        for k in sys.k.row_ptr[i]..sys.k.row_ptr[i + 1] {
            let j = sys.k.col_idx[k] as usize;
            if row_c || constrained[j] {
                sys.k.values[k] = if i == j && row_c { 1.0 } else { 0.0 };
            }
        }
        if row_c {
            sys.f[i] = 0.0;
        }
    }
    sys.constrained_dofs = dofs.to_vec();
    sys.constrained_dofs.sort_unstable();
    sys.constrained_dofs.dedup();
}

/// Clamp every dof of the given nodes.
pub fn apply_dirichlet(sys: &mut SparseSystem, fixed_nodes: &[u32]) {
    let dofs: Vec<u32> = fixed_nodes
        .iter()
        .flat_map(|&n| [3 * n, 3 * n + 1, 3 * n + 2])
        .collect();
    apply_dirichlet_dofs(sys, &dofs);
}
