//! Fixed-topology tetrahedral template of the parametric I-beam.
//!
//! The cross-section is decomposed into a 5x5 block grid (bottom flange row,
//! web column, top flange row, four chamfer boxes at the web-flange
//! junctions). Because the block-to-physical map is a monotone piecewise
//! linear function per axis, every admissible parameter set produces the same
//! topology with positively-oriented tetrahedra.

mod locate;
mod params;
mod template;

pub use locate::{LocateResult, PointLocator};
pub use params::{BeamParams, LoadDist, LoadType, MeshResolution, ParamRanges};
pub use template::{build_template, section_area, MeshTemplate, TetMesh};

/// FNV-1a fingerprint of a byte slice.
pub fn fnv1a_bytes(bytes: &[u8]) -> u64 {
    template::fnv1a(bytes.iter().copied())
}

/// Signed volume of a tetrahedron given its four corners.
pub fn tet_volume(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
        + u[2] * (v[0] * w[1] - v[1] * w[0]))
        / 6.0
}

/// Unique sorted undirected edges of a tet soup.
pub fn extract_edges(tets: &[[u32; 4]]) -> Vec<[u32; 2]> {
    let mut edges = Vec::with_capacity(tets.len() * 6);
    for t in tets {
        for i in 0..4 {
            for j in (i + 1)..4 {
                let (a, b) = if t[i] < t[j] { (t[i], t[j]) } else { (t[j], t[i]) };
                edges.push([a, b]);
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tet_has_six_edges() {
        let edges = extract_edges(&[[0, 1, 2, 3]]);
        assert_eq!(edges.len(), 6);
        assert_eq!(edges, vec![[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]);
    }

    #[test]
    fn two_tets_sharing_a_face_have_nine_edges() {
        // Shared face {1,2,3}: 6 + 6 - 3 = 9.
        let edges = extract_edges(&[[0, 1, 2, 3], [4, 1, 2, 3]]);
        assert_eq!(edges.len(), 9);
    }

    #[test]
    fn empty_tets_give_empty_edges() {
        assert!(extract_edges(&[]).is_empty());
    }

    #[test]
    fn tet_volume_unit_reference() {
        let v = tet_volume(
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        );
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
    }
}
