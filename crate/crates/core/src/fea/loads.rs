use crate::geometry::{BeamParams, LoadDist, LoadType, TetMesh};

/// Area of a load-face triangle (faces lie in a z = const plane).
fn face_area(mesh: &TetMesh, f: &[u32; 3]) -> f64 {
    let a = mesh.nodes[f[0] as usize];
    let b = mesh.nodes[f[1] as usize];
    let c = mesh.nodes[f[2] as usize];
    let u = [b[0] - a[0], b[1] - a[1]];
    let v = [c[0] - a[0], c[1] - a[1]];
    0.5 * (u[0] * v[1] - u[1] * v[0]).abs()
}

/// Nodal force vector (3N) for the end-face traction described by `p`.
///
/// Bending resultants are exact by construction: the raw area-consistent
/// lumping is rescaled so the summed component equals the requested
/// magnitude. Torsion is a pure couple: the area-weighted mean force is
/// subtracted (which leaves the torque about the area centroid unchanged)
/// and the field is then scaled to the target torque T = P * depth / 2.
pub fn traction_load(mesh: &TetMesh, p: &BeamParams) -> Vec<f64> {
    let n_dof = 3 * mesh.n_nodes();
    let mut f = vec![0.0; n_dof];
    if mesh.load_faces.is_empty() {
        return f;
    }

    // Area-consistent nodal lumping over the loaded face.
    let mut area: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
    for face in &mesh.load_faces {
        let a = face_area(mesh, face) / 3.0;
        for &n in face {
            *area.entry(n).or_insert(0.0) += a;
        }
    }

    let (y_min, y_max) = area.keys().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &n| {
        let y = mesh.nodes[n as usize][1];
        (acc.0.min(y), acc.1.max(y))
    });
    let weight = |y: f64| -> f64 {
        match p.load_dist {
            LoadDist::Uniform => 1.0,
            LoadDist::LinearY => (y - y_min) / (y_max - y_min),
        }
    };

    let total_p = p.force_magnitude;
    match p.load_type {
        LoadType::BendingY | LoadType::BendingX => {
            let dir = if p.load_type == LoadType::BendingY {
                [0.0, -1.0, 0.0]
            } else {
                [-1.0, 0.0, 0.0]
            };
            let denom: f64 = area
                .iter()
                .map(|(&n, &a)| a * weight(mesh.nodes[n as usize][1]))
                .sum();
            let scale = total_p / denom;
            for (&n, &a) in &area {
                let w = weight(mesh.nodes[n as usize][1]);
                for c in 0..3 {
                    f[3 * n as usize + c] += scale * a * w * dir[c];
                }
            }
        }
        LoadType::Torsion => {
            let a_total: f64 = area.values().sum();
            let mut cx = 0.0;
            let mut cy = 0.0;
            for (&n, &a) in &area {
                cx += a * mesh.nodes[n as usize][0];
                cy += a * mesh.nodes[n as usize][1];
            }
            cx /= a_total;
            cy /= a_total;
            // Raw tangential field.
            let mut raw: Vec<(u32, [f64; 2])> = Vec::with_capacity(area.len());
            let mut net = [0.0f64; 2];
            for (&n, &a) in &area {
                let pos = mesh.nodes[n as usize];
                let w = weight(pos[1]);
                let fx = -a * w * (pos[1] - cy);
                let fy = a * w * (pos[0] - cx);
                net[0] += fx;
                net[1] += fy;
                raw.push((n, [fx, fy]));
            }
            // Remove the net force without disturbing the torque about the
            // area centroid, then scale to the target torque.
            let mut torque = 0.0;
            for (n, fv) in raw.iter_mut() {
                let a = area[n];
                fv[0] -= a / a_total * net[0];
                fv[1] -= a / a_total * net[1];
                let pos = mesh.nodes[*n as usize];
                torque += (pos[0] - cx) * fv[1] - (pos[1] - cy) * fv[0];
            }
            let target = total_p * p.depth / 2.0;
            let scale = target / torque;
            for (n, fv) in &raw {
                f[3 * *n as usize] += scale * fv[0];
                f[3 * *n as usize + 1] += scale * fv[1];
            }
        }
    }
    f
}
