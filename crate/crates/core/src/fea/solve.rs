use super::{apply_dirichlet, assemble, traction_load, MaterialModel, SparseSystem};
use crate::geometry::{BeamParams, MeshTemplate, TetMesh};
use crate::{Error, Result};

/// Relative residual target for the conjugate gradient solver.
pub const CG_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Ground-truth displacement field for one parameter sample.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub params: BeamParams,
    /// N x 3 nodal displacements, mm.
    pub displacements: Vec<[f64; 3]>,
    pub stats: SolverStats,
}

/// Jacobi-preconditioned conjugate gradient on the constrained system.
pub fn solve(sys: &SparseSystem) -> Result<Vec<f64>> {
    let n = sys.k.n;
    let f_norm = sys.f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if f_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let diag = sys.k.diagonal();
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = sys.f.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    let max_iters = 20 * n;

    for it in 0..max_iters {
        sys.k.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                iters: it,
                residual: f64::NAN,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= CG_RTOL * f_norm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::NoConvergence {
        iters: max_iters,
        residual: r_norm / f_norm,
    })
}

/// Full pipeline for one sample: instantiate, assemble, load, constrain,
/// solve.
pub fn solve_case(template: &MeshTemplate, p: &BeamParams) -> Result<SimulationResult> {
    let mesh = template.instantiate(p)?;
    solve_on_mesh(&mesh, p)
}

pub fn solve_on_mesh(mesh: &TetMesh, p: &BeamParams) -> Result<SimulationResult> {
    let mat = MaterialModel::new(p.youngs_modulus, p.poissons_ratio)?;
    let mut sys = assemble(mesh, &mat)?;
    sys.f = traction_load(mesh, p);
    apply_dirichlet(&mut sys, &mesh.fixed_nodes);
    let u = solve(&sys)?;
    let stats = residual_stats(&sys, &u);
    let displacements = u
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(SimulationResult {
        params: *p,
        displacements,
        stats,
    })
}

fn residual_stats(sys: &SparseSystem, u: &[f64]) -> SolverStats {
    let mut ku = vec![0.0; sys.k.n];
    sys.k.matvec(u, &mut ku);
    let r: f64 = ku
        .iter()
        .zip(&sys.f)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let fnorm = sys.f.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    SolverStats {
        iterations: 0,
        residual: r / fnorm,
    }
}

/// Timoshenko cantilever tip-deflection oracle for strong-axis bending:
/// delta = P L^3 / (3 E I) + P L / (G A_web).
///
/// A_web uses the structural shear-area convention for I sections,
/// A_web = depth * web_thickness (full depth, as in AISC); at these stubby
/// aspect ratios the shear term is half the deflection, so the convention
/// matters and is pinned here.
pub fn timoshenko_tip_deflection(p: &BeamParams) -> f64 {
    let (b, d, tw, tf) = (
        p.flange_width,
        p.depth,
        p.web_thickness,
        p.flange_thickness,
    );
    let i_strong = (b * d.powi(3) - (b - tw) * (d - 2.0 * tf).powi(3)) / 12.0;
    let g = p.youngs_modulus / (2.0 * (1.0 + p.poissons_ratio));
    let a_web = d * tw;
    let pl = p.force_magnitude;
    pl * p.length.powi(3) / (3.0 * p.youngs_modulus * i_strong) + pl * p.length / (g * a_web)
}

/// Mean displacement over the load-face nodes; the tip deflection readout.
pub fn mean_tip_displacement(mesh: &TetMesh, res: &SimulationResult) -> [f64; 3] {
    let mut nodes: Vec<u32> = mesh.load_faces.iter().flatten().copied().collect();
    nodes.sort_unstable();
    nodes.dedup();
    let mut mean = [0.0; 3];
    for &n in &nodes {
        for c in 0..3 {
            mean[c] += res.displacements[n as usize][c];
        }
    }
    for c in mean.iter_mut() {
        *c /= nodes.len() as f64;
    }
    mean
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fea::CsrMatrix;
    use crate::geometry::{build_template, LoadDist, LoadType, MeshResolution, ParamRanges};

    #[test]
    fn diagonal_system_solves_directly() {
        let mut triplets = vec![(0u32, 0u32, 2.0), (1, 1, 4.0), (2, 2, 8.0)];
        let k = CsrMatrix::from_triplets(3, &mut triplets);
        let sys = SparseSystem {
            k,
            f: vec![2.0, 2.0, 2.0],
            constrained_dofs: vec![],
        };
        let u = solve(&sys).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-10);
        assert!((u[1] - 0.5).abs() < 1e-10);
        assert!((u[2] - 0.25).abs() < 1e-10);
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let mut triplets = vec![(0u32, 0u32, 2.0), (1, 1, 4.0)];
        let k = CsrMatrix::from_triplets(2, &mut triplets);
        let sys = SparseSystem {
            k,
            f: vec![0.0, 0.0],
            constrained_dofs: vec![],
        };
        assert_eq!(solve(&sys).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn matches_dense_direct_solve_on_small_system() {
        // Small SPD system; dense Gaussian elimination as the oracle.
        let mut triplets = Vec::new();
        let n = 8;
        let mut dense = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    4.0 + i as f64
                } else if (i as i64 - j as i64).abs() == 1 {
                    -1.0
                } else {
                    0.0
                };
                if v != 0.0 {
                    triplets.push((i as u32, j as u32, v));
                    dense[i][j] = v;
                }
            }
        }
        let k = CsrMatrix::from_triplets(n, &mut triplets);
        let f: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
        let sys = SparseSystem {
            k,
            f: f.clone(),
            constrained_dofs: vec![],
        };
        let u = solve(&sys).unwrap();
        // Dense oracle.
        let mut a = dense;
        let mut b = f;
        for col in 0..n {
            let piv = a[col][col];
            for row in (col + 1)..n {
                let fac = a[row][col] / piv;
                for c2 in col..n {
                    a[row][c2] -= fac * a[col][c2];
                }
                b[row] -= fac * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = b[row];
            for c2 in (row + 1)..n {
                s -= a[row][c2] * x[c2];
            }
            x[row] = s / a[row][row];
        }
        for i in 0..n {
            assert!((u[i] - x[i]).abs() < 1e-9, "{} vs {}", u[i], x[i]);
        }
    }

    fn desk_params(scale: f64) -> crate::geometry::BeamParams {
        let mut p = ParamRanges::default().midpoint(LoadType::BendingY, LoadDist::Uniform);
        p.force_magnitude = 225e3 * scale;
        p
    }

    #[test]
    fn cantilever_deflects_downwards_and_fixed_nodes_zero() {
        let template = build_template(MeshResolution::new(2, 1).unwrap());
        let p = desk_params(1.0);
        let res = solve_case(&template, &p).unwrap();
        let mesh = template.instantiate(&p).unwrap();
        for &n in &mesh.fixed_nodes {
            assert_eq!(res.displacements[n as usize], [0.0, 0.0, 0.0]);
        }
        let tip = mean_tip_displacement(&mesh, &res);
        assert!(tip[1] < 0.0, "tip {tip:?}");
        assert!(res.stats.residual <= 1e-9);
    }

    #[test]
    fn linearity_in_load() {
        let template = build_template(MeshResolution::new(2, 1).unwrap());
        let r1 = solve_case(&template, &desk_params(1.0)).unwrap();
        let r2 = solve_case(&template, &desk_params(2.0)).unwrap();
        let norm1: f64 = r1
            .displacements
            .iter()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let mut err = 0.0f64;
        for (a, b) in r1.displacements.iter().zip(&r2.displacements) {
            for c in 0..3 {
                err += (2.0 * a[c] - b[c]) * (2.0 * a[c] - b[c]);
            }
        }
        assert!(err.sqrt() < 1e-8 * norm1, "err {} norm {}", err.sqrt(), norm1);
    }

    #[test]
    fn superposition_of_bending_loads() {
        let template = build_template(MeshResolution::new(2, 1).unwrap());
        let mut py = desk_params(1.0);
        py.force_magnitude = 50e3;
        let mut px = py;
        px.load_type = LoadType::BendingX;
        let mesh = template.instantiate(&py).unwrap();
        let ry = solve_on_mesh(&mesh, &py).unwrap();
        let rx = solve_on_mesh(&mesh, &px).unwrap();
        // Joint load: sum of tractions.
        let mat = MaterialModel::new(py.youngs_modulus, py.poissons_ratio).unwrap();
        let mut sys = assemble(&mesh, &mat).unwrap();
        let fy = traction_load(&mesh, &py);
        let fx = traction_load(&mesh, &px);
        sys.f = fy.iter().zip(&fx).map(|(a, b)| a + b).collect();
        apply_dirichlet(&mut sys, &mesh.fixed_nodes);
        let u = solve(&sys).unwrap();
        let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut err = 0.0;
        for i in 0..u.len() {
            let expect = ry.displacements[i / 3][i % 3] + rx.displacements[i / 3][i % 3];
            err += (u[i] - expect) * (u[i] - expect);
        }
        assert!(err.sqrt() < 1e-7 * norm);
    }

    #[test]
    fn energy_consistency() {
        let template = build_template(MeshResolution::new(2, 1).unwrap());
        let p = desk_params(1.0);
        let mesh = template.instantiate(&p).unwrap();
        let mat = MaterialModel::new(p.youngs_modulus, p.poissons_ratio).unwrap();
        let mut sys = assemble(&mesh, &mat).unwrap();
        sys.f = traction_load(&mesh, &p);
        apply_dirichlet(&mut sys, &mesh.fixed_nodes);
        let u = solve(&sys).unwrap();
        let mut ku = vec![0.0; sys.k.n];
        sys.k.matvec(&u, &mut ku);
        let uku: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        let uf: f64 = u.iter().zip(&sys.f).map(|(a, b)| a * b).sum();
        assert!(((uku - uf) / uf).abs() < 1e-8, "{uku} vs {uf}");
    }

    #[test]
    fn patch_test_uniaxial_traction_on_unit_cube() {
        // Constant-strain elements reproduce homogeneous states exactly:
        // uniform sigma_zz on the top face with symmetry constraints gives
        // u = (-nu s x, -nu s y, s z)/E with s = sigma/E factored in.
        use crate::geometry::{extract_edges, tet_volume, TetMesh};
        let nodes: Vec<[f64; 3]> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        // Kuhn split: six tets sharing the 0-7 diagonal.
        let mut tets = vec![
            [0u32, 1, 3, 7],
            [0, 1, 5, 7],
            [0, 2, 3, 7],
            [0, 2, 6, 7],
            [0, 4, 5, 7],
            [0, 4, 6, 7],
        ];
        for t in &mut tets {
            let v = tet_volume(
                nodes[t[0] as usize],
                nodes[t[1] as usize],
                nodes[t[2] as usize],
                nodes[t[3] as usize],
            );
            if v < 0.0 {
                t.swap(2, 3);
            }
        }
        let edges = extract_edges(&tets);
        let mesh = TetMesh {
            nodes: nodes.clone(),
            tets,
            edges,
            fixed_nodes: vec![],
            load_faces: vec![],
            template_hash: 0,
        };
        let (e, nu, sigma) = (200_000.0, 0.3, 10.0);
        let mat = MaterialModel::new(e, nu).unwrap();
        let mut sys = assemble(&mesh, &mat).unwrap();
        // Consistent lumping of uniform traction on the two z = 1 faces.
        for face in [[4u32, 5, 7], [4, 6, 7]] {
            for n in face {
                sys.f[3 * n as usize + 2] += sigma * 0.5 / 3.0;
            }
        }
        // Symmetry constraints: u_z = 0 at z = 0, u_x = 0 at x = 0,
        // u_y = 0 at y = 0.
        let mut dofs = Vec::new();
        for (i, p) in nodes.iter().enumerate() {
            if p[2] == 0.0 {
                dofs.push(3 * i as u32 + 2);
            }
            if p[0] == 0.0 {
                dofs.push(3 * i as u32);
            }
            if p[1] == 0.0 {
                dofs.push(3 * i as u32 + 1);
            }
        }
        crate::fea::apply_dirichlet_dofs(&mut sys, &dofs);
        let u = solve(&sys).unwrap();
        let s = sigma / e;
        for (i, p) in nodes.iter().enumerate() {
            let expect = [-nu * s * p[0], -nu * s * p[1], s * p[2]];
            for c in 0..3 {
                assert!(
                    (u[3 * i + c] - expect[c]).abs() < 1e-8 * s,
                    "node {i} comp {c}: {} vs {}",
                    u[3 * i + c],
                    expect[c]
                );
            }
        }
    }

    #[test]
    fn timoshenko_oracle_converges_and_is_monotone() {
        let p = desk_params(1.0);
        let oracle = timoshenko_tip_deflection(&p);
        let mut errs = Vec::new();
        for (nl, nc) in [(2, 1), (4, 2)] {
            let template = build_template(MeshResolution::new(nl, nc).unwrap());
            let mesh = template.instantiate(&p).unwrap();
            let res = solve_case(&template, &p).unwrap();
            let delta = -mean_tip_displacement(&mesh, &res)[1];
            errs.push((delta - oracle).abs() / oracle);
        }
        // The full 12%-at-(8,3) check lives in the acceptance suite; here we
        // pin the coarse end of the sweep.
        assert!(errs[1] < errs[0], "{errs:?}");
        assert!(errs[1] < 0.30, "{errs:?}");
    }

    #[test]
    fn torsion_twists_opposite_flanges() {
        let template = build_template(MeshResolution::new(2, 1).unwrap());
        let mut p = desk_params(1.0);
        p.load_type = LoadType::Torsion;
        let res = solve_case(&template, &p).unwrap();
        let mesh = template.instantiate(&p).unwrap();
        // At the free end, the top and bottom flange mid-edge nodes move in
        // opposite x directions under a z-axis couple.
        let mut top_x = 0.0;
        let mut bot_x = 0.0;
        let mut tip_nodes: Vec<u32> = mesh.load_faces.iter().flatten().copied().collect();
        tip_nodes.sort_unstable();
        tip_nodes.dedup();
        for &n in &tip_nodes {
            let pos = mesh.nodes[n as usize];
            if pos[1] > 0.9 * p.depth {
                top_x += res.displacements[n as usize][0];
            } else if pos[1] < 0.1 * p.depth {
                bot_x += res.displacements[n as usize][0];
            }
        }
        assert!(top_x * bot_x < 0.0, "top {top_x}, bottom {bot_x}");
    }
}
