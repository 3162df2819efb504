//! Navier-Cauchy physics loss: volume-weighted collocation sampling, the
//! second-order residual r_i = mu * lap(u_i) + (mu + lambda) * d_i(div u)
//! evaluated through forward jets, nondimensionalization, and the annealed
//! composite loss.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationStats;
use crate::fea::MaterialModel;
use crate::geometry::tet_volume;
use crate::gnn::{interpolate_latent, GraphBatch, Interpolator, Model};
use crate::jet::{hess_index, Jet2, JetMat};
use crate::tape::{Tape, Var};
use crate::Result;

/// Collocation points paired with their containing tets. Every point is
/// strictly interior (all barycentric weights > 1e-9).
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub tets: Vec<usize>,
    pub points: Vec<[f64; 3]>,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draw `q` points uniformly in the mesh volume: tets chosen with probability
/// proportional to volume, interior positions via the symmetric exponential-
/// spacing construction (uniform on the simplex).
pub fn sample_collocation(
    coords: &[[f64; 3]],
    tets: &[[u32; 4]],
    q: usize,
    seed: u64,
) -> CollocationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cum = Vec::with_capacity(tets.len());
    let mut total = 0.0;
    for t in tets {
        let v = tet_volume(
            coords[t[0] as usize],
            coords[t[1] as usize],
            coords[t[2] as usize],
            coords[t[3] as usize],
        )
        .abs();
        total += v;
        cum.push(total);
    }
    let mut out = CollocationSet {
        tets: Vec::with_capacity(q),
        points: Vec::with_capacity(q),
    };
    for _ in 0..q {
        let r = rng.gen::<f64>() * total;
        let ti = cum.partition_point(|&c| c <= r).min(tets.len() - 1);
        let w = loop {
            let mut e = [0.0; 4];
            let mut s = 0.0;
            for x in &mut e {
                *x = -(1.0 - rng.gen::<f64>()).ln();
                s += *x;
            }
            let w = e.map(|x| x / s);
            if w.iter().all(|&x| x > 1e-9) {
                break w;
            }
        };
        let t = tets[ti];
        let mut p = [0.0; 3];
        for (i, &n) in t.iter().enumerate() {
            for k in 0..3 {
                p[k] += w[i] * coords[n as usize][k];
            }
        }
        out.tets.push(ti);
        out.points.push(p);
    }
    out
}

/// Pointwise Navier-Cauchy residual (zero body force) from three scalar jets
/// carrying physical-coordinate Hessians:
/// r_i = mu * sum_j H_i[jj] + (mu + lambda) * sum_j H_j[ij].
pub fn navier_cauchy_residual(u: &[Jet2; 3], lambda: f64, mu: f64) -> [f64; 3] {
    let mut r = [0.0; 3];
    for i in 0..3 {
        let lap = u[i].h[hess_index(0, 0)] + u[i].h[hess_index(1, 1)] + u[i].h[hess_index(2, 2)];
        let mut graddiv = 0.0;
        for j in 0..3 {
            graddiv += u[j].h[hess_index(i, j)];
        }
        r[i] = mu * lap + (mu + lambda) * graddiv;
    }
    r
}

/// Nondimensional residual r* = r * L_c^2 / (mu * u_c).
pub fn nondimensionalize(r: [f64; 3], length: f64, mu: f64, u_c: f64) -> [f64; 3] {
    let s = length * length / (mu * u_c);
    r.map(|x| x * s)
}

/// Annealing configuration for the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha_target: f64,
    pub ramp_fraction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_target: 1e-6,
            ramp_fraction: 0.25,
        }
    }
}

/// Linear ramp 0 -> alpha_target over the first ramp_fraction of training,
/// then constant.
pub fn alpha_schedule(epoch: usize, total_epochs: usize, w: &LossWeights) -> f64 {
    let ramp_end = w.ramp_fraction * total_epochs as f64;
    if ramp_end <= 0.0 {
        return w.alpha_target;
    }
    w.alpha_target * (epoch as f64 / ramp_end).min(1.0)
}

/// L_total = L_data + alpha * L_physics.
pub fn total_loss(data_loss: f64, physics_loss: f64, alpha: f64) -> f64 {
    data_loss + alpha * physics_loss
}

/// Nondimensional residual columns (Q x 3) on the tape from a displacement
/// jet whose gradient/Hessian lanes are physical-coordinate derivatives of
/// the *normalized* components; `uc[c]` rescales component c to mm and
/// `u_ref` is the nondimensionalization displacement scale.
pub fn residual_columns(
    tape: &mut Tape,
    u: JetMat,
    uc: [f64; 3],
    mat: &MaterialModel,
    length: f64,
    u_ref: f64,
) -> Var {
    // Physical second derivatives per component, packed lane by lane.
    let mut hphys: Vec<[Var; 6]> = Vec::with_capacity(3);
    for (c, &scale) in uc.iter().enumerate() {
        let mut lanes = [u.val; 6];
        for (m, lane) in lanes.iter_mut().enumerate() {
            let col = tape.slice_cols(u.h[m], c, c + 1);
            *lane = tape.scale(col, scale);
        }
        hphys.push(lanes);
    }
    let nd = length * length / (mat.mu * u_ref);
    let mut cols: Option<Var> = None;
    for i in 0..3 {
        let l1 = tape.add(hphys[i][hess_index(0, 0)], hphys[i][hess_index(1, 1)]);
        let lap = tape.add(l1, hphys[i][hess_index(2, 2)]);
        let g1 = tape.add(hphys[0][hess_index(i, 0)], hphys[1][hess_index(i, 1)]);
        let graddiv = tape.add(g1, hphys[2][hess_index(i, 2)]);
        let a = tape.scale(lap, mat.mu * nd);
        let b = tape.scale(graddiv, (mat.mu + mat.lambda) * nd);
        let ri = tape.add(a, b);
        cols = Some(match cols {
            Some(prev) => tape.concat_cols(prev, ri),
            None => ri,
        });
    }
    cols.unwrap()
}

/// Mean squared nondimensional residual of the model's continuous field at
/// the collocation points of one sample. `batch` must hold the single graph
/// the collocation set belongs to.
#[allow(clippy::too_many_arguments)]
pub fn physics_loss(
    tape: &mut Tape,
    model: &Model,
    batch: &GraphBatch,
    coords: &[[f64; 3]],
    tets: &[[u32; 4]],
    colloc: &CollocationSet,
    mat: &MaterialModel,
    stats: &NormalizationStats,
    length: f64,
) -> Result<Var> {
    let latent_nodes = model.encode_process(tape, batch);
    physics_loss_with_latent(tape, model, latent_nodes, coords, tets, colloc, mat, stats, length)
}

/// As `physics_loss`, but reusing nodal latents already on the tape (the
/// trainer shares one encoder pass between the data and physics terms).
#[allow(clippy::too_many_arguments)]
pub fn physics_loss_with_latent(
    tape: &mut Tape,
    model: &Model,
    latent_nodes: Var,
    coords: &[[f64; 3]],
    tets: &[[u32; 4]],
    colloc: &CollocationSet,
    mat: &MaterialModel,
    stats: &NormalizationStats,
    length: f64,
) -> Result<Var> {
    if colloc.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let q = colloc.len();
    let pairs: Vec<(usize, [f64; 3])> = colloc
        .tets
        .iter()
        .zip(&colloc.points)
        .map(|(&t, &p)| (t, p))
        .collect();
    let it = Interpolator::new(coords, tets, &pairs)?;
    let latent = interpolate_latent(tape, latent_nodes, &it);

    // Normalized position input with physical-coordinate gradient seeds:
    // d pos_norm_k / d x_phys_k = 1 / pos_half_range(k).
    let mut pos_val = Array2::zeros((q, 3));
    for (row, p) in colloc.points.iter().enumerate() {
        for k in 0..3 {
            pos_val[[row, k]] = stats.normalize_feature(k, p[k]);
        }
    }
    let val = tape.constant(pos_val);
    let mut g = [val; 3];
    for (k, gk) in g.iter_mut().enumerate() {
        let hr = stats.pos_half_range(k);
        let mut col = Array2::zeros((q, 3));
        if hr > 0.0 {
            col.column_mut(k).fill(1.0 / hr);
        }
        *gk = tape.constant(col);
    }
    let zero = tape.constant(Array2::zeros((q, 3)));
    let pos = JetMat::new(val, g, [zero; 6]);

    let u = model.decode_jet(tape, latent, pos)?;
    let uc = [
        stats.disp_half_range(0),
        stats.disp_half_range(1),
        stats.disp_half_range(2),
    ];
    // Single displacement scale for nondimensionalization: the dominant
    // component's half-range (keeps r* O(1); see ledger for the choice).
    let u_ref = uc.iter().cloned().fold(0.0f64, f64::max).max(1e-30);
    let cols = residual_columns(tape, u, uc, mat, length, u_ref);
    let sq = tape.mul(cols, cols);
    Ok(tape.mean(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Task;
    use crate::gnn::{Arch, GraphData, ModelConfig};
    use crate::nn::Activation;

    const UNIT_TET: [[f64; 3]; 4] = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ];

    fn bary(coords: &[[f64; 3]], t: [u32; 4], p: [f64; 3]) -> [f64; 4] {
        // Independent barycentric solve via volumes.
        let v = |a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]| tet_volume(a, b, c, d);
        let [a, b, c, d] = t.map(|i| coords[i as usize]);
        let total = v(a, b, c, d);
        [
            v(p, b, c, d) / total,
            v(a, p, c, d) / total,
            v(a, b, p, d) / total,
            v(a, b, c, p) / total,
        ]
    }

    #[test]
    fn single_tet_points_are_strictly_inside_and_deterministic() {
        let tets = [[0u32, 1, 2, 3]];
        let cs = sample_collocation(&UNIT_TET, &tets, 64, 5);
        assert_eq!(cs.len(), 64);
        for (&ti, &p) in cs.tets.iter().zip(&cs.points) {
            assert_eq!(ti, 0);
            let w = bary(&UNIT_TET, tets[0], p);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x > 1e-9), "{w:?}");
        }
        assert_eq!(cs, sample_collocation(&UNIT_TET, &tets, 64, 5));
        assert_ne!(cs, sample_collocation(&UNIT_TET, &tets, 64, 6));
        assert!(sample_collocation(&UNIT_TET, &tets, 0, 5).is_empty());
    }

    #[test]
    fn empirical_mean_approaches_centroid() {
        let coords = [
            [0.3, -0.2, 0.1],
            [2.1, 0.4, -0.3],
            [0.6, 1.9, 0.2],
            [0.9, 0.7, 2.4],
        ];
        let tets = [[0u32, 1, 2, 3]];
        let n = 100_000;
        let cs = sample_collocation(&coords, &tets, n, 123);
        for k in 0..3 {
            let centroid: f64 = coords.iter().map(|c| c[k]).sum::<f64>() / 4.0;
            let mean: f64 = cs.points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            let var: f64 = cs
                .points
                .iter()
                .map(|p| (p[k] - mean) * (p[k] - mean))
                .sum::<f64>()
                / n as f64;
            let sigma_mean = (var / n as f64).sqrt();
            assert!(
                (mean - centroid).abs() < 3.0 * sigma_mean,
                "axis {k}: {mean} vs {centroid} (sigma {sigma_mean})"
            );
        }
    }

    #[test]
    fn tet_choice_is_volume_weighted() {
        // Second tet has 8x the volume of the first (edge scale 2).
        let coords = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [10.0, 0.0, 0.0],
            [12.0, 0.0, 0.0],
            [10.0, 2.0, 0.0],
            [10.0, 0.0, 2.0],
        ];
        let tets = [[0u32, 1, 2, 3], [4, 5, 6, 7]];
        let n = 20_000;
        let cs = sample_collocation(&coords, &tets, n, 9);
        let big = cs.tets.iter().filter(|&&t| t == 1).count() as f64;
        let p = 8.0 / 9.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (big - n as f64 * p).abs() < 3.0 * sigma,
            "{big} of {n} (expect {})",
            n as f64 * p
        );
    }

    #[test]
    fn constant_and_affine_fields_have_zero_residual() {
        let c = [Jet2::constant(1.0), Jet2::constant(-2.0), Jet2::constant(0.5)];
        assert_eq!(navier_cauchy_residual(&c, 1.3, 0.7), [0.0; 3]);
        let x = Jet2::coord(0.4, 0);
        let y = Jet2::coord(-0.8, 1);
        let z = Jet2::coord(1.2, 2);
        let u = [
            x.scale(2.0).add(y.scale(0.3)),
            z.scale(-1.0).add(Jet2::constant(4.0)),
            x.add(y).add(z),
        ];
        let r = navier_cauchy_residual(&u, 100.0, 80.0);
        assert!(r.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn quadratic_field_matches_closed_form() {
        // u = (x^2, 0, 0): lap u_x = 2, d_x(div u) = 2 ->
        // r = (2 mu + 2 (mu + lambda), 0, 0).
        let (lambda, mu) = (115_384.6, 76_923.1);
        let x = Jet2::coord(0.7, 0);
        let u = [x.mul(x), Jet2::constant(0.0), Jet2::constant(0.0)];
        let r = navier_cauchy_residual(&u, lambda, mu);
        assert!((r[0] - (2.0 * mu + 2.0 * (mu + lambda))).abs() < 1e-6);
        assert_eq!(r[1], 0.0);
        assert_eq!(r[2], 0.0);
        // Nondimensionalization and material scaling: scaling mu and lambda
        // by c scales r by c exactly.
        let rs = navier_cauchy_residual(&u, 2.0 * lambda, 2.0 * mu);
        for i in 0..3 {
            assert!((rs[i] - 2.0 * r[i]).abs() < 1e-9);
        }
        let rn = nondimensionalize(r, 1000.0, mu, 2.0);
        assert!((rn[0] - r[0] * 1e6 / (mu * 2.0)).abs() < 1e-9);
    }

    #[test]
    fn residual_is_linear_in_the_field() {
        let mk = |s: u64| {
            let f = |k: u64| (k as f64 * 0.37).sin();
            [0, 1, 2].map(|i| Jet2 {
                v: f(s + i),
                g: [f(s + i + 3), f(s + i + 6), f(s + i + 9)],
                h: [
                    f(s + i + 12),
                    f(s + i + 15),
                    f(s + i + 18),
                    f(s + i + 21),
                    f(s + i + 24),
                    f(s + i + 27),
                ],
            })
        };
        let (u, v) = (mk(1), mk(100));
        let sum = [u[0].add(v[0]), u[1].add(v[1]), u[2].add(v[2])];
        let (lambda, mu) = (50.0, 30.0);
        let ru = navier_cauchy_residual(&u, lambda, mu);
        let rv = navier_cauchy_residual(&v, lambda, mu);
        let rs = navier_cauchy_residual(&sum, lambda, mu);
        for i in 0..3 {
            assert!((rs[i] - (ru[i] + rv[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_schedule_ramps_linearly_then_holds() {
        let w = LossWeights::default();
        let total = 200; // ramp over the first 50 epochs
        assert_eq!(alpha_schedule(0, total, &w), 0.0);
        assert!((alpha_schedule(25, total, &w) - 0.5e-6).abs() < 1e-20);
        assert!((alpha_schedule(50, total, &w) - 1e-6).abs() < 1e-20);
        assert_eq!(alpha_schedule(51, total, &w), 1e-6);
        assert_eq!(alpha_schedule(200, total, &w), 1e-6);
        for e in 1..=50 {
            assert!(alpha_schedule(e, total, &w) >= alpha_schedule(e - 1, total, &w));
        }
    }

    #[test]
    fn total_loss_is_exact_weighted_sum() {
        assert_eq!(total_loss(0.7, 42.0, 0.0), 0.7);
        assert!((total_loss(0.5, 2.0, 1e-6) - 0.500002).abs() < 1e-15);
        let a = total_loss(0.0, 3.0, 1e-4);
        let b = total_loss(0.0, 3.0, 2e-4);
        assert!((b - 2.0 * a).abs() < 1e-18);
    }

    fn flat_stats(width: usize) -> NormalizationStats {
        NormalizationStats {
            feature_min: vec![-1.0; width],
            feature_max: vec![1.0; width],
            constant_features: vec![false; width],
            disp_min: [-1.0; 3],
            disp_max: [1.0; 3],
            constant_disp: [false; 3],
        }
    }

    fn tet_graph(seed: u64) -> GraphData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GraphData {
            features: Array2::from_shape_fn((4, 6), |_| rng.gen::<f64>() - 0.5),
            targets: Array2::zeros((4, 3)),
        }
    }

    fn tiny_model(seed: u64) -> Model {
        let config = ModelConfig {
            arch: Arch::Gcn,
            task: Task::Generalist,
            in_width: 6,
            hidden: 3,
            layers: 1,
            heads: vec![1],
            activation: Activation::Silu,
        };
        Model::new(config, seed).unwrap()
    }

    #[test]
    fn zero_decoder_weights_give_zero_physics_loss() {
        let mut model = tiny_model(3);
        for (pid, name) in model.store.names.clone().iter().enumerate() {
            if name.starts_with("decoder2") {
                model.store.values[pid].fill(0.0);
            }
        }
        let tets = [[0u32, 1, 2, 3]];
        let gd = tet_graph(4);
        let batch = GraphBatch::build(4, &[[0, 1], [0, 2], [0, 3], [1, 2]], &[&gd]).unwrap();
        let colloc = sample_collocation(&UNIT_TET, &tets, 8, 11);
        let mat = MaterialModel::new(200_000.0, 0.3).unwrap();
        let stats = flat_stats(6);
        let mut tape = Tape::new();
        let loss = physics_loss(
            &mut tape, &model, &batch, &UNIT_TET, &tets, &colloc, &mat, &stats, 1.0,
        )
        .unwrap();
        assert_eq!(tape.value(loss)[[0, 0]], 0.0);
    }

    #[test]
    fn physics_loss_gradient_matches_fd() {
        let model = tiny_model(7);
        let tets = [[0u32, 1, 2, 3]];
        let gd = tet_graph(8);
        let edges = [[0u32, 1], [0, 2], [0, 3], [1, 2]];
        let batch = GraphBatch::build(4, &edges, &[&gd]).unwrap();
        let colloc = sample_collocation(&UNIT_TET, &tets, 4, 13);
        let mat = MaterialModel::new(1.0, 0.3).unwrap();
        let stats = flat_stats(6);

        let eval = |m: &Model| -> f64 {
            let mut tape = Tape::new();
            let loss = physics_loss(
                &mut tape, m, &batch, &UNIT_TET, &tets, &colloc, &mat, &stats, 1.0,
            )
            .unwrap();
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new();
        let loss = physics_loss(
            &mut tape, &model, &batch, &UNIT_TET, &tets, &colloc, &mat, &stats, 1.0,
        )
        .unwrap();
        let mut grads = model.store.zero_grads();
        tape.backward(loss, &mut grads);

        let step = 1e-5;
        for pid in 0..model.store.len() {
            for idx in 0..model.store.values[pid].len() {
                let (r, c) = (
                    idx / model.store.values[pid].ncols(),
                    idx % model.store.values[pid].ncols(),
                );
                let mut mp = model.clone();
                mp.store.values[pid][[r, c]] += step;
                let mut mm = model.clone();
                mm.store.values[pid][[r, c]] -= step;
                let fd = (eval(&mp) - eval(&mm)) / (2.0 * step);
                let g = grads[pid][[r, c]];
                assert!(
                    (g - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "{}[{r},{c}]: {g} vs fd {fd}",
                    model.store.names[pid]
                );
            }
        }
    }

    #[test]
    fn interpolated_fea_field_is_in_pointwise_equilibrium() {
        // A CST solution is affine per element, so its second derivatives --
        // and hence the strong-form residual -- vanish identically inside
        // every tet. Interpolating the FEA truth and pushing it through the
        // residual operator must give exactly zero.
        use crate::fea::solve_on_mesh;
        use crate::geometry::{build_template, LoadDist, LoadType, MeshResolution, ParamRanges};
        use crate::gnn::Interpolator;
        let params = ParamRanges::default().midpoint(LoadType::BendingY, LoadDist::Uniform);
        for (nl, nc) in [(2usize, 1usize), (4, 2)] {
            let res = MeshResolution::new(nl, nc).unwrap();
            let mesh = build_template(res).instantiate(&params).unwrap();
            let sim = solve_on_mesh(&mesh, &params).unwrap();
            let colloc = sample_collocation(&mesh.nodes, &mesh.tets, 16, 21);
            let pairs: Vec<(usize, [f64; 3])> = colloc
                .tets
                .iter()
                .zip(&colloc.points)
                .map(|(&t, &p)| (t, p))
                .collect();
            let it = Interpolator::new(&mesh.nodes, &mesh.tets, &pairs).unwrap();
            let disp =
                Array2::from_shape_fn((mesh.nodes.len(), 3), |(n, c)| sim.displacements[n][c]);
            let mat = MaterialModel::new(params.youngs_modulus, params.poissons_ratio).unwrap();
            let mut tape = Tape::new();
            let h = tape.constant(disp);
            let u = interpolate_latent(&mut tape, h, &it);
            let cols = residual_columns(
                &mut tape,
                u,
                [1.0; 3],
                &mat,
                params.length,
                1.0,
            );
            assert!(tape.value(cols).iter().all(|&v| v == 0.0));
        }
    }
}
