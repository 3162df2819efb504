//! Release-gate oracles: closed-form FEA checks, finite-difference AD
//! audits, and metric identities, each reporting measured value vs
//! tolerance. Shared between `ibeam verify` and the acceptance suite.

use std::str::FromStr;

use ndarray::{arr2, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{NormalizationStats, Task};
use crate::fea::{
    apply_dirichlet_dofs, assemble, mean_tip_displacement, solve, solve_case,
    timoshenko_tip_deflection, MaterialModel,
};
use crate::geometry::{
    build_template, extract_edges, tet_volume, LoadDist, LoadType, MeshResolution, ParamRanges,
    TetMesh,
};
use crate::gnn::{Arch, GraphBatch, GraphData, Model, ModelConfig};
use crate::jet::{hess_index, Jet2};
use crate::nn::Activation;
use crate::physics::{navier_cauchy_residual, physics_loss, sample_collocation};
use crate::tape::{Tape, UnaryFn};
use crate::{evaluator, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Unit,
    Fea,
    Autodiff,
    All,
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(Level::Unit),
            "fea" => Ok(Level::Fea),
            "autodiff" => Ok(Level::Autodiff),
            "all" => Ok(Level::All),
            other => Err(Error::ConfigMismatch(format!(
                "unknown verify level '{other}' (expected unit|fea|autodiff|all)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl OracleOutcome {
    fn new(name: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        OracleOutcome {
            name: name.into(),
            passed: measured.is_finite() && measured <= tolerance,
            measured,
            tolerance,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: measured {:.3e} vs tolerance {:.3e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.detail)
            }
        )
    }
}

pub fn all_passed(outcomes: &[OracleOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

pub fn run_level(level: Level) -> Result<Vec<OracleOutcome>> {
    let mut out = Vec::new();
    if matches!(level, Level::Unit | Level::All) {
        out.push(oracle_metric_identities()?);
        out.push(oracle_residual_closed_forms());
    }
    if matches!(level, Level::Fea | Level::All) {
        out.push(oracle_patch_test()?);
        out.push(oracle_timoshenko()?);
    }
    if matches!(level, Level::Autodiff | Level::All) {
        out.push(oracle_random_net_gradients());
        out.push(oracle_jet_hessians());
        out.push(oracle_forward_over_reverse()?);
    }
    Ok(out)
}

/// Uniaxial-traction patch test on a Kuhn-split unit cube: constant-strain
/// elements must reproduce the homogeneous state to solver precision.
pub fn oracle_patch_test() -> Result<OracleOutcome> {
    let nodes: Vec<[f64; 3]> = (0..8)
        .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
        .collect();
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
    let mat = MaterialModel::new(e, nu)?;
    let mut sys = assemble(&mesh, &mat)?;
    for face in [[4u32, 5, 7], [4, 6, 7]] {
        for n in face {
            sys.f[3 * n as usize + 2] += sigma * 0.5 / 3.0;
        }
    }
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
    apply_dirichlet_dofs(&mut sys, &dofs);
    let u = solve(&sys)?;
    let s = sigma / e;
    let mut max_rel = 0.0f64;
    for (i, p) in nodes.iter().enumerate() {
        let expect = [-nu * s * p[0], -nu * s * p[1], s * p[2]];
        for c in 0..3 {
            max_rel = max_rel.max((u[3 * i + c] - expect[c]).abs() / s);
        }
    }
    Ok(OracleOutcome::new(
        "fea.patch_test",
        max_rel,
        1e-8,
        "max nodal error / applied strain".into(),
    ))
}

/// Timoshenko cantilever tip deflection: relative error at (8,3) within 12%
/// and monotone refinement across (2,1) -> (4,2) -> (8,3).
pub fn oracle_timoshenko() -> Result<OracleOutcome> {
    let mut p = ParamRanges::default().midpoint(LoadType::BendingY, LoadDist::Uniform);
    p.force_magnitude = 225e3;
    let oracle = timoshenko_tip_deflection(&p);
    let mut errs = Vec::new();
    for (nl, nc) in [(2usize, 1usize), (4, 2), (8, 3)] {
        let template = build_template(MeshResolution::new(nl, nc)?);
        let mesh = template.instantiate(&p)?;
        let res = solve_case(&template, &p)?;
        let delta = -mean_tip_displacement(&mesh, &res)[1];
        errs.push((delta - oracle) / oracle);
    }
    let monotone = errs[0].abs() > errs[1].abs() && errs[1].abs() > errs[2].abs();
    let mut o = OracleOutcome::new(
        "fea.timoshenko",
        errs[2].abs(),
        0.12,
        format!(
            "relative errors (2,1)={:.4}, (4,2)={:.4}, (8,3)={:.4}; monotone={}",
            errs[0], errs[1], errs[2], monotone
        ),
    );
    o.passed = o.passed && monotone;
    Ok(o)
}

/// Reverse-mode gradients of 50 random smooth two-layer nets vs central
/// finite differences; measured = worst relative deviation.
pub fn oracle_random_net_gradients() -> OracleOutcome {
    let mut worst = 0.0f64;
    for net in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + net);
        let n_in = rng.gen_range(2..5);
        let n_hidden = rng.gen_range(3..6);
        let rows = rng.gen_range(2..5);
        let act = if rng.gen::<bool>() {
            UnaryFn::Silu
        } else {
            UnaryFn::Sigmoid
        };
        let x = Array2::from_shape_fn((rows, n_in), |_| rng.gen::<f64>() - 0.5);
        let mut params = vec![
            Array2::from_shape_fn((n_in, n_hidden), |_| rng.gen::<f64>() - 0.5),
            Array2::from_shape_fn((1, n_hidden), |_| rng.gen::<f64>() - 0.5),
            Array2::from_shape_fn((n_hidden, 1), |_| rng.gen::<f64>() - 0.5),
            Array2::from_shape_fn((1, 1), |_| rng.gen::<f64>() - 0.5),
        ];
        let eval = |params: &[Array2<f64>], want_grads: bool| -> (f64, Vec<Array2<f64>>) {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let vars: Vec<_> = (0..4).map(|i| tape.param(params[i].clone(), i)).collect();
            let z = tape.matmul(xv, vars[0]);
            let z = tape.add_row(z, vars[1]);
            let h = tape.unary(z, act);
            let y = tape.matmul(h, vars[2]);
            let y = tape.add_row(y, vars[3]);
            let y2 = tape.mul(y, y);
            let out = tape.mean(y2);
            let v = tape.value(out)[[0, 0]];
            let mut grads: Vec<Array2<f64>> =
                params.iter().map(|p| Array2::zeros(p.dim())).collect();
            if want_grads {
                tape.backward(out, &mut grads);
            }
            (v, grads)
        };
        let (_, grads) = eval(&params, true);
        for pi in 0..4 {
            for idx in 0..params[pi].len() {
                let (r, c) = (idx / params[pi].ncols(), idx % params[pi].ncols());
                let base = params[pi][[r, c]];
                let h = 1e-6 * base.abs().max(1.0);
                params[pi][[r, c]] = base + h;
                let (fp, _) = eval(&params, false);
                params[pi][[r, c]] = base - h;
                let (fm, _) = eval(&params, false);
                params[pi][[r, c]] = base;
                let fd = (fp - fm) / (2.0 * h);
                let ad = grads[pi][[r, c]];
                worst = worst.max((ad - fd).abs() / ad.abs().max(1.0));
            }
        }
    }
    OracleOutcome::new(
        "autodiff.random_nets",
        worst,
        1e-6,
        "50 nets, all parameters, central FD".into(),
    )
}

/// Second-order jets vs hand-differentiated Hessians of a polynomial and a
/// SiLU composite.
pub fn oracle_jet_hessians() -> OracleOutcome {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let p: [f64; 3] = [rng.gen::<f64>() - 0.5, rng.gen(), rng.gen::<f64>() - 0.5];
        let [x, y, z] = p;
        let jx = Jet2::coord(x, 0);
        let jy = Jet2::coord(y, 1);
        let jz = Jet2::coord(z, 2);
        // f = x²y + 3yz² - xz + y + 5
        let f = jx
            .mul(jx)
            .mul(jy)
            .add(jy.mul(jz).mul(jz).scale(3.0))
            .sub(jx.mul(jz))
            .add(jy)
            .add(Jet2::constant(5.0));
        let hess = [
            (0, 0, 2.0 * y),
            (0, 1, 2.0 * x),
            (0, 2, -1.0),
            (1, 1, 0.0),
            (1, 2, 6.0 * z),
            (2, 2, 6.0 * y),
        ];
        for (a, b, expect) in hess {
            worst = worst.max((f.h[hess_index(a, b)] - expect).abs());
        }
        // g = silu(t), t = w·p + b: Hessian = silu''(t) w_a w_b.
        let w = [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5];
        let b = rng.gen::<f64>() - 0.5;
        let t = jx.scale(w[0]).add(jy.scale(w[1])).add(jz.scale(w[2])).add(Jet2::constant(b));
        let g = t.silu();
        let tv = t.v;
        let sig = 1.0 / (1.0 + (-tv).exp());
        let spp = sig * (1.0 - sig) * (2.0 + tv * (1.0 - 2.0 * sig));
        for a in 0..3 {
            for bb in a..3 {
                let expect = spp * w[a] * w[bb];
                worst = worst.max((g.h[hess_index(a, bb)] - expect).abs());
            }
        }
    }
    OracleOutcome::new(
        "autodiff.jet_hessians",
        worst,
        1e-5,
        "polynomial and SiLU-composite closed forms, 20 random points".into(),
    )
}

/// Forward-over-reverse toy: full physics-loss parameter gradient of a tiny
/// model on a unit tet vs central finite differences.
pub fn oracle_forward_over_reverse() -> Result<OracleOutcome> {
    const UNIT_TET: [[f64; 3]; 4] = [
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ];
    let config = ModelConfig {
        arch: Arch::Gcn,
        task: Task::Generalist,
        in_width: 6,
        hidden: 3,
        layers: 1,
        heads: vec![1],
        activation: Activation::Silu,
    };
    let mut model = Model::new(config, 7)?;
    let tets = [[0u32, 1, 2, 3]];
    let edges = [[0u32, 1], [0, 2], [0, 3], [1, 2]];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gd = GraphData {
        features: Array2::from_shape_fn((4, 6), |_| rng.gen::<f64>() - 0.5),
        targets: Array2::zeros((4, 3)),
    };
    let batch = GraphBatch::build(4, &edges, &[&gd])?;
    let colloc = sample_collocation(&UNIT_TET, &tets, 4, 9);
    let mat = MaterialModel::new(200_000.0, 0.3)?;
    let stats = NormalizationStats {
        feature_min: vec![-1.0; 6],
        feature_max: vec![1.0; 6],
        constant_features: vec![false; 6],
        disp_min: [-1.0; 3],
        disp_max: [1.0; 3],
        constant_disp: [false; 3],
    };
    let eval = |model: &Model, want_grads: bool| -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let loss = physics_loss(
            &mut tape, model, &batch, &UNIT_TET, &tets, &colloc, &mat, &stats, 1.0,
        )?;
        let v = tape.value(loss)[[0, 0]];
        let mut grads = model.store.zero_grads();
        if want_grads {
            tape.backward(loss, &mut grads);
        }
        Ok((v, grads))
    };
    let (_, grads) = eval(&model, true)?;
    let mut worst = 0.0f64;
    for pi in 0..model.store.values.len() {
        for idx in 0..model.store.values[pi].len() {
            let (r, c) = (
                idx / model.store.values[pi].ncols(),
                idx % model.store.values[pi].ncols(),
            );
            let base = model.store.values[pi][[r, c]];
            let h = 1e-5 * base.abs().max(1.0);
            model.store.values[pi][[r, c]] = base + h;
            let (fp, _) = eval(&model, false)?;
            model.store.values[pi][[r, c]] = base - h;
            let (fm, _) = eval(&model, false)?;
            model.store.values[pi][[r, c]] = base;
            let fd = (fp - fm) / (2.0 * h);
            let ad = grads[pi][[r, c]];
            worst = worst.max((ad - fd).abs() / ad.abs().max(1e-3));
        }
    }
    Ok(OracleOutcome::new(
        "autodiff.forward_over_reverse",
        worst,
        1e-5,
        "physics-loss parameter gradients vs central FD".into(),
    ))
}

/// Metric identities pinned by the paper's definitions.
pub fn oracle_metric_identities() -> Result<OracleOutcome> {
    let truth = vec![
        arr2(&[[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]),
        arr2(&[[0.5, 0.25, -1.5], [2.0, -1.0, 0.75]]),
    ];
    let scaled: Vec<Array2<f64>> = truth.iter().map(|a| a.mapv(|x| 1.1 * x)).collect();
    let mut worst = (evaluator::rel_l2(&scaled, &truth)? - 10.0).abs();
    worst = worst.max((evaluator::r2(&truth, &truth) - 1.0).abs());
    let n = truth.iter().map(|a| a.len()).sum::<usize>() as f64;
    let mean = truth.iter().map(|a| a.sum()).sum::<f64>() / n;
    let flat: Vec<Array2<f64>> = truth.iter().map(|a| a.mapv(|_| mean)).collect();
    worst = worst.max(evaluator::r2(&flat, &truth).abs());
    let e = 0.5 / 3f64.sqrt();
    let shifted: Vec<Array2<f64>> = truth.iter().map(|a| a.mapv(|x| x + e)).collect();
    worst = worst.max((evaluator::mae(&shifted, &truth) - 0.5).abs());
    Ok(OracleOutcome::new(
        "unit.metric_identities",
        worst,
        1e-6,
        "rel_l2(1.1u,u)=10%, r2 perfect=1, r2 pooled-mean=0, mae uniform 0.5mm".into(),
    ))
}

/// Navier-Cauchy residual closed forms: affine fields vanish, u = (x²,0,0)
/// gives r_x = 2mu + 2(mu + lambda), and the residual is linear in the field.
pub fn oracle_residual_closed_forms() -> OracleOutcome {
    let (lambda, mu) = (115_384.6153846154, 76_923.0769230769);
    let mut worst = 0.0f64;
    // Affine field u = Ax + b.
    let point = [0.3, -0.7, 1.2];
    let a = [[1.0, 2.0, -1.0], [0.5, -0.25, 3.0], [2.0, 1.0, 0.75]];
    let affine: [Jet2; 3] = std::array::from_fn(|i| {
        let mut u = Jet2::constant(0.1 * (i as f64 + 1.0));
        for (k, row) in a[i].iter().enumerate() {
            u = u.add(Jet2::coord(point[k], k).scale(*row));
        }
        u
    });
    for r in navier_cauchy_residual(&affine, lambda, mu) {
        worst = worst.max(r.abs());
    }
    // Quadratic field u = (x², 0, 0).
    let jx = Jet2::coord(point[0], 0);
    let quad = [jx.mul(jx), Jet2::constant(0.0), Jet2::constant(0.0)];
    let r = navier_cauchy_residual(&quad, lambda, mu);
    let expect = 2.0 * mu + 2.0 * (mu + lambda);
    worst = worst.max((r[0] - expect).abs() / expect);
    worst = worst.max(r[1].abs() / expect);
    worst = worst.max(r[2].abs() / expect);
    // Linearity: r(3u) = 3 r(u).
    let tripled = [quad[0].scale(3.0), quad[1], quad[2]];
    let r3 = navier_cauchy_residual(&tripled, lambda, mu);
    worst = worst.max((r3[0] - 3.0 * r[0]).abs() / expect);
    OracleOutcome::new(
        "unit.residual_closed_forms",
        worst,
        1e-9,
        "affine zero, quadratic closed form, linearity".into(),
    )
}
