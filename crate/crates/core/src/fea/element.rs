use super::MaterialModel;
use crate::geometry::tet_volume;
use crate::{Error, Result};

const VOLUME_FLOOR: f64 = 1e-9; // mm^3

/// Shape-function gradients of a linear tet: rows are grad N_0..N_3.
pub(crate) fn shape_gradients(p: &[[f64; 3]; 4]) -> Result<([f64; 3], [[f64; 3]; 3], f64)> {
    let v = tet_volume(p[0], p[1], p[2], p[3]);
    if v <= VOLUME_FLOOR {
        return Err(Error::DegenerateElement {
            volume: v,
            floor: VOLUME_FLOOR,
        });
    }
    // Edge matrix columns p1-p0, p2-p0, p3-p0; grads of N1..N3 are rows of
    // its inverse, grad N0 is minus their sum.
    let e = [
        [p[1][0] - p[0][0], p[2][0] - p[0][0], p[3][0] - p[0][0]],
        [p[1][1] - p[0][1], p[2][1] - p[0][1], p[3][1] - p[0][1]],
        [p[1][2] - p[0][2], p[2][2] - p[0][2], p[3][2] - p[0][2]],
    ];
    let det = 6.0 * v;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
        e[r0][c0] * e[r1][c1] - e[r0][c1] * e[r1][c0]
    };
    // inv(e) with rows = grad N1..N3.
    let inv = [
        [
            cof(1, 2, 1, 2) / det,
            -cof(0, 2, 1, 2) / det,
            cof(0, 1, 1, 2) / det,
        ],
        [
            -cof(1, 2, 0, 2) / det,
            cof(0, 2, 0, 2) / det,
            -cof(0, 1, 0, 2) / det,
        ],
        [
            cof(1, 2, 0, 1) / det,
            -cof(0, 2, 0, 1) / det,
            cof(0, 1, 0, 1) / det,
        ],
    ];
    let g0 = [
        -(inv[0][0] + inv[1][0] + inv[2][0]),
        -(inv[0][1] + inv[1][1] + inv[2][1]),
        -(inv[0][2] + inv[1][2] + inv[2][2]),
    ];
    Ok((g0, inv, v))
}

/// 12x12 stiffness of a constant-strain tetrahedron, K = V * B^T D B.
/// Dof order: (n0x, n0y, n0z, n1x, ...).
pub fn element_stiffness(coords: &[[f64; 3]; 4], mat: &MaterialModel) -> Result<[[f64; 12]; 12]> {
    let (g0, g123, volume) = shape_gradients(coords)?;
    let grads = [g0, g123[0], g123[1], g123[2]];

    // B (6x12): strain order [exx, eyy, ezz, gxy, gyz, gzx].
    let mut b = [[0.0f64; 12]; 6];
    for (i, g) in grads.iter().enumerate() {
        let c = 3 * i;
        b[0][c] = g[0];
        b[1][c + 1] = g[1];
        b[2][c + 2] = g[2];
        b[3][c] = g[1];
        b[3][c + 1] = g[0];
        b[4][c + 1] = g[2];
        b[4][c + 2] = g[1];
        b[5][c] = g[2];
        b[5][c + 2] = g[0];
    }

    let (la, mu) = (mat.lambda, mat.mu);
    let mut d = [[0.0f64; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = la;
        }
        d[i][i] = la + 2.0 * mu;
        d[i + 3][i + 3] = mu;
    }

    let mut db = [[0.0f64; 12]; 6];
    for i in 0..6 {
        for j in 0..12 {
            let mut s = 0.0;
            for k in 0..6 {
                s += d[i][k] * b[k][j];
            }
            db[i][j] = s;
        }
    }
    let mut ke = [[0.0f64; 12]; 12];
    for i in 0..12 {
        for j in 0..12 {
            let mut s = 0.0;
            for k in 0..6 {
                s += b[k][i] * db[k][j];
            }
            ke[i][j] = volume * s;
        }
    }
    Ok(ke)
}
