//! Metric suite (MAE, relative L2, R²), single-threaded inference timing,
//! and Table-2-style report emission (CSV, Markdown, SVG loss curves).

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationStats;
use crate::gnn::{GraphBatch, GraphData, Model};
use crate::tape::Tape;
use crate::{Error, Result};

/// Table-2 row: MAE (mm), R-L2 (%), R², inference (ms), params (M).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mae: f64,
    pub rel_l2: f64,
    pub r2: f64,
    pub inference_ms: f64,
    pub params_m: f64,
}

/// Mean over all nodes and samples of the Euclidean norm of the per-node
/// displacement error vector, in physical mm.
pub fn mae(pred: &[Array2<f64>], truth: &[Array2<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (pr, tr) in p.rows().into_iter().zip(t.rows()) {
            let e: f64 = pr
                .iter()
                .zip(tr.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sum += e.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Per-sample ||e||/||u_true|| x 100, averaged over samples.
pub fn rel_l2(pred: &[Array2<f64>], truth: &[Array2<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    for (s, (p, t)) in pred.iter().zip(truth).enumerate() {
        let err: f64 = p
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let norm: f64 = t.iter().map(|x| x * x).sum();
        if norm == 0.0 {
            return Err(Error::ZeroTruthNorm { sample: s });
        }
        sum += (err / norm).sqrt() * 100.0;
    }
    Ok(sum / pred.len().max(1) as f64)
}

/// Pooled R² over all 3N components of all samples: 1 - SS_res / SS_tot
/// about the pooled mean.
pub fn r2(pred: &[Array2<f64>], truth: &[Array2<f64>]) -> f64 {
    let mut n = 0usize;
    let mut mean = 0.0;
    for t in truth {
        mean += t.sum();
        n += t.len();
    }
    mean /= n.max(1) as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t.iter()) {
            ss_res += (a - b) * (a - b);
            ss_tot += (b - mean) * (b - mean);
        }
    }
    1.0 - ss_res / ss_tot
}

/// Denormalized (physical mm) model prediction for one sample graph.
pub fn predict(
    model: &Model,
    topo: &crate::dataset::Topology,
    gd: &GraphData,
    stats: &NormalizationStats,
) -> Result<Array2<f64>> {
    let batch = GraphBatch::single(topo, gd)?;
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch);
    let v = tape.value(out);
    let mut phys = Array2::zeros(v.dim());
    for ((r, c), &un) in v.indexed_iter() {
        phys[[r, c]] = stats.denormalize_disp(c, un);
    }
    Ok(phys)
}

/// Denormalize a target block the same way predictions are.
pub fn denormalize_targets(targets: &Array2<f64>, stats: &NormalizationStats) -> Array2<f64> {
    let mut phys = Array2::zeros(targets.dim());
    for ((r, c), &un) in targets.indexed_iter() {
        phys[[r, c]] = stats.denormalize_disp(c, un);
    }
    phys
}

/// Median wall-clock of single-sample forwards: 10 warm-ups, then at least
/// 100 timed passes cycling through the test graphs. Single-threaded.
pub fn benchmark_inference(
    model: &Model,
    topo: &crate::dataset::Topology,
    graphs: &[GraphData],
) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Other("benchmark needs at least one graph".into()));
    }
    let batches: Vec<GraphBatch> = graphs
        .iter()
        .map(|g| GraphBatch::single(topo, g))
        .collect::<Result<_>>()?;
    let mut pick = 0usize;
    for _ in 0..10 {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batches[pick]);
        std::hint::black_box(tape.value(out));
        pick = (pick + 1) % batches.len();
    }
    let runs = 100.max(batches.len());
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batches[pick]);
        std::hint::black_box(tape.value(out));
        times.push(start.elapsed().as_secs_f64() * 1e3);
        pick = (pick + 1) % batches.len();
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(0.5 * (times[(runs - 1) / 2] + times[runs / 2]))
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub task: String,
    pub metrics: EvalMetrics,
}

/// CSV in Table-2 column order; byte-deterministic.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("model,task,mae_mm,rel_l2_pct,r2,inference_ms,params_m\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.4},{:.6},{:.4},{:.4}\n",
            r.model,
            r.task,
            r.metrics.mae,
            r.metrics.rel_l2,
            r.metrics.r2,
            r.metrics.inference_ms,
            r.metrics.params_m
        ));
    }
    out
}

/// Markdown table mirroring Table 2's column order.
pub fn report_md(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "| Model | Task | MAE (mm) ↓ | R-L2 (%) ↓ | R² Score ↑ | Inference (ms) ↓ | Params (M) ↓ |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {:.6} | {:.4} | {:.6} | {:.4} | {:.4} |\n",
            r.model,
            r.task,
            r.metrics.mae,
            r.metrics.rel_l2,
            r.metrics.r2,
            r.metrics.inference_ms,
            r.metrics.params_m
        ));
    }
    out
}

/// One named curve for the SVG plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Deterministic SVG line plot (log10 y-axis) of loss curves, realizing the
/// paper's Fig. 4 / Fig. 6a as artifacts.
pub fn plot_svg(title: &str, series: &[Series]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const ML: f64 = 60.0;
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 40.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    let (lo, hi) = if finite.is_empty() {
        (1e-3, 1.0)
    } else {
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi.max(lo * 1.0001)))
    };
    let (llo, lhi) = (lo.log10(), hi.log10());
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(1).max(2);
    let sx = |i: usize| ML + (W - ML - MR) * i as f64 / (n - 1) as f64;
    let sy = |v: f64| {
        let l = v.max(lo * 1e-3).log10().clamp(llo, lhi);
        MT + (H - MT - MB) * (1.0 - (l - llo) / (lhi - llo).max(1e-12))
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    );
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB
    ));
    for (si, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", sx(i), sy(v)))
            .collect();
        let color = colors[si % colors.len()];
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\">{}</text>\n",
            W - MR - 160.0,
            MT + 16.0 * (si + 1) as f64,
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_trivial_cases() {
        let t = vec![arr2(&[[1.0, 2.0, 3.0], [0.0, -1.0, 0.5]])];
        assert_eq!(mae(&t, &t), 0.0);
        // Uniform error vector of length 0.5 at every node.
        let e = 0.5 / 3f64.sqrt();
        let p: Vec<Array2<f64>> = t.iter().map(|a| a.mapv(|x| x + e)).collect();
        assert!((mae(&p, &t) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mae_matches_brute_force_oracle_and_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((5, 3), |_| rng.gen::<f64>() - 0.5))
            .collect();
        let p: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((5, 3), |_| rng.gen::<f64>() - 0.5))
            .collect();
        // Independent oracle: explicit loops over samples and nodes.
        let mut acc = 0.0;
        for s in 0..3 {
            for node in 0..5 {
                let mut e = 0.0;
                for c in 0..3 {
                    let d = p[s][[node, c]] - t[s][[node, c]];
                    e += d * d;
                }
                acc += e.sqrt();
            }
        }
        let oracle = acc / 15.0;
        assert!((mae(&p, &t) - oracle).abs() < 1e-14);
        let p2: Vec<_> = p.iter().map(|a| a.mapv(|x| 3.0 * x)).collect();
        let t2: Vec<_> = t.iter().map(|a| a.mapv(|x| 3.0 * x)).collect();
        assert!((mae(&p2, &t2) - 3.0 * oracle).abs() < 1e-12);
    }

    #[test]
    fn rel_l2_trivial_and_scale_invariance() {
        let t = vec![arr2(&[[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]])];
        let p: Vec<Array2<f64>> = t.iter().map(|a| a.mapv(|x| 1.1 * x)).collect();
        assert!((rel_l2(&p, &t).unwrap() - 10.0).abs() < 1e-10);
        let zero: Vec<Array2<f64>> = t.iter().map(|a| a.mapv(|_| 0.0)).collect();
        assert!((rel_l2(&zero, &t).unwrap() - 100.0).abs() < 1e-12);
        let ps: Vec<_> = p.iter().map(|a| a.mapv(|x| 7.0 * x)).collect();
        let ts: Vec<_> = t.iter().map(|a| a.mapv(|x| 7.0 * x)).collect();
        assert!((rel_l2(&ps, &ts).unwrap() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn rel_l2_two_sample_hand_computation() {
        // Sample 1: err norm 1, truth norm 2 -> 50%; sample 2: err 3, truth 4
        // -> 75%; mean 62.5%.
        let t = vec![arr2(&[[2.0, 0.0, 0.0]]), arr2(&[[0.0, 4.0, 0.0]])];
        let p = vec![arr2(&[[3.0, 0.0, 0.0]]), arr2(&[[0.0, 1.0, 0.0]])];
        assert!((rel_l2(&p, &t).unwrap() - 62.5).abs() < 1e-12);
    }

    #[test]
    fn rel_l2_zero_truth_is_an_error() {
        let t = vec![arr2(&[[1.0, 0.0, 0.0]]), Array2::zeros((1, 3))];
        let p = t.clone();
        match rel_l2(&p, &t) {
            Err(Error::ZeroTruthNorm { sample }) => assert_eq!(sample, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn r2_trivial_and_spreadsheet_oracle() {
        let t = vec![arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])];
        assert_eq!(r2(&t, &t), 1.0);
        // Predicting the pooled mean everywhere gives exactly 0.
        let mean = 3.5;
        let p: Vec<Array2<f64>> = t.iter().map(|a| a.mapv(|_| mean)).collect();
        assert!(r2(&p, &t).abs() < 1e-15);
        // Direct-sums oracle on a random case.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>()))
            .collect();
        let p: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>()))
            .collect();
        let all_t: Vec<f64> = t.iter().flat_map(|a| a.iter().copied()).collect();
        let all_p: Vec<f64> = p.iter().flat_map(|a| a.iter().copied()).collect();
        let m: f64 = all_t.iter().sum::<f64>() / all_t.len() as f64;
        let ss_res: f64 = all_p
            .iter()
            .zip(&all_t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ss_tot: f64 = all_t.iter().map(|x| (x - m) * (x - m)).sum();
        assert!((r2(&p, &t) - (1.0 - ss_res / ss_tot)).abs() < 1e-13);
    }

    #[test]
    fn report_csv_and_md_are_deterministic() {
        let rows = vec![
            ReportRow {
                model: "mpnn".into(),
                task: "specialist-high".into(),
                metrics: EvalMetrics {
                    mae: 0.0123456,
                    rel_l2: 4.0444,
                    r2: 0.998877,
                    inference_ms: 1.25,
                    params_m: 0.2988,
                },
            },
            ReportRow {
                model: "gcn".into(),
                task: "specialist-high".into(),
                metrics: EvalMetrics {
                    mae: 0.05,
                    rel_l2: 8.79,
                    r2: 0.99,
                    inference_ms: 0.9,
                    params_m: 0.0518,
                },
            },
        ];
        let csv = report_csv(&rows);
        assert_eq!(
            csv,
            "model,task,mae_mm,rel_l2_pct,r2,inference_ms,params_m\n\
             mpnn,specialist-high,0.012346,4.0444,0.998877,1.2500,0.2988\n\
             gcn,specialist-high,0.050000,8.7900,0.990000,0.9000,0.0518\n"
        );
        assert_eq!(csv, report_csv(&rows));
        let md = report_md(&rows);
        assert!(md.starts_with(
            "| Model | Task | MAE (mm) ↓ | R-L2 (%) ↓ | R² Score ↑ | Inference (ms) ↓ | Params (M) ↓ |"
        ));
        assert_eq!(md.lines().count(), 4);
        // Empty input: header only.
        assert_eq!(report_csv(&[]).lines().count(), 1);
    }

    #[test]
    fn svg_plot_is_deterministic_and_wellformed() {
        let series = vec![
            Series {
                name: "train".into(),
                values: vec![1.0, 0.5, 0.25, 0.12, 0.06],
            },
            Series {
                name: "val".into(),
                values: vec![1.1, 0.7, 0.4, 0.3, 0.28],
            },
        ];
        let a = plot_svg("Validation Loss Curves", &series);
        let b = plot_svg("Validation Loss Curves", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("<polyline"));
        assert!(a.trim_end().ends_with("</svg>"));
        // Empty series still yields a valid document.
        let e = plot_svg("empty", &[]);
        assert!(e.starts_with("<svg") && e.contains("</svg>"));
    }

    #[test]
    fn benchmark_inference_is_stable_and_monotone_in_width() {
        use crate::dataset::Task;
        use crate::gnn::{Arch, ModelConfig};
        let topo = crate::dataset::Topology {
            n_nodes: 4,
            tets: vec![[0, 1, 2, 3]],
            edges: vec![[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]],
            fixed_nodes: vec![0],
            load_faces: vec![[1, 2, 3]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let graphs = vec![GraphData {
            features: Array2::from_shape_fn((4, 16), |_| rng.gen::<f64>() - 0.5),
            targets: Array2::zeros((4, 3)),
        }];
        let model = |hidden: usize| {
            crate::gnn::Model::new(
                ModelConfig {
                    hidden,
                    ..ModelConfig::new(Arch::Gcn, Task::Generalist)
                },
                0,
            )
            .unwrap()
        };
        let small = model(8);
        let t1 = benchmark_inference(&small, &topo, &graphs).unwrap();
        let t2 = benchmark_inference(&small, &topo, &graphs).unwrap();
        assert!(t1.is_finite() && t1 > 0.0);
        assert!(
            (t1 - t2).abs() / t1.max(t2) < 0.5,
            "unstable medians {t1} vs {t2}"
        );
        let big = model(256);
        let t3 = benchmark_inference(&big, &topo, &graphs).unwrap();
        assert!(t3 > t1, "width 256 ({t3} ms) should beat width 8 ({t1} ms)");
    }
}
