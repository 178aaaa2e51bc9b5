//! Acceptance suite: one line per criterion, with the measured value, its
//! bound and the wall-clock time against the time budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softprop_cli::pipeline::{self, reconstruct_and_score, run_forward};
use softprop_cli::Scenario;
use softprop_core::constraints::pressure_row;
use softprop_core::devices::{FingerSpec, StripSpec, KPA_TO_N_PER_MM2};
use softprop_core::fem::{quasi_static_step, FixedEfforts, LoadVector, StepOptions};
use softprop_core::geometry::anchor_position;
use softprop_core::inverse::{solve_qp, QpProblem};
use softprop_core::sensor::{Preset, Regressor};
use softprop_core::{ElasticBody, Material, SystemState, TriMesh};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn preset(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.json"));
    Scenario::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm
}

/// Rest configuration of the strip preset, perturbed and rigidly rotated.
fn random_strip_config(body: &ElasticBody, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let theta: f64 = rng.random_range(-1.0..1.0);
    let (s, c) = theta.sin_cos();
    body.mesh()
        .vertices()
        .iter()
        .flat_map(|v| {
            let x = v.x + rng.random_range(-0.5..0.5);
            let y = v.y + rng.random_range(-0.5..0.5);
            [c * x - s * y, s * x + c * y]
        })
        .collect()
}

fn strip_body() -> ElasticBody {
    StripSpec::default().build().unwrap().model.body().clone()
}

fn c1_gradient() -> Outcome {
    let body = strip_body();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let q = random_strip_config(&body, &mut rng);
        let f = body.internal_forces(&q).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..q.len())
            .map(|i| {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                (body.energy(&qp).unwrap() - body.energy(&qm).unwrap()) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_norm(&f, &fd));
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} <= 1e-6 over 10 configurations"))
}

fn c2_objectivity() -> Outcome {
    let body = strip_body();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let q = random_strip_config(&body, &mut rng);
        let phi: f64 = rng.random_range(-3.0..3.0);
        let (s, c) = phi.sin_cos();
        let rot = |v: &[f64]| -> Vec<f64> { v.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect() };
        let f = body.internal_forces(&q).unwrap();
        let fr = body.internal_forces(&rot(&q)).unwrap();
        worst = worst.max(rel_norm(&fr, &rot(&f)));
    }
    outcome(worst <= 1e-8, format!("worst relative deviation {worst:.2e} <= 1e-8"))
}

fn c3_cantilever() -> Outcome {
    let (l, h) = (100.0, 4.0);
    let mesh = TriMesh::grid(l, h, 400, 16, |_, _| true).unwrap();
    let mat = Material::new(1e6, 0.0, 10.0).unwrap();
    let body = ElasticBody::new(mesh.clone(), mat).unwrap();
    let tip: Vec<usize> = (0..mesh.vertices().len()).filter(|&v| (mesh.vertices()[v].x - l).abs() < 1e-9).collect();
    let row = tip.iter().map(|&v| (2 * v + 1, 1.0 / tip.len() as f64)).collect();
    let efforts = FixedEfforts { rows: vec![row] };
    let ei = mat.modulus() * mat.thickness * h.powi(3) / 12.0;
    let beam = l.powi(3) / (3.0 * ei);
    let force = 0.01 / beam;
    let mut state = SystemState::at_rest(&mesh, 1);
    state.lambda[0] = force;
    let (next, _) = quasi_static_step(&body, &state, &LoadVector::zeros(body.dof_count()), &efforts, &StepOptions::default()).unwrap();
    let deflection = tip.iter().map(|&v| next.q[2 * v + 1] - mesh.vertices()[v].y).sum::<f64>() / tip.len() as f64;
    let err = (deflection / force / beam - 1.0).abs();
    outcome(err <= 0.05, format!("tip compliance off Euler-Bernoulli by {:.2} % <= 5 %", 100.0 * err))
}

/// Minimum of a convex QP over its box by repeated grid refinement.
fn grid_minimum(p: &QpProblem) -> f64 {
    let n = p.dim();
    let mut lo: Vec<f64> = p.bounds.iter().map(|b| b.0).collect();
    let mut hi: Vec<f64> = p.bounds.iter().map(|b| b.1).collect();
    for (&i, &v) in &p.equality {
        lo[i] = v;
        hi[i] = v;
    }
    let g = 40usize;
    let mut best = (f64::INFINITY, vec![0.0; n]);
    for _ in 0..60 {
        let step: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / g as f64).collect();
        let total = (g + 1).pow(n as u32);
        for k in 0..total {
            let mut idx = k;
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let j = idx % (g + 1);
                    idx /= g + 1;
                    lo[i] + step[i] * j as f64
                })
                .collect();
            let v = p.objective(&DVector::from_vec(x.clone()));
            if v < best.0 {
                best = (v, x);
            }
        }
        if step.iter().all(|&s| s < 1e-11) {
            break;
        }
        for i in 0..n {
            let (b0, b1) = (p.bounds[i].0.max(lo[i]), p.bounds[i].1.min(hi[i]));
            lo[i] = (best.1[i] - 4.0 * step[i]).max(b0);
            hi[i] = (best.1[i] + 4.0 * step[i]).min(b1);
        }
    }
    best.0
}

fn c4_qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_gap, mut worst_kkt) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let n = rng.random_range(1..=3);
        let m = n + rng.random_range(0..=2);
        let w = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let d = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
        let bounds = (0..n).map(|_| (rng.random_range(-2.0..0.0), rng.random_range(0.0..2.0))).collect::<Vec<(f64, f64)>>();
        let mut p = QpProblem::new(w, d, bounds.clone());
        if rng.random::<f64>() < 0.4 {
            let i = rng.random_range(0..n);
            p = p.with_equality(i, rng.random_range(bounds[i].0..bounds[i].1));
        }
        let sol = solve_qp(&p).unwrap();
        let grid = grid_minimum(&p);
        worst_gap = worst_gap.max((sol.objective - grid).abs() / (1.0 + grid.abs()));
        worst_kkt = worst_kkt.max(sol.kkt_residual);
    }
    outcome(
        worst_gap <= 1e-6 && worst_kkt <= 1e-8,
        format!("objective gap {worst_gap:.2e} <= 1e-6, KKT residual {worst_kkt:.2e} <= 1e-8 over 50 problems"),
    )
}

fn c5_length_preservation() -> Outcome {
    let mut d = FingerSpec::default().build().unwrap();
    let mut worst = 0.0_f64;
    for k in 0..=18 {
        let p = 0.1 * k as f64;
        d.model.solve_forward(&d.efforts(p, &[0.0]).unwrap()).unwrap();
        let c = d.model.constraints();
        let layer = c.length.as_ref().unwrap();
        let mesh = d.model.body().mesh();
        let q = &d.model.state().q;
        for (i, w) in layer.anchors.windows(2).enumerate() {
            let len = anchor_position(mesh, &w[0], q).distance(anchor_position(mesh, &w[1], q));
            worst = worst.max((len / layer.rest_lengths[i] - 1.0).abs());
        }
    }
    outcome(worst <= 1e-6, format!("worst segment stretch {worst:.2e} <= 1e-6 over 19 pressure frames up to 1.8 kPa"))
}

fn c6_closed_chamber() -> Outcome {
    let mut d = FingerSpec::default().build().unwrap();
    let lambda = 1.2 * KPA_TO_N_PER_MM2;
    let mut worst = 0.0_f64;
    let mut largest_node = 0.0_f64;
    for stage in 0..2 {
        if stage == 1 {
            d.model.solve_forward(&d.efforts(1.2, &[2.0]).unwrap()).unwrap();
        }
        let c = d.model.constraints();
        let row = pressure_row(c.pressure.as_ref().unwrap(), &d.model.state().q);
        let (mut fx, mut fy) = (0.0, 0.0);
        for &(i, v) in &row {
            if i % 2 == 0 {
                fx += lambda * v;
            } else {
                fy += lambda * v;
            }
            largest_node = largest_node.max((lambda * v).abs());
        }
        worst = worst.max(fx.abs()).max(fy.abs());
    }
    outcome(worst <= 1e-9 && largest_node > 1e-3, format!("net chamber force {worst:.2e} N <= 1e-9 N (largest nodal load {largest_node:.3} N)"))
}

fn c7_force_exact() -> Outcome {
    let s = preset("finger");
    let rec = run_forward(&s, &s.schedule, s.seed).unwrap();
    let (m, _) = reconstruct_and_score(&rec, None, &s).unwrap();
    let e = m.force_error_pct.unwrap();
    outcome(e <= 5.0, format!("mean force error {e:.3} % of range <= 5 %"))
}

fn c8_force_learned() -> Outcome {
    let s = preset("finger");
    let trained = pipeline::train(&s, s.seed).unwrap();
    let rec = run_forward(&s, &s.schedule, s.seed).unwrap();
    let (m, _) = reconstruct_and_score(&rec, Some(&trained.regressor), &s).unwrap();
    let e = m.force_error_pct.unwrap();
    outcome(e <= 15.0, format!("mean force error {e:.3} % of range <= 15 %"))
}

fn c9_extrapolation() -> Outcome {
    let s = preset("strip");
    let trained = pipeline::train(&s, s.seed).unwrap();
    let rec = run_forward(&s, &s.schedule, s.seed).unwrap();
    let (m, _) = reconstruct_and_score(&rec, Some(&trained.regressor), &s).unwrap();
    let (end, tip) = (m.sensor_end_error_pct, m.tip_error_pct);
    outcome(end <= 5.0 && tip <= 7.0, format!("sensorized end {end:.3} % <= 5 %, unsensorized tip {tip:.3} % <= 7 %"))
}

fn c10_calibration() -> Outcome {
    let s = preset("finger");
    let (report, _) = pipeline::calibrate(&s, None, s.seed).unwrap();
    let e_err = (report.young_modulus_pa / 1.37e6 - 1.0).abs();
    let s_err = (report.scaling_factor / 1.5 - 1.0).abs();
    outcome(
        e_err <= 0.05 && s_err <= 0.10,
        format!(
            "E = {:.4} MPa ({:.3} % <= 5 %), s = {:.4} ({:.3} % <= 10 %)",
            report.young_modulus_pa / 1e6,
            100.0 * e_err,
            report.scaling_factor,
            100.0 * s_err
        ),
    )
}

fn c11_regressor_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for (preset, segments, width) in [(Preset::Strip, 8, 8), (Preset::Finger, 6, 12)] {
        let reg = Regressor::from_preset(preset, segments, width, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..reg.input_width()).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let ts: Vec<Vec<f64>> = (0..4).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let t: Vec<&[f64]> = ts.iter().map(Vec::as_slice).collect();
        let (_, grad) = reg.loss_and_gradient(&x, &t);
        let theta = reg.params();
        let mut probe = reg.clone();
        let h = 1e-6;
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] = theta[i] + h;
                probe.set_params(&p).unwrap();
                let up = probe.loss(&x, &t);
                p[i] = theta[i] - h;
                probe.set_params(&p).unwrap();
                let down = probe.loss(&x, &t);
                (up - down) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_norm(&grad, &fd));
    }
    outcome(worst <= 1e-4, format!("worst relative gradient error {worst:.2e} <= 1e-4 on both presets"))
}

/// Strip preset with a short training run, and the finger preset with a short
/// validation trace, so both can be run twice within the budget.
fn determinism_configs(dir: &Path) -> (PathBuf, PathBuf) {
    let mut strip = preset("strip");
    if let softprop_cli::scenario::Schedule::Random { duration_s, .. } = &mut strip.training.schedule {
        *duration_s = 10.0;
    }
    strip.training.epochs = 5;
    let mut finger = preset("finger");
    if let Some(c) = &mut finger.calibration {
        c.validation = softprop_cli::scenario::Schedule::Keyframes {
            duration_s: 0.1,
            keyframes: vec![softprop_cli::scenario::Keyframe { time_s: 0.1, pressure_kpa: 1.2, force_n: vec![3.0] }],
        };
    }
    let (a, b) = (dir.join("strip.json"), dir.join("finger.json"));
    std::fs::write(&a, strip.to_json()).unwrap();
    std::fs::write(&b, finger.to_json()).unwrap();
    (a, b)
}

fn run_all(strip: &Path, finger: &Path, out: &Path) {
    let bin = env!("CARGO_BIN_EXE_softprop");
    let recording = out.join("recording.csv");
    let exact = out.join("exact");
    let steps: [(&str, &Path, Vec<&std::ffi::OsStr>); 5] = [
        ("simulate", strip, vec![]),
        ("train", strip, vec![]),
        ("estimate", strip, vec![]),
        ("estimate", strip, vec!["--exact-shape".as_ref(), "--recording".as_ref(), recording.as_os_str()]),
        ("calibrate", finger, vec![]),
    ];
    for (cmd, cfg, extra) in steps {
        let target = if extra.is_empty() { out } else { exact.as_path() };
        let st = Command::new(bin).arg(cmd).arg("--config").arg(cfg).args(["--seed", "42", "--out"]).arg(target).args(extra).output().unwrap();
        assert!(st.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&st.stderr));
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn c12_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (strip, finger) = determinism_configs(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::thread::scope(|s| {
        let ha = s.spawn(|| run_all(&strip, &finger, &a));
        let hb = s.spawn(|| run_all(&strip, &finger, &b));
        ha.join().unwrap();
        hb.join().unwrap();
    });
    let fa = files(&a);
    let mut differing = Vec::new();
    for p in &fa {
        let q = b.join(p.strip_prefix(&a).unwrap());
        if std::fs::read(p).unwrap() != std::fs::read(&q).unwrap_or_default() {
            differing.push(p.strip_prefix(&a).unwrap().display().to_string());
        }
    }
    let same_set = fa.len() == files(&b).len();
    outcome(
        differing.is_empty() && same_set && fa.len() >= 10,
        format!("{} output files from 4 subcommands compared, {} differ {:?}", fa.len(), differing.len(), differing),
    )
}

fn main() {
    type Criterion = (usize, &'static str, f64, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        (1, "elasticity gradient", 5.0, c1_gradient),
        (2, "corotational objectivity", 1.0, c2_objectivity),
        (3, "cantilever oracle", 5.0, c3_cantilever),
        (4, "QP oracle", 10.0, c4_qp_oracle),
        (5, "length-constraint preservation", 30.0, c5_length_preservation),
        (6, "closed-chamber identity", 1.0, c6_closed_chamber),
        (7, "force recovery, exact shape", 60.0, c7_force_exact),
        (8, "force recovery, learned sensing", 300.0, c8_force_learned),
        (9, "shape extrapolation", 300.0, c9_extrapolation),
        (10, "calibration recovery", 120.0, c10_calibration),
        (11, "regressor gradient check", 10.0, c11_regressor_gradient),
        (12, "determinism", 60.0, c12_determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let pass = result.pass && secs < budget;
        if !pass {
            failed += 1;
        }
        println!("criterion {id:>2} {:<34} {}  {}; {secs:.2} s < {budget} s", name, if pass { "PASS" } else { "FAIL" }, result.detail);
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
