//! Oracles shared by the integration and acceptance targets. Everything here
//! is written out by hand from the definitions and only calls the library for
//! forward passes, never for the quantities being checked.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rgs_core::datagen::generate_sample;
use rgs_core::nets::Parameterized;
use rgs_core::vqvae::TermWeights;
use rgs_core::{ConditionVector, ConditionalPrior, GeneratorConfig, MotionAllocation, PriorConfig, VqVae, VqVaeConfig};

/// `Rz(yaw) · Ry(pitch) · Rx(roll)` with the entries written out.
pub fn rot_zyx(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Rodrigues' formula for a unit axis.
pub fn axis_angle(u: Vector3<f64>, theta: f64) -> Matrix3<f64> {
    let k = Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0);
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

/// Uniform rotation from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    v / v.norm()
}

/// Plain arccos geodesic distance.
pub fn acos_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let tr = (a * b.transpose()).trace();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Reconstruction term for a predicted increment vector.
pub fn rec_oracle(pred: &[f64], y: &MotionAllocation, c: &ConditionVector, lambda: f64) -> f64 {
    let t = y.to_array();
    let eye = |d: &[f64]| rot_zyx(c.eye.yaw + d[0], c.eye.pitch + d[1], 0.0);
    let head = |d: &[f64]| rot_zyx(c.head.yaw + d[2], c.head.pitch + d[3], c.head.roll + d[4]);
    acos_distance(&eye(pred), &eye(&t)) + lambda * acos_distance(&head(pred), &head(&t))
}

pub fn focal_oracle(logits: &[f64], label: usize, gamma: f64) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let p = (logits[label] - m).exp() / z;
    -(1.0 - p).powf(gamma) * p.ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

fn perturb<M: Parameterized>(model: &mut M, group: usize, index: usize, delta: f64) {
    model.param_groups()[group].values[index] += delta;
}

fn central_difference<M: Parameterized>(model: &mut M, group: usize, index: usize, mut f: impl FnMut(&M) -> f64) -> f64 {
    perturb(model, group, index, FD_STEP);
    let plus = f(model);
    perturb(model, group, index, -2.0 * FD_STEP);
    let minus = f(model);
    perturb(model, group, index, FD_STEP);
    (plus - minus) / (2.0 * FD_STEP)
}

type Objective<'a> = dyn Fn(&VqVae) -> f64 + 'a;

#[derive(Debug, Default)]
pub struct GradientReport {
    /// Worst relative error per loss term.
    pub worst: BTreeMap<&'static str, f64>,
    pub configurations: usize,
    pub checked: usize,
    /// Stop-gradient violations found (groups receiving a term they must not).
    pub routing_violations: Vec<String>,
}

pub fn random_problem(seed: u64) -> (VqVae, ConditionalPrior, ConditionVector, MotionAllocation, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vq = VqVae::new(VqVaeConfig::default(), &mut rng).unwrap();
    let prior = ConditionalPrior::new(PriorConfig::default(), &vq, &mut rng).unwrap();
    let s = generate_sample(&mut rng, &GeneratorConfig::default()).unwrap().sample;
    let label = rng.random_range(0..vq.codebook().len());
    (vq, prior, s.condition, s.allocation, label)
}

/// Compares the analytic gradients of every stage-1 term and of the focal
/// term with central differences on `per_group` random parameters per group.
///
/// The quantized latent is handled with the straight-through surrogate
/// `z_e(θ) + sg(e_k - z_e)`, the embed term sees `sg(z_e)` and the commit
/// term `sg(e_k)`; the selected code is held fixed.
pub fn check_gradients(configurations: u64, per_group: usize) -> GradientReport {
    let mut report = GradientReport::default();
    for seed in 0..configurations {
        let (mut vq, mut prior, c, y, label) = random_problem(1000 + seed);
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        let cfg = *vq.config();
        let z_e0 = vq.encode(&y, &c).unwrap();
        let k = vq.quantize(&z_e0).unwrap().index;
        let e_k0 = vq.codebook().entry(k).to_vec();
        let offset: Vec<f64> = e_k0.iter().zip(&z_e0).map(|(e, z)| e - z).collect();

        let rec = |m: &VqVae| {
            let z: Vec<f64> = m.encode(&y, &c).unwrap().iter().zip(&offset).map(|(a, b)| a + b).collect();
            rec_oracle(&m.decode(&z, &c).unwrap().to_array(), &y, &c, cfg.lambda_rc)
        };
        let embed = |m: &VqVae| sq_dist(&z_e0, m.codebook().entry(k));
        let commit = |m: &VqVae| cfg.beta * sq_dist(&m.encode(&y, &c).unwrap(), &e_k0);

        let names: Vec<String> = vq.param_groups().iter().map(|g| g.name.clone()).collect();
        let terms: [(&str, TermWeights, &Objective); 3] = [
            ("reconstruction", TermWeights { rec: 1.0, embed: 0.0, commit: 0.0 }, &rec),
            ("embed", TermWeights { rec: 0.0, embed: 1.0, commit: 0.0 }, &embed),
            ("commit", TermWeights { rec: 0.0, embed: 0.0, commit: 1.0 }, &commit),
        ];
        for (term, weights, f) in terms {
            let mut grads = vq.zero_grads();
            let losses = vq.accumulate_gradients(&y, &c, weights, &mut grads).unwrap();
            assert_eq!(losses.code, k, "training pass picked a different code");
            for (g, name) in names.iter().enumerate() {
                let is_book = name == "codebook";
                let touched = grads[g].iter().any(|v| *v != 0.0);
                if (term == "embed") != is_book && touched {
                    report.routing_violations.push(format!("{term} reached {name} (seed {seed})"));
                }
                for _ in 0..per_group {
                    let i = pick.random_range(0..grads[g].len());
                    let numeric = central_difference(&mut vq, g, i, f);
                    let err = relative_error(grads[g][i], numeric);
                    let worst = report.worst.entry(term).or_insert(0.0);
                    *worst = worst.max(err);
                    report.checked += 1;
                }
            }
        }

        let gamma = prior.config().gamma;
        let focal = |p: &ConditionalPrior| focal_oracle(&p.logits(&c).unwrap(), label, gamma);
        let mut grads = prior.zero_grads();
        prior.accumulate_gradients(&vq, &c, &y, label, &mut grads).unwrap();
        for _ in 0..per_group * 4 {
            let i = pick.random_range(0..grads[0].len());
            let numeric = central_difference(&mut prior, 0, i, focal);
            let worst = report.worst.entry("focal").or_insert(0.0);
            *worst = worst.max(relative_error(grads[0][i], numeric));
            report.checked += 1;
        }
        report.configurations += 1;
    }
    report
}

pub fn corpus() -> Vec<rgs_core::reasoner::Scenario> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    rgs_core::reasoner::Scenario::load_dir(&dir).unwrap()
}

/// Pinhole back-projection of the gaze point written out by hand, then
/// `R · p + t` with the row-major rotation.
pub fn oracle_position(s: &rgs_core::reasoner::Scenario, t: usize, id: &str) -> [f64; 3] {
    let inst = s.cycles[t].instances.iter().find(|i| i.id == id).unwrap();
    let b = match (inst.category.as_str(), inst.face_bbox) {
        ("person", Some(face)) => face,
        _ => inst.bbox,
    };
    let (u, v) = ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0);
    let c = &s.camera;
    let p = [inst.depth * (u - c.cx) / c.fx, inst.depth * (v - c.cy) / c.fy, inst.depth];
    let r = &s.base_from_camera.rotation;
    let tr = &s.base_from_camera.translation;
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + tr[i])
}

/// Angle between two vectors, accurate at small angles.
pub fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Gaze ray after the shift: head rotation applied to the eye-in-head ray.
pub fn gaze_oracle(c: &ConditionVector, y: &MotionAllocation) -> Vector3<f64> {
    let d = y.to_array();
    let head = rot_zyx(c.head.yaw + d[2], c.head.pitch + d[3], c.head.roll + d[4]);
    let eye = rot_zyx(c.eye.yaw + d[0], c.eye.pitch + d[1], 0.0);
    head * eye * Vector3::x()
}
