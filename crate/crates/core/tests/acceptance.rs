//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Run with `cargo test -p rgs-core --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use common::*;
use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgs_core::datagen::Dataset;
use rgs_core::reasoner::{
    replay_evaluate, run_scenario, step_cycle, Backend, MemoryBuffer, Regularity, Scenario, ScriptedBackend,
    HISTORY_CAPACITY,
};
use rgs_core::so3::geodesic_distance;
use rgs_core::trainer::{
    diversity_probe, evaluate_stage1, infer, record_codes, train_stage1, train_stage2, InferenceMode, Stage1Result,
    Stage2Result,
};
use rgs_core::{GeneratorConfig, RotationMatrix, Split, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, title: &str, elapsed: Duration, budget: Duration, outcome: Outcome) -> bool {
    let pass = outcome.pass && elapsed < budget;
    println!(
        "criterion {id} {title:<28} {}  {} [{:.2} s, budget {} s]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn rot(m: Matrix3<f64>) -> RotationMatrix {
    RotationMatrix::try_from_matrix(m).unwrap()
}

fn rotation_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut oracle, mut symmetry, mut identity, mut invariance) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..1000 {
        let a = random_rotation(&mut rng);
        // include tiny and near-half-turn angles
        let theta = match i % 10 {
            0 => 1e-9 * (i as f64 + 1.0),
            1 => std::f64::consts::PI - 1e-6,
            _ => rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::PI),
        };
        let b = a * axis_angle(random_unit(&mut rng), theta);
        let q = random_rotation(&mut rng);
        let (ra, rb) = (rot(a), rot(b));
        let d = geodesic_distance(&ra, &rb);
        oracle = oracle.max((d - theta).abs());
        symmetry = symmetry.max((d - geodesic_distance(&rb, &ra)).abs());
        identity = identity.max(geodesic_distance(&ra, &ra));
        invariance = invariance.max((d - geodesic_distance(&rot(q * a), &rot(q * b))).abs());
    }
    let worst = oracle.max(symmetry).max(identity).max(invariance);
    Outcome {
        pass: worst <= 1e-9,
        detail: format!(
            "max errors: oracle {oracle:.1e}, symmetry {symmetry:.1e}, identity {identity:.1e}, left-invariance {invariance:.1e} rad"
        ),
    }
}

fn gradients() -> Outcome {
    let r = check_gradients(20, 8);
    let worst = r.worst.values().cloned().fold(0.0, f64::max);
    let terms: Vec<String> = r.worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Outcome {
        pass: worst < 1e-4 && r.routing_violations.is_empty() && r.configurations >= 20,
        detail: format!(
            "{} configurations, {} checks, worst relative error {} ; routing violations {}",
            r.configurations,
            r.checked,
            terms.join(", "),
            r.routing_violations.len()
        ),
    }
}

fn memorization() -> Outcome {
    let gen = GeneratorConfig { n_samples: 16, ..GeneratorConfig::default() };
    let generated = Dataset::generate(&gen, 0).unwrap();
    let all = Dataset::from_samples(generated.samples, Split::Train, gen, 0);
    let config = TrainConfig { stage1_epochs: 2000, codebook_size: 16, ..TrainConfig::default() };
    let result = train_stage1(&all, &config).unwrap();
    let e = evaluate_stage1(&result.model, &all.train()).unwrap();
    let summed = e.eye_mgd + e.head_mgd;
    Outcome {
        pass: summed < 0.5,
        detail: format!("train MGD eye {:.3} + head {:.3} = {summed:.3} deg (< 0.5)", e.eye_mgd, e.head_mgd),
    }
}

struct FullRun {
    dataset: Dataset,
    stage1: Stage1Result,
    stage2: Stage2Result,
}

fn full_run(seed: u64) -> FullRun {
    let dataset = Dataset::generate(&GeneratorConfig::default(), seed).unwrap();
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let stage1 = train_stage1(&dataset, &config).unwrap();
    let labels = record_codes(&stage1.model, &dataset.train()).unwrap();
    let stage2 = train_stage2(&stage1.model, &labels, &dataset, &config).unwrap();
    FullRun { dataset, stage1, stage2 }
}

fn reproduction(run: &FullRun) -> Outcome {
    let (b1, first) = (run.stage1.best(), &run.stage1.metrics[0]);
    let b2 = run.stage2.best();
    let a = b1.val_eye_mgd <= 6.0 && b1.val_head_mgd <= 9.0;
    let b = b1.val_eye_mgd < first.val_eye_mgd && b1.val_head_mgd < first.val_head_mgd;
    let gap = b2.summed_mgd() - b1.summed_mgd();
    let c = gap <= 1.5;
    Outcome {
        pass: a && b && c,
        detail: format!(
            "(a) stage-1 best eye {:.2} / head {:.2} deg at epoch {}; (b) epoch 1 eye {:.2} / head {:.2}; \
             (c) stage-2 best eye {:.2} / head {:.2}, gap {gap:.2} deg [{}{}{}]",
            b1.val_eye_mgd,
            b1.val_head_mgd,
            run.stage1.best_epoch,
            first.val_eye_mgd,
            first.val_head_mgd,
            b2.val_eye_mgd,
            b2.val_head_mgd,
            if a { "a" } else { "-" },
            if b { "b" } else { "-" },
            if c { "c" } else { "-" },
        ),
    }
}

fn diversity(run: &FullRun) -> Outcome {
    let probe_set = run.dataset.validation();
    let probe = diversity_probe(&run.stage2.prior, &probe_set, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_tv = 0f64;
    for s in probe_set.iter().take(20) {
        let mut counts = vec![0usize; run.stage1.model.codebook().len()];
        let mut pi = None;
        for _ in 0..1000 {
            let inf = infer(
                &run.stage1.model,
                &run.stage2.prior,
                &s.condition,
                InferenceMode::Sample { floor: 0.0 },
                &mut rng,
            )
            .unwrap();
            counts[inf.code] += 1;
            pi.get_or_insert(inf.pi);
        }
        let pi = pi.unwrap();
        let tv: f64 = 0.5 * counts.iter().zip(pi.probs()).map(|(&n, p)| (n as f64 / 1000.0 - p).abs()).sum::<f64>();
        worst_tv = worst_tv.max(tv);
    }
    Outcome {
        pass: probe.fraction() >= 0.5 && worst_tv <= 0.05,
        detail: format!(
            "{}/{} probe conditions with >= 2 codes above 5%; worst total variation {worst_tv:.4} over 1000 draws",
            probe.multimodal,
            probe.modes.len()
        ),
    }
}

fn dataset_integrity(dataset: &Dataset) -> Outcome {
    let cfg = GeneratorConfig::default();
    let l = cfg.limits;
    let mut worst = 0f64;
    let mut violations = 0;
    for s in &dataset.samples {
        let (c, y) = (&s.condition, &s.allocation);
        worst = worst.max(angle(&gaze_oracle(c, y), &nalgebra::Vector3::from(c.target)).to_degrees());
        let d = y.to_array();
        let checks = [
            (c.eye.yaw, l.eye_yaw),
            (c.eye.pitch, l.eye_pitch),
            (c.head.yaw, l.head_yaw),
            (c.head.pitch, l.head_pitch),
            (c.head.roll, l.head_roll),
            (c.eye.yaw + d[0], l.eye_yaw),
            (c.eye.pitch + d[1], l.eye_pitch),
            (c.head.yaw + d[2], l.head_yaw),
            (c.head.pitch + d[3], l.head_pitch),
            (c.head.roll + d[4], l.head_roll),
        ];
        violations += checks.iter().filter(|(v, lim)| v.to_degrees().abs() > lim + 1e-9).count();
    }
    let (n, tr, va) = (dataset.len(), dataset.train().len(), dataset.validation().len());
    Outcome {
        pass: worst <= 2.0 && violations == 0 && (n, tr, va) == (805, 644, 161),
        detail: format!(
            "{n} samples ({tr}/{va}); worst gaze-ray error {worst:.3} deg (<= 2); {violations} limit violations"
        ),
    }
}

fn reasoner() -> Outcome {
    let scenarios = corpus();
    let scored: Vec<&Scenario> = scenarios.iter().filter(|s| s.evaluation().is_some()).collect();
    let per_group_ok = Regularity::ALL
        .iter()
        .all(|g| scored.iter().filter(|s| s.group == *g).count() >= 3);
    let script = |name: &'static str| move |s: &Scenario| -> Box<dyn Backend> {
        Box::new(ScriptedBackend::new(s.scripts[name].clone()))
    };
    let oracle = replay_evaluate(&scenarios, script("oracle"));
    let adversarial = replay_evaluate(&scenarios, script("adversarial"));
    let rate = |r: &rgs_core::reasoner::ReplayReport, want: f64| {
        r.groups.values().all(|g| g.success_rate() == Some(want))
    };

    let mut worst_position = 0f64;
    let mut max_history = 0;
    for s in &scenarios {
        let mut backend = ScriptedBackend::new(s.scripts["oracle"].clone());
        for log in run_scenario(s, &mut backend) {
            if let Some(id) = log.selected() {
                let want = oracle_position(s, log.t, id);
                for (a, b) in log.record.position.iter().zip(want) {
                    worst_position = worst_position.max((a - b).abs());
                }
            }
        }
        // several passes over the scenario to push the buffer past capacity
        let mut buffer = MemoryBuffer::default();
        let mut backend = ScriptedBackend::new(s.scripts["oracle"].clone());
        for _ in 0..4 {
            for t in 0..s.cycles.len() {
                step_cycle(s, t, &mut buffer, &mut backend);
                max_history = max_history.max(buffer.history().len());
            }
        }
    }
    let rates: Vec<String> = oracle
        .groups
        .iter()
        .map(|(g, s)| format!("{g:?} {:.0}%", 100.0 * s.success_rate().unwrap_or(0.0)))
        .collect();
    Outcome {
        pass: per_group_ok
            && rate(&oracle, 1.0)
            && rate(&adversarial, 0.0)
            && worst_position <= 1e-6
            && max_history <= HISTORY_CAPACITY,
        detail: format!(
            "{} scored scenarios; oracle {}; adversarial all 0%: {}; position error {worst_position:.1e} m; max history {max_history}",
            scored.len(),
            rates.join(" "),
            rate(&adversarial, 0.0)
        ),
    }
}

fn determinism(first: &FullRun) -> Outcome {
    let again = full_run(0);
    let same_metrics = serde_json::to_string(first.stage1.best()).unwrap()
        == serde_json::to_string(again.stage1.best()).unwrap()
        && serde_json::to_string(first.stage2.best()).unwrap() == serde_json::to_string(again.stage2.best()).unwrap();
    let same_checkpoints = first.stage1.checkpoint.fingerprint() == again.stage1.checkpoint.fingerprint()
        && first.stage2.checkpoint.fingerprint() == again.stage2.checkpoint.fingerprint();
    Outcome {
        pass: same_metrics && same_checkpoints,
        detail: format!(
            "best metrics identical: {same_metrics}; checkpoint fingerprints identical: {same_checkpoints}"
        ),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = true;

    let (o, t) = timed(rotation_math);
    all &= report(1, "rotation math", t, secs(1), o);
    let (o, t) = timed(gradients);
    all &= report(2, "gradient verification", t, secs(30), o);
    let (o, t) = timed(memorization);
    all &= report(3, "memorization capacity", t, secs(120), o);
    let (run, t) = timed(|| full_run(0));
    all &= report(4, "training reproduction", t, secs(600), reproduction(&run));
    let (o, t) = timed(|| diversity(&run));
    all &= report(5, "diversity", t, secs(60), o);
    let (o, t) = timed(|| dataset_integrity(&run.dataset));
    all &= report(6, "dataset integrity", t, secs(60), o);
    let (o, t) = timed(reasoner);
    all &= report(7, "reasoner plumbing", t, secs(10), o);
    let (o, t) = timed(|| determinism(&run));
    all &= report(8, "determinism", t, secs(600), o);

    if !all {
        std::process::exit(1);
    }
}
