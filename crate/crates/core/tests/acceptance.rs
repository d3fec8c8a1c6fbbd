//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevmotion::geom::{OrientedBox, Vec2};
use bevmotion::loss::{nll_gradient, nll_loss, GroundTruth, MixtureOutput};
use bevmotion::metrics::{average_precision_ranked, evaluate, min_ade, min_fde, MetricsConfig, PredictionRecord};
use bevmotion::model::baseline::constant_velocity_in_frame;
use bevmotion::model::{
    backward_features, cosine_warm_restart_lr, predict_scenes, to_world_record, train_cache_dir, ModelConfig,
    ModelParams, SparseFeatures, TrainingConfig,
};
use bevmotion::raster::cache::{decode_cache, encode_cache};
use bevmotion::raster::{local_future, rasterize, rasterize_dataset, read_cache, write_cache, RasterConfig};
use bevmotion::synth::{generate, generate_labeled, FutureMode, ScenarioKind, ScenarioSpec};
use bevmotion::Error;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// max |a − b| / max(‖a‖∞, ‖b‖∞)
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

const H: f64 = 1e-5;

fn central_difference(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + H;
            let up = f(x);
            x[i] = x0 - H;
            let down = f(x);
            x[i] = x0;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_case(rng: &mut ChaCha8Rng, k: usize, horizon: usize) -> (MixtureOutput, GroundTruth) {
    let gt: Vec<Vec2> = (0..horizon)
        .map(|_| Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
        .collect();
    let mut means = Vec::with_capacity(k * horizon * 2);
    for _ in 0..k {
        let spread = rng.random_range(0.05..0.3);
        for p in &gt {
            means.push(p.x + rng.random_range(-1.0..1.0) * spread);
            means.push(p.y + rng.random_range(-1.0..1.0) * spread);
        }
    }
    let logits = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let valid = (0..horizon).map(|_| rng.random_bool(0.9)).collect();
    let mut valid: Vec<bool> = valid;
    valid[0] = true;
    (
        MixtureOutput::new(means, logits, k, horizon).unwrap(),
        GroundTruth::new(gt, valid).unwrap(),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (k, horizon) = (6, 80);
    let mut worst_loss = 0.0f64;
    for _ in 0..100 {
        let (out, gt) = random_case(&mut rng, k, horizon);
        let g = nll_gradient(&out, &gt).map_err(|e| e.to_string())?;
        let mut flat: Vec<f64> = out.means.iter().chain(&out.logits).copied().collect();
        let n_means = out.means.len();
        let numeric = central_difference(&mut flat, |x| {
            let o = MixtureOutput::new(x[..n_means].to_vec(), x[n_means..].to_vec(), k, horizon).unwrap();
            nll_loss(&o, &gt).unwrap()
        });
        let analytic: Vec<f64> = g.d_means.iter().chain(&g.d_logits).copied().collect();
        worst_loss = worst_loss.max(relative_error(&analytic, &numeric));
    }
    ensure(
        worst_loss < 1e-5,
        format!("loss gradient rel err {worst_loss:.2e} ≥ 1e-5"),
    )?;

    // tiny model, every parameter
    let cfg = ModelConfig {
        k: 3,
        horizon: 5,
        hidden: 8,
        pool: 1,
    };
    let feature_dim = 12;
    let mut worst_params = 0.0f64;
    for i in 0..100 {
        let params = ModelParams::init(feature_dim, &cfg, 100 + i);
        let x: Vec<f64> = (0..feature_dim)
            .map(|_| {
                if rng.random_bool(0.7) {
                    rng.random_range(0.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let x = SparseFeatures::from_dense(&x);
        let gt = GroundTruth::all_valid(
            (0..cfg.horizon)
                .map(|_| Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect(),
        );
        let out = params.forward_features(&x).unwrap();
        let g = nll_gradient(&out, &gt).unwrap();
        let analytic = backward_features(&params, &x, &g).map_err(|e| e.to_string())?;
        let mut probe = params.clone();
        let mut data = probe.data.clone();
        let numeric = central_difference(&mut data, |d| {
            probe.data.copy_from_slice(d);
            nll_loss(&probe.forward_features(&x).unwrap(), &gt).unwrap()
        });
        worst_params = worst_params.max(relative_error(&analytic, &numeric));
    }
    ensure(
        worst_params < 1e-4,
        format!("parameter gradient rel err {worst_params:.2e} ≥ 1e-4"),
    )?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1}s ≥ 60s"))?;
    Ok(format!(
        "loss rel err {worst_loss:.2e} (<1e-5), params rel err {worst_params:.2e} (<1e-4), 2×100 instances in {secs:.1}s"
    ))
}

fn loss_anchors() -> Outcome {
    let one = |means: Vec<f64>, logits: Vec<f64>, k: usize| MixtureOutput::new(means, logits, k, 1).unwrap();
    let gt = GroundTruth::all_valid(vec![Vec2::new(3.0, -2.0)]);
    let exact = nll_loss(&one(vec![3.0, -2.0], vec![0.0], 1), &gt).unwrap();
    ensure(exact.abs() <= 1e-12, format!("exact hit {exact}"))?;
    // ½·(1² + 1²) = 1
    let offset = nll_loss(&one(vec![4.0, -1.0], vec![0.0], 1), &gt).unwrap();
    ensure((offset - 1.0).abs() <= 1e-9, format!("unit offset {offset}"))?;
    // one exact component and one far away, equal weights: −ln(½·1 + ½·e^{−huge})
    let two = nll_loss(&one(vec![3.0, -2.0, 300.0, 300.0], vec![0.0, 0.0], 2), &gt).unwrap();
    ensure(
        (two - std::f64::consts::LN_2).abs() <= 1e-6,
        format!("two-component {two}"),
    )?;
    Ok(format!("0 → {exact:e}, 1 → {offset}, ln2 → {two}"))
}

fn raster_contract() -> Outcome {
    let config = RasterConfig::default();
    let mut scenes = generate(&ScenarioSpec {
        count: 500,
        seed: 31,
        ..Default::default()
    })
    .unwrap();
    scenes.extend(
        generate(&ScenarioSpec {
            kind: ScenarioKind::StraightRoad,
            count: 500,
            seed: 32,
            ..Default::default()
        })
        .unwrap(),
    );
    let anchor = Vec2::new(61.0, 112.0);
    let mut worst = 0.0f64;
    for s in &scenes {
        let r = rasterize(s, "target", &config).map_err(|e| e.to_string())?;
        ensure(r.channels == 25, format!("{} has {} channels", s.scene_id, r.channels))?;
        let c = r
            .mask_centroid(r.target_channel(10))
            .ok_or("empty current target mask")?;
        worst = worst.max(c.distance(anchor));
    }
    ensure(worst <= 1.0, format!("centroid off by {worst:.3} px"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_agree = 1.0f64;
    for s in scenes.iter().take(100) {
        let moved = s.rigid_transformed(
            rng.random_range(-PI..PI),
            Vec2::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)),
        );
        let a = rasterize(s, "target", &config).unwrap();
        let b = rasterize(&moved, "target", &config).unwrap();
        let same = a.data.iter().zip(&b.data).filter(|(x, y)| x == y).count();
        worst_agree = worst_agree.min(same as f64 / a.data.len() as f64);
    }
    ensure(worst_agree >= 0.999, format!("rigid invariance {:.5}", worst_agree))?;
    Ok(format!(
        "25 channels; centroid max dev {worst:.3} px over 1000; min pixel agreement {:.5}% over 100 moved scenes",
        100.0 * worst_agree
    ))
}

fn cache() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scenes = generate(&ScenarioSpec {
        count: 1000,
        seed: 41,
        ..Default::default()
    })
    .unwrap();
    let config = RasterConfig::default();
    let s = &scenes[0];
    let r = rasterize(s, "target", &config).unwrap();
    let fut = local_future(&s.tracks[0], &r.frame);
    let (p1, p2) = (dir.path().join("a.npz"), dir.path().join("b.npz"));
    write_cache(&r, fut.as_ref(), &p1).unwrap();
    write_cache(&r, fut.as_ref(), &p2).unwrap();
    let back = read_cache(&p1).map_err(|e| e.to_string())?;
    ensure(back.raster == r, "raster differs after round trip")?;
    ensure(
        back.gt_future.as_ref() == fut.as_ref().map(|f| &f.points),
        "future differs",
    )?;
    ensure(
        std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap(),
        "repeated writes differ",
    )?;

    let bytes = encode_cache(&r, fut.as_ref()).unwrap();
    let truncated = decode_cache(&bytes[..bytes.len() / 2], &config);
    ensure(
        matches!(truncated, Err(Error::Corruption(_))),
        format!("truncated: {truncated:?}"),
    )?;
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 3;
    flipped[mid] ^= 0x55;
    let flipped = decode_cache(&flipped, &config);
    ensure(
        matches!(flipped, Err(Error::Corruption(_)) | Err(Error::Format(_))),
        format!("flipped byte: {flipped:?}"),
    )?;
    let garbage = decode_cache(b"definitely not a zip archive", &config);
    ensure(
        matches!(garbage, Err(Error::Format(_))),
        format!("garbage: {garbage:?}"),
    )?;

    let out = dir.path().join("many");
    let summary = rasterize_dataset(&scenes, &out, &config, 4, None).map_err(|e| e.to_string())?;
    ensure(
        summary.failures.is_empty(),
        format!("{} failures", summary.failures.len()),
    )?;
    ensure(summary.count == 1000, format!("wrote {}", summary.count))?;
    ensure(
        summary.rasters_per_sec >= 25.0,
        format!("throughput {:.1}/s below the 25/s floor", summary.rasters_per_sec),
    )?;
    let target_note = if summary.rasters_per_sec > 100.0 {
        "above"
    } else {
        "BELOW"
    };
    Ok(format!(
        "round trip exact, writes byte-identical, corruption typed; {:.0} rasters/s with 4 workers ({target_note} the 100/s target)",
        summary.rasters_per_sec
    ))
}

fn brute_min(hyps: &[Vec<Vec2>], gt: &[Vec2], valid: &[bool]) -> (f64, f64) {
    let mut best_ade = f64::INFINITY;
    let mut best_fde = f64::INFINITY;
    let last = (0..gt.len()).filter(|&t| valid[t]).max().unwrap();
    for h in hyps {
        let mut sum = 0.0;
        let mut n = 0.0;
        for t in 0..gt.len() {
            if valid[t] {
                sum += ((h[t].x - gt[t].x).powi(2) + (h[t].y - gt[t].y).powi(2)).sqrt();
                n += 1.0;
            }
        }
        best_ade = best_ade.min(sum / n);
        best_fde = best_fde.min(((h[last].x - gt[last].x).powi(2) + (h[last].y - gt[last].y).powi(2)).sqrt());
    }
    (best_ade, best_fde)
}

fn random_box(rng: &mut ChaCha8Rng) -> OrientedBox {
    let w = rng.random_range(0.5..3.0);
    OrientedBox::new(
        Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
        rng.random_range(-PI..PI),
        w + rng.random_range(0.0..3.0),
        w,
    )
}

/// Does any of `n×n` grid points of `a` fall inside `b`?
fn sampled_overlap(a: &OrientedBox, b: &OrientedBox, n: usize) -> bool {
    let fwd = Vec2::from_angle(a.heading);
    let left = fwd.perp();
    (0..n).any(|i| {
        (0..n).any(|j| {
            let u = (i as f64 + 0.5) / n as f64 - 0.5;
            let v = (j as f64 + 0.5) / n as f64 - 0.5;
            b.contains(a.center + fwd * (u * a.length) + left * (v * a.width))
        })
    })
}

fn metrics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let t_len = 16;
        let gt: Vec<Vec2> = (0..t_len)
            .map(|_| Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let mut valid: Vec<bool> = (0..t_len).map(|_| rng.random_bool(0.8)).collect();
        valid[rng.random_range(0..t_len)] = true;
        let hyps: Vec<Vec<Vec2>> = (0..k)
            .map(|_| {
                gt.iter()
                    .map(|p| *p + Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                    .collect()
            })
            .collect();
        let (ba, bf) = brute_min(&hyps, &gt, &valid);
        let a = min_ade(&hyps, &gt, &valid).unwrap();
        let f = min_fde(&hyps, &gt, &valid).unwrap();
        worst = worst.max((a - ba).abs()).max((f - bf).abs());
    }
    ensure(worst <= 1e-12, format!("min_ade/min_fde deviate by {worst:e}"))?;

    // hand-computed PR curves: AP = Σ (R_n − R_{n−1})·P_n
    let lists: [(&[(f64, bool)], f64); 5] = [
        (&[(0.9, true), (0.8, true), (0.7, true)], 1.0),
        (&[(0.9, true), (0.5, false)], 0.5),
        (&[(0.9, false), (0.8, true)], 0.25),
        (
            &[(0.9, true), (0.8, false), (0.7, true), (0.6, false)],
            0.25 * 1.0 + 0.25 * (2.0 / 3.0),
        ),
        (
            &[(0.2, true), (0.9, false), (0.5, false), (0.4, true)],
            0.25 * (1.0 / 3.0) + 0.25 * (2.0 / 4.0),
        ),
    ];
    for (i, (items, expected)) in lists.iter().enumerate() {
        let ap = average_precision_ranked(items).unwrap();
        ensure(
            (ap - expected).abs() < 1e-12,
            format!("AP list {i}: {ap} vs {expected}"),
        )?;
    }

    let mut agree = 0;
    let mut hits = 0;
    for _ in 0..100 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let mc = sampled_overlap(&a, &b, 100) || sampled_overlap(&b, &a, 100);
        let sat = a.intersects(&b);
        hits += sat as usize;
        agree += (mc == sat) as usize;
    }
    ensure(agree == 100, format!("overlap kernel agrees on {agree}/100 pairs"))?;
    Ok(format!(
        "min metrics max dev {worst:.1e}; 5/5 AP lists; overlap agrees 100/100 ({hits} intersecting)"
    ))
}

fn labeled_scenes(count: usize, seed: u64) -> Vec<bevmotion::synth::LabeledScene> {
    generate_labeled(&ScenarioSpec {
        kind: ScenarioKind::TIntersection,
        branch_probability: 0.5,
        speed_range: [10.0, 10.0],
        junction_distance: [20.0, 20.0],
        count,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn multimodality() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let raster = RasterConfig::default();
    let train_scenes: Vec<_> = labeled_scenes(2000, 1_000).into_iter().map(|l| l.scene).collect();
    rasterize_dataset(&train_scenes, dir.path(), &raster, 4, None).map_err(|e| e.to_string())?;
    let model = ModelConfig::default();
    let training = TrainingConfig {
        iterations: 3000,
        restart_period: 3000,
        seed: 7,
        ..Default::default()
    };
    let outcome = train_cache_dir(dir.path(), &raster, &model, &training).map_err(|e| e.to_string())?;

    let held_out = labeled_scenes(200, 900_000);
    let scenes: Vec<_> = held_out.iter().map(|l| l.scene.clone()).collect();
    let preds = predict_scenes(&outcome.params, &scenes, &raster).map_err(|e| e.to_string())?;
    let baseline: Vec<PredictionRecord> = scenes
        .iter()
        .map(|s| {
            let r = rasterize(s, "target", &raster).unwrap();
            let cur = s.tracks[0].current().unwrap();
            let cv = constant_velocity_in_frame(&r.frame, cur.velocity, 1, 80).unwrap();
            to_world_record(&s.scene_id, "target", &cv, &r.frame)
        })
        .collect();
    let metrics = MetricsConfig::default();
    let model_ade = evaluate(&preds, &scenes, &metrics)
        .unwrap()
        .row("Avg")
        .unwrap()
        .min_ade
        .unwrap();
    let cv_ade = evaluate(&baseline, &scenes, &metrics)
        .unwrap()
        .row("Avg")
        .unwrap()
        .min_ade
        .unwrap();

    let mut covered = [0usize; 2];
    let mut total = [0usize; 2];
    for (l, p) in held_out.iter().zip(&preds) {
        let future = l.scene.tracks[0].future.as_ref().unwrap();
        let gt: Vec<Vec2> = future.iter().map(|s| s.position).collect();
        let valid: Vec<bool> = future.iter().map(|s| s.valid).collect();
        let hyps: Vec<Vec<Vec2>> = p
            .trajectories
            .iter()
            .map(|t| t.iter().map(|&q| Vec2::from(q)).collect())
            .collect();
        let m = (l.mode == FutureMode::Turn) as usize;
        total[m] += 1;
        covered[m] += (min_fde(&hyps, &gt, &valid).unwrap() <= 1.0) as usize;
    }
    let frac = |m: usize| covered[m] as f64 / total[m] as f64;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "minADE {model_ade:.3} vs constant-velocity {cv_ade:.3}; within 1 m FDE: straight {}/{} turn {}/{}; {secs:.0}s",
        covered[0], total[0], covered[1], total[1]
    );
    ensure(model_ade < cv_ade, format!("model does not beat baseline: {detail}"))?;
    ensure(
        frac(0) >= 0.9 && frac(1) >= 0.9,
        format!("mode coverage below 90%: {detail}"),
    )?;
    ensure(secs <= 1800.0, format!("over 30 min: {detail}"))?;
    Ok(detail)
}

fn schedule() -> Outcome {
    let mut worst_mid = 0.0f64;
    for (t0, t_mult) in [(11_350usize, 1usize), (100, 1), (10, 2), (64, 3)] {
        let cfg = TrainingConfig {
            restart_period: t0,
            t_mult,
            ..Default::default()
        };
        // restarts, and the midpoint of each of the first cycles
        let mut start = 0u64;
        let mut period = t0 as u64;
        for _ in 0..4 {
            let at = cosine_warm_restart_lr(start, &cfg);
            ensure(
                at == cfg.lr_max,
                format!("T0={t0} mult={t_mult}: lr {at} at restart {start}"),
            )?;
            if period % 2 == 0 {
                let mid = cosine_warm_restart_lr(start + period / 2, &cfg);
                let expected = cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * 0.5).cos());
                worst_mid = worst_mid.max((mid - expected).abs());
                worst_mid = worst_mid.max((mid - 0.5 * (cfg.lr_max + cfg.lr_min)).abs());
            }
            start += period;
            period *= t_mult as u64;
        }
    }
    ensure(worst_mid <= 1e-15, format!("midpoint deviates by {worst_mid:e}"))?;
    let cfg = TrainingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for i in 0..1_000_000u64 {
        let it = if i < 500_000 {
            i
        } else {
            rng.random_range(0..u64::MAX / 4)
        };
        let lr = cosine_warm_restart_lr(it, &cfg);
        ensure(
            (cfg.lr_min..=cfg.lr_max).contains(&lr),
            format!("lr {lr} out of bounds at {it}"),
        )?;
    }
    Ok(format!(
        "restarts exact, midpoint dev {worst_mid:.1e}, 10^6 iterations within bounds"
    ))
}

fn run_pipeline(root: &std::path::Path) -> String {
    let spec = ScenarioSpec {
        count: 120,
        seed: 5,
        ..Default::default()
    };
    let scenes = generate(&spec).unwrap();
    let raster = RasterConfig::default();
    rasterize_dataset(&scenes, root.join("cache"), &raster, 4, None).unwrap();
    let model = ModelConfig {
        hidden: 64,
        ..Default::default()
    };
    let training = TrainingConfig {
        iterations: 150,
        restart_period: 150,
        eval_every: 25,
        seed: 5,
        ..Default::default()
    };
    let outcome = train_cache_dir(root.join("cache"), &raster, &model, &training).unwrap();
    let preds = predict_scenes(&outcome.params, &scenes, &raster).unwrap();
    evaluate(&preds, &scenes, &MetricsConfig::default()).unwrap().to_json()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    ensure(first == second, "metrics reports differ between runs")?;
    Ok(format!("two runs produced identical {}-byte reports", first.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradient_correctness),
        ("loss closed-form anchors", loss_anchors),
        ("raster contract", raster_contract),
        ("cache", cache),
        ("metrics oracle equivalence", metrics_oracles),
        ("multimodality", multimodality),
        ("schedule", schedule),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
