//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs sequentially so the reported times are honest.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toot_core::annotator::{derive_box, AnnotatorConfig, BoxRule, Click, SegmentationMask};
use toot_core::benefit::{ctb_at, itb_of_interaction, mean_itb, read_plot_data, InteractionVector, PerformanceTrace};
use toot_core::detector::reference::{loss_and_grad, ReferenceConfig, ReferenceDetector};
use toot_core::detector::{build_minibatch, dynamic_rescale_factor, AugmentationConfig, DetectorModel};
use toot_core::engine::compare::{average_comparisons, compare_traces, SeedComparison, StrategyTrace};
use toot_core::engine::{compare_strategies, EngineConfig, StrategyKind};
use toot_core::geometry::{iou, BoundingBox};
use toot_core::metrics::{average_precision_voc07, evaluate, Detection, EvalImage, EvalSet, MatchedDetection};
use toot_core::synth::{generate_synthetic_sequence, SyntheticSceneSpec};
use toot_core::tracker::{init_tracker, update_tracker, TrackOutcome, TrackerConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn benefit_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut telescoped = 0;
    for case in 0..1000 {
        let (mut p, mut u) = common::random_trace(&mut rng);
        let n = p.len() - 1;
        let lib = |p: &[f64], u: &[bool]| (PerformanceTrace::new(p[0], p[1..].to_vec()), InteractionVector(u[1..].to_vec()));
        let (trace, iv) = lib(&p, &u);
        for i in 1..=n {
            ensure(ctb_at(&trace, i).ok() == Some(common::ctb(&p, i)), || format!("case {case}: CTB_{i}"))?;
            ensure(itb_of_interaction(&trace, &iv, i).ok() == common::itb(&p, &u, i), || format!("case {case}: ITB_{i}"))?;
            for j in i..=n {
                ensure(mean_itb(&trace, &iv, i, j).ok() == common::mean_itb(&p, &u, i, j), || format!("case {case}: mean ITB {i}..{j}"))?;
            }
        }
        // click-only pattern: training starts on round 1; dyadic values keep sums exact
        u[1] = true;
        p.iter_mut().for_each(|v| *v = (*v * 1024.0).floor() / 1024.0);
        let (trace, iv) = lib(&p, &u);
        let total: f64 = iv.rounds().map(|i| itb_of_interaction(&trace, &iv, i).unwrap()).sum();
        ensure(total == p[n] - p[0], || format!("case {case}: sum ITB {total} != P_n - P_0 {}", p[n] - p[0]))?;
        telescoped += 1;
    }
    Ok(format!("1000 traces exact, {telescoped} telescoping identities"))
}

fn ap_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..500 {
        let imgs = common::random_eval(&mut rng);
        let mut set = EvalSet::default();
        for (k, im) in imgs.iter().enumerate() {
            let bx = |r: &common::Rect| BoundingBox::new(r[0], r[1], r[2], r[3]);
            set.push(EvalImage {
                image_id: k,
                ground_truth: im.gt.iter().map(bx).collect(),
                detections: im.dets.iter().map(|(r, c)| Detection { bbox: bx(r), confidence: *c }).collect(),
            });
        }
        let d = (evaluate(&set, 0.5) - common::ap_voc07(&imgs, 0.5)).abs();
        ensure(d <= 1e-9, || format!("case {case}: differs by {d}"))?;
        worst = worst.max(d);
    }
    let m = |confidence, true_positive| MatchedDetection { confidence, true_positive };
    let ap = average_precision_voc07(&[m(0.9, true), m(0.8, false), m(0.7, true)], 2);
    ensure(ap == 28.0 / 33.0, || format!("worked example gave {ap}"))?;
    Ok(format!("500 sets, max deviation {worst:.1e}, 28/33 exact"))
}

fn heuristics() -> Check {
    let cfg = AnnotatorConfig::default();
    let mask = |rects: &[(u32, u32, u32, u32)]| {
        let mut m = SegmentationMask::empty(360, 360);
        for &(x0, y0, x1, y1) in rects {
            for y in y0..y1 {
                for x in x0..x1 {
                    m.set(x, y, true);
                }
            }
        }
        m
    };
    let d = derive_box(&SegmentationMask::empty(360, 360), Click::new(100, 100), &cfg, (360, 360));
    ensure(d.rule == BoxRule::Fallback && d.bbox == BoundingBox::new(90.0, 90.0, 110.0, 110.0), || format!("fallback {d:?}"))?;
    let d = derive_box(&mask(&[(20, 20, 200, 200), (250, 250, 300, 290)]), Click::new(260, 270), &cfg, (360, 360));
    ensure(d.rule == BoxRule::Selected && d.bbox == BoundingBox::new(250.0, 250.0, 300.0, 290.0), || format!("selection {d:?}"))?;
    let d = derive_box(&mask(&[(80, 165, 280, 195)]), Click::new(150, 170), &cfg, (360, 360));
    ensure(
        d.rule == BoxRule::SelectedEnlarged && d.bbox == BoundingBox::new(60.0, 162.0, 300.0, 198.0),
        || format!("enlargement {d:?}"),
    )?;
    Ok("fallback 20x20, click component, 200x30 -> 240x36".into())
}

fn rescale() -> Check {
    let s = |w, h| dynamic_rescale_factor(&BoundingBox::new(0.0, 0.0, w, h), 720);
    ensure(s(36.0, 36.0) == (0.5, 0.5), || format!("36x36: {:?}", s(36.0, 36.0)))?;
    ensure(s(72.0, 144.0) == (1.0, 2.0), || format!("72x144: {:?}", s(72.0, 144.0)))?;
    ensure(s(72.0, 72.0) == (1.0, 1.0), || format!("72x72: {:?}", s(72.0, 72.0)))?;
    let (frame, gt) = common::single_frame();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..100 {
        let b = build_minibatch(&frame, &gt, &AugmentationConfig::default(), [0, 0, 0], &mut rng);
        ensure(b.len() == 4 && b.is_valid(), || format!("batch {k} invalid"))?;
    }
    Ok("S = 0.5, 2.0 -> 1.0, 1.0; 100 batches of 4".into())
}

fn tracker() -> Check {
    let cfg = TrackerConfig::default();
    let (f, b) = common::scene((120.0, 120.0), 1.0, false);
    let mut s = init_tracker(&f, b, &cfg).map_err(|e| e.to_string())?;
    let u = update_tracker(&mut s, &f).map_err(|e| e.to_string())?;
    ensure(u.bbox == Some(b) && u.translation == (0.0, 0.0), || format!("static frame moved: {u:?}"))?;

    let (f0, b0) = common::scene(common::path(0), 1.0, false);
    let mut s = init_tracker(&f0, b0, &cfg).map_err(|e| e.to_string())?;
    let (mut worst_err, mut worst_iou) = (0.0f64, 1.0f64);
    for t in 1..=50 {
        let (f, gt) = common::scene(common::path(t), 1.0, false);
        let u = update_tracker(&mut s, &f).map_err(|e| e.to_string())?;
        let bb = u.bbox.ok_or_else(|| format!("lost the target on frame {t}"))?;
        let (p, q) = (common::path(t - 1), common::path(t));
        worst_err = worst_err.max((u.translation.0 - (q.0 - p.0)).abs()).max((u.translation.1 - (q.1 - p.1)).abs());
        worst_iou = worst_iou.min(iou(&bb, &gt));
    }
    ensure(worst_err <= 1.0 && worst_iou >= 0.7, || format!("translation error {worst_err}, IoU {worst_iou}"))?;

    let mut s = init_tracker(&f0, b0, &cfg).map_err(|e| e.to_string())?;
    for t in 1..10 {
        update_tracker(&mut s, &common::scene(common::path(t), 1.0, false).0).map_err(|e| e.to_string())?;
    }
    let mut failed_after = None;
    for k in 0..3 {
        let u = update_tracker(&mut s, &common::scene(common::path(10 + k), 1.0, true).0).map_err(|e| e.to_string())?;
        if u.outcome == TrackOutcome::Failed {
            failed_after = Some(k + 1);
            break;
        }
    }
    let k = failed_after.ok_or("no failure within 3 occluded frames")?;
    Ok(format!("max error {worst_err:.2} px, min IoU {worst_iou:.3}, occlusion failed after {k} frame(s)"))
}

fn learning() -> Check {
    let (frame, gt) = common::single_frame();
    let ap = |m: &ReferenceDetector| {
        let mut set = EvalSet::default();
        set.push(EvalImage { image_id: 0, ground_truth: vec![gt], detections: m.detect(&frame) });
        evaluate(&set, 0.5)
    };
    let mut model = ReferenceDetector::new(ReferenceConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut reached = None;
    for step in 1..=200 {
        let b = build_minibatch(&frame, &gt, &AugmentationConfig::default(), [0, 0, 0], &mut rng);
        model.train_step(&b).map_err(|e| e.to_string())?;
        if ap(&model) == 1.0 {
            reached = Some(step);
            break;
        }
    }
    let step = reached.ok_or("AP 1.0 not reached in 200 steps")?;
    let feats = model.features(&frame);
    let samples = model.select_samples(&feats, &gt);
    let params = model.params().to_vec();
    let l2 = model.config.l2;
    let (_, grad) = loss_and_grad(&params, &samples, l2);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let mut p = params.clone();
        p[k] += h;
        let up = loss_and_grad(&p, &samples, l2).0;
        p[k] -= 2.0 * h;
        let down = loss_and_grad(&p, &samples, l2).0;
        let num = (up - down) / (2.0 * h);
        let scale = num.abs().max(grad[k].abs());
        if scale > 1e-7 {
            worst = worst.max((num - grad[k]).abs() / scale);
        }
    }
    ensure(worst <= 1e-4, || format!("gradient relative error {worst:.2e}"))?;
    Ok(format!("AP 1.0 at step {step}, gradient relative error {worst:.1e}"))
}

fn end_to_end() -> Check {
    let load = |name: &str| {
        let text = std::fs::read_to_string(root().join("scenarios/convoy").join(name)).map_err(|e| e.to_string())?;
        let spec = SyntheticSceneSpec::from_toml(&text).map_err(|e| e.to_string())?;
        generate_synthetic_sequence(&spec).map_err(|e| e.to_string())
    };
    let (train, test) = (load("train.toml")?, load("test.toml")?);
    let strategies = [StrategyKind::ClickSupervision, StrategyKind::ClickWithTracking];
    let report = compare_strategies(&train, &test, &strategies, &[1, 2, 3], &EngineConfig::default(), |_| Ok(()))
        .map_err(|e| e.to_string())?;
    let click = report.averaged("click").ok_or("no click summary")?;
    let track = report.averaged("track").ok_or("no track summary")?;
    let (ic, it) = (
        click.mean_interactions_to_pf.ok_or("click never reached P_f")?,
        track.mean_interactions_to_pf.ok_or("track never reached P_f")?,
    );
    let ratio = report.ratio("track", "click").ok_or("mean ITB ratio undefined")?;
    let detail = format!(
        "{} train / {} test frames, interactions to P_f {ic:.1} (click) vs {it:.1} (track), mean ITB ratio {ratio:.2}",
        train.len(),
        test.len()
    );
    ensure(track.reached_seeds == 3 && click.reached_seeds == 3, || format!("not every seed reached P_f; {detail}"))?;
    ensure(it < ic && ratio > 1.5, || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_toot"))
            .args(["run", "--train", "scenarios/tiny/train.toml", "--test", "scenarios/tiny/test.toml"])
            .args(["--strategy", "track", "--seed", "7", "--out"])
            .arg(&out)
            .current_dir(root())
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        logs.push(std::fs::read(out.join("run.jsonl")).map_err(|e| e.to_string())?);
    }
    ensure(logs[0] == logs[1], || "two runs differ".into())?;
    let golden = std::fs::read(root().join("scenarios/tiny/golden/track-seed7.run.jsonl")).map_err(|e| e.to_string())?;
    ensure(logs[0] == golden, || "run differs from the golden log".into())?;
    Ok(format!("two runs and golden log identical ({} bytes)", golden.len()))
}

fn paper_fixtures() -> Check {
    let load = |name: &str| -> Result<StrategyTrace, String> {
        let f = std::fs::File::open(root().join("fixtures/published").join(format!("{name}.csv"))).map_err(|e| e.to_string())?;
        let (trace, u) = read_plot_data(std::io::BufReader::new(f)).map_err(|e| e.to_string())?;
        let strategy = name.rsplit('-').next().unwrap().to_string();
        Ok(StrategyTrace { name: strategy, trace, u })
    };
    let mut parts = Vec::new();
    for (dataset, want, counts) in [("car-chaser", "4.50", (435, 96)), ("person-finder", "3.07", (197, 65))] {
        let traces = [load(&format!("{dataset}-seg"))?, load(&format!("{dataset}-track"))?];
        let cmp = compare_traces(&traces, None).map_err(|e| e.to_string())?;
        let report = average_comparisons(dataset, dataset, vec![SeedComparison { seed: 0, comparison: cmp }]);
        let ratio = report.ratio("track", "seg").ok_or("ratio undefined")?;
        let got = format!("{ratio:.2}");
        let n = |s: &str| report.averaged(s).and_then(|a| a.mean_interactions_to_pf);
        ensure(got == want, || format!("{dataset}: ratio {ratio} rounds to {got}, published {want}"))?;
        ensure(n("seg") == Some(counts.0 as f64) && n("track") == Some(counts.1 as f64), || {
            format!("{dataset}: interactions {:?}/{:?}", n("seg"), n("track"))
        })?;
        parts.push(format!("{dataset} {got} ({} vs {})", counts.0, counts.1));
    }
    Ok(parts.join(", "))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 9] = [
        ("benefit algebra", benefit_algebra, Duration::from_secs(5)),
        ("AP oracle", ap_oracle, Duration::from_secs(10)),
        ("heuristics", heuristics, Duration::from_secs(1)),
        ("rescale and mini-batch", rescale, Duration::from_secs(60)),
        ("tracker", tracker, Duration::from_secs(30)),
        ("learning sanity", learning, Duration::from_secs(60)),
        ("end-to-end convoy", end_to_end, Duration::from_secs(600)),
        ("determinism", determinism, Duration::from_secs(120)),
        ("published fixtures", paper_fixtures, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let t0 = Instant::now();
        let result = check();
        let took = t0.elapsed();
        let (verdict, detail) = match result {
            Ok(d) if took <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took longer than {budget:?}")),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} {name} [{:.2}s] {detail}", took.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
