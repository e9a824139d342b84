use std::io::BufReader;

use toot_core::engine::{run_replay, EngineConfig, EventSource, ReplayOutput, RunLog, StrategyKind, TrackerStatus};
use toot_core::geometry::iou;
use toot_core::sequence::ToOTSequence;
use toot_core::synth::{generate_synthetic_sequence, SyntheticSceneSpec};

fn scenario(name: &str) -> ToOTSequence {
    let path = format!("{}/../../scenarios/tiny/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    let spec = SyntheticSceneSpec::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    generate_synthetic_sequence(&spec).unwrap()
}

fn run(strategy: StrategyKind, seed: u64) -> (ToOTSequence, ReplayOutput) {
    let (train, test) = (scenario("train"), scenario("test"));
    let out = run_replay(&train, &test, strategy, &EngineConfig::default(), seed, None).unwrap();
    (train, out)
}

fn check_common(train: &ToOTSequence, log: &RunLog) {
    assert_eq!(log.rounds.len(), train.len());
    for (k, r) in log.rounds.iter().enumerate() {
        assert_eq!(r.round, k + 1);
        assert_eq!(r.frame, train.frames[k].image.index);
        let gt = train.frames[k].annotation.target_box();
        // training happens on positive frames only, and every positive frame trains
        assert_eq!(r.event.is_some(), gt.is_some(), "round {}", r.round);
        if let Some(ev) = r.event {
            assert_eq!(ev.round, r.round);
            assert_eq!(ev.u, r.u);
            assert_eq!(r.u == 1, ev.source != EventSource::Tracker);
        } else {
            assert_eq!(r.u, 0);
        }
    }
    let u: usize = log.rounds.iter().map(|r| r.u as usize).sum();
    assert_eq!(log.totals.interactions, u);
}

#[test]
fn click_and_bbox_runs_share_the_interaction_vector() {
    let (train, click) = run(StrategyKind::ClickSupervision, 4);
    let (_, bbox) = run(StrategyKind::BboxSupervision, 4);
    check_common(&train, &click.log);
    check_common(&train, &bbox.log);
    let uc: Vec<u8> = click.log.rounds.iter().map(|r| r.u).collect();
    let ub: Vec<u8> = bbox.log.rounds.iter().map(|r| r.u).collect();
    assert_eq!(uc, ub);
    assert_eq!(click.log.totals.interactions, train.positive_count());
    assert!(bbox.log.rounds.iter().filter_map(|r| r.event).all(|e| e.source == EventSource::UserBox));
    assert!(click.log.rounds.iter().filter_map(|r| r.event).all(|e| e.source == EventSource::UserClick));
}

#[test]
fn tracking_run_follows_the_user_rules() {
    let (train, out) = run(StrategyKind::ClickWithTracking, 7);
    let log = &out.log;
    check_common(&train, log);
    let reacquire = EngineConfig::default().user.reacquire_iou;
    let mut tracker_events = 0;
    for (k, r) in log.rounds.iter().enumerate() {
        let Some(ev) = r.event else { continue };
        if ev.source == EventSource::Tracker {
            tracker_events += 1;
            assert_eq!(r.tracker, TrackerStatus::Tracking);
            let gt = train.frames[k].annotation.target_box().unwrap();
            assert!(iou(&ev.derived_bbox, &gt) >= reacquire, "round {} trained on a poor track", r.round);
        }
    }
    assert!(tracker_events > 0);
    assert!(log.totals.interactions < train.positive_count());
    assert_eq!(log.totals.tracker_events, tracker_events);
}

#[test]
fn logs_are_deterministic_and_round_trip() {
    let (_, a) = run(StrategyKind::ClickWithTracking, 11);
    let (_, b) = run(StrategyKind::ClickWithTracking, 11);
    let text = a.log.to_string();
    assert_eq!(text, b.log.to_string());
    let back = RunLog::read(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(back, a.log);
    assert_eq!(back.benefit_report(None).unwrap(), a.report);
    let (_, c) = run(StrategyKind::ClickWithTracking, 12);
    assert_ne!(c.log.to_string(), text);
}

#[test]
fn pf_truncation_stops_at_first_reaching_round() {
    let (train, test) = (scenario("train"), scenario("test"));
    let cfg = EngineConfig::default();
    let full = run_replay(&train, &test, StrategyKind::ClickSupervision, &cfg, 2, None).unwrap();
    let p_f = full.log.totals.p_max;
    let cut = run_replay(&train, &test, StrategyKind::ClickSupervision, &cfg, 2, Some(p_f)).unwrap();
    let f = full.log.rounds.iter().position(|r| r.p >= p_f).unwrap() + 1;
    assert_eq!(cut.log.rounds.len(), f);
    assert_eq!(cut.log.rounds[..], full.log.rounds[..f]);
}
