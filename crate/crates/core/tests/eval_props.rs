use kwspot::decoder::{detect, DetectionEvent};
use kwspot::eval::{
    f1_score, latencies, latency_stats, linspace, match_detections, pr_sweep, pr_sweep_events,
    GroundTruthOccurrence, KeywordScores, PRPoint,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn events_strategy(keywords: usize) -> impl Strategy<Value = Vec<DetectionEvent>> {
    proptest::collection::vec((0..keywords, 0usize..2000, -30.0f64..0.0), 0..40).prop_map(|v| {
        v.into_iter()
            .map(|(keyword, frame, score)| DetectionEvent {
                keyword,
                frame,
                score,
            })
            .collect()
    })
}

fn truth_strategy(keywords: usize) -> impl Strategy<Value = Vec<GroundTruthOccurrence>> {
    proptest::collection::vec((0..keywords, 0usize..2000), 0..40).prop_map(|v| {
        v.into_iter()
            .map(|(keyword, end_frame)| GroundTruthOccurrence { keyword, end_frame })
            .collect()
    })
}

/// Scores with a few bumps for `keywords` streams, and truth near some bumps.
fn bumpy_streams(
    rng: &mut impl Rng,
    keywords: usize,
    frames: usize,
) -> (Vec<Vec<f64>>, Vec<GroundTruthOccurrence>) {
    let mut truth = Vec::new();
    let streams = (0..keywords)
        .map(|k| {
            let mut s: Vec<f64> = (0..frames)
                .map(|_| rng.random_range(-40.0..-15.0))
                .collect();
            for _ in 0..frames / 100 {
                let at = rng.random_range(0..frames);
                let height = rng.random_range(-14.0..0.0);
                for (d, v) in s.iter_mut().enumerate().skip(at.saturating_sub(5)).take(10) {
                    *v = height - (d as f64 - at as f64).abs();
                }
                if rng.random_bool(0.7) {
                    truth.push(GroundTruthOccurrence {
                        keyword: k,
                        end_frame: (at + rng.random_range(0..60)).saturating_sub(30),
                    });
                }
            }
            s
        })
        .collect();
    (streams, truth)
}

proptest! {
    #[test]
    fn matching_conserves_counts(events in events_strategy(3), truth in truth_strategy(3), window in 0usize..80) {
        let m = match_detections(&events, &truth, window);
        prop_assert_eq!(m.tp + m.fn_, truth.len());
        prop_assert_eq!(m.tp + m.fp, events.len());
        prop_assert_eq!(m.pairs.len(), m.tp);
        let mut seen_e = vec![false; events.len()];
        let mut seen_t = vec![false; truth.len()];
        for &(i, j) in &m.pairs {
            prop_assert!(!seen_e[i] && !seen_t[j]);
            seen_e[i] = true;
            seen_t[j] = true;
            prop_assert_eq!(events[i].keyword, truth[j].keyword);
            prop_assert!(events[i].frame.abs_diff(truth[j].end_frame) <= window);
        }
    }

    #[test]
    fn micro_average_pools_independent_keywords(events in events_strategy(3), truth in truth_strategy(3)) {
        let pooled = match_detections(&events, &truth, 50);
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for k in 0..3 {
            let ev: Vec<_> = events.iter().filter(|e| e.keyword == k).cloned().collect();
            let tr: Vec<_> = truth.iter().filter(|t| t.keyword == k).cloned().collect();
            let m = match_detections(&ev, &tr, 50);
            tp += m.tp;
            fp += m.fp;
            fn_ += m.fn_;
        }
        prop_assert_eq!((pooled.tp, pooled.fp, pooled.fn_), (tp, fp, fn_));
        let p = PRPoint::from_counts(1.0, tp, fp, fn_);
        prop_assert!((p.f1 - f1_score(p.precision, p.recall)).abs() < 1e-15);
        prop_assert!(p.f1 <= p.precision.max(p.recall) + 1e-15);
        prop_assert!(p.f1 >= p.precision.min(p.recall) - 1e-15);
    }

    #[test]
    fn loosening_the_threshold_never_loses_recall(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (streams, truth) = bumpy_streams(&mut rng, 3, 1500);
        let chars = [3usize, 5, 8];
        let ks: Vec<KeywordScores> = streams
            .iter()
            .zip(chars)
            .map(|(s, n)| KeywordScores { scores: s, num_chars: n })
            .collect();
        let thresholds = linspace(0.05, 6.0, 30);
        let sweep = pr_sweep(&ks, &truth, &thresholds, 30, 50);
        for w in sweep.points.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
            prop_assert!(w[1].detections() >= w[0].detections());
        }
        prop_assert_eq!(sweep.best_point().f1, sweep.max_f1());

        // filtering one loose detection pass gives the same curve
        let loosest = *thresholds.last().unwrap();
        let mut events = Vec::new();
        for (k, s) in streams.iter().enumerate() {
            events.extend(detect(s, -(loosest * chars[k] as f64), 30).into_iter().map(|mut e| {
                e.keyword = k;
                e
            }));
        }
        let filtered = pr_sweep_events(&events, &chars, &truth, &thresholds, 50);
        prop_assert_eq!(filtered.points, sweep.points);
    }
}

#[test]
fn exact_detections_have_zero_latency() {
    let truth: Vec<_> = (0..5)
        .map(|i| GroundTruthOccurrence {
            keyword: i % 2,
            end_frame: 100 * i + 40,
        })
        .collect();
    let events: Vec<_> = truth
        .iter()
        .map(|t| DetectionEvent {
            keyword: t.keyword,
            frame: t.end_frame,
            score: -1.0,
        })
        .collect();
    let m = match_detections(&events, &truth, 50);
    assert_eq!((m.tp, m.fp, m.fn_), (5, 0, 0));
    let lat = latencies(&events, &truth, &m.pairs);
    let stats = latency_stats(&lat).unwrap();
    assert_eq!(stats.median_frames, 0.0);
    assert_eq!(stats.max_frames, 0);
}

#[test]
fn late_detections_report_positive_latency() {
    let truth = [GroundTruthOccurrence {
        keyword: 0,
        end_frame: 200,
    }];
    let events = [DetectionEvent {
        keyword: 0,
        frame: 212,
        score: -2.0,
    }];
    let m = match_detections(&events, &truth, 50);
    let stats = latency_stats(&latencies(&events, &truth, &m.pairs)).unwrap();
    assert_eq!(stats.median_frames, 12.0);
    assert_eq!(stats.median_ms(), 120.0);
}

#[test]
fn loosening_the_threshold_can_raise_precision() {
    // a low-scoring hit joins once the threshold loosens; precision goes up
    let truth = [
        GroundTruthOccurrence {
            keyword: 0,
            end_frame: 100,
        },
        GroundTruthOccurrence {
            keyword: 0,
            end_frame: 300,
        },
    ];
    let events = [
        DetectionEvent {
            keyword: 0,
            frame: 100,
            score: -9.0,
        },
        DetectionEvent {
            keyword: 0,
            frame: 500,
            score: -1.0,
        },
    ];
    let sweep = pr_sweep_events(&events, &[1], &truth, &[2.0, 10.0], 50);
    assert_eq!(sweep.points[0].precision, 0.0);
    assert_eq!(sweep.points[1].precision, 0.5);
    assert!(sweep.points[1].recall >= sweep.points[0].recall);
}
