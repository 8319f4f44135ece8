//! Scoring detections against ground truth.

use crate::decoder::{detect, DetectionEvent};
use crate::FRAME_PERIOD_MS;

pub const DEFAULT_MATCH_WINDOW: usize = 50;

/// A spoken keyword in the evaluation stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroundTruthOccurrence {
    pub keyword: usize,
    /// Last frame of the keyword's final character.
    pub end_frame: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(event index, truth index)` of every true positive.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching. Events are visited in frame order; each
/// takes the nearest unmatched occurrence of its keyword whose end frame is
/// within `±window` (the earlier occurrence on a tie).
pub fn match_detections(
    events: &[DetectionEvent],
    truth: &[GroundTruthOccurrence],
    window: usize,
) -> MatchResult {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].frame, events[i].keyword));
    // truth indices per keyword, sorted by end frame
    let mut by_keyword: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for (j, t) in truth.iter().enumerate() {
        by_keyword.entry(t.keyword).or_default().push(j);
    }
    for list in by_keyword.values_mut() {
        list.sort_by_key(|&j| (truth[j].end_frame, j));
    }
    let mut taken = vec![false; truth.len()];
    let mut result = MatchResult::default();
    for i in order {
        let ev = &events[i];
        let best = by_keyword.get(&ev.keyword).and_then(|list| {
            let lo = ev.frame.saturating_sub(window);
            let first = list.partition_point(|&j| truth[j].end_frame < lo);
            list[first..]
                .iter()
                .take_while(|&&j| truth[j].end_frame <= ev.frame + window)
                .filter(|&&j| !taken[j])
                .min_by_key(|&&j| truth[j].end_frame.abs_diff(ev.frame))
                .copied()
        });
        match best {
            Some(j) => {
                taken[j] = true;
                result.tp += 1;
                result.pairs.push((i, j));
            }
            None => result.fp += 1,
        }
    }
    result.fn_ = truth.len() - result.tp;
    result
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One point of a precision-recall sweep, with its underlying counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PRPoint {
    /// Per-character threshold.
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PRPoint {
    /// With no detections precision is reported as 1.
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        PRPoint {
            threshold,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }

    pub fn detections(&self) -> usize {
        self.tp + self.fp
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub points: Vec<PRPoint>,
    /// Index of the point with the highest F1 (the first one on ties).
    pub best: usize,
}

impl Sweep {
    fn from_points(points: Vec<PRPoint>) -> Self {
        let mut best = 0;
        for (i, p) in points.iter().enumerate() {
            if p.f1 > points[best].f1 {
                best = i;
            }
        }
        Sweep { points, best }
    }

    pub fn max_f1(&self) -> f64 {
        self.points.get(self.best).map_or(0.0, |p| p.f1)
    }

    pub fn best_point(&self) -> &PRPoint {
        &self.points[self.best]
    }
}

/// Detection setup of one keyword in a sweep.
#[derive(Clone, Debug)]
pub struct KeywordScores<'a> {
    /// Per-frame detection statistic.
    pub scores: &'a [f64],
    /// Characters in the keyword; thresholds scale with it.
    pub num_chars: usize,
}

/// Runs detection at every per-character threshold and pools counts over
/// keywords. Keyword `k` of `streams` corresponds to truth keyword id `k`.
pub fn pr_sweep(
    streams: &[KeywordScores<'_>],
    truth: &[GroundTruthOccurrence],
    thresholds: &[f64],
    refractory: usize,
    window: usize,
) -> Sweep {
    let points = thresholds
        .iter()
        .map(|&theta| {
            let mut events = Vec::new();
            for (k, s) in streams.iter().enumerate() {
                let limit = -(theta * s.num_chars as f64);
                events.extend(
                    detect(s.scores, limit, refractory)
                        .into_iter()
                        .map(|mut e| {
                            e.keyword = k;
                            e
                        }),
                );
            }
            let m = match_detections(&events, truth, window);
            PRPoint::from_counts(theta, m.tp, m.fp, m.fn_)
        })
        .collect();
    Sweep::from_points(points)
}

/// Sweep over an already detected event list: at per-character threshold
/// `θ` an event survives when its score exceeds `-θ · chars`. Since peak
/// picking does not depend on the threshold, this equals re-running
/// detection provided the events were produced with a looser threshold.
pub fn pr_sweep_events(
    events: &[DetectionEvent],
    num_chars: &[usize],
    truth: &[GroundTruthOccurrence],
    thresholds: &[f64],
    window: usize,
) -> Sweep {
    let points = thresholds
        .iter()
        .map(|&theta| {
            let kept: Vec<DetectionEvent> = events
                .iter()
                .filter(|e| e.score > -(theta * num_chars[e.keyword] as f64))
                .cloned()
                .collect();
            let m = match_detections(&kept, truth, window);
            PRPoint::from_counts(theta, m.tp, m.fp, m.fn_)
        })
        .collect();
    Sweep::from_points(points)
}

/// `count` evenly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n)
            .map(|i| start + (end - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub median_frames: f64,
    pub mean_frames: f64,
    pub max_frames: i64,
}

impl LatencyStats {
    pub fn median_ms(&self) -> f64 {
        self.median_frames * FRAME_PERIOD_MS as f64
    }

    pub fn mean_ms(&self) -> f64 {
        self.mean_frames * FRAME_PERIOD_MS as f64
    }

    pub fn max_ms(&self) -> f64 {
        self.max_frames as f64 * FRAME_PERIOD_MS as f64
    }
}

/// Latency of every matched pair: event frame minus truth end frame.
pub fn latencies(
    events: &[DetectionEvent],
    truth: &[GroundTruthOccurrence],
    pairs: &[(usize, usize)],
) -> Vec<i64> {
    pairs
        .iter()
        .map(|&(i, j)| events[i].frame as i64 - truth[j].end_frame as i64)
        .collect()
}

/// Summary of latencies in frames; `None` when nothing matched.
pub fn latency_stats(latencies: &[i64]) -> Option<LatencyStats> {
    if latencies.is_empty() {
        return None;
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    Some(LatencyStats {
        count: n,
        median_frames: median,
        mean_frames: sorted.iter().sum::<i64>() as f64 / n as f64,
        max_frames: sorted[n - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(keyword: usize, frame: usize) -> DetectionEvent {
        DetectionEvent {
            keyword,
            frame,
            score: -1.0,
        }
    }

    fn gt(keyword: usize, end_frame: usize) -> GroundTruthOccurrence {
        GroundTruthOccurrence { keyword, end_frame }
    }

    #[test]
    fn exact_hits() {
        let truth = [gt(0, 100), gt(1, 300), gt(0, 500)];
        let events = [ev(0, 100), ev(1, 300), ev(0, 500)];
        let m = match_detections(&events, &truth, 50);
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
    }

    #[test]
    fn far_event_is_false_positive() {
        let truth = [gt(0, 100)];
        let m = match_detections(&[ev(0, 100), ev(0, 900)], &truth, 50);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
    }

    #[test]
    fn one_to_one() {
        let truth = [gt(0, 100)];
        let m = match_detections(&[ev(0, 95), ev(0, 105)], &truth, 50);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
    }

    #[test]
    fn keyword_must_agree() {
        let m = match_detections(&[ev(1, 100)], &[gt(0, 100)], 50);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn nearest_unmatched_is_taken() {
        let truth = [gt(0, 100), gt(0, 140)];
        let m = match_detections(&[ev(0, 130), ev(0, 131)], &truth, 50);
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn window_edges_are_inclusive() {
        let truth = [gt(0, 100)];
        assert_eq!(match_detections(&[ev(0, 150)], &truth, 50).tp, 1);
        assert_eq!(match_detections(&[ev(0, 50)], &truth, 50).tp, 1);
        assert_eq!(match_detections(&[ev(0, 151)], &truth, 50).tp, 0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        assert_eq!(f1_score(0.5, 0.5), 0.5);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn no_detections_means_zero_recall() {
        let p = PRPoint::from_counts(1.0, 0, 0, 4);
        assert_eq!(p.recall, 0.0);
        assert_eq!(p.f1, 0.0);
    }

    #[test]
    fn best_point_is_brute_force_max() {
        let mut scores = vec![-20.0; 200];
        scores[50] = -1.0;
        scores[120] = -3.0;
        scores[170] = -2.0;
        let truth = [gt(0, 50), gt(0, 170)];
        let th = linspace(0.1, 4.0, 40);
        let s = pr_sweep(
            &[KeywordScores {
                scores: &scores,
                num_chars: 1,
            }],
            &truth,
            &th,
            10,
            5,
        );
        let brute = s.points.iter().map(|p| p.f1).fold(0.0, f64::max);
        assert_eq!(s.max_f1(), brute);
        assert_eq!(s.max_f1(), 1.0);
    }

    #[test]
    fn event_sweep_matches_detection_sweep() {
        let scores: Vec<f64> = (0..300)
            .map(|t| -((t as f64 * 0.37).sin().abs() * 6.0))
            .collect();
        let truth = [gt(0, 20), gt(0, 100), gt(0, 250)];
        let th = linspace(0.2, 3.0, 15);
        let a = pr_sweep(
            &[KeywordScores {
                scores: &scores,
                num_chars: 2,
            }],
            &truth,
            &th,
            5,
            10,
        );
        let events = detect(&scores, f64::NEG_INFINITY, 5);
        let b = pr_sweep_events(&events, &[2], &truth, &th, 10);
        assert_eq!(a, b);
    }

    #[test]
    fn latency_examples() {
        let s = latency_stats(&[0]).unwrap();
        assert_eq!(s.median_ms(), 0.0);
        let s = latency_stats(&[20]).unwrap();
        assert_eq!(s.median_ms(), 200.0);
        let s = latency_stats(&[0, 10, 20]).unwrap();
        assert_eq!(s.median_frames, 10.0);
        assert_eq!(s.median_ms(), 100.0);
        assert_eq!(s.max_frames, 20);
        assert!(latency_stats(&[]).is_none());
        assert_eq!(latency_stats(&[-2, 4]).unwrap().median_frames, 1.0);
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
        let v = linspace(0.0, 1.0, 5);
        assert_eq!(v, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
