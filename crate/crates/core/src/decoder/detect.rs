//! Turning a continuous score stream into discrete detections.
//!
//! A frame fires when its score is above the threshold and it is the peak of
//! the surrounding `±refractory` frames: strictly greater than every earlier
//! frame in range, at least as large as every later one (ties go to the
//! earliest frame). An isolated run of above-threshold frames therefore
//! yields one event at its peak, and events are always more than
//! `refractory` frames apart.
//!
//! Whether a frame is a peak does not depend on the threshold, so raising
//! the threshold can only remove events.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionEvent {
    pub keyword: usize,
    pub frame: usize,
    pub score: f64,
}

/// Streaming peak picker for one keyword. Decisions lag the input by
/// `refractory` frames; memory is bounded by `2 * refractory + 1` scores.
#[derive(Clone, Debug)]
pub struct PeakDetector {
    keyword: usize,
    threshold: f64,
    radius: usize,
    // (frame, score), covering [next_candidate - radius, latest]
    history: VecDeque<(usize, f64)>,
    next_candidate: usize,
    frames_seen: usize,
}

impl PeakDetector {
    pub fn new(keyword: usize, threshold: f64, refractory: usize) -> Self {
        PeakDetector {
            keyword,
            threshold,
            radius: refractory,
            history: VecDeque::with_capacity(2 * refractory + 2),
            next_candidate: 0,
            frames_seen: 0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn decide(&self, candidate: usize) -> Option<DetectionEvent> {
        let front = self.history.front().map_or(0, |h| h.0);
        let score = self.history[candidate - front].1;
        // NaN scores never fire
        if score.is_nan() || score <= self.threshold {
            return None;
        }
        let is_peak = self.history.iter().all(|&(frame, s)| {
            if frame < candidate {
                score > s
            } else {
                frame == candidate || score >= s
            }
        });
        is_peak.then_some(DetectionEvent {
            keyword: self.keyword,
            frame: candidate,
            score,
        })
    }

    fn advance(&mut self) -> Option<DetectionEvent> {
        let event = self.decide(self.next_candidate);
        self.next_candidate += 1;
        while self
            .history
            .front()
            .is_some_and(|&(frame, _)| frame + self.radius < self.next_candidate)
        {
            self.history.pop_front();
        }
        event
    }

    /// Feeds the next frame's score; may confirm an event `refractory`
    /// frames back.
    pub fn push(&mut self, score: f64) -> Option<DetectionEvent> {
        self.history.push_back((self.frames_seen, score));
        self.frames_seen += 1;
        if self.frames_seen > self.next_candidate + self.radius {
            self.advance()
        } else {
            None
        }
    }

    /// Flushes the frames still waiting for look-ahead at end of stream.
    pub fn finish(&mut self) -> Vec<DetectionEvent> {
        let mut out = Vec::new();
        while self.next_candidate < self.frames_seen {
            out.extend(self.advance());
        }
        out
    }
}

/// Batch form of [`PeakDetector`] for a single keyword (id 0).
pub fn detect(scores: &[f64], threshold: f64, refractory: usize) -> Vec<DetectionEvent> {
    let mut det = PeakDetector::new(0, threshold, refractory);
    let mut out: Vec<DetectionEvent> = scores.iter().filter_map(|&s| det.push(s)).collect();
    out.extend(det.finish());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG: f64 = f64::NEG_INFINITY;

    #[test]
    fn one_event_per_burst_at_peak() {
        let scores = [NEG, -9.0, -1.0, -0.5, -0.2, -0.4, -0.9, -9.0, NEG];
        let ev = detect(&scores, -2.0, 30);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].frame, 4);
        assert_eq!(ev[0].score, -0.2);
    }

    #[test]
    fn five_frame_run_peaks_at_frame_three() {
        let scores = [-5.0, -1.0, -0.8, -0.1, -0.6, -0.7, -5.0];
        let ev = detect(&scores, -2.0, 30);
        assert_eq!(ev.iter().map(|e| e.frame).collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn nothing_above_threshold() {
        assert!(detect(&[-5.0, -3.0, NEG, -2.5], -2.0, 3).is_empty());
        assert!(detect(&[], -2.0, 3).is_empty());
    }

    #[test]
    fn separated_bursts_fire_twice() {
        let mut scores = vec![-10.0; 40];
        scores[5] = -1.0;
        scores[6] = -0.5;
        scores[30] = -0.7;
        let ev = detect(&scores, -2.0, 10);
        assert_eq!(ev.iter().map(|e| e.frame).collect::<Vec<_>>(), vec![6, 30]);
    }

    #[test]
    fn ties_go_to_earliest_frame() {
        let scores = [-5.0, -1.0, -1.0, -1.0, -5.0];
        let ev = detect(&scores, -2.0, 5);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].frame, 1);
    }

    #[test]
    fn nearby_smaller_peak_is_suppressed() {
        let mut scores = vec![-10.0; 30];
        scores[10] = -0.5;
        scores[14] = -1.0;
        let ev = detect(&scores, -2.0, 5);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].frame, 10);
    }

    #[test]
    fn streaming_matches_batch_with_zero_radius() {
        let scores = [-1.0, -0.5, -3.0, -0.2, -0.2];
        let ev = detect(&scores, -2.0, 0);
        assert_eq!(
            ev.iter().map(|e| e.frame).collect::<Vec<_>>(),
            vec![0, 1, 3, 4]
        );
    }
}
