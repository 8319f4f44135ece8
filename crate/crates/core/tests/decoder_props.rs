mod common;

use common::{
    alignment_oracle, keyword_only_oracle, keyword_support, random_keyword, sparse_posteriors,
};
use kwspot::ctc::Alphabet;
use kwspot::decoder::{
    detect, Decoder, DecoderMode, FillerOptions, KeywordNetwork, PeakDetector, Semantics,
};
use kwspot::Frames;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= 1e-10
}

fn run(
    net: &KeywordNetwork,
    post: &Frames,
    mode: DecoderMode,
    options: FillerOptions,
) -> (Vec<f64>, Vec<Option<f64>>) {
    let a = Alphabet::standard();
    let mut dec = Decoder::with_options(vec![net.clone()], &a, mode, options);
    let mut kw = Vec::new();
    let mut filler = Vec::new();
    for f in post.iter() {
        let s = dec.step(f);
        kw.push(s.keyword[0]);
        filler.push(s.filler);
    }
    (kw, filler)
}

fn keyword_only(net: &KeywordNetwork, post: &Frames, semantics: Semantics) -> Vec<f64> {
    run(
        net,
        post,
        DecoderMode::KeywordOnly(semantics),
        FillerOptions::default(),
    )
    .0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn keyword_only_matches_alignment_enumeration(seed in any::<u64>(), frames in 1usize..=8, len in 1usize..=2) {
        let a = Alphabet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kw = random_keyword(&mut rng, &['a', 'b', 'c'], len);
        let net = KeywordNetwork::build(&kw, &a, 1.0).unwrap();
        let support = keyword_support(&a, &kw, 'z');
        let post = sparse_posteriors(&mut rng, frames, &support, a.len());
        let oracle = alignment_oracle(&post, &support, net.node_labels(), a.blank());
        let (want_sum, want_max) = keyword_only_oracle(&oracle);
        let got_sum = keyword_only(&net, &post, Semantics::Sum);
        let got_max = keyword_only(&net, &post, Semantics::Max);
        for t in 0..frames {
            prop_assert!(close(got_sum[t], want_sum[t]), "sum t={} {} vs {}", t, got_sum[t], want_sum[t]);
            prop_assert!(close(got_max[t], want_max[t]), "max t={} {} vs {}", t, got_max[t], want_max[t]);
        }
    }

    #[test]
    fn sum_dominates_max_and_values_stay_below_zero(seed in any::<u64>(), frames in 1usize..=40) {
        let a = Alphabet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kw = random_keyword(&mut rng, &['a', 'b'], 3);
        let net = KeywordNetwork::build(&kw, &a, 1.0).unwrap();
        let support = keyword_support(&a, &kw, 'q');
        let post = sparse_posteriors(&mut rng, frames, &support, a.len());
        let mut sum = Decoder::new(vec![net.clone()], &a, DecoderMode::KeywordOnly(Semantics::Sum));
        let mut max = Decoder::new(vec![net], &a, DecoderMode::KeywordOnly(Semantics::Max));
        for f in post.iter() {
            let s = sum.step(f).keyword[0];
            let m = max.step(f).keyword[0];
            prop_assert!(s >= m);
            let (vs, vm) = (&sum.state().keyword_values[0], &max.state().keyword_values[0]);
            for (x, y) in vs.iter().zip(vm) {
                prop_assert!(*x <= 0.0 && *y <= 0.0);
                prop_assert!(x >= y);
            }
        }
    }

    #[test]
    fn filler_score_is_best_framewise_path(seed in any::<u64>(), frames in 1usize..=30) {
        let a = Alphabet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support: Vec<usize> = (0..a.len()).collect();
        let post = sparse_posteriors(&mut rng, frames, &support, a.len());
        let net = KeywordNetwork::build("ab", &a, 1.0).unwrap();
        let options = FillerOptions { reentry: false, unit_entry: false };
        let (_, filler) = run(&net, &post, DecoderMode::KeywordFiller, options);
        // every framewise label sequence is a filler path
        let mut acc = 0.0;
        for (t, f) in post.iter().enumerate() {
            acc += f.iter().copied().fold(0.0, f64::max).ln();
            prop_assert!((filler[t].unwrap() - acc).abs() < 1e-9);
        }
    }

    #[test]
    fn filler_keyword_branch_is_isolated_without_reentry(seed in any::<u64>(), frames in 1usize..=8, len in 1usize..=2) {
        let a = Alphabet::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kw = random_keyword(&mut rng, &['a', 'b', 'c'], len);
        let net = KeywordNetwork::build(&kw, &a, 1.0).unwrap();
        let support = keyword_support(&a, &kw, 'z');
        let post = sparse_posteriors(&mut rng, frames, &support, a.len());

        let unit = FillerOptions { reentry: false, unit_entry: true };
        let (kw_unit, _) = run(&net, &post, DecoderMode::KeywordFiller, unit);
        prop_assert_eq!(&kw_unit, &keyword_only(&net, &post, Semantics::Max));

        // with the filler feeding the entry, each start frame s is offset by
        // the filler score of frame s - 1
        let fed = FillerOptions { reentry: false, unit_entry: false };
        let (kw_fed, filler) = run(&net, &post, DecoderMode::KeywordFiller, fed);
        let oracle = alignment_oracle(&post, &support, net.node_labels(), a.blank());
        for (t, &got) in kw_fed.iter().enumerate() {
            let want = (0..=t)
                .map(|s| {
                    let entry = if s == 0 { 0.0 } else { filler[s - 1].unwrap() };
                    entry + oracle.max[s][t]
                })
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(close(got, want), "t={} {} vs {}", t, got, want);
        }
    }

    #[test]
    fn raising_the_threshold_only_removes_events(
        scores in proptest::collection::vec(-20.0f64..0.0, 0..200),
        lo in -20.0f64..0.0,
        gap in 0.0f64..10.0,
        refractory in 0usize..40,
    ) {
        let loose = detect(&scores, lo, refractory);
        let strict = detect(&scores, lo + gap, refractory);
        prop_assert!(strict.len() <= loose.len());
        for e in &strict {
            prop_assert!(loose.contains(e));
        }
        for e in &loose {
            prop_assert!(e.score > lo);
            prop_assert_eq!(e.score, scores[e.frame]);
        }
        for w in loose.windows(2) {
            prop_assert!(w[1].frame - w[0].frame > refractory);
        }
    }

    #[test]
    fn isolated_runs_give_one_event_at_their_peak(
        run_scores in proptest::collection::vec(-5.0f64..0.0, 1..20),
        pad in 31usize..60,
    ) {
        let mut scores = vec![-50.0; pad];
        scores.extend(&run_scores);
        scores.extend(vec![-50.0; pad]);
        let ev = detect(&scores, -10.0, 30);
        prop_assert_eq!(ev.len(), 1);
        let best = run_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first_peak = run_scores.iter().position(|&s| s == best).unwrap();
        prop_assert_eq!(ev[0].frame, pad + first_peak);
    }
}

#[test]
fn same_label_skip_would_overcount() {
    let a = Alphabet::standard();
    let net = KeywordNetwork::build("aa", &a, 1.0).unwrap();
    let wrong = net.clone().with_same_label_skip();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let support = keyword_support(&a, "aa", 'z');
    let mut discrepancies = 0;
    for _ in 0..50 {
        let post = sparse_posteriors(&mut rng, 6, &support, a.len());
        let oracle = alignment_oracle(&post, &support, net.node_labels(), a.blank());
        let (want, _) = keyword_only_oracle(&oracle);
        let right = keyword_only(&net, &post, Semantics::Sum);
        let bad = keyword_only(&wrong, &post, Semantics::Sum);
        for t in 0..6 {
            assert!(close(right[t], want[t]));
            if !close(bad[t], want[t]) {
                discrepancies += 1;
            }
        }
    }
    assert!(discrepancies > 0);

    // "_ a a _" without a blank spells the single letter "a"
    let spell = |s: &str| {
        let rows: Vec<Vec<f64>> = s
            .chars()
            .map(|c| {
                let mut v = vec![0.0; a.len()];
                v[a.index_of(c).unwrap()] = 1.0;
                v
            })
            .collect();
        Frames::from_rows(a.len(), &rows).unwrap()
    };
    let post = spell("_aa_");
    assert_eq!(
        keyword_only(&net, &post, Semantics::Sum)[3],
        f64::NEG_INFINITY
    );
    assert_eq!(keyword_only(&wrong, &post, Semantics::Sum)[3], 0.0);
    assert_eq!(keyword_only(&net, &spell("_a-a_"), Semantics::Sum)[4], 0.0);
}

#[test]
fn cloned_decoder_continues_identically() {
    let a = Alphabet::standard();
    let nets = vec![
        KeywordNetwork::build("and", &a, 1.0).unwrap(),
        KeywordNetwork::build("the", &a, 1.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let support: Vec<usize> = (0..a.len()).collect();
    let post = sparse_posteriors(&mut rng, 120, &support, a.len());
    for mode in [
        DecoderMode::KeywordOnly(Semantics::Sum),
        DecoderMode::KeywordFiller,
    ] {
        let mut whole = Decoder::new(nets.clone(), &a, mode);
        let all: Vec<_> = post.iter().map(|f| whole.step(f)).collect();
        let mut first = Decoder::new(nets.clone(), &a, mode);
        for f in post.iter().take(47) {
            first.step(f);
        }
        let mut second = first.clone();
        let rest: Vec<_> = post.iter().skip(47).map(|f| second.step(f)).collect();
        assert_eq!(&all[47..], &rest[..]);
    }
}

#[test]
fn peak_detector_is_chunking_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..500)
        .map(|_| rand::Rng::random_range(&mut rng, -8.0..0.0))
        .collect();
    let batch = detect(&scores, -3.0, 12);
    let mut det = PeakDetector::new(0, -3.0, 12);
    let mut streamed = Vec::new();
    for chunk in scores.chunks(37) {
        for &s in chunk {
            streamed.extend(det.push(s));
        }
    }
    streamed.extend(det.finish());
    assert_eq!(batch, streamed);
}
