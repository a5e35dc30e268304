//! Statistical behavior of the synthetic generator at sample sizes where
//! the law of large numbers has teeth. Seeds are pinned, so these are exact
//! regression checks on distributional claims, not flaky Monte Carlo.

use proxymet::labels::LabelState;
use proxymet::synth::{generate, prototypes_of, SynthConfig};

#[test]
fn empirical_prevalence_tracks_the_configured_rate() {
    // With no all-negative branch and no uncertainty degradation, each
    // class's positive rate should land on its configured prevalence. The
    // redraw of all-negative label vectors inflates rates by under one
    // percent at twelve classes, which the tolerance absorbs.
    let c = 12;
    let config = SynthConfig {
        n_samples: 10_000,
        n_classes: c,
        input_dim: 24,
        prevalence: vec![0.3; c],
        negative_fraction: 0.0,
        uncertain_fraction: 0.0,
        seed: 42,
        ..SynthConfig::default()
    };
    let data = generate(&config).unwrap();
    for j in 0..c {
        let positives = data
            .samples
            .iter()
            .filter(|s| s.labels.states()[j] == LabelState::Positive)
            .count();
        let rate = positives as f64 / data.len() as f64;
        assert!(
            (rate - 0.3).abs() <= 0.02,
            "class {j}: empirical rate {rate:.4} strays from 0.3"
        );
    }
}

#[test]
fn cooccurrence_boost_couples_the_boosted_pair() {
    // Class 1's rate triples when class 0 fires, so the pair must co-occur
    // well above the independence baseline. The comparison is within the
    // generated sample, which holds the at-least-one-positive conditioning
    // fixed on both sides; that conditioning alone anti-correlates classes,
    // so clearing 1.4x is a real effect of the boost.
    let c = 10;
    let mut cooccurrence = vec![vec![1.0; c]; c];
    cooccurrence[0][1] = 3.0;
    let config = SynthConfig {
        n_samples: 10_000,
        n_classes: c,
        input_dim: 20,
        prevalence: vec![0.15; c],
        cooccurrence,
        negative_fraction: 0.0,
        uncertain_fraction: 0.0,
        seed: 4242,
        ..SynthConfig::default()
    };
    let data = generate(&config).unwrap();
    let n = data.len() as f64;
    let pos = |s: &proxymet::synth::Sample, j: usize| s.labels.states()[j] == LabelState::Positive;
    let p0 = data.samples.iter().filter(|s| pos(s, 0)).count() as f64 / n;
    let p1 = data.samples.iter().filter(|s| pos(s, 1)).count() as f64 / n;
    let joint = data
        .samples
        .iter()
        .filter(|s| pos(s, 0) && pos(s, 1))
        .count() as f64
        / n;
    assert!(
        joint > 1.4 * p0 * p1,
        "joint rate {joint:.4} vs independence {:.4}: boost not visible",
        p0 * p1
    );

    // An unboosted pair stays near (or below) independence.
    let p2 = data.samples.iter().filter(|s| pos(s, 2)).count() as f64 / n;
    let p3 = data.samples.iter().filter(|s| pos(s, 3)).count() as f64 / n;
    let joint23 = data
        .samples
        .iter()
        .filter(|s| pos(s, 2) && pos(s, 3))
        .count() as f64
        / n;
    assert!(joint23 < 1.2 * p2 * p3);
}

#[test]
fn each_class_scatters_around_two_separated_modes() {
    let config = SynthConfig {
        seed: 9,
        ..SynthConfig::default()
    };
    let data = generate(&config).unwrap();
    let prototypes = prototypes_of(&config).unwrap();

    // Samples positive for class 0 alone sit near one of its two mode
    // prototypes: the dot product with the nearest prototype is close to
    // its noiseless value of 1, the other stays near 0.
    let singles: Vec<&proxymet::synth::Sample> = data
        .samples
        .iter()
        .filter(|s| {
            let bits = s.labels.effective_bits();
            bits[0] && bits[1..].iter().all(|&b| !b) && !s.labels.is_all_negative()
        })
        .collect();
    assert!(
        singles.len() > 30,
        "only {} single-class samples",
        singles.len()
    );

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut counts = [0usize; 2];
    let mut on_mode = 0usize;
    let mut clean_margin = 0usize;
    for s in &singles {
        let d0 = dot(&s.features, &prototypes.class_modes[0][0]);
        let d1 = dot(&s.features, &prototypes.class_modes[0][1]);
        let (best, other) = if d0 >= d1 { (d0, d1) } else { (d1, d0) };
        counts[usize::from(d1 > d0)] += 1;
        // The noiseless projection is 1 with noise 0.25 per coordinate, so a
        // small tail of samples legitimately dips under these cutoffs.
        if best > 0.4 {
            on_mode += 1;
        }
        if best - other > 0.2 {
            clean_margin += 1;
        }
    }
    // Modes are drawn uniformly, so both clusters are populated, and the
    // orthogonal prototype frame keeps the assignments unambiguous.
    for count in counts {
        assert!(
            count as f64 >= 0.25 * singles.len() as f64,
            "lopsided modes: {counts:?}"
        );
    }
    assert!(on_mode as f64 >= 0.95 * singles.len() as f64);
    assert!(clean_margin as f64 >= 0.9 * singles.len() as f64);

    // All-negative samples cluster at the healthy prototype instead.
    let negatives = data.samples.iter().filter(|s| s.labels.is_all_negative());
    let mut n_neg = 0;
    let mut near_healthy = 0;
    for s in negatives {
        n_neg += 1;
        if dot(&s.features, &prototypes.healthy) > 0.4 {
            near_healthy += 1;
        }
    }
    assert!(
        n_neg > 400,
        "negative fraction 0.3 should yield hundreds of negatives"
    );
    assert!(near_healthy as f64 >= 0.95 * n_neg as f64);
}
