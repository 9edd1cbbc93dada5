use afr_core::a3c::sample_action;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DRAWS: usize = 10_000;
/// Upper 1% point of the chi-square distribution with 4 degrees of freedom.
const CHI2_4DF_P01: f64 = 13.2767;

fn frequencies(probs: &[f64], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; probs.len()];
    for _ in 0..DRAWS {
        counts[sample_action(probs, &mut rng) - 1] += 1;
    }
    counts
}

#[test]
fn sampled_actions_follow_the_policy() {
    let cases: [[f64; 5]; 4] = [
        [0.2; 5],
        [0.05, 0.1, 0.15, 0.3, 0.4],
        [0.6, 0.1, 0.1, 0.1, 0.1],
        [0.01, 0.01, 0.01, 0.01, 0.96],
    ];
    for (i, probs) in cases.iter().enumerate() {
        let counts = frequencies(probs, 1000 + i as u64);
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, &p)| {
                let expected = p * DRAWS as f64;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(
            chi2 < CHI2_4DF_P01,
            "{probs:?}: chi2 {chi2:.2} counts {counts:?}"
        );
        for (&c, &p) in counts.iter().zip(probs) {
            let freq = c as f64 / DRAWS as f64;
            assert!((freq - p).abs() <= 0.02, "{probs:?}: {freq} vs {p}");
        }
    }
}

#[test]
fn zero_probability_actions_are_never_drawn() {
    let counts = frequencies(&[0.0, 0.5, 0.0, 0.5, 0.0], 7);
    assert_eq!(counts[0] + counts[2] + counts[4], 0);
}
