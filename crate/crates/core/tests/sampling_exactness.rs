//! Sampler output against full enumeration and moment identities.

use std::collections::BTreeMap;

use occupancy::frequencies::{BlockRule, FrequencySpec, FrequencyView};
use occupancy::moments::{binomial_mean, phi};
use occupancy::rng::replicate_stream;
use occupancy::sampling::{sample_fixed_n, sample_poissonized, Sampler, Scheme};

fn view(spec: FrequencySpec) -> FrequencyView {
    FrequencyView::new(spec).unwrap()
}

/// Law of (X_1, .., X_n) for n balls in boxes with probabilities `p`.
fn enumerate(p: &[f64], n: u32) -> BTreeMap<Vec<u64>, f64> {
    let mut law = BTreeMap::new();
    let k = p.len();
    let mut occ = vec![0u32; k];
    fn rec(p: &[f64], n: u32, i: usize, left: u32, occ: &mut Vec<u32>, law: &mut BTreeMap<Vec<u64>, f64>) {
        if i == p.len() - 1 {
            occ[i] = left;
            let mut prob = (1..=n).map(|x| x as f64).product::<f64>();
            for (j, &m) in occ.iter().enumerate() {
                prob *= p[j].powi(m as i32) / (1..=m).map(|x| x as f64).product::<f64>();
            }
            let mut counts = vec![0u64; n as usize];
            for &m in occ.iter() {
                if m > 0 {
                    counts[m as usize - 1] += 1;
                }
            }
            *law.entry(counts).or_insert(0.0) += prob;
            return;
        }
        for m in 0..=left {
            occ[i] = m;
            rec(p, n, i + 1, left - m, occ, law);
        }
    }
    rec(p, n, 0, n, &mut occ, &mut law);
    law
}

fn check_against_enumeration(sampler: &Sampler, p: &[f64], n: u32, reps: u64, seed: u64) {
    let law = enumerate(p, n);
    let mut seen: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
    let mut rng = replicate_stream(seed, 0);
    for _ in 0..reps {
        let c = sampler.sample(&mut rng);
        assert_eq!(c.ball_sum(), n as u64);
        *seen.entry(c.counts[..n as usize].to_vec()).or_insert(0) += 1;
    }
    for (outcome, &prob) in &law {
        let freq = seen.get(outcome).copied().unwrap_or(0) as f64 / reps as f64;
        let se = (prob * (1.0 - prob) / reps as f64).sqrt();
        assert!(
            (freq - prob).abs() <= 4.0 * se + 1e-12,
            "p={p:?} n={n} outcome {outcome:?}: {freq} vs {prob}"
        );
    }
    for outcome in seen.keys() {
        assert!(law.contains_key(outcome), "impossible outcome {outcome:?}");
    }
}

#[test]
fn fixed_n_matches_enumeration() {
    let cases: Vec<Vec<f64>> = vec![vec![1.0], vec![0.5, 0.5], vec![0.7, 0.3], vec![0.5, 0.3, 0.2]];
    for (i, p) in cases.iter().enumerate() {
        let v = view(FrequencySpec::Explicit { p: p.clone() });
        for n in 1..=4u32 {
            let direct = Sampler::new(&v, Scheme::FixedN { n: n as u64 }, 8).unwrap();
            check_against_enumeration(&direct, p, n, 100_000, 100 + i as u64);
            // every ball through the tail sampler
            let tail = Sampler::with_prefix_rate(&v, Scheme::FixedN { n: n as u64 }, 8, f64::INFINITY).unwrap();
            assert_eq!(tail.prefix_len(), 0);
            check_against_enumeration(&tail, p, n, 100_000, 200 + i as u64);
        }
    }
}

#[test]
fn tail_collisions_inside_blocks_are_exact() {
    // two blocks of two boxes: probabilities 0.3, 0.3, 0.2, 0.2
    let v = view(FrequencySpec::Blocks {
        rule: BlockRule::Explicit {
            blocks: vec![(2, 0.3), (2, 0.2)],
        },
    });
    let p = [0.3, 0.3, 0.2, 0.2];
    for n in 2..=4u32 {
        let s = Sampler::with_prefix_rate(&v, Scheme::FixedN { n: n as u64 }, 8, f64::INFINITY).unwrap();
        check_against_enumeration(&s, &p, n, 100_000, 300 + n as u64);
    }
}

#[test]
fn poissonized_single_box() {
    let v = view(FrequencySpec::Explicit { p: vec![1.0] });
    let reps = 100_000u64;
    let mut rng = replicate_stream(9, 0);
    let mut hits = 0u64;
    for _ in 0..reps {
        hits += sample_poissonized(&v, 1.0, &mut rng).unwrap().count(1);
    }
    let e1 = (-1.0f64).exp();
    let se = (e1 * (1.0 - e1) / reps as f64).sqrt();
    assert!((hits as f64 / reps as f64 - e1).abs() < 4.0 * se);
}

#[test]
fn poissonized_boxes_independent() {
    let v = view(FrequencySpec::Explicit { p: vec![0.5, 0.5] });
    let reps = 100_000u64;
    let s = Sampler::with_prefix_rate(&v, Scheme::Poissonized { t: 2.0 }, 8, f64::INFINITY).unwrap();
    let mut rng = replicate_stream(10, 0);
    // with both boxes at rate 1, (count of singletons) = 1[N_1=1] + 1[N_2=1]
    let mut n2 = 0u64;
    let mut n1 = 0u64;
    for _ in 0..reps {
        match s.sample(&mut rng).count(1) {
            2 => n2 += 1,
            1 => n1 += 1,
            _ => {}
        }
    }
    let e1 = (-1.0f64).exp();
    let p2 = e1 * e1;
    let p1 = 2.0 * e1 * (1.0 - e1);
    for (obs, p) in [(n2, p2), (n1, p1)] {
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((obs as f64 / reps as f64 - p).abs() < 4.0 * se);
    }
}

fn all_families() -> Vec<FrequencySpec> {
    vec![
        FrequencySpec::Geometric { q: 0.5 },
        FrequencySpec::PowerLaw {
            exponent: 2.0,
            prefactor: None,
        },
        FrequencySpec::StretchedExp { beta: 0.5 },
        FrequencySpec::PoissonWeights { lambda: 5.0 },
        FrequencySpec::Blocks {
            rule: BlockRule::Factorial,
        },
        FrequencySpec::Blocks {
            rule: BlockRule::KarlinEx1,
        },
        FrequencySpec::Blocks {
            rule: BlockRule::BgyEx2,
        },
        FrequencySpec::Blocks {
            rule: BlockRule::GenEx { beta: 0.5, alpha: 1.0 },
        },
    ]
}

#[test]
fn conservation_everywhere() {
    for spec in all_families() {
        let v = view(spec);
        for &n in &[1u64, 7, 100, 5000] {
            let s = Sampler::new(&v, Scheme::FixedN { n }, 32).unwrap();
            let mut rng = replicate_stream(n, 1);
            for _ in 0..200 {
                let c = s.sample(&mut rng);
                assert_eq!(c.total_balls, n, "{}", v.label());
                assert_eq!(c.ball_sum(), n);
                assert_eq!(c.occupied, c.counts.iter().sum::<u64>() + c.overflow_boxes);
            }
        }
        let s = Sampler::new(&v, Scheme::Poissonized { t: 300.0 }, 32).unwrap();
        let mut rng = replicate_stream(77, 2);
        for _ in 0..200 {
            let c = s.sample(&mut rng);
            assert_eq!(c.ball_sum(), c.total_balls);
        }
    }
}

#[test]
fn poissonized_total_is_poisson() {
    let v = view(FrequencySpec::PowerLaw {
        exponent: 2.0,
        prefactor: None,
    });
    let t = 500.0;
    let s = Sampler::new(&v, Scheme::Poissonized { t }, 32).unwrap();
    let reps = 20_000;
    let mut rng = replicate_stream(5, 0);
    let tot: Vec<f64> = (0..reps).map(|_| s.sample(&mut rng).total_balls as f64).collect();
    let mean = tot.iter().sum::<f64>() / reps as f64;
    let var = tot.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
    assert!((mean - t).abs() < 4.0 * (t / reps as f64).sqrt());
    // sd of the sample variance of a Poisson(t) sample ≈ t √(2/reps)
    assert!((var - t).abs() < 4.0 * t * (2.0 / reps as f64).sqrt());
}

#[test]
fn counts_are_unbiased() {
    let reps = 20_000u64;
    for spec in [
        FrequencySpec::Geometric { q: 0.5 },
        FrequencySpec::PowerLaw {
            exponent: 2.0,
            prefactor: None,
        },
    ] {
        let v = view(spec);
        let ps = Sampler::new(&v, Scheme::Poissonized { t: 1000.0 }, 32).unwrap();
        let fs = Sampler::new(&v, Scheme::FixedN { n: 1000 }, 32).unwrap();
        let mut rng = replicate_stream(11, 0);
        let pois: Vec<_> = (0..reps).map(|_| ps.sample(&mut rng)).collect();
        let fixed: Vec<_> = (0..reps).map(|_| fs.sample(&mut rng)).collect();
        for r in 1..=3u32 {
            for (draws, target) in [
                (&pois, phi(&v, r, 1000.0, 1e-10).unwrap().value),
                (&fixed, binomial_mean(&v, 1000, r, 1e-10).unwrap().value),
            ] {
                let xs: Vec<f64> = draws.iter().map(|c| c.count(r) as f64).collect();
                let m = xs.iter().sum::<f64>() / reps as f64;
                let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
                assert!(
                    (m - target).abs() < 4.0 * sd / (reps as f64).sqrt() + 1e-12,
                    "{} r={r}: {m} vs {target}",
                    v.label()
                );
            }
        }
    }
}

#[test]
fn fixed_n_one_ball_and_rejection() {
    let v = view(FrequencySpec::StretchedExp { beta: 0.5 });
    let mut rng = replicate_stream(1, 1);
    let c = sample_fixed_n(&v, 1, &mut rng).unwrap();
    assert_eq!((c.count(1), c.occupied), (1, 1));
    let sub = view(FrequencySpec::Explicit { p: vec![0.4, 0.4] });
    assert!(sample_fixed_n(&sub, 2, &mut rng).is_err());
}
