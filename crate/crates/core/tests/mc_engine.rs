use mdlab::mc::{choose_tilt, simulate, Method, Simulation, CHUNK_SIZE};
use mdlab::oracle::{enumerate_exact, lattice_dp_max};
use mdlab::theory::SequenceSpec;
use mdlab::DistributionSpec;

fn rad(n: u64) -> SequenceSpec {
    SequenceSpec::iid(DistributionSpec::Rademacher { scale: 1.0 }, n).unwrap()
}

#[test]
fn worker_count_does_not_change_bits() {
    for method in [Method::Naive, Method::Tilted] {
        let runs: Vec<_> = [1, 2, 8]
            .iter()
            .map(|&w| simulate(&rad(48), 1.8, 3 * CHUNK_SIZE + 17, 4, method, w).unwrap())
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.0.p_hat.to_bits(), runs[0].0.p_hat.to_bits());
            assert_eq!(r.0.stderr.to_bits(), runs[0].0.stderr.to_bits());
            assert_eq!(r.1, runs[0].1);
        }
    }
}

#[test]
fn merge_is_associative_and_commutative() {
    let sim = Simulation::new(&rad(20), 1.0, 6 * CHUNK_SIZE, 8, Method::Tilted).unwrap();
    let parts: Vec<_> = (0..6).map(|c| sim.run_chunk(c).0).collect();
    let left = parts
        .iter()
        .skip(1)
        .fold(parts[0].clone(), |a, b| a.merge(b).unwrap());
    let right = parts
        .iter()
        .rev()
        .skip(1)
        .fold(parts[5].clone(), |a, b| a.merge(b).unwrap());
    let grouped = parts[0]
        .merge(&parts[3])
        .unwrap()
        .merge(&parts[1].merge(&parts[5]).unwrap())
        .unwrap()
        .merge(&parts[4].merge(&parts[2]).unwrap())
        .unwrap();
    assert_eq!(left, right);
    assert_eq!(left, grouped);
    assert_eq!(left, sim.run(3).unwrap().0);
}

#[test]
fn tilted_matches_dp() {
    let exact = lattice_dp_max(64, 2.0, 1.0).unwrap();
    let (m, s) = simulate(&rad(64), 2.0, 200_000, 31, Method::Tilted, 4).unwrap();
    assert!(
        ((m.p_hat - exact.p_max) / m.stderr).abs() < 4.0,
        "{m:?} vs {}",
        exact.p_max
    );
    assert!(
        ((s.p_hat - exact.p_sum) / s.stderr).abs() < 4.0,
        "{s:?} vs {}",
        exact.p_sum
    );
}

#[test]
fn tilted_matches_enumeration_for_asymmetric_law() {
    let seq = SequenceSpec::iid(DistributionSpec::TwoPoint { a: 2.0, b: 1.0 }, 14).unwrap();
    let exact = enumerate_exact(&seq, 2.0).unwrap();
    let (m, _) = simulate(&seq, 2.0, 200_000, 12, Method::Tilted, 4).unwrap();
    assert!(
        ((m.p_hat - exact.p_max) / m.stderr).abs() < 4.0,
        "{m:?} vs {}",
        exact.p_max
    );
}

#[test]
fn tilted_beats_naive_far_out() {
    let (naive, _) = simulate(&rad(256), 2.5, 100_000, 3, Method::Naive, 4).unwrap();
    let (tilted, _) = simulate(&rad(256), 2.5, 100_000, 3, Method::Tilted, 4).unwrap();
    assert!(tilted.stderr < naive.stderr);
}

#[test]
fn per_index_tilt_hits_the_drift() {
    let scales: Vec<f64> = (1..=30).map(|j| 0.5 + j as f64 / 30.0).collect();
    let seq = SequenceSpec::scaled(
        DistributionSpec::Uniform { half_width: 1.0 },
        scales.clone(),
    )
    .unwrap();
    let plan = choose_tilt(&seq, 2.0).unwrap();
    let mean: f64 = scales
        .iter()
        .map(|s| s * seq.dist.tilted_mean(s * plan.theta).unwrap())
        .sum::<f64>()
        / 30.0;
    assert!((mean - plan.drift).abs() <= 1e-10);
    let (m, _) = simulate(&seq, 2.0, 20_000, 1, Method::Tilted, 2).unwrap();
    assert!(m.p_hat > 0.0 && m.p_hat < 1.0);
}
