use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use statekl_core::replay::{
    decode_transitions, encode_transitions, snapshot_states, OnlineBuffer, Provenance,
    ReplayBuffer, SamplingScheme, StateSource, Transition,
};
use statekl_core::rng::seeded;

fn tr(episode: u64, step: u32, tag: f64) -> Transition {
    Transition {
        state: vec![tag, episode as f64],
        action: vec![step as f64],
        reward: -tag,
        next_state: vec![tag + 1.0, episode as f64],
        done: step % 7 == 6,
        episode_id: episode,
        step_id: step,
    }
}

/// Buffer holding `lens[k]` transitions of episode `k + 1`.
fn buffer(capacity: usize, lens: &[u32]) -> ReplayBuffer {
    let mut b = ReplayBuffer::new(capacity, 2, 1);
    for (k, &n) in lens.iter().enumerate() {
        for s in 0..n {
            b.push(tr(k as u64 + 1, s, s as f64)).unwrap();
        }
    }
    b
}

fn scheme() -> impl Strategy<Value = SamplingScheme> {
    prop_oneof![
        Just(SamplingScheme::Uniform),
        (0u64..12).prop_map(SamplingScheme::Delayed),
        (1u64..12).prop_map(SamplingScheme::Windowed),
    ]
}

fn transition() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>, Vec<f64>, bool, u32)> {
    (
        prop::collection::vec(-1e6..1e6f64, 3),
        -1e3..1e3f64,
        prop::collection::vec(-1e6..1e6f64, 3),
        prop::collection::vec(-2.0..2.0f64, 2),
        any::<bool>(),
        any::<u32>(),
    )
}

#[test]
fn delayed_three_over_ten_episodes() {
    let b = buffer(1000, &[5; 10]);
    let mut rng = seeded(11);
    let batch = b
        .sample(SamplingScheme::Delayed(3), 10_000, &mut rng)
        .unwrap();
    assert!(batch.episode_ids.iter().all(|&e| e <= 7));
    let seen: BTreeSet<u64> = batch.episode_ids.iter().copied().collect();
    assert_eq!(seen, (1..=7).collect());
}

#[test]
fn windowed_two_over_ten_episodes() {
    let b = buffer(1000, &[5; 10]);
    let mut rng = seeded(12);
    let batch = b
        .sample(SamplingScheme::Windowed(2), 10_000, &mut rng)
        .unwrap();
    let seen: BTreeSet<u64> = batch.episode_ids.iter().copied().collect();
    assert_eq!(seen, BTreeSet::from([9, 10]));
}

#[test]
fn per_episode_counts_after_ten_episodes() {
    let b = buffer(1000, &[5; 10]);
    let mut counts = BTreeMap::new();
    for t in b.iter() {
        *counts.entry(t.episode_id).or_insert(0) += 1;
    }
    assert_eq!(counts.len(), 10);
    assert!(counts.values().all(|&c| c == 5));
}

#[test]
fn snapshot_frequencies_within_multinomial_bounds() {
    let k = 10;
    let b = buffer(1000, &[k]);
    let n = 100_000;
    let snap = snapshot_states(&b, n, &mut seeded(0));
    let mut counts = vec![0usize; k as usize];
    for row in snap.data().chunks(2) {
        counts[row[0] as usize] += 1;
    }
    let p = 1.0 / k as f64;
    let mean = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!(
            (c as f64 - mean).abs() <= 3.0 * sigma,
            "state {i}: {c} vs {mean} +- {}",
            3.0 * sigma
        );
    }
}

#[test]
fn single_transition_snapshot_repeats_it() {
    let b = buffer(10, &[1]);
    let snap = snapshot_states(&b, 5, &mut seeded(0));
    assert_eq!(snap.shape(), &[5, 2]);
    assert!(snap.data().chunks(2).all(|r| r == b.state(0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_transitions_satisfy_their_scheme(
        lens in prop::collection::vec(0u32..15, 1..14),
        capacity in 1usize..120,
        scheme in scheme(),
        seed in any::<u64>(),
    ) {
        let b = buffer(capacity, &lens);
        let cur = b.current_episode();
        let range = b.eligible_range(scheme);
        // The eligible range is exactly the set admitted by the predicate.
        for (i, t) in b.iter().enumerate() {
            prop_assert_eq!(range.contains(&i), scheme.admits(t.episode_id, cur));
        }
        match b.sample(scheme, 10_000, &mut seeded(seed)) {
            Ok(batch) => {
                prop_assert_eq!(batch.len(), 10_000);
                prop_assert!(batch.episode_ids.iter().all(|&e| scheme.admits(e, cur)));
            }
            Err(_) => prop_assert!(range.is_empty()),
        }
    }

    #[test]
    fn trivial_schemes_reduce_to_uniform(
        lens in prop::collection::vec(0u32..15, 1..14),
        capacity in 1usize..120,
    ) {
        let b = buffer(capacity, &lens);
        let all = b.eligible_range(SamplingScheme::Uniform);
        prop_assert_eq!(b.eligible_range(SamplingScheme::Delayed(0)), all.clone());
        let w = SamplingScheme::windowed(b.capacity() as u64).unwrap();
        prop_assert_eq!(b.eligible_range(w), all);
    }

    #[test]
    fn fifo_survivors_keep_episode_order(
        lens in prop::collection::vec(0u32..15, 1..14),
        capacity in 1usize..60,
    ) {
        let b = buffer(capacity, &lens);
        let total: u32 = lens.iter().sum();
        prop_assert_eq!(b.len(), (total as usize).min(capacity));
        let ids: Vec<u64> = b.iter().map(|t| t.episode_id).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] <= w[1]));
    }

    /// Checked at every rollout boundary, which is where the online buffer
    /// is read.
    #[test]
    fn online_and_delayed_sets_are_disjoint(
        lens in prop::collection::vec(1u32..8, 1..12),
        rollouts in 1usize..5,
        extra in 0u64..3,
    ) {
        let d = rollouts as u64 + extra;
        let scheme = SamplingScheme::Delayed(d);
        let mut replay = ReplayBuffer::new(1000, 2, 1);
        let mut online = OnlineBuffer::new(rollouts, 2);
        for (k, &n) in lens.iter().enumerate() {
            for s in 0..n {
                let t = tr(k as u64 + 1, s, 0.0);
                replay.push(t.clone()).unwrap();
                online.push(t).unwrap();
            }
            online.finish_rollout();
            let cur = replay.current_episode();
            prop_assert_eq!(online.last_completed(), Some(cur));
            let online_eps: BTreeSet<u64> = online.episode_ids().collect();
            prop_assert!(online_eps.iter().all(|&e| e + rollouts as u64 > cur));
            let range = replay.eligible_range(scheme);
            for i in range {
                let e = replay.get(i).unwrap().episode_id;
                prop_assert!(!online_eps.contains(&e), "episode {} in both sets", e);
            }
        }
    }

    #[test]
    fn batch_bytes_round_trip(
        raw in prop::collection::vec(transition(), 0..20),
        checksum in any::<u64>(),
        prov in 0u8..3,
    ) {
        let provenance = [Provenance::Replay, Provenance::Expert, Provenance::Transient][prov as usize];
        let items: Vec<Transition> = raw
            .into_iter()
            .enumerate()
            .map(|(i, (s, r, ns, a, done, step))| Transition {
                state: s,
                action: a,
                reward: r,
                next_state: ns,
                done,
                episode_id: i as u64 / 3,
                step_id: step,
            })
            .collect();
        let bytes = encode_transitions(3, 2, provenance, checksum, &items);
        let (header, back) = decode_transitions(&bytes).unwrap();
        prop_assert_eq!(header.count, items.len());
        prop_assert_eq!(header.provenance, provenance);
        prop_assert_eq!(header.source_checksum, checksum);
        prop_assert_eq!(&back, &items);
        prop_assert_eq!(encode_transitions(3, 2, provenance, checksum, &back), bytes);
    }
}
