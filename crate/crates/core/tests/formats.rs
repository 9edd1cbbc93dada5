use std::fs;

use afr_core::features::compute_norm_stats;
use afr_core::nn::{build_network, load_checkpoint, save_checkpoint, Checkpoint, Head};
use afr_core::trace::{
    generate_synthetic, generate_synthetic_with, load_dataset, load_trace, save_trace,
    MotionProfile, SynthOptions,
};
use afr_core::Error;
use proptest::prelude::*;

fn motion() -> impl Strategy<Value = MotionProfile> {
    prop_oneof![
        Just(MotionProfile::Static),
        Just(MotionProfile::Dynamic),
        (1usize..5).prop_map(|p| MotionProfile::Hybrid { switch_period: p }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_files_round_trip_bit_exactly(
        motion in motion(),
        n in 1usize..12,
        seed in any::<u64>(),
        fps in prop_oneof![Just(24u32), Just(30), Just(60)],
        levels in 2usize..8,
    ) {
        let opts = SynthOptions { original_fps: fps, levels, ..SynthOptions::default() };
        let trace = generate_synthetic_with(&opts, motion, n, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        save_trace(&trace, &path).unwrap();
        let loaded = load_trace(&path).unwrap();
        prop_assert_eq!(&loaded, &trace);
        let again = dir.path().join("u.json");
        save_trace(&loaded, &again).unwrap();
        prop_assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), layers in 1usize..4, units in 1usize..24, m in 2usize..7) {
        let trace = generate_synthetic(MotionProfile::Dynamic, 3, seed).unwrap();
        let ckpt = Checkpoint {
            actor: build_network(Head::Actor { actions: m }, m, layers, units, seed).unwrap(),
            critic: build_network(Head::Critic, m, layers, units, seed ^ 1).unwrap(),
            norm: compute_norm_stats(std::slice::from_ref(&trace)).unwrap(),
            profile_name: "qoe_q".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.afr");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let bits = |c: &Checkpoint| c.actor.values().chain(c.critic.values()).map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&loaded), bits(&ckpt));
        prop_assert_eq!(&loaded, &ckpt);
        prop_assert_eq!(loaded.to_bytes(), fs::read(&path).unwrap());
    }
}

#[test]
fn corrupted_checkpoint_is_detected() {
    let trace = generate_synthetic(MotionProfile::Static, 2, 1).unwrap();
    let ckpt = Checkpoint {
        actor: build_network(Head::Actor { actions: 5 }, 5, 1, 4, 1).unwrap(),
        critic: build_network(Head::Critic, 5, 1, 4, 2).unwrap(),
        norm: compute_norm_stats(std::slice::from_ref(&trace)).unwrap(),
        profile_name: "qoe_b".into(),
    };
    let mut bytes = ckpt.to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(Error::CorruptFile(_))
    ));
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let traces: Vec<_> = (0..4)
        .map(|i| generate_synthetic(MotionProfile::Hybrid { switch_period: 2 }, 5, i).unwrap())
        .collect();
    for (i, t) in traces.iter().enumerate() {
        save_trace(t, dir.path().join(format!("{i:03}.json"))).unwrap();
    }
    assert_eq!(load_dataset(dir.path()).unwrap(), traces);
}
