mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;
use wpt_sched_core::energy::{
    optimal_modulation_at_gain, packet_success_prob, quantize_levels, transmit_power_at_gain,
    NodeEnergy,
};
use wpt_sched_core::NetworkParams;

#[test]
fn transmit_power_reference_value() {
    // ln(0.2 / 5e-4) / 3 at BPSK and unit gain.
    let p = NetworkParams::new(1);
    assert_relative_eq!(
        transmit_power_at_gain(&p, 1.0, 1).unwrap(),
        1.997_154_85,
        epsilon = 1e-8
    );
}

#[test]
fn packet_success_reference_value() {
    let p = NetworkParams::new(1);
    assert_relative_eq!(packet_success_prob(&p), 0.8798, epsilon = 1e-4);
}

#[test]
fn energy_bookkeeping_matches_reference() {
    let p = NetworkParams::new(1);
    for g in [0.3, 0.5, 1.0, 1.7, 2.5, 6.0] {
        let got = NodeEnergy::at_gain(&p, g).unwrap();
        let want = common::energy(&p, g);
        assert_eq!(got.modulation.order, want.order, "g={g}");
        assert_eq!(got.delta, want.delta, "g={g}");
        assert_eq!(got.tx_levels, want.tx_levels, "g={g}");
        assert_eq!(got.harvest_only, want.harvest_only, "g={g}");
    }
}

#[test]
fn quantization_brackets_the_energy() {
    let p = NetworkParams::new(1);
    for g in [0.4, 1.0, 2.5] {
        let d = optimal_modulation_at_gain(&p, g).unwrap();
        let levels = quantize_levels(d.net_energy_gain, p.battery_quantum) as f64;
        assert!(levels * p.battery_quantum <= d.net_energy_gain + 1e-15);
        assert!((levels + 1.0) * p.battery_quantum > d.net_energy_gain);
    }
}

fn draw() -> impl Strategy<Value = NetworkParams> {
    (
        1e-6f64..1e-2,
        0.1f64..10.0,
        0.5f64..10.0,
        0.05f64..1.0,
        20e3f64..2e6,
        1e-3f64..5e-2,
        1u32..=8,
        64u32..=2048,
    )
        .prop_map(|(ber, k2, pe, delta, w, slot, m, bits)| {
            let mut p = NetworkParams::new(1);
            p.ber_target = ber;
            p.kappa1 = 0.2;
            p.kappa2 = k2;
            p.bs_power = pe;
            p.transfer_efficiency = delta;
            p.bandwidth = w;
            p.slot_len = slot;
            p.arrival_period = slot;
            p.max_modulation = m;
            p.packet_bits = bits;
            p
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn bisection_matches_exhaustive_argmax(p in draw(), g in 0.01f64..20.0) {
        let brute = common::brute_order(&p, g);
        match optimal_modulation_at_gain(&p, g) {
            Ok(d) => {
                let b = brute.unwrap();
                // Equal orders, or a numerical tie in the objective.
                if d.order != b {
                    let (jd, jb) = (common::net_energy(&p, g, d.order), common::net_energy(&p, g, b));
                    prop_assert!((jd - jb).abs() <= 1e-12 * jb.abs().max(1e-300), "{} vs {}", d.order, b);
                }
            }
            Err(_) => prop_assert!(brute.is_none()),
        }
    }

    #[test]
    fn transmit_power_increases_with_order(p in draw(), g in 0.01f64..20.0) {
        for rho in 1..p.max_modulation {
            let a = transmit_power_at_gain(&p, g, rho).unwrap();
            let b = transmit_power_at_gain(&p, g, rho + 1).unwrap();
            prop_assert!(b > a);
        }
    }

    #[test]
    fn quantization_is_a_floor(e in -1.0f64..1.0, q in 1e-4f64..1e-1) {
        let l = quantize_levels(e, q);
        prop_assert!(l as f64 * q <= e + 1e-12);
        prop_assert!((l + 1) as f64 * q > e - 1e-12);
    }
}
