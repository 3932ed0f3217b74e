use proptest::prelude::*;
use tcm_core::analytics::{bws, bws_asymptote, measure_run, sweep, MeasureOptions, SavingsInput, SweepSpec};
use tcm_core::iphc::RefreshPolicy;
use tcm_core::mux::{compress_stream, multiplex, MuxConfig};
use tcm_core::traffic::generate_scenario;
use tcm_core::{Direction, GameProfile};

proptest! {
    #[test]
    fn saving_grows_with_bundle_size_and_stays_below_the_limit(
        k in 0.5f64..500.0,
        dk in 0.01f64..50.0,
        payload in 0.0f64..1400.0,
        rh in 4.0f64..20.0,
    ) {
        let lo = bws(&SavingsInput::tcp_ipv4(k, payload, rh)).unwrap();
        let hi = bws(&SavingsInput::tcp_ipv4(k + dk, payload, rh)).unwrap();
        let limit = bws_asymptote(40.0, 2.0, payload, rh).unwrap();
        prop_assert!(hi > lo);
        prop_assert!(hi < limit);
    }

    #[test]
    fn measured_and_analytic_saving_reconcile(
        players in 1usize..30,
        period_ms in 1u64..120,
        seed in any::<u64>(),
        s2c in any::<bool>(),
    ) {
        let dir = if s2c { Direction::ServerToClient } else { Direction::ClientToServer };
        let native = generate_scenario(&GameProfile::wow(), dir, players, 200, seed).unwrap();
        let cfg = MuxConfig::with_period_ms(period_ms);
        let bundles = multiplex(compress_stream(&native, RefreshPolicy::FirstOnly).unwrap(), &cfg).unwrap();
        let r = measure_run(&native, &bundles, &cfg, players, dir, &MeasureOptions::default()).unwrap();
        prop_assert!(r.reconciliation_error() <= 0.01, "{:?}", r);
        let native_bytes: u64 = native.iter().map(|p| 40 + u64::from(p.payload_len)).sum();
        prop_assert_eq!(r.native_bytes, native_bytes);
        prop_assert_eq!(r.muxed_bytes, bundles.iter().map(|b| u64::from(b.wire_size)).sum::<u64>());
        prop_assert!(r.delay.max_us <= cfg.period_us);
    }
}

#[test]
fn sweep_rows_are_players_major() {
    let spec = SweepSpec {
        players: vec![3, 1],
        periods_us: vec![20_000, 10_000, 30_000],
        packets_per_player: 300,
        seed: 4,
        mux: MuxConfig::with_period_ms(10),
        refresh: RefreshPolicy::FirstOnly,
        measure: MeasureOptions::default(),
    };
    let rows = sweep(&GameProfile::wow(), Direction::ClientToServer, &spec).unwrap();
    let keys: Vec<(usize, u64)> = rows.iter().map(|r| (r.n_players, r.period_us)).collect();
    assert_eq!(
        keys,
        vec![
            (3, 20_000),
            (3, 10_000),
            (3, 30_000),
            (1, 20_000),
            (1, 10_000),
            (1, 30_000)
        ]
    );
    let again = sweep(&GameProfile::wow(), Direction::ClientToServer, &spec).unwrap();
    assert_eq!(rows, again);
}

#[test]
fn single_player_gains_little_from_long_periods_only() {
    // One player at 9.5 pps rarely shares a 10 ms bundle, so E[k] stays near 1.
    let native = generate_scenario(&GameProfile::wow(), Direction::ClientToServer, 1, 5000, 1).unwrap();
    let entries = compress_stream(&native, RefreshPolicy::FirstOnly).unwrap();
    let short = MuxConfig::with_period_ms(10);
    let long = MuxConfig::with_period_ms(100);
    let opts = MeasureOptions::default();
    let a = measure_run(
        &native,
        &multiplex(entries.clone(), &short).unwrap(),
        &short,
        1,
        Direction::ClientToServer,
        &opts,
    )
    .unwrap();
    let b = measure_run(
        &native,
        &multiplex(entries, &long).unwrap(),
        &long,
        1,
        Direction::ClientToServer,
        &opts,
    )
    .unwrap();
    assert!(a.e_k < 1.6, "{}", a.e_k);
    assert!(b.e_k > a.e_k);
    assert!(b.bws_measured > a.bws_measured);
}
