//! Property tests: config parsing is total, router delivery is exact for
//! arbitrary message sets, quadrature exactness holds for random degrees.

mod common;

use oversem::comm::{spawn, RoutedMessage, Scheduler};
use oversem::ref_element::gll_rule;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Fuzzed input either parses or yields a structured error, never a
    /// panic (totality of the parser).
    #[test]
    fn config_parser_is_total(text in ".{0,400}") {
        let _ = oversem::runtime::parse_config(&text);
    }

    /// Structured-ish fuzz: random section/key/value lines.
    #[test]
    fn config_parser_total_on_ini_shapes(
        lines in prop::collection::vec(
            ("[A-Za-z.\\[\\]]{0,12}", "[A-Za-z0-9 .eE+-]{0,10}"),
            0..12
        )
    ) {
        let text: String = lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let _ = oversem::runtime::parse_config(&text);
    }

    /// Valid configs round-trip exactly.
    #[test]
    fn config_round_trip(
        dt in 1e-6f64..1.0,
        steps in 1u64..1000,
        order in 1usize..10,
        re in 1.0f64..1e4,
        tol_exp in -12i32..-3,
    ) {
        let text = format!(
            "[GENERAL]\ndt = {dt}\nnumSteps = {steps}\npolynomialOrder = {order}\n\
             [PHYSICS]\nRe = {re}\n[PRESSURE]\ntolerance = 1e{tol_exp}\n"
        );
        let cfg = oversem::runtime::parse_config(&text).unwrap();
        let ser = oversem::runtime::serialize_config(&cfg);
        let cfg2 = oversem::runtime::parse_config(&ser).unwrap();
        prop_assert_eq!(cfg, cfg2);
    }

    /// GLL quadrature integrates x^k exactly for k <= 2N-1.
    #[test]
    fn quadrature_exactness(n in 1usize..=15, k_frac in 0.0f64..1.0) {
        let rule = gll_rule(n).unwrap();
        let k = (k_frac * (2 * n - 1) as f64).floor() as usize;
        let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
        let q: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&x, &w)| w * x.powi(k as i32))
            .sum();
        prop_assert!((q - exact).abs() < 1e-12);
    }

    /// Crystal router conserves arbitrary message multisets (P = 5).
    #[test]
    fn router_conserves_messages(
        msgs in prop::collection::vec((0usize..5, 0usize..5, prop::collection::vec(any::<u8>(), 0..12)), 0..40)
    ) {
        let msgs_outer = msgs.clone();
        let out = spawn(5, Scheduler::Concurrent, move |c| {
            let mine: Vec<RoutedMessage> = msgs
                .iter()
                .enumerate()
                .filter(|(_, (s, _, _))| *s == c.rank())
                .map(|(i, (s, d, p))| RoutedMessage::new(*d, *s, i as u64, p.clone()))
                .collect();
            let (inbox, stats) = c.crystal_route(mine).unwrap();
            assert!(stats.rounds <= 3);
            inbox
                .into_iter()
                .map(|m| (m.source_rank, m.dest_rank, m.payload))
                .collect::<Vec<_>>()
        })
        .unwrap();
        let mut received: Vec<(usize, usize, Vec<u8>)> =
            out.into_iter().flatten().collect();
        let mut sent: Vec<(usize, usize, Vec<u8>)> = msgs_outer
            .into_iter()
            .map(|(s, d, p)| (s, d, p))
            .collect();
        received.sort();
        sent.sort();
        prop_assert_eq!(received, sent);
    }
}
