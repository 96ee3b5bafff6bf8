use super::toy::{enumerate_sequences, exhaustive_best, HashedDecoder, TableDecoder};
use super::*;
use crate::model::{ModelConfig, ModelKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// V=5 with EOS = 4. Greedy from the start row picks 0 (0.5), then 1, 2,
/// EOS; the peaked tail makes that path globally best.
fn hand_set() -> TableDecoder {
    let l = |p: [f64; 5]| p.iter().map(|v: &f64| v.ln()).collect::<Vec<_>>();
    TableDecoder::from_logits(
        4,
        vec![
            l([0.05, 0.8, 0.05, 0.05, 0.05]),
            l([0.05, 0.05, 0.8, 0.05, 0.05]),
            l([0.1, 0.1, 0.1, 0.1, 0.6]),
            l([0.2, 0.2, 0.2, 0.2, 0.2]),
            l([0.2, 0.2, 0.2, 0.2, 0.2]),
            l([0.5, 0.2, 0.1, 0.1, 0.1]),
        ],
    )
}

fn hashed(seed: u64, vocab: usize) -> HashedDecoder {
    HashedDecoder {
        vocab,
        eos: vocab - 1,
        seed,
        spread: 4.0,
    }
}

#[test]
fn greedy_follows_the_argmax_trace() {
    let d = hand_set();
    let out = greedy_decode(&d, None, 4).unwrap();
    let mut state = 5;
    for &t in &out {
        let row = &d.log_table[state];
        let best = (0..5).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        assert_eq!(t, best);
        state = t;
    }
    assert_eq!(out, vec![0, 1, 2, 4]);
    let (best, _) = exhaustive_best(&d, None, 4).unwrap();
    assert_eq!(out, best);
}

#[test]
fn width_v_matches_exhaustive_on_hand_set_toy() {
    let d = hand_set();
    let beams = beam_search(&d, None, &BeamConfig::new(5, 4)).unwrap();
    let (best, score) = exhaustive_best(&d, None, 4).unwrap();
    assert_eq!(beams[0].tokens, best);
    assert!((beams[0].log_prob - score).abs() < 1e-12);
}

#[test]
fn full_constraint_returns_the_input() {
    let d = hashed(3, 5);
    let seq = vec![2, 0, 1, 4];
    let out = constrained_beam_search(&d, None, &Constraint::known(&seq), &BeamConfig::new(3, 6), SearchOptions::default())
        .unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].tokens, seq);
    let lp = sequence_log_prob(&d, None, &seq).unwrap();
    assert!((out[0].log_prob - lp).abs() < 1e-12);
}

#[test]
fn two_unknowns_match_brute_force() {
    for seed in 0..20 {
        let d = hashed(seed, 5);
        // known, unknown, unknown, known, EOS
        let c = Constraint(vec![Slot::Known(1), Slot::Unknown, Slot::Unknown, Slot::Known(0), Slot::Known(4)]);
        let opts = SearchOptions {
            fill_only: true,
            score_known: true,
        };
        let out = constrained_beam_search(&d, None, &c, &BeamConfig::new(25, 5), opts).unwrap();
        let mut best = (f64::NEG_INFINITY, vec![]);
        for a in 0..4 {
            for b in 0..4 {
                let s = vec![1, a, b, 0, 4];
                let lp = sequence_log_prob(&d, None, &s).unwrap();
                if lp > best.0 {
                    best = (lp, s);
                }
            }
        }
        assert_eq!(out[0].tokens, best.1, "seed {seed}");
        assert!((out[0].log_prob - best.0).abs() < 1e-12);
    }
}

#[test]
fn constraint_validation() {
    let d = hashed(1, 5);
    let bad = Constraint::known(&[7]);
    assert!(matches!(
        constrained_beam_search(&d, None, &bad, &BeamConfig::new(2, 4), SearchOptions::default()),
        Err(DecodeError::InvalidToken { id: 7, .. })
    ));
    let long = Constraint::unknown(9);
    assert!(matches!(
        constrained_beam_search(&d, None, &long, &BeamConfig::new(2, 4), SearchOptions::default()),
        Err(DecodeError::ConstraintTooLong { .. })
    ));
    assert!(beam_search(&d, None, &BeamConfig::new(0, 4)).is_err());
}

/// Beam search is not monotone in width: a wider beam can keep prefixes
/// that look better early and end worse, crowding out the narrow beam's
/// path. This finds such a case among the hashed toys.
#[test]
fn wider_beams_can_score_worse() {
    let found = (0..5000u64).find(|&seed| {
        let d = hashed(seed, 4);
        let s1 = beam_search(&d, None, &BeamConfig::new(1, 5)).unwrap()[0].log_prob;
        let s2 = beam_search(&d, None, &BeamConfig::new(2, 5)).unwrap()[0].log_prob;
        s2 < s1 - 1e-12
    });
    assert!(found.is_some());
}

#[test]
fn model_greedy_is_deterministic_and_equals_width_one() {
    let mut cfg = ModelConfig::new(12);
    cfg.embedding_dim = 5;
    cfg.hidden_dim = 6;
    cfg.z_dim = 3;
    for kind in [ModelKind::Vae, ModelKind::Rnnlm] {
        let m = Model::new(kind, cfg.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let z = [0.3, -1.0, 2.0];
        let a = greedy_decode(&m, Some(&z), 10).unwrap();
        let b = greedy_decode(&m, Some(&z), 10).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| t != PAD && t != SOS));
        let beam = beam_search(&m, Some(&z), &BeamConfig::new(1, 10)).unwrap();
        assert_eq!(beam[0].tokens, a);
        let lp = sequence_log_prob(&m, Some(&z), &a).unwrap();
        assert!((beam[0].log_prob - lp).abs() < 1e-9);
    }
}

fn sequence_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 3usize..6, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn width_one_equals_greedy((seed, vocab, len) in sequence_strategy()) {
        let d = hashed(seed, vocab);
        let g = greedy_decode(&d, None, len).unwrap();
        let b = beam_search(&d, None, &BeamConfig::new(1, len)).unwrap();
        prop_assert_eq!(&b[0].tokens, &g);
    }

    #[test]
    fn scores_equal_teacher_forcing((seed, vocab, len) in sequence_strategy(), width in 1usize..8) {
        let d = hashed(seed, vocab);
        for h in beam_search(&d, None, &BeamConfig::new(width, len)).unwrap() {
            let lp = sequence_log_prob(&d, None, &h.tokens).unwrap();
            prop_assert!((h.log_prob - lp).abs() < 1e-9);
            prop_assert_eq!(h.finished, h.tokens.last() == Some(&d.eos));
        }
    }

    #[test]
    fn exhaustive_width_is_exact((seed, vocab, len) in sequence_strategy(), width in 1usize..6) {
        let d = hashed(seed, vocab);
        let all = enumerate_sequences(&d, None, len).unwrap();
        let (best, score) = exhaustive_best(&d, None, len).unwrap();
        let exact = beam_search(&d, None, &BeamConfig::new(all.len(), len)).unwrap();
        prop_assert_eq!(&exact[0].tokens, &best);
        let narrow = beam_search(&d, None, &BeamConfig::new(width, len)).unwrap();
        prop_assert!(narrow[0].log_prob <= score + 1e-12);
    }

    #[test]
    fn first_token_is_within_the_top_width((seed, vocab, len) in sequence_strategy(), width in 1usize..5) {
        let d = hashed(seed, vocab);
        let first = d.log_probs(&d.start(None).unwrap());
        let mut order: Vec<usize> = (0..vocab).collect();
        order.sort_by(|&a, &b| first[b].partial_cmp(&first[a]).unwrap().then(a.cmp(&b)));
        let top = &order[..width.min(vocab)];
        for h in beam_search(&d, None, &BeamConfig::new(width, len)).unwrap() {
            prop_assert!(top.contains(&h.tokens[0]));
        }
    }

    #[test]
    fn no_known_positions_equals_plain_beam((seed, vocab, len) in sequence_strategy(), width in 1usize..6) {
        let d = hashed(seed, vocab);
        let cfg = BeamConfig::new(width, len);
        let a = beam_search(&d, None, &cfg).unwrap();
        let b = constrained_beam_search(&d, None, &Constraint::unknown(len), &cfg, SearchOptions::default()).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.tokens, &y.tokens);
            prop_assert_eq!(x.log_prob, y.log_prob);
        }
    }

    /// With every known slot ahead of the unknowns, all hypotheses pay the
    /// same forced cost, so skipping it cannot change the ranking.
    #[test]
    fn forced_prefix_cost_does_not_change_ranking(seed in any::<u64>(), prefix in prop::collection::vec(0usize..4, 1..3), unknown in 1usize..3, width in 1usize..6) {
        let d = hashed(seed, 5);
        let mut slots: Vec<Slot> = prefix.iter().map(|&t| Slot::Known(t)).collect();
        slots.extend(std::iter::repeat_n(Slot::Unknown, unknown));
        let c = Constraint(slots);
        let cfg = BeamConfig::new(width, c.len());
        let on = SearchOptions { fill_only: true, score_known: true };
        let off = SearchOptions { fill_only: true, score_known: false };
        let a = constrained_beam_search(&d, None, &c, &cfg, on).unwrap();
        let b = constrained_beam_search(&d, None, &c, &cfg, off).unwrap();
        let ta: Vec<_> = a.iter().map(|h| h.tokens.clone()).collect();
        let tb: Vec<_> = b.iter().map(|h| h.tokens.clone()).collect();
        prop_assert_eq!(ta, tb);
    }

    #[test]
    fn constrained_output_keeps_known_tokens(seed in any::<u64>(), slots in prop::collection::vec(prop::option::of(0usize..4), 1..6), width in 1usize..6) {
        let d = hashed(seed, 5);
        let mut c: Vec<Slot> = slots.iter().map(|s| s.map_or(Slot::Unknown, Slot::Known)).collect();
        c.push(Slot::Known(4));
        let c = Constraint(c);
        let opts = SearchOptions { fill_only: true, score_known: true };
        for h in constrained_beam_search(&d, None, &c, &BeamConfig::new(width, c.len()), opts).unwrap() {
            prop_assert_eq!(h.tokens.len(), c.len());
            for (t, s) in h.tokens.iter().zip(&c.0) {
                match s {
                    Slot::Known(k) => prop_assert_eq!(t, k),
                    Slot::Unknown => prop_assert!(*t != 4),
                }
            }
        }
    }
}
