mod common;

use common::{central_difference, relative_error};
use proptest::prelude::*;
use segpr::config::Config;
use segpr::corpus::{LabeledSentence, Tag, Vocab};
use segpr::crf::Lattice;
use segpr::lexicon::Lexicon;
use segpr::model::{Model, ModelParams};
use segpr::numerics::Rng;
use segpr::train::{pr_loss, q_tilde, QCandidate, QDistribution};

fn setup(seed: u64) -> (Model, LabeledSentence) {
    let s = LabeledSentence::from_line("今天 天气 很 好 我们 去 公园").unwrap();
    let vocab = Vocab::build([s.chars.as_slice()], 1).unwrap();
    let config = Config {
        embedding_dim: 6,
        kernel_sizes: vec![2, 3],
        kernels_per_size: 5,
        ..Config::default()
    };
    let mut m = Model::init(&config, vocab, &mut Rng::new(seed)).unwrap();
    let mut rng = Rng::new(seed + 100);
    for v in m.params.transitions.data_mut() {
        *v = rng.uniform_in(-1.0, 1.0);
    }
    (m, s)
}

fn nll(params: &ModelParams, ids: &[usize], tags: &[Tag]) -> f64 {
    let u = params.encoder.unary_scores(ids).unwrap();
    -Lattice::new(&u, &params.transitions)
        .unwrap()
        .log_likelihood(tags, false)
        .unwrap()
}

#[test]
fn two_candidate_pr_loss_matches_mixture_and_finite_differences() {
    let (m, s) = setup(5);
    let ids = m.vocab.ids(&s.chars);
    let cands = m.kbest(&s.chars, 2).unwrap();
    let q = QDistribution {
        sentence: 0,
        candidates: cands
            .iter()
            .zip([0.7, 0.3])
            .map(|(c, p)| QCandidate {
                tags: c.tags.clone(),
                phi: 0.0,
                prob: p,
            })
            .collect(),
        iteration: 1,
        vocab_size: m.vocab.len(),
    };
    let value = |p: &ModelParams| {
        0.7 * nll(p, &ids, &cands[0].tags) + 0.3 * nll(p, &ids, &cands[1].tags)
    };
    let (loss, grads) = pr_loss(&m.params, &[(&ids, &q)], false).unwrap();
    assert!((loss - value(&m.params)).abs() < 1e-10);

    let mut worst: f64 = 0.0;
    for (t, g) in grads.iter().enumerate() {
        let step = (g.len() / 15).max(1);
        for idx in (0..g.len()).step_by(step) {
            let numeric = central_difference(m.params.tensors()[t], idx, 1e-5, |x| {
                let mut p = m.params.clone();
                *p.tensors_mut()[t] = x.clone();
                value(&p)
            });
            worst = worst.max(relative_error(g.data()[idx], numeric));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn pr_gradient_equals_kl_gradient() {
    // KL(Q̃ || p) = Σ Q̃ log Q̃ − Σ Q̃ log p; the entropy term is constant in θ.
    let (m, s) = setup(8);
    let ids = m.vocab.ids(&s.chars);
    let lex = Lexicon::from_words(["今天", "天气", "公园"]);
    let q = QDistribution::build(0, &s.chars, &m, &lex, 1.0, 3, 1).unwrap();
    let kl = |p: &ModelParams| {
        q.candidates
            .iter()
            .map(|c| c.prob * (c.prob.ln() + nll(p, &ids, &c.tags)))
            .sum::<f64>()
    };
    let (_, grads) = pr_loss(&m.params, &[(&ids, &q)], false).unwrap();
    let t = 0;
    let g = &grads[t];
    let mut worst: f64 = 0.0;
    for idx in (0..g.len()).step_by(7) {
        let numeric = central_difference(m.params.tensors()[t], idx, 1e-5, |x| {
            let mut p = m.params.clone();
            *p.tensors_mut()[t] = x.clone();
            kl(&p)
        });
        worst = worst.max(relative_error(g.data()[idx], numeric));
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn built_candidates_are_well_formed_segmentations() {
    let (m, s) = setup(2);
    let lex = Lexicon::from_words(["今天", "我们"]);
    let q = QDistribution::build(0, &s.chars, &m, &lex, 1.0, 6, 1).unwrap();
    for c in &q.candidates {
        let words = segpr::corpus::tags_to_words(&s.chars, &c.tags).unwrap();
        assert_eq!(words.concat(), s.chars.iter().collect::<String>());
        assert!(segpr::corpus::is_valid_tags(&c.tags));
        assert!(c.prob > 0.0);
    }
}

proptest! {
    #[test]
    fn softmax_is_normalized_and_shift_invariant(
        phis in prop::collection::vec(-50.0f64..50.0, 1..10),
        c in -100.0f64..100.0,
    ) {
        let q = q_tilde(&phis).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(q.iter().all(|&p| p > 0.0));
        let shifted: Vec<f64> = phis.iter().map(|p| p + c).collect();
        let q2 = q_tilde(&shifted).unwrap();
        for (a, b) in q.iter().zip(&q2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_alpha_favors_higher_scoring_candidate(
        frac in 0.0f64..1.0,
        s_hi in -5.0f64..5.0,
        gap in 0.01f64..3.0,
        a1 in 0.0f64..2.0,
        da in 0.01f64..2.0,
    ) {
        let s_lo = s_hi - gap;
        let p_hi = |alpha: f64| q_tilde(&[frac + alpha * s_hi, frac + alpha * s_lo]).unwrap()[0];
        prop_assert!(p_hi(a1 + da) > p_hi(a1));
    }
}
