//! Linear-chain CRF over the four BMES tags.
//!
//! All dynamic programs take a [`Lattice`] (unary scores plus transition
//! matrix). `constrained` restricts the sequence set to BMES-valid tag
//! sequences: start in `{B,S}`, end in `{E,S}`, legal bigrams only.

use std::cmp::Ordering;
use std::rc::Rc;

use crate::corpus::{is_valid_tags, Tag, NUM_TAGS};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId};

/// Stand-in for `-inf` inside the forward/backward recursions.
pub const MASKED: f64 = -1e30;

/// Whether `from → to` is a legal BMES bigram.
pub fn transition_allowed(from: Tag, to: Tag) -> bool {
    from.can_precede(to)
}

/// Zero-initialized `T×T` transition matrix, `A[from, to]`.
pub fn zero_transitions() -> Matrix {
    Matrix::zeros(NUM_TAGS, NUM_TAGS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSequence {
    pub tags: Vec<Tag>,
    pub score: f64,
}

/// Node and edge posteriors of one lattice.
#[derive(Clone, Debug)]
pub struct Marginals {
    /// `N×T`, row `i` is `P(y_i = ·)`.
    pub node: Matrix,
    /// `N−1` matrices, entry `[s, t]` is `P(y_i = s, y_{i+1} = t)`.
    pub edge: Vec<Matrix>,
    pub log_partition: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Lattice<'a> {
    unary: &'a Matrix,
    transitions: &'a Matrix,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m <= MASKED / 2.0 {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl<'a> Lattice<'a> {
    pub fn new(unary: &'a Matrix, transitions: &'a Matrix) -> Result<Self> {
        if unary.cols() != NUM_TAGS {
            return Err(Error::Dimension(format!(
                "unary scores need {NUM_TAGS} columns, got {}",
                unary.cols()
            )));
        }
        if transitions.shape() != (NUM_TAGS, NUM_TAGS) {
            return Err(Error::Dimension(format!(
                "transitions must be {NUM_TAGS}x{NUM_TAGS}, got {:?}",
                transitions.shape()
            )));
        }
        Ok(Self { unary, transitions })
    }

    pub fn len(&self) -> usize {
        self.unary.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.rows() == 0
    }

    pub fn unary(&self) -> &Matrix {
        self.unary
    }

    pub fn transitions(&self) -> &Matrix {
        self.transitions
    }

    #[inline]
    fn u(&self, i: usize, t: usize) -> f64 {
        self.unary.get(i, t)
    }

    #[inline]
    fn a(&self, s: usize, t: usize) -> f64 {
        self.transitions.get(s, t)
    }

    fn start_penalty(t: usize, constrained: bool) -> f64 {
        if constrained && !Tag::ALL[t].can_start() {
            MASKED
        } else {
            0.0
        }
    }

    fn end_penalty(t: usize, constrained: bool) -> f64 {
        if constrained && !Tag::ALL[t].can_end() {
            MASKED
        } else {
            0.0
        }
    }

    fn trans(&self, s: usize, t: usize, constrained: bool) -> f64 {
        if constrained && !transition_allowed(Tag::ALL[s], Tag::ALL[t]) {
            MASKED
        } else {
            self.a(s, t)
        }
    }

    fn legal(s: usize, t: usize, constrained: bool) -> bool {
        !constrained || transition_allowed(Tag::ALL[s], Tag::ALL[t])
    }

    /// Unary plus transition score of `tags`; no masking is applied.
    pub fn sequence_score(&self, tags: &[Tag]) -> Result<f64> {
        if tags.len() != self.len() {
            return Err(Error::Input(format!(
                "{} tags for a lattice of length {}",
                tags.len(),
                self.len()
            )));
        }
        let Some(first) = tags.first() else {
            return Ok(0.0);
        };
        // same accumulation order as the decoders, so scores agree bitwise
        let mut score = self.u(0, first.code());
        for i in 1..tags.len() {
            score = score + self.a(tags[i - 1].code(), tags[i].code()) + self.u(i, tags[i].code());
        }
        Ok(score)
    }

    fn forward(&self, constrained: bool) -> Vec<[f64; NUM_TAGS]> {
        let n = self.len();
        let mut alpha = vec![[0.0; NUM_TAGS]; n];
        for t in 0..NUM_TAGS {
            alpha[0][t] = Self::start_penalty(t, constrained) + self.u(0, t);
        }
        let mut buf = [0.0; NUM_TAGS];
        for i in 1..n {
            for t in 0..NUM_TAGS {
                for s in 0..NUM_TAGS {
                    buf[s] = alpha[i - 1][s] + self.trans(s, t, constrained);
                }
                alpha[i][t] = log_sum_exp(&buf) + self.u(i, t);
            }
        }
        alpha
    }

    fn backward(&self, constrained: bool) -> Vec<[f64; NUM_TAGS]> {
        let n = self.len();
        let mut beta = vec![[0.0; NUM_TAGS]; n];
        for t in 0..NUM_TAGS {
            beta[n - 1][t] = Self::end_penalty(t, constrained);
        }
        let mut buf = [0.0; NUM_TAGS];
        for i in (0..n.saturating_sub(1)).rev() {
            for s in 0..NUM_TAGS {
                for t in 0..NUM_TAGS {
                    buf[t] = self.trans(s, t, constrained) + self.u(i + 1, t) + beta[i + 1][t];
                }
                beta[i][s] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn finish(&self, alpha: &[[f64; NUM_TAGS]], constrained: bool) -> f64 {
        let last = alpha.last().expect("nonempty lattice");
        let mut buf = [0.0; NUM_TAGS];
        for t in 0..NUM_TAGS {
            buf[t] = last[t] + Self::end_penalty(t, constrained);
        }
        log_sum_exp(&buf)
    }

    /// `log Σ_y exp(score(y))`; 0 for an empty lattice.
    pub fn log_partition(&self, constrained: bool) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.finish(&self.forward(constrained), constrained)
    }

    pub fn log_likelihood(&self, tags: &[Tag], constrained: bool) -> Result<f64> {
        Ok(self.sequence_score(tags)? - self.log_partition(constrained))
    }

    pub fn marginals(&self, constrained: bool) -> Marginals {
        let n = self.len();
        if n == 0 {
            return Marginals {
                node: Matrix::zeros(0, NUM_TAGS),
                edge: Vec::new(),
                log_partition: 0.0,
            };
        }
        let alpha = self.forward(constrained);
        let beta = self.backward(constrained);
        let log_z = self.finish(&alpha, constrained);
        let mut node = Matrix::zeros(n, NUM_TAGS);
        for i in 0..n {
            for t in 0..NUM_TAGS {
                node.set(i, t, (alpha[i][t] + beta[i][t] - log_z).exp());
            }
        }
        let mut edge = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n.saturating_sub(1) {
            let mut m = Matrix::zeros(NUM_TAGS, NUM_TAGS);
            for s in 0..NUM_TAGS {
                for t in 0..NUM_TAGS {
                    let v = alpha[i][s] + self.trans(s, t, constrained) + self.u(i + 1, t)
                        + beta[i + 1][t]
                        - log_z;
                    m.set(s, t, v.exp());
                }
            }
            edge.push(m);
        }
        Marginals {
            node,
            edge,
            log_partition: log_z,
        }
    }

    /// Highest-scoring sequence. Ties go to the lower tag code at every
    /// backpointer and at the final position.
    pub fn viterbi(&self, constrained: bool) -> ScoredSequence {
        let n = self.len();
        if n == 0 {
            return ScoredSequence {
                tags: Vec::new(),
                score: 0.0,
            };
        }
        let mut delta = vec![[None::<f64>; NUM_TAGS]; n];
        let mut back = vec![[0usize; NUM_TAGS]; n];
        for t in 0..NUM_TAGS {
            if !constrained || Tag::ALL[t].can_start() {
                delta[0][t] = Some(self.u(0, t));
            }
        }
        for i in 1..n {
            for t in 0..NUM_TAGS {
                let mut best: Option<(f64, usize)> = None;
                for s in 0..NUM_TAGS {
                    let Some(prev) = delta[i - 1][s] else { continue };
                    if !Self::legal(s, t, constrained) {
                        continue;
                    }
                    let v = prev + self.a(s, t);
                    if best.is_none_or(|(b, _)| v > b) {
                        best = Some((v, s));
                    }
                }
                if let Some((v, s)) = best {
                    delta[i][t] = Some(v + self.u(i, t));
                    back[i][t] = s;
                }
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for t in 0..NUM_TAGS {
            if constrained && !Tag::ALL[t].can_end() {
                continue;
            }
            if let Some(v) = delta[n - 1][t] {
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, t));
                }
            }
        }
        let (score, mut t) = best.expect("S...S is always admissible");
        let mut tags = vec![Tag::S; n];
        for i in (0..n).rev() {
            tags[i] = Tag::ALL[t];
            t = back[i][t];
        }
        ScoredSequence { tags, score }
    }

    /// The `k` highest-scoring sequences in nonincreasing score order, ties
    /// broken lexicographically by tag codes. Exact: keeps `k` partial
    /// candidates per state and position.
    pub fn kbest(&self, k: usize, constrained: bool) -> Vec<ScoredSequence> {
        let n = self.len();
        if n == 0 || k == 0 {
            return Vec::new();
        }
        let mut lists: [Vec<Partial>; NUM_TAGS] = Default::default();
        for t in 0..NUM_TAGS {
            if !constrained || Tag::ALL[t].can_start() {
                lists[t].push(Partial {
                    score: self.u(0, t),
                    path: Rc::new(PathNode { tag: t as u8, prev: None }),
                });
            }
        }
        for i in 1..n {
            let mut next: [Vec<Partial>; NUM_TAGS] = Default::default();
            for (t, slot) in next.iter_mut().enumerate() {
                let mut pool = Vec::with_capacity(NUM_TAGS * k);
                for (s, list) in lists.iter().enumerate() {
                    if !Self::legal(s, t, constrained) {
                        continue;
                    }
                    for cand in list {
                        pool.push(Partial {
                            score: cand.score + self.a(s, t) + self.u(i, t),
                            path: Rc::new(PathNode {
                                tag: t as u8,
                                prev: Some(cand.path.clone()),
                            }),
                        });
                    }
                }
                select_top(&mut pool, k);
                *slot = pool;
            }
            lists = next;
        }
        let mut finals: Vec<Partial> = lists
            .into_iter()
            .enumerate()
            .filter(|(t, _)| !constrained || Tag::ALL[*t].can_end())
            .flat_map(|(_, l)| l)
            .collect();
        select_top(&mut finals, k);
        finals
            .into_iter()
            .map(|p| ScoredSequence {
                tags: p.path.tags(),
                score: p.score,
            })
            .collect()
    }

    /// Weighted negative log-likelihood `Σ_c w_c·(log Z − score(y_c))` with its
    /// gradients with respect to the unary scores and the transitions.
    pub fn weighted_nll(
        &self,
        targets: &[(&[Tag], f64)],
        constrained: bool,
    ) -> Result<(f64, Matrix, Matrix)> {
        let marg = self.marginals(constrained);
        let total_weight: f64 = targets.iter().map(|(_, w)| w).sum();
        let mut loss = total_weight * marg.log_partition;
        let mut d_unary = marg.node;
        d_unary.scale(total_weight);
        let mut d_trans = zero_transitions();
        for e in &marg.edge {
            d_trans.add_scaled(e, total_weight)?;
        }
        for &(tags, w) in targets {
            if constrained && !is_valid_tags(tags) {
                return Err(Error::Input(
                    "target tag sequence is not BMES-valid under constrained training".into(),
                ));
            }
            loss -= w * self.sequence_score(tags)?;
            for (i, t) in tags.iter().enumerate() {
                let c = t.code();
                d_unary.set(i, c, d_unary.get(i, c) - w);
                if i > 0 {
                    let p = tags[i - 1].code();
                    d_trans.set(p, c, d_trans.get(p, c) - w);
                }
            }
        }
        Ok((loss, d_unary, d_trans))
    }
}

/// Adds the weighted CRF negative log-likelihood of `targets` as a scalar node
/// depending on the unary-score node and the transition node.
pub fn nll_node(
    graph: &mut Graph,
    unary: NodeId,
    transitions: NodeId,
    targets: &[(&[Tag], f64)],
    constrained: bool,
) -> Result<NodeId> {
    let (loss, d_unary, d_trans) = {
        let lat = Lattice::new(graph.value(unary), graph.value(transitions))?;
        lat.weighted_nll(targets, constrained)?
    };
    graph.scalar(loss, vec![(unary, d_unary), (transitions, d_trans)])
}

struct PathNode {
    tag: u8,
    prev: Option<Rc<PathNode>>,
}

impl PathNode {
    fn tags(&self) -> Vec<Tag> {
        let mut out = Vec::new();
        let mut cur = Some(self);
        while let Some(node) = cur {
            out.push(Tag::ALL[node.tag as usize]);
            cur = node.prev.as_deref();
        }
        out.reverse();
        out
    }

    fn codes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut cur = Some(self);
        while let Some(node) = cur {
            out.push(node.tag);
            cur = node.prev.as_deref();
        }
        out.reverse();
        out
    }
}

struct Partial {
    score: f64,
    path: Rc<PathNode>,
}

fn rank(a: &Partial, b: &Partial) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.path.codes().cmp(&b.path.codes()))
}

fn select_top(pool: &mut Vec<Partial>, k: usize) {
    pool.sort_by(rank);
    pool.truncate(k);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use Tag::*;

    fn lattice_data(rng: &mut Rng, n: usize) -> (Matrix, Matrix) {
        let u = (0..n * 4).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let a = (0..16).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        (
            Matrix::from_vec(n, 4, u).unwrap(),
            Matrix::from_vec(4, 4, a).unwrap(),
        )
    }

    fn all_sequences(n: usize) -> Vec<Vec<Tag>> {
        (0..4usize.pow(n as u32))
            .map(|mut code| {
                let mut tags = vec![B; n];
                for i in (0..n).rev() {
                    tags[i] = Tag::ALL[code % 4];
                    code /= 4;
                }
                tags
            })
            .collect()
    }

    fn brute_score(u: &Matrix, a: &Matrix, tags: &[Tag]) -> f64 {
        let unary: f64 = tags.iter().enumerate().map(|(i, t)| u.get(i, t.code())).sum();
        let pair: f64 = tags.windows(2).map(|w| a.get(w[0].code(), w[1].code())).sum();
        unary + pair
    }

    #[test]
    fn score_examples() {
        let u = Matrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]]).unwrap();
        let mut a = zero_transitions();
        a.set(B.code(), M.code(), 0.5);
        let lat = Lattice::new(&u, &a).unwrap();
        assert_eq!(lat.sequence_score(&[B, M]).unwrap(), 3.5);
        assert!(lat.sequence_score(&[B]).is_err());

        let z = Matrix::zeros(3, 4);
        let za = zero_transitions();
        let lat = Lattice::new(&z, &za).unwrap();
        assert_eq!(lat.sequence_score(&[S, B, M]).unwrap(), 0.0);

        let one = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4]]).unwrap();
        let lat = Lattice::new(&one, &a).unwrap();
        assert_eq!(lat.sequence_score(&[E]).unwrap(), 0.3);
    }

    #[test]
    fn shape_checks() {
        let u = Matrix::zeros(2, 3);
        let a = zero_transitions();
        assert!(Lattice::new(&u, &a).is_err());
        let u = Matrix::zeros(2, 4);
        let a = Matrix::zeros(3, 4);
        assert!(Lattice::new(&u, &a).is_err());
    }

    #[test]
    fn single_position_partition() {
        let u = Matrix::zeros(1, 4);
        let a = zero_transitions();
        let lat = Lattice::new(&u, &a).unwrap();
        assert!((lat.log_partition(false) - 4f64.ln()).abs() < 1e-15);
        // start ∩ end = {S}
        assert!(lat.log_partition(true).abs() < 1e-15);
        assert!((lat.log_likelihood(&[M], false).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        let m = lat.marginals(false);
        assert!(m.node.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn partition_and_marginals_match_enumeration() {
        let mut rng = Rng::new(10);
        for n in 1..=5 {
            let (u, a) = lattice_data(&mut rng, n);
            let lat = Lattice::new(&u, &a).unwrap();
            for constrained in [false, true] {
                let seqs: Vec<_> = all_sequences(n)
                    .into_iter()
                    .filter(|s| !constrained || is_valid_tags(s))
                    .collect();
                let scores: Vec<f64> = seqs.iter().map(|s| brute_score(&u, &a, s)).collect();
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let log_z = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
                assert!((lat.log_partition(constrained) - log_z).abs() < 1e-9);

                let marg = lat.marginals(constrained);
                let mut node = Matrix::zeros(n, 4);
                let mut edge = vec![Matrix::zeros(4, 4); n.saturating_sub(1)];
                for (s, sc) in seqs.iter().zip(&scores) {
                    let p = (sc - log_z).exp();
                    for (i, t) in s.iter().enumerate() {
                        node.set(i, t.code(), node.get(i, t.code()) + p);
                        if i + 1 < n {
                            let (x, y) = (t.code(), s[i + 1].code());
                            let v = edge[i].get(x, y);
                            edge[i].set(x, y, v + p);
                        }
                    }
                }
                assert!(marg.node.max_abs_diff(&node) < 1e-9);
                for (e, b) in marg.edge.iter().zip(&edge) {
                    assert!(e.max_abs_diff(b) < 1e-9);
                    assert!((e.sum() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn viterbi_tie_rule_and_argmax() {
        let z = Matrix::zeros(4, 4);
        let za = zero_transitions();
        let lat = Lattice::new(&z, &za).unwrap();
        assert_eq!(lat.viterbi(false).tags, [B, B, B, B]);
        let v = lat.viterbi(true);
        assert!(is_valid_tags(&v.tags));
        assert_eq!(v.tags, [B, E, B, E]);

        let u = Matrix::from_rows(&[[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 3.0], [2.0, 0.0, 0.0, 0.0]])
            .unwrap();
        let lat = Lattice::new(&u, &za).unwrap();
        assert_eq!(lat.viterbi(false).tags, [M, S, B]);
    }

    #[test]
    fn kbest_enumerates_everything_when_k_is_large() {
        let mut rng = Rng::new(11);
        let (u, a) = lattice_data(&mut rng, 3);
        let lat = Lattice::new(&u, &a).unwrap();
        let all = lat.kbest(1000, false);
        assert_eq!(all.len(), 64);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        let valid = lat.kbest(1000, true);
        let n_valid = all_sequences(3).iter().filter(|s| is_valid_tags(s)).count();
        assert_eq!(valid.len(), n_valid);
        assert_eq!(lat.kbest(1, true)[0], lat.viterbi(true));
    }

    #[test]
    fn kbest_ties_are_lexicographic() {
        let z = Matrix::zeros(2, 4);
        let za = zero_transitions();
        let lat = Lattice::new(&z, &za).unwrap();
        let top: Vec<Vec<Tag>> = lat.kbest(3, false).into_iter().map(|s| s.tags).collect();
        assert_eq!(top, [vec![B, B], vec![B, M], vec![B, E]]);
        let top: Vec<Vec<Tag>> = lat.kbest(3, true).into_iter().map(|s| s.tags).collect();
        assert_eq!(top, [vec![B, E], vec![S, S]]);
    }

    #[test]
    fn decoder_scores_equal_sequence_score() {
        let mut rng = Rng::new(12);
        for n in 1..8 {
            let (u, a) = lattice_data(&mut rng, n);
            let lat = Lattice::new(&u, &a).unwrap();
            let v = lat.viterbi(true);
            assert_eq!(v.score, lat.sequence_score(&v.tags).unwrap());
            for s in lat.kbest(5, false) {
                assert_eq!(s.score, lat.sequence_score(&s.tags).unwrap());
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = Rng::new(13);
        let (u, a) = lattice_data(&mut rng, 6);
        let mut shifted = u.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 0.75);
        let l1 = Lattice::new(&u, &a).unwrap();
        let l2 = Lattice::new(&shifted, &a).unwrap();
        for c in [false, true] {
            assert!((l2.log_partition(c) - l1.log_partition(c) - 6.0 * 0.75).abs() < 1e-9);
            assert_eq!(l1.viterbi(c).tags, l2.viterbi(c).tags);
            let k1: Vec<_> = l1.kbest(4, c).into_iter().map(|s| s.tags).collect();
            let k2: Vec<_> = l2.kbest(4, c).into_iter().map(|s| s.tags).collect();
            assert_eq!(k1, k2);
            let tags = &k1[0];
            assert!((l1.log_likelihood(tags, c).unwrap() - l2.log_likelihood(tags, c).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn weighted_nll_gradient_matches_finite_differences() {
        let mut rng = Rng::new(14);
        let h = 1e-5;
        for _ in 0..10 {
            let (u, a) = lattice_data(&mut rng, 5);
            let y1 = [B, E, S, B, E];
            let y2 = [S, S, B, M, E];
            let targets: [(&[Tag], f64); 2] = [(&y1, 0.7), (&y2, 0.3)];
            for c in [false, true] {
                let lat = Lattice::new(&u, &a).unwrap();
                let (loss, du, da) = lat.weighted_nll(&targets, c).unwrap();
                let direct = -0.7 * lat.log_likelihood(&y1, c).unwrap()
                    - 0.3 * lat.log_likelihood(&y2, c).unwrap();
                assert!((loss - direct).abs() < 1e-9);
                let f = |u: &Matrix, a: &Matrix| {
                    Lattice::new(u, a).unwrap().weighted_nll(&targets, c).unwrap().0
                };
                for e in 0..u.len() {
                    let (mut p, mut m) = (u.clone(), u.clone());
                    p.data_mut()[e] += h;
                    m.data_mut()[e] -= h;
                    let num = (f(&p, &a) - f(&m, &a)) / (2.0 * h);
                    assert!((num - du.data()[e]).abs() < 1e-6);
                }
                for e in 0..a.len() {
                    let (mut p, mut m) = (a.clone(), a.clone());
                    p.data_mut()[e] += h;
                    m.data_mut()[e] -= h;
                    let num = (f(&u, &p) - f(&u, &m)) / (2.0 * h);
                    assert!((num - da.data()[e]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn constrained_targets_must_be_valid() {
        let u = Matrix::zeros(2, 4);
        let a = zero_transitions();
        let lat = Lattice::new(&u, &a).unwrap();
        let bad = [M, E];
        assert!(lat.weighted_nll(&[(&bad, 1.0)], true).is_err());
        assert!(lat.weighted_nll(&[(&bad, 1.0)], false).is_ok());
    }
}
