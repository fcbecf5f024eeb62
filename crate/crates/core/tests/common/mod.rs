//! Independent oracles shared by the integration tests: brute-force
//! enumeration of tag sequences and central finite differences.
#![allow(dead_code)]

use segpr::corpus::{Tag, NUM_TAGS};
use segpr::numerics::{Matrix, Rng};

pub fn legal(prev: Tag, next: Tag) -> bool {
    use Tag::*;
    matches!(
        (prev, next),
        (B, M) | (B, E) | (M, M) | (M, E) | (E, B) | (E, S) | (S, B) | (S, S)
    )
}

pub fn valid(tags: &[Tag]) -> bool {
    match (tags.first(), tags.last()) {
        (Some(f), Some(l)) => {
            matches!(f, Tag::B | Tag::S)
                && matches!(l, Tag::E | Tag::S)
                && tags.windows(2).all(|w| legal(w[0], w[1]))
        }
        _ => true,
    }
}

/// Every tag sequence of length `n`, in lexicographic code order.
pub fn sequences(n: usize, constrained: bool) -> Vec<Vec<Tag>> {
    let total = NUM_TAGS.pow(n as u32);
    (0..total)
        .map(|mut k| {
            let mut tags = vec![Tag::B; n];
            for i in (0..n).rev() {
                tags[i] = Tag::ALL[k % NUM_TAGS];
                k /= NUM_TAGS;
            }
            tags
        })
        .filter(|t| !constrained || valid(t))
        .collect()
}

pub fn score(u: &Matrix, a: &Matrix, tags: &[Tag]) -> f64 {
    let mut s = 0.0;
    for (i, t) in tags.iter().enumerate() {
        s += u.get(i, t.code());
        if i > 0 {
            s += a.get(tags[i - 1].code(), t.code());
        }
    }
    s
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub struct Enumeration {
    pub seqs: Vec<Vec<Tag>>,
    pub scores: Vec<f64>,
    pub log_z: f64,
}

impl Enumeration {
    pub fn new(u: &Matrix, a: &Matrix, constrained: bool) -> Self {
        let seqs = sequences(u.rows(), constrained);
        let scores: Vec<f64> = seqs.iter().map(|t| score(u, a, t)).collect();
        let log_z = logsumexp(&scores);
        Self { seqs, scores, log_z }
    }

    pub fn prob(&self, i: usize) -> f64 {
        (self.scores[i] - self.log_z).exp()
    }

    /// Node marginals `N×4` and edge marginals `(N−1)×4×4`.
    pub fn marginals(&self, n: usize) -> (Matrix, Vec<Matrix>) {
        let mut node = Matrix::zeros(n, NUM_TAGS);
        let mut edge = vec![Matrix::zeros(NUM_TAGS, NUM_TAGS); n.saturating_sub(1)];
        for (k, seq) in self.seqs.iter().enumerate() {
            let p = self.prob(k);
            for (i, t) in seq.iter().enumerate() {
                let v = node.get(i, t.code()) + p;
                node.set(i, t.code(), v);
                if i > 0 {
                    let (f, c) = (seq[i - 1].code(), t.code());
                    let v = edge[i - 1].get(f, c) + p;
                    edge[i - 1].set(f, c, v);
                }
            }
        }
        (node, edge)
    }

    /// Top `k` by score descending, ties by lexicographic codes.
    pub fn top(&self, k: usize) -> Vec<(Vec<Tag>, f64)> {
        let mut idx: Vec<usize> = (0..self.seqs.len()).collect();
        idx.sort_by(|&x, &y| {
            self.scores[y]
                .total_cmp(&self.scores[x])
                .then_with(|| codes(&self.seqs[x]).cmp(&codes(&self.seqs[y])))
        });
        idx.into_iter()
            .take(k)
            .map(|i| (self.seqs[i].clone(), self.scores[i]))
            .collect()
    }
}

pub fn codes(tags: &[Tag]) -> Vec<usize> {
    tags.iter().map(|t| t.code()).collect()
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize, low: f64, high: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_in(low, high)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Central difference of `f` along coordinate `idx` of `x`.
pub fn central_difference<F: FnMut(&Matrix) -> f64>(x: &Matrix, idx: usize, h: f64, mut f: F) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[idx] += h;
    let mut minus = x.clone();
    minus.data_mut()[idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub fn random_words(rng: &mut Rng, alphabet: &[char], max_words: usize, max_len: usize) -> Vec<String> {
    let n = 1 + rng.below(max_words);
    (0..n)
        .map(|_| {
            let len = 1 + rng.below(max_len);
            (0..len).map(|_| alphabet[rng.below(alphabet.len())]).collect()
        })
        .collect()
}
