//! Character encoder: embeddings, windowed convolutions of several widths,
//! rectifier, and an affine projection to per-tag unary scores.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::{Vocab, NUM_TAGS, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId, Rng};

/// Convolution of one width: `weight` is `(k·d)×m`, `bias` is `1×m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub size: usize,
    pub weight: Matrix,
    pub bias: Matrix,
}

impl ConvLayer {
    /// Characters to the left of the center: `⌈(k−1)/2⌉`.
    pub fn left(&self) -> usize {
        self.size / 2
    }

    /// Characters to the right of the center: `⌊(k−1)/2⌋`.
    pub fn right(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn kernels(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `|V|×d`; row `PAD_ID` pads windows past the sentence edges.
    pub embeddings: Matrix,
    pub convs: Vec<ConvLayer>,
    /// `F×T`.
    pub proj_weight: Matrix,
    /// `1×T`.
    pub proj_bias: Matrix,
}

/// Graph handles for the encoder parameters of one forward pass.
#[derive(Clone, Debug)]
pub struct EncoderNodes {
    pub embeddings: NodeId,
    pub convs: Vec<(NodeId, NodeId)>,
    pub proj_weight: NodeId,
    pub proj_bias: NodeId,
}

/// Pretrained vectors in word2vec text format.
#[derive(Clone, Debug, Default)]
pub struct Pretrained {
    pub dim: usize,
    pub vectors: HashMap<char, Vec<f64>>,
}

impl Pretrained {
    /// First line `<count> <dim>`, then `token v1 ... vd`. Tokens longer than
    /// one character are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty embedding file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("bad embedding header `{header}`")))?;
        let [_, dim] = dims[..] else {
            return Err(Error::Format(format!("bad embedding header `{header}`")));
        };
        let mut vectors = HashMap::new();
        for (i, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("embedding line {}: bad number", i + 2)))?;
            if values.len() != dim {
                return Err(Error::Format(format!(
                    "embedding line {}: {} values, header says {dim}",
                    i + 2,
                    values.len()
                )));
            }
            let mut cs = token.chars();
            if let (Some(c), None) = (cs.next(), cs.next()) {
                vectors.insert(c, values);
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl EncoderParams {
    /// Random initialization; `kernels` lists `(width, count)` pairs.
    /// Returns the number of embedding rows copied from `pretrained`.
    pub fn init(
        vocab: &Vocab,
        dim: usize,
        kernels: &[(usize, usize)],
        rng: &mut Rng,
        pretrained: Option<&Pretrained>,
    ) -> Result<(Self, usize)> {
        if kernels.is_empty() {
            return Err(Error::Config("at least one kernel width is required".into()));
        }
        if dim == 0 || kernels.iter().any(|&(k, m)| k == 0 || m == 0) {
            return Err(Error::Config("dimensions and kernel widths must be positive".into()));
        }
        let mut embeddings = glorot(rng, 1, dim, vocab.len(), dim);
        let mut copied = 0;
        if let Some(pre) = pretrained {
            if pre.dim != dim {
                return Err(Error::Config(format!(
                    "pretrained embeddings have dimension {}, model uses {dim}",
                    pre.dim
                )));
            }
            for (c, id, _) in vocab.entries() {
                if let Some(v) = pre.vectors.get(&c) {
                    embeddings.row_mut(id).copy_from_slice(v);
                    copied += 1;
                }
            }
        }
        let convs = kernels
            .iter()
            .map(|&(size, count)| ConvLayer {
                size,
                weight: glorot(rng, size * dim, count, size * dim, count),
                bias: Matrix::zeros(1, count),
            })
            .collect::<Vec<_>>();
        let features: usize = kernels.iter().map(|&(_, m)| m).sum();
        let params = Self {
            embeddings,
            convs,
            proj_weight: glorot(rng, features, NUM_TAGS, features, NUM_TAGS),
            proj_bias: Matrix::zeros(1, NUM_TAGS),
        };
        Ok((params, copied))
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Total kernel count `F`.
    pub fn features(&self) -> usize {
        self.convs.iter().map(ConvLayer::kernels).sum()
    }

    fn padding(&self) -> (usize, usize) {
        let left = self.convs.iter().map(ConvLayer::left).max().unwrap_or(0);
        let right = self.convs.iter().map(ConvLayer::right).max().unwrap_or(0);
        (left, right)
    }

    fn padded_ids(&self, ids: &[usize]) -> Result<(Vec<usize>, usize)> {
        if ids.is_empty() {
            return Err(Error::Input("cannot encode an empty sentence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.embeddings.rows()) {
            return Err(Error::Index(format!(
                "character id {bad} outside vocabulary of {}",
                self.embeddings.rows()
            )));
        }
        let (left, right) = self.padding();
        let mut padded = vec![PAD_ID; left];
        padded.extend_from_slice(ids);
        padded.extend(std::iter::repeat(PAD_ID).take(right));
        Ok((padded, left))
    }

    /// Row indices into the padded sequence for every window of `conv`.
    fn window_rows(conv: &ConvLayer, n: usize, pad_left: usize) -> Vec<usize> {
        let offset = pad_left - conv.left();
        (0..n)
            .flat_map(|i| (0..conv.size).map(move |j| offset + i + j))
            .collect()
    }

    pub fn insert(&self, graph: &mut Graph) -> EncoderNodes {
        EncoderNodes {
            embeddings: graph.leaf(self.embeddings.clone()),
            convs: self
                .convs
                .iter()
                .map(|c| (graph.leaf(c.weight.clone()), graph.leaf(c.bias.clone())))
                .collect(),
            proj_weight: graph.leaf(self.proj_weight.clone()),
            proj_bias: graph.leaf(self.proj_bias.clone()),
        }
    }

    /// Differentiable forward pass producing the `N×T` unary scores.
    /// Dropout is applied to the embedding layer and the convolution output
    /// when `training` is set.
    pub fn encode(
        &self,
        graph: &mut Graph,
        nodes: &EncoderNodes,
        ids: &[usize],
        dropout: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        let (padded, pad_left) = self.padded_ids(ids)?;
        let n = ids.len();
        let d = self.embedding_dim();
        let emb = graph.gather_rows(nodes.embeddings, &padded)?;
        let emb = graph.dropout(emb, dropout, rng, training)?;
        let mut features = Vec::with_capacity(self.convs.len());
        for (conv, &(w, b)) in self.convs.iter().zip(&nodes.convs) {
            let rows = graph.gather_rows(emb, &Self::window_rows(conv, n, pad_left))?;
            let windows = graph.reshape(rows, n, conv.size * d)?;
            let pre = graph.affine(windows, w, b)?;
            features.push(graph.relu(pre));
        }
        let hidden = graph.concat_cols(&features)?;
        let hidden = graph.dropout(hidden, dropout, rng, training)?;
        graph.affine(hidden, nodes.proj_weight, nodes.proj_bias)
    }

    /// Inference-only forward pass (no dropout, no graph).
    pub fn unary_scores(&self, ids: &[usize]) -> Result<Matrix> {
        let (padded, pad_left) = self.padded_ids(ids)?;
        let n = ids.len();
        let d = self.embedding_dim();
        let f = self.features();
        let mut hidden = Matrix::zeros(n, f);
        let mut window = Vec::new();
        let mut col = 0;
        for conv in &self.convs {
            let m = conv.kernels();
            let offset = pad_left - conv.left();
            for i in 0..n {
                window.clear();
                for j in 0..conv.size {
                    window.extend_from_slice(self.embeddings.row(padded[offset + i + j]));
                }
                let out = &mut hidden.row_mut(i)[col..col + m];
                out.copy_from_slice(conv.bias.data());
                for (k, &x) in window.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let w_row = &conv.weight.data()[k * m..(k + 1) * m];
                    for (o, &w) in out.iter_mut().zip(w_row) {
                        *o += x * w;
                    }
                }
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(window.len(), conv.size * d);
            col += m;
        }
        let mut unary = Matrix::zeros(n, NUM_TAGS);
        for i in 0..n {
            unary.row_mut(i).copy_from_slice(self.proj_bias.data());
        }
        let product = hidden.matmul(&self.proj_weight)?;
        unary.add_scaled(&product, 1.0)?;
        Ok(unary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(text: &str) -> Vocab {
        let chars: Vec<char> = text.chars().collect();
        Vocab::build([chars.as_slice()], 1).unwrap()
    }

    fn small(v: &Vocab, seed: u64) -> EncoderParams {
        EncoderParams::init(v, 4, &[(2, 3), (3, 2), (5, 2)], &mut Rng::new(seed), None)
            .unwrap()
            .0
    }

    #[test]
    fn paper_scale_feature_count() {
        let v = vocab("abc");
        let kernels: Vec<(usize, usize)> = (2..=5).map(|k| (k, 100)).collect();
        let (p, _) = EncoderParams::init(&v, 200, &kernels, &mut Rng::new(0), None).unwrap();
        assert_eq!(p.features(), 400);
        assert_eq!(p.proj_weight.shape(), (400, 4));
        assert_eq!(p.convs[3].weight.shape(), (1000, 100));
    }

    #[test]
    fn window_arithmetic() {
        let conv = |size| ConvLayer {
            size,
            weight: Matrix::zeros(size, 1),
            bias: Matrix::zeros(1, 1),
        };
        assert_eq!((conv(2).left(), conv(2).right()), (1, 0));
        assert_eq!((conv(3).left(), conv(3).right()), (1, 1));
        assert_eq!((conv(4).left(), conv(4).right()), (2, 1));
        assert_eq!((conv(5).left(), conv(5).right()), (2, 2));
    }

    #[test]
    fn init_is_seeded_and_rejects_bad_specs() {
        let v = vocab("abcde");
        assert_eq!(small(&v, 3), small(&v, 3));
        assert_ne!(small(&v, 3), small(&v, 4));
        assert!(EncoderParams::init(&v, 4, &[], &mut Rng::new(0), None).is_err());
        assert!(p_biases_zero(&small(&v, 1)));
    }

    fn p_biases_zero(p: &EncoderParams) -> bool {
        p.convs.iter().all(|c| c.bias.data().iter().all(|&b| b == 0.0))
            && p.proj_bias.data().iter().all(|&b| b == 0.0)
    }

    #[test]
    fn pretrained_rows_are_copied() {
        let v = vocab("abcde");
        let pre = Pretrained::parse("4 4\na 1 1 1 1\nc 2 2 2 2\ne 3 3 3 3\nzz 9 9 9 9\n").unwrap();
        let (p, copied) = EncoderParams::init(&v, 4, &[(2, 2)], &mut Rng::new(0), Some(&pre)).unwrap();
        assert_eq!(copied, 3);
        assert_eq!(p.embeddings.row(v.id('c')), &[2.0; 4]);
        let wrong = Pretrained::parse("1 3\na 1 1 1\n").unwrap();
        assert!(matches!(
            EncoderParams::init(&v, 4, &[(2, 2)], &mut Rng::new(0), Some(&wrong)),
            Err(Error::Config(_))
        ));
        assert!(Pretrained::parse("1 3\na 1 1\n").is_err());
    }

    #[test]
    fn single_character_and_empty_input() {
        let v = vocab("abc");
        let p = EncoderParams::init(&v, 4, &[(5, 2)], &mut Rng::new(1), None).unwrap().0;
        assert_eq!(p.unary_scores(&[2]).unwrap().shape(), (1, 4));
        assert!(matches!(p.unary_scores(&[]), Err(Error::Input(_))));
        assert!(matches!(p.unary_scores(&[99]), Err(Error::Index(_))));
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let v = vocab("abc");
        let mut p = small(&v, 2);
        p.proj_weight.fill(0.0);
        p.proj_bias = Matrix::row_vector(&[1.0, 2.0, 3.0, 4.0]);
        let u = p.unary_scores(&[2, 3, 4]).unwrap();
        for r in 0..3 {
            assert_eq!(u.row(r), &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn graph_and_direct_paths_agree() {
        let v = vocab("abcdefg");
        let p = small(&v, 5);
        let ids = v.ids(&"gfedcba".chars().collect::<Vec<_>>());
        let direct = p.unary_scores(&ids).unwrap();
        let mut g = Graph::new();
        let nodes = p.insert(&mut g);
        let out = p.encode(&mut g, &nodes, &ids, 0.3, false, &mut Rng::new(0)).unwrap();
        assert!(g.value(out).max_abs_diff(&direct) < 1e-12);
        assert_eq!(g.value(out).shape(), (7, 4));
    }

    #[test]
    fn changes_stay_local() {
        let v = vocab("abcdefghij");
        let p = small(&v, 6);
        let text: Vec<char> = "abcdefghij".chars().collect();
        let mut ids = v.ids(&text);
        let before = p.unary_scores(&ids).unwrap();
        ids[0] = v.id('j');
        let after = p.unary_scores(&ids).unwrap();
        // widest kernel reaches 2 positions either way
        for r in 3..ids.len() {
            assert_eq!(before.row(r), after.row(r));
        }
        assert_ne!(before.row(0), after.row(0));
    }
}
