//! Trained segmenter: vocabulary, encoder, transitions and the config that
//! produced them, with a self-describing binary file format.
//!
//! Layout (little endian): magic `SEGPR`, `u32` version, config text and
//! vocab text (each `u64` length + UTF-8), `u32` tensor count, then per
//! tensor a `u32`-prefixed name, `u64` rows, `u64` cols and raw `f64` bits.

use std::fs;
use std::path::Path;

use crate::config::Config;
use crate::corpus::{Tag, Vocab, NUM_TAGS};
use crate::crf::{self, Lattice, ScoredSequence};
use crate::encoder::{ConvLayer, EncoderNodes, EncoderParams, Pretrained};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Matrix, NodeId, Rng};

pub const MAGIC: &[u8; 5] = b"SEGPR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    /// `A[from, to]`.
    pub transitions: Matrix,
}

#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub encoder: EncoderNodes,
    pub transitions: NodeId,
}

impl ModelNodes {
    /// Node ids in [`ModelParams::tensors`] order.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids = vec![self.encoder.embeddings];
        for &(w, b) in &self.encoder.convs {
            ids.push(w);
            ids.push(b);
        }
        ids.extend([self.encoder.proj_weight, self.encoder.proj_bias, self.transitions]);
        ids
    }
}

impl ModelParams {
    pub fn tensors(&self) -> Vec<&Matrix> {
        let e = &self.encoder;
        let mut out = vec![&e.embeddings];
        for c in &e.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend([&e.proj_weight, &e.proj_bias, &self.transitions]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let e = &mut self.encoder;
        let mut out = vec![&mut e.embeddings];
        for c in &mut e.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut e.proj_weight);
        out.push(&mut e.proj_bias);
        out.push(&mut self.transitions);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["embeddings".to_owned()];
        for c in &self.encoder.convs {
            out.push(format!("conv{}.weight", c.size));
            out.push(format!("conv{}.bias", c.size));
        }
        out.extend(["proj.weight", "proj.bias", "transitions"].map(String::from));
        out
    }

    pub fn insert(&self, graph: &mut Graph) -> ModelNodes {
        ModelNodes {
            encoder: self.encoder.insert(graph),
            transitions: graph.leaf(self.transitions.clone()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Bitwise equality of every parameter.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        let (a, b) = (self.tensors(), other.tensors());
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.shape() == y.shape()
                    && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl Model {
    /// Fresh model for `vocab`, drawing weights from `rng`.
    pub fn init(config: &Config, vocab: Vocab, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let pretrained = match &config.pretrained {
            Some(path) => Some(Pretrained::load(path)?),
            None => None,
        };
        let (encoder, _) = EncoderParams::init(
            &vocab,
            config.embedding_dim,
            &config.kernels(),
            rng,
            pretrained.as_ref(),
        )?;
        Ok(Self {
            config: config.clone(),
            vocab,
            params: ModelParams {
                encoder,
                transitions: crf::zero_transitions(),
            },
        })
    }

    pub fn ids(&self, chars: &[char]) -> Vec<usize> {
        self.vocab.ids(chars)
    }

    pub fn unary_scores(&self, chars: &[char]) -> Result<Matrix> {
        self.params.encoder.unary_scores(&self.ids(chars))
    }

    /// Constrained Viterbi tags; empty input gives no tags.
    pub fn decode(&self, chars: &[char]) -> Result<Vec<Tag>> {
        if chars.is_empty() {
            return Ok(Vec::new());
        }
        let u = self.unary_scores(chars)?;
        Ok(Lattice::new(&u, &self.params.transitions)?.viterbi(true).tags)
    }

    /// The `k` best BMES-valid sequences with dropout off.
    pub fn kbest(&self, chars: &[char], k: usize) -> Result<Vec<ScoredSequence>> {
        let u = self.unary_scores(chars)?;
        Ok(Lattice::new(&u, &self.params.transitions)?.kbest(k, true))
    }

    pub fn sequence_score(&self, chars: &[char], tags: &[Tag]) -> Result<f64> {
        let u = self.unary_scores(chars)?;
        Lattice::new(&u, &self.params.transitions)?.sequence_score(tags)
    }

    pub fn segment(&self, chars: &[char]) -> Result<Vec<String>> {
        crate::corpus::tags_to_words(chars, &self.decode(chars)?)
    }

    /// Segments one raw line; whitespace is discarded.
    pub fn segment_line(&self, line: &str) -> Result<String> {
        let chars: Vec<char> = line.chars().filter(|c| !c.is_whitespace()).collect();
        Ok(self.segment(&chars)?.join(" "))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for text in [self.config.to_text(), self.vocab.to_text()] {
            out.extend_from_slice(&(text.len() as u64).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
        }
        let names = self.params.names();
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in names.iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a SEGPR model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let config = Config::from_text(&r.text()?)?;
        let vocab = Vocab::from_text(&r.text()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("tensor too large".into()))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after model tensors".into()));
        }
        let params = assemble(&config, tensors)?;
        if params.encoder.embeddings.rows() != vocab.len() {
            return Err(Error::Config(format!(
                "model has {} embedding rows but its vocabulary has {} entries",
                params.encoder.embeddings.rows(),
                vocab.len()
            )));
        }
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.at(path.display()))
    }
}

fn assemble(config: &Config, tensors: Vec<(String, Matrix)>) -> Result<ModelParams> {
    let expected = 2 * config.kernel_sizes.len() + 4;
    if tensors.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} tensors, found {}",
            tensors.len()
        )));
    }
    let mut it = tensors.into_iter();
    let mut next = |want: &str| -> Result<Matrix> {
        let (name, m) = it.next().expect("count checked");
        if name != want {
            return Err(Error::Format(format!("expected tensor `{want}`, found `{name}`")));
        }
        Ok(m)
    };
    let embeddings = next("embeddings")?;
    let d = embeddings.cols();
    let mut convs = Vec::new();
    for &size in &config.kernel_sizes {
        let weight = next(&format!("conv{size}.weight"))?;
        let bias = next(&format!("conv{size}.bias"))?;
        if weight.rows() != size * d || bias.shape() != (1, weight.cols()) {
            return Err(Error::Format(format!("conv{size} has inconsistent shapes")));
        }
        convs.push(ConvLayer { size, weight, bias });
    }
    let proj_weight = next("proj.weight")?;
    let proj_bias = next("proj.bias")?;
    let transitions = next("transitions")?;
    let features: usize = convs.iter().map(ConvLayer::kernels).sum();
    if proj_weight.shape() != (features, NUM_TAGS)
        || proj_bias.shape() != (1, NUM_TAGS)
        || transitions.shape() != (NUM_TAGS, NUM_TAGS)
    {
        return Err(Error::Format("projection or transition shapes are inconsistent".into()));
    }
    Ok(ModelParams {
        encoder: EncoderParams {
            embeddings,
            convs,
            proj_weight,
            proj_bias,
        },
        transitions,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("model file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String> {
        let len = usize::try_from(self.u64()?).map_err(|_| Error::Format("bad length".into()))?;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("embedded text is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> Model {
        let chars: Vec<char> = "天气很好我们去公园".chars().collect();
        let vocab = Vocab::build([chars.as_slice()], 1).unwrap();
        let config = Config {
            embedding_dim: 6,
            kernels_per_size: 3,
            ..Config::default()
        };
        Model::init(&config, vocab, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn bytes_round_trip_is_bit_exact() {
        let mut m = tiny_model(3);
        m.params.transitions.set(1, 2, 0.1 + 0.2);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..5], b"SEGPR");
        let back = Model::from_bytes(&bytes).unwrap();
        assert!(back.params.bit_eq(&m.params));
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.config, m.config);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = tiny_model(1).to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Model::from_bytes(b"NOPE!").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::from_bytes(&extra).is_err());
    }

    #[test]
    fn vocab_mismatch_is_a_config_error() {
        let mut m = tiny_model(1);
        let other: Vec<char> = "一二".chars().collect();
        m.vocab = Vocab::build([other.as_slice()], 1).unwrap();
        assert!(matches!(Model::from_bytes(&m.to_bytes()), Err(Error::Config(_))));
    }

    #[test]
    fn decoding_is_well_formed() {
        let m = tiny_model(2);
        let chars: Vec<char> = "我们去公园喝咖啡".chars().collect();
        let tags = m.decode(&chars).unwrap();
        assert!(crate::corpus::is_valid_tags(&tags));
        assert_eq!(m.segment(&['天']).unwrap(), ["天"]);
        assert_eq!(m.segment_line("").unwrap(), "");
        let line = m.segment_line("我们 去公园").unwrap();
        assert_eq!(line.replace(' ', ""), "我们去公园");
    }
}
