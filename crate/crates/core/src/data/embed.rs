//! Frozen token embeddings: a hash-derived stand-in, loadable text
//! tables, a contextual mixer, and vocabulary construction.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::bank::FeatureBank;
use super::DataError;
use crate::numerics::{bilstm_encode, fnv1a64, Graph, LstmParams, RngState, Tensor};

/// A frozen token -> vector table. Contents never change once built.
#[derive(Debug, Clone)]
pub enum EmbeddingTable {
    /// Deterministic unit vectors derived from a hash of the token
    /// string; effectively an infinite table for desk-scale runs.
    Hashed { dim: usize },
    /// Vectors loaded from a text file of `token v1 .. vd` lines. The
    /// `<unk>` row is used for unknown tokens when present, otherwise
    /// the zero vector.
    Loaded {
        dim: usize,
        vectors: BTreeMap<String, Vec<f64>>,
        unk: Vec<f64>,
    },
}

impl EmbeddingTable {
    pub fn hashed(dim: usize) -> Self {
        assert!(dim >= 1);
        EmbeddingTable::Hashed { dim }
    }

    pub fn load_text(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path)?;
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let token = it
                .next()
                .ok_or(DataError::Parse {
                    line: i + 1,
                    msg: "empty embedding line".into(),
                })?
                .to_string();
            let vals: Result<Vec<f64>, _> = it.map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| DataError::Parse {
                line: i + 1,
                msg: format!("bad float: {e}"),
            })?;
            match dim {
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => {
                    return Err(DataError::Parse {
                        line: i + 1,
                        msg: format!("dim {} but table dim {d}", vals.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(token, vals);
        }
        let dim = dim.ok_or_else(|| DataError::Invalid("empty embedding file".into()))?;
        let unk = vectors.get("<unk>").cloned().unwrap_or_else(|| vec![0.0; dim]);
        Ok(EmbeddingTable::Loaded { dim, vectors, unk })
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingTable::Hashed { dim } => *dim,
            EmbeddingTable::Loaded { dim, .. } => *dim,
        }
    }

    /// Embeds one token. Hash stand-in vectors are unit norm.
    pub fn embed(&self, token: &str) -> Vec<f64> {
        match self {
            EmbeddingTable::Hashed { dim } => hash_unit_vector(token, *dim),
            EmbeddingTable::Loaded { vectors, unk, .. } => {
                vectors.get(token).cloned().unwrap_or_else(|| unk.clone())
            }
        }
    }

    /// Embeds a token sequence into an `[n, d]` matrix.
    pub fn embed_sequence(&self, tokens: &[String]) -> Result<Tensor, DataError> {
        if tokens.is_empty() {
            return Err(DataError::Invalid("cannot embed empty sequence".into()));
        }
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| self.embed(t)).collect();
        Ok(Tensor::from_rows(&rows)?)
    }
}

fn hash_unit_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = RngState::new(fnv1a64(token) ^ 0xE1B0_92D1_5EED_0001);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // A zero draw over the whole vector is not reachable; still guard.
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
    v
}

/// A frozen bidirectional recurrent mixer over static embeddings: each
/// output row depends on the whole sequence, standing in for contextual
/// embeddings. Weights are fixed from a constant seed at construction
/// and never receive gradients.
#[derive(Debug, Clone)]
pub struct ContextualMixer {
    table: EmbeddingTable,
    fwd: LstmParams,
    bwd: LstmParams,
    dim_out: usize,
}

const MIXER_SEED: u64 = 0x00C0_FFEE_0B5E_55ED;

impl ContextualMixer {
    pub fn new(table: EmbeddingTable, dim_out: usize) -> Result<Self, DataError> {
        if dim_out % 2 != 0 {
            return Err(DataError::Invalid(format!(
                "contextual dim {dim_out} must be even (two directions)"
            )));
        }
        let mut rng = RngState::new(MIXER_SEED);
        let hid = dim_out / 2;
        let fwd = LstmParams::init(table.dim(), hid, &mut rng);
        let bwd = LstmParams::init(table.dim(), hid, &mut rng);
        Ok(ContextualMixer {
            table,
            fwd,
            bwd,
            dim_out,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim_out
    }

    /// Runs the frozen mixer; output carries no gradient path.
    pub fn encode(&self, tokens: &[String]) -> Result<Tensor, DataError> {
        let stat = self.table.embed_sequence(tokens)?;
        let mut g = Graph::new();
        let fwd = self.fwd.bind(&mut g)?;
        let bwd = self.bwd.bind(&mut g)?;
        let seq = g.leaf(stat.shape(), stat.values())?;
        let enc = bilstm_encode(&mut g, seq, &fwd, &bwd)?;
        Ok(Tensor::new(g.shape(enc).to_vec(), g.value(enc).to_vec())?)
    }
}

/// Token embeddings for model input: static lookup, the contextual
/// mixer, or precomputed per-sentence rows from a feature bank keyed by
/// the joined token string.
#[derive(Debug, Clone)]
pub enum TokenEncoder {
    Static(EmbeddingTable),
    Contextual(ContextualMixer),
    Precomputed { bank: FeatureBank, dim: usize },
}

impl TokenEncoder {
    pub fn dim(&self) -> usize {
        match self {
            TokenEncoder::Static(t) => t.dim(),
            TokenEncoder::Contextual(m) => m.dim(),
            TokenEncoder::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Tensor, DataError> {
        match self {
            TokenEncoder::Static(t) => t.embed_sequence(tokens),
            TokenEncoder::Contextual(m) => m.encode(tokens),
            TokenEncoder::Precomputed { bank, .. } => {
                let key = tokens.join(" ");
                bank.matrix(&key)?
                    .ok_or_else(|| DataError::Invalid(format!("no rows for sentence `{key}`")))
            }
        }
    }
}

/// Token ids with reserved pad (0) and unk (1) slots, ordered by
/// descending frequency then lexicographically.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

impl Vocabulary {
    pub fn id_of(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }
}

/// Builds a vocabulary from token sequences, dropping tokens below
/// `min_count`.
pub fn build_vocab<'a, I>(corpus: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in corpus {
        for tok in seq {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend(ranked.iter().map(|(t, _)| t.to_string()));
    let ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Vocabulary { tokens, ids }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hashed_embeddings_are_deterministic_unit_vectors() {
        let t = EmbeddingTable::hashed(32);
        let a = t.embed("house");
        let b = t.embed("house");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
        assert_ne!(t.embed("house"), t.embed("mouse"));
    }

    #[test]
    fn loaded_table_round_trip_and_unk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "cat 1 0 0\ndog 0 1 0\n<unk> 0.5 0.5 0\n").unwrap();
        let t = EmbeddingTable::load_text(&path).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.embed("cat"), vec![1.0, 0.0, 0.0]);
        assert_eq!(t.embed("zebra"), vec![0.5, 0.5, 0.0]);

        std::fs::write(&path, "cat 1 0\ndog 0 1 1\n").unwrap();
        assert!(matches!(
            EmbeddingTable::load_text(&path),
            Err(DataError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn mixer_rows_depend_on_context() {
        let table = EmbeddingTable::hashed(16);
        let mixer = ContextualMixer::new(table, 12).unwrap();
        let a = mixer.encode(&toks(&["the", "bank", "river"])).unwrap();
        let b = mixer.encode(&toks(&["money", "bank", "teller"])).unwrap();
        // Token "bank" at position 1 in both: contextual rows must differ.
        let diff: f64 = a
            .row(1)
            .iter()
            .zip(b.row(1))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(diff > 0.0, "contextual rows identical");
        // Identical sequences give identical matrices.
        let c = mixer.encode(&toks(&["the", "bank", "river"])).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.shape(), &[3, 12]);
    }

    #[test]
    fn vocab_ordering_and_min_count() {
        let s1 = toks(&["a", "a", "b"]);
        let v = build_vocab([s1.as_slice()], 1);
        assert_eq!(v.id_of("a"), 2);
        assert_eq!(v.id_of("b"), 3);
        assert_eq!(v.id_of("zzz"), UNK_ID);
        assert_eq!(v.token(PAD_ID), Some("<pad>"));

        let v2 = build_vocab([s1.as_slice()], 2);
        assert_eq!(v2.id_of("b"), UNK_ID);

        let empty = build_vocab(std::iter::empty::<&[String]>(), 1);
        assert_eq!(empty.len(), 2);
        assert!(empty.is_empty());
    }

    #[test]
    fn vocab_breaks_frequency_ties_lexicographically() {
        let s = toks(&["beta", "alpha", "beta", "alpha", "gamma"]);
        let v = build_vocab([s.as_slice()], 1);
        assert_eq!(v.id_of("alpha"), 2);
        assert_eq!(v.id_of("beta"), 3);
        assert_eq!(v.id_of("gamma"), 4);
    }
}
