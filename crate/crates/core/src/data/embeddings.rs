use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::model::EmbeddingTable;
use crate::numerics::Scalar;

/// How many vocabulary tokens (excluding the unknown token) received a pre-trained vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingCoverage {
    pub covered: usize,
    pub total: usize,
}

impl EmbeddingCoverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

/// Reads GloVe-style text vectors (`token v1 … vd` per line) into a frozen table.
///
/// Rows of tokens missing from the file are drawn uniformly from ±0.1 with
/// `seed`; the unknown token's row is zero. Later duplicates of a token are ignored.
pub fn load_embeddings<T: Scalar>(
    path: impl AsRef<Path>,
    vocabulary: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingTable<T>, EmbeddingCoverage)> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::<T>::random(vocabulary.len(), dim, &mut rng);
    table.trainable = false;
    let data = table.vectors.data_mut();
    data[..dim].iter_mut().for_each(|x| *x = T::zero());

    let mut seen = HashSet::new();
    let reader = BufReader::new(File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("bad number for `{token}`: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {dim} values for `{token}`, found {}", values.len()),
            });
        }
        match vocabulary.get(token) {
            Some(id) if id != 0 && seen.insert(id) => {
                let row = &mut data[id as usize * dim..(id as usize + 1) * dim];
                for (x, v) in row.iter_mut().zip(values) {
                    *x = T::lit(v);
                }
            }
            _ => {}
        }
    }
    let coverage = EmbeddingCoverage {
        covered: seen.len(),
        total: vocabulary.len() - 1,
    };
    Ok((table, coverage))
}
