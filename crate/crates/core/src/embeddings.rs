//! Per-segment encoding, per-word averaging, and the plain-text word-vector format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{NormalizationStats, WordSegment};
use crate::error::{Error, Result};
use crate::nn::{encode, ModelParams};
use crate::parallel::{self, Execution};
use crate::real::Real;

/// Word → vector, all of one dimension, with per-word occurrence counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordVectorTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
    counts: BTreeMap<String, usize>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lookup after lowercasing.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        match self.entries.get(word) {
            Some(v) => Some(v),
            None => self.entries.get(&word.to_lowercase()).map(Vec::as_slice),
        }
    }

    /// Occurrences averaged into `word` (1 for imported tables).
    pub fn count(&self, word: &str) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total_count(&self) -> usize {
        self.counts.values().sum()
    }

    /// Entries in lexicographic word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// Insert a new word. The word is lowercased; duplicates and wrong
    /// dimensions are rejected.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        let word = word.to_lowercase();
        if word.is_empty() {
            return Err(Error::Format("empty word".into()));
        }
        if self.entries.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "`{word}` has {} dimensions, table has {}",
                vector.len(),
                self.dim
            )));
        }
        if self.entries.contains_key(&word) {
            return Err(Error::Format(format!("duplicate word `{word}`")));
        }
        self.counts.insert(word.clone(), 1);
        self.entries.insert(word, vector);
        Ok(())
    }

    /// Multiply every vector by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.entries
            .values_mut()
            .for_each(|v| v.iter_mut().for_each(|x| *x *= c));
        out
    }
}

/// Normalize then encode every segment; one `(word, z)` pair per segment, in order.
pub fn encode_corpus<T: Real>(
    params: &ModelParams<T>,
    normalization: &NormalizationStats,
    segments: &[WordSegment],
    exec: Execution,
) -> Result<Vec<(String, Vec<f64>)>> {
    if normalization.dim() != params.architecture().feature_dim {
        return Err(Error::Contract(format!(
            "normalization has {} dims, model expects {}",
            normalization.dim(),
            params.architecture().feature_dim
        )));
    }
    parallel::map(exec, segments, |seg| {
        let x = normalization.apply::<T>(&seg.features)?;
        let z = encode(params, &x)?;
        Ok((seg.word.clone(), z.z.iter().map(|v| v.as_f64()).collect()))
    })
    .into_iter()
    .collect()
}

/// Arithmetic mean of all vectors sharing a word.
pub fn average_by_word<S: AsRef<str>>(pairs: &[(S, Vec<f64>)]) -> Result<WordVectorTable> {
    let Some(dim) = pairs.first().map(|(_, v)| v.len()) else {
        return Ok(WordVectorTable::default());
    };
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (word, v) in pairs {
        if v.len() != dim {
            return Err(Error::Contract(format!(
                "vector for `{}` has {} dims, expected {dim}",
                word.as_ref(),
                v.len()
            )));
        }
        let slot = sums
            .entry(word.as_ref().to_lowercase())
            .or_insert_with(|| (vec![0.0; dim], 0));
        slot.0.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        slot.1 += 1;
    }
    let mut table = WordVectorTable::new(dim);
    for (word, (sum, n)) in sums {
        let mean = sum.into_iter().map(|s| s / n as f64).collect();
        table.counts.insert(word.clone(), n);
        table.entries.insert(word, mean);
    }
    Ok(table)
}

/// Shortest decimal rendering with 9 significant digits (like C's `%.9g`).
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let fixed = format!("{:.*}", (8 - exp).max(0) as usize, v);
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

/// One line per word: `word v1 ... vd`, words in lexicographic order.
pub fn write_table<W: Write>(mut out: W, table: &WordVectorTable) -> Result<()> {
    for (word, v) in table.iter() {
        if word.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!("word `{word}` contains whitespace")));
        }
        out.write_all(word.as_bytes())?;
        for x in v {
            write!(out, " {}", format_sig9(*x))?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read the text format. A first line of exactly two unsigned integers is
/// taken as a `count dim` header.
pub fn read_table<R: BufRead>(input: R) -> Result<WordVectorTable> {
    let mut table = WordVectorTable::default();
    let mut header: Option<(usize, usize)> = None;
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let mut fields = line.split_ascii_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 {
            if let (Ok(count), Ok(dim)) = (word.parse::<usize>(), values[0].parse::<usize>()) {
                header = Some((count, dim));
                table.dim = dim;
                continue;
            }
        }
        let vector = values
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(lineno, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(Error::parse(lineno, format!("`{word}` has no vector")));
        }
        table
            .insert(word, vector)
            .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
    }
    if let Some((count, _)) = header {
        if count != table.len() {
            log::warn!("header announces {count} words, file has {}", table.len());
        }
    }
    Ok(table)
}

pub fn export_table(table: &WordVectorTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_table(BufWriter::new(file), table)
}

pub fn import_table(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_table(BufReader::new(file))
}
