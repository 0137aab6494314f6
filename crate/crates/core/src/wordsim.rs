//! Word-similarity benchmarks: cosine scores against human ratings, ranked
//! with Spearman's ρ.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::embeddings::WordVectorTable;
use crate::error::{Error, Result};
use crate::parallel::{self, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    pub word_a: String,
    pub word_b: String,
    pub human_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub dataset_name: String,
    pub num_pairs: usize,
    pub num_not_found: usize,
    pub rho: f64,
}

/// The thirteen benchmarks in reporting order, with their published pair counts.
pub const CANONICAL_BENCHMARKS: [(&str, usize); 13] = [
    ("WS-353", 353),
    ("WS-353-REL", 252),
    ("WS-353-SIM", 203),
    ("MC-30", 30),
    ("RG-65", 65),
    ("Rare-Word", 2034),
    ("MEN", 3000),
    ("MTurk-287", 287),
    ("MTurk-771", 771),
    ("YP-130", 130),
    ("SimLex-999", 999),
    ("Verb-143", 144),
    ("SimVerb-3500", 3500),
];

/// Published scores of 300-d GloVe vectors trained on Wikipedia 2014:
/// `(name, not found, ρ)`.
pub const GLOVE_REFERENCE: [(&str, usize, f64); 13] = [
    ("WS-353", 0, 0.6054),
    ("WS-353-REL", 0, 0.5725),
    ("WS-353-SIM", 0, 0.6638),
    ("MC-30", 0, 0.7026),
    ("RG-65", 0, 0.7662),
    ("Rare-Word", 252, 0.4118),
    ("MEN", 0, 0.7375),
    ("MTurk-287", 0, 0.6332),
    ("MTurk-771", 0, 0.6501),
    ("YP-130", 0, 0.5613),
    ("SimLex-999", 0, 0.3705),
    ("Verb-143", 0, 0.3051),
    ("SimVerb-3500", 2, 0.2267),
];

/// Position of `name` in [`CANONICAL_BENCHMARKS`] (case-insensitive).
pub fn canonical_index(name: &str) -> Option<usize> {
    CANONICAL_BENCHMARKS
        .iter()
        .position(|(n, _)| n.eq_ignore_ascii_case(name))
}

/// Parse `word1 word2 score` lines. Blank lines and `#` comments are skipped.
pub fn load_benchmark<R: BufRead>(input: R) -> Result<Vec<BenchmarkPair>> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(n, format!("expected 3 fields, found {}", fields.len())));
        }
        let human_score: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(n, format!("score {:?} is not a number", fields[2])))?;
        if !human_score.is_finite() {
            return Err(Error::parse(n, "score is not finite"));
        }
        pairs.push(BenchmarkPair {
            word_a: fields[0].to_lowercase(),
            word_b: fields[1].to_lowercase(),
            human_score,
        });
    }
    Ok(pairs)
}

pub fn load_benchmark_file(path: impl AsRef<Path>) -> Result<Vec<BenchmarkPair>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    load_benchmark(BufReader::new(file))
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!(
            "cosine of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Undefined("cosine similarity with a zero vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("rank lists of length {} and {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(format!("{} values, need at least 2", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in rank list".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| Error::Undefined("rank correlation of a constant list".into()))
}

/// Score `pairs` against `table`. Pairs with a missing word or a zero vector
/// are skipped and counted as not found.
pub fn evaluate(table: &WordVectorTable, name: &str, pairs: &[BenchmarkPair]) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::Input(format!("benchmark {name} has no pairs")));
    }
    let mut model = Vec::with_capacity(pairs.len());
    let mut human = Vec::with_capacity(pairs.len());
    let mut not_found = 0;
    for p in pairs {
        let sim = match (table.get(&p.word_a), table.get(&p.word_b)) {
            (Some(u), Some(v)) => cosine_similarity(u, v).ok(),
            _ => None,
        };
        match sim {
            Some(s) => {
                model.push(s);
                human.push(p.human_score);
            }
            None => not_found += 1,
        }
    }
    if model.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{name}: {} of {} pairs evaluable",
            model.len(),
            pairs.len()
        )));
    }
    Ok(EvalResult {
        dataset_name: name.to_string(),
        num_pairs: pairs.len(),
        num_not_found: not_found,
        rho: spearman_rho(&model, &human)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub expected_pairs: Option<usize>,
}

/// Parse `name<TAB>path<TAB>expected_pairs` lines. Relative paths resolve
/// against `base`. The count column may be empty or absent.
pub fn load_manifest<R: BufRead>(input: R, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(n, "expected name<TAB>path[<TAB>expected_pairs]"));
        }
        let expected_pairs = match fields.get(2) {
            Some(s) if !s.is_empty() => Some(
                s.parse()
                    .map_err(|_| Error::parse(n, format!("pair count {s:?} is not an integer")))?,
            ),
            _ => None,
        };
        entries.push(ManifestEntry {
            name: fields[0].to_string(),
            path: base.join(fields[1]),
            expected_pairs,
        });
    }
    Ok(entries)
}

pub fn load_manifest_file(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    load_manifest(BufReader::new(file), base)
}

/// Outcome for one manifest entry.
#[derive(Debug)]
pub struct BenchmarkOutcome {
    pub name: String,
    pub result: Result<EvalResult>,
    /// Set when the file's pair count differs from the manifest's.
    pub count_warning: Option<String>,
}

/// Evaluate every entry concurrently; output follows canonical order, with
/// unrecognised names after in manifest order.
pub fn evaluate_manifest(
    table: &WordVectorTable,
    entries: &[ManifestEntry],
    exec: Execution,
) -> Vec<BenchmarkOutcome> {
    let mut sorted: Vec<&ManifestEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| canonical_index(&e.name).unwrap_or(usize::MAX));
    parallel::map(exec, &sorted, |entry| {
        let pairs = load_benchmark_file(&entry.path);
        let count_warning = match (&pairs, entry.expected_pairs) {
            (Ok(p), Some(expected)) if p.len() != expected => Some(format!(
                "{}: file has {} pairs, manifest expects {}",
                entry.name,
                p.len(),
                expected
            )),
            _ => None,
        };
        if let Some(w) = &count_warning {
            log::warn!("{w}");
        }
        BenchmarkOutcome {
            name: entry.name.clone(),
            result: pairs.and_then(|p| evaluate(table, &entry.name, &p)),
            count_warning,
        }
    })
}

const HEADER: [&str; 5] = ["No.", "Dataset", "#(word pairs)", "#(not found)", "ρ"];

fn rows(results: &[EvalResult]) -> Vec<[String; 5]> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            [
                (i + 1).to_string(),
                r.dataset_name.clone(),
                r.num_pairs.to_string(),
                r.num_not_found.to_string(),
                format!("{:.4}", r.rho),
            ]
        })
        .collect()
}

pub fn report_tsv(results: &[EvalResult]) -> String {
    let mut out = HEADER.join("\t");
    out.push('\n');
    for row in rows(results) {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// Column-aligned table: text columns left, numbers right.
pub fn report_text(results: &[EvalResult]) -> String {
    let body = rows(results);
    let mut width: [usize; 5] = HEADER.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 5]| {
        let mut s = String::new();
        for (c, (cell, w)) in cells.iter().zip(width).enumerate() {
            let pad = " ".repeat(w - cell.chars().count());
            if c > 0 {
                s.push_str("  ");
            }
            if c == 1 {
                let _ = write!(s, "{cell}{pad}");
            } else {
                let _ = write!(s, "{pad}{cell}");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(HEADER);
    for row in &body {
        line([&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    out
}
