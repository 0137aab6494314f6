//! Word-level corpus built from forced-alignment boundaries, plus skip-gram
//! example construction within utterances.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::parallel::{self, Execution};
use crate::real::Real;
use crate::sequence::FeatureSequence;

/// Segments longer than this many frames are kept but reported.
pub const LONG_SEGMENT_FRAMES: usize = 100;

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentEntry {
    pub utterance_id: String,
    pub word: String,
    pub start: f64,
    pub end: f64,
}

/// All alignment entries of one utterance, sorted by start time.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceAlignment {
    pub utterance_id: String,
    pub entries: Vec<AlignmentEntry>,
}

/// Lowercase and drop punctuation other than word-internal apostrophes.
pub fn normalize_word(raw: &str) -> String {
    let kept: String = raw
        .trim()
        .chars()
        .filter(|c| !(c.is_ascii_punctuation() && *c != '\'') && !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    kept.trim_matches('\'').to_string()
}

/// Parse `utterance_id<TAB>word<TAB>start<TAB>end` lines; `#` starts a comment.
///
/// Utterances are returned in order of first appearance, entries sorted by start.
pub fn load_alignments<R: BufRead>(input: R) -> Result<Vec<UtteranceAlignment>> {
    let mut order: Vec<UtteranceAlignment> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let time = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("bad {what} time `{s}`")))
        };
        let utterance_id = fields[0].trim();
        if utterance_id.is_empty() {
            return Err(Error::parse(lineno, "empty utterance id"));
        }
        let word = normalize_word(fields[1]);
        if word.is_empty() {
            return Err(Error::Validation(format!(
                "line {lineno}: word `{}` is empty after normalization",
                fields[1]
            )));
        }
        let (start, end) = (time(fields[2], "start")?, time(fields[3], "end")?);
        if end <= start {
            return Err(Error::Validation(format!(
                "line {lineno}: end {end} is not after start {start}"
            )));
        }
        let slot = *index.entry(utterance_id.to_string()).or_insert_with(|| {
            order.push(UtteranceAlignment {
                utterance_id: utterance_id.to_string(),
                entries: Vec::new(),
            });
            order.len() - 1
        });
        order[slot].entries.push(AlignmentEntry {
            utterance_id: utterance_id.to_string(),
            word,
            start,
            end,
        });
    }

    for utt in &mut order {
        utt.entries.sort_by(|a, b| a.start.total_cmp(&b.start));
        if let Some(pair) = utt.entries.windows(2).find(|w| w[1].start < w[0].end) {
            return Err(Error::Validation(format!(
                "utterance {}: `{}` [{}, {}) overlaps `{}` [{}, {})",
                utt.utterance_id,
                pair[0].word,
                pair[0].start,
                pair[0].end,
                pair[1].word,
                pair[1].start,
                pair[1].end
            )));
        }
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordSegment {
    pub utterance_id: String,
    /// Position within the utterance, consecutive from 0.
    pub index: usize,
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
    pub features: FeatureSequence,
}

impl WordSegment {
    pub fn num_frames(&self) -> usize {
        self.features.len()
    }

    pub fn is_long(&self) -> bool {
        self.num_frames() > LONG_SEGMENT_FRAMES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Excision {
    pub segments: Vec<WordSegment>,
    /// Entries whose frame range was empty after rounding and clamping.
    pub dropped: usize,
}

/// Cut one utterance's features at word boundaries.
///
/// Entry `[start, end)` maps to frames `[round(start/hop), round(end/hop))`
/// clamped to the utterance length.
pub fn excise_segments(
    utterance: &FeatureSequence,
    entries: &[AlignmentEntry],
    hop: f64,
) -> Result<Excision> {
    if !(hop > 0.0) {
        return Err(Error::Config(format!("frame hop {hop} must be positive")));
    }
    let total = utterance.len();
    let mut segments = Vec::with_capacity(entries.len());
    let mut dropped = 0;
    for entry in entries {
        let to_frame = |t: f64| ((t / hop).round().max(0.0) as usize).min(total);
        let (start, end) = (to_frame(entry.start), to_frame(entry.end));
        if start >= end {
            dropped += 1;
            continue;
        }
        segments.push(WordSegment {
            utterance_id: entry.utterance_id.clone(),
            index: segments.len(),
            word: normalize_word(&entry.word),
            start_frame: start,
            end_frame: end,
            features: utterance.slice(start, end)?,
        });
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} word(s) with empty frame ranges",
            entries.first().map_or("<utterance>", |e| e.utterance_id.as_str())
        );
    }
    if segments.is_empty() {
        return Err(Error::Input(format!(
            "utterance {}: every word slice is empty",
            entries.first().map_or("<unknown>", |e| e.utterance_id.as_str())
        )));
    }
    Ok(Excision { segments, dropped })
}

/// Per-coefficient z-normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std`, cast to the model precision.
    pub fn apply<T: Real>(&self, features: &FeatureSequence) -> Result<FeatureSequence<T>> {
        if features.dim() != self.dim() {
            return Err(Error::Contract(format!(
                "features have dimension {}, normalization expects {}",
                features.dim(),
                self.dim()
            )));
        }
        Ok(features.map(|k, v| T::of((v - self.mean[k]) / self.std[k])))
    }
}

/// Population mean and standard deviation of every coefficient over all
/// frames of all sequences. Std entries are floored at 1e-8.
pub fn compute_normalization<'a, I>(sequences: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a FeatureSequence>,
{
    let seqs: Vec<&FeatureSequence> = sequences.into_iter().collect();
    let dim = seqs.first().map_or(0, |s| s.dim());
    if seqs.iter().any(|s| s.dim() != dim) {
        return Err(Error::Contract("sequences have mixed feature dimensions".into()));
    }
    let frames: usize = seqs.iter().map(|s| s.len()).sum();
    if frames == 0 {
        return Err(Error::InsufficientData("no frames to normalize over".into()));
    }
    let exec = Execution::best_available();

    let partial_sums = parallel::map(exec, &seqs, |s| {
        let mut acc = vec![0.0; dim];
        for f in s.frames() {
            acc.iter_mut().zip(f).for_each(|(a, v)| *a += v);
        }
        acc
    });
    let mut mean = vec![0.0; dim];
    for p in &partial_sums {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= frames as f64);

    let partial_sq = parallel::map(exec, &seqs, |s| {
        let mut acc = vec![0.0; dim];
        for f in s.frames() {
            for ((a, v), m) in acc.iter_mut().zip(f).zip(&mean) {
                *a += (v - m) * (v - m);
            }
        }
        acc
    });
    let mut var = vec![0.0; dim];
    for p in &partial_sq {
        var.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    let std = var
        .iter()
        .map(|v| (v / frames as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormalizationStats { mean, std })
}

/// Global index of a segment in [`Corpus::segments`].
pub type SegmentId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextTarget {
    /// Signed position relative to the center, in `[-k, -1] ∪ [1, k]`.
    pub offset: i32,
    pub segment: SegmentId,
}

/// A center segment and every neighbor within the window in its utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipGramExample {
    pub center: SegmentId,
    pub targets: Vec<ContextTarget>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipGramSet {
    pub examples: Vec<SkipGramExample>,
    /// Segments that had no neighbor (single-word utterances).
    pub isolated: usize,
}

/// Build skip-gram examples for utterances laid out contiguously: utterance
/// `u` owns global segment ids `spans[u]`. Windows never cross utterances.
pub fn build_skipgram_examples(spans: &[Range<SegmentId>], k: usize) -> Result<SkipGramSet> {
    if k == 0 {
        return Err(Error::Config("skip-gram window k must be at least 1".into()));
    }
    let mut examples = Vec::new();
    let mut isolated = 0;
    for span in spans {
        let n = span.len();
        for pos in 0..n {
            let lo = pos.saturating_sub(k);
            let hi = (pos + k).min(n - 1);
            let targets: Vec<ContextTarget> = (lo..=hi)
                .filter(|&j| j != pos)
                .map(|j| ContextTarget {
                    offset: j as i32 - pos as i32,
                    segment: span.start + j,
                })
                .collect();
            if targets.is_empty() {
                isolated += 1;
            } else {
                examples.push(SkipGramExample {
                    center: span.start + pos,
                    targets,
                });
            }
        }
    }
    if isolated > 0 {
        log::info!("{isolated} segment(s) without neighbors produced no skip-gram example");
    }
    Ok(SkipGramSet { examples, isolated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSpan {
    pub id: String,
    pub segments: Range<SegmentId>,
}

/// All word segments of a corpus, grouped contiguously by utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub segments: Vec<WordSegment>,
    pub utterances: Vec<UtteranceSpan>,
}

impl Corpus {
    /// Assemble from per-utterance segment lists (indices must run 0, 1, ...).
    pub fn from_utterances(utterances: Vec<Vec<WordSegment>>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for segs in utterances {
            let Some(first) = segs.first() else { continue };
            let id = first.utterance_id.clone();
            if segs
                .iter()
                .enumerate()
                .any(|(i, s)| s.index != i || s.utterance_id != id)
            {
                return Err(Error::Contract(format!(
                    "utterance {id}: segments must be consecutive from 0 and share one id"
                )));
            }
            let start = corpus.segments.len();
            corpus.segments.extend(segs);
            corpus.utterances.push(UtteranceSpan {
                id,
                segments: start..corpus.segments.len(),
            });
        }
        if let Some(d) = corpus.segments.first().map(|s| s.features.dim()) {
            if corpus.segments.iter().any(|s| s.features.dim() != d) {
                return Err(Error::Contract("segments have mixed feature dimensions".into()));
            }
        }
        let long = corpus.segments.iter().filter(|s| s.is_long()).count();
        if long > 0 {
            log::info!("{long} segment(s) exceed {LONG_SEGMENT_FRAMES} frames");
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.segments.first().map(|s| s.features.dim())
    }

    pub fn spans(&self) -> Vec<Range<SegmentId>> {
        self.utterances.iter().map(|u| u.segments.clone()).collect()
    }

    pub fn skipgram_examples(&self, k: usize) -> Result<SkipGramSet> {
        build_skipgram_examples(&self.spans(), k)
    }

    pub fn normalization(&self) -> Result<NormalizationStats> {
        compute_normalization(self.segments.iter().map(|s| &s.features))
    }

    /// Every segment normalized and cast to the model precision, by segment id.
    pub fn normalized<T: Real>(&self, stats: &NormalizationStats) -> Result<Vec<FeatureSequence<T>>> {
        parallel::map(Execution::best_available(), &self.segments, |s| {
            stats.apply::<T>(&s.features)
        })
        .into_iter()
        .collect()
    }
}

impl Corpus {
    /// Rebuild segments from manifest rows, slicing each utterance's cached
    /// features. `load` is called once per utterance, in first-appearance order.
    pub fn from_manifest<F>(rows: &[ManifestRow], mut load: F) -> Result<Self>
    where
        F: FnMut(&str) -> Result<FeatureSequence>,
    {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&ManifestRow>> = HashMap::new();
        for row in rows {
            let group = groups.entry(&row.utterance_id).or_insert_with(|| {
                order.push(&row.utterance_id);
                Vec::new()
            });
            group.push(row);
        }
        let mut utterances = Vec::with_capacity(order.len());
        for id in order {
            let features = load(id)?;
            let mut group = groups.remove(id).unwrap_or_default();
            group.sort_by_key(|r| r.segment_index);
            let mut segments = Vec::with_capacity(group.len());
            for row in group {
                if row.end_frame > features.len() {
                    return Err(Error::Contract(format!(
                        "utterance {id}: segment {} ends at frame {} but the cache has {} frames",
                        row.segment_index,
                        row.end_frame,
                        features.len()
                    )));
                }
                segments.push(WordSegment {
                    utterance_id: row.utterance_id.clone(),
                    index: row.segment_index,
                    word: row.word.clone(),
                    start_frame: row.start_frame,
                    end_frame: row.end_frame,
                    features: features.slice(row.start_frame, row.end_frame)?,
                });
            }
            utterances.push(segments);
        }
        Corpus::from_utterances(utterances)
    }
}

/// One row of the segment manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub utterance_id: String,
    pub segment_index: usize,
    pub word: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl From<&WordSegment> for ManifestRow {
    fn from(s: &WordSegment) -> Self {
        Self {
            utterance_id: s.utterance_id.clone(),
            segment_index: s.index,
            word: s.word.clone(),
            start_frame: s.start_frame,
            end_frame: s.end_frame,
        }
    }
}

pub const MANIFEST_HEADER: &str = "#utterance_id\tsegment_index\tword\tstart_frame\tend_frame";

pub fn write_manifest<W: Write>(mut out: W, rows: &[ManifestRow]) -> Result<()> {
    writeln!(out, "{MANIFEST_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.utterance_id, r.segment_index, r.word, r.start_frame, r.end_frame
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::parse(i + 1, format!("bad integer `{s}`")))
        };
        let row = ManifestRow {
            utterance_id: f[0].to_string(),
            segment_index: num(f[1])?,
            word: f[2].to_string(),
            start_frame: num(f[3])?,
            end_frame: num(f[4])?,
        };
        if row.start_frame >= row.end_frame {
            return Err(Error::parse(i + 1, "empty frame range"));
        }
        rows.push(row);
    }
    Ok(rows)
}
