//! Toy spoken corpora with known semantic structure, for tests and benches.
//!
//! Utterances are walks of a Markov chain over concepts. Every concept is
//! voiced by one word type, except synonym concepts, which are voiced by one
//! of two word types chosen uniformly per token. Synonyms therefore have
//! identical context distributions but unrelated acoustics: each word type
//! has a fixed random prototype feature sequence, and every token adds
//! Gaussian noise to it.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::{Corpus, WordSegment};
use crate::error::{Error, Result};
use crate::sequence::FeatureSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub vocabulary: usize,
    pub synonym_pairs: usize,
    pub utterances: usize,
    /// Words per utterance, inclusive range.
    pub words_per_utterance: (usize, usize),
    /// Frames per word type prototype, inclusive range.
    pub frames_per_word: (usize, usize),
    pub feature_dim: usize,
    /// Per-token noise standard deviation (prototypes have unit variance).
    pub noise: f64,
    /// Possible successors of each concept.
    pub successors: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocabulary: 40,
            synonym_pairs: 5,
            utterances: 2000,
            words_per_utterance: (5, 9),
            frames_per_word: (3, 6),
            feature_dim: 13,
            noise: 0.2,
            successors: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Word types, indexed by type id.
    pub words: Vec<String>,
    pub synonyms: Vec<(String, String)>,
}

impl SyntheticCorpus {
    pub fn is_synonym_pair(&self, a: &str, b: &str) -> bool {
        self.synonyms
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let SyntheticSpec {
        vocabulary,
        synonym_pairs,
        utterances,
        words_per_utterance: (min_words, max_words),
        frames_per_word: (min_frames, max_frames),
        feature_dim,
        noise,
        successors,
        seed,
    } = *spec;
    if 2 * synonym_pairs > vocabulary || vocabulary - synonym_pairs < 2 {
        return Err(Error::Config(format!(
            "{synonym_pairs} synonym pairs do not fit a vocabulary of {vocabulary}"
        )));
    }
    if min_words == 0 || min_words > max_words || min_frames == 0 || min_frames > max_frames {
        return Err(Error::Config("empty or inverted length range".into()));
    }
    if feature_dim == 0 || successors == 0 || !(noise >= 0.0) {
        return Err(Error::Config("feature_dim and successors must be positive, noise non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concepts = vocabulary - synonym_pairs;

    // Concept c < synonym_pairs is voiced by words 2c and 2c+1; the rest by one word each.
    let voices: Vec<Vec<usize>> = (0..concepts)
        .map(|c| {
            if c < synonym_pairs {
                vec![2 * c, 2 * c + 1]
            } else {
                vec![c + synonym_pairs]
            }
        })
        .collect();
    let words: Vec<String> = (0..vocabulary).map(|w| format!("w{w:02}")).collect();
    let synonyms = (0..synonym_pairs)
        .map(|c| (words[2 * c].clone(), words[2 * c + 1].clone()))
        .collect();

    let next: Vec<Vec<usize>> = (0..concepts)
        .map(|_| {
            (0..successors.min(concepts))
                .map(|_| rng.random_range(0..concepts))
                .collect()
        })
        .collect();
    let prototypes: Vec<Vec<f64>> = (0..vocabulary)
        .map(|_| {
            let frames = rng.random_range(min_frames..=max_frames);
            (0..frames * feature_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let jitter = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;

    let mut utts = Vec::with_capacity(utterances);
    for u in 0..utterances {
        let id = format!("utt{u:05}");
        let n = rng.random_range(min_words..=max_words);
        let mut concept = rng.random_range(0..concepts);
        let mut segments = Vec::with_capacity(n);
        let mut frame = 0;
        for index in 0..n {
            let w = *voices[concept].choose(&mut rng).expect("non-empty");
            let data: Vec<f64> = prototypes[w]
                .iter()
                .map(|v| v + jitter.sample(&mut rng))
                .collect();
            let features = FeatureSequence::new(data, feature_dim)?;
            let len = features.len();
            segments.push(WordSegment {
                utterance_id: id.clone(),
                index,
                word: words[w].clone(),
                start_frame: frame,
                end_frame: frame + len,
                features,
            });
            frame += len;
            concept = *next[concept].choose(&mut rng).expect("non-empty");
        }
        utts.push(segments);
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::from_utterances(utts)?,
        words,
        synonyms,
    })
}
