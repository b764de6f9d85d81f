//! Parallel-corpus ingestion and gendered sentence extraction.
//!
//! English sentences are matched against female and male word lists with a
//! case-insensitive whole-word rule (UAX #29 word boundaries). A pair joins
//! a gender subset only when its English side mentions that gender and not
//! the other one; the aligned target sentences are what get scored later.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::hash;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is not valid UTF-8 (first bad byte at offset {offset})")]
    Utf8 { path: PathBuf, offset: usize },
    #[error("alignment mismatch: {english} has {english_lines} lines but {target} has {target_lines}")]
    AlignmentMismatch { english: PathBuf, target: PathBuf, english_lines: usize, target_lines: usize },
    #[error("{path}:{line}: expected exactly one tab, found {tabs}")]
    TsvColumns { path: PathBuf, line: usize, tabs: usize },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("word list {name:?} is empty")]
    EmptyWordList { name: String },
    #[error("word list {name:?} entry {word:?} contains whitespace")]
    WordWithWhitespace { name: String, word: String },
    #[error("word lists {a:?} and {b:?} overlap on {words:?}")]
    OverlappingWordLists { a: String, b: String, words: Vec<String> },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{0} subset is empty")]
    EmptySubset(Gender),
    #[error("sentence contains a tab or newline and cannot be written as TSV: {0:?}")]
    Unserializable(String),
    #[error("name map: {0}")]
    NameMap(String),
    #[error("metadata sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "female" | "f" => Some(Gender::Female),
            "male" | "m" => Some(Gender::Male),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub english: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(english: impl Into<String>, target: impl Into<String>) -> Self {
        Self { english: english.into(), target: target.into() }
    }
}

/// Aligned English/target sentence pairs, in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub id: String,
    pub language_tag: String,
    pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    /// Builds a corpus from in-memory pairs. Pairs with a blank side are
    /// dropped; their zero-based positions are returned alongside.
    pub fn from_pairs(
        id: impl Into<String>,
        language_tag: impl Into<String>,
        pairs: impl IntoIterator<Item = (String, String)>,
    ) -> (Self, Vec<usize>) {
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for (i, (en, tgt)) in pairs.into_iter().enumerate() {
            let (en, tgt) = (en.trim(), tgt.trim());
            if en.is_empty() || tgt.is_empty() {
                dropped.push(i);
            } else {
                kept.push(SentencePair::new(en, tgt));
            }
        }
        (Self { id: id.into(), language_tag: language_tag.into(), pairs: kept }, dropped)
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Where a parallel corpus lives on disk.
#[derive(Debug, Clone)]
pub enum ParallelSource {
    /// Moses-style: one file per language, aligned line by line.
    TwoFiles { english: PathBuf, target: PathBuf },
    /// One `english<TAB>target` pair per line.
    Tsv(PathBuf),
}

impl ParallelSource {
    fn id(&self) -> String {
        match self {
            ParallelSource::TwoFiles { english, target } => {
                format!("{},{}", english.display(), target.display())
            }
            ParallelSource::Tsv(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub lines_read: usize,
    pub pairs_kept: usize,
    /// 1-based line numbers dropped because one side was blank.
    pub dropped_lines: Vec<usize>,
}

pub(crate) fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    String::from_utf8(bytes)
        .map_err(|e| CorpusError::Utf8 { path: path.to_owned(), offset: e.utf8_error().valid_up_to() })
}

pub fn load_parallel(source: &ParallelSource, language_tag: &str) -> Result<(ParallelCorpus, LoadReport)> {
    let raw: Vec<(String, String)> = match source {
        ParallelSource::TwoFiles { english, target } => {
            let en_text = read_utf8(english)?;
            let tgt_text = read_utf8(target)?;
            let en: Vec<&str> = en_text.lines().collect();
            let tgt: Vec<&str> = tgt_text.lines().collect();
            if en.len() != tgt.len() {
                return Err(CorpusError::AlignmentMismatch {
                    english: english.clone(),
                    target: target.clone(),
                    english_lines: en.len(),
                    target_lines: tgt.len(),
                });
            }
            en.into_iter().zip(tgt).map(|(a, b)| (a.to_owned(), b.to_owned())).collect()
        }
        ParallelSource::Tsv(path) => {
            let text = read_utf8(path)?;
            let mut rows = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    rows.push((String::new(), String::new()));
                    continue;
                }
                let tabs = line.matches('\t').count();
                if tabs != 1 {
                    return Err(CorpusError::TsvColumns { path: path.clone(), line: i + 1, tabs });
                }
                let (a, b) = line.split_once('\t').expect("one tab");
                rows.push((a.to_owned(), b.to_owned()));
            }
            rows
        }
    };
    let lines_read = raw.len();
    let (corpus, dropped) = ParallelCorpus::from_pairs(source.id(), language_tag, raw);
    let report = LoadReport {
        lines_read,
        pairs_kept: corpus.len(),
        dropped_lines: dropped.into_iter().map(|i| i + 1).collect(),
    };
    Ok((corpus, report))
}

/// A named set of lowercase word forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordList {
    pub name: String,
    words: BTreeSet<String>,
}

impl WordList {
    pub fn new<I, S>(name: impl Into<String>, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let mut set = BTreeSet::new();
        for w in words {
            let w = w.as_ref().trim();
            if w.is_empty() {
                continue;
            }
            if w.chars().any(char::is_whitespace) {
                return Err(CorpusError::WordWithWhitespace { name, word: w.to_owned() });
            }
            set.insert(w.to_lowercase());
        }
        if set.is_empty() {
            return Err(CorpusError::EmptyWordList { name });
        }
        Ok(Self { name, words: set })
    }

    /// One entry per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        let entries = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(path.display().to_string(), entries)
    }

    /// Adds every entry of `other`; the merged list is renamed `a+b`.
    pub fn merge(&mut self, other: &WordList) {
        self.words.extend(other.words.iter().cloned());
        self.name = format!("{}+{}", self.name, other.name);
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus: String,
    pub language_tag: String,
    pub female_list: String,
    pub male_list: String,
    /// Seed used by `downsample_balance`; `None` before balancing.
    pub balance_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenderedSubsets {
    pub female: Vec<SentencePair>,
    pub male: Vec<SentencePair>,
    pub provenance: Provenance,
}

impl GenderedSubsets {
    pub fn get(&self, gender: Gender) -> &[SentencePair] {
        match gender {
            Gender::Female => &self.female,
            Gender::Male => &self.male,
        }
    }

    /// `group<TAB>english<TAB>target` with a header row; female rows first.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::from("group\tenglish\ttarget\n");
        for gender in [Gender::Female, Gender::Male] {
            for p in self.get(gender) {
                for s in [&p.english, &p.target] {
                    if s.contains(['\t', '\n', '\r']) {
                        return Err(CorpusError::Unserializable(s.clone()));
                    }
                }
                out.push_str(gender.as_str());
                out.push('\t');
                out.push_str(&p.english);
                out.push('\t');
                out.push_str(&p.target);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn from_tsv(text: &str, provenance: Provenance, origin: &Path) -> Result<Self> {
        let mut female = Vec::new();
        let mut male = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || (i == 0 && line == "group\tenglish\ttarget") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(CorpusError::Malformed {
                    path: origin.to_owned(),
                    line: i + 1,
                    message: format!("expected 3 columns, found {}", cols.len()),
                });
            }
            let pair = SentencePair::new(cols[1], cols[2]);
            match Gender::parse(cols[0]) {
                Some(Gender::Female) => female.push(pair),
                Some(Gender::Male) => male.push(pair),
                None => {
                    return Err(CorpusError::Malformed {
                        path: origin.to_owned(),
                        line: i + 1,
                        message: format!("unknown group {:?}", cols[0]),
                    })
                }
            }
        }
        Ok(Self { female, male, provenance })
    }

    /// Reads a subsets TSV and its `.meta.json` sidecar, if one exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        let sidecar = sidecar_path(path);
        let provenance = if sidecar.exists() {
            let meta = read_utf8(&sidecar)?;
            let value: serde_json::Value = serde_json::from_str(&meta)
                .map_err(|e| CorpusError::Sidecar { path: sidecar.clone(), message: e.to_string() })?;
            let prov = value.get("provenance").cloned().unwrap_or(value);
            serde_json::from_value(prov)
                .map_err(|e| CorpusError::Sidecar { path: sidecar.clone(), message: e.to_string() })?
        } else {
            Provenance { corpus: path.display().to_string(), ..Provenance::default() }
        };
        Self::from_tsv(&text, provenance, path)
    }
}

/// `subsets.tsv` -> `subsets.tsv.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Lowercased UAX #29 words of `text`.
pub fn words_of(text: &str) -> impl Iterator<Item = String> + '_ {
    text.unicode_words().map(str::to_lowercase)
}

/// Which subset an English sentence belongs to, if any.
pub fn classify(english: &str, female: &WordList, male: &WordList) -> Option<Gender> {
    let lowered = english.to_lowercase();
    let (mut has_f, mut has_m) = (false, false);
    for w in lowered.unicode_words() {
        has_f |= female.contains(w);
        has_m |= male.contains(w);
        if has_f && has_m {
            return None;
        }
    }
    match (has_f, has_m) {
        (true, false) => Some(Gender::Female),
        (false, true) => Some(Gender::Male),
        _ => None,
    }
}

pub fn extract_gendered(corpus: &ParallelCorpus, female: &WordList, male: &WordList) -> Result<GenderedSubsets> {
    let overlap: Vec<String> = female.words().filter(|w| male.contains(w)).map(str::to_owned).collect();
    if !overlap.is_empty() {
        return Err(CorpusError::OverlappingWordLists { a: female.name.clone(), b: male.name.clone(), words: overlap });
    }
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let labels: Vec<Option<Gender>> = corpus.pairs().par_iter().map(|p| classify(&p.english, female, male)).collect();
    let mut subsets = GenderedSubsets {
        female: Vec::new(),
        male: Vec::new(),
        provenance: Provenance {
            corpus: corpus.id.clone(),
            language_tag: corpus.language_tag.clone(),
            female_list: female.name.clone(),
            male_list: male.name.clone(),
            balance_seed: None,
        },
    };
    for (pair, label) in corpus.pairs().iter().zip(labels) {
        match label {
            Some(Gender::Female) => subsets.female.push(pair.clone()),
            Some(Gender::Male) => subsets.male.push(pair.clone()),
            None => {}
        }
    }
    Ok(subsets)
}

/// Samples the larger subset down to the size of the smaller one, keeping
/// the survivors in their original order.
pub fn downsample_balance(subsets: &GenderedSubsets, seed: u64) -> Result<GenderedSubsets> {
    for g in [Gender::Female, Gender::Male] {
        if subsets.get(g).is_empty() {
            return Err(CorpusError::EmptySubset(g));
        }
    }
    let target = subsets.female.len().min(subsets.male.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shrink = |items: &[SentencePair], rng: &mut ChaCha8Rng| -> Vec<SentencePair> {
        if items.len() == target {
            return items.to_vec();
        }
        let mut picked = index::sample(rng, items.len(), target).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| items[i].clone()).collect()
    };
    let female = shrink(&subsets.female, &mut rng);
    let male = shrink(&subsets.male, &mut rng);
    let mut provenance = subsets.provenance.clone();
    provenance.balance_seed = Some(seed);
    Ok(GenderedSubsets { female, male, provenance })
}

/// Gender-keyed replacement table for personal names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameMap {
    // lowercased source name -> (gender, replacements)
    entries: BTreeMap<String, (Gender, Vec<String>)>,
}

impl NameMap {
    pub fn insert(&mut self, gender: Gender, source: &str, replacement: &str) -> Result<()> {
        let source = source.trim();
        let replacement = replacement.trim();
        if source.is_empty() || replacement.is_empty() {
            return Err(CorpusError::NameMap("empty source or replacement name".into()));
        }
        let entry = self.entries.entry(source.to_lowercase()).or_insert_with(|| (gender, Vec::new()));
        if entry.0 != gender {
            return Err(CorpusError::NameMap(format!("{source:?} is listed as both female and male")));
        }
        entry.1.push(replacement.to_owned());
        Ok(())
    }

    /// `gender<TAB>source_name<TAB>replacement_name`, `#` comments allowed.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_utf8(path)?;
        let mut map = NameMap::default();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let bad = |message: String| CorpusError::Malformed { path: path.to_owned(), line: i + 1, message };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 columns, found {}", cols.len())));
            }
            if i == 0 && cols[0].trim().eq_ignore_ascii_case("gender") {
                continue;
            }
            let gender = Gender::parse(cols[0]).ok_or_else(|| bad(format!("unknown gender {:?}", cols[0])))?;
            map.insert(gender, cols[1], cols[2]).map_err(|e| bad(e.to_string()))?;
        }
        if map.entries.is_empty() {
            return Err(CorpusError::NameMap(format!("{} has no entries", path.display())));
        }
        Ok(map)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replaces whole-word occurrences of mapped names with a same-gender
/// replacement. Each sentence draws from its own generator, seeded from
/// `seed` and the sentence position, so output is a pure function of the
/// inputs and seed.
pub fn substitute_names(sentences: &[String], names: &NameMap, seed: u64) -> Vec<String> {
    // Source names pre-split into lowercased word-boundary segments, longest first.
    let mut patterns: Vec<(Vec<String>, &Vec<String>)> = names
        .entries
        .iter()
        .map(|(src, (_, repl))| (src.split_word_bounds().map(str::to_owned).collect(), repl))
        .collect();
    patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));

    sentences
        .par_iter()
        .enumerate()
        .map(|(k, sentence)| {
            let segments: Vec<&str> = sentence.split_word_bounds().collect();
            let lowered: Vec<String> = segments.iter().map(|s| s.to_lowercase()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(hash::combine(seed, k as u64));
            let mut out = String::with_capacity(sentence.len());
            let mut i = 0;
            'outer: while i < segments.len() {
                for (pat, repl) in &patterns {
                    let end = i + pat.len();
                    if end <= lowered.len() && lowered[i..end] == pat[..] {
                        out.push_str(repl.choose(&mut rng).expect("non-empty replacement list"));
                        i = end;
                        continue 'outer;
                    }
                }
                out.push_str(segments[i]);
                i += 1;
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Term must equal a whole UAX #29 word of the sentence.
    WordBoundary,
    /// Term may appear anywhere; for scripts written without spaces.
    Substring,
}

impl MatchMode {
    pub fn matches(self, sentence_lower: &str, term: &str) -> bool {
        match self {
            MatchMode::WordBoundary => sentence_lower.unicode_words().any(|w| w == term),
            MatchMode::Substring => sentence_lower.contains(term),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreservedCount {
    pub preserved: usize,
    pub total: usize,
}

impl PreservedCount {
    pub fn fraction(self) -> f64 {
        self.preserved as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub female_preserved: f64,
    pub male_preserved: f64,
    pub female: PreservedCount,
    pub male: PreservedCount,
    pub matching: MatchMode,
}

fn preserved_count(entries: &[SentencePair], terms: &WordList, mode: MatchMode) -> PreservedCount {
    let preserved = entries
        .par_iter()
        .filter(|p| {
            let lower = p.target.to_lowercase();
            terms.words().any(|t| mode.matches(&lower, t))
        })
        .count();
    PreservedCount { preserved, total: entries.len() }
}

/// Share of each subset whose target sentence still carries a gendered term.
pub fn gender_preservation_rate(
    subsets: &GenderedSubsets,
    female_terms: &WordList,
    male_terms: &WordList,
    matching: MatchMode,
) -> Result<PreservationReport> {
    for g in [Gender::Female, Gender::Male] {
        if subsets.get(g).is_empty() {
            return Err(CorpusError::EmptySubset(g));
        }
    }
    let female = preserved_count(&subsets.female, female_terms, matching);
    let male = preserved_count(&subsets.male, male_terms, matching);
    Ok(PreservationReport {
        female_preserved: female.fraction(),
        male_preserved: male.fraction(),
        female,
        male,
        matching,
    })
}
