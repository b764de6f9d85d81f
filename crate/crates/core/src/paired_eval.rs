//! Bias score over explicitly paired sentences, the shuffled-pairing
//! baseline, and occupation template generation.

use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::read_utf8;
use crate::model_protocol::{Group, ModelRecord, PairSkeleton, RecordPair, SentenceStub};
use crate::scoring::aula;

pub const GENDER_SLOT: &str = "[Gender]";
pub const OCCUPATION_SLOT: &str = "[Occupation]";

#[derive(Debug, thiserror::Error)]
pub enum PairedError {
    #[error("no pairs")]
    Empty,
    #[error("cannot pair {males} male with {females} female records")]
    LengthMismatch { males: usize, females: usize },
    #[error("template {index} ({template:?}): {slot} must appear exactly once, found {count}")]
    Placeholder { index: usize, template: String, slot: &'static str, count: usize },
    #[error("template spec has no {0}")]
    EmptySpec(&'static str),
    #[error("cannot sample {wanted} of {available} template pairs")]
    SampleTooLarge { wanted: usize, available: usize },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] crate::corpus::CorpusError),
}

pub type Result<T, E = PairedError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedScore {
    /// `100 * indicator_count / pair_count`.
    pub score: f64,
    pub pair_count: usize,
    /// Pairs whose first member has strictly higher likelihood.
    pub indicator_count: usize,
    /// Pairs with equal likelihood; they count as not preferred.
    pub tie_count: usize,
}

/// Percentage of pairs where the first (stereotypical / male) member has the
/// strictly higher attention-weighted likelihood.
pub fn paired_bias_score<'a, I>(pairs: I) -> Result<PairedScore>
where
    I: IntoIterator<Item = (&'a ModelRecord, &'a ModelRecord)>,
{
    let (mut n, mut hits, mut ties) = (0usize, 0usize, 0usize);
    for (s, a) in pairs {
        let (a_s, a_a) = (aula(s), aula(a));
        n += 1;
        if a_s > a_a {
            hits += 1;
        } else if a_s == a_a {
            ties += 1;
        }
    }
    if n == 0 {
        return Err(PairedError::Empty);
    }
    Ok(PairedScore { score: 100.0 * hits as f64 / n as f64, pair_count: n, indicator_count: hits, tie_count: ties })
}

/// Convenience over a validated pair file.
pub fn paired_bias_score_of(pairs: &[RecordPair]) -> Result<PairedScore> {
    paired_bias_score(pairs.iter().map(|p| (&p.stereo, &p.anti)))
}

/// Pairs male `i` with a distinct female chosen by a seeded random
/// permutation.
pub fn shuffle_pairs<'a>(
    males: &'a [ModelRecord],
    females: &'a [ModelRecord],
    seed: u64,
) -> Result<Vec<(&'a ModelRecord, &'a ModelRecord)>> {
    if males.is_empty() || females.is_empty() {
        return Err(PairedError::Empty);
    }
    if males.len() != females.len() {
        return Err(PairedError::LengthMismatch { males: males.len(), females: females.len() });
    }
    let mut perm: Vec<usize> = (0..females.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(males.iter().zip(perm).map(|(m, j)| (m, &females[j])).collect())
}

/// Templates and fillers for occupation sentence pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    /// Each contains `[Gender]` and `[Occupation]` exactly once.
    pub templates: Vec<String>,
    /// `(male_form, female_form)`.
    pub gender_pairs: Vec<(String, String)>,
    pub occupations: Vec<String>,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl TemplateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(PairedError::EmptySpec("templates"));
        }
        if self.gender_pairs.is_empty() {
            return Err(PairedError::EmptySpec("gender pairs"));
        }
        if self.occupations.is_empty() {
            return Err(PairedError::EmptySpec("occupations"));
        }
        for (index, t) in self.templates.iter().enumerate() {
            for slot in [GENDER_SLOT, OCCUPATION_SLOT] {
                let count = t.matches(slot).count();
                if count != 1 {
                    return Err(PairedError::Placeholder { index, template: t.clone(), slot, count });
                }
            }
        }
        Ok(())
    }

    /// Loads `templates.txt`, `gender_pairs.tsv` and `occupations.txt`
    /// from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let templates = read_utf8(&dir.join("templates.txt"))?;
        let pairs_path = dir.join("gender_pairs.tsv");
        let pairs = read_utf8(&pairs_path)?;
        let occupations = read_utf8(&dir.join("occupations.txt"))?;

        let mut gender_pairs = Vec::new();
        for (line, l) in content_lines(&pairs) {
            match l.split('\t').map(str::trim).collect::<Vec<_>>()[..] {
                [m, f] if !m.is_empty() && !f.is_empty() => gender_pairs.push((m.to_owned(), f.to_owned())),
                _ => {
                    return Err(PairedError::Malformed {
                        path: pairs_path,
                        line,
                        message: "expected male<TAB>female".into(),
                    })
                }
            }
        }
        let spec = Self {
            templates: content_lines(&templates).map(|(_, l)| l.to_owned()).collect(),
            gender_pairs,
            occupations: content_lines(&occupations).map(|(_, l)| l.to_owned()).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn combinations(&self) -> usize {
        self.templates.len() * self.gender_pairs.len() * self.occupations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePair {
    pub male: String,
    pub female: String,
}

/// Every template x gender pair x occupation combination, in that nesting
/// order.
pub fn generate_templates(spec: &TemplateSpec) -> Result<Vec<TemplatePair>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.combinations());
    for t in &spec.templates {
        for (male, female) in &spec.gender_pairs {
            for occ in &spec.occupations {
                let filled = t.replace(OCCUPATION_SLOT, occ);
                out.push(TemplatePair {
                    male: filled.replace(GENDER_SLOT, male),
                    female: filled.replace(GENDER_SLOT, female),
                });
            }
        }
    }
    Ok(out)
}

/// Seeded uniform sample of `n` pairs without replacement, original order kept.
pub fn sample_templates(pairs: &[TemplatePair], n: usize, seed: u64) -> Result<Vec<TemplatePair>> {
    if n > pairs.len() {
        return Err(PairedError::SampleTooLarge { wanted: n, available: pairs.len() });
    }
    let mut picked = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), pairs.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Pair-file skeletons with the male sentence as the stereotypical member.
pub fn to_skeletons(pairs: &[TemplatePair]) -> Vec<PairSkeleton> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairSkeleton {
            pair_id: format!("tmp-{i:06}"),
            stereo: SentenceStub { id: format!("tmp-{i:06}-m"), group: Group::Stereo, text: p.male.clone() },
            anti: SentenceStub { id: format!("tmp-{i:06}-f"), group: Group::Anti, text: p.female.clone() },
        })
        .collect()
}
