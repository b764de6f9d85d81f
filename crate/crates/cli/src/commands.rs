use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use mbe_core::corpus::{self, LoadReport, MatchMode, NameMap, ParallelSource, WordList};
use mbe_core::model_protocol::{self, Group, MockSpec, ModelRecord, RecordPair};
use mbe_core::paired_eval::{self, TemplateSpec};
use mbe_core::scoring::{self, McNemarConfig, ScoreConfig, SimilarityConfig};
use mbe_core::stats::{self, McNemarTally, MetaReport};
use mbe_core::GenderedSubsets;

use crate::report::{self, write_atomic, write_report};

/// Invalid combination of arguments; reported with exit status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct SubsetsMeta<'a, C: Serialize> {
    schema_version: u32,
    command: &'a str,
    config: &'a C,
    provenance: &'a corpus::Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    load_report: Option<&'a LoadReport>,
    female: usize,
    male: usize,
}

fn write_subsets<C: Serialize>(
    out: &Path,
    command: &str,
    config: &C,
    subsets: &GenderedSubsets,
    load_report: Option<&LoadReport>,
) -> Result<()> {
    write_atomic(out, subsets.to_tsv()?.as_bytes())?;
    let meta = SubsetsMeta {
        schema_version: report::SCHEMA_VERSION,
        command,
        config,
        provenance: &subsets.provenance,
        load_report,
        female: subsets.female.len(),
        male: subsets.male.len(),
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    write_atomic(&corpus::sidecar_path(out), json.as_bytes())
}

#[derive(Args, Serialize)]
pub struct ExtractArgs {
    /// Aligned English and target files, comma-separated: `a.en,a.xx`.
    #[arg(long, conflicts_with = "tsv", required_unless_present = "tsv")]
    corpus: Option<String>,
    /// Single `english<TAB>target` file.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// BCP-47 tag of the target language.
    #[arg(long, default_value = "und")]
    lang: String,
    #[arg(long)]
    female: PathBuf,
    #[arg(long)]
    male: PathBuf,
    /// Female personal names merged into the female word list.
    #[arg(long)]
    female_names: Option<PathBuf>,
    /// Male personal names merged into the male word list.
    #[arg(long)]
    male_names: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let source = match (&a.corpus, &a.tsv) {
        (Some(pair), None) => match pair.split(',').collect::<Vec<_>>()[..] {
            [en, tgt] => ParallelSource::TwoFiles { english: en.into(), target: tgt.into() },
            _ => return usage("--corpus takes exactly two comma-separated paths"),
        },
        (None, Some(tsv)) => ParallelSource::Tsv(tsv.clone()),
        _ => return usage("give either --corpus or --tsv"),
    };
    let (corpus, load_report) = corpus::load_parallel(&source, &a.lang)?;
    let mut female = WordList::load(&a.female)?;
    let mut male = WordList::load(&a.male)?;
    if let Some(p) = &a.female_names {
        female.merge(&WordList::load(p)?);
    }
    if let Some(p) = &a.male_names {
        male.merge(&WordList::load(p)?);
    }
    let subsets = corpus::extract_gendered(&corpus, &female, &male)?;
    write_subsets(&a.out, "extract", &a, &subsets, Some(&load_report))?;
    eprintln!(
        "read {} lines, kept {} pairs ({} dropped); female {}, male {}",
        load_report.lines_read,
        load_report.pairs_kept,
        load_report.dropped_lines.len(),
        subsets.female.len(),
        subsets.male.len()
    );
    Ok(())
}

#[derive(Args, Serialize)]
pub struct BalanceArgs {
    #[arg(long)]
    subsets: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn balance(a: BalanceArgs) -> Result<()> {
    let subsets = GenderedSubsets::load(&a.subsets)?;
    let balanced = corpus::downsample_balance(&subsets, a.seed)?;
    write_subsets(&a.out, "balance", &a, &balanced, None)?;
    eprintln!(
        "female {} -> {}, male {} -> {}",
        subsets.female.len(),
        balanced.female.len(),
        subsets.male.len(),
        balanced.male.len()
    );
    Ok(())
}

#[derive(Args, Serialize)]
pub struct MockScoreArgs {
    /// Subsets TSV to score; writes --males-out and --females-out.
    #[arg(long, conflicts_with = "pairs", required_unless_present = "pairs")]
    subsets: Option<PathBuf>,
    #[arg(long, requires = "subsets")]
    males_out: Option<PathBuf>,
    #[arg(long, requires = "subsets")]
    females_out: Option<PathBuf>,
    /// Pair skeleton file (e.g. from `templates`); writes --out.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long, requires = "pairs")]
    out: Option<PathBuf>,
    /// Per-token log-likelihood advantage of male/stereotypical sentences.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    bias: f64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn mock_records(texts: &[&str], group: Group, prefix: &str, spec: &MockSpec) -> Result<Vec<ModelRecord>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut r = model_protocol::mock_score(t, Some(group), spec)?;
            r.id = format!("{prefix}-{:06}", i + 1);
            Ok(r)
        })
        .collect()
}

fn write_jsonl<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)
}

fn write_mock_meta(path: &Path, args: &MockScoreArgs, count: usize) -> Result<()> {
    #[derive(Serialize)]
    struct Meta {
        backend: &'static str,
        records: usize,
    }
    let json = report::to_json("mock-score", args, &Meta { backend: "mock", records: count })?;
    write_atomic(&corpus::sidecar_path(path), json.as_bytes())
}

pub fn mock_score(a: MockScoreArgs) -> Result<()> {
    let spec = MockSpec { bias_strength: a.bias, embed_dim: a.dim, seed: a.seed };
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    if let Some(subsets_path) = &a.subsets {
        let (Some(males_out), Some(females_out)) = (&a.males_out, &a.females_out) else {
            return usage("--subsets needs --males-out and --females-out");
        };
        let subsets = GenderedSubsets::load(subsets_path)?;
        let texts = |g: corpus::Gender| subsets.get(g).iter().map(|p| p.target.as_str()).collect::<Vec<_>>();
        let males = mock_records(&texts(corpus::Gender::Male), Group::Male, "male", &spec)?;
        let females = mock_records(&texts(corpus::Gender::Female), Group::Female, "female", &spec)?;
        write_jsonl(males_out, |b| model_protocol::write_records(b, &males))?;
        write_jsonl(females_out, |b| model_protocol::write_records(b, &females))?;
        write_mock_meta(males_out, &a, males.len())?;
        write_mock_meta(females_out, &a, females.len())?;
        eprintln!("wrote {} male and {} female records", males.len(), females.len());
    } else if let Some(pairs_path) = &a.pairs {
        let Some(out) = &a.out else {
            return usage("--pairs needs --out");
        };
        let skeletons = model_protocol::read_skeletons(pairs_path)?;
        let pairs = skeletons
            .iter()
            .map(|s| {
                let mut stereo = model_protocol::mock_score(&s.stereo.text, Some(s.stereo.group), &spec)?;
                let mut anti = model_protocol::mock_score(&s.anti.text, Some(s.anti.group), &spec)?;
                stereo.id = s.stereo.id.clone();
                anti.id = s.anti.id.clone();
                Ok(RecordPair { pair_id: s.pair_id.clone(), stereo, anti })
            })
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(out, |b| model_protocol::write_pairs(b, &pairs))?;
        write_mock_meta(out, &a, pairs.len())?;
        eprintln!("wrote {} record pairs", pairs.len());
    }
    Ok(())
}

#[derive(Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    males: PathBuf,
    #[arg(long)]
    females: PathBuf,
    /// Pairs with cosine similarity below this get zero weight.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Drop the similarity threshold entirely (negative weights survive
    /// only together with --no-clamp).
    #[arg(long)]
    no_threshold: bool,
    /// Keep negative cosine similarities as negative weights.
    #[arg(long)]
    no_clamp: bool,
    /// Worker threads; 0 = one per core. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Seed of the random predictor in the McNemar test.
    #[arg(long, default_value_t = 0)]
    mcnemar_seed: u64,
    #[arg(long)]
    no_mcnemar: bool,
    #[arg(long)]
    continuity_correction: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let males = model_protocol::read_records(&a.males)?;
    let females = model_protocol::read_records(&a.females)?;
    let config = ScoreConfig {
        similarity: SimilarityConfig { clamp_negative: !a.no_clamp, threshold: (!a.no_threshold).then_some(a.tau) },
        workers: a.workers,
        mcnemar: (!a.no_mcnemar)
            .then_some(McNemarConfig { seed: a.mcnemar_seed, continuity_correction: a.continuity_correction }),
    };
    let result = scoring::mbe_score(&males, &females, &config)?;
    write_report(&a.out, "score", &a, &result)?;
    eprintln!(
        "MBE score {:.2} over {} retained of {} pairs ({} ties)",
        result.score, result.retained_pairs, result.pair_count, result.tie_count
    );
    if let Some(s) = &result.significance {
        eprintln!(
            "McNemar vs random: b={} c={} chi2={:.4} p={:.4} {}",
            s.b,
            s.c,
            s.statistic,
            s.p_value,
            if s.significant { "significant" } else { "not significant" }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PairedResult {
    #[serde(flatten)]
    score: paired_eval::PairedScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

fn paired_result(score: paired_eval::PairedScore) -> PairedResult {
    let warning = (score.tie_count > 0)
        .then(|| format!("{} of {} pairs are ties and count as not preferred", score.tie_count, score.pair_count));
    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    eprintln!("bias score {:.2} over {} pairs", score.score, score.pair_count);
    PairedResult { score, warning }
}

#[derive(Args, Serialize)]
pub struct PairedEvalArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn paired_eval(a: PairedEvalArgs) -> Result<()> {
    let pairs = model_protocol::validate_pairfile(&a.pairs)?;
    let score = paired_eval::paired_bias_score_of(&pairs)?;
    write_report(&a.out, "paired-eval", &a, &paired_result(score))
}

#[derive(Args, Serialize)]
pub struct ShfArgs {
    #[arg(long)]
    males: PathBuf,
    #[arg(long)]
    females: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn shf(a: ShfArgs) -> Result<()> {
    let males = model_protocol::read_records(&a.males)?;
    let females = model_protocol::read_records(&a.females)?;
    let pairs = paired_eval::shuffle_pairs(&males, &females, a.seed)?;
    let score = paired_eval::paired_bias_score(pairs)?;
    write_report(&a.out, "shf", &a, &paired_result(score))
}

#[derive(Args, Serialize)]
pub struct TemplatesArgs {
    /// Directory with templates.txt, gender_pairs.tsv and occupations.txt.
    #[arg(long)]
    dir: PathBuf,
    /// Keep a seeded random sample of this many pairs.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn templates(a: TemplatesArgs) -> Result<()> {
    let spec = TemplateSpec::load(&a.dir)?;
    let mut pairs = paired_eval::generate_templates(&spec)?;
    let generated = pairs.len();
    if let Some(n) = a.sample {
        pairs = paired_eval::sample_templates(&pairs, n, a.seed)?;
    }
    let skeletons = paired_eval::to_skeletons(&pairs);
    let mut buf = String::new();
    for s in &skeletons {
        buf.push_str(&serde_json::to_string(s)?);
        buf.push('\n');
    }
    write_atomic(&a.out, buf.as_bytes())?;
    eprintln!("generated {generated} pairs, wrote {}", skeletons.len());
    Ok(())
}

#[derive(Args, Serialize)]
pub struct SubstituteNamesArgs {
    /// One sentence per line.
    #[arg(long)]
    input: PathBuf,
    /// TSV: gender, source_name, replacement_name.
    #[arg(long)]
    name_map: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn substitute_names(a: SubstituteNamesArgs) -> Result<()> {
    let text = read_text(&a.input)?;
    let lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let names = NameMap::load(&a.name_map)?;
    let out = corpus::substitute_names(&lines, &names, a.seed);
    let changed = lines.iter().zip(&out).filter(|(a, b)| a != b).count();
    let mut buf = out.join("\n");
    buf.push('\n');
    write_atomic(&a.out, buf.as_bytes())?;
    eprintln!("{changed} of {} sentences changed", lines.len());
    Ok(())
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    WordBoundary,
    Substring,
}

#[derive(Args, Serialize)]
pub struct PreservationArgs {
    #[arg(long)]
    subsets: PathBuf,
    /// Target-language female terms, one per line.
    #[arg(long)]
    female_terms: PathBuf,
    #[arg(long)]
    male_terms: PathBuf,
    #[arg(long, value_enum, default_value_t = Matching::WordBoundary)]
    matching: Matching,
    #[arg(long)]
    out: PathBuf,
}

pub fn preservation(a: PreservationArgs) -> Result<()> {
    let subsets = GenderedSubsets::load(&a.subsets)?;
    let ft = WordList::load(&a.female_terms)?;
    let mt = WordList::load(&a.male_terms)?;
    let mode = match a.matching {
        Matching::WordBoundary => MatchMode::WordBoundary,
        Matching::Substring => MatchMode::Substring,
    };
    let r = corpus::gender_preservation_rate(&subsets, &ft, &mt, mode)?;
    write_report(&a.out, "preservation", &a, &r)?;
    eprintln!(
        "preserved: female {}/{} ({:.3}), male {}/{} ({:.3})",
        r.female.preserved, r.female.total, r.female_preserved, r.male.preserved, r.male.total, r.male_preserved
    );
    Ok(())
}

#[derive(Args, Serialize)]
pub struct MetaArgs {
    /// TSV rows: model_id, method, bias_score.
    #[arg(long)]
    scores: PathBuf,
    /// Method treated as ground truth.
    #[arg(long, default_value = "HT")]
    reference: String,
    /// Methods to compare, comma-separated; default: every other method.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ModelDiff {
    model_id: String,
    reference_score: f64,
    candidate_score: f64,
    diff: f64,
}

#[derive(Serialize)]
struct Comparison {
    candidate: String,
    models: Vec<ModelDiff>,
    summary: MetaReport,
}

#[derive(Serialize)]
struct MetaResult {
    reference: String,
    comparisons: Vec<Comparison>,
}

/// `(model_id, method) -> score`, plus model and method orders of first
/// appearance.
type ScoreTable = (BTreeMap<(String, String), f64>, Vec<String>, Vec<String>);

fn read_score_table(path: &Path) -> Result<ScoreTable> {
    let text = read_text(path)?;
    let mut table = BTreeMap::new();
    let (mut models, mut methods) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            bail!("{}:{}: expected model_id<TAB>method<TAB>bias_score", path.display(), i + 1);
        }
        let value: f64 = match cols[2].parse() {
            Ok(v) => v,
            Err(_) if table.is_empty() && cols[2].eq_ignore_ascii_case("bias_score") => continue,
            Err(_) => bail!("{}:{}: bad score {:?}", path.display(), i + 1, cols[2]),
        };
        let key = (cols[0].to_owned(), cols[1].to_owned());
        if table.insert(key, value).is_some() {
            bail!("{}:{}: duplicate row for {} / {}", path.display(), i + 1, cols[0], cols[1]);
        }
        if !models.iter().any(|m| m == cols[0]) {
            models.push(cols[0].to_owned());
        }
        if !methods.iter().any(|m| m == cols[1]) {
            methods.push(cols[1].to_owned());
        }
    }
    Ok((table, models, methods))
}

pub fn meta(a: MetaArgs) -> Result<()> {
    let (table, models, methods) = read_score_table(&a.scores)?;
    if !methods.contains(&a.reference) {
        bail!("reference method {:?} not found in {}", a.reference, a.scores.display());
    }
    let candidates: Vec<String> = if a.candidates.is_empty() {
        methods.iter().filter(|m| **m != a.reference).cloned().collect()
    } else {
        a.candidates.clone()
    };
    let mut comparisons = Vec::new();
    for cand in &candidates {
        let mut rows = Vec::new();
        for model in &models {
            let r = table.get(&(model.clone(), a.reference.clone()));
            let c = table.get(&(model.clone(), cand.clone()));
            match (r, c) {
                (Some(&r), Some(&c)) => rows.push(ModelDiff {
                    model_id: model.clone(),
                    reference_score: r,
                    candidate_score: c,
                    diff: c - r,
                }),
                (None, None) => {}
                _ => bail!("model {model:?} has a score for only one of {:?} and {cand:?}", a.reference),
            }
        }
        if rows.is_empty() {
            bail!("no models scored by both {:?} and {cand:?}", a.reference);
        }
        let reference: Vec<f64> = rows.iter().map(|m| m.reference_score).collect();
        let candidate: Vec<f64> = rows.iter().map(|m| m.candidate_score).collect();
        let summary = MetaReport::compute(&reference, &candidate)?;
        eprintln!("{cand} vs {}:", a.reference);
        for m in &rows {
            eprintln!("  {:<28} {:>7.2} {:>7.2} {:>+7.2}", m.model_id, m.reference_score, m.candidate_score, m.diff);
        }
        eprintln!(
            "  direction {:.3}  diff signed {:+.2} abs {:.2}",
            summary.direction_agreement, summary.diff_signed_mean, summary.diff_abs_mean
        );
        comparisons.push(Comparison { candidate: cand.clone(), models: rows, summary });
    }
    write_report(&a.out, "meta", &a, &MetaResult { reference: a.reference.clone(), comparisons })
}

#[derive(Args, Serialize)]
pub struct McnemarArgs {
    /// One 0/1 indicator per line.
    #[arg(long, conflicts_with = "table", required_unless_present = "table")]
    indicators: Option<PathBuf>,
    /// Precomputed table `b,c,both,neither`.
    #[arg(long, value_delimiter = ',')]
    table: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    continuity_correction: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn mcnemar(a: McnemarArgs) -> Result<()> {
    let result = if let Some(t) = &a.table {
        let [b, c, both, neither] = t[..] else {
            return usage("--table takes four counts: b,c,both,neither");
        };
        McNemarTally::from_counts(b, c, both, neither).test(a.continuity_correction)
    } else {
        let path = a.indicators.as_ref().expect("clap requires one source");
        let text = read_text(path)?;
        let mut indicators = Vec::new();
        for (i, line) in text.lines().enumerate() {
            match line.trim() {
                "" => {}
                "1" => indicators.push(true),
                "0" => indicators.push(false),
                other => bail!("{}:{}: expected 0 or 1, found {other:?}", path.display(), i + 1),
            }
        }
        stats::mcnemar_vs_random(indicators, a.seed, a.continuity_correction)?
    };
    write_report(&a.out, "mcnemar", &a, &result)?;
    eprintln!(
        "b={} c={} chi2={:.4} p={:.5} {}",
        result.b,
        result.c,
        result.statistic,
        result.p_value,
        if result.significant { "significant" } else { "not significant" }
    );
    Ok(())
}
