//! Corpus evaluation: ground truth loading, per-sample scoring and
//! report aggregation.
//!
//! Counting rules: URL accuracy is micro-averaged over all truth URLs,
//! domain accuracy over per-sample unique truth domains, and
//! hallucinated domains form a multiset across samples (a domain
//! hallucinated in five samples counts five times).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{
    extraction_from_llm_urls, url_to_domain, validate_url, ExtractionResult, Provenance,
};
use crate::llm::{self, LlmAnswer, LlmClient};
use crate::pipeline;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("truth format error at line {line}: {message}")]
    TruthFormatError { line: usize, message: String },
    #[error("duplicate sample id `{id}` at line {line}")]
    DuplicateSampleId { id: String, line: usize },
    #[error("corpus contains no samples")]
    EmptyCorpus,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One authoritative corpus entry: which URLs a sample must yield.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub sample_id: String,
    pub script_path: String,
    pub urls: Vec<String>,
}

/// Load JSON-lines ground truth: one `{sample_id, script_path, urls}`
/// object per line. URLs are validated and normalized on load.
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthEntry>, HarnessError> {
    let data = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in data.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut entry: GroundTruthEntry =
            serde_json::from_str(line).map_err(|e| HarnessError::TruthFormatError {
                line: line_no,
                message: e.to_string(),
            })?;
        if entry.urls.is_empty() {
            return Err(HarnessError::TruthFormatError {
                line: line_no,
                message: "urls must be non-empty".into(),
            });
        }
        for url in &mut entry.urls {
            *url = validate_url(url).ok_or_else(|| HarnessError::TruthFormatError {
                line: line_no,
                message: format!("invalid url `{url}`"),
            })?;
        }
        if seen_ids.contains_key(&entry.sample_id) {
            return Err(HarnessError::DuplicateSampleId {
                id: entry.sample_id,
                line: line_no,
            });
        }
        seen_ids.insert(entry.sample_id.clone(), line_no);
        entries.push(entry);
    }
    Ok(entries)
}

/// Matching options for scoring.
#[derive(Debug, Clone, Copy, Default)]
pub struct MatchOptions {
    /// Strip trailing slashes before comparing URLs.
    pub lenient: bool,
    /// Fold a leading `www.` when comparing domains.
    pub fold_www: bool,
}

fn url_key(url: &str, opts: MatchOptions) -> String {
    if opts.lenient {
        url.trim_end_matches('/').to_string()
    } else {
        url.to_string()
    }
}

fn domain_key(domain: &str, opts: MatchOptions) -> String {
    if opts.fold_www {
        domain.strip_prefix("www.").unwrap_or(domain).to_string()
    } else {
        domain.to_string()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerSampleScore {
    pub sample_id: String,
    pub extracted: ExtractionResult,
    pub true_positive_urls: Vec<String>,
    pub missed_urls: Vec<String>,
    pub true_positive_domains: Vec<String>,
    pub hallucinated_domains: Vec<String>,
    pub truth_url_count: usize,
    pub truth_domain_count: usize,
    pub refused: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Score one sample: exact normalized equality for URLs, exact host
/// equality for domains; extracted domains absent from the truth are
/// hallucinations.
pub fn score_sample(
    extracted: &ExtractionResult,
    truth: &GroundTruthEntry,
    opts: MatchOptions,
) -> PerSampleScore {
    let truth_url_keys: Vec<String> = truth.urls.iter().map(|u| url_key(u, opts)).collect();
    let extracted_url_keys: Vec<String> =
        extracted.urls.iter().map(|u| url_key(u, opts)).collect();

    let mut true_positive_urls = Vec::new();
    let mut missed_urls = Vec::new();
    for (truth_url, key) in truth.urls.iter().zip(&truth_url_keys) {
        if extracted_url_keys.contains(key) {
            true_positive_urls.push(truth_url.clone());
        } else {
            missed_urls.push(truth_url.clone());
        }
    }

    let mut truth_domains: Vec<String> = Vec::new();
    for url in &truth.urls {
        let d = domain_key(&url_to_domain(url), opts);
        if !truth_domains.contains(&d) {
            truth_domains.push(d);
        }
    }
    let mut extracted_domains: Vec<String> = Vec::new();
    for d in &extracted.domains {
        let key = domain_key(d, opts);
        if !extracted_domains.contains(&key) {
            extracted_domains.push(key);
        }
    }
    let mut true_positive_domains = Vec::new();
    let mut hallucinated_domains = Vec::new();
    for d in &extracted_domains {
        if truth_domains.contains(d) {
            true_positive_domains.push(d.clone());
        } else {
            hallucinated_domains.push(d.clone());
        }
    }

    PerSampleScore {
        sample_id: truth.sample_id.clone(),
        extracted: extracted.clone(),
        true_positive_urls,
        missed_urls,
        true_positive_domains,
        hallucinated_domains,
        truth_url_count: truth.urls.len(),
        truth_domain_count: truth_domains.len(),
        refused: false,
        error: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Micro-averaged: correctly extracted URLs over all truth URLs.
    pub url_accuracy: f64,
    /// Micro-averaged over per-sample unique truth domains.
    pub domain_accuracy: f64,
    /// Multiset cardinality across samples.
    pub hallucinated_domain_count: usize,
    /// Hallucinated domains by count, descending, ties lexicographic.
    pub top_hallucinated: Vec<(String, usize)>,
    pub refusal_count: usize,
    pub sample_count: usize,
    /// Per-sample macro averages, for comparison with the micro figures.
    pub macro_url_accuracy: f64,
    pub macro_domain_accuracy: f64,
    pub per_sample: Vec<PerSampleScore>,
}

/// Exact rational accuracy as numerator/denominator before the lossy
/// float division; keeps the metric self-check bit-exact.
pub fn exact_fraction(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        return 0.0;
    }
    numerator as f64 / denominator as f64
}

/// Aggregate per-sample scores into a corpus report.
pub fn aggregate(scores: Vec<PerSampleScore>) -> Result<EvalReport, HarnessError> {
    if scores.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    let truth_urls: usize = scores.iter().map(|s| s.truth_url_count).sum();
    let tp_urls: usize = scores.iter().map(|s| s.true_positive_urls.len()).sum();
    let truth_domains: usize = scores.iter().map(|s| s.truth_domain_count).sum();
    let tp_domains: usize = scores.iter().map(|s| s.true_positive_domains.len()).sum();

    let mut halluc_counts: BTreeMap<String, usize> = BTreeMap::new();
    for score in &scores {
        for d in &score.hallucinated_domains {
            *halluc_counts.entry(d.clone()).or_insert(0) += 1;
        }
    }
    let hallucinated_domain_count: usize = halluc_counts.values().sum();
    let mut top_hallucinated: Vec<(String, usize)> = halluc_counts.into_iter().collect();
    top_hallucinated.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top_hallucinated.truncate(20);

    let refusal_count = scores.iter().filter(|s| s.refused).count();
    let macro_url_accuracy = scores
        .iter()
        .map(|s| exact_fraction(s.true_positive_urls.len(), s.truth_url_count))
        .sum::<f64>()
        / scores.len() as f64;
    let macro_domain_accuracy = scores
        .iter()
        .map(|s| exact_fraction(s.true_positive_domains.len(), s.truth_domain_count))
        .sum::<f64>()
        / scores.len() as f64;

    Ok(EvalReport {
        url_accuracy: exact_fraction(tp_urls, truth_urls),
        domain_accuracy: exact_fraction(tp_domains, truth_domains),
        hallucinated_domain_count,
        top_hallucinated,
        refusal_count,
        sample_count: scores.len(),
        macro_url_accuracy,
        macro_domain_accuracy,
        per_sample: scores,
    })
}

/// Which extraction engine a corpus run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Static,
    Llm,
    StaticThenLlm,
}

impl EngineKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_lowercase().as_str() {
            "static" => Some(EngineKind::Static),
            "llm" => Some(EngineKind::Llm),
            "static-then-llm" => Some(EngineKind::StaticThenLlm),
            _ => None,
        }
    }
}

pub struct RunOptions {
    pub engine: EngineKind,
    pub match_options: MatchOptions,
    pub jobs: usize,
    pub prompt_style: llm::PromptStyle,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            engine: EngineKind::Static,
            match_options: MatchOptions::default(),
            jobs: 1,
            prompt_style: llm::PromptStyle::SystemUser,
        }
    }
}

/// Result of extracting one sample under a configured engine.
struct SampleOutcome {
    extraction: ExtractionResult,
    refused: bool,
    error: Option<String>,
}

fn extract_one(
    corpus_dir: &Path,
    entry: &GroundTruthEntry,
    options: &RunOptions,
    client: Option<&LlmClient>,
) -> SampleOutcome {
    let path = corpus_dir.join(&entry.script_path);
    let raw = match std::fs::read(&path) {
        Ok(raw) => raw,
        Err(e) => {
            return SampleOutcome {
                extraction: ExtractionResult::empty(Provenance::Static),
                refused: false,
                error: Some(format!("read {}: {e}", path.display())),
            }
        }
    };
    // decode in every mode: the model receives the decoded (still
    // obfuscated) script, never raw base64
    let decoded = crate::lexer::decode_input(&raw)
        .map(|s| s.decoded)
        .ok();
    let static_pass = match options.engine {
        EngineKind::Llm => None,
        _ => Some(pipeline::deobfuscate_source(&raw)),
    };
    let (static_extraction, static_err) = match static_pass {
        Some(Ok(output)) => (Some(output.extraction), None),
        Some(Err(e)) => (None, Some(e.to_string())),
        None => (None, None),
    };

    let needs_llm = match options.engine {
        EngineKind::Static => false,
        EngineKind::Llm => true,
        EngineKind::StaticThenLlm => static_extraction
            .as_ref()
            .map(|e| e.urls.is_empty())
            .unwrap_or(true),
    };

    if !needs_llm {
        return SampleOutcome {
            extraction: static_extraction.unwrap_or_else(|| {
                ExtractionResult::empty(Provenance::Static)
            }),
            refused: false,
            error: static_err,
        };
    }

    let Some(client) = client else {
        return SampleOutcome {
            extraction: static_extraction
                .unwrap_or_else(|| ExtractionResult::empty(Provenance::Static)),
            refused: false,
            error: Some("llm engine requested but no client configured".into()),
        };
    };

    let code = decoded.unwrap_or_else(|| String::from_utf8_lossy(&raw).into_owned());
    match llm::deobfuscate_via_llm(client, &code, options.prompt_style) {
        Ok(LlmAnswer::UrlList(urls)) => {
            let mut extraction = extraction_from_llm_urls(&urls);
            if let Some(static_extraction) = static_extraction {
                if !static_extraction.urls.is_empty() {
                    extraction = merge_extractions(static_extraction, extraction);
                }
            }
            SampleOutcome {
                extraction,
                refused: false,
                error: None,
            }
        }
        Ok(LlmAnswer::Refusal(_)) => SampleOutcome {
            extraction: static_extraction
                .unwrap_or_else(|| ExtractionResult::empty(Provenance::Llm)),
            refused: true,
            error: None,
        },
        Ok(LlmAnswer::LongestString(kk)) => {
            let mut extraction = static_extraction
                .unwrap_or_else(|| ExtractionResult::empty(Provenance::Llm));
            extraction.longest_string.get_or_insert(kk);
            SampleOutcome {
                extraction,
                refused: false,
                error: None,
            }
        }
        Ok(LlmAnswer::Malformed) | Ok(LlmAnswer::Cti(_)) => SampleOutcome {
            extraction: static_extraction
                .unwrap_or_else(|| ExtractionResult::empty(Provenance::Llm)),
            refused: false,
            error: None,
        },
        Err(e) => SampleOutcome {
            extraction: static_extraction
                .unwrap_or_else(|| ExtractionResult::empty(Provenance::Llm)),
            refused: false,
            error: Some(e.to_string()),
        },
    }
}

fn merge_extractions(
    static_extraction: ExtractionResult,
    llm_extraction: ExtractionResult,
) -> ExtractionResult {
    let mut merged = ExtractionResult::from_candidates(
        static_extraction
            .urls
            .iter()
            .chain(llm_extraction.urls.iter()),
        Provenance::Merged,
    );
    merged.longest_string = static_extraction
        .longest_string
        .or(llm_extraction.longest_string);
    merged
}

/// Run the full corpus: decode → strip → tokenize → parse → run →
/// extract per sample, score against truth, aggregate. Per-sample I/O
/// failures are folded into the report instead of aborting the run.
pub fn run_corpus(
    corpus_dir: &Path,
    truth_path: &Path,
    options: &RunOptions,
    client: Option<&LlmClient>,
) -> Result<EvalReport, HarnessError> {
    let truth = load_ground_truth(truth_path)?;
    if truth.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    let jobs = options.jobs.max(1);
    let mut scores: Vec<Option<PerSampleScore>> = Vec::new();
    scores.resize_with(truth.len(), || None);

    if jobs == 1 {
        for (i, entry) in truth.iter().enumerate() {
            let outcome = extract_one(corpus_dir, entry, options, client);
            let mut score = score_sample(&outcome.extraction, entry, options.match_options);
            score.refused = outcome.refused;
            score.error = outcome.error;
            scores[i] = Some(score);
        }
    } else {
        let next = AtomicU64::new(0);
        let results: Mutex<&mut Vec<Option<PerSampleScore>>> = Mutex::new(&mut scores);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst) as usize;
                    if i >= truth.len() {
                        break;
                    }
                    let entry = &truth[i];
                    let outcome = extract_one(corpus_dir, entry, options, client);
                    let mut score =
                        score_sample(&outcome.extraction, entry, options.match_options);
                    score.refused = outcome.refused;
                    score.error = outcome.error;
                    results.lock().expect("poisoned")[i] = Some(score);
                });
            }
        });
    }

    aggregate(scores.into_iter().map(|s| s.expect("scored")).collect())
}
