//! URL and domain extraction from deobfuscation results.

use serde::{Deserialize, Serialize};

use crate::eval::{DeobResult, Value};

/// Which engine produced an extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Static,
    Llm,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// Ordered, deduplicated, normalized URLs.
    pub urls: Vec<String>,
    /// Unique hosts of `urls`, first-seen order.
    pub domains: Vec<String>,
    pub provenance: Provenance,
    /// Fallback payload when nothing validated as a URL: the longest
    /// folded string, spaces removed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub longest_string: Option<String>,
}

impl ExtractionResult {
    pub fn empty(provenance: Provenance) -> Self {
        ExtractionResult {
            urls: Vec::new(),
            domains: Vec::new(),
            provenance,
            longest_string: None,
        }
    }

    /// Build from candidate URL texts: validate, normalize, dedupe,
    /// derive domains.
    pub fn from_candidates<I, S>(candidates: I, provenance: Provenance) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut urls = Vec::new();
        for cand in candidates {
            if let Some(url) = validate_url(cand.as_ref()) {
                if !urls.contains(&url) {
                    urls.push(url);
                }
            }
        }
        let domains = domains_of(&urls);
        ExtractionResult {
            urls,
            domains,
            provenance,
            longest_string: None,
        }
    }
}

fn domains_of(urls: &[String]) -> Vec<String> {
    let mut domains = Vec::new();
    for url in urls {
        let d = url_to_domain(url);
        if !domains.contains(&d) {
            domains.push(d);
        }
    }
    domains
}

/// Separators the corpus uses to pack several URLs into one string.
const URL_SEPARATORS: [char; 2] = ['@', '*'];

/// Extract URLs from a deobfuscation result.
///
/// Folded text-list bindings are preferred (the dropper pattern binds
/// the split URL array to a variable); otherwise every pooled string is
/// scanned longest-first, splitting candidates on `@` and `*`. When
/// nothing validates, the longest pooled string is reported instead.
pub fn extract_urls(result: &DeobResult) -> ExtractionResult {
    let mut candidates: Vec<String> = Vec::new();
    for (_, value) in result.folded_env.iter_in_order() {
        if let Value::TextList(items) = value {
            candidates.extend(items.iter().cloned());
        }
    }
    let mut extraction = ExtractionResult::from_candidates(&candidates, Provenance::Static);
    if !extraction.urls.is_empty() {
        return extraction;
    }

    // longest-first pool scan; ties keep binding order
    let mut pool: Vec<&String> = result.string_pool.iter().collect();
    pool.sort_by_key(|s| std::cmp::Reverse(s.chars().count()));
    let mut found = Vec::new();
    for text in &pool {
        for piece in text.split(URL_SEPARATORS) {
            if validate_url(piece).is_some() {
                found.push(piece.to_string());
            }
        }
    }
    if !found.is_empty() {
        return ExtractionResult::from_candidates(&found, Provenance::Static);
    }

    if let Some(longest) = pool.first() {
        let cleaned: String = longest.chars().filter(|c| !c.is_whitespace()).collect();
        if !cleaned.is_empty() {
            extraction.longest_string = Some(cleaned);
        }
    }
    extraction
}

/// Merge an LLM answer's URL candidates into an extraction result.
pub fn extraction_from_llm_urls(urls: &[String]) -> ExtractionResult {
    ExtractionResult::from_candidates(urls.iter().map(|u| u.trim()), Provenance::Llm)
}

fn valid_dns_host(host: &str) -> bool {
    if !host.contains('.') || host.len() > 253 {
        return false;
    }
    let labels: Vec<&str> = host.split('.').collect();
    labels.iter().all(|label| {
        !label.is_empty()
            && label.len() <= 63
            && !label.starts_with('-')
            && !label.ends_with('-')
            && label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-')
    })
}

fn valid_ipv4(host: &str) -> bool {
    let octets: Vec<&str> = host.split('.').collect();
    octets.len() == 4
        && octets.iter().all(|o| {
            !o.is_empty()
                && o.len() <= 3
                && o.chars().all(|c| c.is_ascii_digit())
                && o.parse::<u32>().map(|v| v <= 255).unwrap_or(false)
        })
}

/// Accept a candidate iff it is an http/https URL with a dotted DNS
/// host or IPv4 literal. Normalization lowercases scheme and host and
/// preserves path case. Returns `None` on rejection.
pub fn validate_url(candidate: &str) -> Option<String> {
    let trimmed = candidate.trim();
    if trimmed.is_empty() || trimmed.chars().any(char::is_whitespace) {
        return None;
    }
    let scheme_end = trimmed.find("://")?;
    let scheme = trimmed[..scheme_end].to_lowercase();
    if scheme != "http" && scheme != "https" {
        return None;
    }
    let rest = &trimmed[scheme_end + 3..];
    let authority_end = rest
        .find(['/', '?', '#'])
        .unwrap_or(rest.len());
    let authority = &rest[..authority_end];
    let path = &rest[authority_end..];
    if authority.is_empty() || authority.contains('@') || authority.contains('[') {
        return None;
    }
    let (host, port) = match authority.rfind(':') {
        Some(idx) => {
            let port = &authority[idx + 1..];
            if port.is_empty() || port.len() > 5 || !port.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            (&authority[..idx], Some(port))
        }
        None => (authority, None),
    };
    let host_lower = host.to_lowercase();
    if !valid_dns_host(&host_lower) && !valid_ipv4(&host_lower) {
        return None;
    }
    let mut normalized = format!("{scheme}://{host_lower}");
    if let Some(port) = port {
        normalized.push(':');
        normalized.push_str(port);
    }
    normalized.push_str(path);
    Some(normalized)
}

/// Host component of a normalized URL, port stripped.
pub fn url_to_domain(url: &str) -> String {
    let rest = url
        .find("://")
        .map(|i| &url[i + 3..])
        .unwrap_or(url);
    let authority_end = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let authority = &rest[..authority_end];
    let host = match authority.rfind(':') {
        Some(idx) if authority[idx + 1..].chars().all(|c| c.is_ascii_digit()) => {
            &authority[..idx]
        }
        _ => authority,
    };
    host.to_lowercase()
}
