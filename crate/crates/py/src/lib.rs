//! Python bindings for the dropper deobfuscation engine, so the
//! document-analysis pipelines that already live in Python can call the
//! static chain in-process.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use psdeob_core::cti;
use psdeob_core::extract;
use psdeob_core::pipeline;
use psdeob_core::synth::{generate_synthetic_sample, Techniques};

fn run_static(data: &[u8]) -> PyResult<pipeline::PipelineOutput> {
    pipeline::deobfuscate_source(data).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Deobfuscate a script (raw or base64 bytes) and return a dict with
/// the rendered script, URLs, domains and the fallback payload.
#[pyfunction]
fn deobfuscate<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let output = run_static(data)?;
    let dict = PyDict::new(py);
    dict.set_item("rendered", &output.deob.rendered)?;
    dict.set_item("urls", &output.extraction.urls)?;
    dict.set_item("domains", &output.extraction.domains)?;
    dict.set_item("longest_string", &output.extraction.longest_string)?;
    dict.set_item("read_of_unbound", output.deob.folded_env.read_of_unbound)?;
    dict.set_item("transforms", output.deob.folded_env.transforms)?;
    Ok(dict)
}

/// Extract normalized URLs from a script.
#[pyfunction]
fn extract_urls<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyList>> {
    let output = run_static(data)?;
    PyList::new(py, &output.extraction.urls)
}

/// Validate and normalize one URL candidate; returns None on reject.
#[pyfunction]
fn validate_url(candidate: &str) -> Option<String> {
    extract::validate_url(candidate)
}

/// Host component of a normalized URL, port stripped.
#[pyfunction]
fn url_to_domain(url: &str) -> String {
    extract::url_to_domain(url)
}

/// Rule-table CTI report for a script, as a JSON string matching the
/// CLI's `cti` output.
#[pyfunction]
fn cti_report(data: &[u8]) -> PyResult<String> {
    let output = run_static(data)?;
    let report = cti::cti_heuristic(&output.deob);
    serde_json::to_string_pretty(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Generate one synthetic obfuscated sample embedding `urls`.
/// Returns `(script_text, sample_id)`; deterministic under `seed`.
#[pyfunction]
#[pyo3(signature = (urls, seed, techniques = "all"))]
fn synthesize(urls: Vec<String>, seed: u64, techniques: &str) -> PyResult<(String, String)> {
    let techniques = Techniques::from_csv(techniques).map_err(PyValueError::new_err)?;
    if urls.is_empty() {
        return Err(PyValueError::new_err("urls must be non-empty"));
    }
    for url in &urls {
        if extract::validate_url(url).as_deref() != Some(url.as_str()) {
            return Err(PyValueError::new_err(format!(
                "url must be normalized and valid: {url}"
            )));
        }
        if url.contains(['@', '*']) {
            return Err(PyValueError::new_err(format!(
                "url must not contain separator characters: {url}"
            )));
        }
    }
    let (script, entry) = generate_synthetic_sample(&urls, seed, techniques);
    Ok((script, entry.sample_id))
}

#[pymodule]
fn psdeob_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(deobfuscate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_urls, m)?)?;
    m.add_function(wrap_pyfunction!(validate_url, m)?)?;
    m.add_function(wrap_pyfunction!(url_to_domain, m)?)?;
    m.add_function(wrap_pyfunction!(cti_report, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
