use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Duration;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use dypol_core::bench::{self, DatasetProfile, Testbed};
use dypol_core::io::{parse_policy, parse_request, parse_update_event, serialize_response};
use dypol_core::pap::PapSnapshot;
use dypol_core::space::{check_equivalence, derive_domains, Encoding, DEFAULT_ENUMERATION_BOUND};
use dypol_core::update::{EngineConfig, EngineMode, ObligationOutcome, ObligationService, UpdateEngine};
use dypol_core::{evaluate_pap, AttributeValue, CombiningAlgorithm, Decision, EvalOptions, Obligation};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn snapshot(policies: Vec<String>) -> PyResult<PapSnapshot> {
    let trees = policies
        .iter()
        .map(|x| parse_policy(x.as_bytes()).map(|d| d.root))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_error)?;
    PapSnapshot::new(trees).map_err(value_error)
}

/// Evaluates a JSON request against XML policies; returns the response JSON.
#[pyfunction]
fn evaluate(policies: Vec<String>, request: &str) -> PyResult<String> {
    let pap = snapshot(policies)?;
    let req = parse_request(request.as_bytes()).map_err(value_error)?;
    let ev = evaluate_pap(&req, pap.trees(), &EvalOptions::default()).map_err(value_error)?;
    Ok(serialize_response(&ev.response()))
}

/// Evaluates the request against the store saved in `dir`.
#[pyfunction]
fn evaluate_dir(dir: PathBuf, request: &str) -> PyResult<String> {
    let pap = PapSnapshot::load(&dir).map_err(value_error)?;
    let req = parse_request(request.as_bytes()).map_err(value_error)?;
    let ev = evaluate_pap(&req, pap.trees(), &EvalOptions::default()).map_err(value_error)?;
    Ok(serialize_response(&ev.response()))
}

/// Folds `decisions` with the named combining algorithm.
#[pyfunction]
fn combine(algorithm: &str, decisions: Vec<String>) -> PyResult<String> {
    let alg = CombiningAlgorithm::from_name(algorithm)
        .ok_or_else(|| value_error(format!("unknown algorithm {algorithm}")))?;
    let ds = decisions
        .iter()
        .map(|d| Decision::from_name(d).ok_or_else(|| value_error(format!("unknown decision {d}"))))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(dypol_core::eval::combine(alg, &ds).name().to_string())
}

/// Checks a policy's decision space against direct evaluation over the
/// literals it mentions. Returns the number of requests checked.
#[pyfunction]
fn verify(policy: &str) -> PyResult<u64> {
    let node = parse_policy(policy.as_bytes()).map_err(value_error)?.root;
    let enc = Encoding::of_node(&node).map_err(value_error)?;
    let report =
        check_equivalence(&enc, &node, &derive_domains([&node]), DEFAULT_ENUMERATION_BOUND).map_err(value_error)?;
    match report.mismatch {
        None => Ok(report.requests),
        Some(m) => Err(value_error(format!(
            "counterexample: direct {:?}, space {:?}",
            m.direct, m.space
        ))),
    }
}

/// Runs one testbed on a built-in profile; returns the CSV report.
#[pyfunction]
#[pyo3(signature = (profile, testbed, updates=10, seed=0, sessions=200))]
fn run_bench(profile: &str, testbed: &str, updates: usize, seed: u64, sessions: usize) -> PyResult<String> {
    let p = DatasetProfile::by_name(profile).ok_or_else(|| value_error(format!("unknown profile {profile}")))?;
    let t = Testbed::from_name(testbed).map_err(value_error)?;
    let d = bench::generate(&p, seed).map_err(value_error)?;
    let cfg = bench::BenchConfig {
        sessions,
        ..bench::BenchConfig::default()
    };
    let (inc, base) = bench::run_testbed(t, &d, updates, seed, &cfg).map_err(value_error)?;
    Ok(bench::report(&[inc, base]))
}

/// Attribute answers given as lexical strings; unknown attributes time out.
struct Answers(BTreeMap<String, String>);

impl ObligationService for Answers {
    fn fulfil(&mut self, _: &str, obligations: &[Obligation], _: Duration) -> ObligationOutcome {
        let mut out = BTreeMap::new();
        for o in obligations {
            match self.0.get(&o.attribute_id).and_then(|s| AttributeValue::parse(o.data_type, s)) {
                Some(v) => out.insert(o.attribute_id.clone(), v),
                None => return ObligationOutcome::TimedOut,
            };
        }
        ObligationOutcome::Provided(out)
    }
}

/// Granted sessions kept up to date as the policy store changes.
#[pyclass]
struct Engine {
    inner: UpdateEngine<Answers>,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (policies, answers=None, baseline=false))]
    fn new(policies: Vec<String>, answers: Option<HashMap<String, String>>, baseline: bool) -> PyResult<Self> {
        let config = EngineConfig {
            mode: if baseline { EngineMode::Baseline } else { EngineMode::Incremental },
            ..EngineConfig::default()
        };
        let answers = Answers(answers.unwrap_or_default().into_iter().collect());
        Ok(Engine {
            inner: UpdateEngine::new(snapshot(policies)?, answers, config),
        })
    }

    fn open_session(&mut self, id: &str, request: &str) -> PyResult<String> {
        let req = parse_request(request.as_bytes()).map_err(value_error)?;
        let resp = self.inner.open_session(id, req).map_err(value_error)?;
        Ok(serialize_response(&resp))
    }

    /// Applies one NDJSON update event and returns its audit line.
    fn apply_event(&mut self, event: &str) -> PyResult<String> {
        let event = parse_update_event(event).map_err(value_error)?;
        let report = self.inner.apply_event(&event).map_err(value_error)?;
        Ok(report.audit_line())
    }

    fn response(&self, id: &str) -> PyResult<String> {
        let s = self.inner.session(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        Ok(serialize_response(&s.response()))
    }

    /// Step counters of the session's last workflow, in the order parse,
    /// load, evaluate, filter, rewrite.
    fn counters(&self, id: &str) -> PyResult<(u64, u64, u64, u64, u64)> {
        let s = self.inner.session(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        let [a, b, c, d, e] = s.counters.as_tuple();
        Ok((a, b, c, d, e))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pymodule]
fn pydypol(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_dir, m)?)?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_class::<Engine>()?;
    Ok(())
}
