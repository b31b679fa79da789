//! JSON operator specs.
//!
//! ```json
//! {"type": "ncfb", "lambda": [2, 2.9, 3.7], "n": 3,
//!  "couplings": [{"from": 1, "to": 3, "series": [0, 1]}],
//!  "truncation": 512}
//! ```
//!
//! Series coefficients are numbers or `[re, im]` pairs. An optional
//! `"conjugation": "unitary" | "rank_one"` (with `"seed"`, and
//! `"conjugation_window"`, `"conjugation_norm"`) replaces the flag `A` by
//! `S A S^{-1}` for seeded block-diagonal windows `S`.

use std::path::Path;

use cdlab_core::flag::{build_ncfb, BlockFlag, ConjugatedFlag, FlagOperator, FlagSpec, WindowConjugation};
use cdlab_core::series::CouplingSeries;
use num_complex::Complex64;
use serde_json::{json, Map, Value};

use crate::error::{CliError, CliResult};

pub const DEFAULT_TRUNCATION: usize = 512;
pub const DEFAULT_WINDOW: usize = 6;
pub const DEFAULT_RANK_ONE_NORM: f64 = 0.2;

const KEYS: &[&str] = &[
    "type",
    "lambda",
    "n",
    "couplings",
    "truncation",
    "seed",
    "conjugation",
    "conjugation_window",
    "conjugation_norm",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    Bergman,
    Ncfb,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConjugationSpec {
    Unitary { window: usize },
    RankOne { window: usize, norm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSpec {
    pub kind: SpecKind,
    pub flag: FlagSpec,
    pub seed: Option<u64>,
    pub conjugation: Option<ConjugationSpec>,
}

/// A built spec: the plain flag or its windowed conjugate.
pub enum BuiltFlag {
    Plain(FlagOperator),
    Conjugated(ConjugatedFlag),
}

impl BuiltFlag {
    pub fn as_block_flag(&self) -> &dyn BlockFlag {
        match self {
            BuiltFlag::Plain(f) => f,
            BuiltFlag::Conjugated(f) => f,
        }
    }

    pub fn plain(&self) -> CliResult<&FlagOperator> {
        match self {
            BuiltFlag::Plain(f) => Ok(f),
            BuiltFlag::Conjugated(_) => Err(CliError::field(
                "conjugation",
                "this command needs an unconjugated flag",
            )),
        }
    }

    pub fn conjugation(&self) -> Option<&WindowConjugation> {
        match self {
            BuiltFlag::Plain(_) => None,
            BuiltFlag::Conjugated(f) => Some(f.conjugation()),
        }
    }

    pub fn dense(&self) -> nalgebra::DMatrix<Complex64> {
        match self {
            BuiltFlag::Plain(f) => f.to_operator().into_entries(),
            BuiltFlag::Conjugated(f) => f.to_operator().into_entries(),
        }
    }
}

pub fn load_spec(path: &Path) -> CliResult<LoadedSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::field("spec", format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::field("spec", format!("{} is not valid JSON: {e}", path.display())))?;
    parse_spec(&value)
}

fn bad(field: &str, msg: impl Into<String>) -> CliError {
    CliError::field(field, msg)
}

fn as_count(v: &Value, field: &str) -> CliResult<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| bad(field, "expected a non-negative integer"))
}

fn as_real(v: &Value, field: &str) -> CliResult<f64> {
    v.as_f64().ok_or_else(|| bad(field, "expected a number"))
}

fn parse_coefficient(v: &Value) -> CliResult<Complex64> {
    if let Some(x) = v.as_f64() {
        return Ok(Complex64::new(x, 0.0));
    }
    match v.as_array().map(Vec::as_slice) {
        Some([re, im]) => Ok(Complex64::new(
            as_real(re, "couplings.series")?,
            as_real(im, "couplings.series")?,
        )),
        _ => Err(bad("couplings.series", "coefficients are numbers or [re, im] pairs")),
    }
}

pub fn parse_spec(value: &Value) -> CliResult<LoadedSpec> {
    let obj = value
        .as_object()
        .ok_or_else(|| bad("spec", "top level must be a JSON object"))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(bad(k, format!("unknown key `{k}`")));
    }
    let kind = match obj.get("type").and_then(Value::as_str) {
        Some("bergman") => SpecKind::Bergman,
        Some("ncfb") => SpecKind::Ncfb,
        Some(other) => return Err(bad("type", format!("unknown type `{other}`"))),
        None => return Err(bad("type", "missing `type` (\"bergman\" or \"ncfb\")")),
    };
    let lambda = obj.get("lambda").ok_or_else(|| bad("lambda", "missing `lambda`"))?;
    let lambdas: Vec<f64> = match (kind, lambda) {
        (SpecKind::Bergman, Value::Number(_)) => vec![as_real(lambda, "lambda")?],
        (SpecKind::Bergman, _) => return Err(bad("lambda", "bergman specs take a single number")),
        (SpecKind::Ncfb, Value::Array(a)) => a.iter().map(|x| as_real(x, "lambda")).collect::<CliResult<_>>()?,
        (SpecKind::Ncfb, Value::Number(_)) => vec![as_real(lambda, "lambda")?],
        _ => return Err(bad("lambda", "expected a number or an array of numbers")),
    };
    if let Some(n) = obj.get("n") {
        let n = as_count(n, "n")?;
        if n != lambdas.len() {
            return Err(bad("n", format!("n = {n} but {} lambda values given", lambdas.len())));
        }
    }
    let truncation = match obj.get("truncation") {
        Some(t) => as_count(t, "truncation")?,
        None => DEFAULT_TRUNCATION,
    };
    let mut flag = FlagSpec::new(lambdas, truncation)?;
    if let Some(c) = obj.get("couplings") {
        if kind == SpecKind::Bergman {
            return Err(bad("couplings", "bergman specs have no couplings"));
        }
        let list = c.as_array().ok_or_else(|| bad("couplings", "expected an array"))?;
        for entry in list {
            let e = entry
                .as_object()
                .ok_or_else(|| bad("couplings", "entries are {\"from\", \"to\", \"series\"} objects"))?;
            if let Some(k) = e.keys().find(|k| !["from", "to", "series"].contains(&k.as_str())) {
                return Err(bad("couplings", format!("unknown key `{k}`")));
            }
            let from = as_count(e.get("from").ok_or_else(|| bad("couplings.from", "missing"))?, "couplings.from")?;
            let to = as_count(e.get("to").ok_or_else(|| bad("couplings.to", "missing"))?, "couplings.to")?;
            if from == 0 || to == 0 {
                return Err(bad("couplings", "levels are 1-based"));
            }
            let coeffs = e
                .get("series")
                .and_then(Value::as_array)
                .ok_or_else(|| bad("couplings.series", "expected an array"))?
                .iter()
                .map(parse_coefficient)
                .collect::<CliResult<Vec<_>>>()?;
            if flag.explicit_couplings().contains_key(&(from - 1, to - 1)) {
                return Err(bad("couplings", format!("coupling ({from}, {to}) given twice")));
            }
            flag = flag.with_coupling(from - 1, to - 1, CouplingSeries::new(coeffs)?)?;
        }
    }
    let seed = match obj.get("seed") {
        Some(s) => Some(s.as_u64().ok_or_else(|| bad("seed", "expected a non-negative integer"))?),
        None => None,
    };
    let window = match obj.get("conjugation_window") {
        Some(w) => Some(as_count(w, "conjugation_window")?),
        None => None,
    };
    let norm = match obj.get("conjugation_norm") {
        Some(x) => Some(as_real(x, "conjugation_norm")?),
        None => None,
    };
    let conjugation = match obj.get("conjugation") {
        None => {
            if window.is_some() || norm.is_some() {
                return Err(bad("conjugation", "conjugation parameters without `conjugation`"));
            }
            None
        }
        Some(c) => {
            if seed.is_none() {
                return Err(bad("seed", "randomized conjugation requires an explicit seed"));
            }
            let window = window.unwrap_or(DEFAULT_WINDOW);
            if window < 2 || window > truncation {
                return Err(bad("conjugation_window", format!("window must lie in [2, {truncation}]")));
            }
            match c.as_str() {
                Some("unitary") => {
                    if norm.is_some() {
                        return Err(bad("conjugation_norm", "only rank_one conjugations take a norm"));
                    }
                    Some(ConjugationSpec::Unitary { window })
                }
                Some("rank_one") => {
                    let norm = norm.unwrap_or(DEFAULT_RANK_ONE_NORM);
                    if !(norm >= 0.0 && norm < 1.0) {
                        return Err(bad("conjugation_norm", "norm must lie in [0, 1)"));
                    }
                    Some(ConjugationSpec::RankOne { window, norm })
                }
                _ => return Err(bad("conjugation", "expected \"unitary\" or \"rank_one\"")),
            }
        }
    };
    Ok(LoadedSpec {
        kind,
        flag,
        seed,
        conjugation,
    })
}

fn series_json(s: &CouplingSeries) -> Value {
    Value::Array(s.coeffs().iter().map(|c| json!([c.re, c.im])).collect())
}

impl LoadedSpec {
    pub fn n(&self) -> usize {
        self.flag.n()
    }

    /// Fully defaulted spec document; parsing it gives back `self`.
    pub fn canonical(&self) -> Value {
        let mut m = Map::new();
        let lambdas = self.flag.lambdas();
        match self.kind {
            SpecKind::Bergman => {
                m.insert("type".into(), json!("bergman"));
                m.insert("lambda".into(), json!(lambdas[0]));
            }
            SpecKind::Ncfb => {
                m.insert("type".into(), json!("ncfb"));
                m.insert("lambda".into(), json!(lambdas));
                m.insert("n".into(), json!(self.flag.n()));
                let couplings: Vec<Value> = self
                    .flag
                    .explicit_couplings()
                    .iter()
                    .map(|((k, j), s)| json!({"from": k + 1, "to": j + 1, "series": series_json(s)}))
                    .collect();
                m.insert("couplings".into(), Value::Array(couplings));
            }
        }
        m.insert("truncation".into(), json!(self.flag.dim_per_block()));
        if let Some(seed) = self.seed {
            m.insert("seed".into(), json!(seed));
        }
        match &self.conjugation {
            Some(ConjugationSpec::Unitary { window }) => {
                m.insert("conjugation".into(), json!("unitary"));
                m.insert("conjugation_window".into(), json!(window));
            }
            Some(ConjugationSpec::RankOne { window, norm }) => {
                m.insert("conjugation".into(), json!("rank_one"));
                m.insert("conjugation_window".into(), json!(window));
                m.insert("conjugation_norm".into(), json!(norm));
            }
            None => {}
        }
        Value::Object(m)
    }

    pub fn build(&self) -> CliResult<BuiltFlag> {
        let base = build_ncfb(&self.flag)?;
        let n = self.flag.n();
        // `conjugation` always carries a seed after parsing.
        let seed = self.seed.unwrap_or(0);
        let conj = match &self.conjugation {
            None => return Ok(BuiltFlag::Plain(base)),
            Some(ConjugationSpec::Unitary { window }) => WindowConjugation::random_unitary(n, *window, seed)?,
            Some(ConjugationSpec::RankOne { window, norm }) => {
                WindowConjugation::random_rank_one(n, *window, *norm, seed)?
            }
        };
        Ok(BuiltFlag::Conjugated(ConjugatedFlag::new(base, conj)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bergman_defaults() {
        let s = parse_spec(&json!({"type": "bergman", "lambda": 2})).unwrap();
        assert_eq!(s.kind, SpecKind::Bergman);
        assert_eq!(s.flag.lambdas(), &[2.0]);
        assert_eq!(s.flag.dim_per_block(), DEFAULT_TRUNCATION);
    }

    #[test]
    fn gap_violation_carries_citation() {
        let e = parse_spec(&json!({"type": "ncfb", "n": 2, "lambda": [2, 4.5]})).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("lambda"));
        assert_eq!(e.citation.as_deref(), Some(cdlab_core::flag::GAP_CITATION));
    }

    #[test]
    fn canonical_round_trip() {
        let s = parse_spec(&json!({
            "type": "ncfb", "lambda": [2, 2.9, 3.7], "truncation": 16,
            "couplings": [{"from": 1, "to": 3, "series": [0, [1, 0.5]]}],
            "conjugation": "rank_one", "seed": 4
        }))
        .unwrap();
        let again = parse_spec(&s.canonical()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.build().unwrap().dense(), again.build().unwrap().dense());
    }

    #[test]
    fn conjugation_needs_seed() {
        let e = parse_spec(&json!({"type": "bergman", "lambda": 2, "conjugation": "unitary"})).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("seed"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_spec(&json!({"type": "bergman", "lambda": 2, "lambdas": 3})).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("lambdas"));
    }
}
