//! Model files: self-describing TOML holding a [`TrainedModel`], with every
//! real number written as a hexadecimal float string so that parameters
//! round-trip bit-exactly. Residual matrices are not stored, so a loaded
//! model can forecast but carries empty residual fields.
//!
//! Layout:
//!
//! ```toml
//! format = "gbll-model"
//! version = 1
//!
//! [model]
//! countries = ["AUS", "FRA"]
//! n_train_weeks = 208
//! # ...
//! ```
//!
//! Strings that would read as a float (or start with a backslash) are
//! escaped with a leading backslash.

use std::fs;
use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::model::{ModelBody, TrainedModel};

const FORMAT_NAME: &str = "gbll-model";
const FORMAT_VERSION: i64 = 1;

/// Formats `v` as a C99-style hexadecimal float, e.g. `0x1.8p+1` for 3.
pub fn format_hex_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let digits = format!("{mantissa:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses the output of [`format_hex_float`]. Returns `None` for anything
/// else, including values that would need rounding.
pub fn parse_hex_float(s: &str) -> Option<f64> {
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (mant, exp) = rest.split_once('p')?;
    if exp.len() < 2 || !(exp.starts_with('+') || exp.starts_with('-')) {
        return None;
    }
    if !exp[1..].bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) if !f.is_empty() => (l, f),
        Some(_) => return None,
        None => (mant, ""),
    };
    if frac.len() > 13 || !frac.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
        return None;
    }
    let field = u64::from_str_radix(&format!("{frac:0<13}"), 16).ok()?;
    let bits = match lead {
        "1" if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | field,
        "0" if exp == -1022 && field != 0 => field,
        "0" if exp == 0 && field == 0 => 0,
        _ => return None,
    };
    let v = f64::from_bits(bits);
    Some(if negative { -v } else { v })
}

fn encode(v: Value) -> Value {
    match v {
        Value::Float(f) => Value::String(format_hex_float(f)),
        Value::String(s) if s.starts_with('\\') || parse_hex_float(&s).is_some() => Value::String(format!("\\{s}")),
        Value::Array(a) => Value::Array(a.into_iter().map(encode).collect()),
        Value::Table(t) => Value::Table(t.into_iter().map(|(k, v)| (k, encode(v))).collect()),
        other => other,
    }
}

fn decode(v: Value) -> Value {
    match v {
        Value::String(s) => match s.strip_prefix('\\') {
            Some(escaped) => Value::String(escaped.to_string()),
            None => match parse_hex_float(&s) {
                Some(f) => Value::Float(f),
                None => Value::String(s),
            },
        },
        Value::Array(a) => Value::Array(a.into_iter().map(decode).collect()),
        Value::Table(t) => Value::Table(t.into_iter().map(|(k, v)| (k, decode(v))).collect()),
        other => other,
    }
}

/// Serialises a trained model to model-file text.
pub fn to_string(model: &TrainedModel) -> Result<String> {
    let body = Value::try_from(model).map_err(|e| Error::CorruptArtifact(format!("cannot encode model: {e}")))?;
    let mut doc = Table::new();
    doc.insert("format".into(), Value::String(FORMAT_NAME.into()));
    doc.insert("version".into(), Value::Integer(FORMAT_VERSION));
    doc.insert("model".into(), encode(body));
    toml::to_string(&doc).map_err(|e| Error::CorruptArtifact(format!("cannot write model: {e}")))
}

/// Restores a model written by [`to_string`].
pub fn from_str(text: &str) -> Result<TrainedModel> {
    let mut doc: Table = toml::from_str(text).map_err(|e| Error::CorruptArtifact(e.to_string()))?;
    if doc.get("format").and_then(Value::as_str) != Some(FORMAT_NAME) {
        return Err(Error::CorruptArtifact("not a model file".into()));
    }
    match doc.get("version").and_then(Value::as_integer) {
        Some(FORMAT_VERSION) => {}
        other => {
            return Err(Error::CorruptArtifact(format!(
                "unsupported format version {other:?} (expected {FORMAT_VERSION})"
            )))
        }
    }
    let body = doc
        .remove("model")
        .ok_or_else(|| Error::CorruptArtifact("missing [model] table".into()))?;
    let model: TrainedModel = decode(body)
        .try_into()
        .map_err(|e: toml::de::Error| Error::CorruptArtifact(e.to_string()))?;
    check_consistency(&model)?;
    Ok(model)
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, to_string(model)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::CorruptArtifact("model file is not UTF-8".into()))?;
    from_str(&text)
}

fn check_consistency(m: &TrainedModel) -> Result<()> {
    let nj = m.countries.len();
    let nx = m.age_groups.len();
    let bad = |what: &str| Err(Error::CorruptArtifact(what.to_string()));
    if nj == 0 || nx == 0 {
        return bad("model has no countries or no age groups");
    }
    if m.reciprocal.len() != nj {
        return bad("reciprocal flags do not match the country list");
    }
    let li_lee_ok = |fit: &crate::multipop::LiLeeFit, n_country_models: usize| {
        fit.ratios.len() == nj
            && fit.intercepts.len() == nj
            && n_country_models == nj
            && fit.product.b.len() == nx
            && fit.ratios.iter().all(|r| r.b.len() == nx)
            && fit.intercepts.iter().all(|a| a.len() == nx)
    };
    let ok = match &m.body {
        ModelBody::LiLee(l) => li_lee_ok(&l.fit, l.country.len()),
        ModelBody::Hby(h) => {
            h.fit.mu.len() == nj
                && h.fit.country.len() == nj
                && h.country.len() == nj
                && h.common.len() == h.fit.common.len()
                && h.fit.mu.iter().all(|mu| mu.len() == nx)
                && h.fit.common.iter().all(|c| c.basis.len() == nx)
                && h.fit.country.iter().zip(&h.country).all(|(c, k)| {
                    c.len() == k.len() && c.iter().all(|comp| comp.basis.len() == nx)
                })
        }
        ModelBody::Gbll(g) => {
            !g.stages.is_empty()
                && g.stages.len() == g.ensemble.gammas.len()
                && g.stages.iter().all(|s| li_lee_ok(&s.fit, s.country.len()))
        }
    };
    if ok {
        Ok(())
    } else {
        bad("component shapes are inconsistent")
    }
}
