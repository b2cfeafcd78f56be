//! JSON-lines dataset files, one sample object per line:
//! `{"id":..,"x_a":[..],"x_v":[..],"x_l":[..],"y":..,"s_a":..,"s_v":..,"s_l":..}`.
//! The `s_*` truth fields are optional but must appear together.

use serde_json::{Map, Value};

use super::{Observation, Split};
use crate::error::{Error, Result};
use crate::textio::fmt_f64;

const FEATURE_KEYS: [&str; 3] = ["x_a", "x_v", "x_l"];
const TRUTH_KEYS: [&str; 3] = ["s_a", "s_v", "s_l"];

fn array(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
    format!("[{}]", parts.join(","))
}

pub fn split_to_string(split: &Split) -> String {
    let mut out = String::new();
    for (obs, truth) in split.observations.iter().zip(&split.truth) {
        out.push_str(&format!("{{\"id\":{}", obs.id));
        for (key, x) in FEATURE_KEYS.iter().zip(&obs.features) {
            out.push_str(&format!(",\"{key}\":{}", array(x)));
        }
        out.push_str(&format!(",\"y\":{}", fmt_f64(obs.y)));
        if let Some(s) = truth {
            for (key, v) in TRUTH_KEYS.iter().zip(s) {
                out.push_str(&format!(",\"{key}\":{}", fmt_f64(*v)));
            }
        }
        out.push_str("}\n");
    }
    out
}

fn number(obj: &Map<String, Value>, key: &str, line: usize) -> Result<Option<f64>> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v.as_f64().map(Some).ok_or_else(|| Error::Parse {
            line,
            msg: format!("field `{key}` is not a number"),
        }),
    }
}

fn parse_line(text: &str, line: usize) -> Result<(Observation, Option<[f64; 3]>)> {
    let parse_err = |msg: String| Error::Parse { line, msg };
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| parse_err("record is not an object".into()))?;
    for key in obj.keys() {
        let known = key == "id" || key == "y" || FEATURE_KEYS.contains(&key.as_str()) || TRUTH_KEYS.contains(&key.as_str());
        if !known {
            return Err(Error::UnknownField {
                line,
                field: key.clone(),
            });
        }
    }
    let id = obj
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| parse_err("missing or invalid `id`".into()))?;
    let y = number(obj, "y", line)?.ok_or_else(|| parse_err("missing `y`".into()))?;
    let mut features: [Vec<f64>; 3] = Default::default();
    for (slot, key) in features.iter_mut().zip(FEATURE_KEYS) {
        let arr = obj
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| parse_err(format!("missing or invalid `{key}`")))?;
        *slot = arr
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| parse_err(format!("non-numeric entry in `{key}`"))))
            .collect::<Result<_>>()?;
        if slot.is_empty() {
            return Err(parse_err(format!("`{key}` is empty")));
        }
    }
    let truth: Vec<Option<f64>> = TRUTH_KEYS.iter().map(|k| number(obj, k, line)).collect::<Result<_>>()?;
    let truth = match truth.as_slice() {
        [Some(a), Some(v), Some(l)] => Some([*a, *v, *l]),
        [None, None, None] => None,
        _ => return Err(parse_err("truth fields s_a, s_v, s_l must appear together".into())),
    };
    Ok((Observation { id, features, y }, truth))
}

pub fn parse_split(text: &str) -> Result<Split> {
    let mut split = Split::default();
    let mut width: Option<[usize; 3]> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (obs, truth) = parse_line(line, i + 1)?;
        let dims = [0, 1, 2].map(|m| obs.features[m].len());
        match width {
            None => width = Some(dims),
            Some(w) if w != dims => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("feature widths {dims:?} differ from earlier rows {w:?}"),
                })
            }
            _ => {}
        }
        split.observations.push(obs);
        split.truth.push(truth);
    }
    Ok(split)
}
