//! Text checkpoints: one line per parameter, `name<TAB>[d0,d1]<TAB>v0 v1 ...`.

use std::path::Path;

use super::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::textio::{fmt_f64, read_to_string, write_atomic};

const HEADER: &str = "# mug-checkpoint v1";

pub fn to_string(params: &ParamStore) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let values: Vec<String> = t.data().iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&format!("{name}\t[{}]\t{}\n", dims.join(","), values.join(" ")));
    }
    out
}

pub fn from_str(text: &str) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let mut fields = line.split('\t');
        let (Some(name), Some(shape), Some(values), None) = (fields.next(), fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err("expected `name<TAB>[shape]<TAB>values`".into()));
        };
        let dims = shape
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| parse_err(format!("bad shape `{shape}`")))?;
        let dims: Vec<usize> = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split(',')
                .map(|d| d.parse::<usize>().map_err(|e| parse_err(format!("bad dimension `{d}`: {e}"))))
                .collect::<Result<_>>()?
        };
        let data: Vec<f64> = values
            .split(' ')
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("bad value `{v}`: {e}"))))
            .collect::<Result<_>>()?;
        let t = Tensor::new(&dims, data).map_err(|e| parse_err(e.to_string()))?;
        store.insert(name, t).map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    write_atomic(path, to_string(params).as_bytes())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    from_str(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_value_exact(values in prop::collection::vec(-1e6f64..1e6, 1..40), rows in 1usize..4) {
            let cols = values.len();
            let mut data = Vec::new();
            for _ in 0..rows { data.extend_from_slice(&values); }
            let mut p = ParamStore::new();
            p.insert("layer.weight", Tensor::new(&[rows, cols], data).unwrap()).unwrap();
            p.insert("s", Tensor::scalar(values[0] / 3.0)).unwrap();
            let back = from_str(&to_string(&p)).unwrap();
            for ((na, ta), (nb, tb)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                let xa: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
                let xb: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xa, xb);
            }
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "# mug-checkpoint v1\na\t[2]\t1 2\nb\t[2]\t1\n";
        match from_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
