//! Regularizer heads as `name=value` lines: `level<l>.w<g>` for group
//! weights and `level<l>.b<j>` for hypothesis biases.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_file};
use crate::costvol::RegularizerParams;
use crate::error::{Error, Result};
use crate::search::RegularizerSet;

pub fn encode_params(set: &RegularizerSet) -> String {
    let mut s = String::new();
    for (l, p) in set.levels.iter().enumerate() {
        for (g, w) in p.group_weights.iter().enumerate() {
            let _ = writeln!(s, "level{l}.w{g}={w}");
        }
        for (j, b) in p.hypothesis_biases.iter().enumerate() {
            let _ = writeln!(s, "level{l}.b{j}={b}");
        }
    }
    s
}

pub fn write_params(path: impl AsRef<Path>, set: &RegularizerSet) -> Result<()> {
    write_file(path.as_ref(), encode_params(set).as_bytes())
}

type Slots = BTreeMap<usize, (BTreeMap<usize, f64>, BTreeMap<usize, f64>)>;

fn dense(path: &Path, map: &BTreeMap<usize, f64>, what: &str) -> Result<Vec<f64>> {
    if map.keys().copied().ne(0..map.len()) {
        return Err(Error::parse(path, format!("{what} indices are not contiguous from 0")));
    }
    Ok(map.values().copied().collect())
}

pub fn decode_params(text: &str, path: &Path) -> Result<RegularizerSet> {
    let mut slots: Slots = BTreeMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::parse(path, format!("bad line '{line}'"));
        let (name, value) = line.split_once('=').ok_or_else(bad)?;
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let (level, slot) = name.trim().strip_prefix("level").and_then(|r| r.split_once('.')).ok_or_else(bad)?;
        let level: usize = level.parse().map_err(|_| bad())?;
        let entry = slots.entry(level).or_default();
        let (map, idx) = if let Some(i) = slot.strip_prefix('w') {
            (&mut entry.0, i)
        } else if let Some(i) = slot.strip_prefix('b') {
            (&mut entry.1, i)
        } else {
            return Err(bad());
        };
        if map.insert(idx.parse().map_err(|_| bad())?, value).is_some() {
            return Err(Error::parse(path, format!("duplicate '{name}'")));
        }
    }
    if slots.keys().copied().ne(0..slots.len()) || slots.is_empty() {
        return Err(Error::parse(path, "levels are not contiguous from 0"));
    }
    let levels = slots
        .values()
        .map(|(w, b)| {
            let p = RegularizerParams {
                group_weights: dense(path, w, "weight")?,
                hypothesis_biases: dense(path, b, "bias")?,
            };
            p.validate()?;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegularizerSet { levels })
}

pub fn read_params(path: impl AsRef<Path>) -> Result<RegularizerSet> {
    let path = path.as_ref();
    decode_params(&read_text(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut set = RegularizerSet::uniform(2, 4, 4);
        set.levels[1].group_weights[2] = 0.1 + 0.2;
        set.levels[0].hypothesis_biases[3] = -1.0 / 3.0;
        let text = encode_params(&set);
        assert!(text.contains("level1.w2=0.30000000000000004\n"));
        assert_eq!(decode_params(&text, Path::new("p")).unwrap(), set);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["level0.w0", "level0.x0=1", "level1.w0=1", "level0.w1=1", "level0.w0=1\nlevel0.w0=2", "level0.w0=nan"] {
            assert!(decode_params(bad, Path::new("p")).is_err(), "{bad}");
        }
    }
}
