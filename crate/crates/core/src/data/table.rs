//! Text feature tables.
//!
//! ```text
//! # d=<dim> classes=<C>
//! <label>,<domain_tag>,<f_0>,...,<f_{d-1}>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::MasterDataset;
use crate::error::{data, Error, Result};
use crate::numerics::Matrix;

pub fn load_feature_table(path: impl AsRef<Path>) -> Result<MasterDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read feature table {}: {e}", path.display())))?;
    parse_feature_table(&text)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut dim = None;
    let mut classes = None;
    for part in rest.split_whitespace() {
        let (key, value) = part.split_once('=')?;
        match key {
            "d" => dim = value.parse().ok(),
            "classes" => classes = value.parse().ok(),
            _ => return None,
        }
    }
    Some((dim?, classes?))
}

pub fn parse_feature_table(text: &str) -> Result<MasterDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return data("feature table has no samples");
    };
    let Some((dim, classes)) = parse_header(header) else {
        return data(format!("line 1: expected header `# d=<dim> classes=<C>`, found `{header}`"));
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return data(format!("line {lineno}: expected {} fields, found {}", dim + 2, fields.len()));
        }
        let label: usize = fields[0].trim().parse().map_err(|_| Error::Data(format!("line {lineno}: bad label `{}`", fields[0])))?;
        if label >= classes {
            return data(format!("line {lineno}: label {label} outside {classes} classes"));
        }
        for f in &fields[2..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Data(format!("line {lineno}: bad feature value `{f}`")))?;
            if !v.is_finite() {
                return data(format!("line {lineno}: non-finite feature value"));
            }
            values.push(v);
        }
        labels.push(label);
        tags.push(fields[1].trim().to_string());
    }
    if labels.is_empty() {
        return data("feature table has no samples");
    }
    let domains = tags.iter().any(|t| !t.is_empty()).then_some(tags);
    MasterDataset::new(Matrix::from_vec(labels.len(), dim, values)?, labels, classes, domains)
}

pub fn write_feature_table(ds: &MasterDataset) -> String {
    let mut out = format!("# d={} classes={}\n", ds.dim(), ds.classes());
    for i in 0..ds.len() {
        let tag = ds.domains().map_or("", |t| t[i].as_str());
        write!(out, "{},{}", ds.labels()[i], tag).expect("writing to a string");
        for v in ds.feature(i) {
            write!(out, ",{v}").expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

pub fn save_feature_table(ds: &MasterDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_feature_table(ds))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dirichlet_partition, generate_synthetic_dataset, SyntheticSpec};
    use crate::rng;

    #[test]
    fn empty_file_has_no_samples() {
        let err = parse_feature_table("").unwrap_err();
        assert!(err.to_string().contains("no samples"));
        assert!(parse_feature_table("# d=2 classes=2\n").unwrap_err().to_string().contains("no samples"));
    }

    #[test]
    fn two_rows_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let ds = MasterDataset::new(
            Matrix::from_vec(2, 3, vec![0.1, -1.0 / 3.0, 2e-300, std::f64::consts::FRAC_1_SQRT_2, 0.0, -0.5]).unwrap(),
            vec![1, 0],
            2,
            Some(vec!["a".into(), "b".into()]),
        )
        .unwrap();
        save_feature_table(&ds, &path).unwrap();
        assert_eq!(load_feature_table(&path).unwrap(), ds);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let err = parse_feature_table("# d=2 classes=2\n0,,0.1,0.2\n1,,0.3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_feature_table("# d=2 classes=2\n5,,0.1,0.2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(parse_feature_table("0,,1,2\n").is_err());
    }

    #[test]
    fn loaded_table_partitions_like_memory() {
        let spec = SyntheticSpec { classes: 4, dim: 8, per_class: 6, ..SyntheticSpec::default() };
        let ds = generate_synthetic_dataset(&spec).unwrap();
        let loaded = parse_feature_table(&write_feature_table(&ds)).unwrap();
        let a = dirichlet_partition(ds.labels(), 4, 3, 0.5, &mut rng::stream(&[9])).unwrap();
        let b = dirichlet_partition(loaded.labels(), 4, 3, 0.5, &mut rng::stream(&[9])).unwrap();
        assert_eq!(a, b);
        assert_eq!(loaded, ds);
    }
}
