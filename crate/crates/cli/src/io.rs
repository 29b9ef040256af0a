//! λ-grid specs, sample CSVs and output documents.

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use symm_spectra::linalg::CMat;
use symm_spectra::Tolerances;

use crate::error::{CliError, CliResult};

fn axis(part: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("bad lambda-grid component `{part}` (expected x or lo:hi:n)"));
    let fields: Vec<&str> = part.split(':').map(str::trim).collect();
    match fields.as_slice() {
        [x] => Ok(vec![x.parse().map_err(|_| bad())?]),
        [lo, hi, n] => {
            let lo: f64 = lo.parse().map_err(|_| bad())?;
            let hi: f64 = hi.parse().map_err(|_| bad())?;
            let n: usize = n.parse().map_err(|_| bad())?;
            Ok(match n {
                0 => Vec::new(),
                1 => vec![lo],
                n => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
            })
        }
        _ => Err(bad()),
    }
}

/// `re,im` items separated by `;`; either part may be a range `lo:hi:n`. Ranges expand to
/// the product, real part fastest.
pub fn parse_lambda_grid(spec: &str) -> CliResult<Vec<Complex64>> {
    let mut out = Vec::new();
    for item in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (re, im) = item
            .split_once(',')
            .ok_or_else(|| CliError::Usage(format!("lambda-grid item `{item}` needs the form re,im")))?;
        let res = axis(re)?;
        for y in axis(im)? {
            out.extend(res.iter().map(|&x| Complex64::new(x, y)));
        }
    }
    Ok(out)
}

pub fn parse_pair(spec: &str, what: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("{what} must be two numbers a,b"));
    let (a, b) = spec.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn parse_list(spec: &str, what: &str) -> CliResult<Vec<f64>> {
    spec.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("{what}: `{x}` is not a number"))))
        .collect()
}

/// Samples `x, c0_re, c0_im, c1_re, ...` with a header row.
pub fn read_samples(path: &Path) -> CliResult<(Vec<f64>, Vec<CMat>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut grid = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let row = line + 2;
        let nums: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| CliError::Config(format!("{} line {row}: `{f}` is not a number", path.display()))))
            .collect::<CliResult<_>>()?;
        if nums.len() < 3 || nums.len().is_multiple_of(2) {
            return Err(CliError::Config(format!("{} line {row}: expected x followed by re,im pairs", path.display())));
        }
        if *width.get_or_insert(nums.len()) != nums.len() {
            return Err(CliError::Config(format!("{} line {row}: column count changed", path.display())));
        }
        grid.push(nums[0]);
        let k = (nums.len() - 1) / 2;
        values.push(CMat::from_fn(k, 1, |i, _| Complex64::new(nums[1 + 2 * i], nums[2 + 2 * i])));
    }
    Ok((grid, values))
}

/// Header `x, {name}_0_re, {name}_0_im, ...` then one row per sample of a column vector.
pub fn vector_csv(x_name: &str, name: &str, grid: &[f64], values: &[Vec<Complex64>]) -> String {
    let k = values.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![x_name.to_string()];
    for i in 0..k {
        header.push(format!("{name}_{i}_re"));
        header.push(format!("{name}_{i}_im"));
    }
    w.write_record(&header).expect("in-memory csv");
    for (x, v) in grid.iter().zip(values) {
        let mut row = vec![x.to_string()];
        for z in v {
            row.push(z.re.to_string());
            row.push(z.im.to_string());
        }
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

/// Fields shared by every output document.
#[derive(Debug, Clone, Serialize)]
pub struct Header<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config_hash: &'a str,
    pub tolerances: &'a Tolerances,
}

impl<'a> Header<'a> {
    pub fn new(command: &'a str, config_hash: &'a str, tolerances: &'a Tolerances) -> Self {
        Header { command, version: env!("CARGO_PKG_VERSION"), config_hash, tolerances }
    }
}

pub fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn to_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_forms() {
        let g = parse_lambda_grid("0,1; -1:1:3,0.5").unwrap();
        assert_eq!(g, vec![Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.5), Complex64::new(0.0, 0.5), Complex64::new(1.0, 0.5)]);
        assert_eq!(parse_lambda_grid("0:1:2,1:2:2").unwrap().len(), 4);
        assert!(parse_lambda_grid("").unwrap().is_empty());
        assert!(parse_lambda_grid("1").is_err());
        assert!(parse_lambda_grid("1,a").is_err());
    }

    #[test]
    fn csv_header_names() {
        let s = vector_csv("s", "f", &[0.5], &[vec![Complex64::new(1.0, -2.0)]]);
        assert_eq!(s, "s,f_0_re,f_0_im\n0.5,1,-2\n");
    }
}
