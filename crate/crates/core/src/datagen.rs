//! Synthetic regression data and a sparse text format.
//!
//! File format: an optional header `#dim d`, then one point per line,
//! `y idx:val idx:val ...` with 1-based feature indices and only nonzero
//! entries listed. Floats are written in shortest round-trip form, so
//! save/load is bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, norm};
use crate::problem::{Dataset, RidgeProblem};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Spectrum {
    /// Isotropic features.
    Uniform,
    /// Coordinate `k` has variance `ratio^k` before scaling.
    Geometric { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub m: usize,
    pub d: usize,
    pub spectrum: Spectrum,
    /// Standard deviation of the additive label noise.
    pub noise: f64,
    /// Norm of the planted weight vector.
    pub w_true_norm: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(m: usize, d: usize, seed: u64) -> Self {
        GenSpec {
            m,
            d,
            spectrum: Spectrum::Uniform,
            noise: 0.1,
            w_true_norm: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 {
            return Err(Error::invalid("m and d must be >= 1"));
        }
        if let Spectrum::Geometric { ratio } = self.spectrum {
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::invalid(format!(
                    "spectrum ratio must lie in (0, 1], got {ratio}"
                )));
            }
        }
        if !(self.noise >= 0.0) || !(self.w_true_norm >= 0.0) {
            return Err(Error::invalid("noise and w_true_norm must be >= 0"));
        }
        Ok(())
    }
}

/// A generated dataset together with the planted weights.
#[derive(Debug, Clone)]
pub struct Generated {
    pub data: Dataset,
    pub w_true: Vec<f64>,
}

pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    Ok(generate_with_truth(spec)?.data)
}

/// Features `z ~ N(0, I)` scaled coordinatewise to the requested spectrum,
/// then all divided by the largest norm; `y = clip(<w_true, x> + noise, [-1, 1])`.
pub fn generate_with_truth(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let (m, d) = (spec.m, spec.d);
    let scales: Vec<f64> = (0..d)
        .map(|k| match spec.spectrum {
            Spectrum::Uniform => 1.0,
            Spectrum::Geometric { ratio } => ratio.powi(k as i32).sqrt(),
        })
        .collect();

    let mut rng = CounterRng::new(spec.seed, 0);
    let mut x = Vec::with_capacity(m * d);
    for _ in 0..m {
        for s in &scales {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.push(s * z);
        }
    }
    let max_norm = x.chunks_exact(d).map(norm).fold(0.0f64, f64::max);
    if max_norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= max_norm);
    }

    let mut rng = CounterRng::new(spec.seed, 1);
    let mut w_true: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let wn = norm(&w_true);
    w_true.iter_mut().for_each(|v| *v *= spec.w_true_norm / wn);

    let mut rng = CounterRng::new(spec.seed, 2);
    let y = x
        .chunks_exact(d)
        .map(|row| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (linalg::dot(&w_true, row) + spec.noise * e).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(Generated {
        data: Dataset::new(d, x, y)?,
        w_true,
    })
}

/// Ridge problem on geometric-spectrum data whose strong-convexity constant
/// is `target_lambda`: the regularizer makes up the gap above the smallest
/// eigenvalue of the sample second moment.
pub fn benchmark_ridge(m: usize, d: usize, target_lambda: f64, seed: u64) -> Result<RidgeProblem> {
    let spec = GenSpec {
        m,
        d,
        spectrum: Spectrum::Geometric { ratio: 0.8 },
        noise: 0.1,
        w_true_norm: 1.0,
        seed,
    };
    let data = generate(&spec)?;
    let floor = linalg::sym_eigenvalues(&data.second_moment())[0].max(0.0);
    if target_lambda < floor {
        return Err(Error::invalid(format!(
            "target lambda {target_lambda} is below the data's smallest eigenvalue {floor}"
        )));
    }
    RidgeProblem::new(data, target_lambda - floor)
}

pub fn write_sparse<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "#dim {}", data.d())?;
    for i in 0..data.m() {
        write!(w, "{}", data.label(i))?;
        for (k, v) in data.row(i).iter().enumerate() {
            if *v != 0.0 {
                write!(w, " {}:{}", k + 1, v)?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save(data: &Dataset, path: &Path) -> Result<()> {
    write_sparse(data, fs::File::create(path)?)
}

type ParsedRow = (usize, f64, Vec<(usize, f64)>);

/// Parses the sparse format. Without `normalize`, points violating the norm
/// bounds are rejected; with it, features are divided by the largest row norm
/// and labels by the largest `|y|` (each only when above one).
pub fn read_sparse<R: Read>(input: R, normalize: bool) -> Result<Dataset> {
    let mut dim: Option<usize> = None;
    // (line number, label, sparse entries)
    let mut rows: Vec<ParsedRow> = Vec::new();
    for (k, line) in BufReader::new(input).lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("dim") {
                let d = v
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(line_no, "bad #dim header"))?;
                if d == 0 || !rows.is_empty() || dim.is_some() {
                    return Err(parse_err(
                        line_no,
                        "#dim must be a positive integer given once, before the data",
                    ));
                }
                dim = Some(d);
            }
            continue;
        }
        let mut fields = text.split_whitespace();
        let y = parse_f64(fields.next().unwrap_or_default(), line_no, "label")?;
        let mut entries = Vec::new();
        for f in fields {
            let (idx, val) = f
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, &format!("expected idx:val, got '{f}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(line_no, &format!("bad feature index '{idx}'")))?;
            if idx == 0 {
                return Err(parse_err(line_no, "feature indices are 1-based"));
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(parse_err(
                        line_no,
                        &format!("feature index {idx} exceeds dimension {d}"),
                    ));
                }
            }
            if entries.iter().any(|&(j, _)| j == idx - 1) {
                return Err(parse_err(line_no, &format!("duplicate feature index {idx}")));
            }
            entries.push((idx - 1, parse_f64(val, line_no, "feature value")?));
        }
        rows.push((line_no, y, entries));
    }
    if rows.is_empty() {
        return Err(Error::InvalidDataset("no data points".into()));
    }
    let d = dim.unwrap_or_else(|| rows.iter().flat_map(|r| r.2.iter().map(|e| e.0 + 1)).max().unwrap_or(1));
    let m = rows.len();
    let mut x = vec![0.0; m * d];
    let mut y = Vec::with_capacity(m);
    for (i, (_, label, entries)) in rows.iter().enumerate() {
        y.push(*label);
        for &(j, v) in entries {
            x[i * d + j] = v;
        }
    }
    if normalize {
        let max_norm = x.chunks_exact(d).map(norm).fold(0.0f64, f64::max);
        if max_norm > 1.0 {
            x.iter_mut().for_each(|v| *v /= max_norm);
        }
        let max_y = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max_y > 1.0 {
            y.iter_mut().for_each(|v| *v /= max_y);
        }
    } else {
        for (i, (line_no, label, _)) in rows.iter().enumerate() {
            if label.abs() > 1.0 + 1e-12 {
                return Err(parse_err(
                    *line_no,
                    &format!("|y| = {} exceeds 1 (use normalization)", label.abs()),
                ));
            }
            let n = norm(&x[i * d..(i + 1) * d]);
            if n > 1.0 + 1e-12 {
                return Err(parse_err(
                    *line_no,
                    &format!("||x|| = {n} exceeds 1 (use normalization)"),
                ));
            }
        }
    }
    Dataset::new(d, x, y)
}

pub fn load(path: &Path, normalize: bool) -> Result<Dataset> {
    read_sparse(fs::File::open(path)?, normalize)
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| parse_err(line, &format!("bad {what} '{s}'")))?;
    if !v.is_finite() {
        return Err(parse_err(line, &format!("non-finite {what}")));
    }
    Ok(v)
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Objective;
    use proptest::prelude::*;

    #[test]
    fn generated_data_is_valid_and_deterministic() {
        for spectrum in [Spectrum::Uniform, Spectrum::Geometric { ratio: 0.5 }] {
            let mut spec = GenSpec::new(100, 10, 7);
            spec.spectrum = spectrum;
            spec.noise = 2.0;
            let a = generate(&spec).unwrap();
            assert!((0..100).all(|i| norm(a.row(i)) <= 1.0 + 1e-12 && a.label(i).abs() <= 1.0));
            let b = generate(&spec).unwrap();
            assert_eq!(a.features(), b.features());
            assert_eq!(a.labels(), b.labels());
            let max = (0..100).map(|i| norm(a.row(i))).fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_least_squares_recovers_direction() {
        let mut spec = GenSpec::new(2000, 5, 3);
        spec.noise = 0.0;
        spec.w_true_norm = 0.8;
        let g = generate_with_truth(&spec).unwrap();
        let p = RidgeProblem::new(g.data, 0.0).unwrap();
        let w = &p.optimum().unwrap().w;
        let cos = linalg::dot(w, &g.w_true) / (norm(w) * norm(&g.w_true));
        assert!(cos.min(1.0).acos() <= 1e-6);
    }

    #[test]
    fn geometric_spectrum_condition() {
        let spec = GenSpec {
            m: 100_000,
            d: 8,
            spectrum: Spectrum::Geometric { ratio: 0.5 },
            noise: 0.1,
            w_true_norm: 1.0,
            seed: 1,
        };
        let data = generate(&spec).unwrap();
        let ev = linalg::sym_eigenvalues(&data.second_moment());
        let ratio = ev[7] / ev[0];
        let target = 0.5f64.powi(-7);
        assert!(ratio <= 2.0 * target && ratio >= target / 2.0, "{ratio}");
    }

    #[test]
    fn benchmark_hits_target_lambda() {
        let p = benchmark_ridge(2000, 10, 0.1, 4).unwrap();
        assert!((p.strong_convexity() - 0.1).abs() < 1e-9);
        assert!(benchmark_ridge(2000, 3, 1e-9, 4).is_err());
    }

    #[test]
    fn sparse_line_parses() {
        let d = read_sparse("#dim 8\n1 3:0.5 7:0.25\n".as_bytes(), false).unwrap();
        assert_eq!(d.label(0), 1.0);
        assert_eq!(d.row(0).iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(d.row(0)[2], 0.5);
        assert_eq!(d.row(0)[6], 0.25);
    }

    #[test]
    fn oversized_label_rejected_unless_normalized() {
        let text = "#dim 2\n2 1:0.5\n-1 2:0.5\n";
        let err = read_sparse(text.as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let d = read_sparse(text.as_bytes(), true).unwrap();
        assert_eq!(d.labels(), &[1.0, -0.5]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        for (text, line) in [
            ("#dim 2\n0.5 1:0.1\n0.5 x:0.1\n", 3),
            ("#dim 2\n0.5 3:0.1\n", 2),
            ("0.5 0:0.1\n", 1),
            ("\n\nabc 1:0.1\n", 3),
            ("0.1 1:0.2 1:0.3\n", 1),
            ("0.1 1-0.2\n", 1),
        ] {
            match read_sparse(text.as_bytes(), false) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let data = generate(&GenSpec::new(50, 4, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        save(&data, &path).unwrap();
        let back = load(&path, false).unwrap();
        assert_eq!(back.features(), data.features());
        assert_eq!(back.labels(), data.labels());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), m in 1usize..20, d in 1usize..6, sparse in any::<bool>()) {
            let mut data = generate(&GenSpec::new(m, d, seed)).unwrap();
            if sparse {
                let x: Vec<f64> = data.features().iter().enumerate().map(|(k, v)| if k % 3 == 0 { 0.0 } else { *v }).collect();
                data = Dataset::new(d, x, data.labels().to_vec()).unwrap();
            }
            let mut buf = Vec::new();
            write_sparse(&data, &mut buf).unwrap();
            let back = read_sparse(buf.as_slice(), false).unwrap();
            prop_assert_eq!(back.d(), d);
            let same = back.features().iter().zip(data.features()).all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0));
            prop_assert!(same);
            prop_assert!(back.labels().iter().zip(data.labels()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
