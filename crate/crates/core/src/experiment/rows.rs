use std::cmp::Ordering;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fqe::Weighting;
use crate::sampling::fmt_f64;

pub const RESULT_HEADER: [&str; 11] = [
    "experiment",
    "seed",
    "kappa",
    "gamma",
    "weighting",
    "k",
    "err_mu",
    "err_behavior",
    "eta_k",
    "diverged",
    "ratio_chi2",
];

/// One iteration of one run: long format, one row per `(cell, seed, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    /// Replicate index within the cell.
    pub seed: usize,
    /// Baird only.
    pub kappa: Option<f64>,
    pub gamma: f64,
    pub weighting: Weighting,
    pub k: usize,
    pub err_mu: f64,
    pub err_behavior: f64,
    pub eta_k: Option<f64>,
    pub diverged: bool,
    pub ratio_chi2: Option<f64>,
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

impl ResultRow {
    fn cell_cmp(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| cmp_opt(self.kappa, other.kappa))
            .then_with(|| self.gamma.total_cmp(&other.gamma))
            .then_with(|| self.weighting.as_str().cmp(other.weighting.as_str()))
    }

    /// Total order used for every written file.
    pub fn sort_key_cmp(&self, other: &Self) -> Ordering {
        self.cell_cmp(other)
            .then_with(|| self.seed.cmp(&other.seed))
            .then_with(|| self.k.cmp(&other.k))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_metadata<W: Write>(out: &mut W, metadata: &[(&str, String)]) -> Result<()> {
    writeln!(out, "# swfqe {}", env!("CARGO_PKG_VERSION"))?;
    for (key, value) in metadata {
        writeln!(out, "# {key}={value}")?;
    }
    Ok(())
}

/// Sorts and writes rows with `#` metadata lines first.
pub fn write_results<W: Write>(
    mut out: W,
    rows: &[ResultRow],
    metadata: &[(&str, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key_cmp(b));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for r in sorted {
        w.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            opt(r.kappa),
            fmt_f64(r.gamma),
            r.weighting.as_str().to_string(),
            r.k.to_string(),
            fmt_f64(r.err_mu),
            fmt_f64(r.err_behavior),
            opt(r.eta_k),
            r.diverged.to_string(),
            opt(r.ratio_chi2),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, value: &str, line: u64) -> Result<f64> {
    value.parse().map_err(|_| {
        Error::DataInconsistency(format!("line {line}: `{field}` is not a number: {value:?}"))
    })
}

fn parse_opt(field: &str, value: &str, line: u64) -> Result<Option<f64>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, value, line).map(Some)
    }
}

/// Reads a long-format result file, skipping `#` lines.
pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != RESULT_HEADER {
        return Err(Error::DataInconsistency(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let int = |i: usize| {
            rec[i].parse::<usize>().map_err(|_| {
                Error::DataInconsistency(format!(
                    "line {line}: `{}` is not an integer",
                    RESULT_HEADER[i]
                ))
            })
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            seed: int(1)?,
            kappa: parse_opt("kappa", &rec[2], line)?,
            gamma: parse_f64("gamma", &rec[3], line)?,
            weighting: Weighting::parse(&rec[4]).ok_or_else(|| {
                Error::DataInconsistency(format!("line {line}: unknown weighting {:?}", &rec[4]))
            })?,
            k: int(5)?,
            err_mu: parse_f64("err_mu", &rec[6], line)?,
            err_behavior: parse_f64("err_behavior", &rec[7], line)?,
            eta_k: parse_opt("eta_k", &rec[8], line)?,
            diverged: match &rec[9] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(Error::DataInconsistency(format!(
                        "line {line}: diverged must be true/false, got {other:?}"
                    )))
                }
            },
            ratio_chi2: parse_opt("ratio_chi2", &rec[10], line)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(mut values: Vec<f64>) -> Summary {
    values.sort_by(f64::total_cmp);
    Summary {
        median: percentile(&values, 0.5),
        p10: percentile(&values, 0.1),
        p90: percentile(&values, 0.9),
    }
}

/// Final-iteration statistics of one `(experiment, kappa, gamma, weighting)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub experiment: String,
    pub kappa: Option<f64>,
    pub gamma: f64,
    pub weighting: Weighting,
    pub n_seeds: usize,
    pub err_mu: Summary,
    pub err_behavior: Summary,
    /// Error at iterate 0, median over seeds.
    pub initial_err_mu: f64,
    pub diverged_fraction: f64,
}

pub const AGGREGATE_HEADER: [&str; 13] = [
    "experiment",
    "kappa",
    "gamma",
    "weighting",
    "n_seeds",
    "median_err_mu",
    "p10_err_mu",
    "p90_err_mu",
    "median_err_behavior",
    "p10_err_behavior",
    "p90_err_behavior",
    "median_initial_err_mu",
    "diverged_fraction",
];

/// Groups rows by cell and summarizes each seed's last iterate.
pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::Empty("result rows"));
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.sort_key_cmp(b));
    let mut out = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start;
        while end < sorted.len() && sorted[end].cell_cmp(sorted[start]) == Ordering::Equal {
            end += 1;
        }
        let cell = &sorted[start..end];
        // last row of each seed run (rows are sorted by seed, then k)
        let mut finals = Vec::new();
        let mut initials = Vec::new();
        for (i, r) in cell.iter().enumerate() {
            if i + 1 == cell.len() || cell[i + 1].seed != r.seed {
                finals.push(*r);
            }
            if i == 0 || cell[i - 1].seed != r.seed {
                initials.push(r.err_mu);
            }
        }
        let first = cell[0];
        out.push(AggregateRow {
            experiment: first.experiment.clone(),
            kappa: first.kappa,
            gamma: first.gamma,
            weighting: first.weighting,
            n_seeds: finals.len(),
            err_mu: summarize(finals.iter().map(|r| r.err_mu).collect()),
            err_behavior: summarize(finals.iter().map(|r| r.err_behavior).collect()),
            initial_err_mu: summarize(initials).median,
            diverged_fraction: finals.iter().filter(|r| r.diverged).count() as f64
                / finals.len() as f64,
        });
        start = end;
    }
    Ok(out)
}

pub fn write_aggregate<W: Write>(
    mut out: W,
    rows: &[AggregateRow],
    metadata: &[(&str, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            opt(r.kappa),
            fmt_f64(r.gamma),
            r.weighting.as_str().to_string(),
            r.n_seeds.to_string(),
            fmt_f64(r.err_mu.median),
            fmt_f64(r.err_mu.p10),
            fmt_f64(r.err_mu.p90),
            fmt_f64(r.err_behavior.median),
            fmt_f64(r.err_behavior.p10),
            fmt_f64(r.err_behavior.p90),
            fmt_f64(r.initial_err_mu),
            fmt_f64(r.diverged_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const MISSPEC_HEADER: [&str; 10] = [
    "experiment",
    "seed",
    "gamma",
    "perturbation",
    "fixed_point_gap",
    "bound_reward",
    "bound_projected",
    "fqe_err",
    "holds_reward",
    "holds_projected",
];

/// One reward-misspecification instance: the fixed-point gap
/// `||Q^_F - Q*_F||_{2,mu}` against both right-hand sides.
#[derive(Debug, Clone, PartialEq)]
pub struct MisspecRow {
    pub experiment: String,
    pub seed: usize,
    pub gamma: f64,
    /// `estimated`, `random` or `orthogonal`.
    pub perturbation: String,
    pub fixed_point_gap: f64,
    /// `||r^ - r||_{2,mu} / (1 - gamma)`.
    pub bound_reward: f64,
    /// `||Pi (r^ - r)||_{2,mu} / (1 - gamma)`.
    pub bound_projected: f64,
    /// `||Q_K - Q^_F||_{2,mu}` of FQE run on the synthesized dataset.
    pub fqe_err: f64,
    pub holds_reward: bool,
    pub holds_projected: bool,
}

pub fn write_misspec<W: Write>(
    mut out: W,
    rows: &[MisspecRow],
    metadata: &[(&str, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut sorted: Vec<&MisspecRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.experiment
            .cmp(&b.experiment)
            .then_with(|| a.gamma.total_cmp(&b.gamma))
            .then_with(|| a.perturbation.cmp(&b.perturbation))
            .then_with(|| a.seed.cmp(&b.seed))
    });
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MISSPEC_HEADER)?;
    for r in sorted {
        w.write_record([
            r.experiment.clone(),
            r.seed.to_string(),
            fmt_f64(r.gamma),
            r.perturbation.clone(),
            fmt_f64(r.fixed_point_gap),
            fmt_f64(r.bound_reward),
            fmt_f64(r.bound_projected),
            fmt_f64(r.fqe_err),
            r.holds_reward.to_string(),
            r.holds_projected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Work item that failed; the sweep records it and carries on.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub cell: String,
    pub seed: usize,
    pub error: String,
}

pub fn write_failures<W: Write>(
    mut out: W,
    failures: &[Failure],
    metadata: &[(&str, String)],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut sorted: Vec<&Failure> = failures.iter().collect();
    sorted.sort_by(|a, b| a.cell.cmp(&b.cell).then(a.seed.cmp(&b.seed)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cell", "seed", "error"])?;
    for f in sorted {
        w.write_record([f.cell.clone(), f.seed.to_string(), f.error.clone()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: usize, k: usize, err: f64) -> ResultRow {
        ResultRow {
            experiment: "e".into(),
            seed,
            kappa: None,
            gamma: 0.9,
            weighting: Weighting::Unweighted,
            k,
            err_mu: err,
            err_behavior: err,
            eta_k: None,
            diverged: false,
            ratio_chi2: None,
        }
    }

    #[test]
    fn percentiles_match_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.1) - 1.4).abs() < 1e-15);
        assert!((percentile(&v, 0.9) - 4.6).abs() < 1e-15);
        assert_eq!(percentile(&[7.0], 0.1), 7.0);
    }

    #[test]
    fn single_seed_median_is_its_final_value() {
        let agg = aggregate(&[row(0, 0, 5.0), row(0, 1, 2.0)]).unwrap();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].err_mu.median, 2.0);
        assert_eq!(agg[0].initial_err_mu, 5.0);
    }

    #[test]
    fn identical_seeds_collapse_band() {
        let rows: Vec<_> = (0..5).map(|s| row(s, 0, 1.5)).collect();
        let a = &aggregate(&rows).unwrap()[0];
        assert_eq!(
            (a.err_mu.p10, a.err_mu.median, a.err_mu.p90),
            (1.5, 1.5, 1.5)
        );
    }

    #[test]
    fn aggregation_is_order_independent() {
        let mut rows = vec![
            row(1, 1, 3.0),
            row(0, 0, 1.0),
            row(1, 0, 9.0),
            row(0, 1, 2.0),
        ];
        let a = aggregate(&rows).unwrap();
        rows.reverse();
        assert_eq!(a, aggregate(&rows).unwrap());
        assert_eq!(a[0].err_mu.median, 2.5);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(aggregate(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let mut r = row(3, 2, 0.1);
        r.kappa = Some(0.7);
        r.eta_k = Some(1e-3);
        r.ratio_chi2 = Some(0.25);
        let rows = vec![r, row(0, 0, 1.0 / 3.0)];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows, &[("config_hash", "abc".into())]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# swfqe "));
        let back = read_results(&buf[..]).unwrap();
        // sorted: kappa None before Some
        assert_eq!(back[0], rows[1]);
        assert_eq!(back[1], rows[0]);
    }

    #[test]
    fn mangled_header_rejected() {
        let text = "experiment,seed\ne,0\n";
        assert!(read_results(text.as_bytes()).is_err());
    }
}
