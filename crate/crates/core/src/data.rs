//! Measurement records, bootstrapped decay curves, SPAM normalization and
//! relative errors.
//!
//! Count files hold one block per `(state, kind)`:
//!
//! ```text
//! record,theta_deg,phi_deg,lambda_deg,kind,shots,total_ns,n_instants
//! instant_ns,count0,count1   (n_instants rows)
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::bath::derive_seed;
use crate::error::{Error, Result};
use crate::schedules::{ExperimentKind, U3Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub state: U3Params,
    pub kind: ExperimentKind,
    pub instants: Vec<f64>,
    pub shots: u64,
    /// Tallies of outcomes 0 and 1 per instant.
    pub counts: Vec<[u64; 2]>,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::MissingData("record has zero shots".into()));
        }
        if self.instants.len() != self.counts.len() {
            return Err(Error::GridMismatch("one tally per instant is required".into()));
        }
        for (t, [a, b]) in self.instants.iter().zip(&self.counts) {
            if a + b != self.shots {
                return Err(Error::MissingData(format!("counts at {t} ns sum to {} instead of {}", a + b, self.shots)));
            }
        }
        Ok(())
    }

    /// Raw fraction of outcome 0 per instant.
    pub fn empirical(&self) -> DecayCurve {
        DecayCurve {
            instants: self.instants.clone(),
            mean: self.counts.iter().map(|c| c[0] as f64 / self.shots as f64).collect(),
            half_width: vec![0.0; self.instants.len()],
        }
    }
}

/// Survival probability per instant with a symmetric error half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub instants: Vec<f64>,
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl DecayCurve {
    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }

    /// True when some mean lies above one.
    pub fn exceeds_one(&self) -> bool {
        self.mean.iter().any(|&m| m > 1.0)
    }

    pub fn same_grid(&self, other: &DecayCurve) -> bool {
        self.instants.len() == other.instants.len()
            && self.instants.iter().zip(&other.instants).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
    }

    /// The points at `instants`, each of which must be on this grid.
    pub fn restricted_to(&self, instants: &[f64]) -> Result<DecayCurve> {
        let mut out = DecayCurve { instants: Vec::new(), mean: Vec::new(), half_width: Vec::new() };
        for &t in instants {
            let k = self
                .instants
                .iter()
                .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
                .ok_or_else(|| Error::GridMismatch(format!("no experimental point at {t} ns")))?;
            out.instants.push(self.instants[k]);
            out.mean.push(self.mean[k]);
            out.half_width.push(self.half_width[k]);
        }
        Ok(out)
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::Parse { line, msg: format!("missing field '{name}'") })?;
    raw.trim().parse().map_err(|_| Error::Parse { line, msg: format!("bad {name} '{}'", raw.trim()) })
}

/// Parses count records from any reader.
pub fn read_experiment_records<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut current: Option<(ExperimentRecord, usize, usize)> = None;
    let finish = |cur: Option<(ExperimentRecord, usize, usize)>, out: &mut Vec<ExperimentRecord>| -> Result<()> {
        if let Some((rec, expected, line)) = cur {
            if rec.counts.len() != expected {
                return Err(Error::Parse { line, msg: format!("record declares {expected} instants, found {}", rec.counts.len()) });
            }
            out.push(rec);
        }
        Ok(())
    };
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        if row.get(0) == Some("record") {
            finish(current.take(), &mut out)?;
            if row.len() != 8 {
                return Err(Error::Parse { line, msg: format!("record header needs 8 fields, found {}", row.len()) });
            }
            let th: f64 = parse_field(&row, 1, "theta_deg", line)?;
            let ph: f64 = parse_field(&row, 2, "phi_deg", line)?;
            let la: f64 = parse_field(&row, 3, "lambda_deg", line)?;
            let kind = row[4].parse::<ExperimentKind>().map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            let shots: u64 = parse_field(&row, 5, "shots", line)?;
            let total: f64 = parse_field(&row, 6, "total_ns", line)?;
            let n: usize = parse_field(&row, 7, "n_instants", line)?;
            if shots == 0 {
                return Err(Error::Parse { line, msg: "shots must be positive".into() });
            }
            if !(total >= 0.0) {
                return Err(Error::Parse { line, msg: "total_ns must be non-negative".into() });
            }
            let rec = ExperimentRecord {
                state: U3Params::from_degrees(th, ph, la),
                kind,
                instants: Vec::with_capacity(n),
                shots,
                counts: Vec::with_capacity(n),
            };
            current = Some((rec, n, line));
            continue;
        }
        let Some((rec, _, _)) = current.as_mut() else {
            return Err(Error::Parse { line, msg: "count row before any record header".into() });
        };
        if row.len() != 3 {
            return Err(Error::Parse { line, msg: format!("count row needs 3 fields, found {}", row.len()) });
        }
        let t: f64 = parse_field(&row, 0, "instant_ns", line)?;
        let c0: u64 = parse_field(&row, 1, "count0", line)?;
        let c1: u64 = parse_field(&row, 2, "count1", line)?;
        if c0 + c1 != rec.shots {
            return Err(Error::Parse {
                line,
                msg: format!("instant {t} ns: counts {c0} + {c1} differ from {} shots", rec.shots),
            });
        }
        rec.instants.push(t);
        rec.counts.push([c0, c1]);
    }
    finish(current, &mut out)?;
    Ok(out)
}

pub fn load_experiment_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    read_experiment_records(std::fs::File::open(path)?)
}

pub fn write_experiment_records<W: Write>(mut w: W, records: &[ExperimentRecord], comment: Option<&str>) -> Result<()> {
    if let Some(text) = comment {
        for line in text.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    for r in records {
        r.validate()?;
        let [th, ph, la] = r.state.degrees();
        let total = r.instants.last().copied().unwrap_or(0.0);
        writeln!(w, "record,{th},{ph},{la},{},{},{total},{}", r.kind.as_str(), r.shots, r.instants.len())?;
        for (t, [a, b]) in r.instants.iter().zip(&r.counts) {
            writeln!(w, "{t},{a},{b}")?;
        }
    }
    Ok(())
}

/// Draws binomial shot counts for outcome-0 probabilities `p0`.
pub fn synthesize_record(
    state: U3Params,
    kind: ExperimentKind,
    instants: &[f64],
    p0: &[f64],
    shots: u64,
    seed: u64,
) -> Result<ExperimentRecord> {
    if instants.len() != p0.len() {
        return Err(Error::GridMismatch("one probability per instant is required".into()));
    }
    let counts = p0
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
            let dist = Binomial::new(shots, p.clamp(0.0, 1.0)).map_err(|e| Error::Fit(e.to_string()))?;
            let zeros = dist.sample(&mut rng);
            Ok([zeros, shots - zeros])
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentRecord { state, kind, instants: instants.to_vec(), shots, counts })
}

/// Bootstrap over shots: each resample redraws all shots of an instant
/// with replacement. Reports the resample mean and twice their standard
/// deviation.
pub fn bootstrap_curve(rec: &ExperimentRecord, n_resamples: usize, seed: u64) -> Result<DecayCurve> {
    rec.validate()?;
    if n_resamples < 2 {
        return Err(Error::Fit("bootstrap needs at least two resamples".into()));
    }
    let mut mean = Vec::with_capacity(rec.counts.len());
    let mut half_width = Vec::with_capacity(rec.counts.len());
    for (k, [c0, _]) in rec.counts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let p = *c0 as f64 / rec.shots as f64;
        let dist = Binomial::new(rec.shots, p).map_err(|e| Error::Fit(e.to_string()))?;
        let draws: Vec<f64> = (0..n_resamples).map(|_| dist.sample(&mut rng) as f64 / rec.shots as f64).collect();
        let m = draws.iter().sum::<f64>() / n_resamples as f64;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_resamples - 1) as f64;
        mean.push(m);
        half_width.push(2.0 * var.sqrt());
    }
    Ok(DecayCurve { instants: rec.instants.clone(), mean, half_width })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpamMode {
    /// Shift every instant by `1 - mean(0)`.
    #[default]
    Additive,
    /// Scale every instant by `1 / mean(0)`.
    Multiplicative,
}

/// Normalizes so that the fidelity at `t = 0` is one.
pub fn spam_normalize(curve: &DecayCurve, mode: SpamMode) -> Result<DecayCurve> {
    let i0 = curve
        .instants
        .iter()
        .position(|&t| t == 0.0)
        .ok_or_else(|| Error::MissingData("curve has no instant at t = 0".into()))?;
    let m0 = curve.mean[i0];
    let mut out = curve.clone();
    match mode {
        SpamMode::Additive => {
            let shift = 1.0 - m0;
            out.mean.iter_mut().for_each(|m| *m += shift);
        }
        SpamMode::Multiplicative => {
            if !(m0 > 0.0) {
                return Err(Error::MissingData("zero fidelity at t = 0".into()));
            }
            out.mean.iter_mut().for_each(|m| *m /= m0);
            out.half_width.iter_mut().for_each(|h| *h /= m0);
        }
    }
    Ok(out)
}

/// `(exp - sim) / exp` per instant.
pub fn relative_error(exp: &DecayCurve, sim: &DecayCurve) -> Result<Vec<f64>> {
    if !exp.same_grid(sim) {
        return Err(Error::GridMismatch("experimental and simulated instants differ".into()));
    }
    exp.mean
        .iter()
        .zip(&sim.mean)
        .zip(&exp.instants)
        .map(|((e, s), t)| {
            if *e == 0.0 {
                Err(Error::MissingData(format!("zero experimental mean at {t} ns")))
            } else {
                Ok((e - s) / e)
            }
        })
        .collect()
}

/// Box-plot statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub max_abs: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::MissingData("summary needs finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Summary {
        mean: s.iter().sum::<f64>() / s.len() as f64,
        median: quantile(&s, 0.5),
        q1: quantile(&s, 0.25),
        q3: quantile(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
        max_abs: s.iter().fold(0.0f64, |a, v| a.max(v.abs())),
    })
}

pub fn write_curve_csv<W: Write>(w: W, curve: &DecayCurve) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["instant_ns", "mean", "half_width"]).map_err(csv_io)?;
    for k in 0..curve.len() {
        wtr.write_record(&[curve.instants[k].to_string(), curve.mean[k].to_string(), curve.half_width[k].to_string()])
            .map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: Read>(r: R) -> Result<DecayCurve> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut curve = DecayCurve { instants: vec![], mean: vec![], half_width: vec![] };
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line() as usize), msg: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        curve.instants.push(parse_field(&row, 0, "instant_ns", line)?);
        curve.mean.push(parse_field(&row, 1, "mean", line)?);
        curve.half_width.push(parse_field(&row, 2, "half_width", line)?);
    }
    Ok(curve)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
