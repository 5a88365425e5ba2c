//! Univariate series, trailing windows and chronological splits.
//!
//! Positions follow the one-based convention `x_1 .. x_n`: a window "ending at
//! `end`" holds the `len` values `x_{end-len+1} .. x_end`, which is the slice
//! `values[end - len..end]`. Equivalently, `end` is the number of values
//! observed so far.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CometError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CometError::InvalidSeries("series is empty".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CometError::InvalidSeries(format!(
                "non-finite value at t = {pos}"
            )));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn window(&self, end: usize, len: usize) -> Result<&[f64]> {
        window(&self.values, end, len)
    }

    /// Reads the `t,value` CSV format. `t` must start at 0 and increase by one per row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| csv_error(1, e))?.clone();
        if header.len() != 2 || &header[0] != "t" || &header[1] != "value" {
            return Err(CometError::Parse {
                line: 1,
                message: "expected header `t,value`".into(),
            });
        }
        let mut values = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| csv_error(line, e))?;
            if record.len() != 2 {
                return Err(CometError::Parse {
                    line,
                    message: format!("expected 2 fields, found {}", record.len()),
                });
            }
            let t: usize = record[0].parse().map_err(|_| CometError::Parse {
                line,
                message: format!("invalid index `{}`", &record[0]),
            })?;
            if t != values.len() {
                return Err(CometError::Parse {
                    line,
                    message: format!("non-monotonic t: expected {}, found {t}", values.len()),
                });
            }
            let v: f64 = record[1].parse().map_err(|_| CometError::Parse {
                line,
                message: format!("invalid value `{}`", &record[1]),
            })?;
            if !v.is_finite() {
                return Err(CometError::Parse {
                    line,
                    message: format!("non-finite value `{}`", &record[1]),
                });
            }
            values.push(v);
        }
        TimeSeries::new(values)
    }

    /// Writes `t,value` rows using the shortest exact decimal for every value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.values.iter().enumerate() {
            writeln!(w, "{t},{v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(line: usize, e: csv::Error) -> CometError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    CometError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Trailing window of `len` values ending at one-based position `end`.
pub fn window(values: &[f64], end: usize, len: usize) -> Result<&[f64]> {
    if end < len || end > values.len() {
        return Err(CometError::InsufficientHistory {
            required: len.max(end),
            available: values.len().min(end),
        });
    }
    Ok(&values[end - len..end])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub short_len: usize,
    pub medium_len: usize,
    pub long_len: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            short_len: 12,
            medium_len: 24,
            long_len: 60,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.short_len == 0
            || self.short_len > self.medium_len
            || self.medium_len > self.long_len
        {
            return Err(CometError::InvalidConfig(format!(
                "window lengths must satisfy 0 < short <= medium <= long, got {}/{}/{}",
                self.short_len, self.medium_len, self.long_len
            )));
        }
        Ok(())
    }

    pub fn lens(&self) -> [usize; 3] {
        [self.short_len, self.medium_len, self.long_len]
    }

    pub fn total_len(&self) -> usize {
        self.short_len + self.medium_len + self.long_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: TimeSeries,
    pub validation: Option<TimeSeries>,
    pub test: TimeSeries,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train_fraction > 0.0
            && self.train_fraction < 1.0
            && (0.0..1.0).contains(&self.validation_fraction)
            && self.train_fraction + self.validation_fraction < 1.0;
        if !ok {
            return Err(CometError::InvalidConfig(format!(
                "split fractions train={} validation={} must lie in (0,1) x [0,1) and leave a test segment",
                self.train_fraction, self.validation_fraction
            )));
        }
        Ok(())
    }

    /// Segment lengths `(train, validation, test)` for a series of length `n`.
    pub fn lengths(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64 * self.train_fraction).round() as usize).min(n);
        let val = ((n as f64 * self.validation_fraction).round() as usize).min(n - train);
        (train, val, n - train - val)
    }

    /// Contiguous chronological split. Every non-empty segment must hold at
    /// least `min_segment` values; the validation segment may be empty only
    /// when `validation_fraction` is zero.
    pub fn split(&self, series: &TimeSeries, min_segment: usize) -> Result<Split> {
        self.validate()?;
        let (n_train, n_val, n_test) = self.lengths(series.len());
        let check = |name: &str, len: usize| -> Result<()> {
            if len < min_segment {
                return Err(CometError::SeriesTooShort(format!(
                    "{name} segment has {len} values, need at least {min_segment} (series length {})",
                    series.len()
                )));
            }
            Ok(())
        };
        check("train", n_train)?;
        if self.validation_fraction > 0.0 {
            check("validation", n_val)?;
        }
        check("test", n_test)?;
        let v = series.values();
        let validation = if n_val > 0 {
            Some(TimeSeries::new(v[n_train..n_train + n_val].to_vec())?)
        } else {
            None
        };
        Ok(Split {
            train: TimeSeries::new(v[..n_train].to_vec())?,
            validation,
            test: TimeSeries::new(v[n_train + n_val..].to_vec())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn trailing_window() {
        let s = ts(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.window(5, 3).unwrap(), &[3.0, 4.0, 5.0]);
        assert_eq!(ts(&[7.0]).window(1, 1).unwrap(), &[7.0]);
        let full: Vec<f64> = (0..60).map(f64::from).collect();
        assert_eq!(ts(&full).window(60, 60).unwrap(), full.as_slice());
    }

    #[test]
    fn window_out_of_range_names_lengths() {
        let s = ts(&[1.0, 2.0, 3.0]);
        let err = s.window(2, 3).unwrap_err();
        assert!(matches!(
            err,
            CometError::InsufficientHistory {
                required: 3,
                available: 2
            }
        ));
        assert!(err.to_string().contains("insufficient history"));
        assert!(s.window(4, 1).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(TimeSeries::new(vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeries::new(vec![f64::INFINITY]).is_err());
        assert!(TimeSeries::new(vec![]).is_err());
    }

    #[test]
    fn split_lengths() {
        let s = ts(&vec![0.5; 1000]);
        let sp = SplitSpec::default().split(&s, 62).unwrap();
        assert_eq!(sp.train.len(), 700);
        assert_eq!(sp.validation.as_ref().unwrap().len(), 100);
        assert_eq!(sp.test.len(), 200);

        let short = ts(&vec![0.5; 200]);
        let err = SplitSpec::default().split(&short, 62).unwrap_err();
        assert!(err.to_string().contains("validation segment has 20"));

        let long = ts(&vec![0.5; 10_000]);
        let spec = SplitSpec {
            train_fraction: 0.8,
            validation_fraction: 0.0,
        };
        let sp = spec.split(&long, 62).unwrap();
        assert_eq!(sp.train.len(), 8000);
        assert!(sp.validation.is_none());
        assert_eq!(sp.test.len(), 2000);
    }

    #[test]
    fn csv_round_trip_and_rejections() {
        let s = ts(&[1.0, 0.1, -2.5e-7, 123456.789]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(TimeSeries::read_csv(buf.as_slice()).unwrap(), s);

        let nan = "t,value\n0,1.0\n1,NaN\n";
        assert!(matches!(
            TimeSeries::read_csv(nan.as_bytes()),
            Err(CometError::Parse { line: 3, .. })
        ));
        let inf = "t,value\n0,inf\n";
        assert!(TimeSeries::read_csv(inf.as_bytes()).is_err());
        let gap = "t,value\n0,1.0\n2,1.0\n";
        assert!(TimeSeries::read_csv(gap.as_bytes()).is_err());
        let header = "time,value\n0,1.0\n";
        assert!(TimeSeries::read_csv(header.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn split_concatenation_reproduces_input(n in 200usize..2000, train in 0.35f64..0.8, val in 0.0f64..0.15) {
            let values: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
            let s = ts(&values);
            let spec = SplitSpec { train_fraction: train, validation_fraction: val };
            if let Ok(sp) = spec.split(&s, 20) {
                let mut joined = sp.train.values().to_vec();
                if let Some(v) = &sp.validation { joined.extend_from_slice(v.values()); }
                joined.extend_from_slice(sp.test.values());
                prop_assert_eq!(joined, values);
            }
        }

        #[test]
        fn window_preserves_order(n in 1usize..200, len in 1usize..50, offset in 0usize..200) {
            let values: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 - 3.0).collect();
            let end = (len + offset).min(n);
            if end >= len {
                let w = window(&values, end, len).unwrap();
                for (k, x) in w.iter().enumerate() {
                    prop_assert_eq!(*x, values[end - len + k]);
                }
            }
        }
    }
}
