//! Right-censored survival records and CSV ingestion.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: covariates, observed time `o = min(T, C)` and event indicator `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub x: Vec<f64>,
    pub time: f64,
    pub event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<SurvivalRecord>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, records: Vec<SurvivalRecord>) -> Result<Self> {
        let d = feature_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != d {
                return Err(Error::shape("dataset record", &[i, r.x.len()], &[d]));
            }
            if !(r.time >= 0.0 && r.time.is_finite()) {
                return Err(Error::DegenerateData(format!(
                    "record {i}: observed time {} must be finite and >= 0",
                    r.time
                )));
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::DegenerateData(format!("record {i}: non-finite covariate")));
            }
        }
        Ok(Self {
            feature_names,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Row-major covariate matrix.
    pub fn covariates(&self) -> Vec<f64> {
        self.records.iter().flat_map(|r| r.x.iter().copied()).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Per-column mean and standard deviation. Constant columns get scale 1.
    pub fn standardization(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in &self.records {
            for (m, v) in mean.iter_mut().zip(&r.x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in &self.records {
            for ((s, v), m) in var.iter_mut().zip(&r.x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        (mean, std)
    }

    /// Reads a CSV with a header row holding `time`, `event` and covariate columns.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let time_col = find("time").ok_or_else(|| Error::Ingestion {
            column: "time".into(),
            line: 1,
            message: "required column is missing".into(),
        })?;
        let event_col = find("event").ok_or_else(|| Error::Ingestion {
            column: "event".into(),
            line: 1,
            message: "required column is missing".into(),
        })?;
        let cov_cols: Vec<usize> = (0..headers.len())
            .filter(|&c| c != time_col && c != event_col)
            .collect();
        let feature_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].to_string()).collect();
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec?;
            if rec.len() != headers.len() {
                return Err(Error::Ingestion {
                    column: "*".into(),
                    line,
                    message: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
            }
            let field = |c: usize| -> Result<f64> {
                let raw = &rec[c];
                let v: f64 = raw.parse().map_err(|_| Error::Ingestion {
                    column: headers[c].to_string(),
                    line,
                    message: format!("`{raw}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion {
                        column: headers[c].to_string(),
                        line,
                        message: "value is missing or not finite".into(),
                    });
                }
                Ok(v)
            };
            let time = field(time_col)?;
            if time < 0.0 {
                return Err(Error::Ingestion {
                    column: "time".into(),
                    line,
                    message: format!("negative observed time {time}"),
                });
            }
            let event = match &rec[event_col] {
                "1" | "1.0" | "true" => true,
                "0" | "0.0" | "false" => false,
                other => {
                    return Err(Error::Ingestion {
                        column: "event".into(),
                        line,
                        message: format!("`{other}` is not 0 or 1"),
                    })
                }
            };
            let x = cov_cols.iter().map(|&c| field(c)).collect::<Result<Vec<_>>>()?;
            records.push(SurvivalRecord { x, time, event });
        }
        Dataset::new(feature_names, records)
    }

    /// Writes `x…, time, event` with round-trip float formatting.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.push("time".into());
        header.push("event".into());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.x.iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{:?}", r.time));
            row.push(if r.event { "1" } else { "0" }.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Covariate-only CSV for prediction. Returns column names and row-major values.
pub fn read_covariates<R: Read>(reader: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Ingestion {
            column: "*".into(),
            line: 1,
            message: "no columns".into(),
        });
    }
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        if rec.len() != headers.len() {
            return Err(Error::Ingestion {
                column: "*".into(),
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (c, raw) in rec.iter().enumerate() {
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Ingestion {
                        column: names[c].clone(),
                        line,
                        message: format!("`{raw}` is not a finite number"),
                    })
                }
            }
        }
    }
    Ok((names, values))
}

/// Parses `start:stop:count` (inclusive, evenly spaced) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::Config(format!("grid `{spec}`: {m}"));
    let spec = spec.trim();
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:count".into()));
        }
        let start: f64 = parts[0].trim().parse().map_err(|_| bad("bad start".into()))?;
        let stop: f64 = parts[1].trim().parse().map_err(|_| bad("bad stop".into()))?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad("bad count".into()))?;
        if count == 0 || count > 1_000_000 {
            return Err(bad("count must be in 1..=1000000".into()));
        }
        if count == 1 {
            vec![start]
        } else {
            let step = (stop - start) / (count - 1) as f64;
            (0..count).map(|i| start + step * i as f64).collect()
        }
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad(format!("`{p}` is not a number"))))
            .collect::<Result<_>>()?
    };
    if grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(bad("times must be finite and >= 0".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(bad("times must be ascending".into()));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_columns_in_any_order() {
        let text = "event,age,time,bmi\n1,50,2.5,22.1\n0,61,4,30\n";
        let d = Dataset::from_csv(text.as_bytes()).unwrap();
        assert_eq!(d.feature_names, vec!["age", "bmi"]);
        assert_eq!(d.records[0].x, vec![50.0, 22.1]);
        assert!(d.records[0].event);
        assert_eq!(d.records[1].time, 4.0);
    }

    #[test]
    fn ingestion_errors_name_the_column() {
        let missing = Dataset::from_csv("x,event\n1,1\n".as_bytes()).unwrap_err();
        assert!(missing.to_string().contains("time"), "{missing}");
        let bad = Dataset::from_csv("x,time,event\nfoo,1,1\n".as_bytes()).unwrap_err();
        match bad {
            Error::Ingestion { column, line, .. } => {
                assert_eq!(column, "x");
                assert_eq!(line, 2);
            }
            other => panic!("{other}"),
        }
        let ev = Dataset::from_csv("x,time,event\n1,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(ev, Error::Ingestion { ref column, .. } if column == "event"));
        let neg = Dataset::from_csv("x,time,event\n1,-1,0\n".as_bytes()).unwrap_err();
        assert!(matches!(neg, Error::Ingestion { ref column, .. } if column == "time"));
        let empty_cell = Dataset::from_csv("x,time,event\n,1,0\n".as_bytes()).unwrap_err();
        assert!(matches!(empty_cell, Error::Ingestion { ref column, .. } if column == "x"));
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.5, 1,2").unwrap(), vec![0.5, 1.0, 2.0]);
        assert!(parse_grid("2,1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("-1,0").is_err());
    }

    #[test]
    fn constant_columns_keep_unit_scale() {
        let recs = vec![
            SurvivalRecord { x: vec![1.0, 2.0], time: 1.0, event: true },
            SurvivalRecord { x: vec![1.0, 4.0], time: 2.0, event: false },
        ];
        let d = Dataset::new(vec!["a".into(), "b".into()], recs).unwrap();
        let (m, s) = d.standardization();
        assert_eq!(m, vec![1.0, 3.0]);
        assert_eq!(s, vec![1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            rows in prop::collection::vec((-1e6f64..1e6, 0f64..1e4, any::<bool>()), 1..30)
        ) {
            let records: Vec<_> = rows
                .iter()
                .map(|&(x, t, e)| SurvivalRecord { x: vec![x], time: t, event: e })
                .collect();
            let d = Dataset::new(vec!["x".into()], records).unwrap();
            let mut buf = Vec::new();
            d.to_csv(&mut buf).unwrap();
            prop_assert_eq!(Dataset::from_csv(buf.as_slice()).unwrap(), d);
        }
    }
}
