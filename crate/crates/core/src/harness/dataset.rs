use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Residual,
    Boundary,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFidelity {
    Low,
    High,
    Test,
}

impl Role {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "residual" => Some(Role::Residual),
            "boundary" => Some(Role::Boundary),
            "labeled" => Some(Role::Labeled),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Role::Residual => "residual",
            Role::Boundary => "boundary",
            Role::Labeled => "labeled",
        }
    }
}

impl DataFidelity {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(DataFidelity::Low),
            "high" => Some(DataFidelity::High),
            "test" => Some(DataFidelity::Test),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DataFidelity::Low => "low",
            DataFidelity::High => "high",
            DataFidelity::Test => "test",
        }
    }
}

/// One CSV row. Missing outputs leave that component unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub x: Vec<f64>,
    pub y: Vec<Option<f64>>,
    pub role: Role,
    pub fidelity: DataFidelity,
}

impl DataRow {
    pub fn labeled(x: Vec<f64>, y: &[f64], fidelity: DataFidelity) -> Self {
        DataRow {
            x,
            y: y.iter().copied().map(Some).collect(),
            role: Role::Labeled,
            fidelity,
        }
    }

    /// Output values if every component is present.
    pub fn full(&self) -> Option<Vec<f64>> {
        self.y.iter().copied().collect()
    }
}

/// Input columns, output columns, then `role` and `fidelity`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub rows: Vec<DataRow>,
}

impl Dataset {
    pub fn new(inputs: &[&str], outputs: &[&str]) -> Self {
        Dataset {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: DataRow) {
        self.rows.push(row);
    }

    pub fn select(&self, role: Role, fidelity: DataFidelity) -> impl Iterator<Item = &DataRow> {
        self.rows.iter().filter(move |r| r.role == role && r.fidelity == fidelity)
    }

    /// Test points and their (complete) truths.
    pub fn test_split(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.select(Role::Labeled, DataFidelity::Test)
            .filter_map(|r| Some((r.x.clone(), r.full()?)))
            .unzip()
    }

    /// Fails unless the columns are exactly `inputs` then `outputs`.
    pub fn check_columns(&self, inputs: &[&str], outputs: &[&str]) -> Result<()> {
        if self.inputs != inputs || self.outputs != outputs {
            return Err(Error::Dataset {
                line: 1,
                message: format!(
                    "columns {:?} + {:?} do not match the problem's {inputs:?} + {outputs:?}",
                    self.inputs, self.outputs
                ),
            });
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, inputs: &[&str], outputs: &[&str]) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, inputs, outputs)
    }

    /// Parses a dataset whose header must name `inputs`, `outputs`, `role`, `fidelity`.
    pub fn from_reader(reader: impl Read, inputs: &[&str], outputs: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let (ni, no) = (inputs.len(), outputs.len());
        let mut expected: Vec<&str> = inputs.to_vec();
        expected.extend_from_slice(outputs);
        expected.extend(["role", "fidelity"]);
        if header != expected {
            return Err(Error::Dataset {
                line: 1,
                message: format!("header {header:?}, expected {expected:?}"),
            });
        }
        let mut ds = Dataset::new(inputs, outputs);
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let bad = |message: String| Error::Dataset { line, message };
            if rec.len() != expected.len() {
                return Err(bad(format!("{} fields, expected {}", rec.len(), expected.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")))
            };
            let x = (0..ni).map(|i| num(&rec[i])).collect::<Result<Vec<_>>>()?;
            let y = (ni..ni + no)
                .map(|i| if rec[i].is_empty() { Ok(None) } else { num(&rec[i]).map(Some) })
                .collect::<Result<Vec<_>>>()?;
            let role = Role::parse(&rec[ni + no]).ok_or_else(|| bad(format!("unknown role `{}`", &rec[ni + no])))?;
            let fidelity = DataFidelity::parse(&rec[ni + no + 1])
                .ok_or_else(|| bad(format!("unknown fidelity `{}`", &rec[ni + no + 1])))?;
            if x.iter().chain(y.iter().flatten()).any(|v| !v.is_finite()) {
                return Err(bad("non-finite value".into()));
            }
            match role {
                Role::Residual if y.iter().any(Option::is_some) => {
                    return Err(bad("residual rows carry no output values".into()));
                }
                Role::Residual if fidelity == DataFidelity::Test => {
                    return Err(bad("residual rows cannot be test rows".into()));
                }
                Role::Labeled | Role::Boundary if y.iter().all(Option::is_none) => {
                    return Err(bad("row has no output values".into()));
                }
                _ => {}
            }
            if fidelity == DataFidelity::Test && (role != Role::Labeled || y.iter().any(Option::is_none)) {
                return Err(bad("test rows must be labeled with every output".into()));
            }
            ds.push(DataRow { x, y, role, fidelity });
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_writer(file)
    }

    pub fn to_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.inputs.clone();
        header.extend(self.outputs.iter().cloned());
        header.extend(["role".to_string(), "fidelity".to_string()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.x.iter().map(f64::to_string).collect();
            rec.extend(r.y.iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
            rec.push(r.role.name().into());
            rec.push(r.fidelity.name().into());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<dataset>", e))?;
        Ok(())
    }
}
