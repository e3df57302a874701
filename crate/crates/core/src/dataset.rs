//! Measurement datasets and their text file format.
//!
//! ```text
//! qst-dataset v1 qubits=<N> povm=pauli4 source=<name> seed=<u64>
//! 0132210…
//! ```
//!
//! One outcome string per line. Writers emit LF; readers accept CRLF.

use std::io::{BufRead, Write};

use crate::error::{QstError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurementDataset {
    pub n_qubits: usize,
    pub outcomes: Vec<Vec<u8>>,
    pub source: String,
    pub seed: u64,
    pub povm_name: String,
}

impl MeasurementDataset {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// First `count` outcomes, keeping provenance.
    pub fn truncated(&self, count: usize) -> MeasurementDataset {
        MeasurementDataset { outcomes: self.outcomes[..count.min(self.len())].to_vec(), ..self.clone() }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "qst-dataset v1 qubits={} povm={} source={} seed={}",
            self.n_qubits, self.povm_name, self.source, self.seed
        )?;
        let mut line = String::with_capacity(self.n_qubits + 1);
        for o in &self.outcomes {
            line.clear();
            line.extend(o.iter().map(|&a| (b'0' + a) as char));
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dataset text is ASCII")
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<MeasurementDataset> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(QstError::Parse { line: 1, msg: "missing header".into() })??;
        let header = header.trim_end_matches('\r');
        let mut fields = header.split(' ');
        if fields.next() != Some("qst-dataset") || fields.next() != Some("v1") {
            return Err(QstError::Parse { line: 1, msg: format!("not a v1 dataset header: `{header}`") });
        }
        let (mut n_qubits, mut povm, mut source, mut seed) = (None, None, None, None);
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| QstError::Parse { line: 1, msg: format!("bad header field `{field}`") })?;
            let bad = |_| QstError::Parse { line: 1, msg: format!("bad value for `{key}`") };
            match key {
                "qubits" => n_qubits = Some(value.parse::<usize>().map_err(bad)?),
                "povm" => povm = Some(value.to_string()),
                "source" => source = Some(value.to_string()),
                "seed" => seed = Some(value.parse::<u64>().map_err(bad)?),
                _ => return Err(QstError::Parse { line: 1, msg: format!("unknown header key `{key}`") }),
            }
        }
        let missing = |k: &str| QstError::Parse { line: 1, msg: format!("header lacks `{k}`") };
        let n_qubits = n_qubits.ok_or_else(|| missing("qubits"))?;
        let povm_name = povm.ok_or_else(|| missing("povm"))?;
        if povm_name != "pauli4" {
            return Err(QstError::Parse { line: 1, msg: format!("unsupported povm `{povm_name}`") });
        }
        let mut outcomes = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.len() != n_qubits {
                return Err(QstError::Parse {
                    line: i + 2,
                    msg: format!("expected {n_qubits} symbols, found {}", line.len()),
                });
            }
            let outcome = line
                .bytes()
                .map(|b| match b {
                    b'0'..=b'3' => Ok(b - b'0'),
                    _ => Err(QstError::Parse { line: i + 2, msg: format!("invalid symbol `{}`", b as char) }),
                })
                .collect::<Result<Vec<u8>>>()?;
            outcomes.push(outcome);
        }
        Ok(MeasurementDataset {
            n_qubits,
            outcomes,
            source: source.ok_or_else(|| missing("source"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            povm_name,
        })
    }

    pub fn from_text(text: &str) -> Result<MeasurementDataset> {
        MeasurementDataset::read_from(text.as_bytes())
    }
}
