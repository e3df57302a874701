//! Text checkpoint format.
//!
//! ```text
//! qst-model v1 qubits=<N> hidden=<H> layers=<L> epoch=<E>
//! block <name> <rows> <cols>
//! <row-major values, one matrix row per line>
//! ```
//!
//! Values carry 17 significant digits, so a round trip is bit-exact.

use std::io::{BufRead, Write};

use super::params::{ModelConfig, ModelParams};
use crate::error::{QstError, Result};

pub fn write_checkpoint<W: Write>(params: &ModelParams, epoch: usize, mut w: W) -> Result<()> {
    writeln!(
        w,
        "qst-model v1 qubits={} hidden={} layers={} epoch={}",
        params.n_qubits,
        params.hidden_size(),
        params.n_layers(),
        epoch
    )?;
    let mut line = String::new();
    for (name, block) in params.named_blocks() {
        writeln!(w, "block {} {} {}", name, block.nrows(), block.ncols())?;
        for row in block.rows() {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> QstError {
    QstError::Parse { line, msg: msg.into() }
}

/// Reads a checkpoint, returning the parameters and the recorded epoch.
pub fn read_checkpoint<R: BufRead>(r: R) -> Result<(ModelParams, usize)> {
    let mut lines = r.lines().enumerate().map(|(i, l)| l.map(|l| (i + 1, l.trim_end_matches('\r').to_string())));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty checkpoint"))??;
    let mut fields = header.split(' ');
    if fields.next() != Some("qst-model") || fields.next() != Some("v1") {
        return Err(parse_err(1, format!("not a v1 model header: `{header}`")));
    }
    let (mut qubits, mut hidden, mut layers, mut epoch) = (None, None, None, None);
    for field in fields {
        let (k, v) = field.split_once('=').ok_or_else(|| parse_err(1, format!("bad field `{field}`")))?;
        let v: usize = v.parse().map_err(|_| parse_err(1, format!("bad value for `{k}`")))?;
        match k {
            "qubits" => qubits = Some(v),
            "hidden" => hidden = Some(v),
            "layers" => layers = Some(v),
            "epoch" => epoch = Some(v),
            _ => return Err(parse_err(1, format!("unknown header key `{k}`"))),
        }
    }
    let need = |x: Option<usize>, k: &str| x.ok_or_else(|| parse_err(1, format!("header lacks `{k}`")));
    let config = ModelConfig {
        n_qubits: need(qubits, "qubits")?,
        hidden_size: need(hidden, "hidden")?,
        n_layers: need(layers, "layers")?,
        seed: 0,
    };
    let epoch = need(epoch, "epoch")?;
    config.validate()?;

    let mut params = ModelParams::zeros(&config);
    let names = params.block_names();
    for (name, block) in names.iter().zip(params.blocks_mut()) {
        let (ln, line) = lines.next().ok_or_else(|| parse_err(0, format!("missing block `{name}`")))??;
        let parts: Vec<&str> = line.split(' ').collect();
        let expected = [block.nrows().to_string(), block.ncols().to_string()];
        if parts.len() != 4 || parts[0] != "block" || parts[1] != name || parts[2..] != expected {
            return Err(parse_err(ln, format!("expected `block {name} {} {}`, found `{line}`", expected[0], expected[1])));
        }
        for mut row in block.rows_mut() {
            let (ln, line) = lines.next().ok_or_else(|| parse_err(0, format!("truncated block `{name}`")))??;
            let values: Vec<&str> = line.split(' ').collect();
            if values.len() != row.len() {
                return Err(parse_err(ln, format!("expected {} values, found {}", row.len(), values.len())));
            }
            for (slot, v) in row.iter_mut().zip(values) {
                *slot = v.parse().map_err(|_| parse_err(ln, format!("bad number `{v}`")))?;
            }
        }
    }
    if let Some(extra) = lines.next() {
        let (ln, _) = extra?;
        return Err(parse_err(ln, "trailing content after last block"));
    }
    Ok((params, epoch))
}

pub fn checkpoint_to_string(params: &ModelParams, epoch: usize) -> String {
    let mut buf = Vec::new();
    write_checkpoint(params, epoch, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("checkpoint text is ASCII")
}

pub fn checkpoint_from_str(text: &str) -> Result<(ModelParams, usize)> {
    read_checkpoint(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_model;
    use proptest::prelude::*;

    #[test]
    fn header_and_round_trip() {
        let p = init_model(&ModelConfig { n_qubits: 4, hidden_size: 3, n_layers: 2, seed: 5 }).unwrap();
        let text = checkpoint_to_string(&p, 12);
        assert!(text.starts_with("qst-model v1 qubits=4 hidden=3 layers=2 epoch=12\nblock fwd.embedding 5 3\n"));
        let (back, epoch) = checkpoint_from_str(&text).unwrap();
        assert_eq!(epoch, 12);
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_truncation() {
        let p = init_model(&ModelConfig { n_qubits: 2, hidden_size: 2, n_layers: 1, seed: 5 }).unwrap();
        let text = checkpoint_to_string(&p, 1);
        let cut = &text[..text.len() / 2];
        assert!(checkpoint_from_str(cut).is_err());
        assert!(checkpoint_from_str("qst-dataset v1\n").is_err());
    }

    proptest! {
        #[test]
        fn values_round_trip_bit_exact(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let mut p = ModelParams::zeros(&ModelConfig { n_qubits: 1, hidden_size: 1, n_layers: 1, seed: 0 });
            p.backward.layers[0].u_h[[0, 0]] = v;
            p.forward.out_b[[0, 2]] = -v;
            let (back, _) = checkpoint_from_str(&checkpoint_to_string(&p, 0)).unwrap();
            prop_assert_eq!(back.backward.layers[0].u_h[[0, 0]].to_bits(), v.to_bits());
            prop_assert_eq!(back.forward.out_b[[0, 2]].to_bits(), (-v).to_bits());
        }
    }
}
