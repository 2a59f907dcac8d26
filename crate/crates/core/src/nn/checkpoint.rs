//! Text checkpoints: one header line with a JSON record, then one parameter per line.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpParams, MlpSpec};
use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;

const MAGIC: &str = "# hedgekit-checkpoint ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub init_seed: u64,
    pub n_params: usize,
    /// Free-form provenance (training config, iteration, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, net: &Mlp<T>, meta: serde_json::Value) -> Result<()> {
    let header = Checkpoint {
        spec: net.spec().clone(),
        init_seed: net.params().init_seed(),
        n_params: net.n_params(),
        meta,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{MAGIC}{json}")?;
    for v in net.params().values() {
        // shortest round-trip representation
        writeln!(out, "{}", v.as_f64())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a checkpoint and checks it against `expected`; any difference is a contract error.
pub fn load_checkpoint<T: Scalar>(path: &Path, expected: &MlpSpec) -> Result<(Mlp<T>, Checkpoint)> {
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let first = lines.next().ok_or_else(|| Error::Format("empty checkpoint file".into()))??;
    let json = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Format("missing checkpoint header".into()))?;
    let header: Checkpoint = serde_json::from_str(json).map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
    if &header.spec != expected {
        return Err(contract_err(format!(
            "checkpoint network {:?} does not match the expected {:?}",
            header.spec, expected
        )));
    }
    let mut values = Vec::with_capacity(header.n_params);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::Format(format!("parameter {i} is not a number: {line:?}")))?;
        values.push(T::lit(v));
    }
    if values.len() != header.n_params {
        return Err(Error::Format(format!(
            "checkpoint header promises {} parameters, file holds {}",
            header.n_params,
            values.len()
        )));
    }
    let params = MlpParams::from_values(expected, values, header.init_seed)?;
    Ok((Mlp::new(expected.clone(), params)?, header))
}
