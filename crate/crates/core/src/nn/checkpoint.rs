//! JSON network checkpoints.
//!
//! ```json
//! {"format":"dhpm-mlp","version":1,"widths":[2,50,1],"activation":"tanh","seed":0,"params":[...]}
//! ```
//! `params` is [`MlpParams::flatten`] order. Floats are written in shortest
//! round-trip form and parsed exactly, so a save/load cycle is bitwise.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, MlpParams, NnError};

const FORMAT: &str = "dhpm-mlp";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MlpFile {
    format: String,
    version: u32,
    widths: Vec<usize>,
    activation: String,
    seed: u64,
    params: Vec<f64>,
}

pub fn write_mlp<W: Write>(params: &MlpParams, mut out: W) -> Result<(), NnError> {
    let file = MlpFile {
        format: FORMAT.into(),
        version: VERSION,
        widths: params.widths().to_vec(),
        activation: params.activation().tag().into(),
        seed: params.seed(),
        params: params.flatten(),
    };
    serde_json::to_writer(&mut out, &file).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_mlp<R: Read>(input: R) -> Result<MlpParams, NnError> {
    let file: MlpFile =
        serde_json::from_reader(input).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let activation = Activation::from_tag(&file.activation)
        .ok_or_else(|| NnError::Checkpoint(format!("unknown activation {}", file.activation)))?;
    let mut params = MlpParams::zeros(&file.widths, activation)?.with_seed(file.seed);
    params.set_flat(&file.params)?;
    Ok(params)
}

pub fn save_mlp(params: &MlpParams, path: &Path) -> Result<(), NnError> {
    let f = std::fs::File::create(path)?;
    write_mlp(params, std::io::BufWriter::new(f))
}

pub fn load_mlp(path: &Path) -> Result<MlpParams, NnError> {
    let f = std::fs::File::open(path)?;
    read_mlp(std::io::BufReader::new(f))
}
