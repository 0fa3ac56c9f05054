//! Checkpoint format: a short UTF-8 header terminated by an `end` line,
//! followed by every parameter as a little-endian `f64` in store order.
//!
//! ```text
//! disentangle-checkpoint v1
//! encoder 256 128 12
//! decoder 6 128 256
//! latent_dim 6
//! seed 42
//! values 66444
//! end
//! <values * 8 bytes>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Vae, VaeConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "disentangle-checkpoint v1";

fn join(dims: &[usize]) -> String {
    dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(vae: &Vae, mut w: W) -> Result<()> {
    let flat = vae.params().flatten();
    let c = vae.config();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "encoder {}", join(&c.encoder_dims()))?;
    writeln!(w, "decoder {}", join(&c.decoder_dims()))?;
    writeln!(w, "latent_dim {}", c.latent_dim)?;
    writeln!(w, "seed {}", vae.seed())?;
    writeln!(w, "values {}", flat.len())?;
    writeln!(w, "end")?;
    for v in flat {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("bad layer width {t:?}")))
        })
        .collect()
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Vae> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut reader)? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let (mut encoder, mut decoder, mut latent, mut seed, mut values) = (None, None, None, None, None);
    loop {
        let l = next_line(&mut reader)?;
        if l == "end" {
            break;
        }
        let (key, rest) = l.split_once(' ').unwrap_or((l.as_str(), ""));
        let num = |s: &str| -> Result<u64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {key}: {s:?}")))
        };
        match key {
            "encoder" => encoder = Some(parse_dims(rest)?),
            "decoder" => decoder = Some(parse_dims(rest)?),
            "latent_dim" => latent = Some(num(rest)? as usize),
            "seed" => seed = Some(num(rest)?),
            "values" => values = Some(num(rest)? as usize),
            other => return Err(Error::Format(format!("unknown header key {other:?}"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("header is missing {k}"));
    let encoder = encoder.ok_or_else(|| missing("encoder"))?;
    let decoder = decoder.ok_or_else(|| missing("decoder"))?;
    let latent_dim = latent.ok_or_else(|| missing("latent_dim"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    let values = values.ok_or_else(|| missing("values"))?;
    if encoder.len() < 2 {
        return Err(Error::Format("encoder needs at least two widths".into()));
    }
    let config = VaeConfig {
        input_dim: encoder[0],
        hidden: encoder[1..encoder.len() - 1].to_vec(),
        latent_dim,
    };
    if config.encoder_dims() != encoder || config.decoder_dims() != decoder {
        return Err(Error::Format(format!(
            "inconsistent layer widths: encoder {encoder:?}, decoder {decoder:?}, latent {latent_dim}"
        )));
    }
    let mut vae = Vae::new(config, seed)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != values * 8 {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            values * 8,
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    vae.params_mut().load_flat(&flat)?;
    Ok(vae)
}

pub fn save_checkpoint(vae: &Vae, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(vae, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vae> {
    read_checkpoint(File::open(path)?)
}
