//! Dataset export.
//!
//! ```text
//! disentangle-dataset v1
//! name bumps
//! joint uniform
//! size 16 16
//! points 256
//! factor posX 1 3 5 7 9 11 13 15
//! ...
//! end
//! <points * width * height little-endian f64>
//! ```

use std::io::{BufRead, BufReader, Read, Write};

use super::{FactorSpec, RenderedDataset};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &str = "disentangle-dataset v1";

pub fn write_dataset<W: Write>(d: &RenderedDataset, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "name {}", d.name())?;
    writeln!(w, "joint {}", d.joint_tag())?;
    writeln!(w, "size {} {}", d.width(), d.height())?;
    writeln!(w, "points {}", d.len())?;
    for s in d.factors().specs() {
        let vals: Vec<String> = s.values().iter().map(|v| v.to_string()).collect();
        writeln!(w, "factor {} {}", s.name(), vals.join(" "))?;
    }
    writeln!(w, "end")?;
    for v in d.images().data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// `index,<factor names>,probability`, one row per index.
pub fn write_factor_csv<W: Write>(d: &RenderedDataset, mut w: W) -> Result<()> {
    let names: Vec<&str> = d.factors().specs().iter().map(FactorSpec::name).collect();
    writeln!(w, "index,{},probability", names.join(","))?;
    for n in 0..d.len() {
        let vals: Vec<String> = d.factors().values(n).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{n},{},{}", vals.join(","), d.index_probs()[n])?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of an exported dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub name: String,
    pub joint_tag: String,
    pub width: usize,
    pub height: usize,
    pub factors: Vec<FactorSpec>,
    pub images: Tensor,
}

pub fn read_dataset<R: Read>(r: R) -> Result<DatasetHeader> {
    let mut reader = BufReader::new(r);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("dataset header truncated".into()));
        }
        let line = line.trim_end().to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(Error::Format("not a dataset file".into()));
    }
    let bad = |l: &str| Error::Format(format!("bad header line {l:?}"));
    let num = |t: &str, l: &str| t.parse::<usize>().map_err(|_| bad(l));
    let (mut name, mut joint_tag, mut size, mut points) = (None, None, None, None);
    let mut factors = Vec::new();
    for l in &lines[1..] {
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["name", v] => name = Some(v.to_string()),
            ["joint", v] => joint_tag = Some(v.to_string()),
            ["size", w, h] => size = Some((num(w, l)?, num(h, l)?)),
            ["points", p] => points = Some(num(p, l)?),
            ["factor", fname, vals @ ..] => {
                let values = vals
                    .iter()
                    .map(|v| v.parse::<f64>().map_err(|_| bad(l)))
                    .collect::<Result<Vec<_>>>()?;
                factors.push(FactorSpec::new(*fname, values)?);
            }
            _ => return Err(bad(l)),
        }
    }
    let missing = |k: &str| Error::Format(format!("header is missing {k}"));
    let (width, height) = size.ok_or_else(|| missing("size"))?;
    let points = points.ok_or_else(|| missing("points"))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let expected = points * width * height * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} image bytes, found {}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DatasetHeader {
        name: name.ok_or_else(|| missing("name"))?,
        joint_tag: joint_tag.ok_or_else(|| missing("joint"))?,
        width,
        height,
        factors,
        images: Tensor::new(vec![points, width * height], data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{make_bumps_dataset, make_pose_dataset, PoseConfig};
    use super::*;

    #[test]
    fn roundtrip() {
        let d = make_bumps_dataset(2, 3, 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.name, "bumps");
        assert_eq!(back.joint_tag, "uniform");
        assert_eq!(back.factors, d.factors().specs());
        assert_eq!(back.images.data(), d.images().data());
        buf.pop();
        assert!(read_dataset(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_rows() {
        let d = make_pose_dataset(PoseConfig::B).unwrap();
        let mut buf = Vec::new();
        write_factor_csv(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,azimuth,elevation,probability");
        assert_eq!(lines.len(), 257);
        let total: f64 = lines[1..]
            .iter()
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
