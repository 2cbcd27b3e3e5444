//! JSON-lines experiment files: one `{"t":..,"motors":[25],"chem":[25]}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::frames::{ExperimentRecord, Frame};
use crate::error::{Error, Result};

pub fn write_record(record: &ExperimentRecord, mut out: impl Write) -> Result<()> {
    for frame in record.frames() {
        serde_json::to_writer(&mut out, frame)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_record(input: impl Read) -> Result<ExperimentRecord> {
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidData(format!("line {}: {e}", n + 1)))?;
        frames.push(frame);
    }
    ExperimentRecord::new(frames)
}

pub fn save(record: &ExperimentRecord, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_record(record, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ExperimentRecord> {
    read_record(File::open(path)?)
}
