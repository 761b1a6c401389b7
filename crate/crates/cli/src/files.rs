//! Loading and saving with the path in every error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};
use snaketrace::io::{read_dvol, read_swc, write_dvol, write_swc, TraceFile};
use snaketrace::Volume;

pub fn read_volume(path: &Path) -> Result<Volume> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_dvol(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_dvol(&mut w, vol).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<TraceFile<f64>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_swc(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_traces(path: &Path, file: &TraceFile<f64>) -> Result<()> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_swc(&mut w, file).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("cannot create directory {}", path.display()))
}
