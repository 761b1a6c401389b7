//! Byte protocol for delegating predictions to another process.
//!
//! Request:  `DPR1` | u32 side | u32 D | f32 step_mm | side³ × f32 values (x-fastest)
//! Response: `DPA1` | f32 radius_mm | D × f32 magnitudes
//!
//! All numbers are little-endian.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use super::{DirectionSet, EndpointQuery, Prediction, Predictor, PredictorError};
use crate::real::Real;
use crate::volume::Patch;

pub const REQUEST_MAGIC: &[u8; 4] = b"DPR1";
pub const RESPONSE_MAGIC: &[u8; 4] = b"DPA1";
const SUM_TOL: f64 = 1e-3;
const NEG_TOL: f64 = -1e-6;

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn bridge_io(e: io::Error) -> PredictorError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        PredictorError::Bridge("short read".into())
    } else {
        PredictorError::Io(e)
    }
}

/// A decoded prediction request.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRequest {
    pub side: usize,
    pub directions: usize,
    pub step_mm: f32,
    pub values: Vec<f32>,
}

impl PatchRequest {
    /// The patch, centred at the origin (the protocol does not carry the
    /// world position).
    pub fn to_patch<T: Real>(&self) -> Patch<T> {
        Patch {
            side: self.side,
            values: self.values.iter().map(|v| T::lit(*v as f64)).collect(),
            center: crate::geom::Vec3::zero(),
            step_mm: T::lit(self.step_mm as f64),
        }
    }
}

pub fn write_request<T: Real>(w: &mut impl Write, patch: &Patch<T>, directions: usize) -> io::Result<()> {
    w.write_all(REQUEST_MAGIC)?;
    w.write_all(&(patch.side as u32).to_le_bytes())?;
    w.write_all(&(directions as u32).to_le_bytes())?;
    w.write_all(&(patch.step_mm.to_f64_lossy() as f32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(patch.values.len() * 4);
    for v in &patch.values {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

/// Reads one request; `Ok(None)` on a clean end of stream.
pub fn read_request(r: &mut impl Read) -> Result<Option<PatchRequest>, PredictorError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(PredictorError::Bridge("short read".into()));
        }
        got += n;
    }
    if &magic != REQUEST_MAGIC {
        return Err(PredictorError::Bridge(format!("bad request magic {magic:?}")));
    }
    let side = read_u32(r).map_err(bridge_io)? as usize;
    let directions = read_u32(r).map_err(bridge_io)? as usize;
    let step_mm = read_f32(r).map_err(bridge_io)?;
    let values = read_f32s(r, side * side * side).map_err(bridge_io)?;
    Ok(Some(PatchRequest {
        side,
        directions,
        step_mm,
        values,
    }))
}

pub fn write_response<T: Real>(w: &mut impl Write, pred: &Prediction<T>) -> io::Result<()> {
    let mut buf = Vec::with_capacity(8 + pred.magnitudes.len() * 4);
    buf.extend_from_slice(RESPONSE_MAGIC);
    buf.extend_from_slice(&(pred.radius_mm.to_f64_lossy() as f32).to_le_bytes());
    for k in &pred.magnitudes {
        buf.extend_from_slice(&(k.to_f64_lossy() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

/// Reads and validates one response, renormalising the magnitudes.
pub fn read_response<T: Real>(r: &mut impl Read, directions: usize) -> Result<Prediction<T>, PredictorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(bridge_io)?;
    if &magic != RESPONSE_MAGIC {
        return Err(PredictorError::Bridge(format!("bad response magic {magic:?}")));
    }
    let radius = read_f32(r).map_err(bridge_io)?;
    let raw = read_f32s(r, directions).map_err(bridge_io)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(PredictorError::BadRadius(f64::from(radius)));
    }
    if let Some((i, v)) = raw.iter().enumerate().find(|(_, v)| !(f64::from(**v) >= NEG_TOL)) {
        return Err(PredictorError::Simplex(format!("magnitude {i} is {v}")));
    }
    let sum: f64 = raw.iter().map(|&v| f64::from(v).max(0.0)).sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(PredictorError::Simplex(format!("magnitudes sum to {sum}")));
    }
    Ok(Prediction {
        radius_mm: T::lit(f64::from(radius)),
        magnitudes: raw.iter().map(|&v| T::lit(f64::from(v).max(0.0) / sum)).collect(),
    })
}

/// Sends every patch over a byte stream pair and reads back the answer.
pub struct ExternalPredictor<R, W> {
    reader: R,
    writer: W,
    child: Option<Child>,
}

impl<R: Read, W: Write> ExternalPredictor<R, W> {
    pub fn from_streams(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            child: None,
        }
    }
}

impl ExternalPredictor<BufReader<ChildStdout>, BufWriter<ChildStdin>> {
    /// Launches `program args...` and talks to it over stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, PredictorError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            reader: BufReader::new(stdout),
            writer: BufWriter::new(stdin),
            child: Some(child),
        })
    }
}

impl<R, W> Drop for ExternalPredictor<R, W> {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            // Closing stdin (dropped with the writer afterwards) ends a
            // well-behaved server; don't leave a stuck one behind.
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

impl<T: Real, R: Read, W: Write> Predictor<T> for ExternalPredictor<R, W> {
    fn predict(
        &mut self,
        query: &EndpointQuery<'_, T>,
        dirs: &DirectionSet<T>,
    ) -> Result<Prediction<T>, PredictorError> {
        let patch = query.patch()?;
        write_request(&mut self.writer, &patch, dirs.len())?;
        read_response(&mut self.reader, dirs.len())
    }

    fn name(&self) -> &'static str {
        "external"
    }
}
