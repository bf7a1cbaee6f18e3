//! Binary I/Q fixture format.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"SGIQ"`               |
//! | 4      | 8    | sample rate, f64 Hz           |
//! | 12     | 8    | sample count, u64             |
//! | 20     | 8*n  | interleaved f32 I, Q pairs    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

pub const MAGIC: &[u8; 4] = b"SGIQ";
pub const HEADER_LEN: usize = 20;

pub fn write_iq<W: Write>(mut w: W, signal: &ComplexSignal) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&signal.sample_rate.to_le_bytes())?;
    w.write_all(&(signal.len() as u64).to_le_bytes())?;
    for s in &signal.samples {
        w.write_all(&(s.re as f32).to_le_bytes())?;
        w.write_all(&(s.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_iq<R: Read>(mut r: R) -> Result<ComplexSignal> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::IqFormat(format!("short header: {e}")))?;
    if &header[0..4] != MAGIC {
        return Err(Error::IqFormat("bad magic".into()));
    }
    let sample_rate = f64::from_le_bytes(header[4..12].try_into().unwrap());
    let len = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != len * 8 {
        return Err(Error::IqFormat(format!(
            "header declares {len} samples but body holds {} bytes",
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    ComplexSignal::new(samples, sample_rate)
        .map_err(|_| Error::IqFormat(format!("invalid sample rate {sample_rate}")))
}

pub fn write_iq_file(path: &Path, signal: &ComplexSignal) -> Result<()> {
    write_iq(BufWriter::new(File::create(path)?), signal)
}

pub fn read_iq_file(path: &Path) -> Result<ComplexSignal> {
    read_iq(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let sig = ComplexSignal::new(vec![Complex64::new(1.0, -2.0)], 1e6).unwrap();
        let mut buf = Vec::new();
        write_iq(&mut buf, &sig).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 8);
        assert_eq!(&buf[0..4], b"SGIQ");
        assert_eq!(f64::from_le_bytes(buf[4..12].try_into().unwrap()), 1e6);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[20..24].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(buf[24..28].try_into().unwrap()), -2.0);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_iq(&b"NOPE"[..]).is_err());
        let sig = ComplexSignal::new(vec![Complex64::new(1.0, 0.0); 4], 1e6).unwrap();
        let mut buf = Vec::new();
        write_iq(&mut buf, &sig).unwrap();
        buf.pop();
        assert!(matches!(read_iq(&buf[..]), Err(Error::IqFormat(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_f32_exact(vals in prop::collection::vec((-1e3f32..1e3, -1e3f32..1e3), 0..64),
                                  fs in 1.0f64..1e9) {
            let samples: Vec<Complex64> =
                vals.iter().map(|&(a, b)| Complex64::new(a as f64, b as f64)).collect();
            let sig = ComplexSignal::new(samples, fs).unwrap();
            let mut buf = Vec::new();
            write_iq(&mut buf, &sig).unwrap();
            let back = read_iq(&buf[..]).unwrap();
            prop_assert_eq!(back, sig);
        }
    }
}
