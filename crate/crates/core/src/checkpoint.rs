//! Binary parameter files.
//!
//! Layout, little-endian: magic `BGNNCKPT`, u32 format version, u8 utility
//! code, u32 M, u32 T, then the C, M and D networks. Each network is a u32
//! layer count followed by, per layer, u32 n_in, u32 n_out, u8 activation,
//! n_in·n_out f64 weights (row-major) and n_out f64 biases.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::{Activation, Dense, DenseNet};
use crate::beamcore::Utility;
use crate::bgnn::{BgnnConfig, BgnnParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BGNNCKPT";
pub const VERSION: u32 = 1;

/// Largest layer width accepted when reading, to reject corrupt headers early.
const MAX_WIDTH: u32 = 1 << 20;

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", detail: detail.into() }
}

fn write_net(w: &mut impl Write, net: &DenseNet) -> Result<()> {
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for l in net.layers() {
        w.write_all(&(l.n_in as u32).to_le_bytes())?;
        w.write_all(&(l.n_out as u32).to_le_bytes())?;
        w.write_all(&[l.act.code()])?;
        for x in l.weights.iter().chain(&l.bias) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write(params: &BgnnParams, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[params.config.mode.code()])?;
    w.write_all(&(params.config.msg_dim as u32).to_le_bytes())?;
    w.write_all(&(params.config.iterations as u32).to_le_bytes())?;
    for net in [&params.c_net, &params.m_net, &params.d_net] {
        write_net(&mut w, net)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => bad("truncated file"),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }

    fn net(&mut self) -> Result<DenseNet> {
        let count = self.u32()?;
        if count == 0 || count > 64 {
            return Err(bad(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let (n_in, n_out) = (self.u32()?, self.u32()?);
            if n_in == 0 || n_out == 0 || n_in > MAX_WIDTH || n_out > MAX_WIDTH {
                return Err(bad(format!("implausible layer shape {n_in}x{n_out}")));
            }
            let code = self.u8()?;
            let act = Activation::from_code(code).ok_or_else(|| bad(format!("unknown activation code {code}")))?;
            let (n_in, n_out) = (n_in as usize, n_out as usize);
            let weights = self.f64s(n_in * n_out)?;
            let bias = self.f64s(n_out)?;
            if weights.iter().chain(&bias).any(|x| !x.is_finite()) {
                return Err(bad("non-finite parameter"));
            }
            layers.push(Dense { n_in, n_out, weights, bias, act });
        }
        DenseNet::new(layers)
    }
}

pub fn read(r: impl Read) -> Result<BgnnParams> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(bad("missing magic header"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let code = r.u8()?;
    let mode = Utility::from_code(code).ok_or_else(|| bad(format!("unknown utility code {code}")))?;
    let msg_dim = r.u32()? as usize;
    let iterations = r.u32()? as usize;
    let c_net = r.net()?;
    let m_net = r.net()?;
    let d_net = r.net()?;
    let mut rest = Vec::new();
    r.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    let hidden = c_net.layers()[0].n_out;
    let config = BgnnConfig { mode, msg_dim, iterations, hidden };
    BgnnParams::from_nets(config, c_net, m_net, d_net)
}

pub fn to_bytes(params: &BgnnParams) -> Vec<u8> {
    let mut out = Vec::new();
    write(params, &mut out).expect("writing to memory cannot fail");
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<BgnnParams> {
    read(bytes)
}

pub fn save(params: &BgnnParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<BgnnParams> {
    from_bytes(&std::fs::read(path)?)
}
