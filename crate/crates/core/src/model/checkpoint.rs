//! `BNCM` checkpoint files.
//!
//! ```text
//! "BNCM"  u32 version
//! u64 input_dim  u64 hidden_dim  u64 num_classes
//! f64 leak  f64 dropout_p  u8 include_bn2  f64 bn_eps  f64 bn_momentum
//! u8 init_scheme (0 = he, 1 = xavier)  u64 seed
//! FC_1 weight (input_dim×hidden_dim, row-major)  FC_1 bias
//! BN_1 gamma  beta  running_mean  running_var
//! FC_2 weight (hidden_dim×num_classes)  FC_2 bias
//! [BN_2 gamma  beta  running_mean  running_var]   -- only if include_bn2
//! ```
//!
//! All integers and floats are little-endian; parameters are `f64`.

use std::fs;
use std::path::Path;

use super::{BncModel, ModelConfig};
use crate::bytes::Reader;
use crate::error::{FormatError, Result};
use crate::layers::{BatchNorm, FcLayer, InitScheme};
use crate::linalg::Matrix;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BNCM";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_bn(out: &mut Vec<u8>, bn: &BatchNorm) {
    put_matrix(out, &bn.gamma);
    put_matrix(out, &bn.beta);
    put_matrix(out, &bn.running_mean);
    put_matrix(out, &bn.running_var);
}

fn get_matrix(r: &mut Reader<'_>, rows: usize, cols: usize) -> Result<Matrix> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| FormatError::Header(format!("matrix {rows}x{cols} overflows")))?;
    r.require(n as u64 * 8)?;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            }
            .into());
        }
        data.push(v);
    }
    Matrix::from_vec(rows, cols, data)
}

fn get_bn(r: &mut Reader<'_>, channels: usize, cfg: &ModelConfig) -> Result<BatchNorm> {
    let mut bn = BatchNorm::new(channels, cfg.bn_eps, cfg.bn_momentum)?;
    bn.gamma = get_matrix(r, 1, channels)?;
    bn.beta = get_matrix(r, 1, channels)?;
    bn.running_mean = get_matrix(r, 1, channels)?;
    bn.running_var = get_matrix(r, 1, channels)?;
    if bn.running_var.as_slice().iter().any(|&v| v < 0.0) {
        return Err(FormatError::Header("negative running variance".into()).into());
    }
    Ok(bn)
}

fn usize_field(r: &mut Reader<'_>, name: &str) -> Result<usize> {
    let v = r.u64()?;
    usize::try_from(v).map_err(|_| FormatError::Header(format!("{name}={v} too large")).into())
}

impl BncModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut out = Vec::with_capacity(64 + cfg.parameter_count() * 8 + 4 * cfg.hidden_dim * 8);
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&(cfg.hidden_dim as u64).to_le_bytes());
        out.extend_from_slice(&(cfg.num_classes as u64).to_le_bytes());
        out.extend_from_slice(&cfg.leak.to_le_bytes());
        out.extend_from_slice(&cfg.dropout_p.to_le_bytes());
        out.push(cfg.include_bn2 as u8);
        out.extend_from_slice(&cfg.bn_eps.to_le_bytes());
        out.extend_from_slice(&cfg.bn_momentum.to_le_bytes());
        out.push(match cfg.init_scheme {
            InitScheme::He => 0,
            InitScheme::Xavier => 1,
        });
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        put_matrix(&mut out, &self.fc1.weight);
        put_matrix(&mut out, &self.fc1.bias);
        put_bn(&mut out, &self.bn1);
        put_matrix(&mut out, &self.fc2.weight);
        put_matrix(&mut out, &self.fc2.bias);
        if let Some(bn2) = &self.bn2 {
            put_bn(&mut out, bn2);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        let magic = r.take(4.min(buf.len()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::Magic {
                expected: CHECKPOINT_MAGIC,
                found: magic.to_vec(),
            }
            .into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let input_dim = usize_field(&mut r, "input_dim")?;
        let hidden_dim = usize_field(&mut r, "hidden_dim")?;
        let num_classes = usize_field(&mut r, "num_classes")?;
        let leak = r.f64()?;
        let dropout_p = r.f64()?;
        let include_bn2 = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(FormatError::Header(format!("include_bn2 flag {b}")).into()),
        };
        let bn_eps = r.f64()?;
        let bn_momentum = r.f64()?;
        let init_scheme = match r.u8()? {
            0 => InitScheme::He,
            1 => InitScheme::Xavier,
            b => return Err(FormatError::Header(format!("init scheme {b}")).into()),
        };
        let seed = r.u64()?;
        let cfg = ModelConfig {
            input_dim,
            hidden_dim,
            num_classes,
            leak,
            dropout_p,
            include_bn2,
            bn_eps,
            bn_momentum,
            init_scheme,
            seed,
        };
        cfg.validate()
            .map_err(|e| FormatError::Header(format!("stored config invalid: {e}")))?;

        // Size check up front so corrupt dims cannot trigger huge allocations.
        let bn_floats = 4 * (hidden_dim as u128 + if include_bn2 { num_classes as u128 } else { 0 });
        let floats = input_dim as u128 * hidden_dim as u128
            + hidden_dim as u128
            + hidden_dim as u128 * num_classes as u128
            + num_classes as u128
            + bn_floats;
        let needed = floats * 8;
        if needed > r.remaining() as u128 {
            return Err(FormatError::Truncated {
                needed: ((buf.len() - r.remaining()) as u128 + needed).min(u64::MAX as u128) as u64,
                available: buf.len() as u64,
            }
            .into());
        }

        let fc1 = FcLayer::new(
            get_matrix(&mut r, input_dim, hidden_dim)?,
            get_matrix(&mut r, 1, hidden_dim)?,
        )?;
        let bn1 = get_bn(&mut r, hidden_dim, &cfg)?;
        let fc2 = FcLayer::new(
            get_matrix(&mut r, hidden_dim, num_classes)?,
            get_matrix(&mut r, 1, num_classes)?,
        )?;
        let bn2 = if include_bn2 {
            Some(get_bn(&mut r, num_classes, &cfg)?)
        } else {
            None
        };
        r.finish()?;

        let mut model = BncModel::assemble(cfg, fc1, fc2)
            .map_err(|e| FormatError::Header(format!("stored config invalid: {e}")))?;
        model.bn1 = bn1;
        model.bn2 = bn2;
        model.set_mode(model.mode);
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let buf = fs::read(path)?;
        Self::from_bytes(&buf)
    }
}
