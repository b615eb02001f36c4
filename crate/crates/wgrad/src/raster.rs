//! WGRD v1 raster files.

use std::path::Path;

use wgrad_core::fields::{decode_raster, encode_raster, Field2D, StateTensor};

use crate::error::{CliError, CoreResultExt, Result};

pub fn read_raster(path: &Path) -> Result<StateTensor> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_raster(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_raster(t: &StateTensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_raster(t)).map_err(|e| CliError::io(path, e))
}

/// One-channel raster bytes of a field.
pub fn field_bytes(f: &Field2D) -> Result<Vec<u8>> {
    let t = StateTensor::new(f.spec(), 1, f.values().to_vec()).numeric("fields")?;
    Ok(encode_raster(&t))
}
