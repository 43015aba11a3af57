//! Binary state snapshots.
//!
//! Layout, all little-endian: `b"DTXS1"`, `u32` dim, `dim × u64` cells,
//! `dim × f64` lengths, `f64` t, α, χ, ℓ, ε, then u and v as row-major `f64`
//! arrays. Accumulators are not stored.

use std::path::Path;

use nutaxis_core::{Field, GridSpec, Params, State};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"DTXS1";

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: State,
    pub alpha: f64,
    pub chi: f64,
    pub ell: f64,
    pub epsilon: f64,
}

pub fn encode_snapshot(state: &State, params: &Params) -> Vec<u8> {
    let grid = state.grid();
    let n = grid.num_cells();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + 16 * grid.dim() + 40 + 16 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &c in grid.cells() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for &l in grid.lengths() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for x in [state.t, params.alpha, params.chi, params.ell, params.epsilon] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in state.u.values().iter().chain(state.v.values()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::CorruptSnapshot("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| CliError::CorruptSnapshot("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let head = &bytes[..bytes.len().min(MAGIC.len())];
    if head != &MAGIC[..head.len()] {
        return Err(CliError::NotASnapshot);
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(MAGIC.len())?;
    let dim = r.u32()? as usize;
    if !(1..=3).contains(&dim) {
        return Err(CliError::CorruptSnapshot(format!("dimension {dim}")));
    }
    let cells = (0..dim)
        .map(|_| r.u64().map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let lengths = r.f64s(dim)?;
    let grid = GridSpec::new(&cells, &lengths).map_err(|e| CliError::CorruptSnapshot(e.to_string()))?;
    let [t, alpha, chi, ell, epsilon]: [f64; 5] = r.f64s(5)?.try_into().expect("5 values");
    let n = grid.num_cells();
    let expected = r.pos + 16 * n;
    if bytes.len() != expected {
        return Err(CliError::CorruptSnapshot(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let u = r.f64s(n)?;
    let v = r.f64s(n)?;
    let field = |vals| Field::new(grid, vals).map_err(|e| CliError::CorruptSnapshot(e.to_string()));
    let state = State::new(t, field(u)?, field(v)?).map_err(|e| CliError::CorruptSnapshot(e.to_string()))?;
    Ok(Snapshot {
        state,
        alpha,
        chi,
        ell,
        epsilon,
    })
}

pub fn save_snapshot(state: &State, params: &Params, path: &Path) -> Result<()> {
    std::fs::write(path, encode_snapshot(state, params)).map_err(|e| CliError::io(path, e))
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_snapshot(&bytes)
}

fn shape(grid: &GridSpec) -> String {
    grid.cells()
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Loads a snapshot and checks that it lives on `grid`.
pub fn load_snapshot_for(path: &Path, grid: &GridSpec) -> Result<Snapshot> {
    let snap = load_snapshot(path)?;
    let found = snap.state.grid();
    if found != grid {
        return Err(CliError::SnapshotGridMismatch {
            config: shape(grid),
            snapshot: shape(found),
        });
    }
    Ok(snap)
}
