//! Grid interchange: binary PGM (P5) raster plus a `<name>.meta` text sidecar.
//!
//! Pixel encoding: 0 occupied, 255 free, 128 unknown. The image is stored top
//! row first, so image row `r` holds grid row `height - 1 - r`.
//!
//! Sidecar keys (one `key: value` per line):
//! `resolution`, `origin_x`, `origin_y`, optional `origin_theta`, and
//! `encoding` (`ternary` or `dark-occupied`). `dark-occupied` is meant for
//! ingesting drawn ground-truth images: pixels below 64 are occupied and
//! everything else, including grey, is free.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::Pose2D;
use crate::grid::{CellState, GridGeometry, OccupancyGrid};

pub const PIXEL_OCCUPIED: u8 = 0;
pub const PIXEL_FREE: u8 = 255;
pub const PIXEL_UNKNOWN: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelEncoding {
    Ternary,
    DarkOccupied,
}

impl PixelEncoding {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "ternary" => Ok(Self::Ternary),
            "dark-occupied" => Ok(Self::DarkOccupied),
            other => Err(Error::Format(format!("unknown encoding '{other}'"))),
        }
    }

    fn decode(self, v: u8) -> Result<CellState> {
        match self {
            Self::Ternary => match v {
                PIXEL_OCCUPIED => Ok(CellState::Occupied),
                PIXEL_FREE => Ok(CellState::Free),
                PIXEL_UNKNOWN => Ok(CellState::Unknown),
                other => Err(Error::Format(format!(
                    "pixel value {other} is not valid for ternary encoding"
                ))),
            },
            Self::DarkOccupied => Ok(if v < 64 { CellState::Occupied } else { CellState::Free }),
        }
    }
}

/// Sidecar path for a raster path: `map.pgm` -> `map.meta`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Raw P5 payload: width, height and pixels top row first.
pub fn encode_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for r in 0..h {
        let j = h - 1 - r;
        for i in 0..w {
            out.push(match grid.get(i, j) {
                CellState::Occupied => PIXEL_OCCUPIED,
                CellState::Free => PIXEL_FREE,
                CellState::Unknown => PIXEL_UNKNOWN,
            });
        }
    }
    out
}

/// Parses a binary PGM, returning `(width, height, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("unknown magic '{}'", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM {what} '{s}'")))
    };
    let w = parse(&fields[1], "width")?;
    let h = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h {
        return Err(Error::Format(format!(
            "dimension mismatch: header says {w}x{h} = {} bytes, found {}",
            w * h,
            data.len()
        )));
    }
    Ok((w, h, data.to_vec()))
}

pub fn encode_meta(grid: &OccupancyGrid) -> String {
    let g = &grid.geometry;
    format!(
        "resolution: {}\norigin_x: {}\norigin_y: {}\norigin_theta: {}\nencoding: ternary\n",
        g.resolution, g.origin.x, g.origin.y, g.origin.theta
    )
}

struct Meta {
    resolution: f64,
    origin: Pose2D,
    encoding: PixelEncoding,
}

fn decode_meta(text: &str) -> Result<Meta> {
    let mut resolution = None;
    let mut ox = None;
    let mut oy = None;
    let mut otheta = 0.0;
    let mut encoding = PixelEncoding::Ternary;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| Error::Format(format!("bad sidecar line '{line}'")))?;
        let v = v.trim();
        let num = || {
            v.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number for {}: '{v}'", k.trim())))
        };
        match k.trim() {
            "resolution" => resolution = Some(num()?),
            "origin_x" => ox = Some(num()?),
            "origin_y" => oy = Some(num()?),
            "origin_theta" => otheta = num()?,
            "encoding" => encoding = PixelEncoding::parse(v)?,
            other => return Err(Error::Format(format!("unknown sidecar key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::Format(format!("sidecar missing '{k}'"));
    Ok(Meta {
        resolution: resolution.ok_or_else(|| missing("resolution"))?,
        origin: Pose2D::new(
            ox.ok_or_else(|| missing("origin_x"))?,
            oy.ok_or_else(|| missing("origin_y"))?,
            otheta,
        ),
        encoding,
    })
}

/// Builds a grid from PGM bytes and sidecar text.
pub fn grid_from_parts(pgm: &[u8], meta: &str) -> Result<OccupancyGrid> {
    let meta = decode_meta(meta)?;
    let (w, h, pixels) = decode_pgm(pgm)?;
    let geometry = GridGeometry::new(w, h, meta.resolution, meta.origin).map_err(|e| Error::Format(e.to_string()))?;
    let mut cells = vec![CellState::Unknown; w * h];
    for r in 0..h {
        let j = h - 1 - r;
        for i in 0..w {
            cells[j * w + i] = meta.encoding.decode(pixels[r * w + i])?;
        }
    }
    OccupancyGrid::from_cells(geometry, cells)
}

pub fn save_grid(grid: &OccupancyGrid, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(grid)).map_err(|e| Error::io(path, e))?;
    let meta = sidecar_path(path);
    fs::write(&meta, encode_meta(grid)).map_err(|e| Error::io(meta, e))
}

pub fn load_grid(path: &Path) -> Result<OccupancyGrid> {
    let pgm = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar_path(path);
    let meta = fs::read_to_string(&meta_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Format(format!("missing sidecar {}", meta_path.display()))
        } else {
            Error::io(&meta_path, e)
        }
    })?;
    grid_from_parts(&pgm, &meta)
}
