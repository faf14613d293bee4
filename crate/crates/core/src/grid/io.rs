//! ESRI ASCII grid and CSV serialization of scalar fields.
//!
//! Nodes are treated as cell centers, so `XLLCORNER = x0 - dx / 2`. Rows are
//! written north to south as the format requires. Values use 17 significant
//! digits; non-finite values are written as `NODATA_VALUE`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Grid, ScalarField};
use crate::error::{Error, Result};

const NODATA: f64 = -9999.0;

pub fn write_esri_ascii(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    if g.dx != g.dy {
        return Err(Error::InvalidParameter(format!(
            "ESRI ASCII grids need square cells, got dx={} dy={}",
            g.dx, g.dy
        )));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "NCOLS {}", g.nx)?;
    writeln!(w, "NROWS {}", g.ny)?;
    writeln!(w, "XLLCORNER {:.16e}", g.x0 - 0.5 * g.dx)?;
    writeln!(w, "YLLCORNER {:.16e}", g.y0 - 0.5 * g.dy)?;
    writeln!(w, "CELLSIZE {:.16e}", g.dx)?;
    writeln!(w, "NODATA_VALUE {NODATA}")?;
    for j in (0..g.ny).rev() {
        let row: Vec<String> = (0..g.nx).map(|i| fmt_value(field.at(i, j))).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV fallback with header `i,j,x,y,value`, one row per node in storage order.
pub fn write_field_csv(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "i,j,x,y,value")?;
    for (k, &v) in field.values().iter().enumerate() {
        let (i, j) = g.ij(k);
        writeln!(w, "{i},{j},{:.16e},{:.16e},{}", g.x(i), g.y(j), fmt_value(v))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes ESRI ASCII when the cells are square, else the CSV fallback next
/// to `path` with a `.csv` extension. Returns the path actually written.
pub fn write_field(path: &Path, field: &ScalarField) -> Result<PathBuf> {
    let g = field.grid();
    if g.dx == g.dy {
        write_esri_ascii(path, field)?;
        Ok(path.to_path_buf())
    } else {
        let csv = path.with_extension("csv");
        write_field_csv(&csv, field)?;
        Ok(csv)
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{NODATA}")
    }
}

/// Reads an ESRI ASCII grid. Header keys are matched case-insensitively and
/// `XLLCENTER`/`YLLCENTER` are accepted in place of the corner keys.
/// `NODATA_VALUE` cells become NaN.
pub fn read_esri_ascii(path: &Path) -> Result<ScalarField> {
    let text = fs::read_to_string(path)?;
    let mut tokens = text.split_whitespace().peekable();
    let (mut ncols, mut nrows, mut cell) = (None, None, None);
    let (mut xll, mut yll, mut centered) = (None, None, false);
    let mut nodata = NODATA;
    while let Some(tok) = tokens.peek() {
        if tok.parse::<f64>().is_ok() {
            break;
        }
        let key = tokens.next().unwrap().to_ascii_uppercase();
        let val = tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing value for header {key}")))?;
        let num: f64 = val.parse().map_err(|_| Error::Parse(format!("bad header value {val}")))?;
        match key.as_str() {
            "NCOLS" => ncols = Some(num as usize),
            "NROWS" => nrows = Some(num as usize),
            "CELLSIZE" => cell = Some(num),
            "XLLCORNER" => xll = Some(num),
            "YLLCORNER" => yll = Some(num),
            "XLLCENTER" => {
                xll = Some(num);
                centered = true;
            }
            "YLLCENTER" => yll = Some(num),
            "NODATA_VALUE" => nodata = num,
            other => return Err(Error::Parse(format!("unknown header key {other}"))),
        }
    }
    let missing = |k: &str| Error::Parse(format!("missing header {k}"));
    let nx = ncols.ok_or_else(|| missing("NCOLS"))?;
    let ny = nrows.ok_or_else(|| missing("NROWS"))?;
    let h = cell.ok_or_else(|| missing("CELLSIZE"))?;
    let (mut x0, mut y0) = (xll.ok_or_else(|| missing("XLLCORNER"))?, yll.ok_or_else(|| missing("YLLCORNER"))?);
    if !centered {
        x0 += 0.5 * h;
        y0 += 0.5 * h;
    }
    let grid = Grid::new(nx, ny, h, h, x0, y0)?;
    let raw: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad grid value {t}"))))
        .collect::<Result<_>>()?;
    grid.check_len(raw.len())?;
    let mut values = vec![0.0; grid.len()];
    for (r, row) in raw.chunks(nx).enumerate() {
        let j = ny - 1 - r;
        for (i, &v) in row.iter().enumerate() {
            values[grid.index(i, j)] = if v == nodata { f64::NAN } else { v };
        }
    }
    ScalarField::new(grid, values)
}
