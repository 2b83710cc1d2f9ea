use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular grid of square data cells covering the region of interest.
///
/// Cell `m = iy * nx + ix` covers `[ox + ix·s, ox + (ix+1)·s) × [oy + iy·s, oy + (iy+1)·s)`.
/// The half-open convention assigns every in-ROI point to exactly one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub origin: [f64; 2],
}

impl CellGrid {
    pub fn new(nx: usize, ny: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        let g = Self { nx, ny, cell_size, origin };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidArgument("grid needs at least one cell".into()));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size {} must be positive", self.cell_size)));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("grid origin must be finite".into()));
        }
        Ok(())
    }

    /// Number of cells `M`.
    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    /// `(x_min, x_max, y_min, y_max)` of the covered region.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let [ox, oy] = self.origin;
        (ox, ox + self.nx as f64 * self.cell_size, oy, oy + self.ny as f64 * self.cell_size)
    }

    /// Index of the cell containing `(x, y)`, `None` outside the grid.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fx = ((x - self.origin[0]) / self.cell_size).floor();
        let fy = ((y - self.origin[1]) / self.cell_size).floor();
        if fx >= 0.0 && fy >= 0.0 && fx < self.nx as f64 && fy < self.ny as f64 {
            Some(fy as usize * self.nx + fx as usize)
        } else {
            None
        }
    }

    /// `(ix, iy)` of cell `m`.
    pub fn coords(&self, m: usize) -> (usize, usize) {
        (m % self.nx, m / self.nx)
    }

    /// Lower-left corner of cell `m`.
    pub fn cell_origin(&self, m: usize) -> [f64; 2] {
        let (ix, iy) = self.coords(m);
        [self.origin[0] + ix as f64 * self.cell_size, self.origin[1] + iy as f64 * self.cell_size]
    }

    pub fn cell_center(&self, m: usize) -> [f64; 2] {
        let [x, y] = self.cell_origin(m);
        [x + 0.5 * self.cell_size, y + 0.5 * self.cell_size]
    }
}

/// One time step of cell intensities, row-major over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub grid: CellGrid,
    z: Vec<f64>,
}

impl Frame {
    pub fn new(grid: CellGrid, z: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if z.len() != grid.num_cells() {
            return Err(Error::InvalidArgument(format!(
                "frame has {} intensities, grid has {} cells",
                z.len(),
                grid.num_cells()
            )));
        }
        if let Some((m, v)) = z.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("cell {m} intensity {v} is not a nonnegative finite number")));
        }
        Ok(Self { grid, z })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Writes the frame as text: a commented header line, the grid line
    /// `nx,ny,cell_size,origin_x,origin_y`, then one line of `nx` intensities
    /// per grid row (row `iy = 0` first).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let g = &self.grid;
        writeln!(out, "# nx,ny,cell_size,origin_x,origin_y")?;
        writeln!(out, "{},{},{},{},{}", g.nx, g.ny, g.cell_size, g.origin[0], g.origin[1])?;
        for row in self.z.chunks(g.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Inverse of [`Frame::write_csv`]. Lines starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut grid: Option<CellGrid> = None;
        let mut z = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::Parse { line: line_no, msg: format!("{s:?}: {e}") })
            };
            match grid {
                None => {
                    if fields.len() != 5 {
                        return Err(Error::Parse { line: line_no, msg: "grid header needs 5 fields".into() });
                    }
                    let count = |s: &str| -> Result<usize> {
                        s.parse::<usize>().map_err(|e| Error::Parse { line: line_no, msg: format!("{s:?}: {e}") })
                    };
                    grid = Some(
                        CellGrid::new(
                            count(fields[0])?,
                            count(fields[1])?,
                            parse(fields[2])?,
                            [parse(fields[3])?, parse(fields[4])?],
                        )
                        .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?,
                    );
                }
                Some(g) => {
                    if fields.len() != g.nx {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: format!("expected {} intensities, found {}", g.nx, fields.len()),
                        });
                    }
                    for f in fields {
                        z.push(parse(f)?);
                    }
                }
            }
        }
        let grid = grid.ok_or(Error::Parse { line: 0, msg: "missing grid header".into() })?;
        Frame::new(grid, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_open_cells() {
        let g = CellGrid::new(4, 3, 1.0, [0.0, 0.0]).unwrap();
        assert_eq!(g.num_cells(), 12);
        assert_eq!(g.cell_of(0.0, 0.0), Some(0));
        assert_eq!(g.cell_of(1.0, 0.5), Some(1));
        assert_eq!(g.cell_of(0.999, 2.5), Some(8));
        assert_eq!(g.cell_of(4.0, 0.5), None);
        assert_eq!(g.cell_of(-1e-12, 0.5), None);
        assert_eq!(g.cell_of(3.5, 3.0), None);
        assert_eq!(g.cell_origin(7), [3.0, 1.0]);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(CellGrid::new(0, 3, 1.0, [0.0, 0.0]).is_err());
        assert!(CellGrid::new(2, 3, 0.0, [0.0, 0.0]).is_err());
        let g = CellGrid::new(2, 2, 1.0, [0.0, 0.0]).unwrap();
        assert!(Frame::new(g, vec![1.0; 3]).is_err());
        assert!(Frame::new(g, vec![1.0, 1.0, -0.1, 1.0]).is_err());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "# header\n2,2,1,0,0\n1,2\n3,x\n";
        match Frame::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn csv_roundtrip(nx in 1usize..6, ny in 1usize..6, seed in prop::collection::vec(0.0f64..40.0, 36)) {
            let g = CellGrid::new(nx, ny, 0.75, [-1.5, 2.0]).unwrap();
            let frame = Frame::new(g, seed[..nx * ny].to_vec()).unwrap();
            let mut buf = Vec::new();
            frame.write_csv(&mut buf).unwrap();
            let back = Frame::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, frame);
        }

        #[test]
        fn every_in_roi_point_has_one_cell(x in 0.0f64..8.0, y in 0.0f64..4.0) {
            let g = CellGrid::new(8, 4, 1.0, [0.0, 0.0]).unwrap();
            let m = g.cell_of(x, y).unwrap();
            let [lx, ly] = g.cell_origin(m);
            prop_assert!(lx <= x && x < lx + 1.0 && ly <= y && y < ly + 1.0);
        }
    }
}
