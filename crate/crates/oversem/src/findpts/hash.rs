//! Uniform Cartesian hash grids that accelerate the owning-rank and
//! owning-element searches.

/// A uniform cell grid over a box, with a candidate id list per cell.
#[derive(Debug, Clone)]
pub struct HashGrid {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: [usize; 3],
    pub cells: Vec<Vec<u32>>,
}

impl HashGrid {
    /// Grid sized by the cube-root rule: roughly `target_cells` total.
    pub fn new(lo: [f64; 3], hi: [f64; 3], target_cells: usize) -> Self {
        let per_axis = ((target_cells.max(1)) as f64).cbrt().round().max(1.0) as usize;
        let n = [per_axis; 3];
        HashGrid {
            lo,
            hi,
            n,
            cells: vec![Vec::new(); per_axis * per_axis * per_axis],
        }
    }

    #[inline]
    fn axis_cell(&self, axis: usize, x: f64) -> Option<usize> {
        let w = self.hi[axis] - self.lo[axis];
        if w <= 0.0 {
            return if (x - self.lo[axis]).abs() <= f64::EPSILON {
                Some(0)
            } else {
                None
            };
        }
        let t = (x - self.lo[axis]) / w;
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        Some(((t * self.n[axis] as f64) as usize).min(self.n[axis] - 1))
    }

    pub fn cell_of(&self, x: [f64; 3]) -> Option<usize> {
        let ix = self.axis_cell(0, x[0])?;
        let iy = self.axis_cell(1, x[1])?;
        let iz = self.axis_cell(2, x[2])?;
        Some(ix + self.n[0] * (iy + self.n[1] * iz))
    }

    pub fn candidates(&self, x: [f64; 3]) -> &[u32] {
        match self.cell_of(x) {
            Some(c) => &self.cells[c],
            None => &[],
        }
    }

    /// Register an id in every cell overlapped by a bounding box.
    pub fn insert_bbox(&mut self, lo: [f64; 3], hi: [f64; 3], id: u32) {
        let mut ranges = [(0usize, 0usize); 3];
        for axis in 0..3 {
            let w = self.hi[axis] - self.lo[axis];
            let (a, b) = if w <= 0.0 {
                (0, 0)
            } else {
                let t0 = ((lo[axis] - self.lo[axis]) / w * self.n[axis] as f64).floor();
                let t1 = ((hi[axis] - self.lo[axis]) / w * self.n[axis] as f64).floor();
                let a = (t0.max(0.0) as usize).min(self.n[axis] - 1);
                let b = (t1.max(0.0) as usize).min(self.n[axis] - 1);
                (a, b)
            };
            if lo[axis] > self.hi[axis] || hi[axis] < self.lo[axis] {
                return; // no overlap at all
            }
            ranges[axis] = (a, b);
        }
        for iz in ranges[2].0..=ranges[2].1 {
            for iy in ranges[1].0..=ranges[1].1 {
                for ix in ranges[0].0..=ranges[0].1 {
                    let c = ix + self.n[0] * (iy + self.n[1] * iz);
                    if !self.cells[c].contains(&id) {
                        self.cells[c].push(id);
                    }
                }
            }
        }
    }

    pub fn finalize(&mut self) {
        for c in &mut self.cells {
            c.sort_unstable();
        }
    }

    /// Occupancy dump as CSV (cell, ix, iy, iz, count, ids...), for tests
    /// and diagnostics.
    pub fn occupancy_csv(&self) -> String {
        let mut out = String::from("cell,ix,iy,iz,count,candidates\n");
        for iz in 0..self.n[2] {
            for iy in 0..self.n[1] {
                for ix in 0..self.n[0] {
                    let c = ix + self.n[0] * (iy + self.n[1] * iz);
                    let ids: Vec<String> =
                        self.cells[c].iter().map(|i| i.to_string()).collect();
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        c,
                        ix,
                        iy,
                        iz,
                        self.cells[c].len(),
                        ids.join(" ")
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_registration_covers_overlapped_cells() {
        let mut g = HashGrid::new([0.0; 3], [1.0; 3], 27);
        assert_eq!(g.n, [3, 3, 3]);
        g.insert_bbox([0.0, 0.0, 0.0], [0.4, 0.4, 0.4], 7);
        g.finalize();
        assert_eq!(g.candidates([0.1, 0.1, 0.1]), &[7]);
        assert_eq!(g.candidates([0.35, 0.35, 0.35]), &[7]);
        assert!(g.candidates([0.9, 0.9, 0.9]).is_empty());
        assert!(g.cell_of([1.5, 0.5, 0.5]).is_none());
    }

    #[test]
    fn occupancy_csv_has_header_and_rows() {
        let mut g = HashGrid::new([0.0; 3], [1.0; 3], 8);
        g.insert_bbox([0.0; 3], [1.0; 3], 0);
        g.finalize();
        let csv = g.occupancy_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "cell,ix,iy,iz,count,candidates");
        assert_eq!(lines.len(), 1 + g.cells.len());
        assert!(lines[1].contains(",0 ") || lines[1].ends_with(",0"));
    }
}
