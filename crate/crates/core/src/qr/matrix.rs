use crate::error::{Error, Result};

/// An m×m grid of light/dark modules together with the mask of
/// function-pattern cells (finders, separators, timing, alignment, format
/// information and the dark module).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModuleMatrix {
    side: usize,
    light: Vec<bool>,
    function: Vec<bool>,
}

impl ModuleMatrix {
    /// All-light matrix with no function modules.
    pub fn new_light(side: usize) -> Self {
        ModuleMatrix {
            side,
            light: vec![true; side * side],
            function: vec![false; side * side],
        }
    }

    pub fn from_cells(side: usize, light: Vec<bool>, function: Vec<bool>) -> Result<Self> {
        if light.len() != side * side || function.len() != side * side {
            return Err(Error::ExtentMismatch(format!(
                "expected {} cells for side {side}, got {} / {}",
                side * side,
                light.len(),
                function.len()
            )));
        }
        Ok(ModuleMatrix { side, light, function })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Row-major light flags (true = light = pixel value 1).
    pub fn cells(&self) -> &[bool] {
        &self.light
    }

    pub fn function_mask(&self) -> &[bool] {
        &self.function
    }

    #[inline]
    pub fn is_light(&self, row: usize, col: usize) -> bool {
        self.light[row * self.side + col]
    }

    /// Pixel value the module rasterizes to: 1.0 light, 0.0 dark.
    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        if self.is_light(row, col) {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn is_function(&self, row: usize, col: usize) -> bool {
        self.function[row * self.side + col]
    }

    pub fn set_light(&mut self, row: usize, col: usize, light: bool) {
        self.light[row * self.side + col] = light;
    }

    pub fn flip(&mut self, row: usize, col: usize) {
        let i = row * self.side + col;
        self.light[i] = !self.light[i];
    }

    pub(crate) fn set_function(&mut self, row: usize, col: usize, light: bool) {
        let i = row * self.side + col;
        self.light[i] = light;
        self.function[i] = true;
    }

    /// Every module inverted; the function mask is kept.
    pub fn inverted(&self) -> ModuleMatrix {
        ModuleMatrix {
            side: self.side,
            light: self.light.iter().map(|&v| !v).collect(),
            function: self.function.clone(),
        }
    }

    /// Row-major indices of cells whose value differs from `other`.
    pub fn differing_cells(&self, other: &ModuleMatrix) -> Vec<usize> {
        assert_eq!(self.side, other.side, "matrix sides differ");
        self.light
            .iter()
            .zip(&other.light)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect()
    }

    /// Text form: the side on the first line, `side` rows of `0`/`1`
    /// (1 = light), a `function` line, then `side` rows of the function mask
    /// (1 = function module).
    pub fn to_text(&self) -> String {
        fn push_grid(out: &mut String, grid: &[bool], side: usize) {
            for row in grid.chunks(side) {
                out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
                out.push('\n');
            }
        }
        let mut out = String::with_capacity(2 * (self.side + 1) * self.side + 16);
        out.push_str(&format!("{}\n", self.side));
        push_grid(&mut out, &self.light, self.side);
        out.push_str("function\n");
        push_grid(&mut out, &self.function, self.side);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("matrix text: {msg}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let side: usize = lines
            .next()
            .ok_or_else(|| bad("empty input".into()))?
            .parse()
            .map_err(|e| bad(format!("bad side: {e}")))?;
        let read_grid = |lines: &mut dyn Iterator<Item = &str>, what: &str| -> Result<Vec<bool>> {
            let mut cells = Vec::with_capacity(side * side);
            for r in 0..side {
                let line = lines.next().ok_or_else(|| bad(format!("{what}: missing row {r}")))?;
                if line.len() != side {
                    return Err(bad(format!("{what}: row {r} has {} cells", line.len())));
                }
                for ch in line.chars() {
                    cells.push(match ch {
                        '1' => true,
                        '0' => false,
                        other => return Err(bad(format!("{what}: unexpected {other:?}"))),
                    });
                }
            }
            Ok(cells)
        };
        let light = read_grid(&mut lines, "cells")?;
        let function = match lines.next() {
            None => vec![false; side * side],
            Some("function") => read_grid(&mut lines, "function")?,
            Some(other) => return Err(bad(format!("expected `function`, found {other:?}"))),
        };
        if let Some(extra) = lines.next() {
            return Err(bad(format!("trailing content {extra:?}")));
        }
        ModuleMatrix::from_cells(side, light, function)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = ModuleMatrix::new_light(5);
        m.flip(1, 2);
        m.set_function(0, 0, false);
        let text = m.to_text();
        assert!(text.starts_with("5\n01111\n11011\n"));
        assert_eq!(ModuleMatrix::from_text(&text).unwrap(), m);
    }

    #[test]
    fn text_without_function_block() {
        let m = ModuleMatrix::from_text("2\n10\n01\n").unwrap();
        assert!(m.is_light(0, 0) && !m.is_light(0, 1));
        assert!(m.function_mask().iter().all(|&f| !f));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(ModuleMatrix::from_text("2\n10\n0\n").is_err());
        assert!(ModuleMatrix::from_text("2\n10\n0x\n").is_err());
    }
}
