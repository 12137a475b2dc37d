//! Connected-component labelling on boolean grids.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// One component as row-major pixel indices, in discovery order.
#[derive(Debug, Clone)]
pub struct Component {
    pub pixels: Vec<usize>,
}

impl Component {
    /// Inclusive `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self, width: usize) -> (usize, usize, usize, usize) {
        let mut e = (usize::MAX, usize::MAX, 0, 0);
        for &i in &self.pixels {
            let (x, y) = (i % width, i / width);
            e = (e.0.min(x), e.1.min(y), e.2.max(x), e.3.max(y));
        }
        e
    }
}

/// Components of the `true` cells, ordered by their first pixel in row-major order.
pub fn components(grid: &[bool], width: usize, height: usize, conn: Connectivity) -> Vec<Component> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..grid.len() {
        if !grid[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for (dx, dy) in neighbours(conn) {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= width || ny as usize >= height {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if grid[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(Component { pixels });
    }
    out
}

fn neighbours(conn: Connectivity) -> &'static [(isize, isize)] {
    const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const EIGHT: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    match conn {
        Connectivity::Four => &FOUR,
        Connectivity::Eight => &EIGHT,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_touch() {
        let g = [true, false, false, true];
        assert_eq!(components(&g, 2, 2, Connectivity::Four).len(), 2);
        assert_eq!(components(&g, 2, 2, Connectivity::Eight).len(), 1);
    }
}
