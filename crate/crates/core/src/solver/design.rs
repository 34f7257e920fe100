use ndarray::ArrayView2;

/// Column-major copy of a feature matrix; coordinate updates walk columns.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub(crate) fn from_rows(x: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = x.dim();
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            data.extend(x.column(j).iter().copied());
        }
        Design { rows, cols, data }
    }

    pub(crate) fn rows(&self) -> usize {
        self.rows
    }

    pub(crate) fn cols(&self) -> usize {
        self.cols
    }

    pub(crate) fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub(crate) fn predict(&self, theta: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; self.rows];
        for (j, &th) in theta.iter().enumerate() {
            if th != 0.0 {
                for (ti, x) in t.iter_mut().zip(self.col(j)) {
                    *ti += th * x;
                }
            }
        }
        t
    }

    pub(crate) fn select_rows(&self, idx: &[usize]) -> Design {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for j in 0..self.cols {
            let col = self.col(j);
            data.extend(idx.iter().map(|&i| col[i]));
        }
        Design {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}
