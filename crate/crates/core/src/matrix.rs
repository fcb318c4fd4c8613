use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(Error::MalformedInput(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let expected = rows.first().map(Vec::len).ok_or(Error::EmptyMatrix)?;
        if expected == 0 {
            return Err(Error::EmptyMatrix);
        }
        let n = rows.len();
        let mut data = Vec::with_capacity(n * expected);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != expected {
                return Err(Error::RaggedMatrix {
                    row,
                    len: r.len(),
                    expected,
                });
            }
            data.extend(r);
        }
        Ok(Matrix {
            rows: n,
            cols: expected,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks(self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn try_map<U>(&self, f: impl FnMut(&T) -> Result<U>) -> Result<Matrix<U>> {
        let data = self.data.iter().map(f).collect::<Result<Vec<U>>>()?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_and_empty_are_rejected() {
        assert!(matches!(
            Matrix::from_rows(vec![vec![1, 2], vec![3]]),
            Err(Error::RaggedMatrix { row: 1, len: 1, expected: 2 })
        ));
        assert!(matches!(Matrix::<i32>::from_rows(vec![]), Err(Error::EmptyMatrix)));
        assert!(matches!(Matrix::<i32>::from_rows(vec![vec![]]), Err(Error::EmptyMatrix)));
        assert!(Matrix::new(2, 2, vec![1, 2, 3]).is_err());
    }

    #[test]
    fn rows_are_row_major() {
        let m = Matrix::from_rows(vec![vec![1, 2, 3], vec![4, 5, 6]]).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.row(1), &[4, 5, 6]);
        assert_eq!(m.iter_rows().count(), 2);
        assert_eq!(m.map(|v| v * 2).row(0), &[2, 4, 6]);
    }
}
