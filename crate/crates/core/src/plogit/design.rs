/// Dense column-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            data: vec![0.0; n * p],
        }
    }

    /// Builds from row vectors, which must all have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let mut d = Self::zeros(n, p);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), p, "ragged design rows");
            for (j, &v) in r.iter().enumerate() {
                d.data[j * n + i] = v;
            }
        }
        d
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.p).map(|j| self.get(i, j)).collect()
    }

    /// `X b`.
    pub fn mul_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (j, &bj) in b.iter().enumerate() {
            if bj != 0.0 {
                for (o, &x) in out.iter_mut().zip(self.col(j)) {
                    *o += bj * x;
                }
            }
        }
        out
    }
}
