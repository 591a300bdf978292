use crate::autodiff::Matrix;
use crate::data::IrregularSeries;
use crate::error::{Error, Result};

/// A mini-batch of irregular series sharing one step count `N`.
///
/// Row `i` has cumulative times `t[i][0..=N]`, where `t[i][N]` is the
/// prediction time, and gaps `Δt[j][i] = t[i][j] − t[i][j−1]` with
/// `t[i][−1] = 0`. Rows with fewer observations are left-padded with zero
/// features and zero gaps; `lengths` keeps the real observation counts.
#[derive(Clone, Debug)]
pub struct TimeSeriesBatch {
    rows: usize,
    steps: usize,
    features: Vec<Matrix>,
    deltas: Vec<Vec<f64>>,
    times: Vec<Vec<f64>>,
    targets: Matrix,
    lengths: Vec<usize>,
}

impl TimeSeriesBatch {
    pub fn from_series(series: &[&IrregularSeries]) -> Result<Self> {
        let Some(first) = series.first() else {
            return Err(Error::Data("cannot batch zero series".into()));
        };
        for s in series {
            s.validate()?;
        }
        let (d_x, d_y) = (first.input_dim(), first.output_dim());
        if let Some(s) = series.iter().find(|s| s.input_dim() != d_x || s.output_dim() != d_y) {
            return Err(Error::Dimension {
                op: "batch",
                lhs: (d_x, d_y),
                rhs: (s.input_dim(), s.output_dim()),
            });
        }
        let rows = series.len();
        let steps = series.iter().map(|s| s.num_observations()).max().unwrap_or(0);

        let mut features = vec![Matrix::zeros(rows, d_x); steps];
        let mut times = Vec::with_capacity(rows);
        let mut targets = Vec::with_capacity(rows * d_y);
        let mut lengths = Vec::with_capacity(rows);
        for (i, s) in series.iter().enumerate() {
            let ex = s.example();
            let n = ex.obs_times.len();
            let pad = steps - n;
            for (j, x) in ex.obs_values.iter().enumerate() {
                let m = &mut features[pad + j];
                for (c, v) in x.iter().enumerate() {
                    m.set(i, c, *v);
                }
            }
            let mut t = vec![0.0; pad];
            t.extend_from_slice(ex.obs_times);
            t.push(ex.prediction_time);
            times.push(t);
            targets.extend_from_slice(ex.target);
            lengths.push(n);
        }
        let deltas = (0..=steps)
            .map(|j| {
                times
                    .iter()
                    .map(|t: &Vec<f64>| if j == 0 { t[0] } else { t[j] - t[j - 1] })
                    .collect()
            })
            .collect();
        Ok(TimeSeriesBatch {
            rows,
            steps,
            features,
            deltas,
            times,
            targets: Matrix::from_vec(rows, d_y, targets)?,
            lengths,
        })
    }

    /// Number of series `B`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of observations `N` fed to the model.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Matrix::cols)
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    /// Features of observation `j` for every row, `B × d_x`.
    pub fn features(&self, j: usize) -> &Matrix {
        &self.features[j]
    }

    /// Gap before observation `j`; `j = N` is the final jump to the
    /// prediction time.
    pub fn deltas(&self, j: usize) -> &[f64] {
        &self.deltas[j]
    }

    /// Cumulative times of row `i`, `N + 1` entries.
    pub fn times(&self, i: usize) -> &[f64] {
        &self.times[i]
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Index of the first real observation of row `i`.
    pub fn first_observation(&self, i: usize) -> usize {
        self.steps - self.lengths[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(times: &[f64]) -> IrregularSeries {
        IrregularSeries {
            times: times.to_vec(),
            values: times.iter().map(|t| vec![t * 10.0]).collect(),
            target: None,
        }
    }

    #[test]
    fn deltas_are_gaps_from_zero() {
        let a = series(&[0.0, 1.0, 2.0]);
        let b = series(&[0.5, 1.5, 2.5]);
        let batch = TimeSeriesBatch::from_series(&[&a, &b]).unwrap();
        assert_eq!(batch.rows(), 2);
        assert_eq!(batch.steps(), 2);
        assert_eq!(batch.deltas(0), &[0.0, 0.5]);
        assert_eq!(batch.deltas(1), &[1.0, 1.0]);
        assert_eq!(batch.deltas(2), &[1.0, 1.0]);
        assert_eq!(batch.times(1), &[0.5, 1.5, 2.5]);
        assert_eq!(batch.targets().as_slice(), &[20.0, 25.0]);
        assert_eq!(batch.features(1).as_slice(), &[10.0, 15.0]);
    }

    #[test]
    fn shorter_rows_are_left_padded() {
        let a = series(&[0.0, 1.0, 2.0, 3.0]);
        let b = series(&[0.5, 1.5]);
        let batch = TimeSeriesBatch::from_series(&[&a, &b]).unwrap();
        assert_eq!(batch.steps(), 3);
        assert_eq!(batch.lengths(), &[3, 1]);
        assert_eq!(batch.first_observation(1), 2);
        assert_eq!(batch.times(1), &[0.0, 0.0, 0.5, 1.5]);
        assert_eq!(batch.features(0).get(1, 0), 0.0);
        assert_eq!(batch.features(2).get(1, 0), 5.0);
        assert_eq!(
            (0..=3).map(|j| batch.deltas(j)[1]).collect::<Vec<_>>(),
            vec![0.0, 0.0, 0.5, 1.0]
        );
    }

    #[test]
    fn mixed_widths_rejected() {
        let a = series(&[0.0, 1.0]);
        let mut b = series(&[0.0, 1.0]);
        b.values = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(TimeSeriesBatch::from_series(&[&a, &b]).is_err());
        assert!(TimeSeriesBatch::from_series(&[]).is_err());
    }
}
