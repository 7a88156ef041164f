use nalgebra::{DMatrix, DVector};

/// Singular values in descending order with the matching right singular vectors as columns.
pub(crate) struct SortedSvd {
    pub values: Vec<f64>,
    pub right: DMatrix<f64>,
}

pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let ncols = m.ncols();
    // pad short matrices so the right factor is square
    let padded;
    let m = if m.nrows() < ncols {
        padded = {
            let mut z = DMatrix::zeros(ncols, ncols);
            z.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
            z
        };
        &padded
    } else {
        m
    };
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let right = DMatrix::from_fn(ncols, order.len(), |r, c| v_t[(order[c], r)]);
    SortedSvd { values, right }
}

pub(crate) fn numerical_rank(values: &[f64], rel_tol: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    values.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Minimum-norm least-squares solution of `m·x = b`, with singular values of `m`.
pub(crate) fn least_squares(m: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
    let svd = m.clone().svd(true, true);
    let mut values: Vec<f64> = svd.singular_values.iter().cloned().collect();
    let top = values.iter().cloned().fold(0.0, f64::max);
    let x = svd
        .solve(b, top * 1e-13)
        .expect("both factors were computed");
    values.sort_by(|a, b| b.total_cmp(a));
    (x, values)
}
