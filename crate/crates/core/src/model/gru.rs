//! Batched GRU layer: forward over a whole sequence and backpropagation through time.
//!
//! ```text
//! z  = σ(x W_z + h U_z + b_z)
//! r  = σ(x W_r + h U_r + b_r)
//! h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! Sequence tensors are stacked time-major: row `t * batch + b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::params::GruLayer;
use crate::error::{QstError, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept for the backward pass.
pub(crate) struct LayerCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
    rh: Array2<f64>,
}

fn input_projection(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), w.ncols()));
    out.assign(&b.row(0));
    general_mat_mul(1.0, x, w, 1.0, &mut out);
    out
}

/// Runs one layer over `steps` time steps of `batch` rows each, from a zero state.
pub(crate) fn layer_forward(layer: &GruLayer, x: Array2<f64>, steps: usize, batch: usize) -> (Array2<f64>, LayerCache) {
    let hidden = layer.hidden_size();
    let mut z = input_projection(&x, &layer.w_z, &layer.b_z);
    let mut r = input_projection(&x, &layer.w_r, &layer.b_r);
    let mut c = input_projection(&x, &layer.w_h, &layer.b_h);
    let mut h_prev = Array2::zeros((steps * batch, hidden));
    let mut rh = Array2::zeros((steps * batch, hidden));
    let mut h_out = Array2::zeros((steps * batch, hidden));

    for t in 0..steps {
        let rows = s![t * batch..(t + 1) * batch, ..];
        if t > 0 {
            let prev = h_out.slice(s![(t - 1) * batch..t * batch, ..]).to_owned();
            h_prev.slice_mut(rows).assign(&prev);
        }
        let hp = h_prev.slice(rows);
        let mut zt = z.slice_mut(rows);
        general_mat_mul(1.0, &hp, &layer.u_z, 1.0, &mut zt);
        zt.mapv_inplace(sigmoid);
        let mut rt = r.slice_mut(rows);
        general_mat_mul(1.0, &hp, &layer.u_r, 1.0, &mut rt);
        rt.mapv_inplace(sigmoid);
        let mut rht = rh.slice_mut(rows);
        Zip::from(&mut rht).and(&rt).and(&hp).for_each(|o, &r, &h| *o = r * h);
        let mut ct = c.slice_mut(rows);
        general_mat_mul(1.0, &rht, &layer.u_h, 1.0, &mut ct);
        ct.mapv_inplace(f64::tanh);
        Zip::from(h_out.slice_mut(rows))
            .and(&hp)
            .and(&z.slice(rows))
            .and(&ct)
            .for_each(|o, &h, &z, &c| *o = h + z * (c - h));
    }
    (h_out, LayerCache { x, h_prev, z, r, c, rh })
}

/// Backpropagates `d_out` (gradient w.r.t. every output row) through the
/// layer, accumulating parameter gradients into `grad`. Returns the gradient
/// w.r.t. the layer input.
pub(crate) fn layer_backward(
    layer: &GruLayer,
    cache: &LayerCache,
    d_out: &Array2<f64>,
    steps: usize,
    batch: usize,
    grad: &mut GruLayer,
) -> Array2<f64> {
    let hidden = layer.hidden_size();
    let mut da_z = Array2::zeros((steps * batch, hidden));
    let mut da_r = Array2::zeros((steps * batch, hidden));
    let mut da_h = Array2::zeros((steps * batch, hidden));
    let mut carry = Array2::<f64>::zeros((batch, hidden));
    let mut dz = Array2::<f64>::zeros((batch, hidden));
    let mut drh = Array2::<f64>::zeros((batch, hidden));

    for t in (0..steps).rev() {
        let rows = s![t * batch..(t + 1) * batch, ..];
        let (hp, z, r, c) = (cache.h_prev.slice(rows), cache.z.slice(rows), cache.r.slice(rows), cache.c.slice(rows));
        // carry becomes dL/dh_prev after this step; starts as dL/dh'.
        carry += &d_out.slice(rows);
        let mut dah = da_h.slice_mut(rows);
        Zip::from(&mut dz)
            .and(&mut dah)
            .and(&mut carry)
            .and(&hp)
            .and(&z)
            .and(&c)
            .for_each(|dz, dah, dh, &h, &z, &c| {
                let dhn = *dh;
                *dz = dhn * (c - h) * z * (1.0 - z);
                *dah = dhn * z * (1.0 - c * c);
                *dh = dhn * (1.0 - z);
            });
        general_mat_mul(1.0, &dah, &layer.u_h.t(), 0.0, &mut drh);
        let mut dar = da_r.slice_mut(rows);
        Zip::from(&mut dar)
            .and(&mut carry)
            .and(&drh)
            .and(&hp)
            .and(&r)
            .for_each(|dar, dh, &drh, &h, &r| {
                *dar = drh * h * r * (1.0 - r);
                *dh += drh * r;
            });
        general_mat_mul(1.0, &dar, &layer.u_r.t(), 1.0, &mut carry);
        da_z.slice_mut(rows).assign(&dz);
        general_mat_mul(1.0, &dz, &layer.u_z.t(), 1.0, &mut carry);
    }

    let x_t = cache.x.t();
    general_mat_mul(1.0, &x_t, &da_z, 1.0, &mut grad.w_z);
    general_mat_mul(1.0, &x_t, &da_r, 1.0, &mut grad.w_r);
    general_mat_mul(1.0, &x_t, &da_h, 1.0, &mut grad.w_h);
    let hp_t = cache.h_prev.t();
    general_mat_mul(1.0, &hp_t, &da_z, 1.0, &mut grad.u_z);
    general_mat_mul(1.0, &hp_t, &da_r, 1.0, &mut grad.u_r);
    general_mat_mul(1.0, &cache.rh.t(), &da_h, 1.0, &mut grad.u_h);
    grad.b_z.row_mut(0).scaled_add(1.0, &da_z.sum_axis(Axis(0)));
    grad.b_r.row_mut(0).scaled_add(1.0, &da_r.sum_axis(Axis(0)));
    grad.b_h.row_mut(0).scaled_add(1.0, &da_h.sum_axis(Axis(0)));

    let mut dx = Array2::zeros((steps * batch, layer.w_z.nrows()));
    general_mat_mul(1.0, &da_z, &layer.w_z.t(), 0.0, &mut dx);
    general_mat_mul(1.0, &da_r, &layer.w_r.t(), 1.0, &mut dx);
    general_mat_mul(1.0, &da_h, &layer.w_h.t(), 1.0, &mut dx);
    dx
}

/// One recurrence step for a batch of rows.
pub(crate) fn layer_step(layer: &GruLayer, x: ArrayView2<f64>, h: ArrayView2<f64>) -> Array2<f64> {
    let batch = x.nrows();
    let hidden = layer.hidden_size();
    let pre = |w: &Array2<f64>, u: &Array2<f64>, b: &Array2<f64>, hv: ArrayView2<f64>| {
        let mut a = Array2::zeros((batch, hidden));
        a.assign(&b.row(0));
        general_mat_mul(1.0, &x, w, 1.0, &mut a);
        general_mat_mul(1.0, &hv, u, 1.0, &mut a);
        a
    };
    let z = pre(&layer.w_z, &layer.u_z, &layer.b_z, h).mapv_into(sigmoid);
    let r = pre(&layer.w_r, &layer.u_r, &layer.b_r, h).mapv_into(sigmoid);
    let rh = &r * &h;
    let c = pre(&layer.w_h, &layer.u_h, &layer.b_h, rh.view()).mapv_into(f64::tanh);
    let mut out = h.to_owned();
    Zip::from(&mut out).and(&z).and(&c).for_each(|o, &z, &c| *o += z * (c - *o));
    out
}

/// Single-vector GRU update `h' = GRU(x, h_prev)`.
pub fn gru_cell_forward(x: ArrayView1<f64>, h_prev: ArrayView1<f64>, layer: &GruLayer) -> Result<Array1<f64>> {
    if x.len() != layer.w_z.nrows() || h_prev.len() != layer.hidden_size() {
        return Err(QstError::ShapeMismatch(format!(
            "input {} / hidden {} vs layer {}×{}",
            x.len(),
            h_prev.len(),
            layer.w_z.nrows(),
            layer.hidden_size()
        )));
    }
    let xb = x.insert_axis(Axis(0));
    let hb = h_prev.insert_axis(Axis(0));
    Ok(layer_step(layer, xb, hb).row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{init_model, ModelConfig};
    use ndarray::Array1;

    #[test]
    fn zero_params_halve_the_state() {
        let layer = GruLayer::zeros(4, 4);
        let x = Array1::from(vec![0.3, -2.0, 5.0, 0.0]);
        let h = Array1::zeros(4);
        assert_eq!(gru_cell_forward(x.view(), h.view(), &layer).unwrap(), Array1::<f64>::zeros(4));
        let h = Array1::from(vec![0.8, -0.4, 0.1, 0.0]);
        let out = gru_cell_forward(x.view(), h.view(), &layer).unwrap();
        assert_eq!(out, &h * 0.5);
    }

    #[test]
    fn large_inputs_stay_bounded() {
        let params = init_model(&ModelConfig { n_qubits: 2, hidden_size: 6, n_layers: 1, seed: 3 }).unwrap();
        let layer = &params.forward.layers[0];
        let x = Array1::from_elem(6, 1e3);
        let h = Array1::from_elem(6, 0.9);
        let out = gru_cell_forward(x.view(), h.view(), layer).unwrap();
        assert!(out.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        let x = Array1::from_elem(6, -1e3);
        let out = gru_cell_forward(x.view(), h.view(), layer).unwrap();
        assert!(out.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layer = GruLayer::zeros(4, 4);
        let x = Array1::zeros(3);
        let h = Array1::zeros(4);
        assert!(matches!(gru_cell_forward(x.view(), h.view(), &layer), Err(QstError::ShapeMismatch(_))));
    }

    #[test]
    fn sequence_forward_matches_stepping() {
        let params = init_model(&ModelConfig { n_qubits: 2, hidden_size: 5, n_layers: 1, seed: 9 }).unwrap();
        let layer = &params.forward.layers[0];
        let (steps, batch) = (4, 3);
        let x = Array2::from_shape_fn((steps * batch, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
        let (h_out, _) = layer_forward(layer, x.clone(), steps, batch);
        let mut h = Array2::zeros((batch, 5));
        for t in 0..steps {
            h = layer_step(layer, x.slice(s![t * batch..(t + 1) * batch, ..]), h.view());
            let expected = h_out.slice(s![t * batch..(t + 1) * batch, ..]);
            assert!((&h - &expected).iter().all(|d| d.abs() < 1e-14));
        }
    }
}
