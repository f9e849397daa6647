use super::Tensor;

/// Slope applied to negative inputs.
pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Adjoint of [`leaky_relu`] evaluated at the pre-activation `input`.
pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&z, &g)| if z > 0.0 { g } else { LEAKY_SLOPE * g })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}
