/// Element type of the tensor core.
pub trait Scalar {}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone)]
pub struct Tensor;
