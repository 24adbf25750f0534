use crate::error::DiffusionError;
use crate::tensor::ImageTensor;

/// Noise predictor `eps_theta(x_t, t)`.
///
/// Implementations must be pure: identical `(x_t, t)` give bit-identical output.
pub trait DenoiserModel: Send + Sync {
    /// Predicted noise, same shape as `x_t`.
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, DiffusionError>;

    /// Prediction at `f64` precision.
    ///
    /// Analytic models override this so samplers do not lose precision when the
    /// noise weight is large relative to the signal weight.
    fn predict_f64(&self, x_t: &ImageTensor, t: usize) -> Result<Vec<f64>, DiffusionError> {
        Ok(self.predict(x_t, t)?.to_f64())
    }

    fn parameter_count(&self) -> usize;

    /// Number of input elements the model accepts, when fixed.
    fn input_len(&self) -> Option<usize> {
        None
    }
}

impl<M: DenoiserModel + ?Sized> DenoiserModel for std::sync::Arc<M> {
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, DiffusionError> {
        (**self).predict(x_t, t)
    }

    fn predict_f64(&self, x_t: &ImageTensor, t: usize) -> Result<Vec<f64>, DiffusionError> {
        (**self).predict_f64(x_t, t)
    }

    fn parameter_count(&self) -> usize {
        (**self).parameter_count()
    }

    fn input_len(&self) -> Option<usize> {
        (**self).input_len()
    }
}

impl<M: DenoiserModel + ?Sized> DenoiserModel for &M {
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, DiffusionError> {
        (**self).predict(x_t, t)
    }

    fn predict_f64(&self, x_t: &ImageTensor, t: usize) -> Result<Vec<f64>, DiffusionError> {
        (**self).predict_f64(x_t, t)
    }

    fn parameter_count(&self) -> usize {
        (**self).parameter_count()
    }

    fn input_len(&self) -> Option<usize> {
        (**self).input_len()
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl DenoiserModel for ZeroDenoiser {
    fn predict(&self, x_t: &ImageTensor, _t: usize) -> Result<ImageTensor, DiffusionError> {
        Ok(ImageTensor::zeros(x_t.shape()))
    }

    fn parameter_count(&self) -> usize {
        0
    }
}
