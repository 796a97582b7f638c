use super::MsroiError;

/// Init gain for convolutions followed by a rectifier.
pub(crate) const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Architecture of the saliency network: `blocks` repetitions of
/// `[conv -> relu] x convs_per_block -> maxpool`, then a linear head conv
/// producing `head_features` maps for each of `categories`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub block_features: Vec<usize>,
    pub convs_per_block: usize,
    pub kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub categories: usize,
    pub head_features: usize,
    pub head_kernel: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            input_channels: 3,
            block_features: vec![16, 32, 32, 64, 64],
            convs_per_block: 2,
            kernel: 3,
            pool_window: 2,
            pool_stride: 2,
            categories: 6,
            head_features: 4,
            head_kernel: 1,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), MsroiError> {
        let bad = |m: &str| Err(MsroiError::Spec(m.to_string()));
        if self.block_features.is_empty() || self.block_features.contains(&0) {
            return bad("every block needs at least one feature");
        }
        if self.convs_per_block == 0 || self.input_channels == 0 {
            return bad("convs_per_block and input_channels must be positive");
        }
        if self.kernel % 2 == 0 || self.head_kernel % 2 == 0 {
            return bad("kernel sizes must be odd for same-padding");
        }
        if self.pool_stride == 0 || self.pool_window < self.pool_stride {
            return bad("pooling needs window >= stride >= 1");
        }
        if self.categories == 0 || self.head_features == 0 {
            return bad("categories and head_features must be positive");
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.block_features.len()
    }

    /// Total spatial reduction factor of the trunk.
    pub fn downsampling(&self) -> usize {
        self.pool_stride.pow(self.blocks() as u32)
    }

    /// Spatial extent after block `l` (1-based) for an input extent.
    pub fn extent_after_block(&self, input: usize, l: usize) -> Option<usize> {
        let mut e = input;
        for _ in 0..l {
            if e < self.pool_window {
                return None;
            }
            e = (e - self.pool_window) / self.pool_stride + 1;
        }
        Some(e)
    }

    /// Head activation shape `(C, D, h, w)` for an input of `height x width`.
    pub fn head_shape(&self, height: usize, width: usize) -> Option<[usize; 4]> {
        Some([
            self.categories,
            self.head_features,
            self.extent_after_block(height, self.blocks())?,
            self.extent_after_block(width, self.blocks())?,
        ])
    }

    pub fn trunk_output_features(&self) -> usize {
        *self.block_features.last().expect("validated non-empty")
    }
}
