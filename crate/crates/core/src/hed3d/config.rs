use serde::{Deserialize, Serialize};

use super::NetError;

/// Architecture of the 3D HED network.
///
/// Stages are 1-indexed. Stage `s > 1` starts with a 2x2x2 max-pool, so its
/// features live at `1 / 2^(s-1)` of the input resolution, and its side
/// output is upsampled by that factor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hed3DConfig {
    pub in_channels: usize,
    /// Output channels of every stage.
    pub widths: Vec<usize>,
    pub convs_per_stage: usize,
    /// Cubic kernel edge of the backbone convolutions; padding keeps dims.
    pub kernel: usize,
    /// Stages whose features feed a side output, 1-indexed, ascending.
    pub side_stages: Vec<usize>,
    pub deep_supervision: bool,
    /// Input volume dims `(nx, ny, nz)`.
    pub input_dims: [usize; 3],
}

impl Hed3DConfig {
    /// Full-size configuration: 128x128x64 input.
    pub fn full() -> Self {
        Self {
            in_channels: 1,
            widths: vec![16, 32, 64, 128, 128],
            convs_per_stage: 2,
            kernel: 3,
            side_stages: vec![3, 4, 5],
            deep_supervision: false,
            input_dims: [128, 128, 64],
        }
    }

    /// Reduced widths and a 64x64x32 input for CPU training.
    pub fn desk() -> Self {
        Self {
            widths: vec![4, 8, 16, 32, 32],
            input_dims: [64, 64, 32],
            ..Self::full()
        }
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Upsampling factor of the side output of stage `s` (1-indexed).
    pub fn upsample_factor(stage: usize) -> usize {
        1 << (stage - 1)
    }

    /// `(kernel, stride, pad)` of the transposed convolution for stage `s`.
    /// For factor `f > 1` the kernel spans `2f` so neighbouring stamps
    /// overlap, which makes trilinear upsampling representable.
    pub fn upsample_geometry(stage: usize) -> (usize, usize, usize) {
        let f = Self::upsample_factor(stage);
        if f == 1 {
            (1, 1, 0)
        } else {
            (2 * f, f, f / 2)
        }
    }

    /// Tensor shape `(1, C, D, H, W)` expected at the input.
    pub fn input_shape(&self) -> [usize; 5] {
        let [nx, ny, nz] = self.input_dims;
        [1, self.in_channels, nz, ny, nx]
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::Config(msg));
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return bad(format!("stage widths must be non-empty and positive: {:?}", self.widths));
        }
        if self.in_channels == 0 || self.convs_per_stage == 0 {
            return bad("in_channels and convs_per_stage must be positive".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        let stages = self.stages();
        if self.side_stages.is_empty() {
            return bad("at least one side output is required".into());
        }
        if self.side_stages.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("side stages must be strictly ascending: {:?}", self.side_stages));
        }
        if self.side_stages[0] == 0 || *self.side_stages.last().unwrap() != stages {
            return bad(format!(
                "side stages {:?} must lie in 1..={stages} and include the deepest stage",
                self.side_stages
            ));
        }
        let div = 1usize << (stages - 1);
        if self.input_dims.iter().any(|&d| d == 0 || d % div != 0) {
            return bad(format!(
                "input dims {:?} must be divisible by 2^(stages-1) = {div}",
                self.input_dims
            ));
        }
        Ok(())
    }
}

impl Default for Hed3DConfig {
    fn default() -> Self {
        Self::full()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        Hed3DConfig::full().validate().unwrap();
        Hed3DConfig::desk().validate().unwrap();
    }

    #[test]
    fn indivisible_dims_rejected() {
        let cfg = Hed3DConfig {
            input_dims: [65, 64, 32],
            ..Hed3DConfig::desk()
        };
        assert!(matches!(cfg.validate(), Err(NetError::Config(m)) if m.contains("divisible")));
    }

    #[test]
    fn deepest_stage_must_be_kept() {
        let cfg = Hed3DConfig {
            side_stages: vec![3, 4],
            ..Hed3DConfig::desk()
        };
        assert!(cfg.validate().is_err());
        let cfg = Hed3DConfig {
            side_stages: vec![4, 3, 5],
            ..Hed3DConfig::desk()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn upsampling_restores_input_size() {
        for s in 1..=5 {
            let (k, st, p) = Hed3DConfig::upsample_geometry(s);
            let f = Hed3DConfig::upsample_factor(s);
            for n in [2usize, 4, 8] {
                assert_eq!((n - 1) * st + k - 2 * p, n * f);
            }
        }
    }
}
