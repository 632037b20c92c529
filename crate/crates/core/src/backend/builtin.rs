use serde::{Deserialize, Serialize};

use super::{check_input, BackendError, PredictionBackend};
use crate::raster::{LogitMap, TensorChw};

/// Parameter file of the pixel-wise linear backend: `weights[class][channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
}

/// Parameter file of the convolution backend: `kernels[class][channel][3][3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvParams {
    pub kernels: Vec<Vec<[[f32; 3]; 3]>>,
    pub bias: Vec<f32>,
}

/// `out[cls, h, w] = sum_c weights[cls][c] * x[c, h, w] + bias[cls]`.
#[derive(Debug, Clone)]
pub struct LinearBackend {
    n_class: usize,
    channels: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearBackend {
    pub fn new(params: &LinearParams) -> Result<Self, BackendError> {
        let n_class = params.weights.len();
        if n_class == 0 || params.bias.len() != n_class {
            return Err(BackendError::InvalidParameters(format!(
                "{} weight rows but {} biases",
                n_class,
                params.bias.len()
            )));
        }
        let channels = params.weights[0].len();
        if channels == 0 || params.weights.iter().any(|row| row.len() != channels) {
            return Err(BackendError::InvalidParameters("ragged weight matrix".into()));
        }
        let weights: Vec<f64> = params.weights.iter().flatten().map(|&v| v as f64).collect();
        let bias: Vec<f64> = params.bias.iter().map(|&v| v as f64).collect();
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidParameters("non-finite parameter".into()));
        }
        Ok(Self {
            n_class,
            channels,
            weights,
            bias,
        })
    }

    pub fn weight(&self, cls: usize, c: usize) -> f64 {
        self.weights[cls * self.channels + c]
    }
}

impl PredictionBackend for LinearBackend {
    fn n_class(&self) -> usize {
        self.n_class
    }

    fn input_channels(&self) -> Option<usize> {
        Some(self.channels)
    }

    fn predict(&mut self, x: &TensorChw) -> Result<LogitMap, BackendError> {
        let wide = self.predict_wide(x)?;
        narrow(self.n_class, x, &wide)
    }

    fn predict_wide(&mut self, x: &TensorChw) -> Result<Vec<f64>, BackendError> {
        check_input(Some(self.channels), x)?;
        let n = x.pixels();
        let mut out = vec![0.0f64; self.n_class * n];
        for cls in 0..self.n_class {
            let plane = &mut out[cls * n..(cls + 1) * n];
            plane.fill(self.bias[cls]);
            for c in 0..self.channels {
                let w = self.weight(cls, c);
                if w == 0.0 {
                    continue;
                }
                for (o, &v) in plane.iter_mut().zip(x.channel(c)) {
                    *o += w * v as f64;
                }
            }
        }
        Ok(out)
    }
}

/// 3x3 cross-correlation over all channels with replicate padding.
#[derive(Debug, Clone)]
pub struct ConvBackend {
    n_class: usize,
    channels: usize,
    // [cls][c][ky][kx]
    kernels: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvBackend {
    pub fn new(params: &ConvParams) -> Result<Self, BackendError> {
        let n_class = params.kernels.len();
        if n_class == 0 || params.bias.len() != n_class {
            return Err(BackendError::InvalidParameters(format!(
                "{} kernel sets but {} biases",
                n_class,
                params.bias.len()
            )));
        }
        let channels = params.kernels[0].len();
        if channels == 0 || params.kernels.iter().any(|k| k.len() != channels) {
            return Err(BackendError::InvalidParameters("ragged kernel tensor".into()));
        }
        let kernels: Vec<f64> = params
            .kernels
            .iter()
            .flatten()
            .flat_map(|k| k.iter().flatten())
            .map(|&v| v as f64)
            .collect();
        let bias: Vec<f64> = params.bias.iter().map(|&v| v as f64).collect();
        if kernels.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(BackendError::InvalidParameters("non-finite parameter".into()));
        }
        Ok(Self {
            n_class,
            channels,
            kernels,
            bias,
        })
    }

    fn kernel(&self, cls: usize, c: usize) -> &[f64] {
        let start = (cls * self.channels + c) * 9;
        &self.kernels[start..start + 9]
    }
}

impl PredictionBackend for ConvBackend {
    fn n_class(&self) -> usize {
        self.n_class
    }

    fn input_channels(&self) -> Option<usize> {
        Some(self.channels)
    }

    fn predict(&mut self, x: &TensorChw) -> Result<LogitMap, BackendError> {
        let wide = self.predict_wide(x)?;
        narrow(self.n_class, x, &wide)
    }

    fn predict_wide(&mut self, x: &TensorChw) -> Result<Vec<f64>, BackendError> {
        check_input(Some(self.channels), x)?;
        let (height, width) = (x.height(), x.width());
        let n = height * width;
        let pw = width + 2;
        let mut padded = vec![0.0f64; (height + 2) * pw];
        let mut out = vec![0.0f64; self.n_class * n];
        for cls in 0..self.n_class {
            out[cls * n..(cls + 1) * n].fill(self.bias[cls]);
        }
        for c in 0..self.channels {
            let src = x.channel(c);
            for ph in 0..height + 2 {
                let h = ph.saturating_sub(1).min(height - 1);
                for pwi in 0..pw {
                    let w = pwi.saturating_sub(1).min(width - 1);
                    padded[ph * pw + pwi] = src[h * width + w] as f64;
                }
            }
            for cls in 0..self.n_class {
                let k = self.kernel(cls, c);
                if k.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let plane = &mut out[cls * n..(cls + 1) * n];
                for h in 0..height {
                    let rows = [
                        &padded[h * pw..(h + 1) * pw],
                        &padded[(h + 1) * pw..(h + 2) * pw],
                        &padded[(h + 2) * pw..(h + 3) * pw],
                    ];
                    let dst = &mut plane[h * width..(h + 1) * width];
                    for (w, o) in dst.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (ky, row) in rows.iter().enumerate() {
                            acc += k[ky * 3] * row[w] + k[ky * 3 + 1] * row[w + 1] + k[ky * 3 + 2] * row[w + 2];
                        }
                        *o += acc;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn narrow(n_class: usize, x: &TensorChw, wide: &[f64]) -> Result<LogitMap, BackendError> {
    Ok(LogitMap::new(
        n_class,
        x.height(),
        x.width(),
        wide.iter().map(|&v| v as f32).collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> TensorChw {
        TensorChw::new(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn linear_identity_weights() {
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![1.0, 0.0]],
            bias: vec![0.0],
        })
        .unwrap();
        let mut x = TensorChw::zeros(2, 2, 2);
        x.set(0, 1, 0, 7.0);
        x.set(1, 1, 0, 3.0);
        assert_eq!(b.predict(&x).unwrap().get(0, 1, 0), 7.0);
    }

    #[test]
    fn linear_hand_case_and_zero_weights() {
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![2.0, -1.0]],
            bias: vec![0.5],
        })
        .unwrap();
        assert_eq!(b.predict(&TensorChw::filled(2, 1, 1, 1.0)).unwrap().data(), &[1.5]);

        let mut zero = LinearBackend::new(&LinearParams {
            weights: vec![vec![0.0; 3], vec![0.0; 3]],
            bias: vec![-1.0, 4.0],
        })
        .unwrap();
        let out = zero.predict(&TensorChw::filled(3, 2, 2, 9.0)).unwrap();
        assert_eq!(out.data(), &[-1.0, -1.0, -1.0, -1.0, 4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn linear_rejects_bad_params_and_dims() {
        assert!(LinearBackend::new(&LinearParams {
            weights: vec![vec![1.0], vec![1.0, 2.0]],
            bias: vec![0.0, 0.0]
        })
        .is_err());
        assert!(LinearBackend::new(&LinearParams {
            weights: vec![vec![f32::INFINITY]],
            bias: vec![0.0]
        })
        .is_err());
        let mut b = LinearBackend::new(&LinearParams {
            weights: vec![vec![1.0]],
            bias: vec![0.0],
        })
        .unwrap();
        assert!(matches!(
            b.predict(&TensorChw::zeros(2, 1, 1)),
            Err(BackendError::DimMismatch { .. })
        ));
    }

    #[test]
    fn linear_scaling_and_additivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights: Vec<Vec<f32>> = (0..2)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let bias = vec![0.3, -0.7];
        let mut b = LinearBackend::new(&LinearParams {
            weights: weights.clone(),
            bias: bias.clone(),
        })
        .unwrap();
        let x = random_tensor(&mut rng, 3, 4, 4);
        let y = random_tensor(&mut rng, 3, 4, 4);
        let sum = TensorChw::new(3, 4, 4, x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap();
        let (fx, fy, fs) = (
            b.predict_wide(&x).unwrap(),
            b.predict_wide(&y).unwrap(),
            b.predict_wide(&sum).unwrap(),
        );
        for i in 0..fs.len() {
            let cls = i / 16;
            let expected = fx[i] + fy[i] - bias[cls] as f64;
            assert!((fs[i] - expected).abs() <= 1e-5 * (1.0 + expected.abs()));
        }

        let mut scaled = LinearBackend::new(&LinearParams {
            weights: weights.iter().map(|r| r.iter().map(|v| v * 2.0).collect()).collect(),
            bias: vec![0.0, 0.0],
        })
        .unwrap();
        let mut unscaled = LinearBackend::new(&LinearParams {
            weights,
            bias: vec![0.0, 0.0],
        })
        .unwrap();
        let (a, b2) = (scaled.predict_wide(&x).unwrap(), unscaled.predict_wide(&x).unwrap());
        for (s, u) in a.iter().zip(&b2) {
            assert!((s - 2.0 * u).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_averaging_on_constant_input() {
        let mut b = ConvBackend::new(&ConvParams {
            kernels: vec![vec![[[1.0 / 9.0; 3]; 3]]],
            bias: vec![0.0],
        })
        .unwrap();
        let out = b.predict_wide(&TensorChw::filled(1, 3, 4, 2.5)).unwrap();
        for v in out {
            assert!((v - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_delta_and_zero_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 2, 3, 5);
        let delta = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let mut b = ConvBackend::new(&ConvParams {
            kernels: vec![vec![delta, [[0.0; 3]; 3]]],
            bias: vec![0.0],
        })
        .unwrap();
        assert_eq!(b.predict(&x).unwrap().data(), x.channel(0));

        let mut zero = ConvBackend::new(&ConvParams {
            kernels: vec![vec![[[0.0; 3]; 3]; 2]; 2],
            bias: vec![1.5, -2.0],
        })
        .unwrap();
        let out = zero.predict(&x).unwrap();
        assert!(out.data()[..15].iter().all(|&v| v == 1.5));
        assert!(out.data()[15..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn conv_two_by_two_hand_case() {
        // x = [[1, 2], [3, 4]], replicate-padded to
        //   1 1 2 2
        //   1 1 2 2
        //   3 3 4 4
        //   3 3 4 4
        // kernel [[0,1,0],[0,0,0],[0,0,2]] picks up (north) + 2 * (south-east).
        //   (0,0): 1 + 2*4 = 9   (0,1): 2 + 2*4 = 10
        //   (1,0): 1 + 2*4 = 9   (1,1): 2 + 2*4 = 10
        let mut b = ConvBackend::new(&ConvParams {
            kernels: vec![vec![[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]]],
            bias: vec![0.0],
        })
        .unwrap();
        let x = TensorChw::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(b.predict(&x).unwrap().data(), &[9.0, 10.0, 9.0, 10.0]);

        // kernel [[0,0,0],[1,0,0],[0,0,0]] picks the west neighbour, plus bias 0.5.
        let mut west = ConvBackend::new(&ConvParams {
            kernels: vec![vec![[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]]],
            bias: vec![0.5],
        })
        .unwrap();
        assert_eq!(west.predict(&x).unwrap().data(), &[1.5, 1.5, 3.5, 3.5]);
    }

    #[test]
    fn conv_delta_equals_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights: Vec<Vec<f32>> = (0..2)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let bias = vec![0.25, -0.5];
        let kernels = weights
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&w| [[0.0, 0.0, 0.0], [0.0, w, 0.0], [0.0, 0.0, 0.0]])
                    .collect()
            })
            .collect();
        let mut lin = LinearBackend::new(&LinearParams {
            weights,
            bias: bias.clone(),
        })
        .unwrap();
        let mut conv = ConvBackend::new(&ConvParams { kernels, bias }).unwrap();
        let x = random_tensor(&mut rng, 4, 6, 5);
        let (a, b) = (lin.predict_wide(&x).unwrap(), conv.predict_wide(&x).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
