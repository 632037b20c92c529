//! Seeded synthetic flood scene with a cloud mask, six channels
//! `[VV, VH, R, G, B, NIR]`, and two linear models over it.
//!
//! Layout on a 64x64 grid:
//!
//! ```text
//!            cols 0..32 (water)     cols 32..64 (land)
//! rows 0..8   cloud, NIR -1.0        cloud, NIR 0.5
//! rows 8..16  cloud, NIR -1.5        cloud, NIR 0.5
//! rows 16..32 cloud, NIR 2.5         cloud, NIR 2.5
//! rows 32..64 clear, NIR -2.0        clear, NIR 0.5
//! ```
//!
//! SAR channels are -1 over water and +1 over land; RGB is 2 under cloud,
//! -1 over clear water and 0.5 over clear land. Every normalized value gets
//! uniform noise in `[-0.05, 0.05)`. Raw reflectance is `0.25 + 0.1 * n`
//! for normalized value `n`, so cloudy water in rows 0..16 sits below the
//! 0.2 NIR threshold and rows 16..32 above it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::backend::LinearParams;
use crate::raster::{write_mask, write_tensor, Mask2D, RasterError, TensorChw};

pub const SIZE: usize = 64;
pub const CHANNELS: usize = 6;
pub const BAND_NAMES: [&str; CHANNELS] = ["VV", "VH", "R", "G", "B", "NIR"];
pub const NIR: usize = 5;
pub const LAND: u8 = 0;
pub const WATER: u8 = 1;
pub const NOISE: f32 = 0.05;

#[derive(Debug, Clone)]
pub struct Scene {
    /// Normalized model input.
    pub input: TensorChw,
    /// Raw reflectance per channel.
    pub raw: TensorChw,
    pub label: Mask2D,
    pub cloud: Mask2D,
}

fn nir(h: usize, water: bool) -> f32 {
    match (h, water) {
        (0..=7, true) => -1.0,
        (8..=15, true) => -1.5,
        (16..=31, _) => 2.5,
        (_, true) => -2.0,
        (_, false) => 0.5,
    }
}

pub fn raw_from_normalized(n: f32) -> f32 {
    0.25 + 0.1 * n
}

pub fn case_study(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = TensorChw::zeros(CHANNELS, SIZE, SIZE);
    let mut label = Mask2D::filled(SIZE, SIZE, LAND);
    let mut cloud = Mask2D::filled(SIZE, SIZE, 0);
    for h in 0..SIZE {
        for w in 0..SIZE {
            let water = w < SIZE / 2;
            let cloudy = h < SIZE / 2;
            if water {
                label.set(h, w, WATER);
            }
            if cloudy {
                cloud.set(h, w, 1);
            }
            let sar = if water { -1.0 } else { 1.0 };
            let rgb = match (cloudy, water) {
                (true, _) => 2.0,
                (false, true) => -1.0,
                (false, false) => 0.5,
            };
            let base = [sar, sar, rgb, rgb, rgb, nir(h, water)];
            for (c, v) in base.iter().enumerate() {
                input.set(c, h, w, v + rng.gen_range(-NOISE..NOISE));
            }
        }
    }
    let raw_data = input.data().iter().map(|&n| raw_from_normalized(n)).collect();
    let raw = TensorChw::new(CHANNELS, SIZE, SIZE, raw_data).expect("finite");
    Scene {
        input,
        raw,
        label,
        cloud,
    }
}

/// Backend A: the water logit reads only the SAR channels.
pub fn sar_only_params() -> LinearParams {
    LinearParams {
        weights: vec![vec![2.0, 2.0, 0.0, 0.0, 0.0, 0.0], vec![-2.0, -2.0, 0.0, 0.0, 0.0, 0.0]],
        bias: vec![0.0, 0.0],
    }
}

/// Backend B: SAR and NIR both drive the water logit.
pub fn sar_nir_params() -> LinearParams {
    LinearParams {
        weights: vec![
            vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.5],
            vec![-1.0, -1.0, 0.0, 0.0, 0.0, -1.5],
        ],
        bias: vec![0.0, 0.0],
    }
}

pub fn groups_json() -> serde_json::Value {
    json!({
        "total_channels": CHANNELS,
        "band_names": BAND_NAMES,
        "groups": [
            {"name": "SAR", "members": ["VV", "VH"]},
            {"name": "RGB", "members": ["R", "G", "B"]},
            {"name": "NIR", "members": ["NIR"]},
        ],
    })
}

pub fn rules_json() -> serde_json::Value {
    let cloudy_tp = json!([
        {"pred": "in_mask", "mask": "cloud"},
        {"pred": "in_tp", "class": "water"},
    ]);
    let mut dark = cloudy_tp.as_array().cloned().unwrap_or_default();
    dark.push(json!({"pred": "band_below", "band": "raw", "channel": NIR, "threshold": 0.2}));
    json!({
        "rules": [
            {"name": "RE_case1-1", "when": cloudy_tp, "reference": ["SAR"]},
            {"name": "RE_case1-2", "when": dark, "reference": ["SAR", "NIR"]},
        ]
    })
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{0}: {1}")]
    Io(PathBuf, io::Error),
}

fn write_json(path: PathBuf, value: &serde_json::Value) -> Result<(), SynthError> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    fs::write(&path, text + "\n").map_err(|e| SynthError::Io(path, e))
}

/// Writes the scene, configs and a two-run manifest into `dir`; returns the
/// manifest path.
pub fn write_case_study(dir: &Path, seed: u64) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(dir).map_err(|e| SynthError::Io(dir.to_path_buf(), e))?;
    let scene = case_study(seed);
    write_tensor(&scene.input, dir.join("input.adgt"))?;
    write_tensor(&scene.raw, dir.join("raw.adgt"))?;
    write_mask(&scene.label, dir.join("label.adgm"))?;
    write_mask(&scene.cloud, dir.join("cloud.adgm"))?;
    write_json(dir.join("groups.json"), &groups_json())?;
    write_json(dir.join("rules.json"), &rules_json())?;
    for (name, params) in [
        ("backend_a.json", sar_only_params()),
        ("backend_b.json", sar_nir_params()),
    ] {
        write_json(dir.join(name), &serde_json::to_value(params).expect("params serialize"))?;
    }
    let manifest = json!({
        "seed": seed,
        "groups": "groups.json",
        "rules": "rules.json",
        "classes": ["land", "water"],
        "tiles": [{
            "id": "scene",
            "input": "input.adgt",
            "label": "label.adgm",
            "masks": {"cloud": "cloud.adgm"},
            "bands": {"raw": "raw.adgt"},
        }],
        "runs": [
            {"id": "A", "backend": {"kind": "linear", "params": "backend_a.json"}},
            {"id": "B", "backend": {"kind": "linear", "params": "backend_b.json"}},
        ],
        "background": {"kind": "zeros"},
        "output_dir": "out",
        "options": {
            "rank_by": "signed",
            "k_policy": "paper",
            "class_of_interest": "water",
            "mccg_within": "cloud",
            "histogram": {
                "band": "raw",
                "channel": NIR,
                "edges": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            },
        },
    });
    let path = dir.join("manifest.json");
    write_json(path.clone(), &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_reproducible() {
        let a = case_study(7);
        let b = case_study(7);
        assert_eq!(a.input, b.input);
        assert_ne!(a.input, case_study(8).input);
        assert_eq!(a.label.count_nonzero(), SIZE * SIZE / 2);
        assert_eq!(a.cloud.count_nonzero(), SIZE * SIZE / 2);
    }

    #[test]
    fn nir_threshold_regions() {
        let s = case_study(1);
        for h in 0..32 {
            let r = s.raw.get(NIR, h, 3);
            assert_eq!(r < 0.2, h < 16, "row {h}: {r}");
        }
    }
}
