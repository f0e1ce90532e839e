//! Per-frame binary masks stacked into spatiotemporal volumes, and the
//! ST-IoU overlap between two such volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One binary frame mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(Error::DimMismatch {
                context: "mask frame".into(),
                expected: (width as usize) * (height as usize),
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }
}

/// Ordered per-frame mask stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskVolume {
    frames: Vec<Mask2D>,
}

impl MaskVolume {
    pub fn new(frames: Vec<Mask2D>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::input("mask volume needs at least one frame"))?;
        let (w, h) = (first.width, first.height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(Error::input("all mask frames must share the same dims"));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Mask2D] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Volume overlap: summed per-frame intersection over summed union; an
/// everywhere-empty pair scores 0.
pub fn st_iou(pred: &MaskVolume, gt: &MaskVolume) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimMismatch {
            context: "st_iou frame count".into(),
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let mut intersection = 0u64;
    let mut union = 0u64;
    for (p, g) in pred.frames().iter().zip(gt.frames()) {
        if p.width != g.width || p.height != g.height {
            return Err(Error::input("st_iou frames must share dims"));
        }
        for (&a, &b) in p.bits.iter().zip(&g.bits) {
            intersection += (a && b) as u64;
            union += (a || b) as u64;
        }
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(intersection as f64 / union as f64)
    }
}

/// JSON container for run-length-encoded mask volumes.
///
/// Each frame is a list of run lengths over the row-major pixel order,
/// alternating off/on and starting with an off run (possibly 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RleMasks {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<Vec<u32>>,
}

impl RleMasks {
    pub fn encode(volume: &MaskVolume) -> Self {
        let (width, height) = (volume.frames()[0].width, volume.frames()[0].height);
        let frames = volume
            .frames()
            .iter()
            .map(|f| {
                let mut runs = Vec::new();
                let mut current = false;
                let mut run = 0u32;
                for &b in &f.bits {
                    if b == current {
                        run += 1;
                    } else {
                        runs.push(run);
                        current = b;
                        run = 1;
                    }
                }
                runs.push(run);
                runs
            })
            .collect();
        Self {
            width,
            height,
            frames,
        }
    }

    pub fn decode(&self) -> Result<MaskVolume> {
        let total = (self.width as usize) * (self.height as usize);
        let mut frames = Vec::with_capacity(self.frames.len());
        for (i, runs) in self.frames.iter().enumerate() {
            let mut bits = Vec::with_capacity(total);
            let mut value = false;
            for &run in runs {
                bits.extend(std::iter::repeat(value).take(run as usize));
                value = !value;
            }
            if bits.len() != total {
                return Err(Error::input(format!(
                    "frame {i}: runs sum to {} pixels, expected {total}",
                    bits.len()
                )));
            }
            frames.push(Mask2D::new(self.width, self.height, bits)?);
        }
        MaskVolume::new(frames)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut bytes =
            serde_json::to_vec(self).map_err(|e| Error::format(path, e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}
