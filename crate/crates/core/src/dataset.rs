//! Training frames, validation views and their on-disk layout.
//!
//! ```text
//! manifest.json            preset, seed, scene hash, frame count, resolution, times, bbox
//! cameras.json             one camera per frame (intrinsics + row-major 3x4 camera-to-world)
//! frames/frame_0000.ppm    training images
//! masks_dyn/0000.pgm       ground-truth dynamic masks (optional)
//! masks_shadow/0000.pgm    ground-truth shadow masks (optional)
//! val/cameras.json         background-only validation poses
//! val/0000.ppm             background-only validation images
//! val/ground_0000.pgm      ground-plane pixels of each validation view (optional)
//! scene.json               the generating scene (optional)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::imageio::{read_mask, read_ppm, write_mask, write_ppm, Image, Mask};
use crate::render::Camera;
use crate::scene::SyntheticScene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub seed: u64,
    pub scene_hash: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub times: Vec<f64>,
    pub bbox: Aabb,
    #[serde(default)]
    pub val_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub camera: Camera,
    pub tau: f64,
    pub mask_dynamic: Option<Mask>,
    pub mask_shadow: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValView {
    pub image: Image,
    pub camera: Camera,
    pub ground_mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub frames: Vec<Frame>,
    pub val: Vec<ValView>,
    pub scene: Option<SyntheticScene>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if self.frames.is_empty() {
            return Err(Error::Dataset("dataset has no frames".into()));
        }
        if self.frames.len() != m.frame_count || m.times.len() != m.frame_count {
            return Err(Error::Dataset(format!(
                "manifest lists {} frames and {} times but {} frames are present",
                m.frame_count,
                m.times.len(),
                self.frames.len()
            )));
        }
        if m.times.windows(2).any(|w| w[1] <= w[0]) || m.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Dataset("frame times must increase strictly within [0, 1]".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let dims = (f.image.width, f.image.height);
            let masks_ok = [&f.mask_dynamic, &f.mask_shadow]
                .iter()
                .all(|m| m.as_ref().is_none_or(|m| (m.width, m.height) == dims));
            if dims != (m.width, m.height) || (f.camera.width, f.camera.height) != dims || !masks_ok {
                return Err(Error::Dataset(format!("frame {i} does not match the manifest resolution")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for sub in ["frames", "masks_dyn", "masks_shadow", "val"] {
            mkdir(&dir.join(sub))?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest)?;
        let cams: Vec<&Camera> = self.frames.iter().map(|f| &f.camera).collect();
        write_json(&dir.join("cameras.json"), &cams)?;
        for (i, f) in self.frames.iter().enumerate() {
            write_ppm(&dir.join(format!("frames/frame_{i:04}.ppm")), &f.image)?;
            if let Some(m) = &f.mask_dynamic {
                write_mask(&dir.join(format!("masks_dyn/{i:04}.pgm")), m)?;
            }
            if let Some(m) = &f.mask_shadow {
                write_mask(&dir.join(format!("masks_shadow/{i:04}.pgm")), m)?;
            }
        }
        let val_cams: Vec<&Camera> = self.val.iter().map(|v| &v.camera).collect();
        write_json(&dir.join("val/cameras.json"), &val_cams)?;
        for (i, v) in self.val.iter().enumerate() {
            write_ppm(&dir.join(format!("val/{i:04}.ppm")), &v.image)?;
            if let Some(m) = &v.ground_mask {
                write_mask(&dir.join(format!("val/ground_{i:04}.pgm")), m)?;
            }
        }
        if let Some(scene) = &self.scene {
            write_json(&dir.join("scene.json"), scene)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(Error::Dataset(format!("{} is not a dataset directory", dir.display())));
        }
        let manifest: Manifest = read_json(&manifest_path)?;
        let cameras: Vec<Camera> = read_json(&dir.join("cameras.json"))?;
        if cameras.len() != manifest.frame_count || manifest.times.len() != manifest.frame_count {
            return Err(Error::Dataset("camera or time count disagrees with the manifest".into()));
        }
        let optional_mask = |p: &Path| -> Result<Option<Mask>> {
            if p.is_file() {
                read_mask(p).map(Some)
            } else {
                Ok(None)
            }
        };
        let mut frames = Vec::with_capacity(cameras.len());
        for (i, camera) in cameras.into_iter().enumerate() {
            frames.push(Frame {
                image: read_ppm(&dir.join(format!("frames/frame_{i:04}.ppm")))?,
                camera,
                tau: manifest.times[i],
                mask_dynamic: optional_mask(&dir.join(format!("masks_dyn/{i:04}.pgm")))?,
                mask_shadow: optional_mask(&dir.join(format!("masks_shadow/{i:04}.pgm")))?,
            });
        }
        let val_cams_path = dir.join("val/cameras.json");
        let mut val = Vec::new();
        if val_cams_path.is_file() {
            let cams: Vec<Camera> = read_json(&val_cams_path)?;
            for (i, camera) in cams.into_iter().enumerate() {
                val.push(ValView {
                    image: read_ppm(&dir.join(format!("val/{i:04}.ppm")))?,
                    camera,
                    ground_mask: optional_mask(&dir.join(format!("val/ground_{i:04}.pgm")))?,
                });
            }
        }
        let scene_path = dir.join("scene.json");
        let scene = if scene_path.is_file() {
            Some(read_json(&scene_path)?)
        } else {
            None
        };
        let ds = Dataset {
            manifest,
            frames,
            val,
            scene,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn pixel_count(&self) -> usize {
        (self.manifest.width * self.manifest.height) as usize
    }
}
