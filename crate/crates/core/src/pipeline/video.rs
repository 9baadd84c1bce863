//! Video input as a directory of pre-extracted frames.
//!
//! Frame images are ordered by file name. An optional `video.json` gives the
//! frame rate (default 1 fps), explicit per-frame timestamps and the audio
//! track file name; without it an `audio.*` file in the directory is used.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::database_builder::sample_uniform;
use crate::ports::{AudioRef, FrameRef};

use super::PipelineError;

pub const VIDEO_META_FILE: &str = "video.json";
const FRAME_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "webp", "bmp"];
const AUDIO_EXTENSIONS: [&str; 5] = ["wav", "mp3", "flac", "m4a", "ogg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoMeta {
    pub fps: f64,
    pub timestamps: Option<Vec<f64>>,
    pub audio: Option<String>,
}

impl Default for VideoMeta {
    fn default() -> Self {
        Self { fps: 1.0, timestamps: None, audio: None }
    }
}

#[derive(Debug, Clone)]
pub struct VideoSource {
    pub root: PathBuf,
    pub frames: Vec<PathBuf>,
    pub timestamps: Vec<f64>,
    pub audio: Option<PathBuf>,
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

impl VideoSource {
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        if !path.is_dir() {
            return Err(PipelineError::DecodeFailure(format!(
                "{} is not a frame directory; extract frames first (e.g. `ffmpeg -i video.mp4 -vf fps=1 frames/%06d.png`)",
                path.display()
            )));
        }
        let root = path.canonicalize().map_err(|e| PipelineError::io(path, e))?;
        let meta_path = root.join(VIDEO_META_FILE);
        let meta: VideoMeta = if meta_path.is_file() {
            let text = fs::read_to_string(&meta_path).map_err(|e| PipelineError::io(&meta_path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::DecodeFailure(format!("{}: {e}", meta_path.display())))?
        } else {
            VideoMeta::default()
        };

        let mut frames = Vec::new();
        let mut audio_candidates = Vec::new();
        for entry in fs::read_dir(&root).map_err(|e| PipelineError::io(&root, e))? {
            let p = entry.map_err(|e| PipelineError::io(&root, e))?.path();
            if !p.is_file() {
                continue;
            }
            if has_ext(&p, &FRAME_EXTENSIONS) {
                frames.push(p);
            } else if has_ext(&p, &AUDIO_EXTENSIONS) {
                audio_candidates.push(p);
            }
        }
        frames.sort();
        audio_candidates.sort();
        if frames.is_empty() {
            return Err(PipelineError::DecodeFailure(format!("no frame images in {}", root.display())));
        }

        let timestamps = match &meta.timestamps {
            Some(ts) => {
                if ts.len() != frames.len() {
                    return Err(PipelineError::DecodeFailure(format!(
                        "{} lists {} timestamps for {} frames",
                        VIDEO_META_FILE,
                        ts.len(),
                        frames.len()
                    )));
                }
                ts.clone()
            }
            None => {
                if !(meta.fps.is_finite() && meta.fps > 0.0) {
                    return Err(PipelineError::DecodeFailure(format!("fps must be positive, got {}", meta.fps)));
                }
                (0..frames.len()).map(|i| i as f64 / meta.fps).collect()
            }
        };
        if timestamps.windows(2).any(|w| w[1] < w[0]) || timestamps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(PipelineError::DecodeFailure("frame timestamps must be finite, non-negative and non-decreasing".into()));
        }

        let audio = match &meta.audio {
            Some(name) => {
                let p = root.join(name);
                if !p.is_file() {
                    return Err(PipelineError::DecodeFailure(format!("audio track {} not found", p.display())));
                }
                Some(p)
            }
            None => audio_candidates
                .iter()
                .find(|p| p.file_stem().is_some_and(|s| s == "audio"))
                .or(audio_candidates.first())
                .cloned(),
        };

        Ok(Self { root, frames, timestamps, audio })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.timestamps.last().copied().unwrap_or(0.0)
    }

    /// `n` frames spread uniformly over the whole video, by index.
    pub fn sample(&self, n: usize) -> Vec<FrameRef> {
        sample_uniform(self.frames.len(), n)
            .into_iter()
            .map(|i| FrameRef { frame_index: i as u64, timestamp_s: self.timestamps[i], image_ref: self.frames[i].clone() })
            .collect()
    }

    pub fn audio_ref(&self) -> AudioRef {
        match &self.audio {
            Some(p) => AudioRef::file(p.clone()),
            None => AudioRef::none(),
        }
    }

    /// Digest over file names and contents of the sampled frames, the audio
    /// track and the metadata file.
    pub fn content_fingerprint(&self, sampled: &[FrameRef]) -> Result<String, PipelineError> {
        let mut h = Sha256::new();
        let mut feed = |label: &str, p: &Path| -> Result<(), PipelineError> {
            h.update(label.as_bytes());
            h.update(p.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
            h.update([0]);
            let mut f = fs::File::open(p).map_err(|e| PipelineError::io(p, e))?;
            let mut buf = [0u8; 64 * 1024];
            loop {
                let n = f.read(&mut buf).map_err(|e| PipelineError::io(p, e))?;
                if n == 0 {
                    break;
                }
                h.update(&buf[..n]);
            }
            h.update([0xff]);
            Ok(())
        };
        for f in sampled {
            feed(&format!("frame:{}:{}", f.frame_index, f.timestamp_s), &f.image_ref)?;
        }
        if let Some(a) = &self.audio {
            feed("audio", a)?;
        }
        let meta = self.root.join(VIDEO_META_FILE);
        if meta.is_file() {
            feed("meta", &meta)?;
        }
        Ok(hex(&h.finalize()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
