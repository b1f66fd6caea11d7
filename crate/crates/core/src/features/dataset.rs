//! Labeled clips, the JSONL manifest, and the raw media file format.
//!
//! A manifest line looks like
//!
//! ```text
//! {"id":"clip-1","label":3,"video":{"path":"media/clip-1.video"},"audio":{"path":"media/clip-1.audio"}}
//! ```
//!
//! where either media reference may instead be `{"synth":{"config":{..},"index":7}}`
//! to regenerate a synthetic clip. Relative paths resolve against the
//! manifest's directory.
//!
//! Media files: the 8-byte magic `AVFMEDIA`, a little-endian `u32` header
//! length, a JSON header (`kind`, `shape`, and `fps` or `sample_rate`), then
//! little-endian `f32` values.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{generate_sample, SynthConfig};
use super::{AudioTrack, VideoClip};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"AVFMEDIA";

/// One labeled audio-visual clip.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub video: VideoClip,
    pub audio: AudioTrack,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRef {
    pub config: SynthConfig,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum MediaRef {
    Path(PathBuf),
    Synth(SynthRef),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: usize,
    pub video: MediaRef,
    pub audio: MediaRef,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MediaHeader {
    Video { shape: [usize; 4], fps: f32 },
    Audio { len: usize, sample_rate: u32 },
}

fn write_media(path: &Path, header: &MediaHeader, values: &[f32]) -> Result<()> {
    let head = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::with_capacity(12 + head.len() + 4 * values.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(head.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&head);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_media(path: &Path) -> Result<(MediaHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a media file"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let head = bytes.get(12..12 + n).ok_or_else(|| bad("truncated header"))?;
    let header: MediaHeader =
        serde_json::from_slice(head).map_err(|e| bad(&format!("bad header: {e}")))?;
    let body = &bytes[12 + n..];
    if body.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of f32 values"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

pub fn write_video(path: &Path, clip: &VideoClip) -> Result<()> {
    let header = MediaHeader::Video {
        shape: [clip.frames, clip.height, clip.width, 3],
        fps: clip.fps,
    };
    write_media(path, &header, &clip.data)
}

pub fn read_video(path: &Path) -> Result<VideoClip> {
    match read_media(path)? {
        (MediaHeader::Video { shape, fps }, data) => {
            if shape[3] != 3 {
                return Err(Error::Format(format!("{}: video must have 3 channels", path.display())));
            }
            VideoClip::new(shape[0], shape[1], shape[2], data, fps)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
        }
        _ => Err(Error::Format(format!("{}: expected a video file", path.display()))),
    }
}

pub fn write_audio(path: &Path, track: &AudioTrack) -> Result<()> {
    let header = MediaHeader::Audio {
        len: track.samples.len(),
        sample_rate: track.sample_rate,
    };
    write_media(path, &header, &track.samples)
}

pub fn read_audio(path: &Path) -> Result<AudioTrack> {
    match read_media(path)? {
        (MediaHeader::Audio { len, sample_rate }, samples) if len == samples.len() => {
            Ok(AudioTrack {
                samples,
                sample_rate,
            })
        }
        _ => Err(Error::Format(format!("{}: expected an audio file", path.display()))),
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(entry);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{}: manifest is empty", path.display())));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for e in entries {
        let line = serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn resolve(base: &Path, media: &MediaRef) -> Result<MediaSource> {
    Ok(match media {
        MediaRef::Path(p) if p.is_absolute() => MediaSource::File(p.clone()),
        MediaRef::Path(p) => MediaSource::File(base.join(p)),
        MediaRef::Synth(s) => MediaSource::Synth(s.clone()),
    })
}

enum MediaSource {
    File(PathBuf),
    Synth(SynthRef),
}

/// Decode one manifest entry.
pub fn load_entry(base: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let video = match resolve(base, &entry.video)? {
        MediaSource::File(p) => read_video(&p)?,
        MediaSource::Synth(s) => generate_sample(&s.config, s.index)?.video,
    };
    let audio = match resolve(base, &entry.audio)? {
        MediaSource::File(p) => read_audio(&p)?,
        MediaSource::Synth(s) => generate_sample(&s.config, s.index)?.audio,
    };
    Ok(Sample {
        id: entry.id.clone(),
        video,
        audio,
        label: entry.label,
    })
}

/// Load every clip listed in a manifest.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .iter()
        .map(|e| load_entry(base, e))
        .collect()
}

/// Write `samples` as media files under `dir/media` plus `dir/manifest.jsonl`.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, samples: impl IntoIterator<Item = Result<Sample>>) -> Result<PathBuf> {
    let media = dir.join("media");
    fs::create_dir_all(&media).map_err(|e| Error::io(&media, e))?;
    let mut entries = Vec::new();
    for sample in samples {
        let sample = sample?;
        let v = PathBuf::from("media").join(format!("{}.video", sample.id));
        let a = PathBuf::from("media").join(format!("{}.audio", sample.id));
        write_video(&dir.join(&v), &sample.video)?;
        write_audio(&dir.join(&a), &sample.audio)?;
        entries.push(ManifestEntry {
            id: sample.id,
            label: sample.label,
            video: MediaRef::Path(v),
            audio: MediaRef::Path(a),
        });
    }
    let path = dir.join("manifest.jsonl");
    write_manifest(&path, &entries)?;
    Ok(path)
}
