use std::path::Path;

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Read a PCM16 little-endian mono WAV at 16 kHz. Anything else is rejected
/// with an error naming the offending field; resampling is out of scope.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            field: "channels",
            detail: format!("expected mono, got {} channels", spec.channels),
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            field: "sample_rate",
            detail: format!("expected {SAMPLE_RATE} Hz, got {} Hz", spec.sample_rate),
        });
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            field: "encoding",
            detail: format!(
                "expected 16-bit integer PCM, got {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
    let samples = samples.map_err(|e| Error::format(path, e.to_string()))?;
    Ok(AudioClip {
        samples: samples.iter().map(|&s| s as f32 / 32768.0).collect(),
        sample_rate: SAMPLE_RATE,
    })
}

/// Write a clip back out as PCM16 mono. Values are scaled by 32768 and
/// saturated at the i16 range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    for &s in &clip.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav(&path, &AudioClip::from_samples(vec![0.0; 16000])).unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples.len(), 16000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stereo_rejected_naming_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let err = load_wav(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channels") && msg.contains("mono"), "{msg}");
    }

    #[test]
    fn wrong_rate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rate.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let msg = load_wav(&path).unwrap_err().to_string();
        assert!(msg.contains("sample_rate"), "{msg}");
    }

    #[test]
    fn fullscale_square_wave_pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("square.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..200 {
            w.write_sample(if i % 2 == 0 { i16::MIN } else { i16::MAX }).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        for (i, &s) in clip.samples.iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(s, -1.0);
            } else {
                assert_eq!(s, 32767.0 / 32768.0);
            }
        }
    }
}
