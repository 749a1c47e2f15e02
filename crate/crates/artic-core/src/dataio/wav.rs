//! Mono PCM WAV I/O. Reads 8/16/24/32-bit integer and f32 files; writes
//! 16-bit PCM. Samples are f64 in [-1, 1] in memory.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Waveform;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, got {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(path, e.to_string()))?
        }
    };
    if samples.is_empty() {
        return Err(Error::format(path, "wav file has no samples"));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Write 16-bit PCM mono, clamping samples to [-1, 1]. Writes to a sibling
/// temp file and renames, like every other writer.
pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut writer =
            hound::WavWriter::create(&tmp, spec).map_err(|e| Error::format(&tmp, e.to_string()))?;
        for &s in &wav.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer
                .write_sample(v)
                .map_err(|e| Error::format(&tmp, e.to_string()))?;
        }
        writer
            .finalize()
            .map_err(|e| Error::format(&tmp, e.to_string()))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn wav_round_trips_within_16_bit_precision() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f64> = (0..1600)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin())
            .collect();
        let wav = Waveform::new(samples.clone(), 16000).unwrap();
        write_wav(&path, &wav).unwrap();

        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples.len(), samples.len());
        // Write scales by 32767, read by 1/32768; together with rounding
        // the worst case is just under 1e-4 at full scale.
        for (a, b) in back.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_non_wav_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.wav");
        fs::write(&path, b"definitely not a wav").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn clamps_out_of_range_samples() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let wav = Waveform::new(vec![2.0, -3.0, 0.0], 8000).unwrap();
        write_wav(&path, &wav).unwrap();
        let back = read_wav(&path).unwrap();
        assert!(back.samples[0] > 0.99);
        assert!(back.samples[1] < -0.99);
        assert_eq!(back.samples[2], 0.0);
    }
}
