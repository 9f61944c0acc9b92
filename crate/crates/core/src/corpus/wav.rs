//! 16-bit PCM mono WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Waveform;

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            "wav",
            path,
            format!("expected mono, got {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => {
            return Err(Error::format(
                "wav",
                path,
                format!("expected 16-bit PCM, got {bits}-bit {fmt:?}"),
            ))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for v in w.samples() {
        writer.write_sample(quantize(*v)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn quantize(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Rounds every sample to the nearest 16-bit PCM level, matching what a
/// write/read cycle would produce.
pub fn pcm_round_trip(w: &Waveform) -> Waveform {
    let samples = w
        .samples()
        .iter()
        .map(|v| quantize(*v) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, w.sample_rate()).expect("quantized samples are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_matches_quantizer() {
        let dir = tempfile::tempdir().unwrap();
        let w = Waveform::new(vec![0.0, 0.5, -0.25, 1.5, -2.0, 1e-6], 8000).unwrap();
        let path = dir.path().join("x/y.wav");
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 8000);
        assert_eq!(back, pcm_round_trip(&w));
        assert_eq!(back.samples()[3], 32767.0 / 32768.0);
        assert_eq!(back.samples()[4], -1.0);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_wav("/nonexistent/file.wav"),
            Err(Error::MissingFile(_))
        ));
    }
}
