#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub struct GoldenSignal {
    pub name: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
    pub frames: usize,
    pub coeffs: usize,
    pub mfcc: Vec<f64>,
}

pub struct MfccGolden {
    pub filter_peak_bins: Vec<usize>,
    pub signals: Vec<GoldenSignal>,
}

fn numbers<T: std::str::FromStr>(line: &str) -> Vec<T>
where
    T::Err: std::fmt::Debug,
{
    line.split_whitespace().map(|v| v.parse().unwrap()).collect()
}

/// Parse the output of `fixtures/mfcc_reference.py`.
pub fn mfcc_golden() -> MfccGolden {
    let text = std::fs::read_to_string(fixture("mfcc_golden.txt")).expect("golden file");
    let mut lines = text.lines();
    let head = lines.next().unwrap();
    let filter_peak_bins = numbers(head.strip_prefix("filter_peak_bins").unwrap());
    let mut signals = Vec::new();
    while let Some(line) = lines.next() {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f[0], "signal");
        let samples: Vec<f64> = numbers(lines.next().unwrap());
        assert_eq!(samples.len(), f[3].parse::<usize>().unwrap());
        let shape: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
        assert_eq!(shape[0], "mfcc");
        let (frames, coeffs) = (shape[1].parse().unwrap(), shape[2].parse().unwrap());
        let mut mfcc = Vec::with_capacity(frames * coeffs);
        for _ in 0..frames {
            mfcc.extend(numbers::<f64>(lines.next().unwrap()));
        }
        signals.push(GoldenSignal {
            name: f[1].to_string(),
            sample_rate: f[2].parse().unwrap(),
            samples,
            frames,
            coeffs,
            mfcc,
        });
    }
    MfccGolden { filter_peak_bins, signals }
}
