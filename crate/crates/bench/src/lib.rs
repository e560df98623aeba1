//! Shared fixture generators for the benchmarks.

use deduct_core::codebook::{CodeEntry, Codebook, DataItem};
use deduct_core::LabelSequence;

/// Deterministic pseudo-random stream (splitmix64).
pub struct Stream(u64);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn draw(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

/// Two label sequences of length `n` over `k` labels, seeded.
pub fn label_pair(n: usize, k: usize, seed: u64) -> (LabelSequence, LabelSequence) {
    let names: Vec<String> = (0..k).map(|i| format!("L{i}")).collect();
    let mut stream = Stream::new(seed);
    let mut draw = |_: usize| names[(stream.draw() % k as u64) as usize].clone();
    let a: Vec<String> = (0..n).map(&mut draw).collect();
    let b: Vec<String> = (0..n).map(&mut draw).collect();
    (
        LabelSequence::new("a", a, names.clone()),
        LabelSequence::new("b", b, names),
    )
}

/// A codebook with `codes` entries and five examples each.
pub fn synthetic_codebook(codes: usize) -> Codebook {
    Codebook {
        dimension_name: "synthetic".into(),
        language_tag: None,
        codes: (0..codes)
            .map(|i| CodeEntry {
                label: format!("CODE{i}"),
                description: format!("applies when the item exhibits property {i}"),
                examples: (0..5).map(|j| format!("example {j} for code {i}?")).collect(),
            })
            .collect(),
    }
}

pub fn item() -> DataItem {
    DataItem::new("bench", "Why were dinosaurs so big?")
}
