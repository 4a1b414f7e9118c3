//! Synthetic level-labeled corpora with the split sizes of public CEFR
//! benchmarks.
//!
//! Real benchmark text cannot be bundled, so sentences are generated from a
//! fixed vocabulary by a seeded RNG. Sentence length follows the label
//! loosely: most sentences fall inside the mock estimator's word band for
//! their level, the rest are one or two bands shorter, which mimics the
//! label/length disagreement of real data and gives the reward matrix some
//! texture under mock backends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusSplit, LabeledSentence};
use crate::levels::ProficiencyLevel;

/// Per-level sentence counts for one split, ordered A1..C2.
pub type LevelCountRow = [usize; 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusShape {
    pub name: &'static str,
    pub language: &'static str,
    pub train: LevelCountRow,
    pub dev: LevelCountRow,
    pub test: LevelCountRow,
}

pub const CEFR_SP_PARTIAL: CorpusShape = CorpusShape {
    name: "cefr_sp_partial",
    language: "en",
    train: [47, 959, 2245, 2472, 1364, 91],
    dev: [40, 154, 513, 399, 193, 67],
    test: [0, 0, 0, 142, 187, 72],
};

pub const CEFR_SP_WHOLE: CorpusShape = CorpusShape {
    name: "cefr_sp_whole",
    language: "en",
    train: [55, 1324, 5481, 5209, 1821, 100],
    dev: [41, 165, 685, 651, 227, 74],
    test: [0, 0, 0, 188, 227, 74],
};

pub const README_EN: CorpusShape = CorpusShape {
    name: "readme_en",
    language: "en",
    train: [146, 539, 485, 713, 304, 56],
    dev: [14, 69, 61, 91, 39, 9],
    test: [0, 0, 0, 92, 34, 6],
};

pub const README_FR: CorpusShape = CorpusShape {
    name: "readme_fr",
    language: "fr",
    train: [107, 302, 343, 277, 193, 97],
    dev: [14, 31, 52, 29, 22, 17],
    test: [0, 0, 0, 46, 26, 12],
};

pub const README_RU: CorpusShape = CorpusShape {
    name: "readme_ru",
    language: "ru",
    train: [321, 223, 334, 260, 193, 73],
    dev: [39, 34, 38, 32, 23, 10],
    test: [0, 0, 0, 34, 21, 8],
};

pub const README_AR: CorpusShape = CorpusShape {
    name: "readme_ar",
    language: "ar",
    train: [67, 198, 414, 434, 284, 146],
    dev: [6, 26, 44, 63, 38, 19],
    test: [0, 0, 0, 68, 28, 18],
};

pub const README_HI: CorpusShape = CorpusShape {
    name: "readme_hi",
    language: "hi",
    train: [204, 230, 223, 200, 172, 150],
    dev: [27, 22, 38, 31, 20, 11],
    test: [0, 0, 0, 32, 30, 13],
};

pub const ALL_SHAPES: [CorpusShape; 7] = [
    CEFR_SP_PARTIAL,
    CEFR_SP_WHOLE,
    README_EN,
    README_FR,
    README_RU,
    README_AR,
    README_HI,
];

pub fn shape_by_name(name: &str) -> Option<CorpusShape> {
    ALL_SHAPES.iter().copied().find(|s| s.name.eq_ignore_ascii_case(name))
}

const VOCAB: &[&str] = &[
    "river",
    "market",
    "teacher",
    "window",
    "garden",
    "letter",
    "station",
    "morning",
    "village",
    "doctor",
    "bridge",
    "kitchen",
    "forest",
    "museum",
    "picture",
    "question",
    "answer",
    "journey",
    "weather",
    "friend",
    "family",
    "street",
    "evening",
    "holiday",
    "library",
    "student",
    "company",
    "country",
    "mountain",
    "season",
    "careful",
    "bright",
    "quiet",
    "early",
    "simple",
    "strong",
    "gentle",
    "narrow",
    "ancient",
    "modern",
    "walks",
    "reads",
    "builds",
    "carries",
    "opens",
    "finds",
    "watches",
    "follows",
    "changes",
    "explains",
    "quickly",
    "slowly",
    "often",
    "rarely",
    "together",
    "outside",
    "nearby",
    "again",
    "almost",
    "perhaps",
    "policy",
    "economy",
    "research",
    "evidence",
    "framework",
    "analysis",
    "principle",
    "strategy",
    "variation",
    "structure",
    "considerable",
    "substantial",
    "ambiguous",
    "intricate",
    "benevolent",
    "orthogonal",
    "rigorous",
    "tentative",
    "implicit",
    "coherent",
    "the",
    "a",
    "of",
    "with",
    "under",
    "across",
    "between",
    "before",
    "after",
    "because",
    "although",
    "whereas",
    "despite",
    "beyond",
    "within",
    "toward",
    "around",
    "through",
    "during",
    "without",
];

fn band(level: ProficiencyLevel) -> (usize, usize) {
    match level {
        ProficiencyLevel::A1 => (3, 7),
        ProficiencyLevel::A2 => (8, 12),
        ProficiencyLevel::B1 => (13, 18),
        ProficiencyLevel::B2 => (19, 25),
        ProficiencyLevel::C1 => (26, 32),
        ProficiencyLevel::C2 => (33, 42),
    }
}

fn sentence_length(rng: &mut ChaCha8Rng, level: ProficiencyLevel) -> usize {
    let roll: f64 = rng.random();
    let drop = if roll < 0.6 {
        0
    } else if roll < 0.85 {
        1
    } else {
        2
    };
    let idx = level.index().saturating_sub(drop).max(1);
    let (lo, hi) = band(ProficiencyLevel::from_index(idx).expect("index in range"));
    rng.random_range(lo..=hi)
}

fn make_sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut out: Vec<String> = (0..words)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
        .collect();
    if let Some(first) = out.first_mut() {
        let mut c = first.chars();
        if let Some(h) = c.next() {
            *first = h.to_uppercase().chain(c).collect();
        }
    }
    let mut s = out.join(" ");
    s.push('.');
    s
}

fn seed_for(name: &str, split: &str, seed: u64) -> u64 {
    // FNV-1a over the labels, mixed with the caller's seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes().chain([0u8]).chain(split.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed
}

pub fn synthesize_split(shape: &CorpusShape, split: &str, counts: &LevelCountRow, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(shape.name, split, seed));
    let mut out = Vec::with_capacity(counts.iter().sum());
    // interleave levels so corpus order is not sorted by level
    let mut remaining = *counts;
    let mut n = 0usize;
    while remaining.iter().any(|&c| c > 0) {
        for (i, level) in ProficiencyLevel::ALL.iter().enumerate().rev() {
            if remaining[i] == 0 {
                continue;
            }
            remaining[i] -= 1;
            let words = sentence_length(&mut rng, *level);
            out.push(LabeledSentence {
                id: format!("{}-{split}-{n:05}", shape.name),
                text: make_sentence(&mut rng, words),
                level: *level,
                language: shape.language.to_string(),
                source_corpus: format!("synthetic-{}", shape.name),
            });
            n += 1;
        }
    }
    out
}

pub fn synthesize(shape: &CorpusShape, seed: u64) -> CorpusSplit {
    CorpusSplit {
        train: synthesize_split(shape, "train", &shape.train, seed),
        dev: synthesize_split(shape, "dev", &shape.dev, seed),
        test: synthesize_split(shape, "test", &shape.test, seed),
    }
}
