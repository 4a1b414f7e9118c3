//! The ordinal proficiency scale, downward transitions and level paths.
//!
//! Levels are embedded as the integers 1..=6 (`A1` = 1, `C2` = 6). All
//! distance, RMSE and adjacency arithmetic in the crate runs on these
//! indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LevelError {
    #[error("unknown proficiency level {0:?}")]
    UnknownLevel(String),
    #[error("invalid transition {from}->{target}: target must be strictly below source")]
    NotDownward {
        from: ProficiencyLevel,
        target: ProficiencyLevel,
    },
    #[error("a level path needs at least two levels, got {0}")]
    PathTooShort(usize),
    #[error("level path is not strictly descending at position {position}: {path}")]
    NotDescending { position: usize, path: String },
}

/// One of the six CEFR proficiency levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProficiencyLevel {
    A1 = 1,
    A2 = 2,
    B1 = 3,
    B2 = 4,
    C1 = 5,
    C2 = 6,
}

impl ProficiencyLevel {
    /// All levels in ascending order.
    pub const ALL: [ProficiencyLevel; 6] = [
        ProficiencyLevel::A1,
        ProficiencyLevel::A2,
        ProficiencyLevel::B1,
        ProficiencyLevel::B2,
        ProficiencyLevel::C1,
        ProficiencyLevel::C2,
    ];

    /// Levels a test split may hold as simplification sources.
    pub const SOURCES: [ProficiencyLevel; 3] = [ProficiencyLevel::C2, ProficiencyLevel::C1, ProficiencyLevel::B2];

    /// Levels requested as simplification targets.
    pub const TARGETS: [ProficiencyLevel; 3] = [ProficiencyLevel::B1, ProficiencyLevel::A2, ProficiencyLevel::A1];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(index: u8) -> Option<Self> {
        Self::ALL.get(usize::from(index).checked_sub(1)?).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ProficiencyLevel::A1 => "A1",
            ProficiencyLevel::A2 => "A2",
            ProficiencyLevel::B1 => "B1",
            ProficiencyLevel::B2 => "B2",
            ProficiencyLevel::C1 => "C1",
            ProficiencyLevel::C2 => "C2",
        }
    }

    /// The level one step below, if any.
    pub fn below(self) -> Option<Self> {
        Self::from_index(self.index() - 1)
    }

    /// Levels strictly between `self` and `lower`, highest first.
    pub fn between(self, lower: Self) -> Vec<Self> {
        Self::ALL
            .iter()
            .rev()
            .copied()
            .filter(|l| *l < self && *l > lower)
            .collect()
    }
}

impl fmt::Display for ProficiencyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.symbol())
    }
}

impl FromStr for ProficiencyLevel {
    type Err = LevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_level(s)
    }
}

impl Serialize for ProficiencyLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.symbol())
    }
}

impl<'de> Deserialize<'de> for ProficiencyLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_level(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses a level symbol, ignoring ASCII case and surrounding whitespace.
pub fn parse_level(text: &str) -> Result<ProficiencyLevel, LevelError> {
    let t = text.trim();
    ProficiencyLevel::ALL
        .iter()
        .copied()
        .find(|l| l.symbol().eq_ignore_ascii_case(t))
        .ok_or_else(|| LevelError::UnknownLevel(text.to_string()))
}

pub fn level_distance(a: ProficiencyLevel, b: ProficiencyLevel) -> u8 {
    a.index().abs_diff(b.index())
}

/// A single downward simplification step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Transition {
    source: ProficiencyLevel,
    target: ProficiencyLevel,
}

impl Transition {
    pub fn new(source: ProficiencyLevel, target: ProficiencyLevel) -> Result<Self, LevelError> {
        if target >= source {
            return Err(LevelError::NotDownward { from: source, target });
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> ProficiencyLevel {
        self.source
    }

    pub fn target(&self) -> ProficiencyLevel {
        self.target
    }

    /// How many levels this step skips down.
    pub fn span(&self) -> u8 {
        level_distance(self.source, self.target)
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("{}->{}", self.source, self.target))
    }
}

impl<'de> Deserialize<'de> for Transition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            source: ProficiencyLevel,
            target: ProficiencyLevel,
        }
        let raw = Raw::deserialize(deserializer)?;
        Transition::new(raw.source, raw.target).map_err(serde::de::Error::custom)
    }
}

/// Every downward transition out of `sources` that does not go below
/// `target_floor`, ordered by descending source then descending target.
pub fn downward_transitions(sources: &[ProficiencyLevel], target_floor: ProficiencyLevel) -> Vec<Transition> {
    let mut srcs: Vec<ProficiencyLevel> = sources.to_vec();
    srcs.sort_unstable_by(|a, b| b.cmp(a));
    srcs.dedup();
    let mut out = Vec::new();
    for s in srcs {
        for t in ProficiencyLevel::ALL.iter().rev().copied() {
            if t < s && t >= target_floor {
                out.push(Transition { source: s, target: t });
            }
        }
    }
    out
}

/// A strictly descending route from a source level to a target level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct LevelPath(Vec<ProficiencyLevel>);

impl LevelPath {
    pub fn new(levels: Vec<ProficiencyLevel>) -> Result<Self, LevelError> {
        if levels.len() < 2 {
            return Err(LevelError::PathTooShort(levels.len()));
        }
        if let Some(position) = levels.windows(2).position(|w| w[1] >= w[0]) {
            let path = levels.iter().map(|l| l.symbol()).collect::<Vec<_>>().join(",");
            return Err(LevelError::NotDescending {
                position: position + 1,
                path,
            });
        }
        Ok(Self(levels))
    }

    /// The one-step path `[source, target]`.
    pub fn direct(source: ProficiencyLevel, target: ProficiencyLevel) -> Result<Self, LevelError> {
        Transition::new(source, target)?;
        Ok(Self(vec![source, target]))
    }

    pub fn levels(&self) -> &[ProficiencyLevel] {
        &self.0
    }

    pub fn source(&self) -> ProficiencyLevel {
        self.0[0]
    }

    pub fn target(&self) -> ProficiencyLevel {
        *self.0.last().expect("path has at least two levels")
    }

    pub fn step_count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        self.0.windows(2).map(|w| Transition {
            source: w[0],
            target: w[1],
        })
    }
}

impl fmt::Display for LevelPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(l.symbol())?;
        }
        f.write_str("]")
    }
}

impl<'de> Deserialize<'de> for LevelPath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let levels = Vec::<ProficiencyLevel>::deserialize(deserializer)?;
        LevelPath::new(levels).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProficiencyLevel::*;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_level("B2").unwrap(), B2);
        assert_eq!(parse_level("B2").unwrap().index(), 4);
        assert_eq!(parse_level("a1").unwrap(), A1);
        assert_eq!(parse_level("B3"), Err(LevelError::UnknownLevel("B3".into())));
        assert!(parse_level("").is_err());
    }

    #[test]
    fn render_parse_round_trip() {
        for l in ProficiencyLevel::ALL {
            assert_eq!(parse_level(&l.to_string()).unwrap(), l);
            assert_eq!(ProficiencyLevel::from_index(l.index()), Some(l));
        }
        assert_eq!(ProficiencyLevel::from_index(0), None);
        assert_eq!(ProficiencyLevel::from_index(7), None);
    }

    #[test]
    fn distances() {
        assert_eq!(level_distance(B1, B1), 0);
        assert_eq!(level_distance(A2, B1), 1);
        assert_eq!(level_distance(C2, A1), 5);
        for a in ProficiencyLevel::ALL {
            for b in ProficiencyLevel::ALL {
                assert_eq!(level_distance(a, b), level_distance(b, a));
                for c in ProficiencyLevel::ALL {
                    assert!(level_distance(a, c) <= level_distance(a, b) + level_distance(b, c));
                }
            }
        }
    }

    #[test]
    fn transitions_enumeration() {
        let t = downward_transitions(&[B2], A1);
        let expected: Vec<_> = [(B2, B1), (B2, A2), (B2, A1)]
            .iter()
            .map(|&(s, t)| Transition::new(s, t).unwrap())
            .collect();
        assert_eq!(t, expected);

        // 5 + 4 + 3 by enumeration
        let all = downward_transitions(&[C2, C1, B2], A1);
        assert_eq!(all.len(), 12);
        assert_eq!(all.iter().filter(|t| t.source() == C2).count(), 5);
        assert_eq!(all.iter().filter(|t| t.source() == C1).count(), 4);
        assert!(all.iter().all(|t| t.target() < t.source()));

        assert_eq!(downward_transitions(&[A2], A1), vec![Transition::new(A2, A1).unwrap()]);
        assert!(downward_transitions(&[A1], A1).is_empty());
    }

    #[test]
    fn transition_rejects_upward_and_equal() {
        assert!(Transition::new(B1, B1).is_err());
        assert!(Transition::new(A1, C2).is_err());
        assert!(serde_json::from_str::<Transition>(r#"{"source":"A1","target":"B1"}"#).is_err());
    }

    #[test]
    fn path_construction() {
        let p = LevelPath::new(vec![C2, B2, B1, A2, A1]).unwrap();
        assert_eq!(p.step_count(), 4);
        assert_eq!(p.source(), C2);
        assert_eq!(p.target(), A1);
        assert_eq!(p.to_string(), "[C2, B2, B1, A2, A1]");
        assert_eq!(p.transitions().count(), 4);
        assert!(matches!(LevelPath::new(vec![C2]), Err(LevelError::PathTooShort(1))));
        assert!(matches!(
            LevelPath::new(vec![C2, B1, B1]),
            Err(LevelError::NotDescending { position: 2, .. })
        ));
        assert!(LevelPath::new(vec![A1, B1]).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"["C2","B2","B1","A2","A1"]"#);
        assert_eq!(serde_json::from_str::<LevelPath>(&json).unwrap(), p);
        assert!(serde_json::from_str::<LevelPath>(r#"["A1","B1"]"#).is_err());
    }

    #[test]
    fn between_is_exclusive_and_descending() {
        assert_eq!(C2.between(A1), vec![C1, B2, B1, A2]);
        assert!(B2.between(B1).is_empty());
    }
}
