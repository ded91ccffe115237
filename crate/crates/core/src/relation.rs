use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The six spatial relations. The discriminant order is the class order of
/// every network output and checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Inside,
    Left,
    Right,
    InFront,
    Behind,
    OnTop,
}

impl Relation {
    pub const COUNT: usize = 6;
    pub const ALL: [Relation; 6] =
        [Relation::Inside, Relation::Left, Relation::Right, Relation::InFront, Relation::Behind, Relation::OnTop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Inside => "inside",
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::InFront => "in_front",
            Relation::Behind => "behind",
            Relation::OnTop => "on_top",
        }
    }

    /// Relation after mirroring the scene horizontally.
    pub fn mirrored(self) -> Relation {
        match self {
            Relation::Left => Relation::Right,
            Relation::Right => Relation::Left,
            other => other,
        }
    }

    pub fn class_order() -> Vec<&'static str> {
        Self::ALL.iter().map(|r| r.name()).collect()
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_order_is_fixed() {
        assert_eq!(Relation::class_order(), ["inside", "left", "right", "in_front", "behind", "on_top"]);
        for (i, r) in Relation::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(r.name().parse::<Relation>().unwrap(), *r);
        }
    }
}
